//! Success-rate evaluation (exact and estimated), confidence intervals, and
//! KL divergence between models.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::oracle::RewardOracle;
use crate::seq::{TokenSequence, Vocab};
use crate::tasks::Task;
use rand_chacha::ChaCha12Rng;
use statrs::function::beta::beta_reg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessRateMethod {
    ExactEnumeration,
    TargetSetLogSumExp,
    MonteCarlo,
}

impl SuccessRateMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuccessRateMethod::ExactEnumeration => "exact_enumeration",
            SuccessRateMethod::TargetSetLogSumExp => "target_set_logsumexp",
            SuccessRateMethod::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuccessRateReport {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: SuccessRateMethod,
    pub n_samples: Option<usize>,
}

impl SuccessRateReport {
    fn exact(value: f64, method: SuccessRateMethod) -> Self {
        Self {
            estimate: value,
            ci_low: value,
            ci_high: value,
            method,
            n_samples: None,
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Inverse of the regularized incomplete beta (the Beta(a, b) quantile),
/// by bisection to full f64 resolution; the CDF is strictly increasing.
fn beta_inv(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact Clopper-Pearson interval for k successes in n trials.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> (f64, f64) {
    assert!(n >= 1 && k <= n);
    assert!(alpha > 0.0 && alpha < 1.0);
    let lo = if k == 0 {
        0.0
    } else {
        beta_inv(k as f64, (n - k + 1) as f64, alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        beta_inv((k + 1) as f64, (n - k) as f64, 1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Every complete body over non-terminator tokens of length < max_len, plus
/// the truncated bodies of length exactly max_len. Together these partition
/// the model's sample space, so probabilities sum to one.
pub fn enumerate_sequences(vocab: &Vocab, max_len: usize) -> Vec<TokenSequence> {
    let non_end: Vec<usize> = (0..vocab.size())
        .filter(|&t| t != vocab.end_token())
        .collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..=max_len {
        for body in &frontier {
            if len < max_len {
                out.push(TokenSequence::new(body.clone()));
            } else {
                out.push(TokenSequence::truncated(body.clone()));
            }
        }
        if len == max_len {
            break;
        }
        let mut next = Vec::with_capacity(frontier.len() * non_end.len());
        for body in &frontier {
            for &t in &non_end {
                let mut b = body.clone();
                b.push(t);
                next.push(b);
            }
        }
        frontier = next;
    }
    out
}

const MAX_ENUMERATION: usize = 10_000_000;

/// Exact success rate; consumes zero reward evaluations. Prefers the task's
/// declared target set (log-sum-exp of log-probabilities), falling back to
/// full enumeration against the task's pure reward function.
pub fn exact_success_rate(model: &Model, task: &dyn Task) -> Result<SuccessRateReport> {
    if let Some(targets) = task.target_set() {
        let logps: Vec<f64> = targets
            .iter()
            .map(|t| model.log_prob(t))
            .collect::<Result<_>>()?;
        return Ok(SuccessRateReport::exact(
            log_sum_exp(&logps).exp().min(1.0),
            SuccessRateMethod::TargetSetLogSumExp,
        ));
    }
    if let Some(space) = task.enumerate_space() {
        if space.len() > MAX_ENUMERATION {
            return Err(Error::Unsupported("enumeration space too large".into()));
        }
        let mut total = 0.0;
        for x in &space {
            if task.reward(x) {
                total += model.log_prob(x)?.exp();
            }
        }
        return Ok(SuccessRateReport::exact(
            total.min(1.0),
            SuccessRateMethod::ExactEnumeration,
        ));
    }
    Err(Error::Unsupported(
        "task exposes neither a target set nor an enumerable space".into(),
    ))
}

/// Monte-Carlo success rate through the metered oracle; consumes `n` reward
/// evaluations and reports an exact Clopper-Pearson interval at alpha = 0.05.
pub fn estimate_success_rate(
    model: &Model,
    oracle: &mut RewardOracle,
    n: usize,
    temperature: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SuccessRateReport> {
    assert!(n >= 1);
    let samples = model.sample(n, temperature, rng);
    let mut successes = 0u64;
    for (i, x) in samples.iter().enumerate() {
        match oracle.evaluate(x) {
            Ok(r) => successes += r as u64,
            Err(Error::Budget { requested, .. }) => {
                return Err(Error::BudgetDuringEstimate {
                    requested: requested.max(n as u64),
                    evaluated: i as u64,
                    successes,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let (lo, hi) = clopper_pearson(successes, n as u64, 0.05);
    Ok(SuccessRateReport {
        estimate: successes as f64 / n as f64,
        ci_low: lo,
        ci_high: hi,
        method: SuccessRateMethod::MonteCarlo,
        n_samples: Some(n),
    })
}

/// Exact measurement when the task supports one, otherwise unmetered Monte
/// Carlo with `mc_samples` draws (0 skips it). Never consumes oracle budget.
pub fn measure_success_rate(
    model: &Model,
    task: &dyn Task,
    mc_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Option<SuccessRateReport> {
    match exact_success_rate(model, task) {
        Ok(r) => Some(r),
        Err(Error::Unsupported(_)) if mc_samples > 0 => {
            Some(estimate_success_rate_unmetered(model, task, mc_samples, rng))
        }
        Err(_) => None,
    }
}

pub fn estimate_success_rate_unmetered(
    model: &Model,
    task: &dyn Task,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> SuccessRateReport {
    assert!(n >= 1);
    let samples = model.sample(n, 1.0, rng);
    let successes = samples.iter().filter(|x| task.reward(x)).count() as u64;
    let (lo, hi) = clopper_pearson(successes, n as u64, 0.05);
    SuccessRateReport {
        estimate: successes as f64 / n as f64,
        ci_low: lo,
        ci_high: hi,
        method: SuccessRateMethod::MonteCarlo,
        n_samples: Some(n),
    }
}

#[derive(Debug, Clone, Copy)]
pub enum KlMode {
    ExactEnumeration,
    MonteCarlo(usize),
}

/// D_KL(a || b). Exact mode enumerates a's support (tabular) or the full
/// sequence space (neural). Monte-Carlo mode samples from a.
pub fn kl_divergence(a: &Model, b: &Model, mode: KlMode, rng: &mut ChaCha12Rng) -> Result<f64> {
    match mode {
        KlMode::ExactEnumeration => {
            let space: Vec<TokenSequence> = match a {
                Model::Tabular(t) => t.support().to_vec(),
                Model::Neural(n) => {
                    let count = (n.vocab().size() - 1)
                        .checked_pow(n.max_len().min(u32::MAX as usize) as u32)
                        .unwrap_or(usize::MAX);
                    if count > MAX_ENUMERATION {
                        return Err(Error::Unsupported(
                            "sequence space too large for exact KL".into(),
                        ));
                    }
                    enumerate_sequences(n.vocab(), n.max_len())
                }
            };
            let mut kl = 0.0;
            for x in &space {
                let la = a.log_prob(x)?;
                if la == f64::NEG_INFINITY {
                    continue;
                }
                let lb = b.log_prob(x)?;
                if lb == f64::NEG_INFINITY {
                    return Err(Error::DivergentSupport);
                }
                kl += la.exp() * (la - lb);
            }
            Ok(kl.max(0.0))
        }
        KlMode::MonteCarlo(n) => {
            assert!(n >= 1);
            let samples = a.sample(n, 1.0, rng);
            let mut total = 0.0;
            for x in &samples {
                let la = a.log_prob(x)?;
                let lb = b.log_prob(x)?;
                if lb == f64::NEG_INFINITY {
                    return Err(Error::DivergentSupport);
                }
                total += la - lb;
            }
            Ok(total / n as f64)
        }
    }
}
