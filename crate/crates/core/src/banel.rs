//! Negative-evidence post-training: fit a generative model to observed
//! failures, reject candidates that resemble them by likelihood ratio, and
//! either accumulate the filters (sequential filtering) or distill the
//! filtered distribution back into the proposal each round.

use crate::error::{Error, Result};
use crate::eval::{measure_success_rate, SuccessRateReport};
use crate::model::Model;
use crate::neural::NeuralARModel;
use crate::oracle::RewardOracle;
use crate::seq::TokenSequence;
use crate::tabular::TabularModel;
use crate::tasks::Task;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::io::Write;

/// One accumulated rejection filter: a negative model and the realized
/// per-round threshold, stored in log space.
pub struct FilterEntry {
    pub neg: Model,
    pub log_tau: f64,
}

/// Ordered list of rejection filters over a fixed base model. A sequence is
/// accepted when every entry's likelihood ratio clears its threshold.
pub struct FilterStack {
    base: Model,
    entries: Vec<FilterEntry>,
    length_normalize: bool,
}

impl FilterStack {
    pub fn new(base: Model, length_normalize: bool) -> Self {
        Self {
            base,
            entries: Vec::new(),
            length_normalize,
        }
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn entries(&self) -> &[FilterEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, neg: Model, log_tau: f64) {
        self.entries.push(FilterEntry { neg, log_tau });
    }

    /// Membership in the complement of the accumulated rejection region; see
    /// [`clears_threshold`] for the boundary convention.
    pub fn accepts(&self, x: &TokenSequence) -> Result<bool> {
        for e in &self.entries {
            let lr = log_likelihood_ratio(&self.base, &e.neg, x, self.length_normalize)?;
            if !clears_threshold(lr, e.log_tau) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Closed form of the filtered distribution when the base is tabular:
    /// entries are applied one at a time, restricting and renormalizing, so
    /// the result is bit-identical to per-round exact distillation.
    pub fn restricted_tabular(&self) -> Result<TabularModel> {
        let base = self
            .base
            .as_tabular()
            .ok_or_else(|| Error::Unsupported("base model is not tabular".into()))?;
        let mut current = base.clone();
        for e in &self.entries {
            current = current.restrict(|x| {
                log_likelihood_ratio(&self.base, &e.neg, x, self.length_normalize)
                    .map(|lr| clears_threshold(lr, e.log_tau))
                    .unwrap_or(false)
            })?;
        }
        Ok(current)
    }
}

/// Whether a log ratio clears a realized threshold. The boundary is
/// exclusive: a sequence whose ratio exactly equals the threshold is
/// rejected. On continuous-like models the boundary carries no mass; on
/// tabular models inclusion would let a mass-hogging atom that itself
/// realized the threshold survive its own filter forever. The one exception
/// is an infinite threshold (the elite batch was entirely unseen by the
/// negative model): nothing can exceed it, so infinite ratios pass.
pub fn clears_threshold(log_ratio: f64, log_tau: f64) -> bool {
    log_ratio > log_tau || (log_ratio == f64::INFINITY && log_tau == f64::INFINITY)
}

/// log(p_num(x) / p_neg(x)), divided by l(x) when length-normalizing.
/// +inf when the negative model assigns zero mass and the numerator does not.
pub fn log_likelihood_ratio(
    numerator: &Model,
    neg: &Model,
    x: &TokenSequence,
    length_normalize: bool,
) -> Result<f64> {
    let ln_num = numerator.log_prob(x)?;
    let ln_neg = neg.log_prob(x)?;
    let diff = if ln_num == f64::NEG_INFINITY && ln_neg == f64::NEG_INFINITY {
        0.0
    } else {
        ln_num - ln_neg
    };
    Ok(if length_normalize {
        diff / x.len_norm() as f64
    } else {
        diff
    })
}

/// Ratio in linear space; exponentiation happens only here, for reporting.
pub fn likelihood_ratio(
    numerator: &Model,
    neg: &Model,
    x: &TokenSequence,
    length_normalize: bool,
) -> Result<f64> {
    Ok(log_likelihood_ratio(numerator, neg, x, length_normalize)?.exp())
}

/// Indices of the `m` largest ratios, ties broken by earlier index (stable),
/// plus the m-th largest log ratio as the realized threshold.
pub fn select_elite_indices(log_ratios: &[f64], m: usize) -> Result<(Vec<usize>, f64)> {
    if m == 0 || m > log_ratios.len() {
        return Err(Error::Precondition(format!(
            "cannot select {m} elites from {} candidates",
            log_ratios.len()
        )));
    }
    let mut order: Vec<usize> = (0..log_ratios.len()).collect();
    order.sort_by(|&a, &b| log_ratios[b].partial_cmp(&log_ratios[a]).unwrap());
    let accepted: Vec<usize> = order[..m].to_vec();
    let log_tau = log_ratios[accepted[m - 1]];
    Ok((accepted, log_tau))
}

/// CEM-style hard cut: keep the m candidates with largest likelihood ratio.
pub fn select_elites(
    candidates: &[TokenSequence],
    log_ratios: &[f64],
    m: usize,
) -> Result<(Vec<TokenSequence>, f64)> {
    if candidates.len() != log_ratios.len() {
        return Err(Error::Precondition(
            "candidates and ratios must align".into(),
        ));
    }
    let (idx, log_tau) = select_elite_indices(log_ratios, m)?;
    Ok((idx.iter().map(|&i| candidates[i].clone()).collect(), log_tau))
}

/// Model family used for the per-round negative model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegFamily {
    /// Same family as the base model (tabular base -> exact tabular MLE).
    MatchBase,
    /// Always a neural autoregressive model. With a tabular base this pairs
    /// an exact proposal with a smoothing failure model, so rejection
    /// generalizes across neighboring sequences instead of only replaying
    /// observed ones.
    Neural,
}

impl std::str::FromStr for NegFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "match_base" => Ok(NegFamily::MatchBase),
            "neural" => Ok(NegFamily::Neural),
            other => Err(format!("unknown negative-model family {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BanelConfig {
    /// Accepted (reward-evaluated) batch size per round.
    pub m: usize,
    /// Filter factor; ceil(m*f) candidates are drawn, top m kept. f = 1
    /// means no filtering.
    pub f: f64,
    pub n_rounds: usize,
    pub epochs_theta: usize,
    pub epochs_phi: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    /// Reset the proposal to the base parameters before each distillation.
    pub reset_each_round: bool,
    pub terminate_on_success: bool,
    pub temperature: f64,
    pub length_normalize: bool,
    /// Rank with the current proposal instead of the base model.
    pub rank_with_current: bool,
    /// Attempt cap for rejection sampling in the no-distillation variant.
    pub rejection_cap: usize,
    /// Ablation: distill on fresh filtered draws instead of reusing the
    /// accepted batch.
    pub fresh_distill_draws: bool,
    /// When > 0, distill on this many extra raw proposal draws filtered by
    /// the round's realized threshold (keeping whatever fraction clears it)
    /// instead of only the m evaluated samples. Filter-only draws never touch
    /// the reward oracle, so this reduces distillation noise at zero
    /// evaluation cost.
    pub distill_draws: usize,
    /// Monte-Carlo sample count for per-round measurement when the task has
    /// no exact route; 0 skips measurement. Never touches the oracle.
    pub eval_samples: usize,
    pub neg_family: NegFamily,
    /// Context window for a neural negative model over a tabular base.
    pub neg_context: usize,
    /// Hidden width for a neural negative model over a tabular base.
    pub neg_hidden: usize,
    /// Initialize a neural negative model from the base parameters instead of
    /// a fresh random net. The ratio then deviates from 1 only where the
    /// failure batch moved the fine-tuned copy, which removes the
    /// initialization noise a from-scratch fit carries at small batch sizes.
    pub neg_init_base: bool,
}

impl Default for BanelConfig {
    fn default() -> Self {
        Self {
            m: 64,
            f: 2.0,
            n_rounds: 8,
            epochs_theta: 15,
            epochs_phi: 50,
            lr_theta: 1e-3,
            lr_phi: 1e-3,
            reset_each_round: true,
            terminate_on_success: true,
            temperature: 1.0,
            length_normalize: true,
            rank_with_current: false,
            rejection_cap: 1_000_000,
            fresh_distill_draws: false,
            distill_draws: 0,
            eval_samples: 0,
            neg_family: NegFamily::MatchBase,
            neg_context: 2,
            neg_hidden: 32,
            neg_init_base: false,
        }
    }
}

impl BanelConfig {
    pub fn candidate_count(&self) -> usize {
        (self.m as f64 * self.f).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if self.f < 1.0 {
            return Err(Error::Config("f must be >= 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Applies flat key = value settings over the current values.
    pub fn apply_kv(&mut self, kv: &HashMap<String, String>) -> Result<()> {
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for key {k}")))
        }
        for (k, v) in kv {
            match k.as_str() {
                "m" => self.m = parse(k, v)?,
                "f" => self.f = parse(k, v)?,
                "n_rounds" => self.n_rounds = parse(k, v)?,
                "epochs_theta" => self.epochs_theta = parse(k, v)?,
                "epochs_phi" => self.epochs_phi = parse(k, v)?,
                "lr_theta" => self.lr_theta = parse(k, v)?,
                "lr_phi" => self.lr_phi = parse(k, v)?,
                "reset_each_round" => self.reset_each_round = parse(k, v)?,
                "terminate_on_success" => self.terminate_on_success = parse(k, v)?,
                "temperature" => self.temperature = parse(k, v)?,
                "length_normalize" => self.length_normalize = parse(k, v)?,
                "rank_with_current" => self.rank_with_current = parse(k, v)?,
                "rejection_cap" => self.rejection_cap = parse(k, v)?,
                "fresh_distill_draws" => self.fresh_distill_draws = parse(k, v)?,
                "distill_draws" => self.distill_draws = parse(k, v)?,
                "eval_samples" => self.eval_samples = parse(k, v)?,
                "neg_family" => self.neg_family = parse(k, v)?,
                "neg_context" => self.neg_context = parse(k, v)?,
                "neg_hidden" => self.neg_hidden = parse(k, v)?,
                "neg_init_base" => self.neg_init_base = parse(k, v)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        self.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub nre_used: u64,
    pub nre_total: u64,
    /// Realized threshold, linear space; NaN for the unfiltered first round.
    pub tau: f64,
    /// (min, median, max) likelihood ratio among accepted candidates.
    pub ratio_stats: Option<(f64, f64, f64)>,
    pub success_rate: Option<SuccessRateReport>,
    pub terminated: bool,
    /// Rejection-sampling acceptance rate (no-distillation runs).
    pub acceptance_rate: Option<f64>,
    /// Set when the run was cut short by rejection-sampling inefficiency.
    pub aborted_inefficient: bool,
}

/// Appends records to a CSV stream with the canonical header.
pub fn write_records_csv<W: Write>(mut w: W, records: &[RoundRecord]) -> Result<()> {
    writeln!(w, "round,nre_total,tau,sr_estimate,sr_lo,sr_hi,terminated")?;
    for r in records {
        let (sr, lo, hi) = match &r.success_rate {
            Some(s) => (s.estimate, s.ci_low, s.ci_high),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.round, r.nre_total, r.tau, sr, lo, hi, r.terminated
        )?;
    }
    Ok(())
}

fn ratio_stats(log_ratios: &[f64], accepted: &[usize]) -> Option<(f64, f64, f64)> {
    if accepted.is_empty() {
        return None;
    }
    let mut vals: Vec<f64> = accepted.iter().map(|&i| log_ratios[i].exp()).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some((vals[0], vals[vals.len() / 2], vals[vals.len() - 1]))
}

/// Fits a fresh negative model on the zero-reward batch. Neural negatives get
/// a fresh random initialization each round; tabular negatives use the exact
/// MLE. With `NegFamily::Neural` over a tabular base, the task supplies the
/// vocabulary and length for the failure model.
pub fn fit_negative_model(
    base: &Model,
    samples: &[TokenSequence],
    task: &dyn Task,
    cfg: &BanelConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Model> {
    if samples.is_empty() {
        return Err(Error::Precondition(
            "negative model needs a nonempty batch".into(),
        ));
    }
    let fit_fresh_neural = |vocab: crate::seq::Vocab,
                            context: usize,
                            max_len: usize,
                            hidden: usize,
                            rng: &mut ChaCha12Rng|
     -> Result<Model> {
        let mut fresh = NeuralARModel::new(vocab, context, max_len, hidden, rng);
        fresh.fit_mle(samples, cfg.epochs_phi.max(1), cfg.lr_phi, rng)?;
        Ok(Model::Neural(fresh))
    };
    match base {
        Model::Neural(n) => {
            if cfg.neg_init_base {
                let mut tuned = n.clone();
                tuned.fit_mle(samples, cfg.epochs_phi.max(1), cfg.lr_phi, rng)?;
                Ok(Model::Neural(tuned))
            } else {
                fit_fresh_neural(
                    n.vocab().clone(),
                    n.context(),
                    n.max_len(),
                    n.hidden_width(),
                    rng,
                )
            }
        }
        Model::Tabular(t) => match cfg.neg_family {
            NegFamily::Neural => fit_fresh_neural(
                task.vocab().clone(),
                cfg.neg_context,
                task.max_len(),
                cfg.neg_hidden,
                rng,
            ),
            NegFamily::MatchBase => {
                let mut fresh = t.clone();
                fresh.fit_mle(samples)?;
                Ok(Model::Tabular(fresh))
            }
        },
    }
}

pub struct FilteredSample {
    pub samples: Vec<TokenSequence>,
    pub attempts: usize,
    pub acceptance_rate: f64,
}

/// Draws `n_wanted` samples from the base model restricted to the stack's
/// acceptance region. Tabular bases use the closed form; neural bases use
/// physical rejection sampling capped at `cfg.rejection_cap` attempts.
pub fn filtered_sample(
    stack: &FilterStack,
    cfg: &BanelConfig,
    n_wanted: usize,
    rng: &mut ChaCha12Rng,
) -> Result<FilteredSample> {
    assert!(n_wanted >= 1);
    if let Model::Tabular(_) = stack.base() {
        let restricted = stack.restricted_tabular()?;
        let samples = restricted.sample(n_wanted, cfg.temperature, rng);
        // analytic acceptance mass under the base model
        let base = stack.base().as_tabular().unwrap();
        let mut mass = 0.0;
        for (s, &lm) in base.support().iter().zip(base.log_mass()) {
            if stack.accepts(s)? {
                mass += lm.exp();
            }
        }
        return Ok(FilteredSample {
            samples,
            attempts: n_wanted,
            acceptance_rate: mass,
        });
    }
    let mut samples = Vec::with_capacity(n_wanted);
    let mut attempts = 0usize;
    while samples.len() < n_wanted {
        if attempts >= cfg.rejection_cap {
            return Err(Error::Inefficient {
                accepted: samples.len(),
                attempts,
                rate: samples.len() as f64 / attempts.max(1) as f64,
            });
        }
        let chunk = (n_wanted - samples.len()).max(32).min(cfg.rejection_cap - attempts);
        for x in stack.base().sample(chunk, cfg.temperature, rng) {
            attempts += 1;
            if stack.accepts(&x)? {
                samples.push(x);
                if samples.len() == n_wanted {
                    break;
                }
            }
        }
    }
    let rate = samples.len() as f64 / attempts.max(1) as f64;
    Ok(FilteredSample {
        samples,
        attempts,
        acceptance_rate: rate,
    })
}

/// Distills the realized filter into the proposal. Tabular proposals are
/// restricted exactly; neural proposals are (optionally reset to the base
/// parameters and) refit by maximum likelihood on the accepted batch.
pub fn distill(
    current: &Model,
    base: &Model,
    accepted: &[TokenSequence],
    filter: Option<(&Model, f64)>,
    cfg: &BanelConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Model> {
    match current {
        Model::Tabular(t) => {
            let (neg, log_tau) = match filter {
                Some(f) => f,
                None => return Ok(current.clone()),
            };
            let restricted = t.restrict(|x| {
                log_likelihood_ratio(base, neg, x, cfg.length_normalize)
                    .map(|lr| clears_threshold(lr, log_tau))
                    .unwrap_or(false)
            })?;
            Ok(Model::Tabular(restricted))
        }
        Model::Neural(_) => {
            let mut next = if cfg.reset_each_round {
                base.clone()
            } else {
                current.clone()
            };
            if cfg.epochs_theta > 0 && !accepted.is_empty() {
                next.fit_mle(accepted, cfg.epochs_theta, cfg.lr_theta, rng)?;
            }
            Ok(next)
        }
    }
}

/// Posterior success rate from the decomposition
/// rho_prior/(1 - mass_R) - mass_R/(1 - mass_R) * rho_given_R.
pub fn decomposed_success_rate(rho_prior: f64, mass_r: f64, rho_given_r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mass_r) {
        return Err(Error::DegenerateRegion(mass_r));
    }
    Ok(rho_prior / (1.0 - mass_r) - mass_r / (1.0 - mass_r) * rho_given_r)
}

pub(crate) fn measure(model: &Model, task: &dyn Task, cfg: &BanelConfig, rng: &mut ChaCha12Rng) -> Option<SuccessRateReport> {
    measure_success_rate(model, task, cfg.eval_samples, rng)
}

enum RoundOutcome {
    Continue,
    Terminated,
    OutOfBudget,
}

/// Sequential filtering with distillation. Returns the final proposal and
/// one record per completed round.
pub fn run_banel(
    base: &Model,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &BanelConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(Model, Vec<RoundRecord>)> {
    cfg.validate()?;
    // f = 1 draws exactly m candidates, so nothing is ever rejected and no
    // filter exists to fold in; the pipeline reduces to plain sampling.
    let filtering = cfg.candidate_count() > cfg.m;
    let mut proposal = base.clone();
    let mut neg: Option<Model> = None; // failure model fitted last round
    let mut records = Vec::new();

    for round in 0..cfg.n_rounds {
        oracle.set_round(round);
        let (accepted, log_tau, stats) = match neg.as_ref().filter(|_| filtering) {
            None => {
                let batch = proposal.sample(cfg.m, cfg.temperature, rng);
                (batch, f64::NAN, None)
            }
            Some(neg_model) => {
                let candidates = proposal.sample(cfg.candidate_count(), cfg.temperature, rng);
                let numerator = if cfg.rank_with_current { &proposal } else { base };
                let log_ratios: Vec<f64> = candidates
                    .iter()
                    .map(|x| log_likelihood_ratio(numerator, neg_model, x, cfg.length_normalize))
                    .collect::<Result<_>>()?;
                let (idx, log_tau) = select_elite_indices(&log_ratios, cfg.m)?;
                let stats = ratio_stats(&log_ratios, &idx);
                let batch: Vec<TokenSequence> =
                    idx.iter().map(|&i| candidates[i].clone()).collect();
                (batch, log_tau, stats)
            }
        };

        let outcome = evaluate_round(oracle, &accepted, cfg)?;
        if matches!(outcome, RoundOutcome::OutOfBudget) {
            break;
        }
        let terminated = matches!(outcome, RoundOutcome::Terminated);

        if !terminated && filtering {
            // Fit this round's failure model, then fold the filter that was
            // applied this round (last round's failure model, this round's
            // realized threshold) into the proposal.
            let new_neg = fit_negative_model(base, &accepted, task, cfg, rng)?;
            if let Some(neg_model) = &neg {
                let distill_batch: Vec<TokenSequence> = if cfg.fresh_distill_draws {
                    // ablation: draw a fresh batch from the same filtered
                    // distribution the accepted batch came from
                    let numerator = if cfg.rank_with_current { &proposal } else { base };
                    let candidates = proposal.sample(cfg.candidate_count(), cfg.temperature, rng);
                    let log_ratios: Vec<f64> = candidates
                        .iter()
                        .map(|x| {
                            log_likelihood_ratio(numerator, neg_model, x, cfg.length_normalize)
                        })
                        .collect::<Result<_>>()?;
                    let (idx, _) = select_elite_indices(&log_ratios, cfg.m)?;
                    idx.iter().map(|&i| candidates[i].clone()).collect()
                } else if cfg.distill_draws > 0 {
                    // a larger filter-only batch for the refit: extra draws
                    // cost no reward evaluations, and whatever clears the
                    // same realized threshold joins the accepted batch
                    let numerator = if cfg.rank_with_current { &proposal } else { base };
                    let extra = proposal.sample(cfg.distill_draws, cfg.temperature, rng);
                    let mut kept = accepted.clone();
                    for x in extra {
                        let lr = log_likelihood_ratio(
                            numerator,
                            neg_model,
                            &x,
                            cfg.length_normalize,
                        )?;
                        if clears_threshold(lr, log_tau) {
                            kept.push(x);
                        }
                    }
                    kept
                } else {
                    accepted.clone()
                };
                proposal = distill(
                    &proposal,
                    base,
                    &distill_batch,
                    Some((neg_model, log_tau)),
                    cfg,
                    rng,
                )?;
            }
            neg = Some(new_neg);
        }

        let sr = measure(&proposal, task, cfg, rng);
        records.push(RoundRecord {
            round,
            nre_used: cfg.m as u64,
            nre_total: oracle.nre_count(),
            tau: log_tau.exp(),
            ratio_stats: stats,
            success_rate: sr,
            terminated,
            acceptance_rate: None,
            aborted_inefficient: false,
        });
        if terminated {
            break;
        }
    }
    Ok((proposal, records))
}

/// Sequential filtering without distillation: the filters accumulate and the
/// final policy is the stack itself.
pub fn run_banel_no_distill(
    base: &Model,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &BanelConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(FilterStack, Vec<RoundRecord>)> {
    cfg.validate()?;
    let filtering = cfg.candidate_count() > cfg.m;
    let mut stack = FilterStack::new(base.clone(), cfg.length_normalize);
    let mut neg: Option<Model> = None;
    let mut records = Vec::new();

    for round in 0..cfg.n_rounds {
        oracle.set_round(round);
        let (accepted, log_tau, stats, acc_rate) = match neg.as_ref().filter(|_| filtering) {
            None => {
                let batch = base.sample(cfg.m, cfg.temperature, rng);
                (batch, f64::NAN, None, None)
            }
            Some(neg_model) => {
                let drawn = match filtered_sample(&stack, cfg, cfg.candidate_count(), rng) {
                    Ok(d) => d,
                    Err(Error::Inefficient { rate, .. }) => {
                        records.push(RoundRecord {
                            round,
                            nre_used: 0,
                            nre_total: oracle.nre_count(),
                            tau: f64::NAN,
                            ratio_stats: None,
                            success_rate: None,
                            terminated: false,
                            acceptance_rate: Some(rate),
                            aborted_inefficient: true,
                        });
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let log_ratios: Vec<f64> = drawn
                    .samples
                    .iter()
                    .map(|x| log_likelihood_ratio(base, neg_model, x, cfg.length_normalize))
                    .collect::<Result<_>>()?;
                let (idx, log_tau) = select_elite_indices(&log_ratios, cfg.m)?;
                let stats = ratio_stats(&log_ratios, &idx);
                let batch: Vec<TokenSequence> =
                    idx.iter().map(|&i| drawn.samples[i].clone()).collect();
                (batch, log_tau, stats, Some(drawn.acceptance_rate))
            }
        };

        let outcome = evaluate_round(oracle, &accepted, cfg)?;
        if matches!(outcome, RoundOutcome::OutOfBudget) {
            break;
        }
        let terminated = matches!(outcome, RoundOutcome::Terminated);

        if !terminated && filtering {
            if let Some(neg_model) = neg.take() {
                stack.push(neg_model, log_tau);
            }
            neg = Some(fit_negative_model(base, &accepted, task, cfg, rng)?);
        }

        let sr = match stack.restricted_tabular() {
            Ok(t) => measure(&Model::Tabular(t), task, cfg, rng),
            Err(_) => None,
        };
        records.push(RoundRecord {
            round,
            nre_used: cfg.m as u64,
            nre_total: oracle.nre_count(),
            tau: log_tau.exp(),
            ratio_stats: stats,
            success_rate: sr,
            terminated,
            acceptance_rate: acc_rate,
            aborted_inefficient: false,
        });
        if terminated {
            break;
        }
    }
    // The failure model fitted in the final round never gets a realized
    // threshold (no later selection uses it), so it does not join the stack.
    // This keeps the stack's filter chain identical to what distillation
    // folds into the proposal over the same rounds.
    Ok((stack, records))
}

fn evaluate_round(
    oracle: &mut RewardOracle,
    accepted: &[TokenSequence],
    cfg: &BanelConfig,
) -> Result<RoundOutcome> {
    let hits_before = oracle.success_log().len();
    match oracle.evaluate_batch(accepted) {
        Ok(_) => {}
        Err(Error::Budget { .. }) => return Ok(RoundOutcome::OutOfBudget),
        Err(e) => return Err(e),
    }
    let hit = oracle.success_log().len() > hits_before;
    if hit && cfg.terminate_on_success {
        return Ok(RoundOutcome::Terminated);
    }
    Ok(RoundOutcome::Continue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::SyntheticEnumTask;
    use rand::SeedableRng;

    fn seqs(n: usize) -> Vec<TokenSequence> {
        (0..n).map(|i| TokenSequence::new(vec![i])).collect()
    }

    #[test]
    fn elite_selection_hand_example() {
        let log_ratios = [0.5, -1.0, 2.0, 0.0];
        let (idx, log_tau) = select_elite_indices(&log_ratios, 2).unwrap();
        assert_eq!(idx, vec![2, 0]);
        assert_eq!(log_tau, 0.5);
        let cands = seqs(4);
        let (kept, tau) = select_elites(&cands, &log_ratios, 2).unwrap();
        assert_eq!(kept, vec![cands[2].clone(), cands[0].clone()]);
        assert_eq!(tau, 0.5);
    }

    #[test]
    fn elite_selection_ties_break_by_earlier_index() {
        let log_ratios = [1.0, 1.0, 1.0, 0.0];
        let (idx, log_tau) = select_elite_indices(&log_ratios, 2).unwrap();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(log_tau, 1.0);
    }

    #[test]
    fn elite_selection_rejects_bad_m() {
        assert!(select_elite_indices(&[0.0, 1.0], 0).is_err());
        assert!(select_elite_indices(&[0.0, 1.0], 3).is_err());
        assert!(select_elites(&seqs(3), &[0.0], 1).is_err());
    }

    #[test]
    fn elite_selection_with_no_slack_keeps_everything() {
        // f = 1 means candidate count == m: the cut is vacuous and the
        // realized threshold is the minimum observed ratio.
        let log_ratios = [0.3, -2.0, 1.7, 0.0, 0.9];
        let (idx, log_tau) = select_elite_indices(&log_ratios, log_ratios.len()).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(log_tau, -2.0);
    }

    #[test]
    fn ratio_hand_oracle() {
        let support = vec![
            TokenSequence::new(vec![0, 1]),
            TokenSequence::new(vec![1, 0]),
        ];
        let num = Model::Tabular(
            TabularModel::new(support.clone(), vec![(5.0f64 / 9.0).ln(), (4.0f64 / 9.0).ln()])
                .unwrap(),
        );
        let neg = Model::Tabular(
            TabularModel::new(support.clone(), vec![0.5f64.ln(), 0.5f64.ln()]).unwrap(),
        );
        let raw = log_likelihood_ratio(&num, &neg, &support[0], false).unwrap();
        assert!((raw - (10.0f64 / 9.0).ln()).abs() < 1e-12);
        let normed = log_likelihood_ratio(&num, &neg, &support[0], true).unwrap();
        assert!((normed - (10.0f64 / 9.0).ln() / 2.0).abs() < 1e-12);
        let lin = likelihood_ratio(&num, &neg, &support[0], false).unwrap();
        assert!((lin - 10.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_negative_gives_infinite_ratio() {
        let support = seqs(2);
        let num =
            Model::Tabular(TabularModel::uniform(support.clone()).unwrap());
        let neg = Model::Tabular(
            TabularModel::new(support.clone(), vec![0.0, f64::NEG_INFINITY]).unwrap(),
        );
        assert_eq!(
            log_likelihood_ratio(&num, &neg, &support[1], true).unwrap(),
            f64::INFINITY
        );
        // both sides zero mass: ratio defined as 1 (log 0)
        let num0 = Model::Tabular(
            TabularModel::new(support.clone(), vec![0.0, f64::NEG_INFINITY]).unwrap(),
        );
        assert_eq!(
            log_likelihood_ratio(&num0, &neg, &support[1], true).unwrap(),
            0.0
        );
    }

    #[test]
    fn stack_accepts_is_the_intersection_of_entries() {
        let support = seqs(4);
        let base = Model::Tabular(TabularModel::uniform(support.clone()).unwrap());
        // entry 1 rejects outcome 0, entry 2 rejects outcome 3
        let neg1 = Model::Tabular(
            TabularModel::from_log_weights(
                support.clone(),
                vec![0.9f64.ln(), (0.1f64 / 3.0).ln(), (0.1f64 / 3.0).ln(), (0.1f64 / 3.0).ln()],
            )
            .unwrap(),
        );
        let neg2 = Model::Tabular(
            TabularModel::from_log_weights(
                support.clone(),
                vec![(0.1f64 / 3.0).ln(), (0.1f64 / 3.0).ln(), (0.1f64 / 3.0).ln(), 0.9f64.ln()],
            )
            .unwrap(),
        );
        let mut stack = FilterStack::new(base, true);
        assert!(stack.is_empty());
        stack.push(neg1, 0.0);
        stack.push(neg2, 0.0);
        assert_eq!(stack.len(), 2);
        let accepted: Vec<bool> = support
            .iter()
            .map(|s| stack.accepts(s).unwrap())
            .collect();
        assert_eq!(accepted, vec![false, true, true, false]);
    }

    #[test]
    fn filtered_sample_matches_analytic_posterior() {
        let support = seqs(4);
        let base = Model::Tabular(TabularModel::uniform(support.clone()).unwrap());
        let neg = Model::Tabular(
            TabularModel::new(
                support.clone(),
                vec![0.7f64.ln(), 0.1f64.ln(), 0.1f64.ln(), 0.1f64.ln()],
            )
            .unwrap(),
        );
        let mut stack = FilterStack::new(base, false);
        stack.push(neg, 0.0); // accept where base mass >= neg mass
        let restricted = stack.restricted_tabular().unwrap();
        assert_eq!(restricted.log_prob(&support[0]).unwrap(), f64::NEG_INFINITY);
        for s in &support[1..] {
            assert!((restricted.log_prob(s).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
        let cfg = BanelConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let drawn = filtered_sample(&stack, &cfg, 200, &mut rng).unwrap();
        assert_eq!(drawn.samples.len(), 200);
        assert!(drawn.samples.iter().all(|s| s != &support[0]));
        // analytic acceptance mass under the base, not an empirical rate
        assert!((drawn.acceptance_rate - 0.75).abs() < 1e-12);
    }

    #[test]
    fn decomposition_hand_values_and_enumeration_agreement() {
        // no success mass inside the rejected region
        assert!((decomposed_success_rate(0.01, 0.5, 0.0).unwrap() - 0.02).abs() < 1e-15);
        // all success mass inside the rejected region
        assert!(decomposed_success_rate(0.01, 0.5, 0.02).unwrap().abs() < 1e-15);
        assert!(decomposed_success_rate(0.01, 1.0, 0.0).is_err());
        assert!(decomposed_success_rate(0.01, -0.1, 0.0).is_err());

        // agreement with direct enumeration on a concrete restriction
        let support = seqs(5);
        let mass = [0.4, 0.3, 0.15, 0.1, 0.05];
        let rewarded = [1usize, 4];
        let rejected = [0usize, 3];
        let rho_prior: f64 = rewarded.iter().map(|&i| mass[i]).sum();
        let mass_r: f64 = rejected.iter().map(|&i| mass[i]).sum();
        let rho_given_r: f64 = rejected
            .iter()
            .filter(|i| rewarded.contains(i))
            .map(|&i| mass[i])
            .sum::<f64>()
            / mass_r;
        let direct: f64 = (0..5)
            .filter(|i| rewarded.contains(i) && !rejected.contains(i))
            .map(|i| mass[i] / (1.0 - mass_r))
            .sum();
        let via_decomposition = decomposed_success_rate(rho_prior, mass_r, rho_given_r).unwrap();
        assert!((via_decomposition - direct).abs() < 1e-12, "{via_decomposition} vs {direct}");
        let _ = support;
    }

    #[test]
    fn config_validation_and_overrides() {
        let mut cfg = BanelConfig::default();
        assert_eq!(cfg.candidate_count(), 128);
        cfg.f = 1.5;
        cfg.m = 3;
        assert_eq!(cfg.candidate_count(), 5); // ceil(4.5)
        let mut kv = HashMap::new();
        kv.insert("f".to_string(), "0.5".to_string());
        assert!(cfg.apply_kv(&kv).is_err()); // f < 1 rejected after parse
        let mut bad = HashMap::new();
        bad.insert("not_a_key".to_string(), "1".to_string());
        assert!(BanelConfig::default().apply_kv(&bad).is_err());
    }

    /// Shared fixture: a tabular base over n single-token outcomes with one
    /// rare rewarded outcome.
    fn rare_outcome_setup(n: usize, rare_weight: f64) -> (SyntheticEnumTask, Model) {
        let task = SyntheticEnumTask::outcomes(n, &[n - 1]);
        let mut weights = vec![1.0f64.ln(); n];
        weights[n - 1] = rare_weight.ln();
        let base = Model::Tabular(
            TabularModel::from_log_weights(task.space().to_vec(), weights).unwrap(),
        );
        (task, base)
    }

    #[test]
    fn both_variants_agree_exactly_on_tabular_models() {
        let (task, base) = rare_outcome_setup(12, 1e-4);
        let cfg = BanelConfig {
            m: 6,
            f: 2.0,
            n_rounds: 4,
            ..BanelConfig::default()
        };

        let mut oracle_a = RewardOracle::new(&task, 10_000);
        let mut rng_a = ChaCha12Rng::seed_from_u64(7);
        let (proposal, rec_a) = run_banel(&base, &task, &mut oracle_a, &cfg, &mut rng_a).unwrap();

        let mut oracle_b = RewardOracle::new(&task, 10_000);
        let mut rng_b = ChaCha12Rng::seed_from_u64(7);
        let (stack, rec_b) =
            run_banel_no_distill(&base, &task, &mut oracle_b, &cfg, &mut rng_b).unwrap();

        assert_eq!(rec_a.len(), rec_b.len());
        for (a, b) in rec_a.iter().zip(&rec_b) {
            assert_eq!(a.nre_total, b.nre_total);
            assert!(a.tau == b.tau || (a.tau.is_nan() && b.tau.is_nan()));
            assert_eq!(a.terminated, b.terminated);
        }
        let distilled = proposal.as_tabular().unwrap();
        let stacked = stack.restricted_tabular().unwrap();
        let tv = distilled.tv_distance(&stacked);
        assert_eq!(tv, 0.0, "variants diverged, tv = {tv}");
    }

    #[test]
    fn filtering_concentrates_mass_on_the_unexplained_outcome() {
        let (task, base) = rare_outcome_setup(12, 1e-4);
        let cfg = BanelConfig {
            m: 6,
            f: 2.0,
            n_rounds: 6,
            ..BanelConfig::default()
        };
        let prior = crate::eval::exact_success_rate(&base, &task).unwrap().estimate;
        let mut oracle = RewardOracle::new(&task, 10_000);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (proposal, records) = run_banel(&base, &task, &mut oracle, &cfg, &mut rng).unwrap();
        let post = crate::eval::exact_success_rate(&proposal, &task).unwrap().estimate;
        assert!(
            post > prior * 10.0,
            "expected concentration: prior {prior}, post {post}"
        );
        // accounting: every completed round paid exactly m calls
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.round, i);
            assert_eq!(r.nre_used, cfg.m as u64);
            assert_eq!(r.nre_total, ((i + 1) * cfg.m) as u64);
        }
    }

    #[test]
    fn run_stops_on_first_success_when_configured() {
        // rewarded outcome carries a third of the mass: the very first batch
        // will hit it, so exactly one round runs and it is marked terminated
        let (task, base) = rare_outcome_setup(3, 1.0);
        let cfg = BanelConfig {
            m: 16,
            n_rounds: 5,
            terminate_on_success: true,
            ..BanelConfig::default()
        };
        let mut oracle = RewardOracle::new(&task, 10_000);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (_, records) = run_banel(&base, &task, &mut oracle, &cfg, &mut rng).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].terminated);
        assert_eq!(oracle.nre_count(), 16);
        assert!(!oracle.success_log().is_empty());
    }

    #[test]
    fn runs_stop_cleanly_when_the_budget_runs_out() {
        let (task, base) = rare_outcome_setup(12, 1e-4);
        let cfg = BanelConfig {
            m: 6,
            n_rounds: 10,
            ..BanelConfig::default()
        };
        // budget covers exactly three rounds
        let mut oracle = RewardOracle::new(&task, 18);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (_, records) = run_banel(&base, &task, &mut oracle, &cfg, &mut rng).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(oracle.nre_count(), 18);
    }

    #[test]
    fn records_csv_has_canonical_header() {
        let rec = RoundRecord {
            round: 0,
            nre_used: 4,
            nre_total: 4,
            tau: 1.25,
            ratio_stats: None,
            success_rate: None,
            terminated: false,
            acceptance_rate: None,
            aborted_inefficient: false,
        };
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,nre_total,tau,sr_estimate,sr_lo,sr_hi,terminated"
        );
        assert!(lines.next().unwrap().starts_with("0,4,1.25,"));
    }
}
