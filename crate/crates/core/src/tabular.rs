//! Exact tabular distribution over a fixed enumerated support.
//!
//! Serves as the closed-form oracle: MLE is empirical frequency, filtering
//! and distillation are exact restrictions, and every expectation can be
//! enumerated.

use crate::blob::ParamBlob;
use crate::error::{Error, Result};
use crate::seq::TokenSequence;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

pub const TABULAR_BLOB_KIND: u32 = 2;

#[derive(Debug, Clone)]
pub struct TabularModel {
    support: Vec<TokenSequence>,
    log_mass: Vec<f64>,
    index: HashMap<TokenSequence, usize>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

impl TabularModel {
    /// `log_mass` entries may be -inf (zero mass) but must normalize.
    pub fn new(support: Vec<TokenSequence>, log_mass: Vec<f64>) -> Result<Self> {
        if support.len() != log_mass.len() || support.is_empty() {
            return Err(Error::Precondition(
                "support and log_mass must be nonempty and equal length".into(),
            ));
        }
        let mut index = HashMap::with_capacity(support.len());
        for (i, s) in support.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Precondition("duplicate support entry".into()));
            }
        }
        let lse = log_sum_exp(&log_mass);
        if lse.abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "log_mass not normalized: logsumexp = {lse}"
            )));
        }
        Ok(Self {
            support,
            log_mass,
            index,
        })
    }

    /// Normalizes arbitrary finite log weights (entries may be -inf).
    pub fn from_log_weights(support: Vec<TokenSequence>, log_weights: Vec<f64>) -> Result<Self> {
        let lse = log_sum_exp(&log_weights);
        if !lse.is_finite() {
            return Err(Error::Precondition("all weights are zero".into()));
        }
        let log_mass = log_weights.iter().map(|w| w - lse).collect();
        Self::new(support, log_mass)
    }

    pub fn uniform(support: Vec<TokenSequence>) -> Result<Self> {
        let n = support.len();
        let lm = vec![-(n as f64).ln(); n];
        Self::new(support, lm)
    }

    pub fn support(&self) -> &[TokenSequence] {
        &self.support
    }

    pub fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    pub fn index_of(&self, x: &TokenSequence) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn log_prob(&self, x: &TokenSequence) -> Result<f64> {
        match self.index_of(x) {
            Some(i) => Ok(self.log_mass[i]),
            None => Err(Error::MalformedInput(
                "sequence outside tabular support".into(),
            )),
        }
    }

    /// CDF-scan categorical sampling, one uniform draw per sample.
    /// Temperature scales mass as p^(1/temperature), renormalized;
    /// temperature = 1 is exact (no transformation applied).
    pub fn sample(&self, n: usize, temperature: f64, rng: &mut ChaCha12Rng) -> Vec<TokenSequence> {
        assert!(n >= 1, "sample count must be >= 1");
        assert!(temperature > 0.0, "temperature must be positive");
        let probs: Vec<f64> = if temperature == 1.0 {
            self.log_mass.iter().map(|l| l.exp()).collect()
        } else {
            let scaled: Vec<f64> = self.log_mass.iter().map(|l| l / temperature).collect();
            let lse = log_sum_exp(&scaled);
            scaled.iter().map(|l| (l - lse).exp()).collect()
        };
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = self.support.len() - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            out.push(self.support[pick].clone());
        }
        out
    }

    /// Closed-form MLE over the fixed support: mass = empirical frequency.
    /// Data outside the support is a malformed input.
    pub fn fit_mle(&mut self, data: &[TokenSequence]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Precondition("fit_mle requires nonempty data".into()));
        }
        let mut counts = vec![0u64; self.support.len()];
        for x in data {
            let i = self
                .index_of(x)
                .ok_or_else(|| Error::MalformedInput("datum outside tabular support".into()))?;
            counts[i] += 1;
        }
        let n = data.len() as f64;
        for (i, &c) in counts.iter().enumerate() {
            self.log_mass[i] = if c == 0 {
                f64::NEG_INFINITY
            } else {
                (c as f64 / n).ln()
            };
        }
        Ok(())
    }

    /// Exact Bayesian restriction: keep entries where `keep` holds, zero the
    /// rest, renormalize. Errors if the kept region has zero mass.
    pub fn restrict<F: Fn(&TokenSequence) -> bool>(&self, keep: F) -> Result<Self> {
        let log_weights: Vec<f64> = self
            .support
            .iter()
            .zip(&self.log_mass)
            .map(|(s, &lm)| if keep(s) { lm } else { f64::NEG_INFINITY })
            .collect();
        Self::from_log_weights(self.support.clone(), log_weights)
    }

    /// Gradient of sum_i w_i log p(x_i) with respect to the log-mass values
    /// viewed as softmax logits: d log p(x)/d theta_j = 1[x = j] - p_j.
    pub fn weighted_logprob_grad(&self, items: &[(&TokenSequence, f64)]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.log_mass.len()];
        let mut wsum = 0.0;
        for (x, w) in items {
            let j = self.index_of(x).ok_or_else(|| {
                Error::MalformedInput("gradient item outside support".into())
            })?;
            grad[j] += w;
            wsum += w;
        }
        for (g, lm) in grad.iter_mut().zip(&self.log_mass) {
            *g -= wsum * lm.exp();
        }
        Ok(grad)
    }

    pub fn snapshot(&self) -> ParamBlob {
        ParamBlob {
            kind: TABULAR_BLOB_KIND,
            shape: vec![self.support.len() as u64],
            data: self.log_mass.clone(),
        }
    }

    pub fn restore(&mut self, blob: &ParamBlob) -> Result<()> {
        if blob.kind != TABULAR_BLOB_KIND
            || blob.shape != vec![self.support.len() as u64]
            || blob.data.len() != self.log_mass.len()
        {
            return Err(Error::BlobMismatch("tabular shape mismatch".into()));
        }
        self.log_mass.copy_from_slice(&blob.data);
        Ok(())
    }

    /// Total variation distance to another model over the union of supports.
    pub fn tv_distance(&self, other: &TabularModel) -> f64 {
        let mut tv = 0.0;
        for (s, &lm) in self.support.iter().zip(&self.log_mass) {
            let q = other
                .index_of(s)
                .map(|i| other.log_mass[i].exp())
                .unwrap_or(0.0);
            tv += (lm.exp() - q).abs();
        }
        for (s, &lm) in other.support.iter().zip(&other.log_mass) {
            if self.index_of(s).is_none() {
                tv += lm.exp();
            }
        }
        tv / 2.0
    }
}
