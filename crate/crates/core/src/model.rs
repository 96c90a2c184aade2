//! Unified handle over the two likelihood-based model families.

use crate::blob::ParamBlob;
use crate::error::{Error, Result};
use crate::neural::NeuralARModel;
use crate::seq::TokenSequence;
use crate::tabular::TabularModel;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub enum Model {
    Neural(NeuralARModel),
    Tabular(TabularModel),
}

impl Model {
    pub fn log_prob(&self, x: &TokenSequence) -> Result<f64> {
        match self {
            Model::Neural(m) => m.log_prob(x),
            Model::Tabular(m) => m.log_prob(x),
        }
    }

    pub fn sample(&self, n: usize, temperature: f64, rng: &mut ChaCha12Rng) -> Vec<TokenSequence> {
        match self {
            Model::Neural(m) => m.sample(n, temperature, rng),
            Model::Tabular(m) => m.sample(n, temperature, rng),
        }
    }

    /// Maximum-likelihood fit. Tabular models use the closed form and ignore
    /// the optimizer knobs.
    pub fn fit_mle(
        &mut self,
        data: &[TokenSequence],
        epochs: usize,
        lr: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Precondition("fit_mle requires nonempty data".into()));
        }
        match self {
            Model::Neural(m) => {
                m.fit_mle(data, epochs, lr, rng)?;
            }
            Model::Tabular(m) => m.fit_mle(data)?,
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ParamBlob {
        match self {
            Model::Neural(m) => m.snapshot(),
            Model::Tabular(m) => m.snapshot(),
        }
    }

    pub fn restore(&mut self, blob: &ParamBlob) -> Result<()> {
        match self {
            Model::Neural(m) => m.restore(blob),
            Model::Tabular(m) => m.restore(blob),
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularModel> {
        match self {
            Model::Tabular(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_neural(&self) -> Option<&NeuralARModel> {
        match self {
            Model::Neural(m) => Some(m),
            _ => None,
        }
    }
}
