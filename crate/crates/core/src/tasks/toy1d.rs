//! 1-D bin task: 64 bins over [-4, 4] encoded as two base-16 tokens, so the
//! autoregressive factorization is exercised even on a one-dimensional space.
//! Reward-one bins are the ones containing -2.0 and +2.0; the pretraining
//! corpus is a discretized unimodal bump centered at 0.

use super::Task;
use crate::seq::{TokenSequence, Vocab};
use crate::tabular::TabularModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const N_BINS: usize = 64;
pub const DOMAIN_LO: f64 = -4.0;
pub const DOMAIN_HI: f64 = 4.0;
const CORPUS_SIZE: usize = 4000;
pub const BUMP_SIGMA: f64 = 0.6;

pub struct Toy1dTask {
    vocab: Vocab,
    corpus: Vec<TokenSequence>,
    targets: Vec<TokenSequence>,
}

pub fn bin_width() -> f64 {
    (DOMAIN_HI - DOMAIN_LO) / N_BINS as f64
}

/// Bin index containing `x`; bins are half-open [lo + i*w, lo + (i+1)*w).
pub fn bin_of(x: f64) -> usize {
    let i = ((x - DOMAIN_LO) / bin_width()).floor() as isize;
    i.clamp(0, N_BINS as isize - 1) as usize
}

pub fn bin_center(bin: usize) -> f64 {
    DOMAIN_LO + (bin as f64 + 0.5) * bin_width()
}

/// Two-token base-16 encoding of a bin index.
pub fn sequence_for_bin(bin: usize) -> TokenSequence {
    assert!(bin < N_BINS);
    TokenSequence::new(vec![bin / 16, bin % 16])
}

pub fn bin_for_sequence(x: &TokenSequence) -> Option<usize> {
    if x.truncated || x.tokens.len() != 2 {
        return None;
    }
    let (hi, lo) = (x.tokens[0], x.tokens[1]);
    if hi >= 16 || lo >= 16 || hi * 16 + lo >= N_BINS {
        return None;
    }
    Some(hi * 16 + lo)
}

/// Exact discretized Gaussian bump over the bin supports: the closed-form
/// counterpart of the sampling distribution behind the pretraining corpus.
pub fn bump_model(sigma: f64) -> TabularModel {
    assert!(sigma > 0.0);
    let support: Vec<TokenSequence> = (0..N_BINS).map(sequence_for_bin).collect();
    let weights: Vec<f64> = (0..N_BINS)
        .map(|b| {
            let c = bin_center(b);
            -c * c / (2.0 * sigma * sigma)
        })
        .collect();
    TabularModel::from_log_weights(support, weights).expect("bump weights are finite")
}

impl Toy1dTask {
    pub fn new(seed: u64) -> Self {
        let symbols: Vec<String> = (0..16).map(|i| format!("{i:x}")).collect();
        let vocab = Vocab::with_end(symbols).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x7031_64d1);
        let mut corpus = Vec::with_capacity(CORPUS_SIZE);
        while corpus.len() < CORPUS_SIZE {
            // Box-Muller draw from the bump
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let x = z * BUMP_SIGMA;
            if !(DOMAIN_LO..DOMAIN_HI).contains(&x) {
                continue;
            }
            corpus.push(sequence_for_bin(bin_of(x)));
        }
        let targets = vec![
            sequence_for_bin(bin_of(-2.0)),
            sequence_for_bin(bin_of(2.0)),
        ];
        Self {
            vocab,
            corpus,
            targets,
        }
    }

    pub fn reward_bins() -> [usize; 2] {
        [bin_of(-2.0), bin_of(2.0)]
    }
}

impl Task for Toy1dTask {
    fn name(&self) -> &str {
        "toy1d"
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        3
    }

    fn reward(&self, x: &TokenSequence) -> bool {
        match bin_for_sequence(x) {
            Some(bin) => Self::reward_bins().contains(&bin),
            None => false,
        }
    }

    fn target_set(&self) -> Option<&[TokenSequence]> {
        Some(&self.targets)
    }

    fn enumerate_space(&self) -> Option<Vec<TokenSequence>> {
        Some((0..N_BINS).map(sequence_for_bin).collect())
    }

    fn pretrain_corpus(&self) -> &[TokenSequence] {
        &self.corpus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_two_reward_bins() {
        let task = Toy1dTask::new(0);
        let hits: Vec<usize> = (0..N_BINS)
            .filter(|&b| task.reward(&sequence_for_bin(b)))
            .collect();
        assert_eq!(hits.len(), 2);
        assert!((bin_center(hits[0]) - (-2.0)).abs() <= bin_width());
        assert!((bin_center(hits[1]) - 2.0).abs() <= bin_width());
    }

    #[test]
    fn reward_bin_sequences_decode_back() {
        for b in [0, 15, 16, 48, 63] {
            assert_eq!(bin_for_sequence(&sequence_for_bin(b)), Some(b));
        }
        // encodings past the last bin are not valid bins
        assert_eq!(bin_for_sequence(&TokenSequence::new(vec![4, 0])), None);
    }

    #[test]
    fn bump_model_is_centered_and_thin_tailed() {
        let bump = bump_model(BUMP_SIGMA);
        let center = bump.log_prob(&sequence_for_bin(bin_of(0.0))).unwrap();
        let target = bump.log_prob(&sequence_for_bin(bin_of(2.0))).unwrap();
        assert!(center > target + 4.0, "bump should decay sharply");
        let total: f64 = (0..N_BINS)
            .map(|b| bump.log_prob(&sequence_for_bin(b)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_sequences_earn_nothing() {
        let task = Toy1dTask::new(0);
        assert!(!task.reward(&TokenSequence::new(vec![4])));
        assert!(!task.reward(&TokenSequence::truncated(vec![4, 0])));
        assert!(!task.reward(&TokenSequence::new(vec![4, 0, 1])));
    }

    #[test]
    fn corpus_is_centered_and_sparse_near_targets() {
        let task = Toy1dTask::new(1);
        let n = task.pretrain_corpus().len() as f64;
        let near_target = task
            .pretrain_corpus()
            .iter()
            .filter(|s| {
                let c = bin_center(bin_for_sequence(s).unwrap());
                (c.abs() - 2.0).abs() < 0.25
            })
            .count() as f64;
        assert!(near_target / n < 0.05);
        let mean: f64 = task
            .pretrain_corpus()
            .iter()
            .map(|s| bin_center(bin_for_sequence(s).unwrap()))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.1, "mean = {mean}");
    }
}
