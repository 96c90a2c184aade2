//! Sparse-reward environments: a shared task contract plus three desk-scale
//! tasks (1-D bins, pattern shift, addition attack).

mod addition;
mod pattern;
mod toy1d;

pub use addition::{
    grammar_check, rule_based_attacks, target_answer, AdditionAttackTask, AttackKind,
    GrammarCheck,
};
pub use pattern::{PatternShiftTask, BODY_LEN as PATTERN_BODY_LEN};
pub use toy1d::{
    bin_center, bin_for_sequence, bin_of, bin_width, bump_model, sequence_for_bin, Toy1dTask,
    BUMP_SIGMA, N_BINS,
};

use crate::error::{Error, Result};
use crate::seq::{TokenSequence, Vocab};
use std::io::Write;

/// A sparse-reward environment. Tasks are immutable after construction and
/// their reward functions are pure: same input, same answer, every call.
pub trait Task: Send + Sync {
    fn name(&self) -> &str;

    fn vocab(&self) -> &Vocab;

    /// Maximum total tokens per sample (terminator included).
    fn max_len(&self) -> usize;

    /// Pure binary reward. Truncated sequences earn nothing unless a task
    /// explicitly decides otherwise.
    fn reward(&self, x: &TokenSequence) -> bool;

    /// Enumerable set of reward-one sequences, when the task has one.
    fn target_set(&self) -> Option<&[TokenSequence]> {
        None
    }

    /// Full enumeration of the sample space, when small enough.
    fn enumerate_space(&self) -> Option<Vec<TokenSequence>> {
        None
    }

    fn pretrain_corpus(&self) -> &[TokenSequence];
}

/// Deterministic task construction from (name, seed).
pub fn make_task(name: &str, seed: u64) -> Result<Box<dyn Task>> {
    match name {
        "toy1d" => Ok(Box::new(Toy1dTask::new(seed))),
        "pattern_shift" => Ok(Box::new(PatternShiftTask::new(seed))),
        "addition_attack" => Ok(Box::new(AdditionAttackTask::new(seed, false))),
        "addition_attack_nolz" => Ok(Box::new(AdditionAttackTask::new(seed, true))),
        other => Err(Error::Config(format!("unknown task {other:?}"))),
    }
}

/// Structured text manifest: name, seed, parameters, corpus checksums.
pub fn write_manifest<W: Write>(
    mut w: W,
    task: &dyn Task,
    seed: u64,
    params: &[(&str, String)],
) -> Result<()> {
    writeln!(w, "name = {}", task.name())?;
    writeln!(w, "seed = {seed}")?;
    writeln!(w, "vocab_size = {}", task.vocab().size())?;
    writeln!(w, "max_len = {}", task.max_len())?;
    for (k, v) in params {
        writeln!(w, "{k} = {v}")?;
    }
    writeln!(w, "corpus_checksum = {}", checksum(task.pretrain_corpus()))?;
    if let Some(t) = task.target_set() {
        writeln!(w, "target_checksum = {}", checksum(t))?;
    }
    Ok(())
}

/// FNV-1a over the token streams; stable across processes.
pub fn checksum(seqs: &[TokenSequence]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |b: u64| {
        h ^= b;
        h = h.wrapping_mul(0x100000001b3);
    };
    for s in seqs {
        for &t in &s.tokens {
            mix(t as u64 + 1);
        }
        mix(if s.truncated { 2 } else { 0 });
        mix(u64::MAX);
    }
    h
}

/// Fully enumerable synthetic task over an explicit support; the exact
/// oracle used to validate the algorithm pipeline against closed forms.
pub struct SyntheticEnumTask {
    vocab: Vocab,
    space: Vec<TokenSequence>,
    rewarded: std::collections::HashSet<TokenSequence>,
    corpus: Vec<TokenSequence>,
}

impl SyntheticEnumTask {
    pub fn new(
        vocab: Vocab,
        space: Vec<TokenSequence>,
        rewarded: Vec<TokenSequence>,
        corpus: Vec<TokenSequence>,
    ) -> Self {
        Self {
            vocab,
            space,
            rewarded: rewarded.into_iter().collect(),
            corpus,
        }
    }

    /// `n` single-token outcomes with the given rewarded indices.
    pub fn outcomes(n: usize, rewarded: &[usize]) -> Self {
        let symbols: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let vocab = Vocab::with_end(symbols).unwrap();
        let space: Vec<TokenSequence> = (0..n).map(|i| TokenSequence::new(vec![i])).collect();
        let rew = rewarded
            .iter()
            .map(|&i| TokenSequence::new(vec![i]))
            .collect();
        Self::new(vocab, space, rew, Vec::new())
    }

    pub fn space(&self) -> &[TokenSequence] {
        &self.space
    }
}

impl Task for SyntheticEnumTask {
    fn name(&self) -> &str {
        "synthetic_enum"
    }
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }
    fn max_len(&self) -> usize {
        self.space.iter().map(|s| s.tokens.len() + 1).max().unwrap_or(2)
    }
    fn reward(&self, x: &TokenSequence) -> bool {
        self.rewarded.contains(x)
    }
    fn enumerate_space(&self) -> Option<Vec<TokenSequence>> {
        Some(self.space.clone())
    }
    fn pretrain_corpus(&self) -> &[TokenSequence] {
        &self.corpus
    }
}
