//! Metered, budgeted access to the binary reward function. This is the only
//! place reward evaluations (NREs) are counted.

use crate::error::{Error, Result};
use crate::seq::TokenSequence;
use crate::tasks::Task;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

/// A logged reward-one hit: (round index, batch index, sequence).
#[derive(Debug, Clone)]
pub struct SuccessHit {
    pub round: usize,
    pub batch_index: usize,
    /// NRE counter value immediately after the evaluation that hit.
    pub nre_at_hit: u64,
    pub sequence: TokenSequence,
}

pub struct RewardOracle<'a> {
    task: &'a dyn Task,
    nre_count: u64,
    budget: u64,
    mask_positives: bool,
    /// Off by default; when on, cache hits are counted separately and never
    /// reduce the NRE count silently.
    memoize: bool,
    memo: HashMap<TokenSequence, u8>,
    memo_hits: u64,
    round: usize,
    batch_cursor: usize,
    success_log: Vec<SuccessHit>,
}

impl<'a> RewardOracle<'a> {
    pub fn new(task: &'a dyn Task, budget: u64) -> Self {
        assert!(budget >= 1, "budget must be positive");
        Self {
            task,
            nre_count: 0,
            budget,
            mask_positives: false,
            memoize: false,
            memo: HashMap::new(),
            memo_hits: 0,
            round: 0,
            batch_cursor: 0,
            success_log: Vec::new(),
        }
    }

    pub fn with_masking(mut self, mask: bool) -> Self {
        self.mask_positives = mask;
        self
    }

    pub fn with_memoization(mut self, memoize: bool) -> Self {
        self.memoize = memoize;
        self
    }

    pub fn nre_count(&self) -> u64 {
        self.nre_count
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.nre_count
    }

    /// Memoization cache hits, reported separately from the NRE count.
    pub fn memo_hits(&self) -> u64 {
        self.memo_hits
    }

    /// Advances the round label attached to logged hits.
    pub fn set_round(&mut self, round: usize) {
        self.round = round;
        self.batch_cursor = 0;
    }

    pub fn success_log(&self) -> &[SuccessHit] {
        &self.success_log
    }

    /// Earliest logged reward-one sample, if any.
    pub fn first_success(&self) -> Option<&SuccessHit> {
        self.success_log.first()
    }

    fn raw_reward(&mut self, x: &TokenSequence) -> u8 {
        if self.memoize {
            if let Some(&r) = self.memo.get(x) {
                self.memo_hits += 1;
                return r;
            }
        }
        let r = self.task.reward(x) as u8;
        if self.memoize {
            self.memo.insert(x.clone(), r);
        }
        r
    }

    /// Evaluates r(x), costing exactly one NRE (repeated inputs included,
    /// unless memoization was explicitly enabled). With masking on, a
    /// reward-one hit is logged and the caller observes 0.
    pub fn evaluate(&mut self, x: &TokenSequence) -> Result<u8> {
        if self.remaining() < 1 {
            return Err(Error::Budget {
                requested: 1,
                remaining: 0,
            });
        }
        let memoized = self.memoize && self.memo.contains_key(x);
        let r = self.raw_reward(x);
        if !memoized {
            self.nre_count += 1;
        }
        let idx = self.batch_cursor;
        self.batch_cursor += 1;
        if r == 1 {
            self.success_log.push(SuccessHit {
                round: self.round,
                batch_index: idx,
                nre_at_hit: self.nre_count,
                sequence: x.clone(),
            });
            if self.mask_positives {
                return Ok(0);
            }
        }
        Ok(r)
    }

    /// Element-wise evaluation, atomic against the budget: either the whole
    /// batch is affordable or nothing is evaluated.
    pub fn evaluate_batch(&mut self, xs: &[TokenSequence]) -> Result<Vec<u8>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        if self.remaining() < xs.len() as u64 {
            return Err(Error::Budget {
                requested: xs.len() as u64,
                remaining: self.remaining(),
            });
        }
        xs.iter().map(|x| self.evaluate(x)).collect()
    }
}

/// Handles one request line of the newline-delimited service protocol.
///
/// `EVAL <space-separated token indices>` -> `R <0|1> NRE <count>`
/// `BUDGET?` -> `REMAIN <count>`
pub fn handle_request(oracle: &mut RewardOracle, line: &str) -> String {
    let line = line.trim();
    if line == "BUDGET?" {
        return format!("REMAIN {}", oracle.remaining());
    }
    if let Some(rest) = line.strip_prefix("EVAL") {
        let x = match TokenSequence::decode_indices(rest) {
            Ok(x) => x,
            Err(e) => return format!("ERR {e}"),
        };
        return match oracle.evaluate(&x) {
            Ok(r) => format!("R {r} NRE {}", oracle.nre_count()),
            Err(e) => format!("ERR {e}"),
        };
    }
    format!("ERR unknown request {line:?}")
}

/// Serves the oracle over a local socket until the peer disconnects or the
/// listener errors. One connection at a time; the counter is owned here so
/// concurrent batches serialize on the budget check by construction.
pub fn serve(oracle: &mut RewardOracle, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        serve_connection(oracle, stream)?;
    }
    Ok(())
}

pub fn serve_connection(oracle: &mut RewardOracle, stream: TcpStream) -> Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim() == "QUIT" {
            break;
        }
        let resp = handle_request(oracle, &line);
        writer.write_all(resp.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::Vocab;

    /// Minimal fixed task: reward 1 iff the first token equals 0.
    pub(crate) struct FirstTokenZero {
        vocab: Vocab,
    }

    impl FirstTokenZero {
        pub(crate) fn new() -> Self {
            Self {
                vocab: Vocab::with_end(vec!["0".into(), "1".into()]).unwrap(),
            }
        }
    }

    impl Task for FirstTokenZero {
        fn name(&self) -> &str {
            "first_token_zero"
        }
        fn vocab(&self) -> &Vocab {
            &self.vocab
        }
        fn max_len(&self) -> usize {
            4
        }
        fn reward(&self, x: &TokenSequence) -> bool {
            !x.truncated && x.tokens.first() == Some(&0)
        }
        fn pretrain_corpus(&self) -> &[TokenSequence] {
            &[]
        }
    }

    fn seq(tokens: &[usize]) -> TokenSequence {
        TokenSequence::new(tokens.to_vec())
    }

    #[test]
    fn every_call_costs_one_nre_even_repeated() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 10);
        let x = seq(&[1, 1]);
        oracle.evaluate(&x).unwrap();
        oracle.evaluate(&x).unwrap();
        oracle.evaluate(&x).unwrap();
        assert_eq!(oracle.nre_count(), 3);
    }

    #[test]
    fn masking_hides_reward_but_logs_it() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 10).with_masking(true);
        let r = oracle.evaluate(&seq(&[0, 1])).unwrap();
        assert_eq!(r, 0);
        assert_eq!(oracle.success_log().len(), 1);
    }

    #[test]
    fn budget_exhaustion() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 3);
        for _ in 0..3 {
            oracle.evaluate(&seq(&[1])).unwrap();
        }
        match oracle.evaluate(&seq(&[1])) {
            Err(Error::Budget {
                requested: 1,
                remaining: 0,
            }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
        assert_eq!(oracle.nre_count(), 3);
    }

    #[test]
    fn batch_is_atomic_against_budget() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 5);
        let batch: Vec<TokenSequence> = (0..6).map(|_| seq(&[1])).collect();
        assert!(matches!(
            oracle.evaluate_batch(&batch),
            Err(Error::Budget {
                requested: 6,
                remaining: 5
            })
        ));
        assert_eq!(oracle.nre_count(), 0, "nothing may be evaluated");
        let small: Vec<TokenSequence> = (0..5).map(|_| seq(&[1])).collect();
        oracle.evaluate_batch(&small).unwrap();
        assert_eq!(oracle.nre_count(), 5);
    }

    #[test]
    fn empty_batch_is_noop() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 1);
        assert!(oracle.evaluate_batch(&[]).unwrap().is_empty());
        assert_eq!(oracle.nre_count(), 0);
    }

    #[test]
    fn first_success_prefers_lowest_batch_index() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 10);
        oracle.set_round(3);
        let batch = vec![seq(&[1]), seq(&[0, 1]), seq(&[0])];
        oracle.evaluate_batch(&batch).unwrap();
        let hit = oracle.first_success().unwrap();
        assert_eq!(hit.round, 3);
        assert_eq!(hit.batch_index, 1);
        assert_eq!(hit.sequence, seq(&[0, 1]));
    }

    #[test]
    fn no_hits_means_none() {
        let task = FirstTokenZero::new();
        let oracle = RewardOracle::new(&task, 10);
        assert!(oracle.first_success().is_none());
    }

    #[test]
    fn memoization_reports_hits_separately() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 10).with_memoization(true);
        let x = seq(&[1, 1]);
        oracle.evaluate(&x).unwrap();
        oracle.evaluate(&x).unwrap();
        assert_eq!(oracle.nre_count(), 1);
        assert_eq!(oracle.memo_hits(), 1);
    }

    #[test]
    fn protocol_lines() {
        let task = FirstTokenZero::new();
        let mut oracle = RewardOracle::new(&task, 2);
        assert_eq!(handle_request(&mut oracle, "BUDGET?"), "REMAIN 2");
        assert_eq!(handle_request(&mut oracle, "EVAL 0 1"), "R 1 NRE 1");
        assert_eq!(handle_request(&mut oracle, "EVAL 1"), "R 0 NRE 2");
        assert!(handle_request(&mut oracle, "EVAL 1").starts_with("ERR"));
        assert!(handle_request(&mut oracle, "nonsense").starts_with("ERR"));
    }
}
