//! Addition attack task. A frozen "target" model answers integer addition
//! queries; the attacker emits query strings `a+b=` and earns reward 1 when
//! the query is grammatical but the target's greedy answer is wrong. The
//! target is trained on short, mostly carry-free sums, so its weaknesses are
//! long carry chains and unfamiliar surface forms such as leading zeros.

use super::Task;
use crate::neural::NeuralARModel;
use crate::seq::{TokenSequence, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const TOK_PLUS: usize = 10;
pub const TOK_EQ: usize = 11;
pub const MAX_OPERAND_DIGITS: usize = 4;
/// Query body (4+1+4+1) plus answer digits (up to 5) plus terminator.
pub const MAX_LEN: usize = 16;

const TARGET_CORPUS: usize = 3000;
const TARGET_EPOCHS: usize = 300;
const TARGET_HIDDEN: usize = 64;
const TARGET_CONTEXT: usize = 10;
const TARGET_LR: f64 = 2e-3;
const ATTACKER_CORPUS: usize = 3000;

pub fn addition_vocab() -> Vocab {
    let mut symbols: Vec<String> = (0..10).map(|d| d.to_string()).collect();
    symbols.push("+".into());
    symbols.push("=".into());
    Vocab::with_end(symbols).unwrap()
}

/// Decimal digit tokens of `n`, most significant first.
pub fn digits_of(n: u64) -> Vec<usize> {
    let mut ds: Vec<usize> = n
        .to_string()
        .bytes()
        .map(|b| (b - b'0') as usize)
        .collect();
    debug_assert!(!ds.is_empty());
    ds.shrink_to_fit();
    ds
}

fn operand_value(tokens: &[usize]) -> u64 {
    tokens.iter().fold(0u64, |acc, &d| acc * 10 + d as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrammarCheck {
    /// Parsed operand values (leading zeros preserved only in the tokens).
    Valid { a: u64, b: u64 },
    Invalid(&'static str),
}

impl GrammarCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, GrammarCheck::Valid { .. })
    }
}

/// Checks that a complete emission parses as `<digits>+<digits>=` with 1-4
/// digit operands. With `forbid_leading_zeros`, a multi-digit operand may not
/// start with 0.
pub fn grammar_check(x: &TokenSequence, forbid_leading_zeros: bool) -> GrammarCheck {
    if x.truncated {
        return GrammarCheck::Invalid("truncated emission");
    }
    let mut parts = x.tokens.splitn(2, |&t| t == TOK_PLUS);
    let (lhs, rest) = match (parts.next(), parts.next()) {
        (Some(l), Some(r)) => (l, r),
        _ => return GrammarCheck::Invalid("missing '+'"),
    };
    let mut parts = rest.splitn(2, |&t| t == TOK_EQ);
    let (rhs, tail) = match (parts.next(), parts.next()) {
        (Some(m), Some(t)) => (m, t),
        _ => return GrammarCheck::Invalid("missing '='"),
    };
    if !tail.is_empty() {
        return GrammarCheck::Invalid("tokens after '='");
    }
    for operand in [lhs, rhs] {
        if operand.is_empty() || operand.len() > MAX_OPERAND_DIGITS {
            return GrammarCheck::Invalid("operand must be 1-4 digits");
        }
        if operand.iter().any(|&t| t >= 10) {
            return GrammarCheck::Invalid("operand contains a non-digit");
        }
        if forbid_leading_zeros && operand.len() > 1 && operand[0] == 0 {
            return GrammarCheck::Invalid("leading zero");
        }
    }
    GrammarCheck::Valid {
        a: operand_value(lhs),
        b: operand_value(rhs),
    }
}

/// The target's answer to a query body: greedy decoding after the '=' token.
/// Non-digit emissions are returned as-is; they simply count as wrong.
pub fn target_answer(target: &NeuralARModel, query: &[usize]) -> Vec<usize> {
    target.greedy_continuation(query)
}

fn query_body(a_tokens: &[usize], b_tokens: &[usize]) -> Vec<usize> {
    let mut body = Vec::with_capacity(a_tokens.len() + b_tokens.len() + 2);
    body.extend_from_slice(a_tokens);
    body.push(TOK_PLUS);
    body.extend_from_slice(b_tokens);
    body.push(TOK_EQ);
    body
}

/// Draws an operand pair from the target's home turf: one- or two-digit
/// numbers whose sum never carries.
fn sample_easy_pair(rng: &mut ChaCha12Rng) -> (u64, u64) {
    loop {
        let draw = |rng: &mut ChaCha12Rng| -> u64 {
            if rng.gen_bool(0.65) {
                rng.gen_range(0..10)
            } else {
                rng.gen_range(10..100)
            }
        };
        let (a, b) = (draw(rng), draw(rng));
        let carries = {
            let (mut x, mut y, mut c, mut any) = (a, b, 0u64, false);
            while x > 0 || y > 0 {
                let s = x % 10 + y % 10 + c;
                c = s / 10;
                any |= c > 0;
                x /= 10;
                y /= 10;
            }
            any
        };
        if !carries {
            return (a, b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Four-digit operands whose sum carries through every position.
    CarryChain,
    /// Ordinary small sums dressed up with leading zeros.
    LeadingZeros,
}

/// Deterministic batches of hand-constructed adversarial queries.
pub fn rule_based_attacks(kind: AttackKind, n: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xa77ac4);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (a_tokens, b_tokens) = match kind {
            AttackKind::CarryChain => {
                // Least significant pair sums past 9; middle pairs sum to
                // exactly 9 so the carry keeps propagating; leading digits
                // are free but nonzero.
                let mut a = vec![0usize; MAX_OPERAND_DIGITS];
                let mut b = vec![0usize; MAX_OPERAND_DIGITS];
                let d = rng.gen_range(1..=9usize);
                a[MAX_OPERAND_DIGITS - 1] = d;
                b[MAX_OPERAND_DIGITS - 1] = rng.gen_range(10 - d..=9);
                for i in 1..MAX_OPERAND_DIGITS - 1 {
                    let d = rng.gen_range(0..=9usize);
                    a[i] = d;
                    b[i] = 9 - d;
                }
                a[0] = rng.gen_range(1..=9);
                b[0] = rng.gen_range(1..=9);
                (a, b)
            }
            AttackKind::LeadingZeros => {
                let (a, b) = sample_easy_pair(&mut rng);
                let mut a = digits_of(a);
                let mut b = digits_of(b);
                // Pad both operands with zeros to the full width cap.
                let pad = |t: &mut Vec<usize>| {
                    while t.len() < MAX_OPERAND_DIGITS {
                        t.insert(0, 0);
                    }
                };
                pad(&mut a);
                pad(&mut b);
                (a, b)
            }
        };
        out.push(TokenSequence::new(query_body(&a_tokens, &b_tokens)));
    }
    out
}

pub struct AdditionAttackTask {
    name: String,
    vocab: Vocab,
    target: NeuralARModel,
    forbid_leading_zeros: bool,
    corpus: Vec<TokenSequence>,
}

impl AdditionAttackTask {
    pub fn new(seed: u64, forbid_leading_zeros: bool) -> Self {
        let vocab = addition_vocab();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xadd_17e5);

        // Full worked examples `a+b=c` for the target.
        let mut train = Vec::with_capacity(TARGET_CORPUS);
        for _ in 0..TARGET_CORPUS {
            let (a, b) = sample_easy_pair(&mut rng);
            let mut body = query_body(&digits_of(a), &digits_of(b));
            body.extend(digits_of(a + b));
            train.push(TokenSequence::new(body));
        }
        let mut target = NeuralARModel::new(
            vocab.clone(),
            TARGET_CONTEXT,
            MAX_LEN,
            TARGET_HIDDEN,
            &mut rng,
        );
        target
            .fit_mle(&train, TARGET_EPOCHS, TARGET_LR, &mut rng)
            .expect("target training");

        // Bare queries from the same distribution for the attacker's prior.
        let corpus = (0..ATTACKER_CORPUS)
            .map(|_| {
                let (a, b) = sample_easy_pair(&mut rng);
                TokenSequence::new(query_body(&digits_of(a), &digits_of(b)))
            })
            .collect();

        Self {
            name: if forbid_leading_zeros {
                "addition_attack_nolz".into()
            } else {
                "addition_attack".into()
            },
            vocab,
            target,
            forbid_leading_zeros,
            corpus,
        }
    }

    pub fn target_model(&self) -> &NeuralARModel {
        &self.target
    }

    /// Whether the target answers this (already validated) query correctly.
    pub fn target_correct(&self, query: &[usize], a: u64, b: u64) -> bool {
        target_answer(&self.target, query) == digits_of(a + b)
    }

    /// Target accuracy over `n` queries drawn from its training distribution.
    pub fn home_accuracy(&self, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let correct = (0..n)
            .filter(|_| {
                let (a, b) = sample_easy_pair(&mut rng);
                self.target_correct(&query_body(&digits_of(a), &digits_of(b)), a, b)
            })
            .count();
        correct as f64 / n as f64
    }
}

impl Task for AdditionAttackTask {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        // Longest query body (10 tokens) plus terminator.
        2 * MAX_OPERAND_DIGITS + 3
    }

    fn reward(&self, x: &TokenSequence) -> bool {
        match grammar_check(x, self.forbid_leading_zeros) {
            GrammarCheck::Valid { a, b } => !self.target_correct(&x.tokens, a, b),
            GrammarCheck::Invalid(_) => false,
        }
    }

    fn pretrain_corpus(&self) -> &[TokenSequence] {
        &self.corpus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> TokenSequence {
        let tokens = s
            .chars()
            .map(|c| match c {
                '+' => TOK_PLUS,
                '=' => TOK_EQ,
                d => d.to_digit(10).unwrap() as usize,
            })
            .collect();
        TokenSequence::new(tokens)
    }

    #[test]
    fn grammar_accepts_well_formed_queries() {
        for q in ["1+2=", "12+9=", "1234+5678=", "0+0="] {
            assert!(grammar_check(&toks(q), false).is_valid(), "{q}");
        }
        assert_eq!(
            grammar_check(&toks("12+34="), false),
            GrammarCheck::Valid { a: 12, b: 34 }
        );
    }

    #[test]
    fn grammar_rejects_malformed_queries() {
        for q in ["", "+2=", "1+=", "12+34", "1++2=", "12345+1=", "1+2=3"] {
            assert!(!grammar_check(&toks(q), false).is_valid(), "{q:?}");
        }
        assert!(!grammar_check(&TokenSequence::truncated(toks("1+2=").tokens), false).is_valid());
    }

    #[test]
    fn leading_zero_legality_is_a_flag() {
        let q = toks("007+5=");
        assert_eq!(grammar_check(&q, false), GrammarCheck::Valid { a: 7, b: 5 });
        assert_eq!(
            grammar_check(&q, true),
            GrammarCheck::Invalid("leading zero")
        );
        // A lone zero is fine either way.
        assert!(grammar_check(&toks("0+5="), true).is_valid());
    }

    #[test]
    fn carry_chain_attacks_carry_through_every_position() {
        for q in rule_based_attacks(AttackKind::CarryChain, 200, 11) {
            let (a, b) = match grammar_check(&q, true) {
                GrammarCheck::Valid { a, b } => (a, b),
                bad => panic!("attack should be grammatical: {bad:?}"),
            };
            // Every digit position except the least significant must
            // receive a carry from below.
            let (mut x, mut y, mut c) = (a, b, 0u64);
            for pos in 0..MAX_OPERAND_DIGITS - 1 {
                let s = x % 10 + y % 10 + c;
                c = s / 10;
                assert_eq!(c, 1, "carry into position {} of {a}+{b}", pos + 1);
                x /= 10;
                y /= 10;
            }
        }
    }

    #[test]
    fn leading_zero_attacks_are_zero_padded_and_small() {
        for q in rule_based_attacks(AttackKind::LeadingZeros, 200, 12) {
            assert!(grammar_check(&q, false).is_valid());
            assert!(!grammar_check(&q, true).is_valid(), "{:?}", q.tokens);
        }
    }

    #[test]
    fn attacks_are_deterministic_in_the_seed() {
        let a = rule_based_attacks(AttackKind::CarryChain, 20, 5);
        let b = rule_based_attacks(AttackKind::CarryChain, 20, 5);
        assert_eq!(a, b);
        let c = rule_based_attacks(AttackKind::CarryChain, 20, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn untrained_target_is_trivially_attackable() {
        // A fresh random target answers almost everything wrong, so any
        // grammatical query is a reward-one sample against it.
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let target = NeuralARModel::new(addition_vocab(), TARGET_CONTEXT, MAX_LEN, 8, &mut rng);
        let wrong = (0..50)
            .filter(|i| {
                let q = query_body(&digits_of(*i as u64), &digits_of(7));
                target_answer(&target, &q) != digits_of(*i as u64 + 7)
            })
            .count();
        assert!(wrong >= 45, "only {wrong}/50 wrong");
    }

    #[test]
    fn digit_helpers_roundtrip() {
        for n in [0u64, 7, 10, 305, 9999, 19998] {
            assert_eq!(operand_value(&digits_of(n)), n);
        }
    }
}
