//! Token vocabularies and the universal sample type: finite token sequences.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// An ordered set of distinct tokens with one distinguished terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    end_token: usize,
}

impl Vocab {
    pub fn new(symbols: Vec<String>, end_token: usize) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::Precondition("vocab needs at least 2 symbols".into()));
        }
        if end_token >= symbols.len() {
            return Err(Error::Precondition("end_token out of range".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.clone()) {
                return Err(Error::Precondition(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, end_token })
    }

    /// Convenience constructor: named symbols plus a final `<end>` terminator.
    pub fn with_end(mut symbols: Vec<String>) -> Result<Self> {
        symbols.push("<end>".to_string());
        let end = symbols.len() - 1;
        Self::new(symbols, end)
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn end_token(&self) -> usize {
        self.end_token
    }

    pub fn symbol(&self, idx: usize) -> Option<&str> {
        self.symbols.get(idx).map(|s| s.as_str())
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Plain-text serialization: one token per line, terminator marked with a
    /// leading `!` on its own header line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "!end={}", self.end_token)?;
        for s in &self.symbols {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedInput("empty vocab file".into()))??;
        let end: usize = header
            .strip_prefix("!end=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MalformedInput("missing !end header".into()))?;
        let mut symbols = Vec::new();
        for line in lines {
            symbols.push(line?);
        }
        Self::new(symbols, end)
    }
}

/// A finite string over a vocabulary. `tokens` holds the non-terminator
/// prefix; a sequence is either complete (terminator was produced) or
/// truncated at the model's maximum length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            truncated: false,
        }
    }

    pub fn truncated(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            truncated: true,
        }
    }

    /// Sequence length `l(x)`: token count excluding the terminator. Clamped
    /// to 1 so length normalization is always well defined.
    pub fn len_norm(&self) -> usize {
        self.tokens.len().max(1)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for &t in &self.tokens {
            if t >= vocab.size() {
                return Err(Error::MalformedInput(format!(
                    "token index {t} out of range for vocab of size {}",
                    vocab.size()
                )));
            }
            if t == vocab.end_token() {
                return Err(Error::MalformedInput(
                    "terminator appears inside sequence body".into(),
                ));
            }
        }
        Ok(())
    }

    /// Decimal, space-separated token indices (the wire encoding).
    pub fn encode_indices(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn decode_indices(s: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for part in s.split_whitespace() {
            let t: usize = part
                .parse()
                .map_err(|_| Error::MalformedInput(format!("bad token index {part:?}")))?;
            tokens.push(t);
        }
        Ok(Self::new(tokens))
    }
}

/// Newline-delimited token-index file for corpora and target sets.
pub fn write_sequences<W: Write>(mut w: W, seqs: &[TokenSequence]) -> Result<()> {
    for s in seqs {
        writeln!(w, "{}", s.encode_indices())?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TokenSequence::decode_indices(&line)?);
    }
    Ok(out)
}
