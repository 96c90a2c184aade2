//! Fixed-context autoregressive network over token sequences.
//!
//! Per-position conditional: one-hot embedding of the last `context` tokens
//! (positions before the sequence start contribute a zero block), two tanh
//! hidden layers, softmax logits over the vocabulary. All arithmetic is f64
//! and gradients are computed analytically in one fused backward pass.

use crate::blob::ParamBlob;
use crate::error::{Error, Result};
use crate::seq::{TokenSequence, Vocab};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub const NEURAL_BLOB_KIND: u32 = 1;

/// Adaptive-moment gradient ascent state.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One ascent step: params <- params + lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1c;
            let vh = self.v[i] / b2c;
            params[i] += lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// out += a (m x k) * b (k x n), all row-major.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out += a^T (k x m -> m x k stored) * b (m x n); a is m x k row-major.
fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out += a (m x n_b) * b^T where b is k x n_b row-major (result m x k).
fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, nb: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * nb..(i + 1) * nb];
        let orow = &mut out[i * k..(i + 1) * k];
        for j in 0..k {
            let brow = &b[j * nb..(j + 1) * nb];
            let mut acc = 0.0;
            for t in 0..nb {
                acc += arow[t] * brow[t];
            }
            orow[j] += acc;
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// A single prediction row: active one-hot input indices, target token, weight.
struct Row {
    active: Vec<usize>,
    target: usize,
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct NeuralARModel {
    vocab: Vocab,
    context: usize,
    max_len: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl NeuralARModel {
    pub fn param_len(vocab_size: usize, context: usize, hidden: usize) -> usize {
        let input = context * vocab_size;
        input * hidden + hidden + hidden * hidden + hidden + hidden * vocab_size + vocab_size
    }

    pub fn new(vocab: Vocab, context: usize, max_len: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        assert!(context >= 1 && max_len >= 1 && hidden >= 1);
        let v = vocab.size();
        let n = Self::param_len(v, context, hidden);
        let input = context * v;
        let mut params = vec![0.0; n];
        // scaled uniform init per layer; biases stay zero
        let (o_w1, _o_b1, o_w2, _o_b2, o_w3, _o_b3) = Self::offsets(v, context, hidden);
        let s1 = (1.0 / input as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        for p in &mut params[o_w1..o_w1 + input * hidden] {
            *p = rng.gen_range(-s1..s1);
        }
        for p in &mut params[o_w2..o_w2 + hidden * hidden] {
            *p = rng.gen_range(-s2..s2);
        }
        for p in &mut params[o_w3..o_w3 + hidden * v] {
            *p = rng.gen_range(-s2..s2);
        }
        Self {
            vocab,
            context,
            max_len,
            hidden,
            params,
        }
    }

    /// All-zero parameters: every conditional is uniform.
    pub fn zeroed(vocab: Vocab, context: usize, max_len: usize, hidden: usize) -> Self {
        let n = Self::param_len(vocab.size(), context, hidden);
        Self {
            vocab,
            context,
            max_len,
            hidden,
            params: vec![0.0; n],
        }
    }

    fn offsets(v: usize, context: usize, hidden: usize) -> (usize, usize, usize, usize, usize, usize) {
        let input = context * v;
        let o_w1 = 0;
        let o_b1 = o_w1 + input * hidden;
        let o_w2 = o_b1 + hidden;
        let o_b2 = o_w2 + hidden * hidden;
        let o_w3 = o_b2 + hidden;
        let o_b3 = o_w3 + hidden * v;
        (o_w1, o_b1, o_w2, o_b2, o_w3, o_b3)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Active input indices for predicting position `t` of `body`.
    fn context_indices(&self, body: &[usize], t: usize, out: &mut Vec<usize>) {
        out.clear();
        let v = self.vocab.size();
        for j in 0..self.context {
            if t >= j + 1 {
                let tok = body[t - 1 - j];
                out.push(j * v + tok);
            }
        }
    }

    /// Logits for a single context (unbatched forward).
    fn logits_at(&self, body: &[usize], t: usize) -> Vec<f64> {
        let v = self.vocab.size();
        let h = self.hidden;
        let (o_w1, o_b1, o_w2, o_b2, o_w3, o_b3) = Self::offsets(v, self.context, h);
        let mut active = Vec::with_capacity(self.context);
        self.context_indices(body, t, &mut active);

        let mut h1 = self.params[o_b1..o_b1 + h].to_vec();
        for &idx in &active {
            let row = &self.params[o_w1 + idx * h..o_w1 + (idx + 1) * h];
            for i in 0..h {
                h1[i] += row[i];
            }
        }
        for x in &mut h1 {
            *x = x.tanh();
        }
        let mut h2 = self.params[o_b2..o_b2 + h].to_vec();
        for i in 0..h {
            let a = h1[i];
            if a == 0.0 {
                continue;
            }
            let row = &self.params[o_w2 + i * h..o_w2 + (i + 1) * h];
            for j in 0..h {
                h2[j] += a * row[j];
            }
        }
        for x in &mut h2 {
            *x = x.tanh();
        }
        let mut logits = self.params[o_b3..o_b3 + v].to_vec();
        for i in 0..h {
            let a = h2[i];
            let row = &self.params[o_w3 + i * v..o_w3 + (i + 1) * v];
            for j in 0..v {
                logits[j] += a * row[j];
            }
        }
        logits
    }

    /// Exact sequence log-probability, including the terminator factor for
    /// complete sequences. Truncated sequences carry only their body factors.
    pub fn log_prob(&self, x: &TokenSequence) -> Result<f64> {
        x.validate(&self.vocab)?;
        let limit = if x.truncated { self.max_len } else { self.max_len.saturating_sub(1) };
        if x.tokens.len() > limit {
            return Err(Error::MalformedInput(format!(
                "sequence body of {} tokens exceeds model max length {}",
                x.tokens.len(),
                self.max_len
            )));
        }
        let mut lp = 0.0;
        for t in 0..x.tokens.len() {
            let logits = self.logits_at(&x.tokens, t);
            lp += logits[x.tokens[t]] - log_sum_exp(&logits);
        }
        if !x.truncated {
            let logits = self.logits_at(&x.tokens, x.tokens.len());
            lp += logits[self.vocab.end_token()] - log_sum_exp(&logits);
        }
        Ok(lp)
    }

    /// Ancestral sampling; per-step logits are divided by `temperature`
    /// before the softmax. A sequence that never emits the terminator within
    /// `max_len` draws comes back flagged as truncated.
    pub fn sample(&self, n: usize, temperature: f64, rng: &mut ChaCha12Rng) -> Vec<TokenSequence> {
        assert!(n >= 1, "sample count must be >= 1");
        assert!(temperature > 0.0, "temperature must be positive");
        let end = self.vocab.end_token();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut body: Vec<usize> = Vec::new();
            let mut done = false;
            for _ in 0..self.max_len {
                let mut logits = self.logits_at(&body, body.len());
                if temperature != 1.0 {
                    for l in &mut logits {
                        *l /= temperature;
                    }
                }
                let lse = log_sum_exp(&logits);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut tok = logits.len() - 1;
                for (j, &l) in logits.iter().enumerate() {
                    acc += (l - lse).exp();
                    if u < acc {
                        tok = j;
                        break;
                    }
                }
                if tok == end {
                    done = true;
                    break;
                }
                body.push(tok);
            }
            out.push(if done {
                TokenSequence::new(body)
            } else {
                TokenSequence::truncated(body)
            });
        }
        out
    }

    /// Deterministic argmax continuation of `prefix`, stopping at the
    /// terminator or at `max_len` total tokens.
    pub fn greedy_continuation(&self, prefix: &[usize]) -> Vec<usize> {
        let end = self.vocab.end_token();
        let mut body = prefix.to_vec();
        while body.len() < self.max_len {
            let logits = self.logits_at(&body, body.len());
            let tok = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            if tok == end {
                break;
            }
            body.push(tok);
        }
        body[prefix.len()..].to_vec()
    }

    fn rows_for(&self, items: &[(&TokenSequence, f64)]) -> Vec<Row> {
        let mut rows = Vec::new();
        let end = self.vocab.end_token();
        for &(x, w) in items {
            for t in 0..x.tokens.len() {
                let mut active = Vec::with_capacity(self.context);
                self.context_indices(&x.tokens, t, &mut active);
                rows.push(Row {
                    active,
                    target: x.tokens[t],
                    weight: w,
                });
            }
            if !x.truncated {
                let mut active = Vec::with_capacity(self.context);
                self.context_indices(&x.tokens, x.tokens.len(), &mut active);
                rows.push(Row {
                    active,
                    target: end,
                    weight: w,
                });
            }
        }
        rows
    }

    /// Value and gradient of `sum_i w_i * log p(x_i)` with respect to the
    /// flat parameter vector. This one primitive backs MLE fitting and every
    /// score-function estimator in the baselines.
    pub fn weighted_logprob_grad(&self, items: &[(&TokenSequence, f64)]) -> Result<(f64, Vec<f64>)> {
        for (x, _) in items {
            x.validate(&self.vocab)?;
        }
        let rows = self.rows_for(items);
        let v = self.vocab.size();
        let h = self.hidden;
        let (o_w1, o_b1, o_w2, o_b2, o_w3, o_b3) = Self::offsets(v, self.context, h);
        let mut grad = vec![0.0; self.params.len()];
        let mut value = 0.0;

        const CHUNK: usize = 128;
        let mut h1 = vec![0.0; CHUNK * h];
        let mut h2 = vec![0.0; CHUNK * h];
        let mut z3 = vec![0.0; CHUNK * v];
        let mut d3 = vec![0.0; CHUNK * v];
        let mut d2 = vec![0.0; CHUNK * h];
        let mut d1 = vec![0.0; CHUNK * h];

        for chunk in rows.chunks(CHUNK) {
            let b = chunk.len();
            // forward
            for (r, row) in chunk.iter().enumerate() {
                let dst = &mut h1[r * h..(r + 1) * h];
                dst.copy_from_slice(&self.params[o_b1..o_b1 + h]);
                for &idx in &row.active {
                    let wrow = &self.params[o_w1 + idx * h..o_w1 + (idx + 1) * h];
                    for i in 0..h {
                        dst[i] += wrow[i];
                    }
                }
                for x in dst.iter_mut() {
                    *x = x.tanh();
                }
            }
            for r in 0..b {
                h2[r * h..(r + 1) * h].copy_from_slice(&self.params[o_b2..o_b2 + h]);
            }
            matmul_acc(&h1[..b * h], &self.params[o_w2..o_w2 + h * h], &mut h2[..b * h], b, h, h);
            for x in h2[..b * h].iter_mut() {
                *x = x.tanh();
            }
            for r in 0..b {
                z3[r * v..(r + 1) * v].copy_from_slice(&self.params[o_b3..o_b3 + v]);
            }
            matmul_acc(&h2[..b * h], &self.params[o_w3..o_w3 + h * v], &mut z3[..b * v], b, h, v);

            // loss and logit gradients
            for (r, row) in chunk.iter().enumerate() {
                let logits = &z3[r * v..(r + 1) * v];
                let lse = log_sum_exp(logits);
                value += row.weight * (logits[row.target] - lse);
                let drow = &mut d3[r * v..(r + 1) * v];
                for j in 0..v {
                    let p = (logits[j] - lse).exp();
                    drow[j] = row.weight * (((j == row.target) as u8 as f64) - p);
                }
            }

            // backward
            matmul_at_b_acc(&h2[..b * h], &d3[..b * v], &mut grad[o_w3..o_w3 + h * v], b, h, v);
            for r in 0..b {
                for j in 0..v {
                    grad[o_b3 + j] += d3[r * v + j];
                }
            }
            for x in d2[..b * h].iter_mut() {
                *x = 0.0;
            }
            matmul_a_bt_acc(&d3[..b * v], &self.params[o_w3..o_w3 + h * v], &mut d2[..b * h], b, v, h);
            for r in 0..b {
                for i in 0..h {
                    let a = h2[r * h + i];
                    d2[r * h + i] *= 1.0 - a * a;
                }
            }
            matmul_at_b_acc(&h1[..b * h], &d2[..b * h], &mut grad[o_w2..o_w2 + h * h], b, h, h);
            for r in 0..b {
                for i in 0..h {
                    grad[o_b2 + i] += d2[r * h + i];
                }
            }
            for x in d1[..b * h].iter_mut() {
                *x = 0.0;
            }
            // d1 = d2 * W2^T
            for r in 0..b {
                let drow = &d2[r * h..(r + 1) * h];
                let orow = &mut d1[r * h..(r + 1) * h];
                for i in 0..h {
                    let wrow = &self.params[o_w2 + i * h..o_w2 + (i + 1) * h];
                    let mut acc = 0.0;
                    for j in 0..h {
                        acc += drow[j] * wrow[j];
                    }
                    orow[i] = acc;
                }
            }
            for (r, row) in chunk.iter().enumerate() {
                let drow = &mut d1[r * h..(r + 1) * h];
                for i in 0..h {
                    let a = h1[r * h + i];
                    drow[i] *= 1.0 - a * a;
                }
                for &idx in &row.active {
                    let wrow = &mut grad[o_w1 + idx * h..o_w1 + (idx + 1) * h];
                    for i in 0..h {
                        wrow[i] += drow[i];
                    }
                }
                for i in 0..h {
                    grad[o_b1 + i] += drow[i];
                }
            }
        }
        Ok((value, grad))
    }

    /// Minibatch maximum-likelihood training; returns per-epoch mean train
    /// log-likelihood for diagnostics.
    pub fn fit_mle(
        &mut self,
        data: &[TokenSequence],
        epochs: usize,
        lr: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Precondition("fit_mle requires nonempty data".into()));
        }
        if epochs == 0 {
            return Err(Error::Precondition("fit_mle requires epochs >= 1".into()));
        }
        let mut opt = Adam::new(self.params.len());
        let batch = 32.min(data.len()).max(1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            // Fisher-Yates with the caller's rng for determinism
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut total_ll = 0.0;
            for ids in order.chunks(batch) {
                let w = 1.0 / ids.len() as f64;
                let items: Vec<(&TokenSequence, f64)> =
                    ids.iter().map(|&i| (&data[i], w)).collect();
                let (val, grad) = self.weighted_logprob_grad(&items)?;
                total_ll += val * ids.len() as f64;
                opt.step(&mut self.params, &grad, lr);
            }
            history.push(total_ll / data.len() as f64);
        }
        Ok(history)
    }

    pub fn snapshot(&self) -> ParamBlob {
        ParamBlob {
            kind: NEURAL_BLOB_KIND,
            shape: vec![
                self.vocab.size() as u64,
                self.context as u64,
                self.hidden as u64,
                self.max_len as u64,
            ],
            data: self.params.clone(),
        }
    }

    pub fn restore(&mut self, blob: &ParamBlob) -> Result<()> {
        let expect = vec![
            self.vocab.size() as u64,
            self.context as u64,
            self.hidden as u64,
            self.max_len as u64,
        ];
        if blob.kind != NEURAL_BLOB_KIND || blob.shape != expect || blob.data.len() != self.params.len() {
            return Err(Error::BlobMismatch(format!(
                "expected neural shape {:?}, got kind {} shape {:?}",
                expect, blob.kind, blob.shape
            )));
        }
        self.params.copy_from_slice(&blob.data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn vocab2() -> Vocab {
        Vocab::with_end(vec!["a".into()]).unwrap()
    }

    fn vocab3() -> Vocab {
        Vocab::with_end(vec!["a".into(), "b".into()]).unwrap()
    }

    use crate::eval::enumerate_sequences as enumerate_all;

    #[test]
    fn zero_logits_are_uniform() {
        // vocab size 2, all-zero logits: each of the 3 factors is 1/2
        let m = NeuralARModel::zeroed(vocab2(), 3, 8, 16);
        let x = TokenSequence::new(vec![0, 0]); // a a <end> = 3 tokens incl end
        let lp = m.log_prob(&x).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn random_model_normalizes() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = NeuralARModel::new(vocab3(), 3, 4, 24, &mut rng);
        let total: f64 = enumerate_all(m.vocab(), 4)
            .iter()
            .map(|x| m.log_prob(x).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "total mass {total}");
    }

    #[test]
    fn out_of_vocab_is_rejected() {
        let m = NeuralARModel::zeroed(vocab3(), 2, 4, 8);
        assert!(m.log_prob(&TokenSequence::new(vec![9])).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut m = NeuralARModel::new(vocab3(), 2, 5, 10, &mut rng);
        let data = vec![
            TokenSequence::new(vec![0, 1, 0]),
            TokenSequence::new(vec![1]),
            TokenSequence::truncated(vec![0, 0, 1, 1, 0]),
        ];
        let items: Vec<(&TokenSequence, f64)> = data.iter().map(|x| (x, 0.7)).collect();
        let (_, grad) = m.weighted_logprob_grad(&items).unwrap();
        let eps = 1e-6;
        let mut checked = 0;
        for _ in 0..120 {
            let i = rng.gen_range(0..m.n_params());
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let (up, _) = m.weighted_logprob_grad(&items).unwrap();
            m.params[i] = orig - eps;
            let (dn, _) = m.weighted_logprob_grad(&items).unwrap();
            m.params[i] = orig;
            let fd = (up - dn) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (fd - grad[i]).abs() / denom < 1e-4,
                "coord {i}: fd {fd} vs analytic {}",
                grad[i]
            );
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn fit_overfits_single_sequence() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut m = NeuralARModel::new(vocab3(), 3, 6, 32, &mut rng);
        let target = TokenSequence::new(vec![0, 1, 1]);
        let data: Vec<TokenSequence> = std::iter::repeat(target.clone()).take(50).collect();
        m.fit_mle(&data, 200, 1e-2, &mut rng).unwrap();
        let p = m.log_prob(&target).unwrap().exp();
        assert!(p >= 0.9, "p = {p}");
    }

    #[test]
    fn fit_balances_two_sequences() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut m = NeuralARModel::new(vocab3(), 3, 6, 32, &mut rng);
        let a = TokenSequence::new(vec![0, 0]);
        let b = TokenSequence::new(vec![1, 1, 0]);
        let mut data = Vec::new();
        for _ in 0..25 {
            data.push(a.clone());
            data.push(b.clone());
        }
        m.fit_mle(&data, 300, 1e-2, &mut rng).unwrap();
        let ratio = (m.log_prob(&a).unwrap() - m.log_prob(&b).unwrap()).exp();
        assert!((0.8..=1.25).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn fit_loglik_trend_is_nondecreasing_smoothed() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut m = NeuralARModel::new(vocab3(), 2, 6, 24, &mut rng);
        let mut data = Vec::new();
        for _ in 0..20 {
            data.push(TokenSequence::new(vec![0, 1]));
            data.push(TokenSequence::new(vec![1, 0, 0]));
        }
        let hist = m.fit_mle(&data, 60, 3e-3, &mut rng).unwrap();
        let win = 10;
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let first = avg(&hist[..win]);
        let last = avg(&hist[hist.len() - win..]);
        assert!(last >= first, "smoothed LL fell: {first} -> {last}");
    }

    #[test]
    fn snapshot_restore_is_bit_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut m = NeuralARModel::new(vocab3(), 2, 5, 16, &mut rng);
        let blob = m.snapshot();
        let x = TokenSequence::new(vec![0, 1]);
        let before = m.log_prob(&x).unwrap();
        m.fit_mle(&[x.clone()], 5, 1e-2, &mut rng).unwrap();
        assert_ne!(before, m.log_prob(&x).unwrap());
        m.restore(&blob).unwrap();
        assert_eq!(before.to_bits(), m.log_prob(&x).unwrap().to_bits());
    }

    #[test]
    fn restore_rejects_shape_mismatch() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let m = NeuralARModel::new(vocab3(), 2, 5, 16, &mut rng);
        let mut other = NeuralARModel::new(vocab3(), 3, 5, 16, &mut rng);
        assert!(other.restore(&m.snapshot()).is_err());
    }

    #[test]
    fn greedy_matches_tiny_temperature_sampling() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let m = NeuralARModel::new(vocab3(), 2, 6, 16, &mut rng);
        let greedy = m.greedy_continuation(&[]);
        let mut srng = ChaCha12Rng::seed_from_u64(0);
        let drawn = &m.sample(1, 1e-9, &mut srng)[0];
        assert_eq!(drawn.tokens, greedy);
    }

    #[test]
    fn temperature_one_is_plain_sampling() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let m = NeuralARModel::new(vocab3(), 2, 6, 16, &mut rng);
        let mut r1 = ChaCha12Rng::seed_from_u64(5);
        let mut r2 = ChaCha12Rng::seed_from_u64(5);
        assert_eq!(m.sample(20, 1.0, &mut r1), m.sample(20, 1.0, &mut r2));
    }
}
