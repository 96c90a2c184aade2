//! Reward-seeking baselines run under the same metered-oracle discipline as
//! the failure-driven learner: score-function policy gradients (with an
//! optional constant baseline), a trajectory-balance flow objective in its
//! variance-reduced form, and two novelty-bonus explorers (random network
//! distillation and positional pseudo-counts). All of them consume exactly
//! one oracle call per drawn sample per round.

use crate::error::{Error, Result};
use crate::eval::{measure_success_rate, SuccessRateReport};
use crate::model::Model;
use crate::neural::NeuralARModel;
use crate::oracle::RewardOracle;
use crate::seq::TokenSequence;
use crate::tasks::Task;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// One optimization round of any baseline.
#[derive(Debug, Clone)]
pub struct BaselineRecord {
    pub round: usize,
    pub nre_total: u64,
    /// Mean extrinsic reward as observed through the oracle (masked hits
    /// count as zero, exactly as the learner sees them).
    pub mean_reward: f64,
    /// Mean intrinsic bonus before centering; zero for bonus-free methods.
    pub mean_bonus: f64,
    /// Mean log-likelihood the policy assigns its own samples this round.
    pub self_logprob: f64,
    /// Batch estimate of KL(policy || base): mean of logp - logp_base over
    /// the round's own samples.
    pub kl_to_base: f64,
    pub grad_norm: f64,
    /// Balance-objective value for flow-based runs; None elsewhere.
    pub vargrad_loss: Option<f64>,
    pub success_rate: Option<SuccessRateReport>,
    pub terminated: bool,
}

/// One plain stochastic-gradient ascent step on a weighted log-likelihood
/// objective. Returns the gradient's L2 norm. With all weights exactly zero
/// the parameters are untouched bit for bit; there is no optimizer state to
/// drift.
pub fn sgd_weighted_step(
    model: &mut NeuralARModel,
    items: &[(&TokenSequence, f64)],
    lr: f64,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let (_, grad) = model.weighted_logprob_grad(items)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p += lr * g;
        }
    }
    Ok(norm)
}

/// Score-function estimator weights for one REINFORCE step:
/// (1/m)(r_i - b) per sample.
pub fn reinforce_weights(rewards: &[f64], baseline: f64) -> Vec<f64> {
    let m = rewards.len() as f64;
    rewards.iter().map(|&r| (r - baseline) / m).collect()
}

/// One REINFORCE step: ascend (1/m) sum_i (r_i - b) grad log p(x_i).
pub fn reinforce_step(
    model: &mut NeuralARModel,
    samples: &[TokenSequence],
    rewards: &[f64],
    baseline: f64,
    lr: f64,
) -> Result<f64> {
    if samples.len() != rewards.len() {
        return Err(Error::Precondition(
            "reinforce_step: samples and rewards must align".into(),
        ));
    }
    let weights = reinforce_weights(rewards, baseline);
    let items: Vec<(&TokenSequence, f64)> =
        samples.iter().zip(weights).map(|(x, w)| (x, w)).collect();
    sgd_weighted_step(model, &items, lr)
}

#[derive(Debug, Clone)]
pub struct PolicyGradConfig {
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    /// Constant subtracted from every reward. Zero leaves an all-failure
    /// batch with a zero gradient; one actively penalizes whatever was
    /// sampled.
    pub baseline_const: f64,
    /// Penalty on logp_policy - logp_base added to every sample's reward.
    pub kl_coeff: f64,
    pub terminate_on_success: bool,
    pub eval_samples: usize,
}

impl Default for PolicyGradConfig {
    fn default() -> Self {
        Self {
            m: 64,
            steps: 8,
            lr: 1e-2,
            baseline_const: 0.0,
            kl_coeff: 0.0,
            terminate_on_success: true,
            eval_samples: 0,
        }
    }
}

struct RoundIo {
    samples: Vec<TokenSequence>,
    rewards: Vec<f64>,
    mean_reward: f64,
    self_logprob: f64,
    base_logprob: f64,
    terminated: bool,
}

impl RoundIo {
    fn kl_to_base(&self) -> f64 {
        self.self_logprob - self.base_logprob
    }
}

/// Draws a batch, pays for its evaluation, and reports what the learner is
/// allowed to see. `Ok(None)` means the budget ran out before the batch.
fn draw_and_pay(
    policy: &NeuralARModel,
    base: &NeuralARModel,
    oracle: &mut RewardOracle,
    m: usize,
    terminate_on_success: bool,
    rng: &mut ChaCha12Rng,
) -> Result<Option<RoundIo>> {
    let samples = policy.sample(m, 1.0, rng);
    let hits_before = oracle.success_log().len();
    let observed = match oracle.evaluate_batch(&samples) {
        Ok(o) => o,
        Err(Error::Budget { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let rewards: Vec<f64> = observed.iter().map(|&r| r as f64).collect();
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mean_lp = |model: &NeuralARModel| -> Result<f64> {
        Ok(samples
            .iter()
            .map(|x| model.log_prob(x))
            .sum::<Result<f64>>()?
            / samples.len() as f64)
    };
    let terminated = terminate_on_success && oracle.success_log().len() > hits_before;
    Ok(Some(RoundIo {
        self_logprob: mean_lp(policy)?,
        base_logprob: mean_lp(base)?,
        samples,
        rewards,
        mean_reward,
        terminated,
    }))
}

fn baseline_record(
    round: usize,
    oracle: &RewardOracle,
    io: &RoundIo,
    mean_bonus: f64,
    grad_norm: f64,
    vargrad_loss: Option<f64>,
    policy: &NeuralARModel,
    task: &dyn Task,
    eval_samples: usize,
    rng: &mut ChaCha12Rng,
) -> BaselineRecord {
    BaselineRecord {
        round,
        nre_total: oracle.nre_count(),
        mean_reward: io.mean_reward,
        mean_bonus,
        self_logprob: io.self_logprob,
        kl_to_base: io.kl_to_base(),
        grad_norm,
        vargrad_loss,
        success_rate: measure_success_rate(
            &Model::Neural(policy.clone()),
            task,
            eval_samples,
            rng,
        ),
        terminated: io.terminated,
    }
}

/// Plain REINFORCE. With `baseline_const > 0` this is "negative"
/// reinforcement: every failed sample is pushed down.
pub fn run_reinforce(
    base: &NeuralARModel,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &PolicyGradConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(NeuralARModel, Vec<BaselineRecord>)> {
    let mut policy = base.clone();
    let mut records = Vec::new();
    for round in 0..cfg.steps {
        oracle.set_round(round);
        let io = match draw_and_pay(&policy, base, oracle, cfg.m, cfg.terminate_on_success, rng)?
        {
            Some(io) => io,
            None => break,
        };
        let grad_norm = if cfg.kl_coeff == 0.0 {
            reinforce_step(&mut policy, &io.samples, &io.rewards, cfg.baseline_const, cfg.lr)?
        } else {
            let mut shaped = Vec::with_capacity(io.samples.len());
            for (x, &r) in io.samples.iter().zip(&io.rewards) {
                let kl_term = policy.log_prob(x)? - base.log_prob(x)?;
                shaped.push(r - cfg.kl_coeff * kl_term);
            }
            reinforce_step(&mut policy, &io.samples, &shaped, cfg.baseline_const, cfg.lr)?
        };
        records.push(baseline_record(
            round,
            oracle,
            &io,
            0.0,
            grad_norm,
            None,
            &policy,
            task,
            cfg.eval_samples,
            rng,
        ));
        if io.terminated {
            break;
        }
    }
    Ok((policy, records))
}

/// One step of a failure-penalizing run.
#[derive(Debug, Clone)]
pub struct CollapseStep {
    pub step: usize,
    /// Mean log-likelihood the *frozen base* model assigns the current
    /// policy's samples; a falling value shows the policy drifting off the
    /// base distribution with nothing to steer it.
    pub mean_base_logprob: f64,
    /// Batch estimate of KL(policy || base); exactly 0 at step 0.
    pub kl_to_base: f64,
    pub grad_norm: f64,
}

/// Runs REINFORCE with a constant baseline of 1 on all-failure batches and
/// records the collapse diagnostics. The expected gradient is zero, yet the
/// empirical gradients are not, and the policy walks away from the base.
pub fn negative_rl_collapse_run(
    base: &NeuralARModel,
    oracle: &mut RewardOracle,
    cfg: &PolicyGradConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<CollapseStep>> {
    let mut policy = base.clone();
    let mut steps = Vec::new();
    for step in 0..cfg.steps {
        oracle.set_round(step);
        let samples = policy.sample(cfg.m, 1.0, rng);
        let observed = match oracle.evaluate_batch(&samples) {
            Ok(o) => o,
            Err(Error::Budget { .. }) => break,
            Err(e) => return Err(e),
        };
        let rewards: Vec<f64> = observed.iter().map(|&r| r as f64).collect();
        let mut base_lp = 0.0;
        let mut self_lp = 0.0;
        for x in &samples {
            base_lp += base.log_prob(x)?;
            self_lp += policy.log_prob(x)?;
        }
        base_lp /= samples.len() as f64;
        self_lp /= samples.len() as f64;
        let grad_norm =
            reinforce_step(&mut policy, &samples, &rewards, cfg.baseline_const, cfg.lr)?;
        steps.push(CollapseStep {
            step,
            mean_base_logprob: base_lp,
            kl_to_base: self_lp - base_lp,
            grad_norm,
        });
    }
    Ok(steps)
}

/// Trajectory-balance loss (1/m) sum_i (log p_i - log eps + log Z)^2 for an
/// all-failure batch, where eps is the reward floor.
pub fn tb_loss(logps: &[f64], epsilon: f64, logz: f64) -> f64 {
    logps
        .iter()
        .map(|p| (p - epsilon.ln() + logz).powi(2))
        .sum::<f64>()
        / logps.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

/// The balance loss at its optimal log Z = log eps - mean(logps): the
/// population variance of the log-likelihoods themselves.
pub fn tb_vargrad_loss(logps: &[f64]) -> f64 {
    population_variance(logps)
}

#[derive(Debug, Clone)]
pub struct GFlowNetConfig {
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    /// Floor added to the binary reward before taking logs; with an
    /// all-failure batch the log-reward is the constant log(epsilon).
    pub epsilon: f64,
    /// Optimize an explicit scalar log Z jointly instead of substituting
    /// its per-batch closed-form optimum.
    pub learn_logz: bool,
    pub terminate_on_success: bool,
    pub eval_samples: usize,
}

impl Default for GFlowNetConfig {
    fn default() -> Self {
        Self {
            m: 64,
            steps: 8,
            lr: 1e-2,
            epsilon: 1e-4,
            learn_logz: false,
            terminate_on_success: true,
            eval_samples: 0,
        }
    }
}

/// Flow matching on terminal rewards. Descends the balance loss on
/// on-policy batches; with all-zero rewards this only shrinks the variance
/// of the policy's own log-likelihoods, so there is no pressure toward
/// reward.
pub fn run_gflownet(
    base: &NeuralARModel,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &GFlowNetConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(NeuralARModel, Vec<BaselineRecord>)> {
    if cfg.epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let mut policy = base.clone();
    let mut logz = 0.0f64;
    let mut records = Vec::new();
    for round in 0..cfg.steps {
        oracle.set_round(round);
        let io = match draw_and_pay(&policy, base, oracle, cfg.m, cfg.terminate_on_success, rng)?
        {
            Some(io) => io,
            None => break,
        };
        let m = io.samples.len() as f64;
        // Residuals d_i = log p_i - log(r_i + eps).
        let d: Vec<f64> = io
            .samples
            .iter()
            .zip(&io.rewards)
            .map(|(x, &r)| policy.log_prob(x).map(|p| p - (r + cfg.epsilon).ln()))
            .collect::<Result<_>>()?;
        let loss;
        let items: Vec<(&TokenSequence, f64)> = if cfg.learn_logz {
            loss = d.iter().map(|di| (di + logz).powi(2)).sum::<f64>() / m;
            let dz = 2.0 * d.iter().map(|di| di + logz).sum::<f64>() / m;
            let weights: Vec<f64> = d.iter().map(|di| -2.0 * (di + logz) / m).collect();
            logz -= cfg.lr * dz;
            io.samples.iter().zip(weights).map(|(x, w)| (x, w)).collect()
        } else {
            loss = population_variance(&d);
            let mean = d.iter().sum::<f64>() / m;
            io.samples
                .iter()
                .zip(&d)
                .map(|(x, &di)| (x, -2.0 * (di - mean) / m))
                .collect()
        };
        let grad_norm = sgd_weighted_step(&mut policy, &items, cfg.lr)?;
        records.push(baseline_record(
            round,
            oracle,
            &io,
            0.0,
            grad_norm,
            Some(loss),
            &policy,
            task,
            cfg.eval_samples,
            rng,
        ));
        if io.terminated {
            break;
        }
    }
    Ok((policy, records))
}

/// Fixed sequence featurization shared by the novelty bonuses: normalized
/// token counts plus one-hot encodings of the first `prefix_k` positions.
pub fn novelty_features(x: &TokenSequence, vocab_size: usize, prefix_k: usize) -> Vec<f64> {
    let mut f = vec![0.0; vocab_size * (1 + prefix_k)];
    let len = x.tokens.len().max(1) as f64;
    for &t in &x.tokens {
        f[t] += 1.0 / len;
    }
    for (i, &t) in x.tokens.iter().take(prefix_k).enumerate() {
        f[vocab_size * (1 + i) + t] = 1.0;
    }
    f
}

/// Random network distillation state: a frozen random embedding and a
/// trained predictor; the prediction error is the novelty bonus.
pub struct RndState {
    target: Vec<f64>,    // dim x fdim, frozen at construction
    predictor: Vec<f64>, // dim x fdim, trained
    dim: usize,
    fdim: usize,
}

impl RndState {
    pub fn new(vocab_size: usize, prefix_k: usize, dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let fdim = vocab_size * (1 + prefix_k);
        let scale = (1.0 / fdim as f64).sqrt();
        let target = (0..dim * fdim).map(|_| rng.gen_range(-scale..scale)).collect();
        Self {
            target,
            predictor: vec![0.0; dim * fdim],
            dim,
            fdim,
        }
    }

    fn embed(w: &[f64], f: &[f64], dim: usize, fdim: usize, squash: bool) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &w[d * fdim..(d + 1) * fdim];
            *o = row.iter().zip(f).map(|(a, b)| a * b).sum();
            if squash {
                *o = o.tanh();
            }
        }
        out
    }

    /// Squared prediction error of the trainable net against the frozen one.
    pub fn bonus(&self, features: &[f64]) -> f64 {
        let t = Self::embed(&self.target, features, self.dim, self.fdim, true);
        let p = Self::embed(&self.predictor, features, self.dim, self.fdim, false);
        t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum()
    }

    /// One gradient step shrinking the prediction error on `features`.
    pub fn train(&mut self, features: &[f64], lr: f64) {
        let t = Self::embed(&self.target, features, self.dim, self.fdim, true);
        let p = Self::embed(&self.predictor, features, self.dim, self.fdim, false);
        for d in 0..self.dim {
            let e = 2.0 * (p[d] - t[d]);
            let row = &mut self.predictor[d * self.fdim..(d + 1) * self.fdim];
            for (w, &f) in row.iter_mut().zip(features) {
                *w -= lr * e * f;
            }
        }
    }

    /// One pass over a batch, each sample counted exactly once.
    pub fn train_batch(&mut self, features: &[Vec<f64>], lr: f64) {
        let per = lr / features.len() as f64;
        for f in features {
            self.train(f, per);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RndConfig {
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    pub predictor_lr: f64,
    pub intrinsic_scale: f64,
    /// Penalty on log p_policy(x) - log p_base(x), anchoring the policy.
    pub kl_coeff: f64,
    pub embed_dim: usize,
    pub prefix_k: usize,
    /// Predictor gradient passes per evaluated batch.
    pub updates_per_batch: usize,
    pub terminate_on_success: bool,
    pub eval_samples: usize,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self {
            m: 64,
            steps: 8,
            lr: 1e-2,
            predictor_lr: 1e-2,
            intrinsic_scale: 1.0,
            kl_coeff: 0.01,
            embed_dim: 16,
            prefix_k: 4,
            updates_per_batch: 1,
            terminate_on_success: true,
            eval_samples: 0,
        }
    }
}

fn shaped_policy_step(
    policy: &mut NeuralARModel,
    base: &NeuralARModel,
    io: &RoundIo,
    bonuses: &[f64],
    kl_coeff: f64,
    lr: f64,
) -> Result<f64> {
    let m = io.samples.len() as f64;
    let mean_b = bonuses.iter().sum::<f64>() / m;
    let mut shaped = Vec::with_capacity(io.samples.len());
    for ((x, &r), &b) in io.samples.iter().zip(&io.rewards).zip(bonuses) {
        let kl_term = policy.log_prob(x)? - base.log_prob(x)?;
        shaped.push(r + (b - mean_b) - kl_coeff * kl_term);
    }
    reinforce_step(policy, &io.samples, &shaped, 0.0, lr)
}

/// Random network distillation: REINFORCE on centered prediction-error
/// bonuses plus the (zero) extrinsic reward, anchored to the base policy.
pub fn run_rnd(
    base: &NeuralARModel,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &RndConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(NeuralARModel, Vec<BaselineRecord>)> {
    let v = task.vocab().size();
    let mut rnd = RndState::new(v, cfg.prefix_k, cfg.embed_dim, rng);
    let mut policy = base.clone();
    let mut records = Vec::new();
    for round in 0..cfg.steps {
        oracle.set_round(round);
        let io = match draw_and_pay(&policy, base, oracle, cfg.m, cfg.terminate_on_success, rng)?
        {
            Some(io) => io,
            None => break,
        };
        let feats: Vec<Vec<f64>> = io
            .samples
            .iter()
            .map(|x| novelty_features(x, v, cfg.prefix_k))
            .collect();
        let bonuses: Vec<f64> = feats
            .iter()
            .map(|f| cfg.intrinsic_scale * rnd.bonus(f))
            .collect();
        let grad_norm =
            shaped_policy_step(&mut policy, base, &io, &bonuses, cfg.kl_coeff, cfg.lr)?;
        for _ in 0..cfg.updates_per_batch {
            rnd.train_batch(&feats, cfg.predictor_lr);
        }
        let mean_bonus = bonuses.iter().sum::<f64>() / bonuses.len() as f64;
        records.push(baseline_record(
            round,
            oracle,
            &io,
            mean_bonus,
            grad_norm,
            None,
            &policy,
            task,
            cfg.eval_samples,
            rng,
        ));
        if io.terminated {
            break;
        }
    }
    Ok((policy, records))
}

/// Per-position categorical visit counts with add-one smoothing; the density
/// of a sequence is the product over positions (terminator slot included).
pub struct PositionalCounts {
    counts: Vec<f64>, // (max_len positions) x (vocab_size) table
    seen: f64,
    vocab_size: usize,
    max_len: usize,
}

impl PositionalCounts {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        Self {
            counts: vec![0.0; max_len * vocab_size],
            seen: 0.0,
            vocab_size,
            max_len,
        }
    }

    pub fn seen(&self) -> f64 {
        self.seen
    }

    fn slots(&self, x: &TokenSequence) -> Vec<(usize, usize)> {
        let mut s: Vec<(usize, usize)> = x
            .tokens
            .iter()
            .take(self.max_len)
            .enumerate()
            .map(|(t, &v)| (t, v))
            .collect();
        if !x.truncated && x.tokens.len() < self.max_len {
            s.push((x.tokens.len(), self.vocab_size - 1)); // terminator slot
        }
        s
    }

    pub fn log_density(&self, x: &TokenSequence) -> f64 {
        self.slots(x)
            .into_iter()
            .map(|(t, v)| {
                let c = self.counts[t * self.vocab_size + v];
                ((c + 1.0) / (self.seen + self.vocab_size as f64)).ln()
            })
            .sum()
    }

    pub fn add(&mut self, x: &TokenSequence) {
        for (t, v) in self.slots(x) {
            self.counts[t * self.vocab_size + v] += 1.0;
        }
        self.seen += 1.0;
    }

    /// Log-density gain from recording `x` exactly once.
    pub fn prediction_gain(&mut self, x: &TokenSequence) -> f64 {
        let before = self.log_density(x);
        self.add(x);
        self.log_density(x) - before
    }
}

/// Bonus functional: c * max(PG, 0)^(1/2) * n_seen^(-decay).
pub fn pseudo_count_bonus(pg: f64, scale: f64, decay: f64, n_seen: f64) -> f64 {
    scale * pg.max(0.0).sqrt() * n_seen.max(1.0).powf(-decay)
}

#[derive(Debug, Clone)]
pub struct PseudoCountConfig {
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    pub bonus_scale: f64,
    pub kl_coeff: f64,
    /// Bonus decay exponent on the number of sequences seen so far.
    pub decay: f64,
    pub terminate_on_success: bool,
    pub eval_samples: usize,
}

impl Default for PseudoCountConfig {
    fn default() -> Self {
        Self {
            m: 64,
            steps: 8,
            lr: 1e-2,
            bonus_scale: 1.0,
            kl_coeff: 0.05,
            decay: 0.5,
            terminate_on_success: true,
            eval_samples: 0,
        }
    }
}

/// Count-based exploration: REINFORCE on centered prediction-gain bonuses,
/// anchored to the base policy. The density model is updated exactly once
/// per observed sample, in arrival order.
pub fn run_pseudo_count(
    base: &NeuralARModel,
    task: &dyn Task,
    oracle: &mut RewardOracle,
    cfg: &PseudoCountConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(NeuralARModel, Vec<BaselineRecord>)> {
    let mut counts = PositionalCounts::new(task.vocab().size(), task.max_len());
    let mut policy = base.clone();
    let mut records = Vec::new();
    for round in 0..cfg.steps {
        oracle.set_round(round);
        let io = match draw_and_pay(&policy, base, oracle, cfg.m, cfg.terminate_on_success, rng)?
        {
            Some(io) => io,
            None => break,
        };
        let bonuses: Vec<f64> = io
            .samples
            .iter()
            .map(|x| {
                let pg = counts.prediction_gain(x);
                pseudo_count_bonus(pg, cfg.bonus_scale, cfg.decay, counts.seen())
            })
            .collect();
        let grad_norm =
            shaped_policy_step(&mut policy, base, &io, &bonuses, cfg.kl_coeff, cfg.lr)?;
        let mean_bonus = bonuses.iter().sum::<f64>() / bonuses.len() as f64;
        records.push(baseline_record(
            round,
            oracle,
            &io,
            mean_bonus,
            grad_norm,
            None,
            &policy,
            task,
            cfg.eval_samples,
            rng,
        ));
        if io.terminated {
            break;
        }
    }
    Ok((policy, records))
}
