//! Experiment harness: builds a pretrained base model for a task, runs one
//! method against a metered oracle, and reduces every method's round records
//! to a common row format so runs are directly comparable. All success-rate
//! measurement here is instrumentation and never touches the oracle budget.

use crate::banel::{run_banel, run_banel_no_distill, BanelConfig, RoundRecord};
use crate::baselines::{
    run_gflownet, run_pseudo_count, run_reinforce, run_rnd, BaselineRecord, GFlowNetConfig,
    PolicyGradConfig, PseudoCountConfig, RndConfig,
};
use crate::config::get_parsed;
use crate::error::{Error, Result};
use crate::eval::{measure_success_rate, SuccessRateReport};
use crate::model::Model;
use crate::neural::NeuralARModel;
use crate::oracle::RewardOracle;
use crate::tasks::{make_task, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Banel,
    BanelNoDistill,
    Reinforce,
    NegativeRl,
    Gflownet,
    Rnd,
    PseudoCount,
}

pub const ALL_METHODS: [Method; 7] = [
    Method::Banel,
    Method::BanelNoDistill,
    Method::Reinforce,
    Method::NegativeRl,
    Method::Gflownet,
    Method::Rnd,
    Method::PseudoCount,
];

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Banel => "banel",
            Method::BanelNoDistill => "banel_no_distill",
            Method::Reinforce => "reinforce",
            Method::NegativeRl => "negative_rl",
            Method::Gflownet => "gflownet",
            Method::Rnd => "rnd",
            Method::PseudoCount => "pseudo_count",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        ALL_METHODS
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One experiment: a task, a method, a seed, and a hard oracle budget.
/// `overrides` are flat `key = value` settings layered over the task preset.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub budget: u64,
    pub overrides: HashMap<String, String>,
}

impl ExperimentSpec {
    pub fn new(task: &str, method: Method, seed: u64, budget: u64) -> Self {
        Self {
            task: task.into(),
            method,
            seed,
            budget,
            overrides: HashMap::new(),
        }
    }

    pub fn with_override(mut self, key: &str, value: &str) -> Self {
        self.overrides.insert(key.into(), value.into());
        self
    }
}

/// One round of any method, reduced to the comparable core.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub round: usize,
    pub nre_total: u64,
    pub success_rate: Option<SuccessRateReport>,
    /// Running maximum of the measured success rate up to this round.
    pub cum_best: f64,
    pub terminated: bool,
    /// True when the method stopped itself here for a structural reason
    /// (for example rejection-sampling inefficiency).
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub budget: u64,
    pub prior_success: Option<SuccessRateReport>,
    pub rows: Vec<RunRow>,
    pub nre_spent: u64,
    /// NRE counter value at the first logged reward-one evaluation.
    pub first_success_nre: Option<u64>,
    pub successes_seen: usize,
}

impl RunResult {
    pub fn best_success_rate(&self) -> f64 {
        self.rows.last().map(|r| r.cum_best).unwrap_or(0.0)
    }

    pub fn final_success_rate(&self) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| r.success_rate.as_ref().map(|s| s.estimate))
    }

    /// Best measured success rate over the prior's, when both exist.
    pub fn improvement_factor(&self) -> Option<f64> {
        let prior = self.prior_success.as_ref()?.estimate;
        if prior <= 0.0 {
            return None;
        }
        Some(self.best_success_rate() / prior)
    }
}

/// Task-specific base-model and method presets; every value can be
/// overridden through `ExperimentSpec::overrides`.
pub struct TaskPreset {
    pub context: usize,
    pub hidden: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub m: usize,
    pub f: f64,
    pub epochs_theta: usize,
    pub epochs_phi: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub eval_samples: usize,
    pub policy_lr: f64,
}

pub fn task_preset(task: &str) -> TaskPreset {
    match task {
        "pattern_shift" => TaskPreset {
            context: 9,
            hidden: 48,
            pretrain_epochs: 4,
            pretrain_lr: 3e-3,
            m: 100,
            f: 5.0,
            epochs_theta: 12,
            epochs_phi: 30,
            lr_theta: 3e-3,
            lr_phi: 3e-3,
            eval_samples: 0,
            policy_lr: 1e-2,
        },
        "addition_attack" | "addition_attack_nolz" => TaskPreset {
            context: 10,
            hidden: 64,
            pretrain_epochs: 100,
            pretrain_lr: 2e-3,
            m: 100,
            f: 10.0,
            epochs_theta: 10,
            epochs_phi: 30,
            lr_theta: 2e-3,
            lr_phi: 2e-3,
            eval_samples: 2000,
            policy_lr: 1e-2,
        },
        // toy1d and small synthetic spaces
        _ => TaskPreset {
            context: 2,
            hidden: 32,
            pretrain_epochs: 40,
            pretrain_lr: 1e-2,
            m: 64,
            f: 2.0,
            epochs_theta: 30,
            epochs_phi: 60,
            lr_theta: 1e-2,
            lr_phi: 1e-2,
            eval_samples: 0,
            policy_lr: 1e-2,
        },
    }
}

fn apply_preset_overrides(p: &mut TaskPreset, kv: &HashMap<String, String>) -> Result<()> {
    if let Some(v) = get_parsed(kv, "context")? {
        p.context = v;
    }
    if let Some(v) = get_parsed(kv, "hidden")? {
        p.hidden = v;
    }
    if let Some(v) = get_parsed(kv, "pretrain_epochs")? {
        p.pretrain_epochs = v;
    }
    if let Some(v) = get_parsed(kv, "pretrain_lr")? {
        p.pretrain_lr = v;
    }
    if let Some(v) = get_parsed(kv, "m")? {
        p.m = v;
    }
    if let Some(v) = get_parsed(kv, "f")? {
        p.f = v;
    }
    if let Some(v) = get_parsed(kv, "epochs_theta")? {
        p.epochs_theta = v;
    }
    if let Some(v) = get_parsed(kv, "epochs_phi")? {
        p.epochs_phi = v;
    }
    if let Some(v) = get_parsed(kv, "lr_theta")? {
        p.lr_theta = v;
    }
    if let Some(v) = get_parsed(kv, "lr_phi")? {
        p.lr_phi = v;
    }
    if let Some(v) = get_parsed(kv, "eval_samples")? {
        p.eval_samples = v;
    }
    if let Some(v) = get_parsed(kv, "policy_lr")? {
        p.policy_lr = v;
    }
    Ok(())
}

/// Builds and pretrains the base model for a task, deterministically in the
/// seed.
pub fn build_base_model(
    task: &dyn Task,
    preset: &TaskPreset,
    seed: u64,
) -> Result<NeuralARModel> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xba5e);
    let mut model = NeuralARModel::new(
        task.vocab().clone(),
        preset.context,
        task.max_len(),
        preset.hidden,
        &mut rng,
    );
    let corpus = task.pretrain_corpus();
    if !corpus.is_empty() && preset.pretrain_epochs > 0 {
        model.fit_mle(corpus, preset.pretrain_epochs, preset.pretrain_lr, &mut rng)?;
    }
    Ok(model)
}

fn rows_from_banel(records: &[RoundRecord]) -> Vec<RunRow> {
    let mut best: f64 = 0.0;
    records
        .iter()
        .map(|r| {
            if let Some(s) = &r.success_rate {
                best = best.max(s.estimate);
            }
            RunRow {
                round: r.round,
                nre_total: r.nre_total,
                success_rate: r.success_rate.clone(),
                cum_best: best,
                terminated: r.terminated,
                aborted: r.aborted_inefficient,
            }
        })
        .collect()
}

fn rows_from_baseline(records: &[BaselineRecord]) -> Vec<RunRow> {
    let mut best: f64 = 0.0;
    records
        .iter()
        .map(|r| {
            if let Some(s) = &r.success_rate {
                best = best.max(s.estimate);
            }
            RunRow {
                round: r.round,
                nre_total: r.nre_total,
                success_rate: r.success_rate.clone(),
                cum_best: best,
                terminated: r.terminated,
                aborted: false,
            }
        })
        .collect()
}

/// Override keys consumed by the learner config rather than the preset.
const BANEL_KEYS: &[&str] = &[
    "m",
    "f",
    "n_rounds",
    "epochs_theta",
    "epochs_phi",
    "lr_theta",
    "lr_phi",
    "reset_each_round",
    "terminate_on_success",
    "temperature",
    "length_normalize",
    "rank_with_current",
    "rejection_cap",
    "fresh_distill_draws",
    "distill_draws",
    "eval_samples",
    "neg_family",
    "neg_context",
    "neg_hidden",
    "neg_init_base",
];

const PRESET_KEYS: &[&str] = &[
    "context",
    "hidden",
    "pretrain_epochs",
    "pretrain_lr",
    "m",
    "f",
    "epochs_theta",
    "epochs_phi",
    "lr_theta",
    "lr_phi",
    "eval_samples",
    "policy_lr",
];

fn validate_override_keys(kv: &HashMap<String, String>) -> Result<()> {
    for k in kv.keys() {
        if !BANEL_KEYS.contains(&k.as_str()) && !PRESET_KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown override key {k:?}")));
        }
    }
    Ok(())
}

/// Runs one experiment end to end: task construction, base pretraining, a
/// method under a hard oracle budget, and per-round measurement.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    validate_override_keys(&spec.overrides)?;
    let task = make_task(&spec.task, spec.seed)?;
    let mut preset = task_preset(&spec.task);
    apply_preset_overrides(&mut preset, &spec.overrides)?;
    let base = build_base_model(task.as_ref(), &preset, spec.seed)?;

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let prior_success = measure_success_rate(
        &Model::Neural(base.clone()),
        task.as_ref(),
        preset.eval_samples.max(2000),
        &mut rng,
    );

    // Budget must cover at least the first full batch.
    if spec.budget < preset.m as u64 {
        return Err(Error::Config(format!(
            "budget {} cannot afford one batch of m = {}",
            spec.budget, preset.m
        )));
    }
    let n_rounds = (spec.budget / preset.m as u64) as usize;
    let mut oracle = RewardOracle::new(task.as_ref(), spec.budget).with_masking(true);
    let mut run_rng = ChaCha12Rng::seed_from_u64(spec.seed ^ 0x2b4e);

    let rows = match spec.method {
        Method::Banel | Method::BanelNoDistill => {
            let mut cfg = BanelConfig {
                m: preset.m,
                f: preset.f,
                n_rounds,
                epochs_theta: preset.epochs_theta,
                epochs_phi: preset.epochs_phi,
                lr_theta: preset.lr_theta,
                lr_phi: preset.lr_phi,
                eval_samples: preset.eval_samples,
                // The oracle masks rewards, so runs always use the full
                // budget; early exit would give BaNEL fewer evaluations
                // than the baselines it is compared with.
                terminate_on_success: false,
                ..Default::default()
            };
            let banel_kv: HashMap<String, String> = spec
                .overrides
                .iter()
                .filter(|(k, _)| BANEL_KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            cfg.apply_kv(&banel_kv)?;
            let base_model = Model::Neural(base.clone());
            if spec.method == Method::Banel {
                let (_, records) =
                    run_banel(&base_model, task.as_ref(), &mut oracle, &cfg, &mut run_rng)?;
                rows_from_banel(&records)
            } else {
                let (_, records) = run_banel_no_distill(
                    &base_model,
                    task.as_ref(),
                    &mut oracle,
                    &cfg,
                    &mut run_rng,
                )?;
                rows_from_banel(&records)
            }
        }
        Method::Reinforce | Method::NegativeRl => {
            let cfg = PolicyGradConfig {
                m: preset.m,
                steps: n_rounds,
                lr: preset.policy_lr,
                baseline_const: if spec.method == Method::NegativeRl {
                    1.0
                } else {
                    0.0
                },
                eval_samples: preset.eval_samples,
                ..Default::default()
            };
            let (_, records) =
                run_reinforce(&base, task.as_ref(), &mut oracle, &cfg, &mut run_rng)?;
            rows_from_baseline(&records)
        }
        Method::Gflownet => {
            let cfg = GFlowNetConfig {
                m: preset.m,
                steps: n_rounds,
                lr: preset.policy_lr,
                eval_samples: preset.eval_samples,
                ..Default::default()
            };
            let (_, records) =
                run_gflownet(&base, task.as_ref(), &mut oracle, &cfg, &mut run_rng)?;
            rows_from_baseline(&records)
        }
        Method::Rnd => {
            let cfg = RndConfig {
                m: preset.m,
                steps: n_rounds,
                lr: preset.policy_lr,
                eval_samples: preset.eval_samples,
                ..Default::default()
            };
            let (_, records) = run_rnd(&base, task.as_ref(), &mut oracle, &cfg, &mut run_rng)?;
            rows_from_baseline(&records)
        }
        Method::PseudoCount => {
            let cfg = PseudoCountConfig {
                m: preset.m,
                steps: n_rounds,
                lr: preset.policy_lr,
                eval_samples: preset.eval_samples,
                ..Default::default()
            };
            let (_, records) =
                run_pseudo_count(&base, task.as_ref(), &mut oracle, &cfg, &mut run_rng)?;
            rows_from_baseline(&records)
        }
    };

    debug_assert!(oracle.nre_count() <= spec.budget);
    Ok(RunResult {
        task: spec.task.clone(),
        method: spec.method,
        seed: spec.seed,
        budget: spec.budget,
        prior_success,
        rows,
        nre_spent: oracle.nre_count(),
        first_success_nre: oracle.first_success().map(|h| h.nre_at_hit),
        successes_seen: oracle.success_log().len(),
    })
}

/// Several methods on the same task, seeds, and budget; parity of oracle
/// spending is checked, not assumed.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub task: String,
    pub budget: u64,
    pub runs: Vec<RunResult>,
}

impl ComparisonReport {
    pub fn runs_for(&self, method: Method) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.method == method)
    }

    pub fn mean_best(&self, method: Method) -> f64 {
        let v: Vec<f64> = self.runs_for(method).map(|r| r.best_success_rate()).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_prior(&self) -> f64 {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.prior_success.as_ref().map(|s| s.estimate))
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Every run stayed within budget and no method outspent another by more
    /// than one batch (methods stop on success, so exact parity would be too
    /// strong).
    pub fn verify_budget_parity(&self, batch: u64) -> Result<()> {
        for r in &self.runs {
            if r.nre_spent > self.budget {
                return Err(Error::Precondition(format!(
                    "{} seed {} spent {} of {}",
                    r.method, r.seed, r.nre_spent, self.budget
                )));
            }
            let aborted = r.rows.iter().any(|row| row.aborted);
            if r.successes_seen == 0 && !aborted && self.budget - r.nre_spent >= batch {
                return Err(Error::Precondition(format!(
                    "{} seed {} left {} NREs unspent without terminating",
                    r.method,
                    r.seed,
                    self.budget - r.nre_spent
                )));
            }
        }
        Ok(())
    }
}

pub fn compare(
    task: &str,
    methods: &[Method],
    seeds: &[u64],
    budget: u64,
    overrides: &HashMap<String, String>,
) -> Result<ComparisonReport> {
    let mut runs = Vec::new();
    for &method in methods {
        for &seed in seeds {
            let mut spec = ExperimentSpec::new(task, method, seed, budget);
            spec.overrides = overrides.clone();
            runs.push(run_experiment(&spec)?);
        }
    }
    Ok(ComparisonReport {
        task: task.into(),
        budget,
        runs,
    })
}

/// Writes per-round rows for any set of runs in one flat CSV.
pub fn write_comparison_csv<W: Write>(mut w: W, runs: &[RunResult]) -> Result<()> {
    writeln!(
        w,
        "method,seed,round,nre_total,sr_estimate,sr_lo,sr_hi,cum_best,terminated"
    )?;
    for run in runs {
        for row in &run.rows {
            let (sr, lo, hi) = match &row.success_rate {
                Some(s) => (s.estimate, s.ci_low, s.ci_high),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                run.method, run.seed, row.round, row.nre_total, sr, lo, hi, row.cum_best,
                row.terminated
            )?;
        }
    }
    Ok(())
}

/// Long-format plotting data: one line per (method, seed, round).
pub fn emit_plot_data<W: Write>(mut w: W, runs: &[RunResult]) -> Result<()> {
    writeln!(w, "method,seed,nre,sr,cum_best")?;
    for run in runs {
        for row in &run.rows {
            let sr = row
                .success_rate
                .as_ref()
                .map(|s| s.estimate)
                .unwrap_or(f64::NAN);
            writeln!(
                w,
                "{},{},{},{},{}",
                run.method, run.seed, row.nre_total, sr, row.cum_best
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: usize,
    pub seed: u64,
    pub best_success_rate: f64,
    pub improvement_factor: Option<f64>,
}

/// Sweeps one integer parameter of the learner (for example `epochs_phi`)
/// across values and seeds at a fixed budget.
pub fn scaling_sweep(
    task: &str,
    param: &str,
    values: &[usize],
    seeds: &[u64],
    budget: u64,
    overrides: &HashMap<String, String>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut spec = ExperimentSpec::new(task, Method::Banel, seed, budget);
            spec.overrides = overrides.clone();
            spec.overrides.insert(param.into(), value.to_string());
            let run = run_experiment(&spec)?;
            out.push(SweepPoint {
                value,
                seed,
                best_success_rate: run.best_success_rate(),
                improvement_factor: run.improvement_factor(),
            });
        }
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(mut w: W, param: &str, points: &[SweepPoint]) -> Result<()> {
    writeln!(w, "{param},seed,best_sr,improvement")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{}",
            p.value,
            p.seed,
            p.best_success_rate,
            p.improvement_factor.unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in ALL_METHODS {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::parse("nope").is_err());
    }

    #[test]
    fn presets_accept_overrides() {
        let mut p = task_preset("toy1d");
        let mut kv = HashMap::new();
        kv.insert("m".to_string(), "12".to_string());
        kv.insert("epochs_phi".to_string(), "7".to_string());
        apply_preset_overrides(&mut p, &kv).unwrap();
        assert_eq!(p.m, 12);
        assert_eq!(p.epochs_phi, 7);
        kv.insert("m".to_string(), "not a number".to_string());
        assert!(apply_preset_overrides(&mut p, &kv).is_err());
    }

    #[test]
    fn rejects_budget_below_one_batch() {
        let spec = ExperimentSpec::new("toy1d", Method::Banel, 0, 3);
        assert!(matches!(run_experiment(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn experiment_is_deterministic_in_the_seed() {
        let spec = ExperimentSpec::new("toy1d", Method::Banel, 11, 256)
            .with_override("pretrain_epochs", "6")
            .with_override("epochs_theta", "4")
            .with_override("epochs_phi", "6")
            .with_override("hidden", "16");
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.nre_spent, b.nre_spent);
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let (sa, sb) = (
                ra.success_rate.as_ref().unwrap().estimate,
                rb.success_rate.as_ref().unwrap().estimate,
            );
            assert_eq!(sa.to_bits(), sb.to_bits(), "round {}", ra.round);
        }
    }

    #[test]
    fn cum_best_is_a_running_max() {
        let spec = ExperimentSpec::new("toy1d", Method::Reinforce, 3, 256)
            .with_override("pretrain_epochs", "6")
            .with_override("hidden", "16");
        let run = run_experiment(&spec).unwrap();
        let mut best: f64 = 0.0;
        for row in &run.rows {
            if let Some(s) = &row.success_rate {
                best = best.max(s.estimate);
            }
            assert_eq!(row.cum_best, best);
        }
    }

    #[test]
    fn comparison_csv_shape() {
        let spec = ExperimentSpec::new("toy1d", Method::Reinforce, 3, 128)
            .with_override("pretrain_epochs", "4")
            .with_override("hidden", "16");
        let run = run_experiment(&spec).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, std::slice::from_ref(&run)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,seed,round,nre_total,sr_estimate,sr_lo,sr_hi,cum_best,terminated"
        );
        assert_eq!(lines.count(), run.rows.len());
        let mut buf = Vec::new();
        emit_plot_data(&mut buf, std::slice::from_ref(&run)).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("method,seed,nre,sr,cum_best"));
    }
}
