//! Scratch pilot runs (not part of the library surface).

use banel_lab::harness::{run_experiment, ExperimentSpec, Method};
use banel_lab::tasks::{rule_based_attacks, AdditionAttackTask, AttackKind, Task};
use std::time::Instant;

fn run(label: &str, spec: &ExperimentSpec) -> f64 {
    let t = Instant::now();
    let run = run_experiment(spec).unwrap();
    let x = run.improvement_factor().unwrap_or(f64::NAN);
    println!(
        "{label}: prior {:.3e} best {:.3e} (x{:.1}) hits {} [{:.0}s]",
        run.prior_success.as_ref().map(|s| s.estimate).unwrap_or(f64::NAN),
        run.best_success_rate(),
        x,
        run.successes_seen,
        t.elapsed().as_secs_f64()
    );
    x
}

fn main() {
    let t0 = Instant::now();
    let variants: &[(&str, &[(&str, &str)])] = &[
        ("noreset", &[("f", "20"), ("epochs_theta", "20"), ("reset_each_round", "false")]),
        ("m50", &[("f", "20"), ("epochs_theta", "20"), ("m", "50")]),
        ("f40", &[("f", "40"), ("epochs_theta", "20")]),
        ("phi16", &[("f", "20"), ("epochs_theta", "20"), ("neg_family", "neural"), ("neg_hidden", "16")]),
    ];
    for (label, kvs) in variants {
        let mut xs = Vec::new();
        for seed in 0..3u64 {
            let mut spec = ExperimentSpec::new("addition_attack", Method::Banel, seed, 2000);
            for (k, v) in *kvs {
                spec = spec.with_override(k, v);
            }
            xs.push(run(&format!("addition {label} seed {seed}"), &spec));
        }
        println!("  -> addition {label} mean x{:.1}", xs.iter().sum::<f64>() / 3.0);
    }
    println!("[total {:.0}s]", t0.elapsed().as_secs_f64());
}
