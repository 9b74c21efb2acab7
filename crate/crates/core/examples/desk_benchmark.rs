//! Baseline versus purified training on the synthetic benchmark, with leakage
//! scores and the illumination bucket table per seed.
//!
//! `cargo run --release -p puregaze-core --example desk_benchmark -- [steps] [seeds] [key=value ...]`
//!
//! Keys are TrainConfig field names applied on top of the benchmark settings.

use std::time::Instant;

use puregaze_core::config::TrainConfig;
use puregaze_core::eval::{evaluate, illumination_buckets, visualize_purification};
use puregaze_core::manifest::Manifest;
use puregaze_core::synth::{domain_samples, DomainSpec};
use puregaze_core::training::{run_steps, Trainer};

fn main() -> puregaze_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut base = TrainConfig::benchmark();
    base.steps = steps;
    for kv in args.iter().skip(2) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| puregaze_core::Error::Config(format!("expected key=value, got '{kv}'")))?;
        base.set(k, v)?;
    }
    let source = domain_samples(&DomainSpec::source(2000, 1))?;
    let target = domain_samples(&DomainSpec::target(500, 2))?;
    let probe = domain_samples(&DomainSpec::source(500, 3))?;
    let target_manifest = Manifest::new(".", target.iter().map(|s| s.record.clone()).collect());
    let mut gains = Vec::new();
    for seed in 0..seeds {
        let mut trained = Vec::new();
        for baseline in [true, false] {
            let cfg = TrainConfig {
                seed,
                baseline,
                ..base.clone()
            };
            let mut trainer = Trainer::from_config(cfg.clone())?;
            let start = Instant::now();
            run_steps(&mut trainer, &source, steps, |_, _| Ok(()))?;
            let est = trainer.bundle.estimator();
            let src = evaluate(&est, &source[..500], cfg.resolution)?;
            let tgt = evaluate(&est, &target, cfg.resolution)?;
            println!(
                "seed {seed} {:>8}: source {:.3} target {:.3} ({:.0}s)",
                if baseline { "baseline" } else { "purified" },
                src.mean_error,
                tgt.mean_error,
                start.elapsed().as_secs_f64()
            );
            trained.push((trainer, tgt));
        }
        let (purified, pure_report) = trained.pop().expect("two runs");
        let (baseline, base_report) = trained.pop().expect("two runs");
        gains.push(base_report.mean_error - pure_report.mean_error);
        println!("seed {seed} improvement {:.3}", gains.last().unwrap());
        let table = illumination_buckets(&base_report, &pure_report, &target_manifest)?;
        print!("{}", table.summary());
        let leak = visualize_purification(
            &purified.checkpoint(),
            &baseline.checkpoint(),
            &probe,
            base.probe_steps,
            None,
        )?;
        println!(
            "leakage purified {:?} probe {:?} (rec {:.4} vs {:.4})",
            leak.purified, leak.baseline_probe, leak.purified_rec_loss, leak.probe_rec_loss
        );
    }
    let mean = gains.iter().sum::<f64>() / gains.len().max(1) as f64;
    println!("mean improvement {mean:.3} over {} seeds", gains.len());
    Ok(())
}
