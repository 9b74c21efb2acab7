use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use puregaze_core::config::TrainConfig;
use puregaze_core::eval::{
    ablation_sweep, evaluate, illumination_buckets, parse_sweep_values, visualize_purification, SweepParam,
};
use puregaze_core::manifest::Manifest;
use puregaze_core::models::{load_checkpoint, save_checkpoint};
use puregaze_core::synth::{generate_domain, DomainSpec};
use puregaze_core::training::{finetune, train};
use puregaze_core::Error;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "PUREGAZE_OUT";

#[derive(Parser, Debug)]
#[command(name = "puregaze", version, about = "Self-adversarial gaze estimation workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic domain to PNG images and a manifest.
    GenData(GenDataArgs),
    /// Train a model on a source manifest.
    Train(TrainArgs),
    /// Continue training a checkpoint on a few target samples per identity.
    Finetune(FinetuneArgs),
    /// Mean angular error of a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Per-illumination-bucket comparison of two checkpoints.
    Buckets(BucketsArgs),
    /// Reconstruction grids and leakage scores of a purified and a baseline checkpoint.
    Visualize(VisualizeArgs),
    /// Train and evaluate over a range of `k` or `sigma_sq` values.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory [default: $PUREGAZE_OUT/<command>, else ./out/<command>]
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out"))
                .join(command)
        })
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// `source` (bright, identities 0..40) or `target` (dark, identities 1000..1010)
    #[arg(long, default_value = "source")]
    domain: String,
    #[arg(long, default_value_t = 2000)]
    sample_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Illumination gain range as `lo,hi` [default: the domain's range]
    #[arg(long)]
    illumination: Option<String>,
    /// Additive pixel noise standard deviation
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

/// TrainConfig overrides; unset flags keep the preset or config-file value.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `reference` (ResNet-18, SA widths 256..16), `desk` (CPU-sized networks) or `benchmark` (desk networks with the synthetic-benchmark training settings)
    #[arg(long, default_value = "reference")]
    preset: String,
    /// Flat `key = value` file using TrainConfig field names
    #[arg(long)]
    config: Option<PathBuf>,
    /// Adversarial weight [default: 1]
    #[arg(long)]
    alpha: Option<String>,
    /// Gaze weight [default: 1]
    #[arg(long)]
    beta: Option<String>,
    /// Truncation threshold [default: 0.75]
    #[arg(long)]
    k: Option<String>,
    /// Attention variance in squared pixels, or `off` [default: 20]
    #[arg(long)]
    sigma_sq: Option<String>,
    /// Learning rate of all three networks [default: 1e-4]
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lr_backbone: Option<String>,
    #[arg(long)]
    lr_head: Option<String>,
    #[arg(long)]
    lr_sa: Option<String>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<String>,
    /// [default: 1000]
    #[arg(long)]
    steps: Option<String>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// [default: 64]
    #[arg(long)]
    resolution: Option<String>,
    /// Train without the SA-Module path
    #[arg(long)]
    baseline: bool,
    /// Registered backbone name (resnet18, desk-resnet, toy)
    #[arg(long)]
    backbone: Option<String>,
    /// Comma-separated SA-Module block widths
    #[arg(long)]
    sa_widths: Option<String>,
    /// Initialise the backbone from a checkpoint
    #[arg(long)]
    init_from: Option<String>,
    /// [default: 10]
    #[arg(long)]
    log_every: Option<String>,
    /// [default: 0, final checkpoint only]
    #[arg(long)]
    checkpoint_every: Option<String>,
    /// [default: 300]
    #[arg(long)]
    probe_steps: Option<String>,
}

impl ConfigArgs {
    /// Preset, then config file, then flags.
    fn build(&self) -> Result<TrainConfig, Error> {
        let mut cfg = TrainConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.load_into(path)?;
        }
        let flags = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("k", &self.k),
            ("sigma_sq", &self.sigma_sq),
            ("lr", &self.lr),
            ("lr_backbone", &self.lr_backbone),
            ("lr_head", &self.lr_head),
            ("lr_sa", &self.lr_sa),
            ("batch_size", &self.batch_size),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("resolution", &self.resolution),
            ("backbone", &self.backbone),
            ("sa_widths", &self.sa_widths),
            ("init_from", &self.init_from),
            ("log_every", &self.log_every),
            ("checkpoint_every", &self.checkpoint_every),
            ("probe_steps", &self.probe_steps),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.baseline {
            cfg.baseline = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Source-domain manifest
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target-domain manifest
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Samples kept per identity [default: the checkpoint's, 5 unless changed]
    #[arg(long)]
    per_identity: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct BucketsArgs {
    /// Reference checkpoint (e.g. the baseline)
    #[arg(long)]
    checkpoint_a: PathBuf,
    /// Compared checkpoint; improvement is error(a) - error(b)
    #[arg(long)]
    checkpoint_b: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    purified: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    /// Probe manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Probe training steps [default: the purified checkpoint's probe_steps]
    #[arg(long)]
    probe_steps: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// `k` or `sigma_sq`
    #[arg(long)]
    param: String,
    /// Comma-separated values; `off` disables the attention map
    #[arg(long)]
    values: String,
    /// Comma-separated seeds
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArg,
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_pair(text: &str) -> Result<(f64, f64), Error> {
    let bad = || Error::Config(format!("expected 'lo,hi', got '{text}'"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::GenData(a) => {
            let mut spec = match a.domain.as_str() {
                "source" => DomainSpec::source(a.sample_count, a.seed),
                "target" => DomainSpec::target(a.sample_count, a.seed),
                other => return Err(Error::Config(format!("unknown domain '{other}' (source, target)"))),
            };
            spec.resolution = a.resolution;
            if let Some(range) = &a.illumination {
                spec.nuisance.illumination = parse_pair(range)?;
            }
            if let Some(s) = a.noise_sigma {
                spec.nuisance.noise_sigma = s;
            }
            let out = a.out.resolve("gen-data");
            let manifest = generate_domain(&spec, &out)?;
            Ok(format!(
                "generated {} {} samples at {}px into {}",
                manifest.len(),
                a.domain,
                spec.resolution,
                out.join("manifest.jsonl").display()
            ))
        }
        Command::Train(a) => {
            let cfg = a.config.build()?;
            let manifest = Manifest::load(&a.manifest)?;
            let out = a.out.resolve("train");
            let outcome = train(&cfg, &manifest, &out)?;
            let gaze = outcome.final_report.map_or(f64::NAN, |r| r.gaze_loss);
            Ok(format!(
                "trained {} steps ({}): final gaze loss {gaze:.4}, backbone checksum {:016x}, checkpoint {}",
                cfg.steps,
                if cfg.baseline { "baseline" } else { "purified" },
                outcome.trainer.bundle.backbone().params().checksum(),
                outcome.checkpoint_path.display()
            ))
        }
        Command::Finetune(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let samples = Manifest::load(&a.manifest)?.load_all()?;
            let per_identity = a.per_identity.unwrap_or(ckpt.config.finetune_per_identity);
            let tuned = finetune(&ckpt, samples, a.steps, per_identity)?;
            let out = a.out.resolve("finetune");
            create_dir(&out)?;
            let path = out.join("checkpoint.safetensors");
            save_checkpoint(&tuned, &path)?;
            Ok(format!(
                "fine-tuned {} steps on up to {per_identity} samples per identity: {}",
                a.steps,
                path.display()
            ))
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let samples = Manifest::load(&a.manifest)?.load_all()?;
            let report = evaluate(&ckpt.bundle.estimator(), &samples, ckpt.config.resolution)?;
            let out = a.out.resolve("eval");
            create_dir(&out)?;
            report.save_jsonl(&out.join("eval.jsonl"))?;
            let summary = format!(
                "mean angular error {:.4} deg over {} samples",
                report.mean_error,
                report.samples.len()
            );
            write_text(&out.join("summary.txt"), &format!("{summary}\n"))?;
            Ok(summary)
        }
        Command::Buckets(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let samples = manifest.load_all()?;
            let report = |path: &Path| -> Result<_, Error> {
                let ckpt = load_checkpoint(path)?;
                evaluate(&ckpt.bundle.estimator(), &samples, ckpt.config.resolution)
            };
            let (ra, rb) = (report(&a.checkpoint_a)?, report(&a.checkpoint_b)?);
            let table = illumination_buckets(&ra, &rb, &manifest)?;
            let out = a.out.resolve("buckets");
            create_dir(&out)?;
            let mut jsonl = String::new();
            for row in &table.rows {
                jsonl.push_str(&serde_json::to_string(row).expect("rows serialize"));
                jsonl.push('\n');
            }
            write_text(&out.join("buckets.jsonl"), &jsonl)?;
            write_text(&out.join("buckets.txt"), &table.summary())?;
            let best = table
                .best()
                .map_or("none".to_string(), |r| format!("{:.3} deg at intensity {:.3}", r.improvement, r.intensity));
            Ok(format!(
                "{} buckets kept, {} images dropped, largest improvement {best}",
                table.rows.len(),
                table.dropped_images
            ))
        }
        Command::Visualize(a) => {
            let purified = load_checkpoint(&a.purified)?;
            let baseline = load_checkpoint(&a.baseline)?;
            let samples = Manifest::load(&a.manifest)?.load_all()?;
            let steps = a.probe_steps.unwrap_or(purified.config.probe_steps);
            let out = a.out.resolve("visualize");
            create_dir(&out)?;
            let report = visualize_purification(&purified, &baseline, &samples, steps, Some(&out))?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            let mut line = format!(
                "leakage illumination {} vs probe {}, identity {} vs probe {}",
                fmt(report.purified.illumination),
                fmt(report.baseline_probe.illumination),
                fmt(report.purified.identity),
                fmt(report.baseline_probe.identity)
            );
            if let Some(f) = &report.probe_failure {
                line.push_str(&format!(" (probe failure: {f})"));
            }
            Ok(line)
        }
        Command::Sweep(a) => {
            let param: SweepParam = a.param.parse()?;
            let values = parse_sweep_values(&a.values)?;
            let seeds = a
                .seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad seed list '{}'", a.seeds)))?;
            let base = a.config.build()?;
            let source = Manifest::load(&a.source)?.load_all()?;
            let target = Manifest::load(&a.target)?.load_all()?;
            let out = a.out.resolve("sweep");
            create_dir(&out)?;
            let table = ablation_sweep(param, &values, &base, &seeds, &source, &target, &out)?;
            let best = table
                .rows
                .iter()
                .min_by(|x, y| x.mean_error.total_cmp(&y.mean_error))
                .expect("non-empty sweep");
            Ok(format!(
                "{} rows; best {} = {} with {:.4} deg",
                table.rows.len(),
                a.param,
                best.value,
                best.mean_error
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
