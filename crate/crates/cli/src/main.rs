use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pidnet::checkpoint;
use pidnet::dataio::{align, gen_synth, Manifest, Split, SynthOptions};
use pidnet::metrics::EvalReport;
use pidnet::model::{grad_check_fixture, PidnetModel};
use pidnet::numcore::{GradCheckOptions, RngState};
use pidnet::train::{config_comment, evaluate, format_rho, train_manifest};
use pidnet::{Error, TrainConfig};
use rayon::prelude::*;

const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "pidnet", version, about = "Multimodal action-quality regression")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus (feature files + manifest.jsonl).
    GenSynth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Modality dims as rgb,flow,audio.
        #[arg(long, default_value = "32,32,24", value_parser = parse_dims)]
        dims: [usize; 3],
        /// Inclusive native length range as lo,hi.
        #[arg(long, default_value = "12,24", value_parser = parse_range)]
        len_range: (usize, usize),
        /// Fraction of samples assigned to the val split.
        #[arg(long, default_value_t = 0.25)]
        val_frac: f64,
        /// Alignment length recorded in the manifest header.
        #[arg(long, default_value_t = 16)]
        align_length: usize,
    },
    /// Train, writing checkpoint.pidc, history.csv and report.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the evaluation report of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Finite-difference check of every parameter on the micro model.
    GradCheck {
        /// Overrides applied on top of the micro profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_grad: Option<String>,
    },
    /// Dump per-step gate values of one sample as CSV.
    InspectGates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per axis value and tabulate val metrics.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds per value (seed, seed+1, ...); rows report the median.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Alpha,
    K,
    N,
    Fusion,
    Ablation,
}

impl Axis {
    fn key(self) -> &'static str {
        match self {
            Axis::Alpha => "split_ratio",
            Axis::K => "mkconv_k",
            Axis::N => "bimamba_depth",
            Axis::Fusion => "fusion_strategy",
            Axis::Ablation => "ablation",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::K => "k",
            Axis::N => "n",
            Axis::Fusion => "fusion",
            Axis::Ablation => "ablation",
        }
    }
}

fn parse_list(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("{p:?} is not a non-negative integer")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v = parse_list(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let v = parse_list(s, 2)?;
    Ok((v[0], v[1]))
}

enum Failure {
    Core(Error),
    Usage(String),
    Io(PathBuf, std::io::Error),
    /// Check ran and found a problem; the report is already printed.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(..) => 3,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Config(_) | Error::Shape { .. } => 2,
                Error::NonFinite { .. } => 4,
                Error::CheckpointMismatch(_) => 5,
                _ => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) | Failure::Check(m) => m.clone(),
            Failure::Io(p, e) => format!("I/O error on {}: {e}", p.display()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn load_config(path: Option<&Path>, base: TrainConfig) -> Result<TrainConfig, Failure> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    let mut cfg = base;
    cfg.apply_text(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_train(config: Option<&Path>, manifest: &Path, out: &Path) -> Outcome {
    let cfg = load_config(config, TrainConfig::default())?;
    let m = Manifest::load(manifest)?;
    let run = train_manifest(&cfg, &m)?;
    fs::create_dir_all(out).map_err(|e| Failure::Io(out.to_path_buf(), e))?;
    checkpoint::save(&run.model, &out.join("checkpoint.pidc"))?;
    write(&out.join("history.csv"), &run.history_csv)?;
    write(&out.join("report.json"), report_json(&run.report))?;
    println!(
        "epochs {}, best epoch {}, best val rho {}",
        run.fit.history.len(),
        run.fit.best_epoch.map_or("-".into(), |e| e.to_string()),
        format_rho(run.fit.best_rho)
    );
    Ok(())
}

fn load_for_manifest(checkpoint_path: &Path, m: &Manifest) -> Result<PidnetModel, Failure> {
    let model = checkpoint::load(checkpoint_path)?;
    if model.dims != m.header.dims {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint dims {:?} differ from manifest dims {:?}",
            model.dims, m.header.dims
        ))
        .into());
    }
    Ok(model)
}

fn cmd_eval(checkpoint_path: &Path, manifest: &Path, split: Split) -> Outcome {
    let m = Manifest::load(manifest)?;
    let model = load_for_manifest(checkpoint_path, &m)?;
    let samples = m.load_split(split)?;
    if samples.is_empty() {
        return Err(Failure::Usage(format!("split {split} has no samples")));
    }
    let report = evaluate(&model, &samples, &m.norm()?)?;
    print!("{}", report_json(&report));
    Ok(())
}

fn cmd_grad_check(config: Option<&Path>, corrupt: Option<String>) -> Outcome {
    let cfg = load_config(config, TrainConfig::micro())?;
    let (dims, batch, targets) = grad_check_fixture(&cfg);
    let model = PidnetModel::new(&cfg, dims)?;
    let opts = GradCheckOptions {
        corrupt,
        ..Default::default()
    };
    let rep = model.grad_check(&batch, &targets, &opts)?;
    for (module, err) in rep.per_module() {
        println!("{module:<10} {err:.3e}");
    }
    let failures = rep.failures(GRAD_TOL);
    if failures.is_empty() {
        println!("ok: {} elements, max relative error {:.3e}", rep.elements, rep.max_rel_err());
        return Ok(());
    }
    let names: Vec<String> = failures
        .iter()
        .map(|p| format!("{} ({:.3e})", p.name, p.max_rel_err))
        .collect();
    Err(Failure::Check(format!("gradient check failed: {}", names.join(", "))))
}

fn cmd_inspect_gates(checkpoint_path: &Path, manifest: &Path, sample: &str, out: &Path) -> Outcome {
    let m = Manifest::load(manifest)?;
    let entry = m
        .entry(sample)
        .ok_or_else(|| Failure::Usage(format!("sample {sample:?} not in manifest")))?
        .clone();
    let model = load_for_manifest(checkpoint_path, &m)?;
    let s = m.load_entry(&entry)?;
    let aligned = align(&s.bundle, model.config.align_length, false, false, &mut RngState::new(0))?;
    let (_, trace) = model.gate_trace(&aligned)?;
    let mut csv = config_comment(&model);
    csv.push_str("stage,role,t,sigma\n");
    for r in &trace {
        for (t, v) in r.sigma.iter().enumerate() {
            csv.push_str(&format!("{},{},{t},{v}\n", r.stage, r.role));
        }
    }
    write(out, csv)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Overall `(ρ, raw MSE)` of a report: the Fisher average and the
/// sample-weighted category MSE.
fn overall(r: &EvalReport) -> (Option<f64>, f64) {
    let n: usize = r.categories.values().map(|c| c.n).sum();
    let mse = r.categories.values().map(|c| c.mse * c.n as f64).sum::<f64>() / n.max(1) as f64;
    (r.fisher_avg, mse)
}

fn cmd_sweep(axis: Axis, values: &[String], config: Option<&Path>, manifest: &Path, out: &Path, seeds: u64) -> Outcome {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let base = load_config(config, TrainConfig::default())?;
    let mut configs = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        cfg.set(axis.key(), v)?;
        cfg.validate()?;
        configs.push(cfg);
    }
    let m = Manifest::load(manifest)?;
    let jobs: Vec<(usize, TrainConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (0..seeds).map(move |k| {
                (
                    i,
                    TrainConfig {
                        seed: c.seed + k,
                        ..c.clone()
                    },
                )
            })
        })
        .collect();
    let results: Vec<(usize, Option<f64>, f64)> = jobs
        .par_iter()
        .map(|(i, cfg)| {
            let run = train_manifest(cfg, &m)?;
            let (rho, mse) = overall(&run.report);
            Ok((*i, rho, mse))
        })
        .collect::<Result<_, Error>>()?;

    fs::create_dir_all(out).map_err(|e| Failure::Io(out.to_path_buf(), e))?;
    let mut csv = format!("# axis = {}\n# seeds = {seeds}\n", axis.name());
    csv.push_str(&base.to_text().lines().map(|l| format!("# {l}\n")).collect::<String>());
    csv.push_str(&format!("{},val_rho,val_mse\n", axis.name()));
    for (i, v) in values.iter().enumerate() {
        let rows: Vec<_> = results.iter().filter(|r| r.0 == i).collect();
        let rhos: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
        // an undefined run makes the median undefined
        let rho = (rhos.len() == rows.len()).then(|| median(rhos));
        let mse = median(rows.iter().map(|r| r.2).collect());
        csv.push_str(&format!("{v},{},{mse}\n", format_rho(rho)));
    }
    let path = out.join("sweep.csv");
    write(&path, &csv)?;
    print!("{}", csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("PIDNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("PIDNET_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.cmd {
        Cmd::GenSynth {
            n,
            seed,
            out,
            dims,
            len_range,
            val_frac,
            align_length,
        } => {
            let opts = SynthOptions {
                n,
                seed,
                dims,
                len_range,
                val_frac,
                align_length,
            };
            let m = gen_synth(&opts, &out)?;
            println!("wrote {} samples to {}", m.entries.len(), out.display());
            Ok(())
        }
        Cmd::Train { config, manifest, out } => cmd_train(config.as_deref(), &manifest, &out),
        Cmd::Eval {
            checkpoint,
            manifest,
            split,
        } => cmd_eval(&checkpoint, &manifest, split),
        Cmd::GradCheck { config, corrupt_grad } => cmd_grad_check(config.as_deref(), corrupt_grad),
        Cmd::InspectGates {
            checkpoint,
            manifest,
            sample,
            out,
        } => cmd_inspect_gates(&checkpoint, &manifest, &sample, &out),
        Cmd::Sweep {
            axis,
            values,
            config,
            manifest,
            out,
            seeds,
        } => cmd_sweep(axis, &values, config.as_deref(), &manifest, &out, seeds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
