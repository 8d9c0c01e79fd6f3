use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use esdnet::io::{self, RunConfig};
use esdnet::loss::FeatureExtractor;
use esdnet::model::{tiled_infer, ModelParams, TileConfig};
use esdnet::synth::{apply_degradation, gen_clean, gen_dataset, CleanKind, MoireParams};
use esdnet::train::{evaluate, loss_log_csv, train};
use esdnet::Error;

#[derive(Parser)]
#[command(name = "esdnet", version, about = "Train and run the ESDNet demoireing network on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key = value run configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.epochs=2 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of clean/moire PNG pairs
    Synth {
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Image size as WxH, or a single number for squares
        #[arg(long, default_value = "64")]
        hw: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_weights: PathBuf,
        /// Loss log CSV (defaults to the weights path with a .loss.csv suffix)
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Restore one PNG with tiled inference
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile: usize,
        #[arg(long, default_value_t = 32)]
        overlap: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// PSNR/SSIM of a model over a dataset directory
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference gradient checks of every op and block
    Gradcheck,
    /// Time tiled inference on a synthetic frame
    Bench {
        /// Weights file; a seeded model is used when omitted
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "3840x2160")]
        hw: String,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 256)]
        tile: usize,
        #[arg(long, default_value_t = 32)]
        overlap: usize,
        #[arg(long, default_value = "bench.csv")]
        csv: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Bad flags or flag values.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else { return Err(usage(format!("--set expects KEY=VALUE, got {kv:?}"))) };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `WxH` or `N`, returned as `(h, w)`.
fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    let dims = match s.split_once(['x', 'X']) {
        Some((w, h)) => parse(h).zip(parse(w)),
        None => parse(s).map(|n| (n, n)),
    };
    dims.ok_or_else(|| usage(format!("invalid size {s:?}; expected WxH or N")))
}

fn load_weights(path: &Path, cfg: &RunConfig) -> Result<ModelParams> {
    io::load_model(path, cfg.model_config()).with_context(|| format!("loading weights {}", path.display()))
}

fn synth(n: usize, hw: &str, seed: u64, out: &Path, cfg: &RunConfig) -> Result<()> {
    let (h, w) = parse_hw(hw)?;
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut pairs = gen_dataset(n, h, w, seed)?;
    if let Some(fixed) = &cfg.moire {
        for p in &mut pairs {
            p.moire = apply_degradation(&p.clean, fixed)?;
            p.params = fixed.clone();
        }
    }
    io::write_dataset(out, &pairs)?;
    println!("wrote {n} pairs of {w}x{h} to {}", out.display());
    Ok(())
}

fn train_cmd(data: &Path, out_weights: &Path, log: Option<PathBuf>, cfg: &RunConfig) -> Result<()> {
    let pairs = io::read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let extractor = FeatureExtractor::from_config(&cfg.loss)?;
    let mut model = ModelParams::build(cfg.model_config(), cfg.model_seed)?;
    let started = Instant::now();
    let state = train(&mut model, &pairs, &cfg.train, &cfg.loss, &extractor, |r| {
        if r.step == 1 || r.step % 25 == 0 {
            eprintln!(
                "step {:>5}  epoch {:>3}  lr {:.3e}  loss {:.5}  ({:.0}s)",
                r.step,
                r.epoch,
                r.lr,
                r.loss,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    let log = log.unwrap_or_else(|| {
        let mut name = out_weights.as_os_str().to_owned();
        name.push(".loss.csv");
        PathBuf::from(name)
    });
    io::save_model(out_weights, &model)?;
    io::atomic_write(&log, loss_log_csv(&state.log).as_bytes())?;
    println!("trained {} steps; weights {} log {}", state.step, out_weights.display(), log.display());
    Ok(())
}

fn infer(weights: &Path, input: &Path, out: &Path, tiles: TileConfig, cfg: &RunConfig) -> Result<()> {
    tiles.validate().map_err(|e| usage(e.to_string()))?;
    let model = load_weights(weights, cfg)?;
    let image = io::load_png(input).with_context(|| format!("reading {}", input.display()))?;
    let restored = tiled_infer(&model, &image, tiles)?;
    io::save_png(out, &restored)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(weights: &Path, data: &Path, report: &Path, cfg: &RunConfig) -> Result<()> {
    let model = load_weights(weights, cfg)?;
    let pairs = io::read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let r = evaluate(&model, &pairs)?;
    io::atomic_write(report, r.to_csv().as_bytes())?;
    println!(
        "{} pairs: PSNR {:.3} dB (input {:.3}), SSIM {:.4} (input {:.4})",
        r.rows.len(),
        r.mean_psnr,
        r.mean_input_psnr,
        r.mean_ssim,
        r.mean_input_ssim
    );
    Ok(())
}

fn gradcheck() -> Result<bool> {
    let mut ok = true;
    for c in esdnet::gradsuite::run_all()? {
        let verdict = if c.passed() { "ok  " } else { "FAIL" };
        println!("{verdict} {:<24} max rel err {:.3e} (tol {:.0e})", c.name, c.max_rel_err, c.tolerance);
        ok &= c.passed();
    }
    Ok(ok)
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

struct BenchArgs {
    hw: String,
    runs: usize,
    tiles: TileConfig,
    csv: PathBuf,
}

fn bench(weights: Option<&Path>, args: &BenchArgs, cfg: &RunConfig) -> Result<()> {
    let (h, w) = parse_hw(&args.hw)?;
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    args.tiles.validate().map_err(|e| usage(e.to_string()))?;
    let model = match weights {
        Some(path) => load_weights(path, cfg)?,
        None => ModelParams::build(cfg.model_config(), cfg.model_seed)?,
    };
    let clean = gen_clean(CleanKind::Mixed, h, w, 1)?;
    let params = MoireParams { amplitude: [0.3, 0.4, 0.2], freq: [0.11, 0.07], phase: [0.0, 2.0, 4.0], ..MoireParams::identity() };
    let frame = apply_degradation(&clean, &params)?;
    let mut times = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let t = Instant::now();
        let out = tiled_infer(&model, &frame, args.tiles)?;
        let secs = t.elapsed().as_secs_f64();
        if !out.all_finite() {
            return Err(Error::NonFinite { node: 0, op: "bench output" }.into());
        }
        eprintln!("run {run}: {secs:.3} s");
        times.push(secs);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let p95 = percentile(&sorted, 95.0);
    let mut csv = String::from("stat,value\n");
    csv += &format!("width,{w}\nheight,{h}\ntile,{}\noverlap,{}\n", args.tiles.tile, args.tiles.overlap);
    for (i, t) in times.iter().enumerate() {
        csv += &format!("run_{i}_s,{t}\n");
    }
    csv += &format!("median_s,{median}\np95_s,{p95}\nfps,{}\n", 1.0 / median);
    io::atomic_write(&args.csv, csv.as_bytes())?;
    println!("{w}x{h}: median {median:.3} s, p95 {p95:.3} s, {:.4} fps ({} runs)", 1.0 / median, args.runs);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { n, hw, seed, out, cfg } => synth(n, &hw, seed, &out, &load_config(&cfg)?)?,
        Command::Train { data, out_weights, log, cfg } => train_cmd(&data, &out_weights, log, &load_config(&cfg)?)?,
        Command::Infer { weights, input, out, tile, overlap, cfg } => {
            infer(&weights, &input, &out, TileConfig { tile, overlap }, &load_config(&cfg)?)?
        }
        Command::Eval { weights, data, report, cfg } => eval(&weights, &data, &report, &load_config(&cfg)?)?,
        Command::Gradcheck => return gradcheck(),
        Command::Bench { weights, hw, runs, tile, overlap, csv, cfg } => {
            let args = BenchArgs { hw, runs, tiles: TileConfig { tile, overlap }, csv };
            bench(weights.as_deref(), &args, &load_config(&cfg)?)?
        }
    }
    Ok(true)
}

/// 1 usage, 2 data, 3 numeric.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::Diverged { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("esdnet: {}", text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("esdnet: gradient check failed");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("esdnet: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::from(exit_code(&err))
        }
    }
}
