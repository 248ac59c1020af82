//! `essa`: synthetic data, training, evaluation, super-resolution, benchmarking
//! and self-verification over HSI1 cubes and ESSF checkpoints.

mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use essa_core::attention::{AttentionConfig, FeatureMode};
use essa_core::bench::{scaling_report, AttentionKind};
use essa_core::data::{make_pairs, read_hsi, synthesize, write_hsi, PairSet, SplitRule, SynthSpec};
use essa_core::metrics::CSV_HEADER;
use essa_core::model::{default_schedule, ModelConfig};
use essa_core::train::{
    evaluate, load_checkpoint, loss_csv, save_checkpoint, TrainConfig, TrainState,
};
use essa_core::{verify, Error};

use settings::{parse_value, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} verification checks failed")]
    Verification { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Core(Error::Io(_) | Error::Corrupt(_)) => 3,
            CliError::Core(Error::NonFinite(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "essa",
    version,
    about = "Kernelized SCC attention for hyperspectral super-resolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic cube as an HSI1 file.
    Synth(SynthArgs),
    /// Tile cubes into LR/HR training and test pairs.
    Pairs(PairsArgs),
    /// Train a model on a pair directory and write a checkpoint and loss CSV.
    Train(TrainArgs),
    /// Score a checkpoint and the bicubic baseline on a pair directory.
    Eval(EvalArgs),
    /// Super-resolve one LR cube with a checkpoint.
    Sr(SrArgs),
    /// Count and optionally time attention kinds across token counts.
    Bench(BenchArgs),
    /// Run the numerical property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// key=value file with synth keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    endmembers: Option<usize>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    frequencies: Option<usize>,
    /// Output HSI1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input HSI1 cubes.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    /// HR patch side in pixels.
    #[arg(long)]
    patch: Option<usize>,
    /// Every n-th patch goes to the test split (0 keeps all for training).
    #[arg(long)]
    test_every: Option<usize>,
    /// Output directory; receives `train/` and `test/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Comma-separated factors such as `2,1/2,2`.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_parser = ["exact", "elementwise"])]
    mode: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    pre_norm: Option<bool>,
}

impl ModelFlags {
    fn push_into(&self, s: &mut Settings) {
        s.push("scale", self.scale);
        s.push("channels", self.channels);
        s.push("stages", self.stages.clone());
        s.push("heads", self.heads);
        s.push("order", self.order);
        s.push("mode", self.mode.clone());
        s.push("sigma", self.sigma);
        s.push("normalize", self.normalize);
        s.push("pre_norm", self.pre_norm);
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key=value file with model and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training pair directory.
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rewrite the checkpoint every n steps (0 only at the end).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss CSV path (defaults to the checkpoint path with `.loss.csv` appended).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Metric CSV (printed to stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SrArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// LR HSI1 cube.
    #[arg(long)]
    input: PathBuf,
    /// HR HSI1 output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    channels: Option<usize>,
    /// Comma-separated token counts.
    #[arg(long)]
    sizes: Option<String>,
    /// Comma-separated kinds among mhsa, essa, quadratic.
    #[arg(long)]
    kinds: Option<String>,
    /// Timed repeats per size (0 counts only).
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_parser = ["exact", "elementwise"])]
    mode: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    /// CSV output (the table is always printed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Fewer cases per property.
    #[arg(long)]
    quick: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pairs(a) => pairs(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sr(a) => sr(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn print_resolved(title: &str, kv: &str) {
    println!("# resolved {title}");
    print!("{kv}");
}

fn synth_kv(s: &SynthSpec) -> String {
    format!(
        "seed={}\nendmembers={}\nbands={}\nheight={}\nwidth={}\nsmoothness={:?}\nfrequencies={}\n",
        s.seed, s.endmembers, s.bands, s.height, s.width, s.smoothness, s.frequencies
    )
}

fn synth(a: SynthArgs) -> CliResult {
    let mut settings = Settings::load(a.config.as_deref())?;
    settings.push("seed", a.seed);
    settings.push("bands", a.bands);
    settings.push("height", a.height);
    settings.push("width", a.width);
    settings.push("endmembers", a.endmembers);
    settings.push("smoothness", a.smoothness);
    settings.push("frequencies", a.frequencies);
    let mut spec = SynthSpec::default();
    settings.apply(|k, v| {
        match k {
            "seed" => spec.seed = parse_value(k, v)?,
            "bands" => spec.bands = parse_value(k, v)?,
            "height" => spec.height = parse_value(k, v)?,
            "width" => spec.width = parse_value(k, v)?,
            "endmembers" => spec.endmembers = parse_value(k, v)?,
            "smoothness" => spec.smoothness = parse_value(k, v)?,
            "frequencies" => spec.frequencies = parse_value(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    print_resolved("synth", &synth_kv(&spec));
    let cube = synthesize(&spec)?;
    write_hsi(&a.out, &cube)?;
    println!(
        "wrote {} ({}x{}x{})",
        a.out.display(),
        cube.bands(),
        cube.height(),
        cube.width()
    );
    Ok(())
}

fn pairs(a: PairsArgs) -> CliResult {
    let mut settings = Settings::load(a.config.as_deref())?;
    settings.push("scale", a.scale);
    settings.push("patch", a.patch);
    settings.push("test_every", a.test_every);
    let (mut scale, mut patch, mut test_every) = (2usize, 32usize, 4usize);
    settings.apply(|k, v| {
        match k {
            "scale" => scale = parse_value(k, v)?,
            "patch" => patch = parse_value(k, v)?,
            "test_every" => test_every = parse_value(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    print_resolved(
        "pairs",
        &format!("scale={scale}\npatch={patch}\ntest_every={test_every}\n"),
    );
    let cubes = a
        .input
        .iter()
        .map(read_hsi)
        .collect::<Result<Vec<_>, _>>()?;
    let rule = if test_every == 0 {
        SplitRule::AllTrain
    } else {
        SplitRule::EveryNth(test_every)
    };
    let (train_set, test_set) = make_pairs(&cubes, scale, patch, rule)?;
    train_set.save(a.out.join("train"))?;
    test_set.save(a.out.join("test"))?;
    println!(
        "wrote {} train and {} test pairs under {}",
        train_set.len(),
        test_set.len(),
        a.out.display()
    );
    Ok(())
}

const TRAIN_KEYS: [&str; 7] = [
    "steps",
    "batch_size",
    "lr_init",
    "lr_min",
    "clip",
    "seed",
    "checkpoint_every",
];

fn train_kv(t: &TrainConfig) -> String {
    let clip = t
        .clip
        .map(|c| format!("{c:?}"))
        .unwrap_or_else(|| "none".into());
    format!(
        "steps={}\nbatch_size={}\nlr_init={:?}\nlr_min={:?}\nclip={clip}\nseed={}\ncheckpoint_every={}\n",
        t.steps, t.batch_size, t.lr_init, t.lr_min, t.seed, t.checkpoint_every
    )
}

fn set_train_key(t: &mut TrainConfig, k: &str, v: &str) -> CliResult {
    match k {
        "steps" => t.steps = parse_value(k, v)?,
        "batch_size" => t.batch_size = parse_value(k, v)?,
        "lr_init" => t.lr_init = parse_value(k, v)?,
        "lr_min" => t.lr_min = parse_value(k, v)?,
        "clip" => {
            t.clip = if v == "none" {
                None
            } else {
                Some(parse_value(k, v)?)
            }
        }
        "seed" => t.seed = parse_value(k, v)?,
        "checkpoint_every" => t.checkpoint_every = parse_value(k, v)?,
        _ => unreachable!("caller filters training keys"),
    }
    Ok(())
}

fn usage(e: Error) -> CliError {
    match e {
        Error::Io(_) | Error::Corrupt(_) => CliError::Core(e),
        other => CliError::Usage(other.to_string()),
    }
}

fn resolve_train(
    a: &TrainArgs,
    bands: usize,
    scale: usize,
) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut settings = Settings::load(a.config.as_deref())?;
    a.model.push_into(&mut settings);
    settings.push("steps", a.steps);
    settings.push("batch_size", a.batch_size);
    settings.push("lr_init", a.lr);
    settings.push("lr_min", a.lr_min);
    settings.push("clip", a.clip);
    settings.push("seed", a.seed);
    settings.push("checkpoint_every", a.checkpoint_every);
    let mut cfg = ModelConfig::desk(bands, scale);
    let mut tcfg = TrainConfig::default();
    settings.apply(|k, v| {
        if TRAIN_KEYS.contains(&k) {
            set_train_key(&mut tcfg, k, v)?;
            Ok(true)
        } else if essa_core::model::CONFIG_KEYS.contains(&k) {
            cfg.set(k, v).map_err(usage)?;
            Ok(true)
        } else {
            Ok(false)
        }
    })?;
    if !settings.contains("stages") {
        cfg.schedule = default_schedule(cfg.scale);
    }
    if cfg.bands != bands {
        return Err(CliError::Usage(format!(
            "config has bands={} but the pairs have {bands} bands",
            cfg.bands
        )));
    }
    if cfg.scale != scale {
        return Err(CliError::Usage(format!(
            "config has scale={} but the pairs were made at scale {scale}",
            cfg.scale
        )));
    }
    cfg.validate().map_err(usage)?;
    tcfg.validate().map_err(usage)?;
    Ok((cfg, tcfg))
}

fn train(a: TrainArgs) -> CliResult {
    let set = PairSet::load(&a.pairs)?;
    let bands = set
        .pairs
        .first()
        .map(|p| p.lr.bands())
        .ok_or_else(|| CliError::Usage(format!("{} holds no pairs", a.pairs.display())))?;
    let (cfg, tcfg) = resolve_train(&a, bands, set.scale)?;
    print_resolved("model", &cfg.to_kv());
    print_resolved("training", &train_kv(&tcfg));
    let mut state = match &a.resume {
        Some(p) => load_checkpoint::<f32>(p, Some(&cfg)).map_err(usage)?,
        None => TrainState::new(essa_core::model::Model::build(&cfg, tcfg.seed)?),
    };
    let report_every = (tcfg.steps / 20).max(1);
    let out = a.out.clone();
    state.run(&set, &tcfg, |s| {
        let r = s.history.last().expect("a step was recorded");
        if r.step % report_every == 0 || s.step == tcfg.steps {
            println!("step {:>6} lr {:.3e} loss {:.6}", r.step, r.lr, r.loss);
        }
        if tcfg.checkpoint_every > 0 && s.step % tcfg.checkpoint_every == 0 {
            save_checkpoint(&out, s)?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &state)?;
    let csv_path = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    fs::write(&csv_path, loss_csv(&state.history)).map_err(Error::from)?;
    println!("wrote {} and {}", a.out.display(), csv_path.display());
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_bands(cfg: &ModelConfig, bands: usize, what: &str) -> CliResult {
    if cfg.bands != bands {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} bands but {what} has {bands}",
            cfg.bands
        )));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let state = load_checkpoint::<f32>(&a.checkpoint, None)?;
    let set = PairSet::load(&a.pairs)?;
    print_resolved("model", &state.model.cfg.to_kv());
    if let Some(p) = set.pairs.first() {
        check_bands(&state.model.cfg, p.lr.bands(), "the pair set")?;
    }
    if set.scale != state.model.cfg.scale {
        return Err(CliError::Usage(format!(
            "checkpoint upsamples x{} but the pairs are x{}",
            state.model.cfg.scale, set.scale
        )));
    }
    let (ours, base) = evaluate(&state.model, &set).map_err(usage)?;
    let mut csv = format!("method,{CSV_HEADER}\n");
    let _ = writeln!(csv, "essa,{}", ours.csv_row());
    let _ = writeln!(csv, "bicubic,{}", base.csv_row());
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).map_err(Error::from)?;
            print!("{csv}");
            println!("wrote {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn sr(a: SrArgs) -> CliResult {
    let state = load_checkpoint::<f32>(&a.checkpoint, None)?;
    let cube = read_hsi(&a.input)?;
    print_resolved("model", &state.model.cfg.to_kv());
    check_bands(&state.model.cfg, cube.bands(), "the input cube")?;
    let hr = state.model.forward(&cube).map_err(usage)?.clamped();
    write_hsi(&a.out, &hr)?;
    println!(
        "wrote {} ({}x{}x{})",
        a.out.display(),
        hr.bands(),
        hr.height(),
        hr.width()
    );
    Ok(())
}

fn parse_list<V: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<V>> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

fn bench(a: BenchArgs) -> CliResult {
    let mut settings = Settings::load(a.config.as_deref())?;
    settings.push("channels", a.channels);
    settings.push("sizes", a.sizes.clone());
    settings.push("kinds", a.kinds.clone());
    settings.push("repeats", a.repeats);
    settings.push("order", a.order);
    settings.push("mode", a.mode.clone());
    settings.push("sigma", a.sigma);
    settings.push("normalize", a.normalize);
    let mut channels = 64usize;
    let mut sizes = vec![256usize, 1024, 4096, 16384];
    let mut kinds = vec![AttentionKind::Mhsa, AttentionKind::Essa];
    let mut repeats = 0usize;
    let mut cfg = AttentionConfig::default();
    settings.apply(|k, v| {
        match k {
            "channels" => channels = parse_value(k, v)?,
            "sizes" => sizes = parse_list(k, v)?,
            "kinds" => kinds = parse_list(k, v)?,
            "repeats" => repeats = parse_value(k, v)?,
            "order" => cfg.order = parse_value(k, v)?,
            "mode" => cfg.mode = parse_value::<FeatureMode>(k, v)?,
            "sigma" => cfg.sigma = parse_value(k, v)?,
            "normalize" => cfg.normalize = parse_value(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    let size_text: Vec<String> = sizes.iter().map(usize::to_string).collect();
    let kind_text: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
    print_resolved(
        "bench",
        &format!(
            "channels={channels}\nsizes={}\nkinds={}\nrepeats={repeats}\norder={}\nmode={}\nsigma={:?}\nnormalize={}\n",
            size_text.join(","),
            kind_text.join(","),
            cfg.order,
            cfg.mode.as_str(),
            cfg.sigma,
            cfg.normalize
        ),
    );
    cfg.head_width(channels).map_err(usage)?;
    let timing = (repeats > 0).then_some(repeats);
    let report = scaling_report(&kinds, &sizes, channels, &cfg, timing).map_err(usage)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        fs::write(p, report.to_csv()).map_err(Error::from)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_verify(a: VerifyArgs) -> CliResult {
    println!("# resolved verify\nquick={}", a.quick);
    let results = verify::run_all(a.quick);
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Verification {
            failed,
            total: results.len(),
        });
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
