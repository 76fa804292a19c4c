//! Command-line driver: dataset ingestion, the training stages and the
//! evaluation protocols. Artifacts are written under the configured
//! `out_dir`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use defactor::chem::{load_dataset, to_smiles, Molecule};
use defactor::conditional::{pretrain_discriminator, train_conditional, ConditionalModel, PropertyStats};
use defactor::config::Config;
use defactor::eval::{conditional_sweep, constrained_optimize};
use defactor::gradcheck;
use defactor::model::DeFactor;
use defactor::training::{pretrain_partial_ae, reconstruction_accuracy, train_autoencoder};
use defactor::Error;

const DATASET: &str = "dataset.smi";
const PRETRAINED: &str = "pretrain.ckpt";
const TRAINED: &str = "model.ckpt";
const CONDITIONAL: &str = "cond.ckpt";

#[derive(Parser)]
#[command(name = "defactor", version, about = "Edge-factorization molecular graph autoencoder")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the dataset (data_path, or the generated desk corpus) and store it.
    Ingest,
    /// Pretrain the partial autoencoder (resumes from an earlier checkpoint).
    Pretrain,
    /// Run the three-phase curriculum on the pretrained model (resumable).
    Train,
    /// Train the property predictor and the conditional model.
    TrainCond,
    /// Report exact-reconstruction accuracy of the trained autoencoder.
    Reconstruct,
    /// Conditional generation sweep around each query molecule's property.
    Generate,
    /// Constrained property optimization at several similarity thresholds.
    Optimize,
    /// Finite-difference gradient checks of every operation and the full loss.
    Gradcheck,
}

/// Failures mapped to exit codes.
enum Failure {
    Usage(String),
    Data(String),
    CheckFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::CheckFailed(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    cfg.apply_env()?;
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_string())?;
    match cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Pretrain => pretrain(&cfg),
        Command::Train => train(&cfg),
        Command::TrainCond => train_cond(&cfg),
        Command::Reconstruct => reconstruct(&cfg),
        Command::Generate => generate(&cfg),
        Command::Optimize => optimize(&cfg),
        Command::Gradcheck => run_gradcheck(&cfg),
    }
}

/// Line-delimited JSON report.
struct Report(fs::File);

impl Report {
    fn create(path: &Path) -> Result<Self, Failure> {
        Ok(Self(fs::File::create(path)?))
    }

    fn write(&mut self, record: &impl serde::Serialize) -> Outcome {
        let line = serde_json::to_string(record).map_err(|e| Failure::Data(e.to_string()))?;
        writeln!(self.0, "{line}")?;
        Ok(())
    }
}

fn path(cfg: &Config, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// The stored dataset when `ingest` has run, otherwise the configured one.
fn dataset(cfg: &Config) -> Result<Vec<Molecule>, Failure> {
    let stored = path(cfg, DATASET);
    let data = if stored.exists() { load_dataset(&stored)? } else { cfg.dataset()? };
    if data.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok(data)
}

fn require(file: PathBuf, hint: &str) -> Result<PathBuf, Failure> {
    if file.exists() {
        Ok(file)
    } else {
        Err(Failure::Data(format!("{} not found; run `{hint}` first", file.display())))
    }
}

fn ingest(cfg: &Config) -> Outcome {
    let data = cfg.dataset()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let mut text = String::new();
    for m in &data {
        text.push_str(&m.smiles);
        text.push('\n');
    }
    let out = path(cfg, DATASET);
    fs::write(&out, text)?;
    let atoms: usize = data.iter().map(|m| m.graph.n_atoms()).sum();
    println!("{} molecules ({:.1} heavy atoms on average) -> {}", data.len(), atoms as f64 / data.len() as f64, out.display());
    Ok(())
}

fn pretrain(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let ckpt = path(cfg, PRETRAINED);
    let mut model = if ckpt.exists() {
        DeFactor::<f32>::load(&ckpt)?
    } else {
        DeFactor::<f32>::new(cfg.model(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
    };
    let mut report = Report::create(&path(cfg, "pretrain.jsonl"))?;
    let mut failed = None;
    pretrain_partial_ae(&mut model, &data, &cfg.train(), &mut |m| {
        println!("{}", m.to_json());
        if let Err(e) = report.write(m) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    model.save(&ckpt, true)?;
    println!("saved {}", ckpt.display());
    Ok(())
}

fn train(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let ckpt = path(cfg, TRAINED);
    let source = if ckpt.exists() { ckpt.clone() } else { require(path(cfg, PRETRAINED), "defactor pretrain")? };
    let mut model = DeFactor::<f32>::load(&source)?;
    let mut report = Report::create(&path(cfg, "train.jsonl"))?;
    let mut failed = None;
    train_autoencoder(&mut model, &data, &cfg.train(), &mut |m| {
        println!("{}", m.to_json());
        if let Err(e) = report.write(m) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    model.save(&ckpt, true)?;
    let acc = reconstruction_accuracy(&model, &data);
    report.write(&json!({"summary": true, "accuracy": acc.overall, "correct": acc.correct, "total": acc.total}))?;
    println!("reconstruction accuracy {:.3} ({}/{}); saved {}", acc.overall, acc.correct, acc.total, ckpt.display());
    Ok(())
}

fn train_cond(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let base = DeFactor::<f32>::load(require(path(cfg, TRAINED), "defactor train")?)?;
    let stats = PropertyStats::of_dataset(&data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ConditionalModel::from_autoencoder(&base, stats, &mut rng)?;
    let (cc, tc) = (cfg.conditional(), cfg.train());
    let mut report = Report::create(&path(cfg, "train_cond.jsonl"))?;
    let disc = pretrain_discriminator(&mut model, &data, &cc, &tc)?;
    println!("predictor rmse: train {:.3}, held out {:.3} ({} molecules)", disc.train_rmse, disc.heldout_rmse, disc.heldout_count);
    report.write(&json!({"predictor": disc}))?;
    let mut failed = None;
    train_conditional(&mut model, &data, &cc, &tc, &mut |m| {
        println!("{}", m.to_json());
        if let Err(e) = report.write(m) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    let out = path(cfg, CONDITIONAL);
    model.save(&out, false)?;
    println!("saved {}", out.display());
    Ok(())
}

fn reconstruct(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let model = DeFactor::<f32>::load(require(path(cfg, TRAINED), "defactor train")?)?;
    let mut report = Report::create(&path(cfg, "reconstruct.jsonl"))?;
    for m in &data {
        let out = model.reconstruct(&m.graph)?;
        report.write(&json!({
            "smiles_in": m.smiles,
            "smiles_out": out.as_ref().map(to_smiles),
            "exact": out.as_ref() == Some(&m.graph),
        }))?;
    }
    let acc = reconstruction_accuracy(&model, &data);
    report.write(&json!({"summary": true, "accuracy": acc.overall, "correct": acc.correct, "total": acc.total, "by_size": acc.by_size}))?;
    println!("reconstruction accuracy {:.3} ({}/{})", acc.overall, acc.correct, acc.total);
    Ok(())
}

fn generate(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let model = ConditionalModel::<f32>::load(require(path(cfg, CONDITIONAL), "defactor train-cond")?)?;
    let queries = &data[..cfg.sweep_molecules.min(data.len())];
    let sweep = conditional_sweep(&model, queries, cfg.sweep_width, cfg.sweep_points)?;
    let mut report = Report::create(&path(cfg, "sweep.jsonl"))?;
    for m in &sweep.molecules {
        report.write(m)?;
    }
    report.write(&json!({"summary": true, "pooled": sweep.pooled, "validity_rate": sweep.validity_rate}))?;
    fs::write(path(cfg, "sweep.tsv"), sweep.table())?;
    println!(
        "pooled correlation {:.3}{}; validity {:.3}",
        sweep.pooled.value,
        if sweep.pooled.degenerate { " (undefined)" } else { "" },
        sweep.validity_rate
    );
    Ok(())
}

fn optimize(cfg: &Config) -> Outcome {
    let data = dataset(cfg)?;
    let model = ConditionalModel::<f32>::load(require(path(cfg, CONDITIONAL), "defactor train-cond")?)?;
    let result = constrained_optimize(&model, &data, &cfg.optimize())?;
    let mut report = Report::create(&path(cfg, "optimize.jsonl"))?;
    for r in &result.records {
        report.write(r)?;
    }
    report.write(&json!({"summary": true, "thresholds": result.summaries}))?;
    for s in &result.summaries {
        println!(
            "delta {:.1}: success {:.3}, improvement {:.3} ± {:.3}, similarity {:.3} ± {:.3}",
            s.delta, s.success_rate, s.improvement_mean, s.improvement_std, s.similarity_mean, s.similarity_std
        );
    }
    Ok(())
}

fn run_gradcheck(cfg: &Config) -> Outcome {
    let report = gradcheck::run_suite(cfg.seed)?;
    let mut out = Report::create(&path(cfg, "gradcheck.jsonl"))?;
    for c in &report.checks {
        println!("{:<36} {:>6} entries  max rel err {:.3e}", c.name, c.entries, c.max_rel_error);
        out.write(c)?;
    }
    let worst = report.max_rel_error();
    out.write(&json!({"summary": true, "max_rel_error": worst, "tolerance": gradcheck::TOLERANCE}))?;
    println!("max relative error {worst:.3e}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!("gradient check failed: {worst:.3e} > {:e}", gradcheck::TOLERANCE)))
    }
}
