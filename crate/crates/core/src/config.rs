//! Plain-text `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chem::{desk_corpus, load_dataset, Molecule};
use crate::conditional::ConditionalConfig;
use crate::error::{Error, Result};
use crate::eval::OptimizeConfig;
use crate::model::ModelConfig;
use crate::tensor::AdamConfig;
use crate::training::TrainConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DEFACTOR_SEED";

/// Every setting of a run. Each key has a default; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub latent_size: usize,
    pub gcn_layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub n_max: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate at the last end-to-end epoch; `none` keeps it constant.
    pub lr_final: Option<f64>,
    pub epochs_pretrain: usize,
    pub epochs_e1: usize,
    pub epochs_e2: usize,
    pub epochs_e3: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epochs_disc: usize,
    pub epochs_cond: usize,
    pub heldout_every: usize,
    /// Half-width of the property grid around each observed value.
    pub sweep_width: f64,
    pub sweep_points: usize,
    /// Number of dataset molecules used as sweep queries.
    pub sweep_molecules: usize,
    pub opt_steps: usize,
    pub opt_span: f64,
    pub opt_molecules: usize,
    /// SMILES file, one molecule per line; empty selects the generated
    /// desk corpus.
    pub data_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub corpus_size: usize,
    /// Seed of the generated desk corpus, independent of the training seed.
    pub corpus_seed: u64,
    pub corpus_min_atoms: usize,
    pub corpus_max_atoms: usize,
}

impl Default for Config {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let cond = ConditionalConfig::default();
        let opt = OptimizeConfig::default();
        Self {
            seed: train.seed,
            latent_size: model.latent_size,
            gcn_layers: model.gcn_layers,
            hidden: model.hidden,
            embed_dim: model.embed_dim,
            n_max: model.n_max,
            batch: train.batch,
            lr: train.adam.lr,
            lr_final: train.lr_final,
            epochs_pretrain: train.epochs_pretrain,
            epochs_e1: train.epochs_e1,
            epochs_e2: train.epochs_e2,
            epochs_e3: train.epochs_e3,
            alpha: cond.alpha,
            beta: cond.beta,
            epochs_disc: cond.epochs_disc,
            epochs_cond: cond.epochs_cond,
            heldout_every: cond.heldout_every,
            sweep_width: 2.0,
            sweep_points: 20,
            sweep_molecules: 20,
            opt_steps: opt.steps,
            opt_span: opt.span,
            opt_molecules: opt.molecules,
            data_path: None,
            out_dir: PathBuf::from("out"),
            corpus_size: 50,
            corpus_seed: 7,
            corpus_min_atoms: 3,
            corpus_max_atoms: 12,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Config {
    /// Names of all recognised keys, in file order.
    pub const KEYS: [&'static str; 30] = [
        "seed",
        "latent_size",
        "gcn_layers",
        "hidden",
        "embed_dim",
        "n_max",
        "batch",
        "lr",
        "lr_final",
        "epochs_pretrain",
        "epochs_e1",
        "epochs_e2",
        "epochs_e3",
        "alpha",
        "beta",
        "epochs_disc",
        "epochs_cond",
        "heldout_every",
        "sweep_width",
        "sweep_points",
        "sweep_molecules",
        "opt_steps",
        "opt_span",
        "opt_molecules",
        "data_path",
        "out_dir",
        "corpus_size",
        "corpus_seed",
        "corpus_min_atoms",
        "corpus_max_atoms",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "latent_size" => self.latent_size = parse(key, v)?,
            "gcn_layers" => self.gcn_layers = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "n_max" => self.n_max = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_final" => self.lr_final = if v == "none" { None } else { Some(parse(key, v)?) },
            "epochs_pretrain" => self.epochs_pretrain = parse(key, v)?,
            "epochs_e1" => self.epochs_e1 = parse(key, v)?,
            "epochs_e2" => self.epochs_e2 = parse(key, v)?,
            "epochs_e3" => self.epochs_e3 = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "epochs_disc" => self.epochs_disc = parse(key, v)?,
            "epochs_cond" => self.epochs_cond = parse(key, v)?,
            "heldout_every" => self.heldout_every = parse(key, v)?,
            "sweep_width" => self.sweep_width = parse(key, v)?,
            "sweep_points" => self.sweep_points = parse(key, v)?,
            "sweep_molecules" => self.sweep_molecules = parse(key, v)?,
            "opt_steps" => self.opt_steps = parse(key, v)?,
            "opt_span" => self.opt_span = parse(key, v)?,
            "opt_molecules" => self.opt_molecules = parse(key, v)?,
            "data_path" => self.data_path = optional_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "corpus_size" => self.corpus_size = parse(key, v)?,
            "corpus_seed" => self.corpus_seed = parse(key, v)?,
            "corpus_min_atoms" => self.corpus_min_atoms = parse(key, v)?,
            "corpus_max_atoms" => self.corpus_max_atoms = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Parses a configuration file body on top of the defaults. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Replaces the seed with the value of [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.conditional().validate()?;
        if self.batch == 0 || self.heldout_every == 0 {
            return Err(Error::Config("batch and heldout_every must be positive".into()));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.lr) || self.lr_final.is_some_and(|l| !positive(l)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.corpus_min_atoms == 0 || self.corpus_min_atoms > self.corpus_max_atoms {
            return Err(Error::Config("corpus atom range is empty".into()));
        }
        Ok(())
    }

    /// Sizes of the plain autoencoder.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            latent_size: self.latent_size,
            gcn_layers: self.gcn_layers,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            cond_dim: 0,
            n_max: self.n_max,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            batch: self.batch,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            epochs_pretrain: self.epochs_pretrain,
            epochs_e1: self.epochs_e1,
            epochs_e2: self.epochs_e2,
            epochs_e3: self.epochs_e3,
            lr_final: self.lr_final,
        }
    }

    pub fn conditional(&self) -> ConditionalConfig {
        ConditionalConfig {
            alpha: self.alpha,
            beta: self.beta,
            epochs_disc: self.epochs_disc,
            epochs_cond: self.epochs_cond,
            heldout_every: self.heldout_every,
        }
    }

    /// The configured dataset: the SMILES file at `data_path`, or the
    /// generated desk corpus when no path is set.
    pub fn dataset(&self) -> Result<Vec<Molecule>> {
        match &self.data_path {
            Some(path) => load_dataset(path),
            None => Ok(desk_corpus(self.corpus_size, self.corpus_seed, self.corpus_min_atoms, self.corpus_max_atoms)),
        }
    }

    pub fn optimize(&self) -> OptimizeConfig {
        OptimizeConfig { steps: self.opt_steps, span: self.opt_span, molecules: self.opt_molecules, ..OptimizeConfig::default() }
    }
}

/// Writes the configuration back in file form; parsing the output yields an
/// equal value.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "latent_size = {}", self.latent_size)?;
        writeln!(f, "gcn_layers = {}", self.gcn_layers)?;
        writeln!(f, "hidden = {}", self.hidden)?;
        writeln!(f, "embed_dim = {}", self.embed_dim)?;
        writeln!(f, "n_max = {}", self.n_max)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "lr = {:?}", self.lr)?;
        match self.lr_final {
            Some(l) => writeln!(f, "lr_final = {l:?}")?,
            None => writeln!(f, "lr_final = none")?,
        }
        writeln!(f, "epochs_pretrain = {}", self.epochs_pretrain)?;
        writeln!(f, "epochs_e1 = {}", self.epochs_e1)?;
        writeln!(f, "epochs_e2 = {}", self.epochs_e2)?;
        writeln!(f, "epochs_e3 = {}", self.epochs_e3)?;
        writeln!(f, "alpha = {:?}", self.alpha)?;
        writeln!(f, "beta = {:?}", self.beta)?;
        writeln!(f, "epochs_disc = {}", self.epochs_disc)?;
        writeln!(f, "epochs_cond = {}", self.epochs_cond)?;
        writeln!(f, "heldout_every = {}", self.heldout_every)?;
        writeln!(f, "sweep_width = {:?}", self.sweep_width)?;
        writeln!(f, "sweep_points = {}", self.sweep_points)?;
        writeln!(f, "sweep_molecules = {}", self.sweep_molecules)?;
        writeln!(f, "opt_steps = {}", self.opt_steps)?;
        writeln!(f, "opt_span = {:?}", self.opt_span)?;
        writeln!(f, "opt_molecules = {}", self.opt_molecules)?;
        writeln!(f, "data_path = {}", path(&self.data_path))?;
        writeln!(f, "out_dir = {}", self.out_dir.display())?;
        writeln!(f, "corpus_size = {}", self.corpus_size)?;
        writeln!(f, "corpus_seed = {}", self.corpus_seed)?;
        writeln!(f, "corpus_min_atoms = {}", self.corpus_min_atoms)?;
        writeln!(f, "corpus_max_atoms = {}", self.corpus_max_atoms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        assert_eq!(Config::parse("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn parses_values_and_comments() {
        let c = Config::parse("seed = 7\nlr = 0.01  # faster\nepochs_e3=5\ndata_path = mols.smi\nlr_final = 1e-4\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.epochs_e3, 5);
        assert_eq!(c.data_path, Some(PathBuf::from("mols.smi")));
        assert_eq!(c.lr_final, Some(1e-4));
        assert_eq!(c.train().adam.lr, 0.01);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::parse("colour = red"), Err(Error::Config(m)) if m.contains("line 1")));
        assert!(Config::parse("seed = -1").is_err());
        assert!(Config::parse("just words").is_err());
        assert!(Config::parse("alpha = 2").is_err());
        assert!(Config::parse("hidden = 0").is_err());
        assert!(Config::default().apply_override("seed").is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut c = Config::default();
        c.apply_override("seed=11").unwrap();
        c.apply_override("lr_final=0.0002").unwrap();
        c.apply_override("data_path=a/b.smi").unwrap();
        assert_eq!(Config::parse(&c.to_string()).unwrap(), c);
        let keys: Vec<String> = c.to_string().lines().map(|l| l.split(" = ").next().unwrap().to_string()).collect();
        assert_eq!(keys, Config::KEYS.to_vec());
    }
}
