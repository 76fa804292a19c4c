//! Property-conditioned decoding: a property predictor trained on continuous
//! graph approximations, and the alternating reconstruction /
//! mutual-information training that makes the decoder follow a requested
//! property value.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chem::{proxy_logp, tensorize, GraphTensors, MolecularGraph, Molecule, BOND_TYPES};
use crate::decoder::{discretize, GraphVars, ProbabilisticGraph};
use crate::encoder::{normalized_adjacency_on_tape, Aggregator, GcnStack};
use crate::error::{Error, Result};
use crate::model::{DeFactor, ModelConfig};
use crate::nn::{Binder, Initializer, ParamSource};
use crate::scalar::{lit, Scalar};
use crate::tensor::{ParameterStore, Tape, Tensor, Var};
use crate::training::{recon_loss_vars, Reconstructor, TrainConfig};

/// Training-set statistics of the conditioning property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

const STAT_KEYS: [&str; 4] = ["y_mean", "y_std", "y_min", "y_max"];

impl PropertyStats {
    /// Statistics of `ys`. A spread below `1e-6` is replaced by 1 so that
    /// normalization stays finite for constant labels.
    pub fn from_values(ys: &[f64]) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() < 1e-6 { 1.0 } else { var.sqrt() };
        let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { mean, std, min, max })
    }

    pub fn of_dataset(dataset: &[Molecule]) -> Result<Self> {
        Self::from_values(&dataset.iter().map(|m| proxy_logp(&m.graph)).collect::<Vec<_>>())
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }

    fn write_meta<S: Scalar>(&self, store: &mut ParameterStore<S>) {
        for (key, v) in STAT_KEYS.iter().zip([self.mean, self.std, self.min, self.max]) {
            store.set_meta(key, Tensor::new(vec![1], vec![lit(v)]).expect("one entry"));
        }
    }

    fn read_meta<S: Scalar>(store: &ParameterStore<S>) -> Result<Self> {
        let mut v = [0.0; 4];
        for (slot, key) in v.iter_mut().zip(STAT_KEYS) {
            *slot = store.meta(key).ok_or_else(|| Error::BadCheckpoint(format!("missing metadata `meta.{key}`")))?.data()[0].to_f64_lossy();
        }
        Ok(Self { mean: v[0], std: v[1], min: v[2], max: v[3] })
    }
}

/// Property predictor over (possibly continuous) graphs: edge-weighted
/// graph convolutions, an LSTM over the node rows and a scalar read-out.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub gcn: GcnStack,
    pub aggregator: Aggregator,
}

impl Discriminator {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, config: &ModelConfig) -> Result<Self> {
        let mut widths = vec![crate::chem::ATOM_TYPES];
        widths.extend(std::iter::repeat_n(config.hidden, config.gcn_layers.max(1)));
        let gcn = GcnStack::new(src, "disc.gcn", &widths)?;
        let aggregator = Aggregator::new(src, "disc", config.hidden, config.hidden, 1)?;
        Ok(Self { gcn, aggregator })
    }

    /// Predicted normalized property (`1 x 1`) of nodes `n x d` and edges
    /// `n x n x e`. Discrete graphs go through the same path as their
    /// `{0, 1}` cast.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, nodes: Var, edges: Var) -> Result<Var> {
        let mut adj = Vec::with_capacity(BOND_TYPES);
        for k in 0..BOND_TYPES {
            let slice = tape.select_last(edges, k)?;
            adj.push(Some(normalized_adjacency_on_tape(tape, slice)?));
        }
        let h = self.gcn.forward(tape, nodes, &adj)?;
        self.aggregator.forward(tape, h, None)
    }

    /// Prediction for a discrete graph.
    pub fn predict_discrete<S: Scalar>(&self, tape: &mut Tape<'_, S>, g: &GraphTensors) -> Result<Var> {
        let nodes = tape.constant(g.nodes_tensor());
        let edges = tape.constant(g.edges_tensor());
        self.forward(tape, nodes, edges)
    }

    /// Prediction for a probabilistic graph given as values.
    pub fn predict_values<S: Scalar>(&self, tape: &mut Tape<'_, S>, pg: &ProbabilisticGraph<S>) -> Result<Var> {
        let nodes = tape.constant(pg.nodes.clone());
        let edges = tape.constant(pg.edges.clone());
        self.forward(tape, nodes, edges)
    }
}

/// Hyperparameters of discriminator pretraining and conditional training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalConfig {
    /// Weight of the property term for samples drawn from the prior.
    pub alpha: f64,
    /// Weight of the property term on observed data.
    pub beta: f64,
    pub epochs_disc: usize,
    pub epochs_cond: usize,
    /// Every `heldout_every`-th molecule is held out from discriminator
    /// training to measure its error.
    pub heldout_every: usize,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self { alpha: 0.9, beta: 0.5, epochs_disc: 100, epochs_cond: 20, heldout_every: 5 }
    }
}

impl ConditionalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Conditional autoencoder with its property predictor and statistics.
#[derive(Debug, Clone)]
pub struct ConditionalModel<S: Scalar> {
    pub ae: DeFactor<S>,
    pub disc: Discriminator,
    pub stats: PropertyStats,
}

/// Prefix of the predictor's parameters.
pub const DISC_PREFIX: &str = "disc.";

impl<S: Scalar> ConditionalModel<S> {
    /// Builds a conditional model from a trained unconditional one. Shared
    /// parameters are copied; the generator's input maps gain one zero row
    /// for the property so that the initial decoder ignores it.
    pub fn from_autoencoder<R: Rng + ?Sized>(base: &DeFactor<S>, stats: PropertyStats, rng: &mut R) -> Result<Self> {
        let old = base.config();
        if old.cond_dim != 0 {
            return Err(Error::BadCheckpoint("autoencoder is already conditional".into()));
        }
        let config = ModelConfig { cond_dim: 1, ..old };
        // checkpoints hold single precision; round now so reloads match
        let r = |v: f64| v as f32 as f64;
        let stats = PropertyStats { mean: r(stats.mean), std: r(stats.std), min: r(stats.min), max: r(stats.max) };
        let mut ae = DeFactor::new(config, rng)?;
        ae.store.copy_matching_from(&base.store);
        let latent = old.latent_size;
        // [z, y, s] rows: insert a zero row at `latent`
        widen(&mut ae.store, &base.store, "decoder.gen.g_in.W", latent)?;
        // [h, z, y] rows: append a zero row
        let h_plus_z = old.hidden + latent;
        widen(&mut ae.store, &base.store, "decoder.gen.f_embed.0.W", h_plus_z)?;
        let disc = Discriminator::new(&mut Initializer { store: &mut ae.store, rng }, &config)?;
        stats.write_meta(&mut ae.store);
        Ok(Self { ae, disc, stats })
    }

    pub fn from_store(store: ParameterStore<S>) -> Result<Self> {
        let stats = PropertyStats::read_meta(&store)?;
        let ae = DeFactor::from_store(store)?;
        if ae.config().cond_dim != 1 {
            return Err(Error::BadCheckpoint("not a conditional model".into()));
        }
        let disc = Discriminator::new(&mut Binder { store: &ae.store }, &ae.config())?;
        Ok(Self { ae, disc, stats })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(ParameterStore::from_checkpoint(&crate::tensor::Checkpoint::load(path)?))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, with_optimizer: bool) -> Result<()> {
        self.ae.save(path, with_optimizer)
    }

    /// Decodes `z` (`1 x latent`) toward property value `y_star`.
    pub fn conditional_decode(&self, z: &Tensor<S>, y_star: f64) -> Result<Option<ProbabilisticGraph<S>>> {
        let y = lit::<S>(self.stats.normalize(y_star));
        self.ae.decode(z, Some(&[y]))
    }

    /// Discrete molecule decoded from `g`'s latent code toward `y_star`.
    pub fn generate(&self, g: &MolecularGraph, y_star: f64) -> Result<Option<MolecularGraph>> {
        let z = self.ae.encode(&tensorize(g))?;
        Ok(self.conditional_decode(&z, y_star)?.and_then(|pg| discretize(&pg)))
    }

    /// Predicted property (original units) of a discrete graph.
    pub fn predict(&self, g: &GraphTensors) -> Result<f64> {
        let mut tape = Tape::with_store(&self.ae.store);
        let y = self.disc.predict_discrete(&mut tape, g)?;
        Ok(self.stats.denormalize(tape.value(y).data()[0].to_f64_lossy()))
    }

    /// Predicted property (original units) of a probabilistic graph.
    pub fn predict_continuous(&self, pg: &ProbabilisticGraph<S>) -> Result<f64> {
        let mut tape = Tape::with_store(&self.ae.store);
        let y = self.disc.predict_values(&mut tape, pg)?;
        Ok(self.stats.denormalize(tape.value(y).data()[0].to_f64_lossy()))
    }
}

fn widen<S: Scalar>(dst: &mut ParameterStore<S>, src: &ParameterStore<S>, name: &str, at: usize) -> Result<()> {
    let old = src.get(name).ok_or_else(|| Error::BadCheckpoint(format!("missing parameter `{name}`")))?;
    let id = dst.id(name)?;
    let cols = old.cols();
    let mut data = Vec::with_capacity(old.len() + cols);
    data.extend_from_slice(&old.data()[..at * cols]);
    data.extend(std::iter::repeat_n(S::zero(), cols));
    data.extend_from_slice(&old.data()[at * cols..]);
    let t = Tensor::new(vec![old.rows() + 1, cols], data)?;
    if t.shape() != dst.value(id).shape() {
        return Err(Error::BadCheckpoint(format!("cannot widen `{name}`")));
    }
    *dst.value_mut(id) = t;
    Ok(())
}

/// The partial autoencoder's reading of `g`: graph convolutions decoded
/// directly into edge, node and existence probabilities.
pub fn continuous_approximation<S: Scalar>(model: &DeFactor<S>, g: &GraphTensors) -> Result<ProbabilisticGraph<S>> {
    model.partial_reconstruction(g)
}

/// Root-mean-square errors of the property predictor, in property units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscriminatorReport {
    pub epochs: usize,
    pub train_rmse: f64,
    pub heldout_rmse: f64,
    pub heldout_count: usize,
}

fn disc_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) | epoch as u64);
    rng
}

fn squared_error<S: Scalar>(tape: &mut Tape<'_, S>, pred: Var, target: f64) -> Result<Var> {
    let diff = tape.add_scalar(pred, lit(-target));
    Ok(tape.mul(diff, diff)?)
}

/// Fits the property predictor to the partial autoencoder's continuous
/// approximations by mean squared error on normalized labels. Only `disc.*`
/// parameters change.
pub fn pretrain_discriminator<S: Scalar>(
    model: &mut ConditionalModel<S>,
    dataset: &[Molecule],
    cfg: &ConditionalConfig,
    train: &TrainConfig,
) -> Result<DiscriminatorReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let every = cfg.heldout_every;
    let held = |i: usize| every > 1 && dataset.len() > 1 && i % every == every - 1;
    let mut inputs = Vec::with_capacity(dataset.len());
    for m in dataset {
        let pg = continuous_approximation(&model.ae, &tensorize(&m.graph))?;
        inputs.push((pg, model.stats.normalize(proxy_logp(&m.graph))));
    }
    let train_idx: Vec<usize> = (0..dataset.len()).filter(|&i| !held(i)).collect();
    let held_idx: Vec<usize> = (0..dataset.len()).filter(|&i| held(i)).collect();

    for epoch in 0..cfg.epochs_disc {
        let mut rng = disc_rng(train.seed, 5, epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        model.ae.store.unfreeze_all();
        for batch in order.chunks(train.batch.max(1)) {
            model.ae.store.zero_grad();
            let scale = lit::<S>(1.0 / batch.len() as f64);
            for &i in batch {
                let grads = {
                    let mut tape = Tape::with_store(&model.ae.store);
                    let pred = model.disc.predict_values(&mut tape, &inputs[i].0)?;
                    let loss = squared_error(&mut tape, pred, inputs[i].1)?;
                    tape.backward(loss)?
                };
                model.ae.store.accumulate(&grads, scale);
            }
            freeze_all_but(&mut model.ae.store, DISC_PREFIX);
            model.ae.store.adam_step(&train.adam);
            model.ae.store.unfreeze_all();
        }
    }
    let rmse = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for &i in idx {
            let pred = model.predict_continuous(&inputs[i].0)?;
            sum += (pred - model.stats.denormalize(inputs[i].1)).powi(2);
        }
        Ok((sum / idx.len() as f64).sqrt())
    };
    Ok(DiscriminatorReport {
        epochs: cfg.epochs_disc,
        train_rmse: rmse(&train_idx)?,
        heldout_rmse: rmse(&held_idx)?,
        heldout_count: held_idx.len(),
    })
}

fn freeze_all_but<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str) {
    store.set_frozen("", true);
    store.set_frozen(prefix, false);
}

/// Mean losses of one conditional-training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalMetrics {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_prop: f64,
    pub l_cond: f64,
}

impl ConditionalMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

fn decode_for<S: Scalar, R: Rng + ?Sized>(
    model: &ConditionalModel<S>,
    tape: &mut Tape<'_, S>,
    g: &GraphTensors,
    y_norm: f64,
    rng: &mut R,
) -> Result<GraphVars> {
    let ae = &model.ae.model;
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.shuffle(rng);
    let enc = ae.encode(tape, g, Some(&order))?;
    let y = tape.constant(Tensor::scalar(lit(y_norm)));
    let cond = ae.condition(tape, enc.z, Some(y))?;
    ae.decode_fixed(tape, cond, g.n(), None, rng)
}

/// Alternates, per mini-batch, a reconstruction step on observed
/// `(graph, property)` pairs (encoder and decoder updated on
/// `L_rec + beta * L_prop`) and a step on properties drawn uniformly from
/// the training range (decoder only, on `alpha * L_cond`). The predictor is
/// never updated.
pub fn train_conditional<S: Scalar>(
    model: &mut ConditionalModel<S>,
    dataset: &[Molecule],
    cfg: &ConditionalConfig,
    train: &TrainConfig,
    on_epoch: &mut dyn FnMut(&ConditionalMetrics),
) -> Result<Vec<ConditionalMetrics>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let data: Vec<(GraphTensors, f64)> =
        dataset.iter().map(|m| (tensorize(&m.graph), model.stats.normalize(proxy_logp(&m.graph)))).collect();
    let (lo, hi) = (model.stats.normalize(model.stats.min), model.stats.normalize(model.stats.max));
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs_cond {
        let mut rng = disc_rng(train.seed, 6, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut l_rec, mut l_prop, mut l_cond) = (0.0, 0.0, 0.0);
        for batch in order.chunks(train.batch.max(1)) {
            let scale = lit::<S>(1.0 / batch.len() as f64);

            model.ae.store.zero_grad();
            for &i in batch {
                let (g, y) = &data[i];
                let grads = {
                    let mut tape = Tape::with_store(&model.ae.store);
                    let pg = decode_for(model, &mut tape, g, *y, &mut rng)?;
                    let rec = recon_loss_vars(&mut tape, &pg, g)?;
                    let pred = model.disc.forward(&mut tape, pg.nodes, pg.edges)?;
                    let prop = squared_error(&mut tape, pred, *y)?;
                    l_rec += tape.value(rec.total).data()[0].to_f64_lossy();
                    l_prop += tape.value(prop).data()[0].to_f64_lossy();
                    let weighted = tape.scale(prop, lit(cfg.beta));
                    let loss = tape.add(rec.total, weighted)?;
                    tape.backward(loss)?
                };
                model.ae.store.accumulate(&grads, scale);
            }
            model.ae.store.set_frozen(DISC_PREFIX, true);
            model.ae.store.adam_step(&train.adam);
            model.ae.store.unfreeze_all();

            if cfg.alpha == 0.0 {
                continue;
            }
            model.ae.store.zero_grad();
            for &i in batch {
                let g = &data[i].0;
                let y_prior = rng.random_range(lo..=hi);
                let grads = {
                    let mut tape = Tape::with_store(&model.ae.store);
                    let pg = decode_for(model, &mut tape, g, y_prior, &mut rng)?;
                    let pred = model.disc.forward(&mut tape, pg.nodes, pg.edges)?;
                    let cond = squared_error(&mut tape, pred, y_prior)?;
                    l_cond += tape.value(cond).data()[0].to_f64_lossy();
                    let loss = tape.scale(cond, lit(cfg.alpha));
                    tape.backward(loss)?
                };
                model.ae.store.accumulate(&grads, scale);
            }
            model.ae.store.set_frozen(DISC_PREFIX, true);
            model.ae.store.set_frozen("encoder.", true);
            model.ae.store.adam_step(&train.adam);
            model.ae.store.unfreeze_all();
        }
        let k = data.len() as f64;
        let m = ConditionalMetrics { epoch, l_rec: l_rec / k, l_prop: l_prop / k, l_cond: l_cond / k };
        on_epoch(&m);
        out.push(m);
    }
    Ok(out)
}

/// A model that maps a molecule to a latent code and decodes a code toward
/// a requested property value.
pub trait ConditionalGenerator {
    type Latent;
    fn encode(&self, g: &MolecularGraph) -> Result<Self::Latent>;
    fn decode(&self, z: &Self::Latent, y_star: f64) -> Result<Option<MolecularGraph>>;
}

impl<S: Scalar> ConditionalGenerator for ConditionalModel<S> {
    type Latent = Tensor<S>;

    fn encode(&self, g: &MolecularGraph) -> Result<Tensor<S>> {
        self.ae.encode(&tensorize(g))
    }

    fn decode(&self, z: &Tensor<S>, y_star: f64) -> Result<Option<MolecularGraph>> {
        Ok(self.conditional_decode(z, y_star)?.and_then(|pg| discretize(&pg)))
    }
}

impl<S: Scalar> Reconstructor for ConditionalModel<S> {
    /// Decodes toward the molecule's own property value.
    fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph> {
        self.generate(g, proxy_logp(g)).ok().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{bundled_corpus, parse_smiles};

    fn small() -> ModelConfig {
        ModelConfig { latent_size: 6, gcn_layers: 2, hidden: 8, embed_dim: 7, cond_dim: 0, n_max: 12 }
    }

    fn setup() -> (DeFactor<f64>, ConditionalModel<f64>, Vec<Molecule>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = DeFactor::<f64>::new(small(), &mut rng).unwrap();
        let data: Vec<Molecule> = bundled_corpus().into_iter().take(8).collect();
        let stats = PropertyStats::of_dataset(&data).unwrap();
        let cm = ConditionalModel::from_autoencoder(&base, stats, &mut rng).unwrap();
        (base, cm, data)
    }

    #[test]
    fn widened_model_ignores_the_property_initially() {
        let (base, cm, _) = setup();
        let g = tensorize(&parse_smiles("CC(=O)N").unwrap());
        let z = base.encode(&g).unwrap();
        assert_eq!(cm.ae.encode(&g).unwrap(), z);
        let plain = base.decode(&z, None).unwrap();
        for y in [-3.0, 0.0, 5.0] {
            assert_eq!(cm.conditional_decode(&z, y).unwrap(), plain);
        }
    }

    #[test]
    fn checkpoint_carries_statistics() {
        let (_, cm, _) = setup();
        let back = ConditionalModel::<f64>::from_store(ParameterStore::from_checkpoint(&cm.ae.store.to_checkpoint(false))).unwrap();
        assert_eq!(back.stats, cm.stats);
        for key in STAT_KEYS {
            assert_eq!(back.ae.store.meta(key).unwrap().shape(), &[1]);
        }
    }

    #[test]
    fn continuous_approximation_is_strictly_inside_the_unit_interval() {
        let (base, _, _) = setup();
        let g = tensorize(&parse_smiles("c1ccccc1O").unwrap());
        let pg = continuous_approximation(&base, &g).unwrap();
        assert!(pg.satisfies_invariants(1e-9));
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!((0..4).all(|k| {
                        let v = pg.edges.get(&[i, j, k]);
                        v > 0.0 && v < 1.0
                    }));
                }
            }
        }
        assert_ne!(pg.edges, g.edges_tensor::<f64>());
    }

    #[test]
    fn constant_labels_give_a_constant_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = DeFactor::<f64>::new(small(), &mut rng).unwrap();
        // ethanol written four ways: one label
        let data: Vec<Molecule> = ["CCO", "OCC", "C(O)C", "CCO"].iter().map(|s| Molecule::from_smiles(s).unwrap()).collect();
        let stats = PropertyStats::of_dataset(&data).unwrap();
        assert_eq!(stats.std, 1.0);
        let mut cm = ConditionalModel::from_autoencoder(&base, stats, &mut rng).unwrap();
        let cfg = ConditionalConfig { epochs_disc: 200, heldout_every: 0, ..ConditionalConfig::default() };
        let train = TrainConfig { batch: 4, adam: crate::tensor::AdamConfig { lr: 1e-2, ..Default::default() }, ..TrainConfig::default() };
        let report = pretrain_discriminator(&mut cm, &data, &cfg, &train).unwrap();
        assert!(report.train_rmse < 0.05, "{report:?}");
    }

    #[test]
    fn conditional_training_never_touches_the_predictor() {
        let (_, mut cm, data) = setup();
        let before: Vec<Tensor<f64>> =
            cm.ae.store.names().filter(|n| n.starts_with(DISC_PREFIX)).map(|n| cm.ae.store.get(n).unwrap().clone()).collect();
        let enc_before = cm.ae.store.get("encoder.g_agg.W").unwrap().clone();
        let cfg = ConditionalConfig { epochs_cond: 2, ..ConditionalConfig::default() };
        let train = TrainConfig { batch: 4, ..TrainConfig::default() };
        let metrics = train_conditional(&mut cm, &data, &cfg, &train, &mut |_| {}).unwrap();
        assert_eq!(metrics.len(), 2);
        let after: Vec<Tensor<f64>> =
            cm.ae.store.names().filter(|n| n.starts_with(DISC_PREFIX)).map(|n| cm.ae.store.get(n).unwrap().clone()).collect();
        assert_eq!(before, after);
        assert_ne!(&enc_before, cm.ae.store.get("encoder.g_agg.W").unwrap());
    }

    #[test]
    fn zero_alpha_skips_the_prior_phase() {
        let (_, cm, data) = setup();
        let cfg = ConditionalConfig { alpha: 0.0, epochs_cond: 1, ..ConditionalConfig::default() };
        let train = TrainConfig { batch: 4, ..TrainConfig::default() };
        let mut a = cm.clone();
        let m = train_conditional(&mut a, &data, &cfg, &train, &mut |_| {}).unwrap();
        assert_eq!(m[0].l_cond, 0.0);
        assert_eq!(a.ae.store.step(), 2, "one update per batch");
    }

    #[test]
    fn prior_phase_gradient_reaches_the_generator_only_through_decoding() {
        let (_, cm, data) = setup();
        let g = tensorize(&data.iter().find(|m| m.graph.n_atoms() >= 4).unwrap().graph);
        let mut tape = Tape::with_store(&cm.ae.store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pg = decode_for(&cm, &mut tape, &g, 0.7, &mut rng).unwrap();
        let pred = cm.disc.forward(&mut tape, pg.nodes, pg.edges).unwrap();
        let loss = squared_error(&mut tape, pred, 0.7).unwrap();
        let grads = tape.backward(loss).unwrap();
        let nonzero = |prefix: &str| {
            grads.params().filter(|(id, _)| cm.ae.store.name(*id).starts_with(prefix)).any(|(_, t)| t.data().iter().any(|&x| x != 0.0))
        };
        assert!(nonzero("decoder.gen."));
        assert!(nonzero("decoder.factor."));
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let bad = ConditionalConfig { alpha: 1.5, ..ConditionalConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
