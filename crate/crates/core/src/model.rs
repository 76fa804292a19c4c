//! The assembled autoencoder: architecture hyperparameters, parameter
//! layout, and the forward paths used by training and inference.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{GraphTensors, MolecularGraph, ATOM_TYPES};
use crate::decoder::{discretize, EmbeddingGenerator, FactorizationDecoder, GraphVars, ProbabilisticGraph, Teacher, Unroll};
use crate::encoder::{Encoded, GraphEncoder};
use crate::error::{Error, Result};
use crate::nn::{Binder, Initializer, ParamSource};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Checkpoint, ParameterStore, Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub latent_size: usize,
    pub gcn_layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Width of the property vector appended to the latent code (0 for the
    /// plain autoencoder).
    pub cond_dim: usize,
    /// Maximum number of generator steps at inference.
    pub n_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { latent_size: 56, gcn_layers: 3, hidden: 128, embed_dim: 128, cond_dim: 0, n_max: 40 }
    }
}

const CONFIG_KEYS: [&str; 6] = ["latent_size", "gcn_layers", "hidden", "embed_dim", "cond_dim", "n_max"];

impl ModelConfig {
    fn values(&self) -> [usize; 6] {
        [self.latent_size, self.gcn_layers, self.hidden, self.embed_dim, self.cond_dim, self.n_max]
    }

    /// Input width of each graph convolution followed by the output width of
    /// the last one.
    pub fn gcn_widths(&self) -> Vec<usize> {
        let mut w = vec![ATOM_TYPES];
        w.extend(std::iter::repeat_n(self.hidden, self.gcn_layers.saturating_sub(1)));
        w.push(self.embed_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().iter().enumerate().any(|(i, &v)| v == 0 && CONFIG_KEYS[i] != "cond_dim") {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }

    fn write_meta<S: Scalar>(&self, store: &mut ParameterStore<S>) {
        for (key, v) in CONFIG_KEYS.iter().zip(self.values()) {
            store.set_meta(&format!("model.{key}"), Tensor::new(vec![1], vec![lit(v as f64)]).expect("one entry"));
        }
    }

    fn read_meta<S: Scalar>(store: &ParameterStore<S>) -> Result<Self> {
        let mut v = [0usize; 6];
        for (slot, key) in v.iter_mut().zip(CONFIG_KEYS) {
            let t =
                store.meta(&format!("model.{key}")).ok_or_else(|| Error::BadCheckpoint(format!("missing metadata `meta.model.{key}`")))?;
            *slot = t.data()[0].to_f64_lossy() as usize;
        }
        Ok(Self { latent_size: v[0], gcn_layers: v[1], hidden: v[2], embed_dim: v[3], cond_dim: v[4], n_max: v[5] })
    }
}

/// Parameter prefixes trained by the partial autoencoder and frozen while the
/// generator learns to reproduce their embeddings.
pub const PRETRAINED_PREFIXES: [&str; 4] = ["encoder.gcn.", "decoder.factor.", "decoder.node.", "decoder.exist."];

/// Parameter handles of the full model.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: ModelConfig,
    pub encoder: GraphEncoder,
    pub generator: EmbeddingGenerator,
    pub factor: FactorizationDecoder,
}

impl Autoencoder {
    fn build<S: Scalar>(config: ModelConfig, src: &mut impl ParamSource<S>) -> Result<Self> {
        config.validate()?;
        let encoder = GraphEncoder::new(src, &config.gcn_widths(), config.hidden, config.latent_size)?;
        let factor = FactorizationDecoder::new(src, config.embed_dim)?;
        let generator = EmbeddingGenerator::new(src, config.latent_size + config.cond_dim, config.hidden, config.embed_dim)?;
        Ok(Self { config, encoder, generator, factor })
    }

    /// Registers freshly initialized parameters in `store`.
    pub fn init<S: Scalar, R: Rng + ?Sized>(config: ModelConfig, store: &mut ParameterStore<S>, rng: &mut R) -> Result<Self> {
        let model = Self::build(config, &mut Initializer { store, rng })?;
        config.write_meta(store);
        Ok(model)
    }

    /// Binds to parameters already present in `store`.
    pub fn bind<S: Scalar>(config: ModelConfig, store: &ParameterStore<S>) -> Result<Self> {
        Self::build(config, &mut Binder { store })
    }

    /// Graph convolutions decoded directly, skipping the aggregator and the
    /// generator. A zero embedding row is appended as the negative example
    /// for the existence head, so `exist` has `n + 1` rows.
    pub fn partial_forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, g: &GraphTensors) -> Result<GraphVars> {
        let h = self.encoder.embed(tape, g)?;
        self.decode_embeddings(tape, h, true)
    }

    /// Edges, nodes and existence for embeddings `s`, optionally with the
    /// trailing zero row for the existence head.
    pub fn decode_embeddings<S: Scalar>(&self, tape: &mut Tape<'_, S>, s: Var, pad_exist: bool) -> Result<GraphVars> {
        let edges = self.factor.decode_edges(tape, s)?;
        let nodes = self.factor.decode_nodes(tape, s)?;
        let exist_in = if pad_exist {
            let pad = tape.constant(Tensor::zeros(&[1, self.config.embed_dim]));
            tape.concat_rows(&[s, pad])?
        } else {
            s
        };
        let exist = self.factor.existence(tape, exist_in)?;
        Ok(GraphVars { edges, nodes, exist })
    }

    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, g: &GraphTensors, order: Option<&[usize]>) -> Result<Encoded> {
        self.encoder.encode(tape, g, order)
    }

    /// Conditioning vector: the latent code with the property row appended
    /// when the model is conditional.
    pub fn condition<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var, y: Option<Var>) -> Result<Var> {
        match (self.config.cond_dim, y) {
            (0, None) => Ok(z),
            (d, Some(y)) if d == tape.shape(y)[1] => Ok(tape.concat_cols(&[z, y])?),
            (d, _) => Err(Error::Config(format!("model expects a property vector of width {d}"))),
        }
    }

    /// Training-time decode of an `n`-node graph: `n + 1` generator steps,
    /// graph built from the first `n`.
    pub fn decode_fixed<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        cond: Var,
        n: usize,
        teacher: Option<Teacher>,
        rng: &mut R,
    ) -> Result<GraphVars> {
        let gen = self.generator.generate(tape, cond, &self.factor, Unroll::Fixed(n + 1), teacher, rng)?;
        let s = gen.embeddings(tape)?.expect("n >= 1");
        let edges = self.factor.decode_edges(tape, s)?;
        let nodes = self.factor.decode_nodes(tape, s)?;
        Ok(GraphVars { edges, nodes, exist: gen.exist })
    }

    /// Inference decode: unroll until the existence head stops, at most
    /// `n_max` steps. `None` when not even one node exists.
    pub fn decode_until_stop<S: Scalar>(&self, tape: &mut Tape<'_, S>, cond: Var) -> Result<Option<GraphVars>> {
        // no teacher, so the generator never draws from this
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let unroll = Unroll::UntilStop { n_max: self.config.n_max };
        let gen = self.generator.generate(tape, cond, &self.factor, unroll, None, &mut no_rng)?;
        let Some(s) = gen.embeddings(tape)? else { return Ok(None) };
        let edges = self.factor.decode_edges(tape, s)?;
        let nodes = self.factor.decode_nodes(tape, s)?;
        Ok(Some(GraphVars { edges, nodes, exist: gen.exist }))
    }
}

/// A model together with its parameters.
#[derive(Debug, Clone)]
pub struct DeFactor<S: Scalar> {
    pub model: Autoencoder,
    pub store: ParameterStore<S>,
}

impl<S: Scalar> DeFactor<S> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParameterStore::new();
        let model = Autoencoder::init(config, &mut store, rng)?;
        Ok(Self { model, store })
    }

    pub fn from_store(store: ParameterStore<S>) -> Result<Self> {
        let config = ModelConfig::read_meta(&store)?;
        let model = Autoencoder::bind(config, &store)?;
        Ok(Self { model, store })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_store(ParameterStore::from_checkpoint(ck))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, with_optimizer: bool) -> Result<()> {
        Ok(self.store.to_checkpoint(with_optimizer).save(path)?)
    }

    pub fn config(&self) -> ModelConfig {
        self.model.config
    }

    /// Latent code of `g` with nodes in canonical order.
    pub fn encode(&self, g: &GraphTensors) -> Result<Tensor<S>> {
        let mut tape = Tape::with_store(&self.store);
        let e = self.model.encode(&mut tape, g, None)?;
        Ok(tape.value(e.z).clone())
    }

    /// Probabilistic graph decoded from a latent code and, for conditional
    /// models, a normalized property vector.
    pub fn decode(&self, z: &Tensor<S>, y: Option<&[S]>) -> Result<Option<ProbabilisticGraph<S>>> {
        let mut tape = Tape::with_store(&self.store);
        let zv = tape.constant(z.clone());
        let yv = y.map(|y| tape.constant(Tensor::row_vector(y)));
        let cond = self.model.condition(&mut tape, zv, yv)?;
        Ok(self.model.decode_until_stop(&mut tape, cond)?.map(|pg| pg.value(&tape)))
    }

    /// `discretize(decode(encode(g)))` for an unconditional model.
    pub fn reconstruct(&self, g: &MolecularGraph) -> Result<Option<MolecularGraph>> {
        let z = self.encode(&crate::chem::tensorize(g))?;
        Ok(self.decode(&z, None)?.and_then(|pg| discretize(&pg)))
    }

    /// Partial-autoencoder output for `g` (graph convolutions decoded
    /// directly), as values.
    pub fn partial_reconstruction(&self, g: &GraphTensors) -> Result<ProbabilisticGraph<S>> {
        let mut tape = Tape::with_store(&self.store);
        let pg = self.model.partial_forward(&mut tape, g)?;
        Ok(pg.value(&tape))
    }
}
