//! Autoregressive embedding generation and the edge-factorized decoding of
//! embeddings into a probabilistic graph.

use rand::Rng;

use crate::chem::{AtomType, BondType, MolecularGraph, ATOM_TYPES, BOND_TYPES};
use crate::error::Result;
use crate::nn::{Init, Linear, Lstm, LstmState, ParamSource};
use crate::scalar::{lit, Scalar};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// LSTM generator producing one node embedding per step from a
/// conditioning vector (the latent code, optionally with a property
/// appended).
#[derive(Debug, Clone)]
pub struct EmbeddingGenerator {
    pub lstm: Lstm,
    pub g_in: Linear,
    pub f_embed: [Linear; 2],
    pub s0: ParamId,
    /// Width of the conditioning vector consumed by `g_in` and `f_embed`.
    pub cond_width: usize,
    pub embed_dim: usize,
}

/// Which embedding is fed back at the next step during training.
#[derive(Debug, Clone, Copy)]
pub struct Teacher {
    /// True embeddings, one row per node.
    pub embeddings: Var,
    /// Probability of feeding the teacher row instead of the model's own
    /// previous output, decided by one uniform draw per step.
    pub mix_prob: f64,
}

/// How many generator steps to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unroll {
    /// Exactly this many steps (training: `n + 1`).
    Fixed(usize),
    /// Stop at the first step whose existence probability is below 0.5, or
    /// after `n_max` steps.
    UntilStop { n_max: usize },
}

/// Output of [`EmbeddingGenerator::generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    /// One `1 x p` embedding per step.
    pub steps: Vec<Var>,
    /// The `1 x p` input fed at each step (`s_0`, then teacher or own rows).
    pub inputs: Vec<Var>,
    /// Existence probabilities, `steps x 1`.
    pub exist: Var,
    /// Number of leading steps that are treated as real nodes.
    pub nodes: usize,
}

impl Generated {
    /// The node embeddings `S` (`nodes x p`), or `None` if no node exists.
    pub fn embeddings<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> Result<Option<Var>> {
        if self.nodes == 0 {
            return Ok(None);
        }
        Ok(Some(tape.concat_rows(&self.steps[..self.nodes])?))
    }
}

impl EmbeddingGenerator {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, cond_width: usize, hidden: usize, embed_dim: usize) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::new(src, "decoder.gen.lstm", hidden, hidden)?,
            g_in: Linear::new(src, "decoder.gen.g_in", cond_width + embed_dim, hidden)?,
            f_embed: [
                Linear::new(src, "decoder.gen.f_embed.0", hidden + cond_width, hidden)?,
                Linear::new(src, "decoder.gen.f_embed.1", hidden, embed_dim)?,
            ],
            s0: src.param("decoder.gen.s0", &[1, embed_dim], Init::Uniform(0.1))?,
            cond_width,
            embed_dim,
        })
    }

    fn step<S: Scalar>(&self, tape: &mut Tape<'_, S>, cond: Var, input: Var, state: LstmState) -> Result<(Var, LstmState)> {
        let x = tape.concat_cols(&[cond, input])?;
        let x = self.g_in.forward(tape, x)?;
        let x = tape.tanh(x);
        let state = self.lstm.step(tape, x, state)?;
        let hc = tape.concat_cols(&[state.h, cond])?;
        let hidden = self.f_embed[0].forward(tape, hc)?;
        let hidden = tape.tanh(hidden);
        let s = self.f_embed[1].forward(tape, hidden)?;
        Ok((s, state))
    }

    /// Unrolls the generator from `cond` (`1 x cond_width`). The existence
    /// head of `factor` scores every step.
    pub fn generate<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        cond: Var,
        factor: &FactorizationDecoder,
        unroll: Unroll,
        teacher: Option<Teacher>,
        rng: &mut R,
    ) -> Result<Generated> {
        let limit = match unroll {
            Unroll::Fixed(n) | Unroll::UntilStop { n_max: n } => n,
        };
        let mut state = self.lstm.zero_state(tape);
        let mut steps = Vec::with_capacity(limit);
        let mut inputs = Vec::with_capacity(limit);
        let mut probs = Vec::with_capacity(limit);
        let mut nodes = None;
        for t in 0..limit {
            let input = if t == 0 {
                tape.param(self.s0)
            } else {
                let own = steps[t - 1];
                match teacher {
                    Some(tf) if rng.random::<f64>() < tf.mix_prob => tape.row(tf.embeddings, t - 1)?,
                    _ => own,
                }
            };
            inputs.push(input);
            let (s, next) = self.step(tape, cond, input, state)?;
            state = next;
            let p = factor.existence(tape, s)?;
            steps.push(s);
            probs.push(p);
            if let Unroll::UntilStop { .. } = unroll {
                if tape.value(p).data()[0] < lit(0.5) {
                    nodes = Some(t);
                    break;
                }
            }
        }
        let exist = tape.concat_rows(&probs)?;
        let nodes = match unroll {
            Unroll::Fixed(n) => n.saturating_sub(1),
            Unroll::UntilStop { .. } => nodes.unwrap_or(steps.len()),
        };
        Ok(Generated { steps, inputs, exist, nodes })
    }
}

/// Edge factors, node-type read-out and existence head shared by every
/// decoding path.
#[derive(Debug, Clone)]
pub struct FactorizationDecoder {
    pub u: ParamId,
    pub node: Linear,
    pub exist: Linear,
}

impl FactorizationDecoder {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, embed_dim: usize) -> Result<Self> {
        Ok(Self {
            u: src.param("decoder.factor.U", &[BOND_TYPES, embed_dim], Init::Xavier)?,
            node: Linear::new(src, "decoder.node", embed_dim, ATOM_TYPES)?,
            exist: Linear::new(src, "decoder.exist", embed_dim, 1)?,
        })
    }

    /// `n x n x e` edge probabilities with a zero diagonal.
    pub fn decode_edges<S: Scalar>(&self, tape: &mut Tape<'_, S>, s: Var) -> Result<Var> {
        let u = tape.param(self.u);
        Ok(tape.factor_edges(s, u)?)
    }

    /// `n x d` atom-type distributions.
    pub fn decode_nodes<S: Scalar>(&self, tape: &mut Tape<'_, S>, s: Var) -> Result<Var> {
        let logits = self.node.forward(tape, s)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Existence probability of each row of `s`, as a column.
    pub fn existence<S: Scalar>(&self, tape: &mut Tape<'_, S>, s: Var) -> Result<Var> {
        let logit = self.exist.forward(tape, s)?;
        Ok(tape.sigmoid(logit))
    }
}

/// The differentiable decoder output, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub edges: Var,
    pub nodes: Var,
    pub exist: Var,
}

impl GraphVars {
    pub fn value<S: Scalar>(&self, tape: &Tape<'_, S>) -> ProbabilisticGraph<S> {
        ProbabilisticGraph {
            edges: tape.value(self.edges).clone(),
            nodes: tape.value(self.nodes).clone(),
            exist: tape.value(self.exist).data().to_vec(),
        }
    }
}

/// Continuous relaxation of a molecular graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticGraph<S> {
    /// `n x n x e` edge probabilities.
    pub edges: Tensor<S>,
    /// `n x d` atom-type distributions.
    pub nodes: Tensor<S>,
    /// Existence probability per generator step.
    pub exist: Vec<S>,
}

impl<S: Scalar> ProbabilisticGraph<S> {
    pub fn n(&self) -> usize {
        self.nodes.rows()
    }

    /// Exact edge symmetry, unit node rows (within `tol`) and probabilities
    /// in `[0, 1]`.
    pub fn satisfies_invariants(&self, tol: S) -> bool {
        let n = self.n();
        let e = BOND_TYPES;
        if self.edges.shape() != [n, n, e] || self.nodes.cols() != ATOM_TYPES {
            return false;
        }
        let unit = |x: S| x >= S::zero() && x <= S::one();
        let symmetric = (0..n).all(|i| (0..n).all(|j| (0..e).all(|k| self.edges.get(&[i, j, k]) == self.edges.get(&[j, i, k]))));
        let rows = (0..n).all(|i| {
            let r = self.nodes.row(i);
            r.iter().all(|&x| unit(x)) && (r.iter().copied().sum::<S>() - S::one()).abs() <= tol
        });
        symmetric && rows && self.edges.data().iter().all(|&x| unit(x)) && self.exist.iter().all(|&x| unit(x))
    }
}

fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Reads a discrete molecule off a probabilistic graph.
///
/// The node count is the length of the leading run of existence
/// probabilities `>= 0.5` (capped at the rows available); atoms are the
/// row-wise argmax; a pair is bonded with its most likely type when that
/// probability is `>= 0.5`. Returns `None` for an empty, valence-violating or
/// disconnected result.
pub fn discretize<S: Scalar>(pg: &ProbabilisticGraph<S>) -> Option<MolecularGraph> {
    let half = lit::<S>(0.5);
    let m = pg.exist.iter().take_while(|&&p| p >= half).count().min(pg.n());
    if m == 0 {
        return None;
    }
    let n = pg.n();
    let atoms: Vec<AtomType> = (0..m).map(|i| AtomType::from_index(argmax(pg.nodes.row(i))).expect("row width is ATOM_TYPES")).collect();
    let mut bonds = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let base = (i * n + j) * BOND_TYPES;
            let probs = &pg.edges.data()[base..base + BOND_TYPES];
            let k = argmax(probs);
            if probs[k] >= half {
                bonds.push((i, j, BondType::from_index(k).expect("k < BOND_TYPES")));
            }
        }
    }
    let g = MolecularGraph::new(atoms, bonds).ok()?;
    (g.check_valence() && g.is_connected()).then_some(g)
}
