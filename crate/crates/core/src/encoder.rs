//! Edge-typed graph convolutions and the LSTM aggregator that turns node
//! embeddings into a fixed-width latent code.

use crate::chem::{GraphTensors, BOND_TYPES};
use crate::error::Result;
use crate::nn::{Init, Linear, Lstm, ParamSource};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// `D^{-1/2} A D^{-1/2}` for a square matrix, with `D^{-1/2}` taken as 0
/// where the degree is 0.
pub fn normalized_adjacency<S: Scalar>(adj: &Tensor<S>) -> Tensor<S> {
    let n = adj.rows();
    let inv: Vec<S> = (0..n)
        .map(|i| {
            let d: S = adj.row(i).iter().copied().sum();
            if d > S::zero() {
                d.sqrt().recip()
            } else {
                S::zero()
            }
        })
        .collect();
    let mut out = adj.clone();
    for i in 0..n {
        for j in 0..n {
            let v = adj.at(i, j) * inv[i] * inv[j];
            out.data_mut()[i * n + j] = v;
        }
    }
    out
}

/// The same normalization recorded on a tape, so gradients reach `adj`.
pub fn normalized_adjacency_on_tape<S: Scalar>(tape: &mut Tape<'_, S>, adj: Var) -> Result<Var> {
    let deg = tape.row_sum(adj);
    let inv = tape.inv_sqrt(deg);
    let rows = tape.mul_col(adj, inv)?;
    let inv_t = tape.transpose(inv);
    Ok(tape.mul_row(rows, inv_t)?)
}

/// Per-type normalized adjacency constants for a discrete graph. Types with
/// no bonds are `None` and contribute nothing.
pub fn constant_adjacency<S: Scalar>(tape: &mut Tape<'_, S>, g: &GraphTensors) -> Vec<Option<Var>> {
    (0..BOND_TYPES)
        .map(|k| {
            let slice = g.edge_slice::<S>(k);
            if slice.data().iter().all(|&x| x == S::zero()) {
                None
            } else {
                Some(tape.constant(normalized_adjacency(&slice)))
            }
        })
        .collect()
}

/// One graph convolution: per-bond-type weights plus a self connection.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub w_e: Vec<ParamId>,
    pub w_s: ParamId,
    pub input: usize,
    pub output: usize,
}

impl GcnLayer {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, name: &str, input: usize, output: usize) -> Result<Self> {
        let w_e = (0..BOND_TYPES).map(|k| src.param(&format!("{name}.W_e.{k}"), &[input, output], Init::Xavier)).collect::<Result<_>>()?;
        let w_s = src.param(&format!("{name}.W_s"), &[input, output], Init::Xavier)?;
        Ok(Self { w_e, w_s, input, output })
    }

    /// `ReLU( sum_e Â_e H W_e + H W_s )` where `Â_e` are already normalized.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, h: Var, adj: &[Option<Var>]) -> Result<Var> {
        let w_s = tape.param(self.w_s);
        let mut acc = tape.matmul(h, w_s)?;
        for (k, a) in adj.iter().enumerate() {
            let Some(a) = *a else { continue };
            let w = tape.param(self.w_e[k]);
            let hw = tape.matmul(h, w)?;
            let msg = tape.matmul(a, hw)?;
            acc = tape.add(acc, msg)?;
        }
        Ok(tape.relu(acc))
    }
}

/// Stack of [`GcnLayer`]s.
#[derive(Debug, Clone)]
pub struct GcnStack {
    pub layers: Vec<GcnLayer>,
}

impl GcnStack {
    /// `widths` lists input width then each layer's output width.
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, prefix: &str, widths: &[usize]) -> Result<Self> {
        let layers =
            widths.windows(2).enumerate().map(|(l, w)| GcnLayer::new(src, &format!("{prefix}.{l}"), w[0], w[1])).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, h0: Var, adj: &[Option<Var>]) -> Result<Var> {
        let mut h = h0;
        for layer in &self.layers {
            h = layer.forward(tape, h, adj)?;
        }
        Ok(h)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }
}

/// LSTM over a sequence of node embeddings followed by a linear read-out of
/// the final hidden state.
#[derive(Debug, Clone)]
pub struct Aggregator {
    pub lstm: Lstm,
    pub head: Linear,
}

impl Aggregator {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, prefix: &str, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::new(src, &format!("{prefix}.lstm"), input, hidden)?,
            head: Linear::new(src, &format!("{prefix}.g_agg"), hidden, output)?,
        })
    }

    /// Feeds the rows of `h` in `order` (canonical order when `None`).
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, h: Var, order: Option<&[usize]>) -> Result<Var> {
        let n = tape.shape(h)[0];
        let mut state = self.lstm.zero_state(tape);
        for t in 0..n {
            let idx = order.map_or(t, |o| o[t]);
            let x = tape.row(h, idx)?;
            state = self.lstm.step(tape, x, state)?;
        }
        self.head.forward(tape, state.h)
    }
}

/// Graph convolutions followed by the aggregator.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub gcn: GcnStack,
    pub aggregator: Aggregator,
    pub latent_size: usize,
}

/// Node embeddings `H^K` and the latent code.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub embeddings: Var,
    pub z: Var,
}

impl GraphEncoder {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, widths: &[usize], lstm_hidden: usize, latent_size: usize) -> Result<Self> {
        let gcn = GcnStack::new(src, "encoder.gcn", widths)?;
        let aggregator = Aggregator::new(src, "encoder", gcn.output_width(), lstm_hidden, latent_size)?;
        Ok(Self { gcn, aggregator, latent_size })
    }

    /// Node embeddings only (the graph-convolution half).
    pub fn embed<S: Scalar>(&self, tape: &mut Tape<'_, S>, g: &GraphTensors) -> Result<Var> {
        let h0 = tape.constant(g.nodes_tensor());
        let adj = constant_adjacency(tape, g);
        self.gcn.forward(tape, h0, &adj)
    }

    /// Full encoding. `order` permutes the sequence seen by the aggregator
    /// (used as augmentation during training).
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, g: &GraphTensors, order: Option<&[usize]>) -> Result<Encoded> {
        let embeddings = self.embed(tape, g)?;
        let z = self.aggregator.forward(tape, embeddings, order)?;
        Ok(Encoded { embeddings, z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, random_molecule, tensorize};
    use crate::nn::Initializer;
    use crate::tensor::ParameterStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-node loop: `sum_j sum_e norm(i,j,e) H[j] W_e + H[i] W_s`, then ReLU.
    fn brute_force_gcn(h: &Tensor<f64>, g: &GraphTensors, w_e: &[Tensor<f64>], w_s: &Tensor<f64>) -> Tensor<f64> {
        let n = g.n();
        let (hin, hout) = (w_s.rows(), w_s.cols());
        let deg = |i: usize, k: usize| (0..n).map(|j| g.edge(i, j, k) as f64).sum::<f64>();
        let mut out = Tensor::zeros(&[n, hout]);
        for i in 0..n {
            for c in 0..hout {
                let mut v = 0.0;
                for a in 0..hin {
                    v += h.at(i, a) * w_s.at(a, c);
                }
                for (k, w) in w_e.iter().enumerate() {
                    for j in 0..n {
                        if g.edge(i, j, k) == 0 {
                            continue;
                        }
                        let norm = 1.0 / (deg(i, k) * deg(j, k)).sqrt();
                        for a in 0..hin {
                            v += norm * h.at(j, a) * w.at(a, c);
                        }
                    }
                }
                out.set(&[i, c], v.max(0.0));
            }
        }
        out
    }

    fn layer_with_store(input: usize, output: usize, seed: u64) -> (ParameterStore<f64>, GcnLayer) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = GcnLayer::new(&mut Initializer { store: &mut store, rng: &mut rng }, "gcn", input, output).unwrap();
        (store, layer)
    }

    #[test]
    fn isolated_node_with_identity_self_weight_is_unchanged() {
        let (mut store, layer) = layer_with_store(3, 3, 1);
        *store.value_mut(layer.w_s) = Tensor::identity(3);
        let g = tensorize(&parse_smiles("C").unwrap());
        let mut tape = Tape::with_store(&store);
        let h0 = tape.constant(Tensor::row_vector(&[0.5, 0.0, 2.0]));
        let adj = constant_adjacency(&mut tape, &g);
        let h1 = layer.forward(&mut tape, h0, &adj).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.5, 0.0, 2.0]);
    }

    #[test]
    fn two_node_single_bond_swaps_rows() {
        let (mut store, layer) = layer_with_store(2, 2, 2);
        for &w in &layer.w_e {
            *store.value_mut(w) = Tensor::identity(2);
        }
        *store.value_mut(layer.w_s) = Tensor::zeros(&[2, 2]);
        let g = tensorize(&parse_smiles("CC").unwrap());
        let mut tape = Tape::with_store(&store);
        let h0 = tape.constant(Tensor::identity(2));
        let adj = constant_adjacency(&mut tape, &g);
        assert_eq!(tape.value(adj[0].unwrap()).data(), &[0.0, 1.0, 1.0, 0.0]);
        let h1 = layer.forward(&mut tape, h0, &adj).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let size = rng.random_range(1..=6);
            let g = tensorize(&random_molecule(&mut rng, size));
            let (store, layer) = layer_with_store(5, 4, trial);
            let h = Tensor::<f64>::uniform(&[g.n(), 5], -1.0, 1.0, &mut rng);
            let mut tape = Tape::with_store(&store);
            let h0 = tape.constant(h.clone());
            let adj = constant_adjacency(&mut tape, &g);
            let out = layer.forward(&mut tape, h0, &adj).unwrap();
            let w_e: Vec<_> = layer.w_e.iter().map(|&w| store.value(w).clone()).collect();
            let want = brute_force_gcn(&h, &g, &w_e, store.value(layer.w_s));
            assert!(tape.value(out).max_abs_diff(&want) < 1e-5);
        }
    }

    #[test]
    fn zero_edge_weights_reduce_to_self_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = tensorize(&parse_smiles("CC(=O)c1ccccc1").unwrap());
        let (mut store, layer) = layer_with_store(4, 3, 9);
        for &w in &layer.w_e {
            *store.value_mut(w) = Tensor::zeros(&[4, 3]);
        }
        let h = Tensor::<f64>::uniform(&[g.n(), 4], -1.0, 1.0, &mut rng);
        let mut tape = Tape::with_store(&store);
        let h0 = tape.constant(h);
        let adj = constant_adjacency(&mut tape, &g);
        let out = layer.forward(&mut tape, h0, &adj).unwrap();
        let ws = tape.param(layer.w_s);
        let hw = tape.matmul(h0, ws).unwrap();
        let want = tape.relu(hw);
        assert_eq!(tape.value(out), tape.value(want));
    }

    #[test]
    fn tape_normalization_matches_constant_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = tensorize(&random_molecule(&mut rng, 6));
        let slice = g.edge_slice::<f64>(0);
        let mut tape = Tape::new();
        let a = tape.var(slice.clone());
        let norm = normalized_adjacency_on_tape(&mut tape, a).unwrap();
        assert!(tape.value(norm).max_abs_diff(&normalized_adjacency(&slice)) < 1e-15);
    }

    #[test]
    fn encode_is_reproducible_and_sized() {
        let mut store = ParameterStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = GraphEncoder::new(&mut Initializer { store: &mut store, rng: &mut rng }, &[9, 16, 16], 12, 7).unwrap();
        let g = tensorize(&parse_smiles("CCO").unwrap());
        let run = |order: Option<&[usize]>| {
            let mut tape = Tape::with_store(&store);
            let e = enc.encode(&mut tape, &g, order).unwrap();
            tape.value(e.z).clone()
        };
        let a = run(None);
        assert_eq!(a.shape(), &[1, 7]);
        assert_eq!(a, run(None));
        let p = run(Some(&[2, 0, 1]));
        assert_eq!(p.shape(), &[1, 7]);
        assert!(p.all_finite());

        let single = tensorize(&parse_smiles("N").unwrap());
        let mut tape = Tape::with_store(&store);
        let e = enc.encode(&mut tape, &single, None).unwrap();
        assert_eq!(tape.shape(e.embeddings), &[1, 16]);
        assert!(tape.value(e.z).all_finite());
    }
}
