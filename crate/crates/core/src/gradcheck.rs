//! Central finite-difference checks of every differentiable operation and of
//! the full reconstruction loss, run in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chem::{parse_smiles, tensorize, GraphTensors};
use crate::conditional::{ConditionalModel, PropertyStats};
use crate::decoder::Teacher;
use crate::encoder::{constant_adjacency, normalized_adjacency_on_tape, GcnLayer};
use crate::error::Result;
use crate::model::{DeFactor, ModelConfig};
use crate::nn::{Initializer, Lstm};
use crate::tensor::{ParameterStore, Tape, Tensor, Var};
use crate::training::recon_loss_vars;

/// Finite-difference step.
pub const STEP: f64 = 1e-3;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Lower bound on the relative-error denominator.
pub const FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Number of scalar inputs compared.
    pub entries: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Outcome of [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// Reduces a forward output to a scalar with fixed random weights, so every
/// output entry contributes with a distinct coefficient.
fn reduce(tape: &mut Tape<'_, f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    Ok(tape.weighted_sum(out, weights.clone())?)
}

/// Loss value, input gradients and output shape of one forward pass.
type Evaluation = (f64, Vec<Option<Tensor<f64>>>, Vec<usize>);

/// Compares the tape gradient of `f` with central differences over every
/// input entry.
fn check_op(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let build = |values: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let shape = tape.shape(out).to_vec();
        let Some(w) = weights else {
            return Ok((0.0, Vec::new(), shape));
        };
        let loss = reduce(&mut tape, out, w)?;
        let grads = tape.backward(loss)?;
        let g = vars.iter().map(|&v| grads.wrt(v).cloned()).collect();
        Ok((tape.value(loss).data()[0], g, shape))
    };
    let (_, _, shape) = build(&inputs, None)?;
    let n: usize = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|_| rng.random_range(0.5..1.5)).collect())?;
    let (_, analytic, _) = build(&inputs, Some(&weights))?;

    let mut values = inputs;
    let mut worst = 0.0f64;
    let mut entries = 0;
    for k in 0..values.len() {
        for e in 0..values[k].len() {
            let original = values[k].data()[e];
            values[k].data_mut()[e] = original + STEP;
            let plus = build(&values, Some(&weights))?.0;
            values[k].data_mut()[e] = original - STEP;
            let minus = build(&values, Some(&weights))?.0;
            values[k].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[k].as_ref().map_or(0.0, |g| g.data()[e]);
            worst = worst.max(relative_error(a, numeric));
            entries += 1;
        }
    }
    Ok(CheckResult { name: name.into(), entries, max_rel_error: worst })
}

/// Compares parameter gradients of a loss computed from a store with
/// central differences over every non-frozen parameter entry.
fn check_params(name: &str, store: &mut ParameterStore<f64>, f: &dyn Fn(&mut Tape<'_, f64>) -> Result<Var>) -> Result<CheckResult> {
    let analytic: Vec<(crate::tensor::ParamId, Tensor<f64>)> = {
        let mut tape = Tape::with_store(store);
        let loss = f(&mut tape)?;
        let grads = tape.backward(loss)?;
        grads.params().map(|(id, g)| (id, g.clone())).collect()
    };
    let loss_at = |store: &ParameterStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_store(store);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };
    let ids: Vec<_> = store.ids().filter(|&id| !store.is_frozen(id)).collect();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for id in ids {
        let grad = analytic.iter().find(|(i, _)| *i == id).map(|(_, g)| g.clone());
        for e in 0..store.value(id).len() {
            let original = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = original + STEP;
            let plus = loss_at(store)?;
            store.value_mut(id).data_mut()[e] = original - STEP;
            let minus = loss_at(store)?;
            store.value_mut(id).data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[e]);
            worst = worst.max(relative_error(a, numeric));
            entries += 1;
        }
    }
    Ok(CheckResult { name: name.into(), entries, max_rel_error: worst })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Entries of magnitude in `[0.2, 1]` with random sign, keeping inputs away
/// from the kink of `relu`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.2, 1.0);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

/// The four-atom molecule used by the end-to-end checks.
pub const CHECK_SMILES: &str = "CC(=O)N";

fn small_config() -> ModelConfig {
    ModelConfig { latent_size: 5, gcn_layers: 2, hidden: 6, embed_dim: 5, cond_dim: 0, n_max: 8 }
}

fn check_molecule() -> GraphTensors {
    tensorize(&parse_smiles(CHECK_SMILES).expect("valid check molecule"))
}

/// Runs every operation check and the end-to-end checks.
pub fn run_suite(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut checks = Vec::new();
    macro_rules! op {
        ($name:expr, [$($input:expr),* $(,)?], $f:expr) => {{
            let inputs = vec![$($input),*];
            checks.push(check_op($name, inputs, r, $f)?);
        }};
    }

    let m = |r: &mut ChaCha8Rng, a: usize, b: usize| uniform(r, &[a, b], -1.0, 1.0);
    op!("matmul", [m(r, 3, 4), m(r, 4, 2)], |t, v| Ok(t.matmul(v[0], v[1])?));
    op!("add", [m(r, 3, 4), m(r, 3, 4)], |t, v| Ok(t.add(v[0], v[1])?));
    op!("sub", [m(r, 3, 4), m(r, 3, 4)], |t, v| Ok(t.sub(v[0], v[1])?));
    op!("mul", [m(r, 3, 4), m(r, 3, 4)], |t, v| Ok(t.mul(v[0], v[1])?));
    op!("add_row", [m(r, 3, 4), m(r, 1, 4)], |t, v| Ok(t.add_row(v[0], v[1])?));
    op!("mul_row", [m(r, 3, 4), m(r, 1, 4)], |t, v| Ok(t.mul_row(v[0], v[1])?));
    op!("mul_col", [m(r, 3, 4), m(r, 3, 1)], |t, v| Ok(t.mul_col(v[0], v[1])?));
    op!("scale", [m(r, 3, 4)], |t, v| Ok(t.scale(v[0], -1.7)));
    op!("add_scalar", [m(r, 3, 4)], |t, v| Ok(t.add_scalar(v[0], 0.3)));
    op!("one_minus", [m(r, 3, 4)], |t, v| Ok(t.one_minus(v[0])));
    op!("concat_cols", [m(r, 3, 2), m(r, 3, 4)], |t, v| Ok(t.concat_cols(&[v[0], v[1]])?));
    op!("concat_rows", [m(r, 2, 3), m(r, 1, 3)], |t, v| Ok(t.concat_rows(&[v[0], v[1]])?));
    op!("slice_cols", [m(r, 3, 5)], |t, v| Ok(t.slice_cols(v[0], 1, 3)?));
    op!("slice_rows", [m(r, 5, 3)], |t, v| Ok(t.slice_rows(v[0], 2, 2)?));
    op!("row", [m(r, 4, 3)], |t, v| Ok(t.row(v[0], 2)?));
    op!("sigmoid", [uniform(r, &[3, 4], -3.0, 3.0)], |t, v| Ok(t.sigmoid(v[0])));
    op!("tanh", [uniform(r, &[3, 4], -2.0, 2.0)], |t, v| Ok(t.tanh(v[0])));
    op!("relu", [away_from_zero(r, &[3, 4])], |t, v| Ok(t.relu(v[0])));
    op!("softmax_rows", [uniform(r, &[3, 9], -2.0, 2.0)], |t, v| Ok(t.softmax_rows(v[0])));
    op!("transpose", [m(r, 3, 4)], |t, v| Ok(t.transpose(v[0])));
    op!("sum", [m(r, 3, 4)], |t, v| Ok(t.sum(v[0])));
    op!("mean", [m(r, 3, 4)], |t, v| Ok(t.mean(v[0])));
    op!("log", [uniform(r, &[3, 4], 0.2, 2.0)], |t, v| Ok(t.log(v[0])));
    // interior entries only; the clamp bounds are far from the inputs
    op!("clamp", [uniform(r, &[3, 4], 0.1, 0.9)], |t, v| Ok(t.clamp(v[0], 1e-7, 1.0 - 1e-7)));
    op!("weighted_sum", [m(r, 3, 4)], |t, v| {
        let w = Tensor::from_rows(&[vec![1.0, 0.0, -2.0, 0.5], vec![0.0, 1.0, 1.0, 1.0], vec![3.0, 0.0, 0.0, -1.0]]);
        Ok(t.weighted_sum(v[0], w)?)
    });
    op!("row_sum", [m(r, 3, 4)], |t, v| Ok(t.row_sum(v[0])));
    op!("inv_sqrt", [uniform(r, &[3, 4], 0.5, 3.0)], |t, v| Ok(t.inv_sqrt(v[0])));
    op!("select_last", [uniform(r, &[3, 3, 4], -1.0, 1.0)], |t, v| Ok(t.select_last(v[0], 2)?));
    op!("factor_edges", [m(r, 4, 5), m(r, 3, 5)], |t, v| Ok(t.factor_edges(v[0], v[1])?));
    op!("linear", [m(r, 3, 4), m(r, 4, 2), m(r, 1, 2)], |t, v| Ok(t.linear(v[0], v[1], v[2])?));
    // strictly positive degrees: at zero degree the normalization is
    // defined as 0 and has no derivative
    let adj = uniform(r, &[4, 4], 0.2, 1.0);
    op!("normalized_adjacency", [adj], |t, v| normalized_adjacency_on_tape(t, v[0]));

    let x = m(r, 3, 3);
    let mut store = ParameterStore::<f64>::new();
    let lstm = Lstm::new(&mut Initializer { store: &mut store, rng: &mut *r }, "lstm", 3, 4)?;
    let gcn = GcnLayer::new(&mut Initializer { store: &mut store, rng: &mut *r }, "gcn", 3, 4)?;
    let unroll = |tape: &mut Tape<'_, f64>| -> Result<Var> {
        let mut state = lstm.zero_state(tape);
        for i in 0..3 {
            let xi = tape.constant(Tensor::row_vector(x.row(i)));
            state = lstm.step(tape, xi, state)?;
        }
        let w = Tensor::from_rows(&[vec![1.0, -0.5, 0.7, 1.3]]);
        Ok(tape.weighted_sum(state.h, w)?)
    };
    store.set_frozen("gcn.", true);
    checks.push(check_params("lstm unroll", &mut store, &unroll)?);
    store.unfreeze_all();
    store.set_frozen("lstm.", true);
    let g = check_molecule();
    let h0 = uniform(r, &[g.n(), 3], -1.0, 1.0);
    let layer = |tape: &mut Tape<'_, f64>| -> Result<Var> {
        let adj = constant_adjacency(tape, &g);
        let h = tape.constant(h0.clone());
        let out = gcn.forward(tape, h, &adj)?;
        let w = Tensor::new(vec![g.n(), 4], (0..g.n() * 4).map(|k| 0.5 + (k % 5) as f64 * 0.2).collect())?;
        Ok(tape.weighted_sum(out, w)?)
    };
    checks.push(check_params("gcn layer", &mut store, &layer)?);

    checks.extend(model_checks(seed)?);
    Ok(GradCheckReport { checks })
}

/// Parameter-gradient checks of the full model in every training mode.
fn model_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let g = check_molecule();
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DeFactor::<f64>::new(small_config(), &mut rng)?;
    let ae = model.model.clone();

    let partial = |tape: &mut Tape<'_, f64>| -> Result<Var> {
        let pg = ae.partial_forward(tape, &g)?;
        Ok(recon_loss_vars(tape, &pg, &g)?.total)
    };
    out.push(check_params("partial autoencoder loss", &mut model.store, &partial)?);

    let order = [2, 0, 3, 1];
    for (name, mix) in
        [("end-to-end loss, free running", 0.0), ("end-to-end loss, mixed teacher", 0.5), ("end-to-end loss, teacher forced", 1.0)]
    {
        let full = |tape: &mut Tape<'_, f64>| -> Result<Var> {
            let enc = ae.encode(tape, &g, Some(&order))?;
            let cond = ae.condition(tape, enc.z, None)?;
            let teacher = (mix > 0.0).then_some(Teacher { embeddings: enc.embeddings, mix_prob: mix });
            // a fresh stream per evaluation keeps the mixing draws fixed
            let mut draws = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let pg = ae.decode_fixed(tape, cond, g.n(), teacher, &mut draws)?;
            Ok(recon_loss_vars(tape, &pg, &g)?.total)
        };
        out.push(check_params(name, &mut model.store, &full)?);
    }

    let stats = PropertyStats { mean: 0.5, std: 1.2, min: -1.0, max: 2.0 };
    let mut cm = ConditionalModel::from_autoencoder(&model, stats, &mut rng)?;
    let ae = cm.ae.model.clone();
    let disc = cm.disc.clone();
    let conditional = |tape: &mut Tape<'_, f64>| -> Result<Var> {
        let enc = ae.encode(tape, &g, Some(&order))?;
        let y = tape.constant(Tensor::scalar(0.7));
        let cond = ae.condition(tape, enc.z, Some(y))?;
        let pg = ae.decode_fixed(tape, cond, g.n(), None, &mut ChaCha8Rng::seed_from_u64(0))?;
        let rec = recon_loss_vars(tape, &pg, &g)?.total;
        let pred = disc.forward(tape, pg.nodes, pg.edges)?;
        let target = tape.constant(Tensor::scalar(0.7));
        let diff = tape.sub(pred, target)?;
        let sq = tape.mul(diff, diff)?;
        let prop = tape.scale(sq, 0.5);
        Ok(tape.add(rec, prop)?)
    };
    out.push(check_params("conditional loss with predictor", &mut cm.ae.store, &conditional)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floors_denominator() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = uniform(&mut rng, &[2, 2], 0.5, 1.0);
        // detaching drops half of d(x*x)/dx
        let r = check_op("broken", vec![x], &mut rng, |t, v| {
            let d = t.detach(v[0]);
            Ok(t.mul(v[0], d)?)
        })
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn full_suite_passes() {
        let report = run_suite(0).unwrap();
        for c in &report.checks {
            println!("{:<36} {:>6} entries  max rel err {:.3e}", c.name, c.entries, c.max_rel_error);
        }
        assert!(report.passed(), "max relative error {:.3e}", report.max_rel_error());
    }
}
