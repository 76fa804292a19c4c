//! Reconstruction losses, the teacher-forcing curriculum and the epoch loop.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chem::{tensorize, GraphTensors, MolecularGraph, Molecule, BOND_TYPES};
use crate::decoder::{discretize, GraphVars, ProbabilisticGraph, Teacher};
use crate::error::{Error, Result};
use crate::model::{DeFactor, PRETRAINED_PREFIXES};
use crate::scalar::{lit, Scalar};
use crate::tensor::{AdamConfig, Tape, Tensor, Var};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Components of the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReconLoss<S> {
    pub l_x: S,
    pub l_xbar: S,
    pub l_n: S,
    pub l_exist: S,
    pub total: S,
}

/// The same components as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct ReconLossVars {
    pub l_x: Var,
    pub l_xbar: Var,
    pub l_n: Var,
    pub l_exist: Var,
    pub total: Var,
}

impl ReconLossVars {
    pub fn value<S: Scalar>(&self, tape: &Tape<'_, S>) -> ReconLoss<S> {
        let v = |x: Var| tape.value(x).data()[0];
        ReconLoss { l_x: v(self.l_x), l_xbar: v(self.l_xbar), l_n: v(self.l_n), l_exist: v(self.l_exist), total: v(self.total) }
    }
}

fn clamped_logs<S: Scalar>(tape: &mut Tape<'_, S>, p: Var) -> (Var, Var) {
    let lo = lit::<S>(CLAMP);
    let hi = S::one() - lo;
    let c = tape.clamp(p, lo, hi);
    let log_p = tape.log(c);
    let q = tape.one_minus(c);
    let log_q = tape.log(q);
    (log_p, log_q)
}

/// Reconstruction loss of a decoded graph against its target.
///
/// Edge terms run over unordered pairs `i < j`: existing bonds (`X`) and
/// non-bonds (`X̄`) are normalized by their own counts, and an empty set
/// contributes 0. Existence targets are 1 for the first `n` rows of
/// `pg.exist` and 0 after.
pub fn recon_loss_vars<S: Scalar>(tape: &mut Tape<'_, S>, pg: &GraphVars, target: &GraphTensors) -> Result<ReconLossVars> {
    let n = target.n();
    let e = BOND_TYPES;
    let mut w_pos = Tensor::<S>::zeros(&[n, n, e]);
    let mut w_neg_x = Tensor::<S>::zeros(&[n, n, e]);
    let mut w_neg_xbar = Tensor::<S>::zeros(&[n, n, e]);
    let bonded: Vec<(usize, usize)> = target.edge_pairs();
    let pairs = n * n.saturating_sub(1) / 2;
    let (nx, nxbar) = (bonded.len(), pairs - bonded.len());
    for i in 0..n {
        for j in (i + 1)..n {
            let is_bond = (0..e).any(|k| target.edge(i, j, k) == 1);
            for k in 0..e {
                let idx = (i * n + j) * e + k;
                if is_bond {
                    let t = target.edge(i, j, k);
                    let inv = lit::<S>(1.0 / nx as f64);
                    if t == 1 {
                        w_pos.data_mut()[idx] = inv;
                    } else {
                        w_neg_x.data_mut()[idx] = inv;
                    }
                } else {
                    w_neg_xbar.data_mut()[idx] = lit(1.0 / nxbar as f64);
                }
            }
        }
    }
    let (log_e, log_1me) = clamped_logs(tape, pg.edges);
    let pos = tape.weighted_sum(log_e, w_pos)?;
    let neg = tape.weighted_sum(log_1me, w_neg_x)?;
    let lx = tape.add(pos, neg)?;
    let l_x = tape.scale(lx, -S::one());
    let lxbar = tape.weighted_sum(log_1me, w_neg_xbar)?;
    let l_xbar = tape.scale(lxbar, -S::one());

    let (log_n, _) = clamped_logs(tape, pg.nodes);
    let ln = tape.weighted_sum(log_n, target.nodes_tensor::<S>().map(|x| x / lit(n as f64)))?;
    let l_n = tape.scale(ln, -S::one());

    let steps = tape.shape(pg.exist)[0];
    if steps < n {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "recon_loss",
            left: tape.shape(pg.exist).to_vec(),
            right: vec![n + 1, 1],
        }
        .into());
    }
    let inv = lit::<S>(1.0 / steps as f64);
    let on = Tensor::new(vec![steps, 1], (0..steps).map(|t| if t < n { inv } else { S::zero() }).collect())?;
    let off = Tensor::new(vec![steps, 1], (0..steps).map(|t| if t < n { S::zero() } else { inv }).collect())?;
    let (log_p, log_q) = clamped_logs(tape, pg.exist);
    let a = tape.weighted_sum(log_p, on)?;
    let b = tape.weighted_sum(log_q, off)?;
    let le = tape.add(a, b)?;
    let l_exist = tape.scale(le, -S::one());

    let s1 = tape.add(l_x, l_xbar)?;
    let s2 = tape.add(s1, l_n)?;
    let total = tape.add(s2, l_exist)?;
    Ok(ReconLossVars { l_x, l_xbar, l_n, l_exist, total })
}

/// [`recon_loss_vars`] evaluated on plain values.
pub fn recon_loss<S: Scalar>(pg: &ProbabilisticGraph<S>, target: &GraphTensors) -> Result<ReconLoss<S>> {
    let mut tape = Tape::new();
    let vars = GraphVars {
        edges: tape.constant(pg.edges.clone()),
        nodes: tape.constant(pg.nodes.clone()),
        exist: tape.constant(Tensor::new(vec![pg.exist.len(), 1], pg.exist.clone())?),
    };
    if pg.edges.shape() != [target.n(), target.n(), BOND_TYPES] {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "recon_loss",
            left: pg.edges.shape().to_vec(),
            right: vec![target.n(), target.n(), BOND_TYPES],
        }
        .into());
    }
    Ok(recon_loss_vars(&mut tape, &vars, target)?.value(&tape))
}

/// Curriculum phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PretrainPartialAe,
    TeacherForced,
    ScheduledSampling,
    EndToEnd,
}

impl Phase {
    fn stream(self) -> u64 {
        match self {
            Phase::PretrainPartialAe => 1,
            Phase::TeacherForced => 2,
            Phase::ScheduledSampling => 3,
            Phase::EndToEnd => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainPartialAe => "pretrain_partial_ae",
            Phase::TeacherForced => "teacher_forced",
            Phase::ScheduledSampling => "scheduled_sampling",
            Phase::EndToEnd => "end_to_end",
        }
    }

    /// Whether the partial-autoencoder parameters are held fixed.
    pub fn freezes_pretrained(self) -> bool {
        matches!(self, Phase::TeacherForced | Phase::ScheduledSampling)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Position in the curriculum. `epoch` counts within the phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub phase: Phase,
    pub mix_prob: f64,
    pub epoch: usize,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub epochs_pretrain: usize,
    pub epochs_e1: usize,
    pub epochs_e2: usize,
    pub epochs_e3: usize,
    /// Learning rate reached at the last end-to-end epoch, decaying linearly
    /// from `adam.lr` across that phase. `None` keeps the rate constant.
    pub lr_final: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 16,
            adam: AdamConfig::default(),
            epochs_pretrain: 20,
            epochs_e1: 20,
            epochs_e2: 20,
            epochs_e3: 20,
            lr_final: None,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings for one epoch.
    pub fn adam_at(&self, state: CurriculumState) -> AdamConfig {
        let mut adam = self.adam;
        if let (Phase::EndToEnd, Some(last)) = (state.phase, self.lr_final) {
            if self.epochs_e3 > 1 {
                let t = state.epoch as f64 / (self.epochs_e3 - 1) as f64;
                adam.lr += t * (last - self.adam.lr);
            }
        }
        adam
    }
}

/// Phases two to four: teacher forcing, linearly decaying mixing, then fully
/// autoregressive with everything trainable. During scheduled sampling the
/// mixing probability of epoch `j` is `(E2 - j) / (E2 + 1)`, strictly between
/// the neighbouring phases' 1 and 0.
pub fn curriculum(cfg: &TrainConfig) -> Vec<CurriculumState> {
    let e2 = cfg.epochs_e2;
    let tf = (0..cfg.epochs_e1).map(|epoch| CurriculumState { phase: Phase::TeacherForced, mix_prob: 1.0, epoch });
    let ss =
        (0..e2).map(|epoch| CurriculumState { phase: Phase::ScheduledSampling, mix_prob: (e2 - epoch) as f64 / (e2 + 1) as f64, epoch });
    let ee = (0..cfg.epochs_e3).map(|epoch| CurriculumState { phase: Phase::EndToEnd, mix_prob: 0.0, epoch });
    tf.chain(ss).chain(ee).collect()
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub mix_prob: f64,
    pub l_x: f64,
    pub l_xbar: f64,
    pub l_n: f64,
    pub l_exist: f64,
    pub total: f64,
    pub recon_acc: f64,
}

impl EpochMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

/// Deterministic generator for one epoch of one phase.
pub fn epoch_rng(seed: u64, phase: Phase, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((phase.stream() << 32) | epoch as u64);
    rng
}

const PROGRESS_PRETRAIN: &str = "progress.pretrain";
const PROGRESS_TRAIN: &str = "progress.train";

fn progress<S: Scalar>(model: &DeFactor<S>, key: &str) -> usize {
    model.store.meta(key).map_or(0, |t| t.data()[0].to_f64_lossy() as usize)
}

fn set_progress<S: Scalar>(model: &mut DeFactor<S>, key: &str, done: usize) {
    model.store.set_meta(key, Tensor::new(vec![1], vec![lit(done as f64)]).expect("one entry"));
}

/// Loss of one example under the given phase, recorded on `tape`.
pub fn example_loss<S: Scalar, R: Rng + ?Sized>(
    model: &DeFactor<S>,
    tape: &mut Tape<'_, S>,
    g: &GraphTensors,
    state: CurriculumState,
    y: Option<S>,
    rng: &mut R,
) -> Result<(ReconLossVars, GraphVars)> {
    let ae = &model.model;
    let pg = if state.phase == Phase::PretrainPartialAe {
        ae.partial_forward(tape, g)?
    } else {
        let mut order: Vec<usize> = (0..g.n()).collect();
        order.shuffle(rng);
        let enc = ae.encode(tape, g, Some(&order))?;
        let yv = y.map(|y| tape.constant(Tensor::scalar(y)));
        let cond = ae.condition(tape, enc.z, yv)?;
        let teacher = (state.mix_prob > 0.0).then_some(Teacher { embeddings: enc.embeddings, mix_prob: state.mix_prob });
        ae.decode_fixed(tape, cond, g.n(), teacher, rng)?
    };
    Ok((recon_loss_vars(tape, &pg, g)?, pg))
}

fn apply_freezing<S: Scalar>(model: &mut DeFactor<S>, phase: Phase) {
    model.store.unfreeze_all();
    match phase {
        Phase::PretrainPartialAe => {
            for p in ["encoder.lstm.", "encoder.g_agg.", "decoder.gen."] {
                model.store.set_frozen(p, true);
            }
        }
        p if p.freezes_pretrained() => {
            for prefix in PRETRAINED_PREFIXES {
                model.store.set_frozen(prefix, true);
            }
        }
        _ => {}
    }
}

/// One pass over `data` in shuffled mini-batches. Returns the mean loss over
/// the epoch (each example's loss taken before its batch's update).
pub fn run_epoch<S: Scalar>(
    model: &mut DeFactor<S>,
    data: &[GraphTensors],
    state: CurriculumState,
    cfg: &TrainConfig,
) -> Result<ReconLoss<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    apply_freezing(model, state.phase);
    let mut rng = epoch_rng(cfg.seed, state.phase, state.epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut sum = ReconLoss::<f64>::default();
    for batch in order.chunks(cfg.batch.max(1)) {
        model.store.zero_grad();
        let scale = lit::<S>(1.0 / batch.len() as f64);
        for &i in batch {
            let grads = {
                let mut tape = Tape::with_store(&model.store);
                let (loss, _) = example_loss(model, &mut tape, &data[i], state, None, &mut rng)?;
                accumulate_loss(&mut sum, &loss.value(&tape));
                tape.backward(loss.total)?
            };
            model.store.accumulate(&grads, scale);
        }
        model.store.adam_step(&cfg.adam_at(state));
    }
    model.store.unfreeze_all();
    let k = data.len() as f64;
    Ok(ReconLoss { l_x: sum.l_x / k, l_xbar: sum.l_xbar / k, l_n: sum.l_n / k, l_exist: sum.l_exist / k, total: sum.total / k })
}

fn accumulate_loss<S: Scalar>(sum: &mut ReconLoss<f64>, l: &ReconLoss<S>) {
    sum.l_x += l.l_x.to_f64_lossy();
    sum.l_xbar += l.l_xbar.to_f64_lossy();
    sum.l_n += l.l_n.to_f64_lossy();
    sum.l_exist += l.l_exist.to_f64_lossy();
    sum.total += l.total.to_f64_lossy();
}

/// Mean loss over `data` without updating anything (canonical order, no
/// teacher unless the phase forces one).
pub fn evaluate_loss<S: Scalar>(model: &DeFactor<S>, data: &[GraphTensors], state: CurriculumState) -> Result<ReconLoss<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = epoch_rng(0, state.phase, usize::MAX >> 32);
    let mut sum = ReconLoss::<f64>::default();
    for g in data {
        let mut tape = Tape::with_store(&model.store);
        let (loss, _) = example_loss(model, &mut tape, g, state, None, &mut rng)?;
        accumulate_loss(&mut sum, &loss.value(&tape));
    }
    let k = data.len() as f64;
    Ok(ReconLoss { l_x: sum.l_x / k, l_xbar: sum.l_xbar / k, l_n: sum.l_n / k, l_exist: sum.l_exist / k, total: sum.total / k })
}

fn metrics(epoch: usize, state: CurriculumState, loss: ReconLoss<f64>, recon_acc: f64) -> EpochMetrics {
    EpochMetrics {
        epoch,
        phase: state.phase,
        mix_prob: state.mix_prob,
        l_x: loss.l_x,
        l_xbar: loss.l_xbar,
        l_n: loss.l_n,
        l_exist: loss.l_exist,
        total: loss.total,
        recon_acc,
    }
}

fn tensors_of(dataset: &[Molecule]) -> Result<Vec<GraphTensors>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset.iter().map(|m| tensorize(&m.graph)).collect())
}

/// Trains the graph convolutions with the edge, node and existence heads
/// reading their embeddings directly. Resumes after the epochs already
/// recorded in the model's metadata; `on_epoch` sees every new record.
pub fn pretrain_partial_ae<S: Scalar>(
    model: &mut DeFactor<S>,
    dataset: &[Molecule],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let data = tensors_of(dataset)?;
    let mut out = Vec::new();
    for epoch in progress(model, PROGRESS_PRETRAIN)..cfg.epochs_pretrain {
        let state = CurriculumState { phase: Phase::PretrainPartialAe, mix_prob: 1.0, epoch };
        let loss = run_epoch(model, &data, state, cfg)?;
        set_progress(model, PROGRESS_PRETRAIN, epoch + 1);
        let acc = reconstruction_accuracy(&PartialAutoencoder(model), dataset).overall;
        let m = metrics(epoch, state, loss, acc);
        on_epoch(&m);
        out.push(m);
    }
    Ok(out)
}

/// Runs the three-phase generator curriculum on a pretrained model.
/// Resumes after the epochs already recorded in the model's metadata.
pub fn train_autoencoder<S: Scalar>(
    model: &mut DeFactor<S>,
    dataset: &[Molecule],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let data = tensors_of(dataset)?;
    if progress(model, PROGRESS_PRETRAIN) == 0 {
        return Err(Error::BadCheckpoint("model has not been pretrained".into()));
    }
    let schedule = curriculum(cfg);
    let mut out = Vec::new();
    for (k, &state) in schedule.iter().enumerate().skip(progress(model, PROGRESS_TRAIN)) {
        let loss = run_epoch(model, &data, state, cfg)?;
        set_progress(model, PROGRESS_TRAIN, k + 1);
        let acc = reconstruction_accuracy(&*model, dataset).overall;
        let m = metrics(k, state, loss, acc);
        on_epoch(&m);
        out.push(m);
    }
    Ok(out)
}

/// Anything that maps a molecule to its reconstruction.
pub trait Reconstructor {
    fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph>;
}

impl<S: Scalar> Reconstructor for DeFactor<S> {
    fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph> {
        DeFactor::reconstruct(self, g).ok().flatten()
    }
}

/// The pretraining path of a model: graph convolutions decoded directly.
pub struct PartialAutoencoder<'a, S: Scalar>(pub &'a DeFactor<S>);

impl<S: Scalar> Reconstructor for PartialAutoencoder<'_, S> {
    fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph> {
        let pg = self.0.partial_reconstruction(&tensorize(g)).ok()?;
        discretize(&pg)
    }
}

/// Exact-reconstruction rate, overall and by heavy-atom count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub correct: usize,
    pub total: usize,
    /// Heavy-atom count to `(correct, total)`.
    pub by_size: BTreeMap<usize, (usize, usize)>,
}

impl AccuracyReport {
    pub fn bucket_accuracy(&self, size: usize) -> Option<f64> {
        self.by_size.get(&size).map(|&(c, t)| c as f64 / t as f64)
    }
}

/// Fraction of molecules whose reconstruction has the same atoms in the
/// same order and the same bonds.
pub fn reconstruction_accuracy(model: &impl Reconstructor, dataset: &[Molecule]) -> AccuracyReport {
    let mut by_size: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for m in dataset {
        let ok = model.reconstruct(&m.graph).as_ref() == Some(&m.graph);
        let slot = by_size.entry(m.graph.n_atoms()).or_default();
        slot.1 += 1;
        if ok {
            slot.0 += 1;
            correct += 1;
        }
    }
    let total = dataset.len();
    let overall = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    AccuracyReport { overall, correct, total, by_size }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn relaxed(g: &GraphTensors, p_edge: f64, p_node: f64) -> ProbabilisticGraph<f64> {
        let n = g.n();
        let mut edges = g.edges_tensor::<f64>().map(|x| if x > 0.5 { p_edge } else { 1.0 - p_edge });
        for i in 0..n {
            for k in 0..4 {
                edges.set(&[i, i, k], 0.0);
            }
        }
        let off = (1.0 - p_node) / 8.0;
        let nodes = g.nodes_tensor::<f64>().map(|x| if x > 0.5 { p_node } else { off });
        let mut exist = vec![p_edge; n];
        exist.push(1.0 - p_edge);
        ProbabilisticGraph { edges, nodes, exist }
    }

    #[test]
    fn perfect_predictions_cost_almost_nothing() {
        let g = tensorize(&parse_smiles("CC(=O)O").unwrap());
        let l = recon_loss(&relaxed(&g, 1.0, 1.0), &g).unwrap();
        assert!(l.total < 1e-5, "{l:?}");
        assert!(l.l_x >= 0.0 && l.l_xbar >= 0.0 && l.l_n >= 0.0 && l.l_exist >= 0.0);
    }

    #[test]
    fn uniform_nodes_cost_log_nine() {
        let g = tensorize(&parse_smiles("CCN").unwrap());
        let mut pg = relaxed(&g, 1.0, 1.0);
        pg.nodes = Tensor::filled(&[3, 9], 1.0 / 9.0);
        let l = recon_loss(&pg, &g).unwrap();
        assert!((l.l_n - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn half_edges_on_a_single_bond() {
        let g = tensorize(&parse_smiles("CC").unwrap());
        let mut pg = relaxed(&g, 1.0, 1.0);
        pg.edges = Tensor::filled(&[2, 2, 4], 0.5);
        let l = recon_loss(&pg, &g).unwrap();
        assert!((l.l_x - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(l.l_xbar, 0.0, "no non-bonded pairs");
        let sum = l.l_x + l.l_xbar + l.l_n + l.l_exist;
        assert!((l.total - sum).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_as_predictions_sharpen() {
        let g = tensorize(&parse_smiles("C1CC1C=O").unwrap());
        let mut last = f64::INFINITY;
        for p in [0.6, 0.7, 0.8, 0.9, 0.99, 0.999] {
            let l = recon_loss(&relaxed(&g, p, p), &g).unwrap().total;
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn disjoint_copy_leaves_edge_losses_unchanged() {
        let one = tensorize(&parse_smiles("CC=O").unwrap());
        let pg1 = relaxed(&one, 0.8, 0.7);
        let n = one.n();
        // block-diagonal union of two copies
        let mut edges = vec![0u8; 4 * n * n * 4];
        let mut nodes = Vec::new();
        for c in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..4 {
                        edges[(((c * n + i) * 2 * n) + c * n + j) * 4 + k] = one.edge(i, j, k);
                    }
                }
                nodes.extend((0..9).map(|t| one.node(i, t)));
            }
        }
        let two = GraphTensors::from_raw(2 * n, edges, nodes).unwrap();
        let pg2 = relaxed(&two, 0.8, 0.7);
        let (a, b) = (recon_loss(&pg1, &one).unwrap(), recon_loss(&pg2, &two).unwrap());
        assert!((a.l_x - b.l_x).abs() < 1e-6);
        assert!((a.l_xbar - b.l_xbar).abs() < 1e-6);
        assert!((a.l_n - b.l_n).abs() < 1e-6);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let g = tensorize(&parse_smiles("CCC").unwrap());
        let pg = relaxed(&tensorize(&parse_smiles("CC").unwrap()), 0.9, 0.9);
        assert!(matches!(recon_loss(&pg, &g), Err(Error::Tensor(_))));
    }

    #[test]
    fn schedule_shapes() {
        let cfg = TrainConfig { epochs_e1: 2, epochs_e2: 3, epochs_e3: 1, ..TrainConfig::default() };
        let mix: Vec<f64> = curriculum(&cfg).iter().map(|s| s.mix_prob).collect();
        assert_eq!(mix, vec![1.0, 1.0, 0.75, 0.5, 0.25, 0.0]);
        let jump = TrainConfig { epochs_e2: 0, ..cfg };
        let mix: Vec<f64> = curriculum(&jump).iter().map(|s| s.mix_prob).collect();
        assert_eq!(mix, vec![1.0, 1.0, 0.0]);
    }

    struct Copier;
    impl Reconstructor for Copier {
        fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph> {
            Some(g.clone())
        }
    }

    struct EvenOnly;
    impl Reconstructor for EvenOnly {
        fn reconstruct(&self, g: &MolecularGraph) -> Option<MolecularGraph> {
            g.n_atoms().is_multiple_of(2).then(|| g.clone())
        }
    }

    #[test]
    fn accuracy_of_stub_reconstructors() {
        let data = crate::chem::bundled_corpus();
        let r = reconstruction_accuracy(&Copier, &data);
        assert_eq!(r.overall, 1.0);
        let r = reconstruction_accuracy(&EvenOnly, &data);
        let weighted: f64 = r.by_size.iter().map(|(&s, &(_, t))| r.bucket_accuracy(s).unwrap() * t as f64).sum::<f64>() / r.total as f64;
        assert!((weighted - r.overall).abs() < 1e-12);
        assert!(r.by_size.keys().all(|&s| (0.0..=1.0).contains(&r.bucket_accuracy(s).unwrap())));
    }
}
