//! Evaluation protocols: conditional generation sweeps and constrained
//! property optimization.

use std::fmt::Write as _;

use serde::Serialize;

use crate::chem::{fingerprint, proxy_logp, tanimoto, to_smiles, Molecule};
use crate::conditional::ConditionalGenerator;
use crate::error::{Error, Result};

/// Pearson correlation with a flag for undefined cases (fewer than two
/// points or zero variance), which are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let undefined = Correlation { value: 0.0, degenerate: true };
    if xs.len() < 2 {
        return undefined;
    }
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return undefined;
    }
    Correlation { value: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), degenerate: false }
}

/// Sweep outcome for one query molecule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMolecule {
    pub smiles: String,
    pub y_observed: f64,
    /// `(requested, achieved)` for every valid decode.
    pub pairs: Vec<(f64, f64)>,
    pub attempts: usize,
    pub correlation: Correlation,
    /// No grid point decoded to a valid molecule.
    pub no_valid_decodes: bool,
}

/// Outcome of [`conditional_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub molecules: Vec<SweepMolecule>,
    pub pooled: Correlation,
    pub validity_rate: f64,
}

impl SweepReport {
    /// Two tab-separated columns, requested and achieved property, one line
    /// per valid decode.
    pub fn table(&self) -> String {
        let mut out = String::from("y_star\ty_achieved\n");
        for m in &self.molecules {
            for (a, b) in &m.pairs {
                let _ = writeln!(out, "{a}\t{b}");
            }
        }
        out
    }
}

/// Evenly spaced targets covering `[y - width, y + width]`.
pub fn sweep_grid(y: f64, width: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![y],
        _ => (0..points).map(|i| y - width + 2.0 * width * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Decodes every query molecule's latent code toward a grid of property
/// values around its observed value and correlates requested with achieved
/// values over valid decodes, per molecule and pooled.
pub fn conditional_sweep<G: ConditionalGenerator>(model: &G, molecules: &[Molecule], width: f64, points: usize) -> Result<SweepReport> {
    let mut out = Vec::with_capacity(molecules.len());
    let (mut all_x, mut all_y) = (Vec::new(), Vec::new());
    let mut attempts = 0;
    for m in molecules {
        let y = proxy_logp(&m.graph);
        let z = model.encode(&m.graph)?;
        let grid = sweep_grid(y, width, points);
        let mut pairs = Vec::new();
        for &target in &grid {
            if let Some(g) = model.decode(&z, target)? {
                pairs.push((target, proxy_logp(&g)));
            }
        }
        attempts += grid.len();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        all_x.extend(&xs);
        all_y.extend(&ys);
        out.push(SweepMolecule {
            smiles: m.smiles.clone(),
            y_observed: y,
            no_valid_decodes: pairs.is_empty(),
            correlation: pearson(&xs, &ys),
            attempts: grid.len(),
            pairs,
        });
    }
    let validity_rate = if attempts == 0 { 0.0 } else { all_x.len() as f64 / attempts as f64 };
    Ok(SweepReport { molecules: out, pooled: pearson(&all_x, &all_y), validity_rate })
}

/// Best decode for one molecule under one similarity threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationRecord {
    pub delta: f64,
    pub smiles_in: String,
    pub smiles_out: Option<String>,
    pub y_in: f64,
    pub y_out: Option<f64>,
    /// `y_out - y_in` of the chosen decode, 0 without a success.
    pub improvement: f64,
    /// Tanimoto similarity of the chosen decode to the input, 0 without a
    /// success.
    pub similarity: f64,
    pub success: bool,
}

/// Aggregates over the records of one threshold. Means and (population)
/// standard deviations are over successes only and 0 when there are none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSummary {
    pub delta: f64,
    pub molecules: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub improvement_mean: f64,
    pub improvement_std: f64,
    pub similarity_mean: f64,
    pub similarity_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates the records whose threshold is `delta`.
pub fn summarize(records: &[OptimizationRecord], delta: f64) -> ThresholdSummary {
    let rows: Vec<&OptimizationRecord> = records.iter().filter(|r| r.delta == delta).collect();
    let wins: Vec<&&OptimizationRecord> = rows.iter().filter(|r| r.success).collect();
    let imp: Vec<f64> = wins.iter().map(|r| r.improvement).collect();
    let sim: Vec<f64> = wins.iter().map(|r| r.similarity).collect();
    let (improvement_mean, improvement_std) = mean_std(&imp);
    let (similarity_mean, similarity_std) = mean_std(&sim);
    ThresholdSummary {
        delta,
        molecules: rows.len(),
        successes: wins.len(),
        success_rate: if rows.is_empty() { 0.0 } else { wins.len() as f64 / rows.len() as f64 },
        improvement_mean,
        improvement_std,
        similarity_mean,
        similarity_std,
    }
}

/// Outcome of [`constrained_optimize`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationReport {
    pub records: Vec<OptimizationRecord>,
    pub summaries: Vec<ThresholdSummary>,
}

impl OptimizationReport {
    /// Every success has positive improvement and meets its threshold, and
    /// success rates never increase with the threshold.
    pub fn is_consistent(&self) -> bool {
        let implication =
            self.records.iter().all(|r| !r.success || (r.improvement > 0.0 && r.similarity >= r.delta && r.smiles_out.is_some()));
        let mut sorted = self.summaries.clone();
        sorted.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        let monotone = sorted.windows(2).all(|w| w[1].success_rate <= w[0].success_rate);
        implication && monotone
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub deltas: Vec<f64>,
    /// Number of increasing targets tried above the observed value.
    pub steps: usize,
    /// Largest increase requested.
    pub span: f64,
    /// Number of lowest-property molecules optimized.
    pub molecules: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { deltas: vec![0.0, 0.2, 0.4, 0.6], steps: 10, span: 4.0, molecules: 800 }
    }
}

/// Takes the molecules with the lowest property, decodes each latent code
/// toward `steps` increasing targets above its observed value and, per
/// similarity threshold, keeps the most improved valid decode that is at
/// least that similar to the input.
pub fn constrained_optimize<G: ConditionalGenerator>(model: &G, dataset: &[Molecule], cfg: &OptimizeConfig) -> Result<OptimizationReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ranked: Vec<(f64, &Molecule)> = dataset.iter().map(|m| (proxy_logp(&m.graph), m)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked.truncate(cfg.molecules);

    let mut records = Vec::new();
    for (y_in, m) in ranked {
        let z = model.encode(&m.graph)?;
        let fp_in = fingerprint(&m.graph);
        let mut candidates = Vec::new();
        for i in 1..=cfg.steps {
            let target = y_in + cfg.span * i as f64 / cfg.steps as f64;
            if let Some(g) = model.decode(&z, target)? {
                let y_out = proxy_logp(&g);
                candidates.push((to_smiles(&g), y_out, y_out - y_in, tanimoto(&fp_in, &fingerprint(&g))));
            }
        }
        for &delta in &cfg.deltas {
            let best = candidates.iter().filter(|c| c.2 > 0.0 && c.3 >= delta).max_by(|a, b| a.2.total_cmp(&b.2).then(a.3.total_cmp(&b.3)));
            records.push(match best {
                Some((smiles, y_out, imp, sim)) => OptimizationRecord {
                    delta,
                    smiles_in: m.smiles.clone(),
                    smiles_out: Some(smiles.clone()),
                    y_in,
                    y_out: Some(*y_out),
                    improvement: *imp,
                    similarity: *sim,
                    success: true,
                },
                None => OptimizationRecord {
                    delta,
                    smiles_in: m.smiles.clone(),
                    smiles_out: None,
                    y_in,
                    y_out: None,
                    improvement: 0.0,
                    similarity: 0.0,
                    success: false,
                },
            });
        }
    }
    let summaries = cfg.deltas.iter().map(|&d| summarize(&records, d)).collect();
    Ok(OptimizationReport { records, summaries })
}
