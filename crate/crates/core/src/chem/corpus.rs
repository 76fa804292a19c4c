//! Dataset files and the seeded desk-scale molecule generator.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_smiles, to_smiles, AtomType, BondType, MolecularGraph};
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/corpus.smi");

/// A parsed dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub smiles: String,
    pub graph: MolecularGraph,
}

impl Molecule {
    pub fn from_smiles(smiles: &str) -> Result<Self, super::SmilesError> {
        Ok(Self { smiles: smiles.to_string(), graph: parse_smiles(smiles)? })
    }
}

/// Parses dataset text: one SMILES per line, `#` comments and blank lines
/// skipped. Errors carry the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<Molecule>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let m = Molecule::from_smiles(s).map_err(|source| Error::Smiles { line: k + 1, source })?;
        out.push(m);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Molecule>> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// The 100 reference molecules shipped with the crate.
pub fn bundled_corpus() -> Vec<Molecule> {
    parse_dataset(BUNDLED).expect("bundled corpus parses")
}

const ATOM_WEIGHTS: [(AtomType, f64); 9] = [
    (AtomType::C, 0.60),
    (AtomType::N, 0.12),
    (AtomType::O, 0.14),
    (AtomType::F, 0.04),
    (AtomType::S, 0.03),
    (AtomType::Cl, 0.04),
    (AtomType::Br, 0.015),
    (AtomType::I, 0.005),
    (AtomType::P, 0.01),
];

fn pick_atom<R: Rng + ?Sized>(rng: &mut R) -> AtomType {
    let total: f64 = ATOM_WEIGHTS.iter().map(|w| w.1).sum();
    let mut x = rng.random_range(0.0..total);
    for &(a, w) in &ATOM_WEIGHTS {
        if x < w {
            return a;
        }
        x -= w;
    }
    AtomType::C
}

/// Random connected, valence-valid graph with exactly `size` atoms, in
/// construction order (not SMILES order).
pub fn random_molecule<R: Rng + ?Sized>(rng: &mut R, size: usize) -> MolecularGraph {
    assert!(size >= 1);
    let mut atoms: Vec<AtomType> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondType)> = Vec::new();
    let mut used: Vec<u32> = Vec::new();
    let free = |atoms: &[AtomType], used: &[u32], i: usize| 2 * atoms[i].max_valence() - used[i];

    if size >= 6 && rng.random_bool(0.3) {
        // aromatic six-membered ring, optionally with one nitrogen
        let hetero = rng.random_bool(0.3).then(|| rng.random_range(0..6));
        for k in 0..6 {
            atoms.push(if Some(k) == hetero { AtomType::N } else { AtomType::C });
            used.push(6);
        }
        for k in 0..6 {
            bonds.push((k, (k + 1) % 6, BondType::Aromatic));
        }
    } else {
        let first = pick_atom(rng);
        atoms.push(first);
        used.push(0);
    }

    let mut attempts = 0;
    while atoms.len() < size {
        attempts += 1;
        let candidates: Vec<usize> = (0..atoms.len()).filter(|&i| free(&atoms, &used, i) >= 2).collect();
        // only hit if every atom is saturated; restart with a carbon chain
        if candidates.is_empty() || attempts > 10_000 {
            return chain(size);
        }
        let anchor = candidates[rng.random_range(0..candidates.len())];
        let mut atom = pick_atom(rng);
        if atoms.len() + 1 < size && atom.max_valence() == 1 && rng.random_bool(0.7) {
            atom = AtomType::C;
        }
        let cap = free(&atoms, &used, anchor).min(2 * atom.max_valence());
        let kind = match rng.random_range(0.0..1.0) {
            x if x < 0.12 && cap >= 4 => BondType::Double,
            x if x < 0.16 && cap >= 6 => BondType::Triple,
            _ => BondType::Single,
        };
        let idx = atoms.len();
        atoms.push(atom);
        used.push(kind.half_order());
        used[anchor] += kind.half_order();
        bonds.push((anchor, idx, kind));
    }

    // occasional ring closure forming a 5- or 6-membered ring
    if atoms.len() >= 5 && rng.random_bool(0.35) {
        let g = MolecularGraph::new(atoms.clone(), bonds.clone()).expect("valid by construction");
        let pairs: Vec<(usize, usize)> = (0..atoms.len())
            .flat_map(|i| ((i + 1)..atoms.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| free(&atoms, &used, i) >= 2 && free(&atoms, &used, j) >= 2 && matches!(distance(&g, i, j), Some(4) | Some(5)))
            .collect();
        if !pairs.is_empty() {
            let (i, j) = pairs[rng.random_range(0..pairs.len())];
            bonds.push((i, j, BondType::Single));
        }
    }
    MolecularGraph::new(atoms, bonds).expect("valid by construction")
}

fn chain(size: usize) -> MolecularGraph {
    MolecularGraph::new(vec![AtomType::C; size], (1..size).map(|j| (j - 1, j, BondType::Single))).expect("carbon chain is valid")
}

fn distance(g: &MolecularGraph, from: usize, to: usize) -> Option<usize> {
    let adj = g.adjacency();
    let mut dist = vec![usize::MAX; g.n_atoms()];
    dist[from] = 0;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (dist[to] != usize::MAX).then_some(dist[to])
}

/// `count` distinct random molecules with `min_atoms..=max_atoms` heavy
/// atoms, each re-read from its own SMILES so that node order is SMILES
/// order.
pub fn desk_corpus(count: usize, seed: u64, min_atoms: usize, max_atoms: usize) -> Vec<Molecule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let size = rng.random_range(min_atoms..=max_atoms);
        let g = random_molecule(&mut rng, size);
        let smiles = to_smiles(&g);
        if seen.insert(smiles.clone()) {
            out.push(Molecule::from_smiles(&smiles).expect("generated SMILES parses"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_has_one_hundred_valid_molecules() {
        let c = bundled_corpus();
        assert_eq!(c.len(), 100);
        assert!(c.iter().all(|m| m.graph.check_valence() && m.graph.is_connected()));
    }

    #[test]
    fn dataset_errors_report_line_numbers() {
        let text = "# header\nCC\n\nC1CC\nCO\n";
        match parse_dataset(text) {
            Err(Error::Smiles { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(parse_dataset("# only\n\nCC\n").unwrap().len(), 1);
    }

    #[test]
    fn desk_corpus_is_seeded_and_sized() {
        let a = desk_corpus(30, 7, 3, 12);
        let b = desk_corpus(30, 7, 3, 12);
        assert_eq!(a, b);
        for m in &a {
            let n = m.graph.n_atoms();
            assert!((3..=12).contains(&n), "{} has {n} atoms", m.smiles);
            assert!(m.graph.check_valence() && m.graph.is_connected());
            assert_eq!(to_smiles(&m.graph), m.smiles, "node order is SMILES order");
        }
    }
}
