//! Molecular graphs: atom and bond vocabularies, SMILES reading and
//! writing, dense tensor encoding, the proxy property, and fingerprints.

mod corpus;
mod fingerprint;
mod graph_tensors;
mod isomorphism;
mod smiles;

pub use corpus::{bundled_corpus, desk_corpus, load_dataset, parse_dataset, random_molecule, Molecule};
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, FINGERPRINT_BITS};
pub use graph_tensors::{detensorize, tensorize, GraphTensors};
pub use smiles::{parse_smiles, to_smiles, SmilesError};

use std::fmt;

use thiserror::Error;

/// Heavy-atom vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomType {
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

/// One-hot width of the node features.
pub const ATOM_TYPES: usize = 9;
/// Number of bond types.
pub const BOND_TYPES: usize = 4;

impl AtomType {
    pub const ALL: [AtomType; ATOM_TYPES] =
        [AtomType::C, AtomType::N, AtomType::O, AtomType::F, AtomType::P, AtomType::S, AtomType::Cl, AtomType::Br, AtomType::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            AtomType::C => "C",
            AtomType::N => "N",
            AtomType::O => "O",
            AtomType::F => "F",
            AtomType::P => "P",
            AtomType::S => "S",
            AtomType::Cl => "Cl",
            AtomType::Br => "Br",
            AtomType::I => "I",
        }
    }

    /// Lowercase SMILES form, for the types that have one.
    pub fn aromatic_symbol(self) -> Option<&'static str> {
        match self {
            AtomType::C => Some("c"),
            AtomType::N => Some("n"),
            AtomType::O => Some("o"),
            AtomType::P => Some("p"),
            AtomType::S => Some("s"),
            _ => None,
        }
    }

    pub fn max_valence(self) -> u32 {
        match self {
            AtomType::C => 4,
            AtomType::N => 3,
            AtomType::O => 2,
            AtomType::F | AtomType::Cl | AtomType::Br | AtomType::I => 1,
            AtomType::P => 5,
            AtomType::S => 6,
        }
    }
}

impl fmt::Display for AtomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; BOND_TYPES] = [BondType::Single, BondType::Double, BondType::Triple, BondType::Aromatic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Valence contribution in half-bond units (aromatic counts 1.5).
    pub fn half_order(self) -> u32 {
        match self {
            BondType::Single => 2,
            BondType::Double => 4,
            BondType::Triple => 6,
            BondType::Aromatic => 3,
        }
    }

    pub fn order(self) -> f64 {
        f64::from(self.half_order()) / 2.0
    }

    pub fn symbol(self) -> char {
        match self {
            BondType::Single => '-',
            BondType::Double => '=',
            BondType::Triple => '#',
            BondType::Aromatic => ':',
        }
    }
}

/// Undirected bond with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub kind: BondType,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no atoms")]
    Empty,
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("bond ({0}, {1}) references a missing atom")]
    OutOfRange(usize, usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
}

/// Node- and edge-typed undirected graph. Node order is significant: it is
/// the order atoms appear in the defining SMILES string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MolecularGraph {
    atoms: Vec<AtomType>,
    bonds: Vec<Bond>,
}

impl MolecularGraph {
    /// Builds a graph, normalizing each bond to `i < j` and sorting bonds.
    pub fn new(atoms: Vec<AtomType>, bonds: impl IntoIterator<Item = (usize, usize, BondType)>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = atoms.len();
        let mut out: Vec<Bond> = Vec::new();
        for (a, b, kind) in bonds {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if a >= n || b >= n {
                return Err(GraphError::OutOfRange(a, b));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            out.push(Bond { i, j, kind });
        }
        out.sort();
        for w in out.windows(2) {
            if (w[0].i, w[0].j) == (w[1].i, w[1].j) {
                return Err(GraphError::DuplicateBond(w[0].i, w[0].j));
            }
        }
        Ok(Self { atoms, bonds: out })
    }

    pub fn atoms(&self) -> &[AtomType] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondType> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.bonds.binary_search_by(|bd| (bd.i, bd.j).cmp(&(i, j))).ok().map(|k| self.bonds[k].kind)
    }

    /// Neighbor lists `(neighbor, bond type)` sorted by neighbor index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondType)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.kind));
            adj[b.j].push((b.i, b.kind));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Sum of bond orders at each atom, in half-bond units.
    pub fn half_valences(&self) -> Vec<u32> {
        let mut used = vec![0; self.atoms.len()];
        for b in &self.bonds {
            used[b.i] += b.kind.half_order();
            used[b.j] += b.kind.half_order();
        }
        used
    }

    /// `true` iff no atom exceeds its maximum valence.
    pub fn check_valence(&self) -> bool {
        self.half_valences().iter().zip(&self.atoms).all(|(&used, a)| used <= 2 * a.max_valence())
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }

    pub fn components(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// For each bond (in [`MolecularGraph::bonds`] order), whether it lies
    /// on a cycle, i.e. is not a bridge.
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let adj: Vec<Vec<(usize, usize)>> = {
            let mut adj = vec![Vec::new(); n];
            for (k, b) in self.bonds.iter().enumerate() {
                adj[b.i].push((b.j, k));
                adj[b.j].push((b.i, k));
            }
            adj
        };
        // iterative Tarjan bridge finding
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            // (node, edge used to enter, next neighbor position)
            let mut stack = vec![(root, usize::MAX, 0usize)];
            while let Some(top) = stack.last_mut() {
                let (u, via) = (top.0, top.1);
                if top.2 < adj[u].len() {
                    let (v, k) = adj[u][top.2];
                    top.2 += 1;
                    if k == via {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, k, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[via] = true;
                        }
                    }
                }
            }
        }
        is_bridge.into_iter().map(|b| !b).collect()
    }

    /// Graph isomorphism respecting atom and bond types.
    pub fn is_isomorphic(&self, other: &Self) -> bool {
        isomorphism::isomorphic(self, other)
    }

    /// Same graph under the node relabeling `perm`, where old node `i`
    /// becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut atoms = vec![AtomType::C; self.atoms.len()];
        for (i, &a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = a;
        }
        let bonds = self.bonds.iter().map(|b| (perm[b.i], perm[b.j], b.kind));
        Self::new(atoms, bonds).expect("permutation preserves validity")
    }

    /// Count of atoms of each type, indexed by [`AtomType::index`].
    pub fn atom_counts(&self) -> [usize; ATOM_TYPES] {
        let mut counts = [0; ATOM_TYPES];
        for a in &self.atoms {
            counts[a.index()] += 1;
        }
        counts
    }
}

/// Deterministic closed-form stand-in for an octanol-water partition
/// coefficient: a weighted count of atom types plus a ring-bond term.
pub fn proxy_logp(g: &MolecularGraph) -> f64 {
    let c = g.atom_counts();
    let halogens = c[AtomType::F.index()] + c[AtomType::Cl.index()] + c[AtomType::Br.index()] + c[AtomType::I.index()];
    let ring_bonds = g.ring_bonds().iter().filter(|&&r| r).count();
    0.40 * c[AtomType::C.index()] as f64 + 0.60 * halogens as f64 + 0.25 * c[AtomType::S.index()] as f64
        - 0.80 * c[AtomType::O.index()] as f64
        - 1.00 * c[AtomType::N.index()] as f64
        - 0.50 * c[AtomType::P.index()] as f64
        + 0.10 * ring_bonds as f64
}
