use super::{AtomType, BondType, MolecularGraph, ATOM_TYPES, BOND_TYPES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary adjacency tensor `E` (`n x n x e`) and one-hot node tensor `N`
/// (`n x d`) of a molecular graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTensors {
    n: usize,
    edges: Vec<u8>,
    nodes: Vec<u8>,
}

impl GraphTensors {
    /// Wraps raw row-major buffers; checks only their lengths.
    pub fn from_raw(n: usize, edges: Vec<u8>, nodes: Vec<u8>) -> Result<Self> {
        if n == 0 || edges.len() != n * n * BOND_TYPES || nodes.len() != n * ATOM_TYPES {
            return Err(Error::Config(format!("graph tensor buffers of length {} / {} do not match n = {n}", edges.len(), nodes.len())));
        }
        Ok(Self { n, edges, nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge(&self, i: usize, j: usize, k: usize) -> u8 {
        self.edges[(i * self.n + j) * BOND_TYPES + k]
    }

    pub fn node(&self, i: usize, t: usize) -> u8 {
        self.nodes[i * ATOM_TYPES + t]
    }

    pub fn edges_raw(&self) -> &[u8] {
        &self.edges
    }

    pub fn nodes_raw(&self) -> &[u8] {
        &self.nodes
    }

    /// `E` as an `n x n x e` real tensor.
    pub fn edges_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.edges.iter().map(|&b| if b == 1 { S::one() } else { S::zero() }).collect();
        Tensor::new(vec![self.n, self.n, BOND_TYPES], data).expect("sized by construction")
    }

    /// Frontal slice `E[:, :, k]` as an `n x n` matrix.
    pub fn edge_slice<S: Scalar>(&self, k: usize) -> Tensor<S> {
        let data = (0..self.n * self.n).map(|ij| if self.edges[ij * BOND_TYPES + k] == 1 { S::one() } else { S::zero() }).collect();
        Tensor::new(vec![self.n, self.n], data).expect("sized by construction")
    }

    /// `N` as an `n x d` real tensor.
    pub fn nodes_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.nodes.iter().map(|&b| if b == 1 { S::one() } else { S::zero() }).collect();
        Tensor::new(vec![self.n, ATOM_TYPES], data).expect("sized by construction")
    }

    /// Symmetric, at most one bond type per pair, empty diagonal, one-hot rows.
    pub fn satisfies_invariants(&self) -> bool {
        let n = self.n;
        let binary = self.edges.iter().chain(&self.nodes).all(|&b| b <= 1);
        let symmetric = (0..n).all(|i| (0..n).all(|j| (0..BOND_TYPES).all(|k| self.edge(i, j, k) == self.edge(j, i, k))));
        let single_type = (0..n).all(|i| (0..n).all(|j| (0..BOND_TYPES).map(|k| self.edge(i, j, k) as u32).sum::<u32>() <= 1));
        let no_loops = (0..n).all(|i| (0..BOND_TYPES).all(|k| self.edge(i, i, k) == 0));
        let one_hot = (0..n).all(|i| (0..ATOM_TYPES).map(|t| self.node(i, t) as u32).sum::<u32>() == 1);
        binary && symmetric && single_type && no_loops && one_hot
    }

    /// Undirected edges `(i, j)` with `i < j` and any bond present.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if (0..BOND_TYPES).any(|k| self.edge(i, j, k) == 1) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn tensorize(g: &MolecularGraph) -> GraphTensors {
    let n = g.n_atoms();
    let mut edges = vec![0u8; n * n * BOND_TYPES];
    let mut nodes = vec![0u8; n * ATOM_TYPES];
    for (i, a) in g.atoms().iter().enumerate() {
        nodes[i * ATOM_TYPES + a.index()] = 1;
    }
    for b in g.bonds() {
        let k = b.kind.index();
        edges[(b.i * n + b.j) * BOND_TYPES + k] = 1;
        edges[(b.j * n + b.i) * BOND_TYPES + k] = 1;
    }
    GraphTensors { n, edges, nodes }
}

/// Inverse of [`tensorize`]. Fails if the tensors violate their invariants.
pub fn detensorize(t: &GraphTensors) -> Result<MolecularGraph> {
    if !t.satisfies_invariants() {
        return Err(Error::Config("graph tensors violate their invariants".into()));
    }
    let n = t.n();
    let atoms = (0..n)
        .map(|i| {
            let k = (0..ATOM_TYPES).find(|&k| t.node(i, k) == 1).expect("one-hot row");
            AtomType::from_index(k).expect("index in vocabulary")
        })
        .collect();
    let mut bonds = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if let Some(k) = (0..BOND_TYPES).find(|&k| t.edge(i, j, k) == 1) {
                bonds.push((i, j, BondType::from_index(k).expect("index in vocabulary")));
            }
        }
    }
    MolecularGraph::new(atoms, bonds).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, random_molecule};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_carbon() {
        let t = tensorize(&parse_smiles("C").unwrap());
        assert_eq!(t.nodes_raw(), &[1, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(t.edges_raw(), &[0, 0, 0, 0]);
    }

    #[test]
    fn ethane_single_bond_entries() {
        let t = tensorize(&parse_smiles("CC").unwrap());
        let ones: Vec<(usize, usize, usize)> = (0..2)
            .flat_map(|i| (0..2).flat_map(move |j| (0..4).map(move |k| (i, j, k))))
            .filter(|&(i, j, k)| t.edge(i, j, k) == 1)
            .collect();
        assert_eq!(ones, vec![(0, 1, 0), (1, 0, 0)]);
    }

    #[test]
    fn carbon_dioxide_double_bond_entries() {
        let t = tensorize(&parse_smiles("O=C=O").unwrap());
        let ones: Vec<(usize, usize, usize)> = (0..3)
            .flat_map(|i| (0..3).flat_map(move |j| (0..4).map(move |k| (i, j, k))))
            .filter(|&(i, j, k)| t.edge(i, j, k) == 1)
            .collect();
        assert_eq!(ones, vec![(0, 1, 1), (1, 0, 1), (1, 2, 1), (2, 1, 1)]);
    }

    #[test]
    fn detensorize_rejects_broken_tensors() {
        let mut t = tensorize(&parse_smiles("CC").unwrap());
        t.edges[BOND_TYPES + 2] = 1; // entry (0, 1): second type on the same pair, one direction only
        assert!(detensorize(&t).is_err());
    }

    proptest! {
        #[test]
        fn tensorize_invariants_and_inverse(seed in any::<u64>(), size in 1usize..14) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_molecule(&mut rng, size);
            let t = tensorize(&g);
            prop_assert!(t.satisfies_invariants());
            prop_assert_eq!(detensorize(&t).unwrap(), g);
        }
    }
}
