//! Circular neighborhood fingerprints and Tanimoto similarity.

use super::MolecularGraph;

pub const FINGERPRINT_BITS: usize = 2048;
const WORDS: usize = FINGERPRINT_BITS / 64;
const MAX_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: [u64; WORDS],
}

impl Default for Fingerprint {
    fn default() -> Self {
        Self { words: [0; WORDS] }
    }
}

impl Fingerprint {
    pub fn from_bits(bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::default();
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        let bit = bit % FINGERPRINT_BITS;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        (self.words[bit / 64] >> (bit % 64)) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..FINGERPRINT_BITS).filter(|&b| self.get(b))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Canonical strings of the radius-0..=2 neighborhoods of every atom. An
/// atom's radius-`r` string is its radius-`r-1` string followed by the
/// sorted list of `(bond symbol, neighbor radius-(r-1) string)`.
pub(crate) fn environments(g: &MolecularGraph) -> Vec<Vec<String>> {
    let adj = g.adjacency();
    let mut layers: Vec<Vec<String>> = vec![g.atoms().iter().map(|a| a.symbol().to_string()).collect()];
    for _ in 0..MAX_RADIUS {
        let prev = layers.last().expect("radius 0 present");
        let next = (0..g.n_atoms())
            .map(|i| {
                let mut nbrs: Vec<String> = adj[i].iter().map(|&(j, k)| format!("{}{}", k.symbol(), prev[j])).collect();
                nbrs.sort();
                format!("{}({})", prev[i], nbrs.join(","))
            })
            .collect();
        layers.push(next);
    }
    layers
}

/// Hashes every atom's radius-0, 1 and 2 environment with 64-bit FNV-1a
/// into a 2048-bit vector.
pub fn fingerprint(g: &MolecularGraph) -> Fingerprint {
    let mut fp = Fingerprint::default();
    for (r, layer) in environments(g).iter().enumerate() {
        for env in layer {
            let key = format!("r{r}:{env}");
            fp.set((fnv1a(key.as_bytes()) % FINGERPRINT_BITS as u64) as usize);
        }
    }
    fp
}

/// `|a & b| / |a | b|`, defined as 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn identical_graphs_identical_fingerprints() {
        let a = fingerprint(&parse_smiles("c1ccccc1CO").unwrap());
        let b = fingerprint(&parse_smiles("c1ccccc1CO").unwrap());
        assert_eq!(a, b);
        assert_eq!(tanimoto(&a, &b), 1.0);
    }

    #[test]
    fn carbon_and_nitrogen_share_no_bits() {
        let c = fingerprint(&parse_smiles("C").unwrap());
        let n = fingerprint(&parse_smiles("N").unwrap());
        assert_eq!(c.count_ones(), 3);
        assert_eq!(n.count_ones(), 3);
        assert_eq!(tanimoto(&c, &n), 0.0);
    }

    #[test]
    fn ethane_sets_atom_and_bond_environment_bits() {
        let fp = fingerprint(&parse_smiles("CC").unwrap());
        let r0 = (fnv1a(b"r0:C") % 2048) as usize;
        let r1 = (fnv1a(b"r1:C(-C)") % 2048) as usize;
        assert_ne!(r0, r1);
        assert!(fp.get(r0) && fp.get(r1));
        assert!(fp.count_ones() >= 2);
    }

    #[test]
    fn tanimoto_set_arithmetic() {
        let a = Fingerprint::from_bits([1, 2]);
        let b = Fingerprint::from_bits([2, 3]);
        assert!((tanimoto(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        let c = Fingerprint::from_bits([100, 200]);
        assert_eq!(tanimoto(&a, &c), 0.0);
        assert_eq!(tanimoto(&Fingerprint::default(), &Fingerprint::default()), 1.0);
    }

    proptest! {
        #[test]
        fn tanimoto_symmetric_reflexive_bounded(
            a in prop::collection::vec(0usize..FINGERPRINT_BITS, 0..64),
            b in prop::collection::vec(0usize..FINGERPRINT_BITS, 0..64),
        ) {
            let (fa, fb) = (Fingerprint::from_bits(a), Fingerprint::from_bits(b));
            let s = tanimoto(&fa, &fb);
            prop_assert_eq!(s, tanimoto(&fb, &fa));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(tanimoto(&fa, &fa), 1.0);
        }
    }
}
