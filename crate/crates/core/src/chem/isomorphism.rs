use super::{BondType, MolecularGraph};

/// Backtracking search for a type-preserving bijection. Graphs here have
/// at most a few dozen atoms, so no refinement beyond degree and atom type
/// is needed.
pub(super) fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.n_atoms();
    if n != b.n_atoms() || a.bonds().len() != b.bonds().len() {
        return false;
    }
    let mut ta = a.atoms().to_vec();
    let mut tb = b.atoms().to_vec();
    ta.sort();
    tb.sort();
    if ta != tb {
        return false;
    }
    let mut ka: Vec<BondType> = a.bonds().iter().map(|x| x.kind).collect();
    let mut kb: Vec<BondType> = b.bonds().iter().map(|x| x.kind).collect();
    ka.sort();
    kb.sort();
    if ka != kb {
        return false;
    }

    let adj_a = a.adjacency();
    let adj_b = b.adjacency();
    let sig = |g: &MolecularGraph, adj: &[Vec<(usize, BondType)>], i: usize| {
        let mut kinds: Vec<BondType> = adj[i].iter().map(|&(_, k)| k).collect();
        kinds.sort();
        (g.atoms()[i], kinds)
    };
    let sig_a: Vec<_> = (0..n).map(|i| sig(a, &adj_a, i)).collect();
    let sig_b: Vec<_> = (0..n).map(|i| sig(b, &adj_b, i)).collect();

    // visit `a` in BFS order so each new node is adjacent to a mapped one
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        order.push(start);
        let mut head = order.len() - 1;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, _) in &adj_a[u] {
                if !seen[v] {
                    seen[v] = true;
                    order.push(v);
                }
            }
        }
    }

    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    search(0, &order, a, b, &adj_a, &sig_a, &sig_b, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn search(
    depth: usize,
    order: &[usize],
    a: &MolecularGraph,
    b: &MolecularGraph,
    adj_a: &[Vec<(usize, BondType)>],
    sig_a: &[(super::AtomType, Vec<BondType>)],
    sig_b: &[(super::AtomType, Vec<BondType>)],
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    for cand in 0..b.n_atoms() {
        if used[cand] || sig_a[u] != sig_b[cand] {
            continue;
        }
        let consistent = adj_a[u].iter().all(|&(v, k)| map[v] == usize::MAX || b.bond_between(cand, map[v]) == Some(k));
        // mapped non-neighbors of u must stay non-neighbors
        let consistent = consistent
            && (0..a.n_atoms()).all(|v| map[v] == usize::MAX || a.bond_between(u, v).is_some() || b.bond_between(cand, map[v]).is_none());
        if !consistent {
            continue;
        }
        map[u] = cand;
        used[cand] = true;
        if search(depth + 1, order, a, b, adj_a, sig_a, sig_b, map, used) {
            return true;
        }
        map[u] = usize::MAX;
        used[cand] = false;
    }
    false
}

#[cfg(test)]
mod tests {
    use crate::chem::parse_smiles;

    #[test]
    fn distinguishes_and_matches() {
        let p = |s| parse_smiles(s).unwrap();
        assert!(p("CCO").is_isomorphic(&p("OCC")));
        assert!(!p("CCO").is_isomorphic(&p("COC")));
        assert!(p("C1CCCCC1C").is_isomorphic(&p("CC1CCCCC1")));
        assert!(!p("C1CCC1C").is_isomorphic(&p("C1CC1CC")));
        assert!(!p("C=CC").is_isomorphic(&p("CCC")));
    }
}
