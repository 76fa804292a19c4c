//! SMILES subset: organic-subset atoms (upper and aromatic lowercase),
//! bond symbols `- = # :`, branches and single-digit ring closures.
//! Hydrogens stay implicit.

use thiserror::Error;

use super::{AtomType, BondType, GraphError, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("ring closure {0} is never closed")]
    UnbalancedRing(u8),
    #[error("unknown atom `{symbol}` at position {pos}")]
    UnknownAtom { symbol: String, pos: usize },
    #[error("atom {atom} ({symbol}) exceeds its maximum valence")]
    ValenceViolation { atom: usize, symbol: &'static str },
    #[error("unsupported feature at position {pos}: {feature}")]
    UnsupportedFeature { feature: &'static str, pos: usize },
    #[error("malformed SMILES at position {pos}: {reason}")]
    MalformedInput { pos: usize, reason: &'static str },
}

fn malformed(pos: usize, reason: &'static str) -> SmilesError {
    SmilesError::MalformedInput { pos, reason }
}

struct PendingBond {
    kind: Option<BondType>,
    pos: usize,
}

struct OpenRing {
    atom: usize,
    kind: Option<BondType>,
}

/// Parses a SMILES string into a graph whose node order is the order atoms
/// appear in `text`.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    if text.is_empty() {
        return Err(malformed(0, "empty input"));
    }
    if !text.is_ascii() {
        return Err(malformed(0, "non-ASCII input"));
    }
    let bytes = text.as_bytes();
    let mut atoms: Vec<AtomType> = Vec::new();
    let mut aromatic: Vec<bool> = Vec::new();
    // (i, j, explicit kind); implicit kinds resolved after ring perception
    let mut bonds: Vec<(usize, usize, Option<BondType>)> = Vec::new();
    let mut rings: [Option<OpenRing>; 10] = Default::default();
    let mut branch_stack: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<PendingBond> = None;
    let mut branch_open_empty = false;

    let mut pos = 0;
    while pos < bytes.len() {
        let ch = bytes[pos] as char;
        match ch {
            '-' | '=' | '#' | ':' => {
                if prev.is_none() {
                    return Err(malformed(pos, "bond without a preceding atom"));
                }
                if pending.is_some() {
                    return Err(malformed(pos, "consecutive bond symbols"));
                }
                let kind = match ch {
                    '-' => BondType::Single,
                    '=' => BondType::Double,
                    '#' => BondType::Triple,
                    _ => BondType::Aromatic,
                };
                pending = Some(PendingBond { kind: Some(kind), pos });
                pos += 1;
            }
            '(' => {
                let Some(p) = prev else {
                    return Err(malformed(pos, "branch without a preceding atom"));
                };
                if pending.is_some() {
                    return Err(malformed(pos, "bond symbol before branch"));
                }
                branch_stack.push(p);
                branch_open_empty = true;
                pos += 1;
            }
            ')' => {
                if branch_open_empty {
                    return Err(malformed(pos, "empty branch"));
                }
                if pending.is_some() {
                    return Err(malformed(pos, "dangling bond symbol"));
                }
                prev = Some(branch_stack.pop().ok_or_else(|| malformed(pos, "unbalanced ')'"))?);
                pos += 1;
            }
            '0'..='9' => {
                let Some(cur) = prev else {
                    return Err(malformed(pos, "ring closure without a preceding atom"));
                };
                let digit = (bytes[pos] - b'0') as usize;
                let kind = pending.take().and_then(|p| p.kind);
                match rings[digit].take() {
                    Some(open) => {
                        if open.atom == cur {
                            return Err(malformed(pos, "ring closure to the same atom"));
                        }
                        let kind = match (open.kind, kind) {
                            (Some(a), Some(b)) if a != b => return Err(malformed(pos, "conflicting ring-closure bond symbols")),
                            (a, b) => a.or(b),
                        };
                        bonds.push((open.atom, cur, kind));
                    }
                    None => rings[digit] = Some(OpenRing { atom: cur, kind }),
                }
                pos += 1;
            }
            '%' => return Err(SmilesError::UnsupportedFeature { feature: "two-digit ring closure", pos }),
            '[' => return Err(SmilesError::UnsupportedFeature { feature: "bracket atom (charge, isotope or explicit hydrogen)", pos }),
            '/' | '\\' | '@' => return Err(SmilesError::UnsupportedFeature { feature: "stereochemistry", pos }),
            '+' => return Err(SmilesError::UnsupportedFeature { feature: "charge", pos }),
            '.' => return Err(SmilesError::UnsupportedFeature { feature: "disconnected components", pos }),
            c if c.is_ascii_alphabetic() => {
                let (atom, is_aromatic, len) = read_atom(bytes, pos)?;
                let idx = atoms.len();
                atoms.push(atom);
                aromatic.push(is_aromatic);
                if let Some(p) = prev {
                    let kind = pending.take().and_then(|b| b.kind);
                    bonds.push((p, idx, kind));
                } else if let Some(b) = pending.take() {
                    return Err(malformed(b.pos, "bond without a preceding atom"));
                }
                prev = Some(idx);
                branch_open_empty = false;
                pos += len;
            }
            _ => return Err(malformed(pos, "unexpected character")),
        }
    }
    if let Some(p) = pending {
        return Err(malformed(p.pos, "dangling bond symbol"));
    }
    if !branch_stack.is_empty() {
        return Err(malformed(bytes.len(), "unbalanced '('"));
    }
    if let Some(d) = rings.iter().position(Option::is_some) {
        return Err(SmilesError::UnbalancedRing(d as u8));
    }

    // Resolve implicit bonds: aromatic between two aromatic atoms on a ring,
    // single otherwise.
    let skeleton = build(&atoms, bonds.iter().map(|&(i, j, _)| (i, j, BondType::Single)))?;
    let on_ring = skeleton.ring_bonds();
    let mut ring_of = std::collections::HashMap::new();
    for (b, &r) in skeleton.bonds().iter().zip(&on_ring) {
        ring_of.insert((b.i, b.j), r);
    }
    let resolved = bonds.iter().map(|&(i, j, kind)| {
        let kind = kind.unwrap_or_else(|| {
            let key = (i.min(j), i.max(j));
            if aromatic[i] && aromatic[j] && ring_of[&key] {
                BondType::Aromatic
            } else {
                BondType::Single
            }
        });
        (i, j, kind)
    });
    let graph = build(&atoms, resolved)?;
    if let Some(atom) = graph.half_valences().into_iter().enumerate().position(|(a, used)| used > 2 * atoms[a].max_valence()) {
        return Err(SmilesError::ValenceViolation { atom, symbol: atoms[atom].symbol() });
    }
    Ok(graph)
}

fn build(atoms: &[AtomType], bonds: impl IntoIterator<Item = (usize, usize, BondType)>) -> Result<MolecularGraph, SmilesError> {
    MolecularGraph::new(atoms.to_vec(), bonds).map_err(|e| match e {
        GraphError::DuplicateBond(..) => malformed(0, "duplicate bond between the same atoms"),
        _ => malformed(0, "invalid graph"),
    })
}

fn read_atom(bytes: &[u8], pos: usize) -> Result<(AtomType, bool, usize), SmilesError> {
    let two = bytes.get(pos..pos + 2);
    match two {
        Some(b"Cl") => return Ok((AtomType::Cl, false, 2)),
        Some(b"Br") => return Ok((AtomType::Br, false, 2)),
        _ => {}
    }
    let atom = match bytes[pos] {
        b'C' => (AtomType::C, false),
        b'N' => (AtomType::N, false),
        b'O' => (AtomType::O, false),
        b'F' => (AtomType::F, false),
        b'P' => (AtomType::P, false),
        b'S' => (AtomType::S, false),
        b'I' => (AtomType::I, false),
        b'c' => (AtomType::C, true),
        b'n' => (AtomType::N, true),
        b'o' => (AtomType::O, true),
        b'p' => (AtomType::P, true),
        b's' => (AtomType::S, true),
        other => {
            let mut end = pos + 1;
            if other.is_ascii_uppercase() {
                while end < bytes.len() && bytes[end].is_ascii_lowercase() && end - pos < 2 {
                    end += 1;
                }
            }
            let symbol = String::from_utf8_lossy(&bytes[pos..end]).into_owned();
            return Err(SmilesError::UnknownAtom { symbol, pos });
        }
    };
    Ok((atom.0, atom.1, 1))
}

/// Writes a SMILES string by depth-first traversal from atom 0, visiting
/// neighbors lowest index first. Disconnected graphs are written as
/// `.`-separated components, which [`parse_smiles`] does not read back.
pub fn to_smiles(g: &MolecularGraph) -> String {
    let n = g.n_atoms();
    let adj = g.adjacency();
    let ring_flags = g.ring_bonds();
    let on_ring = |a: usize, b: usize| {
        let (i, j) = (a.min(b), a.max(b));
        let k = g.bonds().binary_search_by(|bd| (bd.i, bd.j).cmp(&(i, j))).expect("bond exists");
        ring_flags[k]
    };
    let lower: Vec<bool> =
        (0..n).map(|i| g.atoms()[i].aromatic_symbol().is_some() && adj[i].iter().any(|&(_, k)| k == BondType::Aromatic)).collect();

    // DFS pre-pass: visit order and tree children
    let mut order = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut parent = vec![usize::MAX; n];
    let mut roots = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        roots.push(root);
        dfs_order(root, &adj, &mut order, &mut parent, &mut children, &mut counter);
    }

    // ring closures opened at the earlier-visited endpoint
    let mut opens: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); n];
    for b in g.bonds() {
        if parent[b.j] == b.i || parent[b.i] == b.j {
            continue;
        }
        let (first, second) = if order[b.i] < order[b.j] { (b.i, b.j) } else { (b.j, b.i) };
        opens[first].push(second);
        closes[second].push(first);
    }
    for list in opens.iter_mut().chain(closes.iter_mut()) {
        list.sort_by_key(|&v| order[v]);
    }

    let bond_symbol = |a: usize, b: usize| -> &'static str {
        let kind = g.bond_between(a, b).expect("bond exists");
        let both_lower = lower[a] && lower[b];
        match kind {
            BondType::Aromatic if both_lower && on_ring(a, b) => "",
            BondType::Aromatic => ":",
            BondType::Single if both_lower => "-",
            BondType::Single => "",
            BondType::Double => "=",
            BondType::Triple => "#",
        }
    };

    let mut w = Writer {
        g,
        lower: &lower,
        children: &children,
        opens: &opens,
        closes: &closes,
        digits: [None; 10],
        out: String::new(),
        bond_symbol: &bond_symbol,
    };
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            w.out.push('.');
        }
        w.emit(root);
    }
    w.out
}

fn dfs_order(
    root: usize,
    adj: &[Vec<(usize, BondType)>],
    order: &mut [usize],
    parent: &mut [usize],
    children: &mut [Vec<usize>],
    counter: &mut usize,
) {
    let mut stack = vec![(root, 0usize)];
    order[root] = *counter;
    *counter += 1;
    while let Some(top) = stack.last_mut() {
        let u = top.0;
        if top.1 < adj[u].len() {
            let v = adj[u][top.1].0;
            top.1 += 1;
            if order[v] == usize::MAX {
                order[v] = *counter;
                *counter += 1;
                parent[v] = u;
                children[u].push(v);
                stack.push((v, 0));
            }
        } else {
            stack.pop();
        }
    }
}

struct Writer<'a, F: Fn(usize, usize) -> &'static str> {
    g: &'a MolecularGraph,
    lower: &'a [bool],
    children: &'a [Vec<usize>],
    opens: &'a [Vec<usize>],
    closes: &'a [Vec<usize>],
    /// digit -> (opening atom, closing atom)
    digits: [Option<(usize, usize)>; 10],
    out: String,
    bond_symbol: &'a F,
}

impl<F: Fn(usize, usize) -> &'static str> Writer<'_, F> {
    fn emit(&mut self, u: usize) {
        let atom = self.g.atoms()[u];
        let sym = if self.lower[u] { atom.aromatic_symbol().expect("lowercase form exists") } else { atom.symbol() };
        self.out.push_str(sym);
        for &partner in &self.closes[u] {
            let d = self.digits.iter().position(|slot| *slot == Some((partner, u))).expect("ring digit was opened");
            self.digits[d] = None;
            self.push_digit(d);
        }
        for &partner in &self.opens[u] {
            // 1..9 first, then 0
            let d =
                (1..10).chain(std::iter::once(0)).find(|&d| self.digits[d].is_none()).expect("more than ten ring closures open at once");
            self.digits[d] = Some((u, partner));
            let s = (self.bond_symbol)(u, partner);
            self.out.push_str(s);
            self.push_digit(d);
        }
        let kids = &self.children[u];
        for (k, &v) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                self.out.push('(');
            }
            let s = (self.bond_symbol)(u, v);
            self.out.push_str(s);
            self.emit(v);
            if !last {
                self.out.push(')');
            }
        }
    }

    fn push_digit(&mut self, d: usize) {
        self.out.push(char::from(b'0' + d as u8));
    }
}
