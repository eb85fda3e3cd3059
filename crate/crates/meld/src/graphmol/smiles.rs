//! SMILES-subset parser and writer.
//!
//! The subset covers kekulized organic graphs: single-letter uppercase atom
//! symbols from the vocabulary, implicit single bonds, '=' and '#' bonds,
//! branches in parentheses, and ring-closure digits 1-9. No charges,
//! isotopes, stereochemistry, bracket atoms, or aromatic lowercase forms.

use super::{GraphError, GraphSample, Vocabulary, DOUBLE, NO_BOND, SINGLE, TRIPLE};

/// Parse a subset-grammar SMILES string into a clean graph.
pub fn parse_smiles(text: &str, vocab: &Vocabulary) -> Result<GraphSample, GraphError> {
    let bytes = text.trim().as_bytes();
    if bytes.is_empty() {
        return Err(GraphError::Syntax {
            position: 0,
            expected: "atom symbol".into(),
        });
    }

    let mut nodes: Vec<usize> = Vec::new();
    let mut bonds: Vec<(usize, usize, usize)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<usize> = None;
    let mut branch_stack: Vec<usize> = Vec::new();
    // digit -> (open atom, bond given at the opening side)
    let mut open_rings: [Option<(usize, Option<usize>)>; 10] = [None; 10];

    let add_bond = |bonds: &mut Vec<(usize, usize, usize)>,
                        a: usize,
                        b: usize,
                        ty: usize,
                        pos: usize|
     -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::Syntax {
                position: pos,
                expected: "ring closure to a different atom".into(),
            });
        }
        if bonds.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a)) {
            return Err(GraphError::Syntax {
                position: pos,
                expected: "at most one bond per atom pair".into(),
            });
        }
        bonds.push((a, b, ty));
        Ok(())
    };

    for (pos, &c) in bytes.iter().enumerate() {
        match c {
            b'=' | b'#' => {
                if pending.is_some() {
                    return Err(GraphError::Syntax {
                        position: pos,
                        expected: "atom or ring digit after bond symbol".into(),
                    });
                }
                pending = Some(if c == b'=' { DOUBLE } else { TRIPLE });
            }
            b'(' => {
                let p = prev.ok_or(GraphError::Syntax {
                    position: pos,
                    expected: "atom before branch".into(),
                })?;
                if pending.is_some() {
                    return Err(GraphError::Syntax {
                        position: pos,
                        expected: "atom or ring digit after bond symbol".into(),
                    });
                }
                branch_stack.push(p);
            }
            b')' => {
                if pending.is_some() {
                    return Err(GraphError::Syntax {
                        position: pos,
                        expected: "atom or ring digit after bond symbol".into(),
                    });
                }
                prev = Some(branch_stack.pop().ok_or(GraphError::Syntax {
                    position: pos,
                    expected: "matching '('".into(),
                })?);
            }
            b'1'..=b'9' => {
                let digit = (c - b'0') as usize;
                let here = prev.ok_or(GraphError::Syntax {
                    position: pos,
                    expected: "atom before ring digit".into(),
                })?;
                match open_rings[digit].take() {
                    Some((other, open_bond)) => {
                        let ty = match (open_bond, pending.take()) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(GraphError::Syntax {
                                    position: pos,
                                    expected: "matching bond symbols at ring closure".into(),
                                })
                            }
                            (Some(a), _) => a,
                            (None, Some(b)) => b,
                            (None, None) => SINGLE,
                        };
                        add_bond(&mut bonds, other, here, ty, pos)?;
                    }
                    None => {
                        open_rings[digit] = Some((here, pending.take()));
                    }
                }
            }
            b'A'..=b'Z' => {
                let symbol = (c as char).to_string();
                let id = vocab.atom_id(&symbol).ok_or(GraphError::UnknownAtom {
                    symbol,
                    position: pos,
                })?;
                let idx = nodes.len();
                nodes.push(id);
                if let Some(p) = prev {
                    let ty = pending.take().unwrap_or(SINGLE);
                    add_bond(&mut bonds, p, idx, ty, pos)?;
                } else if pending.is_some() {
                    return Err(GraphError::Syntax {
                        position: pos,
                        expected: "no bond symbol before the first atom".into(),
                    });
                }
                prev = Some(idx);
            }
            _ => {
                return Err(GraphError::Syntax {
                    position: pos,
                    expected: "atom symbol, bond, branch, or ring digit".into(),
                })
            }
        }
    }

    if pending.is_some() {
        return Err(GraphError::Syntax {
            position: bytes.len(),
            expected: "atom or ring digit after bond symbol".into(),
        });
    }
    if !branch_stack.is_empty() {
        return Err(GraphError::UnclosedBranch);
    }
    for (digit, slot) in open_rings.iter().enumerate() {
        if slot.is_some() {
            return Err(GraphError::UnclosedRing { digit: digit as u8 });
        }
    }

    let mut g = GraphSample::new(nodes);
    for (a, b, ty) in bonds {
        g.set_edge(a, b, ty);
    }
    Ok(g)
}

/// Write a clean connected graph as a subset-grammar SMILES string.
///
/// Traversal is depth-first from node 0 with neighbors visited in index
/// order; ring-closure digits are assigned in discovery order and reused
/// once closed.
pub fn write_smiles(g: &GraphSample, vocab: &Vocabulary) -> Result<String, GraphError> {
    if !g.is_clean(vocab) {
        return Err(GraphError::MaskedInput);
    }
    let components = g.component_count();
    if components > 1 {
        return Err(GraphError::DisconnectedGraph { components });
    }
    if g.n() == 0 {
        return Err(GraphError::EmptyDataset);
    }

    let n = g.n();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && g.edge(i, j) != NO_BOND).collect())
        .collect();

    // First pass: DFS to find tree edges and ring (back) edges in discovery order.
    let mut visited = vec![false; n];
    let mut tree_children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_edges: Vec<(usize, usize)> = Vec::new(); // (later atom, earlier atom)
    let mut edge_used = vec![false; n * n];
    fn dfs(
        u: usize,
        neighbors: &[Vec<usize>],
        visited: &mut [bool],
        tree_children: &mut [Vec<usize>],
        ring_edges: &mut Vec<(usize, usize)>,
        edge_used: &mut [bool],
        n: usize,
    ) {
        visited[u] = true;
        for &v in &neighbors[u] {
            if edge_used[u * n + v] {
                continue;
            }
            edge_used[u * n + v] = true;
            edge_used[v * n + u] = true;
            if visited[v] {
                ring_edges.push((u, v));
            } else {
                tree_children[u].push(v);
                dfs(v, neighbors, visited, tree_children, ring_edges, edge_used, n);
            }
        }
    }
    dfs(
        0,
        &neighbors,
        &mut visited,
        &mut tree_children,
        &mut ring_edges,
        &mut edge_used,
        n,
    );

    // Assign digits in discovery order with reuse after closure.
    // openings[atom] and closings[atom] list (digit, bond type) markers.
    let mut openings: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closings: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    {
        // Determine DFS emission order of atoms to know digit lifetimes.
        let mut order = Vec::with_capacity(n);
        fn emit_order(u: usize, tree_children: &[Vec<usize>], order: &mut Vec<usize>) {
            order.push(u);
            for &c in &tree_children[u] {
                emit_order(c, tree_children, order);
            }
        }
        emit_order(0, &tree_children, &mut order);
        let rank: Vec<usize> = {
            let mut r = vec![0; n];
            for (k, &a) in order.iter().enumerate() {
                r[a] = k;
            }
            r
        };
        // Ring edges sorted by discovery = order they were pushed during DFS.
        let mut active: Vec<Option<usize>> = Vec::new(); // digit slot -> closing rank
        for &(later, earlier) in &ring_edges {
            let close_rank = rank[later];
            let mut digit = None;
            for (slot, state) in active.iter_mut().enumerate() {
                if state.map_or(true, |r| r < rank[earlier]) {
                    *state = Some(close_rank);
                    digit = Some(slot + 1);
                    break;
                }
            }
            let digit = match digit {
                Some(d) => d,
                None => {
                    active.push(Some(close_rank));
                    active.len()
                }
            };
            if digit > 9 {
                return Err(GraphError::Syntax {
                    position: 0,
                    expected: "at most 9 simultaneously open rings".into(),
                });
            }
            openings[earlier].push(digit);
            closings[later].push((digit, g.edge(later, earlier)));
        }
    }

    let mut out = String::new();
    fn bond_symbol(ty: usize) -> &'static str {
        match ty {
            DOUBLE => "=",
            TRIPLE => "#",
            _ => "",
        }
    }
    fn emit(
        u: usize,
        g: &GraphSample,
        vocab: &Vocabulary,
        tree_children: &[Vec<usize>],
        openings: &[Vec<usize>],
        closings: &[Vec<(usize, usize)>],
        out: &mut String,
    ) {
        out.push_str(&vocab.atom_types[g.node(u)]);
        for &d in &openings[u] {
            out.push_str(&d.to_string());
        }
        for &(d, ty) in &closings[u] {
            out.push_str(bond_symbol(ty));
            out.push_str(&d.to_string());
        }
        let kids = &tree_children[u];
        for (k, &c) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push_str(bond_symbol(g.edge(u, c)));
            emit(c, g, vocab, tree_children, openings, closings, out);
            if !last {
                out.push(')');
            }
        }
    }
    emit(0, g, vocab, &tree_children, &openings, &closings, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphmol::canonical_code;

    fn vocab() -> Vocabulary {
        Vocabulary::qm9_default()
    }

    #[test]
    fn single_atom() {
        let g = parse_smiles("C", &vocab()).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.node(0), 0);
    }

    #[test]
    fn linear_chain_with_oxygen() {
        let g = parse_smiles("CCO", &vocab()).unwrap();
        assert_eq!(g.nodes(), &[0, 0, 2]);
        assert_eq!(g.edge(0, 1), SINGLE);
        assert_eq!(g.edge(1, 2), SINGLE);
        assert_eq!(g.edge(0, 2), NO_BOND);
    }

    #[test]
    fn ring_closure_triangle() {
        let g = parse_smiles("C1CC1", &vocab()).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge(0, 1), SINGLE);
        assert_eq!(g.edge(1, 2), SINGLE);
        assert_eq!(g.edge(0, 2), SINGLE);
    }

    #[test]
    fn double_bond() {
        let g = parse_smiles("C=O", &vocab()).unwrap();
        assert_eq!(g.nodes(), &[0, 2]);
        assert_eq!(g.edge(0, 1), DOUBLE);
    }

    #[test]
    fn branches_and_bonds() {
        // isobutylene-ish: C(=C)(C)C
        let g = parse_smiles("C(=C)(C)C", &vocab()).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.edge(0, 1), DOUBLE);
        assert_eq!(g.edge(0, 2), SINGLE);
        assert_eq!(g.edge(0, 3), SINGLE);
    }

    #[test]
    fn error_positions() {
        match parse_smiles("CX", &vocab()) {
            Err(GraphError::UnknownAtom { position, .. }) => assert_eq!(position, 1),
            other => panic!("expected UnknownAtom, got {other:?}"),
        }
        assert!(matches!(
            parse_smiles("C1CC", &vocab()),
            Err(GraphError::UnclosedRing { digit: 1 })
        ));
        assert!(matches!(
            parse_smiles("C(C", &vocab()),
            Err(GraphError::UnclosedBranch)
        ));
        assert!(matches!(
            parse_smiles("C=", &vocab()),
            Err(GraphError::Syntax { .. })
        ));
        assert!(matches!(
            parse_smiles("C#=C", &vocab()),
            Err(GraphError::Syntax { .. })
        ));
    }

    #[test]
    fn ring_bond_symbol_either_side() {
        let a = parse_smiles("C=1CCC=1", &vocab());
        let b = parse_smiles("C1CCC=1", &vocab()).unwrap();
        let c = parse_smiles("C=1CCC1", &vocab()).unwrap();
        assert_eq!(b.edge(0, 3), DOUBLE);
        assert_eq!(c.edge(0, 3), DOUBLE);
        assert!(a.is_ok());
        assert!(matches!(
            parse_smiles("C=1CCC#1", &vocab()),
            Err(GraphError::Syntax { .. })
        ));
    }

    #[test]
    fn writer_single_atom_and_triangle() {
        let v = vocab();
        let g = GraphSample::new(vec![0]);
        assert_eq!(write_smiles(&g, &v).unwrap(), "C");

        let mut tri = GraphSample::new(vec![0, 0, 0]);
        tri.set_edge(0, 1, SINGLE);
        tri.set_edge(1, 2, SINGLE);
        tri.set_edge(0, 2, SINGLE);
        assert_eq!(write_smiles(&tri, &v).unwrap(), "C1CC1");
    }

    #[test]
    fn writer_double_bond() {
        let v = vocab();
        let mut g = GraphSample::new(vec![0, 2]);
        g.set_edge(0, 1, DOUBLE);
        assert_eq!(write_smiles(&g, &v).unwrap(), "C=O");
    }

    #[test]
    fn writer_rejects_disconnected_and_masked() {
        let v = vocab();
        let g = GraphSample::new(vec![0, 0]);
        assert!(matches!(
            write_smiles(&g, &v),
            Err(GraphError::DisconnectedGraph { components: 2 })
        ));
        let mut m = GraphSample::new(vec![0, v.node_mask_id()]);
        m.set_edge(0, 1, SINGLE);
        assert!(matches!(write_smiles(&m, &v), Err(GraphError::MaskedInput)));
    }

    #[test]
    fn round_trip_is_isomorphic() {
        let v = vocab();
        for s in ["C", "CCO", "C1CC1", "C=O", "C(=C)(C)C", "C1CC1C(=O)N", "C#N", "OC1CCC1O"] {
            let g = parse_smiles(s, &v).unwrap();
            let written = write_smiles(&g, &v).unwrap();
            let back = parse_smiles(&written, &v).unwrap();
            assert_eq!(
                canonical_code(&g).unwrap(),
                canonical_code(&back).unwrap(),
                "round trip changed isomorphism class for {s} -> {written}"
            );
        }
    }
}
