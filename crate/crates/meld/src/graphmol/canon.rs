//! Permutation-invariant canonical codes for small labeled graphs.
//!
//! Two graphs receive equal codes iff some node permutation maps one onto
//! the other preserving node and edge labels; mask sentinels are treated as
//! ordinary labels. The algorithm is iterative color refinement over the
//! complete labeled graph (NO_BOND is a label like any other) followed by
//! backtracking over refinement-stable orderings, keeping the
//! lexicographically minimal serialized adjacency.

use super::{GraphError, GraphSample};

/// Guard for the backtracking search; the counting protocols in this crate
/// operate on small subsamples.
pub const CANON_MAX_NODES: usize = 16;

/// Canonical serialization of a labeled graph's isomorphism class.
///
/// Layout (bit-exact across runs): version byte 0x01, node count as
/// unsigned 16-bit big-endian, node labels in canonical order (one byte
/// each), then upper-triangle edge labels row-major (one byte each).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(pub Vec<u8>);

impl CanonicalCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Compute the canonical code of a (possibly masked) graph with n <= 16.
pub fn canonical_code(g: &GraphSample) -> Result<CanonicalCode, GraphError> {
    let n = g.n();
    if n > CANON_MAX_NODES {
        return Err(GraphError::TooLarge {
            n,
            max: CANON_MAX_NODES,
        });
    }
    if n == 0 {
        return Ok(CanonicalCode(vec![0x01, 0, 0]));
    }

    let mut colors: Vec<usize> = (0..n).map(|i| g.node(i)).collect();
    normalize(&mut colors);
    refine(g, &mut colors);

    let mut best: Option<Vec<u8>> = None;
    search(g, &colors, &mut best);
    Ok(CanonicalCode(best.expect("search yields at least one leaf")))
}

/// Renumber colors to 0..k preserving order.
fn normalize(colors: &mut [usize]) {
    let mut sorted: Vec<usize> = colors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for c in colors.iter_mut() {
        *c = sorted.binary_search(c).unwrap();
    }
}

/// Iterate (color, sorted multiset of (edge label, neighbor color)) until
/// the partition stops refining. New colors are assigned by signature order,
/// so cells stay sorted by their original label ordering.
fn refine(g: &GraphSample, colors: &mut Vec<usize>) {
    let n = g.n();
    loop {
        let mut signatures: Vec<(usize, Vec<(usize, usize)>)> = Vec::with_capacity(n);
        for i in 0..n {
            let mut neigh: Vec<(usize, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (g.edge(i, j), colors[j]))
                .collect();
            neigh.sort_unstable();
            signatures.push((colors[i], neigh));
        }
        let mut order: Vec<&(usize, Vec<(usize, usize)>)> = signatures.iter().collect();
        order.sort_unstable();
        order.dedup();
        let new_colors: Vec<usize> = signatures
            .iter()
            .map(|s| order.binary_search(&s).unwrap())
            .collect();
        let old_count = count_distinct(colors);
        let new_count = count_distinct(&new_colors);
        *colors = new_colors;
        if new_count == old_count {
            return;
        }
    }
}

fn count_distinct(colors: &[usize]) -> usize {
    let mut v = colors.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Backtrack over refinement-stable orderings. Individualizes each member
/// of the first non-singleton cell in turn, except when the partition is
/// block-homogeneous, in which case every stable ordering serializes
/// identically and no branching is needed.
fn search(g: &GraphSample, colors: &[usize], best: &mut Option<Vec<u8>>) {
    let n = g.n();
    let target = first_non_singleton_cell(colors);
    match target {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| colors[i]);
            consider(g, &order, best);
        }
        Some(cell_color) => {
            if blocks_homogeneous(g, colors) {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&i| (colors[i], i));
                consider(g, &order, best);
                return;
            }
            let members: Vec<usize> =
                (0..n).filter(|&i| colors[i] == cell_color).collect();
            for &v in &members {
                // Individualize v: it precedes the rest of its cell.
                let mut child: Vec<usize> = colors.iter().map(|&c| 2 * c + 1).collect();
                child[v] = 2 * colors[v];
                normalize(&mut child);
                refine(g, &mut child);
                search(g, &child, best);
            }
        }
    }
}

fn first_non_singleton_cell(colors: &[usize]) -> Option<usize> {
    let mut counts = vec![0usize; colors.len()];
    for &c in colors {
        counts[c] += 1;
    }
    counts.iter().position(|&c| c > 1)
}

/// True when the edge label between any u in cell C and v in cell D depends
/// only on (C, D). Then the serialized adjacency is independent of the
/// within-cell order.
fn blocks_homogeneous(g: &GraphSample, colors: &[usize]) -> bool {
    let n = g.n();
    let k = colors.iter().max().map_or(0, |&c| c + 1);
    let mut label: Vec<Option<usize>> = vec![None; k * k];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let slot = colors[i] * k + colors[j];
            let e = g.edge(i, j);
            match label[slot] {
                None => label[slot] = Some(e),
                Some(l) if l == e => {}
                Some(_) => return false,
            }
        }
    }
    true
}

fn consider(g: &GraphSample, order: &[usize], best: &mut Option<Vec<u8>>) {
    let code = serialize(g, order);
    match best {
        None => *best = Some(code),
        Some(b) if code < *b => *b = code,
        _ => {}
    }
}

fn serialize(g: &GraphSample, order: &[usize]) -> Vec<u8> {
    let n = g.n();
    let mut out = Vec::with_capacity(3 + n + n * (n - 1) / 2);
    out.push(0x01);
    out.extend_from_slice(&(n as u16).to_be_bytes());
    for &i in order {
        out.push(g.node(i) as u8);
    }
    for a in 0..n {
        for b in a + 1..n {
            out.push(g.edge(order[a], order[b]) as u8);
        }
    }
    out
}

/// Brute-force isomorphism check over all permutations; test oracle for
/// small n.
pub fn isomorphic_brute_force(a: &GraphSample, b: &GraphSample) -> bool {
    if a.n() != b.n() {
        return false;
    }
    let n = a.n();
    let mut perm: Vec<usize> = (0..n).collect();
    permute_check(a, b, &mut perm, 0)
}

fn permute_check(a: &GraphSample, b: &GraphSample, perm: &mut Vec<usize>, k: usize) -> bool {
    let n = a.n();
    if k == n {
        for i in 0..n {
            if a.node(i) != b.node(perm[i]) {
                return false;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if a.edge(i, j) != b.edge(perm[i], perm[j]) {
                    return false;
                }
            }
        }
        return true;
    }
    for i in k..n {
        perm.swap(k, i);
        if permute_check(a, b, perm, k + 1) {
            perm.swap(k, i);
            return true;
        }
        perm.swap(k, i);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphmol::{GraphSample, NO_BOND, SINGLE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> GraphSample {
        let mut g = GraphSample::new(vec![0, 0, 0]);
        g.set_edge(0, 1, SINGLE);
        g.set_edge(1, 2, SINGLE);
        g.set_edge(0, 2, SINGLE);
        g
    }

    #[test]
    fn relabeled_triangle_matches() {
        let g = triangle();
        let h = g.permuted(&[2, 0, 1]);
        assert_eq!(canonical_code(&g).unwrap(), canonical_code(&h).unwrap());
    }

    #[test]
    fn triangle_differs_from_path() {
        let mut path = GraphSample::new(vec![0, 0, 0]);
        path.set_edge(0, 1, SINGLE);
        path.set_edge(1, 2, SINGLE);
        assert_ne!(
            canonical_code(&triangle()).unwrap(),
            canonical_code(&path).unwrap()
        );
    }

    #[test]
    fn masked_position_in_symmetric_motif_is_irrelevant() {
        // A 4-ring with one masked node: masking position 0 vs position 2
        // gives isomorphic graphs.
        let mask = 4;
        let mut a = GraphSample::new(vec![mask, 0, 0, 0]);
        let mut b = GraphSample::new(vec![0, 0, mask, 0]);
        for g in [&mut a, &mut b] {
            g.set_edge(0, 1, SINGLE);
            g.set_edge(1, 2, SINGLE);
            g.set_edge(2, 3, SINGLE);
            g.set_edge(0, 3, SINGLE);
        }
        assert_eq!(canonical_code(&a).unwrap(), canonical_code(&b).unwrap());
    }

    #[test]
    fn size_guard() {
        let g = GraphSample::new(vec![0; 17]);
        assert!(matches!(
            canonical_code(&g),
            Err(GraphError::TooLarge { n: 17, max: 16 })
        ));
    }

    #[test]
    fn uniform_masked_blob_is_fast_and_stable() {
        // Fully masked 16-node graph: block-homogeneous shortcut applies.
        let mut g = GraphSample::new(vec![4; 16]);
        for (i, j) in g.pairs().collect::<Vec<_>>() {
            g.set_edge(i, j, 4);
        }
        let c1 = canonical_code(&g).unwrap();
        let c2 = canonical_code(&g.permuted(&(0..16).rev().collect::<Vec<_>>())).unwrap();
        assert_eq!(c1, c2);
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphSample {
        let mut g = GraphSample::new((0..n).map(|_| rng.gen_range(0..5)).collect());
        let pairs: Vec<(usize, usize)> = g.pairs().collect();
        for (i, j) in pairs {
            g.set_edge(i, j, rng.gen_range(0..5));
        }
        g
    }

    fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            p.swap(i, j);
        }
        p
    }

    #[test]
    fn agrees_with_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = rng.gen_range(1..=6);
            let a = random_graph(&mut rng, n);
            let b = if trial % 2 == 0 {
                a.permuted(&random_perm(&mut rng, n))
            } else {
                random_graph(&mut rng, n)
            };
            let oracle = isomorphic_brute_force(&a, &b);
            let codes_equal = canonical_code(&a).unwrap() == canonical_code(&b).unwrap();
            assert_eq!(oracle, codes_equal, "disagreement on trial {trial}");
        }
    }

    #[test]
    fn code_layout_is_bit_exact() {
        let mut g = GraphSample::new(vec![1, 0]);
        g.set_edge(0, 1, SINGLE);
        let code = canonical_code(&g).unwrap();
        // version, n=2 BE, node labels sorted [0,1], one edge.
        assert_eq!(code.as_bytes(), &[0x01, 0, 2, 0, 1, SINGLE as u8]);
        let iso = GraphSample::new(vec![0, 1]);
        let mut iso = iso;
        iso.set_edge(0, 1, SINGLE);
        assert_eq!(canonical_code(&iso).unwrap(), code);
        let _ = NO_BOND;
    }
}
