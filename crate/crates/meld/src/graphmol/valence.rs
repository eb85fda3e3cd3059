//! Kekulized valence checking with implicit hydrogens.

use super::{GraphError, GraphSample, Vocabulary};

/// Outcome of a valence check. `valid` holds iff no atom exceeds its
/// maximum valence; implicit hydrogens fill any deficit, so only excess
/// invalidates. Connectivity is reported separately and does not gate
/// validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityVerdict {
    pub valid: bool,
    /// Per atom: max(0, incident bond-order sum - max valence).
    pub per_atom_excess: Vec<u32>,
    pub connected: bool,
    pub component_count: usize,
}

/// Check every atom's incident bond-order sum against the valence table.
pub fn check_valence(g: &GraphSample, vocab: &Vocabulary) -> Result<ValidityVerdict, GraphError> {
    if !g.is_clean(vocab) {
        return Err(GraphError::MaskedInput);
    }
    let n = g.n();
    let mut per_atom_excess = Vec::with_capacity(n);
    for i in 0..n {
        let order_sum: u32 = (0..n)
            .filter(|&j| j != i)
            .map(|j| vocab.bond_order(g.edge(i, j)).expect("clean graph"))
            .sum();
        let max = vocab
            .max_valence(g.node(i))
            .expect("clean graph has in-vocabulary nodes");
        per_atom_excess.push(order_sum.saturating_sub(max));
    }
    let component_count = g.component_count();
    Ok(ValidityVerdict {
        valid: per_atom_excess.iter().all(|&e| e == 0),
        per_atom_excess,
        connected: component_count <= 1,
        component_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphmol::{DOUBLE, SINGLE};

    fn vocab() -> Vocabulary {
        Vocabulary::qm9_default()
    }

    #[test]
    fn isolated_carbon_is_valid() {
        let v = check_valence(&GraphSample::new(vec![0]), &vocab()).unwrap();
        assert!(v.valid);
        assert_eq!(v.per_atom_excess, vec![0]);
        assert!(v.connected);
    }

    #[test]
    fn five_single_neighbors_exceed_carbon() {
        let mut g = GraphSample::new(vec![0, 0, 0, 0, 0, 0]);
        for j in 1..6 {
            g.set_edge(0, j, SINGLE);
        }
        let v = check_valence(&g, &vocab()).unwrap();
        assert!(!v.valid);
        assert_eq!(v.per_atom_excess[0], 1);
        assert!(v.per_atom_excess[1..].iter().all(|&e| e == 0));
    }

    #[test]
    fn double_bonded_oxygen_is_valid() {
        let mut g = GraphSample::new(vec![0, 2]);
        g.set_edge(0, 1, DOUBLE);
        let v = check_valence(&g, &vocab()).unwrap();
        assert!(v.valid);
    }

    #[test]
    fn masked_input_rejected() {
        let g = GraphSample::new(vec![vocab().node_mask_id()]);
        assert!(matches!(
            check_valence(&g, &vocab()),
            Err(GraphError::MaskedInput)
        ));
    }

    #[test]
    fn permutation_invariance() {
        let mut g = GraphSample::new(vec![0, 1, 2, 3]);
        g.set_edge(0, 1, SINGLE);
        g.set_edge(1, 2, DOUBLE);
        g.set_edge(2, 3, SINGLE);
        let perm = [3, 1, 0, 2];
        let p = g.permuted(&perm);
        let a = check_valence(&g, &vocab()).unwrap();
        let b = check_valence(&p, &vocab()).unwrap();
        assert_eq!(a.valid, b.valid);
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(b.per_atom_excess[i], a.per_atom_excess[src]);
        }
    }
}
