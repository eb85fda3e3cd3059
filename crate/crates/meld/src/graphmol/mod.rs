//! Graph data model for labeled molecular graphs.
//!
//! Graphs are dense: every node carries a categorical label and every
//! unordered pair of nodes carries a categorical edge label, with category 0
//! reserved for "no bond". The last category of each vocabulary is the mask
//! sentinel used by the diffusion process. Hydrogens are implicit throughout.

mod canon;
mod dataset;
mod smiles;
mod valence;

pub use canon::{canonical_code, CanonicalCode, CANON_MAX_NODES};
pub use dataset::{load_dataset, Dataset, LineError, PropStats};
pub use smiles::{parse_smiles, write_smiles};
pub use valence::{check_valence, ValidityVerdict};

use std::collections::BTreeMap;
use thiserror::Error;

/// Errors produced by graph construction, parsing, and dataset loading.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("syntax error at position {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unknown atom symbol {symbol:?} at position {position}")]
    UnknownAtom { symbol: String, position: usize },
    #[error("ring-closure digit {digit} left open")]
    UnclosedRing { digit: u8 },
    #[error("unclosed branch (missing ')')")]
    UnclosedBranch,
    #[error("graph has {components} components; expected a connected graph")]
    DisconnectedGraph { components: usize },
    #[error("operation requires a clean graph but mask ids are present")]
    MaskedInput,
    #[error("graph has {n} nodes; canonical codes support at most {max}")]
    TooLarge { n: usize, max: usize },
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("category id {id} out of range ({kind} vocabulary size {size})")]
    BadCategory { id: usize, kind: &'static str, size: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{failed} of {total} dataset lines failed to parse (>1% tolerance); first: line {first_line}: {first_error}")]
    TooManyLineErrors {
        failed: usize,
        total: usize,
        first_line: usize,
        first_error: String,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// Edge category 0 is always "no bond".
pub const NO_BOND: usize = 0;
pub const SINGLE: usize = 1;
pub const DOUBLE: usize = 2;
pub const TRIPLE: usize = 3;

/// Atom and bond vocabularies plus the valence table.
///
/// Mask ids are implicit: the node mask id equals `atom_types.len()` and the
/// edge mask id equals `bond_types.len()`, i.e. the mask is always the last
/// category of each vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub atom_types: Vec<String>,
    pub bond_types: Vec<String>,
    /// Max valence per atom symbol, in bond-order units.
    pub valence: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// The QM9-style default: C/N/O/F atoms, bonds up to triple.
    pub fn qm9_default() -> Self {
        Self::with_atoms(&[("C", 4), ("N", 3), ("O", 2), ("F", 1)])
    }

    /// Build a vocabulary from `(symbol, max_valence)` pairs. Bond types are
    /// the standard `[NO_BOND, SINGLE, DOUBLE, TRIPLE]` set.
    pub fn with_atoms(atoms: &[(&str, u32)]) -> Self {
        Vocabulary {
            atom_types: atoms.iter().map(|(s, _)| s.to_string()).collect(),
            bond_types: ["NO_BOND", "SINGLE", "DOUBLE", "TRIPLE"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            valence: atoms.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
        }
    }

    /// Number of real (non-mask) atom categories.
    pub fn a_real(&self) -> usize {
        self.atom_types.len()
    }

    /// Number of real (non-mask) bond categories, including NO_BOND.
    pub fn b_real(&self) -> usize {
        self.bond_types.len()
    }

    pub fn node_mask_id(&self) -> usize {
        self.a_real()
    }

    pub fn edge_mask_id(&self) -> usize {
        self.b_real()
    }

    pub fn atom_id(&self, symbol: &str) -> Option<usize> {
        self.atom_types.iter().position(|s| s == symbol)
    }

    /// Bond order of an edge category (NO_BOND = 0, SINGLE = 1, ...).
    /// Mask ids have no order and return None.
    pub fn bond_order(&self, edge_id: usize) -> Option<u32> {
        if edge_id < self.b_real() {
            Some(edge_id as u32)
        } else {
            None
        }
    }

    pub fn max_valence(&self, node_id: usize) -> Option<u32> {
        self.atom_types
            .get(node_id)
            .and_then(|s| self.valence.get(s))
            .copied()
    }
}

/// A labeled graph: categorical node labels plus a symmetric categorical
/// edge matrix. Mask sentinels may appear in either; a clean graph has none.
///
/// The diagonal is structurally excluded (no self bonds); it is stored as
/// NO_BOND and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    n: usize,
    nodes: Vec<usize>,
    edges: Vec<usize>, // n*n row-major, symmetric
    pub props: BTreeMap<String, f64>,
}

impl GraphSample {
    /// Create a graph with the given node labels and all edges NO_BOND.
    pub fn new(nodes: Vec<usize>) -> Self {
        let n = nodes.len();
        GraphSample {
            n,
            nodes,
            edges: vec![NO_BOND; n * n],
            props: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node(&self, i: usize) -> usize {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn set_node(&mut self, i: usize, label: usize) {
        self.nodes[i] = label;
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        debug_assert_ne!(i, j, "diagonal edges are structurally excluded");
        self.edges[i * self.n + j]
    }

    /// Set both orientations of an edge, preserving symmetry.
    pub fn set_edge(&mut self, i: usize, j: usize, label: usize) {
        debug_assert_ne!(i, j, "diagonal edges are structurally excluded");
        self.edges[i * self.n + j] = label;
        self.edges[j * self.n + i] = label;
    }

    /// Iterate the unordered pairs (i, j) with i < j.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    /// Number of unordered node pairs, n*(n-1)/2.
    pub fn pair_count(&self) -> usize {
        self.n * (self.n.saturating_sub(1)) / 2
    }

    /// True when no node or edge carries a mask id.
    pub fn is_clean(&self, vocab: &Vocabulary) -> bool {
        self.nodes.iter().all(|&x| x < vocab.a_real())
            && self
                .pairs()
                .all(|(i, j)| self.edge(i, j) < vocab.b_real())
    }

    /// Validate category ranges (mask ids allowed) and symmetry.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), GraphError> {
        for &x in &self.nodes {
            if x > vocab.node_mask_id() {
                return Err(GraphError::BadCategory {
                    id: x,
                    kind: "atom",
                    size: vocab.node_mask_id() + 1,
                });
            }
        }
        for (i, j) in self.pairs() {
            let e = self.edge(i, j);
            if e > vocab.edge_mask_id() {
                return Err(GraphError::BadCategory {
                    id: e,
                    kind: "bond",
                    size: vocab.edge_mask_id() + 1,
                });
            }
            if self.edges[i * self.n + j] != self.edges[j * self.n + i] {
                return Err(GraphError::Syntax {
                    position: i * self.n + j,
                    expected: "symmetric edge matrix".into(),
                });
            }
        }
        Ok(())
    }

    /// Apply a node permutation: node i of the result is node perm[i] of self.
    pub fn permuted(&self, perm: &[usize]) -> GraphSample {
        assert_eq!(perm.len(), self.n);
        let mut out = GraphSample::new(perm.iter().map(|&p| self.nodes[p]).collect());
        for (i, j) in self.pairs() {
            out.set_edge(i, j, self.edge(perm[i], perm[j]));
        }
        out.props = self.props.clone();
        out
    }

    /// Connected components over the NO_BOND-thresholded simple graph.
    /// Mask edges count as connections (they are potential bonds).
    pub fn component_count(&self) -> usize {
        if self.n == 0 {
            return 0;
        }
        let mut seen = vec![false; self.n];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for v in 0..self.n {
                    if v != u && !seen[v] && self.edge(u, v) != NO_BOND {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_ids_are_last() {
        let v = Vocabulary::qm9_default();
        assert_eq!(v.a_real(), 4);
        assert_eq!(v.b_real(), 4);
        assert_eq!(v.node_mask_id(), 4);
        assert_eq!(v.edge_mask_id(), 4);
        assert_eq!(v.bond_order(NO_BOND), Some(0));
        assert_eq!(v.bond_order(TRIPLE), Some(3));
        assert_eq!(v.bond_order(v.edge_mask_id()), None);
    }

    #[test]
    fn set_edge_preserves_symmetry() {
        let mut g = GraphSample::new(vec![0, 0, 1]);
        g.set_edge(0, 2, DOUBLE);
        assert_eq!(g.edge(2, 0), DOUBLE);
        assert_eq!(g.edge(0, 1), NO_BOND);
        assert!(g.validate(&Vocabulary::qm9_default()).is_ok());
    }

    #[test]
    fn component_count_counts_isolated_nodes() {
        let mut g = GraphSample::new(vec![0, 0, 0, 0]);
        g.set_edge(0, 1, SINGLE);
        assert_eq!(g.component_count(), 3);
        g.set_edge(1, 2, SINGLE);
        g.set_edge(2, 3, SINGLE);
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn permuted_relabels_consistently() {
        let mut g = GraphSample::new(vec![0, 1, 2]);
        g.set_edge(0, 1, SINGLE);
        g.set_edge(1, 2, DOUBLE);
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.nodes(), &[2, 0, 1]);
        assert_eq!(p.edge(1, 2), SINGLE);
        assert_eq!(p.edge(0, 2), DOUBLE);
        assert_eq!(p.edge(0, 1), NO_BOND);
    }
}
