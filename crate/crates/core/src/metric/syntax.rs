//! Subtree match between two syntax trees.
//!
//! Every node with at least one child roots a qualifying subtree. Subtrees
//! are compared by shape and node kinds only, so identifier and literal
//! lexemes never affect the result. Both trees share one interner, which
//! maps each distinct shape to a small integer.

use std::collections::{HashMap, HashSet};

use super::tree::{NodeId, SyntaxTree};

#[derive(Default)]
struct ShapeInterner {
    ids: HashMap<(String, Vec<u32>), u32>,
}

impl ShapeInterner {
    /// Shape id per node of `tree`, indexed by node index.
    fn shapes(&mut self, tree: &SyntaxTree) -> Vec<u32> {
        let mut shape = vec![0u32; tree.len()];
        // Children always follow their parent in the arena, so a reverse
        // sweep sees every child before its parent.
        for idx in (0..tree.len()).rev() {
            let id = NodeId(idx as u32);
            let key = (tree.kind(id).to_string(), tree.children(id).iter().map(|c| shape[c.index()]).collect());
            let next = self.ids.len() as u32;
            shape[idx] = *self.ids.entry(key).or_insert(next);
        }
        shape
    }
}

/// Fraction of the reference's qualifying subtrees that also occur in the
/// candidate; `None` when the reference has none.
pub fn syntax_match(candidate: &SyntaxTree, reference: &SyntaxTree) -> Option<f64> {
    let mut interner = ShapeInterner::default();
    let cand = interner.shapes(candidate);
    let refs = interner.shapes(reference);

    let present: HashSet<u32> = candidate
        .ids()
        .filter(|&id| !candidate.children(id).is_empty())
        .map(|id| cand[id.index()])
        .collect();
    let mut total = 0usize;
    let mut found = 0usize;
    for id in reference.ids() {
        if reference.children(id).is_empty() {
            continue;
        }
        total += 1;
        if present.contains(&refs[id.index()]) {
            found += 1;
        }
    }
    (total > 0).then(|| found as f64 / total as f64)
}
