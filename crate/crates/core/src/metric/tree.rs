//! Owned syntax trees for C snippets.
//!
//! Parsing goes through the tree-sitter C grammar, which recovers from
//! errors, so snippets lacking includes or surrounding declarations still
//! produce a tree. The tree is copied into an arena so callers never hold
//! parser state. Comment nodes are dropped during the copy.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use tree_sitter::{Parser, TreeCursor};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxNode {
    pub kind: String,
    /// Grammar field this node fills in its parent, if any.
    pub field: Option<String>,
    pub named: bool,
    pub missing: bool,
    pub start_byte: usize,
    pub end_byte: usize,
    /// Source text, kept for leaves only.
    pub text: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxTree {
    nodes: Vec<SyntaxNode>,
    parse_ok: bool,
}

impl SyntaxTree {
    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &SyntaxNode {
        &self.nodes[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].children
    }

    pub fn named_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children(id).iter().copied().filter(move |c| self.node(*c).named)
    }

    pub fn child_by_field(&self, id: NodeId, field: &str) -> Option<NodeId> {
        self.children(id).iter().copied().find(|c| self.node(*c).field.as_deref() == Some(field))
    }

    pub fn children_by_field<'a>(&'a self, id: NodeId, field: &'a str) -> impl Iterator<Item = NodeId> + 'a {
        self.children(id).iter().copied().filter(move |c| self.node(*c).field.as_deref() == Some(field))
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.index()].parent
    }

    pub fn text(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.index()].text.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// False when the grammar had to recover from an error or insert a
    /// missing token anywhere in the snippet.
    pub fn parse_ok(&self) -> bool {
        self.parse_ok
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// Node ids in pre-order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.children(id).iter().rev().copied());
        }
        out
    }

    /// S-expression over node kinds, for debugging and golden files.
    pub fn to_sexp(&self) -> String {
        let mut out = String::new();
        self.write_sexp(self.root(), &mut out);
        out
    }

    fn write_sexp(&self, id: NodeId, out: &mut String) {
        let node = self.node(id);
        if node.children.is_empty() {
            if node.named {
                out.push_str(&node.kind);
            } else {
                out.push('"');
                out.push_str(&node.kind);
                out.push('"');
            }
            return;
        }
        out.push('(');
        out.push_str(&node.kind);
        for &c in &node.children {
            out.push(' ');
            self.write_sexp(c, out);
        }
        out.push(')');
    }
}

thread_local! {
    static PARSER: RefCell<Option<Parser>> = const { RefCell::new(None) };
}

pub fn parse_c(source: &str) -> Result<SyntaxTree, MetricError> {
    let ts_tree = PARSER.with(|cell| {
        let mut slot = cell.borrow_mut();
        let parser = slot.get_or_insert_with(|| {
            let mut p = Parser::new();
            p.set_language(&tree_sitter_c::LANGUAGE.into()).expect("C grammar is ABI compatible");
            p
        });
        parser.parse(source, None)
    });
    let ts_tree = ts_tree.ok_or(MetricError::ParseFailed)?;
    let root = ts_tree.root_node();

    let mut tree = SyntaxTree { nodes: Vec::new(), parse_ok: !root.has_error() };
    let mut cursor = root.walk();
    copy_subtree(&mut cursor, source, None, &mut tree.nodes);
    Ok(tree)
}

fn copy_subtree(cursor: &mut TreeCursor<'_>, source: &str, parent: Option<NodeId>, nodes: &mut Vec<SyntaxNode>) {
    let node = cursor.node();
    let id = NodeId(nodes.len() as u32);
    nodes.push(SyntaxNode {
        kind: node.kind().to_string(),
        field: cursor.field_name().map(str::to_string),
        named: node.is_named(),
        missing: node.is_missing(),
        start_byte: node.start_byte(),
        end_byte: node.end_byte(),
        text: None,
        parent,
        children: Vec::new(),
    });

    if cursor.goto_first_child() {
        loop {
            if cursor.node().kind() != "comment" {
                let child = NodeId(nodes.len() as u32);
                copy_subtree(cursor, source, Some(id), nodes);
                nodes[id.index()].children.push(child);
            }
            if !cursor.goto_next_sibling() {
                break;
            }
        }
        cursor.goto_parent();
    }

    let entry = &mut nodes[id.index()];
    if entry.children.is_empty() {
        entry.text = Some(source.get(entry.start_byte..entry.end_byte).unwrap_or_default().to_string());
    }
}
