//! Def-use edges of C snippets via reaching definitions on the syntax tree.
//!
//! The analysis walks statements structurally, carrying for each variable
//! the set of definitions that may reach the current point. Branches join,
//! loops iterate to a fixpoint, and `return`/`goto` end the flow. A label
//! receives the flow of every `goto` to it that appears earlier in the
//! function.
//!
//! Definitions are parameters, declarators (with or without initializer),
//! plain assignments, compound assignments and `++`/`--` applied to a bare
//! identifier. Every other identifier in expression position is a use.
//! Expressions evaluate left to right, except assignments which evaluate
//! their right side first. An initializer is evaluated before its variable
//! comes into scope. Preprocessor directives, type definitions and error
//! regions are skipped.
//!
//! Edges are normalized to `(definition kind, parent kind of the use,
//! variable index)`, where variables with at least one definition are
//! numbered by first appearance. The edge list is renaming invariant.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::tree::{NodeId, SyntaxTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefSite {
    Parameter,
    Declaration,
    Initialization,
    Assignment,
    CompoundAssignment,
    Increment,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataflowEdge {
    pub def_site: DefSite,
    /// Syntax kind of the node directly containing the use.
    pub use_site: String,
    pub variable: usize,
}

/// Multiset of normalized def-use edges, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowGraph {
    edges: Vec<DataflowEdge>,
}

impl DataflowGraph {
    pub fn from_edges(mut edges: Vec<DataflowEdge>) -> Self {
        edges.sort();
        Self { edges }
    }

    pub fn edges(&self) -> &[DataflowEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Size of the multiset intersection.
    pub fn shared_with(&self, other: &DataflowGraph) -> usize {
        let (mut i, mut j, mut shared) = (0, 0, 0);
        while i < self.edges.len() && j < other.edges.len() {
            match self.edges[i].cmp(&other.edges[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        shared
    }
}

/// Fraction of reference edges also present in the candidate; `None` when
/// the reference has no edges.
pub fn dataflow_match(candidate: &DataflowGraph, reference: &DataflowGraph) -> Option<f64> {
    if reference.is_empty() {
        return None;
    }
    Some(candidate.shared_with(reference) as f64 / reference.len() as f64)
}

pub fn extract_dataflow(tree: &SyntaxTree) -> DataflowGraph {
    let mut analysis = Analysis::new(tree);
    analysis.run();
    analysis.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum VarId {
    Declared(NodeId),
    Global(usize),
}

#[derive(Debug, Clone, Copy)]
struct Def {
    var: VarId,
    site: DefSite,
}

/// Reaching definitions per variable; `None` is unreachable code.
type State = Option<BTreeMap<VarId, BTreeSet<NodeId>>>;

fn join(a: State, b: State) -> State {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(mut a), Some(b)) => {
            for (var, defs) in b {
                a.entry(var).or_default().extend(defs);
            }
            Some(a)
        }
    }
}

#[derive(Default)]
struct FlowContext {
    is_loop: bool,
    breaks: State,
    continues: State,
}

struct Analysis<'t> {
    tree: &'t SyntaxTree,
    scopes: Vec<HashMap<String, VarId>>,
    globals: HashMap<String, usize>,
    defs: HashMap<NodeId, Def>,
    /// Every (def node, use node) pair observed.
    pairs: HashSet<(NodeId, NodeId)>,
    uses: HashMap<NodeId, VarId>,
    /// First byte at which each variable appears.
    first_seen: HashMap<VarId, usize>,
    contexts: Vec<FlowContext>,
    pending_gotos: HashMap<String, State>,
    /// Start byte of each label in the current function.
    labels: HashMap<String, usize>,
}

impl<'t> Analysis<'t> {
    fn new(tree: &'t SyntaxTree) -> Self {
        Self {
            tree,
            scopes: Vec::new(),
            globals: HashMap::new(),
            defs: HashMap::new(),
            pairs: HashSet::new(),
            uses: HashMap::new(),
            first_seen: HashMap::new(),
            contexts: Vec::new(),
            pending_gotos: HashMap::new(),
            labels: HashMap::new(),
        }
    }

    fn run(&mut self) {
        let tree = self.tree;
        let root = tree.root();
        // Top-level statements share one flow; each function gets its own.
        self.scopes.push(HashMap::new());
        let mut top: State = Some(BTreeMap::new());
        for child in tree.named_children(root) {
            if tree.kind(child) == "function_definition" {
                self.function(child);
            } else {
                top = self.statement(child, top);
            }
        }
        self.scopes.pop();
    }

    fn function(&mut self, func: NodeId) {
        let saved_scopes = std::mem::take(&mut self.scopes);
        let saved_contexts = std::mem::take(&mut self.contexts);
        let saved_gotos = std::mem::take(&mut self.pending_gotos);
        let labels = self.collect_labels(func);
        let saved_labels = std::mem::replace(&mut self.labels, labels);
        self.scopes.push(HashMap::new());

        let mut state: State = Some(BTreeMap::new());
        if let Some(decl) = self.tree.child_by_field(func, "declarator") {
            if let Some(params) = self.find_parameter_list(decl) {
                for param in self.tree.named_children(params) {
                    if self.tree.kind(param) != "parameter_declaration" {
                        continue;
                    }
                    if let Some(d) = self.tree.child_by_field(param, "declarator") {
                        if let Some(name) = self.declared_name(d) {
                            state = self.declare(name, DefSite::Parameter, state);
                        }
                    }
                }
            }
        }
        if let Some(body) = self.tree.child_by_field(func, "body") {
            self.statement(body, state);
        }

        self.scopes = saved_scopes;
        self.contexts = saved_contexts;
        self.pending_gotos = saved_gotos;
        self.labels = saved_labels;
    }

    fn collect_labels(&self, func: NodeId) -> HashMap<String, usize> {
        let mut labels = HashMap::new();
        let mut stack = vec![func];
        while let Some(id) = stack.pop() {
            stack.extend(self.tree.children(id).iter().copied());
            if self.tree.kind(id) == "labeled_statement" {
                if let Some(l) = self.tree.child_by_field(id, "label") {
                    labels.entry(self.lexeme(l).to_string()).or_insert(self.tree.node(id).start_byte);
                }
            }
        }
        labels
    }

    /// Parameter list of the outermost function declarator.
    fn find_parameter_list(&self, mut decl: NodeId) -> Option<NodeId> {
        loop {
            match self.tree.kind(decl) {
                "function_declarator" => return self.tree.child_by_field(decl, "parameters"),
                "pointer_declarator" | "parenthesized_declarator" | "attributed_declarator" => {
                    decl = self
                        .tree
                        .child_by_field(decl, "declarator")
                        .or_else(|| self.tree.named_children(decl).last())?;
                }
                _ => return None,
            }
        }
    }

    /// Identifier declared by a declarator chain, `None` for abstract or
    /// function declarators.
    fn declared_name(&self, mut decl: NodeId) -> Option<NodeId> {
        loop {
            match self.tree.kind(decl) {
                "identifier" => return (!self.tree.node(decl).missing).then_some(decl),
                "function_declarator" => return None,
                "pointer_declarator" | "array_declarator" | "parenthesized_declarator" | "attributed_declarator" | "init_declarator" => {
                    decl = self
                        .tree
                        .child_by_field(decl, "declarator")
                        .or_else(|| self.tree.named_children(decl).find(|c| self.tree.kind(*c) != "ms_pointer_modifier"))?;
                }
                _ => return None,
            }
        }
    }

    fn lexeme(&self, id: NodeId) -> &'t str {
        self.tree.text(id).unwrap_or_default()
    }

    fn note_seen(&mut self, var: VarId, id: NodeId) {
        let at = self.tree.node(id).start_byte;
        let slot = self.first_seen.entry(var).or_insert(at);
        *slot = (*slot).min(at);
    }

    fn resolve(&mut self, name: &str) -> VarId {
        for scope in self.scopes.iter().rev() {
            if let Some(v) = scope.get(name) {
                return *v;
            }
        }
        let next = self.globals.len();
        VarId::Global(*self.globals.entry(name.to_string()).or_insert(next))
    }

    fn declare(&mut self, ident: NodeId, site: DefSite, state: State) -> State {
        let var = VarId::Declared(ident);
        let name = self.lexeme(ident).to_string();
        self.scopes.last_mut().expect("a scope is open").insert(name, var);
        self.define(var, ident, site, state)
    }

    fn define(&mut self, var: VarId, at: NodeId, site: DefSite, state: State) -> State {
        self.note_seen(var, at);
        self.defs.insert(at, Def { var, site });
        state.map(|mut s| {
            s.insert(var, BTreeSet::from([at]));
            s
        })
    }

    fn use_var(&mut self, var: VarId, ident: NodeId, state: &State) {
        self.note_seen(var, ident);
        self.uses.insert(ident, var);
        if let Some(s) = state {
            if let Some(defs) = s.get(&var) {
                for &d in defs {
                    self.pairs.insert((d, ident));
                }
            }
        }
    }

    fn with_scope<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scopes.push(HashMap::new());
        let out = f(self);
        self.scopes.pop();
        out
    }

    fn statements(&mut self, items: impl IntoIterator<Item = NodeId>, mut state: State) -> State {
        for item in items {
            state = self.statement(item, state);
        }
        state
    }

    fn statement(&mut self, id: NodeId, state: State) -> State {
        let tree = self.tree;
        match tree.kind(id) {
            "compound_statement" => {
                self.with_scope(|a| a.statements(tree.named_children(id).collect::<Vec<_>>(), state))
            }
            "declaration" => self.declaration(id, state),
            "expression_statement" => self.expressions(tree.named_children(id), state),
            "return_statement" => {
                self.expressions(tree.named_children(id), state);
                None
            }
            "if_statement" => {
                let mut s = state;
                if let Some(c) = tree.child_by_field(id, "condition") {
                    s = self.expression(c, s);
                }
                let then = match tree.child_by_field(id, "consequence") {
                    Some(c) => self.statement(c, s.clone()),
                    None => s.clone(),
                };
                let otherwise = match tree.child_by_field(id, "alternative") {
                    Some(alt) if tree.kind(alt) == "else_clause" => {
                        let inner: Vec<_> = tree.named_children(alt).collect();
                        self.statements(inner, s)
                    }
                    Some(alt) => self.statement(alt, s),
                    None => s,
                };
                join(then, otherwise)
            }
            "while_statement" => self.while_loop(id, state),
            "do_statement" => self.do_loop(id, state),
            "for_statement" => self.with_scope(|a| a.for_loop(id, state)),
            "switch_statement" => self.switch(id, state),
            "break_statement" => {
                if let Some(ctx) = self.contexts.last_mut() {
                    ctx.breaks = join(ctx.breaks.take(), state);
                }
                None
            }
            "continue_statement" => {
                if let Some(ctx) = self.contexts.iter_mut().rev().find(|c| c.is_loop) {
                    ctx.continues = join(ctx.continues.take(), state);
                }
                None
            }
            "goto_statement" => {
                let label = tree.child_by_field(id, "label");
                let name = label.map(|l| self.lexeme(l).to_string()).unwrap_or_default();
                // Only a label further down receives the flow.
                let forward = self.labels.get(&name).is_some_and(|&at| at > tree.node(id).start_byte);
                if forward {
                    let pending = self.pending_gotos.remove(&name).flatten();
                    self.pending_gotos.insert(name, join(pending, state));
                }
                None
            }
            "labeled_statement" => {
                let label = tree.child_by_field(id, "label").map(|l| self.lexeme(l).to_string());
                let incoming = label.and_then(|l| self.pending_gotos.remove(&l)).flatten();
                let mut s = join(state, incoming);
                let inner: Vec<_> = tree.named_children(id).filter(|c| Some(*c) != tree.child_by_field(id, "label")).collect();
                s = self.statements(inner, s);
                s
            }
            "attributed_statement" => {
                let inner: Vec<_> = tree.named_children(id).filter(|c| tree.kind(*c) != "attribute_declaration").collect();
                self.statements(inner, state)
            }
            "case_statement" => {
                // Only reached outside a switch body in malformed code.
                let inner: Vec<_> = tree.named_children(id).filter(|c| Some(*c) != tree.child_by_field(id, "value")).collect();
                self.statements(inner, state)
            }
            "function_definition" => {
                self.function(id);
                state
            }
            "type_definition" | "struct_specifier" | "union_specifier" | "enum_specifier" | "ERROR" | "comment" => state,
            k if k.starts_with("preproc_") => state,
            _ => self.expression(id, state),
        }
    }

    fn declaration(&mut self, id: NodeId, mut state: State) -> State {
        let tree = self.tree;
        for decl in tree.children_by_field(id, "declarator").collect::<Vec<_>>() {
            let (target, value) = if tree.kind(decl) == "init_declarator" {
                (tree.child_by_field(decl, "declarator"), tree.child_by_field(decl, "value"))
            } else {
                (Some(decl), None)
            };
            let Some(target) = target else { continue };
            state = self.declarator_expressions(target, state);
            if let Some(v) = value {
                state = self.expression(v, state);
            }
            if let Some(name) = self.declared_name(target) {
                let site = if value.is_some() { DefSite::Initialization } else { DefSite::Declaration };
                state = self.declare(name, site, state);
            }
        }
        state
    }

    /// Array size expressions inside a declarator.
    fn declarator_expressions(&mut self, mut decl: NodeId, mut state: State) -> State {
        let tree = self.tree;
        loop {
            match tree.kind(decl) {
                "array_declarator" => {
                    if let Some(size) = tree.child_by_field(decl, "size") {
                        state = self.expression(size, state);
                    }
                }
                "pointer_declarator" | "parenthesized_declarator" | "attributed_declarator" => {}
                _ => return state,
            }
            match tree.child_by_field(decl, "declarator").or_else(|| tree.named_children(decl).next()) {
                Some(next) => decl = next,
                None => return state,
            }
        }
    }

    fn while_loop(&mut self, id: NodeId, entry: State) -> State {
        let tree = self.tree;
        let cond = tree.child_by_field(id, "condition");
        let body = tree.child_by_field(id, "body");
        let mut back: State = None;
        loop {
            let head = join(entry.clone(), back.clone());
            let after_cond = match cond {
                Some(c) => self.expression(c, head),
                None => head,
            };
            self.contexts.push(FlowContext { is_loop: true, ..Default::default() });
            let end = match body {
                Some(b) => self.statement(b, after_cond.clone()),
                None => after_cond.clone(),
            };
            let ctx = self.contexts.pop().expect("pushed above");
            let next_back = join(back.clone(), join(end, ctx.continues));
            if next_back == back {
                return join(after_cond, ctx.breaks);
            }
            back = next_back;
        }
    }

    fn do_loop(&mut self, id: NodeId, entry: State) -> State {
        let tree = self.tree;
        let cond = tree.child_by_field(id, "condition");
        let body = tree.child_by_field(id, "body");
        let mut back: State = None;
        loop {
            let head = join(entry.clone(), back.clone());
            self.contexts.push(FlowContext { is_loop: true, ..Default::default() });
            let end = match body {
                Some(b) => self.statement(b, head),
                None => head,
            };
            let ctx = self.contexts.pop().expect("pushed above");
            let before_cond = join(end, ctx.continues);
            let after_cond = match cond {
                Some(c) => self.expression(c, before_cond),
                None => before_cond,
            };
            let next_back = join(back.clone(), after_cond.clone());
            if next_back == back {
                return join(after_cond, ctx.breaks);
            }
            back = next_back;
        }
    }

    fn for_loop(&mut self, id: NodeId, entry: State) -> State {
        let tree = self.tree;
        let init = tree.child_by_field(id, "initializer");
        let cond = tree.child_by_field(id, "condition");
        let update = tree.child_by_field(id, "update");
        let body = tree.child_by_field(id, "body");

        let start = match init {
            Some(i) if tree.kind(i) == "declaration" => self.declaration(i, entry),
            Some(i) => self.expression(i, entry),
            None => entry,
        };
        let mut back: State = None;
        loop {
            let head = join(start.clone(), back.clone());
            let after_cond = match cond {
                Some(c) => self.expression(c, head),
                None => head,
            };
            self.contexts.push(FlowContext { is_loop: true, ..Default::default() });
            let end = match body {
                Some(b) => self.statement(b, after_cond.clone()),
                None => after_cond.clone(),
            };
            let ctx = self.contexts.pop().expect("pushed above");
            let mut next_back = join(end, ctx.continues);
            if let Some(u) = update {
                next_back = self.expression(u, next_back);
            }
            let next_back = join(back.clone(), next_back);
            if next_back == back {
                // Without a condition the loop only exits through `break`.
                let fall = if cond.is_some() { after_cond } else { None };
                return join(fall, ctx.breaks);
            }
            back = next_back;
        }
    }

    fn switch(&mut self, id: NodeId, entry: State) -> State {
        let tree = self.tree;
        let after_cond = match tree.child_by_field(id, "condition") {
            Some(c) => self.expression(c, entry),
            None => entry,
        };
        let Some(body) = tree.child_by_field(id, "body") else { return after_cond };

        self.contexts.push(FlowContext::default());
        let mut has_default = false;
        let fall = self.with_scope(|a| {
            let mut fall: State = None;
            for item in tree.named_children(body).collect::<Vec<_>>() {
                if tree.kind(item) == "case_statement" {
                    let value = tree.child_by_field(item, "value");
                    has_default |= value.is_none();
                    let case_entry = join(after_cond.clone(), fall);
                    let stmts: Vec<_> = tree.named_children(item).filter(|c| Some(*c) != value).collect();
                    fall = a.statements(stmts, case_entry);
                } else {
                    fall = a.statement(item, fall);
                }
            }
            fall
        });
        let ctx = self.contexts.pop().expect("pushed above");
        let skipped = if has_default { None } else { after_cond };
        join(join(fall, ctx.breaks), skipped)
    }

    fn expressions(&mut self, items: impl IntoIterator<Item = NodeId>, mut state: State) -> State {
        let items: Vec<_> = items.into_iter().collect();
        for item in items {
            state = self.expression(item, state);
        }
        state
    }

    fn expression(&mut self, id: NodeId, state: State) -> State {
        let tree = self.tree;
        match tree.kind(id) {
            "identifier" => {
                if !tree.node(id).missing {
                    let var = self.resolve(self.lexeme(id));
                    self.use_var(var, id, &state);
                }
                state
            }
            "assignment_expression" => {
                let mut s = state;
                if let Some(r) = tree.child_by_field(id, "right") {
                    s = self.expression(r, s);
                }
                let Some(left) = tree.child_by_field(id, "left") else { return s };
                if tree.kind(left) == "identifier" && !tree.node(left).missing {
                    let op = tree.child_by_field(id, "operator").map(|o| tree.kind(o)).unwrap_or("=");
                    let var = self.resolve(self.lexeme(left));
                    if op == "=" {
                        self.define(var, left, DefSite::Assignment, s)
                    } else {
                        self.use_var(var, left, &s);
                        self.define(var, id, DefSite::CompoundAssignment, s)
                    }
                } else {
                    self.expression(left, s)
                }
            }
            "update_expression" => {
                let Some(arg) = tree.child_by_field(id, "argument") else { return state };
                if tree.kind(arg) == "identifier" && !tree.node(arg).missing {
                    let var = self.resolve(self.lexeme(arg));
                    self.use_var(var, arg, &state);
                    self.define(var, id, DefSite::Increment, state)
                } else {
                    self.expression(arg, state)
                }
            }
            "call_expression" => {
                let mut s = state;
                if let Some(f) = tree.child_by_field(id, "function") {
                    if tree.kind(f) != "identifier" {
                        s = self.expression(f, s);
                    }
                }
                match tree.child_by_field(id, "arguments") {
                    Some(args) => self.expression(args, s),
                    None => s,
                }
            }
            "field_expression" => match tree.child_by_field(id, "argument") {
                Some(a) => self.expression(a, state),
                None => state,
            },
            "sizeof_expression" | "cast_expression" | "compound_literal_expression" => {
                match tree.child_by_field(id, "value") {
                    Some(v) => self.expression(v, state),
                    None => state,
                }
            }
            "ERROR" | "comment" | "type_descriptor" => state,
            k if k.starts_with("preproc_") => state,
            _ => {
                let children: Vec<_> = tree.named_children(id).collect();
                self.expressions(children, state)
            }
        }
    }

    fn finish(self) -> DataflowGraph {
        let defined: BTreeSet<VarId> = self.defs.values().map(|d| d.var).collect();
        let mut order: Vec<(usize, VarId)> =
            defined.iter().map(|v| (self.first_seen.get(v).copied().unwrap_or(usize::MAX), *v)).collect();
        order.sort();
        let index: HashMap<VarId, usize> = order.into_iter().enumerate().map(|(i, (_, v))| (v, i)).collect();

        let edges = self
            .pairs
            .iter()
            .filter_map(|(def, use_)| {
                let d = self.defs.get(def)?;
                let parent = self.tree.parent(*use_)?;
                Some(DataflowEdge {
                    def_site: d.site,
                    use_site: self.tree.kind(parent).to_string(),
                    variable: index[&d.var],
                })
            })
            .collect();
        DataflowGraph::from_edges(edges)
    }
}
