//! Expression DAGs with argument-order edge labels, variable renaming and the
//! ancestor/descendant masks used by directed structure-aware attention.

use std::collections::{BTreeSet, HashMap, HashSet};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sexpr::Expr;

/// Size of the edge-label embedding table; larger argument positions clamp to
/// `MAX_ARITY - 1`.
pub const MAX_ARITY: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(usize, usize),
    #[error("malformed mask encoding: {0}")]
    BadMask(String),
}

/// Directed edge from a parent application to its argument at `arg_pos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub arg_pos: usize,
}

impl Edge {
    /// Argument position clamped into the edge-label table.
    pub fn label(&self) -> usize {
        self.arg_pos.min(MAX_ARITY - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprDag {
    pub symbols: Vec<String>,
    pub edges: Vec<Edge>,
    pub root: usize,
}

impl ExprDag {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Rebuilds the tree the DAG stands for by duplicating shared nodes.
    pub fn unfold(&self) -> Expr {
        let mut kids: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.len()];
        for e in &self.edges {
            kids[e.src].push((e.arg_pos, e.dst));
        }
        for k in &mut kids {
            k.sort_unstable();
        }
        fn go(dag: &ExprDag, kids: &[Vec<(usize, usize)>], v: usize) -> Expr {
            if kids[v].is_empty() {
                Expr::Atom(dag.symbols[v].clone())
            } else {
                let args = kids[v].iter().map(|&(_, c)| go(dag, kids, c)).collect();
                Expr::Apply(dag.symbols[v].clone(), args)
            }
        }
        go(self, &kids, self.root)
    }

    pub fn to_record(&self, id: impl Into<String>) -> GraphRecord {
        GraphRecord {
            id: id.into(),
            symbols: self.symbols.clone(),
            edges: self.edges.iter().map(|e| [e.src, e.dst, e.arg_pos]).collect(),
            root: self.root,
        }
    }
}

/// JSONL form of an [`ExprDag`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub symbols: Vec<String>,
    pub edges: Vec<[usize; 3]>,
    pub root: usize,
}

impl GraphRecord {
    pub fn to_dag(&self) -> Result<ExprDag, GraphError> {
        let n = self.symbols.len();
        let edges = self
            .edges
            .iter()
            .map(|&[src, dst, arg_pos]| {
                if src >= n || dst >= n {
                    Err(GraphError::DanglingEdge(src, dst))
                } else {
                    Ok(Edge { src, dst, arg_pos })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExprDag { symbols: self.symbols.clone(), edges, root: self.root })
    }
}

/// Decides which atoms are variables for [`rename_variables`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariableRule {
    /// Atoms starting with this prefix.
    Prefix(String),
    /// Exactly the listed atoms.
    List(HashSet<String>),
}

impl Default for VariableRule {
    fn default() -> Self {
        VariableRule::Prefix("V".to_string())
    }
}

impl VariableRule {
    pub fn is_variable(&self, symbol: &str) -> bool {
        match self {
            VariableRule::Prefix(p) => symbol.starts_with(p.as_str()),
            VariableRule::List(set) => set.contains(symbol),
        }
    }
}

/// Replaces variables by `V0, V1, ...` in order of first (preorder)
/// occurrence.
pub fn rename_variables(e: &Expr, rule: &VariableRule) -> Expr {
    fn go(e: &Expr, rule: &VariableRule, names: &mut HashMap<String, String>) -> Expr {
        match e {
            Expr::Atom(s) if rule.is_variable(s) => {
                let next = names.len();
                Expr::Atom(names.entry(s.clone()).or_insert_with(|| format!("V{next}")).clone())
            }
            Expr::Atom(s) => Expr::Atom(s.clone()),
            Expr::Apply(h, args) => {
                Expr::Apply(h.clone(), args.iter().map(|a| go(a, rule, names)).collect())
            }
        }
    }
    go(e, rule, &mut HashMap::new())
}

/// Converts an AST into a DAG. Node ids follow preorder first occurrence, so
/// the root is node 0. With `share`, structurally equal subtrees collapse into
/// one node.
pub fn ast_to_dag(e: &Expr, share: bool) -> ExprDag {
    let mut symbols = Vec::new();
    let mut edges = Vec::new();

    if !share {
        let mut stack = vec![(e, None::<(usize, usize)>)];
        while let Some((e, parent)) = stack.pop() {
            let id = symbols.len();
            symbols.push(e.symbol().to_string());
            if let Some((src, arg_pos)) = parent {
                edges.push(Edge { src, dst: id, arg_pos });
            }
            for (pos, c) in e.children().iter().enumerate().rev() {
                stack.push((c, Some((id, pos))));
            }
        }
        return ExprDag { symbols, edges, root: 0 };
    }

    // Intern subtrees bottom-up: class id per (symbol, child classes).
    let mut classes: HashMap<(&str, Vec<usize>), usize> = HashMap::new();
    let mut class_of: HashMap<*const Expr, usize> = HashMap::new();
    let mut post = Vec::new();
    let mut stack = vec![(e, false)];
    while let Some((e, expanded)) = stack.pop() {
        if expanded {
            post.push(e);
        } else {
            stack.push((e, true));
            stack.extend(e.children().iter().rev().map(|c| (c, false)));
        }
    }
    for e in post {
        let kids: Vec<usize> = e.children().iter().map(|c| class_of[&(c as *const Expr)]).collect();
        let next = classes.len();
        let cls = *classes.entry((e.symbol(), kids)).or_insert(next);
        class_of.insert(e as *const Expr, cls);
    }

    // Number classes by preorder first visit.
    let mut node_of_class: HashMap<usize, usize> = HashMap::new();
    let mut stack = vec![e];
    while let Some(e) = stack.pop() {
        let cls = class_of[&(e as *const Expr)];
        if node_of_class.contains_key(&cls) {
            continue;
        }
        let id = symbols.len();
        node_of_class.insert(cls, id);
        symbols.push(e.symbol().to_string());
        stack.extend(e.children().iter().rev());
    }
    let mut seen = HashSet::new();
    let mut stack = vec![e];
    while let Some(e) = stack.pop() {
        let src = node_of_class[&class_of[&(e as *const Expr)]];
        if !seen.insert(src) {
            continue;
        }
        for (arg_pos, c) in e.children().iter().enumerate() {
            edges.push(Edge { src, dst: node_of_class[&class_of[&(c as *const Expr)]], arg_pos });
        }
        stack.extend(e.children().iter().rev());
    }
    edges.sort_unstable_by_key(|e| (e.src, e.arg_pos));
    ExprDag { symbols, edges, root: 0 }
}

/// Parents before children; ties go to the smaller node id.
pub fn topological_order(g: &ExprDag) -> Result<Vec<usize>, GraphError> {
    let n = g.len();
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        if e.src >= n || e.dst >= n {
            return Err(GraphError::DanglingEdge(e.src, e.dst));
        }
        indeg[e.dst] += 1;
        out[e.src].push(e.dst);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert(w);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(GraphError::CycleDetected)
    }
}

/// Which related nodes a node may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MaskMode {
    #[default]
    #[serde(rename = "union")]
    Union,
    #[serde(rename = "ancestors-only")]
    AncestorsOnly,
    #[serde(rename = "descendants-only")]
    DescendantsOnly,
}

impl std::str::FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(MaskMode::Union),
            "ancestors-only" => Ok(MaskMode::AncestorsOnly),
            "descendants-only" => Ok(MaskMode::DescendantsOnly),
            other => Err(format!("unknown mask mode `{other}`")),
        }
    }
}

/// Dense square boolean matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        BoolMatrix { n, bits: vec![false; n * n] }
    }

    pub fn filled(n: usize, value: bool) -> Self {
        BoolMatrix { n, bits: vec![value; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::new(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Row-major bits, most significant bit first within each byte, base64.
    pub fn to_base64(&self) -> String {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (k, &b) in self.bits.iter().enumerate() {
            if b {
                bytes[k / 8] |= 0x80 >> (k % 8);
            }
        }
        base64::engine::general_purpose::STANDARD.encode(bytes)
    }

    pub fn from_base64(n: usize, s: &str) -> Result<Self, GraphError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(|e| GraphError::BadMask(e.to_string()))?;
        if bytes.len() != (n * n).div_ceil(8) {
            return Err(GraphError::BadMask(format!("expected {} bytes", (n * n).div_ceil(8))));
        }
        let bits = (0..n * n).map(|k| bytes[k / 8] & (0x80 >> (k % 8)) != 0).collect();
        Ok(BoolMatrix { n, bits })
    }
}

/// `ancestor[i][j]`: node j is a proper ancestor of node i.
/// `descendant[i][j]`: node j is a proper descendant of node i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AncestryMasks {
    pub ancestor: BoolMatrix,
    pub descendant: BoolMatrix,
    pub allow: BoolMatrix,
}

impl AncestryMasks {
    pub fn to_record(&self) -> MaskRecord {
        MaskRecord { n: self.ancestor.n(), ancestor: self.ancestor.to_base64() }
    }

    pub fn from_record(r: &MaskRecord, mode: MaskMode) -> Result<Self, GraphError> {
        let ancestor = BoolMatrix::from_base64(r.n, &r.ancestor)?;
        let descendant = ancestor.transpose();
        let allow = allow_matrix(&ancestor, &descendant, mode);
        Ok(AncestryMasks { ancestor, descendant, allow })
    }
}

/// JSONL companion of a [`GraphRecord`] carrying the ancestor relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub n: usize,
    pub ancestor: String,
}

fn allow_matrix(anc: &BoolMatrix, desc: &BoolMatrix, mode: MaskMode) -> BoolMatrix {
    let n = anc.n();
    let mut allow = BoolMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let ok = match mode {
                MaskMode::Union => anc.get(i, j) || desc.get(i, j),
                MaskMode::AncestorsOnly => anc.get(i, j),
                MaskMode::DescendantsOnly => desc.get(i, j),
            };
            if ok {
                allow.set(i, j, true);
            }
        }
    }
    allow
}

pub fn ancestry_masks(g: &ExprDag, mode: MaskMode) -> Result<AncestryMasks, GraphError> {
    let n = g.len();
    let order = topological_order(g)?;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        children[e.src].push(e.dst);
    }
    let mut descendant = BoolMatrix::new(n);
    // Children come later in `order`, so their rows are complete first.
    for &v in order.iter().rev() {
        for &c in &children[v] {
            descendant.set(v, c, true);
            for j in 0..n {
                if descendant.get(c, j) {
                    descendant.set(v, j, true);
                }
            }
        }
    }
    let ancestor = descendant.transpose();
    let allow = allow_matrix(&ancestor, &descendant, mode);
    Ok(AncestryMasks { ancestor, descendant, allow })
}

#[cfg(test)]
pub(crate) mod testgen {
    use super::*;
    use rand::Rng;

    /// Random DAG whose edges always point from a smaller to a larger id,
    /// with node ids then shuffled so the order is not trivial.
    pub fn random_dag<R: Rng>(rng: &mut R, max_nodes: usize) -> ExprDag {
        let n = rng.gen_range(1..=max_nodes);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            let mut pos = 0;
            for j in i + 1..n {
                if rng.gen_bool(0.3) {
                    edges.push(Edge { src: perm[i], dst: perm[j], arg_pos: pos });
                    pos += 1;
                }
            }
        }
        ExprDag { symbols: (0..n).map(|i| format!("s{i}")).collect(), edges, root: perm[0] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::{parse, print, subterms, testgen::random_expr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> ExprDag {
        ExprDag {
            symbols: vec!["a".into(), "b".into(), "c".into()],
            edges: vec![Edge { src: 0, dst: 1, arg_pos: 0 }, Edge { src: 1, dst: 2, arg_pos: 0 }],
            root: 0,
        }
    }

    #[test]
    fn renames_in_first_occurrence_order() {
        let rule = VariableRule::List(["a", "b"].iter().map(|s| s.to_string()).collect());
        let e = parse("(f a b a)").unwrap();
        assert_eq!(print(&rename_variables(&e, &rule)), "(f V0 V1 V0)");
        let c = parse("(f c)").unwrap();
        assert_eq!(rename_variables(&c, &rule), c);
    }

    #[test]
    fn alpha_equivalent_pairs_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rule = VariableRule::Prefix("v".into());
        for _ in 0..100 {
            let e = random_expr(&mut rng, 5);
            let e = rename_variables(&e, &VariableRule::Prefix("V".into()));
            // Map V<k> to a random fresh name vX_<k> bijectively.
            let salt: u32 = rand::Rng::gen(&mut rng);
            let text = print(&e);
            let mut renamed = String::new();
            for tok in text.split(' ') {
                if !renamed.is_empty() {
                    renamed.push(' ');
                }
                let bare = tok.trim_matches(|c| c == '(' || c == ')');
                if let Some(k) = bare.strip_prefix('V') {
                    renamed.push_str(&tok.replace(bare, &format!("v{salt}_{k}")));
                } else {
                    renamed.push_str(tok);
                }
            }
            let e2 = parse(&renamed).unwrap();
            let lhs = rename_variables(&e, &VariableRule::Prefix("V".into()));
            let rhs = rename_variables(&e2, &rule);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn shared_dag_of_repeated_subterm() {
        let e = parse("(f (g x) (g x))").unwrap();
        let g = ast_to_dag(&e, true);
        assert_eq!(g.symbols, ["f", "g", "x"]);
        assert_eq!(
            g.edges,
            [
                Edge { src: 0, dst: 1, arg_pos: 0 },
                Edge { src: 0, dst: 1, arg_pos: 1 },
                Edge { src: 1, dst: 2, arg_pos: 0 }
            ]
        );
        assert_eq!(g.root, 0);
        let t = ast_to_dag(&e, false);
        assert_eq!(t.len(), 5);
        assert_eq!(t.edges.len(), 4);
        let leaf = ast_to_dag(&parse("x").unwrap(), true);
        assert_eq!((leaf.len(), leaf.edges.len(), leaf.root), (1, 0, 0));
    }

    #[test]
    fn sharing_is_minimal_and_preserves_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let e = random_expr(&mut rng, 6);
            let distinct: HashSet<String> = subterms(&e).into_iter().map(print).collect();
            let g = ast_to_dag(&e, true);
            assert_eq!(g.len(), distinct.len());
            assert_eq!(g.unfold(), e);
            assert_eq!(ast_to_dag(&e, false).unfold(), e);
            let order = topological_order(&g).unwrap();
            assert_eq!(order.len(), g.len());
        }
    }

    #[test]
    fn arg_pos_labels_are_contiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let g = ast_to_dag(&random_expr(&mut rng, 5), true);
            let mut per_src: HashMap<usize, Vec<usize>> = HashMap::new();
            for e in &g.edges {
                per_src.entry(e.src).or_default().push(e.arg_pos);
            }
            for (_, mut pos) in per_src {
                pos.sort_unstable();
                assert_eq!(pos, (0..pos.len()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn chain_masks() {
        let m = ancestry_masks(&chain(), MaskMode::Union).unwrap();
        assert!(m.ancestor.get(2, 0) && m.ancestor.get(2, 1));
        assert!(m.descendant.get(0, 1) && m.descendant.get(0, 2));
        assert!(!m.ancestor.get(0, 2));
        assert!(m.allow.row(1).iter().all(|&b| b));
        assert!(m.allow.row(0).iter().all(|&b| b));
        let a = ancestry_masks(&chain(), MaskMode::AncestorsOnly).unwrap();
        assert_eq!(a.allow.row(2), [true, true, true]);
        assert_eq!(a.allow.row(0), [true, false, false]);
        let d = ancestry_masks(&chain(), MaskMode::DescendantsOnly).unwrap();
        assert_eq!(d.allow.row(0), [true, true, true]);
        assert_eq!(d.allow.row(2), [false, false, true]);
    }

    #[test]
    fn single_node_masks() {
        let g = ast_to_dag(&parse("x").unwrap(), true);
        let m = ancestry_masks(&g, MaskMode::Union).unwrap();
        assert_eq!(m.ancestor, BoolMatrix::new(1));
        assert_eq!(m.descendant, BoolMatrix::new(1));
        assert_eq!(m.allow, BoolMatrix::identity(1));
    }

    #[test]
    fn cycles_are_rejected() {
        let mut g = chain();
        g.edges.push(Edge { src: 2, dst: 0, arg_pos: 0 });
        assert_eq!(topological_order(&g), Err(GraphError::CycleDetected));
        assert_eq!(ancestry_masks(&g, MaskMode::Union), Err(GraphError::CycleDetected));
    }

    #[test]
    fn topological_order_respects_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        assert_eq!(topological_order(&chain()).unwrap(), [0, 1, 2]);
        for _ in 0..50 {
            let g = testgen::random_dag(&mut rng, 12);
            let order = topological_order(&g).unwrap();
            let mut pos = vec![0; g.len()];
            for (k, &v) in order.iter().enumerate() {
                pos[v] = k;
            }
            assert!(g.edges.iter().all(|e| pos[e.src] < pos[e.dst]));
        }
    }

    #[test]
    fn union_allow_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let g = testgen::random_dag(&mut rng, 10);
            let m = ancestry_masks(&g, MaskMode::Union).unwrap();
            assert_eq!(m.allow, m.allow.transpose());
            assert_eq!(m.ancestor, m.descendant.transpose());
        }
    }

    #[test]
    fn mask_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = testgen::random_dag(&mut rng, 11);
        let m = ancestry_masks(&g, MaskMode::Union).unwrap();
        let rec = m.to_record();
        assert_eq!(AncestryMasks::from_record(&rec, MaskMode::Union).unwrap(), m);
        let json = serde_json::to_string(&g.to_record("g0")).unwrap();
        let back: GraphRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_dag().unwrap(), g);
        assert!(BoolMatrix::from_base64(3, "AA==AA").is_err());
    }
}
