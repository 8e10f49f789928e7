//! Text formats: Newick trees and forests, tab-separated leaf maps,
//! overlay-map interchange files, and DOT/JSON network output.
//!
//! The Newick dialect is rooted and purely topological. Leaf labels are
//! `[A-Za-z0-9_]+`. Interior labels are parsed and ignored; branch lengths
//! (`:1.5`) are parsed, discarded, and reported as warnings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::builder::OsfMap;
use crate::model::{Forest, ForestNode, ForestTriple, ModelError, Network, NodeId, PhyloTree, TreeDraft};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("invalid tree structure: {0}")]
    Structure(#[from] ModelError),
}

/// Non-fatal observations made while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A `:length` annotation was present and dropped.
    BranchLengthIgnored { pos: usize },
    /// An interior node label was present and dropped.
    InteriorLabelIgnored { pos: usize },
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        Scanner {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        Some(b)
    }

    fn expect(&mut self, want: u8) -> Result<(), ParseError> {
        match self.bump() {
            Some(b) if b == want => Ok(()),
            got => Err(ParseError::Syntax {
                pos: self.pos.saturating_sub(1),
                msg: match got {
                    Some(b) => format!("expected '{}', found '{}'", want as char, b as char),
                    None => format!("expected '{}', found end of input", want as char),
                },
            }),
        }
    }

    fn label(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_alphanumeric() || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos > start {
            Some(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
        } else {
            None
        }
    }

    fn number(&mut self) -> Result<(), ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(ParseError::Syntax {
                pos: self.pos,
                msg: "expected a number after ':'".to_string(),
            });
        }
        Ok(())
    }
}

struct NewickParser<'a> {
    scan: Scanner<'a>,
    draft: TreeDraft,
    warnings: Vec<ParseWarning>,
}

impl<'a> NewickParser<'a> {
    fn new(text: &'a str) -> Self {
        NewickParser {
            scan: Scanner::new(text),
            draft: TreeDraft::new(),
            warnings: Vec::new(),
        }
    }

    fn subtree(&mut self) -> Result<NodeId, ParseError> {
        match self.scan.peek() {
            Some(b'(') => {
                self.scan.expect(b'(')?;
                let node = self.draft.add_node(None);
                loop {
                    let child = self.subtree()?;
                    self.draft.attach(node, child);
                    match self.scan.peek() {
                        Some(b',') => {
                            self.scan.bump();
                        }
                        Some(b')') => {
                            self.scan.bump();
                            break;
                        }
                        other => {
                            return Err(ParseError::Syntax {
                                pos: self.scan.pos,
                                msg: match other {
                                    Some(b) => {
                                        format!("expected ',' or ')', found '{}'", b as char)
                                    }
                                    None => "unclosed '('".to_string(),
                                },
                            })
                        }
                    }
                }
                if self.scan.label().is_some() {
                    self.warnings
                        .push(ParseWarning::InteriorLabelIgnored { pos: self.scan.pos });
                }
                self.trailing_length()?;
                Ok(node)
            }
            _ => {
                let pos = self.scan.pos;
                let label = self.scan.label().ok_or_else(|| ParseError::Syntax {
                    pos,
                    msg: "expected a leaf label or '('".to_string(),
                })?;
                let node = self.draft.add_node(Some(label));
                self.trailing_length()?;
                Ok(node)
            }
        }
    }

    fn trailing_length(&mut self) -> Result<(), ParseError> {
        if self.scan.peek() == Some(b':') {
            let pos = self.scan.pos;
            self.scan.bump();
            self.scan.number()?;
            self.warnings.push(ParseWarning::BranchLengthIgnored { pos });
        }
        Ok(())
    }

    fn tree(mut self) -> Result<(PhyloTree, Vec<ParseWarning>), ParseError> {
        let root = self.subtree()?;
        self.scan.expect(b';')?;
        self.scan.skip_ws();
        if self.scan.pos < self.scan.bytes.len() {
            return Err(ParseError::Syntax {
                pos: self.scan.pos,
                msg: "trailing input after ';'".to_string(),
            });
        }
        let _ = root;
        let (tree, _) = self.draft.finish()?;
        Ok((tree, self.warnings))
    }
}

/// Parses one rooted Newick string (terminated by `;`) into a tree.
pub fn parse_tree(text: &str) -> Result<PhyloTree, ParseError> {
    parse_tree_with_warnings(text).map(|(t, _)| t)
}

/// Like [`parse_tree`], also returning dropped-annotation warnings.
pub fn parse_tree_with_warnings(
    text: &str,
) -> Result<(PhyloTree, Vec<ParseWarning>), ParseError> {
    NewickParser::new(text).tree()
}

/// Parses a forest: one Newick string per non-empty line.
pub fn parse_forest(text: &str) -> Result<Forest, ParseError> {
    let mut trees = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tree = parse_tree(line).map_err(|e| ParseError::Line {
            line: i + 1,
            msg: e.to_string(),
        })?;
        trees.push(tree);
    }
    Ok(Forest::new(trees)?)
}

/// Parses a tab-separated leaf map `gene<TAB>species`, `#` comments allowed,
/// and resolves it against a gene tree and a forest.
pub fn parse_leaf_map(
    text: &str,
    gene: &PhyloTree,
    forest: &Forest,
) -> Result<BTreeMap<String, String>, ParseError> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t').map(str::trim);
        let (g, s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(g), Some(s), None) if !g.is_empty() && !s.is_empty() => (g, s),
            _ => {
                return Err(ParseError::Line {
                    line: i + 1,
                    msg: "expected exactly two tab-separated fields".to_string(),
                })
            }
        };
        if gene.node_by_label(g).is_none() {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("{g:?} is not a leaf of the gene tree"),
            });
        }
        if forest.leaf_by_label(s).is_none() {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("{s:?} is not a leaf of the forest"),
            });
        }
        if map.insert(g.to_string(), s.to_string()).is_some() {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("duplicate row for gene leaf {g:?}"),
            });
        }
    }
    for leaf in gene.leaves() {
        let label = gene.label(leaf).unwrap();
        if !map.contains_key(label) {
            return Err(ParseError::Line {
                line: 0,
                msg: format!("leaf map misses gene leaf {label:?}"),
            });
        }
    }
    Ok(map)
}

/// Serializes a tree as Newick with children in stored order.
pub fn serialize_tree(tree: &PhyloTree) -> String {
    fn go(tree: &PhyloTree, v: NodeId, out: &mut String) {
        if tree.is_leaf(v) {
            out.push_str(tree.label(v).unwrap_or(""));
            return;
        }
        out.push('(');
        for (i, &c) in tree.children(v).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            go(tree, c, out);
        }
        out.push(')');
    }
    let mut out = String::new();
    go(tree, tree.root(), &mut out);
    out.push(';');
    out
}

/// One Newick line per tree.
pub fn serialize_forest(forest: &Forest) -> String {
    let mut out = String::new();
    for t in forest.trees() {
        out.push_str(&serialize_tree(t));
        out.push('\n');
    }
    out
}

/// Tab-separated `gene<TAB>species` lines, sorted by gene label.
pub fn serialize_leaf_map(triple: &ForestTriple) -> String {
    let mut rows: Vec<(String, String)> = triple
        .phi_map()
        .iter()
        .map(|(&g, &s)| {
            (
                triple.gene.label(g).unwrap().to_string(),
                triple.forest.label_of(s).unwrap().to_string(),
            )
        })
        .collect();
    rows.sort();
    let mut out = String::new();
    for (g, s) in rows {
        let _ = writeln!(out, "{g}\t{s}");
    }
    out
}

#[derive(Debug, Error)]
pub enum NetworkFormatError {
    #[error("network has no forest/contact arc partition")]
    MissingPartition,
    #[error("network JSON: {0}")]
    Json(String),
}

/// Deterministic DOT output. Forest arcs are solid and grouped per tree in
/// subgraph clusters; contact arcs are dashed; leaves carry their labels,
/// interior nodes are anonymous points.
pub fn serialize_network_dot(net: &Network) -> Result<String, NetworkFormatError> {
    let partition = net
        .partition()
        .ok_or(NetworkFormatError::MissingPartition)?;

    // Group nodes into forest components using only forest arcs.
    let mut comp: Vec<usize> = (0..net.num_nodes()).collect();
    fn find(comp: &mut Vec<usize>, v: usize) -> usize {
        if comp[v] != v {
            let r = find(comp, comp[v]);
            comp[v] = r;
        }
        comp[v]
    }
    for &i in &partition.forest {
        let (t, h) = net.arcs()[i];
        let rt = find(&mut comp, t.index());
        let rh = find(&mut comp, h.index());
        if rt != rh {
            comp[rt] = rh;
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..net.num_nodes() {
        let r = find(&mut comp, v);
        clusters.entry(r).or_default().push(v);
    }

    let mut out = String::new();
    out.push_str("digraph osf {\n  rankdir=TB;\n");
    for (ci, (_, nodes)) in clusters.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{ci} {{");
        let _ = writeln!(out, "    style=invis;");
        for &v in nodes {
            let id = NodeId(v);
            match net.leaves().get(&id) {
                Some(label) => {
                    let _ = writeln!(out, "    n{v} [shape=none, label=\"{label}\"];");
                }
                None => {
                    let _ = writeln!(out, "    n{v} [shape=point, label=\"\"];");
                }
            }
        }
        for &i in &partition.forest {
            let (t, h) = net.arcs()[i];
            if nodes.contains(&t.index()) {
                let _ = writeln!(out, "    n{} -> n{};", t.index(), h.index());
            }
        }
        out.push_str("  }\n");
    }
    for &i in &partition.contact {
        let (t, h) = net.arcs()[i];
        let _ = writeln!(
            out,
            "  n{} -> n{} [style=\"dashed\"];",
            t.index(),
            h.index()
        );
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct NetworkJson {
    nodes: usize,
    forest_arcs: Vec<(usize, usize)>,
    contact_arcs: Vec<(usize, usize)>,
    leaf_labels: BTreeMap<usize, String>,
}

/// JSON form `{nodes, forest_arcs, contact_arcs, leaf_labels}` with stable
/// key order.
pub fn serialize_network_json(net: &Network) -> Result<String, NetworkFormatError> {
    let partition = net
        .partition()
        .ok_or(NetworkFormatError::MissingPartition)?;
    let body = NetworkJson {
        nodes: net.num_nodes(),
        forest_arcs: partition
            .forest
            .iter()
            .map(|&i| (net.arcs()[i].0.index(), net.arcs()[i].1.index()))
            .collect(),
        contact_arcs: partition
            .contact
            .iter()
            .map(|&i| (net.arcs()[i].0.index(), net.arcs()[i].1.index()))
            .collect(),
        leaf_labels: net
            .leaves()
            .iter()
            .map(|(v, l)| (v.index(), l.clone()))
            .collect(),
    };
    serde_json::to_string_pretty(&body).map_err(|e| NetworkFormatError::Json(e.to_string()))
}

/// Reads the JSON form back into a partitioned network.
pub fn parse_network_json(text: &str) -> Result<Network, NetworkFormatError> {
    let body: NetworkJson =
        serde_json::from_str(text).map_err(|e| NetworkFormatError::Json(e.to_string()))?;
    let mut arcs = Vec::new();
    let mut forest = Vec::new();
    let mut contact = Vec::new();
    for (t, h) in body.forest_arcs {
        forest.push(arcs.len());
        arcs.push((NodeId(t), NodeId(h)));
    }
    for (t, h) in body.contact_arcs {
        contact.push(arcs.len());
        arcs.push((NodeId(t), NodeId(h)));
    }
    let leaves = body
        .leaf_labels
        .into_iter()
        .map(|(v, l)| (NodeId(v), l))
        .collect();
    Network::new(
        body.nodes,
        arcs,
        leaves,
        Some(crate::model::ArcPartition { forest, contact }),
    )
    .map_err(|e| NetworkFormatError::Json(e.to_string()))
}

/// Overlay-map interchange format: one line per gene vertex,
/// `gene_node_id<TAB>tree_index<TAB>leaf,leaf,...` where the comma-separated
/// leaf labels identify the species vertex as their lca. Gene node ids refer
/// to the ids assigned by the parser, which are stable for a given file.
pub fn serialize_osf_map(triple: &ForestTriple, psi: &OsfMap) -> String {
    let mut out = String::new();
    for v in triple.gene.node_ids() {
        let img = psi.image(v);
        let tree = triple.forest.tree(img.tree);
        let labels: Vec<&str> = tree
            .cluster(img.node)
            .expect("image node must belong to its tree")
            .into_iter()
            .map(|l| tree.label(l).unwrap())
            .collect();
        let _ = writeln!(out, "{}\t{}\t{}", v.index(), img.tree, labels.join(","));
    }
    out
}

/// Parses the overlay-map interchange format against a triple.
pub fn parse_osf_map(text: &str, triple: &ForestTriple) -> Result<OsfMap, ParseError> {
    let mut assignment: BTreeMap<NodeId, ForestNode> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(ParseError::Line {
                line: i + 1,
                msg: "expected three tab-separated fields".to_string(),
            });
        }
        let gene_id: usize = fields[0].trim().parse().map_err(|_| ParseError::Line {
            line: i + 1,
            msg: format!("bad gene node id {:?}", fields[0]),
        })?;
        let tree_idx: usize = fields[1].trim().parse().map_err(|_| ParseError::Line {
            line: i + 1,
            msg: format!("bad tree index {:?}", fields[1]),
        })?;
        if gene_id >= triple.gene.len() {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("gene node id {gene_id} out of range"),
            });
        }
        if tree_idx >= triple.forest.len() {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("tree index {tree_idx} out of range"),
            });
        }
        let tree = triple.forest.tree(tree_idx);
        let mut leaf_ids = Vec::new();
        for lab in fields[2].split(',').map(str::trim) {
            let id = tree.node_by_label(lab).ok_or_else(|| ParseError::Line {
                line: i + 1,
                msg: format!("{lab:?} is not a leaf of tree {tree_idx}"),
            })?;
            leaf_ids.push(id);
        }
        let node = tree.lca(&leaf_ids).map_err(|e| ParseError::Line {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if assignment
            .insert(NodeId(gene_id), ForestNode::new(tree_idx, node))
            .is_some()
        {
            return Err(ParseError::Line {
                line: i + 1,
                msg: format!("duplicate row for gene node {gene_id}"),
            });
        }
    }
    for v in triple.gene.node_ids() {
        if !assignment.contains_key(&v) {
            return Err(ParseError::Line {
                line: 0,
                msg: format!("map misses gene node {}", v.index()),
            });
        }
    }
    let images: Vec<ForestNode> = triple.gene.node_ids().map(|v| assignment[&v]).collect();
    Ok(OsfMap::from_images(triple, images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn parses_three_leaf_tree() {
        let t = parse_tree("((a,b),c);").unwrap();
        assert_eq!(t.leaves().len(), 3);
        assert_eq!(t.interior().len(), 2);
    }

    #[test]
    fn rejects_unary_root() {
        assert!(parse_tree("(a);").is_err());
    }

    #[test]
    fn parses_balanced_quartet() {
        let t = parse_tree("((a,b),(c,d));").unwrap();
        assert_eq!(t.leaves().len(), 4);
        assert!(t.is_binary());
    }

    #[test]
    fn rejects_duplicate_leaf_labels() {
        assert!(parse_tree("((a,b),a);").is_err());
    }

    #[test]
    fn rejects_single_leaf() {
        assert!(parse_tree("a;").is_err());
    }

    #[test]
    fn branch_lengths_dropped_with_warning() {
        let (t, warnings) = parse_tree_with_warnings("((a:0.5,b:1e-3)x:2,c);").unwrap();
        assert_eq!(t.leaves().len(), 3);
        assert!(warnings
            .iter()
            .any(|w| matches!(w, ParseWarning::BranchLengthIgnored { .. })));
        assert!(warnings
            .iter()
            .any(|w| matches!(w, ParseWarning::InteriorLabelIgnored { .. })));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_tree("((a,b),c").unwrap_err();
        match err {
            ParseError::Syntax { pos, .. } => assert!(pos >= 8),
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn forest_of_two_lines() {
        let f = parse_forest("(A,B);\n(C,D);\n").unwrap();
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn forest_rejects_cross_tree_duplicate() {
        assert!(parse_forest("(A,B);\n(A,C);").is_err());
    }

    #[test]
    fn forest_of_one_line() {
        let f = parse_forest("(A,B);").unwrap();
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn leaf_map_roundtrip() {
        let g = parse_tree("(a,b);").unwrap();
        let f = parse_forest("(A,B);").unwrap();
        let map = parse_leaf_map("a\tA\nb\tB\n", &g, &f).unwrap();
        assert_eq!(map["a"], "A");
        assert_eq!(map["b"], "B");
    }

    #[test]
    fn leaf_map_rejects_unknown_species() {
        let g = parse_tree("(a,b);").unwrap();
        let f = parse_forest("(A,B);").unwrap();
        assert!(parse_leaf_map("a\tX\nb\tB\n", &g, &f).is_err());
    }

    #[test]
    fn leaf_map_rejects_missing_gene_leaf() {
        let g = parse_tree("(a,b);").unwrap();
        let f = parse_forest("(A,B);").unwrap();
        assert!(parse_leaf_map("a\tA\n", &g, &f).is_err());
    }

    #[test]
    fn leaf_map_rejects_duplicate_row() {
        let g = parse_tree("(a,b);").unwrap();
        let f = parse_forest("(A,B);").unwrap();
        assert!(parse_leaf_map("a\tA\na\tB\nb\tB\n", &g, &f).is_err());
    }

    fn random_newick(rng: &mut StdRng, n_leaves: usize) -> String {
        let mut parts: Vec<String> = (0..n_leaves).map(|i| format!("l{i}")).collect();
        while parts.len() > 1 {
            let i = rng.gen_range(0..parts.len());
            let a = parts.swap_remove(i);
            let j = rng.gen_range(0..parts.len());
            let b = parts.swap_remove(j);
            parts.push(format!("({a},{b})"));
        }
        format!("{};", parts.pop().unwrap())
    }

    #[test]
    fn parse_serialize_roundtrip_is_isomorphic() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..=12);
            let text = random_newick(&mut rng, n);
            let t = parse_tree(&text).unwrap();
            let t2 = parse_tree(&serialize_tree(&t)).unwrap();
            assert!(t.isomorphic(&t2));
        }
    }
}
