//! Subtree-prune-and-regraft edits on rooted binary trees and forests,
//! exact rSPR distance at desk scale, random instance generation, and the
//! stability experiments comparing score changes against their proved
//! bounds.
//!
//! Root-adjacent moves follow the standard rooted convention: pruning a
//! child of the root promotes the sibling, and a pruned subtree may be
//! regrafted above the current root through a fresh root vertex.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::builder::{character_of, parsimony_score, Character};
use crate::model::{Forest, ForestTriple, ModelError, NodeId, PhyloTree, TreeDraft};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("tree is not binary")]
    NotBinary,
    #[error("malformed move: {0}")]
    MalformedMove(String),
    #[error("trees have different leaf sets")]
    LeafSetMismatch,
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("no valid move exists for this input")]
    NoValidMove,
    #[error("infeasible parameters: {0}")]
    BadParams(String),
    #[error("structure error: {0}")]
    Model(#[from] ModelError),
}

/// Where a pruned subtree is reattached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraftTarget {
    /// Subdivide the arc (tail, head) of the pruned tree.
    Arc(NodeId, NodeId),
    /// Create a new root above the pruned tree's current root.
    AboveRoot,
}

/// One subtree-prune-and-regraft operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SprMove {
    pub cut_arc: (NodeId, NodeId),
    pub graft: GraftTarget,
}

fn prune(tree: &PhyloTree, cut: (NodeId, NodeId)) -> Result<(TreeDraft, NodeId, NodeId), PerturbError> {
    let (u, v) = cut;
    if !tree.has_arc(u, v) {
        return Err(PerturbError::MalformedMove(format!(
            "({u}, {v}) is not an arc"
        )));
    }
    let mut draft = tree.draft();
    draft.detach(v);
    let mut root = tree.root();
    if u == root {
        root = draft.collapse_root(root);
    } else {
        // u went unary; contract it.
        let p = draft.parent[u.index()].expect("non-root tail has a parent");
        let c = draft.children[u.index()][0];
        let slot = draft.children[p.index()]
            .iter()
            .position(|&x| x == u)
            .expect("child slot");
        draft.children[p.index()][slot] = c;
        draft.parent[c.index()] = Some(p);
        draft.alive[u.index()] = false;
    }
    Ok((draft, root, v))
}

/// Applies one SPR move to a binary tree; the result is a binary tree on the
/// same leaf set with unary vertices suppressed.
pub fn apply_spr(tree: &PhyloTree, mv: &SprMove) -> Result<PhyloTree, PerturbError> {
    if !tree.is_binary() {
        return Err(PerturbError::NotBinary);
    }
    let (mut draft, root, pruned) = prune(tree, mv.cut_arc)?;
    match mv.graft {
        GraftTarget::Arc(x, y) => {
            let valid = draft.alive[x.index()]
                && draft.alive[y.index()]
                && draft.parent[y.index()] == Some(x);
            if !valid {
                return Err(PerturbError::MalformedMove(format!(
                    "({x}, {y}) is not an arc of the pruned tree"
                )));
            }
            // Reject targets inside the pruned subtree.
            let mut cur = Some(x);
            while let Some(w) = cur {
                if w == pruned {
                    return Err(PerturbError::MalformedMove(
                        "graft target lies inside the pruned subtree".to_string(),
                    ));
                }
                cur = draft.parent[w.index()];
            }
            let z = draft.add_node(None);
            draft.detach(y);
            draft.attach(x, z);
            draft.attach(z, y);
            draft.attach(z, pruned);
        }
        GraftTarget::AboveRoot => {
            let z = draft.add_node(None);
            draft.attach(z, root);
            draft.attach(z, pruned);
        }
    }
    let (out, _) = draft.finish()?;
    Ok(out)
}

/// Every well-formed move on the tree: each cut arc combined with each arc
/// of the pruned tree plus the above-root graft. Deterministic order.
pub fn valid_moves(tree: &PhyloTree) -> Vec<SprMove> {
    let mut out = Vec::new();
    for cut in tree.arcs() {
        let Ok((draft, root, pruned)) = prune(tree, cut) else {
            continue;
        };
        let mut stack = vec![root];
        while let Some(x) = stack.pop() {
            for &y in &draft.children[x.index()] {
                if y == pruned {
                    continue;
                }
                out.push(SprMove {
                    cut_arc: cut,
                    graft: GraftTarget::Arc(x, y),
                });
                stack.push(y);
            }
        }
        out.push(SprMove {
            cut_arc: cut,
            graft: GraftTarget::AboveRoot,
        });
    }
    out
}

/// All SPR neighbours of a tree as canonical-form keyed trees.
fn neighbours(tree: &PhyloTree) -> BTreeMap<String, PhyloTree> {
    let mut out = BTreeMap::new();
    for mv in valid_moves(tree) {
        if let Ok(t) = apply_spr(tree, &mv) {
            out.entry(t.canonical_form()).or_insert(t);
        }
    }
    out
}

/// Exact rooted SPR distance by bidirectional breadth-first search over
/// canonical forms. `max_distance` bounds the search radius.
pub fn rspr_distance(
    a: &PhyloTree,
    b: &PhyloTree,
    max_distance: usize,
) -> Result<usize, PerturbError> {
    if !a.is_binary() || !b.is_binary() {
        return Err(PerturbError::NotBinary);
    }
    let la: BTreeSet<&str> = a.leaf_labels().collect();
    let lb: BTreeSet<&str> = b.leaf_labels().collect();
    if la != lb {
        return Err(PerturbError::LeafSetMismatch);
    }
    if a.canonical_form() == b.canonical_form() {
        return Ok(0);
    }
    let mut seen_a: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_b: BTreeMap<String, usize> = BTreeMap::new();
    seen_a.insert(a.canonical_form(), 0);
    seen_b.insert(b.canonical_form(), 0);
    let mut frontier_a = vec![a.clone()];
    let mut frontier_b = vec![b.clone()];
    let mut da = 0usize;
    let mut db = 0usize;
    while da + db < max_distance {
        // Expand the smaller frontier.
        let expand_a = frontier_a.len() <= frontier_b.len();
        let (frontier, seen, other_seen, depth) = if expand_a {
            (&mut frontier_a, &mut seen_a, &seen_b, &mut da)
        } else {
            (&mut frontier_b, &mut seen_b, &seen_a, &mut db)
        };
        *depth += 1;
        let mut next = Vec::new();
        for t in frontier.iter() {
            for (form, nb) in neighbours(t) {
                if seen.contains_key(&form) {
                    continue;
                }
                if let Some(d_other) = other_seen.get(&form) {
                    return Ok(*depth + d_other);
                }
                seen.insert(form, *depth);
                next.push(nb);
            }
        }
        *frontier = next;
        if frontier_a.is_empty() && frontier_b.is_empty() {
            break;
        }
    }
    Err(PerturbError::CapExceeded(format!(
        "no path within {max_distance} moves"
    )))
}

/// Moves the subtree rooted at `t0_root` from one forest tree into another.
/// The source must keep at least two leaves, and a whole tree cannot be
/// moved.
pub fn forest_spr(
    forest: &Forest,
    source: usize,
    t0_root: NodeId,
    target: usize,
    graft: GraftTarget,
) -> Result<Forest, PerturbError> {
    if source == target || source >= forest.len() || target >= forest.len() {
        return Err(PerturbError::MalformedMove(
            "source and target must be distinct forest trees".to_string(),
        ));
    }
    let src = forest.tree(source);
    if t0_root == src.root() {
        return Err(PerturbError::MalformedMove(
            "cannot move an entire tree".to_string(),
        ));
    }
    let moved_leaves = src.cluster(t0_root)?;
    if src.leaves().len() - moved_leaves.len() < 2 {
        return Err(PerturbError::MalformedMove(
            "source tree would keep fewer than two leaves".to_string(),
        ));
    }

    // Extract the moved subtree as an own draft.
    let mut sub = TreeDraft::new();
    let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut stack = vec![t0_root];
    let mut order = Vec::new();
    while let Some(v) = stack.pop() {
        order.push(v);
        for &c in src.children(v).iter().rev() {
            stack.push(c);
        }
    }
    for v in order {
        let nid = sub.add_node(src.label(v).map(str::to_string));
        map.insert(v, nid);
        if v != t0_root {
            let p = map[&src.parent(v).unwrap()];
            sub.attach(p, nid);
        }
    }
    let sub_root_local = map[&t0_root];

    // Remove the subtree from the source and suppress.
    let parent = src.parent(t0_root).expect("t0 is not the source root");
    let mut src_draft = src.draft();
    src_draft.detach(t0_root);
    let mut kill = vec![t0_root];
    while let Some(v) = kill.pop() {
        src_draft.alive[v.index()] = false;
        kill.extend(src_draft.children[v.index()].iter().copied());
    }
    let mut src_root = src.root();
    if parent == src_root && src_draft.children[parent.index()].len() == 1 {
        src_root = src_draft.collapse_root(src_root);
    }
    let _ = src_root;
    src_draft.suppress_unary();
    let (new_src, _) = src_draft.finish()?;

    // Graft into the target tree.
    let tgt = forest.tree(target);
    let mut tgt_draft = tgt.draft();
    let offset = tgt_draft.parent.len();
    for i in 0..sub.parent.len() {
        let id = tgt_draft.add_node(sub.label[i].clone());
        debug_assert_eq!(id.index(), offset + i);
    }
    for i in 0..sub.parent.len() {
        if let Some(p) = sub.parent[i] {
            tgt_draft.attach(NodeId(offset + p.index()), NodeId(offset + i));
        }
    }
    let grafted_root = NodeId(offset + sub_root_local.index());
    match graft {
        GraftTarget::Arc(x, y) => {
            if x.index() >= offset
                || y.index() >= offset
                || tgt_draft.parent[y.index()] != Some(x)
            {
                return Err(PerturbError::MalformedMove(format!(
                    "({x}, {y}) is not an arc of the target tree"
                )));
            }
            let z = tgt_draft.add_node(None);
            tgt_draft.detach(y);
            tgt_draft.attach(x, z);
            tgt_draft.attach(z, y);
            tgt_draft.attach(z, grafted_root);
        }
        GraftTarget::AboveRoot => {
            let z = tgt_draft.add_node(None);
            tgt_draft.attach(z, tgt.root());
            tgt_draft.attach(z, grafted_root);
        }
    }
    let (new_tgt, _) = tgt_draft.finish()?;

    let trees: Vec<PhyloTree> = forest
        .trees()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == source {
                new_src.clone()
            } else if i == target {
                new_tgt.clone()
            } else {
                t.clone()
            }
        })
        .collect();
    Ok(Forest::new(trees)?)
}

/// One perturbation trial outcome.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub k: usize,
    pub d_rspr: Option<usize>,
    pub t_before: usize,
    pub t_after: usize,
    pub bound_spr: usize,
    pub bound_fk_r: Option<usize>,
    pub bound_fk_n: Option<f64>,
    pub violated: bool,
}

impl TrialRecord {
    pub fn delta(&self) -> usize {
        self.t_before.abs_diff(self.t_after)
    }
}

/// Collected trials plus the seed that generated them.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

impl StabilityReport {
    pub fn max_delta(&self) -> usize {
        self.records.iter().map(TrialRecord::delta).max().unwrap_or(0)
    }

    pub fn any_violated(&self) -> bool {
        self.records.iter().any(|r| r.violated)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("trial,k,d_rspr,t_before,t_after,bound_spr,bound_fk_r,bound_fk_n,violated\n");
        for r in &self.records {
            let d = r.d_rspr.map(|d| d.to_string()).unwrap_or_default();
            let fr = r.bound_fk_r.map(|b| b.to_string()).unwrap_or_default();
            let fnb = r.bound_fk_n.map(|b| format!("{b:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.trial, r.k, d, r.t_before, r.t_after, r.bound_spr, fr, fnb, r.violated
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            max_delta: usize,
            n_trials: usize,
            seed: u64,
        }
        serde_json::to_string_pretty(&Summary {
            max_delta: self.max_delta(),
            n_trials: self.records.len(),
            seed: self.seed,
        })
        .expect("summary serializes")
    }

    pub fn merge(mut self, other: StabilityReport) -> StabilityReport {
        self.records.extend(other.records);
        self
    }
}

fn floor_fk_r_bound(r: usize, n: usize) -> usize {
    if r <= 1 {
        return 0;
    }
    (r - 1) * (n - r) / r
}

/// Applies `k` random SPR moves to the gene tree and compares the change in
/// the optimal contact count against the edit bound, the exact rSPR
/// distance when the tree is small, and the two parsimony-distance bounds.
/// Bound violations abort: the bounds are theorems.
pub fn perturb_gene_experiment(
    triple: &ForestTriple,
    k: usize,
    seed: u64,
) -> Result<StabilityReport, PerturbError> {
    if !triple.gene.is_binary() {
        return Err(PerturbError::NotBinary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gene2 = triple.gene.clone();
    for _ in 0..k {
        let moves = valid_moves(&gene2);
        let mv = moves
            .choose(&mut rng)
            .ok_or(PerturbError::NoValidMove)?;
        gene2 = apply_spr(&gene2, mv)?;
    }
    let phi_labels = triple.phi_labels();
    let triple2 = ForestTriple::new(gene2.clone(), triple.forest.clone(), &phi_labels)?;

    let character = character_of(triple);
    let t_before = parsimony_score(&triple.gene, &character);
    let t_after = parsimony_score(&triple2.gene, &character_of(&triple2));

    let n = triple.gene.leaves().len();
    let r = character.arity();
    let d_rspr = if n <= 8 && k > 0 {
        let d = rspr_distance(&triple.gene, &gene2, k)?;
        assert!(d <= k, "edit distance exceeds the number of edits");
        Some(d)
    } else {
        None
    };
    let bound_spr = d_rspr.unwrap_or(k);
    let bound_fk_r = floor_fk_r_bound(r, n);
    let bound_fk_n = n as f64 - 2.0 * (n as f64).sqrt() + 1.0;

    let delta = t_before.abs_diff(t_after);
    let violated =
        delta > bound_spr || delta > bound_fk_r || (delta as f64) > bound_fk_n + 1e-9;
    assert!(
        !violated,
        "stability bound violated: delta {delta}, k {k}, d {d_rspr:?}, fk_r {bound_fk_r}, fk_n {bound_fk_n}"
    );
    Ok(StabilityReport {
        seed,
        records: vec![TrialRecord {
            trial: 0,
            k,
            d_rspr,
            t_before,
            t_after,
            bound_spr,
            bound_fk_r: Some(bound_fk_r),
            bound_fk_n: Some(bound_fk_n),
            violated,
        }],
    })
}

/// Applies one random forest SPR (moving a subtree between trees) and
/// compares the score change against the count of gene leaves mapped into
/// the moved subtree.
pub fn perturb_forest_experiment(
    triple: &ForestTriple,
    seed: u64,
) -> Result<StabilityReport, PerturbError> {
    if triple.forest.len() < 2 {
        return Err(PerturbError::BadParams(
            "forest move needs at least two trees".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Candidate moves: any non-root subtree whose removal keeps the source
    // phylogenetic, any other tree as target, any graft position.
    let mut candidates = Vec::new();
    for (si, src) in triple.forest.trees().iter().enumerate() {
        for v in src.node_ids() {
            if v == src.root() {
                continue;
            }
            let moved = src.cluster(v).expect("vertex in tree").len();
            if src.leaves().len() - moved < 2 {
                continue;
            }
            for ti in 0..triple.forest.len() {
                if ti == si {
                    continue;
                }
                for (x, y) in triple.forest.tree(ti).arcs() {
                    candidates.push((si, v, ti, GraftTarget::Arc(x, y)));
                }
                candidates.push((si, v, ti, GraftTarget::AboveRoot));
            }
        }
    }
    let &(si, t0, ti, graft) = candidates
        .choose(&mut rng)
        .ok_or(PerturbError::NoValidMove)?;

    let moved_labels: BTreeSet<String> = triple
        .forest
        .tree(si)
        .cluster(t0)
        .expect("subtree root")
        .into_iter()
        .map(|l| triple.forest.tree(si).label(l).unwrap().to_string())
        .collect();
    let bound = triple
        .phi_map()
        .values()
        .filter(|img| {
            triple
                .forest
                .label_of(**img)
                .map(|l| moved_labels.contains(l))
                .unwrap_or(false)
        })
        .count();

    let forest2 = forest_spr(&triple.forest, si, t0, ti, graft)?;
    let phi_labels = triple.phi_labels();
    let triple2 = ForestTriple::new(triple.gene.clone(), forest2, &phi_labels)?;

    let t_before = parsimony_score(&triple.gene, &character_of(triple));
    let t_after = parsimony_score(&triple2.gene, &character_of(&triple2));
    let delta = t_before.abs_diff(t_after);
    let violated = delta > bound;
    assert!(!violated, "forest move bound violated: delta {delta} > {bound}");
    Ok(StabilityReport {
        seed,
        records: vec![TrialRecord {
            trial: 0,
            k: 1,
            d_rspr: None,
            t_before,
            t_after,
            bound_spr: bound,
            bound_fk_r: None,
            bound_fk_n: None,
            violated,
        }],
    })
}

/// Samples a character differing from `f` on exactly `k` leaves and checks
/// that the parsimony score moves by at most `k`.
pub fn character_change_check(
    tree: &PhyloTree,
    f: &Character,
    k: usize,
    seed: u64,
) -> Result<bool, PerturbError> {
    let leaves = tree.leaves();
    if k > leaves.len() {
        return Err(PerturbError::BadParams(format!(
            "k {k} exceeds leaf count {}",
            leaves.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = f
        .states()
        .values()
        .copied()
        .max()
        .map(|m| (m + 1).max(2))
        .unwrap_or(2);
    let mut chosen = leaves;
    chosen.shuffle(&mut rng);
    chosen.truncate(k);
    let mut states = f.states().clone();
    for leaf in chosen {
        let old = states[&leaf];
        let mut new = rng.gen_range(0..n_states);
        if new == old {
            new = (new + 1) % n_states;
        }
        states.insert(leaf, new);
    }
    let f2 = Character::new(states);
    let before = parsimony_score(tree, f);
    let after = parsimony_score(tree, &f2);
    Ok(before.abs_diff(after) <= k)
}

/// Parameters for [`random_triple`].
#[derive(Clone, Copy, Debug)]
pub struct TripleParams {
    pub n_gene_leaves: usize,
    pub n_trees: usize,
    pub leaves_per_tree: usize,
    pub binary: bool,
}

fn random_binary_tree(labels: &[String], rng: &mut ChaCha8Rng) -> PhyloTree {
    assert!(labels.len() >= 2);
    let mut draft = TreeDraft::new();
    let mut parts: Vec<NodeId> = labels
        .iter()
        .map(|l| draft.add_node(Some(l.clone())))
        .collect();
    while parts.len() > 1 {
        let i = rng.gen_range(0..parts.len());
        let a = parts.swap_remove(i);
        let j = rng.gen_range(0..parts.len());
        let b = parts.swap_remove(j);
        let p = draft.add_node(None);
        draft.attach(p, a);
        draft.attach(p, b);
        parts.push(p);
    }
    let (tree, _) = draft.finish().expect("random merge yields a valid tree");
    tree
}

fn contract_random_arcs(tree: &PhyloTree, rng: &mut ChaCha8Rng) -> PhyloTree {
    let mut draft = tree.draft();
    for v in tree.node_ids() {
        if v == tree.root() || tree.is_leaf(v) || !draft.alive[v.index()] {
            continue;
        }
        if rng.gen_bool(0.25) {
            // Merge v into its parent.
            let p = draft.parent[v.index()].unwrap();
            let children = std::mem::take(&mut draft.children[v.index()]);
            draft.children[p.index()].retain(|&c| c != v);
            for c in children {
                draft.parent[c.index()] = None;
                draft.attach(p, c);
            }
            draft.alive[v.index()] = false;
        }
    }
    let (out, _) = draft.finish().expect("contraction keeps the tree valid");
    out
}

/// Seeded random forest triple: uniform merge topologies, uniform leaf map.
pub fn random_triple(params: &TripleParams, seed: u64) -> Result<ForestTriple, PerturbError> {
    if params.n_gene_leaves < 2 {
        return Err(PerturbError::BadParams(
            "gene tree needs at least 2 leaves".to_string(),
        ));
    }
    if params.n_trees < 1 || params.leaves_per_tree < 2 {
        return Err(PerturbError::BadParams(
            "each tree needs at least 2 leaves".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gene_labels: Vec<String> = (1..=params.n_gene_leaves).map(|i| format!("g{i}")).collect();
    let mut gene = random_binary_tree(&gene_labels, &mut rng);
    let mut trees = Vec::new();
    let mut species_labels = Vec::new();
    for t in 1..=params.n_trees {
        let labels: Vec<String> = (1..=params.leaves_per_tree)
            .map(|i| format!("s{t}_{i}"))
            .collect();
        species_labels.extend(labels.clone());
        let mut tree = random_binary_tree(&labels, &mut rng);
        if !params.binary {
            tree = contract_random_arcs(&tree, &mut rng);
        }
        trees.push(tree);
    }
    if !params.binary {
        gene = contract_random_arcs(&gene, &mut rng);
    }
    let forest = Forest::new(trees)?;
    let mut phi = BTreeMap::new();
    for g in &gene_labels {
        let s = species_labels
            .get(rng.gen_range(0..species_labels.len()))
            .unwrap()
            .clone();
        phi.insert(g.clone(), s);
    }
    Ok(ForestTriple::new(gene, forest, &phi)?)
}

/// Every rooted binary tree on the given leaf labels, built by leaf
/// insertion. Counts follow the double factorial (2n-3)!!.
pub fn all_binary_trees(labels: &[&str]) -> Vec<PhyloTree> {
    assert!(labels.len() >= 2);
    let base = {
        let mut d = TreeDraft::new();
        let r = d.add_node(None);
        let a = d.add_node(Some(labels[0].to_string()));
        let b = d.add_node(Some(labels[1].to_string()));
        d.attach(r, a);
        d.attach(r, b);
        d.finish().unwrap().0
    };
    let mut trees = vec![base];
    for label in &labels[2..] {
        let mut next = Vec::new();
        for t in &trees {
            for (x, y) in t.arcs() {
                let mut d = t.draft();
                let z = d.add_node(None);
                let leaf = d.add_node(Some(label.to_string()));
                d.detach(y);
                d.attach(x, z);
                d.attach(z, y);
                d.attach(z, leaf);
                next.push(d.finish().unwrap().0);
            }
            // Above the root.
            let mut d = t.draft();
            let z = d.add_node(None);
            let leaf = d.add_node(Some(label.to_string()));
            d.attach(z, t.root());
            d.attach(z, leaf);
            next.push(d.finish().unwrap().0);
        }
        trees = next;
    }
    trees
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newick::{parse_forest, parse_leaf_map, parse_tree};

    fn triple(gene: &str, forest: &str, map: &str) -> ForestTriple {
        let g = parse_tree(gene).unwrap();
        let f = parse_forest(forest).unwrap();
        let phi = parse_leaf_map(map, &g, &f).unwrap();
        ForestTriple::new(g, f, &phi).unwrap()
    }

    #[test]
    fn identity_regraft_gives_isomorphic_tree() {
        let t = parse_tree("((a,b),(c,d));").unwrap();
        let a = t.node_by_label("a").unwrap();
        let w = t.parent(a).unwrap();
        // Cut leaf a; its sibling b replaces w; regraft onto the arc
        // (root, b) restores the shape.
        let b = t.node_by_label("b").unwrap();
        let mv = SprMove {
            cut_arc: (w, a),
            graft: GraftTarget::Arc(t.root(), b),
        };
        let t2 = apply_spr(&t, &mv).unwrap();
        assert!(t2.isomorphic(&t));
    }

    #[test]
    fn three_leaf_rotation() {
        let t = parse_tree("((a,b),c);").unwrap();
        let want = parse_tree("((a,c),b);").unwrap();
        let found = valid_moves(&t)
            .iter()
            .filter_map(|mv| apply_spr(&t, mv).ok())
            .any(|t2| t2.isomorphic(&want));
        assert!(found);
    }

    #[test]
    fn moves_preserve_leaf_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<String> = (0..8).map(|i| format!("l{i}")).collect();
        for _ in 0..40 {
            let t = random_binary_tree(&labels, &mut rng);
            let moves = valid_moves(&t);
            for _ in 0..25 {
                let mv = moves[rng.gen_range(0..moves.len())];
                let t2 = apply_spr(&t, &mv).unwrap();
                assert!(t2.is_binary());
                let la: BTreeSet<&str> = t.leaf_labels().collect();
                let lb: BTreeSet<&str> = t2.leaf_labels().collect();
                assert_eq!(la, lb);
            }
        }
    }

    #[test]
    fn distance_to_self_is_zero() {
        let t = parse_tree("((a,b),(c,d));").unwrap();
        assert_eq!(rspr_distance(&t, &t, 4).unwrap(), 0);
    }

    #[test]
    fn one_move_is_at_most_distance_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
        for _ in 0..20 {
            let t = random_binary_tree(&labels, &mut rng);
            let moves = valid_moves(&t);
            let mv = moves[rng.gen_range(0..moves.len())];
            let t2 = apply_spr(&t, &mv).unwrap();
            let d = rspr_distance(&t, &t2, 2).unwrap();
            assert!(d <= 1);
            if !t.isomorphic(&t2) {
                assert_eq!(d, 1);
            }
        }
    }

    #[test]
    fn distance_is_symmetric_on_small_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
        for _ in 0..10 {
            let t1 = random_binary_tree(&labels, &mut rng);
            let t2 = random_binary_tree(&labels, &mut rng);
            let d12 = rspr_distance(&t1, &t2, 6).unwrap();
            let d21 = rspr_distance(&t2, &t1, 6).unwrap();
            assert_eq!(d12, d21);
        }
    }

    #[test]
    fn forest_move_repartitions_leaves() {
        let f = parse_forest("((A,B),(C,D));\n(E,F);").unwrap();
        let t0 = {
            let src = f.tree(0);
            src.parent(src.node_by_label("A").unwrap()).unwrap()
        };
        let f2 = forest_spr(&f, 0, t0, 1, GraftTarget::AboveRoot).unwrap();
        let before: BTreeSet<&str> = f.leaf_labels().into_iter().collect();
        let after: BTreeSet<&str> = f2.leaf_labels().into_iter().collect();
        assert_eq!(before, after);
        assert_eq!(f2.tree(0).leaves().len(), 2);
        assert_eq!(f2.tree(1).leaves().len(), 4);
    }

    #[test]
    fn moving_whole_tree_is_rejected() {
        let f = parse_forest("(A,B);\n(C,D);").unwrap();
        let root = f.tree(0).root();
        assert!(matches!(
            forest_spr(&f, 0, root, 1, GraftTarget::AboveRoot),
            Err(PerturbError::MalformedMove(_))
        ));
    }

    #[test]
    fn degenerating_source_is_rejected() {
        let f = parse_forest("(A,B);\n(C,D);").unwrap();
        let a = f.tree(0).node_by_label("A").unwrap();
        assert!(forest_spr(&f, 0, a, 1, GraftTarget::AboveRoot).is_err());
    }

    #[test]
    fn zero_moves_mean_zero_delta() {
        let t = triple(
            "((g1,g2),(g3,g4));",
            "(A,B);\n(C,D);",
            "g1\tA\ng2\tB\ng3\tC\ng4\tD\n",
        );
        let report = perturb_gene_experiment(&t, 0, 42).unwrap();
        assert_eq!(report.records[0].delta(), 0);
    }

    #[test]
    fn gene_trials_respect_bounds() {
        for seed in 0..30 {
            let params = TripleParams {
                n_gene_leaves: 6,
                n_trees: 2,
                leaves_per_tree: 3,
                binary: true,
            };
            let t = random_triple(&params, seed).unwrap();
            let report = perturb_gene_experiment(&t, 2, seed ^ 0x5eed).unwrap();
            assert!(!report.any_violated());
        }
    }

    #[test]
    fn within_tree_species_move_does_not_change_score() {
        // Rearranging inside one species tree keeps the character intact.
        let t = triple(
            "((g1,g2),(g3,g4));",
            "((A,B),(C,D));\n(E,F);",
            "g1\tA\ng2\tB\ng3\tC\ng4\tD\n",
        );
        let src = t.forest.tree(0);
        let a = src.node_by_label("A").unwrap();
        let c = src.node_by_label("C").unwrap();
        let mv = SprMove {
            cut_arc: (src.parent(a).unwrap(), a),
            graft: GraftTarget::Arc(src.parent(c).unwrap(), c),
        };
        let new_t0 = apply_spr(src, &mv).unwrap();
        let forest2 = Forest::new(vec![new_t0, t.forest.tree(1).clone()]).unwrap();
        let t2 = ForestTriple::new(t.gene.clone(), forest2, &t.phi_labels()).unwrap();
        let before = parsimony_score(&t.gene, &character_of(&t));
        let after = parsimony_score(&t2.gene, &character_of(&t2));
        assert_eq!(before, after);
    }

    #[test]
    fn forest_trials_respect_bound() {
        for seed in 0..20 {
            let params = TripleParams {
                n_gene_leaves: 6,
                n_trees: 2,
                leaves_per_tree: 4,
                binary: true,
            };
            let t = random_triple(&params, seed).unwrap();
            let report = perturb_forest_experiment(&t, seed ^ 0xf0f0).unwrap();
            assert!(!report.any_violated());
        }
    }

    #[test]
    fn unmapped_subtree_move_keeps_score() {
        let t = triple(
            "(g1,g2);",
            "((A,B),(C,D));\n(E,F);",
            "g1\tA\ng2\tB\n",
        );
        // Move the (C,D) cherry, which carries no gene images.
        let src = t.forest.tree(0);
        let cd = src.parent(src.node_by_label("C").unwrap()).unwrap();
        let forest2 = forest_spr(&t.forest, 0, cd, 1, GraftTarget::AboveRoot).unwrap();
        let t2 = ForestTriple::new(t.gene.clone(), forest2, &t.phi_labels()).unwrap();
        assert_eq!(
            parsimony_score(&t.gene, &character_of(&t)),
            parsimony_score(&t2.gene, &character_of(&t2))
        );
    }

    #[test]
    fn character_change_bound_holds() {
        let t = parse_tree("((l1,l2),((l3,l4),(l5,l6)));").unwrap();
        let mut states = BTreeMap::new();
        for (i, leaf) in t.leaves().into_iter().enumerate() {
            states.insert(leaf, i % 2);
        }
        let f = Character::new(states);
        for k in 1..=6 {
            for seed in 0..10 {
                assert!(character_change_check(&t, &f, k, seed).unwrap());
            }
        }
    }

    #[test]
    fn full_character_rewrite_can_zero_the_score() {
        let t = parse_tree("((l1,l2),(l3,l4));").unwrap();
        let mut states = BTreeMap::new();
        for (i, leaf) in t.leaves().into_iter().enumerate() {
            states.insert(leaf, i % 2);
        }
        let f = Character::new(states.clone());
        let constant = Character::new(states.keys().map(|&l| (l, 0)).collect());
        let before = parsimony_score(&t, &f);
        assert!(before > 0);
        assert_eq!(parsimony_score(&t, &constant), 0);
        assert!(before <= t.leaves().len());
    }

    #[test]
    fn generator_is_deterministic() {
        let params = TripleParams {
            n_gene_leaves: 7,
            n_trees: 3,
            leaves_per_tree: 3,
            binary: true,
        };
        let a = random_triple(&params, 7).unwrap();
        let b = random_triple(&params, 7).unwrap();
        assert!(a.gene.isomorphic(&b.gene));
        assert_eq!(a.phi_labels(), b.phi_labels());
    }

    #[test]
    fn single_tree_generator_scores_zero() {
        let params = TripleParams {
            n_gene_leaves: 5,
            n_trees: 1,
            leaves_per_tree: 4,
            binary: true,
        };
        let t = random_triple(&params, 3).unwrap();
        assert_eq!(parsimony_score(&t.gene, &character_of(&t)), 0);
    }

    #[test]
    fn enumeration_counts_match_double_factorial() {
        assert_eq!(all_binary_trees(&["a", "b"]).len(), 1);
        assert_eq!(all_binary_trees(&["a", "b", "c"]).len(), 3);
        assert_eq!(all_binary_trees(&["a", "b", "c", "d"]).len(), 15);
        assert_eq!(all_binary_trees(&["a", "b", "c", "d", "e"]).len(), 105);
    }
}
