//! Network-side operations: building the representation of an overlay,
//! connectivity, walks of gene paths, trail normalization, the structural
//! validity check with its unfolding construction, binary resolution, and
//! cycle classification.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::builder::OsfMap;
use crate::model::{
    ArcPartition, Forest, ForestNode, ForestTriple, Network, NodeId, PhyloTree, TreeDraft,
};
use crate::verify::{check_osf, introgression_set_of, is_strict_osf, VerifyError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("overlay map fails the OSF axioms")]
    InvalidOsf,
    #[error("map error: {0}")]
    Verify(#[from] VerifyError),
    #[error("{0:?} is not a directed path in the gene tree")]
    NotAPath(Vec<NodeId>),
    #[error("vertex {0} out of range")]
    UnknownVertex(NodeId),
    #[error("arc index {0} out of range")]
    UnknownArc(usize),
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("condition (V1) fails: {0}")]
    V1(String),
    #[error("condition (V2) fails for arc {0}: no admissible trail found")]
    V2(usize),
    #[error("vertex {0} cannot anchor an unfolding (labelled leaf with no admissible extension)")]
    RhoNotViable(NodeId),
    #[error("unfolding produced a non-phylogenetic tree: {0}")]
    UnfoldStructure(String),
    #[error("trail normalization failed to terminate (internal invariant broken)")]
    NormalizeDiverged,
    #[error("structure error: {0}")]
    Model(#[from] crate::model::ModelError),
}

/// A network together with the node correspondence to the forest it
/// represents.
#[derive(Clone, Debug)]
pub struct Representation {
    pub network: Network,
    node_ids: Vec<Vec<NodeId>>,
    forest_nodes: Vec<ForestNode>,
}

impl Representation {
    pub fn network_node(&self, v: ForestNode) -> NodeId {
        self.node_ids[v.tree][v.node.index()]
    }

    pub fn forest_node(&self, v: NodeId) -> ForestNode {
        self.forest_nodes[v.index()]
    }
}

/// Builds N(psi): vertex set V(F), arcs A(F) together with the contact-arc
/// set, designated leaves L(F).
pub fn build_network(triple: &ForestTriple, psi: &OsfMap) -> Result<Representation, NetworkError> {
    if !check_osf(triple, psi)?.all_pass() {
        return Err(NetworkError::InvalidOsf);
    }
    Ok(representation_unchecked(triple, psi))
}

pub(crate) fn representation_unchecked(triple: &ForestTriple, psi: &OsfMap) -> Representation {
    let mut node_ids: Vec<Vec<NodeId>> = Vec::with_capacity(triple.forest.len());
    let mut forest_nodes = Vec::new();
    let mut next = 0usize;
    for (ti, tree) in triple.forest.trees().iter().enumerate() {
        let mut ids = Vec::with_capacity(tree.len());
        for n in tree.node_ids() {
            ids.push(NodeId(next));
            forest_nodes.push(ForestNode::new(ti, n));
            next += 1;
        }
        node_ids.push(ids);
    }

    let mut arcs = Vec::new();
    let mut forest_idx = Vec::new();
    for (ti, tree) in triple.forest.trees().iter().enumerate() {
        for (u, v) in tree.arcs() {
            forest_idx.push(arcs.len());
            arcs.push((node_ids[ti][u.index()], node_ids[ti][v.index()]));
        }
    }
    let mut contact_idx = Vec::new();
    for (a, b) in psi.contact_set() {
        contact_idx.push(arcs.len());
        arcs.push((
            node_ids[a.tree][a.node.index()],
            node_ids[b.tree][b.node.index()],
        ));
    }

    let mut leaves = BTreeMap::new();
    for (ti, tree) in triple.forest.trees().iter().enumerate() {
        for leaf in tree.leaves() {
            leaves.insert(
                node_ids[ti][leaf.index()],
                tree.label(leaf).unwrap().to_string(),
            );
        }
    }

    let network = Network::new(
        next,
        arcs,
        leaves,
        Some(ArcPartition {
            forest: forest_idx,
            contact: contact_idx,
        }),
    )
    .expect("representation arcs are in range by construction");
    Representation {
        network,
        node_ids,
        forest_nodes,
    }
}

/// Connectivity of N(psi) versus coverage of every forest tree by the leaf
/// map image. The two are equivalent; the function asserts it.
#[derive(Clone, Copy, Debug)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub covers_all_trees: bool,
}

pub fn connectivity_check(
    triple: &ForestTriple,
    psi: &OsfMap,
) -> Result<ConnectivityReport, NetworkError> {
    let rep = build_network(triple, psi)?;
    let net = &rep.network;
    let mut dsu: Vec<usize> = (0..net.num_nodes()).collect();
    fn find(dsu: &mut Vec<usize>, v: usize) -> usize {
        if dsu[v] != v {
            let r = find(dsu, dsu[v]);
            dsu[v] = r;
        }
        dsu[v]
    }
    for &(t, h) in net.arcs() {
        let a = find(&mut dsu, t.index());
        let b = find(&mut dsu, h.index());
        if a != b {
            dsu[a] = b;
        }
    }
    let roots: BTreeSet<usize> = (0..net.num_nodes()).map(|v| find(&mut dsu, v)).collect();
    let connected = roots.len() <= 1;

    let covered: BTreeSet<usize> = triple.phi_map().values().map(|img| img.tree).collect();
    let covers_all_trees = covered.len() == triple.forest.len();

    assert_eq!(
        connected, covers_all_trees,
        "connectivity must coincide with image coverage"
    );
    Ok(ConnectivityReport {
        connected,
        covers_all_trees,
    })
}

/// The walk in N(psi) induced by a directed gene-tree path: contact arcs are
/// taken directly, same-tree hops are spliced with the unique downward tree
/// path, consecutive repeats suppressed. Returns forest-node addresses.
pub fn walk_of_path(
    triple: &ForestTriple,
    psi: &OsfMap,
    gamma: &[NodeId],
) -> Result<Vec<ForestNode>, NetworkError> {
    if gamma.is_empty() {
        return Err(NetworkError::NotAPath(gamma.to_vec()));
    }
    for win in gamma.windows(2) {
        if !triple.gene.has_arc(win[0], win[1]) {
            return Err(NetworkError::NotAPath(gamma.to_vec()));
        }
    }
    let mut walk = vec![psi.image(gamma[0])];
    for win in gamma.windows(2) {
        let a = psi.image(win[0]);
        let b = psi.image(win[1]);
        if a.tree != b.tree {
            walk.push(b);
            continue;
        }
        if a.node == b.node {
            continue;
        }
        let tree = triple.forest.tree(a.tree);
        // Downward path from a.node to b.node, exclusive of a.node.
        let mut seg = Vec::new();
        let mut cur = Some(b.node);
        loop {
            let v = cur.ok_or(NetworkError::InvalidOsf)?;
            if v == a.node {
                break;
            }
            seg.push(ForestNode::new(a.tree, v));
            cur = tree.parent(v);
        }
        seg.reverse();
        walk.extend(seg);
    }
    Ok(walk)
}

/// True iff the walk crosses some arc more than once.
pub fn walk_has_repeated_arc(walk: &[ForestNode]) -> bool {
    let mut seen = BTreeSet::new();
    walk.windows(2).any(|w| !seen.insert((w[0], w[1])))
}

/// One rewiring event during trail normalization.
#[derive(Clone, Debug, Serialize)]
pub struct RewireStep {
    pub pair: ((usize, usize), (usize, usize)),
    pub usage_before: usize,
    pub usage_after: usize,
}

/// Outcome metadata for [`trail_normalize`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrailReport {
    pub augmented_leaves: usize,
    pub steps: Vec<RewireStep>,
}

struct NormalizeState {
    draft: TreeDraft,
    images: Vec<ForestNode>,
    phi_labels: BTreeMap<String, String>,
}

impl NormalizeState {
    fn leaf_ids(&self) -> Vec<NodeId> {
        (0..self.draft.parent.len())
            .map(NodeId)
            .filter(|&v| self.draft.alive[v.index()] && self.draft.children[v.index()].is_empty())
            .collect()
    }

    fn path_from_root(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut path = Vec::new();
        let mut cur = Some(leaf);
        while let Some(v) = cur {
            path.push(v);
            cur = self.draft.parent[v.index()];
        }
        path.reverse();
        path
    }

    fn contact_usage(&self, pair: (ForestNode, ForestNode)) -> usize {
        let mut count = 0;
        for v in 0..self.draft.parent.len() {
            if !self.draft.alive[v] {
                continue;
            }
            for &c in &self.draft.children[v] {
                let a = self.images[v];
                let b = self.images[c.index()];
                if a.tree != b.tree && (a, b) == pair {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Rebuilds the triple so every gene path maps onto a trail of the (same,
/// up to isomorphism) network. First each vertex with an interior image is
/// anchored by fresh pendant leaves; then, while some root-leaf walk repeats
/// a contact arc, the later of two closest same-image crossing arcs is
/// rerouted to the head of the earlier one.
pub fn trail_normalize(
    triple: &ForestTriple,
    psi: &OsfMap,
) -> Result<(ForestTriple, OsfMap, TrailReport), NetworkError> {
    if !check_osf(triple, psi)?.all_pass() {
        return Err(NetworkError::InvalidOsf);
    }
    let gene = &triple.gene;
    let mut report = TrailReport::default();

    let mut state = NormalizeState {
        draft: gene.draft(),
        images: psi.images().to_vec(),
        phi_labels: gene
            .leaves()
            .into_iter()
            .map(|l| {
                (
                    gene.label(l).unwrap().to_string(),
                    triple.forest.label_of(triple.phi(l)).unwrap().to_string(),
                )
            })
            .collect(),
    };

    // Leaf augmentation: anchor every interior image with pendant leaves,
    // one per species leaf below the image, all mapped to the least
    // qualifying witness leaf.
    let mut fresh = 0usize;
    let existing: BTreeSet<String> = gene.leaf_labels().map(str::to_string).collect();
    let mut fresh_label = || {
        loop {
            fresh += 1;
            let cand = format!("x{fresh}");
            if !existing.contains(&cand) {
                return cand;
            }
        }
    };
    for v in gene.node_ids() {
        if gene.is_leaf(v) {
            continue;
        }
        let img = psi.image(v);
        let tree = triple.forest.tree(img.tree);
        if tree.is_leaf(img.node) {
            continue;
        }
        let witness = gene
            .cluster(v)
            .expect("gene vertex")
            .into_iter()
            .filter(|&l| {
                let t = triple.phi(l);
                t.tree == img.tree && tree.is_ancestor(img.node, t.node).unwrap()
            })
            .map(|l| gene.label(l).unwrap().to_string())
            .min()
            .expect("(P3) guarantees a qualifying leaf");
        let witness_species = state.phi_labels[&witness].clone();
        let witness_img = triple.phi(gene.node_by_label(&witness).unwrap());
        for _ in tree.cluster(img.node).expect("image node") {
            let label = fresh_label();
            let leaf = state.draft.add_node(Some(label.clone()));
            state.draft.attach(v, leaf);
            state.images.push(witness_img);
            state.phi_labels.insert(label, witness_species.clone());
            report.augmented_leaves += 1;
        }
    }

    // Rewiring loop. Total contact usage strictly decreases per step.
    let budget = psi.contact_count() + 1;
    let mut steps = 0usize;
    'outer: loop {
        if steps > budget {
            return Err(NetworkError::NormalizeDiverged);
        }
        for leaf in state.leaf_ids() {
            let path = state.path_from_root(leaf);
            // Positions of crossing arcs along the path, with their images.
            let crossings: Vec<(usize, (ForestNode, ForestNode))> = path
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    let a = state.images[w[0].index()];
                    let b = state.images[w[1].index()];
                    (a.tree != b.tree).then_some((i, (a, b)))
                })
                .collect();
            // Closest repetition of the same image pair.
            let mut best: Option<(usize, usize, (ForestNode, ForestNode))> = None;
            for (xi, &(i, pa)) in crossings.iter().enumerate() {
                for &(j, pb) in crossings.iter().skip(xi + 1) {
                    if pa == pb {
                        let better = match best {
                            None => true,
                            Some((bi, bj, _)) => (j - i, i) < (bj - bi, bi),
                        };
                        if better {
                            best = Some((i, j, pa));
                        }
                        break;
                    }
                }
            }
            let Some((i, j, pair)) = best else { continue };

            let usage_before = state.contact_usage(pair);
            let v2 = path[i + 1];
            let vk = path[j];
            let vk1 = path[j + 1];
            state.draft.detach(vk1);
            if state.draft.children[vk1.index()].is_empty() {
                state.draft.attach(v2, vk1);
            } else {
                let orphans = std::mem::take(&mut state.draft.children[vk1.index()]);
                for u in orphans {
                    state.draft.parent[u.index()] = None;
                    state.draft.attach(v2, u);
                }
                state.draft.alive[vk1.index()] = false;
            }
            // Only vk can go unary here.
            if state.draft.alive[vk.index()]
                && state.draft.children[vk.index()].len() == 1
                && state.draft.parent[vk.index()].is_some()
            {
                let p = state.draft.parent[vk.index()].unwrap();
                let c = state.draft.children[vk.index()][0];
                let slot = state.draft.children[p.index()]
                    .iter()
                    .position(|&x| x == vk)
                    .unwrap();
                state.draft.children[p.index()][slot] = c;
                state.draft.parent[c.index()] = Some(p);
                state.draft.alive[vk.index()] = false;
            }
            let usage_after = state.contact_usage(pair);
            report.steps.push(RewireStep {
                pair: (
                    (pair.0.tree, pair.0.node.index()),
                    (pair.1.tree, pair.1.node.index()),
                ),
                usage_before,
                usage_after,
            });
            steps += 1;
            continue 'outer;
        }
        break;
    }

    let (gene2, remap) = state.draft.finish()?;
    let triple2 = ForestTriple::new(gene2, triple.forest.clone(), &state.phi_labels)?;
    let mut images2 = vec![ForestNode::new(0, NodeId(0)); triple2.gene.len()];
    for (old, new) in remap.iter().enumerate() {
        if let Some(new_id) = new {
            images2[new_id.index()] = state.images[old];
        }
    }
    let psi2 = OsfMap::from_images(&triple2, images2);
    Ok((triple2, psi2, report))
}

/// Certificate that a network satisfies the structural validity conditions
/// for a given anchor vertex and arc subset.
#[derive(Clone, Debug, Serialize)]
pub struct ValidityWitness {
    pub rho: NodeId,
    /// Indices into the network's arc list.
    pub arcs: Vec<usize>,
    /// One certifying trail (vertex sequence from rho) per arc, same order.
    pub trails: Vec<Vec<NodeId>>,
}

/// Internal view of N - A as a forest with parent pointers.
struct ForestView {
    comp: Vec<usize>,
    n_comps: usize,
    parent: Vec<Option<NodeId>>,
}

impl ForestView {
    /// Reflexive ancestor test within a component.
    fn below(&self, anc: NodeId, v: NodeId) -> bool {
        let mut cur = Some(v);
        while let Some(w) = cur {
            if w == anc {
                return true;
            }
            cur = self.parent[w.index()];
        }
        false
    }
}

fn forest_view(net: &Network, a_set: &BTreeSet<usize>) -> Result<ForestView, NetworkError> {
    let n = net.num_nodes();
    let mut parent: Vec<Option<NodeId>> = vec![None; n];
    let mut outdeg = vec![0usize; n];
    for (i, &(t, h)) in net.arcs().iter().enumerate() {
        if a_set.contains(&i) {
            continue;
        }
        if parent[h.index()].is_some() {
            return Err(NetworkError::V1(format!(
                "vertex {h} has two incoming forest arcs"
            )));
        }
        parent[h.index()] = Some(t);
        outdeg[t.index()] += 1;
    }
    // Component per node by walking to the root; loop guard against cycles.
    let mut comp = vec![usize::MAX; n];
    let mut roots: BTreeMap<NodeId, usize> = BTreeMap::new();
    for v in 0..n {
        let mut cur = NodeId(v);
        let mut hops = 0usize;
        while let Some(p) = parent[cur.index()] {
            cur = p;
            hops += 1;
            if hops > n {
                return Err(NetworkError::V1("forest arcs contain a cycle".to_string()));
            }
        }
        let next = roots.len();
        comp[v] = *roots.entry(cur).or_insert(next);
    }
    let n_comps = roots.len();

    // Each component must be a phylogenetic tree with leaves exactly in X.
    for (&root, _) in &roots {
        if outdeg[root.index()] < 2 {
            return Err(NetworkError::V1(format!(
                "component root {root} has outdegree {}",
                outdeg[root.index()]
            )));
        }
    }
    let mut leaf_count = vec![0usize; n_comps];
    for v in 0..n {
        let id = NodeId(v);
        let is_leaf_of_forest = outdeg[v] == 0;
        let in_x = net.leaves().contains_key(&id);
        if is_leaf_of_forest != in_x {
            return Err(NetworkError::V1(format!(
                "leaf set mismatch at vertex {id} (forest leaf: {is_leaf_of_forest}, labelled: {in_x})"
            )));
        }
        if is_leaf_of_forest {
            leaf_count[comp[v]] += 1;
        }
        if parent[v].is_some() && outdeg[v] == 1 {
            return Err(NetworkError::V1(format!("vertex {id} is unary in the forest")));
        }
    }
    if leaf_count.iter().any(|&c| c < 2) {
        return Err(NetworkError::V1(
            "every component needs at least two leaves".to_string(),
        ));
    }
    if n_comps < 2 {
        return Err(NetworkError::V1("need at least two trees".to_string()));
    }
    for &i in a_set {
        let (t, h) = net.arcs()[i];
        if comp[t.index()] == comp[h.index()] {
            return Err(NetworkError::V1(format!(
                "arc {i} has both ends in one tree"
            )));
        }
    }
    Ok(ForestView {
        comp,
        n_comps,
        parent,
    })
}

/// Admissible one-arc extensions of a trail: unused arcs leaving `end` whose
/// head sits below every already-visited vertex of its own tree.
fn admissible_extensions(
    net: &Network,
    view: &ForestView,
    end: NodeId,
    used: u128,
) -> Vec<usize> {
    let mut visited: Vec<NodeId> = vec![end];
    for (i, &(t, h)) in net.arcs().iter().enumerate() {
        if used & (1u128 << i) != 0 {
            visited.push(t);
            visited.push(h);
        }
    }
    let mut out = Vec::new();
    'arcs: for (i, &(t, h)) in net.arcs().iter().enumerate() {
        if t != end || used & (1u128 << i) != 0 {
            continue;
        }
        for &v in &visited {
            if view.comp[v.index()] == view.comp[h.index()] && !view.below(v, h) {
                continue 'arcs;
            }
        }
        out.push(i);
    }
    out
}

/// Searches for an admissible trail from `rho` that uses arc `target`.
/// Returns the trail as a vertex sequence.
fn find_trail(
    net: &Network,
    view: &ForestView,
    rho: NodeId,
    target: usize,
    state_cap: usize,
) -> Result<Option<Vec<NodeId>>, NetworkError> {
    // The start vertex must respect the ordering against itself only, which
    // is trivially satisfied.
    let mut seen: BTreeSet<(NodeId, u128)> = BTreeSet::new();
    let mut stack: Vec<(NodeId, u128, Vec<NodeId>)> = vec![(rho, 0, vec![rho])];
    while let Some((end, used, path)) = stack.pop() {
        if !seen.insert((end, used)) {
            continue;
        }
        if seen.len() > state_cap {
            return Err(NetworkError::CapExceeded(format!(
                "trail search explored more than {state_cap} states"
            )));
        }
        if used & (1u128 << target) != 0 {
            return Ok(Some(path));
        }
        for i in admissible_extensions(net, view, end, used) {
            let (_, h) = net.arcs()[i];
            let mut p2 = path.clone();
            p2.push(h);
            stack.push((h, used | (1u128 << i), p2));
        }
    }
    Ok(None)
}

/// Caps for the exhaustive searches.
#[derive(Clone, Copy, Debug)]
pub struct SearchCaps {
    /// Maximum arc count for the exhaustive (rho, A) search.
    pub exhaustive_arcs: usize,
    /// Maximum number of trail-search states per arc certificate.
    pub trail_states: usize,
    /// Maximum number of vertices in an unfolding.
    pub unfold_nodes: usize,
    /// Maximum number of enumerated cycles.
    pub cycles: usize,
}

impl Default for SearchCaps {
    fn default() -> Self {
        SearchCaps {
            exhaustive_arcs: 16,
            trail_states: 1 << 20,
            unfold_nodes: 1 << 16,
            cycles: 1 << 14,
        }
    }
}

/// Verifies (V1) directly and (V2) by trail search per arc; also rejects an
/// anchor that could not seed an unfolding (a labelled leaf with no
/// admissible extension).
pub fn check_valid(
    net: &Network,
    rho: NodeId,
    arcs: &[usize],
    caps: &SearchCaps,
) -> Result<ValidityWitness, NetworkError> {
    if rho.index() >= net.num_nodes() {
        return Err(NetworkError::UnknownVertex(rho));
    }
    for &i in arcs {
        if i >= net.arcs().len() {
            return Err(NetworkError::UnknownArc(i));
        }
    }
    if net.arcs().len() > 128 {
        return Err(NetworkError::CapExceeded(
            "trail search supports at most 128 arcs".to_string(),
        ));
    }
    let a_set: BTreeSet<usize> = arcs.iter().copied().collect();
    let view = forest_view(net, &a_set)?;
    if net.leaves().contains_key(&rho)
        && admissible_extensions(net, &view, rho, 0).is_empty()
    {
        return Err(NetworkError::RhoNotViable(rho));
    }
    let mut trails = Vec::new();
    let mut sorted: Vec<usize> = a_set.iter().copied().collect();
    sorted.sort_unstable();
    for &i in &sorted {
        match find_trail(net, &view, rho, i, caps.trail_states)? {
            Some(trail) => trails.push(trail),
            None => return Err(NetworkError::V2(i)),
        }
    }
    Ok(ValidityWitness {
        rho,
        arcs: sorted,
        trails,
    })
}

/// Exhaustively tries arc subsets (ascending bitmask) and anchors (ascending
/// vertex id); returns the first witness found, or None if the network is
/// not valid. Networks failing the (N1)-(N4) axioms are rejected up front.
pub fn search_validity(
    net: &Network,
    caps: &SearchCaps,
) -> Result<Option<ValidityWitness>, NetworkError> {
    let m = net.arcs().len();
    if m > caps.exhaustive_arcs || m > 63 {
        return Err(NetworkError::CapExceeded(format!(
            "{m} arcs exceeds exhaustive cap {}",
            caps.exhaustive_arcs.min(63)
        )));
    }
    if !net.check_axioms().all_pass() {
        return Ok(None);
    }
    for mask in 0u64..(1u64 << m) {
        let a_set: BTreeSet<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if forest_view(net, &a_set).is_err() {
            continue;
        }
        let arcs: Vec<usize> = a_set.iter().copied().collect();
        for v in 0..net.num_nodes() {
            match check_valid(net, NodeId(v), &arcs, caps) {
                Ok(w) => return Ok(Some(w)),
                Err(NetworkError::CapExceeded(msg)) => {
                    return Err(NetworkError::CapExceeded(msg))
                }
                Err(_) => {}
            }
        }
    }
    Ok(None)
}

/// Unfolds a witnessed network into a forest triple plus overlay whose
/// rebuilt representation restores the network. Vertices of the gene tree
/// are admissible trails from `rho`; trails ending at a labelled leaf spawn
/// a pendant labelled copy when they still extend.
pub fn unfold(
    net: &Network,
    rho: NodeId,
    arcs: &[usize],
    caps: &SearchCaps,
) -> Result<(ForestTriple, OsfMap), NetworkError> {
    let witness = check_valid(net, rho, arcs, caps)?;
    let a_set: BTreeSet<usize> = witness.arcs.iter().copied().collect();
    let view = forest_view(net, &a_set)?;

    // Rebuild F = N - A as phylogenetic trees, components ordered by their
    // smallest network node id.
    let mut comp_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); view.n_comps];
    for v in 0..net.num_nodes() {
        comp_nodes[view.comp[v]].push(NodeId(v));
    }
    let mut order: Vec<usize> = (0..view.n_comps).collect();
    order.sort_by_key(|&c| comp_nodes[c][0]);
    let mut tree_of_comp = vec![usize::MAX; view.n_comps];
    let mut local_id: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut trees = Vec::new();
    for (ti, &c) in order.iter().enumerate() {
        tree_of_comp[c] = ti;
        for (li, &v) in comp_nodes[c].iter().enumerate() {
            local_id.insert(v, NodeId(li));
        }
        let parents: Vec<Option<NodeId>> = comp_nodes[c]
            .iter()
            .map(|&v| view.parent[v.index()].map(|p| local_id[&p]))
            .collect();
        let labels: Vec<Option<String>> = comp_nodes[c]
            .iter()
            .map(|&v| net.leaves().get(&v).cloned())
            .collect();
        trees.push(PhyloTree::from_parts(parents, labels, None)?);
    }
    let forest = Forest::new(trees)?;
    let to_forest_node =
        |v: NodeId| ForestNode::new(tree_of_comp[view.comp[v.index()]], local_id[&v]);

    // Trail tree.
    struct Trail {
        end: NodeId,
        used: u128,
        label: Option<String>,
    }
    let mut draft = TreeDraft::new();
    let mut info: Vec<Trail> = Vec::new();
    let root = draft.add_node(None);
    info.push(Trail {
        end: rho,
        used: 0,
        label: None,
    });
    let mut label_counter: BTreeMap<String, usize> = BTreeMap::new();
    let mut queue = vec![root];
    while let Some(t) = queue.pop() {
        if info.len() > caps.unfold_nodes {
            return Err(NetworkError::CapExceeded(format!(
                "unfolding exceeds {} vertices",
                caps.unfold_nodes
            )));
        }
        let end = info[t.index()].end;
        let used = info[t.index()].used;
        let exts = admissible_extensions(net, &view, end, used);
        let at_leaf = net.leaves().contains_key(&end);
        if exts.is_empty() {
            if !at_leaf {
                return Err(NetworkError::UnfoldStructure(format!(
                    "maximal trail ends at unlabelled vertex {end}"
                )));
            }
            // The trail itself is a labelled gene leaf.
            let base = net.leaves()[&end].clone();
            let k = label_counter.entry(base.clone()).or_insert(0);
            *k += 1;
            let label = format!("{base}_{k}");
            draft.label[t.index()] = Some(label.clone());
            info[t.index()].label = Some(label);
            continue;
        }
        if at_leaf {
            // Keep a labelled copy so the trail vertex stays anchored.
            let base = net.leaves()[&end].clone();
            let k = label_counter.entry(base.clone()).or_insert(0);
            *k += 1;
            let label = format!("{base}_{k}");
            let stop = draft.add_node(Some(label.clone()));
            draft.attach(t, stop);
            info.push(Trail {
                end,
                used,
                label: Some(label),
            });
        }
        for i in exts {
            let (_, h) = net.arcs()[i];
            let child = draft.add_node(None);
            draft.attach(t, child);
            info.push(Trail {
                end: h,
                used: used | (1u128 << i),
                label: None,
            });
            queue.push(child);
        }
    }

    let (gene, remap) = draft
        .finish()
        .map_err(|e| NetworkError::UnfoldStructure(e.to_string()))?;
    let mut phi_labels = BTreeMap::new();
    let mut images = vec![ForestNode::new(0, NodeId(0)); gene.len()];
    for (old, new) in remap.iter().enumerate() {
        let Some(new_id) = new else { continue };
        let t = &info[old];
        images[new_id.index()] = to_forest_node(t.end);
        if let Some(label) = &t.label {
            phi_labels.insert(label.clone(), net.leaves()[&t.end].clone());
        }
    }
    let triple = ForestTriple::new(gene, forest, &phi_labels)?;
    let psi = OsfMap::from_images(&triple, images);
    Ok((triple, psi))
}

/// Metadata for one contact arc reattachment in the binary resolution.
#[derive(Clone, Debug, Serialize)]
pub struct PairingChoice {
    pub gene_arc: (usize, usize),
    pub from_subdivision: usize,
    pub to_subdivision: usize,
}

/// Binary resolution of N(psi) together with the projection of its vertices
/// back onto the vertices of N(psi).
#[derive(Clone, Debug)]
pub struct BinaryResolution {
    pub network: Network,
    /// For each resolution vertex, the N(psi) vertex it projects to.
    pub projects_to: Vec<NodeId>,
    pub pairing: Vec<PairingChoice>,
}

/// Appendix-style binary resolution: subdivision vertices, one per incidence
/// of a gene vertex with the introgression set, are inserted on the incoming
/// forest arc of each image (roots first receive a helper incoming arc);
/// contact arcs are re-attached between matching subdivision vertices;
/// indegree-0/outdegree-1 helpers are removed and remaining multifurcations
/// are resolved. Requires a strict overlay.
pub fn binary_resolution(
    triple: &ForestTriple,
    psi: &OsfMap,
) -> Result<BinaryResolution, NetworkError> {
    if !is_strict_osf(triple, psi)? {
        return Err(NetworkError::Verify(VerifyError::NotStrict("S3")));
    }
    let rep = representation_unchecked(triple, psi);
    let intro = introgression_set_of(triple, psi)?;
    let net = &rep.network;
    let gene = &triple.gene;

    // Preorder rank of gene vertices fixes every otherwise-free ordering.
    let mut rank = vec![0usize; gene.len()];
    for (i, v) in gene.preorder().into_iter().enumerate() {
        rank[v.index()] = i;
    }
    let mut intro_arcs: Vec<(NodeId, NodeId)> = intro.arcs().iter().copied().collect();
    intro_arcs.sort_by_key(|&(u, v)| (rank[u.index()], rank[v.index()]));

    // Group subdivision requests per network vertex.
    let mut requests: BTreeMap<NodeId, Vec<(NodeId, usize)>> = BTreeMap::new(); // net node -> [(gene w, intro idx)]
    for (ai, &(u, v)) in intro_arcs.iter().enumerate() {
        for w in [u, v] {
            let img = psi.image(w);
            requests
                .entry(rep.network_node(img))
                .or_default()
                .push((w, ai));
        }
    }
    for group in requests.values_mut() {
        group.sort_by_key(|&(w, ai)| (rank[w.index()], ai));
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Forest,
        Contact,
    }
    fn new_node(next: &mut usize, proj: NodeId, projects_to: &mut Vec<NodeId>) -> NodeId {
        let id = NodeId(*next);
        *next += 1;
        projects_to.push(proj);
        id
    }
    let mut projects_to: Vec<NodeId> = (0..net.num_nodes()).map(NodeId).collect();
    let mut next = net.num_nodes();
    let mut arcs: Vec<(NodeId, NodeId, Kind)> = Vec::new();
    let mut subdivision_of: BTreeMap<(NodeId, usize), NodeId> = BTreeMap::new(); // (gene w, intro idx) -> node

    // Forest arcs, subdividing incoming arcs where requested. Roots get a
    // helper parent so their incoming arc exists.
    let partition = net.partition().expect("representation is partitioned");
    let forest_parent: BTreeMap<NodeId, NodeId> = partition
        .forest
        .iter()
        .map(|&i| (net.arcs()[i].1, net.arcs()[i].0))
        .collect();
    for v in (0..net.num_nodes()).map(NodeId) {
        let fnode = rep.forest_node(v);
        let is_root = triple.forest.tree(fnode.tree).root() == fnode.node;
        let source = if is_root {
            new_node(&mut next, v, &mut projects_to)
        } else {
            forest_parent[&v]
        };
        let mut chain = source;
        if let Some(group) = requests.get(&v) {
            for &(w, ai) in group {
                let s = new_node(&mut next, v, &mut projects_to);
                subdivision_of.insert((w, ai), s);
                arcs.push((chain, s, Kind::Forest));
                chain = s;
            }
        }
        arcs.push((chain, v, Kind::Forest));
    }

    // Contact arcs between matching subdivision vertices.
    let mut pairing = Vec::new();
    for (ai, &(u, v)) in intro_arcs.iter().enumerate() {
        let from = subdivision_of[&(u, ai)];
        let to = subdivision_of[&(v, ai)];
        arcs.push((from, to, Kind::Contact));
        pairing.push(PairingChoice {
            gene_arc: (u.index(), v.index()),
            from_subdivision: from.index(),
            to_subdivision: to.index(),
        });
    }

    // Iteratively drop indegree-0 outdegree-1 vertices with their out-arcs.
    let mut alive = vec![true; next];
    loop {
        let mut indeg = vec![0usize; next];
        let mut outdeg = vec![0usize; next];
        for &(t, h, _) in &arcs {
            if alive[t.index()] && alive[h.index()] {
                indeg[h.index()] += 1;
                outdeg[t.index()] += 1;
            }
        }
        let victim = (0..next).find(|&i| alive[i] && indeg[i] == 0 && outdeg[i] == 1);
        match victim {
            Some(i) => {
                alive[i] = false;
                arcs.retain(|&(t, _, _)| t.index() != i);
            }
            None => break,
        }
    }

    // Resolve remaining vertices with three or more outgoing forest arcs.
    loop {
        let mut out_children: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, &(t, _, kind)) in arcs.iter().enumerate() {
            if kind == Kind::Forest && alive[t.index()] {
                out_children.entry(t).or_default().push(i);
            }
        }
        let Some((&u, idxs)) = out_children.iter().find(|(_, v)| v.len() >= 3) else {
            break;
        };
        // Split off all but the first child under a fresh sibling vertex.
        let rest: Vec<usize> = idxs[1..].to_vec();
        let proj = projects_to[u.index()];
        let m = new_node(&mut next, proj, &mut projects_to);
        alive.push(true);
        for &i in &rest {
            arcs[i].0 = m;
        }
        arcs.push((u, m, Kind::Forest));
    }

    // Compact the surviving vertices into a network.
    let mut remap: Vec<Option<NodeId>> = vec![None; next];
    let mut compact = 0usize;
    for i in 0..next {
        if alive[i] {
            remap[i] = Some(NodeId(compact));
            compact += 1;
        }
    }
    let mut out_arcs = Vec::new();
    let mut forest_idx = Vec::new();
    let mut contact_idx = Vec::new();
    for &(t, h, kind) in &arcs {
        let (Some(t2), Some(h2)) = (remap[t.index()], remap[h.index()]) else {
            continue;
        };
        match kind {
            Kind::Forest => forest_idx.push(out_arcs.len()),
            Kind::Contact => contact_idx.push(out_arcs.len()),
        }
        out_arcs.push((t2, h2));
    }
    let leaves: BTreeMap<NodeId, String> = net
        .leaves()
        .iter()
        .filter_map(|(v, l)| remap[v.index()].map(|v2| (v2, l.clone())))
        .collect();
    let network = Network::new(
        compact,
        out_arcs,
        leaves,
        Some(ArcPartition {
            forest: forest_idx,
            contact: contact_idx,
        }),
    )
    .expect("resolution arcs are in range");
    let projects: Vec<NodeId> = (0..next)
        .filter(|&i| alive[i])
        .map(|i| projects_to[i])
        .collect();
    let pairing = pairing
        .into_iter()
        .map(|p| PairingChoice {
            gene_arc: p.gene_arc,
            from_subdivision: remap[p.from_subdivision]
                .map(|v| v.index())
                .unwrap_or(usize::MAX),
            to_subdivision: remap[p.to_subdivision]
                .map(|v| v.index())
                .unwrap_or(usize::MAX),
        })
        .collect();
    Ok(BinaryResolution {
        network,
        projects_to: projects,
        pairing,
    })
}

/// A directed cycle together with its classification: incidental means no
/// gene-tree path maps onto it.
#[derive(Clone, Debug)]
pub struct ClassifiedCycle {
    /// Vertex sequence, first vertex repeated at the end.
    pub cycle: Vec<NodeId>,
    pub incidental: bool,
}

fn normalize_cycle(cycle: &[NodeId]) -> Vec<NodeId> {
    // cycle: v1..vm (no closing repeat); rotate so the smallest vertex leads.
    let m = cycle.len();
    let best = (0..m)
        .min_by_key(|&s| {
            let mut rot: Vec<NodeId> = Vec::with_capacity(m);
            for k in 0..m {
                rot.push(cycle[(s + k) % m]);
            }
            rot
        })
        .unwrap();
    (0..m).map(|k| cycle[(best + k) % m]).collect()
}

/// Enumerates simple directed cycles of N(psi) and marks each one as
/// incidental or realized by some gene path. The first and last arcs of a
/// realizing walk are contact arcs, which prunes the candidate paths.
pub fn classify_cycles(
    triple: &ForestTriple,
    psi: &OsfMap,
    rep: &Representation,
    caps: &SearchCaps,
) -> Result<Vec<ClassifiedCycle>, NetworkError> {
    let net = &rep.network;
    let cycles = enumerate_cycles(net, caps.cycles)?;

    // All closed walks realized as images of gene paths, normalized.
    let gene = &triple.gene;
    let mut realized: BTreeSet<Vec<NodeId>> = BTreeSet::new();
    for u in gene.node_ids() {
        for v in gene.cluster_vertices(u) {
            if u == v {
                continue;
            }
            let mut gamma = Vec::new();
            let mut cur = Some(v);
            while let Some(w) = cur {
                gamma.push(w);
                if w == u {
                    break;
                }
                cur = gene.parent(w);
            }
            gamma.reverse();
            // Pruning: a cycle-realizing walk starts and ends with contact arcs.
            let first_cross =
                psi.image(gamma[0]).tree != psi.image(gamma[1]).tree;
            let last_cross = psi.image(gamma[gamma.len() - 2]).tree
                != psi.image(gamma[gamma.len() - 1]).tree;
            if !first_cross || !last_cross {
                continue;
            }
            let walk = walk_of_path(triple, psi, &gamma)?;
            if walk.len() < 3 || walk.first() != walk.last() {
                continue;
            }
            let ids: Vec<NodeId> = walk[..walk.len() - 1]
                .iter()
                .map(|&f| rep.network_node(f))
                .collect();
            // Must be a simple cycle: distinct vertices, distinct arcs.
            let distinct: BTreeSet<NodeId> = ids.iter().copied().collect();
            if distinct.len() != ids.len() {
                continue;
            }
            realized.insert(normalize_cycle(&ids));
        }
    }

    Ok(cycles
        .into_iter()
        .map(|c| {
            let open = &c[..c.len() - 1];
            let incidental = !realized.contains(&normalize_cycle(open));
            ClassifiedCycle {
                cycle: c,
                incidental,
            }
        })
        .collect())
}

/// Simple directed cycles as vertex sequences (first vertex repeated last),
/// each anchored at its minimal vertex.
pub fn enumerate_cycles(net: &Network, cap: usize) -> Result<Vec<Vec<NodeId>>, NetworkError> {
    let n = net.num_nodes();
    let mut succ: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &(t, h) in net.arcs() {
        succ[t.index()].push(h);
    }
    for s in &mut succ {
        s.sort();
        s.dedup();
    }
    let mut out = Vec::new();
    let mut path: Vec<NodeId> = Vec::new();
    let mut on_path = vec![false; n];

    fn dfs(
        v: NodeId,
        start: NodeId,
        succ: &[Vec<NodeId>],
        path: &mut Vec<NodeId>,
        on_path: &mut Vec<bool>,
        out: &mut Vec<Vec<NodeId>>,
        cap: usize,
    ) -> Result<(), NetworkError> {
        path.push(v);
        on_path[v.index()] = true;
        for &w in &succ[v.index()] {
            if w == start {
                let mut cycle = path.clone();
                cycle.push(start);
                out.push(cycle);
                if out.len() > cap {
                    return Err(NetworkError::CapExceeded(format!(
                        "more than {cap} cycles"
                    )));
                }
            } else if w > start && !on_path[w.index()] {
                dfs(w, start, succ, path, on_path, out, cap)?;
            }
        }
        path.pop();
        on_path[v.index()] = false;
        Ok(())
    }

    for s in (0..n).map(NodeId) {
        dfs(s, s, &succ, &mut path, &mut on_path, &mut out, cap)?;
    }
    Ok(out)
}
