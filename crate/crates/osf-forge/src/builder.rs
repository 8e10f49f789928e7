//! Construction of optimal strict overlays: a bottom-up majority pass over
//! the gene tree, a top-down state selection, then lca placement into the
//! species forest.
//!
//! States are tree indices of the forest. The bottom-up pass counts, for each
//! state, how many children admit it and keeps the argmax set; on binary
//! trees this reduces to intersection-if-nonempty-else-union. The top-down
//! pass keeps the parent state whenever admissible, otherwise defers to the
//! tie breaker. The number of state changes of the produced extension equals
//! the parsimony score of the leaf character, which is the minimum possible
//! number of contact arcs.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ForestNode, ForestTriple, NodeId, PhyloTree};

/// Leaf character: gene leaf -> index of the forest tree holding its image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Character {
    states: BTreeMap<NodeId, usize>,
}

impl Character {
    pub fn new(states: BTreeMap<NodeId, usize>) -> Self {
        Character { states }
    }

    pub fn state(&self, leaf: NodeId) -> usize {
        self.states[&leaf]
    }

    pub fn states(&self) -> &BTreeMap<NodeId, usize> {
        &self.states
    }

    /// Number of distinct states in use.
    pub fn arity(&self) -> usize {
        self.states.values().collect::<BTreeSet<_>>().len()
    }
}

/// Candidate state sets per gene vertex from the bottom-up pass.
#[derive(Clone, Debug)]
pub struct SigmaSets {
    sets: Vec<BTreeSet<usize>>,
}

impl SigmaSets {
    pub fn get(&self, v: NodeId) -> &BTreeSet<usize> {
        &self.sets[v.index()]
    }
}

/// Total state assignment extending a leaf character to all gene vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extension {
    assignment: Vec<usize>,
}

impl Extension {
    pub fn state(&self, v: NodeId) -> usize {
        self.assignment[v.index()]
    }

    /// Arcs whose endpoints carry different states.
    pub fn change_count(&self, gene: &PhyloTree) -> usize {
        gene.arcs()
            .iter()
            .filter(|&&(u, v)| self.assignment[u.index()] != self.assignment[v.index()])
            .count()
    }
}

/// Policy for choosing among equally good states.
#[derive(Debug)]
pub enum TieBreaker {
    /// Lowest tree index in file order.
    First,
    /// Seeded uniform choice; reproducible for a fixed seed.
    Seeded(ChaCha8Rng),
}

impl TieBreaker {
    pub fn first() -> Self {
        TieBreaker::First
    }

    pub fn seeded(seed: u64) -> Self {
        TieBreaker::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    fn pick(&mut self, options: &BTreeSet<usize>) -> usize {
        match self {
            TieBreaker::First => *options.iter().next().expect("sigma sets are non-empty"),
            TieBreaker::Seeded(rng) => {
                let k = rng.gen_range(0..options.len());
                *options.iter().nth(k).expect("sigma sets are non-empty")
            }
        }
    }
}

/// Total overlay map from gene vertices into the species forest, with the
/// contact-arc multiset cached as the gene arcs that realize it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OsfMap {
    images: Vec<ForestNode>,
    contact_gene_arcs: Vec<(NodeId, NodeId)>,
}

impl OsfMap {
    /// Wraps a total image vector (indexed by gene node id) and caches the
    /// contact arcs.
    pub fn from_images(triple: &ForestTriple, images: Vec<ForestNode>) -> Self {
        assert_eq!(images.len(), triple.gene.len(), "map must be total on V(G)");
        let contact_gene_arcs = triple
            .gene
            .arcs()
            .into_iter()
            .filter(|&(u, v)| images[u.index()].tree != images[v.index()].tree)
            .collect();
        OsfMap {
            images,
            contact_gene_arcs,
        }
    }

    pub fn image(&self, v: NodeId) -> ForestNode {
        self.images[v.index()]
    }

    pub fn images(&self) -> &[ForestNode] {
        &self.images
    }

    /// Gene arcs whose endpoint images lie in different trees, in preorder.
    pub fn contact_gene_arcs(&self) -> &[(NodeId, NodeId)] {
        &self.contact_gene_arcs
    }

    /// The contact multiset C as image pairs, one entry per realizing gene arc.
    pub fn contact_multiset(&self) -> Vec<(ForestNode, ForestNode)> {
        self.contact_gene_arcs
            .iter()
            .map(|&(u, v)| (self.image(u), self.image(v)))
            .collect()
    }

    /// |C|: the number of gene arcs crossing between trees.
    pub fn contact_count(&self) -> usize {
        self.contact_gene_arcs.len()
    }

    /// C*: the underlying set of the contact multiset, sorted.
    pub fn contact_set(&self) -> BTreeSet<(ForestNode, ForestNode)> {
        self.contact_multiset().into_iter().collect()
    }
}

/// The tree-membership character of a triple: each gene leaf is assigned the
/// index of the forest tree containing its image.
pub fn character_of(triple: &ForestTriple) -> Character {
    let states = triple
        .phi_map()
        .iter()
        .map(|(&leaf, img)| (leaf, img.tree))
        .collect();
    Character::new(states)
}

/// Bottom-up pass: for each interior vertex, keep the states admitted by the
/// largest number of children.
pub fn bottom_up(gene: &PhyloTree, character: &Character) -> SigmaSets {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); gene.len()];
    for v in gene.postorder() {
        if gene.is_leaf(v) {
            sets[v.index()].insert(character.state(v));
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in gene.children(v) {
            for &s in &sets[c.index()] {
                *counts.entry(s).or_default() += 1;
            }
        }
        let best = counts.values().copied().max().unwrap_or(0);
        sets[v.index()] = counts
            .into_iter()
            .filter(|&(_, n)| n == best)
            .map(|(s, _)| s)
            .collect();
    }
    SigmaSets { sets }
}

/// Top-down pass: root takes any candidate state, each child keeps its
/// parent's state when admissible and otherwise defers to the tie breaker.
pub fn top_down(gene: &PhyloTree, sigma: &SigmaSets, tie: &mut TieBreaker) -> Extension {
    let mut assignment = vec![usize::MAX; gene.len()];
    for v in gene.preorder() {
        let options = sigma.get(v);
        assignment[v.index()] = match gene.parent(v) {
            Some(p) if options.contains(&assignment[p.index()]) => assignment[p.index()],
            _ => tie.pick(options),
        };
    }
    Extension { assignment }
}

/// Minimum number of state-change arcs over all extensions of the character.
pub fn parsimony_score(gene: &PhyloTree, character: &Character) -> usize {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); gene.len()];
    let mut score = 0usize;
    for v in gene.postorder() {
        if gene.is_leaf(v) {
            sets[v.index()].insert(character.state(v));
            continue;
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in gene.children(v) {
            for &s in &sets[c.index()] {
                *counts.entry(s).or_default() += 1;
            }
        }
        let best = counts.values().copied().max().unwrap_or(0);
        score += gene.children(v).len() - best;
        sets[v.index()] = counts
            .into_iter()
            .filter(|&(_, n)| n == best)
            .map(|(s, _)| s)
            .collect();
    }
    score
}

/// Runs both passes and places every gene vertex at the lca, within its
/// assigned tree, of the images of the gene leaves below it that land there.
pub fn build_osf(triple: &ForestTriple, tie: &mut TieBreaker) -> OsfMap {
    let character = character_of(triple);
    let sigma = bottom_up(&triple.gene, &character);
    let extension = top_down(&triple.gene, &sigma, tie);
    place_extension(triple, &extension)
}

/// Lca placement for an arbitrary extension of the tree-membership
/// character. Every vertex must dominate at least one gene leaf mapped into
/// its assigned tree (always true for extensions produced by the two-pass
/// construction).
pub fn place_extension(triple: &ForestTriple, extension: &Extension) -> OsfMap {
    let gene = &triple.gene;
    let mut images = vec![ForestNode::new(0, NodeId(0)); gene.len()];
    for v in gene.node_ids() {
        let tree_idx = extension.state(v);
        let tree = triple.forest.tree(tree_idx);
        let targets: Vec<NodeId> = gene
            .cluster(v)
            .expect("vertex belongs to the gene tree")
            .into_iter()
            .filter_map(|leaf| {
                let img = triple.phi(leaf);
                (img.tree == tree_idx).then_some(img.node)
            })
            .collect();
        assert!(
            !targets.is_empty(),
            "extension assigns a tree with no leaf images below {v:?}"
        );
        let node = tree.lca(&targets).expect("targets belong to the tree");
        images[v.index()] = ForestNode::new(tree_idx, node);
    }
    OsfMap::from_images(triple, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Forest;
    use crate::newick::{parse_forest, parse_leaf_map, parse_tree};

    pub(crate) fn triple(gene: &str, forest: &str, map: &str) -> ForestTriple {
        let g = parse_tree(gene).unwrap();
        let f = parse_forest(forest).unwrap();
        let phi = parse_leaf_map(map, &g, &f).unwrap();
        ForestTriple::new(g, f, &phi).unwrap()
    }

    /// Mirrors the fourth-figure instance: score 3, two distinct contact arcs.
    pub(crate) fn fig4_triple() -> ForestTriple {
        triple(
            "((a,b),((c,d),z,((e,f),x,(g,h))));",
            "((A,(E,X)),(B,F));\n((C,G),(D,(H,Z)));",
            "a\tA\nb\tB\nc\tC\nd\tD\ne\tE\nf\tF\ng\tG\nh\tH\nx\tX\nz\tZ\n",
        )
    }

    #[test]
    fn character_tracks_tree_membership() {
        let t = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        let c = character_of(&t);
        let a = t.gene.node_by_label("a").unwrap();
        let b = t.gene.node_by_label("b").unwrap();
        assert_eq!(c.state(a), 0);
        assert_eq!(c.state(b), 1);
        assert_eq!(c.arity(), 2);
    }

    #[test]
    fn single_tree_forest_gives_constant_character() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let c = character_of(&t);
        assert_eq!(c.arity(), 1);
    }

    #[test]
    fn three_tree_forest_gives_three_states() {
        let t = triple(
            "((a1,a2),(b1,b2),(c1,c2));",
            "(A1,A2);\n(B1,B2);\n(C1,C2);",
            "a1\tA1\na2\tA2\nb1\tB1\nb2\tB2\nc1\tC1\nc2\tC2\n",
        );
        assert_eq!(character_of(&t).arity(), 3);
    }

    #[test]
    fn bottom_up_agreeing_cherry() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let sigma = bottom_up(&t.gene, &character_of(&t));
        assert_eq!(
            sigma.get(t.gene.root()),
            &[0usize].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn bottom_up_tied_cherry() {
        let t = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        let sigma = bottom_up(&t.gene, &character_of(&t));
        assert_eq!(
            sigma.get(t.gene.root()),
            &[0usize, 1].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn bottom_up_majority_of_three_children() {
        // Oracle: states {0, 0, 1} among the children, majority is {0}.
        let t = triple(
            "(a,b,c);",
            "(A,B,X);\n(C,Y);",
            "a\tA\nb\tB\nc\tC\n",
        );
        let sigma = bottom_up(&t.gene, &character_of(&t));
        assert_eq!(
            sigma.get(t.gene.root()),
            &[0usize].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn top_down_unique_when_sigmas_are_singletons() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let sigma = bottom_up(&t.gene, &character_of(&t));
        let e1 = top_down(&t.gene, &sigma, &mut TieBreaker::first());
        let e2 = top_down(&t.gene, &sigma, &mut TieBreaker::seeded(99));
        assert_eq!(e1, e2);
    }

    #[test]
    fn top_down_first_tie_picks_lowest_index() {
        let t = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        let sigma = bottom_up(&t.gene, &character_of(&t));
        let e = top_down(&t.gene, &sigma, &mut TieBreaker::first());
        assert_eq!(e.state(t.gene.root()), 0);
    }

    #[test]
    fn fig4_extension_has_three_changes() {
        let t = fig4_triple();
        let sigma = bottom_up(&t.gene, &character_of(&t));
        let e = top_down(&t.gene, &sigma, &mut TieBreaker::first());
        assert_eq!(e.change_count(&t.gene), 3);
    }

    #[test]
    fn fig4_build_counts() {
        let t = fig4_triple();
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(psi.contact_count(), 3);
        assert_eq!(psi.contact_set().len(), 2);
    }

    #[test]
    fn single_tree_build_is_contact_free_and_lands_on_lca() {
        let t = triple("((a,b),c);", "((A,B),(C,D));", "a\tA\nb\tB\nc\tC\n");
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(psi.contact_count(), 0);
        let tree = t.forest.tree(0);
        let want = tree
            .lca(&[
                tree.node_by_label("A").unwrap(),
                tree.node_by_label("B").unwrap(),
                tree.node_by_label("C").unwrap(),
            ])
            .unwrap();
        assert_eq!(psi.image(t.gene.root()), ForestNode::new(0, want));
    }

    #[test]
    fn split_cherry_has_one_contact() {
        let t = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(psi.contact_count(), 1);
    }

    #[test]
    fn parsimony_score_basics() {
        let constant = triple("((a,b),c);", "(A,B,C);", "a\tA\nb\tB\nc\tC\n");
        assert_eq!(parsimony_score(&constant.gene, &character_of(&constant)), 0);

        let split = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        assert_eq!(parsimony_score(&split.gene, &character_of(&split)), 1);
    }

    #[test]
    fn score_matches_builder_output() {
        let t = fig4_triple();
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(
            parsimony_score(&t.gene, &character_of(&t)),
            psi.contact_count()
        );
    }

    #[test]
    fn score_is_tiebreak_invariant() {
        let t = fig4_triple();
        let base = build_osf(&t, &mut TieBreaker::first()).contact_count();
        for seed in 0..20 {
            let got = build_osf(&t, &mut TieBreaker::seeded(seed)).contact_count();
            assert_eq!(got, base);
        }
    }

    #[test]
    fn osf_map_total_assertion() {
        let g = parse_tree("(a,b);").unwrap();
        let f = Forest::new(vec![parse_tree("(A,B);").unwrap()]).unwrap();
        let mut phi = BTreeMap::new();
        phi.insert("a".to_string(), "A".to_string());
        phi.insert("b".to_string(), "B".to_string());
        let t = ForestTriple::new(g, f, &phi).unwrap();
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(psi.images().len(), t.gene.len());
    }
}
