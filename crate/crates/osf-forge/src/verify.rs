//! Axiom checking for overlay maps, conversion between introgression sets
//! and strict overlays, and the exhaustive optimality oracle.
//!
//! The oracle enumerates extensions of the tree-membership character rather
//! than raw vertex maps, which keeps the search space at |F|^|V0(G)| and is
//! independent of the builder's code path.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::builder::{character_of, OsfMap};
use crate::model::{ForestNode, ForestTriple, NodeId};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("map is not total on the gene tree")]
    NotTotal,
    #[error("map image {0:?} does not exist in the forest")]
    BadImage(ForestNode),
    #[error("map is not a strict overlay (axiom {0} fails)")]
    NotStrict(&'static str),
    #[error("arc ({0}, {1}) is not an arc of the gene tree")]
    UnknownArc(NodeId, NodeId),
    #[error("not an introgression set: condition ({0}) fails")]
    NotIntrogression(&'static str),
    #[error("search space {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: u128 },
}

/// Counterexample attached to a failed verdict.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Witness {
    Vertex(NodeId),
    Arc(NodeId, NodeId),
}

/// Single axiom verdict; false iff a witness is attached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub pass: bool,
    pub witness: Option<Witness>,
}

impl Check {
    fn pass() -> Self {
        Check {
            pass: true,
            witness: None,
        }
    }

    fn fail(witness: Witness) -> Self {
        Check {
            pass: false,
            witness: Some(witness),
        }
    }
}

/// Per-axiom verdicts. Checks that were not requested stay `None`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct OsfReport {
    pub p1: Option<Check>,
    pub p2: Option<Check>,
    pub p3: Option<Check>,
    pub s3: Option<Check>,
}

impl OsfReport {
    pub fn all_pass(&self) -> bool {
        [&self.p1, &self.p2, &self.p3, &self.s3]
            .into_iter()
            .flatten()
            .all(|c| c.pass)
    }
}

fn validate_total(triple: &ForestTriple, psi: &OsfMap) -> Result<(), VerifyError> {
    if psi.images().len() != triple.gene.len() {
        return Err(VerifyError::NotTotal);
    }
    for &img in psi.images() {
        let ok = img.tree < triple.forest.len()
            && triple.forest.tree(img.tree).contains(img.node);
        if !ok {
            return Err(VerifyError::BadImage(img));
        }
    }
    Ok(())
}

/// Checks the overlay axioms: agreement with the leaf map on leaves (P1),
/// order preservation within a tree (P2), and leaf-image domination (P3).
pub fn check_osf(triple: &ForestTriple, psi: &OsfMap) -> Result<OsfReport, VerifyError> {
    validate_total(triple, psi)?;
    let gene = &triple.gene;

    let mut p1 = Check::pass();
    for leaf in gene.leaves() {
        if psi.image(leaf) != triple.phi(leaf) {
            p1 = Check::fail(Witness::Vertex(leaf));
            break;
        }
    }

    let p2 = check_p2(triple, psi);

    let mut p3 = Check::pass();
    'outer: for u in gene.node_ids() {
        let img = psi.image(u);
        let tree = triple.forest.tree(img.tree);
        for leaf in gene.cluster(u).expect("u is a gene vertex") {
            let target = triple.phi(leaf);
            if target.tree == img.tree
                && tree.is_ancestor(img.node, target.node).expect("same tree")
            {
                continue 'outer;
            }
        }
        p3 = Check::fail(Witness::Vertex(u));
        break;
    }

    Ok(OsfReport {
        p1: Some(p1),
        p2: Some(p2),
        p3: Some(p3),
        s3: None,
    })
}

fn check_p2(triple: &ForestTriple, psi: &OsfMap) -> Check {
    let gene = &triple.gene;
    for u in gene.node_ids() {
        for v in gene.cluster_vertices(u) {
            if u == v {
                continue;
            }
            let iu = psi.image(u);
            let iv = psi.image(v);
            if iu.tree != iv.tree {
                continue;
            }
            let tree = triple.forest.tree(iu.tree);
            if !tree.is_ancestor(iu.node, iv.node).expect("same tree") {
                return Check::fail(Witness::Arc(u, v));
            }
        }
    }
    Check::pass()
}

/// Checks the strictness axiom (S3): every interior vertex has a child
/// mapped into the same tree, at or below its own image.
pub fn check_strict(triple: &ForestTriple, psi: &OsfMap) -> Result<OsfReport, VerifyError> {
    validate_total(triple, psi)?;
    let gene = &triple.gene;
    let mut s3 = Check::pass();
    'outer: for u in gene.interior() {
        let img = psi.image(u);
        let tree = triple.forest.tree(img.tree);
        for &v in gene.children(u) {
            let iv = psi.image(v);
            if iv.tree == img.tree && tree.is_ancestor(img.node, iv.node).expect("same tree")
            {
                continue 'outer;
            }
        }
        s3 = Check::fail(Witness::Vertex(u));
        break;
    }
    Ok(OsfReport {
        p1: None,
        p2: None,
        p3: None,
        s3: Some(s3),
    })
}

/// True iff the map satisfies (P1), (P2) and (S3).
pub fn is_strict_osf(triple: &ForestTriple, psi: &OsfMap) -> Result<bool, VerifyError> {
    let osf = check_osf(triple, psi)?;
    let strict = check_strict(triple, psi)?;
    Ok(osf.p1.as_ref().is_some_and(|c| c.pass)
        && osf.p2.as_ref().is_some_and(|c| c.pass)
        && strict.s3.as_ref().is_some_and(|c| c.pass))
}

/// A validated introgression set: a gene-arc subset whose removal splits the
/// gene tree into components that each map into a single forest tree, with
/// cut arcs joining differently assigned components, and no vertex losing
/// all of its outgoing arcs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntrogressionSet {
    arcs: BTreeSet<(NodeId, NodeId)>,
    /// Component id per gene vertex in the arc-deleted tree.
    component: Vec<usize>,
    /// Forest tree assigned to each component.
    tree_of_component: Vec<usize>,
}

impl IntrogressionSet {
    /// Validates conditions (i)-(iii) and derives the component structure.
    pub fn new(
        triple: &ForestTriple,
        arcs: &BTreeSet<(NodeId, NodeId)>,
    ) -> Result<Self, VerifyError> {
        let gene = &triple.gene;
        for &(u, v) in arcs {
            if !gene.has_arc(u, v) {
                return Err(VerifyError::UnknownArc(u, v));
            }
        }
        // (i): every tail of a cut arc keeps some uncut outgoing arc.
        for &(u, _) in arcs {
            let keeps = gene
                .children(u)
                .iter()
                .any(|&c| !arcs.contains(&(u, c)));
            if !keeps {
                return Err(VerifyError::NotIntrogression("i"));
            }
        }
        // Components of the arc-deleted gene tree.
        let mut component = vec![usize::MAX; gene.len()];
        let mut next = 0usize;
        for v in gene.preorder() {
            match gene.parent(v) {
                Some(p) if !arcs.contains(&(p, v)) => {
                    component[v.index()] = component[p.index()];
                }
                _ => {
                    component[v.index()] = next;
                    next += 1;
                }
            }
        }
        // (ii): single forest tree per component.
        let mut tree_of_component: Vec<Option<usize>> = vec![None; next];
        for leaf in gene.leaves() {
            let m = component[leaf.index()];
            let t = triple.phi(leaf).tree;
            match tree_of_component[m] {
                None => tree_of_component[m] = Some(t),
                Some(prev) if prev == t => {}
                Some(_) => return Err(VerifyError::NotIntrogression("ii")),
            }
        }
        // Condition (i) guarantees a downward uncut path to a leaf, so every
        // component carries an assignment by now.
        let tree_of_component: Vec<usize> = tree_of_component
            .into_iter()
            .map(|t| t.expect("component without leaves cannot occur once (i) holds"))
            .collect();
        // (iii): cut arcs join components assigned to distinct trees.
        for &(u, v) in arcs {
            if tree_of_component[component[u.index()]] == tree_of_component[component[v.index()]]
            {
                return Err(VerifyError::NotIntrogression("iii"));
            }
        }
        Ok(IntrogressionSet {
            arcs: arcs.clone(),
            component,
            tree_of_component,
        })
    }

    pub fn arcs(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.arcs
    }

    pub fn component_of(&self, v: NodeId) -> usize {
        self.component[v.index()]
    }

    pub fn tree_of(&self, v: NodeId) -> usize {
        self.tree_of_component[self.component[v.index()]]
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }
}

/// Report-style wrapper: verdict plus the violated condition, if any.
pub fn is_introgression_set(
    triple: &ForestTriple,
    arcs: &BTreeSet<(NodeId, NodeId)>,
) -> Result<(bool, Option<&'static str>), VerifyError> {
    match IntrogressionSet::new(triple, arcs) {
        Ok(_) => Ok((true, None)),
        Err(VerifyError::NotIntrogression(cond)) => Ok((false, Some(cond))),
        Err(e) => Err(e),
    }
}

/// Builds the strict overlay induced by an introgression set: each vertex is
/// placed at the lca, within its component's tree, of the images of the gene
/// leaves below it inside its own component.
pub fn osf_from_introgression_set(triple: &ForestTriple, intro: &IntrogressionSet) -> OsfMap {
    let gene = &triple.gene;
    let mut images = vec![ForestNode::new(0, NodeId(0)); gene.len()];
    for u in gene.node_ids() {
        let m = intro.component_of(u);
        let tree_idx = intro.tree_of(u);
        let tree = triple.forest.tree(tree_idx);
        // Gene leaves below u reachable without crossing a cut arc.
        let mut targets = Vec::new();
        let mut stack = vec![u];
        while let Some(w) = stack.pop() {
            if gene.is_leaf(w) && intro.component_of(w) == m {
                targets.push(triple.phi(w).node);
            }
            for &c in gene.children(w) {
                if !intro.arcs().contains(&(w, c)) {
                    stack.push(c);
                }
            }
        }
        let node = tree
            .lca(&targets)
            .expect("condition (i) guarantees a leaf in every component");
        images[u.index()] = ForestNode::new(tree_idx, node);
    }
    OsfMap::from_images(triple, images)
}

/// Extracts the introgression set of a strict overlay: the gene arcs whose
/// endpoint images lie in different trees.
pub fn introgression_set_of(
    triple: &ForestTriple,
    psi: &OsfMap,
) -> Result<IntrogressionSet, VerifyError> {
    if !is_strict_osf(triple, psi)? {
        return Err(VerifyError::NotStrict("S3"));
    }
    let arcs: BTreeSet<(NodeId, NodeId)> =
        psi.contact_gene_arcs().iter().copied().collect();
    IntrogressionSet::new(triple, &arcs)
}

/// Exact minimum contact count by exhausting all extensions of the
/// tree-membership character over the interior vertices.
pub fn brute_force_t(triple: &ForestTriple, cap: u128) -> Result<usize, VerifyError> {
    let gene = &triple.gene;
    let character = character_of(triple);
    let interior = gene.interior();
    let m = triple.forest.len() as u128;
    let size = m
        .checked_pow(interior.len() as u32)
        .ok_or(VerifyError::CapExceeded {
            size: u128::MAX,
            cap,
        })?;
    if size > cap {
        return Err(VerifyError::CapExceeded { size, cap });
    }

    let arcs = gene.arcs();
    let mut state = vec![0usize; gene.len()];
    for leaf in gene.leaves() {
        state[leaf.index()] = character.state(leaf);
    }
    let mut assignment = vec![0usize; interior.len()];
    let mut best = usize::MAX;
    loop {
        for (slot, &v) in interior.iter().enumerate() {
            state[v.index()] = assignment[slot];
        }
        let changes = arcs
            .iter()
            .filter(|&&(u, v)| state[u.index()] != state[v.index()])
            .count();
        best = best.min(changes);

        // Odometer over interior assignments.
        let mut pos = 0usize;
        loop {
            if pos == assignment.len() {
                return Ok(best);
            }
            assignment[pos] += 1;
            if assignment[pos] < triple.forest.len() {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build_osf, TieBreaker};
    use crate::model::ForestTriple;
    use crate::newick::{parse_forest, parse_leaf_map, parse_tree};

    fn triple(gene: &str, forest: &str, map: &str) -> ForestTriple {
        let g = parse_tree(gene).unwrap();
        let f = parse_forest(forest).unwrap();
        let phi = parse_leaf_map(map, &g, &f).unwrap();
        ForestTriple::new(g, f, &phi).unwrap()
    }

    fn fig4_triple() -> ForestTriple {
        triple(
            "((a,b),((c,d),z,((e,f),x,(g,h))));",
            "((A,(E,X)),(B,F));\n((C,G),(D,(H,Z)));",
            "a\tA\nb\tB\nc\tC\nd\tD\ne\tE\nf\tF\ng\tG\nh\tH\nx\tX\nz\tZ\n",
        )
    }

    /// Fifth-figure instance: the given overlay satisfies (P1)-(P3) but not
    /// (S3) at the gene root.
    fn fig5() -> (ForestTriple, OsfMap) {
        let t = triple(
            "((a,b),(c,d));",
            "(A,C);\n(B,D);",
            "a\tA\nb\tB\nc\tC\nd\tD\n",
        );
        let root_t1 = ForestNode::new(0, t.forest.tree(0).root());
        let root_t2 = ForestNode::new(1, t.forest.tree(1).root());
        let g = &t.gene;
        let mut images = vec![root_t1; g.len()];
        for leaf in g.leaves() {
            images[leaf.index()] = t.phi(leaf);
        }
        let w1 = g.parent(g.node_by_label("a").unwrap()).unwrap();
        let w2 = g.parent(g.node_by_label("c").unwrap()).unwrap();
        images[w1.index()] = root_t2;
        images[w2.index()] = root_t2;
        images[g.root().index()] = root_t1;
        let psi = OsfMap::from_images(&t, images);
        (t, psi)
    }

    #[test]
    fn builder_output_passes_all_axioms() {
        let t = fig4_triple();
        let psi = build_osf(&t, &mut TieBreaker::first());
        assert!(check_osf(&t, &psi).unwrap().all_pass());
        assert!(check_strict(&t, &psi).unwrap().all_pass());
    }

    #[test]
    fn fig5_overlay_is_osf_but_not_strict() {
        let (t, psi) = fig5();
        let report = check_osf(&t, &psi).unwrap();
        assert!(report.all_pass(), "{report:?}");
        let strict = check_strict(&t, &psi).unwrap();
        let s3 = strict.s3.unwrap();
        assert!(!s3.pass);
        assert_eq!(s3.witness, Some(Witness::Vertex(t.gene.root())));
    }

    #[test]
    fn wrong_leaf_image_fails_p1_with_witness() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let a = t.gene.node_by_label("a").unwrap();
        let b_img = t.phi(t.gene.node_by_label("b").unwrap());
        let mut images = vec![ForestNode::new(0, t.forest.tree(0).root()); t.gene.len()];
        for leaf in t.gene.leaves() {
            images[leaf.index()] = t.phi(leaf);
        }
        images[a.index()] = b_img;
        let psi = OsfMap::from_images(&t, images);
        let report = check_osf(&t, &psi).unwrap();
        let p1 = report.p1.unwrap();
        assert!(!p1.pass);
        assert_eq!(p1.witness, Some(Witness::Vertex(a)));
    }

    #[test]
    fn sosf_implies_osf_on_random_small_instances() {
        // Strict overlays produced from introgression sets must pass the
        // plain overlay axioms as well.
        let (t, psi) = fig5();
        let intro = {
            let g = &t.gene;
            let w1 = g.parent(g.node_by_label("a").unwrap()).unwrap();
            let w2 = g.parent(g.node_by_label("c").unwrap()).unwrap();
            let arcs: BTreeSet<_> = [
                (w1, g.node_by_label("a").unwrap()),
                (w2, g.node_by_label("c").unwrap()),
            ]
            .into_iter()
            .collect();
            IntrogressionSet::new(&t, &arcs).unwrap()
        };
        let strict = osf_from_introgression_set(&t, &intro);
        assert!(is_strict_osf(&t, &strict).unwrap());
        assert!(check_osf(&t, &strict).unwrap().all_pass());
        assert_eq!(strict.contact_count(), 2);
        let _ = psi;
    }

    #[test]
    fn empty_set_is_introgression_set_for_single_tree() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let (ok, cond) = is_introgression_set(&t, &BTreeSet::new()).unwrap();
        assert!(ok);
        assert_eq!(cond, None);
    }

    #[test]
    fn fig5_named_set_is_introgression_set() {
        let (t, _) = fig5();
        let g = &t.gene;
        let w1 = g.parent(g.node_by_label("a").unwrap()).unwrap();
        let w2 = g.parent(g.node_by_label("c").unwrap()).unwrap();
        let arcs: BTreeSet<_> = [
            (w1, g.node_by_label("a").unwrap()),
            (w2, g.node_by_label("c").unwrap()),
        ]
        .into_iter()
        .collect();
        let (ok, _) = is_introgression_set(&t, &arcs).unwrap();
        assert!(ok);
    }

    #[test]
    fn cutting_all_out_arcs_violates_condition_i() {
        let t = triple("((a,b),c);", "(A,B);\n(C,C2);", "a\tA\nb\tB\nc\tC\n");
        let g = &t.gene;
        let w = g.parent(g.node_by_label("a").unwrap()).unwrap();
        let arcs: BTreeSet<_> = g.children(w).iter().map(|&c| (w, c)).collect();
        let (ok, cond) = is_introgression_set(&t, &arcs).unwrap();
        assert!(!ok);
        assert_eq!(cond, Some("i"));
    }

    #[test]
    fn mixed_component_violates_condition_ii() {
        let t = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        let (ok, cond) = is_introgression_set(&t, &BTreeSet::new()).unwrap();
        assert!(!ok);
        assert_eq!(cond, Some("ii"));
    }

    #[test]
    fn same_tree_neighbours_violate_condition_iii() {
        // Cutting one arc between two components that both map into tree 0.
        let t = triple("((a,b),c);", "(A,B,C);", "a\tA\nb\tB\nc\tC\n");
        let g = &t.gene;
        let w = g.parent(g.node_by_label("a").unwrap()).unwrap();
        let arcs: BTreeSet<_> = [(w, g.node_by_label("a").unwrap())].into_iter().collect();
        let (ok, cond) = is_introgression_set(&t, &arcs).unwrap();
        assert!(!ok);
        assert_eq!(cond, Some("iii"));
    }

    #[test]
    fn empty_set_reconstruction_matches_builder_on_single_tree() {
        let t = triple("((a,b),c);", "((A,B),(C,D));", "a\tA\nb\tB\nc\tC\n");
        let intro = IntrogressionSet::new(&t, &BTreeSet::new()).unwrap();
        let psi = osf_from_introgression_set(&t, &intro);
        let built = build_osf(&t, &mut TieBreaker::first());
        assert_eq!(psi, built);
    }

    #[test]
    fn introgression_roundtrip_on_fig5_set() {
        let (t, _) = fig5();
        let g = &t.gene;
        let w1 = g.parent(g.node_by_label("a").unwrap()).unwrap();
        let w2 = g.parent(g.node_by_label("c").unwrap()).unwrap();
        let arcs: BTreeSet<_> = [
            (w1, g.node_by_label("a").unwrap()),
            (w2, g.node_by_label("c").unwrap()),
        ]
        .into_iter()
        .collect();
        let intro = IntrogressionSet::new(&t, &arcs).unwrap();
        let psi = osf_from_introgression_set(&t, &intro);
        let back = introgression_set_of(&t, &psi).unwrap();
        assert_eq!(back.arcs(), &arcs);
    }

    #[test]
    fn zero_contact_overlay_yields_empty_set() {
        let t = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        let psi = build_osf(&t, &mut TieBreaker::first());
        let intro = introgression_set_of(&t, &psi).unwrap();
        assert!(intro.is_empty());
    }

    #[test]
    fn builder_output_on_fig4_has_three_cut_arcs() {
        let t = fig4_triple();
        let psi = build_osf(&t, &mut TieBreaker::first());
        let intro = introgression_set_of(&t, &psi).unwrap();
        assert_eq!(intro.len(), 3);
    }

    #[test]
    fn non_strict_overlay_is_rejected() {
        let (t, psi) = fig5();
        assert!(matches!(
            introgression_set_of(&t, &psi),
            Err(VerifyError::NotStrict(_))
        ));
    }

    #[test]
    fn oracle_basics() {
        let single = triple("(a,b);", "(A,B);", "a\tA\nb\tB\n");
        assert_eq!(brute_force_t(&single, 1 << 20).unwrap(), 0);

        let split = triple("(a,b);", "(A,A2);\n(B,B2);", "a\tA\nb\tB\n");
        assert_eq!(brute_force_t(&split, 1 << 20).unwrap(), 1);

        let fig4 = fig4_triple();
        assert_eq!(brute_force_t(&fig4, 1 << 20).unwrap(), 3);
    }

    #[test]
    fn oracle_cap_is_enforced() {
        let t = fig4_triple();
        assert!(matches!(
            brute_force_t(&t, 3),
            Err(VerifyError::CapExceeded { .. })
        ));
    }
}
