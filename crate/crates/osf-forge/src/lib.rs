//! Overlaid species forests: constructing minimum-contact-arc overlays of a
//! gene tree onto a species forest, checking the overlay and network axioms,
//! converting between introgression sets and strict overlays, deciding
//! network validity via unfolding, and probing score stability under
//! subtree-prune-and-regraft edits.
//!
//! The crate is organised around the pipeline
//!
//! ```text
//! newick -> model -> builder -> verify
//!                          \-> network (representation, validity, resolution)
//!                          \-> perturb (SPR experiments)
//! ```
//!
//! Every operation is a pure function over immutable inputs; randomized
//! pieces take an explicit seed.

pub mod builder;
pub mod model;
pub mod network;
pub mod newick;
pub mod perturb;
pub mod verify;

pub use builder::{build_osf, character_of, parsimony_score, Character, OsfMap, TieBreaker};
pub use model::{Forest, ForestNode, ForestTriple, Network, NodeId, PhyloTree};
pub use verify::{brute_force_t, check_osf, check_strict, IntrogressionSet};
