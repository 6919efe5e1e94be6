//! Jigsaw combinatorics: the permutation label space and tile shuffling.

mod permset;
mod tiles;

pub use permset::{
    hamming_distance, identity, inverse, is_bijection, min_pairwise_distance, Permutation, PermutationSet,
    MAX_ENUMERABLE_GRID,
};
pub use tiles::{decompose, recompose, shuffle_image, shuffle_tiles, TileGrid};
