use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapejig::jigsaw::{decompose, hamming_distance, identity, inverse, recompose, shuffle_tiles, PermutationSet};
use shapejig::Tensor;

/// Exhaustive pairwise minimum, written independently of the library helper.
fn oracle_min_distance(perms: &[Vec<usize>]) -> usize {
    let mut best = usize::MAX;
    for (i, a) in perms.iter().enumerate() {
        for b in &perms[i + 1..] {
            best = best.min(hamming_distance(a, b).unwrap());
        }
    }
    best
}

#[test]
fn grid_two_full_set_is_every_permutation() {
    let set = PermutationSet::generate(2, 24, 0).unwrap();
    let got: BTreeSet<Vec<usize>> = set.perms().iter().cloned().collect();
    assert_eq!(got.len(), 24);
    // brute-force enumeration of S4
    let mut all = BTreeSet::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = vec![a, b, c, d];
                    if BTreeSet::from_iter(p.iter().copied()).len() == 4 {
                        all.insert(p);
                    }
                }
            }
        }
    }
    assert_eq!(got, all);
    assert_eq!(set.get(0), identity(4).as_slice());
}

#[test]
fn grid_three_thirty_is_max_min() {
    let set = PermutationSet::generate(3, 30, 17).unwrap();
    assert_eq!(set.len(), 30);
    assert_eq!(set.get(0), identity(9).as_slice());
    let distinct: BTreeSet<_> = set.perms().iter().collect();
    assert_eq!(distinct.len(), 30);
    for p in set.perms() {
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, identity(9));
    }
    let min_d = oracle_min_distance(set.perms());
    assert_eq!(min_d, set.min_pairwise_distance());

    // Best of 1000 random 30-sets (each containing the identity) must not
    // beat the greedy selection.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut best_random = 0;
    for _ in 0..1000 {
        let mut perms = vec![identity(9)];
        while perms.len() < 30 {
            let mut p = identity(9);
            p.shuffle(&mut rng);
            if !perms.contains(&p) {
                perms.push(p);
            }
        }
        best_random = best_random.max(oracle_min_distance(&perms));
    }
    assert!(min_d >= best_random, "greedy {min_d} < random {best_random}");
}

#[test]
fn generation_is_deterministic() {
    let a = PermutationSet::generate(3, 12, 5).unwrap();
    let b = PermutationSet::generate(3, 12, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn permset_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("perms.txt");
    let set = PermutationSet::generate(3, 30, 3).unwrap();
    set.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("3 30 3\n0 1 2 3 4 5 6 7 8\n"));
    assert_eq!(PermutationSet::load(&path).unwrap(), set);
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, side: usize) -> Tensor {
    Tensor::from_fn(&[c, side, side], |_| rng.gen_range(0.0..1.0))
}

#[test]
fn shuffled_image_keeps_pixel_multiset() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 3, 12);
    let mut perm = identity(9);
    perm.shuffle(&mut rng);
    let out = recompose(&shuffle_tiles(&decompose(&img, 3).unwrap(), &perm).unwrap()).unwrap();
    let key = |t: &Tensor| {
        let mut v: Vec<u64> = t.data().iter().map(|x| x.to_bits()).collect();
        v.sort_unstable();
        v
    };
    assert_eq!(key(&out), key(&img));
    assert_ne!(out, img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tiling_roundtrips_are_bit_exact(seed in any::<u64>(), grid in 1usize..=3, c in 1usize..=3, tile in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, c, grid * tile);
        let tiles = decompose(&img, grid).unwrap();
        prop_assert_eq!(&recompose(&tiles).unwrap(), &img);

        let mut perm = identity(grid * grid);
        perm.shuffle(&mut rng);
        let shuffled = shuffle_tiles(&tiles, &perm).unwrap();
        let restored = shuffle_tiles(&shuffled, &inverse(&perm).unwrap()).unwrap();
        prop_assert_eq!(&restored, &tiles);
        prop_assert_eq!(&recompose(&restored).unwrap(), &img);
    }
}
