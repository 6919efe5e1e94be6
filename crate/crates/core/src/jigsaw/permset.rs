//! Maximal-Hamming permutation sets.
//!
//! The label space of the jigsaw task is a small set of tile permutations
//! chosen to be as far apart as possible, so neighbouring labels never
//! differ by a single swap. Selection is greedy max-min over the full
//! enumeration of `(n²)!` permutations, which caps the grid at 3×3.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Permutation = Vec<usize>;

/// Largest grid side whose permutations we are willing to enumerate (9! =
/// 362 880 candidates).
pub const MAX_ENUMERABLE_GRID: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    grid_n: usize,
    perms: Vec<Permutation>,
    seed: u64,
}

pub fn hamming_distance(a: &[usize], b: &[usize]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "hamming_distance: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

pub fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

pub fn identity(len: usize) -> Permutation {
    (0..len).collect()
}

pub fn inverse(perm: &[usize]) -> Result<Permutation> {
    if !is_bijection(perm) {
        return Err(Error::invalid(format!("{perm:?} is not a permutation")));
    }
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    Ok(inv)
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Advances `p` to the next permutation in lexicographic order; false when
/// `p` was the last one.
fn next_permutation(p: &mut [u8]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

impl PermutationSet {
    /// Greedy max-min selection: start from the identity, then repeatedly add
    /// the candidate whose minimum Hamming distance to the chosen set is
    /// largest. Ties go to the lexicographically smallest candidate, so the
    /// result depends only on `(grid_n, count)`; `seed` is carried along as
    /// provenance.
    pub fn generate(grid_n: usize, count: usize, seed: u64) -> Result<Self> {
        if grid_n == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        if grid_n > MAX_ENUMERABLE_GRID {
            return Err(Error::invalid(format!(
                "grid {grid_n}x{grid_n} has too many permutations to enumerate (max grid {MAX_ENUMERABLE_GRID})"
            )));
        }
        let k = grid_n * grid_n;
        let total = factorial(k);
        if count == 0 || count as u128 > total {
            return Err(Error::invalid(format!(
                "permutation count {count} must be in 1..={total} for a {grid_n}x{grid_n} grid"
            )));
        }

        let mut all: Vec<u8> = Vec::with_capacity(k * total as usize);
        let mut cur: Vec<u8> = (0..k as u8).collect();
        loop {
            all.extend_from_slice(&cur);
            if !next_permutation(&mut cur) {
                break;
            }
        }
        let n_cand = all.len() / k;

        // min distance from each candidate to the chosen set; identity is
        // candidate 0 in lexicographic order.
        let mut min_dist = vec![u8::MAX; n_cand];
        let mut chosen = vec![0usize];
        let update = |min_dist: &mut [u8], pick: usize| {
            let p = &all[pick * k..(pick + 1) * k];
            for (c, slot) in min_dist.iter_mut().enumerate() {
                let q = &all[c * k..(c + 1) * k];
                let d = p.iter().zip(q).filter(|(a, b)| a != b).count() as u8;
                if d < *slot {
                    *slot = d;
                }
            }
        };
        update(&mut min_dist, 0);
        while chosen.len() < count {
            let mut best = 0usize;
            let mut best_d = 0u8;
            for (c, &d) in min_dist.iter().enumerate() {
                if d > best_d {
                    best_d = d;
                    best = c;
                }
            }
            // best_d == 0 only once every candidate is already chosen, which
            // the count check rules out.
            debug_assert!(best_d > 0);
            chosen.push(best);
            update(&mut min_dist, best);
        }

        let perms = chosen
            .iter()
            .map(|&c| all[c * k..(c + 1) * k].iter().map(|&x| x as usize).collect())
            .collect();
        Ok(PermutationSet { grid_n, perms, seed })
    }

    pub fn from_parts(grid_n: usize, perms: Vec<Permutation>, seed: u64) -> Result<Self> {
        let k = grid_n * grid_n;
        if perms.is_empty() {
            return Err(Error::invalid("empty permutation set"));
        }
        for (i, p) in perms.iter().enumerate() {
            if p.len() != k || !is_bijection(p) {
                return Err(Error::invalid(format!(
                    "permutation {i} is not a bijection on 0..{k}: {p:?}"
                )));
            }
        }
        if perms[0] != identity(k) {
            return Err(Error::invalid("permutation 0 must be the identity"));
        }
        for i in 0..perms.len() {
            if perms[..i].contains(&perms[i]) {
                return Err(Error::invalid(format!("permutation {i} is a duplicate")));
            }
        }
        Ok(PermutationSet { grid_n, perms, seed })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn get(&self, index: usize) -> &[usize] {
        &self.perms[index]
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    /// Smallest Hamming distance over all pairs (0 for a single element).
    pub fn min_pairwise_distance(&self) -> usize {
        min_pairwise_distance(&self.perms)
    }

    /// Text form: `grid P seed` header, then one space-separated permutation
    /// per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.grid_n, self.perms.len(), self.seed);
        for p in &self.perms {
            let line: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "permutation set";
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format(ctx, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [grid, count, seed] = fields[..] else {
            return Err(Error::format(
                ctx,
                format!("header must be `grid P seed`, got {header:?}"),
            ));
        };
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::format(ctx, format!("bad {what} {s:?}")))
        };
        let grid = parse(grid, "grid")? as usize;
        let count = parse(count, "P")? as usize;
        let seed = parse(seed, "seed")?;
        let mut perms = Vec::with_capacity(count);
        for line in lines {
            let p = line
                .split_whitespace()
                .map(|s| parse(s, "index").map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            perms.push(p);
        }
        if perms.len() != count {
            return Err(Error::format(
                ctx,
                format!("header says {count} permutations, found {}", perms.len()),
            ));
        }
        Self::from_parts(grid, perms, seed).map_err(|e| Error::format(ctx, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn min_pairwise_distance(perms: &[Permutation]) -> usize {
    let mut best = usize::MAX;
    for i in 0..perms.len() {
        for j in i + 1..perms.len() {
            let d = perms[i].iter().zip(&perms[j]).filter(|(a, b)| a != b).count();
            best = best.min(d);
        }
    }
    if best == usize::MAX {
        0
    } else {
        best
    }
}
