//! Shared sign-flip assignments.
//!
//! A plan is a w x n matrix of +/-1 entries whose first row is the identity
//! flip. Random rows are drawn from a ChaCha8 stream (`rand_chacha` 0.9)
//! seeded from a single `u64`, so a plan is a pure function of
//! `(n, w, seed)` and reproduces bit-for-bit across platforms and thread
//! counts. The identity row participates in the reference distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest n for which exhaustive enumeration (2^n rows) is allowed.
pub const EXHAUSTIVE_MAX_N: usize = 20;

/// A w x n sign assignment, identity flip first.
#[derive(Debug, Clone)]
pub struct FlipPlan {
    signs: Vec<f64>, // row-major, entries +/-1.0
    n: usize,
    w: usize,
    seed: u64,
    exhaustive: bool,
}

impl FlipPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_flips(&self) -> usize {
        self.w
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    /// Row `j` as a slice of +/-1.0 values.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.signs[j * self.n..(j + 1) * self.n]
    }
}

/// Identity flip first, then `w - 1` rows sampled i.i.d. uniform on
/// {-1, +1}^n with replacement.
pub fn make_plan(n: usize, w: usize, seed: u64) -> FlipPlan {
    assert!(n >= 1, "flip plan needs n >= 1");
    assert!(w >= 2, "flip plan needs w >= 2");
    let mut signs = Vec::with_capacity(w * n);
    signs.extend(std::iter::repeat_n(1.0, n));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: u64 = 0;
    let mut bits_left = 0usize;
    for _ in 1..w {
        for _ in 0..n {
            if bits_left == 0 {
                buf = rng.random::<u64>();
                bits_left = 64;
            }
            signs.push(if buf & 1 == 1 { -1.0 } else { 1.0 });
            buf >>= 1;
            bits_left -= 1;
        }
    }
    FlipPlan {
        signs,
        n,
        w,
        seed,
        exhaustive: false,
    }
}

/// All 2^n sign vectors: identity first, then in the fixed order where bit i
/// of the row index flips coordinate i.
pub fn make_exhaustive(n: usize) -> Result<FlipPlan> {
    if n > EXHAUSTIVE_MAX_N {
        return Err(Error::TooLarge {
            n,
            max: EXHAUSTIVE_MAX_N,
        });
    }
    assert!(n >= 1, "flip plan needs n >= 1");
    let w = 1usize << n;
    let mut signs = Vec::with_capacity(w * n);
    for idx in 0..w {
        for i in 0..n {
            signs.push(if idx >> i & 1 == 1 { -1.0 } else { 1.0 });
        }
    }
    Ok(FlipPlan {
        signs,
        n,
        w,
        seed: 0,
        exhaustive: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = make_plan(7, 64, 99);
        let b = make_plan(7, 64, 99);
        assert_eq!(a.signs, b.signs);
        let c = make_plan(7, 64, 100);
        assert_ne!(a.signs, c.signs);
    }

    #[test]
    fn first_row_is_identity() {
        for seed in [0u64, 1, 123456789] {
            let p = make_plan(5, 16, seed);
            assert!(p.row(0).iter().all(|&s| s == 1.0));
        }
        let p = make_exhaustive(4).unwrap();
        assert!(p.row(0).iter().all(|&s| s == 1.0));
    }

    #[test]
    fn entries_are_signs() {
        let p = make_plan(9, 200, 7);
        assert!(p.signs.iter().all(|&s| s == 1.0 || s == -1.0));
    }

    #[test]
    fn exhaustive_small_cases() {
        let p = make_exhaustive(1).unwrap();
        assert_eq!(p.n_flips(), 2);
        assert_eq!(p.row(0), &[1.0]);
        assert_eq!(p.row(1), &[-1.0]);

        let p = make_exhaustive(3).unwrap();
        assert_eq!(p.n_flips(), 8);
        let distinct: HashSet<Vec<i8>> = (0..8)
            .map(|j| p.row(j).iter().map(|&s| s as i8).collect())
            .collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn exhaustive_n12_distinct_identity_first() {
        let p = make_exhaustive(12).unwrap();
        assert_eq!(p.n_flips(), 4096);
        assert!(p.row(0).iter().all(|&s| s == 1.0));
        let distinct: HashSet<Vec<i8>> = (0..4096)
            .map(|j| p.row(j).iter().map(|&s| s as i8).collect())
            .collect();
        assert_eq!(distinct.len(), 4096);
    }

    #[test]
    fn exhaustive_closed_under_negation() {
        let p = make_exhaustive(5).unwrap();
        let rows: HashSet<Vec<i8>> = (0..p.n_flips())
            .map(|j| p.row(j).iter().map(|&s| s as i8).collect())
            .collect();
        for j in 0..p.n_flips() {
            let neg: Vec<i8> = p.row(j).iter().map(|&s| -s as i8).collect();
            assert!(rows.contains(&neg));
        }
    }

    #[test]
    fn too_large_rejected() {
        assert!(matches!(
            make_exhaustive(21),
            Err(Error::TooLarge { n: 21, .. })
        ));
    }

    #[test]
    fn random_rows_uniform() {
        // n=3, w=10^5: per-coordinate mean within 3 sqrt(1/w) of zero, and
        // each of the 8 patterns within 3 sqrt((1/8)(7/8)/w) of 1/8.
        let n = 3;
        let w = 100_000;
        let p = make_plan(n, w, 2024);
        let draws = (w - 1) as f64; // random rows only

        for i in 0..n {
            let mean: f64 = (1..w).map(|j| p.row(j)[i]).sum::<f64>() / draws;
            assert!(
                mean.abs() <= 3.0 * (1.0 / draws).sqrt(),
                "coordinate {i} mean {mean}"
            );
        }

        let mut counts = [0usize; 8];
        for j in 1..w {
            let mut pat = 0usize;
            for (i, &s) in p.row(j).iter().enumerate() {
                if s < 0.0 {
                    pat |= 1 << i;
                }
            }
            counts[pat] += 1;
        }
        let tol = 3.0 * ((1.0 / 8.0) * (7.0 / 8.0) / draws).sqrt();
        for (pat, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws;
            assert!(
                (freq - 0.125).abs() <= tol,
                "pattern {pat} frequency {freq} outside 1/8 +/- {tol}"
            );
        }
    }
}
