//! Maximizing the score over candidate windows.
//!
//! [`infer_brute`] evaluates every candidate. [`infer_fast`] first computes
//! a cheap upper bound for each candidate by replacing every pair term of
//! the global feature with its largest possible contribution, visits the
//! candidates in descending bound order, and stops as soon as the next bound
//! falls below the best exact score seen. Both return the same window; ties
//! go to the lowest index.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::geometry::Relation;
use crate::hyperfeatures::{
    assemble_phi, phi_c_field, phi_l_field, phi_s_at, RelationField, SceneContext, WeightVector, C,
    L, S_MU, S_SIGMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InferenceResult {
    pub best_index: usize,
    pub best_score: f64,
    /// Candidates whose exact global feature was computed.
    pub full_evaluations: usize,
    #[serde(serialize_with = "ser_secs")]
    pub elapsed: Duration,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Absolute slack, relative to the running maximum, below which a bound is
/// still treated as reaching it. Covers summation-order rounding between the
/// bound and the exact score.
const PRUNE_SLACK: f64 = 1e-10;

/// Exact score of candidate `l`.
#[inline]
fn exact_score(alpha: &WeightVector, ctx: &SceneContext, l: usize) -> f64 {
    alpha.score(&assemble_phi(ctx, l))
}

pub fn infer_brute(alpha: &WeightVector, ctx: &SceneContext) -> InferenceResult {
    let start = Instant::now();
    let mut best_index = 0;
    let mut best_score = f64::NEG_INFINITY;
    for l in 0..ctx.len() {
        let s = exact_score(alpha, ctx, l);
        if s > best_score {
            best_score = s;
            best_index = l;
        }
    }
    InferenceResult {
        best_index,
        best_score,
        full_evaluations: ctx.len(),
        elapsed: start.elapsed(),
    }
}

/// Every candidate's exact score, in index order.
pub fn score_table(alpha: &WeightVector, ctx: &SceneContext) -> Vec<f64> {
    (0..ctx.len()).map(|l| exact_score(alpha, ctx, l)).collect()
}

/// Sum of the kernel over all unordered pairs `i < j`.
pub fn pair_kernel_sum(ctx: &SceneContext) -> f64 {
    let n = ctx.len();
    (0..n.saturating_sub(1))
        .map(|i| ctx.kernel_row(i)[i + 1..].iter().sum::<f64>())
        .sum()
}

/// The part of the bound that does not depend on the candidate: for each
/// relation with a positive global weight, that weight times the normalized
/// pair-kernel sum.
pub fn global_bound(alpha: &WeightVector, ctx: &SceneContext, kernel_pair_sum: f64) -> f64 {
    let mean_k = ctx.pair_normalizer() * kernel_pair_sum;
    Relation::ALL
        .iter()
        .map(|&r| alpha.global(r).max(0.0) * mean_k)
        .sum()
}

fn bound_with(alpha: &WeightVector, ctx: &SceneContext, l: usize, g_bound: f64) -> f64 {
    let field = RelationField::new(ctx, l);
    let phl = phi_l_field(ctx, &field, l);
    let phc = phi_c_field(ctx, &field);
    let [mu, sigma] = phi_s_at(ctx, l);
    let mut s = g_bound;
    for r in 0..3 {
        s += alpha[L + r] * phl[r] + alpha[C + r] * phc[r];
    }
    s + alpha[S_MU] * mu + alpha[S_SIGMA] * sigma
}

/// Upper bound on the score of candidate `l`. Computes the pair-kernel sum
/// afresh; [`infer_fast`] shares it across candidates.
pub fn upper_bound(alpha: &WeightVector, ctx: &SceneContext, l: usize) -> f64 {
    let g = global_bound(alpha, ctx, pair_kernel_sum(ctx));
    bound_with(alpha, ctx, l, g)
}

/// Bounds for every candidate, in index order.
pub fn upper_bounds(alpha: &WeightVector, ctx: &SceneContext) -> Vec<f64> {
    let g = global_bound(alpha, ctx, pair_kernel_sum(ctx));
    (0..ctx.len()).map(|l| bound_with(alpha, ctx, l, g)).collect()
}

pub fn infer_fast(alpha: &WeightVector, ctx: &SceneContext) -> InferenceResult {
    let start = Instant::now();
    let bounds = upper_bounds(alpha, ctx);
    let mut queue: Vec<usize> = (0..ctx.len()).collect();
    queue.sort_by(|&a, &b| match bounds[b].total_cmp(&bounds[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });

    let mut best_index = queue[0];
    let mut best_score = f64::NEG_INFINITY;
    let mut full_evaluations = 0;
    for &l in &queue {
        if full_evaluations > 0 && bounds[l] < best_score - PRUNE_SLACK * (1.0 + best_score.abs()) {
            // descending queue: nothing later can reach the maximum
            break;
        }
        let s = exact_score(alpha, ctx, l);
        full_evaluations += 1;
        if s > best_score || (s == best_score && l < best_index) {
            best_score = s;
            best_index = l;
        }
    }
    InferenceResult {
        best_index,
        best_score,
        full_evaluations,
        elapsed: start.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Window;
    use crate::gp::{ArdKernel, KernelConfig, RelationPrediction};
    use crate::hyperfeatures::{NUM_FEATURES, G};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SceneContext {
        let windows = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..80.0);
                let y = rng.random_range(0.0..80.0);
                let w = rng.random_range(2.0..40.0);
                let h = rng.random_range(2.0..40.0);
                Window::new(x, y, x + w, y + h).unwrap()
            })
            .collect();
        let app = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let preds = (0..n)
            .map(|_| RelationPrediction {
                raw_mean: [rng.random_range(-0.1..1.1), rng.random(), rng.random()],
                sigma: rng.random_range(0.0..0.5),
            })
            .collect();
        let k = ArdKernel::new(&KernelConfig::isotropic(3, 0.7, 1.0, 0.0));
        SceneContext::new(windows, app, preds, &k).unwrap()
    }

    fn random_alpha(rng: &mut ChaCha8Rng) -> WeightVector {
        let mut a = WeightVector::zeros();
        for i in 0..NUM_FEATURES {
            a[i] = rng.random_range(-2.0..2.0);
        }
        a
    }

    #[test]
    fn single_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = random_scene(&mut rng, 1);
        let a = random_alpha(&mut rng);
        let f = infer_fast(&a, &ctx);
        assert_eq!((f.best_index, f.full_evaluations), (0, 1));
        assert_eq!(infer_brute(&a, &ctx).best_index, 0);
    }

    #[test]
    fn bound_is_tight_without_global_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = random_scene(&mut rng, 30);
        let mut a = random_alpha(&mut rng);
        for r in 0..3 {
            a[G + r] = 0.0;
        }
        let bounds = upper_bounds(&a, &ctx);
        let scores = score_table(&a, &ctx);
        for (b, s) in bounds.iter().zip(&scores) {
            assert!((b - s).abs() < 1e-12);
        }
        let f = infer_fast(&a, &ctx);
        assert_eq!(f.full_evaluations, 1);
        assert_eq!(f.best_index, infer_brute(&a, &ctx).best_index);
    }

    #[test]
    fn negative_global_weights_give_zero_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = random_scene(&mut rng, 25);
        let mut a = random_alpha(&mut rng);
        for r in 0..3 {
            a[G + r] = -rng.random_range(0.1..2.0);
        }
        for l in 0..ctx.len() {
            let phi = assemble_phi(&ctx, l);
            let gap = upper_bound(&a, &ctx, l) - a.score(&phi);
            let expected: f64 = (0..3).map(|r| -a[G + r] * phi[G + r]).sum();
            assert!(gap >= -1e-12);
            assert!((gap - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn score_only_weights_pick_max_predicted_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = random_scene(&mut rng, 40);
        let a = WeightVector::unit(S_MU);
        let want = ctx
            .predictions()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                if p.mu_overlap() > acc.1 {
                    (i, p.mu_overlap())
                } else {
                    acc
                }
            })
            .0;
        assert_eq!(infer_brute(&a, &ctx).best_index, want);
        assert_eq!(infer_fast(&a, &ctx).best_index, want);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let w = Window::new(0.0, 0.0, 5.0, 5.0).unwrap();
        let p = RelationPrediction {
            raw_mean: [0.5, 0.5, 0.5],
            sigma: 0.1,
        };
        let k = ArdKernel::new(&KernelConfig::isotropic(1, 1.0, 1.0, 0.0));
        let ctx = SceneContext::new(vec![w; 6], vec![vec![0.0]; 6], vec![p; 6], &k).unwrap();
        let mut a = WeightVector::unit(S_MU);
        a[G] = 1.0;
        let b = infer_brute(&a, &ctx);
        let f = infer_fast(&a, &ctx);
        assert_eq!(b.best_index, 0);
        assert_eq!(f.best_index, 0);
        assert_eq!(b.best_score, f.best_score);
    }

    #[test]
    fn fast_matches_brute_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let n = rng.random_range(2..60);
            let ctx = random_scene(&mut rng, n);
            let a = random_alpha(&mut rng);
            let b = infer_brute(&a, &ctx);
            let f = infer_fast(&a, &ctx);
            assert_eq!(b.best_index, f.best_index);
            assert!((b.best_score - f.best_score).abs() <= 1e-9);
            assert!(f.full_evaluations >= 1 && f.full_evaluations <= n);
            let scores = score_table(&a, &ctx);
            for (bd, s) in upper_bounds(&a, &ctx).iter().zip(&scores) {
                assert!(*bd >= s - 1e-12);
            }
        }
    }
}
