//! Structured-output learning of the score weights.
//!
//! Solves the n-slack margin-rescaled problem
//!
//! ```text
//! min  1/2 |alpha|^2 + gamma * sum_I xi_I
//! s.t. <alpha, Phi_I(l*)> - <alpha, Phi_I(l)> >= Delta(l, l*) - xi_I,  xi_I >= 0
//! ```
//!
//! by constraint generation. Each round runs loss-augmented inference on
//! every training image, adds the constraints violated by more than the
//! current slack plus `epsilon`, and re-solves the restricted QP.
//!
//! The restricted QP is solved in its dual, where every image owns a block
//! of multipliers summing to at most `gamma`. Pairwise (SMO-style) updates
//! within a block keep the dual feasible and monotonically increase it, and
//! multipliers are warm-started between rounds.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, overlap_loss, Window};
use crate::hyperfeatures::{HyperFeatureVector, WeightVector, NUM_FEATURES};

/// One training image with its per-candidate features cached.
#[derive(Debug, Clone)]
pub struct TrainingImage {
    features: Vec<HyperFeatureVector>,
    best: usize,
    losses: Vec<f64>,
}

impl TrainingImage {
    pub fn new(features: Vec<HyperFeatureVector>, windows: &[Window], ground_truth: &Window) -> Result<Self> {
        if features.is_empty() || features.len() != windows.len() {
            return Err(Error::Invalid(format!(
                "training image needs one feature vector per window ({} vs {})",
                features.len(),
                windows.len()
            )));
        }
        let best = best_candidate(windows, ground_truth);
        let losses = windows.iter().map(|w| overlap_loss(w, &windows[best])).collect();
        Ok(TrainingImage {
            features,
            best,
            losses,
        })
    }

    /// Direct construction from features, a designated best index and
    /// losses; used for hand-built problems.
    pub fn from_parts(features: Vec<HyperFeatureVector>, best: usize, losses: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != losses.len() || best >= features.len() {
            return Err(Error::Invalid("inconsistent training image".into()));
        }
        if losses[best] != 0.0 || !losses.iter().all(|d| (0.0..=1.0).contains(d)) {
            return Err(Error::Invalid("losses must lie in [0,1] with zero at the best window".into()));
        }
        Ok(TrainingImage {
            features,
            best,
            losses,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn best(&self) -> usize {
        self.best
    }

    pub fn features(&self) -> &[HyperFeatureVector] {
        &self.features
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// `Phi(l*) - Phi(l)`.
    pub fn feature_difference(&self, l: usize) -> [f64; NUM_FEATURES] {
        let a = &self.features[self.best].0;
        let b = &self.features[l].0;
        std::array::from_fn(|k| a[k] - b[k])
    }

    /// `Delta(l, l*) - <alpha, Phi(l*) - Phi(l)>`.
    pub fn violation(&self, alpha: &WeightVector, l: usize) -> f64 {
        self.losses[l] - alpha.dot(&self.feature_difference(l))
    }
}

/// Index of the candidate with the largest overlap with the ground truth;
/// lowest index on ties.
pub fn best_candidate(windows: &[Window], ground_truth: &Window) -> usize {
    let mut best = 0;
    let mut best_ov = f64::NEG_INFINITY;
    for (i, w) in windows.iter().enumerate() {
        let ov = overlap(w, ground_truth);
        if ov > best_ov {
            best_ov = ov;
            best = i;
        }
    }
    best
}

/// Loss-augmented inference: the window `l != l*` maximizing
/// `<alpha, Phi(l)> + Delta(l, l*)`, with its violation
/// `that value - <alpha, Phi(l*)>`. `None` for single-window images.
pub fn most_violated_constraint(alpha: &WeightVector, image: &TrainingImage) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (l, (phi, loss)) in image.features.iter().zip(&image.losses).enumerate() {
        if l == image.best {
            continue;
        }
        let v = alpha.score(phi) + loss;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((l, v));
        }
    }
    let target = alpha.score(&image.features[image.best]);
    best.map(|(l, v)| (l, v - target))
}

/// A margin constraint `<alpha, diff> >= loss - xi_image`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub image: usize,
    pub window: usize,
    pub diff: [f64; NUM_FEATURES],
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Stop when the largest KKT gap within any block is below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tolerance: 1e-10,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub alpha: WeightVector,
    /// One slack per image, implied by `alpha` and the working set.
    pub xi: Vec<f64>,
    /// Primal objective at `alpha`.
    pub objective: f64,
    /// Dual objective; a lower bound on the restricted optimum.
    pub dual_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dual state of the restricted QP; reused across rounds for warm starts.
#[derive(Debug, Clone)]
pub struct QpSolver {
    gamma: f64,
    num_images: usize,
    constraints: Vec<Constraint>,
    lambda: Vec<f64>,
    /// Per-image multiplier of the implicit `xi_I >= 0` slot.
    idle: Vec<f64>,
    blocks: Vec<Vec<usize>>,
    alpha: [f64; NUM_FEATURES],
}

impl QpSolver {
    pub fn new(num_images: usize, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        Ok(QpSolver {
            gamma,
            num_images,
            constraints: Vec::new(),
            lambda: Vec::new(),
            idle: vec![gamma; num_images],
            blocks: vec![Vec::new(); num_images],
            alpha: [0.0; NUM_FEATURES],
        })
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn add(&mut self, c: Constraint) -> Result<()> {
        if c.image >= self.num_images {
            return Err(Error::Invalid(format!("constraint for unknown image {}", c.image)));
        }
        self.blocks[c.image].push(self.constraints.len());
        self.constraints.push(c);
        self.lambda.push(0.0);
        Ok(())
    }

    #[inline]
    fn gradient(&self, c: usize) -> f64 {
        let con = &self.constraints[c];
        con.loss - dot(&self.alpha, &con.diff)
    }

    /// Largest KKT gap and its block, if any block has constraints.
    fn block_gap(&self, b: usize) -> f64 {
        let mut gmax: f64 = 0.0; // idle slot gradient is zero
        let mut gmin_active = if self.idle[b] > 0.0 { 0.0 } else { f64::INFINITY };
        for &c in &self.blocks[b] {
            let g = self.gradient(c);
            gmax = gmax.max(g);
            if self.lambda[c] > 0.0 {
                gmin_active = gmin_active.min(g);
            }
        }
        if gmin_active.is_finite() {
            gmax - gmin_active
        } else {
            0.0
        }
    }

    /// One pairwise update in block `b`; returns false when nothing moved.
    fn step(&mut self, b: usize) -> bool {
        // None stands for the idle slot (zero vector, zero loss).
        let mut up: (Option<usize>, f64) = (None, 0.0);
        let mut down: (Option<usize>, f64) = if self.idle[b] > 0.0 {
            (None, 0.0)
        } else {
            (None, f64::INFINITY)
        };
        for &c in &self.blocks[b] {
            let g = self.gradient(c);
            if g > up.1 {
                up = (Some(c), g);
            }
            if self.lambda[c] > 0.0 && g < down.1 {
                down = (Some(c), g);
            }
        }
        if !down.1.is_finite() || up.0 == down.0 || up.1 - down.1 <= 0.0 {
            return false;
        }
        let zero = [0.0; NUM_FEATURES];
        let di = up.0.map_or(&zero, |c| &self.constraints[c].diff);
        let dj = down.0.map_or(&zero, |c| &self.constraints[c].diff);
        let dir: [f64; NUM_FEATURES] = std::array::from_fn(|k| di[k] - dj[k]);
        let curv = dot(&dir, &dir);
        let avail = down.0.map_or(self.idle[b], |c| self.lambda[c]);
        let t = if curv > 0.0 {
            ((up.1 - down.1) / curv).min(avail)
        } else {
            avail
        };
        if t <= 0.0 {
            return false;
        }
        match up.0 {
            Some(c) => self.lambda[c] += t,
            None => self.idle[b] += t,
        }
        match down.0 {
            Some(c) => self.lambda[c] = (self.lambda[c] - t).max(0.0),
            None => self.idle[b] = (self.idle[b] - t).max(0.0),
        }
        for k in 0..NUM_FEATURES {
            self.alpha[k] += t * dir[k];
        }
        true
    }

    pub fn solve(&mut self, opts: QpOptions) -> QpSolution {
        let mut iterations = 0;
        let mut converged = false;
        'outer: while iterations < opts.max_iterations {
            let mut worst = 0.0f64;
            for b in 0..self.num_images {
                if self.blocks[b].is_empty() {
                    continue;
                }
                // a few sweeps on a block before moving on
                for _ in 0..8 {
                    let gap = self.block_gap(b);
                    worst = worst.max(gap);
                    if gap <= opts.tolerance || !self.step(b) {
                        break;
                    }
                    iterations += 1;
                    if iterations >= opts.max_iterations {
                        break 'outer;
                    }
                }
            }
            if worst <= opts.tolerance {
                converged = true;
                break;
            }
            // re-check after the sweep
            if (0..self.num_images).all(|b| self.block_gap(b) <= opts.tolerance) {
                converged = true;
                break;
            }
        }
        if !converged {
            converged = (0..self.num_images).all(|b| self.block_gap(b) <= opts.tolerance);
        }
        self.solution(iterations, converged)
    }

    fn solution(&self, iterations: usize, converged: bool) -> QpSolution {
        let alpha = WeightVector(self.alpha);
        let xi = self.slacks(&alpha);
        let norm2 = alpha.norm_squared();
        let objective = 0.5 * norm2 + self.gamma * xi.iter().sum::<f64>();
        let dual_objective = self
            .constraints
            .iter()
            .zip(&self.lambda)
            .map(|(c, l)| l * c.loss)
            .sum::<f64>()
            - 0.5 * norm2;
        QpSolution {
            alpha,
            xi,
            objective,
            dual_objective,
            iterations,
            converged,
        }
    }

    /// `xi_I = max(0, max over the image's working-set constraints of the violation)`.
    pub fn slacks(&self, alpha: &WeightVector) -> Vec<f64> {
        let mut xi = vec![0.0f64; self.num_images];
        for c in &self.constraints {
            let v = c.loss - alpha.dot(&c.diff);
            xi[c.image] = xi[c.image].max(v);
        }
        xi
    }
}

#[inline]
fn dot(a: &[f64; NUM_FEATURES], b: &[f64; NUM_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the QP restricted to `working_set` from a cold start.
pub fn solve_qp(working_set: &[Constraint], num_images: usize, gamma: f64, opts: QpOptions) -> Result<QpSolution> {
    let mut s = QpSolver::new(num_images, gamma)?;
    for c in working_set {
        s.add(c.clone())?;
    }
    Ok(s.solve(opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub max_rounds: usize,
    pub qp_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1.0,
            epsilon: 1e-3,
            max_rounds: 100,
            qp_tolerance: 1e-10,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Restricted-problem objective (dual value of the warm-started solve).
    pub objective: f64,
    pub primal_objective: f64,
    pub added: usize,
    pub max_violation: f64,
    pub working_set: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub alpha: WeightVector,
    pub converged: bool,
    pub rounds: usize,
    pub log: Vec<RoundLog>,
    pub working_set: Vec<Constraint>,
    pub xi: Vec<f64>,
    /// Primal objective of the final restricted problem.
    pub objective: f64,
}

pub fn train_structured(images: &[TrainingImage], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if images.is_empty() {
        return Err(Error::Invalid("structured training needs at least one image".into()));
    }
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidConfig("epsilon must be > 0".into()));
    }
    let mut solver = QpSolver::new(images.len(), cfg.gamma)?;
    let opts = QpOptions {
        tolerance: cfg.qp_tolerance,
        ..QpOptions::default()
    };
    let mut in_set: HashSet<(usize, usize)> = HashSet::new();
    let mut sol = solver.solve(opts);
    let mut log = Vec::new();
    let mut converged = false;
    let mut rounds = 0;

    while rounds < cfg.max_rounds {
        let alpha = sol.alpha;
        let found: Vec<Option<(usize, f64)>> = images
            .par_iter()
            .map(|img| most_violated_constraint(&alpha, img))
            .collect();
        let mut added = 0;
        let mut max_violation = f64::NEG_INFINITY;
        for (i, f) in found.into_iter().enumerate() {
            let Some((l, v)) = f else { continue };
            max_violation = max_violation.max(v - sol.xi[i]);
            if v > sol.xi[i] + cfg.epsilon && in_set.insert((i, l)) {
                solver.add(Constraint {
                    image: i,
                    window: l,
                    diff: images[i].feature_difference(l),
                    loss: images[i].losses[l],
                })?;
                added += 1;
            }
        }
        if added == 0 {
            converged = true;
            break;
        }
        rounds += 1;
        sol = solver.solve(opts);
        log.push(RoundLog {
            round: rounds,
            objective: sol.dual_objective,
            primal_objective: sol.objective,
            added,
            max_violation,
            working_set: solver.constraints().len(),
        });
        log::debug!(
            "round {rounds}: objective {:.6} added {added} working set {}",
            sol.dual_objective,
            solver.constraints().len()
        );
    }
    if !converged {
        // the final solve may already satisfy every constraint
        converged = images.iter().enumerate().all(|(i, img)| {
            most_violated_constraint(&sol.alpha, img).is_none_or(|(_, v)| v <= sol.xi[i] + cfg.epsilon)
        });
    }
    Ok(TrainOutcome {
        alpha: sol.alpha,
        converged,
        rounds,
        log,
        working_set: solver.constraints,
        xi: sol.xi,
        objective: sol.objective,
    })
}
