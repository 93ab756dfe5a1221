//! Zero-mean Gaussian-process regression of relation triples from
//! appearance vectors.
//!
//! One Gram matrix and one Cholesky factor are shared by the three relation
//! targets, so the predictive standard deviation is a single number per
//! query point. The covariance is an anisotropic squared-exponential (ARD)
//! kernel, which also serves as the appearance similarity between windows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Relation, RelationTriple};

/// Dense appearance embedding of one window.
pub type AppearanceVector = Vec<f64>;

/// Relative diagonal jitter added before factorization.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn isotropic(dim: usize, length_scale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        KernelConfig {
            length_scales: vec![length_scale; dim],
            signal_variance,
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() {
            return Err(Error::InvalidConfig("kernel needs at least one length-scale".into()));
        }
        if !self.length_scales.iter().all(|l| *l > 0.0 && !l.is_nan()) {
            return Err(Error::InvalidConfig("length-scales must be > 0".into()));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidConfig("signal variance must be > 0".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig("noise variance must be >= 0".into()));
        }
        Ok(())
    }

    /// The kernel evaluated at zero distance.
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance
    }

    fn inv_sq_scales(&self) -> Vec<f64> {
        self.length_scales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Kernel with the inverse squared length-scales precomputed; the hot path
/// for Gram and scene kernel matrices.
#[derive(Debug, Clone)]
pub struct ArdKernel {
    inv_sq: Vec<f64>,
    signal_variance: f64,
}

impl ArdKernel {
    pub fn new(cfg: &KernelConfig) -> Self {
        ArdKernel {
            inv_sq: cfg.inv_sq_scales(),
            signal_variance: cfg.signal_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.inv_sq.len()
    }

    /// Caller guarantees both slices have `dim()` entries.
    #[inline]
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        let d2: f64 = self
            .inv_sq
            .iter()
            .zip(x.iter().zip(x2))
            .map(|(s, (a, b))| {
                let d = a - b;
                s * d * d
            })
            .sum();
        self.signal_variance * (-0.5 * d2).exp()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

pub fn kernel(cfg: &KernelConfig, x: &[f64], x2: &[f64]) -> Result<f64> {
    let k = ArdKernel::new(cfg);
    k.check_dim(x)?;
    k.check_dim(x2)?;
    Ok(k.eval(x, x2))
}

/// GP predictive distribution for the three relations at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    /// Unclamped predictive means in relation order.
    pub raw_mean: [f64; 3],
    pub sigma: f64,
}

impl RelationPrediction {
    /// Predictive mean clamped to `[0, 1]`.
    #[inline]
    pub fn mean(&self, r: Relation) -> f64 {
        self.raw_mean[r.index()].clamp(0.0, 1.0)
    }

    pub fn mean_array(&self) -> [f64; 3] {
        self.raw_mean.map(|m| m.clamp(0.0, 1.0))
    }

    pub fn mu_overlap(&self) -> f64 {
        self.mean(Relation::Overlap)
    }
}

fn check_inputs(inputs: &[AppearanceVector], dim: usize) -> Result<()> {
    for x in inputs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("appearance vector has non-finite entries".into()));
        }
    }
    Ok(())
}

fn gram(cfg: &KernelConfig, inputs: &[AppearanceVector]) -> DMatrix<f64> {
    let k = ArdKernel::new(cfg);
    let m = inputs.len();
    let diag = cfg.signal_variance * (1.0 + JITTER) + cfg.noise_variance;
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        g[(i, i)] = diag;
        for j in 0..i {
            let v = k.eval(&inputs[i], &inputs[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn target_columns(targets: &[RelationTriple]) -> [DVector<f64>; 3] {
    Relation::ALL.map(|r| DVector::from_iterator(targets.len(), targets.iter().map(|t| t.get(r))))
}

fn factorize(cfg: &KernelConfig, inputs: &[AppearanceVector]) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(gram(cfg, inputs)).ok_or(Error::NotPositiveDefinite)
}

/// A fitted GP; immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel_cfg: KernelConfig,
    kernel: ArdKernel,
    inputs: Vec<AppearanceVector>,
    targets: Vec<RelationTriple>,
    chol: Cholesky<f64, Dyn>,
    /// `(K + noise I)^-1 y_r` for each relation.
    solves: [DVector<f64>; 3],
}

pub fn gp_fit(
    inputs: &[AppearanceVector],
    targets: &[RelationTriple],
    cfg: &KernelConfig,
) -> Result<GpModel> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Invalid("GP needs at least one training point".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    check_inputs(inputs, cfg.dim())?;
    for t in targets {
        if !t.as_array().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!("GP target {t:?} outside [0,1]")));
        }
    }
    let chol = factorize(cfg, inputs)?;
    let solves = target_columns(targets).map(|y| chol.solve(&y));
    Ok(GpModel {
        kernel: ArdKernel::new(cfg),
        kernel_cfg: cfg.clone(),
        inputs: inputs.to_vec(),
        targets: targets.to_vec(),
        chol,
        solves,
    })
}

impl GpModel {
    pub fn kernel_config(&self) -> &KernelConfig {
        &self.kernel_cfg
    }

    pub fn kernel(&self) -> &ArdKernel {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.kernel_cfg.dim()
    }

    pub fn num_training(&self) -> usize {
        self.inputs.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<RelationPrediction> {
        self.kernel.check_dim(x)?;
        let kstar = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| self.kernel.eval(xi, x)),
        );
        let raw_mean = [0, 1, 2].map(|r| kstar.dot(&self.solves[r]));
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = (self.kernel_cfg.signal_variance - v.norm_squared()).max(0.0);
        Ok(RelationPrediction {
            raw_mean,
            sigma: var.sqrt(),
        })
    }

    /// Predictions for many points at once; identical to calling
    /// [`GpModel::predict`] per point up to rounding.
    pub fn predict_batch(&self, xs: &[AppearanceVector]) -> Result<Vec<RelationPrediction>> {
        check_inputs(xs, self.dim())?;
        let m = self.inputs.len();
        let n = xs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        // M x n cross-covariance
        let mut kx = DMatrix::zeros(m, n);
        for (j, x) in xs.iter().enumerate() {
            for (i, xi) in self.inputs.iter().enumerate() {
                kx[(i, j)] = self.kernel.eval(xi, x);
            }
        }
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("Cholesky factor has a nonzero diagonal");
        let preds = (0..n)
            .map(|j| {
                let col = kx.column(j);
                let raw_mean = [0, 1, 2].map(|r| col.dot(&self.solves[r]));
                let var =
                    (self.kernel_cfg.signal_variance - v.column(j).norm_squared()).max(0.0);
                RelationPrediction {
                    raw_mean,
                    sigma: var.sqrt(),
                }
            })
            .collect();
        Ok(preds)
    }

    pub fn to_doc(&self) -> GpModelDoc {
        GpModelDoc {
            kernel: self.kernel_cfg.clone(),
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            solves: self.solves.iter().map(|s| s.iter().copied().collect()).collect(),
        }
    }

    /// Rebuilds a model from its serialized form. The stored solve vectors
    /// are used as-is so reloaded predictions are bit-identical.
    pub fn from_doc(doc: GpModelDoc) -> Result<Self> {
        doc.kernel.validate()?;
        let m = doc.inputs.len();
        if m == 0 || doc.targets.len() != m {
            return Err(Error::Invalid("GP document has inconsistent sizes".into()));
        }
        if doc.solves.len() != 3 || doc.solves.iter().any(|s| s.len() != m) {
            return Err(Error::Invalid("GP document needs three solve vectors of length M".into()));
        }
        check_inputs(&doc.inputs, doc.kernel.dim())?;
        let chol = factorize(&doc.kernel, &doc.inputs)?;
        let mut it = doc.solves.into_iter().map(DVector::from_vec);
        let solves = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
        Ok(GpModel {
            kernel: ArdKernel::new(&doc.kernel),
            kernel_cfg: doc.kernel,
            inputs: doc.inputs,
            targets: doc.targets,
            chol,
            solves,
        })
    }
}

/// Serialized GP: kernel, training data and the solve vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelDoc {
    pub kernel: KernelConfig,
    pub inputs: Vec<AppearanceVector>,
    pub targets: Vec<RelationTriple>,
    pub solves: Vec<Vec<f64>>,
}

pub fn gp_predict(model: &GpModel, x: &[f64]) -> Result<RelationPrediction> {
    model.predict(x)
}

/// Log marginal likelihood summed over the three target columns.
///
/// Targets are not range-checked here so that the function can be used on
/// arbitrary regression data.
pub fn log_marginal_likelihood(
    cfg: &KernelConfig,
    inputs: &[AppearanceVector],
    targets: &[RelationTriple],
) -> Result<f64> {
    cfg.validate()?;
    check_inputs(inputs, cfg.dim())?;
    let chol = factorize(cfg, inputs)?;
    let m = inputs.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut total = 0.0;
    for y in target_columns(targets) {
        let a = chol.solve(&y);
        total += -0.5 * y.dot(&a) - log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(total)
}

/// Outcome of hyperparameter search.
#[derive(Debug, Clone)]
pub struct KernelFit {
    pub config: KernelConfig,
    /// Log marginal likelihood after each iteration, starting with `init`.
    pub trace: Vec<f64>,
    /// Set when some candidate evaluations failed or the initial point was
    /// not evaluable; the best evaluable iterate is still returned.
    pub warning: Option<String>,
}

const LOG_BOUNDS_LS: (f64, f64) = (-6.9, 6.9); // ~[1e-3, 1e3]
const LOG_BOUNDS_SIGNAL: (f64, f64) = (-13.8, 6.9); // ~[1e-6, 1e3]
const LOG_BOUNDS_NOISE: (f64, f64) = (-18.4, 2.3); // ~[1e-8, 10]

/// Coordinate search on log-hyperparameters maximizing the summed log
/// marginal likelihood. Each iteration tries a multiplicative step up and
/// down on every parameter and keeps a move only when it strictly improves
/// the objective; the step halves after an iteration without improvement.
/// A zero noise variance in `init` stays fixed at zero.
pub fn learn_kernel(
    inputs: &[AppearanceVector],
    targets: &[RelationTriple],
    init: &KernelConfig,
    iterations: usize,
) -> Result<KernelFit> {
    init.validate()?;
    if inputs.len() < 2 {
        return Err(Error::Invalid("kernel learning needs at least two points".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    check_inputs(inputs, init.dim())?;

    let mut best = init.clone();
    let mut best_ll = match log_marginal_likelihood(init, inputs, targets) {
        Ok(v) if v.is_finite() => v,
        _ => {
            return Ok(KernelFit {
                config: init.clone(),
                trace: Vec::new(),
                warning: Some("initial hyperparameters are not evaluable".into()),
            })
        }
    };
    let mut trace = vec![best_ll];
    let mut failures = 0usize;
    let mut step = std::f64::consts::LN_2;
    let d = init.dim();
    let search_noise = init.noise_variance > 0.0;
    let n_params = d + 1 + usize::from(search_noise);

    for _ in 0..iterations {
        let mut improved = false;
        for p in 0..n_params {
            for dir in [1.0, -1.0] {
                let Some(cand) = perturb(&best, p, dir * step) else {
                    continue;
                };
                match log_marginal_likelihood(&cand, inputs, targets) {
                    Ok(ll) if ll.is_finite() => {
                        if ll > best_ll {
                            best_ll = ll;
                            best = cand;
                            improved = true;
                            break;
                        }
                    }
                    _ => failures += 1,
                }
            }
        }
        trace.push(best_ll);
        if !improved {
            step *= 0.5;
            if step < 1e-4 {
                break;
            }
        }
    }
    let warning = (failures > 0).then(|| format!("{failures} candidate evaluations failed"));
    Ok(KernelFit {
        config: best,
        trace,
        warning,
    })
}

fn perturb(cfg: &KernelConfig, param: usize, delta: f64) -> Option<KernelConfig> {
    let d = cfg.dim();
    let mut out = cfg.clone();
    let (slot, bounds) = if param < d {
        (&mut out.length_scales[param], LOG_BOUNDS_LS)
    } else if param == d {
        (&mut out.signal_variance, LOG_BOUNDS_SIGNAL)
    } else {
        (&mut out.noise_variance, LOG_BOUNDS_NOISE)
    };
    let next = slot.ln() + delta;
    if next < bounds.0 || next > bounds.1 {
        return None;
    }
    *slot = next.exp();
    Some(out)
}

/// Uniform subsample of `m` indices down to at most `cap`, returned sorted.
pub fn subsample_indices<R: Rng + ?Sized>(m: usize, cap: usize, rng: &mut R) -> Vec<usize> {
    if m <= cap {
        return (0..m).collect();
    }
    let mut idx = index::sample(rng, m, cap).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn triple(a: f64, b: f64, c: f64) -> RelationTriple {
        RelationTriple {
            overlap: a,
            part: b,
            container: c,
        }
    }

    #[test]
    fn kernel_examples() {
        let cfg = KernelConfig::isotropic(1, 1.0, 1.0, 0.0);
        assert_eq!(kernel(&cfg, &[0.3], &[0.3]).unwrap(), 1.0);
        let v = kernel(&cfg, &[0.0], &[2.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        let flat = KernelConfig::isotropic(2, 1e12, 0.7, 0.0);
        let v = kernel(&flat, &[0.0, 5.0], &[3.0, -4.0]).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        assert!(matches!(
            kernel(&cfg, &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_point_interpolates() {
        let cfg = KernelConfig::isotropic(2, 1.0, 1.0, 0.0);
        let t = triple(0.8, 0.9, 0.6);
        let gp = gp_fit(&[vec![0.5, -0.5]], &[t], &cfg).unwrap();
        let p = gp.predict(&[0.5, -0.5]).unwrap();
        for (a, b) in p.raw_mean.iter().zip(t.as_array()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(p.sigma < 1e-3);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let cfg = KernelConfig::isotropic(2, 0.5, 0.3, 0.01);
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let ts = vec![triple(1.0, 1.0, 1.0), triple(0.5, 0.2, 0.9), triple(0.1, 0.0, 0.3)];
        let gp = gp_fit(&xs, &ts, &cfg).unwrap();
        let p = gp.predict(&[100.0, 100.0]).unwrap();
        assert!(p.raw_mean.iter().all(|m| m.abs() < 1e-12));
        assert!((p.sigma - 0.3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_targets_and_dims() {
        let cfg = KernelConfig::isotropic(1, 1.0, 1.0, 0.0);
        assert!(gp_fit(&[vec![0.0]], &[triple(1.5, 0.0, 0.0)], &cfg).is_err());
        assert!(gp_fit(&[vec![0.0, 1.0]], &[triple(0.5, 0.0, 0.0)], &cfg).is_err());
        assert!(gp_fit(&[], &[], &cfg).is_err());
        let gp = gp_fit(&[vec![0.0]], &[triple(0.5, 0.0, 0.0)], &cfg).unwrap();
        assert!(gp.predict(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn batch_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = KernelConfig {
            length_scales: vec![0.7, 1.3, 2.0],
            signal_variance: 0.4,
            noise_variance: 0.02,
        };
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let ts: Vec<RelationTriple> = (0..20)
            .map(|i| triple((i as f64) / 20.0, 0.5, 1.0 - (i as f64) / 20.0))
            .collect();
        let gp = gp_fit(&xs, &ts, &cfg).unwrap();
        let qs: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let batch = gp.predict_batch(&qs).unwrap();
        for (q, b) in qs.iter().zip(&batch) {
            let p = gp.predict(q).unwrap();
            for r in 0..3 {
                assert!((p.raw_mean[r] - b.raw_mean[r]).abs() < 1e-12);
            }
            assert!((p.sigma - b.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn doc_reload_is_bit_identical() {
        let cfg = KernelConfig::isotropic(2, 0.8, 0.5, 0.05);
        let xs = vec![vec![0.1, 0.2], vec![-0.4, 0.9], vec![1.0, -1.0]];
        let ts = vec![triple(0.9, 1.0, 0.8), triple(0.2, 0.3, 0.1), triple(0.0, 0.0, 0.0)];
        let gp = gp_fit(&xs, &ts, &cfg).unwrap();
        let json = serde_json::to_string(&gp.to_doc()).unwrap();
        let back = GpModel::from_doc(serde_json::from_str(&json).unwrap()).unwrap();
        let q = [0.3, 0.3];
        assert_eq!(gp.predict(&q).unwrap(), back.predict(&q).unwrap());
    }

    #[test]
    fn zero_iterations_returns_init() {
        let cfg = KernelConfig::isotropic(1, 1.0, 1.0, 0.1);
        let xs = vec![vec![0.0], vec![1.0]];
        let ts = vec![triple(0.1, 0.2, 0.3), triple(0.4, 0.5, 0.6)];
        let fit = learn_kernel(&xs, &ts, &cfg, 0).unwrap();
        assert_eq!(fit.config, cfg);
        assert_eq!(fit.trace.len(), 1);
    }

    #[test]
    fn learning_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let ts: Vec<RelationTriple> = xs
            .iter()
            .map(|x| {
                let v = (0.5 + 0.4 * x[0].sin()).clamp(0.0, 1.0);
                triple(v, v * 0.9, 1.0 - v)
            })
            .collect();
        let init = KernelConfig::isotropic(2, 5.0, 0.05, 0.5);
        let fit = learn_kernel(&xs, &ts, &init, 15).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        let start = log_marginal_likelihood(&init, &xs, &ts).unwrap();
        let end = log_marginal_likelihood(&fit.config, &xs, &ts).unwrap();
        assert!(end > start);
    }

    #[test]
    fn subsample_respects_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(subsample_indices(5, 10, &mut rng), vec![0, 1, 2, 3, 4]);
        let s = subsample_indices(100, 10, &mut rng);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
