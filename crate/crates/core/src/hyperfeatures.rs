//! Hyper-features of a candidate window computed jointly from all windows
//! in a scene, and the linear score built on them.
//!
//! Feature order (11 entries): global G (overlap, part, cont), local L
//! (overlap, part, cont), consistency C (overlap, part, cont), then the
//! window score S (predicted overlap, predictive std).

use std::ops::{Index, IndexMut};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relation_descriptor, Relation, Window};
use crate::gp::{AppearanceVector, ArdKernel, GpModel, RelationPrediction};

pub const NUM_FEATURES: usize = 11;
pub const G: usize = 0;
pub const L: usize = 3;
pub const C: usize = 6;
pub const S_MU: usize = 9;
pub const S_SIGMA: usize = 10;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "G-overlap", "G-part", "G-cont", "L-overlap", "L-part", "L-cont", "C-overlap", "C-part",
    "C-cont", "S-mu", "S-sigma",
];

macro_rules! fixed_vector {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub [f64; NUM_FEATURES]);

        impl $name {
            pub fn zeros() -> Self {
                Self([0.0; NUM_FEATURES])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn dot(&self, other: &[f64; NUM_FEATURES]) -> f64 {
                self.0.iter().zip(other).map(|(a, b)| a * b).sum()
            }

            pub fn norm_squared(&self) -> f64 {
                self.dot(&self.0)
            }
        }

        impl Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl IndexMut<usize> for $name {
            fn index_mut(&mut self, i: usize) -> &mut f64 {
                &mut self.0[i]
            }
        }
    };
}

fixed_vector!(
    /// Φ for one candidate window.
    HyperFeatureVector
);
fixed_vector!(
    /// Score weights aligned with [`HyperFeatureVector`].
    WeightVector
);

impl WeightVector {
    pub fn score(&self, phi: &HyperFeatureVector) -> f64 {
        self.dot(&phi.0)
    }

    /// Weight on the global feature of relation `r`.
    pub fn global(&self, r: Relation) -> f64 {
        self.0[G + r.index()]
    }

    pub fn unit(i: usize) -> Self {
        let mut w = Self::zeros();
        w.0[i] = 1.0;
        w
    }
}

/// Everything needed to score candidates in one image. Immutable once built.
#[derive(Debug, Clone)]
pub struct SceneContext {
    windows: Vec<Window>,
    appearance: Vec<AppearanceVector>,
    predictions: Vec<RelationPrediction>,
    /// Row-major N x N appearance kernel.
    kernel: Vec<f64>,
}

impl SceneContext {
    /// Builds a context, evaluating the kernel matrix once.
    pub fn new(
        windows: Vec<Window>,
        appearance: Vec<AppearanceVector>,
        predictions: Vec<RelationPrediction>,
        kernel: &ArdKernel,
    ) -> Result<Self> {
        let n = windows.len();
        for x in &appearance {
            kernel.check_dim(x)?;
        }
        let mut k = vec![0.0; n * n];
        for i in 0..appearance.len().min(n) {
            for j in 0..=i {
                let v = kernel.eval(&appearance[i], &appearance[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Self::from_parts(windows, appearance, predictions, k)
    }

    /// Predicts relations with `gp` and builds the context with its kernel.
    pub fn from_model(gp: &GpModel, windows: Vec<Window>, appearance: Vec<AppearanceVector>) -> Result<Self> {
        let preds = gp.predict_batch(&appearance)?;
        Self::new(windows, appearance, preds, gp.kernel())
    }

    /// Builds a context from an explicit kernel matrix (row-major N x N).
    pub fn from_parts(
        windows: Vec<Window>,
        appearance: Vec<AppearanceVector>,
        predictions: Vec<RelationPrediction>,
        kernel: Vec<f64>,
    ) -> Result<Self> {
        let n = windows.len();
        if n == 0 {
            return Err(Error::Invalid("scene has no candidate windows".into()));
        }
        if appearance.len() != n || predictions.len() != n || kernel.len() != n * n {
            return Err(Error::Invalid(format!(
                "scene sizes disagree: {n} windows, {} appearance vectors, {} predictions, {} kernel entries",
                appearance.len(),
                predictions.len(),
                kernel.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (kernel[i * n + j], kernel[j * n + i]);
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::Invalid(format!("kernel matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(SceneContext {
            windows,
            appearance,
            predictions,
            kernel,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn appearance(&self) -> &[AppearanceVector] {
        &self.appearance
    }

    pub fn predictions(&self) -> &[RelationPrediction] {
        &self.predictions
    }

    #[inline]
    pub fn kernel_at(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.len() + j]
    }

    #[inline]
    pub fn kernel_row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.kernel[i * n..(i + 1) * n]
    }

    /// `2 / (N^2 - N)`, or 0 for a single window.
    #[inline]
    pub fn pair_normalizer(&self) -> f64 {
        let n = self.len() as f64;
        if self.len() < 2 {
            0.0
        } else {
            2.0 / (n * n - n)
        }
    }
}

/// `rho^r(w_i, w_l)` for every candidate `i`, stored per relation.
#[derive(Debug, Clone)]
pub struct RelationField {
    pub rel: [Vec<f64>; 3],
}

impl RelationField {
    pub fn new(ctx: &SceneContext, l: usize) -> Self {
        let wl = &ctx.windows[l];
        let n = ctx.len();
        let mut rel = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, w) in ctx.windows.iter().enumerate() {
            let t = relation_descriptor(w, wl);
            rel[0][i] = t.overlap;
            rel[1][i] = t.part;
            rel[2][i] = t.container;
        }
        RelationField { rel }
    }
}

pub(crate) fn phi_c_field(ctx: &SceneContext, field: &RelationField) -> [f64; 3] {
    let mut out = [0.0f64; 3];
    for (i, p) in ctx.predictions.iter().enumerate() {
        let mu = p.mean_array();
        for r in 0..3 {
            out[r] = out[r].max((field.rel[r][i] - mu[r]).abs());
        }
    }
    out
}

pub(crate) fn phi_l_field(ctx: &SceneContext, field: &RelationField, l: usize) -> [f64; 3] {
    let krow = ctx.kernel_row(l);
    let mut out = [0.0f64; 3];
    for r in 0..3 {
        out[r] = field.rel[r]
            .iter()
            .zip(krow)
            .map(|(rho, k)| (1.0 - rho).abs() * k)
            .sum::<f64>();
    }
    let inv_n = 1.0 / ctx.len() as f64;
    out.map(|v| v * inv_n)
}

pub(crate) fn phi_g_field(ctx: &SceneContext, field: &RelationField) -> [f64; 3] {
    let n = ctx.len();
    if n < 2 {
        return [0.0; 3];
    }
    let [f0, f1, f2] = &field.rel;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..n - 1 {
        let krow = &ctx.kernel_row(i)[i + 1..];
        let (a0, a1, a2) = (f0[i], f1[i], f2[i]);
        let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
        for (j, k) in krow.iter().enumerate() {
            let jj = i + 1 + j;
            t0 += (a0 - f0[jj]).abs() * k;
            t1 += (a1 - f1[jj]).abs() * k;
            t2 += (a2 - f2[jj]).abs() * k;
        }
        s0 += t0;
        s1 += t1;
        s2 += t2;
    }
    let z = ctx.pair_normalizer();
    [s0 * z, s1 * z, s2 * z]
}

pub(crate) fn phi_s_at(ctx: &SceneContext, l: usize) -> [f64; 2] {
    let p = &ctx.predictions[l];
    [p.mu_overlap(), p.sigma]
}

/// Consistency: worst disagreement between induced and predicted relations.
pub fn phi_c(ctx: &SceneContext, l: usize) -> [f64; 3] {
    phi_c_field(ctx, &RelationField::new(ctx, l))
}

/// Global: appearance-weighted spread of the relation field over all pairs.
pub fn phi_g(ctx: &SceneContext, l: usize) -> [f64; 3] {
    phi_g_field(ctx, &RelationField::new(ctx, l))
}

/// Local: how far from `w_l` the windows that look like `w_l` are.
pub fn phi_l(ctx: &SceneContext, l: usize) -> [f64; 3] {
    phi_l_field(ctx, &RelationField::new(ctx, l), l)
}

pub fn phi_s(ctx: &SceneContext, l: usize) -> [f64; 2] {
    phi_s_at(ctx, l)
}

pub fn assemble_phi(ctx: &SceneContext, l: usize) -> HyperFeatureVector {
    let field = RelationField::new(ctx, l);
    let mut phi = HyperFeatureVector::zeros();
    phi.0[G..G + 3].copy_from_slice(&phi_g_field(ctx, &field));
    phi.0[L..L + 3].copy_from_slice(&phi_l_field(ctx, &field, l));
    phi.0[C..C + 3].copy_from_slice(&phi_c_field(ctx, &field));
    let [mu, sigma] = phi_s_at(ctx, l);
    phi.0[S_MU] = mu;
    phi.0[S_SIGMA] = sigma;
    phi
}

/// Φ for every candidate in the scene, in index order.
pub fn assemble_all(ctx: &SceneContext) -> Vec<HyperFeatureVector> {
    (0..ctx.len()).map(|l| assemble_phi(ctx, l)).collect()
}

pub fn score(alpha: &WeightVector, ctx: &SceneContext, l: usize) -> f64 {
    alpha.score(&assemble_phi(ctx, l))
}

/// Writes an N x 11 feature table as CSV with a header row.
pub fn write_feature_csv<W: Write>(out: W, features: &[HyperFeatureVector]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "index,{}", FEATURE_NAMES.join(","))?;
    for (i, phi) in features.iter().enumerate() {
        write!(out, "{i}")?;
        for v in phi.as_slice() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelConfig;

    fn win(a: f64, b: f64, c: f64, d: f64) -> Window {
        Window::new(a, b, c, d).unwrap()
    }

    fn pred(m: [f64; 3], s: f64) -> RelationPrediction {
        RelationPrediction {
            raw_mean: m,
            sigma: s,
        }
    }

    fn scene() -> SceneContext {
        let windows = vec![
            win(0.0, 0.0, 10.0, 10.0),
            win(2.0, 2.0, 12.0, 12.0),
            win(0.0, 0.0, 30.0, 30.0),
            win(40.0, 40.0, 50.0, 60.0),
        ];
        let appearance = vec![vec![0.0, 0.1], vec![0.2, 0.0], vec![1.0, 1.0], vec![-1.0, 0.5]];
        let preds = vec![
            pred([0.9, 0.8, 1.2], 0.1),
            pred([0.5, 0.6, 0.4], 0.2),
            pred([0.1, -0.2, 0.9], 0.3),
            pred([0.0, 0.0, 0.0], 0.4),
        ];
        let k = ArdKernel::new(&KernelConfig::isotropic(2, 0.8, 1.0, 0.0));
        SceneContext::new(windows, appearance, preds, &k).unwrap()
    }

    #[test]
    fn single_window_scene() {
        let ctx = SceneContext::new(
            vec![win(0.0, 0.0, 1.0, 1.0)],
            vec![vec![0.0]],
            vec![pred([0.3, 0.6, 1.4], 0.2)],
            &ArdKernel::new(&KernelConfig::isotropic(1, 1.0, 1.0, 0.0)),
        )
        .unwrap();
        assert_eq!(phi_g(&ctx, 0), [0.0; 3]);
        assert_eq!(phi_l(&ctx, 0), [0.0; 3]);
        let c = phi_c(&ctx, 0);
        assert!((c[0] - 0.7).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15 && c[2] == 0.0);
    }

    #[test]
    fn perfect_predictions_give_zero_consistency() {
        let base = scene();
        let l = 1;
        let field = RelationField::new(&base, l);
        let preds = (0..base.len())
            .map(|i| pred([field.rel[0][i], field.rel[1][i], field.rel[2][i]], 0.0))
            .collect();
        let ctx = SceneContext::from_parts(
            base.windows().to_vec(),
            base.appearance().to_vec(),
            preds,
            base.kernel.clone(),
        )
        .unwrap();
        assert_eq!(phi_c(&ctx, l), [0.0; 3]);
    }

    #[test]
    fn identical_windows_and_zero_kernel() {
        let w = win(1.0, 1.0, 4.0, 5.0);
        let ctx = SceneContext::new(
            vec![w; 4],
            vec![vec![0.0], vec![0.5], vec![1.0], vec![2.0]],
            vec![pred([0.5; 3], 0.1); 4],
            &ArdKernel::new(&KernelConfig::isotropic(1, 1.0, 1.0, 0.0)),
        )
        .unwrap();
        assert_eq!(phi_g(&ctx, 2), [0.0; 3]);
        assert_eq!(phi_l(&ctx, 2), [0.0; 3]);

        let base = scene();
        let n = base.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
        }
        let ctx = SceneContext::from_parts(
            base.windows().to_vec(),
            base.appearance().to_vec(),
            base.predictions().to_vec(),
            k,
        )
        .unwrap();
        for l in 0..n {
            assert_eq!(phi_g(&ctx, l), [0.0; 3]);
        }
        let zero = SceneContext::from_parts(
            base.windows().to_vec(),
            base.appearance().to_vec(),
            base.predictions().to_vec(),
            vec![0.0; n * n],
        )
        .unwrap();
        assert_eq!(phi_l(&zero, 0), [0.0; 3]);
    }

    #[test]
    fn score_family_is_a_projection() {
        let ctx = scene();
        assert_eq!(phi_s(&ctx, 0), [0.9, 0.1]);
        assert_eq!(score(&WeightVector::zeros(), &ctx, 2), 0.0);
        assert_eq!(score(&WeightVector::unit(S_MU), &ctx, 1), 0.5);
        // clamped mean for the consistency feature, raw retained
        assert_eq!(ctx.predictions()[2].raw_mean[1], -0.2);
    }

    #[test]
    fn assembled_vector_matches_parts() {
        let ctx = scene();
        for l in 0..ctx.len() {
            let phi = assemble_phi(&ctx, l);
            assert_eq!(&phi.0[G..G + 3], &phi_g(&ctx, l));
            assert_eq!(&phi.0[L..L + 3], &phi_l(&ctx, l));
            assert_eq!(&phi.0[C..C + 3], &phi_c(&ctx, l));
            assert_eq!(&phi.0[S_MU..], &phi_s(&ctx, l));
            assert_eq!(phi.as_slice().len(), NUM_FEATURES);
            let json = serde_json::to_string(&phi).unwrap();
            assert_eq!(serde_json::from_str::<HyperFeatureVector>(&json).unwrap(), phi);
        }
    }

    #[test]
    fn rejects_asymmetric_kernel() {
        let base = scene();
        let n = base.len();
        let mut k = base.kernel.clone();
        k[1] += 1e-6;
        assert!(SceneContext::from_parts(
            base.windows().to_vec(),
            base.appearance().to_vec(),
            base.predictions().to_vec(),
            k
        )
        .is_err());
        assert!(SceneContext::from_parts(vec![], vec![], vec![], vec![]).is_err());
        assert!(SceneContext::from_parts(
            base.windows().to_vec(),
            base.appearance()[..n - 1].to_vec(),
            base.predictions().to_vec(),
            base.kernel.clone()
        )
        .is_err());
    }

    #[test]
    fn feature_csv_has_header_and_rows() {
        let ctx = scene();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &assemble_all(&ctx)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + ctx.len());
        assert!(lines[0].starts_with("index,G-overlap"));
        assert_eq!(lines[1].split(',').count(), 12);
    }
}
