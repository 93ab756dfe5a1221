//! Seeded synthetic scenes.
//!
//! Every scene holds a hidden ground-truth box and candidate windows drawn
//! from a mixture of ground-truth jitters and uniform boxes. The appearance
//! vector of a candidate is a fixed smooth random map of its true relation
//! triple and its normalized geometry, plus isotropic Gaussian noise, so
//! that appearance similarity tracks relation similarity.
//!
//! The container scenario plants a small object and two same-sized decoys
//! elsewhere. Windows hugging a decoy get the appearance of a target window
//! with its relation triple scaled by a per-decoy resemblance factor, so
//! appearance alone sometimes prefers a decoy. Windows that contain the
//! true object look like containers while windows around the decoys look
//! like background; that context is what the joint features can exploit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{overlap, relation_descriptor, RelationTriple, Window};
use crate::gp::AppearanceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Default,
    Container,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub num_windows: usize,
    pub width: f64,
    pub height: f64,
    /// Ground-truth side length range as a fraction of the image side.
    pub target_scale: (f64, f64),
    /// Fraction of candidates jittered around the ground truth.
    pub near_fraction: f64,
    /// Near candidates have overlap with the ground truth above this.
    pub overlap_floor: f64,
    pub scenario: Scenario,
    pub appearance_dim: usize,
    pub noise: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            num_windows: 200,
            width: 100.0,
            height: 100.0,
            target_scale: (0.2, 0.5),
            near_fraction: 0.2,
            overlap_floor: 0.5,
            scenario: Scenario::Default,
            appearance_dim: 8,
            noise: 0.1,
        }
    }
}

impl GenConfig {
    /// Defaults for the container scenario: small objects, fewer near hits.
    pub fn container() -> Self {
        GenConfig {
            scenario: Scenario::Container,
            target_scale: (0.1, 0.18),
            near_fraction: 0.1,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_windows == 0 {
            return bad("num_windows must be >= 1");
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return bad("image extent must be positive");
        }
        let (lo, hi) = self.target_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("target_scale must satisfy 0 < lo <= hi <= 1");
        }
        if !(0.0..=1.0).contains(&self.near_fraction) || !(0.0..1.0).contains(&self.overlap_floor) {
            return bad("near_fraction must be in [0,1] and overlap_floor in [0,1)");
        }
        if self.appearance_dim == 0 {
            return bad("appearance_dim must be >= 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be >= 0");
        }
        Ok(())
    }
}

/// One synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    pub windows: Vec<Window>,
    pub features: Vec<AppearanceVector>,
    #[serde(default)]
    pub ground_truth: Option<Window>,
}

impl SceneInstance {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::Invalid(format!("scene {} has no windows", self.id)));
        }
        if self.windows.len() != self.features.len() {
            return Err(Error::Invalid(format!(
                "scene {}: {} windows but {} feature vectors",
                self.id,
                self.windows.len(),
                self.features.len()
            )));
        }
        let d = self.features[0].len();
        if self.features.iter().any(|f| f.len() != d || !f.iter().all(|v| v.is_finite())) {
            return Err(Error::Invalid(format!("scene {}: ragged or non-finite features", self.id)));
        }
        Ok(())
    }

    /// Largest overlap any candidate achieves with the ground truth.
    pub fn best_overlap(&self) -> Option<f64> {
        let gt = self.ground_truth?;
        Some(self.windows.iter().map(|w| overlap(w, &gt)).fold(0.0, f64::max))
    }
}

/// Inputs to the appearance map: relation triple, centre and log-scale.
const EMBED_INPUTS: usize = 6;

/// Fixed random smooth map from relation and geometry to appearance space.
#[derive(Debug, Clone)]
pub struct Embedding {
    linear: Vec<[f64; EMBED_INPUTS]>,
    warp: Vec<[f64; EMBED_INPUTS]>,
    phase: Vec<f64>,
}

impl Embedding {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0_c442_98fc);
        // relation inputs dominate; geometry only perturbs
        let scale = [1.0, 1.0, 1.0, 0.15, 0.15, 0.15];
        let mut draw = |s: f64| {
            let mut row = [0.0; EMBED_INPUTS];
            for (k, v) in row.iter_mut().enumerate() {
                *v = s * scale[k] * gauss(&mut rng);
            }
            row
        };
        let linear = (0..dim).map(|_| draw(1.0)).collect();
        let warp = (0..dim).map(|_| draw(1.5)).collect();
        let phase = (0..dim)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Embedding { linear, warp, phase }
    }

    pub fn dim(&self) -> usize {
        self.phase.len()
    }

    pub fn embed(&self, rel: &RelationTriple, w: &Window, width: f64, height: f64) -> Vec<f64> {
        let (cx, cy) = w.center();
        let log_scale = (w.area() / (width * height)).sqrt().ln() / 3.0;
        let z = [
            rel.overlap,
            rel.part,
            rel.container,
            cx / width - 0.5,
            cy / height - 0.5,
            log_scale,
        ];
        (0..self.dim())
            .map(|d| {
                let lin: f64 = self.linear[d].iter().zip(&z).map(|(a, b)| a * b).sum();
                let arg: f64 = self.warp[d].iter().zip(&z).map(|(a, b)| a * b).sum();
                lin + 0.5 * (arg + self.phase[d]).sin()
            })
            .collect()
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn scene_rng(seed: u64, offset: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(offset);
    rng
}

fn clip(w: [f64; 4], width: f64, height: f64) -> Option<Window> {
    let min_side = 1e-3 * width.min(height);
    let x0 = w[0].clamp(0.0, width);
    let y0 = w[1].clamp(0.0, height);
    let x1 = w[2].clamp(0.0, width);
    let y1 = w[3].clamp(0.0, height);
    if x1 - x0 < min_side || y1 - y0 < min_side {
        return None;
    }
    Window::new(x0, y0, x1, y1).ok()
}

fn sample_box(rng: &mut ChaCha8Rng, cfg: &GenConfig, scale: (f64, f64)) -> Window {
    let bw = rng.random_range(scale.0..=scale.1) * cfg.width;
    let bh = rng.random_range(scale.0..=scale.1) * cfg.height;
    let x = rng.random_range(0.0..=(cfg.width - bw));
    let y = rng.random_range(0.0..=(cfg.height - bh));
    Window::new(x, y, x + bw, y + bh).expect("positive sides")
}

fn uniform_box(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Window {
    sample_box(rng, cfg, (0.05, 0.9))
}

/// Gaussian jitter of `target` with overlap above `floor`; falls back to
/// `target` itself after repeated rejections.
fn jitter_box(rng: &mut ChaCha8Rng, cfg: &GenConfig, target: &Window, floor: f64) -> Window {
    let mut rel = 0.12;
    for attempt in 0..64 {
        if attempt % 16 == 15 {
            rel *= 0.5;
        }
        let nx = Normal::new(0.0, rel * target.width()).unwrap();
        let ny = Normal::new(0.0, rel * target.height()).unwrap();
        let cand = [
            target.x_min() + nx.sample(rng),
            target.y_min() + ny.sample(rng),
            target.x_max() + nx.sample(rng),
            target.y_max() + ny.sample(rng),
        ];
        if let Some(w) = clip(cand, cfg.width, cfg.height) {
            if overlap(&w, target) > floor {
                return w;
            }
        }
    }
    *target
}

/// A window containing `inner`, between 1.5 and 5 times its size.
fn container_box(rng: &mut ChaCha8Rng, cfg: &GenConfig, inner: &Window) -> Window {
    let f = rng.random_range(1.5..5.0);
    let bw = (inner.width() * f).min(cfg.width);
    let bh = (inner.height() * rng.random_range(0.8..1.25) * f).clamp(inner.height(), cfg.height);
    let x_lo = (inner.x_max() - bw).max(0.0);
    let x_hi = inner.x_min().min(cfg.width - bw);
    let y_lo = (inner.y_max() - bh).max(0.0);
    let y_hi = inner.y_min().min(cfg.height - bh);
    let x = if x_hi > x_lo { rng.random_range(x_lo..=x_hi) } else { x_lo };
    let y = if y_hi > y_lo { rng.random_range(y_lo..=y_hi) } else { y_lo };
    Window::new(x, y, x + bw, y + bh).expect("positive sides")
}

fn noisy(mut v: Vec<f64>, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if noise > 0.0 {
        for x in &mut v {
            *x += noise * gauss(rng);
        }
    }
    v
}

fn shuffle_pairs(rng: &mut ChaCha8Rng, windows: &mut [Window], features: &mut [AppearanceVector]) {
    for i in (1..windows.len()).rev() {
        let j = rng.random_range(0..=i);
        windows.swap(i, j);
        features.swap(i, j);
    }
}

pub fn generate_scene(cfg: &GenConfig, offset: u64) -> Result<SceneInstance> {
    cfg.validate()?;
    let embedding = Embedding::new(cfg.seed, cfg.appearance_dim);
    Ok(match cfg.scenario {
        Scenario::Default => default_scene(cfg, &embedding, offset),
        Scenario::Container => container_scene(cfg, &embedding, offset),
    })
}

fn default_scene(cfg: &GenConfig, emb: &Embedding, offset: u64) -> SceneInstance {
    let mut rng = scene_rng(cfg.seed, offset);
    let gt = sample_box(&mut rng, cfg, cfg.target_scale);
    let n = cfg.num_windows;
    let n_near = (cfg.near_fraction * n as f64).round() as usize;
    let mut windows = Vec::with_capacity(n);
    for i in 0..n {
        let w = if i < n_near {
            jitter_box(&mut rng, cfg, &gt, cfg.overlap_floor)
        } else {
            uniform_box(&mut rng, cfg)
        };
        windows.push(w);
    }
    let mut features: Vec<AppearanceVector> = windows
        .iter()
        .map(|w| {
            let rel = relation_descriptor(w, &gt);
            noisy(emb.embed(&rel, w, cfg.width, cfg.height), cfg.noise, &mut rng)
        })
        .collect();
    shuffle_pairs(&mut rng, &mut windows, &mut features);
    SceneInstance {
        id: offset,
        width: cfg.width,
        height: cfg.height,
        windows,
        features,
        ground_truth: Some(gt),
    }
}

/// Number of look-alike decoys planted in a container scene.
const DECOYS: usize = 2;

fn container_scene(cfg: &GenConfig, emb: &Embedding, offset: u64) -> SceneInstance {
    let mut rng = scene_rng(cfg.seed, offset);
    let gt = sample_box(&mut rng, cfg, cfg.target_scale);
    // same-sized decoys, kept away from the object and from each other
    let mut decoys: Vec<Window> = Vec::with_capacity(DECOYS);
    for _ in 0..DECOYS {
        let mut pick = None;
        for _ in 0..256 {
            let x = rng.random_range(0.0..=(cfg.width - gt.width()));
            let y = rng.random_range(0.0..=(cfg.height - gt.height()));
            let cand = Window::new(x, y, x + gt.width(), y + gt.height()).unwrap();
            let halo = Window::new(
                cand.x_min() - gt.width(),
                cand.y_min() - gt.height(),
                cand.x_max() + gt.width(),
                cand.y_max() + gt.height(),
            )
            .unwrap();
            if overlap(&halo, &gt) == 0.0 && decoys.iter().all(|d| overlap(&halo, d) == 0.0) {
                pick = Some(cand);
                break;
            }
        }
        // crowded image: fall back to any box disjoint from the object
        decoys.push(pick.unwrap_or_else(|| loop {
            let w = sample_box(&mut rng, cfg, (gt.width() / cfg.width, gt.width() / cfg.width));
            if overlap(&w, &gt) == 0.0 {
                break w;
            }
        }));
    }
    let looks: Vec<f64> = decoys.iter().map(|_| rng.random_range(0.6..1.0)).collect();

    let n = cfg.num_windows;
    let n_near = (cfg.near_fraction * n as f64).round() as usize;
    let n_decoy = n_near;
    let n_cont = ((n as f64) * 0.2).round() as usize;
    let n_decoy_cont = n_cont;

    let mut windows = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for i in 0..n {
        let (w, kind) = if i < n_near {
            (jitter_box(&mut rng, cfg, &gt, cfg.overlap_floor), Kind::Plain)
        } else if i < n_near + n_decoy {
            let k = i % DECOYS;
            (jitter_box(&mut rng, cfg, &decoys[k], cfg.overlap_floor), Kind::Decoy(k))
        } else if i < n_near + n_decoy + n_cont {
            (container_box(&mut rng, cfg, &gt), Kind::Plain)
        } else if i < n_near + n_decoy + n_cont + n_decoy_cont {
            // around a decoy but never covering the object
            let d = &decoys[i % DECOYS];
            let mut w = container_box(&mut rng, cfg, d);
            for _ in 0..16 {
                if !w.contains(&gt) {
                    break;
                }
                w = container_box(&mut rng, cfg, d);
            }
            (w, Kind::Plain)
        } else {
            (uniform_box(&mut rng, cfg), Kind::Plain)
        };
        windows.push(w);
        kinds.push(kind);
    }
    let mut features: Vec<AppearanceVector> = windows
        .iter()
        .zip(&kinds)
        .map(|(w, kind)| {
            let rel = match *kind {
                Kind::Decoy(k) => scaled(relation_descriptor(w, &decoys[k]), looks[k]),
                Kind::Plain => relation_descriptor(w, &gt),
            };
            noisy(emb.embed(&rel, w, cfg.width, cfg.height), cfg.noise, &mut rng)
        })
        .collect();
    shuffle_pairs(&mut rng, &mut windows, &mut features);
    SceneInstance {
        id: offset,
        width: cfg.width,
        height: cfg.height,
        windows,
        features,
        ground_truth: Some(gt),
    }
}

fn scaled(r: RelationTriple, f: f64) -> RelationTriple {
    RelationTriple {
        overlap: f * r.overlap,
        part: f * r.part,
        container: f * r.container,
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Plain,
    Decoy(usize),
}

/// `count` scenes with ids `first_id..first_id + count`, generated in parallel.
pub fn generate_split(cfg: &GenConfig, first_id: u64, count: usize) -> Result<Vec<SceneInstance>> {
    use rayon::prelude::*;
    cfg.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|k| generate_scene(cfg, first_id + k))
        .collect()
}

/// Container-scenario scenes; `cfg.scenario` is overridden.
pub fn generate_container_scenes(cfg: &GenConfig, first_id: u64, count: usize) -> Result<Vec<SceneInstance>> {
    let cfg = GenConfig {
        scenario: Scenario::Container,
        ..cfg.clone()
    };
    generate_split(&cfg, first_id, count)
}
