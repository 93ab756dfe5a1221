use ctxloc::eval::{evaluate_model, summarize};
use ctxloc::synth::generate_split;
use ctxloc::{train_model, GenConfig, PipelineConfig};

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn default_scenes_contain_good_candidates() {
    let scenes = generate_split(&GenConfig { seed: 7, ..GenConfig::default() }, 0, 100).unwrap();
    let best = mean(scenes.iter().map(|s| s.best_overlap().unwrap()));
    assert!(best > 0.8, "mean best overlap {best}");
}

#[test]
fn relations_are_learnable_from_appearance() {
    let gen = GenConfig { seed: 7, num_windows: 100, ..GenConfig::default() };
    let train = generate_split(&gen, 0, 60).unwrap();
    let test = generate_split(&gen, 1_000, 40).unwrap();
    let cfg = PipelineConfig { seed: 1, ..PipelineConfig::default() };
    let tp = train_model(&train, &cfg).unwrap();

    // predicted overlap correlates with the true one on held-out scenes
    let mut pairs = Vec::new();
    for s in &test {
        let gt = s.ground_truth.unwrap();
        let preds = tp.model.gp.predict_batch(&s.features).unwrap();
        for (w, p) in s.windows.iter().zip(preds) {
            pairs.push((p.mu_overlap(), ctxloc::geometry::overlap(w, &gt)));
        }
    }
    let (mx, my) = (mean(pairs.iter().map(|p| p.0)), mean(pairs.iter().map(|p| p.1)));
    let cov: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = pairs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let vy: f64 = pairs.iter().map(|(_, y)| (y - my).powi(2)).sum();
    let r = cov / (vx * vy).sqrt();
    assert!(r > 0.8, "pearson {r}");

    let summary = summarize(&evaluate_model(&tp.model, &test).unwrap());
    assert!(summary.mean_overlap.unwrap() > 0.6, "{summary:?}");
}
