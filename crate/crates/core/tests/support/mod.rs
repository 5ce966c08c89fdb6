//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use collabres::nn::{forward_logits, model_backward, sigmoid_bce, ModelSpec, Mode, Parameters};
use collabres::tensor::{SeededRng, SparseBinaryMatrix};

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn loss_at(spec: &ModelSpec, params: &Parameters<f64>, x: &SparseBinaryMatrix, y: &SparseBinaryMatrix, mask_seed: u64) -> f64 {
    // Re-seeding replays identical dropout masks on every evaluation.
    let trace = forward_logits(spec, params, x, Mode::Train, &mut SeededRng::new(mask_seed)).unwrap();
    sigmoid_bce(&trace.logits, y).unwrap().0
}

/// Compares analytic gradients with central differences on `coords`
/// randomly chosen coordinates (every tensor gets at least one).
pub fn gradient_check(
    spec: &ModelSpec,
    params: &Parameters<f64>,
    x: &SparseBinaryMatrix,
    y: &SparseBinaryMatrix,
    coords: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let mask_seed = seed ^ 0xD0;
    let trace = forward_logits(spec, params, x, Mode::Train, &mut SeededRng::new(mask_seed)).unwrap();
    let (_, dlogits) = sigmoid_bce(&trace.logits, y).unwrap();
    let grads = model_backward(spec, params, &trace, &dlogits).unwrap();

    let names: Vec<String> = params.names().cloned().collect();
    let mut picks: Vec<(String, usize)> = Vec::new();
    let mut rng = SeededRng::new(seed);
    for name in &names {
        let len = params.get(name).unwrap().len();
        picks.push((name.clone(), rng.below(len)));
    }
    let total: usize = names.iter().map(|n| params.get(n).unwrap().len()).sum();
    while picks.len() < coords {
        let mut flat = rng.below(total);
        for name in &names {
            let len = params.get(name).unwrap().len();
            if flat < len {
                picks.push((name.clone(), flat));
                break;
            }
            flat -= len;
        }
    }

    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    for (name, idx) in &picks {
        let mut p = params.clone();
        let base = p.get(name).unwrap().data()[*idx];
        p.get_mut(name).unwrap().data_mut()[*idx] = base + step;
        let plus = loss_at(spec, &p, x, y, mask_seed);
        p.get_mut(name).unwrap().data_mut()[*idx] = base - step;
        let minus = loss_at(spec, &p, x, y, mask_seed);
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.get(name).unwrap().data()[*idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{name}[{idx}]: analytic {analytic:e} numeric {numeric:e}");
        }
    }
    GradCheck {
        checked: picks.len(),
        max_rel_err,
        worst,
    }
}

/// Random sparse batch with roughly `density` of cells active.
pub fn random_sparse(rng: &mut SeededRng, rows: usize, cols: usize, density: f64) -> SparseBinaryMatrix {
    let lists = (0..rows)
        .map(|_| (0..cols as u32).filter(|_| rng.bernoulli(density)).collect())
        .collect();
    SparseBinaryMatrix::new(cols, lists).unwrap()
}

/// Brute-force label ranking metrics straight from their definitions,
/// O(L^2) per sample. Returns (lrap, coverage, ranking_loss, evaluable).
pub fn brute_force_ranking(scores: &[Vec<f32>], truth: &[Vec<u32>]) -> Option<(f64, f64, f64, usize)> {
    let mut lrap = 0.0;
    let mut cov = 0.0;
    let mut rl = 0.0;
    let mut n = 0usize;
    for (s, t) in scores.iter().zip(truth) {
        let l = s.len();
        let is_true = |j: usize| t.contains(&(j as u32));
        let n_true = (0..l).filter(|&j| is_true(j)).count();
        if n_true == 0 || n_true == l {
            continue;
        }
        n += 1;
        let rank = |j: usize| (0..l).filter(|&k| s[k] >= s[j]).count();
        let mut sample_lrap = 0.0;
        let mut max_rank = 0;
        for j in (0..l).filter(|&j| is_true(j)) {
            let r = rank(j);
            let tr = (0..l).filter(|&k| is_true(k) && s[k] >= s[j]).count();
            sample_lrap += tr as f64 / r as f64;
            max_rank = max_rank.max(r);
        }
        lrap += sample_lrap / n_true as f64;
        cov += max_rank as f64;
        let mut violated = 0usize;
        for tl in (0..l).filter(|&j| is_true(j)) {
            for f in (0..l).filter(|&j| !is_true(j)) {
                if s[f] >= s[tl] {
                    violated += 1;
                }
            }
        }
        rl += violated as f64 / (n_true * (l - n_true)) as f64;
    }
    (n > 0).then(|| (lrap / n as f64, cov / n as f64, rl / n as f64, n))
}
