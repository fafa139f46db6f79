#![allow(dead_code)]

pub mod grad_cases;

use ems_core::autograd::Mat;
use ems_core::corpus::{Emotion, FeatureSequence};
use ems_core::params::ParamStore;
use ems_core::rng::seeded;
use ndarray::Array2;
use rand::Rng;

/// A feature sequence with random frames and intensities.
pub fn random_sequence(t: usize, d: usize, emotion: Emotion, seed: u64) -> FeatureSequence {
    let mut rng = seeded(seed);
    FeatureSequence {
        frames: Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0)),
        frame_rate: 100.0,
        truth_frame_intensity: (0..t).map(|_| rng.random_range(0.0..1.0)).collect(),
        frame_units: (0..t).map(|_| rng.random_range(0..4)).collect(),
        emotion,
        utterance_id: format!("rand-{seed}"),
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Worst element-wise disagreement between analytic and central-difference
/// gradients over every scalar of every parameter.
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|)`; pairs where both are below
/// `floor` are compared on the absolute scale of `floor` instead.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences with step 1e-6 carry ~1e-10 round-off, so gradients
/// below this magnitude are compared on this absolute scale.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn grad_check<M>(
    model: &mut M,
    store: impl Fn(&mut M) -> &mut ParamStore,
    loss: impl Fn(&M) -> f64,
    analytic: &[Mat],
    eps: f64,
) -> GradReport {
    let mut report = GradReport { max_rel: 0.0, worst: String::new(), checked: 0 };
    let ids: Vec<_> = store(model).ids().collect();
    for id in ids {
        let (rows, cols) = store(model).get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = store(model).get(id)[[r, c]];
                store(model).get_mut(id)[[r, c]] = orig + eps;
                let plus = loss(model);
                store(model).get_mut(id)[[r, c]] = orig - eps;
                let minus = loss(model);
                store(model).get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[id.index()][[r, c]];
                let e = rel_err(a, numeric, GRAD_FLOOR);
                report.checked += 1;
                if e > report.max_rel {
                    report.max_rel = e;
                    report.worst = format!("{}[{r},{c}]: analytic {a:e} numeric {numeric:e}", store(model).name(id));
                }
            }
        }
    }
    report
}
