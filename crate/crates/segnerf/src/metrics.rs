//! Depth-completion metrics over valid pixels: RMSE and MAE in meters,
//! median relative error, and inclusive delta-threshold percentages.

use crate::error::{Error, Result};
use crate::math::Grid2;
use serde::{Deserialize, Serialize};

/// Guard for the inclusive boundary rule under float rounding: a ratio
/// within this of the threshold counts as inside.
const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    /// Root mean squared error, meters.
    pub rmse: f64,
    /// Mean absolute error, meters.
    pub mae: f64,
    /// Median of |pred - gt| / gt.
    pub rel: f64,
    /// Percentage of pixels with |pred - gt| / gt <= 0.05.
    pub delta_105: f64,
    pub delta_110: f64,
    pub delta_125: f64,
}

/// Metrics over the pixels where `valid` is on. Ground truth must be
/// positive there.
pub fn compute_metrics(
    pred: &Grid2<f64>,
    gt: &Grid2<f64>,
    valid: &Grid2<bool>,
) -> Result<DepthMetrics> {
    if !pred.same_shape(gt) || !pred.same_shape(valid) {
        return Err(Error::domain("metric rasters must share dimensions"));
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut rels: Vec<f64> = Vec::new();
    let mut within = [0usize; 3];
    for i in 0..pred.data.len() {
        if !valid.data[i] {
            continue;
        }
        let (p, g) = (pred.data[i], gt.data[i]);
        if g <= 0.0 {
            return Err(Error::domain("ground-truth depth must be positive on valid pixels"));
        }
        let e = p - g;
        sq += e * e;
        abs += e.abs();
        let rel = e.abs() / g;
        rels.push(rel);
        for (k, thr) in [0.05, 0.10, 0.25].into_iter().enumerate() {
            if rel <= thr + BOUNDARY_EPS {
                within[k] += 1;
            }
        }
    }
    if rels.is_empty() {
        return Err(Error::domain("no valid pixels to evaluate"));
    }
    let n = rels.len() as f64;
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rel = if rels.len() % 2 == 1 {
        rels[rels.len() / 2]
    } else {
        0.5 * (rels[rels.len() / 2 - 1] + rels[rels.len() / 2])
    };
    Ok(DepthMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        rel,
        delta_105: 100.0 * within[0] as f64 / n,
        delta_110: 100.0 * within[1] as f64 / n,
        delta_125: 100.0 * within[2] as f64 / n,
    })
}

/// Unweighted mean across scenes (scene errors first, dataset mean second).
pub fn aggregate_metrics(per_scene: &[DepthMetrics]) -> Result<DepthMetrics> {
    if per_scene.is_empty() {
        return Err(Error::domain("nothing to aggregate"));
    }
    let n = per_scene.len() as f64;
    let mut out = DepthMetrics::default();
    for m in per_scene {
        out.rmse += m.rmse;
        out.mae += m.mae;
        out.rel += m.rel;
        out.delta_105 += m.delta_105;
        out.delta_110 += m.delta_110;
        out.delta_125 += m.delta_125;
    }
    out.rmse /= n;
    out.mae /= n;
    out.rel /= n;
    out.delta_105 /= n;
    out.delta_110 /= n;
    out.delta_125 /= n;
    Ok(out)
}

impl std::fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rmse {:.4} m, mae {:.4} m, rel {:.4}, d1.05 {:.1}%, d1.10 {:.1}%, d1.25 {:.1}%",
            self.rmse, self.mae, self.rel, self.delta_105, self.delta_110, self.delta_125
        )
    }
}
