//! Evaluation metrics: region similarity J (intersection-over-union),
//! boundary accuracy F, their mean J&F, mean absolute error, and the maximum
//! F-measure over thresholds.
//!
//! Conventions, documented because benchmark tooling differs:
//! * J with both masks empty is 1.0.
//! * A boundary pixel is a foreground pixel with a 4-neighbor that is
//!   background or outside the image.
//! * Boundary precision over an empty predicted boundary is vacuously 1 (and
//!   symmetrically for recall), so identical empty masks score F = 1 while an
//!   empty prediction against a real boundary scores 0.
//! * The default boundary tolerance is ceil(0.8% of the image diagonal).
//! * Max F-measure uses β² = 0.3 over the 255 thresholds i/255, i ∈ 0..255,
//!   binarizing as p > t.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// β² for the saliency F-measure.
pub const F_MEASURE_BETA_SQ: f64 = 0.3;

fn check_shapes(pred: &Mask, gt: &Mask) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: vec![pred.height(), pred.width()],
            rhs: vec![gt.height(), gt.width()],
        });
    }
    Ok(())
}

/// Intersection-over-union of two binary masks; 1.0 when both are empty.
pub fn region_similarity_j(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, g) in pred.values().iter().zip(gt.values()) {
        inter += (*p && *g) as usize;
        union += (*p || *g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// 4-connected boundary pixels: foreground with a background or out-of-image
/// 4-neighbor. Returned as (y, x) pairs in row-major order.
pub fn boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// DAVIS-style default: ceil(0.8% of the image diagonal), at least 1.
pub fn default_boundary_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    (0.008 * diag).ceil().max(1.0) as usize
}

/// Membership grid of all pixels within Chebyshev distance `tol` of any
/// listed pixel.
fn dilate(points: &[(usize, usize)], h: usize, w: usize, tol: usize) -> Vec<bool> {
    let mut grid = vec![false; h * w];
    let t = tol as i64;
    for &(y, x) in points {
        for dy in -t..=t {
            let yy = y as i64 + dy;
            if yy < 0 || yy >= h as i64 {
                continue;
            }
            for dx in -t..=t {
                let xx = x as i64 + dx;
                if xx >= 0 && xx < w as i64 {
                    grid[(yy * w as i64 + xx) as usize] = true;
                }
            }
        }
    }
    grid
}

/// Boundary F-score at a pixel tolerance: precision is the matched fraction
/// of predicted boundary pixels within Chebyshev distance ≤ `tolerance_px`
/// of the reference boundary, recall symmetric, F = 2PR/(P+R).
pub fn boundary_f(pred: &Mask, gt: &Mask, tolerance_px: usize) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);

    let precision = if pb.is_empty() {
        1.0
    } else {
        let near_gt = dilate(&gb, h, w, tolerance_px);
        let matched = pb.iter().filter(|&&(y, x)| near_gt[y * w + x]).count();
        matched as f64 / pb.len() as f64
    };
    let recall = if gb.is_empty() {
        1.0
    } else {
        let near_pred = dilate(&pb, h, w, tolerance_px);
        let matched = gb.iter().filter(|&&(y, x)| near_pred[y * w + x]).count();
        matched as f64 / gb.len() as f64
    };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Mean absolute error between a probability map and a binary mask.
pub fn mae(pred_prob: &[f64], gt: &Mask) -> Result<f64> {
    if pred_prob.len() != gt.height() * gt.width() {
        return Err(Error::ShapeMismatch {
            op: "mae",
            lhs: vec![pred_prob.len()],
            rhs: vec![gt.height(), gt.width()],
        });
    }
    for &p in pred_prob {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
    }
    let total: f64 = pred_prob
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / pred_prob.len() as f64)
}

/// Maximum F_β (β² = 0.3) over 255 uniform thresholds.
///
/// Counts are folded into `F = (1+β²)·TP / (β²·|gt| + |pred positives|)`,
/// which equals `(1+β²)PR / (β²P + R)` wherever the latter is defined and is
/// 0 where both are degenerate.
pub fn max_f_measure(pred_prob: &[f64], gt: &Mask) -> Result<f64> {
    if pred_prob.len() != gt.height() * gt.width() {
        return Err(Error::ShapeMismatch {
            op: "max_f_measure",
            lhs: vec![pred_prob.len()],
            rhs: vec![gt.height(), gt.width()],
        });
    }
    for &p in pred_prob {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
    }
    let gt_count = gt.count_foreground();
    let mut best = 0.0f64;
    for i in 0..255u32 {
        let t = i as f64 / 255.0;
        let mut tp = 0usize;
        let mut pp = 0usize;
        for (&p, &g) in pred_prob.iter().zip(gt.values()) {
            if p > t {
                pp += 1;
                tp += g as usize;
            }
        }
        // num = TP + β²·TP and den = PP + β²·GP share their expression
        // shape, so TP = PP = GP gives exactly 1 and monotone rounding keeps
        // the ratio within [0, 1].
        let num = tp as f64 + F_MEASURE_BETA_SQ * tp as f64;
        let den = pp as f64 + F_MEASURE_BETA_SQ * gt_count as f64;
        let f = if den == 0.0 { 0.0 } else { num / den };
        best = best.max(f);
    }
    Ok(best)
}

// ── Reports ───────────────────────────────────────────────────────────

/// Per-frame metric values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub mae: f64,
    pub f_max: f64,
}

/// One record per sequence, plus an aggregate record, serialized as JSON
/// lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kind: String,
    pub name: String,
    pub frames: usize,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub mae_mean: f64,
    pub fm_mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_frame: Vec<FrameMetrics>,
}

impl MetricRecord {
    pub fn from_frames(kind: &str, name: &str, per_frame: Vec<FrameMetrics>) -> MetricRecord {
        let n = per_frame.len().max(1) as f64;
        let sum = |f: fn(&FrameMetrics) -> f64| per_frame.iter().map(f).sum::<f64>() / n;
        MetricRecord {
            kind: kind.to_string(),
            name: name.to_string(),
            frames: per_frame.len(),
            j_mean: sum(|m| m.j),
            f_mean: sum(|m| m.f),
            jf_mean: sum(|m| m.jf),
            mae_mean: sum(|m| m.mae),
            fm_mean: sum(|m| m.f_max),
            per_frame,
        }
    }

    /// Aggregate of sequence records, weighting each sequence equally.
    pub fn aggregate(records: &[MetricRecord]) -> MetricRecord {
        let n = records.len().max(1) as f64;
        MetricRecord {
            kind: "aggregate".into(),
            name: "all".into(),
            frames: records.iter().map(|r| r.frames).sum(),
            j_mean: records.iter().map(|r| r.j_mean).sum::<f64>() / n,
            f_mean: records.iter().map(|r| r.f_mean).sum::<f64>() / n,
            jf_mean: records.iter().map(|r| r.jf_mean).sum::<f64>() / n,
            mae_mean: records.iter().map(|r| r.mae_mean).sum::<f64>() / n,
            fm_mean: records.iter().map(|r| r.fm_mean).sum::<f64>() / n,
            per_frame: Vec::new(),
        }
    }
}

/// Evaluate one frame: threshold at 0.5 for J and boundary F, raw
/// probabilities for MAE and max F-measure.
pub fn evaluate_frame(frame: usize, probs: &[f64], gt: &Mask) -> Result<FrameMetrics> {
    let (h, w) = (gt.height(), gt.width());
    let pred = Mask::from_probs(probs, h, w, 0.5)?;
    let j = region_similarity_j(&pred, gt)?;
    let f = boundary_f(&pred, gt, default_boundary_tolerance(h, w))?;
    Ok(FrameMetrics {
        frame,
        j,
        f,
        jf: (j + f) / 2.0,
        mae: mae(probs, gt)?,
        f_max: max_f_measure(probs, gt)?,
    })
}
