//! Deterministic synthetic video clips: hard-edged shapes moving over a
//! textured background, with pixel-exact masks and the renderer's exact
//! displacement field per frame.
//!
//! Rendering happens in world coordinates: the background is a fixed value
//! function on a torus and each object has a world-space trajectory, so
//! integer motions warp exactly (the basis of the flow-consistency tests).
//! Flow field `t` describes motion from frame `t` to `t+1`; the last frame
//! reuses the previous field.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{flow_to_color, FlowField};
use crate::mask::Mask;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Translate,
    Scale,
    Occlude,
    MultiObject,
    CameraPan,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Translate => "translate",
            Scenario::Scale => "scale",
            Scenario::Occlude => "occlude",
            Scenario::MultiObject => "multi_object",
            Scenario::CameraPan => "camera_pan",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "translate" => Ok(Scenario::Translate),
            "scale" => Ok(Scenario::Scale),
            "occlude" => Ok(Scenario::Occlude),
            "multi_object" => Ok(Scenario::MultiObject),
            "camera_pan" => Ok(Scenario::CameraPan),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// A generated clip: images, color-encoded flows, exact masks, and the raw
/// displacement fields behind the encodings.
#[derive(Clone)]
pub struct ClipSample {
    pub frames: Vec<Tensor>,
    pub flows: Vec<Tensor>,
    pub flow_fields: Vec<FlowField>,
    pub gt_masks: Vec<Mask>,
    pub seed: u64,
    pub scenario: Scenario,
}

/// Default flow normalization: 10% of the image side.
pub fn default_max_mag(side: usize) -> f64 {
    side as f64 * 0.1
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect { half_w: f64, half_h: f64 },
    Disc { radius: f64 },
}

#[derive(Clone)]
struct ObjectTrack {
    kind: ShapeKind,
    color: [f64; 3],
    /// World-space center per frame.
    centers: Vec<(f64, f64)>,
    /// Radius scale per frame (1.0 except in the scale scenario).
    scales: Vec<f64>,
    /// Counted as foreground in the ground-truth mask?
    foreground: bool,
}

impl ObjectTrack {
    fn contains(&self, frame: usize, wx: f64, wy: f64) -> bool {
        let (cx, cy) = self.centers[frame];
        let s = self.scales[frame];
        match self.kind {
            ShapeKind::Rect { half_w, half_h } => {
                (wx - cx).abs() <= half_w * s && (wy - cy).abs() <= half_h * s
            }
            ShapeKind::Disc { radius } => {
                let r = radius * s;
                (wx - cx) * (wx - cx) + (wy - cy) * (wy - cy) <= r * r
            }
        }
    }

    /// Screen-space displacement of this object's content from `frame` to
    /// `frame+1` under camera offset deltas.
    fn screen_velocity(&self, frame: usize, cam_delta: (f64, f64)) -> (f64, f64) {
        let (x0, y0) = self.centers[frame];
        let (x1, y1) = self.centers[frame + 1];
        (x1 - x0 - cam_delta.0, y1 - y0 - cam_delta.1)
    }
}

fn hash01(seed: u64, x: i64, y: i64, c: u64) -> f64 {
    let mut h = seed ^ 0x51ab_de3f_00c1_77d5;
    for v in [x as u64, y as u64, c] {
        h ^= v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = h.rotate_left(27).wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Background texture as a fixed function of world coordinates on a torus:
/// a coarse 8×8-cell noise grid so the field has structure at object scale.
fn background_value(seed: u64, side: usize, wx: i64, wy: i64, c: usize) -> f64 {
    let s = side as i64;
    let x = wx.rem_euclid(s);
    let y = wy.rem_euclid(s);
    let cell = (side / 8).max(1) as i64;
    let coarse = hash01(seed, x / cell, y / cell, c as u64);
    let fine = hash01(seed ^ 0xabcd, x, y, c as u64);
    0.15 + 0.5 * coarse + 0.1 * fine
}

struct Scene {
    objects: Vec<ObjectTrack>, // drawn in order; later entries on top
    camera: Vec<(f64, f64)>,   // camera offset per frame
}

fn rand_color(rng: &mut Rng) -> [f64; 3] {
    [
        rng.uniform(0.55, 1.0),
        rng.uniform(0.2, 0.9),
        rng.uniform(0.2, 0.9),
    ]
}

fn rand_shape(rng: &mut Rng, side: f64) -> ShapeKind {
    if rng.next_f64() < 0.5 {
        ShapeKind::Rect {
            half_w: rng.uniform(side * 0.10, side * 0.18),
            half_h: rng.uniform(side * 0.10, side * 0.18),
        }
    } else {
        ShapeKind::Disc {
            radius: rng.uniform(side * 0.11, side * 0.18),
        }
    }
}

/// Integer velocity and start position keeping a shape of extent `ext`
/// inside [margin, side−margin] for `frames` steps.
fn integer_track(
    rng: &mut Rng,
    side: usize,
    ext: f64,
    frames: usize,
    max_v: i64,
) -> Vec<(f64, f64)> {
    let s = side as f64;
    let lo = ext + 1.0;
    let hi = s - ext - 2.0;
    let span = (hi - lo).max(1.0);
    let steps = (frames - 1) as f64;
    let max_tv = ((span / 2.0 / steps.max(1.0)).floor() as i64).clamp(1, max_v);
    let mut vx = rng.range_i64(-max_tv, max_tv);
    let mut vy = rng.range_i64(-max_tv, max_tv);
    if vx == 0 && vy == 0 {
        vx = max_tv;
        vy = if rng.next_f64() < 0.5 { 0 } else { -max_tv };
    }
    // Start where the whole trajectory stays inside [lo, hi]:
    // x0 ∈ [lo − min(0, travel), hi − max(0, travel)].
    let travel_x = vx as f64 * steps;
    let travel_y = vy as f64 * steps;
    let x0 = rng
        .uniform(lo - travel_x.min(0.0), hi - travel_x.max(0.0))
        .floor();
    let y0 = rng
        .uniform(lo - travel_y.min(0.0), hi - travel_y.max(0.0))
        .floor();
    (0..frames)
        .map(|t| (x0 + (vx * t as i64) as f64, y0 + (vy * t as i64) as f64))
        .collect()
}

fn build_scene(scenario: Scenario, side: usize, frames: usize, rng: &mut Rng) -> Scene {
    let s = side as f64;
    let still = vec![(0.0, 0.0); frames];
    match scenario {
        Scenario::Translate => {
            let kind = rand_shape(rng, s);
            let ext = match kind {
                ShapeKind::Rect { half_w, half_h } => half_w.max(half_h),
                ShapeKind::Disc { radius } => radius,
            };
            Scene {
                objects: vec![ObjectTrack {
                    kind,
                    color: rand_color(rng),
                    centers: integer_track(rng, side, ext, frames, 3),
                    scales: vec![1.0; frames],
                    foreground: true,
                }],
                camera: still,
            }
        }
        Scenario::Scale => {
            let radius = s * 0.12;
            let center = (s / 2.0, s / 2.0);
            let growth = rng.uniform(0.05, 0.10);
            Scene {
                objects: vec![ObjectTrack {
                    kind: ShapeKind::Disc { radius },
                    color: rand_color(rng),
                    centers: vec![center; frames],
                    scales: (0..frames).map(|t| 1.0 + growth * t as f64).collect(),
                    foreground: true,
                }],
                camera: still,
            }
        }
        Scenario::Occlude => {
            // Static foreground, occluding bar sweeping across it.
            let kind = rand_shape(rng, s);
            let cy = (s / 2.0).floor();
            let cx = (s / 2.0).floor();
            let fg = ObjectTrack {
                kind,
                color: rand_color(rng),
                centers: vec![(cx, cy); frames],
                scales: vec![1.0; frames],
                foreground: true,
            };
            let bar_half = (s * 0.08).max(2.0);
            let speed = ((s / frames as f64).floor()).max(2.0);
            let start_x = bar_half - s * 0.5;
            let bar = ObjectTrack {
                kind: ShapeKind::Rect {
                    half_w: bar_half,
                    half_h: s,
                },
                color: rand_color(rng),
                centers: (0..frames)
                    .map(|t| (start_x + speed * t as f64, cy))
                    .collect(),
                scales: vec![1.0; frames],
                foreground: false,
            };
            Scene {
                objects: vec![fg, bar],
                camera: still,
            }
        }
        Scenario::MultiObject => {
            let count = 2 + rng.below(2);
            let objects = (0..count)
                .map(|_| {
                    let kind = rand_shape(rng, s);
                    let ext = match kind {
                        ShapeKind::Rect { half_w, half_h } => half_w.max(half_h),
                        ShapeKind::Disc { radius } => radius,
                    };
                    ObjectTrack {
                        kind,
                        color: rand_color(rng),
                        centers: integer_track(rng, side, ext, frames, 2),
                        scales: vec![1.0; frames],
                        foreground: true,
                    }
                })
                .collect();
            Scene {
                objects,
                camera: still,
            }
        }
        Scenario::CameraPan => {
            let kind = rand_shape(rng, s);
            let ext = match kind {
                ShapeKind::Rect { half_w, half_h } => half_w.max(half_h),
                ShapeKind::Disc { radius } => radius,
            };
            let pan_x = rng.range_i64(1, 2);
            let pan_y = rng.range_i64(-1, 1);
            let camera = (0..frames)
                .map(|t| ((pan_x * t as i64) as f64, (pan_y * t as i64) as f64))
                .collect();
            // Object world track shifted so it stays on screen under the pan.
            let base = integer_track(rng, side, ext, frames, 2);
            let centers = base
                .iter()
                .enumerate()
                .map(|(t, (x, y))| ((pan_x * t as i64) as f64 + x, (pan_y * t as i64) as f64 + y))
                .collect();
            Scene {
                objects: vec![ObjectTrack {
                    kind,
                    color: rand_color(rng),
                    centers,
                    scales: vec![1.0; frames],
                    foreground: true,
                }],
                camera,
            }
        }
    }
}

/// Generate a deterministic clip. `height == width`, divisible by 32, and
/// `frames ≥ 1`.
pub fn generate_clip(
    scenario: Scenario,
    height: usize,
    width: usize,
    frames: usize,
    seed: u64,
) -> Result<ClipSample> {
    if height != width || height == 0 || !height.is_multiple_of(32) {
        return Err(Error::InvalidShape {
            op: "generate_clip",
            shape: vec![height, width],
            detail: "square side divisible by 32 required".into(),
        });
    }
    if frames == 0 {
        return Err(Error::Config("clip length must be ≥ 1".into()));
    }
    let side = height;
    let mut rng = Rng::new(seed);
    let scene = build_scene(scenario, side, frames, &mut rng);
    let max_mag = default_max_mag(side);

    let mut out_frames = Vec::with_capacity(frames);
    let mut out_masks = Vec::with_capacity(frames);
    let mut fields = Vec::with_capacity(frames);

    for t in 0..frames {
        let cam = scene.camera[t];
        let mut img = vec![0.0; 3 * side * side];
        let mut mask = Mask::new(side, side);
        // Topmost object at each pixel; None = background.
        let mut owner = vec![usize::MAX; side * side];

        for y in 0..side {
            for x in 0..side {
                let wx = x as f64 + cam.0;
                let wy = y as f64 + cam.1;
                let mut color = [
                    background_value(seed, side, wx as i64, wy as i64, 0),
                    background_value(seed, side, wx as i64, wy as i64, 1),
                    background_value(seed, side, wx as i64, wy as i64, 2),
                ];
                let mut fg = false;
                for (oi, obj) in scene.objects.iter().enumerate() {
                    if obj.contains(t, wx, wy) {
                        color = obj.color;
                        owner[y * side + x] = oi;
                        fg = obj.foreground;
                    }
                }
                mask.set(y, x, fg);
                for c in 0..3 {
                    img[(c * side + y) * side + x] = color[c];
                }
            }
        }

        // Flow t → t+1 from per-owner screen velocities.
        if t + 1 < frames {
            let cam_next = scene.camera[t + 1];
            let cam_delta = (cam_next.0 - cam.0, cam_next.1 - cam.1);
            let mut field = FlowField::zeros(side, side);
            for y in 0..side {
                for x in 0..side {
                    let (u, v) = match owner[y * side + x] {
                        usize::MAX => (-cam_delta.0, -cam_delta.1),
                        oi => scene.objects[oi].screen_velocity(t, cam_delta),
                    };
                    field.set(y, x, u, v);
                }
            }
            fields.push(field);
        }

        out_frames.push(Tensor::from_vec(&[3, side, side], img)?);
        out_masks.push(mask);
    }

    // Last frame reuses the previous field (or zero for single-frame clips).
    let last = fields
        .last()
        .cloned()
        .unwrap_or_else(|| FlowField::zeros(side, side));
    fields.push(last);

    let flows = fields
        .iter()
        .map(|f| flow_to_color(f, max_mag))
        .collect::<Result<Vec<_>>>()?;

    Ok(ClipSample {
        frames: out_frames,
        flows,
        flow_fields: fields,
        gt_masks: out_masks,
        seed,
        scenario,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let a = generate_clip(Scenario::Translate, 32, 32, 5, 42).unwrap();
        let b = generate_clip(Scenario::Translate, 32, 32, 5, 42).unwrap();
        for t in 0..5 {
            assert_eq!(bits(&a.frames[t]), bits(&b.frames[t]));
            assert_eq!(bits(&a.flows[t]), bits(&b.flows[t]));
            assert_eq!(a.gt_masks[t], b.gt_masks[t]);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(generate_clip(Scenario::Translate, 33, 33, 5, 1).is_err());
        assert!(generate_clip(Scenario::Translate, 32, 64, 5, 1).is_err());
        assert!(generate_clip(Scenario::Translate, 32, 32, 0, 1).is_err());
    }

    #[test]
    fn translate_masks_are_exact_translates() {
        for seed in 0..8 {
            let clip = generate_clip(Scenario::Translate, 32, 32, 5, seed).unwrap();
            let m0 = &clip.gt_masks[0];
            assert!(!m0.is_empty());
            // Velocity from the flow field at any foreground pixel.
            let (fy, fx) = (0..32)
                .flat_map(|y| (0..32).map(move |x| (y, x)))
                .find(|&(y, x)| m0.get(y, x))
                .unwrap();
            let (u, v) = clip.flow_fields[0].get(fy, fx);
            let (dx, dy) = (u as i64, v as i64);
            for t in 1..5 {
                let mt = &clip.gt_masks[t];
                assert!(!mt.is_empty());
                for y in 0..32i64 {
                    for x in 0..32i64 {
                        let sx = x - dx * t as i64;
                        let sy = y - dy * t as i64;
                        let expect = if (0..32).contains(&sx) && (0..32).contains(&sy) {
                            m0.get(sy as usize, sx as usize)
                        } else {
                            false
                        };
                        assert_eq!(mt.get(y as usize, x as usize), expect, "t={t} ({y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn warp_consistency_on_integer_scenarios() {
        // Warping frame t by the t→t+1 field must reproduce frame t+1 exactly
        // on pixels whose owner does not change (single-object scenarios:
        // owner maps are the masks themselves).
        for scenario in [Scenario::Translate, Scenario::CameraPan] {
            for seed in 0..5 {
                let clip = generate_clip(scenario, 32, 32, 4, 100 + seed).unwrap();
                for t in 0..3usize {
                    let cur = clip.frames[t].data();
                    let next = clip.frames[t + 1].data();
                    let field = &clip.flow_fields[t];
                    let mut checked = 0usize;
                    for y in 0..32usize {
                        for x in 0..32usize {
                            let (u, v) = field.get(y, x);
                            let tx = x as i64 + u as i64;
                            let ty = y as i64 + v as i64;
                            if !(0..32).contains(&tx) || !(0..32).contains(&ty) {
                                continue;
                            }
                            let src_owner = clip.gt_masks[t].get(y, x);
                            let dst_owner = clip.gt_masks[t + 1].get(ty as usize, tx as usize);
                            if src_owner != dst_owner {
                                continue; // disocclusion
                            }
                            for c in 0..3 {
                                let a = cur[(c * 32 + y) * 32 + x];
                                let b = next[(c * 32 + ty as usize) * 32 + tx as usize];
                                assert_eq!(a.to_bits(), b.to_bits(), "{scenario} t={t}");
                            }
                            checked += 1;
                        }
                    }
                    assert!(checked > 500, "warp test covered too few pixels");
                }
            }
        }
    }

    #[test]
    fn occlude_scenario_covers_foreground() {
        let mut found_partial = false;
        for seed in 0..10 {
            let clip = generate_clip(Scenario::Occlude, 32, 32, 5, seed).unwrap();
            let counts: Vec<usize> = clip.gt_masks.iter().map(|m| m.count_foreground()).collect();
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            if min < max {
                found_partial = true;
            }
        }
        assert!(found_partial, "occluder never covered the foreground");
    }

    #[test]
    fn multi_object_masks_nonempty() {
        for seed in 0..5 {
            let clip = generate_clip(Scenario::MultiObject, 32, 32, 5, seed).unwrap();
            for m in &clip.gt_masks {
                assert!(!m.is_empty());
            }
        }
    }

    #[test]
    fn scale_scenario_grows() {
        let clip = generate_clip(Scenario::Scale, 32, 32, 5, 3).unwrap();
        let c0 = clip.gt_masks[0].count_foreground();
        let c4 = clip.gt_masks[4].count_foreground();
        assert!(c4 > c0);
    }
}
