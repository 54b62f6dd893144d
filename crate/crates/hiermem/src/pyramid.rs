//! The toy four-level hierarchical encoder and the bottom-up decoder.
//!
//! Two parallel conv towers (shared architecture, separate parameters unless
//! sharing is configured) encode the image and the flow rendering; per level
//! the fused feature is the plain sum of the two. Features live in token
//! layout `[H_i·W_i, C_i]`.
//!
//! Spatial schedule: stage 1 reduces by `stem_stride`, stages 2–4 by 2 each,
//! so level i sits at side/(stem·2^(i−1)). The default stem of 4 gives the
//! 1/4, 1/8, 1/16, 1/32 ladder; smaller stems keep all four levels alive on
//! tiny diagnostic inputs.

use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, LinearLayer, ParamList};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    /// Input side; height and width are equal.
    pub side: usize,
    /// Channels per level, strictly increasing.
    pub channels: [usize; LEVELS],
    /// Stride of stage 1: 4 (two stride-2 convs), 2, or 1.
    pub stem_stride: usize,
}

impl PyramidConfig {
    pub fn new(side: usize, channels: [usize; LEVELS]) -> PyramidConfig {
        PyramidConfig {
            side,
            channels,
            stem_stride: 4,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.stem_stride * 8
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.stem_stride) {
            return Err(Error::Config(format!(
                "stem_stride must be 1, 2 or 4, got {}",
                self.stem_stride
            )));
        }
        if self.side == 0 || !self.side.is_multiple_of(self.total_stride()) {
            return Err(Error::Config(format!(
                "side {} must be a positive multiple of {}",
                self.side,
                self.total_stride()
            )));
        }
        if !self.channels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "channels must be strictly increasing, got {:?}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Side length of level `i ∈ 1..=4`.
    pub fn level_side(&self, level: usize) -> usize {
        self.side / (self.stem_stride << (level - 1))
    }

    pub fn tokens(&self, level: usize) -> usize {
        let s = self.level_side(level);
        s * s
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.channels[level - 1]
    }
}

/// Refinement stage of a level's fused feature. Transitions may only move
/// forward: raw → mem_refined → interacted (skipping is allowed, going back
/// is not).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    MemRefined,
    Interacted,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::MemRefined => "mem_refined",
            Stage::Interacted => "interacted",
        }
    }
}

/// Per-level features in token layout.
#[derive(Clone)]
pub struct LevelFeatures {
    pub image: Tensor,
    pub flow: Tensor,
    pub fused: Tensor,
    pub stage: Stage,
}

/// The four per-level feature triples of one frame.
#[derive(Clone)]
pub struct FeaturePyramid {
    levels: Vec<LevelFeatures>,
}

impl FeaturePyramid {
    pub fn level(&self, level: usize) -> &LevelFeatures {
        &self.levels[level - 1]
    }

    /// Replace the fused feature of a level, enforcing forward-only stage
    /// transitions.
    pub fn advance(&mut self, level: usize, fused: Tensor, stage: Stage) -> Result<()> {
        let cur = &mut self.levels[level - 1];
        if stage <= cur.stage {
            return Err(Error::StageMismatch {
                level,
                expected: "a later stage",
                got: stage.name(),
            });
        }
        if fused.shape() != cur.fused.shape() {
            return Err(Error::ShapeMismatch {
                op: "pyramid_advance",
                lhs: cur.fused.shape(),
                rhs: fused.shape(),
            });
        }
        cur.fused = fused;
        cur.stage = stage;
        Ok(())
    }
}

// ── Encoder ───────────────────────────────────────────────────────────

/// One conv tower: a stem reaching `stem_stride`, then three stride-2
/// stages. All convs are 3×3 with unit padding and relu.
#[derive(Clone)]
pub struct EncoderTower {
    pub stem: Vec<Conv2dLayer>,
    pub stages: Vec<Conv2dLayer>, // stages 2..4
}

impl EncoderTower {
    pub fn init(cfg: &PyramidConfig, rng: &mut Rng) -> Self {
        let [c1, c2, c3, c4] = cfg.channels;
        let stem = match cfg.stem_stride {
            4 => vec![
                Conv2dLayer::init(3, c1, 3, 2, 1, rng),
                Conv2dLayer::init(c1, c1, 3, 2, 1, rng),
            ],
            2 => vec![Conv2dLayer::init(3, c1, 3, 2, 1, rng)],
            _ => vec![Conv2dLayer::init(3, c1, 3, 1, 1, rng)],
        };
        EncoderTower {
            stem,
            stages: vec![
                Conv2dLayer::init(c1, c2, 3, 2, 1, rng),
                Conv2dLayer::init(c2, c3, 3, 2, 1, rng),
                Conv2dLayer::init(c3, c4, 3, 2, 1, rng),
            ],
        }
    }

    /// Per-level token features of one `[3, H, W]` input.
    pub fn apply(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut y = x.clone();
        for conv in &self.stem {
            y = conv.apply(&y)?.relu();
        }
        let mut levels = vec![y.map_to_tokens()?];
        for conv in &self.stages {
            y = conv.apply(&y)?.relu();
            levels.push(y.map_to_tokens()?);
        }
        Ok(levels)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        for (i, conv) in self.stem.iter().enumerate() {
            conv.collect(&format!("{prefix}.stem{}", i + 1), out);
        }
        for (i, conv) in self.stages.iter().enumerate() {
            conv.collect(&format!("{prefix}.stage{}", i + 2), out);
        }
    }
}

/// Both towers. `flow_tower` is `None` when weight sharing is configured, in
/// which case the image tower encodes both inputs.
#[derive(Clone)]
pub struct EncoderParams {
    pub image_tower: EncoderTower,
    pub flow_tower: Option<EncoderTower>,
}

impl EncoderParams {
    pub fn init(cfg: &PyramidConfig, share_towers: bool, rng: &mut Rng) -> Self {
        EncoderParams {
            image_tower: EncoderTower::init(cfg, rng),
            flow_tower: (!share_towers).then(|| EncoderTower::init(cfg, rng)),
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.image_tower
            .collect(&format!("{prefix}.image_tower"), out);
        if let Some(ft) = &self.flow_tower {
            ft.collect(&format!("{prefix}.flow_tower"), out);
        }
    }
}

/// Encode one frame: run both towers and fuse per level by addition.
pub fn encode_frame(
    image: &Tensor,
    flow: &Tensor,
    params: &EncoderParams,
    cfg: &PyramidConfig,
) -> Result<FeaturePyramid> {
    cfg.validate()?;
    let expected = vec![3, cfg.side, cfg.side];
    for (name, t) in [("image", image), ("flow", flow)] {
        if t.shape() != expected {
            return Err(Error::InvalidShape {
                op: "encode_frame",
                shape: t.shape(),
                detail: format!("{name} must be [3, {0}, {0}]", cfg.side),
            });
        }
    }
    let image_levels = params.image_tower.apply(image)?;
    let flow_levels = match &params.flow_tower {
        Some(ft) => ft.apply(flow)?,
        None => params.image_tower.apply(flow)?,
    };
    let mut levels = Vec::with_capacity(LEVELS);
    for (i, f) in image_levels.into_iter().zip(flow_levels) {
        let fused = i.add(&f)?;
        levels.push(LevelFeatures {
            image: i,
            flow: f,
            fused,
            stage: Stage::Raw,
        });
    }
    Ok(FeaturePyramid { levels })
}

// ── Decoder ───────────────────────────────────────────────────────────

/// Bottom-up decoder: starting from level 4, project to the next channel
/// width, 2× bilinear upsample, add the lower level, conv+relu; the head
/// maps to one channel and upsamples by the stem stride. Returns logits.
#[derive(Clone)]
pub struct DecoderParams {
    pub proj: Vec<LinearLayer>,  // [C4→C3, C3→C2, C2→C1]
    pub fuse: Vec<Conv2dLayer>,  // 3×3 at C3, C2, C1
    pub head: Conv2dLayer,       // C1 → 1
}

impl DecoderParams {
    pub fn init(cfg: &PyramidConfig, rng: &mut Rng) -> Self {
        let [c1, c2, c3, c4] = cfg.channels;
        DecoderParams {
            proj: vec![
                LinearLayer::init(c4, c3, rng),
                LinearLayer::init(c3, c2, rng),
                LinearLayer::init(c2, c1, rng),
            ],
            fuse: vec![
                Conv2dLayer::init(c3, c3, 3, 1, 1, rng),
                Conv2dLayer::init(c2, c2, 3, 1, 1, rng),
                Conv2dLayer::init(c1, c1, 3, 1, 1, rng),
            ],
            head: Conv2dLayer::init(c1, 1, 3, 1, 1, rng),
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        for (i, p) in self.proj.iter().enumerate() {
            p.collect(&format!("{prefix}.proj{}", 4 - i), out);
        }
        for (i, f) in self.fuse.iter().enumerate() {
            f.collect(&format!("{prefix}.fuse{}", 3 - i), out);
        }
        self.head.collect(&format!("{prefix}.head"), out);
    }
}

/// Decode mask logits `[1, side, side]` from a pyramid whose levels carry
/// the expected stages.
pub fn decode(
    pyramid: &FeaturePyramid,
    expected_stages: &[Stage; LEVELS],
    params: &DecoderParams,
    cfg: &PyramidConfig,
) -> Result<Tensor> {
    for level in 1..=LEVELS {
        let got = pyramid.level(level).stage;
        let want = expected_stages[level - 1];
        if got != want {
            return Err(Error::StageMismatch {
                level,
                expected: want.name(),
                got: got.name(),
            });
        }
    }

    let mut x = pyramid.level(4).fused.clone(); // tokens [H4W4, C4]
    for (i, level) in [3usize, 2, 1].into_iter().enumerate() {
        let upper_side = cfg.level_side(level + 1);
        let projected = params.proj[i].apply(&x)?;
        let map = projected.tokens_to_map(upper_side, upper_side)?;
        let up = map.upsample_bilinear(2)?;
        let lower = pyramid
            .level(level)
            .fused
            .tokens_to_map(cfg.level_side(level), cfg.level_side(level))?;
        let fused = up.add(&lower)?;
        let conv = params.fuse[i].apply(&fused)?.relu();
        x = conv.map_to_tokens()?;
    }
    let map1 = x.tokens_to_map(cfg.level_side(1), cfg.level_side(1))?;
    let logits = params.head.apply(&map1)?;
    logits.upsample_bilinear(cfg.stem_stride)
}

/// Stage vector for a plain decode of raw features.
pub fn raw_stages() -> [Stage; LEVELS] {
    [Stage::Raw; LEVELS]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> PyramidConfig {
        PyramidConfig::new(64, [4, 8, 16, 32])
    }

    fn zero_tower(t: &mut EncoderTower) {
        for conv in t.stem.iter_mut().chain(t.stages.iter_mut()) {
            conv.weight = Tensor::zeros(&conv.weight.shape());
            conv.bias = Tensor::zeros(&conv.bias.shape());
        }
    }

    #[test]
    fn level_token_counts_at_side_64() {
        let cfg = toy_cfg();
        cfg.validate().unwrap();
        assert_eq!(
            (1..=4).map(|l| cfg.tokens(l)).collect::<Vec<_>>(),
            vec![256, 64, 16, 4]
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(PyramidConfig::new(48, [4, 8, 16, 32]).validate().is_err());
        assert!(PyramidConfig::new(64, [8, 8, 16, 32]).validate().is_err());
        let mut cfg = PyramidConfig::new(64, [4, 8, 16, 32]);
        cfg.stem_stride = 3;
        assert!(cfg.validate().is_err());
        // Reduced stem keeps a 16-pixel input valid.
        let mut small = PyramidConfig::new(16, [4, 8, 16, 32]);
        small.stem_stride = 2;
        small.validate().unwrap();
        assert_eq!(small.level_side(4), 1);
    }

    #[test]
    fn fusion_is_exact_addition() {
        let cfg = toy_cfg();
        let mut rng = Rng::new(3);
        let params = EncoderParams::init(&cfg, false, &mut rng);
        let image = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let pyr = encode_frame(&image, &flow, &params, &cfg).unwrap();
        for level in 1..=4 {
            let lf = pyr.level(level);
            let (i, o, f) = (lf.image.data(), lf.flow.data(), lf.fused.data());
            for idx in 0..f.len() {
                assert_eq!(f[idx].to_bits(), (i[idx] + o[idx]).to_bits());
            }
            assert_eq!(lf.stage, Stage::Raw);
        }
    }

    #[test]
    fn zero_flow_tower_leaves_image_features() {
        let cfg = toy_cfg();
        let mut rng = Rng::new(4);
        let mut params = EncoderParams::init(&cfg, false, &mut rng);
        zero_tower(params.flow_tower.as_mut().unwrap());
        let image = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let pyr = encode_frame(&image, &flow, &params, &cfg).unwrap();
        for level in 1..=4 {
            let lf = pyr.level(level);
            assert_eq!(lf.fused.data(), lf.image.data());
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let cfg = toy_cfg();
        let mut rng = Rng::new(5);
        let params = EncoderParams::init(&cfg, false, &mut rng);
        let image = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let a = encode_frame(&image, &flow, &params, &cfg).unwrap();
        let b = encode_frame(&image, &flow, &params, &cfg).unwrap();
        for level in 1..=4 {
            let (fa, fb) = (a.level(level).fused.data(), b.level(level).fused.data());
            for (x, y) in fa.iter().zip(&fb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn encode_rejects_wrong_side() {
        let cfg = toy_cfg();
        let mut rng = Rng::new(6);
        let params = EncoderParams::init(&cfg, false, &mut rng);
        let image = Tensor::zeros(&[3, 32, 32]);
        let flow = Tensor::zeros(&[3, 32, 32]);
        assert!(encode_frame(&image, &flow, &params, &cfg).is_err());
    }

    #[test]
    fn decode_output_shape_and_zero_case() {
        let cfg = toy_cfg();
        let mut rng = Rng::new(7);
        let enc = EncoderParams::init(&cfg, false, &mut rng);
        let mut dec = DecoderParams::init(&cfg, &mut rng);
        let image = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let pyr = encode_frame(&image, &flow, &enc, &cfg).unwrap();
        let logits = decode(&pyr, &raw_stages(), &dec, &cfg).unwrap();
        assert_eq!(logits.shape(), vec![1, 64, 64]);

        // All-zero features + zero head bias → logits ≡ 0 (p ≡ 0.5).
        let zero_img = Tensor::zeros(&[3, 64, 64]);
        let mut zero_enc = EncoderParams::init(&cfg, false, &mut rng);
        zero_tower(&mut zero_enc.image_tower);
        zero_tower(zero_enc.flow_tower.as_mut().unwrap());
        for p in dec.proj.iter_mut() {
            p.weight = Tensor::zeros(&p.weight.shape());
            p.bias = Tensor::zeros(&p.bias.shape());
        }
        for f in dec.fuse.iter_mut() {
            f.weight = Tensor::zeros(&f.weight.shape());
            f.bias = Tensor::zeros(&f.bias.shape());
        }
        dec.head.weight = Tensor::zeros(&dec.head.weight.shape());
        dec.head.bias = Tensor::zeros(&dec.head.bias.shape());
        let pyr0 = encode_frame(&zero_img, &zero_img, &zero_enc, &cfg).unwrap();
        let logits0 = decode(&pyr0, &raw_stages(), &dec, &cfg).unwrap();
        assert!(logits0.data().iter().all(|&v| v == 0.0));
        let probs = logits0.sigmoid().data();
        assert!(probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn decode_matches_layer_by_layer_composition() {
        let cfg = PyramidConfig::new(32, [2, 3, 4, 5]);
        let mut rng = Rng::new(8);
        let enc = EncoderParams::init(&cfg, false, &mut rng);
        let dec = DecoderParams::init(&cfg, &mut rng);
        let image = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let pyr = encode_frame(&image, &flow, &enc, &cfg).unwrap();
        let got = decode(&pyr, &raw_stages(), &dec, &cfg).unwrap();

        // Same documented composition, written out by hand.
        let t4 = pyr.level(4).fused.clone();
        let s4 = cfg.level_side(4);
        let x3 = dec.proj[0]
            .apply(&t4)
            .unwrap()
            .tokens_to_map(s4, s4)
            .unwrap()
            .upsample_bilinear(2)
            .unwrap()
            .add(
                &pyr.level(3)
                    .fused
                    .tokens_to_map(cfg.level_side(3), cfg.level_side(3))
                    .unwrap(),
            )
            .unwrap();
        let x3 = dec.fuse[0].apply(&x3).unwrap().relu();
        let x2 = dec.proj[1]
            .apply(&x3.map_to_tokens().unwrap())
            .unwrap()
            .tokens_to_map(cfg.level_side(3), cfg.level_side(3))
            .unwrap()
            .upsample_bilinear(2)
            .unwrap()
            .add(
                &pyr.level(2)
                    .fused
                    .tokens_to_map(cfg.level_side(2), cfg.level_side(2))
                    .unwrap(),
            )
            .unwrap();
        let x2 = dec.fuse[1].apply(&x2).unwrap().relu();
        let x1 = dec.proj[2]
            .apply(&x2.map_to_tokens().unwrap())
            .unwrap()
            .tokens_to_map(cfg.level_side(2), cfg.level_side(2))
            .unwrap()
            .upsample_bilinear(2)
            .unwrap()
            .add(
                &pyr.level(1)
                    .fused
                    .tokens_to_map(cfg.level_side(1), cfg.level_side(1))
                    .unwrap(),
            )
            .unwrap();
        let x1 = dec.fuse[2].apply(&x1).unwrap().relu();
        let want = dec
            .head
            .apply(&x1)
            .unwrap()
            .upsample_bilinear(cfg.stem_stride)
            .unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn decode_gradient_reaches_every_level() {
        let cfg = PyramidConfig::new(32, [2, 3, 4, 5]);
        let mut rng = Rng::new(9);
        let enc = EncoderParams::init(&cfg, false, &mut rng);
        let dec = DecoderParams::init(&cfg, &mut rng);
        let image = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let mut pyr = encode_frame(&image, &flow, &enc, &cfg).unwrap();
        // Swap fused features for trainable leaves.
        let mut leaves = Vec::new();
        for level in 1..=4 {
            let shape = pyr.level(level).fused.shape();
            let leaf = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);
            leaf.set_requires_grad(true);
            pyr.levels[level - 1].fused = leaf.clone();
            leaves.push(leaf);
        }
        let logits = decode(&pyr, &raw_stages(), &dec, &cfg).unwrap();
        logits.sum_all().backward().unwrap();
        for (level, leaf) in leaves.iter().enumerate() {
            let g = leaf.grad().expect("grad missing");
            assert!(
                g.iter().any(|&v| v != 0.0),
                "level {} got no gradient",
                level + 1
            );
        }
    }

    #[test]
    fn stage_transitions_enforce_forward_motion() {
        let cfg = PyramidConfig::new(32, [2, 3, 4, 5]);
        let mut rng = Rng::new(10);
        let enc = EncoderParams::init(&cfg, false, &mut rng);
        let image = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let mut pyr = encode_frame(&image, &flow, &enc, &cfg).unwrap();
        let f2 = pyr.level(2).fused.clone();
        pyr.advance(2, f2.clone(), Stage::MemRefined).unwrap();
        assert!(pyr.advance(2, f2.clone(), Stage::Raw).is_err());
        pyr.advance(2, f2.clone(), Stage::Interacted).unwrap();
        assert!(pyr.advance(2, f2, Stage::Interacted).is_err());

        // Decode validates expected stages.
        let dec = DecoderParams::init(&cfg, &mut rng);
        let err = decode(&pyr, &raw_stages(), &dec, &cfg);
        assert!(matches!(err, Err(Error::StageMismatch { level: 2, .. })));
    }
}
