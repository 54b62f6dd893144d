//! Per-frame orchestration, whole-video inference, training steps, the
//! optimizer, and checkpointing.
//!
//! The first frame of a session bypasses memory readout and interaction (no
//! reference exists yet) and decodes the raw pyramid; it still stores its
//! own mask-conditioned features. Later frames read the banks, interact the
//! two memorized levels, decode, and update the banks with the interacted
//! features and predicted mask.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{interact, InteractionMode, InteractionParams};
use crate::loss::{combined_loss_vs_mask, LossConfig};
use crate::manifest::ClipData;
use crate::memory::{
    mem_refine, memory_update, MemoryBank, MemoryEncodeParams, MemoryReadConfig, MemoryReadParams,
};
use crate::nn::{AttentionConfig, ParamList};
use crate::pyramid::{
    decode, encode_frame, DecoderParams, EncoderParams, FeaturePyramid, PyramidConfig, Stage,
    LEVELS,
};
use crate::rng::Rng;
use crate::tensor::{
    finite_difference_check, read_tensor, write_tensor, GradCheckConfig, GradCheckReport, Tensor,
};

// ── Configuration ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Image,
    Flow,
    Both,
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputMode::Image => "image",
            InputMode::Flow => "flow",
            InputMode::Both => "both",
        })
    }
}

impl FromStr for InputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<InputMode> {
        match s {
            "image" => Ok(InputMode::Image),
            "flow" => Ok(InputMode::Flow),
            "both" => Ok(InputMode::Both),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(
                &self,
                s: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(
                d: D,
            ) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(InputMode);
string_serde!(InteractionMode);

/// Everything a run needs; serialized to the effective-config echo so any
/// run can be reproduced exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub side: usize,
    pub channels: [usize; LEVELS],
    pub stem_stride: usize,
    /// Sliding-window capacity N, shared by all banks.
    pub memory_capacity: usize,
    /// Update stride k, shared by all banks.
    pub memory_stride: usize,
    /// Training sequence length L.
    pub clip_len: usize,
    /// Levels with a memory bank. Levels 2 and 4 by default; 1 and 3 exist
    /// for the per-layer ablation.
    pub memory_levels: Vec<usize>,
    pub interaction: InteractionMode,
    pub input_mode: InputMode,
    pub attention_heads: usize,
    pub attention_out_proj: bool,
    /// Residual around the readout self-attention stage (off = literal).
    pub self_attention_residual: bool,
    pub ffn_ratio: usize,
    pub share_encoder_towers: bool,
    /// Detach stored memory features from the training graph.
    pub detach_memory: bool,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            side: 64,
            channels: [8, 16, 32, 64],
            stem_stride: 4,
            memory_capacity: 5,
            memory_stride: 1,
            clip_len: 5,
            memory_levels: vec![2, 4],
            interaction: InteractionMode::Standard,
            input_mode: InputMode::Both,
            attention_heads: 1,
            attention_out_proj: true,
            self_attention_residual: false,
            ffn_ratio: 4,
            share_encoder_towers: false,
            detach_memory: false,
            loss: LossConfig::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn pyramid(&self) -> PyramidConfig {
        PyramidConfig {
            side: self.side,
            channels: self.channels,
            stem_stride: self.stem_stride,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            heads: self.attention_heads,
            use_out_proj: self.attention_out_proj,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid().validate()?;
        self.loss.validate()?;
        if self.memory_capacity == 0 || self.memory_stride == 0 {
            return Err(Error::Config("memory capacity and stride must be ≥ 1".into()));
        }
        if self.clip_len == 0 {
            return Err(Error::Config("clip_len must be ≥ 1".into()));
        }
        if self.memory_levels.iter().any(|&l| !(1..=LEVELS).contains(&l)) {
            return Err(Error::Config(format!(
                "memory_levels must lie in 1..=4, got {:?}",
                self.memory_levels
            )));
        }
        let mut sorted = self.memory_levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.memory_levels.len() {
            return Err(Error::Config("memory_levels must not repeat".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be ≥ 0".into()));
        }
        Ok(())
    }

    fn sorted_memory_levels(&self) -> Vec<usize> {
        let mut levels = self.memory_levels.clone();
        levels.sort_unstable();
        levels
    }
}

// ── Model parameters ──────────────────────────────────────────────────

/// Every learnable tensor, addressable by hierarchical name. Memory
/// parameters exist for all four levels regardless of which are enabled, so
/// checkpoints stay interchangeable across ablation cells.
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub memory_read: BTreeMap<usize, MemoryReadParams>,
    pub memory_encode: BTreeMap<usize, MemoryEncodeParams>,
    pub interaction: InteractionParams,
}

impl ModelParams {
    pub fn init(cfg: &RunConfig, rng: &mut Rng) -> Result<ModelParams> {
        cfg.validate()?;
        let pyr = cfg.pyramid();
        let mut enc_rng = rng.derive("encoder");
        let mut dec_rng = rng.derive("decoder");
        let mut mem_rng = rng.derive("memory");
        let mut int_rng = rng.derive("interaction");

        let read_cfg = MemoryReadConfig {
            attention: cfg.attention(),
            self_residual: cfg.self_attention_residual,
            ffn_ratio: cfg.ffn_ratio,
        };
        let mut memory_read = BTreeMap::new();
        let mut memory_encode = BTreeMap::new();
        for level in 1..=LEVELS {
            let c = pyr.channels_at(level);
            memory_read.insert(level, MemoryReadParams::init(c, read_cfg, &mut mem_rng));
            memory_encode.insert(
                level,
                MemoryEncodeParams::init(c, cfg.ffn_ratio, &mut mem_rng),
            );
        }
        Ok(ModelParams {
            encoder: EncoderParams::init(&pyr, cfg.share_encoder_towers, &mut enc_rng),
            decoder: DecoderParams::init(&pyr, &mut dec_rng),
            memory_read,
            memory_encode,
            interaction: InteractionParams::init(
                pyr.channels_at(2),
                pyr.channels_at(4),
                cfg.attention(),
                cfg.ffn_ratio,
                &mut int_rng,
            ),
        })
    }

    /// All parameters under hierarchical names, in a fixed order.
    pub fn named(&self) -> ParamList {
        let mut out = ParamList::new();
        self.encoder.collect("encoder", &mut out);
        self.decoder.collect("decoder", &mut out);
        for (level, read) in &self.memory_read {
            read.collect(&format!("memory.level{level}.read"), &mut out);
        }
        for (level, enc) in &self.memory_encode {
            enc.collect(&format!("memory.level{level}.encode"), &mut out);
        }
        self.interaction.collect("interaction", &mut out);
        out
    }

    pub fn set_requires_grad(&self, value: bool) {
        for (_, t) in self.named() {
            t.set_requires_grad(value);
        }
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named() {
            t.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

// ── Session state ─────────────────────────────────────────────────────

/// Mutable inference state for one video: the banks of every enabled level
/// and the frame cursor. Banks share capacity and stride.
pub struct SessionState {
    pub banks: BTreeMap<usize, MemoryBank>,
    pub frame_cursor: usize,
    cfg: RunConfig,
}

impl SessionState {
    pub fn new(cfg: &RunConfig) -> Result<SessionState> {
        cfg.validate()?;
        let mut banks = BTreeMap::new();
        for level in cfg.sorted_memory_levels() {
            banks.insert(
                level,
                MemoryBank::new(level, cfg.memory_capacity, cfg.memory_stride)?,
            );
        }
        Ok(SessionState {
            banks,
            frame_cursor: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }
}

/// Stage each level must carry at decode time, given the frame position and
/// the ablation switches.
fn expected_stages(cfg: &RunConfig, first_frame: bool) -> [Stage; LEVELS] {
    let mut stages = [Stage::Raw; LEVELS];
    if first_frame {
        return stages;
    }
    for &level in &cfg.memory_levels {
        stages[level - 1] = Stage::MemRefined;
    }
    match cfg.interaction {
        InteractionMode::Standard | InteractionMode::Swapped => {
            stages[1] = Stage::Interacted;
            stages[3] = Stage::Interacted;
        }
        InteractionMode::S2hOnly => stages[3] = Stage::Interacted,
        InteractionMode::H2sOnly => stages[1] = Stage::Interacted,
        InteractionMode::Off => {}
    }
    stages
}

fn select_inputs(cfg: &RunConfig, image: &Tensor, flow: &Tensor) -> (Tensor, Tensor) {
    let zeros = || Tensor::zeros(&[3, cfg.side, cfg.side]);
    match cfg.input_mode {
        InputMode::Both => (image.clone(), flow.clone()),
        InputMode::Image => (image.clone(), zeros()),
        InputMode::Flow => (zeros(), flow.clone()),
    }
}

/// The memory-free forward: encode and decode the raw pyramid. The first
/// frame of any session takes exactly this path.
pub fn baseline_forward(
    image: &Tensor,
    flow: &Tensor,
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<Tensor> {
    let (image, flow) = select_inputs(cfg, image, flow);
    let pyramid = encode_frame(&image, &flow, &params.encoder, &cfg.pyramid())?;
    decode(&pyramid, &[Stage::Raw; LEVELS], &params.decoder, &cfg.pyramid())
}

/// Process one frame: encode, refine against memory (frames ≥ 2), interact
/// the two refined levels, decode, then store into every enabled bank.
pub fn process_frame(
    state: &mut SessionState,
    image: &Tensor,
    flow: &Tensor,
    params: &ModelParams,
) -> Result<Tensor> {
    let cfg = state.cfg.clone();
    let pyr_cfg = cfg.pyramid();
    let (image, flow) = select_inputs(&cfg, image, flow);
    let mut pyramid: FeaturePyramid = encode_frame(&image, &flow, &params.encoder, &pyr_cfg)?;

    let first_frame = state.frame_cursor == 0;
    if !first_frame {
        for (&level, bank) in state.banks.iter() {
            let read = &params.memory_read[&level];
            let (refined, _scores) = mem_refine(&pyramid.level(level).fused, bank, read)?;
            pyramid.advance(level, refined, Stage::MemRefined)?;
        }
        if cfg.interaction != InteractionMode::Off {
            let shallow = pyramid.level(2).fused.clone();
            let high = pyramid.level(4).fused.clone();
            let (f2, f4) = interact(
                &shallow,
                &high,
                pyr_cfg.level_side(2),
                &params.interaction,
                cfg.interaction,
            )?;
            if !f2.same_node(&shallow) {
                pyramid.advance(2, f2, Stage::Interacted)?;
            }
            if !f4.same_node(&high) {
                pyramid.advance(4, f4, Stage::Interacted)?;
            }
        }
    }

    let stages = expected_stages(&cfg, first_frame);
    let logits = decode(&pyramid, &stages, &params.decoder, &pyr_cfg)?;

    let frame_index = state.frame_cursor;
    for (&level, bank) in state.banks.iter_mut() {
        memory_update(
            bank,
            &pyramid.level(level).fused,
            &logits,
            frame_index,
            pyr_cfg.level_side(level),
            &params.memory_encode[&level],
            cfg.detach_memory,
        )?;
    }
    state.frame_cursor += 1;
    Ok(logits)
}

/// Run a whole video through a fresh session.
pub fn process_video(
    frames: &[Tensor],
    flows: &[Tensor],
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<Vec<Tensor>> {
    if frames.is_empty() || frames.len() != flows.len() {
        return Err(Error::Config(format!(
            "need equal non-empty frame/flow lists, got {} and {}",
            frames.len(),
            flows.len()
        )));
    }
    let mut state = SessionState::new(cfg)?;
    frames
        .iter()
        .zip(flows)
        .map(|(image, flow)| process_frame(&mut state, image, flow, params))
        .collect()
}

// ── Optimizer ─────────────────────────────────────────────────────────

/// Adaptive moments with decoupled weight decay. Moment buffers are keyed
/// by parameter name; parameters that received no gradient in a step are
/// left untouched.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn from_config(cfg: &RunConfig) -> AdamW {
        AdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &ParamList) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            p.apply_update(|data, grad| {
                let (m, v) = self
                    .moments
                    .entry(name.clone())
                    .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
                for i in 0..data.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps))
                        + self.lr * self.weight_decay * data[i];
                }
            });
        }
    }
}

/// One training step on a clip: forward over all frames with the banks part
/// of the graph, mean per-frame loss, backward, one optimizer update.
/// Returns the loss value.
pub fn train_step(
    clip: &ClipData,
    params: &ModelParams,
    opt: &mut AdamW,
    cfg: &RunConfig,
) -> Result<f64> {
    if clip.is_empty() {
        return Err(Error::Config("empty clip".into()));
    }
    if clip.len() != cfg.clip_len {
        return Err(Error::Config(format!(
            "clip length {} does not match configured L = {}",
            clip.len(),
            cfg.clip_len
        )));
    }
    let loss = clip_loss(clip, params, cfg)?;
    let value = loss.item();
    loss.backward()?;
    opt.step(&params.named());
    params.zero_grads();
    Ok(value)
}

/// Mean combined loss over all frames of a clip (forward only).
pub fn clip_loss(clip: &ClipData, params: &ModelParams, cfg: &RunConfig) -> Result<Tensor> {
    let logits = process_video(&clip.frames, &clip.flows, params, cfg)?;
    let mut losses = Vec::with_capacity(logits.len());
    for (l, m) in logits.iter().zip(&clip.masks) {
        losses.push(combined_loss_vs_mask(l, m, &cfg.loss)?);
    }
    let refs: Vec<&Tensor> = losses.iter().collect();
    Ok(Tensor::concat(&refs, 0)?.mean_all())
}

// ── Checkpoints ───────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &[u8; 4] = b"HMCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Write all parameters, sorted by name, in the tensor container format.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut named = params.named();
    named.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<u8> = Vec::new();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(named.len() as u64).to_le_bytes())?;
    for (name, t) in &named {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        write_tensor(&mut out, t)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Fill existing parameters from a checkpoint. Every stored name must match
/// an existing parameter of identical shape, and vice versa.
pub fn load_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    if u32::from_le_bytes(v4) != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version",
            path.display()
        )));
    }
    let mut u8buf = [0u8; 8];
    r.read_exact(&mut u8buf)?;
    let count = u64::from_le_bytes(u8buf) as usize;
    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        r.read_exact(&mut u8buf)?;
        let name_len = u64::from_le_bytes(u8buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("{}: non-utf8 name", path.display())))?;
        stored.insert(name, read_tensor(&mut r)?);
    }

    let named = params.named();
    for (name, t) in &named {
        let loaded = stored.remove(name).ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing parameter `{name}`", path.display()))
        })?;
        if loaded.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape mismatch for `{name}`: checkpoint {:?}, model {:?}",
                path.display(),
                loaded.shape(),
                t.shape()
            )));
        }
        t.set_data(&loaded.data());
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!(
            "{}: unknown parameter `{extra}`",
            path.display()
        )));
    }
    Ok(())
}

// ── Gradient checking of the assembled model ──────────────────────────

/// Finite-difference check of the whole model: the mean clip loss as a
/// function of every named parameter, on a synthetic clip.
pub fn full_model_gradcheck(cfg: &RunConfig, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = Rng::new(cfg.seed);
    let params = ModelParams::init(cfg, &mut rng)?;
    let clip = crate::synth::generate_clip(
        crate::synth::Scenario::Translate,
        // The generator wants sides divisible by 32; render at 32 and pool
        // down when the model runs smaller.
        cfg.side.max(32),
        cfg.side.max(32),
        cfg.clip_len,
        cfg.seed ^ 0x9d,
    )?;
    let mut data = resize_clip(&clip.to_data("gradcheck"), cfg.side)?;

    // Evaluate at a generic point: perturb parameters and inputs with seeded
    // noise. Fresh initialization is a degenerate point for a difference
    // quotient — biases are exactly zero and flat-colored regions put many
    // identical pre-activations at the same distance from their relu kink,
    // which concentrates non-smoothness right at the evaluation point.
    let mut jitter_rng = rng.derive("gradcheck-jitter");
    for (_, p) in params.named() {
        let jittered: Vec<f64> = p
            .data()
            .iter()
            .map(|v| v + jitter_rng.uniform(-0.02, 0.02))
            .collect();
        p.set_data(&jittered);
    }
    let jitter_tensor = |t: &Tensor, rng: &mut Rng| -> Result<Tensor> {
        let noisy: Vec<f64> = t.data().iter().map(|v| v + rng.uniform(-0.01, 0.01)).collect();
        Tensor::from_vec(&t.shape(), noisy)
    };
    for t in 0..data.len() {
        data.frames[t] = jitter_tensor(&data.frames[t], &mut jitter_rng)?;
        data.flows[t] = jitter_tensor(&data.flows[t], &mut jitter_rng)?;
    }

    let named = params.named();
    let mut f = || clip_loss(&data, &params, cfg);
    finite_difference_check(&mut f, &named, gc)
}

/// Finite-difference checks of every block in isolation, on small random
/// instances. Returns one report per block, in a fixed order.
pub fn component_gradchecks(
    gc: &GradCheckConfig,
    seed: u64,
) -> Result<Vec<(String, GradCheckReport)>> {
    use crate::interaction::{plam, sgim, PlamParams, SgimParams};
    use crate::memory::{memory_encode, MemoryBank, MemoryEntry};
    use crate::nn::{AttentionBlock, ChannelSpatialGate, DownsampleStack, Ffn, LinearLayer};

    let mut rng = Rng::new(seed);
    let mut jitter_rng = rng.derive("block-jitter");
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let attn_cfg = AttentionConfig::default();

    // Blocks are checked at a generic point: freshly initialized biases are
    // exactly zero, a degenerate spot for difference quotients.
    let mut run = |name: &str,
                   params: ParamList,
                   f: &mut dyn FnMut() -> Result<Tensor>|
     -> Result<()> {
        for (_, p) in &params {
            let jittered: Vec<f64> = p
                .data()
                .iter()
                .map(|v| v + jitter_rng.uniform(-0.05, 0.05))
                .collect();
            p.set_data(&jittered);
        }
        out.push((name.to_string(), finite_difference_check(f, &params, gc)?));
        Ok(())
    };

    {
        let layer = LinearLayer::init(4, 3, &mut rng);
        let x = Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        layer.collect("linear", &mut params);
        run("linear", params, &mut || {
            let y = layer.apply(&x)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let block = AttentionBlock::init(4, 6, 4, attn_cfg, &mut rng);
        let q = Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let k = Tensor::rand_uniform(&[7, 6], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        block.collect("attention", &mut params);
        run("attention", params, &mut || {
            let y = block.apply(&q, &k)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let ffn = Ffn::same_dim(4, 2, &mut rng);
        let x = Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        ffn.collect("ffn", &mut params);
        run("ffn", params, &mut || {
            let y = ffn.apply(&x)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let gate = ChannelSpatialGate::init(4, 4, &mut rng);
        let x = Tensor::rand_uniform(&[4, 4, 4], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        gate.collect("channel_spatial_gate", &mut params);
        run("channel_spatial_gate", params, &mut || {
            let y = gate.apply(&x)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let stack = DownsampleStack::init(4, 8, &mut rng);
        let x = Tensor::rand_uniform(&[4, 8, 8], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        stack.collect("downsample_stack", &mut params);
        run("downsample_stack", params, &mut || {
            let y = stack.apply_map(&x)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let pyr = PyramidConfig {
            side: 16,
            channels: [2, 3, 4, 5],
            stem_stride: 2,
        };
        let enc = EncoderParams::init(&pyr, false, &mut rng);
        let dec = DecoderParams::init(&pyr, &mut rng);
        let image = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let flow = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        enc.collect("encoder", &mut params);
        run("encoder", params, &mut || {
            let pyramid = encode_frame(&image, &flow, &enc, &pyr)?;
            let mut acc = pyramid.level(1).fused.sum_all();
            for level in 2..=LEVELS {
                let f = &pyramid.level(level).fused;
                acc = acc.add(&f.mul(f)?.sum_all())?;
            }
            Ok(acc)
        })?;
        let mut params = ParamList::new();
        dec.collect("decoder", &mut params);
        run("decoder", params, &mut || {
            let pyramid = encode_frame(&image, &flow, &enc, &pyr)?;
            let logits = decode(&pyramid, &[Stage::Raw; LEVELS], &dec, &pyr)?;
            Ok(logits.mul(&logits)?.sum_all())
        })?;
    }
    {
        let read = MemoryReadParams::init(4, MemoryReadConfig::default(), &mut rng);
        let entries = (0..2)
            .map(|t| MemoryEntry {
                features: Tensor::rand_uniform(&[9, 4], -1.0, 1.0, &mut rng),
                frame_index: t,
            })
            .collect();
        let bank = MemoryBank::with_entries(2, 4, 1, entries)?;
        let fused = Tensor::rand_uniform(&[9, 4], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        read.collect("memory_readout", &mut params);
        run("memory_readout", params, &mut || {
            let (y, _) = mem_refine(&fused, &bank, &read)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let enc = MemoryEncodeParams::init(4, 2, &mut rng);
        let feats = Tensor::rand_uniform(&[16, 4], -1.0, 1.0, &mut rng);
        let logits = Tensor::rand_uniform(&[1, 16, 16], -2.0, 2.0, &mut rng);
        let mut params = ParamList::new();
        enc.collect("memory_encoder", &mut params);
        run("memory_encoder", params, &mut || {
            let y = memory_encode(&feats, &logits, 4, &enc)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let p = PlamParams::init(4, 8, 2, &mut rng);
        let shallow = Tensor::rand_uniform(&[64, 4], -1.0, 1.0, &mut rng);
        let high = Tensor::rand_uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let mut params = ParamList::new();
        p.collect("local_alignment", &mut params);
        run("local_alignment", params, &mut || {
            let y = plam(&shallow, &high, 8, &p)?;
            Ok(y.mul(&y)?.sum_all())
        })?;

        let s = SgimParams::init(4, 8, attn_cfg, 2, &mut rng);
        let mut params = ParamList::new();
        s.collect("global_integration", &mut params);
        run("global_integration", params, &mut || {
            let y = sgim(&high, &shallow, &s)?;
            Ok(y.mul(&y)?.sum_all())
        })?;
    }
    {
        let logits = Tensor::rand_uniform(&[1, 4, 4], -1.5, 1.5, &mut rng);
        logits.set_requires_grad(true);
        let gt = crate::mask::Mask::from_fn(4, 4, |y, x| (y + x) % 2 == 0).to_tensor();
        let loss_cfg = LossConfig::default();
        let params = vec![("logits".to_string(), logits.clone())];
        run("combined_loss", params, &mut || {
            crate::loss::combined_loss(&logits, &gt, &loss_cfg)
        })?;
    }
    Ok(out)
}

/// Nearest-neighbor downscale of a clip to the model side (diagnostic
/// configs run below the generator's minimum side).
pub fn resize_clip(clip: &ClipData, side: usize) -> Result<ClipData> {
    let src_side = clip.masks[0].height();
    if src_side == side {
        return Ok(clip.clone());
    }
    if !src_side.is_multiple_of(side) {
        return Err(Error::Config(format!(
            "cannot resize clip from {src_side} to {side}"
        )));
    }
    let factor = src_side / side;
    let pick = |t: &Tensor| -> Result<Tensor> {
        let data = t.data();
        let mut out = vec![0.0; 3 * side * side];
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    out[(c * side + y) * side + x] =
                        data[(c * src_side + y * factor) * src_side + x * factor];
                }
            }
        }
        Tensor::from_vec(&[3, side, side], out)
    };
    let mut frames = Vec::new();
    let mut flows = Vec::new();
    let mut masks = Vec::new();
    for t in 0..clip.len() {
        frames.push(pick(&clip.frames[t])?);
        flows.push(pick(&clip.flows[t])?);
        masks.push(crate::mask::Mask::from_fn(side, side, |y, x| {
            clip.masks[t].get(y * factor, x * factor)
        }));
    }
    Ok(ClipData {
        name: clip.name.clone(),
        frames,
        flows,
        masks,
    })
}
