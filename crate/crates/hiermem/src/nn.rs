//! Parametric building blocks composed by the model: linear projections,
//! scaled dot-product attention, feed-forward nets, channel/spatial gates,
//! convolution layers, and the strided downsampling stack.
//!
//! Weights initialize as uniform(−√(1/fan_in), +√(1/fan_in)) with zero bias,
//! drawn from the seeded generator, where fan_in counts the inputs feeding
//! one output (C_in for linear layers, C_in·k² for convolutions). Parameters
//! register under hierarchical dotted names for checkpoints and gradient
//! checks.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Named parameter list, built by each block under a dotted prefix.
pub type ParamList = Vec<(String, Tensor)>;

pub(crate) fn push_param(out: &mut ParamList, prefix: &str, name: &str, t: &Tensor) {
    out.push((format!("{prefix}.{name}"), t.clone()));
}

// ── Linear ────────────────────────────────────────────────────────────

/// Affine map of token rows: `x·W + b` for `x: [N, C_in]`.
#[derive(Clone)]
pub struct LinearLayer {
    pub weight: Tensor, // [C_in, C_out]
    pub bias: Tensor,   // [C_out]
}

impl LinearLayer {
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / c_in as f64).sqrt();
        let weight = Tensor::rand_uniform(&[c_in, c_out], -bound, bound, rng);
        weight.set_requires_grad(true);
        let bias = Tensor::zeros(&[c_out]);
        bias.set_requires_grad(true);
        LinearLayer { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row_bias(&self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        push_param(out, prefix, "weight", &self.weight);
        push_param(out, prefix, "bias", &self.bias);
    }
}

// ── Conv ──────────────────────────────────────────────────────────────

/// 2D convolution layer over `[C, H, W]` maps with per-channel bias.
#[derive(Clone)]
pub struct Conv2dLayer {
    pub weight: Tensor, // [C_out, C_in, k, k]
    pub bias: Tensor,   // [C_out]
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    pub fn init(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = (1.0 / (c_in * k * k) as f64).sqrt();
        let weight = Tensor::rand_uniform(&[c_out, c_in, k, k], -bound, bound, rng);
        weight.set_requires_grad(true);
        let bias = Tensor::zeros(&[c_out]);
        bias.set_requires_grad(true);
        Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.stride, self.padding)?
            .add_channel_bias(&self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        push_param(out, prefix, "weight", &self.weight);
        push_param(out, prefix, "bias", &self.bias);
    }
}

// ── Attention ─────────────────────────────────────────────────────────

/// Attention knobs. One head and an output projection by default; both are
/// exposed because single-product equations leave them unstated.
#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub heads: usize,
    pub use_out_proj: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 1,
            use_out_proj: true,
        }
    }
}

/// Scaled dot-product attention: `Softmax(QᵀK/√d)·V` with linear Q/K/V
/// projections and an optional output projection.
#[derive(Clone)]
pub struct AttentionBlock {
    pub q_proj: LinearLayer,
    pub k_proj: LinearLayer,
    pub v_proj: LinearLayer,
    pub out_proj: Option<LinearLayer>,
    /// Key dimension d; the softmax scale is exactly 1/√(d/heads).
    pub key_dim: usize,
    pub heads: usize,
}

impl AttentionBlock {
    /// `query_dim`/`key_src_dim` are the input widths; `key_dim` is d.
    /// Output width always equals `query_dim`.
    pub fn init(
        query_dim: usize,
        key_src_dim: usize,
        key_dim: usize,
        cfg: AttentionConfig,
        rng: &mut Rng,
    ) -> Self {
        assert!(cfg.heads >= 1 && key_dim.is_multiple_of(cfg.heads));
        let v_out = if cfg.use_out_proj { key_dim } else { query_dim };
        AttentionBlock {
            q_proj: LinearLayer::init(query_dim, key_dim, rng),
            k_proj: LinearLayer::init(key_src_dim, key_dim, rng),
            v_proj: LinearLayer::init(key_src_dim, v_out, rng),
            out_proj: cfg
                .use_out_proj
                .then(|| LinearLayer::init(key_dim, query_dim, rng)),
            key_dim,
            heads: cfg.heads,
        }
    }

    /// Attend from `query_src: [Nq, Cq]` to `key_src: [Nk, Ck]`.
    /// Self-attention is the call with `key_src == query_src`.
    pub fn apply(&self, query_src: &Tensor, key_src: &Tensor) -> Result<Tensor> {
        Ok(self.apply_with_scores(query_src, key_src)?.0)
    }

    /// Same as [`Self::apply`] but also returns the pre-softmax score matrix
    /// (heads stacked along rows; `[Nq, Nk]` for one head).
    pub fn apply_with_scores(
        &self,
        query_src: &Tensor,
        key_src: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        if key_src.shape()[0] == 0 {
            return Err(Error::EmptyKeys);
        }
        let q = self.q_proj.apply(query_src)?;
        let k = self.k_proj.apply(key_src)?;
        let v = self.v_proj.apply(key_src)?;

        let head_dim = self.key_dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let v_head = v.shape()[1] / self.heads;

        let mut head_outs = Vec::with_capacity(self.heads);
        let mut head_scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * head_dim, head_dim)?;
            let kh = k.narrow(1, h * head_dim, head_dim)?;
            let vh = v.narrow(1, h * v_head, v_head)?;
            let scores = qh.matmul(&kh.transpose2d()?)?.scale(scale);
            let mixed = scores.softmax(1)?.matmul(&vh)?;
            head_outs.push(mixed);
            head_scores.push(scores);
        }
        let out_refs: Vec<&Tensor> = head_outs.iter().collect();
        let mixed = Tensor::concat(&out_refs, 1)?;
        let score_refs: Vec<&Tensor> = head_scores.iter().collect();
        let scores = Tensor::concat(&score_refs, 0)?;

        let out = match &self.out_proj {
            Some(proj) => proj.apply(&mixed)?,
            None => mixed,
        };
        Ok((out, scores))
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.q_proj.collect(&format!("{prefix}.q_proj"), out);
        self.k_proj.collect(&format!("{prefix}.k_proj"), out);
        self.v_proj.collect(&format!("{prefix}.v_proj"), out);
        if let Some(p) = &self.out_proj {
            p.collect(&format!("{prefix}.out_proj"), out);
        }
    }
}

// ── Feed-forward ──────────────────────────────────────────────────────

/// Two linear layers with a relu between. `same_dim` keeps input and output
/// widths equal (hidden = ratio·C); `projecting` maps between widths.
#[derive(Clone)]
pub struct Ffn {
    pub lin1: LinearLayer,
    pub lin2: LinearLayer,
}

impl Ffn {
    pub fn same_dim(dim: usize, ratio: usize, rng: &mut Rng) -> Self {
        Ffn {
            lin1: LinearLayer::init(dim, dim * ratio, rng),
            lin2: LinearLayer::init(dim * ratio, dim, rng),
        }
    }

    pub fn projecting(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Ffn {
            lin1: LinearLayer::init(in_dim, hidden, rng),
            lin2: LinearLayer::init(hidden, out_dim, rng),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.lin2.apply(&self.lin1.apply(x)?.relu())
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.lin1.collect(&format!("{prefix}.lin1"), out);
        self.lin2.collect(&format!("{prefix}.lin2"), out);
    }
}

// ── Channel/spatial gate ──────────────────────────────────────────────

/// Dual-pool gating: a channel stage re-weights channels from pooled
/// descriptors (avg + max through a shared bottleneck MLP, summed, sigmoid),
/// then a spatial stage re-weights positions from channel-wise avg/max maps
/// through a 7×7 convolution. Channel first, then spatial.
#[derive(Clone)]
pub struct ChannelSpatialGate {
    pub mlp1: LinearLayer,    // C → C/r
    pub mlp2: LinearLayer,    // C/r → C
    pub spatial: Conv2dLayer, // 2 → 1, 7×7
}

impl ChannelSpatialGate {
    pub fn init(channels: usize, reduction: usize, rng: &mut Rng) -> Self {
        let hidden = (channels / reduction).max(1);
        ChannelSpatialGate {
            mlp1: LinearLayer::init(channels, hidden, rng),
            mlp2: LinearLayer::init(hidden, channels, rng),
            spatial: Conv2dLayer::init(2, 1, 7, 1, 3, rng),
        }
    }

    /// Gate a `[C, H, W]` map. Outputs keep the sign of the input: both gate
    /// stages scale by values in (0, 1).
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let flat = x.reshape(&[c, h * w])?;

        // Channel stage.
        let avg_desc = flat.mean_axis(1)?.reshape(&[1, c])?;
        let max_desc = flat.max_axis(1)?.reshape(&[1, c])?;
        let shared = |d: &Tensor| -> Result<Tensor> { self.mlp2.apply(&self.mlp1.apply(d)?.relu()) };
        let gate_c = shared(&avg_desc)?
            .add(&shared(&max_desc)?)?
            .sigmoid()
            .reshape(&[c])?;
        let gated = x.mul_channel_gate(&gate_c)?;

        // Spatial stage.
        let gated_flat = gated.reshape(&[c, h * w])?;
        let avg_map = gated_flat.mean_axis(0)?.reshape(&[1, h, w])?;
        let max_map = gated_flat.max_axis(0)?.reshape(&[1, h, w])?;
        let desc = Tensor::concat(&[&avg_map, &max_map], 0)?;
        let gate_s = self.spatial.apply(&desc)?.sigmoid();
        gated.mul_spatial_gate(&gate_s)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.mlp1.collect(&format!("{prefix}.mlp1"), out);
        self.mlp2.collect(&format!("{prefix}.mlp2"), out);
        self.spatial.collect(&format!("{prefix}.spatial"), out);
    }
}

// ── Downsample stack ──────────────────────────────────────────────────

/// Two stride-2 conv+relu stages followed by a linear channel projection,
/// taking a shallow-level map down to the high-level grid (4× spatially).
#[derive(Clone)]
pub struct DownsampleStack {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub proj: LinearLayer, // C2 → C4
}

impl DownsampleStack {
    pub fn init(c2: usize, c4: usize, rng: &mut Rng) -> Self {
        DownsampleStack {
            conv1: Conv2dLayer::init(c2, c2, 3, 2, 1, rng),
            conv2: Conv2dLayer::init(c2, c2, 3, 2, 1, rng),
            proj: LinearLayer::init(c2, c4, rng),
        }
    }

    /// `[C2, H2, W2]` → `[C4, H2/4, W2/4]`; H2 and W2 must divide by 4.
    pub fn apply_map(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 || !s[1].is_multiple_of(4) || !s[2].is_multiple_of(4) {
            return Err(Error::InvalidShape {
                op: "downsample_stack",
                shape: s,
                detail: "spatial extents must divide by 4".into(),
            });
        }
        let y = self.conv1.apply(x)?.relu();
        let y = self.conv2.apply(&y)?.relu();
        let (h4, w4) = (s[1] / 4, s[2] / 4);
        let tokens = y.map_to_tokens()?;
        self.proj.apply(&tokens)?.tokens_to_map(h4, w4)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        self.proj.collect(&format!("{prefix}.proj"), out);
    }
}
