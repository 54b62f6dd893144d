//! Per-level attention memory: self-refinement of the current frame,
//! cross-frame readout against stored reference features, mask-conditioned
//! encoding of new entries, and the sliding-window FIFO update.
//!
//! A bank stores at most `capacity` entries and accepts a new one every
//! `stride` frames (the first frame always stores). Entries are kept oldest
//! first; eviction always removes the oldest. Readout concatenates all
//! entries into one key/value matrix, so the refined feature is invariant to
//! token order inside the memory.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{AttentionBlock, AttentionConfig, Ffn, LinearLayer, ParamList};
use crate::rng::Rng;
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// One stored reference: mask-conditioned features of a processed frame.
#[derive(Clone)]
pub struct MemoryEntry {
    pub features: Tensor, // [H_i·W_i, C_i]
    pub frame_index: usize,
}

/// FIFO sliding-window bank for one pyramid level.
#[derive(Clone)]
pub struct MemoryBank {
    pub level: usize,
    entries: VecDeque<MemoryEntry>,
    pub capacity: usize,
    pub stride: usize,
    last_update_frame: Option<usize>,
}

impl MemoryBank {
    pub fn new(level: usize, capacity: usize, stride: usize) -> Result<MemoryBank> {
        if capacity == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "memory bank needs positive capacity and stride, got N={capacity} k={stride}"
            )));
        }
        Ok(MemoryBank {
            level,
            entries: VecDeque::new(),
            capacity,
            stride,
            last_update_frame: None,
        })
    }

    /// Build a bank directly from entries (tests, dump restoration).
    /// Entries must be strictly increasing in frame index and fit capacity.
    pub fn with_entries(
        level: usize,
        capacity: usize,
        stride: usize,
        entries: Vec<MemoryEntry>,
    ) -> Result<MemoryBank> {
        let mut bank = MemoryBank::new(level, capacity, stride)?;
        for e in entries {
            if bank.entries.len() >= capacity {
                return Err(Error::Config("more entries than capacity".into()));
            }
            if let Some(last) = bank.last_update_frame {
                if e.frame_index <= last {
                    return Err(Error::NonMonotoneFrame {
                        frame: e.frame_index,
                        last,
                    });
                }
            }
            bank.last_update_frame = Some(e.frame_index);
            bank.entries.push_back(e);
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// All reference tokens, oldest entry first: `[T·H_i·W_i, C_i]`.
    pub fn concat_features(&self) -> Result<Tensor> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        let parts: Vec<&Tensor> = self.entries.iter().map(|e| &e.features).collect();
        Tensor::concat(&parts, 0)
    }

    fn push(&mut self, entry: MemoryEntry) {
        self.entries.push_back(entry);
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Serialize entry count, frame indices and feature blobs.
    pub fn dump(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.frame_index as u64).to_le_bytes())?;
            write_tensor(w, &e.features)?;
        }
        Ok(())
    }

    pub fn restore(
        level: usize,
        capacity: usize,
        stride: usize,
        r: &mut impl Read,
    ) -> Result<MemoryBank> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let count = u64::from_le_bytes(buf) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let frame_index = u64::from_le_bytes(buf) as usize;
            entries.push(MemoryEntry {
                features: read_tensor(r)?,
                frame_index,
            });
        }
        MemoryBank::with_entries(level, capacity, stride, entries)
    }
}

// ── Readout parameters ────────────────────────────────────────────────

/// Readout knobs exposed because the equations leave them unstated: the
/// self-attention stage is literal (no residual) by default, while the
/// closing feed-forward always carries a residual so the retrieved term
/// survives it.
#[derive(Debug, Clone, Copy)]
pub struct MemoryReadConfig {
    pub attention: AttentionConfig,
    pub self_residual: bool,
    pub ffn_ratio: usize,
}

impl Default for MemoryReadConfig {
    fn default() -> Self {
        MemoryReadConfig {
            attention: AttentionConfig::default(),
            self_residual: false,
            ffn_ratio: 4,
        }
    }
}

/// Per-level readout parameters: self-attention projections, memory
/// cross-attention projections, and the realignment feed-forward. Levels
/// share this architecture but never these instances.
#[derive(Clone)]
pub struct MemoryReadParams {
    pub self_attn: AttentionBlock,
    pub mem_attn: AttentionBlock,
    pub ffn: Ffn,
    pub self_residual: bool,
}

impl MemoryReadParams {
    pub fn init(channels: usize, cfg: MemoryReadConfig, rng: &mut Rng) -> Self {
        MemoryReadParams {
            self_attn: AttentionBlock::init(channels, channels, channels, cfg.attention, rng),
            mem_attn: AttentionBlock::init(channels, channels, channels, cfg.attention, rng),
            ffn: Ffn::same_dim(channels, cfg.ffn_ratio, rng),
            self_residual: cfg.self_residual,
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.self_attn.collect(&format!("{prefix}.self_attn"), out);
        self.mem_attn.collect(&format!("{prefix}.mem_attn"), out);
        self.ffn.collect(&format!("{prefix}.ffn"), out);
    }
}

/// Refine the current frame's fused feature against the bank.
///
/// Three steps: self-attention over the frame's own tokens; cross-attention
/// scores against the concatenated bank (returned raw for inspection — each
/// softmaxed row sums to 1); the retrieved values added back, then a
/// residual feed-forward realigns the result.
pub fn mem_refine(
    fused: &Tensor,
    bank: &MemoryBank,
    params: &MemoryReadParams,
) -> Result<(Tensor, Tensor)> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut refined = params.self_attn.apply(fused, fused)?;
    if params.self_residual {
        refined = fused.add(&refined)?;
    }
    let refs = bank.concat_features()?;
    let (read, scores) = params.mem_attn.apply_with_scores(&refined, &refs)?;
    let with_memory = refined.add(&read)?;
    let out = with_memory.add(&params.ffn.apply(&with_memory)?)?;
    Ok((out, scores))
}

// ── Mask-conditioned entry encoding ───────────────────────────────────

/// Per-level memory encoder: pooled mask probabilities projected into the
/// feature width, added to the refined feature, then one feed-forward.
#[derive(Clone)]
pub struct MemoryEncodeParams {
    pub mask_proj: LinearLayer, // 1 → C_i
    pub ffn: Ffn,
}

impl MemoryEncodeParams {
    pub fn init(channels: usize, ffn_ratio: usize, rng: &mut Rng) -> Self {
        MemoryEncodeParams {
            mask_proj: LinearLayer::init(1, channels, rng),
            ffn: Ffn::same_dim(channels, ffn_ratio, rng),
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamList) {
        self.mask_proj.collect(&format!("{prefix}.mask_proj"), out);
        self.ffn.collect(&format!("{prefix}.ffn"), out);
    }
}

/// Fold predicted-mask evidence into a feature for storage:
/// `FFN(F + proj(avgpool(sigmoid(logits))))`.
pub fn memory_encode(
    features: &Tensor,
    mask_logits: &Tensor,
    level_side: usize,
    params: &MemoryEncodeParams,
) -> Result<Tensor> {
    let ls = mask_logits.shape();
    if ls.len() != 3 || ls[0] != 1 || !ls[1].is_multiple_of(level_side) || ls[1] != ls[2] {
        return Err(Error::InvalidShape {
            op: "memory_encode",
            shape: ls,
            detail: format!("mask logits must be [1, S, S] with S divisible by {level_side}"),
        });
    }
    let factor = ls[1] / level_side;
    let probs = mask_logits.sigmoid();
    let pooled = probs.avg_pool2d(factor, factor)?;
    let tokens = pooled.map_to_tokens()?; // [H_i·W_i, 1]
    let projected = params.mask_proj.apply(&tokens)?;
    params.ffn.apply(&features.add(&projected)?)
}

/// Append to the bank when due: the first frame always stores; later frames
/// store when `frame_index − last_update ≥ stride`. Over-capacity pushes
/// evict the oldest entry. Returns whether an entry was stored.
pub fn memory_update(
    bank: &mut MemoryBank,
    refined: &Tensor,
    mask_logits: &Tensor,
    frame_index: usize,
    level_side: usize,
    params: &MemoryEncodeParams,
    detach: bool,
) -> Result<bool> {
    if let Some(last) = bank.last_update_frame {
        if frame_index <= last {
            return Err(Error::NonMonotoneFrame {
                frame: frame_index,
                last,
            });
        }
        if frame_index - last < bank.stride {
            return Ok(false);
        }
    }
    let mut features = memory_encode(refined, mask_logits, level_side, params)?;
    if detach {
        features = features.detach();
    }
    bank.push(MemoryEntry {
        features,
        frame_index,
    });
    bank.last_update_frame = Some(frame_index);
    Ok(true)
}

/// Closed-form expected bank contents after pushing frames `0..=t`:
/// multiples of `stride` up to `t`, keeping the most recent `capacity`.
pub fn expected_indices(t: usize, capacity: usize, stride: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..=t).filter(|f| f % stride == 0).collect();
    let skip = all.len().saturating_sub(capacity);
    all[skip..].to_vec()
}
