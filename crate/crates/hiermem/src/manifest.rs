//! Clip manifests: the on-disk interchange format the CLI consumes.
//!
//! A manifest is a JSON file listing relative frame/flow/mask paths plus the
//! seed and scenario that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::Mask;
use crate::synth::ClipSample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipManifest {
    pub name: String,
    pub scenario: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<String>,
    pub flows: Vec<String>,
    pub masks: Vec<String>,
}

/// The in-memory form the model consumes.
#[derive(Clone)]
pub struct ClipData {
    pub name: String,
    pub frames: Vec<Tensor>,
    pub flows: Vec<Tensor>,
    pub masks: Vec<Mask>,
}

impl ClipData {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl ClipSample {
    pub fn to_data(&self, name: &str) -> ClipData {
        ClipData {
            name: name.to_string(),
            frames: self.frames.clone(),
            flows: self.flows.clone(),
            masks: self.gt_masks.clone(),
        }
    }
}

/// Write a clip under `dir/name/` (frames, flows, masks as PNG) and a
/// `manifest.json` next to them. Returns the manifest path.
pub fn write_clip(dir: &Path, name: &str, clip: &ClipSample) -> Result<PathBuf> {
    let clip_dir = dir.join(name);
    fs::create_dir_all(&clip_dir)?;
    let len = clip.frames.len();
    let mut manifest = ClipManifest {
        name: name.to_string(),
        scenario: clip.scenario.to_string(),
        seed: clip.seed,
        height: clip.gt_masks[0].height(),
        width: clip.gt_masks[0].width(),
        frames: Vec::with_capacity(len),
        flows: Vec::with_capacity(len),
        masks: Vec::with_capacity(len),
    };
    for t in 0..len {
        let frame_rel = format!("frame_{t:03}.png");
        let flow_rel = format!("flow_{t:03}.png");
        let mask_rel = format!("mask_{t:03}.png");
        imageio::write_rgb_png(&clip_dir.join(&frame_rel), &clip.frames[t])?;
        imageio::write_rgb_png(&clip_dir.join(&flow_rel), &clip.flows[t])?;
        imageio::write_mask_png(&clip_dir.join(&mask_rel), &clip.gt_masks[t])?;
        manifest.frames.push(frame_rel);
        manifest.flows.push(flow_rel);
        manifest.masks.push(mask_rel);
    }
    let manifest_path = clip_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json)?;
    Ok(manifest_path)
}

/// Load a clip back from its manifest.
pub fn load_clip(manifest_path: &Path) -> Result<ClipData> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ClipManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().ok_or_else(|| Error::Format {
        path: manifest_path.display().to_string(),
        detail: "manifest has no parent directory".into(),
    })?;
    if manifest.frames.len() != manifest.flows.len()
        || manifest.frames.len() != manifest.masks.len()
    {
        return Err(Error::Format {
            path: manifest_path.display().to_string(),
            detail: "frame/flow/mask lists differ in length".into(),
        });
    }
    let mut data = ClipData {
        name: manifest.name.clone(),
        frames: Vec::new(),
        flows: Vec::new(),
        masks: Vec::new(),
    };
    for t in 0..manifest.frames.len() {
        data.frames.push(imageio::read_rgb_png(&base.join(&manifest.frames[t]))?);
        data.flows.push(imageio::read_rgb_png(&base.join(&manifest.flows[t]))?);
        data.masks.push(imageio::read_mask_png(&base.join(&manifest.masks[t]))?);
    }
    Ok(data)
}

/// Find every `manifest.json` under a directory, sorted by path for
/// deterministic evaluation order.
pub fn discover_manifests(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "manifest.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}
