//! Configuration loading: a TOML file merged with dotted-path overrides and
//! typed convenience flags, echoed back to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use hiermem::pipeline::RunConfig;

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML configuration file; defaults apply for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Dotted-path override, e.g. `--set loss.focal_gamma=1.5` or
    /// `--set channels=[4,8,16,32]`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Interaction mode: standard | swapped | s2h_only | h2s_only | off.
    #[arg(long)]
    pub interaction: Option<String>,

    /// Comma-separated memory levels, e.g. `2,4`; empty string disables
    /// memory entirely.
    #[arg(long = "memory-levels")]
    pub memory_levels: Option<String>,

    /// Input selection: image | flow | both.
    #[arg(long = "input-mode")]
    pub input_mode: Option<String>,
}

impl ConfigArgs {
    pub fn build(&self) -> Result<RunConfig> {
        let mut value: toml::Value = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => toml::Value::try_from(RunConfig::default())?,
        };
        for pair in &self.overrides {
            apply_override(&mut value, pair)?;
        }
        let mut cfg: RunConfig = value
            .try_into()
            .context("config does not match the expected schema")?;

        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = &self.interaction {
            cfg.interaction = mode.parse()?;
        }
        if let Some(levels) = &self.memory_levels {
            cfg.memory_levels = parse_levels(levels)?;
        }
        if let Some(mode) = &self.input_mode {
            cfg.input_mode = mode.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_levels(spec: &str) -> Result<Vec<usize>> {
    let trimmed = spec.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad memory level `{s}`"))
        })
        .collect()
}

fn apply_override(root: &mut toml::Value, pair: &str) -> Result<()> {
    let Some((path, raw)) = pair.split_once('=') else {
        bail!("override `{pair}` must look like key=value");
    };
    // Parse the value as a TOML literal; fall back to a plain string.
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut table) => table.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .with_context(|| format!("`{path}`: `{seg}` is not a table"))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split produced no segments")
}

/// Write the effective configuration into the output directory; this file
/// alone reproduces the run.
pub fn echo_config(out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let text = toml::to_string_pretty(cfg)?;
    fs::write(out_dir.join("config.toml"), text)?;
    Ok(())
}
