//! `generate`: render synthetic clips to disk.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use hiermem::manifest::write_clip;
use hiermem::synth::{generate_clip, Scenario};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory; one subdirectory per clip.
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,

    /// Comma-separated scenarios cycled across clips:
    /// translate | scale | occlude | multi_object | camera_pan.
    #[arg(long, default_value = "translate")]
    pub scenario: String,

    /// Square image side, divisible by 32.
    #[arg(long, default_value_t = 64)]
    pub side: usize,

    /// Frames per clip.
    #[arg(long, default_value_t = 5)]
    pub frames: usize,

    /// Number of clips.
    #[arg(long, default_value_t = 1)]
    pub clips: usize,

    /// Base seed; clip i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct GenEcho<'a> {
    scenario: &'a str,
    side: usize,
    frames: usize,
    clips: usize,
    seed: u64,
}

pub fn run(args: GenerateArgs) -> Result<i32> {
    let scenarios: Vec<Scenario> = args
        .scenario
        .split(',')
        .map(|s| s.trim().parse::<Scenario>().map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    fs::create_dir_all(&args.out_dir)?;

    for i in 0..args.clips {
        let scenario = scenarios[i % scenarios.len()];
        let clip = generate_clip(scenario, args.side, args.side, args.frames, args.seed + i as u64)
            .context("generating clip")?;
        let name = format!("clip_{i:03}_{scenario}");
        let manifest = write_clip(&args.out_dir, &name, &clip)?;
        println!("wrote {}", manifest.display());
    }

    let echo = GenEcho {
        scenario: &args.scenario,
        side: args.side,
        frames: args.frames,
        clips: args.clips,
        seed: args.seed,
    };
    fs::write(
        args.out_dir.join("generate_config.json"),
        serde_json::to_string_pretty(&echo)?,
    )?;
    Ok(0)
}
