//! `train`: optimize on clip manifests, logging losses and checkpoints.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use hiermem::manifest::{discover_manifests, load_clip, ClipData};
use hiermem::pipeline::{save_checkpoint, train_step, AdamW, ModelParams, RunConfig};
use hiermem::rng::Rng;

use crate::config::{echo_config, ConfigArgs};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory searched recursively for clip manifests.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "runs/train")]
    pub out_dir: PathBuf,

    /// Optimization steps; each step consumes one clip, cycling in manifest
    /// order.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,

    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn load_clips(dir: &std::path::Path, cfg: &RunConfig) -> Result<Vec<ClipData>> {
    let manifests = discover_manifests(dir)
        .with_context(|| format!("searching {} for manifests", dir.display()))?;
    if manifests.is_empty() {
        bail!("no manifest.json found under {}", dir.display());
    }
    let mut clips = Vec::with_capacity(manifests.len());
    for path in &manifests {
        let clip = load_clip(path).with_context(|| format!("loading {}", path.display()))?;
        let side = clip.masks[0].height();
        if side != cfg.side {
            bail!(
                "{}: clip side {side} does not match configured side {}",
                path.display(),
                cfg.side
            );
        }
        clips.push(clip);
    }
    Ok(clips)
}

pub fn run(args: TrainArgs) -> Result<i32> {
    let cfg = args.config.build()?;
    fs::create_dir_all(&args.out_dir)?;
    echo_config(&args.out_dir, &cfg)?;

    let clips = load_clips(&args.data, &cfg)?;
    for clip in &clips {
        if clip.len() != cfg.clip_len {
            bail!(
                "clip `{}` has {} frames, configured clip_len is {}",
                clip.name,
                clip.len(),
                cfg.clip_len
            );
        }
    }

    let mut rng = Rng::new(cfg.seed);
    let params = ModelParams::init(&cfg, &mut rng)?;
    save_checkpoint(&params, &args.out_dir.join("init.ckpt"))?;

    let mut opt = AdamW::from_config(&cfg);
    let mut csv = String::from("step,loss\n");
    let mut best = f64::INFINITY;
    for step in 0..args.steps {
        let clip = &clips[step % clips.len()];
        let loss = train_step(clip, &params, &mut opt, &cfg)?;
        csv.push_str(&format!("{step},{loss}\n"));
        if loss < best {
            best = loss;
            save_checkpoint(&params, &args.out_dir.join("best.ckpt"))?;
        }
        if step % 50 == 0 || step + 1 == args.steps {
            println!("step {step}: loss {loss:.6}");
        }
    }

    fs::write(args.out_dir.join("loss.csv"), csv)?;
    save_checkpoint(&params, &args.out_dir.join("model.ckpt"))?;
    println!(
        "trained {} steps on {} clip(s); best loss {best:.6}",
        args.steps,
        clips.len()
    );
    Ok(0)
}
