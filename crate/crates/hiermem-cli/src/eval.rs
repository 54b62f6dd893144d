//! `eval`: metric evaluation over clip manifests, plus the ablation grid.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use hiermem::imageio::write_gray_png;
use hiermem::interaction::InteractionMode;
use hiermem::manifest::ClipData;
use hiermem::metrics::{evaluate_frame, FrameMetrics, MetricRecord};
use hiermem::pipeline::{
    load_checkpoint, process_video, train_step, AdamW, InputMode, ModelParams, RunConfig,
};
use hiermem::rng::Rng;

use crate::config::{echo_config, ConfigArgs};
use crate::train::load_clips;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory searched recursively for clip manifests.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "runs/eval")]
    pub out_dir: PathBuf,

    /// Checkpoint to evaluate; freshly initialized parameters otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Also write per-frame probability maps as 8-bit grayscale PNGs.
    #[arg(long, default_value_t = false)]
    pub dump_logits: bool,

    /// Run the ablation grid instead of a single configuration.
    #[arg(long, default_value_t = false)]
    pub grid: bool,

    /// Per-cell training budget for the grid (0 evaluates the shared
    /// parameters without training).
    #[arg(long = "grid-train-steps", default_value_t = 0)]
    pub grid_train_steps: usize,

    /// Training clips for the grid; defaults to `--data`.
    #[arg(long = "grid-train-data")]
    pub grid_train_data: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

/// One ablation cell: a named set of switches over the base config.
struct Cell {
    name: &'static str,
    interaction: InteractionMode,
    memory_levels: &'static [usize],
    input_mode: InputMode,
}

const CELLS: &[Cell] = &[
    Cell {
        name: "baseline",
        interaction: InteractionMode::Off,
        memory_levels: &[],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "hier_mem",
        interaction: InteractionMode::Off,
        memory_levels: &[2, 4],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "s2h_only",
        interaction: InteractionMode::S2hOnly,
        memory_levels: &[2, 4],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "h2s_only",
        interaction: InteractionMode::H2sOnly,
        memory_levels: &[2, 4],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "swapped",
        interaction: InteractionMode::Swapped,
        memory_levels: &[2, 4],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "full",
        interaction: InteractionMode::Standard,
        memory_levels: &[2, 4],
        input_mode: InputMode::Both,
    },
    Cell {
        name: "full_only_image",
        interaction: InteractionMode::Standard,
        memory_levels: &[2, 4],
        input_mode: InputMode::Image,
    },
    Cell {
        name: "full_only_flow",
        interaction: InteractionMode::Standard,
        memory_levels: &[2, 4],
        input_mode: InputMode::Flow,
    },
];

/// Evaluate clips under one configuration; returns per-sequence records
/// plus the aggregate.
pub fn evaluate(
    clips: &[ClipData],
    params: &ModelParams,
    cfg: &RunConfig,
    dump_dir: Option<&Path>,
) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::with_capacity(clips.len() + 1);
    for clip in clips {
        let logits = process_video(&clip.frames, &clip.flows, params, cfg)?;
        let mut frames: Vec<FrameMetrics> = Vec::with_capacity(clip.len());
        for (t, l) in logits.iter().enumerate() {
            let probs = l.sigmoid().data();
            frames.push(evaluate_frame(t, &probs, &clip.masks[t])?);
            if let Some(dir) = dump_dir {
                let seq_dir = dir.join(&clip.name);
                fs::create_dir_all(&seq_dir)?;
                write_gray_png(&seq_dir.join(format!("prob_{t:03}.png")), &l.sigmoid())?;
            }
        }
        records.push(MetricRecord::from_frames("sequence", &clip.name, frames));
    }
    records.push(MetricRecord::aggregate(&records));
    Ok(records)
}

fn write_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct CellSummary {
    cell: String,
    interaction: String,
    memory_levels: Vec<usize>,
    input_mode: String,
    frames: usize,
    j_mean: f64,
    f_mean: f64,
    jf_mean: f64,
    mae_mean: f64,
    fm_mean: f64,
}

#[derive(Serialize)]
struct GridSummary {
    train_steps: usize,
    cells: Vec<CellSummary>,
}

pub fn run(args: EvalArgs) -> Result<i32> {
    let base_cfg = args.config.build()?;
    fs::create_dir_all(&args.out_dir)?;
    echo_config(&args.out_dir, &base_cfg)?;
    let eval_clips = load_clips(&args.data, &base_cfg)?;

    if !args.grid {
        let mut rng = Rng::new(base_cfg.seed);
        let params = ModelParams::init(&base_cfg, &mut rng)?;
        if let Some(ckpt) = &args.checkpoint {
            load_checkpoint(&params, ckpt)
                .with_context(|| format!("loading {}", ckpt.display()))?;
        }
        params.set_requires_grad(false);
        let dump_dir = args.dump_logits.then(|| args.out_dir.join("logits"));
        let records = evaluate(&eval_clips, &params, &base_cfg, dump_dir.as_deref())?;
        write_jsonl(&args.out_dir.join("metrics.jsonl"), &records)?;
        let agg = records.last().unwrap();
        println!(
            "sequences {} | J {:.4} F {:.4} J&F {:.4} MAE {:.4} Fm {:.4}",
            records.len() - 1,
            agg.j_mean,
            agg.f_mean,
            agg.jf_mean,
            agg.mae_mean,
            agg.fm_mean
        );
        return Ok(0);
    }

    // Ablation grid: one cell per switch combination, identical training
    // budgets when requested.
    let train_dir = args.grid_train_data.as_ref().unwrap_or(&args.data);
    let train_clips = if args.grid_train_steps > 0 {
        load_clips(train_dir, &base_cfg)?
    } else {
        Vec::new()
    };

    let mut summaries = Vec::with_capacity(CELLS.len());
    for cell in CELLS {
        let cfg = RunConfig {
            interaction: cell.interaction,
            memory_levels: cell.memory_levels.to_vec(),
            input_mode: cell.input_mode,
            ..base_cfg.clone()
        };
        let mut rng = Rng::new(cfg.seed);
        let params = ModelParams::init(&cfg, &mut rng)?;
        if let Some(ckpt) = &args.checkpoint {
            load_checkpoint(&params, ckpt)?;
        }
        if args.grid_train_steps > 0 {
            let mut opt = AdamW::from_config(&cfg);
            for step in 0..args.grid_train_steps {
                let clip = &train_clips[step % train_clips.len()];
                train_step(clip, &params, &mut opt, &cfg)?;
            }
        }
        params.set_requires_grad(false);
        let records = evaluate(&eval_clips, &params, &cfg, None)?;
        write_jsonl(
            &args.out_dir.join(format!("metrics_{}.jsonl", cell.name)),
            &records,
        )?;
        let agg = records.last().unwrap();
        println!(
            "cell {:<16} J {:.4} F {:.4} J&F {:.4} MAE {:.4} Fm {:.4}",
            cell.name, agg.j_mean, agg.f_mean, agg.jf_mean, agg.mae_mean, agg.fm_mean
        );
        summaries.push(CellSummary {
            cell: cell.name.to_string(),
            interaction: cell.interaction.to_string(),
            memory_levels: cell.memory_levels.to_vec(),
            input_mode: cell.input_mode.to_string(),
            frames: agg.frames,
            j_mean: agg.j_mean,
            f_mean: agg.f_mean,
            jf_mean: agg.jf_mean,
            mae_mean: agg.mae_mean,
            fm_mean: agg.fm_mean,
        });
    }
    let summary = GridSummary {
        train_steps: args.grid_train_steps,
        cells: summaries,
    };
    fs::write(
        args.out_dir.join("ablation_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(0)
}
