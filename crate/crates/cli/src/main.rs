use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pas_core::harness::{evaluate, synthesize_to_dir, train, write_evaluation, Checkpoint, RunConfig};
use pas_core::world::{generate_dataset, Split};
use pas_core::Result;

#[derive(Parser)]
#[command(name = "pas-synth", version, about = "Novel-view action video synthesis on a synthetic skeleton world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the multi-view dataset described by a run config.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing dataset directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Warm up the pose branch, pre-train with pixel/pose MSE, then train the adversarial objective.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint and the copy-prior baseline on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Dataset root; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory; defaults to `<checkpoint dir>/eval_<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the target-view video for one sample directory.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, overwrite } => {
            let cfg = RunConfig::load(&config)?;
            let m = generate_dataset(&cfg.data_config(), overwrite)?;
            println!("wrote {} samples to {} ({:?})", m.samples.len(), cfg.dataset.display(), m.stats.split_counts);
        }
        Command::Train { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = train(&cfg, resume.as_deref())?;
            println!("finished {} steps; checkpoint at {}", ckpt.step, cfg.output_dir.join("checkpoint.bin").display());
        }
        Command::Eval { checkpoint, split, dataset, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let root = dataset.unwrap_or_else(|| ckpt.config.dataset.clone());
            let eval = evaluate(&ckpt, &root, split)?;
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().unwrap_or(&PathBuf::from(".")).join(format!("eval_{}", eval.model.split))
            });
            write_evaluation(&eval, &out)?;
            let (m, b) = (&eval.model, &eval.baseline);
            println!("{:<12} {:>10} {:>8} {:>7} {:>10} {:>8} {:>7} {:>9}", "", "mse", "psnr", "ssim", "key_mse", "key_psnr", "key_ssim", "pose_mse");
            for r in [m, b] {
                println!(
                    "{:<12} {:>10.6} {:>8.3} {:>7.4} {:>10.6} {:>8.3} {:>7.4} {:>9.5}",
                    r.label, r.full.mse.mean, r.full.psnr.mean, r.full.ssim.mean, r.key.mse.mean, r.key.psnr.mean, r.key.ssim.mean, r.pose_mse
                );
            }
            if let Some(t) = m.transform_pose_mse {
                println!("pose transform from true prior: {t:.5}");
            }
            if let (Some(a), Some(c)) = (m.frechet_proxy, b.frechet_proxy) {
                println!("frechet_proxy: model {a:.5}, copy_prior {c:.5}");
            }
            println!("reports in {}", out.display());
        }
        Command::Synth { checkpoint, sample, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (v, p) = synthesize_to_dir(&ckpt, &sample, &out)?;
            println!("wrote {} frames and {} poses to {}", v.len(), p.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
