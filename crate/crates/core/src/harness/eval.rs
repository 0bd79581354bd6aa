//! Held-out evaluation of a checkpoint against the copy-prior baseline, and single-sample synthesis.

use std::path::{Path, PathBuf};

use pas_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::train::open_dataset;
use crate::harness::Checkpoint;
use crate::metrics::{frechet_proxy, EvalReport, VideoRow, FRECHET_MIN_FRAMES};
use crate::model::pipeline::{synthesize, transform_from_prior, Batch};
use crate::objectives::FeatureNet;
use crate::pose::{pose_mse, PoseSequence};
use crate::video::{save_video, Video};
use crate::world::dataset::load_sample;
use crate::world::{Sample, Split};

/// Reports of the trained model and of the copy-prior baseline on the same split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: EvalReport,
    pub baseline: EvalReport,
}

impl Evaluation {
    /// Relative key-region MSE improvement of the model over the baseline.
    pub fn key_mse_gain(&self) -> f64 {
        1.0 - self.model.key.mse.mean / self.baseline.key.mse.mean
    }
}

/// The degenerate prediction: the prior frame and prior pose held for every frame.
pub fn copy_prior(sample: &Sample) -> (Video, PoseSequence) {
    let t = sample.target_video.len();
    let video = Video::repeat_frame(&sample.prior_frame, t).expect("prior frame is [3, H, W]");
    (video, PoseSequence::new(vec![sample.prior_pose.clone(); t]))
}

fn frames_of(videos: &[Video]) -> Vec<Tensor> {
    videos.iter().flat_map(Video::frames).collect()
}

fn fid(fnet: &FeatureNet, real: &[Video], fake: &[Video]) -> Result<Option<f64>> {
    let (r, f) = (frames_of(real), frames_of(fake));
    if r.len() < FRECHET_MIN_FRAMES {
        log::warn!("only {} frames in the split; frechet_proxy needs {FRECHET_MIN_FRAMES}", r.len());
        return Ok(None);
    }
    frechet_proxy(fnet, &r, &f).map(Some)
}

/// Synthesizes every sample of `split` and scores model and baseline.
pub fn evaluate(ckpt: &Checkpoint, dataset_root: &Path, split: Split) -> Result<Evaluation> {
    let cfg = &ckpt.config;
    let model_cfg = cfg.model_config();
    let ds = open_dataset(cfg, dataset_root)?;
    let samples = ds.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Dataset { path: dataset_root.to_path_buf(), msg: format!("split {split:?} is empty") });
    }
    let fnet = FeatureNet::new(ckpt.featurenet_seed);
    let (mut rows, mut base_rows) = (vec![], vec![]);
    let (mut truths, mut fakes, mut copies) = (vec![], vec![], vec![]);
    let mut transform_err = 0.0;
    for s in &samples {
        let (video, poses) = synthesize(&ckpt.generator, &model_cfg, s)?;
        rows.push(VideoRow::compute(&s.id, &video, &s.target_video, &s.target_pose, pose_mse(&poses, &s.target_pose)?, cfg.box_size)?);
        let (cv, cp) = copy_prior(s);
        base_rows.push(VideoRow::compute(&s.id, &cv, &s.target_video, &s.target_pose, pose_mse(&cp, &s.target_pose)?, cfg.box_size)?);
        let batch = Batch::new(&[s])?;
        let from_truth = transform_from_prior(&ckpt.generator, &batch, &batch.prior_pose)?;
        transform_err += pose_mse(&from_truth[0], &s.target_pose)? / samples.len() as f64;
        truths.push(s.target_video.clone());
        fakes.push(video);
        copies.push(cv);
    }
    let split_name = format!("{split:?}").to_lowercase();
    let mut model = EvalReport::from_rows("model", &split_name, rows, fid(&fnet, &truths, &fakes)?)?;
    model.transform_pose_mse = Some(transform_err);
    let baseline = EvalReport::from_rows("copy_prior", &split_name, base_rows, fid(&fnet, &truths, &copies)?)?;
    Ok(Evaluation { model, baseline })
}

/// Files written by [`write_evaluation`].
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = vec![
        dir.join("eval_report.json"),
        dir.join("per_frame.csv"),
        dir.join("baseline_report.json"),
        dir.join("baseline_per_frame.csv"),
    ];
    eval.model.write_json(&paths[0])?;
    eval.model.write_per_frame_csv(&paths[1])?;
    eval.baseline.write_json(&paths[2])?;
    eval.baseline.write_per_frame_csv(&paths[3])?;
    Ok(paths)
}

/// Runs the generator on one sample directory and writes `####.png` frames plus `poses.json`.
pub fn synthesize_to_dir(ckpt: &Checkpoint, sample_dir: &Path, out: &Path) -> Result<(Video, PoseSequence)> {
    let sample = load_sample(sample_dir)?;
    let (video, poses) = synthesize(&ckpt.generator, &ckpt.config.model_config(), &sample)?;
    save_video(&video, out)?;
    let path = out.join("poses.json");
    std::fs::write(&path, serde_json::to_string_pretty(&poses)?).map_err(|e| Error::io(&path, e))?;
    Ok((video, poses))
}
