//! End-to-end generator: prior image + source poses + viewpoints → target-view video and poses.

use pas_autograd::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{decoder, encoder, lgtn, pose_transformer, ModelConfig};
use crate::pose::PoseSequence;
use crate::video::Video;
use crate::world::Sample;

/// Initializes every generator namespace in a fixed order.
pub fn init_generator<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) {
    encoder::init(cfg, store, rng);
    pose_transformer::init(cfg, store, rng);
    lgtn::init(cfg, store, rng);
    decoder::init(cfg, store, rng);
}

/// Stacked model inputs and supervision targets for `B` samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, 3, H, W]`
    pub prior: Tensor,
    /// `[B, T, N, 2]`
    pub source_poses: Tensor,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// `[B, N, 2]`
    pub prior_pose: Tensor,
    pub target_poses: Vec<PoseSequence>,
    /// `[B, 3, T, H, W]`
    pub target_video: Tensor,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let stack = |f: &dyn Fn(&Sample) -> Tensor| Tensor::stack(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
        let n = samples[0].prior_pose.num_joints();
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            prior: stack(&|s| s.prior_frame.clone()),
            source_poses: stack(&|s| s.source_pose.to_tensor().reshape(&[s.source_pose.len(), n, 2])),
            theta1: samples.iter().map(|s| s.theta1.yaw).collect(),
            theta2: samples.iter().map(|s| s.theta2.yaw).collect(),
            prior_pose: stack(&|s| Tensor::from_vec(s.prior_pose.flat(), &[n, 2])),
            target_poses: samples.iter().map(|s| s.target_pose.clone()).collect(),
            target_video: stack(&|s| s.target_video.to_channel_major()),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `[B, T, N, 2]`
    pub fn target_pose_tensor(&self) -> Tensor {
        let seqs: Vec<Tensor> = self.target_poses.iter().map(|p| p.to_tensor().reshape(&[p.len(), p.num_joints(), 2])).collect();
        Tensor::stack(&seqs)
    }
}

/// Which pose track drives the key regions and heatmap attention.
#[derive(Clone, Copy, Debug)]
pub enum Guidance<'a> {
    /// The transformed poses predicted by the model itself (inference).
    Predicted,
    /// Given pose tracks, e.g. ground truth during training.
    Given(&'a [PoseSequence]),
}

pub struct Forward<'t> {
    /// `[B, N, 2]`
    pub prior_pose: Var<'t>,
    /// `[B, T, N, 2]`
    pub poses: Var<'t>,
    /// `[B, 3, T, H, W]`
    pub video: Var<'t>,
}

/// encode → prior pose → pose transform → heatmaps and boxes → LGTN → decode.
pub fn forward<'t>(tape: &'t Tape, store: &ParamStore, cfg: &ModelConfig, batch: &Batch, guidance: Guidance) -> Result<Forward<'t>> {
    let levels = encoder::encode(tape, store, cfg, tape.constant(batch.prior.clone()))?;
    let prior_pose = encoder::estimate_prior_pose(tape, store, cfg, &levels);
    let poses = pose_transformer::transform_sequence(
        tape,
        store,
        tape.constant(batch.source_poses.clone()),
        prior_pose,
        &batch.theta1,
        &batch.theta2,
    )?;
    let predicted;
    let guide_poses = match guidance {
        Guidance::Given(p) => p,
        Guidance::Predicted => {
            predicted = split_poses(poses.value().as_ref());
            &predicted[..]
        }
    };
    let guides = lgtn::pose_guides(cfg, guide_poses)?;
    let e_v = lgtn::run(tape, store, &levels, &guides)?;
    let attention: Vec<Tensor> = guides.iter().map(lgtn::ScaleGuide::attention).collect();
    let video = decoder::decode(tape, store, cfg, &e_v, &attention)?;
    Ok(Forward { prior_pose, poses, video })
}

/// `[B, T, N, 2]` → one sequence per batch element.
pub fn split_poses(t: &Tensor) -> Vec<PoseSequence> {
    (0..t.dim(0)).map(|b| PoseSequence::from_tensor(&t.index0(b))).collect()
}

/// `[B, 3, T, H, W]` → videos.
pub fn split_videos(t: &Tensor) -> Result<Vec<Video>> {
    (0..t.dim(0)).map(|b| Video::from_channel_major(&t.index0(b))).collect()
}

/// Pose transformer alone, started from a given prior pose.
pub fn transform_from_prior(store: &ParamStore, batch: &Batch, prior_pose: &Tensor) -> Result<Vec<PoseSequence>> {
    let tape = Tape::new();
    let p = pose_transformer::transform_sequence(
        &tape,
        store,
        tape.constant(batch.source_poses.clone()),
        tape.constant(prior_pose.clone()),
        &batch.theta1,
        &batch.theta2,
    )?;
    Ok(split_poses(p.value().as_ref()))
}

/// Inference on one sample.
pub fn synthesize(store: &ParamStore, cfg: &ModelConfig, sample: &Sample) -> Result<(Video, PoseSequence)> {
    if sample.prior_frame.dim(1) != cfg.resolution || sample.source_pose.len() != cfg.frames {
        return Err(Error::Invalid(format!(
            "sample is {}px × {} frames, model expects {}px × {}",
            sample.prior_frame.dim(1),
            sample.source_pose.len(),
            cfg.resolution,
            cfg.frames
        )));
    }
    let batch = Batch::new(&[sample])?;
    let tape = Tape::new();
    let out = forward(&tape, store, cfg, &batch, Guidance::Predicted)?;
    let video = split_videos(out.video.value().as_ref())?.remove(0);
    let poses = split_poses(out.poses.value().as_ref()).remove(0);
    Ok((video, poses))
}
