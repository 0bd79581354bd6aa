//! Appearance encoder and prior-pose head.

use pas_autograd::{concat, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{self, LEAK};

/// Four-level appearance features, finest first, each `[C, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) {
    let c = cfg.width;
    for s in 0..cfg.scales {
        let cin = if s == 0 { 3 } else { c };
        nn::init_conv2d(store, &format!("encoder.l{s}.0"), cin, c, 3, rng);
        nn::init_conv2d(store, &format!("encoder.l{s}.1"), c, c, 3, rng);
    }
    let deep = cfg.level_size(cfg.scales - 1);
    nn::init_dense(store, "pose_head.0", cfg.channels() * deep * deep, cfg.hidden, rng);
    nn::init_dense(store, "pose_head.1", cfg.hidden, 2 * cfg.num_joints, rng);
}

/// `a: [B, 3, H, W]` → pyramid levels `[B, 3 + C, H/2^s, W/2^s]`: the resized image
/// followed by the conv features.
pub fn encode<'t>(tape: &'t Tape, store: &ParamStore, cfg: &ModelConfig, a: Var<'t>) -> Result<Vec<Var<'t>>> {
    let shape = a.shape();
    if shape.len() != 4 || shape[1] != 3 || shape[2] != cfg.resolution || shape[3] != cfg.resolution {
        return Err(Error::Invalid(format!(
            "prior image must be [B, 3, {r}, {r}], got {shape:?}",
            r = cfg.resolution
        )));
    }
    let mut x = a;
    let mut levels = Vec::with_capacity(cfg.scales);
    for s in 0..cfg.scales {
        let stride = if s == 0 { 1 } else { 2 };
        x = nn::conv2d(tape, store, &format!("encoder.l{s}.0"), x, stride).leaky_relu(LEAK);
        x = nn::conv2d(tape, store, &format!("encoder.l{s}.1"), x, 1).leaky_relu(LEAK);
        let size = cfg.level_size(s);
        levels.push(concat(&[a.resize_bilinear(size, size), x], 1));
    }
    Ok(levels)
}

/// Deepest level, flattened, through two dense layers; `[B, N, 2]` in `(-1, 1)`.
pub fn estimate_prior_pose<'t>(tape: &'t Tape, store: &ParamStore, cfg: &ModelConfig, levels: &[Var<'t>]) -> Var<'t> {
    let deep = *levels.last().expect("non-empty pyramid");
    let b = deep.shape()[0];
    let flat = deep.reshape(&[b, deep.value().numel() / b]);
    let h = nn::dense(tape, store, "pose_head.0", flat).tanh();
    nn::dense(tape, store, "pose_head.1", h).tanh().reshape(&[b, cfg.num_joints, 2])
}

/// Inference helper for one `[3, H, W]` frame.
pub fn encode_frame(store: &ParamStore, cfg: &ModelConfig, frame: &Tensor) -> Result<(FeaturePyramid, Tensor)> {
    let tape = Tape::new();
    let a = tape.constant(frame.clone().reshape(&[1, 3, frame.dim(1), frame.dim(2)]));
    let levels = encode(&tape, store, cfg, a)?;
    let pose = estimate_prior_pose(&tape, store, cfg, &levels);
    let unbatch = |v: &Var| v.value().index0(0);
    Ok((FeaturePyramid { levels: levels.iter().map(unbatch).collect() }, unbatch(&pose)))
}
