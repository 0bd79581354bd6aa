//! Recurrent pose transformation: per-step motion codes fused with a viewpoint-change code,
//! accumulated onto the prior pose.

use std::f64::consts::TAU;

use pas_autograd::{concat, stack, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn;

pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) {
    let (n2, d, h) = (2 * cfg.num_joints, cfg.d, cfg.hidden);
    nn::init_two_layer(store, "posetrans.motion.pose", n2, h, d, rng);
    nn::init_two_layer(store, "posetrans.motion.pair", 2 * d, h, d, rng);
    nn::init_two_layer(store, "posetrans.view.angle", 2, h, d, rng);
    nn::init_two_layer(store, "posetrans.view.pair", 2 * d, h, d, rng);
    nn::init_dense(store, "posetrans.delta.0", 2 * d, h, rng);
    nn::init_dense(store, "posetrans.delta.1", h, n2, rng);
    // keep early increments small relative to the unit coordinate range
    if let Some(w) = store.get_mut("posetrans.delta.1.w") {
        *w = w.scale(0.1);
    }
}

/// Wraps to `[0, 2π)` and snaps to a 1e-9 grid so that `θ` and `θ + 2π` embed identically.
pub fn canonical_angle(theta: f64) -> f64 {
    let t = ((theta.rem_euclid(TAU)) * 1e9).round() / 1e9;
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// `[B]` angles → `[B, 2]` of `(sin θ, cos θ)`.
pub fn angle_embedding(theta: &[f64]) -> Tensor {
    let data = theta.iter().flat_map(|&t| {
        let (s, c) = canonical_angle(t).sin_cos();
        [s, c]
    });
    Tensor::from_vec(data.collect(), &[theta.len(), 2])
}

/// 𝓜_E on a batch of pose pairs `[B, N, 2]` → `[B, d]`.
pub fn motion_estimate<'t>(tape: &'t Tape, store: &ParamStore, p_i: Var<'t>, p_j: Var<'t>) -> Var<'t> {
    let b = p_i.shape()[0];
    let flat = |p: Var<'t>| p.reshape(&[b, p.value().numel() / b]);
    let fi = nn::two_layer(tape, store, "posetrans.motion.pose", flat(p_i));
    let fj = nn::two_layer(tape, store, "posetrans.motion.pose", flat(p_j));
    nn::two_layer(tape, store, "posetrans.motion.pair", concat(&[fi, fj], 1))
}

/// θ_E: `[B]` source and target yaws → `[B, d]`.
pub fn view_delta<'t>(tape: &'t Tape, store: &ParamStore, theta1: &[f64], theta2: &[f64]) -> Var<'t> {
    let e1 = nn::two_layer(tape, store, "posetrans.view.angle", tape.constant(angle_embedding(theta1)));
    let e2 = nn::two_layer(tape, store, "posetrans.view.angle", tape.constant(angle_embedding(theta2)));
    nn::two_layer(tape, store, "posetrans.view.pair", concat(&[e1, e2], 1))
}

/// Δ_T: `[M, d]` motion and view codes → `[M, N, 2]` coordinate increments.
pub fn motion_transform<'t>(tape: &'t Tape, store: &ParamStore, dp: Var<'t>, dtheta: Var<'t>) -> Var<'t> {
    let m = dp.shape()[0];
    let h = nn::dense(tape, store, "posetrans.delta.0", concat(&[dp, dtheta], 1)).tanh();
    let out = nn::dense(tape, store, "posetrans.delta.1", h);
    let n2 = out.shape()[1];
    out.reshape(&[m, n2 / 2, 2])
}

/// Per-step increments `[B, T−1, N, 2]` for a source sequence `p_s: [B, T, N, 2]`.
pub fn increments<'t>(tape: &'t Tape, store: &ParamStore, p_s: Var<'t>, theta1: &[f64], theta2: &[f64]) -> Var<'t> {
    let s = p_s.shape();
    let (b, t, n) = (s[0], s[1], s[2]);
    let prev = p_s.slice(1, 0, t - 1).reshape(&[b * (t - 1), n, 2]);
    let next = p_s.slice(1, 1, t - 1).reshape(&[b * (t - 1), n, 2]);
    let dp = motion_estimate(tape, store, prev, next);
    let dtheta = view_delta(tape, store, theta1, theta2);
    let d = dtheta.shape()[1];
    let broadcast = stack(&vec![dtheta; t - 1], 1).reshape(&[b * (t - 1), d]);
    motion_transform(tape, store, dp, broadcast).reshape(&[b, t - 1, n, 2])
}

/// 𝓟_T: hidden pose starts at `p_a: [B, N, 2]` and accumulates one increment per step.
/// Returns `[B, T, N, 2]` whose frame 0 is `p_a`.
pub fn transform_sequence<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    p_s: Var<'t>,
    p_a: Var<'t>,
    theta1: &[f64],
    theta2: &[f64],
) -> Result<Var<'t>> {
    let s = p_s.shape();
    if s.len() != 4 || s[1] < 2 || s[3] != 2 {
        return Err(Error::Invalid(format!("source poses must be [B, T ≥ 2, N, 2], got {s:?}")));
    }
    if p_a.shape() != [s[0], s[2], 2] || theta1.len() != s[0] || theta2.len() != s[0] {
        return Err(Error::Invalid("prior pose / angle batch does not match the source poses".into()));
    }
    let inc = increments(tape, store, p_s, theta1, theta2);
    let mut hidden = p_a;
    let mut out = vec![hidden];
    for i in 0..s[1] - 1 {
        hidden = hidden.add(inc.select(1, i));
        out.push(hidden);
    }
    Ok(stack(&out, 1))
}
