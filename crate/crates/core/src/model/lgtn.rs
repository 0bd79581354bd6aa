//! Local-global transformation network: per-joint affine warps of key-region features,
//! a convolutional GRU over the assembled foreground, and compositing over the background.

use std::rc::Rc;

use pas_autograd::{concat, stack, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{self, LEAK};
use crate::pose::{box_mask, joint_boxes, multiscale_heatmaps, PixelBox, PoseSequence};

/// Channels of the affine estimator trunk.
const AFFINE_WIDTH: usize = 16;

/// Per-joint `(a, b, x, y)`: source = `(a·α + x, b·β + y)` for target `(α, β)`.
pub type Affine = [f64; 4];

pub const IDENTITY: Affine = [1.0, 1.0, 0.0, 0.0];

/// Normalized patch grid `α_j = −1 + 2j / (K − 1)`.
pub fn patch_grid(k: usize) -> Vec<f64> {
    (0..k).map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64).collect()
}

/// Continuous patch index of a normalized coordinate, split into floor and fraction.
/// Values within 1e-12 of an integer snap to it so that grid-aligned samples are exact.
#[inline]
fn tap(s: f64, k: usize) -> (i64, f64) {
    let u = (s + 1.0) * 0.5 * (k - 1) as f64;
    let r = u.round();
    let u = if (u - r).abs() < 1e-12 { r } else { u };
    let i = u.floor();
    (i as i64, u - i)
}

/// Bilinear sample of a `K × K` grid through `get(row, col)` with zeros outside.
/// Returns the value and its derivatives with respect to the column and row coordinates
/// in normalized units.
#[inline]
fn sample(get: impl Fn(i64, i64) -> f64, k: usize, sx: f64, sy: f64) -> (f64, f64, f64) {
    let (c0, fx) = tap(sx, k);
    let (r0, fy) = tap(sy, k);
    let kk = k as i64;
    let at = |r: i64, c: i64| if r >= 0 && r < kk && c >= 0 && c < kk { get(r, c) } else { 0.0 };
    let (v00, v01, v10, v11) = (at(r0, c0), at(r0, c0 + 1), at(r0 + 1, c0), at(r0 + 1, c0 + 1));
    let val = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
    let scale = 0.5 * (k - 1) as f64;
    let dfx = ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10)) * scale;
    let dfy = ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01)) * scale;
    (val, dfx, dfy)
}

/// Bilinear corner weights for scattering gradients; `(row, col, weight)`.
#[inline]
fn corners(k: usize, sx: f64, sy: f64) -> [(i64, i64, f64); 4] {
    let (c0, fx) = tap(sx, k);
    let (r0, fy) = tap(sy, k);
    [
        (r0, c0, (1.0 - fy) * (1.0 - fx)),
        (r0, c0 + 1, (1.0 - fy) * fx),
        (r0 + 1, c0, fy * (1.0 - fx)),
        (r0 + 1, c0 + 1, fy * fx),
    ]
}

/// Inverse affine warp of one `[C, K, K]` patch.
pub fn warp(patch: &Tensor, params: Affine) -> Tensor {
    let (c, k) = (patch.dim(0), patch.dim(1));
    let grid = patch_grid(k);
    let [a, b, x, y] = params;
    let mut out = Tensor::zeros(&[c, k, k]);
    for ch in 0..c {
        let src = &patch.data()[ch * k * k..(ch + 1) * k * k];
        for (i, &beta) in grid.iter().enumerate() {
            for (j, &alpha) in grid.iter().enumerate() {
                let get = |r: i64, cc: i64| src[r as usize * k + cc as usize];
                out.data_mut()[(ch * k + i) * k + j] = sample(get, k, a * alpha + x, b * beta + y).0;
            }
        }
    }
    out
}

/// Differentiable [`warp`]: `patch [C, K, K]`, `params [4]`.
pub fn warp_var<'t>(patch: Var<'t>, params: Var<'t>) -> Var<'t> {
    let p = patch.value();
    let pv = params.value();
    let prm: Affine = [pv.data()[0], pv.data()[1], pv.data()[2], pv.data()[3]];
    let out = warp(&p, prm);
    let (c, k) = (p.dim(0), p.dim(1));
    patch.tape().op(
        out,
        &[patch, params],
        Box::new(move |g| {
            let grid = patch_grid(k);
            let [a, b, x, y] = prm;
            let mut dpatch = Tensor::zeros(&[c, k, k]);
            let mut dparams = [0.0; 4];
            for ch in 0..c {
                let src = &p.data()[ch * k * k..(ch + 1) * k * k];
                for (i, &beta) in grid.iter().enumerate() {
                    for (j, &alpha) in grid.iter().enumerate() {
                        let gv = g.data()[(ch * k + i) * k + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let (sx, sy) = (a * alpha + x, b * beta + y);
                        let get = |r: i64, cc: i64| src[r as usize * k + cc as usize];
                        let (_, dsx, dsy) = sample(get, k, sx, sy);
                        dparams[0] += gv * dsx * alpha;
                        dparams[1] += gv * dsy * beta;
                        dparams[2] += gv * dsx;
                        dparams[3] += gv * dsy;
                        for (r, cc, wgt) in corners(k, sx, sy) {
                            if r >= 0 && r < k as i64 && cc >= 0 && cc < k as i64 {
                                dpatch.data_mut()[(ch * k + r as usize) * k + cc as usize] += gv * wgt;
                            }
                        }
                    }
                }
            }
            vec![Some(dpatch), Some(Tensor::from_vec(dparams.to_vec(), &[4]))]
        }),
    )
}

/// Box geometry of one batch element at one scale and step.
#[derive(Clone, Debug)]
pub struct StepBoxes {
    pub prev: Vec<PixelBox>,
    pub curr: Vec<PixelBox>,
}

/// Index of the last joint whose current box covers each pixel.
fn owners(boxes: &[PixelBox], h: usize, w: usize) -> Vec<Option<usize>> {
    let mut own = vec![None; h * w];
    for (n, b) in boxes.iter().enumerate() {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                own[y * w + x] = Some(n);
            }
        }
    }
    own
}

/// Crop at the previous boxes, warp each patch with its joint's parameters and paste at the
/// current boxes onto a zero canvas (later joints win overlaps).
///
/// `x [B, C, H, W]`, `params [B, N, 4]` → `[B, C, H, W]`.
pub fn local_transform<'t>(x: Var<'t>, params: Var<'t>, boxes: &[StepBoxes]) -> Var<'t> {
    let xv = x.value();
    let pv = params.value();
    let (bsz, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
    let n = pv.dim(1);
    assert_eq!(boxes.len(), bsz, "one box set per batch element");
    let boxes: Rc<Vec<StepBoxes>> = Rc::new(boxes.to_vec());
    let own: Rc<Vec<Vec<Option<usize>>>> = Rc::new(boxes.iter().map(|sb| owners(&sb.curr, h, w)).collect());

    // per owned pixel: (batch, pixel, joint, sx, sy, alpha, beta)
    let mut jobs = Vec::new();
    for bi in 0..bsz {
        for (pix, o) in own[bi].iter().enumerate() {
            if let Some(j) = *o {
                let bc = &boxes[bi].curr[j];
                let k = bc.size;
                let grid = patch_grid(k);
                let (ox, oy) = bc.origin();
                let (py, px) = ((pix / w) as i64 - oy, (pix % w) as i64 - ox);
                let (alpha, beta) = (grid[px as usize], grid[py as usize]);
                let prm = &pv.data()[(bi * n + j) * 4..(bi * n + j) * 4 + 4];
                jobs.push((bi, pix, j, prm[0] * alpha + prm[2], prm[1] * beta + prm[3], alpha, beta));
            }
        }
    }
    let jobs = Rc::new(jobs);

    let fetch = move |bi: usize, ch: usize, bp: &PixelBox, r: i64, cc: i64| -> Option<usize> {
        let (ox, oy) = bp.origin();
        let (fy, fx) = (oy + r, ox + cc);
        (fy >= 0 && fy < h as i64 && fx >= 0 && fx < w as i64).then(|| ((bi * c + ch) * h + fy as usize) * w + fx as usize)
    };

    let mut out = Tensor::zeros(&[bsz, c, h, w]);
    for &(bi, pix, j, sx, sy, _, _) in jobs.iter() {
        let bp = &boxes[bi].prev[j];
        for ch in 0..c {
            let get = |r: i64, cc: i64| fetch(bi, ch, bp, r, cc).map_or(0.0, |i| xv.data()[i]);
            out.data_mut()[(bi * c + ch) * h * w + pix] = sample(get, bp.size, sx, sy).0;
        }
    }

    let in_shape = xv.shape().to_vec();
    let p_shape = pv.shape().to_vec();
    x.tape().op(
        out,
        &[x, params],
        Box::new(move |g| {
            let mut dx = Tensor::zeros(&in_shape);
            let mut dp = Tensor::zeros(&p_shape);
            for &(bi, pix, j, sx, sy, alpha, beta) in jobs.iter() {
                let bp = &boxes[bi].prev[j];
                let k = bp.size;
                let (mut gsx, mut gsy) = (0.0, 0.0);
                for ch in 0..c {
                    let gv = g.data()[(bi * c + ch) * h * w + pix];
                    if gv == 0.0 {
                        continue;
                    }
                    let get = |r: i64, cc: i64| fetch(bi, ch, bp, r, cc).map_or(0.0, |i| xv.data()[i]);
                    let (_, dsx, dsy) = sample(get, k, sx, sy);
                    gsx += gv * dsx;
                    gsy += gv * dsy;
                    for (r, cc, wgt) in corners(k, sx, sy) {
                        if r >= 0 && r < k as i64 && cc >= 0 && cc < k as i64 {
                            if let Some(i) = fetch(bi, ch, bp, r, cc) {
                                dx.data_mut()[i] += gv * wgt;
                            }
                        }
                    }
                }
                let d = &mut dp.data_mut()[(bi * n + j) * 4..(bi * n + j) * 4 + 4];
                d[0] += gsx * alpha;
                d[1] += gsy * beta;
                d[2] += gsx;
                d[3] += gsy;
            }
            vec![Some(dx), Some(dp)]
        }),
    )
}

pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) {
    let (n, c) = (cfg.num_joints, cfg.channels());
    nn::init_conv2d(store, "lgtn.affine.0", 2 * n, AFFINE_WIDTH, 3, rng);
    nn::init_conv2d(store, "lgtn.affine.1", AFFINE_WIDTH, AFFINE_WIDTH, 3, rng);
    nn::init_dense_zero(store, "lgtn.affine.out", AFFINE_WIDTH, 4 * n);
    let gin = 2 * c + 2 * n;
    store.init_glorot("lgtn.gru.gates.w", &[2 * c, gin, 3, 3], rng);
    store.init_zeros("lgtn.gru.gates.b", &[2 * c]);
    store.init_zeros("lgtn.gru.cand.w", &[c, gin, 3, 3]);
    store.init_zeros("lgtn.gru.cand.b", &[c]);
}

/// 𝓐_E: heatmaps `[B, N, h, w]` of two consecutive poses → `[B, N, 4]` with `a, b > 0`.
pub fn estimate_affine<'t>(tape: &'t Tape, store: &ParamStore, h_prev: Var<'t>, h_curr: Var<'t>) -> Result<Var<'t>> {
    let (sp, sc) = (h_prev.shape(), h_curr.shape());
    if sp != sc || sp.len() != 4 {
        return Err(Error::Invalid(format!("heatmap stacks differ: {sp:?} vs {sc:?}")));
    }
    let (b, n) = (sp[0], sp[1]);
    let x = concat(&[h_prev, h_curr], 1);
    let x = nn::conv2d(tape, store, "lgtn.affine.0", x, 1).leaky_relu(LEAK);
    let x = nn::conv2d(tape, store, "lgtn.affine.1", x, 2).leaky_relu(LEAK);
    let raw = nn::dense(tape, store, "lgtn.affine.out", x.spatial_mean()).reshape(&[b, n, 4]);
    Ok(concat(&[raw.slice(2, 0, 2).exp(), raw.slice(2, 2, 2)], 2))
}

/// 𝓖_T: one convolutional GRU step. Returns the new hidden state, which is also the output.
pub fn global_refine<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    fg: Var<'t>,
    h_prev: Var<'t>,
    h_curr: Var<'t>,
    state: Var<'t>,
) -> Var<'t> {
    let c = state.shape()[1];
    let gates = nn::conv2d(tape, store, "lgtn.gru.gates", concat(&[fg, h_prev, h_curr, state], 1), 1).sigmoid();
    let z = gates.slice(1, 0, c);
    let r = gates.slice(1, c, c);
    let cand = nn::conv2d(tape, store, "lgtn.gru.cand", concat(&[fg, h_prev, h_curr, r.mul(state)], 1), 1).tanh();
    state.add(z.mul(cand.sub(state)))
}

/// Pose-derived constants of one scale: heatmaps, boxes and foreground masks per frame.
#[derive(Clone, Debug)]
pub struct ScaleGuide {
    pub size: usize,
    pub box_size: usize,
    /// `[B, N, h, w]` per frame.
    pub heatmaps: Vec<Tensor>,
    /// `boxes[t][b]` for every joint.
    pub boxes: Vec<Vec<Vec<PixelBox>>>,
    /// `[B, 1, h, w]` per frame.
    pub masks: Vec<Tensor>,
}

impl ScaleGuide {
    pub fn frames(&self) -> usize {
        self.heatmaps.len()
    }

    pub fn step_boxes(&self, t: usize) -> Vec<StepBoxes> {
        self.boxes[t - 1]
            .iter()
            .zip(&self.boxes[t])
            .map(|(p, c)| StepBoxes { prev: p.clone(), curr: c.clone() })
            .collect()
    }

    /// `[B, 1, T, h, w]` per-pixel maximum over joints.
    pub fn attention(&self) -> Tensor {
        let (t, b, n, hw) = (self.frames(), self.heatmaps[0].dim(0), self.heatmaps[0].dim(1), self.size * self.size);
        let mut out = Tensor::zeros(&[b, 1, t, self.size, self.size]);
        for (ti, hm) in self.heatmaps.iter().enumerate() {
            for bi in 0..b {
                let dst = &mut out.data_mut()[(bi * t + ti) * hw..(bi * t + ti + 1) * hw];
                for j in 0..n {
                    let src = &hm.data()[(bi * n + j) * hw..(bi * n + j + 1) * hw];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = d.max(s);
                    }
                }
            }
        }
        out
    }
}

/// Builds per-scale guides for a batch of pose sequences (clamped to the frame first).
pub fn pose_guides(cfg: &ModelConfig, poses: &[PoseSequence]) -> Result<Vec<ScaleGuide>> {
    let t = poses.first().map_or(0, PoseSequence::len);
    if poses.iter().any(|p| p.len() != t || p.num_joints() != cfg.num_joints) {
        return Err(Error::Invalid("pose sequences in a batch must share T and N".into()));
    }
    let clamped: Vec<PoseSequence> =
        poses.iter().map(|p| PoseSequence::new(p.frames.iter().map(|f| f.clamped()).collect())).collect();
    let per_sample: Vec<Vec<Vec<_>>> = clamped
        .iter()
        .map(|p| multiscale_heatmaps(p, cfg.resolution, cfg.sigma, cfg.scale_factors()))
        .collect::<Result<_>>()?;
    Ok((0..cfg.scales)
        .map(|s| {
            let size = cfg.level_size(s);
            let k = cfg.box_at(s);
            let heatmaps = (0..t)
                .map(|ti| Tensor::stack(&per_sample.iter().map(|ps| ps[s][ti].maps.clone()).collect::<Vec<_>>()))
                .collect();
            let boxes: Vec<Vec<Vec<PixelBox>>> = (0..t)
                .map(|ti| clamped.iter().map(|p| joint_boxes(&p.frames[ti], k, size, size)).collect())
                .collect();
            let masks = boxes
                .iter()
                .map(|per_b| {
                    let ms: Vec<Tensor> = per_b.iter().map(|bx| box_mask(bx, size, size).reshape(&[1, size, size])).collect();
                    Tensor::stack(&ms)
                })
                .collect();
            ScaleGuide { size, box_size: k, heatmaps, boxes, masks }
        })
        .collect())
}

/// One recurrent step at one scale. Returns `(x_curr, new_state)`.
pub fn step<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    guide: &ScaleGuide,
    t: usize,
    x_prev: Var<'t>,
    state: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let h_prev = tape.constant(guide.heatmaps[t - 1].clone());
    let h_curr = tape.constant(guide.heatmaps[t].clone());
    let params = estimate_affine(tape, store, h_prev, h_curr)?;
    let fg = local_transform(x_prev, params, &guide.step_boxes(t));
    let new_state = global_refine(tape, store, fg, h_prev, h_curr, state);
    let refined = fg.add(new_state);
    Ok((refined.select_where(&guide.masks[t], x_prev), new_state))
}

/// Runs the recurrence at every scale: `levels[s] [B, C, h, w]` → `e_v[s] [B, C, T, h, w]`.
pub fn run<'t>(tape: &'t Tape, store: &ParamStore, levels: &[Var<'t>], guides: &[ScaleGuide]) -> Result<Vec<Var<'t>>> {
    if levels.len() != guides.len() {
        return Err(Error::Invalid(format!("{} feature levels for {} pose scales", levels.len(), guides.len())));
    }
    let t = guides[0].frames();
    if t < 2 {
        return Err(Error::Invalid("the recurrence needs at least 2 frames".into()));
    }
    levels
        .iter()
        .zip(guides)
        .map(|(&x0, guide)| {
            let s = x0.shape();
            if s[2] != guide.size || s[3] != guide.size {
                return Err(Error::Invalid(format!("level {s:?} does not match pose scale {}", guide.size)));
            }
            let mut state = tape.constant(Tensor::zeros(&s));
            let mut x = x0;
            let mut frames = vec![x0];
            for ti in 1..t {
                (x, state) = step(tape, store, guide, ti, x, state)?;
                frames.push(x);
            }
            Ok(stack(&frames, 2))
        })
        .collect()
}
