//! Pose containers, Gaussian joint heatmaps and the key-region separator.
//!
//! Normalized coordinates live in `[-1, 1]²` with `(-1, -1)` at the top-left pixel
//! centre; a coordinate maps to pixel space by `u = (x + 1) / 2 · (W − 1)`.

use pas_autograd::ops::spatial::resize_bilinear;
use pas_autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales of the feature/heatmap pyramid, finest first.
pub const PYRAMID_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Per-joint normalized image coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose2D {
    pub joints: Vec<[f64; 2]>,
}

impl Pose2D {
    pub fn new(joints: Vec<[f64; 2]>) -> Self {
        Self { joints }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j[0].is_finite() && j[1].is_finite())
    }

    /// Flattened `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j[0], j[1]]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert!(values.len() % 2 == 0);
        Self { joints: values.chunks(2).map(|c| [c[0], c[1]]).collect() }
    }

    pub fn clamped(&self) -> Self {
        Self { joints: self.joints.iter().map(|j| [j[0].clamp(-1.0, 1.0), j[1].clamp(-1.0, 1.0)]).collect() }
    }
}

/// A `T × N × 2` pose track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseSequence {
    pub frames: Vec<Pose2D>,
}

impl PoseSequence {
    pub fn new(frames: Vec<Pose2D>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames.first().map_or(0, Pose2D::num_joints)
    }

    /// `[T, 2N]` tensor of flattened poses.
    pub fn to_tensor(&self) -> Tensor {
        let n2 = 2 * self.num_joints();
        Tensor::from_vec(self.frames.iter().flat_map(Pose2D::flat).collect(), &[self.len(), n2])
    }

    /// Inverse of [`PoseSequence::to_tensor`]; accepts `[T, 2N]` or `[T, N, 2]`.
    pub fn from_tensor(t: &Tensor) -> Self {
        let frames = t.dim(0);
        let per = t.numel() / frames;
        Self { frames: t.data().chunks(per).map(Pose2D::from_flat).collect() }
    }
}

#[inline]
pub fn to_pixel(coord: f64, size: usize) -> f64 {
    (coord + 1.0) * 0.5 * (size as f64 - 1.0)
}

/// Per-joint Gaussian maps `[N, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub maps: Tensor,
    pub sigma: f64,
}

impl HeatmapStack {
    pub fn num_joints(&self) -> usize {
        self.maps.dim(0)
    }

    /// Per-pixel maximum over joints, `[H, W]`.
    pub fn max_over_joints(&self) -> Tensor {
        let (n, h, w) = (self.maps.dim(0), self.maps.dim(1), self.maps.dim(2));
        let mut out = Tensor::zeros(&[h, w]);
        for j in 0..n {
            let m = &self.maps.data()[j * h * w..(j + 1) * h * w];
            for (o, &v) in out.data_mut().iter_mut().zip(m) {
                *o = o.max(v);
            }
        }
        out
    }
}

fn gaussian_maps(joints: &[[f64; 2]], h: usize, w: usize, sigma: f64) -> Tensor {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut maps = Tensor::zeros(&[joints.len(), h, w]);
    for (j, p) in joints.iter().enumerate() {
        let (uc, vc) = (to_pixel(p[0], w), to_pixel(p[1], h));
        let gx: Vec<f64> = (0..w).map(|u| (-(u as f64 - uc).powi(2) * inv).exp()).collect();
        let base = j * h * w;
        for v in 0..h {
            let gy = (-(v as f64 - vc).powi(2) * inv).exp();
            for (u, &g) in gx.iter().enumerate() {
                maps.data_mut()[base + v * w + u] = gy * g;
            }
        }
    }
    maps
}

/// Gaussian heatmap per joint at `resolution × resolution`. Out-of-frame joints keep
/// their true centre, so their maps peak below 1 inside the frame.
pub fn heatmaps(pose: &Pose2D, resolution: usize, sigma: f64) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("heatmap sigma must be positive, got {sigma}")));
    }
    Ok(HeatmapStack { maps: gaussian_maps(&pose.joints, resolution, resolution, sigma), sigma })
}

/// Spatial size of pyramid level `scale` for a `size` base.
pub fn scaled_size(size: usize, scale: f64) -> usize {
    (scale * size as f64 + 1e-9).floor() as usize
}

/// Heatmaps of every frame at every scale: `result[s][t]`. Lower scales are bilinear
/// downsamplings of the full-resolution stack.
pub fn multiscale_heatmaps(poses: &PoseSequence, resolution: usize, sigma: f64, scales: &[f64]) -> Result<Vec<Vec<HeatmapStack>>> {
    for &s in scales {
        if !(s > 0.0 && s <= 1.0) || scaled_size(resolution, s) == 0 {
            return Err(Error::Invalid(format!("heatmap scale {s} must lie in (0, 1] and keep at least one pixel")));
        }
    }
    let full: Vec<HeatmapStack> = poses.frames.iter().map(|p| heatmaps(p, resolution, sigma)).collect::<Result<_>>()?;
    Ok(scales
        .iter()
        .map(|&s| {
            let size = scaled_size(resolution, s);
            full.iter()
                .map(|hm| HeatmapStack { maps: resize_bilinear(&hm.maps, size, size), sigma: sigma * s })
                .collect()
        })
        .collect())
}

/// Differentiable heatmaps: `joints [B, N, 2]` → `[B, N, H, W]`.
pub fn heatmaps_var<'t>(joints: Var<'t>, h: usize, w: usize, sigma: f64) -> Var<'t> {
    let jv = joints.value();
    let shape = jv.shape().to_vec();
    assert!(shape.len() == 3 && shape[2] == 2, "joints must be [B, N, 2], got {shape:?}");
    let (b, n) = (shape[0], shape[1]);
    let pts: Vec<[f64; 2]> = jv.data().chunks(2).map(|c| [c[0], c[1]]).collect();
    let maps = gaussian_maps(&pts, h, w, sigma).reshape(&[b, n, h, w]);
    let cached = maps.clone();
    joints.tape().op(
        maps,
        &[joints],
        Box::new(move |g| {
            let inv_s2 = 1.0 / (sigma * sigma);
            let (sx, sy) = (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
            let mut dj = Tensor::zeros(&shape);
            for (k, p) in pts.iter().enumerate() {
                let (uc, vc) = (to_pixel(p[0], w), to_pixel(p[1], h));
                let (mut gu, mut gv) = (0.0, 0.0);
                for v in 0..h {
                    for u in 0..w {
                        let idx = k * h * w + v * w + u;
                        let m = g.data()[idx] * cached.data()[idx] * inv_s2;
                        gu += m * (u as f64 - uc);
                        gv += m * (v as f64 - vc);
                    }
                }
                dj.data_mut()[2 * k] = gu * sx;
                dj.data_mut()[2 * k + 1] = gv * sy;
            }
            vec![Some(dj)]
        }),
    )
}

/// Axis-aligned square around a joint; `x0..x1`, `y0..y1` is the in-frame part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub cx: i64,
    pub cy: i64,
    pub size: usize,
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn around(cx: i64, cy: i64, size: usize, h: usize, w: usize) -> Self {
        let half = (size / 2) as i64;
        let clip = |lo: i64, hi: i64, n: usize| (lo.clamp(0, n as i64) as usize, hi.clamp(0, n as i64) as usize);
        let (x0, x1) = clip(cx - half, cx + half + 1, w);
        let (y0, y1) = clip(cy - half, cy + half + 1, h);
        Self { cx, cy, size, x0, x1, y0, y1 }
    }

    /// Box centred on the pixel nearest to a normalized joint.
    pub fn for_joint(joint: [f64; 2], size: usize, h: usize, w: usize) -> Self {
        let cx = to_pixel(joint[0], w).round() as i64;
        let cy = to_pixel(joint[1], h).round() as i64;
        Self::around(cx, cy, size, h, w)
    }

    /// Top-left corner in frame coordinates (may be negative).
    pub fn origin(&self) -> (i64, i64) {
        let half = (self.size / 2) as i64;
        (self.cx - half, self.cy - half)
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }
}

/// Odd key-region side length for pyramid level `scale`, never below 3.
pub fn box_size_at(base: usize, scale: f64) -> usize {
    let k = (base as f64 * scale).round() as usize;
    let k = if k % 2 == 0 { k.saturating_sub(1) } else { k };
    k.max(3)
}

pub fn check_box_size(size: usize) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::Invalid(format!("key-region box size must be odd and >= 3, got {size}")));
    }
    Ok(())
}

pub fn joint_boxes(pose: &Pose2D, size: usize, h: usize, w: usize) -> Vec<PixelBox> {
    pose.joints.iter().map(|&j| PixelBox::for_joint(j, size, h, w)).collect()
}

/// Union of boxes as an `H × W` 0/1 tensor.
pub fn box_mask(boxes: &[PixelBox], h: usize, w: usize) -> Tensor {
    let mut m = Tensor::zeros(&[h, w]);
    for b in boxes {
        for y in b.y0..b.y1 {
            m.data_mut()[y * w + b.x0..y * w + b.x1].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    m
}

/// Foreground mask of a pose.
pub fn fg_mask(pose: &Pose2D, size: usize, h: usize, w: usize) -> Tensor {
    box_mask(&joint_boxes(pose, size, h, w), h, w)
}

/// Key-region split of a `[C, H, W]` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyRegionSet {
    pub boxes: Vec<PixelBox>,
    /// One `[C, K, K]` patch per joint, zero where the box leaves the frame.
    pub patches: Vec<Tensor>,
    /// `[H, W]` 0/1 union of boxes.
    pub fg_mask: Tensor,
    /// Features with the foreground zeroed.
    pub background: Tensor,
}

fn check_chw(features: &Tensor) -> Result<(usize, usize, usize)> {
    match *features.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Invalid(format!("feature map must be [C, H, W], got {s:?}"))),
    }
}

pub fn crop_patch(features: &Tensor, b: &PixelBox) -> Tensor {
    let (c, h, w) = (features.dim(0), features.dim(1), features.dim(2));
    let k = b.size;
    let (ox, oy) = b.origin();
    let mut patch = Tensor::zeros(&[c, k, k]);
    for ch in 0..c {
        for y in b.y0..b.y1 {
            let py = (y as i64 - oy) as usize;
            for x in b.x0..b.x1 {
                let px = (x as i64 - ox) as usize;
                patch.data_mut()[(ch * k + py) * k + px] = features.data()[(ch * h + y) * w + x];
            }
        }
    }
    patch
}

pub fn crop_key_regions(features: &Tensor, pose: &Pose2D, box_size: usize) -> Result<KeyRegionSet> {
    check_box_size(box_size)?;
    let (c, h, w) = check_chw(features)?;
    let boxes = joint_boxes(pose, box_size, h, w);
    let patches = boxes.iter().map(|b| crop_patch(features, b)).collect();
    let fg_mask = box_mask(&boxes, h, w);
    let mut background = features.clone();
    for ch in 0..c {
        for (v, &m) in background.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut().zip(fg_mask.data()) {
            if m != 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(KeyRegionSet { boxes, patches, fg_mask, background })
}

/// Writes `patch` into `canvas` at box `b`, skipping out-of-frame entries.
pub fn paste_patch(canvas: &mut Tensor, patch: &Tensor, b: &PixelBox) {
    let (c, h, w) = (canvas.dim(0), canvas.dim(1), canvas.dim(2));
    let k = b.size;
    let (ox, oy) = b.origin();
    for ch in 0..c {
        for y in b.y0..b.y1 {
            let py = (y as i64 - oy) as usize;
            for x in b.x0..b.x1 {
                let px = (x as i64 - ox) as usize;
                canvas.data_mut()[(ch * h + y) * w + x] = patch.data()[(ch * k + py) * k + px];
            }
        }
    }
}

/// Pastes patches at `pose`'s boxes over `background` in ascending joint order; later
/// joints overwrite earlier ones where boxes overlap.
pub fn paste_key_regions(regions: &KeyRegionSet, background: &Tensor, pose: &Pose2D) -> Result<Tensor> {
    let (_, h, w) = check_chw(background)?;
    if regions.patches.len() != pose.num_joints() {
        return Err(Error::Invalid(format!(
            "{} patches for a {}-joint pose",
            regions.patches.len(),
            pose.num_joints()
        )));
    }
    let mut out = background.clone();
    for (patch, &joint) in regions.patches.iter().zip(&pose.joints) {
        let b = PixelBox::for_joint(joint, patch.dim(1), h, w);
        paste_patch(&mut out, patch, &b);
    }
    Ok(out)
}

/// Frame with everything outside the pose's key regions replaced by a flat canvas value.
pub fn foreground_composite(frame: &Tensor, pose: &Pose2D, box_size: usize, canvas: f64) -> Tensor {
    let (c, h, w) = (frame.dim(0), frame.dim(1), frame.dim(2));
    let mask = fg_mask(pose, box_size, h, w);
    let mut out = frame.clone();
    for ch in 0..c {
        for (v, &m) in out.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut().zip(mask.data()) {
            if m == 0.0 {
                *v = canvas;
            }
        }
    }
    out
}

/// `(1 / NT) Σ_t Σ_n ((x − x̂)² + (y − ŷ)²)`.
pub fn pose_mse(p: &PoseSequence, q: &PoseSequence) -> Result<f64> {
    if p.len() != q.len() || p.num_joints() != q.num_joints() || p.frames.iter().zip(&q.frames).any(|(a, b)| a.num_joints() != b.num_joints()) {
        return Err(Error::Invalid(format!(
            "pose shapes differ: {}×{} vs {}×{}",
            p.len(),
            p.num_joints(),
            q.len(),
            q.num_joints()
        )));
    }
    let nt = (p.len() * p.num_joints()) as f64;
    let sum: f64 = p
        .frames
        .iter()
        .zip(&q.frames)
        .flat_map(|(a, b)| a.joints.iter().zip(&b.joints))
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    Ok(sum / nt)
}

/// Differentiable pose MSE over `[B, T, 2N]` (or any matching shape whose trailing axis
/// interleaves x, y): sum of squares divided by the number of joints · frames.
pub fn pose_mse_var<'t>(p: Var<'t>, target: Var<'t>) -> Var<'t> {
    let n_points = p.value().numel() / 2;
    p.sub(target).sqr().sum().mul_scalar(1.0 / n_points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pas_autograd::gradcheck::GradCheck;
    use pas_autograd::Tape;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng, n: usize, range: f64) -> Pose2D {
        Pose2D::new((0..n).map(|_| [rng.random_range(-range..range), rng.random_range(-range..range)]).collect())
    }

    #[test]
    fn heatmap_peak_and_sigma_distance() {
        // joint exactly on pixel (8, 4) of a 17×17 grid
        let pose = Pose2D::new(vec![[0.0, -0.5]]);
        let hm = heatmaps(&pose, 17, 2.0).unwrap();
        assert_eq!(hm.maps.at(&[0, 4, 8]), 1.0);
        assert!((hm.maps.at(&[0, 4, 10]) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((hm.maps.at(&[0, 6, 8]) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn heatmap_matches_double_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        let pose = random_pose(&mut rng, 5, 1.1);
        let (res, sigma) = (23, 1.7);
        let hm = heatmaps(&pose, res, sigma).unwrap();
        let mut worst: f64 = 0.0;
        for (n, j) in pose.joints.iter().enumerate() {
            let u0 = (j[0] + 1.0) / 2.0 * (res as f64 - 1.0);
            let v0 = (j[1] + 1.0) / 2.0 * (res as f64 - 1.0);
            for v in 0..res {
                for u in 0..res {
                    let d2 = (u as f64 - u0).powi(2) + (v as f64 - v0).powi(2);
                    let expect = (-d2 / (2.0 * sigma * sigma)).exp();
                    worst = worst.max((hm.maps.at(&[n, v, u]) - expect).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn out_of_frame_joint_keeps_tail_below_one() {
        let pose = Pose2D::new(vec![[1.3, 0.0]]);
        let hm = heatmaps(&pose, 16, 1.5).unwrap();
        let max = hm.maps.data().iter().cloned().fold(0.0, f64::max);
        assert!(max < 1.0 && max > 0.0);
    }

    #[test]
    fn heatmap_argmax_is_nearest_pixel() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_pose(&mut rng, 3, 1.0);
            let res = 20;
            let hm = heatmaps(&pose, res, 1.5).unwrap();
            for (n, j) in pose.joints.iter().enumerate() {
                let map = &hm.maps.data()[n * res * res..(n + 1) * res * res];
                let arg = (0..map.len()).max_by(|&a, &b| map[a].total_cmp(&map[b])).unwrap();
                let b = PixelBox::for_joint(*j, 1 | 2, res, res);
                assert_eq!((arg % res) as i64, b.cx);
                assert_eq!((arg / res) as i64, b.cy);
            }
        }
    }

    #[test]
    fn heatmap_gradient_wrt_joints() {
        let mut rng = StdRng::seed_from_u64(5);
        let joints = Tensor::uniform(&[2, 4, 2], -0.9, 0.9, &mut rng);
        let report = GradCheck::default()
            .with_probes(20)
            .with_step(1e-4)
            .inputs(&[joints], |_, v| heatmaps_var(v[0], 12, 10, 1.5));
        assert!(report.max_rel_error() < 1e-3, "{:?}", report.worst());
    }

    #[test]
    fn multiscale_sizes_and_identity() {
        let pose = PoseSequence::new(vec![Pose2D::new(vec![[0.1, -0.2], [0.5, 0.5]])]);
        let ms = multiscale_heatmaps(&pose, 112, 1.5, &PYRAMID_SCALES).unwrap();
        let sizes: Vec<usize> = ms.iter().map(|s| s[0].maps.dim(1)).collect();
        assert_eq!(sizes, vec![112, 56, 28, 14]);
        let direct = heatmaps(&pose.frames[0], 112, 1.5).unwrap();
        assert_eq!(ms[0][0].maps, direct.maps);
        assert!(multiscale_heatmaps(&pose, 32, 1.5, &[2.0]).is_err());
    }

    #[test]
    fn multiscale_matches_interpolation_oracle() {
        let pose = PoseSequence::new(vec![Pose2D::new(vec![[0.13, -0.41], [-0.7, 0.66]])]);
        let res = 32;
        let ms = multiscale_heatmaps(&pose, res, 1.5, &PYRAMID_SCALES).unwrap();
        let full = &ms[0][0].maps;
        for (si, &s) in PYRAMID_SCALES.iter().enumerate().skip(1) {
            let size = scaled_size(res, s);
            let ratio = res as f64 / size as f64;
            for &(n, oy, ox) in &[(0, 0, 0), (1, size - 1, size / 2), (0, size / 2, size / 3), (1, 1, size - 1)] {
                // sample position of the output pixel centre in input pixels
                let sy = ((oy as f64 + 0.5) * ratio - 0.5).clamp(0.0, (res - 1) as f64);
                let sx = ((ox as f64 + 0.5) * ratio - 0.5).clamp(0.0, (res - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(res - 1), (x0 + 1).min(res - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let f = |y, x| full.at(&[n, y, x]);
                let expect = (1.0 - fy) * ((1.0 - fx) * f(y0, x0) + fx * f(y0, x1)) + fy * ((1.0 - fx) * f(y1, x0) + fx * f(y1, x1));
                assert!((ms[si][0].maps.at(&[n, oy, ox]) - expect).abs() < 1e-5);
            }
        }
        // a 2× reduction is exactly a 2×2 area average
        let half = &ms[1][0].maps;
        let area = (full.at(&[0, 10, 6]) + full.at(&[0, 11, 6]) + full.at(&[0, 10, 7]) + full.at(&[0, 11, 7])) / 4.0;
        assert!((half.at(&[0, 5, 3]) - area).abs() < 1e-12);
    }

    #[test]
    fn centre_crop_and_corner_clipping() {
        let mut rng = StdRng::seed_from_u64(1);
        let feats = Tensor::randn(&[2, 9, 9], 1.0, &mut rng);
        let centre = Pose2D::new(vec![[0.0, 0.0]]);
        let regions = crop_key_regions(&feats, &centre, 5).unwrap();
        for c in 0..2 {
            for y in 0..5 {
                for x in 0..5 {
                    assert_eq!(regions.patches[0].at(&[c, y, x]), feats.at(&[c, y + 2, x + 2]));
                }
            }
        }
        let corner = Pose2D::new(vec![[-1.0, -1.0]]);
        let regions = crop_key_regions(&feats, &corner, 5).unwrap();
        let p = &regions.patches[0];
        assert_eq!(p.at(&[0, 0, 0]), 0.0);
        assert_eq!(p.at(&[1, 1, 4]), 0.0);
        assert_eq!(p.at(&[0, 2, 2]), feats.at(&[0, 0, 0]));
        assert_eq!(p.at(&[1, 4, 4]), feats.at(&[1, 2, 2]));
        assert_eq!(regions.fg_mask.sum(), 9.0);
        assert!(crop_key_regions(&feats, &corner, 4).is_err());
        assert!(crop_key_regions(&feats, &corner, 1).is_err());
    }

    #[test]
    fn fg_mask_matches_rasterization_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 6, 1.2);
            let (h, w, k) = (13, 11, 5);
            let feats = Tensor::zeros(&[1, h, w]);
            let regions = crop_key_regions(&feats, &pose, k).unwrap();
            let mut count = 0;
            for y in 0..h {
                for x in 0..w {
                    let inside = pose.joints.iter().any(|j| {
                        let cx = ((j[0] + 1.0) / 2.0 * (w - 1) as f64).round() as i64;
                        let cy = ((j[1] + 1.0) / 2.0 * (h - 1) as f64).round() as i64;
                        (x as i64 - cx).abs() <= 2 && (y as i64 - cy).abs() <= 2
                    });
                    count += inside as usize;
                    assert_eq!(regions.fg_mask.at(&[y, x]) == 1.0, inside);
                }
            }
            assert_eq!(regions.fg_mask.sum() as usize, count);
        }
    }

    #[test]
    fn paste_overlap_takes_higher_joint() {
        let feats = Tensor::zeros(&[1, 7, 7]);
        let pose = Pose2D::new(vec![[0.0, 0.0], [0.0, 0.0]]);
        let mut regions = crop_key_regions(&feats, &pose, 3).unwrap();
        regions.patches[0] = Tensor::full(&[1, 3, 3], 1.0);
        regions.patches[1] = Tensor::full(&[1, 3, 3], 2.0);
        let out = paste_key_regions(&regions, &regions.background, &pose).unwrap();
        assert_eq!(out.at(&[0, 3, 3]), 2.0);
        assert_eq!(out.at(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn pose_mse_closed_forms() {
        let a = PoseSequence::new(vec![Pose2D::new(vec![[0.0, 0.0]])]);
        let b = PoseSequence::new(vec![Pose2D::new(vec![[1.0, 1.0]])]);
        assert_eq!(pose_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(pose_mse(&a, &b).unwrap(), 2.0);
        let c = PoseSequence::new(vec![Pose2D::new(vec![[1.0, 1.0], [0.0, 0.0]])]);
        assert!(pose_mse(&a, &c).is_err());
    }

    #[test]
    fn pose_mse_matches_loop_and_var() {
        let mut rng = StdRng::seed_from_u64(4);
        let p = PoseSequence::new((0..6).map(|_| random_pose(&mut rng, 7, 1.0)).collect());
        let q = PoseSequence::new((0..6).map(|_| random_pose(&mut rng, 7, 1.0)).collect());
        let mut acc = 0.0;
        for t in 0..6 {
            for n in 0..7 {
                let dx = p.frames[t].joints[n][0] - q.frames[t].joints[n][0];
                let dy = p.frames[t].joints[n][1] - q.frames[t].joints[n][1];
                acc += dx * dx + dy * dy;
            }
        }
        let oracle = acc / 42.0;
        assert!((pose_mse(&p, &q).unwrap() - oracle).abs() < 1e-9);
        let tape = Tape::new();
        let v = pose_mse_var(tape.constant(p.to_tensor()), tape.constant(q.to_tensor()));
        assert!((v.item() - oracle).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn crop_paste_round_trip(seed in 0u64..1000, n in 1usize..8, k in 1usize..4) {
            let mut rng = StdRng::seed_from_u64(seed);
            let size = 2 * k + 1;
            let feats = Tensor::randn(&[3, 12, 10], 1.0, &mut rng);
            let pose = random_pose(&mut rng, n, 1.3);
            let regions = crop_key_regions(&feats, &pose, size).unwrap();
            let out = paste_key_regions(&regions, &regions.background, &pose).unwrap();
            proptest::prop_assert_eq!(out, feats);
        }

        #[test]
        fn pose_mse_is_a_symmetric_nonnegative_distance(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let p = PoseSequence::new((0..3).map(|_| random_pose(&mut rng, 4, 1.0)).collect());
            let q = PoseSequence::new((0..3).map(|_| random_pose(&mut rng, 4, 1.0)).collect());
            let d = pose_mse(&p, &q).unwrap();
            proptest::prop_assert!(d > 0.0);
            proptest::prop_assert_eq!(d, pose_mse(&q, &p).unwrap());
            proptest::prop_assert_eq!(pose_mse(&p, &p).unwrap(), 0.0);
        }
    }
}
