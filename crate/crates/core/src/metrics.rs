//! Video quality metrics on full frames and pose-cropped key regions, per-frame
//! curves and a Fréchet feature distance over frozen FeatureNet embeddings.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pas_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{FeatureNet, CANVAS};
use crate::pose::{foreground_composite, PoseSequence};
use crate::video::Video;

/// PSNR reported for pixel-identical frames.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Diagonal jitter added to both covariances before the matrix square root.
pub const FRECHET_JITTER: f64 = 1e-6;
pub const FRECHET_MIN_FRAMES: usize = 64;

fn check_same(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Invalid(format!("shape mismatch: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_same(x, y)?;
    let s: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.numel() as f64)
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

pub fn frame_psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

fn check_videos(x: &Video, y: &Video) -> Result<()> {
    check_same(x.tensor(), y.tensor())
}

/// Per-frame PSNR averaged over frames.
pub fn psnr(x: &Video, y: &Video) -> Result<f64> {
    check_videos(x, y)?;
    Ok(mean(&per_frame(x, y, frame_psnr)?))
}

fn per_frame(x: &Video, y: &Video, f: impl Fn(&Tensor, &Tensor) -> Result<f64>) -> Result<Vec<f64>> {
    (0..x.len()).map(|t| f(&x.frame(t), &y.frame(t))).collect()
}

fn gray(frame: &Tensor) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = (frame.dim(0), frame.dim(1), frame.dim(2));
    let d = frame.data();
    let g = (0..h * w).map(|i| (0..c).map(|ch| d[ch * h * w + i]).sum::<f64>() / c as f64).collect();
    (g, h, w)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Window side used for an `h × w` frame: 11, or the largest odd size that fits.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM of two `[C, H, W]` frames after channel-mean grayscale
/// conversion, averaged over valid window positions.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_same(x, y)?;
    if x.rank() != 3 {
        return Err(Error::Invalid(format!("ssim expects [C, H, W], got {:?}", x.shape())));
    }
    let (gx, h, w) = gray(x);
    let (gy, _, _) = gray(y);
    let taps = gaussian_taps(ssim_window(h, w), SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let f = |img: &[f64]| filter_valid(img, h, w, &taps);
    let (mx, my) = (f(&gx), f(&gy));
    let (exx, eyy, exy) = (f(&prod(&gx, &gx)), f(&prod(&gy, &gy)), f(&prod(&gx, &gy)));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (vx, vy, cxy) = (exx[i] - mx[i] * mx[i], eyy[i] - my[i] * my[i], exy[i] - mx[i] * my[i]);
            ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn video_ssim(x: &Video, y: &Video) -> Result<f64> {
    check_videos(x, y)?;
    Ok(mean(&per_frame(x, y, ssim)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame and averaged scores of a video pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    pub mse: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl FrameScores {
    pub fn compute(x: &Video, y: &Video) -> Result<Self> {
        check_videos(x, y)?;
        Ok(Self { mse: per_frame(x, y, mse)?, psnr: per_frame(x, y, frame_psnr)?, ssim: per_frame(x, y, ssim)? })
    }

    pub fn mean(&self) -> Scores {
        Scores { mse: mean(&self.mse), psnr: mean(&self.psnr), ssim: mean(&self.ssim) }
    }
}

/// Per-frame foreground composites: pixels outside the pose's key regions set to the canvas.
pub fn composite_video(v: &Video, poses: &PoseSequence, box_size: usize) -> Result<Video> {
    if poses.len() != v.len() {
        return Err(Error::Invalid(format!("{} poses for {} frames", poses.len(), v.len())));
    }
    let frames: Vec<Tensor> =
        v.frames().iter().zip(&poses.frames).map(|(f, p)| foreground_composite(f, &p.clamped(), box_size, CANVAS)).collect();
    Video::from_frames(&frames)
}

/// MSE / PSNR / SSIM on key-region composites of both videos, cropped with one pose track.
pub fn key_region_frame_scores(x: &Video, y: &Video, poses: &PoseSequence, box_size: usize) -> Result<FrameScores> {
    check_videos(x, y)?;
    FrameScores::compute(&composite_video(x, poses, box_size)?, &composite_video(y, poses, box_size)?)
}

pub fn key_region_metrics(x: &Video, y: &Video, poses: &PoseSequence, box_size: usize) -> Result<Scores> {
    Ok(key_region_frame_scores(x, y, poses, box_size)?.mean())
}

/// Fréchet distance between Gaussian fits of two row-sample feature matrices.
pub fn frechet_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() || a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::Invalid(format!("feature sets {}×{} and {}×{}", a.nrows(), a.ncols(), b.nrows(), b.ncols())));
    }
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    let shift = (&ma - &mb).norm_squared();
    let ra = psd_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let tr_sqrt: f64 = SymmetricEigen::new((&inner + inner.transpose()) * 0.5).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((shift + ca.trace() + cb.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Sample mean and unbiased covariance plus jitter.
fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mu = x.row_mean().transpose();
    let centred = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mu[j]);
    let mut cov = centred.transpose() * &centred / (n - 1.0);
    for i in 0..cov.nrows() {
        cov[(i, i)] += FRECHET_JITTER;
    }
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fréchet distance of FeatureNet embeddings; a desk-scale stand-in for FVD.
pub fn frechet_proxy(fnet: &FeatureNet, set_a: &[Tensor], set_b: &[Tensor]) -> Result<f64> {
    if set_a.len() < FRECHET_MIN_FRAMES || set_b.len() < FRECHET_MIN_FRAMES {
        return Err(Error::Invalid(format!(
            "frechet_proxy needs at least {FRECHET_MIN_FRAMES} frames per set, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    frechet_distance(&embed_rows(fnet, set_a), &embed_rows(fnet, set_b))
}

fn embed_rows(fnet: &FeatureNet, frames: &[Tensor]) -> DMatrix<f64> {
    let rows: Vec<Tensor> = frames.chunks(32).map(|c| fnet.embed(c)).collect();
    let d = rows[0].dim(1);
    let data: Vec<f64> = rows.iter().flat_map(|r| r.data().iter().copied()).collect();
    DMatrix::from_row_slice(frames.len(), d, &data)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(v: &[f64]) -> Self {
        let m = mean(v);
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        Self { mean: m, std: var.sqrt() }
    }
}

/// One evaluated video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub id: String,
    pub full: Scores,
    pub key: Scores,
    pub pose_mse: f64,
    pub psnr_curve: Vec<f64>,
    pub ssim_curve: Vec<f64>,
    pub key_mse_curve: Vec<f64>,
}

impl VideoRow {
    pub fn compute(id: &str, generated: &Video, truth: &Video, true_poses: &PoseSequence, pose_mse: f64, box_size: usize) -> Result<Self> {
        let full = FrameScores::compute(generated, truth)?;
        let key = key_region_frame_scores(generated, truth, true_poses, box_size)?;
        Ok(Self {
            id: id.to_string(),
            full: full.mean(),
            key: key.mean(),
            pose_mse,
            psnr_curve: full.psnr,
            ssim_curve: full.ssim,
            key_mse_curve: key.mse,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: MeanStd,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
}

impl Aggregate {
    fn of(rows: &[VideoRow], pick: impl Fn(&VideoRow) -> Scores) -> Self {
        let col = |f: fn(&Scores) -> f64| MeanStd::of(&rows.iter().map(|r| f(&pick(r))).collect::<Vec<_>>());
        Self { mse: col(|s| s.mse), psnr: col(|s| s.psnr), ssim: col(|s| s.ssim) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub split: String,
    pub num_videos: usize,
    pub full: Aggregate,
    pub key: Aggregate,
    pub pose_mse: f64,
    /// Pose transformer error when started from the true prior pose.
    #[serde(default)]
    pub transform_pose_mse: Option<f64>,
    pub frechet_proxy: Option<f64>,
    pub psnr_curve: Vec<f64>,
    pub ssim_curve: Vec<f64>,
    pub key_mse_curve: Vec<f64>,
    pub videos: Vec<VideoRow>,
}

fn curve(rows: &[VideoRow], pick: fn(&VideoRow) -> &Vec<f64>) -> Vec<f64> {
    let t = rows.iter().map(|r| pick(r).len()).min().unwrap_or(0);
    (0..t).map(|i| mean(&rows.iter().map(|r| pick(r)[i]).collect::<Vec<_>>())).collect()
}

impl EvalReport {
    pub fn from_rows(label: &str, split: &str, videos: Vec<VideoRow>, frechet_proxy: Option<f64>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Invalid("no videos to report on".into()));
        }
        Ok(Self {
            label: label.to_string(),
            split: split.to_string(),
            num_videos: videos.len(),
            full: Aggregate::of(&videos, |r| r.full),
            key: Aggregate::of(&videos, |r| r.key),
            pose_mse: mean(&videos.iter().map(|r| r.pose_mse).collect::<Vec<_>>()),
            transform_pose_mse: None,
            frechet_proxy,
            psnr_curve: curve(&videos, |r| &r.psnr_curve),
            ssim_curve: curve(&videos, |r| &r.ssim_curve),
            key_mse_curve: curve(&videos, |r| &r.key_mse_curve),
            videos,
        })
    }

    /// Rebuilt aggregates match the stored ones.
    pub fn is_consistent(&self) -> bool {
        Self::from_rows(&self.label, &self.split, self.videos.clone(), self.frechet_proxy)
            .is_ok_and(|r| Self { transform_pose_mse: self.transform_pose_mse, ..r } == *self)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// `video_id,frame,psnr,ssim` rows.
    pub fn write_per_frame_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["video_id", "frame", "psnr", "ssim"])?;
        for r in &self.videos {
            for (t, (p, s)) in r.psnr_curve.iter().zip(&r.ssim_curve).enumerate() {
                w.write_record([r.id.clone(), t.to_string(), p.to_string(), s.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
