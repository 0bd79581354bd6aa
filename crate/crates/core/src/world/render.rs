//! Anti-aliased stick-figure rasterizer over smooth per-view background textures.

use std::f64::consts::TAU;

use pas_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pose::{to_pixel, PoseSequence};
use crate::video::Video;
use crate::world::skeleton::{Viewpoint, PARENTS};

/// Limb half-width in pixels at 32 px resolution; scales with resolution.
const LIMB_RADIUS_32: f64 = 1.0;

/// Low-frequency colour field: a tilted sinusoid plus a linear ramp per channel.
#[derive(Clone, Debug)]
pub struct Background {
    base: [f64; 3],
    amp: [f64; 3],
    ramp: [f64; 3],
    freq: [f64; 2],
    phase: [f64; 3],
}

impl Background {
    pub fn new(background_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb4c6_0000 + background_id as u64);
        let mut ch = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let base = ch(0.3, 0.65);
        let amp = ch(0.06, 0.14);
        let ramp = ch(-0.15, 0.15);
        let phase = ch(0.0, TAU);
        let freq = [rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)];
        Self { base, amp, ramp, freq, phase }
    }

    /// Colour at normalized position `(x, y) ∈ [0, 1]²`.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let wave = (TAU * (self.freq[0] * x + self.freq[1] * y) + self.phase[c]).sin();
        (self.base[c] + self.amp[c] * wave + self.ramp[c] * (x - 0.5)).clamp(0.0, 1.0)
    }

    /// `[3, H, W]` texture.
    pub fn image(&self, h: usize, w: usize) -> Tensor {
        let mut out = Tensor::zeros(&[3, h, w]);
        for c in 0..3 {
            for v in 0..h {
                for u in 0..w {
                    let val = self.sample(c, u as f64 / (w - 1) as f64, v as f64 / (h - 1) as f64);
                    out.data_mut()[(c * h + v) * w + u] = val;
                }
            }
        }
        out
    }
}

/// Bones as (child, parent) joint pairs in drawing order.
pub fn bones() -> Vec<(usize, usize)> {
    PARENTS.iter().enumerate().filter_map(|(j, p)| p.map(|p| (j, p))).collect()
}

/// Saturated colour for bone `index`, hues spread around the wheel.
pub fn bone_color(index: usize) -> [f64; 3] {
    let hue = (index as f64 * 0.381_966).fract() * 6.0;
    let (s, v) = (0.85, 0.95);
    let f = hue.fract();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match hue as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn limb_radius(resolution: usize) -> f64 {
    LIMB_RADIUS_32 * resolution as f64 / 32.0
}

/// Distance from point `p` to segment `a`–`b`.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Coverage of a pixel centre at distance `d` from a limb axis.
#[inline]
pub fn coverage(d: f64, radius: f64) -> f64 {
    (radius + 0.5 - d).clamp(0.0, 1.0)
}

fn draw_frame(bg: &Tensor, joints: &[[f64; 2]], radius: f64) -> Tensor {
    let (h, w) = (bg.dim(1), bg.dim(2));
    let mut img = bg.clone();
    let px: Vec<[f64; 2]> = joints.iter().map(|j| [to_pixel(j[0], w), to_pixel(j[1], h)]).collect();
    for (bi, (child, parent)) in bones().into_iter().enumerate() {
        let (a, b) = (px[child], px[parent]);
        let color = bone_color(bi);
        let reach = radius + 1.0;
        let x0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + reach).ceil().max(0.0) as usize).min(w - 1);
        let y0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
        let y1 = ((a[1].max(b[1]) + reach).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cov = coverage(segment_distance([x as f64, y as f64], a, b), radius);
                if cov <= 0.0 {
                    continue;
                }
                for (c, &col) in color.iter().enumerate() {
                    let v = &mut img.data_mut()[(c * h + y) * w + x];
                    *v = *v * (1.0 - cov) + col * cov;
                }
            }
        }
    }
    img
}

/// Draws every frame of `pose` over the texture `background_id`.
pub fn render(pose: &PoseSequence, view: &Viewpoint, background_id: u32) -> Video {
    let res = view.resolution;
    let bg = Background::new(background_id).image(res, res);
    let radius = limb_radius(res);
    let frames: Vec<Tensor> = pose.frames.iter().map(|p| draw_frame(&bg, &p.joints, radius)).collect();
    Video::from_frames(&frames).expect("rendered frames are [3, H, W]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Pose2D;
    use crate::world::skeleton::{make_motion, project, NUM_JOINTS};

    fn view() -> Viewpoint {
        Viewpoint::new(0.3, 0.55, 32).unwrap()
    }

    #[test]
    fn static_pose_renders_identical_frames() {
        let clip = make_motion(0, 4, 1).unwrap();
        let p0 = project(&clip, &view()).frames[0].clone();
        let seq = PoseSequence::new(vec![p0; 5]);
        let v = render(&seq, &view(), 3);
        assert_eq!((v.len(), v.height(), v.width()), (5, 32, 32));
        for t in 1..5 {
            assert_eq!(v.frame(t), v.frame(0));
        }
        assert!(v.tensor().data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn joint_pixels_are_foreground_and_far_pixels_background() {
        // joints on exact pixel centres of a 32×32 grid
        let on_grid = |u: f64, v: f64| [2.0 * u / 31.0 - 1.0, 2.0 * v / 31.0 - 1.0];
        let mut joints = vec![on_grid(16.0, 16.0); NUM_JOINTS];
        joints[0] = on_grid(16.0, 6.0);
        joints[5] = on_grid(6.0, 12.0);
        joints[14] = on_grid(20.0, 26.0);
        let seq = PoseSequence::new(vec![Pose2D::new(joints.clone())]);
        let v = render(&seq, &view(), 1);
        let bg = Background::new(1).image(32, 32);
        let palette: Vec<[f64; 3]> = (0..bones().len()).map(bone_color).collect();
        for j in &joints {
            let (x, y) = (to_pixel(j[0], 32) as usize, to_pixel(j[1], 32) as usize);
            let px: Vec<f64> = (0..3).map(|c| v.frame(0).at(&[c, y, x])).collect();
            assert!(palette.iter().any(|col| (0..3).all(|c| (col[c] - px[c]).abs() < 1e-12)), "{px:?} at ({x}, {y})");
        }
        // pixels whose distance to every bone exceeds radius + 0.5 keep the texture
        let px: Vec<[f64; 2]> = joints.iter().map(|j| [to_pixel(j[0], 32), to_pixel(j[1], 32)]).collect();
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..32 {
                let far = bones()
                    .iter()
                    .all(|&(a, b)| segment_distance([x as f64, y as f64], px[a], px[b]) > limb_radius(32) + 0.5);
                if far {
                    checked += 1;
                    for c in 0..3 {
                        assert_eq!(v.frame(0).at(&[c, y, x]), bg.at(&[c, y, x]));
                    }
                }
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn backgrounds_differ_between_ids() {
        assert_ne!(Background::new(0).image(8, 8), Background::new(1).image(8, 8));
    }
}
