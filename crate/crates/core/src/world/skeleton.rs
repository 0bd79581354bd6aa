//! Articulated stick figure, scripted motion classes and orthographic yaw cameras.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Pose2D, PoseSequence};

pub const NUM_JOINTS: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head", "neck", "pelvis", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist", "l_hip", "l_knee",
    "l_ankle", "r_hip", "r_knee", "r_ankle",
];

/// Kinematic tree; the pelvis is the root.
pub const PARENTS: [Option<usize>; NUM_JOINTS] =
    [Some(1), Some(2), None, Some(1), Some(3), Some(4), Some(1), Some(6), Some(7), Some(2), Some(9), Some(10), Some(2), Some(12), Some(13)];

const TORSO: f64 = 0.9;
const HEAD: f64 = 0.3;
const SHOULDER: f64 = 0.35;
const UPPER_ARM: f64 = 0.5;
const FOREARM: f64 = 0.45;
const HIP: f64 = 0.2;
const THIGH: f64 = 0.6;
const SHIN: f64 = 0.55;
/// World y of the ground plane (y points down).
const GROUND: f64 = 1.35;

/// 3D joints plus kinematic tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub joints: Vec<[f64; 3]>,
    pub parent: Vec<Option<usize>>,
}

impl Skeleton3D {
    pub fn bone_lengths(&self) -> Vec<f64> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| dist3(self.joints[j], self.joints[p])))
            .collect()
    }

    /// Checks N ≥ 2, an acyclic parent list with one root, and positive bones.
    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n < 2 || self.parent.len() != n {
            return Err(Error::Invalid(format!("skeleton needs ≥ 2 joints and a parent per joint, got {n}")));
        }
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                match self.parent[cur] {
                    None => break,
                    Some(p) if p >= n => return Err(Error::Invalid(format!("joint {cur} has parent {p} out of range"))),
                    Some(p) => cur = p,
                }
            }
            if self.parent[cur].is_some() {
                return Err(Error::Invalid(format!("parent list has a cycle through joint {start}")));
            }
        }
        if self.bone_lengths().iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Invalid("bone of zero length".into()));
        }
        Ok(())
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn offset(a: [f64; 3], dir: [f64; 3], len: f64) -> [f64; 3] {
    [a[0] + dir[0] * len, a[1] + dir[1] * len, a[2] + dir[2] * len]
}

/// Unit limb direction from a frontal-plane angle `spread` (0 = straight down, π = up,
/// mirrored by `side`) and a sagittal angle `swing` (positive = towards +z).
fn limb_dir(side: f64, spread: f64, swing: f64) -> [f64; 3] {
    [side * spread.sin() * swing.cos(), spread.cos() * swing.cos(), swing.sin()]
}

/// Scripted motion category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionClass {
    ArmWave = 0,
    Squat = 1,
    JumpingJack = 2,
    WalkInPlace = 3,
}

impl MotionClass {
    pub const ALL: [MotionClass; 4] = [MotionClass::ArmWave, MotionClass::Squat, MotionClass::JumpingJack, MotionClass::WalkInPlace];

    pub fn from_id(id: u32) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown motion class {id}; expected 0..=3")))
    }

    pub fn id(self) -> u32 {
        self as u32
    }
}

/// Limb angles for one frame.
#[derive(Clone, Copy, Debug, Default)]
struct Articulation {
    lean: f64,
    arm_spread: [f64; 2],
    arm_swing: [f64; 2],
    elbow: [f64; 2],
    leg_spread: [f64; 2],
    thigh_swing: [f64; 2],
    knee: [f64; 2],
    lift: f64,
}

fn pose_skeleton(a: &Articulation) -> Vec<[f64; 3]> {
    let sides = [1.0, -1.0];
    // place the pelvis so the lower foot rests on the ground
    let mut foot_drop = f64::MIN;
    for s in 0..2 {
        let thigh = limb_dir(sides[s], a.leg_spread[s], a.thigh_swing[s]);
        let shin = limb_dir(sides[s], a.leg_spread[s], a.thigh_swing[s] - a.knee[s]);
        foot_drop = foot_drop.max(THIGH * thigh[1] + SHIN * shin[1]);
    }
    let pelvis = [0.0, GROUND - foot_drop - a.lift, 0.0];
    let up = [0.0, -a.lean.cos(), a.lean.sin()];
    let neck = offset(pelvis, up, TORSO);
    let head = offset(neck, up, HEAD);
    let mut j = vec![[0.0; 3]; NUM_JOINTS];
    j[0] = head;
    j[1] = neck;
    j[2] = pelvis;
    for s in 0..2 {
        let side = sides[s];
        let (sh, el, wr, hp, kn, an) = if s == 0 { (3, 4, 5, 9, 10, 11) } else { (6, 7, 8, 12, 13, 14) };
        j[sh] = offset(neck, [side, 0.0, 0.0], SHOULDER);
        j[el] = offset(j[sh], limb_dir(side, a.arm_spread[s], a.arm_swing[s]), UPPER_ARM);
        j[wr] = offset(j[el], limb_dir(side, a.arm_spread[s] + a.elbow[s], a.arm_swing[s]), FOREARM);
        j[hp] = offset(pelvis, [side, 0.0, 0.0], HIP);
        j[kn] = offset(j[hp], limb_dir(side, a.leg_spread[s], a.thigh_swing[s]), THIGH);
        j[an] = offset(j[kn], limb_dir(side, a.leg_spread[s], a.thigh_swing[s] - a.knee[s]), SHIN);
    }
    j
}

/// Per-clip randomization of the scripted motion.
#[derive(Clone, Copy, Debug)]
struct Style {
    amplitude: f64,
    cycles: f64,
    phase: f64,
}

fn articulate(class: MotionClass, style: Style, u: f64) -> Articulation {
    let Style { amplitude: amp, cycles, phase } = style;
    let w = TAU * cycles * u + phase;
    let (s, c) = (w.sin(), w.cos());
    let raise = 0.5 * (1.0 - c);
    let rest = Articulation { arm_spread: [0.25, 0.25], elbow: [0.15, 0.15], leg_spread: [0.05, 0.05], ..Default::default() };
    match class {
        MotionClass::ArmWave => Articulation {
            arm_spread: [0.3 + amp * (1.6 + 0.9 * s), 0.3 + amp * 0.35 * (1.0 + (w + 1.3).sin())],
            arm_swing: [0.25 * amp * c, 0.15 * amp * s],
            elbow: [0.35 + 0.35 * raise, 0.2],
            ..rest
        },
        MotionClass::Squat => {
            let bend = amp * 0.9 * raise;
            Articulation {
                lean: 0.35 * bend,
                arm_swing: [1.2 * raise * amp, 1.2 * raise * amp],
                thigh_swing: [bend, bend],
                knee: [2.0 * bend, 2.0 * bend],
                ..rest
            }
        }
        MotionClass::JumpingJack => {
            let open = amp * raise;
            Articulation {
                arm_spread: [0.3 + 2.3 * open, 0.3 + 2.3 * open],
                leg_spread: [0.05 + 0.35 * open, 0.05 + 0.35 * open],
                lift: 0.12 * amp * s.abs(),
                ..rest
            }
        }
        MotionClass::WalkInPlace => {
            let (l, r) = (s.max(0.0), (-s).max(0.0));
            Articulation {
                arm_swing: [-0.6 * amp * s, 0.6 * amp * s],
                elbow: [0.4, 0.4],
                thigh_swing: [1.0 * amp * l, 1.0 * amp * r],
                knee: [1.6 * amp * l, 1.6 * amp * r],
                ..rest
            }
        }
    }
}

/// A `T`-frame 3D joint trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub frames: Vec<Vec<[f64; 3]>>,
    pub parent: Vec<Option<usize>>,
    pub class_id: u32,
    pub seed: u64,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn skeleton(&self, t: usize) -> Skeleton3D {
        Skeleton3D { joints: self.frames[t].clone(), parent: self.parent.clone() }
    }

    /// Largest deviation of any bone from its frame-0 length.
    pub fn max_bone_deviation(&self) -> f64 {
        let rest = self.skeleton(0).bone_lengths();
        (1..self.len())
            .flat_map(|t| self.skeleton(t).bone_lengths().into_iter().zip(rest.clone()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// Deterministic clip of `frames` frames for a motion class.
pub fn make_motion(class_id: u32, frames: usize, seed: u64) -> Result<MotionClip> {
    let class = MotionClass::from_id(class_id)?;
    if frames < 2 {
        return Err(Error::Invalid(format!("a motion clip needs at least 2 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = Style {
        amplitude: rng.random_range(0.7..1.0),
        cycles: rng.random_range(0.5..1.0),
        phase: rng.random_range(0.0..TAU),
    };
    let frames = (0..frames)
        .map(|t| pose_skeleton(&articulate(class, style, t as f64 / frames as f64)))
        .collect();
    Ok(MotionClip { frames, parent: PARENTS.to_vec(), class_id, seed })
}

/// Orthographic camera rotated about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    /// Radians in `[0, 2π)`.
    pub yaw: f64,
    /// World units → normalized image units.
    pub scale: f64,
    pub resolution: usize,
}

pub const RESOLUTIONS: [usize; 5] = [32, 56, 64, 112, 224];

impl Viewpoint {
    pub fn new(yaw: f64, scale: f64, resolution: usize) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Invalid(format!("view scale must be positive, got {scale}")));
        }
        if !RESOLUTIONS.contains(&resolution) {
            return Err(Error::Invalid(format!("resolution {resolution} not in {RESOLUTIONS:?}")));
        }
        Ok(Self { yaw: yaw.rem_euclid(TAU), scale, resolution })
    }

    /// Builds from degrees, wrapping into `[0, 2π)`.
    pub fn from_degrees(deg: f64, scale: f64, resolution: usize) -> Result<Self> {
        Self::new(deg * PI / 180.0, scale, resolution)
    }
}

/// Projects one 3D joint without clamping.
#[inline]
pub fn project_point(p: [f64; 3], yaw: f64, scale: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [(p[0] * c + p[2] * s) * scale, p[1] * scale]
}

/// Unclamped projection of every frame, plus the fraction of coordinates outside [-1, 1].
pub fn project_raw(clip: &MotionClip, view: &Viewpoint) -> (Vec<Vec<[f64; 2]>>, f64) {
    let mut outside = 0usize;
    let mut total = 0usize;
    let raw: Vec<Vec<[f64; 2]>> = clip
        .frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|&p| {
                    let q = project_point(p, view.yaw, view.scale);
                    outside += q.iter().filter(|v| v.abs() > 1.0).count();
                    total += 2;
                    q
                })
                .collect()
        })
        .collect();
    (raw, outside as f64 / total.max(1) as f64)
}

/// Rotates about the vertical axis, drops depth, scales and clamps to `[-1, 1]`.
pub fn project(clip: &MotionClip, view: &Viewpoint) -> PoseSequence {
    let (raw, _) = project_raw(clip, view);
    PoseSequence::new(raw.into_iter().map(|f| Pose2D::new(f).clamped()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent rotation: R_y(yaw) applied as a 3×3 matrix, then orthographic drop.
    fn matrix_project(p: [f64; 3], yaw: f64, scale: f64) -> [f64; 2] {
        let r = [[yaw.cos(), 0.0, yaw.sin()], [0.0, 1.0, 0.0], [-yaw.sin(), 0.0, yaw.cos()]];
        let q: Vec<f64> = r.iter().map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum()).collect();
        [(q[0] * scale).clamp(-1.0, 1.0), (q[1] * scale).clamp(-1.0, 1.0)]
    }

    #[test]
    fn motion_is_deterministic_and_shaped() {
        let a = make_motion(0, 8, 1).unwrap();
        let b = make_motion(0, 8, 1).unwrap();
        assert_eq!(a, b);
        for class in 0..4 {
            let clip = make_motion(class, 8, 3).unwrap();
            assert_eq!(clip.len(), 8);
            assert!(clip.frames.iter().all(|f| f.len() == NUM_JOINTS));
        }
        assert!(make_motion(4, 8, 1).is_err());
        assert!(make_motion(0, 1, 1).is_err());
    }

    #[test]
    fn bone_lengths_are_rigid_by_pairwise_loop() {
        let clip = make_motion(2, 16, 7).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..NUM_JOINTS {
            let Some(p) = clip.parent[j] else { continue };
            let len0 = {
                let (a, b) = (clip.frames[0][j], clip.frames[0][p]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            };
            for f in &clip.frames {
                let (a, b) = (f[j], f[p]);
                let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                worst = worst.max((len - len0).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
        for class in 0..4 {
            for seed in 0..20 {
                assert!(make_motion(class, 12, seed).unwrap().max_bone_deviation() < 1e-6);
            }
        }
    }

    #[test]
    fn skeleton_is_a_valid_tree() {
        let clip = make_motion(3, 4, 0).unwrap();
        clip.skeleton(2).validate().unwrap();
        let mut bad = clip.skeleton(0);
        bad.parent[2] = Some(0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn yaw_zero_is_scaled_world_xy() {
        let clip = make_motion(1, 4, 2).unwrap();
        let view = Viewpoint::new(0.0, 0.5, 32).unwrap();
        let p = project(&clip, &view);
        for (f, pf) in clip.frames.iter().zip(&p.frames) {
            for (w, q) in f.iter().zip(&pf.joints) {
                assert_eq!(q[0], (w[0] * 0.5).clamp(-1.0, 1.0));
                assert_eq!(q[1], (w[1] * 0.5).clamp(-1.0, 1.0));
            }
        }
    }

    #[test]
    fn quarter_turn_moves_x_into_depth() {
        let q = project_point([1.0, 0.0, 0.0], PI / 2.0, 1.0);
        assert!(q[0].abs() < 1e-15);
        assert_eq!(q[1], 0.0);
    }

    #[test]
    fn projection_matches_rotation_matrix() {
        let view = Viewpoint::new(0.7, 0.55, 32).unwrap();
        for seed in 0..100 {
            let clip = make_motion((seed % 4) as u32, 6, seed).unwrap();
            let p = project(&clip, &view);
            for (f, pf) in clip.frames.iter().zip(&p.frames) {
                for (w, q) in f.iter().zip(&pf.joints) {
                    let m = matrix_project(*w, 0.7, 0.55);
                    assert!((m[0] - q[0]).abs() < 1e-9 && (m[1] - q[1]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn yaw_projection_equals_rotated_world_at_yaw_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..100 {
            let clip = make_motion((seed % 4) as u32, 4, seed).unwrap();
            let alpha = rng.random_range(0.0..TAU);
            let direct = project(&clip, &Viewpoint::new(alpha, 0.5, 32).unwrap());
            let mut rotated = clip.clone();
            for f in &mut rotated.frames {
                for p in f.iter_mut() {
                    let (s, c) = alpha.sin_cos();
                    *p = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
                }
            }
            let via_world = project(&rotated, &Viewpoint::new(0.0, 0.5, 32).unwrap());
            for (a, b) in direct.frames.iter().zip(&via_world.frames) {
                for (x, y) in a.joints.iter().zip(&b.joints) {
                    assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn default_framing_fits_grid_views() {
        for deg in [-60.0, -40.0, -20.0, 0.0, 20.0, 40.0, 60.0] {
            let view = Viewpoint::from_degrees(deg, 0.55, 32).unwrap();
            for seed in 0..40 {
                let clip = make_motion((seed % 4) as u32, 8, seed).unwrap();
                let (raw, overflow) = project_raw(&clip, &view);
                assert_eq!(overflow, 0.0, "class {} seed {seed} at {deg}°", seed % 4);
                assert!(raw.iter().flatten().all(|q| q[0].abs() <= 1.2 && q[1].abs() <= 1.2));
            }
        }
    }

    #[test]
    fn viewpoint_validation() {
        assert!(Viewpoint::new(0.0, 0.0, 32).is_err());
        assert!(Viewpoint::new(0.0, 1.0, 33).is_err());
        let v = Viewpoint::from_degrees(-20.0, 1.0, 32).unwrap();
        assert!((v.yaw - 340f64.to_radians()).abs() < 1e-12);
    }
}
