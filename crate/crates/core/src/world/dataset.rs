//! On-disk multi-view dataset: generation, manifest and loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pas_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Pose2D, PoseSequence};
use crate::video::{load_video, save_video, Video};
use crate::world::render::render;
use crate::world::skeleton::{make_motion, project, project_raw, MotionClass, MotionClip, Viewpoint, NUM_JOINTS};

pub const FORMAT_VERSION: u32 = 1;

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub num_samples: usize,
    pub frames: usize,
    pub resolution: usize,
    pub num_joints: usize,
    /// Camera yaw grid in degrees; every ordered pair of distinct entries is a view pair.
    pub yaws_deg: Vec<f64>,
    pub view_scale: f64,
    /// Every `test_every`-th view pair is held out for the test split.
    pub test_every: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/synth"),
            num_samples: 400,
            frames: 8,
            resolution: 32,
            num_joints: NUM_JOINTS,
            yaws_deg: vec![-60.0, -40.0, -20.0, 0.0, 20.0, 40.0, 60.0],
            view_scale: 0.55,
            test_every: 7,
            seed: 7,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_samples == 0 {
            return bad("num_samples must be positive".into());
        }
        if self.frames < 2 {
            return bad(format!("frames must be at least 2, got {}", self.frames));
        }
        if self.num_joints != NUM_JOINTS {
            return bad(format!("the skeleton has {NUM_JOINTS} joints, config asks for {}", self.num_joints));
        }
        if self.yaws_deg.len() < 2 || self.yaws_deg.iter().any(|y| !y.is_finite()) {
            return bad("yaws_deg needs at least two finite angles".into());
        }
        if self.test_every < 2 {
            return bad("test_every must be at least 2".into());
        }
        Viewpoint::new(0.0, self.view_scale, self.resolution)?;
        Ok(())
    }

    /// Ordered pairs `(source, target)` of yaw-grid indices.
    pub fn view_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.yaws_deg.len();
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
    }

    pub fn is_test_pair(&self, pair: usize) -> bool {
        pair % self.test_every == self.test_every / 2
    }

    pub fn view(&self, index: usize) -> Result<Viewpoint> {
        Viewpoint::from_degrees(self.yaws_deg[index], self.view_scale, self.resolution)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}, expected train, val or test"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub theta1: f64,
    pub theta2: f64,
    pub view1: usize,
    pub view2: usize,
    pub class_id: u32,
    pub seed: u64,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "N")]
    pub num_joints: usize,
    pub resolution: usize,
    pub view_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub split: Split,
    pub pair: usize,
    pub class_id: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub overflow_fraction: f64,
    pub max_abs_coordinate: f64,
    pub class_counts: BTreeMap<String, usize>,
    pub split_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: DataConfig,
    pub samples: Vec<SampleEntry>,
    pub test_pairs: Vec<(usize, usize)>,
    pub stats: DatasetStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PoseFile {
    source_pose: PoseSequence,
    target_pose: PoseSequence,
    prior_pose: Pose2D,
}

/// One source/target view pair of the same motion.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub source_video: Video,
    pub target_video: Video,
    pub source_pose: PoseSequence,
    pub target_pose: PoseSequence,
    /// Target frame 0, `[3, H, W]`.
    pub prior_frame: Tensor,
    pub prior_pose: Pose2D,
    pub theta1: Viewpoint,
    pub theta2: Viewpoint,
    pub class_id: u32,
    pub seed: u64,
}

/// Decorrelated 64-bit seed for item `k` of a stream.
pub fn splitmix(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sample_id(k: usize) -> String {
    format!("s{k:04}")
}

struct Generated {
    entry: SampleEntry,
    meta: SampleMeta,
    clip: MotionClip,
    poses: PoseFile,
    source: Video,
    target: Video,
    overflow: f64,
    max_abs: f64,
}

fn generate_sample(cfg: &DataConfig, k: usize, pairs: &[(usize, usize)]) -> Result<Generated> {
    let seed = splitmix(cfg.seed, k as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_id = rng.random_range(0..MotionClass::ALL.len() as u32);
    let pair = rng.random_range(0..pairs.len());
    let clip = make_motion(class_id, cfg.frames, rng.random())?;
    let (i, j) = pairs[pair];
    let (v1, v2) = (cfg.view(i)?, cfg.view(j)?);
    let (raw1, o1) = project_raw(&clip, &v1);
    let (raw2, o2) = project_raw(&clip, &v2);
    let max_abs = raw1.iter().chain(&raw2).flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let (source_pose, target_pose) = (project(&clip, &v1), project(&clip, &v2));
    let source = render(&source_pose, &v1, i as u32);
    let target = render(&target_pose, &v2, j as u32);
    let split = if cfg.is_test_pair(pair) {
        Split::Test
    } else if k % 10 == 9 {
        Split::Val
    } else {
        Split::Train
    };
    Ok(Generated {
        entry: SampleEntry { id: sample_id(k), split, pair, class_id, seed },
        meta: SampleMeta {
            theta1: v1.yaw,
            theta2: v2.yaw,
            view1: i,
            view2: j,
            class_id,
            seed,
            frames: cfg.frames,
            num_joints: NUM_JOINTS,
            resolution: cfg.resolution,
            view_scale: cfg.view_scale,
        },
        poses: PoseFile { prior_pose: target_pose.frames[0].clone(), source_pose, target_pose },
        clip,
        source,
        target,
        overflow: (o1 + o2) / 2.0,
        max_abs,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset { path: path.into(), msg: e.to_string() })
}

/// Writes the dataset to `cfg.dataset`. A non-empty target directory is refused unless `overwrite`.
pub fn generate_dataset(cfg: &DataConfig, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    let root = &cfg.dataset;
    if root.exists() {
        let non_empty = fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::Dataset { path: root.clone(), msg: "output directory is not empty (pass --overwrite)".into() });
        }
        if non_empty {
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let pairs = cfg.view_pairs();
    let mut samples = Vec::with_capacity(cfg.num_samples);
    let (mut overflow, mut max_abs) = (0.0, 0.0f64);
    let mut class_counts = BTreeMap::new();
    let mut split_counts = BTreeMap::new();
    for k in 0..cfg.num_samples {
        let g = generate_sample(cfg, k, &pairs)?;
        let dir = root.join(&g.entry.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("meta.json"), &g.meta)?;
        write_json(&dir.join("poses.json"), &g.poses)?;
        write_json(&dir.join("clip3d.json"), &g.clip)?;
        save_video(&g.source, &dir.join("source"))?;
        save_video(&g.target, &dir.join("target"))?;
        overflow += g.overflow;
        max_abs = max_abs.max(g.max_abs);
        let class = format!("{:?}", MotionClass::from_id(g.entry.class_id)?);
        *class_counts.entry(class).or_insert(0) += 1;
        *split_counts.entry(serde_json::to_value(g.entry.split)?.as_str().unwrap_or("").to_string()).or_insert(0) += 1;
        samples.push(g.entry);
    }
    if max_abs > 1.2 {
        log::warn!("projected coordinates reach {max_abs:.3}; framing exceeds the [-1.2, 1.2] margin");
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        samples,
        test_pairs: pairs.iter().enumerate().filter(|(p, _)| cfg.is_test_pair(*p)).map(|(_, &v)| v).collect(),
        stats: DatasetStats {
            overflow_fraction: overflow / cfg.num_samples as f64,
            max_abs_coordinate: max_abs,
            class_counts,
            split_counts,
        },
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Read access to a generated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// Opens and validates the manifest and the presence of every sample directory.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        if !path.is_file() {
            return Err(Error::Dataset { path, msg: "manifest.json not found".into() });
        }
        let manifest: Manifest = read_json(&path)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Dataset {
                path,
                msg: format!("format version {} is not supported", manifest.format_version),
            });
        }
        manifest.config.validate()?;
        for s in &manifest.samples {
            let dir = root.join(&s.id);
            for f in ["meta.json", "poses.json", "clip3d.json", "source", "target"] {
                if !dir.join(f).exists() {
                    return Err(Error::Dataset { path: dir.join(f), msg: "missing".into() });
                }
            }
        }
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn config(&self) -> &DataConfig {
        &self.manifest.config
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest.samples.iter().filter(|s| s.split == split).map(|s| s.id.clone()).collect()
    }

    pub fn load_clip(&self, id: &str) -> Result<MotionClip> {
        read_json(&self.root.join(id).join("clip3d.json"))
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        load_sample(&self.root.join(id))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.ids(split).iter().map(|id| self.load(id)).collect()
    }
}

/// Loads a sample directory and checks its invariants.
pub fn load_sample(dir: &Path) -> Result<Sample> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let poses: PoseFile = read_json(&dir.join("poses.json"))?;
    let invalid = |msg: String| Error::Dataset { path: dir.to_path_buf(), msg };
    let source_video = load_video(&dir.join("source"), meta.frames)?;
    let target_video = load_video(&dir.join("target"), meta.frames)?;
    for v in [&source_video, &target_video] {
        if v.height() != meta.resolution || v.width() != meta.resolution {
            return Err(invalid(format!("frames are {}×{}, meta says {}", v.height(), v.width(), meta.resolution)));
        }
    }
    for seq in [&poses.source_pose, &poses.target_pose] {
        if seq.len() != meta.frames || seq.num_joints() != meta.num_joints {
            return Err(invalid("pose sequence shape disagrees with meta.json".into()));
        }
    }
    let in_range = |p: &Pose2D| p.joints.iter().flatten().all(|v| v.is_finite() && v.abs() <= 1.0);
    if !poses.source_pose.frames.iter().chain(&poses.target_pose.frames).all(in_range) || !in_range(&poses.prior_pose) {
        return Err(invalid("pose coordinates outside [-1, 1]".into()));
    }
    let theta1 = Viewpoint::new(meta.theta1, meta.view_scale, meta.resolution)?;
    let theta2 = Viewpoint::new(meta.theta2, meta.view_scale, meta.resolution)?;
    Ok(Sample {
        id: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        prior_frame: target_video.frame(0),
        source_video,
        target_video,
        source_pose: poses.source_pose,
        target_pose: poses.target_pose,
        prior_pose: poses.prior_pose,
        theta1,
        theta2,
        class_id: meta.class_id,
        seed: meta.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> DataConfig {
        DataConfig { dataset: dir.to_path_buf(), num_samples: 10, yaws_deg: vec![-30.0, 30.0], test_every: 2, ..Default::default() }
    }

    fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn ten_samples_two_views() {
        let tmp = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(tmp.path()), false).unwrap();
        assert_eq!(m.samples.len(), 10);
        let dirs = fs::read_dir(tmp.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
        assert_eq!(dirs, 10);
        assert!(tmp.path().join("manifest.json").is_file());
        assert_eq!(m.test_pairs.len(), 1);
    }

    #[test]
    fn generation_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut ca = small(a.path());
        ca.num_samples = 4;
        let cb = DataConfig { dataset: b.path().to_path_buf(), ..ca.clone() };
        generate_dataset(&ca, false).unwrap();
        generate_dataset(&cb, false).unwrap();
        let (ta, mut tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
        // the manifest echoes the output path
        let strip = |m: &mut BTreeMap<PathBuf, Vec<u8>>| {
            let man: Manifest = serde_json::from_slice(&m[Path::new("manifest.json")]).unwrap();
            man.samples
        };
        assert_eq!(strip(&mut ta.clone()), strip(&mut tb));
        tb.remove(Path::new("manifest.json"));
        let mut ta = ta;
        ta.remove(Path::new("manifest.json"));
        assert_eq!(ta, tb);
    }

    #[test]
    fn refuses_non_empty_dir_without_overwrite() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("junk"), b"x").unwrap();
        let mut cfg = small(tmp.path());
        cfg.num_samples = 1;
        assert!(matches!(generate_dataset(&cfg, false), Err(Error::Dataset { .. })));
        generate_dataset(&cfg, true).unwrap();
        assert!(!tmp.path().join("junk").exists());
    }

    #[test]
    fn loaded_samples_match_the_projection_oracle() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path());
        generate_dataset(&cfg, false).unwrap();
        let ds = Dataset::open(tmp.path()).unwrap();
        let mut seen = BTreeMap::new();
        for entry in &ds.manifest.samples {
            let s = ds.load(&entry.id).unwrap();
            let clip = ds.load_clip(&entry.id).unwrap();
            assert_eq!(project(&clip, &s.theta2), s.target_pose);
            assert_eq!(project(&clip, &s.theta1), s.source_pose);
            assert_eq!(s.prior_frame, s.target_video.frame(0));
            assert_eq!(s.prior_pose, s.target_pose.frames[0]);
            assert_eq!(s.target_video.len(), cfg.frames);
            *seen.entry(entry.split).or_insert(0) += 1;
        }
        // seeds are unique, so splits are disjoint by seed
        let seeds: std::collections::BTreeSet<u64> = ds.manifest.samples.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), ds.manifest.samples.len());
        assert_eq!(seen.values().sum::<usize>(), 10);
    }

    #[test]
    fn open_rejects_missing_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(tmp.path()), Err(Error::Dataset { .. })));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = DataConfig { frames: 1, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = DataConfig { resolution: 48, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
