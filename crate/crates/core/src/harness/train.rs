//! Two-stage optimization: pixel/pose pre-training, then the full adversarial objective.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use pas_autograd::{Adam, ParamStore, Tape, Tensor};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{Checkpoint, RunConfig};
use crate::model::pipeline::{forward, init_generator, Batch, Guidance};
use crate::model::{encoder, pose_transformer, ModelConfig};
use crate::objectives::{
    adversarial_losses, init_discriminator, perceptual_action_separable, pose_loss, total_loss, FeatureNet, Lambdas,
    LossBreakdown, FEATURENET_SEED,
};
use crate::world::dataset::splitmix;
use crate::world::{Dataset, Sample, Split};

const LOSS_HEADER: &str = "step,stage,l_total,l_pix,l_pose,l_per,l_adv_g,l_adv_d_real,l_adv_d_fake";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    PoseWarmup,
    Pretrain,
    Adversarial,
}

/// Opens the dataset named by the config and checks it agrees with the model shape.
pub fn open_dataset(cfg: &RunConfig, root: &Path) -> Result<Dataset> {
    let ds = Dataset::open(root)?;
    let d = ds.config();
    if d.resolution != cfg.resolution || d.frames != cfg.frames || d.num_joints != cfg.num_joints {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            msg: format!(
                "dataset is {}px × {} frames × {} joints, run config expects {}px × {} × {}",
                d.resolution, d.frames, d.num_joints, cfg.resolution, cfg.frames, cfg.num_joints
            ),
        });
    }
    Ok(ds)
}

/// Fresh generator, discriminator and optimizer state for a config.
pub fn initial_checkpoint(cfg: &RunConfig) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = ParamStore::new();
    init_generator(&cfg.model_config(), &mut generator, &mut rng);
    let mut discriminator = ParamStore::new();
    init_discriminator(&mut discriminator, &mut rng);
    Checkpoint {
        config: cfg.clone(),
        step: 0,
        featurenet_seed: FEATURENET_SEED,
        generator,
        discriminator,
        opt_g: Adam::new(cfg.adam()),
        opt_d: Adam::new(cfg.disc_adam()),
    }
}

pub struct Trainer {
    pub state: Checkpoint,
    model: ModelConfig,
    dataset: Dataset,
    train_ids: Vec<String>,
    cache: BTreeMap<String, Sample>,
    fnet: FeatureNet,
}

impl Trainer {
    pub fn new(state: Checkpoint) -> Result<Self> {
        let cfg = &state.config;
        cfg.validate()?;
        let dataset = open_dataset(cfg, &cfg.dataset)?;
        let train_ids = dataset.ids(Split::Train);
        if train_ids.is_empty() {
            return Err(Error::Dataset { path: cfg.dataset.clone(), msg: "no training samples".into() });
        }
        Ok(Self {
            model: cfg.model_config(),
            fnet: FeatureNet::new(state.featurenet_seed),
            dataset,
            train_ids,
            cache: BTreeMap::new(),
            state,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.state.config
    }

    pub fn stage(&self) -> Stage {
        let (step, cfg) = (self.state.step, self.config());
        if step < cfg.pose_warmup_steps {
            Stage::PoseWarmup
        } else if step < cfg.gan_start() {
            Stage::Pretrain
        } else {
            Stage::Adversarial
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config().total_steps()
    }

    fn batch(&mut self, rng: &mut ChaCha8Rng, b: usize) -> Result<Batch> {
        let n = self.train_ids.len();
        let picks: Vec<usize> =
            if n >= b { sample_indices(rng, n, b).into_vec() } else { (0..b).map(|_| rng.random_range(0..n)).collect() };
        for &i in &picks {
            let id = &self.train_ids[i];
            if !self.cache.contains_key(id) {
                let mut s = self.dataset.load(id)?;
                // the source video is never an input to the model
                s.source_video = crate::video::Video::zeros(1, 1, 1);
                self.cache.insert(id.clone(), s);
            }
        }
        let samples: Vec<&Sample> = picks.iter().map(|&i| &self.cache[&self.train_ids[i]]).collect();
        Batch::new(&samples)
    }

    /// Runs optimization step `state.step` and advances the counter.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let step = self.state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.config().seed, step));
        let stage = self.stage();
        let cfg = self.config().clone();
        if stage == Stage::PoseWarmup {
            let batch = self.batch(&mut rng, cfg.pose_batch_size)?;
            return self.pose_step(step, &batch);
        }
        let batch = self.batch(&mut rng, cfg.batch_size)?;
        let tape = Tape::new();
        let out = forward(&tape, &self.state.generator, &self.model, &batch, Guidance::Given(&batch.target_poses))?;
        let target = tape.constant(batch.target_video.clone());
        let l_pose = pose_loss(
            out.prior_pose,
            out.poses,
            tape.constant(batch.prior_pose.clone()),
            tape.constant(batch.target_pose_tensor()),
        );
        let zero = tape.constant(Tensor::scalar(0.0));
        let breakdown;
        let d_grads;
        let g_root;
        match stage {
            Stage::PoseWarmup | Stage::Pretrain => {
                let lambdas = Lambdas { pose: cfg.lambda_pose, per: cfg.lambda_per, adv: 0.0 };
                let l_pix = out.video.mse(target);
                g_root = total_loss(l_pix, l_pose, zero, zero, &lambdas);
                breakdown = LossBreakdown {
                    l_pose: l_pose.item(),
                    l_pix: l_pix.item(),
                    l_per: 0.0,
                    l_adv_g: 0.0,
                    l_adv_d_real: 0.0,
                    l_adv_d_fake: 0.0,
                    l_total: g_root.item(),
                    per_item: vec![],
                    lambdas,
                };
                d_grads = None;
            }
            Stage::Adversarial => {
                let lambdas = cfg.lambdas();
                let t = rng.random_range(0..cfg.frames);
                let (fake, real) = (out.video.select(2, t), target.select(2, t));
                let poses: Vec<_> = batch.target_poses.iter().map(|p| p.frames[t].clone()).collect();
                let (l_per, items) = perceptual_action_separable(&tape, &self.fnet, fake, real, &poses, cfg.box_size);
                let adv = adversarial_losses(&tape, &self.state.discriminator, real, fake, &poses, cfg.box_size);
                g_root = total_loss(zero, l_pose, l_per, adv.g, &lambdas);
                breakdown = LossBreakdown {
                    l_pose: l_pose.item(),
                    l_pix: 0.0,
                    l_per: l_per.item(),
                    l_adv_g: adv.g.item(),
                    l_adv_d_real: adv.d_real.item(),
                    l_adv_d_fake: adv.d_fake.item(),
                    l_total: g_root.item(),
                    per_item: items.iter().map(|v| v.item()).collect(),
                    lambdas,
                };
                d_grads = Some(tape.backward(adv.d_total()).params(&self.state.discriminator));
            }
        }
        check_finite(step, &breakdown)?;
        let g_grads = tape.backward(g_root).params(&self.state.generator);
        self.state.opt_g.update(&mut self.state.generator, &g_grads);
        if let Some(g) = d_grads {
            self.state.opt_d.update(&mut self.state.discriminator, &g);
        }
        self.state.step += 1;
        Ok(breakdown)
    }

    /// Pose branch only: encoder, pose head and pose transformer under `λ1 · l_pose`.
    fn pose_step(&mut self, step: u64, batch: &Batch) -> Result<LossBreakdown> {
        let cfg = self.config();
        let lambdas = Lambdas { pose: cfg.lambda_pose, per: 0.0, adv: 0.0 };
        let tape = Tape::new();
        let store = &self.state.generator;
        let levels = encoder::encode(&tape, store, &self.model, tape.constant(batch.prior.clone()))?;
        let p_a = encoder::estimate_prior_pose(&tape, store, &self.model, &levels);
        let p_t = pose_transformer::transform_sequence(
            &tape,
            store,
            tape.constant(batch.source_poses.clone()),
            p_a,
            &batch.theta1,
            &batch.theta2,
        )?;
        let l_pose = pose_loss(p_a, p_t, tape.constant(batch.prior_pose.clone()), tape.constant(batch.target_pose_tensor()));
        let zero = tape.constant(Tensor::scalar(0.0));
        let root = total_loss(zero, l_pose, zero, zero, &lambdas);
        let breakdown = LossBreakdown {
            l_pose: l_pose.item(),
            l_pix: 0.0,
            l_per: 0.0,
            l_adv_g: 0.0,
            l_adv_d_real: 0.0,
            l_adv_d_fake: 0.0,
            l_total: root.item(),
            per_item: vec![],
            lambdas,
        };
        check_finite(step, &breakdown)?;
        let grads = tape.backward(root).params(store);
        self.state.opt_g.update(&mut self.state.generator, &grads);
        self.state.step += 1;
        Ok(breakdown)
    }
}

fn check_finite(step: u64, b: &LossBreakdown) -> Result<()> {
    if b.is_finite() {
        return Ok(());
    }
    let text = serde_json::to_string(b)?;
    log::error!("non-finite loss at step {step}: {text}");
    Err(Error::NonFinite { step, breakdown: text })
}

fn loss_row(step: u64, stage: Stage, b: &LossBreakdown) -> String {
    let stage = match stage {
        Stage::PoseWarmup => "pose_warmup",
        Stage::Pretrain => "pretrain",
        Stage::Adversarial => "adversarial",
    };
    format!(
        "{step},{stage},{},{},{},{},{},{},{}",
        b.l_total, b.l_pix, b.l_pose, b.l_per, b.l_adv_g, b.l_adv_d_real, b.l_adv_d_fake
    )
}

/// Keeps the header and the rows of steps before `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let kept: Vec<String> = match std::fs::read_to_string(path) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
            .map(str::to_string)
            .collect(),
        Err(_) => vec![],
    };
    let mut text = String::from(LOSS_HEADER) + "\n";
    for row in kept {
        text.push_str(&row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Paths written by [`train`].
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }

    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint_pretrain.bin")
    }

    pub fn losses(&self) -> PathBuf {
        self.dir.join("losses.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
}

/// Trains to `total_steps`, starting fresh or from a checkpoint, writing logs and
/// checkpoints into the config's output directory.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<Checkpoint> {
    let state = match resume {
        Some(p) => {
            let mut c = Checkpoint::load(p)?;
            // schedule and output settings may be extended on resume; the model may not change
            if c.config.model_config() != cfg.model_config() {
                return Err(Error::Config("checkpoint model shape differs from the run config".into()));
            }
            c.config = cfg.clone();
            c.opt_g.config = cfg.adam();
            c.opt_d.config = cfg.disc_adam();
            c
        }
        None => initial_checkpoint(cfg),
    };
    let mut trainer = Trainer::new(state)?;
    let files = RunFiles { dir: cfg.output_dir.clone() };
    std::fs::create_dir_all(&files.dir).map_err(|e| Error::io(&files.dir, e))?;
    std::fs::write(files.config(), cfg.to_toml()).map_err(|e| Error::io(files.config(), e))?;
    truncate_log(&files.losses(), trainer.state.step)?;
    let log_path = files.losses();
    let mut log_file = OpenOptions::new().append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let started = std::time::Instant::now();
    let first = trainer.state.step;
    while !trainer.is_done() {
        let (step, stage) = (trainer.state.step, trainer.stage());
        let b = trainer.step()?;
        writeln!(log_file, "{}", loss_row(step, stage, &b)).map_err(|e| Error::io(&log_path, e))?;
        let done = trainer.state.step;
        if done % cfg.log_every == 0 || done == cfg.total_steps() {
            let per_step = started.elapsed().as_secs_f64() / (done - first) as f64;
            log::info!(
                "step {done}/{} {stage:?} total {:.5} pix {:.5} pose {:.5} per {:.4} adv_g {:.4} adv_d {:.4} ({per_step:.2}s/step)",
                cfg.total_steps(),
                b.l_total,
                b.l_pix,
                b.l_pose,
                b.l_per,
                b.l_adv_g,
                b.l_adv_d()
            );
        }
        if done == cfg.gan_start() {
            trainer.state.save(&files.pretrain_checkpoint())?;
        }
        if done % cfg.checkpoint_every == 0 {
            trainer.state.save(&files.checkpoint())?;
        }
    }
    trainer.state.save(&files.checkpoint())?;
    Ok(trainer.state)
}

/// Reads `losses.csv` back as `(step, l_total)` pairs.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, String, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = vec![];
    for row in r.records() {
        let row = row?;
        let parse = |i: usize| row.get(i).unwrap_or_default().to_string();
        let step = parse(0).parse().map_err(|_| Error::Invalid("bad step in loss log".into()))?;
        let total = parse(2).parse().map_err(|_| Error::Invalid("bad loss in loss log".into()))?;
        out.push((step, parse(1), total));
    }
    Ok(out)
}
