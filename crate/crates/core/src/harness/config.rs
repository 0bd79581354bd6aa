use std::path::{Path, PathBuf};

use pas_autograd::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::Lambdas;
use crate::world::DataConfig;

/// Every knob of a run in one flat key/value table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // data
    pub dataset: PathBuf,
    pub num_samples: usize,
    pub yaws_deg: Vec<f64>,
    pub view_scale: f64,
    pub test_every: usize,
    pub data_seed: u64,
    // model
    pub resolution: usize,
    pub frames: usize,
    pub num_joints: usize,
    pub scales: usize,
    pub width: usize,
    pub d: usize,
    pub hidden: usize,
    pub box_size: usize,
    pub sigma: f64,
    pub decoder_widths: Vec<usize>,
    pub temporal_kernel: usize,
    // objective
    pub lambda_pose: f64,
    pub lambda_per: f64,
    pub lambda_adv: f64,
    // optimization
    pub lr: f64,
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Steps of pose-only training before the video stages.
    pub pose_warmup_steps: u64,
    pub pose_batch_size: usize,
    pub pretrain_steps: u64,
    pub gan_steps: u64,
    pub seed: u64,
    // output
    pub output_dir: PathBuf,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        let model = ModelConfig::default();
        let lambdas = Lambdas::default();
        let adam = AdamConfig::default();
        Self {
            dataset: data.dataset,
            num_samples: data.num_samples,
            yaws_deg: data.yaws_deg,
            view_scale: data.view_scale,
            test_every: data.test_every,
            data_seed: data.seed,
            resolution: model.resolution,
            frames: model.frames,
            num_joints: model.num_joints,
            scales: model.scales,
            width: model.width,
            d: model.d,
            hidden: model.hidden,
            box_size: model.box_size,
            sigma: model.sigma,
            decoder_widths: model.decoder_widths,
            temporal_kernel: model.temporal_kernel,
            lambda_pose: lambdas.pose,
            lambda_per: lambdas.per,
            lambda_adv: lambdas.adv,
            lr: adam.lr,
            disc_lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 4,
            pose_warmup_steps: 6000,
            pose_batch_size: 16,
            pretrain_steps: 1500,
            gan_steps: 300,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 200,
            log_every: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data_config().validate()?;
        self.model_config().validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.pose_batch_size == 0 || self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("batch sizes, checkpoint_every and log_every must be positive");
        }
        if self.total_steps() == 0 {
            return bad("at least one training step is required");
        }
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.lr) || !finite_pos(self.disc_lr) || !finite_pos(self.eps) {
            return bad("lr, disc_lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if [self.lambda_pose, self.lambda_per, self.lambda_adv].iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            dataset: self.dataset.clone(),
            num_samples: self.num_samples,
            frames: self.frames,
            resolution: self.resolution,
            num_joints: self.num_joints,
            yaws_deg: self.yaws_deg.clone(),
            view_scale: self.view_scale,
            test_every: self.test_every,
            seed: self.data_seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            resolution: self.resolution,
            frames: self.frames,
            num_joints: self.num_joints,
            scales: self.scales,
            width: self.width,
            d: self.d,
            hidden: self.hidden,
            box_size: self.box_size,
            sigma: self.sigma,
            decoder_widths: self.decoder_widths.clone(),
            temporal_kernel: self.temporal_kernel,
        }
    }

    /// Full-objective weights.
    pub fn lambdas(&self) -> Lambdas {
        Lambdas { pose: self.lambda_pose, per: self.lambda_per, adv: self.lambda_adv }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.disc_lr, ..self.adam() }
    }

    pub fn total_steps(&self) -> u64 {
        self.pose_warmup_steps + self.pretrain_steps + self.gan_steps
    }

    /// First step of the full-objective stage.
    pub fn gan_start(&self) -> u64 {
        self.pose_warmup_steps + self.pretrain_steps
    }
}
