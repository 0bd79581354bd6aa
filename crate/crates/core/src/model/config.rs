use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{box_size_at, check_box_size, scaled_size, PYRAMID_SCALES};
use crate::world::skeleton::{NUM_JOINTS, RESOLUTIONS};

/// Architecture hyperparameters shared by every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub resolution: usize,
    pub frames: usize,
    pub num_joints: usize,
    /// Number of pyramid levels, finest first.
    pub scales: usize,
    /// Convolutional feature channels on every pyramid level (the level also carries 3 image channels).
    pub width: usize,
    /// Latent code size of the pose transformer.
    pub d: usize,
    pub hidden: usize,
    /// Key-region side at full resolution.
    pub box_size: usize,
    /// Heatmap sigma in pixels at full resolution.
    pub sigma: f64,
    /// Decoder stage widths, coarsest stage first.
    pub decoder_widths: Vec<usize>,
    pub temporal_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            frames: 8,
            num_joints: NUM_JOINTS,
            scales: 4,
            width: 16,
            d: 64,
            hidden: 128,
            box_size: 7,
            sigma: 1.5,
            decoder_widths: vec![32, 32, 24, 16],
            temporal_kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !RESOLUTIONS.contains(&self.resolution) {
            return bad(format!("resolution {} not in {RESOLUTIONS:?}", self.resolution));
        }
        if self.scales == 0 || self.scales > PYRAMID_SCALES.len() {
            return bad(format!("scales must be in 1..=4, got {}", self.scales));
        }
        if self.resolution % (1 << (self.scales - 1)) != 0 {
            return bad(format!("resolution {} is not divisible by 2^{}", self.resolution, self.scales - 1));
        }
        if self.frames < 2 {
            return bad("frames must be at least 2".into());
        }
        if self.num_joints != NUM_JOINTS {
            return bad(format!("num_joints must be {NUM_JOINTS}"));
        }
        if self.width == 0 || self.d == 0 || self.hidden == 0 {
            return bad("width, d and hidden must be positive".into());
        }
        check_box_size(self.box_size).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive".into());
        }
        if self.decoder_widths.len() != self.scales || self.decoder_widths.contains(&0) {
            return bad(format!("decoder_widths needs {} positive entries", self.scales));
        }
        if self.temporal_kernel % 2 == 0 || self.temporal_kernel > self.frames {
            return bad("temporal_kernel must be odd and at most frames".into());
        }
        Ok(())
    }

    pub fn scale_factors(&self) -> &'static [f64] {
        &PYRAMID_SCALES[..self.scales]
    }

    /// Spatial side of pyramid level `s`.
    pub fn level_size(&self, s: usize) -> usize {
        scaled_size(self.resolution, PYRAMID_SCALES[s])
    }

    /// Channels of a pyramid level: the conv features plus the resized prior image.
    pub fn channels(&self) -> usize {
        self.width + 3
    }

    pub fn box_at(&self, s: usize) -> usize {
        box_size_at(self.box_size, PYRAMID_SCALES[s])
    }
}
