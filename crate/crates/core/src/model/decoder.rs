//! Spatio-temporal decoder with heatmap soft attention at every stage.

use pas_autograd::{concat, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{self, LEAK};

pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) {
    let mut prev = 0;
    for (i, &w) in cfg.decoder_widths.iter().enumerate() {
        nn::init_conv3d(store, &format!("decoder.s{i}"), prev + cfg.channels(), w, cfg.temporal_kernel, 3, rng);
        prev = w;
    }
    // output stage: finest latent level (prior image channels first) passed through, plus a small learned term
    let c = cfg.channels();
    nn::init_conv3d(store, "decoder.out", prev + c, 3, cfg.temporal_kernel, 3, rng);
    let w = store.get_mut("decoder.out.w").expect("just initialized");
    let kt = cfg.temporal_kernel;
    let taps = kt * 9;
    let centre = (kt / 2) * 9 + 4;
    for o in 0..3 {
        for i in 0..prev + c {
            let base = (o * (prev + c) + i) * taps;
            for k in 0..taps {
                let v = &mut w.data_mut()[base + k];
                *v = if i < prev {
                    *v * OUT_SCALE
                } else if i - prev == o && k == centre {
                    1.0
                } else {
                    0.0
                };
            }
        }
    }
}

/// Initial scale of the learned part of the output stage.
const OUT_SCALE: f64 = 0.05;

/// `1 + H̄` as a multiplier.
fn gate(attention: &Tensor) -> Tensor {
    attention.map(|v| 1.0 + v)
}

/// `e_v[s] [B, C, T, h, w]` and `attention[s] [B, 1, T, h, w]` (finest first) → `[B, 3, T, H, W]` in `(0, 1)`.
pub fn decode<'t>(tape: &'t Tape, store: &ParamStore, cfg: &ModelConfig, e_v: &[Var<'t>], attention: &[Tensor]) -> Result<Var<'t>> {
    if e_v.len() != cfg.scales || attention.len() != cfg.scales {
        return Err(Error::Invalid(format!("decoder needs {} scales, got {} features and {} heatmaps", cfg.scales, e_v.len(), attention.len())));
    }
    for (e, a) in e_v.iter().zip(attention) {
        let s = e.shape();
        if s.len() != 5 || a.shape() != [s[0], 1, s[2], s[3], s[4]] {
            return Err(Error::Invalid(format!("features {s:?} and heatmaps {:?} disagree", a.shape())));
        }
    }
    let mut y: Option<Var<'t>> = None;
    for (i, s) in (0..cfg.scales).rev().enumerate() {
        let input = match y {
            None => e_v[s],
            Some(prev) => concat(&[prev.upsample2x(), e_v[s]], 1),
        };
        let h = nn::conv3d(tape, store, &format!("decoder.s{i}"), input).leaky_relu(LEAK);
        y = Some(h.mul_broadcast_channels(&gate(&attention[s])));
    }
    let y = concat(&[y.expect("at least one scale"), e_v[0]], 1);
    Ok(nn::conv3d(tape, store, "decoder.out", y).clamp(0.0, 1.0))
}
