//! Training losses: pose MSE, multi-scale action-separable perceptual and adversarial
//! terms, the weighted total and the stage-1 pixel objective.

use pas_autograd::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, LEAK};
use crate::pose::{fg_mask, pose_mse_var, scaled_size, Pose2D, PYRAMID_SCALES};

/// Seed of the frozen perceptual feature network.
pub const FEATURENET_SEED: u64 = 0x0f3a_7e11;
/// Flat value outside the key regions of a crop composite.
pub const CANVAS: f64 = 0.5;
/// Working range of discriminator logits.
pub const LOGIT_CLAMP: f64 = 30.0;
pub const NUM_HEADS: usize = 8;
const DISC_WIDTH: [usize; 2] = [16, 32];

/// Fixed two-stage convolutional feature extractor with randomly drawn, frozen weights.
#[derive(Clone, Debug)]
pub struct FeatureNet {
    pub seed: u64,
    params: ParamStore,
}

impl FeatureNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        nn::init_conv2d(&mut params, "featurenet.0", 3, 8, 3, &mut rng);
        nn::init_conv2d(&mut params, "featurenet.1", 8, 16, 3, &mut rng);
        Self { seed, params }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Both tap layers for `x [B, 3, h, w]`: `[B, 8, h, w]` and `[B, 16, h/2, w/2]`.
    pub fn taps<'t>(&self, tape: &'t Tape, x: Var<'t>) -> [Var<'t>; 2] {
        let conv = |name: &str, x: Var<'t>, stride| {
            let w = tape.frozen(&self.params, &format!("{name}.w"));
            let b = tape.frozen(&self.params, &format!("{name}.b"));
            x.conv2d(w, Some(b), stride, 1).leaky_relu(LEAK)
        };
        let centred = x.add_scalar(-0.5).mul_scalar(2.0);
        let t1 = conv("featurenet.0", centred, 1);
        let t2 = conv("featurenet.1", t1, 2);
        [t1, t2]
    }

    /// Spatially pooled second-tap embedding of `[3, H, W]` frames → `[M, 16]`.
    pub fn embed(&self, frames: &[Tensor]) -> Tensor {
        let tape = Tape::new();
        let x = tape.constant(Tensor::stack(frames));
        self.taps(&tape, x)[1].spatial_mean().value().as_ref().clone()
    }
}

impl Default for FeatureNet {
    fn default() -> Self {
        Self::new(FEATURENET_SEED)
    }
}

/// `[B, 1, H, W]` union-of-boxes masks for a batch of poses.
pub fn batch_fg_mask(poses: &[Pose2D], box_size: usize, h: usize, w: usize) -> Tensor {
    let ms: Vec<Tensor> = poses.iter().map(|p| fg_mask(&p.clamped(), box_size, h, w).reshape(&[1, h, w])).collect();
    Tensor::stack(&ms)
}

/// The 8 discriminator / perceptual views of a frame batch: scales × {full, crop composite}.
/// Order: `[s0 full, s0 crop, s1 full, s1 crop, ...]`.
pub fn multiscale_views<'t>(tape: &'t Tape, frames: Var<'t>, mask: &Tensor) -> Vec<Var<'t>> {
    let s = frames.shape();
    let canvas = tape.constant(Tensor::full(&s, CANVAS));
    let crop = frames.select_where(mask, canvas);
    PYRAMID_SCALES
        .iter()
        .flat_map(|&sc| {
            let (h, w) = (scaled_size(s[2], sc), scaled_size(s[3], sc));
            [frames.resize_bilinear(h, w), crop.resize_bilinear(h, w)]
        })
        .collect()
}

/// Perceptual loss between one generated and one true frame per batch element.
/// Returns the total and the 16 items (scale × {full, crop} × tap).
pub fn perceptual_action_separable<'t>(
    tape: &'t Tape,
    fnet: &FeatureNet,
    fake: Var<'t>,
    real: Var<'t>,
    poses: &[Pose2D],
    box_size: usize,
) -> (Var<'t>, Vec<Var<'t>>) {
    let s = fake.shape();
    let mask = batch_fg_mask(poses, box_size, s[2], s[3]);
    let fv = multiscale_views(tape, fake, &mask);
    let rv = multiscale_views(tape, real, &mask);
    let mut items = Vec::with_capacity(16);
    for (f, r) in fv.into_iter().zip(rv) {
        let (ft, rt) = (fnet.taps(tape, f), fnet.taps(tape, r));
        for (a, b) in ft.into_iter().zip(rt) {
            items.push(a.mae(b));
        }
    }
    let total = items[1..].iter().fold(items[0], |acc, v| acc.add(*v));
    (total, items)
}

pub fn init_discriminator<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) {
    nn::init_conv2d(store, "discriminator.trunk.0", 3, DISC_WIDTH[0], 3, rng);
    nn::init_conv2d(store, "discriminator.trunk.1", DISC_WIDTH[0], DISC_WIDTH[1], 3, rng);
    for k in 0..NUM_HEADS {
        nn::init_dense(store, &format!("discriminator.head{k}"), DISC_WIDTH[1], 1, rng);
    }
}

/// Shared trunk, one linear head per view; each logit `[B]` clamped to ±30.
pub fn discriminator_logits<'t>(tape: &'t Tape, store: &ParamStore, views: &[Var<'t>]) -> Vec<Var<'t>> {
    views
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let b = v.shape()[0];
            let x = nn::conv2d(tape, store, "discriminator.trunk.0", v, 2).leaky_relu(LEAK);
            let x = nn::conv2d(tape, store, "discriminator.trunk.1", x, 2).leaky_relu(LEAK);
            nn::dense(tape, store, &format!("discriminator.head{k}"), x.spatial_mean())
                .reshape(&[b])
                .clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        })
        .collect()
}

fn mean_of<'t>(vs: &[Var<'t>]) -> Var<'t> {
    let n = vs.len() as f64;
    vs[1..].iter().fold(vs[0], |acc, v| acc.add(*v)).mul_scalar(1.0 / n)
}

/// Non-saturating generator loss: mean over heads of `softplus(−D(fake))`.
pub fn generator_adv_loss<'t>(fake_logits: &[Var<'t>]) -> Var<'t> {
    let per: Vec<Var> = fake_logits.iter().map(|l| l.neg().softplus().mean()).collect();
    mean_of(&per)
}

/// Logistic discriminator loss split into its real and fake halves.
pub fn discriminator_halves<'t>(real_logits: &[Var<'t>], fake_logits: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
    let real: Vec<Var> = real_logits.iter().map(|l| l.neg().softplus().mean()).collect();
    let fake: Vec<Var> = fake_logits.iter().map(|l| l.softplus().mean()).collect();
    (mean_of(&real), mean_of(&fake))
}

/// Adversarial terms for one sampled frame per batch element.
pub struct Adversarial<'t> {
    pub g: Var<'t>,
    pub d_real: Var<'t>,
    pub d_fake: Var<'t>,
}

impl<'t> Adversarial<'t> {
    pub fn d_total(&self) -> Var<'t> {
        self.d_real.add(self.d_fake)
    }
}

/// Generator loss sees `fake` with gradient; the discriminator halves see `fake` detached.
pub fn adversarial_losses<'t>(
    tape: &'t Tape,
    dstore: &ParamStore,
    real: Var<'t>,
    fake: Var<'t>,
    poses: &[Pose2D],
    box_size: usize,
) -> Adversarial<'t> {
    let s = real.shape();
    let mask = batch_fg_mask(poses, box_size, s[2], s[3]);
    let real_logits = discriminator_logits(tape, dstore, &multiscale_views(tape, real, &mask));
    let fake_logits = discriminator_logits(tape, dstore, &multiscale_views(tape, fake, &mask));
    let detached = discriminator_logits(tape, dstore, &multiscale_views(tape, fake.detach(), &mask));
    let (d_real, d_fake) = discriminator_halves(&real_logits, &detached);
    Adversarial { g: generator_adv_loss(&fake_logits), d_real, d_fake }
}

/// Loss weights `(λ1, λ2, λ3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub pose: f64,
    pub per: f64,
    pub adv: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { pose: 1.0, per: 1.0, adv: 1e-4 }
    }
}

/// Scalar record of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pose: f64,
    /// Stage-1 pixel MSE; zero in stage 2.
    pub l_pix: f64,
    pub l_per: f64,
    pub l_adv_g: f64,
    pub l_adv_d_real: f64,
    pub l_adv_d_fake: f64,
    pub l_total: f64,
    pub per_item: Vec<f64>,
    pub lambdas: Lambdas,
}

impl LossBreakdown {
    /// `l_pix + λ1·l_pose + λ2·l_per + λ3·l_adv_g`, evaluated in the same order as the graph.
    pub fn recompose(&self) -> f64 {
        weighted(self.l_pix, self.l_pose, self.l_per, self.l_adv_g, &self.lambdas)
    }

    pub fn l_adv_d(&self) -> f64 {
        self.l_adv_d_real + self.l_adv_d_fake
    }

    pub fn is_finite(&self) -> bool {
        [self.l_pose, self.l_pix, self.l_per, self.l_adv_g, self.l_adv_d_real, self.l_adv_d_fake, self.l_total]
            .iter()
            .chain(&self.per_item)
            .all(|v| v.is_finite())
    }
}

fn weighted(pix: f64, pose: f64, per: f64, adv: f64, l: &Lambdas) -> f64 {
    pix + pose * l.pose + per * l.per + adv * l.adv
}

/// Graph of the weighted objective, mirroring [`LossBreakdown::recompose`].
pub fn total_loss<'t>(pix: Var<'t>, pose: Var<'t>, per: Var<'t>, adv_g: Var<'t>, l: &Lambdas) -> Var<'t> {
    pix.add(pose.mul_scalar(l.pose)).add(per.mul_scalar(l.per)).add(adv_g.mul_scalar(l.adv))
}

/// Pose term over the prior and transformed poses: `[B, N, 2]` and `[B, T, N, 2]`.
pub fn pose_loss<'t>(p_a: Var<'t>, p_t: Var<'t>, p_a_true: Var<'t>, p_t_true: Var<'t>) -> Var<'t> {
    let s = p_a.shape();
    let lift = |v: Var<'t>| v.reshape(&[s[0], 1, s[1], 2]);
    let pred = pas_autograd::concat(&[lift(p_a), p_t], 1);
    let truth = pas_autograd::concat(&[lift(p_a_true), p_t_true], 1);
    pose_mse_var(pred, truth)
}

/// Stage-1 objective: pixel MSE over the whole video plus `λ1 ·` pose MSE.
pub fn mse_pretrain_loss<'t>(video: Var<'t>, video_true: Var<'t>, pose: Var<'t>, pose_true: Var<'t>, lambda_pose: f64) -> Var<'t> {
    video.mse(video_true).add(pose_mse_var(pose, pose_true).mul_scalar(lambda_pose))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(seed: u64, b: usize) -> Tensor {
        Tensor::uniform(&[b, 3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn poses(seed: u64, b: usize) -> Vec<Pose2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b).map(|_| Pose2D::new((0..15).map(|_| [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)]).collect())).collect()
    }

    fn perceptual(f: &Tensor, r: &Tensor, p: &[Pose2D]) -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let (t, items) = perceptual_action_separable(&tape, &FeatureNet::default(), tape.constant(f.clone()), tape.constant(r.clone()), p, 7);
        (t.item(), items.iter().map(|v| v.item()).collect())
    }

    #[test]
    fn perceptual_has_sixteen_items_and_vanishes_on_equal_frames() {
        let (f, p) = (frames(1, 2), poses(1, 2));
        let (total, items) = perceptual(&f, &f, &p);
        assert_eq!(items.len(), 16);
        assert_eq!(total, 0.0);
        assert!(items.iter().all(|&v| v == 0.0));
        let (total, items) = perceptual(&f, &frames(2, 2), &p);
        assert!(total > 0.0 && items.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn perceptual_grows_with_noise() {
        let mut means = [0.0; 3];
        for seed in 0..20 {
            let (f, p) = (frames(100 + seed, 1), poses(seed, 1));
            for (k, sigma) in [0.01, 0.05, 0.1].into_iter().enumerate() {
                let noise = Tensor::randn(f.shape(), sigma, &mut ChaCha8Rng::seed_from_u64(seed));
                let noisy = f.zip_map(&noise, |a, b| a + b);
                means[k] += perceptual(&noisy, &f, &p).0 / 20.0;
            }
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn feature_net_is_frozen_and_seed_pinned() {
        let (a, b) = (FeatureNet::default(), FeatureNet::default());
        assert_eq!(a.params().iter().collect::<Vec<_>>(), b.params().iter().collect::<Vec<_>>());
        let tape = Tape::new();
        let x = tape.leaf(frames(3, 1));
        let (t, _) = perceptual_action_separable(&tape, &a, x, tape.constant(frames(4, 1)), &poses(3, 1), 7);
        let g = tape.backward(t);
        assert!(g.params(a.params()).values().all(|v| v.data().iter().all(|&x| x == 0.0)));
        assert!(g.get(x).unwrap().data().iter().any(|&v| v != 0.0));
    }

    fn disc() -> ParamStore {
        let mut s = ParamStore::new();
        init_discriminator(&mut s, &mut ChaCha8Rng::seed_from_u64(5));
        s
    }

    #[test]
    fn confident_discriminator_has_vanishing_loss() {
        let tape = Tape::new();
        let big = |v: f64| vec![tape.constant(Tensor::full(&[2], v)).clamp(-LOGIT_CLAMP, LOGIT_CLAMP); 8];
        let (r, f) = discriminator_halves(&big(1e6), &big(-1e6));
        assert!(r.item() + f.item() < 1e-12);
        let (r, f) = discriminator_halves(&big(-1e6), &big(1e6));
        assert!((r.item() + f.item() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn every_head_passes_gradient_to_its_view() {
        let s = disc();
        let tape = Tape::new();
        let x = tape.constant(frames(6, 2));
        let views: Vec<Var> = multiscale_views(&tape, x, &batch_fg_mask(&poses(6, 2), 7, 32, 32))
            .into_iter()
            .map(|v| tape.leaf(v.value().as_ref().clone()))
            .collect();
        let logits = discriminator_logits(&tape, &s, &views);
        assert_eq!(logits.len(), NUM_HEADS);
        let sizes: Vec<usize> = views.iter().map(|v| v.shape()[2]).collect();
        assert_eq!(sizes, vec![32, 32, 16, 16, 8, 8, 4, 4]);
        for (k, (l, v)) in logits.iter().zip(&views).enumerate() {
            let g = tape.backward(l.sum());
            assert!(g.get(*v).unwrap().data().iter().any(|&x| x != 0.0), "head {k}");
        }
    }

    #[test]
    fn swapping_inputs_under_a_negated_critic_swaps_the_halves() {
        let s = disc();
        let mut neg = s.clone();
        for k in 0..NUM_HEADS {
            for p in ["w", "b"] {
                let name = format!("discriminator.head{k}.{p}");
                let v = neg.get(&name).unwrap().scale(-1.0);
                neg.insert(name, v);
            }
        }
        let (x, y, p) = (frames(7, 2), frames(8, 2), poses(7, 2));
        let halves = |st: &ParamStore, a: &Tensor, b: &Tensor| {
            let tape = Tape::new();
            let adv = adversarial_losses(&tape, st, tape.constant(a.clone()), tape.constant(b.clone()), &p, 7);
            (adv.d_real.item(), adv.d_fake.item())
        };
        let (r, f) = halves(&s, &x, &y);
        let (r2, f2) = halves(&neg, &y, &x);
        assert_eq!((r, f), (f2, r2));
    }

    #[test]
    fn generator_loss_is_bounded_below_by_zero() {
        let tape = Tape::new();
        let l = generator_adv_loss(&vec![tape.constant(Tensor::full(&[3], 1e3)).clamp(-LOGIT_CLAMP, LOGIT_CLAMP); 8]);
        assert!(l.item() >= 0.0 && l.item() < 1e-12);
    }

    #[test]
    fn breakdown_recomposes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..3.0)).collect();
            let lambdas = if rng.random_bool(0.5) { Lambdas::default() } else { Lambdas { adv: 0.0, ..Default::default() } };
            let tape = Tape::new();
            let c = |x: f64| tape.constant(Tensor::scalar(x));
            let total = total_loss(c(v[0]), c(v[1]), c(v[2]), c(v[3]), &lambdas).item();
            let b = LossBreakdown {
                l_pix: v[0],
                l_pose: v[1],
                l_per: v[2],
                l_adv_g: v[3],
                l_adv_d_real: 0.0,
                l_adv_d_fake: 0.0,
                l_total: total,
                per_item: vec![],
                lambdas,
            };
            assert_eq!(b.recompose(), total);
            assert_eq!(total, v[0] + v[1] * lambdas.pose + v[2] * lambdas.per + v[3] * lambdas.adv);
            if lambdas.adv == 0.0 && v[0] == 0.0 {
                assert_eq!(total, v[1] + v[2]);
            }
        }
        assert_eq!(Lambdas::default(), Lambdas { pose: 1.0, per: 1.0, adv: 1e-4 });
    }

    #[test]
    fn pretrain_loss_closed_forms_and_loop() {
        let tape = Tape::new();
        let v = Tensor::uniform(&[2, 3, 4, 8, 8], 0.0, 0.8, &mut ChaCha8Rng::seed_from_u64(10));
        let p = Tensor::uniform(&[2, 4, 15, 2], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(11));
        let c = |t: &Tensor| tape.constant(t.clone());
        assert_eq!(mse_pretrain_loss(c(&v), c(&v), c(&p), c(&p), 1.0).item(), 0.0);
        let shifted = v.map(|x| (x + 0.1).min(1.0));
        let pix = mse_pretrain_loss(c(&shifted), c(&v), c(&p), c(&p), 1.0).item();
        assert!((pix - 0.01).abs() < 1e-12);

        let (v2, p2) = (Tensor::uniform(v.shape(), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(12)), p.map(|x| x * 0.9));
        let got = mse_pretrain_loss(c(&v2), c(&v), c(&p2), c(&p), 1.0).item();
        let mut pix_sum = 0.0;
        for (a, b) in v2.data().iter().zip(v.data()) {
            pix_sum += (a - b) * (a - b);
        }
        let mut pose_sum = 0.0;
        for b in 0..2 {
            for t in 0..4 {
                for j in 0..15 {
                    let dx = p2.at(&[b, t, j, 0]) - p.at(&[b, t, j, 0]);
                    let dy = p2.at(&[b, t, j, 1]) - p.at(&[b, t, j, 1]);
                    pose_sum += dx * dx + dy * dy;
                }
            }
        }
        let expect = pix_sum / v.numel() as f64 + pose_sum / (2.0 * 4.0 * 15.0);
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn pose_loss_covers_prior_and_sequence() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pa = Tensor::uniform(&[1, 15, 2], -1.0, 1.0, &mut rng);
        let pt = Tensor::uniform(&[1, 3, 15, 2], -1.0, 1.0, &mut rng);
        let c = |t: &Tensor| tape.constant(t.clone());
        assert_eq!(pose_loss(c(&pa), c(&pt), c(&pa), c(&pt)).item(), 0.0);
        // offsetting only the prior by (1, 1) costs 2 per joint over (T + 1)·N points
        let off = pa.map(|x| x + 1.0);
        let l = pose_loss(c(&off), c(&pt), c(&pa), c(&pt)).item();
        assert!((l - 2.0 * 15.0 / (4.0 * 15.0)).abs() < 1e-12);
    }
}
