use pas_autograd::gradcheck::GradCheck;
use pas_autograd::{concat, stack, Tape, Tensor};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn assert_grads(report: pas_autograd::gradcheck::GradCheckReport, what: &str) {
    let worst = report.worst().cloned();
    assert!(report.max_rel_error() < 1e-5, "{what}: worst probe {worst:?}");
}

/// Direct 7-loop convolution used as the reference for the im2col path.
fn naive_conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [bn, ci, t, h, wd] = x.shape().try_into().unwrap();
    let [co, _, kt, kh, kw] = w.shape().try_into().unwrap();
    let to = t - kt + 1;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[bn, co, to, ho, wo]);
    for n in 0..bn {
        for o in 0..co {
            for tt in 0..to {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for dt in 0..kt {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let iy = (y * stride + dy) as isize - pad as isize;
                                        let ix = (xx * stride + dx) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        acc += w.at(&[o, c, dt, dy, dx])
                                            * x.at(&[n, c, tt + dt, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[n, o, tt, y, xx], acc);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv3d_matches_direct_loops() {
    let mut r = rng(1);
    for &(stride, pad, kt) in &[(1, 1, 3), (2, 1, 1), (1, 0, 2), (2, 0, 1)] {
        let x = Tensor::randn(&[2, 3, 4, 7, 6], 1.0, &mut r);
        let w = Tensor::randn(&[4, 3, kt, 3, 3], 1.0, &mut r);
        let b = Tensor::randn(&[4], 1.0, &mut r);
        let tape = Tape::new();
        let y = tape
            .constant(x.clone())
            .conv3d(tape.constant(w.clone()), Some(tape.constant(b.clone())), stride, pad);
        let reference = naive_conv3d(&x, &w, &b, stride, pad);
        assert_eq!(y.shape(), reference.shape());
        assert!(y.value().max_abs_diff(&reference) < 1e-12);
    }
}

#[test]
fn conv_gradients() {
    let mut r = rng(2);
    let x = Tensor::randn(&[2, 3, 3, 5, 5], 1.0, &mut r);
    let w = Tensor::randn(&[2, 3, 3, 3, 3], 0.5, &mut r);
    let b = Tensor::randn(&[2], 0.5, &mut r);
    let report = GradCheck::default().with_probes(40).inputs(&[x, w, b], |_, v| {
        v[0].reflect_pad_time(1).conv3d(v[1], Some(v[2]), 1, 1)
    });
    assert_grads(report, "conv3d");

    let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut r);
    let w = Tensor::randn(&[4, 3, 3, 3], 0.5, &mut r);
    let report = GradCheck::default().with_probes(40).inputs(&[x, w], |_, v| v[0].conv2d(v[1], None, 2, 1));
    assert_grads(report, "conv2d stride 2");
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(3);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[3, 4], 1.0, &mut r);
    let report = GradCheck::default().with_probes(30).inputs(&[a, b], |_, v| {
        let p = v[0].mul(v[1]).tanh().add(v[0].sigmoid()).sub(v[1].exp().mul_scalar(0.1));
        let q = v[0].softplus().add(v[1].leaky_relu(0.2)).add(v[0].sqr().add_scalar(0.3));
        p.add(q).mean()
    });
    assert_grads(report, "elementwise");
}

#[test]
fn linear_and_matmul_gradients() {
    let mut r = rng(4);
    let x = Tensor::randn(&[3, 5], 1.0, &mut r);
    let w = Tensor::randn(&[4, 5], 1.0, &mut r);
    let b = Tensor::randn(&[4], 1.0, &mut r);
    let m = Tensor::randn(&[4, 2], 1.0, &mut r);
    let report = GradCheck::default()
        .with_probes(30)
        .inputs(&[x, w, b, m], |_, v| v[0].linear(v[1], v[2]).tanh().matmul(v[3]));
    assert_grads(report, "linear/matmul");
}

#[test]
fn shape_and_spatial_gradients() {
    let mut r = rng(5);
    let a = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let b = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut r);
    let report = GradCheck::default().with_probes(40).inputs(&[a, b], |_, v| {
        let c = concat(&[v[0], v[1]], 1);
        let s = c.slice(1, 1, 3).resize_bilinear(2, 3).upsample2x();
        let frames = stack(&[c.select(1, 0), c.select(1, 4)], 1);
        s.spatial_mean().sum().add(frames.sqr().sum())
    });
    assert_grads(report, "shape/spatial");
}

#[test]
fn masked_ops_gradients() {
    let mut r = rng(6);
    let a = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let b = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let mut mask = Tensor::zeros(&[2, 1, 4, 4]);
    for (i, v) in mask.data_mut().iter_mut().enumerate() {
        *v = if i % 3 == 0 { 1.0 } else { 0.0 };
    }
    let att = Tensor::uniform(&[2, 1, 4, 4], 1.0, 2.0, &mut r);
    let report = GradCheck::default().with_probes(40).inputs(&[a, b], move |_, v| {
        v[0].select_where(&mask, v[1]).mul_broadcast_channels(&att)
    });
    assert_grads(report, "select_where / broadcast mul");
}

#[test]
fn bilinear_halving_is_a_box_average() {
    let mut r = rng(7);
    let x = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut r);
    let y = pas_autograd::ops::spatial::resize_bilinear(&x, 4, 4);
    for i in 0..4 {
        for j in 0..4 {
            let avg = (x.at(&[0, 0, 2 * i, 2 * j])
                + x.at(&[0, 0, 2 * i + 1, 2 * j])
                + x.at(&[0, 0, 2 * i, 2 * j + 1])
                + x.at(&[0, 0, 2 * i + 1, 2 * j + 1]))
                / 4.0;
            assert!((y.at(&[0, 0, i, j]) - avg).abs() < 1e-12);
        }
    }
}

#[test]
fn shared_leaf_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![2.0], &[1]));
    let y = x.mul(x).add(x.mul_scalar(3.0));
    let g = tape.backward(y);
    assert_eq!(g.get(x).unwrap().data(), &[7.0]);
}
