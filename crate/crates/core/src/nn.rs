//! Layer helpers over the tape: parameters live in a [`ParamStore`] under `<prefix>.w` / `<prefix>.b`.

use pas_autograd::{ParamStore, Tape, Var};
use rand::Rng;

pub const LEAK: f64 = 0.2;

pub fn init_conv2d<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut R) {
    store.init_he(&format!("{prefix}.w"), &[cout, cin, k, k], 1.0, rng);
    store.init_zeros(&format!("{prefix}.b"), &[cout]);
}

pub fn init_conv3d<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, kt: usize, k: usize, rng: &mut R) {
    store.init_he(&format!("{prefix}.w"), &[cout, cin, kt, k, k], 1.0, rng);
    store.init_zeros(&format!("{prefix}.b"), &[cout]);
}

pub fn init_dense<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, inp: usize, out: usize, rng: &mut R) {
    store.init_glorot(&format!("{prefix}.w"), &[out, inp], rng);
    store.init_zeros(&format!("{prefix}.b"), &[out]);
}

pub fn init_dense_zero(store: &mut ParamStore, prefix: &str, inp: usize, out: usize) {
    store.init_zeros(&format!("{prefix}.w"), &[out, inp]);
    store.init_zeros(&format!("{prefix}.b"), &[out]);
}

/// Same-padded 2D convolution.
pub fn conv2d<'t>(tape: &'t Tape, store: &ParamStore, prefix: &str, x: Var<'t>, stride: usize) -> Var<'t> {
    let w = tape.param(store, &format!("{prefix}.w"));
    let b = tape.param(store, &format!("{prefix}.b"));
    let k = w.shape()[2];
    x.conv2d(w, Some(b), stride, k / 2)
}

/// 3D convolution, spatially zero-padded and temporally reflect-padded.
pub fn conv3d<'t>(tape: &'t Tape, store: &ParamStore, prefix: &str, x: Var<'t>) -> Var<'t> {
    let w = tape.param(store, &format!("{prefix}.w"));
    let b = tape.param(store, &format!("{prefix}.b"));
    let (kt, k) = (w.shape()[2], w.shape()[3]);
    x.reflect_pad_time(kt / 2).conv3d(w, Some(b), 1, k / 2)
}

pub fn dense<'t>(tape: &'t Tape, store: &ParamStore, prefix: &str, x: Var<'t>) -> Var<'t> {
    x.linear(tape.param(store, &format!("{prefix}.w")), tape.param(store, &format!("{prefix}.b")))
}

/// The two-layer network used throughout the pose transformer: dense, tanh, dense, tanh.
pub fn two_layer<'t>(tape: &'t Tape, store: &ParamStore, prefix: &str, x: Var<'t>) -> Var<'t> {
    let h = dense(tape, store, &format!("{prefix}.0"), x).tanh();
    dense(tape, store, &format!("{prefix}.1"), h).tanh()
}

pub fn init_two_layer<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, inp: usize, hidden: usize, out: usize, rng: &mut R) {
    init_dense(store, &format!("{prefix}.0"), inp, hidden, rng);
    init_dense(store, &format!("{prefix}.1"), hidden, out, rng);
}
