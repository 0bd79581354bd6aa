//! Central finite-difference checks of reverse-mode gradients.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub probes: usize,
    pub step: f64,
    /// Denominator floor for the relative error, so near-zero gradients compare absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { probes: 20, step: 1e-5, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// True if any probe saw a gradient larger than `eps` in magnitude.
    pub fn any_nonzero(&self, eps: f64) -> bool {
        self.probes.iter().any(|p| p.analytic.abs() > eps)
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Reduces an output to a scalar with a fixed random projection, so non-scalar outputs
/// are checked in every component.
fn project(y: &Tensor, seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng)
}

fn scalarize(y: &Tensor, weights: &Tensor) -> f64 {
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

impl GradCheck {
    pub fn with_probes(mut self, probes: usize) -> Self {
        self.probes = probes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    fn pick(&self, sizes: &[usize], rng: &mut StdRng) -> (usize, usize) {
        let total: usize = sizes.iter().sum();
        let mut k = rng.random_range(0..total);
        for (i, &s) in sizes.iter().enumerate() {
            if k < s {
                return (i, k);
            }
            k -= s;
        }
        unreachable!()
    }

    /// Checks gradients of `f` with respect to each tensor in `inputs`.
    pub fn inputs<F>(&self, inputs: &[Tensor], f: F) -> GradCheckReport
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
    {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&tape, &vars);
        let weights = project(&y.value(), self.seed);
        let grads = tape.backward_with(y, weights.clone());
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let eval = |xs: &[Tensor]| -> f64 {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
            scalarize(&f(&tape, &vars).value(), &weights)
        };

        let mut rng = StdRng::seed_from_u64(self.seed);
        let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
        let mut probes = Vec::with_capacity(self.probes);
        for _ in 0..self.probes {
            let (input, index) = self.pick(&sizes, &mut rng);
            let mut xs = inputs.to_vec();
            let x0 = xs[input].data()[index];
            xs[input].data_mut()[index] = x0 + self.step;
            let fp = eval(&xs);
            xs[input].data_mut()[index] = x0 - self.step;
            let fm = eval(&xs);
            let numeric = (fp - fm) / (2.0 * self.step);
            let a = analytic[input].data()[index];
            probes.push(Probe { input, index, analytic: a, numeric, rel_error: rel_error(a, numeric, self.floor) });
        }
        GradCheckReport { probes }
    }

    /// Checks gradients of `f` with respect to the named parameters of `store`.
    pub fn params<F>(&self, store: &ParamStore, names: &[&str], f: F) -> GradCheckReport
    where
        F: for<'t> Fn(&'t Tape, &ParamStore) -> Var<'t>,
    {
        let tape = Tape::new();
        let y = f(&tape, store);
        let weights = project(&y.value(), self.seed);
        let grads = tape.backward_with(y, weights.clone()).params(store);

        let mut rng = StdRng::seed_from_u64(self.seed);
        let sizes: Vec<usize> = names
            .iter()
            .map(|n| store.get(n).unwrap_or_else(|| panic!("unknown parameter `{n}`")).numel())
            .collect();
        let mut probes = Vec::with_capacity(self.probes);
        for _ in 0..self.probes {
            let (input, index) = self.pick(&sizes, &mut rng);
            let name = names[input];
            let mut perturbed = store.clone();
            let x0 = store.get(name).unwrap().data()[index];
            perturbed.get_mut(name).unwrap().data_mut()[index] = x0 + self.step;
            let fp = scalarize(&f(&Tape::new(), &perturbed).value(), &weights);
            perturbed.get_mut(name).unwrap().data_mut()[index] = x0 - self.step;
            let fm = scalarize(&f(&Tape::new(), &perturbed).value(), &weights);
            let numeric = (fp - fm) / (2.0 * self.step);
            let a = grads.get(name).map_or(0.0, |g| g.data()[index]);
            probes.push(Probe { input, index, analytic: a, numeric, rel_error: rel_error(a, numeric, self.floor) });
        }
        GradCheckReport { probes }
    }
}
