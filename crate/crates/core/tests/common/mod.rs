//! Finite-difference gradient checks shared by the test targets.
#![allow(dead_code)]

use dmcw_core::losses::{cycle_consistency_loss, gan_adversarial_loss, wgan_adversarial_loss};
use dmcw_core::networks::{build_critic, build_generator, CriticConfig, MultiUNetConfig};
use dmcw_core::nn::{ParamSet, Tape, Tensor};
use dmcw_core::{CriticModel, GeneratorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Absolute floor for the network checks: central differences of an O(1)
/// loss computed through ~100 ops carry ~1e-11 rounding noise at this step,
/// so entries below ~1e-7 are compared in absolute terms.
pub const NET_FLOOR: f64 = 1e-7;

/// Worst per-entry relative error and global relative error of one check.
#[derive(Clone, Copy, Debug)]
pub struct CheckResult {
    pub params: usize,
    pub worst: f64,
    pub global: f64,
}

impl CheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst < tol && self.global < tol
    }
}

pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Worst per-entry relative error, with an absolute floor for entries whose
/// true gradient is at the rounding-noise level, and the global relative error.
pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let err = (a - n).abs() / (a.abs().max(n.abs()) + floor);
        worst = worst.max(err);
        diff2 += (a - n) * (a - n);
        norm2 += a * a + n * n;
    }
    (worst, (diff2 / norm2.max(1e-300)).sqrt())
}

fn perturb(params: &mut ParamSet, scale: f64, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn numeric_param_grads<M>(
    model: &mut M,
    n: usize,
    params: impl Fn(&mut M) -> &mut ParamSet,
    f: impl Fn(&M) -> f64,
) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let orig = *params(model).scalar_mut(i);
            *params(model).scalar_mut(i) = orig + H;
            let up = f(model);
            *params(model).scalar_mut(i) = orig - H;
            let down = f(model);
            *params(model).scalar_mut(i) = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn numeric_input_grads(x: &Tensor, idx: &[usize], f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            let mut up = x.clone();
            up.data_mut()[i] += H;
            let mut down = x.clone();
            down.data_mut()[i] -= H;
            (f(&up) - f(&down)) / (2.0 * H)
        })
        .collect()
}

fn merge(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.max(b.1))
}

/// Mean generator output differentiated against every parameter and a few
/// input pixels, on perturbed weights.
pub fn generator_check(cfg: MultiUNetConfig, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = build_generator(&cfg, seed).unwrap();
    perturb(g.params_mut(), 0.3, &mut rng);
    let x = random_tensor([2, 1, 8, 8], 0.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let xn = tape.leaf(x.clone(), true);
    let (y, bound) = g.forward(&mut tape, xn, true).unwrap();
    let shape = tape.value(y).shape();
    let numel = tape.value(y).numel() as f64;
    let mut grads = tape
        .backward(&[(y, Tensor::filled(shape, 1.0 / numel))])
        .unwrap();
    let input_grad = grads.get(xn).unwrap().data().to_vec();
    let analytic: Vec<f64> = bound
        .gradients(g.params(), &mut grads)
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();

    let numeric = numeric_param_grads(&mut g, analytic.len(), GeneratorModel::params_mut, |g| {
        g.infer(&x).unwrap().mean()
    });
    let on_params = compare(&analytic, &numeric, NET_FLOOR);

    let idx = [0usize, 17, 63, 100];
    let numeric_x = numeric_input_grads(&x, &idx, |v| g.infer(v).unwrap().mean());
    let analytic_x: Vec<f64> = idx.iter().map(|&i| input_grad[i]).collect();
    let on_input = compare(&analytic_x, &numeric_x, NET_FLOOR);
    let (worst, global) = merge(on_params, on_input);
    CheckResult {
        params: analytic.len(),
        worst,
        global,
    }
}

/// Critic score differentiated against every parameter and every input pixel.
pub fn critic_check(cfg: CriticConfig, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut critic = build_critic(&cfg, seed).unwrap();
    perturb(critic.params_mut(), 0.3, &mut rng);
    let x = random_tensor([1, 1, 8, 8], 0.0, 1.0, &mut rng);
    let score = |c: &CriticModel, x: &Tensor| c.score(x).unwrap()[0];

    let mut tape = Tape::new();
    let xn = tape.leaf(x.clone(), true);
    let (s, bound) = critic.forward(&mut tape, xn, true).unwrap();
    let mut grads = tape.backward(&[(s, Tensor::scalar(1.0))]).unwrap();
    let gx = grads.get(xn).unwrap().data().to_vec();
    let analytic: Vec<f64> = bound
        .gradients(critic.params(), &mut grads)
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let numeric = numeric_param_grads(&mut critic, analytic.len(), CriticModel::params_mut, |c| {
        score(c, &x)
    });
    let on_params = compare(&analytic, &numeric, NET_FLOOR);
    let idx: Vec<usize> = (0..x.numel()).collect();
    let numeric_x = numeric_input_grads(&x, &idx, |v| score(&critic, v));
    let on_input = compare(&gx, &numeric_x, NET_FLOOR);
    let (worst, global) = merge(on_params, on_input);
    CheckResult {
        params: analytic.len(),
        worst,
        global,
    }
}

pub fn fd_vector(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut up = at.to_vec();
            up[i] += H;
            let mut down = at.to_vec();
            down[i] -= H;
            (f(&up) - f(&down)) / (2.0 * H)
        })
        .collect()
}

/// Worst relative error of the closed-form loss derivatives (log-form, WGAN
/// and cycle) against central differences.
pub fn loss_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut track = |a: &[f64], n: &[f64]| worst = worst.max(compare(a, n, 0.0).0);

    let real: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..0.95)).collect();
    let fake: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..0.95)).collect();
    let (critic, gen) = gan_adversarial_loss(&real, &fake).unwrap();
    track(
        &critic.d_real,
        &fd_vector(|r| gan_adversarial_loss(r, &fake).unwrap().0.value, &real),
    );
    track(
        &critic.d_fake,
        &fd_vector(|f| gan_adversarial_loss(&real, f).unwrap().0.value, &fake),
    );
    track(
        &gen.d_fake,
        &fd_vector(|f| gan_adversarial_loss(&real, f).unwrap().1.value, &fake),
    );

    let real: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
    let fake: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (critic, gen) = wgan_adversarial_loss(&real, &fake).unwrap();
    track(
        &critic.d_real,
        &fd_vector(|r| wgan_adversarial_loss(r, &fake).unwrap().0.value, &real),
    );
    track(
        &critic.d_fake,
        &fd_vector(|f| wgan_adversarial_loss(&real, f).unwrap().0.value, &fake),
    );
    track(
        &gen.d_fake,
        &fd_vector(|f| wgan_adversarial_loss(&real, f).unwrap().1.value, &fake),
    );

    let shape = [2, 1, 1, 5];
    let x = random_tensor(shape, 0.0, 1.0, &mut rng);
    let y = random_tensor(shape, 0.0, 1.0, &mut rng);
    let xr = random_tensor(shape, 0.0, 1.0, &mut rng);
    let yr = random_tensor(shape, 0.0, 1.0, &mut rng);
    let loss = cycle_consistency_loss(&x, &xr, &y, &yr).unwrap();
    let as_t = |v: &[f64]| Tensor::from_vec(shape, v.to_vec()).unwrap();
    track(
        loss.d_x_reconstructed.data(),
        &fd_vector(
            |v| cycle_consistency_loss(&x, &as_t(v), &y, &yr).unwrap().value,
            xr.data(),
        ),
    );
    track(
        loss.d_y_reconstructed.data(),
        &fd_vector(
            |v| cycle_consistency_loss(&x, &xr, &y, &as_t(v)).unwrap().value,
            yr.data(),
        ),
    );
    worst
}

pub fn tiny_generators() -> [(MultiUNetConfig, u64); 2] {
    [
        (
            MultiUNetConfig {
                branch_depths: vec![2],
                base_channels: 2,
            },
            3,
        ),
        (
            MultiUNetConfig {
                branch_depths: vec![1, 2],
                base_channels: 2,
            },
            8,
        ),
    ]
}

pub fn tiny_critic() -> (CriticConfig, u64) {
    (
        CriticConfig {
            num_layers: 2,
            base_channels: 4,
        },
        2,
    )
}
