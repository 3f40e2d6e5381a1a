//! Adversarial (log-form and Wasserstein), cycle-consistency and combined
//! objectives, plus critic weight clipping.
//!
//! Every loss returns its value together with the gradient with respect to
//! its direct inputs; the trainer seeds the tape's backward pass with those.

use crate::error::{Error, Result};
use crate::networks::CriticModel;
use crate::nn::Tensor;

/// Probabilities fed to the log-form loss are clamped to `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Critic-side loss and its gradient w.r.t. real and fake inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticLoss {
    pub value: f64,
    pub d_real: Vec<f64>,
    pub d_fake: Vec<f64>,
}

/// Generator-side loss and its gradient w.r.t. the fake inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub value: f64,
    pub d_fake: Vec<f64>,
}

/// Cycle loss and its gradient w.r.t. both reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleLoss {
    pub value: f64,
    pub d_x_reconstructed: Tensor,
    pub d_y_reconstructed: Tensor,
}

/// Generator-side objective of one cycle stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub adv_forward: f64,
    pub adv_backward: f64,
    pub cycle: f64,
    pub total: f64,
    pub lambda: f64,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} scores contain non-finite values"
        )));
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(clamped p, d clamp / d p)`.
fn clamp_prob(p: f64) -> (f64, f64) {
    if p < PROB_EPS {
        (PROB_EPS, 0.0)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, 0.0)
    } else {
        (p, 1.0)
    }
}

/// Log-form GAN losses on critic probabilities in `(0, 1)`.
///
/// Critic: `-(mean log D(y) + mean log(1 - D(G(x))))`.
/// Generator (non-saturating): `-mean log D(G(x))`.
pub fn gan_adversarial_loss(
    real_probs: &[f64],
    fake_probs: &[f64],
) -> Result<(CriticLoss, GeneratorLoss)> {
    check_scores("real", real_probs)?;
    check_scores("fake", fake_probs)?;
    let nr = real_probs.len() as f64;
    let nf = fake_probs.len() as f64;

    let mut critic = 0.0;
    let mut d_real = Vec::with_capacity(real_probs.len());
    for &p in real_probs {
        let (q, dq) = clamp_prob(p);
        critic -= q.ln() / nr;
        d_real.push(-dq / (q * nr));
    }
    let mut gen = 0.0;
    let mut d_fake_critic = Vec::with_capacity(fake_probs.len());
    let mut d_fake_gen = Vec::with_capacity(fake_probs.len());
    for &p in fake_probs {
        let (q, dq) = clamp_prob(p);
        critic -= (1.0 - q).ln() / nf;
        d_fake_critic.push(dq / ((1.0 - q) * nf));
        gen -= q.ln() / nf;
        d_fake_gen.push(-dq / (q * nf));
    }
    Ok((
        CriticLoss {
            value: critic,
            d_real,
            d_fake: d_fake_critic,
        },
        GeneratorLoss {
            value: gen,
            d_fake: d_fake_gen,
        },
    ))
}

/// Wasserstein losses on raw critic scores.
///
/// Critic: `-(mean D(y) - mean D(G(x)))`. Generator: `-mean D(G(x))`.
pub fn wgan_adversarial_loss(
    real_scores: &[f64],
    fake_scores: &[f64],
) -> Result<(CriticLoss, GeneratorLoss)> {
    check_scores("real", real_scores)?;
    check_scores("fake", fake_scores)?;
    let nr = real_scores.len() as f64;
    let nf = fake_scores.len() as f64;
    let mean_real = real_scores.iter().sum::<f64>() / nr;
    let mean_fake = fake_scores.iter().sum::<f64>() / nf;
    Ok((
        CriticLoss {
            value: -(mean_real - mean_fake),
            d_real: vec![-1.0 / nr; real_scores.len()],
            d_fake: vec![1.0 / nf; fake_scores.len()],
        },
        GeneratorLoss {
            value: -mean_fake,
            d_fake: vec![-1.0 / nf; fake_scores.len()],
        },
    ))
}

/// Generator half of [`gan_adversarial_loss`], which is all a generator
/// update needs.
pub fn gan_generator_loss(fake_probs: &[f64]) -> Result<GeneratorLoss> {
    check_scores("fake", fake_probs)?;
    let nf = fake_probs.len() as f64;
    let mut value = 0.0;
    let mut d_fake = Vec::with_capacity(fake_probs.len());
    for &p in fake_probs {
        let (q, dq) = clamp_prob(p);
        value -= q.ln() / nf;
        d_fake.push(-dq / (q * nf));
    }
    Ok(GeneratorLoss { value, d_fake })
}

/// Generator half of [`wgan_adversarial_loss`].
pub fn wgan_generator_loss(fake_scores: &[f64]) -> Result<GeneratorLoss> {
    check_scores("fake", fake_scores)?;
    let nf = fake_scores.len() as f64;
    Ok(GeneratorLoss {
        value: -fake_scores.iter().sum::<f64>() / nf,
        d_fake: vec![-1.0 / nf; fake_scores.len()],
    })
}

fn l1_term(target: &Tensor, reconstructed: &Tensor) -> Result<(f64, Tensor)> {
    if target.shape() != reconstructed.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cycle pair {:?} vs {:?}",
            target.shape(),
            reconstructed.shape()
        )));
    }
    let n = target.numel() as f64;
    let mut grad = Tensor::zeros(target.shape());
    let mut sum = 0.0;
    for ((g, &t), &r) in grad
        .data_mut()
        .iter_mut()
        .zip(target.data())
        .zip(reconstructed.data())
    {
        let d = r - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`, means over pixels then batch.
pub fn cycle_consistency_loss(
    x: &Tensor,
    x_reconstructed: &Tensor,
    y: &Tensor,
    y_reconstructed: &Tensor,
) -> Result<CycleLoss> {
    let (lx, dx) = l1_term(x, x_reconstructed)?;
    let (ly, dy) = l1_term(y, y_reconstructed)?;
    Ok(CycleLoss {
        value: lx + ly,
        d_x_reconstructed: dx,
        d_y_reconstructed: dy,
    })
}

/// `adv_forward + adv_backward + lambda * cycle`.
pub fn full_objective(
    adv_forward: f64,
    adv_backward: f64,
    cycle: f64,
    lambda: f64,
) -> Result<LossBundle> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if ![adv_forward, adv_backward, cycle]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "objective terms must be finite".into(),
        ));
    }
    Ok(LossBundle {
        adv_forward,
        adv_backward,
        cycle,
        total: adv_forward + adv_backward + lambda * cycle,
        lambda,
    })
}

/// Clamps every critic parameter into `[-c, c]`.
pub fn clip_weights(model: &mut CriticModel, c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip bound must be > 0, got {c}"
        )));
    }
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{build_critic, CriticConfig};

    #[test]
    fn gan_loss_at_half() {
        let (critic, gen) = gan_adversarial_loss(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((critic.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((critic.value - 1.3863).abs() < 1e-4);
        assert!((gen.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gan_loss_limits() {
        let (critic, _) = gan_adversarial_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(
            critic.value > 0.0 && critic.value < 3e-7,
            "{}",
            critic.value
        );
        let (_, gen) = gan_adversarial_loss(&[0.5], &[1.0]).unwrap();
        assert!(gen.value > 0.0 && gen.value < 2e-7);
        assert!(gan_adversarial_loss(&[], &[0.5]).is_err());
        assert!(gan_adversarial_loss(&[f64::NAN], &[0.5]).is_err());
    }

    #[test]
    fn wgan_loss_arithmetic() {
        let (critic, gen) = wgan_adversarial_loss(&[0.6, 0.8], &[0.2, 0.4]).unwrap();
        assert!((critic.value + 0.4).abs() < 1e-15);
        assert!((gen.value + 0.3).abs() < 1e-15);
        let (same, _) = wgan_adversarial_loss(&[0.3, -1.2], &[0.3, -1.2]).unwrap();
        assert_eq!(same.value, 0.0);
        assert_eq!(wgan_generator_loss(&[0.2, 0.4]).unwrap(), gen);
        let (_, log_gen) = gan_adversarial_loss(&[0.9], &[0.3, 0.6]).unwrap();
        assert_eq!(gan_generator_loss(&[0.3, 0.6]).unwrap(), log_gen);
    }

    #[test]
    fn cycle_hand_value() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![0.2, 0.4]).unwrap();
        let fx = Tensor::from_vec([1, 1, 1, 2], vec![0.3, 0.1]).unwrap();
        let y = Tensor::from_vec([1, 1, 1, 2], vec![0.7, 0.7]).unwrap();
        let loss = cycle_consistency_loss(&x, &fx, &y, &y).unwrap();
        assert!((loss.value - 0.2).abs() < 1e-12);
        assert_eq!(loss.d_x_reconstructed.data(), &[0.5, -0.5]);
        assert_eq!(loss.d_y_reconstructed.data(), &[0.0, 0.0]);
        let perfect = cycle_consistency_loss(&x, &x, &y, &y).unwrap();
        assert_eq!(perfect.value, 0.0);
        let swapped = cycle_consistency_loss(&y, &y, &x, &fx).unwrap();
        assert_eq!(swapped.value, loss.value);
        assert!(cycle_consistency_loss(&x, &Tensor::zeros([1, 1, 2, 1]), &y, &y).is_err());
    }

    #[test]
    fn objective_identity() {
        let b = full_objective(1.0, 2.0, 0.5, 10.0).unwrap();
        assert_eq!(b.total, 8.0);
        assert_eq!(full_objective(1.0, 2.0, 0.5, 0.0).unwrap().total, 3.0);
        assert_eq!(
            full_objective(1.0, 2.0, 0.0, 3.0).unwrap().total,
            full_objective(1.0, 2.0, 0.0, 7.0).unwrap().total
        );
        assert!(full_objective(1.0, 2.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn clipping_clamps_and_is_idempotent() {
        let mut critic = build_critic(
            &CriticConfig {
                num_layers: 1,
                base_channels: 1,
            },
            0,
        )
        .unwrap();
        let values = [-0.5, 0.005, 2.0];
        for (i, v) in values.iter().enumerate() {
            *critic.params_mut().scalar_mut(i) = *v;
        }
        clip_weights(&mut critic, 0.01).unwrap();
        assert_eq!(&critic.params().flatten()[..3], &[-0.01, 0.005, 0.01]);
        let once = critic.params().clone();
        clip_weights(&mut critic, 0.01).unwrap();
        assert_eq!(critic.params(), &once);
        assert!(critic.params().max_abs() <= 0.01);
        assert!(clip_weights(&mut critic, 0.0).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
