//! Alternating critic/generator optimisation for one or two cycle stages.

use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::dual::{merge, CycleModels, DualMergedModel};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::losses::{
    clip_weights, cycle_consistency_loss, full_objective, gan_adversarial_loss, gan_generator_loss,
    sigmoid, wgan_adversarial_loss, wgan_generator_loss, LossBundle,
};
use crate::networks::CriticModel;
use crate::nn::{Optimizer, OptimizerKind, Tape, Tensor};
use crate::rng::{self, stream};

/// Loss values reported for one iteration or averaged over an epoch.
/// Two-stage runs report sums over both stages.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRow {
    pub critic_x: f64,
    pub critic_y: f64,
    pub gen: f64,
    pub cycle: f64,
    pub total: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "critic_loss_X,critic_loss_Y,gen_loss,cycle_loss,total";

    fn add(&mut self, step: &StepReport) {
        self.critic_x += step.critic_x;
        self.critic_y += step.critic_y;
        self.gen += step.bundle.adv_forward + step.bundle.adv_backward;
        self.cycle += step.bundle.cycle;
        self.total += step.bundle.total;
    }

    pub fn to_csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.critic_x, self.critic_y, self.gen, self.cycle, self.total
        )
    }

    fn mean(rows: &[LossRow]) -> LossRow {
        let n = rows.len().max(1) as f64;
        let mut out = LossRow::default();
        for r in rows {
            out.critic_x += r.critic_x / n;
            out.critic_y += r.critic_y / n;
            out.gen += r.gen / n;
            out.cycle += r.cycle / n;
            out.total += r.total / n;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based, counted across epochs.
    pub iteration: usize,
    pub epoch: usize,
    pub losses: LossRow,
}

/// Outcome of one stage update: the generator objective and the last critic
/// losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub bundle: LossBundle,
    pub critic_x: f64,
    pub critic_y: f64,
    pub critic_steps: usize,
}

/// Hyperparameters one stage update needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub wasserstein: bool,
    pub lambda: f64,
    pub clip_c: f64,
    pub n_critic: usize,
}

impl StepConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            wasserstein: cfg.variant.wasserstein(),
            lambda: cfg.lambda,
            clip_c: cfg.clip_c,
            n_critic: cfg.effective_n_critic(),
        }
    }
}

/// One optimiser per model of a stage.
#[derive(Clone, Debug)]
pub struct StageOptimizers {
    g: Optimizer,
    f: Optimizer,
    d_x: Optimizer,
    d_y: Optimizer,
}

impl StageOptimizers {
    pub fn new(kind: OptimizerKind, lr: f64, models: &CycleModels) -> Self {
        Self {
            g: Optimizer::new(kind, lr, models.g.params()),
            f: Optimizer::new(kind, lr, models.f.params()),
            d_x: Optimizer::new(kind, lr, models.d_x.params()),
            d_y: Optimizer::new(kind, lr, models.d_y.params()),
        }
    }
}

/// Callbacks fired during training; all default to no-ops.
pub trait TrainObserver {
    /// After each critic update (both critics of `stage`, clipped if
    /// applicable).
    fn after_critic_step(&mut self, _stage: usize, _models: &CycleModels) {}
    fn after_generator_step(&mut self, _stage: usize, _models: &CycleModels) {}
    fn on_iteration(&mut self, _record: &IterationRecord) {}
    fn on_epoch(&mut self, _epoch: usize, _mean: &LossRow) {}
}

impl TrainObserver for () {}

fn non_finite(detail: impl Into<String>) -> Error {
    Error::NonFiniteLoss {
        iteration: 0,
        detail: detail.into(),
    }
}

fn ensure_finite(what: &str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(non_finite(format!("{what} contains non-finite values")))
    }
}

fn stack_batch(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [na, c, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (c, h, w) != (cb, hb, wb) {
        return Err(Error::DimensionMismatch(format!(
            "real batch {:?} vs fake batch {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec([na + nb, c, h, w], data)
}

/// One critic update on real and fake batches; returns the critic loss
/// before the update.
fn critic_update(
    critic: &mut CriticModel,
    opt: &mut Optimizer,
    real: &Tensor,
    fake: &Tensor,
    cfg: &StepConfig,
) -> Result<f64> {
    let n_real = real.shape()[0];
    let mut tape = Tape::new();
    let input = tape.leaf(stack_batch(real, fake)?, false);
    let (scores_node, bound) = critic.forward(&mut tape, input, true)?;
    ensure_finite("critic scores", tape.value(scores_node))?;
    let scores = tape.value(scores_node).data().to_vec();
    let (real_s, fake_s) = scores.split_at(n_real);

    let (value, seed) = if cfg.wasserstein {
        let (loss, _) = wgan_adversarial_loss(real_s, fake_s)?;
        (loss.value, [loss.d_real, loss.d_fake].concat())
    } else {
        let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let (pr, pf) = probs.split_at(n_real);
        let (loss, _) = gan_adversarial_loss(pr, pf)?;
        let d: Vec<f64> = [loss.d_real, loss.d_fake]
            .concat()
            .iter()
            .zip(&probs)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();
        (loss.value, d)
    };
    let shape = tape.value(scores_node).shape();
    let mut grads = tape.backward(&[(scores_node, Tensor::from_vec(shape, seed)?)])?;
    let g = bound.gradients(critic.params(), &mut grads);
    opt.step(critic.params_mut(), &g);
    if cfg.wasserstein {
        clip_weights(critic, cfg.clip_c)?;
        let worst = critic.params().max_abs();
        if worst > cfg.clip_c {
            return Err(Error::InvalidArgument(format!(
                "critic parameter {worst} escaped the clip bound {}",
                cfg.clip_c
            )));
        }
    }
    Ok(value)
}

/// Generator-side adversarial loss and the gradient w.r.t. raw scores.
fn generator_adversarial(scores: &[f64], wasserstein: bool) -> Result<(f64, Vec<f64>)> {
    if wasserstein {
        let loss = wgan_generator_loss(scores)?;
        Ok((loss.value, loss.d_fake))
    } else {
        let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let loss = gan_generator_loss(&probs)?;
        let d = loss
            .d_fake
            .iter()
            .zip(&probs)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();
        Ok((loss.value, d))
    }
}

/// Generator update of G and F on the full objective, critics frozen.
fn generator_update(
    models: &mut CycleModels,
    opts: &mut StageOptimizers,
    x: &Tensor,
    y: &Tensor,
    cfg: &StepConfig,
) -> Result<LossBundle> {
    let mut tape = Tape::new();
    let xn = tape.leaf(x.clone(), false);
    let yn = tape.leaf(y.clone(), false);
    let pg = models.g.params().bind(&mut tape, true);
    let pf = models.f.params().bind(&mut tape, true);
    let fake_y = models.g.forward_bound(&mut tape, &pg, xn)?;
    let rec_x = models.f.forward_bound(&mut tape, &pf, fake_y)?;
    let fake_x = models.f.forward_bound(&mut tape, &pf, yn)?;
    let rec_y = models.g.forward_bound(&mut tape, &pg, fake_x)?;
    let (score_y, _) = models.d_y.forward(&mut tape, fake_y, false)?;
    let (score_x, _) = models.d_x.forward(&mut tape, fake_x, false)?;

    for (what, node) in [
        ("G(x)", fake_y),
        ("F(y)", fake_x),
        ("F(G(x))", rec_x),
        ("G(F(y))", rec_y),
        ("D_Y(G(x))", score_y),
        ("D_X(F(y))", score_x),
    ] {
        ensure_finite(what, tape.value(node))?;
    }
    let (adv_f, d_adv_f) = generator_adversarial(tape.value(score_y).data(), cfg.wasserstein)?;
    let (adv_b, d_adv_b) = generator_adversarial(tape.value(score_x).data(), cfg.wasserstein)?;
    let cycle = cycle_consistency_loss(x, tape.value(rec_x), y, tape.value(rec_y))?;
    let bundle = full_objective(adv_f, adv_b, cycle.value, cfg.lambda)?;

    let lambda = cfg.lambda;
    let seeds = [
        (
            score_y,
            Tensor::from_vec(tape.value(score_y).shape(), d_adv_f)?,
        ),
        (
            score_x,
            Tensor::from_vec(tape.value(score_x).shape(), d_adv_b)?,
        ),
        (rec_x, cycle.d_x_reconstructed.map(|g| lambda * g)),
        (rec_y, cycle.d_y_reconstructed.map(|g| lambda * g)),
    ];
    let mut grads = tape.backward(&seeds)?;
    let gg = pg.gradients(models.g.params(), &mut grads);
    let gf = pf.gradients(models.f.params(), &mut grads);
    opts.g.step(models.g.params_mut(), &gg);
    opts.f.step(models.f.params_mut(), &gf);
    Ok(bundle)
}

fn stage_step(
    stage: usize,
    models: &mut CycleModels,
    opts: &mut StageOptimizers,
    x: &Tensor,
    y: &Tensor,
    cfg: &StepConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StepReport> {
    if x.shape() != y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "noisy batch {:?} vs clean batch {:?}",
            x.shape(),
            y.shape()
        )));
    }
    // Fakes are generated once per iteration and shared by all critic steps.
    let fake_y = models.g.infer(x)?;
    let fake_x = models.f.infer(y)?;
    let (mut critic_x, mut critic_y) = (f64::NAN, f64::NAN);
    for _ in 0..cfg.n_critic {
        critic_y = critic_update(&mut models.d_y, &mut opts.d_y, y, &fake_y, cfg)?;
        critic_x = critic_update(&mut models.d_x, &mut opts.d_x, x, &fake_x, cfg)?;
        observer.after_critic_step(stage, models);
    }
    let bundle = generator_update(models, opts, x, y, cfg)?;
    observer.after_generator_step(stage, models);
    Ok(StepReport {
        bundle,
        critic_x,
        critic_y,
        critic_steps: cfg.n_critic,
    })
}

/// One alternating update with the log-form loss: a single critic step per
/// critic, then one generator step. `cfg.wasserstein` is ignored.
pub fn train_step_cyclegan(
    models: &mut CycleModels,
    opts: &mut StageOptimizers,
    batch_x: &Tensor,
    batch_y: &Tensor,
    cfg: &StepConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StepReport> {
    let cfg = StepConfig {
        wasserstein: false,
        n_critic: 1,
        ..*cfg
    };
    stage_step(0, models, opts, batch_x, batch_y, &cfg, observer)
}

/// One Wasserstein update: `n_critic` clipped critic steps, then one
/// generator step.
pub fn train_step_cyclewgan(
    models: &mut CycleModels,
    opts: &mut StageOptimizers,
    batch_x: &Tensor,
    batch_y: &Tensor,
    cfg: &StepConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StepReport> {
    let cfg = StepConfig {
        wasserstein: true,
        ..*cfg
    };
    stage_step(0, models, opts, batch_x, batch_y, &cfg, observer)
}

fn at_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { iteration, detail },
        other => other,
    }
}

fn check_finite(
    iteration: usize,
    stage: usize,
    step: &StepReport,
    models: &CycleModels,
) -> Result<()> {
    let values = [step.bundle.total, step.critic_x, step.critic_y];
    if values.iter().all(|v| v.is_finite())
        && models.g.params().all_finite()
        && models.f.params().all_finite()
    {
        return Ok(());
    }
    Err(Error::NonFiniteLoss {
        iteration,
        detail: format!(
            "stage {stage}: generator total {}, critic X {}, critic Y {}",
            step.bundle.total, step.critic_x, step.critic_y
        ),
    })
}

fn check_dataset(name: &str, set: &[ImageTensor], cfg: &TrainConfig) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{name} training set is empty"
        )));
    }
    let dims = set[0].dims();
    if let Some(bad) = set.iter().find(|img| img.dims() != dims) {
        return Err(Error::DimensionMismatch(format!(
            "{name} set mixes {}x{} and {}x{} crops",
            dims.0,
            dims.1,
            bad.height(),
            bad.width()
        )));
    }
    let m = 1usize << cfg.generator_config().max_depth();
    let min = 1usize << cfg.critic_layers;
    if !dims.0.is_multiple_of(m) || !dims.1.is_multiple_of(m) || dims.0 < min || dims.1 < min {
        return Err(Error::DimensionMismatch(format!(
            "{name} crops are {}x{}; need multiples of {m} and at least {min}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

fn gather(set: &[ImageTensor], order: &[usize], start: usize, batch: usize) -> Result<Tensor> {
    let refs: Vec<&ImageTensor> = (0..batch)
        .map(|k| &set[order[(start + k) % order.len()]])
        .collect();
    Tensor::from_images(&refs)
}

/// Final state of a training run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: DualMergedModel,
    /// Epochs completed.
    pub epoch: usize,
    /// Mean losses per completed epoch.
    pub history: Vec<LossRow>,
    pub log: Vec<IterationRecord>,
}

impl Checkpoint {
    /// A freshly initialised model for `config`, before any training.
    pub fn initial(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = DualMergedModel::build(
            &config.generator_config(),
            &config.critic_config(),
            config.variant.two_stage(),
            config.effective_merge_alpha(),
            rng::derive_seed(config.seed, stream::INIT),
        )?;
        Ok(Self {
            config: config.clone(),
            model,
            epoch: 0,
            history: Vec::new(),
            log: Vec::new(),
        })
    }

    /// The per-iteration log as CSV.
    pub fn log_csv(&self) -> String {
        let mut out = format!("iter,{}\n", LossRow::CSV_HEADER);
        for r in &self.log {
            out.push_str(&format!("{},{}\n", r.iteration, r.losses.to_csv_fields()));
        }
        out
    }
}

/// Trains on unpaired noisy (`x`) and clean (`y`) crops.
///
/// Each epoch visits `ceil(max(|x|, |y|) / batch)` iterations over
/// independent seeded shuffles of both sets. An iteration updates stage 1,
/// then (for two-stage variants) recomputes `G1(x)` with the updated
/// weights, merges it with `x` and updates stage 2 on the merged batch.
/// Nothing flows back from stage 2 into stage 1.
pub fn train(
    config: &TrainConfig,
    noisy: &[ImageTensor],
    clean: &[ImageTensor],
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    config.validate()?;
    check_dataset("noisy", noisy, config)?;
    check_dataset("clean", clean, config)?;
    if noisy[0].dims() != clean[0].dims() {
        return Err(Error::DimensionMismatch(
            "noisy and clean crops differ in size".into(),
        ));
    }
    let mut ckpt = Checkpoint::initial(config)?;
    let step_cfg = StepConfig::from_train(config);
    let kind = config.optimizer();
    let lr = config.effective_learning_rate();
    let alpha = ckpt.model.merge_alpha();
    let mut opts1 = StageOptimizers::new(kind, lr, &ckpt.model.stage1);
    let mut opts2 = ckpt
        .model
        .stage2
        .as_ref()
        .map(|s| StageOptimizers::new(kind, lr, s));

    let batch = config.batch_size;
    let iters = noisy.len().max(clean.len()).div_ceil(batch);
    let mut order_x: Vec<usize> = (0..noisy.len()).collect();
    let mut order_y: Vec<usize> = (0..clean.len()).collect();
    let mut iteration = 0;
    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        order_x.shuffle(&mut rng::seeded(
            rng::derive_seed(config.seed, 2 * e),
            stream::SHUFFLE,
        ));
        order_y.shuffle(&mut rng::seeded(
            rng::derive_seed(config.seed, 2 * e + 1),
            stream::SHUFFLE,
        ));
        let mut rows = Vec::with_capacity(iters);
        for i in 0..iters {
            iteration += 1;
            let x = gather(noisy, &order_x, i * batch, batch)?;
            let y = gather(clean, &order_y, i * batch, batch)?;
            let mut row = LossRow::default();

            let model = &mut ckpt.model;
            let s1 = stage_step(
                1,
                &mut model.stage1,
                &mut opts1,
                &x,
                &y,
                &step_cfg,
                observer,
            )
            .map_err(|e| at_iteration(e, iteration))?;
            check_finite(iteration, 1, &s1, &model.stage1)?;
            row.add(&s1);

            if let (Some(stage2), Some(opts2)) = (model.stage2.as_mut(), opts2.as_mut()) {
                let clean1 = model.stage1.g.infer(&x)?;
                let merged = x
                    .to_images()?
                    .iter()
                    .zip(clean1.to_images()?)
                    .map(|(n, c)| merge(n, &c, alpha))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ImageTensor> = merged.iter().collect();
                let m = Tensor::from_images(&refs)?;
                let s2 = stage_step(2, stage2, opts2, &m, &y, &step_cfg, observer)
                    .map_err(|e| at_iteration(e, iteration))?;
                check_finite(iteration, 2, &s2, stage2)?;
                row.add(&s2);
            }

            let record = IterationRecord {
                iteration,
                epoch,
                losses: row,
            };
            observer.on_iteration(&record);
            ckpt.log.push(record);
            rows.push(row);
        }
        let mean = LossRow::mean(&rows);
        observer.on_epoch(epoch, &mean);
        ckpt.history.push(mean);
        ckpt.epoch = epoch;
    }
    Ok(ckpt)
}

/// Denoises equally sized images in batches of `batch`.
pub fn denoise_all(
    model: &DualMergedModel,
    images: &[ImageTensor],
    batch: usize,
) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        out.extend(model.denoise_batch(chunk)?.into_iter().map(|s| s.clean2));
    }
    Ok(out)
}
