//! Generators built from parallel U-Nets of different depths, and
//! patch-based Wasserstein critics with an unbounded output.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::{Bound, NodeId, ParamId, ParamSet, Tape, Tensor};
use crate::rng::{self, stream};

const INIT_STD: f64 = 0.02;
const LEAK: f64 = 0.2;

/// One U-Net branch: `depth` 2x poolings, channel count doubling per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
}

/// Parallel U-Net branches fused by a learned 1x1 convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiUNetConfig {
    pub branch_depths: Vec<usize>,
    pub base_channels: usize,
}

impl Default for MultiUNetConfig {
    fn default() -> Self {
        Self {
            branch_depths: vec![3, 4],
            base_channels: 8,
        }
    }
}

impl MultiUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_depths.is_empty() {
            return Err(Error::Config(
                "generator needs at least one U-Net branch".into(),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        for (i, &d) in self.branch_depths.iter().enumerate() {
            if d == 0 || d > 8 {
                return Err(Error::Config(format!(
                    "branch depth must be in 1..=8, got {d}"
                )));
            }
            if self.branch_depths[..i].contains(&d) {
                return Err(Error::Config(format!("duplicate branch depth {d}")));
            }
        }
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        self.branch_depths.iter().copied().max().unwrap_or(0)
    }

    pub fn branches(&self) -> impl Iterator<Item = UNetConfig> + '_ {
        self.branch_depths.iter().map(|&depth| UNetConfig {
            depth,
            base_channels: self.base_channels,
        })
    }
}

/// Strided-convolution critic. No squashing on the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticConfig {
    /// Number of stride-2 4x4 convolutions before the 3x3 scoring layer.
    pub num_layers: usize,
    pub base_channels: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            base_channels: 16,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_layers > 8 {
            return Err(Error::Config(format!(
                "critic num_layers must be in 1..=8, got {}",
                self.num_layers
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("critic base_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        shape: [usize; 4],
        bias: bool,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_normal(format!("{name}.weight"), shape, 0.0, INIT_STD, rng);
        Self::with_weight(params, name, weight, shape, bias, stride, pad)
    }

    fn with_weight(
        params: &mut ParamSet,
        name: &str,
        weight: ParamId,
        shape: [usize; 4],
        bias: bool,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bias =
            bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros([1, shape[0], 1, 1])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        tape.conv2d(
            x,
            p.node(self.weight),
            self.bias.map(|b| p.node(b)),
            self.stride,
            self.pad,
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<R: Rng>(params: &mut ParamSet, name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            gamma: params.add_normal(
                format!("{name}.gamma"),
                [1, channels, 1, 1],
                1.0,
                INIT_STD,
                rng,
            ),
            beta: params.add(format!("{name}.beta"), Tensor::zeros([1, channels, 1, 1])),
        }
    }
}

/// conv3x3 -> instance norm -> leaky ReLU, twice. The convolutions carry no
/// bias because the normalisation would cancel it.
#[derive(Clone, Copy, Debug)]
struct DoubleConv {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

impl DoubleConv {
    fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv::new(
                params,
                &format!("{name}.conv1"),
                [cout, cin, 3, 3],
                false,
                1,
                1,
                rng,
            ),
            norm1: Norm::new(params, &format!("{name}.norm1"), cout, rng),
            conv2: Conv::new(
                params,
                &format!("{name}.conv2"),
                [cout, cout, 3, 3],
                false,
                1,
                1,
                rng,
            ),
            norm2: Norm::new(params, &format!("{name}.norm2"), cout, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (conv, norm) in [(&self.conv1, &self.norm1), (&self.conv2, &self.norm2)] {
            h = conv.apply(tape, p, h)?;
            h = tape.instance_norm(h, p.node(norm.gamma), p.node(norm.beta))?;
            h = tape.leaky_relu(h, LEAK);
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug)]
struct UpConv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct UNetBranch {
    depth: usize,
    encoders: Vec<DoubleConv>,
    ups: Vec<UpConv>,
    decoders: Vec<DoubleConv>,
    head: Conv,
}

impl UNetBranch {
    fn new<R: Rng>(params: &mut ParamSet, name: &str, cfg: UNetConfig, rng: &mut R) -> Self {
        let ch = |level: usize| cfg.base_channels << level;
        let encoders = (0..=cfg.depth)
            .map(|level| {
                let cin = if level == 0 { 1 } else { ch(level - 1) };
                DoubleConv::new(params, &format!("{name}.enc{level}"), cin, ch(level), rng)
            })
            .collect();
        let mut ups = Vec::with_capacity(cfg.depth);
        let mut decoders = Vec::with_capacity(cfg.depth);
        for level in (0..cfg.depth).rev() {
            let weight = params.add_normal(
                format!("{name}.up{level}.weight"),
                [ch(level + 1), ch(level), 2, 2],
                0.0,
                INIT_STD,
                rng,
            );
            let bias = params.add(
                format!("{name}.up{level}.bias"),
                Tensor::zeros([1, ch(level), 1, 1]),
            );
            ups.push(UpConv { weight, bias });
            decoders.push(DoubleConv::new(
                params,
                &format!("{name}.dec{level}"),
                2 * ch(level),
                ch(level),
                rng,
            ));
        }
        // Nothing normalises after the head, so it gets a fan-in scaled init;
        // at 0.02 the output would start flat and barely move.
        let shape = [1, ch(0), 1, 1];
        let std = (ch(0) as f64).recip().sqrt();
        let weight = params.add_normal(format!("{name}.head.weight"), shape, 0.0, std, rng);
        let head = Conv::with_weight(params, &format!("{name}.head"), weight, shape, true, 1, 0);
        Self {
            depth: cfg.depth,
            encoders,
            ups,
            decoders,
            head,
        }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = self.encoders[0].apply(tape, p, x)?;
        for enc in &self.encoders[1..] {
            skips.push(h);
            let pooled = tape.max_pool2(h)?;
            h = enc.apply(tape, p, pooled)?;
        }
        for (up, dec) in self.ups.iter().zip(&self.decoders) {
            let skip = skips.pop().expect("one skip per level");
            let upsampled = tape.conv_transpose2(h, p.node(up.weight), p.node(up.bias))?;
            let joined = tape.concat(skip, upsampled)?;
            h = dec.apply(tape, p, joined)?;
        }
        self.head.apply(tape, p, h)
    }
}

/// Multi-depth U-Net generator mapping `[N, 1, H, W]` into `[0, 1]`.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    config: MultiUNetConfig,
    seed: u64,
    params: ParamSet,
    branches: Vec<UNetBranch>,
    fusion: Conv,
}

pub fn build_generator(cfg: &MultiUNetConfig, seed: u64) -> Result<GeneratorModel> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed, stream::INIT);
    let mut params = ParamSet::new();
    let branches: Vec<UNetBranch> = cfg
        .branches()
        .enumerate()
        .map(|(i, b)| UNetBranch::new(&mut params, &format!("branch{i}"), b, &mut rng))
        .collect();
    // The fusion also sees the input image. It starts as the branch mean
    // plus a slope-1 pass-through of x (0.5·tanh(2x - 1) + 0.5), so every
    // generator begins orientation-preserving. A cycle loss alone cannot
    // tell an inverted mapping from a faithful one, and a random head sign
    // otherwise picks one per seed.
    let n = branches.len();
    let shape = [1, n + 1, 1, 1];
    let mut w = vec![1.0 / n as f64; n];
    w.push(2.0);
    let weight = params.add("fusion.weight", Tensor::from_vec(shape, w)?);
    let bias = params.add("fusion.bias", Tensor::from_vec([1, 1, 1, 1], vec![-1.0])?);
    let fusion = Conv {
        weight,
        bias: Some(bias),
        stride: 1,
        pad: 0,
    };
    Ok(GeneratorModel {
        config: cfg.clone(),
        seed,
        params,
        branches,
        fusion,
    })
}

impl GeneratorModel {
    pub fn config(&self) -> &MultiUNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameter access for optimizers and checkpoint loading.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.config.max_depth()
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "generator input {height}x{width} must be a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Returns the output node and the
    /// parameter binding for gradient extraction.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, trainable: bool) -> Result<(NodeId, Bound)> {
        let p = self.params.bind(tape, trainable);
        Ok((self.forward_bound(tape, &p, x)?, p))
    }

    /// Forward pass against an existing binding of this model's parameters,
    /// so several passes share one set of gradient leaves.
    pub fn forward_bound(&self, tape: &mut Tape, p: &Bound, x: NodeId) -> Result<NodeId> {
        let [_, c, h, w] = tape.value(x).shape();
        if c != 1 {
            return Err(Error::DimensionMismatch(format!(
                "generator expects 1 channel, got {c}"
            )));
        }
        self.check_input(h, w)?;
        let mut fused_in: Option<NodeId> = None;
        for branch in &self.branches {
            let out = branch.apply(tape, p, x)?;
            fused_in = Some(match fused_in {
                None => out,
                Some(acc) => tape.concat(acc, out)?,
            });
        }
        let fused_in = tape.concat(fused_in.expect("at least one branch"), x)?;
        let fused = self.fusion.apply(tape, p, fused_in)?;
        let squashed = tape.tanh(fused);
        Ok(tape.affine(squashed, 0.5, 0.5))
    }

    /// Inference on a batch tensor; no gradients are tracked.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), false);
        let (y, _) = self.forward(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }
}

/// Applies the generator to a batch of equally sized images.
pub fn forward_generator(
    model: &GeneratorModel,
    batch: &[ImageTensor],
) -> Result<Vec<ImageTensor>> {
    let refs: Vec<&ImageTensor> = batch.iter().collect();
    let input = Tensor::from_images(&refs)?;
    model.infer(&input)?.to_images()
}

/// Patch critic: stride-2 4x4 convolutions with leaky ReLU, a 3x3 scoring
/// convolution, then the mean of the score map per item.
#[derive(Clone, Debug)]
pub struct CriticModel {
    config: CriticConfig,
    seed: u64,
    params: ParamSet,
    layers: Vec<Conv>,
    score: Conv,
}

pub fn build_critic(cfg: &CriticConfig, seed: u64) -> Result<CriticModel> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed, stream::INIT);
    let mut params = ParamSet::new();
    let mut cin = 1;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for i in 0..cfg.num_layers {
        let cout = cfg.base_channels << i;
        layers.push(Conv::new(
            &mut params,
            &format!("layer{i}"),
            [cout, cin, 4, 4],
            true,
            2,
            1,
            &mut rng,
        ));
        cin = cout;
    }
    let score = Conv::new(&mut params, "score", [1, cin, 3, 3], true, 1, 1, &mut rng);
    Ok(CriticModel {
        config: *cfg,
        seed,
        params,
        layers,
        score,
    })
}

impl CriticModel {
    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    /// Records the critic on `tape`; the output node is `[N, 1, 1, 1]`.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, trainable: bool) -> Result<(NodeId, Bound)> {
        let [_, c, h, w] = tape.value(x).shape();
        let min = 1 << self.config.num_layers;
        if c != 1 || h < min || w < min {
            return Err(Error::DimensionMismatch(format!(
                "critic needs a 1-channel input of at least {min}x{min}, got {c}x{h}x{w}"
            )));
        }
        let p = self.params.bind(tape, trainable);
        let mut h = x;
        for layer in &self.layers {
            h = layer.apply(tape, &p, h)?;
            h = tape.leaky_relu(h, LEAK);
        }
        let map = self.score.apply(tape, &p, h)?;
        Ok((tape.mean_spatial(map), p))
    }

    /// One score per item.
    pub fn score(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), false);
        let (s, _) = self.forward(&mut tape, x, false)?;
        Ok(tape.value(s).data().to_vec())
    }
}
