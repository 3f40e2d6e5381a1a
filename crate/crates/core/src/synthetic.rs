//! Procedural layered phantoms and multiplicative gamma speckle. These stand
//! in for clinical scans so every experiment in the crate is self-contained.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RegionSpec};
use crate::rng::{self, stream};

/// Layered-tissue phantom description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub num_layers: usize,
    /// Darkest and brightest layer intensity. Layer 0 (the top band, which
    /// contains the background) always takes the low end.
    pub intensity_range: (f64, f64),
    /// Peak amplitude of the sinusoidal boundary perturbation, in pixels.
    pub curvature: f64,
    /// Width of the linear intensity transition across a boundary, in pixels.
    pub edge_softness: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            num_layers: 6,
            intensity_range: (0.1, 0.8),
            curvature: 6.0,
            edge_softness: 1.5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 1 {
            return Err(Error::InvalidArgument(format!(
                "phantom needs at least 8 rows, got {}x{}",
                self.height, self.width
            )));
        }
        if self.num_layers < 2 || self.num_layers > self.height / 2 {
            return Err(Error::InvalidArgument(format!(
                "num_layers must be in [2, height/2], got {}",
                self.num_layers
            )));
        }
        let (lo, hi) = self.intensity_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "intensity range ({lo}, {hi}) must be ordered and inside [0, 1]"
            )));
        }
        if !(self.curvature.is_finite() && self.curvature >= 0.0) {
            return Err(Error::InvalidArgument("curvature must be >= 0".into()));
        }
        if !(self.edge_softness.is_finite() && self.edge_softness > 0.0) {
            return Err(Error::InvalidArgument("edge_softness must be > 0".into()));
        }
        Ok(())
    }

    /// Rows `0..H/8` over the full width: flat before speckle.
    pub fn background_region(&self) -> RegionSpec {
        RegionSpec {
            row_start: 0,
            row_end: (self.height / 8).max(1),
            col_start: 0,
            col_end: self.width,
        }
    }
}

/// Multiplicative speckle with `looks` independent looks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeckleSpec {
    pub looks: f64,
    pub seed: u64,
}

struct Boundary {
    base: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed, stream::PHANTOM);
    let (lo, hi) = spec.intensity_range;
    let n = spec.num_layers;

    // Layers 1.. take evenly spaced contrasts in a seed-dependent order.
    let mut levels: Vec<f64> = (1..n).map(|j| j as f64 / (n - 1) as f64).collect();
    levels.shuffle(&mut rng);
    let intensities: Vec<f64> = std::iter::once(lo)
        .chain(levels.iter().map(|t| lo + (hi - lo) * t))
        .collect();

    let band_end = spec.height / 8;
    // Keep every transition strictly below the background band.
    let floor = band_end as f64 + spec.edge_softness / 2.0 + 1.0;
    let span = spec.height as f64 - floor;
    let boundaries: Vec<Boundary> = (1..n)
        .map(|j| {
            let base = (floor + span * j as f64 / n as f64).round();
            Boundary {
                base,
                amplitude: spec.curvature * rng.random_range(0.5..=1.0),
                period: spec.width as f64 * rng.random_range(0.6..1.6),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    let mut values = vec![intensities[0]; spec.height * spec.width];
    for c in 0..spec.width {
        for (j, b) in boundaries.iter().enumerate() {
            let wave = b.amplitude * (std::f64::consts::TAU * c as f64 / b.period + b.phase).sin();
            let pos = (b.base + wave).max(floor);
            let step = intensities[j + 1] - intensities[j];
            for r in band_end..spec.height {
                // Coverage of pixel row r by the region below the boundary.
                let t = ((r as f64 + 0.5 - pos) / spec.edge_softness + 0.5).clamp(0.0, 1.0);
                if t > 0.0 {
                    values[r * spec.width + c] += step * t;
                }
            }
        }
    }
    ImageTensor::from_clamped(spec.height, spec.width, values)
}

/// Unit-mean gamma multipliers (shape `L`, scale `1/L`), one per pixel.
pub fn speckle_multipliers(len: usize, spec: &SpeckleSpec) -> Result<Vec<f64>> {
    if !(spec.looks.is_finite() && spec.looks > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speckle looks must be > 0, got {}",
            spec.looks
        )));
    }
    let gamma = Gamma::new(spec.looks, 1.0 / spec.looks)
        .map_err(|e| Error::InvalidArgument(format!("gamma speckle: {e}")))?;
    let mut rng = rng::seeded(spec.seed, stream::SPECKLE);
    Ok((0..len).map(|_| gamma.sample(&mut rng)).collect())
}

/// `clean * n` before clamping, row-major.
pub fn speckle_product(clean: &ImageTensor, spec: &SpeckleSpec) -> Result<Vec<f64>> {
    let noise = speckle_multipliers(clean.len(), spec)?;
    Ok(clean
        .values()
        .iter()
        .zip(noise)
        .map(|(&v, n)| f64::from(v) * n)
        .collect())
}

/// `clamp(clean * n, 0, 1)` with `n` drawn by [`speckle_multipliers`].
pub fn add_speckle(clean: &ImageTensor, spec: &SpeckleSpec) -> Result<ImageTensor> {
    let values = speckle_product(clean, spec)?;
    ImageTensor::from_clamped(clean.height(), clean.width(), values)
}

/// Paired clean/noisy phantoms. Pair `i` uses phantom seed and speckle seed
/// derived from `seed` and `i`.
pub fn phantom_pairs(
    count: usize,
    template: &PhantomSpec,
    looks: f64,
    seed: u64,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    (0..count)
        .map(|i| {
            let phantom_seed = rng::derive_seed(seed, 2 * i as u64);
            let speckle_seed = rng::derive_seed(seed, 2 * i as u64 + 1);
            let clean = make_phantom(&PhantomSpec {
                seed: phantom_seed,
                ..*template
            })?;
            let noisy = add_speckle(
                &clean,
                &SpeckleSpec {
                    looks,
                    seed: speckle_seed,
                },
            )?;
            Ok((clean, noisy))
        })
        .collect()
}
