//! Two chained cycle stages joined by an image merge: the first generator's
//! output is blended back into the noisy input, and the blend is what the
//! second generator translates.

use crate::error::{Error, Result};
use crate::imaging::{tile_and_stitch, ImageTensor};
use crate::networks::{
    build_critic, build_generator, forward_generator, CriticConfig, CriticModel, GeneratorModel,
    MultiUNetConfig,
};
use crate::rng::derive_seed;

/// Default overlap between inference tiles.
pub const DEFAULT_TILE_OVERLAP: usize = 32;

/// Anything that maps an image to an image of the same size.
pub trait ImageMap {
    fn apply(&self, img: &ImageTensor) -> Result<ImageTensor>;
}

impl ImageMap for GeneratorModel {
    fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let mut out = forward_generator(self, std::slice::from_ref(img))?;
        Ok(out.pop().expect("one output per input"))
    }
}

impl<F> ImageMap for F
where
    F: Fn(&ImageTensor) -> Result<ImageTensor>,
{
    fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self(img)
    }
}

/// Generators and critics of one cycle stage. `g` maps the stage's noisy
/// domain to clean, `f` maps back; `d_x` judges the noisy domain and `d_y`
/// the clean one.
#[derive(Clone, Debug)]
pub struct CycleModels {
    pub g: GeneratorModel,
    pub f: GeneratorModel,
    pub d_x: CriticModel,
    pub d_y: CriticModel,
}

impl CycleModels {
    pub fn build(gen: &MultiUNetConfig, critic: &CriticConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            g: build_generator(gen, derive_seed(seed, 0))?,
            f: build_generator(gen, derive_seed(seed, 1))?,
            d_x: build_critic(critic, derive_seed(seed, 2))?,
            d_y: build_critic(critic, derive_seed(seed, 3))?,
        })
    }
}

/// Stage-1 models, optional stage-2 models and the merge weight. Without a
/// second stage, inference is plain single-stage translation.
#[derive(Clone, Debug)]
pub struct DualMergedModel {
    pub stage1: CycleModels,
    pub stage2: Option<CycleModels>,
    merge_alpha: f64,
}

/// Intermediate and final images of one dual-stage pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs {
    pub clean1: ImageTensor,
    pub noise1: ImageTensor,
    pub clean2: ImageTensor,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "merge alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Pixelwise `alpha * clean1 + (1 - alpha) * noise`.
pub fn merge(noise: &ImageTensor, clean1: &ImageTensor, alpha: f64) -> Result<ImageTensor> {
    check_alpha(alpha)?;
    if noise.dims() != clean1.dims() {
        return Err(Error::DimensionMismatch(format!(
            "merge of {}x{} with {}x{}",
            noise.height(),
            noise.width(),
            clean1.height(),
            clean1.width()
        )));
    }
    if alpha == 0.0 {
        return Ok(noise.clone());
    }
    if alpha == 1.0 {
        return Ok(clean1.clone());
    }
    let values = noise
        .values()
        .iter()
        .zip(clean1.values())
        .map(|(&n, &c)| alpha * f64::from(c) + (1.0 - alpha) * f64::from(n))
        .collect();
    ImageTensor::from_clamped(noise.height(), noise.width(), values)
}

/// Runs `stage1`, merges, then `stage2` (or passes `clean1` through when
/// there is no second stage).
pub fn denoise_with(
    stage1: &dyn ImageMap,
    stage2: Option<&dyn ImageMap>,
    alpha: f64,
    img: &ImageTensor,
) -> Result<StageOutputs> {
    check_alpha(alpha)?;
    let clean1 = stage1.apply(img)?;
    let noise1 = merge(img, &clean1, alpha)?;
    let clean2 = match stage2 {
        Some(g2) => g2.apply(&noise1)?,
        None => clean1.clone(),
    };
    Ok(StageOutputs {
        clean1,
        noise1,
        clean2,
    })
}

/// Tiled variant of [`denoise_with`] returning only the final image.
pub fn denoise_fullframe_with(
    stage1: &dyn ImageMap,
    stage2: Option<&dyn ImageMap>,
    alpha: f64,
    img: &ImageTensor,
    tile: usize,
    overlap: usize,
) -> Result<ImageTensor> {
    tile_and_stitch(img, tile, overlap, |t| {
        Ok(denoise_with(stage1, stage2, alpha, t)?.clean2)
    })
}

impl DualMergedModel {
    pub fn build(
        gen: &MultiUNetConfig,
        critic: &CriticConfig,
        two_stage: bool,
        merge_alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        check_alpha(merge_alpha)?;
        Ok(Self {
            stage1: CycleModels::build(gen, critic, derive_seed(seed, 100))?,
            stage2: if two_stage {
                Some(CycleModels::build(gen, critic, derive_seed(seed, 200))?)
            } else {
                None
            },
            merge_alpha,
        })
    }

    pub fn merge_alpha(&self) -> f64 {
        self.merge_alpha
    }

    pub fn is_two_stage(&self) -> bool {
        self.stage2.is_some()
    }

    /// Largest power-of-two factor the generators require of spatial dims.
    pub fn size_multiple(&self) -> usize {
        let m1 = self.stage1.g.size_multiple();
        self.stage2
            .as_ref()
            .map_or(m1, |s| m1.max(s.g.size_multiple()))
    }

    fn maps(&self) -> (&dyn ImageMap, Option<&dyn ImageMap>) {
        (
            &self.stage1.g,
            self.stage2.as_ref().map(|s| &s.g as &dyn ImageMap),
        )
    }

    pub fn denoise(&self, img: &ImageTensor) -> Result<StageOutputs> {
        let (s1, s2) = self.maps();
        denoise_with(s1, s2, self.merge_alpha, img)
    }

    /// Batched [`Self::denoise`] for equally sized images.
    pub fn denoise_batch(&self, images: &[ImageTensor]) -> Result<Vec<StageOutputs>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let clean1 = forward_generator(&self.stage1.g, images)?;
        let noise1 = images
            .iter()
            .zip(&clean1)
            .map(|(n, c)| merge(n, c, self.merge_alpha))
            .collect::<Result<Vec<_>>>()?;
        let clean2 = match &self.stage2 {
            Some(s2) => forward_generator(&s2.g, &noise1)?,
            None => clean1.clone(),
        };
        Ok(clean1
            .into_iter()
            .zip(noise1)
            .zip(clean2)
            .map(|((clean1, noise1), clean2)| StageOutputs {
                clean1,
                noise1,
                clean2,
            })
            .collect())
    }

    /// Arbitrary-size inference through overlapped `tile`x`tile` windows.
    pub fn denoise_fullframe(
        &self,
        img: &ImageTensor,
        tile: usize,
        overlap: usize,
    ) -> Result<ImageTensor> {
        if !tile.is_multiple_of(self.size_multiple()) {
            return Err(Error::InvalidArgument(format!(
                "tile {tile} must be a multiple of {}",
                self.size_multiple()
            )));
        }
        let (s1, s2) = self.maps();
        denoise_fullframe_with(s1, s2, self.merge_alpha, img, tile, overlap)
    }

    /// Direct inference when the dims suit the generators, tiled otherwise.
    pub fn denoise_any(&self, img: &ImageTensor, tile: usize) -> Result<ImageTensor> {
        let m = self.size_multiple();
        if img.height().is_multiple_of(m) && img.width().is_multiple_of(m) {
            Ok(self.denoise(img)?.clean2)
        } else {
            self.denoise_fullframe(img, tile, DEFAULT_TILE_OVERLAP.min(tile / 2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32) -> ImageTensor {
        ImageTensor::filled(8, 8, v).unwrap()
    }

    #[test]
    fn merge_midpoint_and_endpoints() {
        let m = merge(&constant(0.8), &constant(0.2), 0.5).unwrap();
        assert!(m.values().iter().all(|&v| (v - 0.5).abs() < 1e-7));
        let noise = ImageTensor::from_fn(4, 4, |r, c| (r + c) as f32 / 6.0).unwrap();
        let clean = ImageTensor::from_fn(4, 4, |r, c| (r * c) as f32 / 9.0).unwrap();
        assert_eq!(merge(&noise, &clean, 0.0).unwrap(), noise);
        assert_eq!(merge(&noise, &clean, 1.0).unwrap(), clean);
        assert_eq!(merge(&noise, &noise, 0.37).unwrap(), noise);
        assert!(merge(&noise, &clean, 1.5).is_err());
        assert!(merge(&noise, &constant(0.1), 0.5).is_err());
    }

    #[test]
    fn identity_composition() {
        let id = |img: &ImageTensor| Ok(img.clone());
        let img = ImageTensor::from_fn(8, 8, |r, c| ((r * 3 + c) % 8) as f32 / 7.0).unwrap();
        let out = denoise_with(&id, Some(&id), 0.5, &img).unwrap();
        assert_eq!(out.clean2, img);
    }

    #[test]
    fn constant_stage_one_composition() {
        let to_02 = |img: &ImageTensor| ImageTensor::filled(img.height(), img.width(), 0.2);
        let id = |img: &ImageTensor| Ok(img.clone());
        let out = denoise_with(&to_02, Some(&id), 0.5, &constant(0.8)).unwrap();
        assert!(out.clean2.values().iter().all(|&v| (v - 0.5).abs() < 1e-7));
        assert!(out.clean1.values().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn single_stage_is_plain_translation() {
        let half = |img: &ImageTensor| {
            ImageTensor::from_clamped(
                img.height(),
                img.width(),
                img.to_f64().iter().map(|v| v / 2.0).collect(),
            )
        };
        let out = denoise_with(&half, None, 0.0, &constant(0.6)).unwrap();
        assert_eq!(out.clean2, out.clean1);
        assert_eq!(out.noise1, constant(0.6));
    }
}
