//! Test-set scoring of trained models and the multi-variant ablation sweep.

use std::fs;
use std::path::Path;

use crate::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RegionSpec};
use crate::metrics::{report, MetricsReport, SsimParams};
use crate::training::{train, Checkpoint, TrainObserver};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub report: MetricsReport,
}

/// Per-image metrics and their column means.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub mean: MetricsReport,
}

impl Evaluation {
    pub const CSV_HEADER: &'static str = "image_id,ssim,psnr_db,snr_db,enl";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for row in &self.rows {
            out.push_str(&format!(
                "{},{}\n",
                row.image_id,
                row.report.to_csv_fields()
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores already-denoised images against references.
pub fn evaluate_images(
    ids: &[String],
    denoised: &[ImageTensor],
    references: &[ImageTensor],
    background: &RegionSpec,
    ssim: &SsimParams,
) -> Result<Evaluation> {
    if denoised.len() != references.len() || ids.len() != denoised.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids, {} outputs and {} references",
            ids.len(),
            denoised.len(),
            references.len()
        )));
    }
    if denoised.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let rows = ids
        .iter()
        .zip(denoised)
        .zip(references)
        .map(|((id, d), r)| {
            Ok(EvalRow {
                image_id: id.clone(),
                report: report(d, r, background, ssim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.report).collect();
    Ok(Evaluation {
        mean: MetricsReport::mean(&reports),
        rows,
    })
}

/// Denoises every image with the checkpoint's model. Images whose sides are
/// not multiples of the generator's size factor go through tiled inference
/// with the training crop size as tile.
pub fn denoise_images(ckpt: &Checkpoint, images: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
    let model = &ckpt.model;
    let m = model.size_multiple();
    let direct =
        |img: &ImageTensor| img.height().is_multiple_of(m) && img.width().is_multiple_of(m);
    let mut out: Vec<Option<ImageTensor>> = vec![None; images.len()];
    // Batch runs of equally sized, directly processable images.
    let mut i = 0;
    while i < images.len() {
        if !direct(&images[i]) {
            out[i] = Some(model.denoise_any(&images[i], ckpt.config.crop_size)?);
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < images.len()
            && j - i < ckpt.config.batch_size.max(1)
            && images[j].dims() == images[i].dims()
        {
            j += 1;
        }
        for (k, s) in model.denoise_batch(&images[i..j])?.into_iter().enumerate() {
            out[i + k] = Some(s.clean2);
        }
        i = j;
    }
    Ok(out
        .into_iter()
        .map(|o| o.expect("every image denoised"))
        .collect())
}

/// Denoises `noisy` with the checkpoint and scores against `references`.
pub fn evaluate(
    ckpt: &Checkpoint,
    noisy: &[ImageTensor],
    references: &[ImageTensor],
    background: &RegionSpec,
    ssim: &SsimParams,
) -> Result<Evaluation> {
    for img in noisy {
        background.check_within(img.height(), img.width())?;
    }
    let ids: Vec<String> = (0..noisy.len()).map(|i| format!("{i:04}")).collect();
    let denoised = denoise_images(ckpt, noisy)?;
    evaluate_images(&ids, &denoised, references, background, ssim)
}

/// Data shared by every run of an ablation.
pub struct AblationData<'a> {
    pub train_noisy: &'a [ImageTensor],
    pub train_clean: &'a [ImageTensor],
    pub test_noisy: &'a [ImageTensor],
    pub test_clean: &'a [ImageTensor],
    pub background: RegionSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// `(seed, mean test metrics)` per trained model.
    pub per_seed: Vec<(u64, MetricsReport)>,
    pub mean: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// One row per variant with metrics averaged over seeds.
    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{}\n", MetricsReport::CSV_HEADER);
        for row in &self.rows {
            out.push_str(&format!("{},{}\n", row.variant, row.mean.to_csv_fields()));
        }
        out
    }

    pub fn per_seed_csv(&self) -> String {
        let mut out = format!("variant,seed,{}\n", MetricsReport::CSV_HEADER);
        for row in &self.rows {
            for (seed, r) in &row.per_seed {
                out.push_str(&format!("{},{seed},{}\n", row.variant, r.to_csv_fields()));
            }
        }
        out
    }
}

/// Trains every `(variant, seed)` from `base`, evaluates on the shared test
/// split and tabulates. With `run_root`, each checkpoint is saved under
/// `run_root/<variant>-seed<seed>/`. `progress` is called after each run.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    data: &AblationData<'_>,
    ssim: &SsimParams,
    run_root: Option<&Path>,
    progress: &mut dyn FnMut(&TrainConfig, &Evaluation),
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one variant and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let ckpt = train(&cfg, data.train_noisy, data.train_clean, &mut ())?;
            if let Some(root) = run_root {
                ckpt.save(root.join(cfg.run_name()))?;
            }
            let eval = evaluate(
                &ckpt,
                data.test_noisy,
                data.test_clean,
                &data.background,
                ssim,
            )?;
            progress(&cfg, &eval);
            per_seed.push((seed, eval.mean));
        }
        let reports: Vec<MetricsReport> = per_seed.iter().map(|(_, r)| *r).collect();
        rows.push(AblationRow {
            variant,
            mean: MetricsReport::mean(&reports),
            per_seed,
        });
    }
    Ok(AblationTable { rows })
}

/// Observer that forwards epoch means to a closure.
pub struct EpochPrinter<F: FnMut(usize, &crate::training::LossRow)>(pub F);

impl<F: FnMut(usize, &crate::training::LossRow)> TrainObserver for EpochPrinter<F> {
    fn on_epoch(&mut self, epoch: usize, mean: &crate::training::LossRow) {
        (self.0)(epoch, mean)
    }
}
