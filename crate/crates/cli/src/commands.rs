use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dmcw_core::evaluation::{evaluate_images, run_ablation, AblationData, EpochPrinter};
use dmcw_core::imaging::{
    expand_dataset, load_image, read_manifest, save_image, split_dataset, write_manifest,
};
use dmcw_core::synthetic::phantom_pairs;
use dmcw_core::training::train as train_model;
use dmcw_core::{
    Checkpoint, CropPlan, ImageTensor, PhantomSpec, RegionSpec, SsimParams, TrainConfig, Variant,
};

use crate::{
    AblateArgs, AugmentArgs, ConfigArgs, DenoiseArgs, EvaluateArgs, PhantomArgs, TrainArgs,
};

/// Prints the resolved settings of a run as `key=value` lines.
fn print_resolved(pairs: &[(&str, String)]) {
    println!("# resolved config");
    for (k, v) in pairs {
        println!("{k}={v}");
    }
}

fn print_config(cfg: &TrainConfig) {
    println!("# resolved config");
    print!("{}", cfg.to_text());
}

/// PNG paths from a directory (sorted), a manifest, or a single PNG.
fn image_paths(input: &Path) -> Result<Vec<PathBuf>> {
    let paths = if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
        paths.sort();
        paths
    } else if input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        vec![input.to_path_buf()]
    } else {
        read_manifest(input)?
    };
    if paths.is_empty() {
        bail!("no images found in {}", input.display());
    }
    Ok(paths)
}

fn load_all(input: &Path) -> Result<(Vec<PathBuf>, Vec<ImageTensor>)> {
    let paths = image_paths(input)?;
    let images = paths
        .iter()
        .map(|p| load_image(p).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    Ok((paths, images))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Saves images as `<dir>/<prefix><index>.png` and returns relative names.
fn save_numbered(dir: &Path, prefix: &str, images: &[ImageTensor]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let width = images.len().to_string().len().max(4);
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let name = PathBuf::from(format!("{prefix}{i:0width$}.png"));
            save_image(img, dir.join(&name))?;
            Ok(name)
        })
        .collect()
}

fn prefixed(dir: &str, names: &[PathBuf]) -> Vec<PathBuf> {
    names.iter().map(|n| Path::new(dir).join(n)).collect()
}

pub fn phantom(a: &PhantomArgs) -> Result<()> {
    print_resolved(&[
        ("out", a.out.display().to_string()),
        ("count", a.count.to_string()),
        ("height", a.height.to_string()),
        ("width", a.width.to_string()),
        ("looks", a.looks.to_string()),
        ("layers", a.layers.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let template = PhantomSpec {
        num_layers: a.layers,
        ..PhantomSpec::new(a.height, a.width, 0)
    };
    let pairs = phantom_pairs(a.count, &template, a.looks, a.seed)?;
    let (clean, noisy): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let clean_names = save_numbered(&a.out.join("clean"), "", &clean)?;
    let noisy_names = save_numbered(&a.out.join("noisy"), "", &noisy)?;
    let bg = template.background_region();
    let header = format!(
        "{} phantoms {}x{}, speckle looks {}, seed {}\nbackground region {bg}",
        a.count, a.height, a.width, a.looks, a.seed
    );
    write_manifest(
        a.out.join("clean.txt"),
        &header,
        &prefixed("clean", &clean_names),
    )?;
    write_manifest(
        a.out.join("noisy.txt"),
        &header,
        &prefixed("noisy", &noisy_names),
    )?;
    println!(
        "wrote {} clean/noisy pairs to {} (background region {bg})",
        a.count,
        a.out.display()
    );
    Ok(())
}

pub fn augment(a: &AugmentArgs) -> Result<()> {
    print_resolved(&[
        ("in", a.input.display().to_string()),
        ("out", a.out.display().to_string()),
        ("crops", a.crops.to_string()),
        ("size", a.size.to_string()),
        ("scale", a.scale.to_string()),
        ("split", a.split.map_or("none".into(), |s| s.to_string())),
        ("seed", a.seed.to_string()),
    ]);
    let plan = CropPlan {
        scale_factor: a.scale,
        crop_size: a.size,
        crops_per_image: a.crops,
        seed: a.seed,
    };
    plan.validate()?;
    if let Some(f) = a.split {
        if !(0.0..=1.0).contains(&f) {
            bail!("--split must lie in [0, 1], got {f}");
        }
    }
    let (_, images) = load_all(&a.input)?;
    let crops = expand_dataset(&images, &plan)?;
    let names = save_numbered(&a.out, "crop", &crops)?;
    let header = format!(
        "{} crops of {}px from {} images, scale {}, seed {}",
        crops.len(),
        a.size,
        images.len(),
        a.scale,
        a.seed
    );
    write_manifest(a.out.join("crops.txt"), &header, &names)?;
    println!("wrote {} crops to {}", crops.len(), a.out.display());
    if let Some(fraction) = a.split {
        // Same seed and same count give the same split for paired sets.
        let (train, test) = split_dataset(names, fraction, a.seed)?;
        write_manifest(a.out.join("train.txt"), &header, &train)?;
        write_manifest(a.out.join("test.txt"), &header, &test)?;
        println!("split {} train / {} test", train.len(), test.len());
    }
    Ok(())
}

fn resolve_config(c: &ConfigArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
        Ok(())
    };
    set("variant", c.variant.clone())?;
    set("epochs", c.epochs.map(|v| v.to_string()))?;
    set("batch_size", c.batch_size.map(|v| v.to_string()))?;
    set("lambda", c.lambda.map(|v| v.to_string()))?;
    set("clip_c", c.clip_c.map(|v| v.to_string()))?;
    set("n_critic", c.n_critic.map(|v| v.to_string()))?;
    set("learning_rate", c.learning_rate.map(|v| v.to_string()))?;
    set("merge_alpha", c.merge_alpha.map(|v| v.to_string()))?;
    set("crop_size", c.crop_size.map(|v| v.to_string()))?;
    set("seed", seed.map(|v| v.to_string()))?;
    for kv in &c.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects key=value, got {kv:?}");
        };
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn epoch_printer(start: Instant) -> EpochPrinter<impl FnMut(usize, &dmcw_core::LossRow)> {
    EpochPrinter(move |epoch, mean: &dmcw_core::LossRow| {
        eprintln!(
            "epoch {epoch}: total {:.5} gen {:.5} cycle {:.5} critic_X {:.5} critic_Y {:.5} ({:.0}s)",
            mean.total,
            mean.gen,
            mean.cycle,
            mean.critic_x,
            mean.critic_y,
            start.elapsed().as_secs_f64()
        )
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config, a.seed)?;
    print_config(&cfg);
    let (_, noisy) = load_all(&a.noisy)?;
    let (_, clean) = load_all(&a.clean)?;
    let run_dir = a.out.join(cfg.run_name());
    let ckpt = train_model(&cfg, &noisy, &clean, &mut epoch_printer(Instant::now()))?;
    ckpt.save(&run_dir)?;
    println!("checkpoint written to {}", run_dir.display());
    Ok(())
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let tile = a.tile.unwrap_or(ckpt.config.crop_size);
    print_resolved(&[
        ("checkpoint", a.checkpoint.display().to_string()),
        ("input", a.input.display().to_string()),
        ("out", a.out.display().to_string()),
        ("dump_intermediates", a.dump_intermediates.to_string()),
        ("tile", tile.to_string()),
        ("overlap", a.overlap.to_string()),
    ]);
    create_dir(&a.out)?;
    let model = &ckpt.model;
    let m = model.size_multiple();
    for path in image_paths(&a.input)? {
        let img = load_image(&path)?;
        let name = stem(&path);
        if img.height() % m == 0 && img.width() % m == 0 {
            let out = model.denoise(&img)?;
            save_image(&out.clean2, a.out.join(format!("{name}.png")))?;
            if a.dump_intermediates {
                save_image(&out.clean1, a.out.join(format!("{name}_clean1.png")))?;
                save_image(&out.noise1, a.out.join(format!("{name}_noise1.png")))?;
            }
        } else {
            if a.dump_intermediates {
                bail!(
                    "{}: intermediates need sides divisible by {m}, got {}x{}",
                    path.display(),
                    img.height(),
                    img.width()
                );
            }
            let out = model.denoise_fullframe(&img, tile, a.overlap)?;
            save_image(&out, a.out.join(format!("{name}.png")))?;
        }
        println!("{}", a.out.join(format!("{name}.png")).display());
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let region: RegionSpec = a.region.parse()?;
    print_resolved(&[
        (
            "checkpoint",
            a.checkpoint
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        ),
        (
            "noisy",
            a.noisy
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        ),
        (
            "denoised",
            a.denoised
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        ),
        ("clean", a.clean.display().to_string()),
        ("region", region.to_string()),
    ]);
    let (clean_paths, clean) = load_all(&a.clean)?;
    let (paths, denoised) = match (&a.checkpoint, &a.noisy, &a.denoised) {
        (Some(ckpt), Some(noisy), None) => {
            let ckpt = Checkpoint::load(ckpt)?;
            let (paths, noisy) = load_all(noisy)?;
            for img in &noisy {
                region.check_within(img.height(), img.width())?;
            }
            let out = dmcw_core::evaluation::denoise_images(&ckpt, &noisy)?;
            (paths, out)
        }
        (None, None, Some(dir)) => load_all(dir)?,
        _ => bail!("give either --checkpoint with --noisy, or --denoised"),
    };
    if paths.len() != clean_paths.len() {
        bail!(
            "{} images to score but {} references",
            paths.len(),
            clean_paths.len()
        );
    }
    let ids: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let eval = evaluate_images(&ids, &denoised, &clean, &region, &SsimParams::default())?;
    match &a.out {
        Some(path) => {
            eval.write_csv(path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", eval.to_csv()),
    }
    println!("mean: {}", eval.mean);
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let base = resolve_config(&a.config, None)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| v.parse().map_err(anyhow::Error::from))
            .collect::<Result<_>>()?
    };
    let region: RegionSpec = a.region.parse()?;
    print_config(&base);
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    let seeds: Vec<String> = a.seeds.iter().map(|s| s.to_string()).collect();
    println!("variants={}", names.join(","));
    println!("seeds={}", seeds.join(","));
    println!("split={}", a.split);
    println!("split_seed={}", a.seed);
    println!("region={region}");

    let (_, noisy) = load_all(&a.noisy)?;
    let (_, clean) = load_all(&a.clean)?;
    if noisy.len() != clean.len() {
        bail!(
            "{} noisy images but {} clean references",
            noisy.len(),
            clean.len()
        );
    }
    let pairs: Vec<(ImageTensor, ImageTensor)> = noisy.into_iter().zip(clean).collect();
    let (train, test) = split_dataset(pairs, a.split, a.seed)?;
    if train.is_empty() || test.is_empty() {
        bail!("split {} leaves an empty train or test set", a.split);
    }
    let (train_noisy, train_clean): (Vec<_>, Vec<_>) = train.into_iter().unzip();
    let (test_noisy, test_clean): (Vec<_>, Vec<_>) = test.into_iter().unzip();
    let data = AblationData {
        train_noisy: &train_noisy,
        train_clean: &train_clean,
        test_noisy: &test_noisy,
        test_clean: &test_clean,
        background: region,
    };
    create_dir(&a.out)?;
    let start = Instant::now();
    let table = run_ablation(
        &base,
        &variants,
        &a.seeds,
        &data,
        &SsimParams::default(),
        Some(&a.out),
        &mut |cfg, eval| {
            eprintln!(
                "{}: {} ({:.0}s)",
                cfg.run_name(),
                eval.mean,
                start.elapsed().as_secs_f64()
            );
        },
    )?;
    let table_path = a.out.join("ablation.csv");
    fs::write(&table_path, table.to_csv())
        .with_context(|| format!("writing {}", table_path.display()))?;
    let seeds_path = a.out.join("ablation_seeds.csv");
    fs::write(&seeds_path, table.per_seed_csv())
        .with_context(|| format!("writing {}", seeds_path.display()))?;
    print!("{}", table.to_csv());
    Ok(())
}
