//! Trains on synthetic 64x64 phantom pairs and reports held-out PSNR/SSIM
//! after every epoch. Arguments are `key=value` config overrides; `N_PAIRS`
//! sets the dataset size (default 200, split 80/20).

use std::time::Instant;

use dmcw_core::dual::{denoise_with, CycleModels, ImageMap};
use dmcw_core::imaging::{save_image, split_dataset};
use dmcw_core::metrics::{psnr, ssim};
use dmcw_core::synthetic::phantom_pairs;
use dmcw_core::training::train;
use dmcw_core::{
    GeneratorModel, ImageTensor, LossRow, PhantomSpec, SsimParams, TrainConfig, TrainObserver,
};

struct Progress {
    start: Instant,
    alpha: f64,
    g: [Option<GeneratorModel>; 2],
    test: Vec<(ImageTensor, ImageTensor)>,
}

impl Progress {
    fn score(&self) -> (f64, f64, f64) {
        let g1 = self.g[0].as_ref().unwrap();
        let g2 = self.g[1].as_ref().map(|g| g as &dyn ImageMap);
        let p = SsimParams::default();
        let (mut ps, mut ss, mut s1) = (0.0, 0.0, 0.0);
        for (clean, noisy) in &self.test {
            let out = denoise_with(g1, g2, self.alpha, noisy).unwrap();
            ps += psnr(&out.clean2, clean, 1.0).unwrap();
            ss += ssim(&out.clean2, clean, &p).unwrap();
            s1 += ssim(&out.clean1, clean, &p).unwrap();
        }
        let k = self.test.len() as f64;
        (ps / k, ss / k, s1 / k)
    }
}

impl Progress {
    /// Rows: noisy, stage-1 output, final output, clean; one column per test image.
    fn montage(&self, path: &str) {
        let g1 = self.g[0].as_ref().unwrap();
        let g2 = self.g[1].as_ref().map(|g| g as &dyn ImageMap);
        let cols = 6;
        let mut tiles = Vec::new();
        for (clean, noisy) in self.test.iter().take(cols) {
            let out = denoise_with(g1, g2, self.alpha, noisy).unwrap();
            tiles.push([noisy.clone(), out.clean1, out.clean2, clean.clone()]);
        }
        let img = ImageTensor::from_fn(4 * 64, cols * 64, |r, c| {
            tiles[c / 64][r / 64].get(r % 64, c % 64)
        })
        .unwrap();
        save_image(&img, path).unwrap();
    }
}

impl TrainObserver for Progress {
    fn after_generator_step(&mut self, stage: usize, m: &CycleModels) {
        self.g[stage - 1] = Some(m.g.clone());
    }

    fn on_epoch(&mut self, epoch: usize, mean: &LossRow) {
        let (p, s, s1) = self.score();
        if let Ok(dir) = std::env::var("DUMP_DIR") {
            self.montage(&format!("{dir}/epoch{epoch:02}.png"));
        }
        eprintln!(
            "epoch {epoch:>2} {:>6.1}s  psnr {p:.3} ssim {s:.4} (stage1 {s1:.4})  critic {:.4}/{:.4} gen {:.4} cycle {:.4}",
            self.start.elapsed().as_secs_f64(),
            mean.critic_x,
            mean.critic_y,
            mean.gen,
            mean.cycle
        );
    }
}

fn main() {
    let mut cfg = TrainConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    let n_pairs: usize = std::env::var("N_PAIRS")
        .map(|v| v.parse().unwrap())
        .unwrap_or(200);
    let pairs = phantom_pairs(n_pairs, &PhantomSpec::new(64, 64, 0), 4.0, 1234).unwrap();
    let (train_pairs, test) = split_dataset(pairs, 0.8, 0).unwrap();
    let (clean, noisy): (Vec<_>, Vec<_>) = train_pairs.into_iter().unzip();

    let p = SsimParams::default();
    let k = test.len() as f64;
    let base_p: f64 = test
        .iter()
        .map(|(c, n)| psnr(n, c, 1.0).unwrap())
        .sum::<f64>()
        / k;
    let base_s: f64 = test
        .iter()
        .map(|(c, n)| ssim(n, c, &p).unwrap())
        .sum::<f64>()
        / k;
    eprintln!("noisy    psnr {base_p:.3} ssim {base_s:.4}");
    for radius in [1usize, 2, 3] {
        let (mut bp, mut bs) = (0.0, 0.0);
        for (c, n) in &test {
            let f = box_filter(n, radius);
            bp += psnr(&f, c, 1.0).unwrap();
            bs += ssim(&f, c, &p).unwrap();
        }
        eprintln!("box r={radius}  psnr {:.3} ssim {:.4}", bp / k, bs / k);
    }

    let mut progress = Progress {
        start: Instant::now(),
        alpha: cfg.effective_merge_alpha(),
        g: [None, None],
        test,
    };
    train(&cfg, &noisy, &clean, &mut progress).unwrap();
}

fn box_filter(img: &ImageTensor, r: usize) -> ImageTensor {
    let (h, w) = img.dims();
    ImageTensor::from_fn(h, w, |y, x| {
        let (mut sum, mut n) = (0.0f32, 0.0f32);
        for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
            for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                sum += img.get(yy, xx);
                n += 1.0;
            }
        }
        sum / n
    })
    .unwrap()
}
