//! Image-quality measures: MSE, PSNR, windowed SSIM, and the
//! background-region SNR and ENL used for speckle suppression.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RegionSpec};

/// Constants and exponents of the SSIM luminance/contrast/structure product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        let positive = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("dynamic_range", self.dynamic_range),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "SSIM {name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }
}

/// One row of an evaluation table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub ssim: f64,
    pub psnr: f64,
    pub snr: f64,
    pub enl: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "ssim,psnr_db,snr_db,enl";

    pub fn to_csv_fields(&self) -> String {
        format!(
            "{},{},{},{}",
            fmt_metric(self.ssim),
            fmt_metric(self.psnr),
            fmt_metric(self.snr),
            fmt_metric(self.enl)
        )
    }

    /// Column-wise mean. Non-finite entries other than `+inf` are skipped, so
    /// one undefined SNR does not poison a whole table.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let col = |f: fn(&MetricsReport) -> f64| {
            let vals: Vec<f64> = reports.iter().map(f).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        MetricsReport {
            ssim: col(|r| r.ssim),
            psnr: col(|r| r.psnr),
            snr: col(|r| r.snr),
            enl: col(|r| r.enl),
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SSIM {:.4}  PSNR {:.4} dB  SNR {:.4} dB  ENL {:.4}",
            self.ssim, self.psnr, self.snr, self.enl
        )
    }
}

/// CSV rendering: `inf` for the zero-MSE PSNR sentinel, `nan` for undefined.
pub fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn same_dims(x: &ImageTensor, y: &ImageTensor) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

pub fn mse(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    same_dims(x, y)?;
    let sum: f64 = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr(x: &ImageTensor, y: &ImageTensor, max_val: f64) -> Result<f64> {
    if !(max_val.is_finite() && max_val > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_val must be > 0, got {max_val}"
        )));
    }
    Ok(psnr_from_mse(mse(x, y)?, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// Summed-area table with a zero first row/column.
struct Integral {
    stride: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(height: usize, width: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut data = vec![0.0; (height + 1) * stride];
        for r in 0..height {
            let mut row_sum = 0.0;
            for c in 0..width {
                row_sum += value(r, c);
                data[(r + 1) * stride + c + 1] = data[r * stride + c + 1] + row_sum;
            }
        }
        Self { stride, data }
    }

    #[inline]
    fn window(&self, r: usize, c: usize, size: usize) -> f64 {
        let s = self.stride;
        self.data[(r + size) * s + c + size]
            - self.data[r * s + c + size]
            - self.data[(r + size) * s + c]
            + self.data[r * s + c]
    }
}

#[inline]
fn signed_pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// SSIM of one window from its raw moments.
pub(crate) fn ssim_from_moments(
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    p: &SsimParams,
) -> f64 {
    let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
    let sd_x = var_x.max(0.0).sqrt();
    let sd_y = var_y.max(0.0).sqrt();
    let l = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
    let c = (2.0 * sd_x * sd_y + c2) / (var_x + var_y + c2);
    let s = (cov + c3) / (sd_x * sd_y + c3);
    signed_pow(l, p.alpha) * signed_pow(c, p.beta) * signed_pow(s, p.gamma)
}

/// Mean SSIM over every `window_size`² window (stride 1, uniform weights,
/// population moments).
pub fn ssim(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    same_dims(x, y)?;
    let (h, w) = x.dims();
    let k = p.window_size;
    if h < k || w < k {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w} image smaller than the {k}x{k} SSIM window"
        )));
    }
    let xv = |r, c| f64::from(x.get(r, c));
    let yv = |r, c| f64::from(y.get(r, c));
    let sx = Integral::new(h, w, xv);
    let sy = Integral::new(h, w, yv);
    let sxx = Integral::new(h, w, |r, c| xv(r, c) * xv(r, c));
    let syy = Integral::new(h, w, |r, c| yv(r, c) * yv(r, c));
    let sxy = Integral::new(h, w, |r, c| xv(r, c) * yv(r, c));
    let n = (k * k) as f64;
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mu_x = sx.window(r, c, k) / n;
            let mu_y = sy.window(r, c, k) / n;
            let var_x = (sxx.window(r, c, k) / n - mu_x * mu_x).max(0.0);
            let var_y = (syy.window(r, c, k) / n - mu_y * mu_y).max(0.0);
            let cov = sxy.window(r, c, k) / n - mu_x * mu_y;
            total += ssim_from_moments(mu_x, mu_y, var_x, var_y, cov, p);
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

/// Sample mean and unbiased sample variance of the region.
pub fn region_stats(img: &ImageTensor, region: &RegionSpec) -> Result<(f64, f64)> {
    region.check_within(img.height(), img.width())?;
    let n = region.area();
    if n < 2 {
        return Err(Error::UndefinedMetric(
            "background region needs at least two pixels".into(),
        ));
    }
    let mean = region.pixels(img).sum::<f64>() / n as f64;
    let var = region
        .pixels(img)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok((mean, var))
}

/// `10 log10(max(img)^2 / sigma_b^2)` with `sigma_b` the background standard
/// deviation.
pub fn snr(img: &ImageTensor, background: &RegionSpec) -> Result<f64> {
    let (_, var) = region_stats(img, background)?;
    if var <= 0.0 {
        return Err(Error::UndefinedMetric(
            "SNR undefined for a zero-variance background".into(),
        ));
    }
    let peak = f64::from(img.min_max().1);
    Ok(10.0 * (peak * peak / var).log10())
}

/// Equivalent number of looks: mean² / variance over the region.
pub fn enl(img: &ImageTensor, region: &RegionSpec) -> Result<f64> {
    let (mean, var) = region_stats(img, region)?;
    if var <= 0.0 {
        return Err(Error::UndefinedMetric(
            "ENL undefined for a zero-variance region".into(),
        ));
    }
    Ok(mean * mean / var)
}

/// All four measures for one denoised image. SNR/ENL come from the denoised
/// image's background; undefined values (flat background) are reported as NaN.
pub fn report(
    denoised: &ImageTensor,
    reference: &ImageTensor,
    background: &RegionSpec,
    ssim_params: &SsimParams,
) -> Result<MetricsReport> {
    background.check_within(denoised.height(), denoised.width())?;
    let undefined_to_nan = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    };
    Ok(MetricsReport {
        ssim: ssim(denoised, reference, ssim_params)?,
        psnr: psnr(denoised, reference, 1.0)?,
        snr: undefined_to_nan(snr(denoised, background))?,
        enl: undefined_to_nan(enl(denoised, background))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: &[f32]) -> ImageTensor {
        ImageTensor::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = ImageTensor::filled(4, 4, 0.0).unwrap();
        let b = ImageTensor::filled(4, 4, 0.5).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert!(mse(&a, &ImageTensor::filled(4, 3, 0.0).unwrap()).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = ImageTensor::filled(3, 3, 0.25).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &a, 0.0).is_err());
        // MAX 255, MSE 1.
        let expected = 10.0 * 65025f64.log10();
        assert!((psnr_from_mse(1.0, 255.0) - expected).abs() < 1e-12);
        assert!((expected - 48.1308).abs() < 1e-4);
        let x = ImageTensor::from_fn(4, 4, |r, c| (r * 4 + c) as f32 / 20.0).unwrap();
        let y =
            ImageTensor::from_clamped(4, 4, x.to_f64().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn ssim_constant_pair() {
        let x = ImageTensor::filled(9, 9, 0.0).unwrap();
        let y = ImageTensor::filled(9, 9, 1.0).unwrap();
        let got = ssim(&x, &y, &SsimParams::default()).unwrap();
        let c1 = 0.0001;
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-15);
        assert!((got - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn ssim_rejects_bad_inputs() {
        let x = ImageTensor::filled(5, 5, 0.3).unwrap();
        assert!(ssim(&x, &x, &SsimParams::default()).is_err());
        let bad = SsimParams {
            window_size: 4,
            ..SsimParams::default()
        };
        assert!(ssim(&x, &x, &bad).is_err());
    }

    #[test]
    fn snr_and_enl_direct_formula() {
        // Two-pixel region with sample std 0.1*sqrt(2)/sqrt(2): values m +/- d
        // give sample variance 2 d^2.
        let d = 0.1 / 2f64.sqrt();
        let im = img(1, 3, &[(0.5 - d) as f32, (0.5 + d) as f32, 1.0]);
        let region = RegionSpec::new(0, 1, 0, 2).unwrap();
        let (mean, var) = region_stats(&im, &region).unwrap();
        assert!((mean - 0.5).abs() < 1e-7);
        assert!((var - 0.01).abs() < 1e-7);
        assert!((snr(&im, &region).unwrap() - 20.0).abs() < 1e-5);
        assert!((enl(&im, &region).unwrap() - 25.0).abs() < 1e-4);
    }

    #[test]
    fn zero_variance_background_is_an_error() {
        let flat = ImageTensor::filled(4, 4, 0.3).unwrap();
        let region = RegionSpec::new(0, 2, 0, 4).unwrap();
        assert!(matches!(
            snr(&flat, &region),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            enl(&flat, &region),
            Err(Error::UndefinedMetric(_))
        ));
        let outside = RegionSpec::new(0, 5, 0, 4).unwrap();
        assert!(matches!(
            enl(&flat, &outside),
            Err(Error::InvalidRegion { .. })
        ));
    }

    #[test]
    fn csv_formatting() {
        let r = MetricsReport {
            ssim: 1.0,
            psnr: f64::INFINITY,
            snr: f64::NAN,
            enl: 2.5,
        };
        assert_eq!(r.to_csv_fields(), "1.000000,inf,nan,2.500000");
        let m = MetricsReport::mean(&[r, MetricsReport { snr: 4.0, ..r }]);
        assert_eq!(m.snr, 4.0);
        assert_eq!(m.psnr, f64::INFINITY);
    }
}
