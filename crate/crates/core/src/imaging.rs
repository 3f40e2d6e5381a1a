//! Grayscale image container, PNG I/O, upscale-and-crop data expansion,
//! dataset splitting and overlapped tile inference.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageReader};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Single-channel image with every value finite and inside `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} image",
                values.len()
            )));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds an image from arbitrary reals, clamping into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pixel value".into()));
        }
        let values = values
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0) as f32)
            .collect();
        Self::new(height, width, values)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the `size`x`size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::DimensionMismatch(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            values.extend_from_slice(&self.values[start..start + width]);
        }
        Self::new(height, width, values)
    }

    pub fn region(&self, region: &RegionSpec) -> Result<Self> {
        region.check_within(self.height, self.width)?;
        self.crop(
            region.row_start,
            region.col_start,
            region.rows(),
            region.cols(),
        )
    }
}

/// Half-open rectangle `[row_start, row_end) x [col_start, col_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionSpec {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl RegionSpec {
    pub fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Result<Self> {
        let region = Self {
            row_start,
            row_end,
            col_start,
            col_end,
        };
        if row_end <= row_start || col_end <= col_start {
            return Err(Error::InvalidRegion {
                region: region.to_string(),
                message: "region is empty".into(),
            });
        }
        Ok(region)
    }

    pub fn rows(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn cols(&self) -> usize {
        self.col_end - self.col_start
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.row_end <= self.row_start || self.col_end <= self.col_start {
            return Err(Error::InvalidRegion {
                region: self.to_string(),
                message: "region is empty".into(),
            });
        }
        if self.row_end > height || self.col_end > width {
            return Err(Error::InvalidRegion {
                region: self.to_string(),
                message: format!("outside a {height}x{width} image"),
            });
        }
        Ok(())
    }

    /// Row-major iterator over the region's pixel values.
    pub fn pixels<'a>(&self, img: &'a ImageTensor) -> impl Iterator<Item = f64> + 'a {
        let region = *self;
        (region.row_start..region.row_end).flat_map(move |r| {
            (region.col_start..region.col_end).map(move |c| f64::from(img.get(r, c)))
        })
    }
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.row_start, self.row_end, self.col_start, self.col_end
        )
    }
}

impl FromStr for RegionSpec {
    type Err = Error;

    /// Parses `rows_start:rows_end:cols_start:cols_end`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = |message: &str| Error::InvalidRegion {
            region: s.to_string(),
            message: message.to_string(),
        };
        if parts.len() != 4 {
            return Err(bad("expected rows_start:rows_end:cols_start:cols_end"));
        }
        let mut nums = [0usize; 4];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| bad("coordinates must be non-negative integers"))?;
        }
        RegionSpec::new(nums[0], nums[1], nums[2], nums[3])
    }
}

/// Upscale-then-random-crop augmentation plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropPlan {
    pub scale_factor: f64,
    pub crop_size: usize,
    pub crops_per_image: usize,
    pub seed: u64,
}

impl Default for CropPlan {
    fn default() -> Self {
        Self {
            scale_factor: 1.5,
            crop_size: 256,
            crops_per_image: 100,
            seed: 0,
        }
    }
}

impl CropPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale_factor must be > 1, got {}",
                self.scale_factor
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::InvalidArgument("crop_size must be positive".into()));
        }
        if self.crops_per_image == 0 {
            return Err(Error::InvalidArgument(
                "crops_per_image must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (
            (height as f64 * self.scale_factor).round() as usize,
            (width as f64 * self.scale_factor).round() as usize,
        )
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = match decoded {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("expected 8-bit single-channel, found {:?}", other.color()),
            })
        }
    };
    let (width, height) = gray.dimensions();
    let values = gray
        .into_raw()
        .into_iter()
        .map(|p| p as f32 / 255.0)
        .collect();
    ImageTensor::new(height as usize, width as usize, values)
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .values()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Reads a dataset manifest: one image path per line, `#` starts a comment.
/// Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(text
        .lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(|line| {
            let p = PathBuf::from(line);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, header: &str, entries: &[PathBuf]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for line in header.lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    for entry in entries {
        text.push_str(&entry.to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bilinear resize with pixel-centre alignment. Output values stay within the
/// source's min/max.
pub fn resize_bilinear(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "resize target must be non-empty".into(),
        ));
    }
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    let max_r = (img.height() - 1) as f64;
    let max_c = (img.width() - 1) as f64;
    let axis = |o: usize, scale: f64, max: f64| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(max as usize);
        (lo, hi, src - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|c| axis(c, sx, max_c)).collect();
    let mut values = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fy) = axis(r, sy, max_r);
        for &(c0, c1, fx) in &cols {
            let top = f64::from(img.get(r0, c0)) * (1.0 - fx) + f64::from(img.get(r0, c1)) * fx;
            let bottom = f64::from(img.get(r1, c0)) * (1.0 - fx) + f64::from(img.get(r1, c1)) * fx;
            values.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    ImageTensor::from_clamped(height, width, values)
}

/// Upscales every source by `plan.scale_factor` and draws
/// `plan.crops_per_image` random square crops from each. Source `i` uses its
/// own seeded stream, so output is independent of evaluation order.
pub fn expand_dataset(images: &[ImageTensor], plan: &CropPlan) -> Result<Vec<ImageTensor>> {
    plan.validate()?;
    let mut crops = Vec::with_capacity(images.len() * plan.crops_per_image);
    for (index, img) in images.iter().enumerate() {
        let (h, w) = plan.scaled_dims(img.height(), img.width());
        if h < plan.crop_size || w < plan.crop_size {
            return Err(Error::InvalidArgument(format!(
                "crop {} larger than upscaled image {h}x{w} (source {index})",
                plan.crop_size
            )));
        }
        let scaled = resize_bilinear(img, h, w)?;
        let mut rng = rng::seeded(rng::derive_seed(plan.seed, index as u64), stream::CROP);
        for _ in 0..plan.crops_per_image {
            let row = rng.random_range(0..=h - plan.crop_size);
            let col = rng.random_range(0..=w - plan.crop_size);
            crops.push(scaled.crop(row, col, plan.crop_size, plan.crop_size)?);
        }
    }
    Ok(crops)
}

/// Seeded shuffle, then the first `round(train_fraction * n)` items become
/// the training split.
pub fn split_dataset<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = items.len();
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, stream::SPLIT));
    let mut train_mask = vec![false; n];
    for &i in &order[..n_train] {
        train_mask[i] = true;
    }
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let take = |idx: &[usize], slots: &mut Vec<Option<T>>| -> Vec<T> {
        idx.iter()
            .map(|&i| slots[i].take().expect("index used once"))
            .collect()
    };
    let train = take(&order[..n_train], &mut slots);
    let test = take(&order[n_train..], &mut slots);
    Ok((train, test))
}

#[inline]
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn reflect_pad(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    ImageTensor::from_fn(height, width, |r, c| {
        img.get(
            reflect_index(r as isize, img.height()),
            reflect_index(c as isize, img.width()),
        )
    })
}

/// Tile start offsets covering `[0, len)` with stride `tile - overlap`; the
/// last tile is shifted back so it ends exactly at `len`.
pub fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    debug_assert!(tile > overlap && len >= tile);
    let stride = tile - overlap;
    let mut starts = vec![0];
    let mut start = 0;
    while start + tile < len {
        start = (start + stride).min(len - tile);
        starts.push(start);
    }
    starts
}

fn feather(tile: usize, overlap: usize) -> Vec<f64> {
    let ramp = (overlap + 1) as f64;
    (0..tile)
        .map(|p| {
            let rise = (p + 1) as f64 / ramp;
            let fall = (tile - p) as f64 / ramp;
            rise.min(fall).min(1.0)
        })
        .collect()
}

/// Runs `f` over overlapping `tile`x`tile` windows and blends the results
/// with linear feathering, normalised so the weights sum to one at every
/// pixel. Images smaller than a tile are reflect-padded and cropped back.
pub fn tile_and_stitch<F>(
    img: &ImageTensor,
    tile: usize,
    overlap: usize,
    mut f: F,
) -> Result<ImageTensor>
where
    F: FnMut(&ImageTensor) -> Result<ImageTensor>,
{
    if tile == 0 || overlap >= tile {
        return Err(Error::InvalidArgument(format!(
            "need tile > overlap >= 0, got tile {tile}, overlap {overlap}"
        )));
    }
    let (h, w) = img.dims();
    let padded_h = h.max(tile);
    let padded_w = w.max(tile);
    let padded;
    let source = if padded_h != h || padded_w != w {
        padded = reflect_pad(img, padded_h, padded_w)?;
        &padded
    } else {
        img
    };

    let weights = feather(tile, overlap);
    let mut acc = vec![0.0f64; padded_h * padded_w];
    let mut norm = vec![0.0f64; padded_h * padded_w];
    for &r0 in &tile_starts(padded_h, tile, overlap) {
        for &c0 in &tile_starts(padded_w, tile, overlap) {
            let window = source.crop(r0, c0, tile, tile)?;
            let out = f(&window)?;
            if out.dims() != (tile, tile) {
                return Err(Error::DimensionMismatch(format!(
                    "tile map returned {}x{} for a {tile}x{tile} tile",
                    out.height(),
                    out.width()
                )));
            }
            for r in 0..tile {
                let wr = weights[r];
                let row = (r0 + r) * padded_w + c0;
                for c in 0..tile {
                    let wgt = wr * weights[c];
                    acc[row + c] += wgt * f64::from(out.get(r, c));
                    norm[row + c] += wgt;
                }
            }
        }
    }
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * padded_w + c;
            values.push(acc[i] / norm[i]);
        }
    }
    ImageTensor::from_clamped(h, w, values)
}
