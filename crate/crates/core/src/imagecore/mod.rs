//! Pixel containers shared by every stage: float rasters in `[0, 1]`, binary
//! masks, square-window morphology and alpha compositing.

mod io;
mod morphology;

pub use io::{
    decode_mask_png, decode_png, encode_mask_png, encode_png, load_mask_png, load_png,
    save_mask_png, save_png, RasterImage8,
};
pub use morphology::{boundary_band, dilate, erode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major raster with 1, 3 or 4 float channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterImage {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1, 3 or 4, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ExtentMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raster data"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: &[f32]) -> Self {
        assert_eq!(value.len(), channels, "fill value must have one entry per channel");
        let data = value
            .iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect::<Vec<_>>()
            .repeat(width * height);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Builds an image from a per-pixel closure writing `channels` values.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                let px = img.pixel_mut(x, y);
                f(x, y, px);
                for v in px.iter_mut() {
                    *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub(crate) fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at continuous pixel coordinates, where integer
    /// coordinates hit pixel centers. Out-of-range positions are edge-clamped.
    pub fn sample_bilinear(&self, x: f32, y: f32, c: usize) -> f32 {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let a = self.get(x0, y0, c);
        let b = self.get(x1, y0, c);
        let d = self.get(x0, y1, c);
        let e = self.get(x1, y1, c);
        let top = a + (b - a) * fx;
        let bot = d + (e - d) * fx;
        top + (bot - top) * fy
    }

    /// Rec. 601 luma for color images, the single channel otherwise.
    pub fn luminance(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(self.channels)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    /// Drops the alpha channel, or replicates gray into RGB.
    pub fn to_rgb(&self) -> RasterImage {
        match self.channels {
            3 => self.clone(),
            4 => RasterImage::from_fn(self.width, self.height, 3, |x, y, px| {
                px.copy_from_slice(&self.pixel(x, y)[..3])
            }),
            _ => RasterImage::from_fn(self.width, self.height, 3, |x, y, px| {
                px.fill(self.get(x, y, 0))
            }),
        }
    }

    /// Zeroes every pixel where the mask is unset (or set, with `invert`).
    pub fn masked(&self, mask: &MaskImage, invert: bool) -> Result<RasterImage> {
        check_extent(self.extent(), mask.extent(), "masked")?;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if mask.get(x, y) == invert {
                    out.pixel_mut(x, y).fill(0.0);
                }
            }
        }
        Ok(out)
    }

    /// Mean color over the set pixels of `mask`.
    pub fn mean_over(&self, mask: &MaskImage) -> Result<Vec<f32>> {
        check_extent(self.extent(), mask.extent(), "mean_over")?;
        let mut acc = vec![0.0f64; self.channels];
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if mask.get(x, y) {
                    n += 1;
                    for (a, v) in acc.iter_mut().zip(self.pixel(x, y)) {
                        *a += *v as f64;
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyMask("mean_over"));
        }
        Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
    }
}

#[inline]
pub(crate) fn bilinear_taps(v: f32, len: usize) -> (usize, usize, f32) {
    let max = (len - 1) as f32;
    let v = if v.is_finite() { v.clamp(0.0, max) } else { 0.0 };
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, v - i0 as f32)
}

pub(crate) fn check_extent(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ExtentMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Binary occupancy grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_bits(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ExtentMismatch(format!(
                "{} mask bits for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Lookup at continuous coordinates; anything outside the grid is unset.
    pub fn contains_point(&self, x: f32, y: f32) -> bool {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f32 || yi >= self.height as f32 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    pub fn not(&self) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &MaskImage) -> MaskImage {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &MaskImage) -> MaskImage {
        self.zip(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &MaskImage) -> MaskImage {
        self.zip(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &MaskImage) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !a || *b)
    }

    fn zip(&self, other: &MaskImage, f: impl Fn(bool, bool) -> bool) -> MaskImage {
        assert_eq!(self.extent(), other.extent(), "mask extents differ");
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Sets (or clears) every pixel within `radius` of `(cx, cy)`.
    pub fn paint_disk(&mut self, cx: f32, cy: f32, radius: f32, value: bool) {
        let r2 = radius * radius;
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as isize).min(self.width as isize - 1);
        let y1 = ((cy + radius).ceil() as isize).min(self.height as isize - 1);
        if x1 < 0 || y1 < 0 {
            return;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                if dx * dx + dy * dy <= r2 {
                    self.set(x, y, value);
                }
            }
        }
    }

    /// The mask as a one-channel raster with values 0/1.
    pub fn to_raster(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// `alpha * fg.rgb + (1 - alpha) * bg` per pixel.
pub fn composite_over(fg: &RasterImage, bg: &RasterImage) -> Result<RasterImage> {
    check_extent(fg.extent(), bg.extent(), "composite_over")?;
    if fg.channels() != 4 {
        return Err(Error::InvalidArgument("foreground must be RGBA".into()));
    }
    if bg.channels() != 3 {
        return Err(Error::InvalidArgument("background must be RGB".into()));
    }
    let data = fg
        .data
        .chunks_exact(4)
        .zip(bg.data.chunks_exact(3))
        .flat_map(|(f, b)| {
            let a = f[3];
            [0, 1, 2].map(|c| a * f[c] + (1.0 - a) * b[c])
        })
        .collect();
    RasterImage::new(fg.width, fg.height, 3, data)
}
