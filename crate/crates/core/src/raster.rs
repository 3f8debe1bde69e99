//! Image storage and the preprocessing chain that feeds edge detection.
//!
//! Intensities are `f64` in `[0, 1]`; 8-bit quantization only happens when
//! reading or writing files.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Default bound on the longer image side.
pub const MAX_SIDE: usize = 800;

/// Rec.601 luma weights.
pub const LUMA_601: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Raster {
            width,
            height,
            channels: value.len(),
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels || !(channels == 1 || channels == 3) {
            return Err(Error::RasterSize {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::IntensityRange(bad));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Stores `v` clamped to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, v: &[f64]) {
        let i = (y * self.width + x) * self.channels;
        for (dst, src) in self.data[i..i + self.channels].iter_mut().zip(v) {
            *dst = src.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample at a real-valued position. Samples that need pixels
    /// outside the image read them as 0.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let fetch = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.get(xi as usize, yi as usize, c)
            }
        };
        let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1.0, y0) * fx;
        let bottom = fetch(x0, y0 + 1.0) * (1.0 - fx) + fetch(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear sample with coordinates clamped into the image.
    fn sample_clamped(&self, x: f64, y: f64, c: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
        let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    /// Converts a decoded image; anything with color becomes 3 channels,
    /// alpha is dropped.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
                let g = img.to_luma8();
                let data = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Raster {
                    width: g.width() as usize,
                    height: g.height() as usize,
                    channels: 1,
                    data,
                }
            }
            _ => {
                let rgb = img.to_rgb8();
                let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Raster {
                    width: rgb.width() as usize,
                    height: rgb.height() as usize,
                    channels: 3,
                    data,
                }
            }
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size"))
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Expands a gray raster to three identical channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Copies rows `y0..y1`.
    pub fn crop_rows(&self, y0: usize, y1: usize) -> Raster {
        let stride = self.width * self.channels;
        Raster {
            width: self.width,
            height: y1 - y0,
            channels: self.channels,
            data: self.data[y0 * stride..y1 * stride].to_vec(),
        }
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.pixel(self.width - 1 - x, y).to_vec();
                out.set_pixel(x, y, &src);
            }
        }
        out
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_grayscale(img: &Raster) -> Result<Raster> {
    to_grayscale_weighted(img, LUMA_601)
}

pub fn to_grayscale_weighted(img: &Raster, weights: [f64; 3]) -> Result<Raster> {
    match img.channels {
        3 => {}
        1 => return Err(Error::AlreadyGrayscale),
        found => return Err(Error::ChannelMismatch { expected: 3, found }),
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| (weights[0] * px[0] + weights[1] * px[1] + weights[2] * px[2]).clamp(0.0, 1.0))
        .collect();
    Ok(Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}

/// Target dimensions when bounding the longer side by `limit`.
pub fn bounded_dims(width: usize, height: usize, limit: usize) -> (usize, usize) {
    let side = width.max(height);
    if side <= limit {
        return (width, height);
    }
    let scale = limit as f64 / side as f64;
    let w = ((width as f64 * scale).round() as usize).max(1);
    let h = ((height as f64 * scale).round() as usize).max(1);
    (w, h)
}

/// Shrinks the image so its longer side is at most `limit`, with bilinear
/// sampling. Images already within the bound are returned unchanged.
pub fn resize_max_side(img: &Raster, limit: usize) -> Raster {
    let (w, h) = bounded_dims(img.width, img.height, limit.max(1));
    if (w, h) == (img.width, img.height) {
        return img.clone();
    }
    let sx = img.width as f64 / w as f64;
    let sy = img.height as f64 / h as f64;
    let mut out = Raster::new(w, h, img.channels);
    for y in 0..h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..img.channels {
                let v = img.sample_clamped(src_x, src_y, c);
                out.set(x, y, c, v);
            }
        }
    }
    out
}

const BINS: usize = 256;

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f64).round() as usize).min(BINS - 1)
}

/// 256-bin histogram equalization: each pixel maps to the normalized
/// cumulative histogram at its bin.
pub fn equalize_histogram(img: &Raster) -> Result<Raster> {
    if img.channels != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: img.channels,
        });
    }
    let mut hist = [0usize; BINS];
    for &v in &img.data {
        hist[bin_of(v)] += 1;
    }
    let total = img.data.len().max(1) as f64;
    let mut cdf = [0.0; BINS];
    let mut acc = 0usize;
    for (k, count) in hist.iter().enumerate() {
        acc += count;
        cdf[k] = acc as f64 / total;
    }
    let data = img.data.iter().map(|&v| cdf[bin_of(v)]).collect();
    Ok(Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian smoothing, clamp-to-edge borders.
pub fn gaussian_blur(img: &Raster, sigma: f64) -> Result<Raster> {
    if img.channels != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: img.channels,
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        let row = &img.data[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x + k as isize - r).clamp(0, w - 1);
                acc += t * row[xx as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y + k as isize - r).clamp(0, h - 1);
                acc += t * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data: out,
    })
}
