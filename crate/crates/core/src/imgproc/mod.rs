//! Cell image preprocessing: decode, resize to the classifier resolution,
//! 7×7 Gaussian blur, Canny edges, and assembly of the model input tensor.

mod canny;

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use canny::{canny, non_max_suppression, sobel, to_gray, Gradients};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot decode image: {0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("image dims {width}x{height}x{channels} do not match {len} pixel bytes")]
    Dims {
        width: u32,
        height: u32,
        channels: u8,
        len: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) || pixels.len() != (width * height) as usize * channels as usize {
            return Err(ImageError::Dims {
                width,
                height,
                channels,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Self {
            width,
            height,
            channels: 3,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.pixels[((y * self.width + x) as usize) * self.channels as usize + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = ((y * self.width + x) as usize) * self.channels as usize + c as usize;
        self.pixels[i] = v;
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    /// Copies the `w`×`h` region at (`x`, `y`); the region must lie inside.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Image {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside image");
        let c = self.channels as usize;
        let mut pixels = Vec::with_capacity((w * h) as usize * c);
        for row in y..y + h {
            let start = ((row * self.width + x) as usize) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * c]);
        }
        Image {
            width: w,
            height: h,
            channels: self.channels,
            pixels,
        }
    }

    /// Pastes `patch` with its top-left corner at (`x`, `y`), clipping at borders.
    pub fn paste(&mut self, patch: &Image, x: u32, y: u32) {
        let patch = if patch.channels == self.channels { patch.clone() } else { patch.to_rgb() };
        for py in 0..patch.height.min(self.height.saturating_sub(y)) {
            for px in 0..patch.width.min(self.width.saturating_sub(x)) {
                for c in 0..self.channels {
                    self.set(x + px, y + py, c, patch.get(px, py, c));
                }
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut out),
            &self.pixels,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| ImageError::Format(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Decodes PNG or JPEG bytes, keeping grayscale images single-channel.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory(bytes).map_err(|e| ImageError::Format(e.to_string()))?;
    let (width, height) = (dynimg.width(), dynimg.height());
    if width == 0 || height == 0 {
        return Err(ImageError::Format("zero-sized image".into()));
    }
    let (channels, pixels) = if dynimg.color().has_color() {
        (3, dynimg.into_rgb8().into_raw())
    } else {
        (1, dynimg.into_luma8().into_raw())
    };
    Image::new(width, height, channels, pixels).map_err(|e| ImageError::Format(e.to_string()))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}

/// Bilinear resize with half-pixel-center mapping: destination pixel `d`
/// samples source coordinate `(d + 0.5) · src/dst − 0.5`, clamped to the image.
pub fn resize_bilinear(image: &Image, out_w: u32, out_h: u32) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::Param(format!("resize target {out_w}x{out_h} must be positive")));
    }
    if out_w == image.width && out_h == image.height {
        return Ok(image.clone());
    }
    let taps = |src: u32, dst: u32| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(src as usize - 1);
                let i1 = (i0 + 1).min(src as usize - 1);
                (i0, i1, (s - i0 as f64).min(1.0) as f32)
            })
            .collect()
    };
    let xs = taps(image.width, out_w);
    let ys = taps(image.height, out_h);
    let c = image.channels as usize;
    let w = image.width as usize;
    let p = &image.pixels;
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |x: usize, y: usize| p[(y * w + x) * c + ch] as f32;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(out_w, out_h, image.channels, out)
}

/// Normalized 2-D Gaussian kernel, `size`×`size`, entries ∝ exp(−(x²+y²)/2σ²).
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<Vec<f64>>> {
    let g = gaussian_kernel_1d(size, sigma)?;
    Ok(g.iter().map(|a| g.iter().map(|b| a * b).collect()).collect())
}

/// The separable factor of [`gaussian_kernel`], normalized to sum to 1.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(ImageError::Param(format!("gaussian kernel size {size} must be odd")));
    }
    if !(sigma > 0.0) {
        return Err(ImageError::Param(format!("gaussian sigma {sigma} must be positive")));
    }
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Sigma implied by a kernel size when none is given: 0.3·((k−1)/2 − 1) + 0.8.
pub fn sigma_for_kernel(size: usize) -> f64 {
    0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Per-channel Gaussian blur with replicated borders, rounded back to 8 bits.
pub fn gaussian_blur(image: &Image, config: &PreprocessConfig) -> Result<Image> {
    let k = gaussian_kernel_1d(config.gaussian_kernel_size, config.gaussian_sigma)?;
    let r = (k.len() / 2) as isize;
    let (w, h, c) = (image.width as isize, image.height as isize, image.channels as usize);
    let p = &image.pixels;
    // Horizontal pass into f64, then vertical pass; equal to the 2-D kernel.
    let mut tmp = vec![0.0f64; p.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (x + i as isize - r).clamp(0, w - 1);
                    acc += kv * p[((y * w + sx) as usize) * c + ch] as f64;
                }
                tmp[((y * w + x) as usize) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0u8; p.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y + i as isize - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * c + ch];
                }
                out[((y * w + x) as usize) * c + ch] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(image.width, image.height, image.channels, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Rgb,
    Edges,
    RgbPlusEdge,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Rgb => 3,
            InputMode::Edges => 1,
            InputMode::RgbPlusEdge => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Rgb => "rgb",
            InputMode::Edges => "edges",
            InputMode::RgbPlusEdge => "rgb_plus_edge",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(InputMode::Rgb),
            "edges" => Ok(InputMode::Edges),
            "rgb_plus_edge" => Ok(InputMode::RgbPlusEdge),
            other => Err(ImageError::Param(format!("unknown input mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_size: (u32, u32),
    pub gaussian_kernel_size: usize,
    pub gaussian_sigma: f64,
    pub canny_low: f32,
    pub canny_high: f32,
    pub input_mode: InputMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: (75, 75),
            gaussian_kernel_size: 7,
            gaussian_sigma: sigma_for_kernel(7),
            canny_low: 80.0,
            canny_high: 160.0,
            input_mode: InputMode::RgbPlusEdge,
        }
    }
}

impl PreprocessConfig {
    pub fn with_mode(input_mode: InputMode) -> Self {
        Self {
            input_mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussian_kernel_size.is_multiple_of(2) {
            return Err(ImageError::Param("gaussian kernel size must be odd".into()));
        }
        if !(self.canny_low > 0.0 && self.canny_low < self.canny_high) {
            return Err(ImageError::Param(format!(
                "canny thresholds must satisfy 0 < low < high, got {} / {}",
                self.canny_low, self.canny_high
            )));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(ImageError::Param("target size must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediate images of the preprocessing chain, for debugging dumps.
#[derive(Debug, Clone)]
pub struct Stages {
    pub resized: Image,
    pub blurred: Image,
    pub edges: Image,
}

pub fn preprocess_stages(image: &Image, config: &PreprocessConfig) -> Result<Stages> {
    config.validate()?;
    let resized = resize_bilinear(&image.to_rgb(), config.target_size.0, config.target_size.1)?;
    let blurred = gaussian_blur(&resized, config)?;
    let edges = canny(&blurred, config.canny_low, config.canny_high)?;
    Ok(Stages { resized, blurred, edges })
}

/// Resize → blur → Canny, emitted as a (1, C, H, W) float tensor in [0, 1].
///
/// RGB channels come from the resized image; the edge channel from the
/// blurred one.
pub fn build_input_tensor(image: &Image, config: &PreprocessConfig) -> Result<Tensor<f32>> {
    let (w, h) = (config.target_size.0 as usize, config.target_size.1 as usize);
    let plane = w * h;
    let mode = config.input_mode;
    let mut data = vec![0.0f32; mode.channels() * plane];
    let needs_edges = mode != InputMode::Rgb;
    let (resized, edges) = if needs_edges {
        let s = preprocess_stages(image, config)?;
        (s.resized, Some(s.edges))
    } else {
        config.validate()?;
        (resize_bilinear(&image.to_rgb(), w as u32, h as u32)?, None)
    };
    if mode != InputMode::Edges {
        for (i, px) in resized.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
    }
    if let Some(edges) = edges {
        let off = (mode.channels() - 1) * plane;
        for (i, &v) in edges.pixels.iter().enumerate() {
            data[off + i] = v as f32 / 255.0;
        }
    }
    Ok(Tensor::new([1, mode.channels(), h, w], data).expect("buffer sized from config"))
}

/// Sum of absolute differences between horizontally and vertically adjacent pixels.
pub fn total_variation(image: &Image) -> u64 {
    let (w, h) = (image.width, image.height);
    let mut tv = 0u64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..image.channels {
                let v = image.get(x, y, c) as i32;
                if x + 1 < w {
                    tv += (v - image.get(x + 1, y, c) as i32).unsigned_abs() as u64;
                }
                if y + 1 < h {
                    tv += (v - image.get(x, y + 1, c) as i32).unsigned_abs() as u64;
                }
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_2x2() {
        let img = Image::new(2, 2, 3, vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]).unwrap();
        let back = decode_image(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn truncated_png_is_format_error() {
        let bytes = Image::filled(8, 8, [1, 2, 3]).encode_png().unwrap();
        assert!(matches!(decode_image(&bytes[..bytes.len() / 2]), Err(ImageError::Format(_))));
        assert!(matches!(decode_image(b"not an image"), Err(ImageError::Format(_))));
    }

    #[test]
    fn jpeg_header_dims() {
        let img = Image::filled(75, 75, [200, 120, 140]);
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut out),
            img.pixels(),
            75,
            75,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Jpeg,
        )
        .unwrap();
        let back = decode_image(&out).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (75, 75, 3));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::new(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
        let c = Image::filled(7, 5, [90, 91, 92]);
        let r = resize_bilinear(&c, 13, 3).unwrap();
        assert!(r.pixels().chunks(3).all(|p| p == [90, 91, 92]));
        assert!(resize_bilinear(&c, 0, 3).is_err());
    }

    #[test]
    fn resize_half_pixel_row() {
        // Evaluated by hand: source x = (d + 0.5)/2 − 0.5 → −0.25, 0.25, 0.75, 1.25.
        let img = Image::new(2, 1, 1, vec![0, 200]).unwrap();
        let r = resize_bilinear(&img, 4, 1).unwrap();
        assert_eq!(r.pixels(), &[0, 50, 150, 200]);
    }

    #[test]
    fn kernel_properties() {
        let k = gaussian_kernel(7, 1.4).unwrap();
        let sum: f64 = k.iter().flatten().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(k[i][j], k[j][i]);
                assert!((k[i][j] - k[6 - i][j]).abs() < 1e-18);
            }
        }
        assert!(matches!(gaussian_kernel(6, 1.4), Err(ImageError::Param(_))));
        assert!((sigma_for_kernel(7) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn blur_keeps_constant_and_dims() {
        let img = Image::filled(11, 9, [17, 130, 250]);
        let b = gaussian_blur(&img, &PreprocessConfig::default()).unwrap();
        assert_eq!(b, img);
    }

    #[test]
    fn input_tensor_shapes() {
        let img = Image::filled(40, 60, [120, 80, 200]);
        for (mode, c) in [(InputMode::Rgb, 3), (InputMode::Edges, 1), (InputMode::RgbPlusEdge, 4)] {
            let t = build_input_tensor(&img, &PreprocessConfig::with_mode(mode)).unwrap();
            assert_eq!(t.shape(), &[1, c, 75, 75]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let edges = build_input_tensor(&img, &PreprocessConfig::with_mode(InputMode::Edges)).unwrap();
        assert!(edges.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_thresholds_rejected() {
        let cfg = PreprocessConfig {
            canny_low: 160.0,
            canny_high: 80.0,
            ..Default::default()
        };
        assert!(build_input_tensor(&Image::filled(5, 5, [0, 0, 0]), &cfg).is_err());
    }
}
