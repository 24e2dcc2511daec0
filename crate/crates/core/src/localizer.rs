//! Cell localization on whole smears: an image pyramid scanned by a sliding
//! window, each window scored by the cell classifier, then greedy
//! non-maximum suppression. The surviving boxes are the count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{build_input_tensor, resize_bilinear, Image, ImageError};
use crate::model::CellModel;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("image {width}x{height} is smaller than the minimum pyramid size {min_size}")]
    TooSmall { width: u32, height: u32, min_size: u32 },
    #[error("window {window} does not fit in a {width}x{height} image")]
    WindowTooLarge { window: u32, width: u32, height: u32 },
    #[error("invalid localize config: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = LocalizeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub window: u32,
    pub stride: u32,
    pub pyramid_scale: f64,
    pub min_size: u32,
    pub score_threshold: f32,
    pub nms_iou: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            window: 75,
            stride: 16,
            pyramid_scale: 1.25,
            min_size: 75,
            score_threshold: 0.5,
            nms_iou: 0.3,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.window == 0 {
            return Err(LocalizeError::Config("window and stride must be positive".into()));
        }
        if !(self.pyramid_scale > 1.0) {
            return Err(LocalizeError::Config(format!("pyramid scale {} must exceed 1", self.pyramid_scale)));
        }
        if self.window > self.min_size {
            return Err(LocalizeError::Config(format!(
                "window {} exceeds min_size {}",
                self.window, self.min_size
            )));
        }
        Ok(())
    }
}

/// Axis-aligned pixel box: covers columns `x..x + w` and rows `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPx {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoxPx {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn iou(&self, other: &BoxPx) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w).saturating_sub(self.x.max(other.x)) as u64;
        let iy = (self.y + self.h).min(other.y + other.h).saturating_sub(self.y.max(other.y)) as u64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub score: f32,
    pub level: usize,
}

impl Detection {
    pub fn bbox(&self) -> BoxPx {
        BoxPx::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub count: usize,
    pub detections: Vec<Detection>,
}

/// Level 0 is the original; each next level is `floor(previous / scale)` in
/// both dims, stopping before either dim drops under `min_size`.
pub fn build_pyramid(image: &Image, scale: f64, min_size: u32) -> Result<Vec<Image>> {
    if !(scale > 1.0) {
        return Err(LocalizeError::Config(format!("pyramid scale {scale} must exceed 1")));
    }
    if image.width() < min_size || image.height() < min_size {
        return Err(LocalizeError::TooSmall {
            width: image.width(),
            height: image.height(),
            min_size,
        });
    }
    let mut levels = vec![image.clone()];
    loop {
        let last = levels.last().expect("non-empty");
        let w = (last.width() as f64 / scale).floor() as u32;
        let h = (last.height() as f64 / scale).floor() as u32;
        if w < min_size || h < min_size {
            break;
        }
        let next = resize_bilinear(last, w, h)?;
        levels.push(next);
    }
    Ok(levels)
}

/// Top-left corners of every window position, row-major.
pub fn window_positions(width: u32, height: u32, window: u32, stride: u32) -> Result<Vec<(u32, u32)>> {
    if window > width || window > height || window == 0 || stride == 0 {
        return Err(LocalizeError::WindowTooLarge { window, width, height });
    }
    let xs: Vec<u32> = (0..=width - window).step_by(stride as usize).collect();
    Ok((0..=height - window)
        .step_by(stride as usize)
        .flat_map(|y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

pub fn slide_windows(image: &Image, window: u32, stride: u32) -> Result<Vec<(u32, u32, Image)>> {
    Ok(window_positions(image.width(), image.height(), window, stride)?
        .into_iter()
        .map(|(x, y)| (x, y, image.crop(x, y, window, window)))
        .collect())
}

/// Maps a box found at pyramid `level` back to original-image pixels,
/// clipped to the original bounds.
pub fn map_to_original(b: BoxPx, level: usize, scale: f64, width: u32, height: u32) -> BoxPx {
    let f = scale.powi(level as i32);
    let x = ((b.x as f64 * f).round() as u32).min(width - 1);
    let y = ((b.y as f64 * f).round() as u32).min(height - 1);
    let w = ((b.w as f64 * f).round() as u32).clamp(1, width - x);
    let h = ((b.h as f64 * f).round() as u32).clamp(1, height - y);
    BoxPx::new(x, y, w, h)
}

/// Greedy suppression: highest score first (ties to the smaller `(x, y)`),
/// dropping every remaining box whose IoU with a kept one exceeds the threshold.
pub fn nms(mut candidates: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (a.x, a.y).cmp(&(b.x, b.y)))
            .then_with(|| a.level.cmp(&b.level))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| k.bbox().iou(&c.bbox()) <= iou_threshold) {
            kept.push(c);
        }
    }
    kept
}

const SCORE_BATCH: usize = 64;

/// Every window above the score threshold at every pyramid level, mapped
/// back to original coordinates, in (level, y, x) order.
pub fn candidate_windows(image: &Image, model: &CellModel, config: &LocalizeConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    let levels = build_pyramid(image, config.pyramid_scale, config.min_size)?;
    let mut out = Vec::new();
    for (level, img) in levels.iter().enumerate() {
        let positions = window_positions(img.width(), img.height(), config.window, config.stride)?;
        for chunk in positions.chunks(SCORE_BATCH) {
            let inputs = chunk
                .iter()
                .map(|&(x, y)| build_input_tensor(&img.crop(x, y, config.window, config.window), &model.preprocess))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let scores = model.graph.forward(&Tensor::stack(&inputs)?)?;
            for (&(x, y), &score) in chunk.iter().zip(scores.data()) {
                if score >= config.score_threshold {
                    let b = map_to_original(
                        BoxPx::new(x, y, config.window, config.window),
                        level,
                        config.pyramid_scale,
                        image.width(),
                        image.height(),
                    );
                    out.push(Detection {
                        x: b.x,
                        y: b.y,
                        w: b.w,
                        h: b.h,
                        score,
                        level,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn detect_cells(image: &Image, model: &CellModel, config: &LocalizeConfig) -> Result<Localization> {
    let detections = nms(candidate_windows(image, model, config)?, config.nms_iou);
    Ok(Localization {
        count: detections.len(),
        detections,
    })
}

/// Copy of `image` (as RGB) with a 2-px red outline around each detection.
pub fn draw_boxes(image: &Image, detections: &[Detection]) -> Image {
    let mut out = image.to_rgb();
    let (w, h) = (out.width(), out.height());
    let mut paint = |x: u32, y: u32| {
        if x < w && y < h {
            out.set(x, y, 0, 255);
            out.set(x, y, 1, 0);
            out.set(x, y, 2, 0);
        }
    };
    for d in detections {
        let (x1, y1) = (d.x + d.w - 1, d.y + d.h - 1);
        for t in 0..2 {
            for x in d.x..=x1 {
                paint(x, d.y + t);
                paint(x, y1.saturating_sub(t));
            }
            for y in d.y..=y1 {
                paint(d.x + t, y);
                paint(x1.saturating_sub(t), y);
            }
        }
    }
    out
}
