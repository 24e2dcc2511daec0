use std::collections::VecDeque;

use super::{Image, ImageError, Result};

/// Rec.601 luma, unrounded.
pub fn to_gray(image: &Image) -> Vec<f32> {
    match image.channels() {
        1 => image.pixels().iter().map(|&v| v as f32).collect(),
        _ => image
            .pixels()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
    pub magnitude: Vec<f32>,
}

/// 3×3 Sobel derivatives with replicated borders and their L2 magnitude.
pub fn sobel(gray: &[f32], width: usize, height: usize) -> Gradients {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        gray[y * width + x]
    };
    let n = width * height;
    let (mut gx, mut gy, mut magnitude) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..height as isize {
        for x in 0..width as isize {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx.push(dx);
            gy.push(dy);
            magnitude.push((dx * dx + dy * dy).sqrt());
        }
    }
    Gradients { gx, gy, magnitude }
}

/// Unit step along the gradient, quantized to one of four sectors.
fn sector_step(gx: f32, gy: f32) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Keeps a pixel only if it is a maximum along its gradient direction.
/// Ties are broken toward the pixel on the negative side of the gradient,
/// so plateaus two pixels wide thin to one. The 1-px image border is zeroed.
pub fn non_max_suppression(g: &Gradients, width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; width * height];
    if width < 3 || height < 3 {
        return out;
    }
    let m = &g.magnitude;
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let i = y * width + x;
            let v = m[i];
            if v == 0.0 {
                continue;
            }
            let (dx, dy) = sector_step(g.gx[i], g.gy[i]);
            let prev = m[(y as isize - dy) as usize * width + (x as isize - dx) as usize];
            let next = m[(y as isize + dy) as usize * width + (x as isize + dx) as usize];
            if v > prev && v >= next {
                out[i] = v;
            }
        }
    }
    out
}

/// Strong pixels (≥ high) seed edges; weak pixels in [low, high) survive only
/// when 8-connected to a strong pixel through other kept pixels.
fn hysteresis(thin: &[f32], width: usize, height: usize, low: f32, high: f32) -> Vec<u8> {
    let mut out = vec![0u8; thin.len()];
    let mut queue = VecDeque::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= high {
            out[i] = 255;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % width) as isize, (i / width) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if out[j] == 0 && thin[j] >= low {
                    out[j] = 255;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

/// Canny edge map: values 0 or 255, single channel. RGB input is converted
/// to luma first; thresholds are Sobel gradient magnitudes.
pub fn canny(image: &Image, low: f32, high: f32) -> Result<Image> {
    if !(low > 0.0 && low < high) {
        return Err(ImageError::Param(format!(
            "canny thresholds must satisfy 0 < low < high, got {low} / {high}"
        )));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let gray = to_gray(image);
    let grads = sobel(&gray, w, h);
    let thin = non_max_suppression(&grads, w, h);
    Image::new(image.width(), image.height(), 1, hysteresis(&thin, w, h, low, high))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> Image {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        Image::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = canny(&Image::filled(20, 20, [128, 128, 128]), 80.0, 160.0).unwrap();
        assert!(e.pixels().iter().all(|&v| v == 0));
    }

    #[test]
    fn thresholds_must_be_ordered() {
        let img = Image::filled(5, 5, [0, 0, 0]);
        assert!(canny(&img, 160.0, 80.0).is_err());
        assert!(canny(&img, 0.0, 80.0).is_err());
    }

    #[test]
    fn step_edge_is_one_pixel_wide() {
        let c = 10;
        let e = canny(&gray(24, 16, |x, _| if x < c { 0 } else { 255 }), 80.0, 160.0).unwrap();
        for y in 0..16 {
            for x in 0..24 {
                let on = e.get(x, y, 0) == 255;
                let expected = x == c - 1 && (1..15).contains(&y);
                assert_eq!(on, expected, "pixel ({x},{y})");
            }
        }
    }
}
