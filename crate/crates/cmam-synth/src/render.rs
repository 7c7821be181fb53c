//! Line rendering: glyphs are placed left to right with jittered styles,
//! spacing, and baseline, then the whole line is normalized, slanted, and
//! noised.

use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::glyph::{GlyphSpec, Seg};

pub const LINE_HEIGHT: usize = 32;
/// Glyph design box in pixels.
const GLYPH_W: f64 = 12.0;
const GLYPH_H: f64 = 20.0;
/// Each glyph's ink is confined to a 32x32 cell around its box.
const CELL: usize = 32;

/// Grayscale image with ink = 1 on background = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        GrayImage { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn blend_max(&mut self, y: usize, x: usize, v: f64) {
        let p = &mut self.pixels[y * self.width + x];
        if v > *p {
            *p = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSample {
    pub image: GrayImage,
    pub label: Vec<usize>,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Inter-glyph spacing bounds in pixels (inclusive).
    pub spacing: (usize, usize),
    /// Baseline jitter in pixels, drawn from `[-baseline_jitter, +..]`.
    pub baseline_jitter: f64,
    /// Whole-line slant bound in degrees.
    pub slant_deg: f64,
    /// Upper bound of the per-line Gaussian pixel-noise sigma.
    pub noise_sigma_max: f64,
    /// Background margin on each side in pixels.
    pub margin: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            spacing: (1, 4),
            baseline_jitter: 2.0,
            slant_deg: 5.0,
            noise_sigma_max: 0.05,
            margin: 3,
        }
    }
}

impl RenderConfig {
    /// No spacing variation, slant, or noise; with zeroed glyph jitter the
    /// render becomes bit-reproducible across arbitrary RNG states.
    pub fn frozen() -> Self {
        RenderConfig {
            spacing: (2, 2),
            baseline_jitter: 0.0,
            slant_deg: 0.0,
            noise_sigma_max: 0.0,
            margin: 3,
        }
    }

    /// Width bounds for a given label length, from the advance accounting.
    pub fn width_bounds(&self, len: usize) -> (usize, usize) {
        let lo = 2 * self.margin + len * (GLYPH_W as usize + self.spacing.0);
        let hi = 2 * self.margin + len * (GLYPH_W as usize + self.spacing.1);
        (lo, hi)
    }
}

fn dist_point_segment(px: f64, py: f64, s: &Seg) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - s.x0) * dx + (py - s.y0) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (s.x0 + t * dx, s.y0 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one glyph into the canvas with an independent style draw. Ink
/// is clamped to the glyph's 32x32 cell.
fn draw_glyph<R: Rng>(
    canvas: &mut GrayImage,
    spec: &GlyphSpec,
    pen_x: f64,
    baseline_amplitude: f64,
    rng: &mut R,
) {
    let j = spec.jitter;
    let rot = rng.gen_range(-j.rotation..=j.rotation);
    let shear = rng.gen_range(-j.shear..=j.shear);
    let thickness = rng.gen_range(j.thickness.0..=j.thickness.1);
    let scale = rng.gen_range(j.scale.0..=j.scale.1);
    let baseline = rng.gen_range(-baseline_amplitude..=baseline_amplitude);

    let top = (LINE_HEIGHT as f64 - GLYPH_H) / 2.0;
    let (sin, cos) = rot.sin_cos();
    let map = |u: f64, v: f64| -> (f64, f64) {
        // center, scale, shear, rotate, place
        let (mut x, y) = ((u - 0.5) * scale, (v - 0.5) * scale);
        x += shear * y;
        let (rx, ry) = (x * cos - y * sin, x * sin + y * cos);
        (
            pen_x + (rx + 0.5) * GLYPH_W,
            top + (ry + 0.5) * GLYPH_H + baseline,
        )
    };
    let segments: Vec<Seg> = spec
        .segments
        .iter()
        .map(|s| {
            let (x0, y0) = map(s.x0, s.y0);
            let (x1, y1) = map(s.x1, s.y1);
            Seg { x0, y0, x1, y1 }
        })
        .collect();

    let cell_x0 = (pen_x + GLYPH_W / 2.0 - CELL as f64 / 2.0).floor().max(0.0) as usize;
    let cell_x1 = (cell_x0 + CELL).min(canvas.width);
    let half = thickness / 2.0;
    for s in &segments {
        let x_lo = (s.x0.min(s.x1) - half - 1.0).floor().max(cell_x0 as f64) as usize;
        let x_hi = (s.x0.max(s.x1) + half + 1.0).ceil().min(cell_x1 as f64) as usize;
        let y_lo = (s.y0.min(s.y1) - half - 1.0).floor().max(0.0) as usize;
        let y_hi = (s.y0.max(s.y1) + half + 1.0).ceil().min(canvas.height as f64) as usize;
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let d = dist_point_segment(x as f64 + 0.5, y as f64 + 0.5, s);
                let v = (half + 0.5 - d).clamp(0.0, 1.0);
                if v > 0.0 {
                    canvas.blend_max(y, x, v);
                }
            }
        }
    }
}

fn contrast_stretch(img: &mut GrayImage) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &p in &img.pixels {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if hi > lo {
        for p in img.pixels.iter_mut() {
            *p = (*p - lo) / (hi - lo);
        }
    }
}

fn slant(img: &GrayImage, angle_deg: f64) -> GrayImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let t = angle_deg.to_radians().tan();
    let cy = img.height as f64 / 2.0;
    let mut out = GrayImage::zeros(img.height, img.width);
    for y in 0..img.height {
        let shift = t * (y as f64 - cy);
        for x in 0..img.width {
            let src = x as f64 - shift;
            let x0 = src.floor();
            let frac = src - x0;
            let sample = |xi: f64| -> f64 {
                if xi < 0.0 || xi >= img.width as f64 {
                    0.0
                } else {
                    img.get(y, xi as usize)
                }
            };
            out.pixels[y * img.width + x] = sample(x0) * (1.0 - frac) + sample(x0 + 1.0) * frac;
        }
    }
    out
}

/// Renders a label sequence to a 32-row line image: jittered glyphs with
/// random spacing and baseline, then contrast normalization, global slant,
/// and Gaussian pixel noise.
pub fn render_line<R: Rng>(
    label: &[usize],
    glyphs: &[GlyphSpec],
    rng: &mut R,
    cfg: &RenderConfig,
) -> Result<LineSample, String> {
    if label.is_empty() {
        return Err("cannot render an empty label".to_string());
    }
    let mut specs = Vec::with_capacity(label.len());
    for &c in label {
        let spec = glyphs
            .iter()
            .find(|g| g.class == c)
            .ok_or_else(|| format!("no glyph for class {c}"))?;
        specs.push(spec);
    }

    let spacings: Vec<usize> = (0..label.len())
        .map(|_| rng.gen_range(cfg.spacing.0..=cfg.spacing.1))
        .collect();
    let width = 2 * cfg.margin
        + specs.len() * GLYPH_W as usize
        + spacings.iter().sum::<usize>();
    let mut canvas = GrayImage::zeros(LINE_HEIGHT, width);

    let mut pen_x = cfg.margin as f64;
    for (spec, spacing) in specs.iter().zip(&spacings) {
        draw_glyph(&mut canvas, spec, pen_x, cfg.baseline_jitter, rng);
        pen_x += GLYPH_W + *spacing as f64;
    }

    contrast_stretch(&mut canvas);
    let angle = if cfg.slant_deg > 0.0 {
        rng.gen_range(-cfg.slant_deg..=cfg.slant_deg)
    } else {
        0.0
    };
    let mut out = slant(&canvas, angle);
    let sigma = if cfg.noise_sigma_max > 0.0 {
        rng.gen_range(0.0..=cfg.noise_sigma_max)
    } else {
        0.0
    };
    if sigma > 0.0 {
        for p in out.pixels.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *p = (*p + sigma * n).clamp(0.0, 1.0);
        }
    }
    Ok(LineSample { image: out, label: label.to_vec(), id: 0 })
}
