//! Procedural stroke glyphs: each class renders from a small program of
//! line segments on the unit box (arcs are flattened to polylines), with
//! per-draw style jitter.

use std::f64::consts::PI;

/// One stroke segment in unit-box coordinates; y grows downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seg {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> Seg {
    Seg { x0, y0, x1, y1 }
}

fn arc(cx: f64, cy: f64, r: f64, a0: f64, a1: f64, steps: usize) -> Vec<Seg> {
    let mut out = Vec::with_capacity(steps);
    let mut prev = (cx + r * a0.cos(), cy + r * a0.sin());
    for i in 1..=steps {
        let a = a0 + (a1 - a0) * i as f64 / steps as f64;
        let p = (cx + r * a.cos(), cy + r * a.sin());
        out.push(seg(prev.0, prev.1, p.0, p.1));
        prev = p;
    }
    out
}

/// Ranges the renderer draws styles from, one draw per glyph instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterRanges {
    /// Rotation in radians, drawn from `[-rotation, rotation]`.
    pub rotation: f64,
    /// Horizontal shear factor, drawn from `[-shear, shear]`.
    pub shear: f64,
    /// Stroke thickness in pixels.
    pub thickness: (f64, f64),
    /// Isotropic scale of the glyph box.
    pub scale: (f64, f64),
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            rotation: 0.14,
            shear: 0.15,
            thickness: (1.1, 2.0),
            scale: (0.85, 1.0),
        }
    }
}

impl JitterRanges {
    /// No variation at all; rendering becomes a pure function of the label.
    pub fn none() -> Self {
        JitterRanges { rotation: 0.0, shear: 0.0, thickness: (1.5, 1.5), scale: (1.0, 1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct GlyphSpec {
    /// Class index, 1-based (0 is the CTC blank and has no glyph).
    pub class: usize,
    pub name: &'static str,
    pub segments: Vec<Seg>,
    pub jitter: JitterRanges,
}

fn programs() -> Vec<(&'static str, Vec<Seg>)> {
    let mut list: Vec<(&'static str, Vec<Seg>)> = Vec::new();
    list.push(("vbar", vec![seg(0.5, 0.05, 0.5, 0.95)]));
    list.push(("hbar", vec![seg(0.05, 0.5, 0.95, 0.5)]));
    list.push(("slash", vec![seg(0.1, 0.9, 0.9, 0.1)]));
    list.push(("backslash", vec![seg(0.1, 0.1, 0.9, 0.9)]));
    list.push(("plus", vec![seg(0.5, 0.1, 0.5, 0.9), seg(0.1, 0.5, 0.9, 0.5)]));
    list.push(("cross", vec![seg(0.1, 0.1, 0.9, 0.9), seg(0.1, 0.9, 0.9, 0.1)]));
    list.push(("ell", vec![seg(0.15, 0.05, 0.15, 0.9), seg(0.15, 0.9, 0.9, 0.9)]));
    list.push(("tee", vec![seg(0.05, 0.1, 0.95, 0.1), seg(0.5, 0.1, 0.5, 0.95)]));
    list.push(("vee", vec![seg(0.1, 0.05, 0.5, 0.95), seg(0.5, 0.95, 0.9, 0.05)]));
    list.push(("wedge", vec![seg(0.1, 0.95, 0.5, 0.05), seg(0.5, 0.05, 0.9, 0.95)]));
    {
        let mut u = vec![seg(0.15, 0.05, 0.15, 0.6), seg(0.85, 0.05, 0.85, 0.6)];
        u.extend(arc(0.5, 0.6, 0.35, PI, 2.0 * PI, 8).into_iter().map(|s| Seg {
            x0: s.x0,
            y0: 1.2 - s.y0,
            x1: s.x1,
            y1: 1.2 - s.y1,
        }));
        list.push(("cup", u));
    }
    {
        let mut n = vec![seg(0.15, 0.95, 0.15, 0.4), seg(0.85, 0.95, 0.85, 0.4)];
        n.extend(arc(0.5, 0.4, 0.35, PI, 2.0 * PI, 8));
        list.push(("cap", n));
    }
    list.push(("ring", arc(0.5, 0.5, 0.42, 0.0, 2.0 * PI, 12)));
    list.push(("cee", arc(0.5, 0.5, 0.42, 0.25 * PI, 1.75 * PI, 10)));
    {
        let mut s_shape = arc(0.5, 0.27, 0.22, -0.5 * PI, 0.75 * PI, 7);
        s_shape.extend(arc(0.5, 0.73, 0.22, 1.75 * PI, 0.5 * PI, 7));
        list.push(("ess", s_shape));
    }
    list.push(("zee", vec![seg(0.1, 0.1, 0.9, 0.1), seg(0.9, 0.1, 0.1, 0.9), seg(0.1, 0.9, 0.9, 0.9)]));
    list.push(("en", vec![seg(0.15, 0.95, 0.15, 0.05), seg(0.15, 0.05, 0.85, 0.95), seg(0.85, 0.95, 0.85, 0.05)]));
    {
        let mut j = vec![seg(0.2, 0.1, 0.9, 0.1), seg(0.6, 0.1, 0.6, 0.7)];
        j.extend(arc(0.4, 0.7, 0.2, 0.0, PI, 6));
        list.push(("jay", j));
    }
    list.push(("gate", vec![seg(0.1, 0.1, 0.9, 0.1), seg(0.15, 0.1, 0.15, 0.95), seg(0.85, 0.1, 0.85, 0.95)]));
    list.push((
        "step",
        vec![seg(0.05, 0.25, 0.5, 0.25), seg(0.5, 0.25, 0.5, 0.75), seg(0.5, 0.75, 0.95, 0.75)],
    ));
    list
}

/// Number of distinct glyph programs available.
pub fn alphabet_size() -> usize {
    programs().len()
}

/// The first `vocab_size` glyphs (classes `1..=vocab_size`) with default
/// jitter ranges.
pub fn default_alphabet(vocab_size: usize) -> Result<Vec<GlyphSpec>, String> {
    let progs = programs();
    if vocab_size < 2 {
        return Err(format!("vocabulary needs at least 2 classes, got {vocab_size}"));
    }
    if vocab_size > progs.len() {
        return Err(format!(
            "vocabulary of {vocab_size} exceeds the {} available glyph programs",
            progs.len()
        ));
    }
    Ok(progs
        .into_iter()
        .take(vocab_size)
        .enumerate()
        .map(|(i, (name, segments))| GlyphSpec {
            class: i + 1,
            name,
            segments,
            jitter: JitterRanges::default(),
        })
        .collect())
}
