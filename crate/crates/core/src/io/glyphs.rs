use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::io::dataset::{Dataset, Split};
use crate::network::{BACKGROUND_CLASS, CHARACTER_CLASSES};
use crate::par::{self, Execution};
use crate::tensor::FeatureMap;

/// Side of a generated patch.
pub const GLYPH_SIZE: usize = 24;

/// Rendered glyph box in pixels (width, height).
const BOX: (f64, f64) = (16.0, 20.0);
const NOISE_SIGMA: f64 = 0.1;
const MIN_CONTRAST: f64 = 0.3;

/// 5x7 bitmaps, one byte per row, bit 4 leftmost. Letters A-Z then digits 0-9.
#[rustfmt::skip]
const FONT: [[u8; 7]; CHARACTER_CLASSES] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
    [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
    [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
    [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
    [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
    [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
    [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
    [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

/// Character for a label, `None` for the background class.
pub fn label_char(label: usize) -> Option<char> {
    match label {
        0..=25 => Some((b'A' + label as u8) as char),
        26..=35 => Some((b'0' + (label - 26) as u8) as char),
        _ => None,
    }
}

fn font_pixel(glyph: &[u8; 7], col: isize, row: isize) -> f64 {
    if !(0..5).contains(&col) || !(0..7).contains(&row) {
        return 0.0;
    }
    f64::from((glyph[row as usize] >> (4 - col)) & 1)
}

/// Bilinear sample of the bitmap at font coordinates (pixel centers at +0.5).
fn coverage(glyph: &[u8; 7], fx: f64, fy: f64) -> f64 {
    let (x, y) = (fx - 0.5, fy - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (x - x0, y - y0);
    let (c, r) = (x0 as isize, y0 as isize);
    let top = font_pixel(glyph, c, r) * (1.0 - tx) + font_pixel(glyph, c + 1, r) * tx;
    let bottom = font_pixel(glyph, c, r + 1) * (1.0 - tx) + font_pixel(glyph, c + 1, r + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Background and foreground intensities at least `MIN_CONTRAST` apart.
fn intensities<R: Rng>(rng: &mut R) -> (f64, f64) {
    let contrast = rng.random_range(MIN_CONTRAST..0.8);
    let bg = rng.random_range(0.0..1.0 - contrast);
    (bg, bg + contrast)
}

fn render_character<R: Rng>(label: usize, rng: &mut R) -> Vec<f64> {
    let glyph = &FONT[label];
    let (bg, fg) = intensities(rng);
    let tx = rng.random_range(-3.0..=3.0);
    let ty = rng.random_range(-3.0..=3.0);
    let angle = rng.random_range(-15.0f64..=15.0).to_radians();
    let scale = rng.random_range(0.85..=1.15);
    let (sin, cos) = angle.sin_cos();
    let half = GLYPH_SIZE as f64 / 2.0;
    let mut out = Vec::with_capacity(GLYPH_SIZE * GLYPH_SIZE);
    for u in 0..GLYPH_SIZE {
        for v in 0..GLYPH_SIZE {
            let px = v as f64 + 0.5 - half - tx;
            let py = u as f64 + 0.5 - half - ty;
            let qx = (cos * px + sin * py) / scale;
            let qy = (-sin * px + cos * py) / scale;
            let fx = qx / BOX.0 * 5.0 + 2.5;
            let fy = qy / BOX.1 * 7.0 + 3.5;
            out.push(bg + (fg - bg) * coverage(glyph, fx, fy));
        }
    }
    out
}

/// Flat patch crossed by one to three random line segments.
fn render_background<R: Rng>(rng: &mut R) -> Vec<f64> {
    let (bg, fg) = intensities(rng);
    let mut out = vec![bg; GLYPH_SIZE * GLYPH_SIZE];
    let size = GLYPH_SIZE as f64;
    for _ in 0..rng.random_range(1..=3) {
        let (x0, y0) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let (x1, y1) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let width = rng.random_range(0.8..2.0);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = (dx * dx + dy * dy).max(1e-9);
        for u in 0..GLYPH_SIZE {
            for v in 0..GLYPH_SIZE {
                let (px, py) = (v as f64 + 0.5, u as f64 + 0.5);
                let t = (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0);
                let dist = ((px - x0 - t * dx).powi(2) + (py - y0 - t * dy).powi(2)).sqrt();
                let a = (width - dist + 0.5).clamp(0.0, 1.0);
                let p = &mut out[u * GLYPH_SIZE + v];
                *p = p.max(bg + (fg - bg) * a);
            }
        }
    }
    out
}

/// Subtracts the mean and divides by the standard deviation (floored at
/// `1e-6`), computed in `f64`.
pub fn normalize_patch(patch: &mut [f32]) {
    if patch.is_empty() {
        return;
    }
    let n = patch.len() as f64;
    let mean = patch.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = patch.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-6);
    for x in patch.iter_mut() {
        *x = ((*x as f64 - mean) / std) as f32;
    }
}

fn render_raw(label: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = if label < CHARACTER_CLASSES { render_character(label, &mut rng) } else { render_background(&mut rng) };
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    clean.into_iter().map(|p| (p + noise.sample(&mut rng)) as f32).collect()
}

/// One normalized `1 x 24 x 24` patch of `label` (36 = background).
pub fn render_glyph(label: usize, seed: u64) -> FeatureMap<f32> {
    let mut data = render_raw(label, seed);
    normalize_patch(&mut data);
    FeatureMap::new(1, GLYPH_SIZE, GLYPH_SIZE, data).expect("patch shape")
}

/// Synthetic character patches: `per_class` samples of each of the 36
/// characters plus background patches making up `background_fraction` of the
/// result, shuffled. Deterministic per seed.
pub fn generate_glyphs(seed: u64, per_class: usize, background_fraction: f64, split: Split) -> Dataset {
    let chars = per_class * CHARACTER_CLASSES;
    let f = background_fraction.clamp(0.0, 0.99);
    let backgrounds = (chars as f64 * f / (1.0 - f)).round() as usize;
    let mut labels: Vec<usize> = (0..CHARACTER_CLASSES).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    labels.extend(std::iter::repeat_n(BACKGROUND_CLASS, backgrounds));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    let seeds: Vec<(usize, u64)> = labels.iter().map(|&l| (l, rng.next_u64())).collect();
    let samples = par::map(Execution::default(), &seeds, |&(l, s)| render_glyph(l, s));
    Dataset { samples, labels, split, seed }
}
