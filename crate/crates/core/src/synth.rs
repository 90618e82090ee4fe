//! Seeded synthetic data: seven-segment glyphs drawn as dark strokes on a
//! light, unevenly lit ground, textured clutter for negatives, and whole
//! frames with annotations. Everything here is deterministic given the RNG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Annotation, BoxClass, LabeledBox};
use crate::features::Aperture;
use crate::imaging::{resample_bilinear, GrayImage, Rect};

/// Segments a..g lit for each digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true; 7],
    [true, true, true, true, false, true, true],
];

pub fn seven_segment(digit: u8) -> [bool; 7] {
    SEGMENTS[digit as usize % 10]
}

/// Approximately normal noise (Irwin–Hall with four terms).
fn noise(rng: &mut impl Rng, sigma: f64) -> f64 {
    let s: f64 = (0..4).map(|_| rng.random::<f64>()).sum();
    (s - 2.0) * sigma * 3f64.sqrt()
}

fn fill(canvas: &mut [f64], width: usize, r: Rect, v: f64) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            canvas[y * width + x] = v;
        }
    }
}

/// Light ground with a random linear illumination gradient.
fn lit_ground(rng: &mut impl Rng, width: usize, height: usize, base: f64) -> Vec<f64> {
    let gx = rng.random_range(-1.0..1.0) * 40.0 / width as f64;
    let gy = rng.random_range(-1.0..1.0) * 40.0 / height as f64;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push(base + gx * (x as f64 - cx) + gy * (y as f64 - cy));
        }
    }
    out
}

fn finish(rng: &mut impl Rng, width: usize, height: usize, canvas: &[f64], sigma: f64) -> GrayImage {
    let mut i = 0;
    GrayImage::from_fn(width, height, |_, _| {
        let v = canvas[i] + noise(rng, sigma);
        i += 1;
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Draws the lit segments of `digit` into the box `(x0, y0, gw, gh)`.
fn draw_segments(canvas: &mut [f64], width: usize, digit: u8, b: Rect, t: usize, ink: f64) {
    let seg = seven_segment(digit);
    let mid = b.y + b.h / 2 - t / 2;
    let half = b.h / 2 + t.div_ceil(2);
    let rects = [
        Rect::new(b.x, b.y, b.w, t),
        Rect::new(b.right() - t, b.y, t, half),
        Rect::new(b.right() - t, mid, t, b.bottom() - mid),
        Rect::new(b.x, b.bottom() - t, b.w, t),
        Rect::new(b.x, mid, t, b.bottom() - mid),
        Rect::new(b.x, b.y, t, half),
        Rect::new(b.x, mid, b.w, t),
    ];
    for (on, r) in seg.iter().zip(rects) {
        if *on {
            fill(canvas, width, r, ink);
        }
    }
}

/// A jittered glyph of `digit` filling an aperture-sized patch: random
/// sub-pixel-free shift of up to one pixel, stroke width, ink/ground levels,
/// illumination gradient and sensor noise.
pub fn render_glyph(rng: &mut impl Rng, digit: u8, ap: Aperture) -> GrayImage {
    let (w, h) = (ap.width, ap.height);
    let ground = rng.random_range(150.0..235.0);
    let ink = ground - rng.random_range(70.0..140.0);
    let mut canvas = lit_ground(rng, w, h, ground);
    let mx = (w / 6).max(1);
    let my = (h / 10).max(1);
    let dx = rng.random_range(0..=2) as isize - 1;
    let dy = rng.random_range(0..=2) as isize - 1;
    let gx = (mx as isize + dx).max(0) as usize;
    let gy = (my as isize + dy).max(0) as usize;
    let gw = (w - 2 * mx).min(w - gx);
    let gh = (h - 2 * my).min(h - gy);
    let t = rng.random_range(2..=3).min(gw / 3).max(1);
    draw_segments(&mut canvas, w, digit, Rect::new(gx, gy, gw, gh), t, ink);
    let sigma = rng.random_range(3.0..10.0);
    finish(rng, w, h, &canvas, sigma)
}

/// Smooth random texture: a coarse random grid bilinearly upsampled.
fn value_noise(rng: &mut impl Rng, w: usize, h: usize, cell: usize, lo: f64, hi: f64) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(lo..hi)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let fy = y as f64 / cell as f64;
            let (ix, iy) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
            let bot = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Negative patch: smooth texture, random bar clutter, or gradient noise.
pub fn render_clutter(rng: &mut impl Rng, ap: Aperture) -> GrayImage {
    let (w, h) = (ap.width, ap.height);
    let kind = rng.random_range(0..10);
    let mut canvas = if kind < 4 {
        let cell = rng.random_range(2..=6);
        let lo = rng.random_range(0.0..160.0);
        let hi = lo + rng.random_range(20.0..120.0);
        value_noise(rng, w, h, cell, lo, hi)
    } else {
        let base = rng.random_range(60.0..235.0);
        lit_ground(rng, w, h, base)
    };
    if (4..8).contains(&kind) {
        let ink = rng.random_range(0.0..120.0);
        for _ in 0..rng.random_range(1..=4) {
            let t = rng.random_range(1..=3);
            let r = if rng.random_bool(0.5) {
                let len = rng.random_range(t..=w);
                Rect::new(rng.random_range(0..=w - len), rng.random_range(0..=h - t), len, t)
            } else {
                let len = rng.random_range(t..=h);
                Rect::new(rng.random_range(0..=w - t), rng.random_range(0..=h - len), t, len)
            };
            fill(&mut canvas, w, r, ink);
        }
    }
    let sigma = if kind >= 8 { rng.random_range(10.0..40.0) } else { rng.random_range(2.0..10.0) };
    finish(rng, w, h, &canvas, sigma)
}

/// The glyph-vs-clutter patch task: `n_pos` jittered glyphs of `digit`
/// and `n_neg` clutter patches.
pub fn bars_task(seed: u64, ap: Aperture, digit: u8, n_pos: usize, n_neg: usize) -> (Vec<GrayImage>, Vec<GrayImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = (0..n_pos).map(|_| render_glyph(&mut rng, digit, ap)).collect();
    let neg = (0..n_neg).map(|_| render_clutter(&mut rng, ap)).collect();
    (pos, neg)
}

/// Light textured background for whole frames.
pub fn background(rng: &mut impl Rng, width: usize, height: usize) -> GrayImage {
    let canvas = value_noise(rng, width, height, 8, 150.0, 230.0);
    finish(rng, width, height, &canvas, 4.0)
}

/// A frame with one glyph of `digit` per entry of `boxes`, each rendered
/// at the box size. Returns the frame and its annotation.
pub fn glyph_frame(rng: &mut impl Rng, id: &str, width: usize, height: usize, digit: u8, boxes: &[Rect]) -> (GrayImage, Annotation) {
    let mut frame = background(rng, width, height);
    let mut ann = Annotation::new(id);
    for &b in boxes {
        let glyph = render_glyph(rng, digit, Aperture::new(b.w, b.h));
        frame.paste(&glyph, b.x, b.y);
        ann.boxes.push(LabeledBox {
            rect: b,
            class: BoxClass::Digit(digit),
        });
    }
    (frame, ann)
}

/// Frames with a single glyph at a random position and a random scale in
/// `[1, max_scale]` times the aperture.
pub fn glyph_frames(seed: u64, n: usize, width: usize, height: usize, ap: Aperture, digit: u8, max_scale: f64) -> Vec<(GrayImage, Annotation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = rng.random_range(1.0..=max_scale);
            let bw = ((ap.width as f64 * s).round() as usize).min(width);
            let bh = ((ap.height as f64 * s).round() as usize).min(height);
            let b = Rect::new(rng.random_range(0..=width - bw), rng.random_range(0..=height - bh), bw, bh);
            glyph_frame(&mut rng, &format!("frame{i:04}"), width, height, digit, &[b])
        })
        .collect()
}

/// A number plate: light panel between two dark rails holding `digits` as
/// evenly spaced glyphs. Returns the plate image and the digit boxes in
/// plate coordinates.
pub fn render_plate(rng: &mut impl Rng, digits: &str, width: usize, height: usize) -> (GrayImage, Vec<LabeledBox>) {
    let ground = rng.random_range(190.0..235.0);
    let mut canvas = lit_ground(rng, width, height, ground);
    // Dark rails along the top and bottom edges; no side rails, whose
    // corners would read as a "7".
    let border = (height / 12).max(1);
    let ink = rng.random_range(10.0..70.0);
    fill(&mut canvas, width, Rect::new(0, 0, width, border), ink);
    fill(&mut canvas, width, Rect::new(0, height - border, width, border), ink);
    let n = digits.len().max(1);
    let slot = (width - 2 * border) / n;
    let gh = height * 3 / 5;
    let gw = (gh / 2).min(slot * 3 / 4);
    let y = (height - gh) / 2;
    let t = (gw / 5).max(2);
    let mut boxes = Vec::new();
    for (i, ch) in digits.bytes().enumerate() {
        let d = ch - b'0';
        let x = border + i * slot + (slot - gw) / 2;
        let r = Rect::new(x, y, gw, gh);
        draw_segments(&mut canvas, width, d, r, t, ink);
        boxes.push(LabeledBox {
            rect: r,
            class: BoxClass::Digit(d),
        });
    }
    (finish(rng, width, height, &canvas, 3.0), boxes)
}

/// A frame with one plate showing `digits` pasted at `plate`. The
/// annotation holds the number box and the digit boxes in frame coordinates.
pub fn plate_frame(rng: &mut impl Rng, id: &str, width: usize, height: usize, digits: &str, plate: Rect) -> (GrayImage, Annotation) {
    // Darker surroundings than the panel, as with a plate on a car body.
    let canvas = value_noise(rng, width, height, 8, 60.0, 140.0);
    let mut frame = finish(rng, width, height, &canvas, 4.0);
    let (img, boxes) = render_plate(rng, digits, plate.w, plate.h);
    frame.paste(&img, plate.x, plate.y);
    let mut ann = Annotation::new(id);
    ann.boxes.push(LabeledBox {
        rect: plate,
        class: BoxClass::Number,
    });
    for b in boxes {
        ann.boxes.push(LabeledBox {
            rect: b.rect.translate(plate.x, plate.y),
            class: b.class,
        });
    }
    (frame, ann)
}

/// Resizes an arbitrary patch to the aperture (bilinear).
pub fn to_aperture(img: &GrayImage, ap: Aperture) -> GrayImage {
    resample_bilinear(img, img.bounds(), ap.width, ap.height).expect("non-empty image")
}
