//! Shared fixtures for the benchmarks.

use nlbp_core::classifiers::train_cascade;
use nlbp_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn noise_frame(seed: u64, width: usize, height: usize) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(width, height, |_, _| rng.random())
}

/// A frame of clutter with a few glyphs of `digit` pasted in.
pub fn glyph_frame(seed: u64, width: usize, height: usize, digit: u8) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = synth::background(&mut rng, width, height);
    for _ in 0..4 {
        let g = synth::render_glyph(&mut rng, digit, Aperture::DIGIT);
        frame.paste(&g, rng.random_range(0..=width - g.width()), rng.random_range(0..=height - g.height()));
    }
    frame
}

/// A small digit cascade trained on the synthetic glyph task.
pub fn digit_cascade(family: FeatureFamily) -> Cascade {
    let (pos, neg) = synth::bars_task(1, Aperture::DIGIT, 3, 600, 6000);
    let cfg = CascadeConfig {
        family,
        far_target: 1e-3,
        seed: 1,
        ..Default::default()
    };
    train_cascade(DetectorLabel::Digit(3), Aperture::DIGIT, &pos, &neg, &cfg).expect("training succeeds").0
}
