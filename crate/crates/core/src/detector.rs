//! Multi-scale sliding-window scanning, non-maximum suppression and the
//! plate + digit ensemble that reads carriage numbers.
//!
//! Windows are scaled rather than the image: one integral image serves
//! every pyramid level and feature rectangles are scaled with the window
//! (coordinates rounded half up).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Cascade, CascadeDecision, DetectorLabel, NegativeMiner};
use crate::dataset::{normalize_number_plate, overlap};
use crate::error::{Error, Result};
use crate::features::{ScanGrid, Window};
use crate::imaging::{resample_bilinear, GrayImage, IntegralImage, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    #[serde(flatten)]
    pub grid: ScanGrid,
    pub nms_iou: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            grid: ScanGrid::default(),
            nms_iou: 0.3,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config("nms_iou must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: Rect,
    /// Vote of the last stage.
    pub score: f64,
    pub label: DetectorLabel,
    pub scale: f64,
}

/// Window counts of one scan. `per_stage[k]` is the number of windows that
/// reached stage `k`; it never grows with `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanStats {
    pub windows: u64,
    pub per_stage: Vec<u64>,
    pub accepted: u64,
}

/// Runs `cascade` at every lattice window of `frame`. Returns accepted
/// windows in (scale, y, x) order, before grouping.
pub fn scan(frame: &GrayImage, cascade: &Cascade, cfg: &ScanConfig) -> Result<(Vec<Detection>, ScanStats)> {
    scan_integral(&IntegralImage::new(frame), cascade, cfg)
}

pub fn scan_integral(ii: &IntegralImage, cascade: &Cascade, cfg: &ScanConfig) -> Result<(Vec<Detection>, ScanStats)> {
    cfg.validate()?;
    let ap = cascade.aperture;
    let scales = cfg.grid.scales(ap, ii.width(), ii.height());
    let mut stats = ScanStats {
        per_stage: vec![0; cascade.stage_count()],
        ..Default::default()
    };
    if scales.is_empty() {
        warn!(
            "{}x{} frame is smaller than the {} aperture at scale {}",
            ii.width(),
            ii.height(),
            ap,
            cfg.grid.min_scale
        );
        return Ok((Vec::new(), stats));
    }
    let rows: Vec<(f64, usize)> = scales
        .iter()
        .flat_map(|&s| cfg.grid.positions(s, ap.window(0, 0, s).h, ii.height()).map(move |y| (s, y)))
        .collect();
    let per_row: Vec<(Vec<Detection>, Vec<u64>, u64)> = rows
        .par_iter()
        .map(|&(s, y)| {
            let proto = ap.window(0, 0, s);
            let mut counters = vec![0u64; cascade.stage_count()];
            let mut found = Vec::new();
            let mut n = 0;
            for x in cfg.grid.positions(s, proto.w, ii.width()) {
                n += 1;
                if let CascadeDecision::Accept { score } = cascade.eval_unchecked(ii, Window::scaled(x, y, s), Some(&mut counters)) {
                    found.push(Detection {
                        rect: Rect::new(x, y, proto.w, proto.h),
                        score,
                        label: cascade.label,
                        scale: s,
                    });
                }
            }
            (found, counters, n)
        })
        .collect();
    let mut dets = Vec::new();
    for (found, counters, n) in per_row {
        stats.windows += n;
        for (a, c) in stats.per_stage.iter_mut().zip(counters) {
            *a += c;
        }
        dets.extend(found);
    }
    stats.accepted = dets.len() as u64;
    Ok((dets, stats))
}

fn nms_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.rect.x.cmp(&b.rect.x))
        .then(a.rect.y.cmp(&b.rect.y))
        .then(a.rect.w.cmp(&b.rect.w))
        .then(a.label.cmp(&b.label))
}

/// Greedy non-maximum suppression: visit detections by descending score
/// (ties by x, y, size, then label) and drop any whose IoU with an already
/// kept detection reaches `nms_iou`.
pub fn group_detections(mut dets: Vec<Detection>, nms_iou: f64) -> Vec<Detection> {
    dets.sort_by(nms_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| overlap(k.rect, d.rect) < nms_iou) {
            kept.push(d);
        }
    }
    kept
}

/// One tab-separated line per detection:
/// `image label x y w h score scale`.
pub fn format_record(image_id: &str, d: &Detection) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.4}",
        image_id, d.label, d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.score, d.scale
    )
}

pub fn format_records(image_id: &str, dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let _ = writeln!(s, "{}", format_record(image_id, d));
    }
    s
}

pub fn parse_record(line: &str) -> Result<(String, Detection)> {
    let f: Vec<&str> = line.split('\t').collect();
    let bad = || Error::Format(format!("bad detection record '{line}'"));
    if f.len() != 8 {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok((
        f[0].to_string(),
        Detection {
            label: f[1].parse().map_err(|_| bad())?,
            rect: Rect::new(num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?),
            score: real(f[6])?,
            scale: real(f[7])?,
        },
    ))
}

/// Mines negatives from frames: random lattice windows that the cascade
/// accepts, resampled to the aperture. Windows overlapping a marked box by
/// `max_overlap` IoU or more are never drawn. Draws are seeded and a window
/// is never returned twice.
pub struct FrameMiner {
    frames: Vec<IntegralImage>,
    images: Vec<GrayImage>,
    exclusions: Vec<Vec<Rect>>,
    max_overlap: f64,
    grid: ScanGrid,
    rng: ChaCha8Rng,
    used: HashSet<(usize, Rect)>,
    /// Draw budget per requested negative.
    pub draws_per_negative: usize,
}

impl FrameMiner {
    /// Miner over target-free frames.
    pub fn new(frames: Vec<GrayImage>, grid: ScanGrid, seed: u64) -> Self {
        let n = frames.len();
        Self::masked(frames.into_iter().zip(std::iter::repeat_n(Vec::new(), n)).collect(), 1.0, grid, seed)
    }

    /// Miner over annotated frames, keeping clear of each frame's boxes.
    pub fn masked(frames: Vec<(GrayImage, Vec<Rect>)>, max_overlap: f64, grid: ScanGrid, seed: u64) -> Self {
        let (images, exclusions): (Vec<GrayImage>, Vec<Vec<Rect>>) = frames.into_iter().unzip();
        FrameMiner {
            frames: images.iter().map(IntegralImage::new).collect(),
            images,
            exclusions,
            max_overlap,
            grid,
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
            draws_per_negative: 200,
        }
    }
}

impl NegativeMiner for FrameMiner {
    fn mine(&mut self, cascade: &Cascade, count: usize) -> Result<Vec<IntegralImage>> {
        let ap = cascade.aperture;
        let levels: Vec<Vec<f64>> = self.images.iter().map(|f| self.grid.scales(ap, f.width(), f.height())).collect();
        if levels.iter().all(Vec::is_empty) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for _ in 0..count.saturating_mul(self.draws_per_negative) {
            if out.len() == count {
                break;
            }
            let i = self.rng.random_range(0..self.frames.len());
            if levels[i].is_empty() {
                continue;
            }
            let s = levels[i][self.rng.random_range(0..levels[i].len())];
            let proto = ap.window(0, 0, s);
            let ii = &self.frames[i];
            let xs = self.grid.positions(s, proto.w, ii.width()).count();
            let ys = self.grid.positions(s, proto.h, ii.height()).count();
            let step = self.grid.step(s);
            let x = self.rng.random_range(0..xs) * step;
            let y = self.rng.random_range(0..ys) * step;
            let r = Rect::new(x, y, proto.w, proto.h);
            if self.used.contains(&(i, r)) || self.exclusions[i].iter().any(|&b| overlap(r, b) >= self.max_overlap) {
                continue;
            }
            if cascade.stages.is_empty() || cascade.eval_unchecked(ii, Window::scaled(x, y, s), None).accepted() {
                self.used.insert((i, r));
                let patch = resample_bilinear(&self.images[i], r, ap.width, ap.height)?;
                out.push(IntegralImage::new(&patch));
            }
        }
        Ok(out)
    }
}

/// The number-plate detector and one detector per digit.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub number: Cascade,
    pub digits: Vec<Cascade>,
}

impl Ensemble {
    pub fn new(number: Cascade, digits: Vec<Cascade>) -> Result<Self> {
        if number.label != DetectorLabel::Number {
            return Err(Error::Config(format!("plate detector is labelled '{}'", number.label)));
        }
        let mut seen = [false; 10];
        for c in &digits {
            match c.label {
                DetectorLabel::Digit(d) if !seen[d as usize] => seen[d as usize] = true,
                other => return Err(Error::Config(format!("unexpected or repeated digit detector '{other}'"))),
            }
        }
        Ok(Ensemble { number, digits })
    }

    /// Loads `number.json` and `digit0.json` .. `digit9.json` from `dir`;
    /// missing digit models are skipped.
    pub fn load(dir: &Path) -> Result<Self> {
        let number = Cascade::load(&dir.join("number.json"))?;
        let mut digits = Vec::new();
        for d in 0..10 {
            let p = dir.join(format!("digit{d}.json"));
            if p.exists() {
                digits.push(Cascade::load(&p)?);
            }
        }
        Ensemble::new(number, digits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadConfig {
    pub plate: ScanConfig,
    pub digit: ScanConfig,
}

impl Default for ReadConfig {
    fn default() -> Self {
        ReadConfig {
            plate: ScanConfig::default(),
            digit: ScanConfig {
                grid: ScanGrid {
                    stride: 1,
                    scale_step: 1.1,
                    min_scale: 1.0,
                    max_scale: 3.0,
                },
                nms_iou: 0.2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberReading {
    pub plate: Detection,
    pub digits: String,
    /// Kept digit detections in plate-strip coordinates, left to right.
    pub digit_detections: Vec<Detection>,
}

/// Scans a plate strip with every digit detector, suppresses overlaps across
/// labels (highest score wins, equal scores go to the lower digit) and
/// orders the survivors by left edge.
///
/// Numbers are a single row, so a character position is a column span:
/// after NMS a detection is also dropped when it shares at least half of
/// the narrower width with a better one.
pub fn read_digits(strip: &GrayImage, digits: &[Cascade], cfg: &ScanConfig) -> Result<Vec<Detection>> {
    let ii = IntegralImage::new(strip);
    let mut all = Vec::new();
    for c in digits {
        all.extend(scan_integral(&ii, c, cfg)?.0);
    }
    let mut kept: Vec<Detection> = Vec::new();
    for d in group_detections(all, cfg.nms_iou) {
        let clash = |k: &Detection| {
            let shared = k.rect.right().min(d.rect.right()).saturating_sub(k.rect.x.max(d.rect.x));
            2 * shared >= k.rect.w.min(d.rect.w)
        };
        if !kept.iter().any(clash) {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| a.rect.x.cmp(&b.rect.x).then(a.rect.y.cmp(&b.rect.y)));
    Ok(kept)
}

pub fn digit_string(dets: &[Detection]) -> String {
    dets.iter()
        .filter_map(|d| match d.label {
            DetectorLabel::Digit(v) => Some(char::from(b'0' + v)),
            DetectorLabel::Number => None,
        })
        .collect()
}

/// Finds plates, normalizes each to 240x76 and reads its digits.
pub fn read_number(frame: &GrayImage, ensemble: &Ensemble, cfg: &ReadConfig) -> Result<Vec<NumberReading>> {
    let (plates, _) = scan(frame, &ensemble.number, &cfg.plate)?;
    let mut plates = group_detections(plates, cfg.plate.nms_iou);
    plates.sort_by(|a, b| a.rect.y.cmp(&b.rect.y).then(a.rect.x.cmp(&b.rect.x)));
    plates
        .into_iter()
        .map(|plate| {
            let strip = normalize_number_plate(frame, plate.rect)?;
            let dets = read_digits(&strip, &ensemble.digits, &cfg.digit)?;
            Ok(NumberReading {
                digits: digit_string(&dets),
                plate,
                digit_detections: dets,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{StrongClassifier, WeakClassifier};
    use crate::features::{Aperture, FeatureDescriptor, FeatureFamily, FeatureKind};
    use rand::Rng;

    fn random_cascade(rng: &mut ChaCha8Rng, ap: Aperture, stages: usize) -> Cascade {
        let stages = (0..stages)
            .map(|_| {
                let n = rng.random_range(1..4);
                let weaks: Vec<WeakClassifier> = (0..n)
                    .map(|_| {
                        let w = rng.random_range(3..=ap.width);
                        let h = rng.random_range(3..=ap.height);
                        let f = FeatureDescriptor::new(
                            FeatureKind::Census,
                            Rect::new(rng.random_range(0..=ap.width - w), rng.random_range(0..=ap.height - h), w, h),
                        );
                        // Mostly-accepting tables so that later stages are reached.
                        WeakClassifier::new(f, (0..512).map(|_| rng.random_bool(0.8)).collect(), None).unwrap()
                    })
                    .collect();
                let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
                let theta = weights.iter().sum::<f64>() * rng.random_range(0.2..0.7);
                StrongClassifier::new(weaks, weights, theta).unwrap()
            })
            .collect();
        Cascade::new(DetectorLabel::Digit(5), ap, FeatureFamily::Cs, stages).unwrap()
    }

    /// Crops every lattice window and classifies it on its own integral image.
    fn brute_scan(frame: &GrayImage, c: &Cascade, grid: &ScanGrid) -> Vec<(Rect, f64)> {
        let mut out = Vec::new();
        for s in grid.scales(c.aperture, frame.width(), frame.height()) {
            for r in grid.windows(c.aperture, frame.width(), frame.height(), s) {
                let crop = IntegralImage::new(&frame.crop(r).unwrap());
                let mut all = true;
                let mut score = 0.0;
                for st in &c.stages {
                    let (ok, sc) = st.eval(&crop, Window::scaled(0, 0, s));
                    all &= ok;
                    score = sc;
                }
                if all {
                    out.push((r, score));
                }
            }
        }
        out
    }

    #[test]
    fn scan_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..6 {
            let c = random_cascade(&mut rng, Aperture::DIGIT, 3);
            let w = rng.random_range(12..=128);
            let h = rng.random_range(24..=64);
            let frame = GrayImage::from_fn(w, h, |_, _| rng.random());
            let cfg = ScanConfig {
                grid: ScanGrid {
                    stride: rng.random_range(1..=3),
                    scale_step: 1.25,
                    min_scale: 1.0,
                    max_scale: 3.0,
                },
                nms_iou: 0.5,
            };
            let (dets, stats) = scan(&frame, &c, &cfg).unwrap();
            let got: Vec<(Rect, f64)> = dets.iter().map(|d| (d.rect, d.score)).collect();
            assert_eq!(got, brute_scan(&frame, &c, &cfg.grid));
            assert!(stats.per_stage.windows(2).all(|p| p[1] <= p[0]));
            assert_eq!(stats.per_stage[0], stats.windows);
        }
    }

    #[test]
    fn all_zero_first_stage_finds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut c = random_cascade(&mut rng, Aperture::DIGIT, 2);
        for w in &mut c.stages[0].weaks {
            w.lut.iter_mut().for_each(|b| *b = false);
        }
        let frame = GrayImage::from_fn(100, 60, |_, _| rng.random());
        assert!(scan(&frame, &c, &ScanConfig::default()).unwrap().0.is_empty());
    }

    #[test]
    fn small_frame_gives_empty_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let c = random_cascade(&mut rng, Aperture::NUMBER, 1);
        let (d, s) = scan(&GrayImage::filled(40, 40, 0), &c, &ScanConfig::default()).unwrap();
        assert!(d.is_empty());
        assert_eq!(s.windows, 0);
    }

    fn det(x: usize, y: usize, w: usize, h: usize, score: f64, label: DetectorLabel) -> Detection {
        Detection {
            rect: Rect::new(x, y, w, h),
            score,
            label,
            scale: 1.0,
        }
    }

    /// Repeatedly takes the best remaining detection and deletes everything
    /// it suppresses.
    fn brute_nms(dets: &[Detection], iou: f64) -> Vec<Detection> {
        let mut rest = dets.to_vec();
        let mut out = Vec::new();
        while !rest.is_empty() {
            let best = (0..rest.len()).min_by(|&i, &j| nms_order(&rest[i], &rest[j])).unwrap();
            let b = rest.remove(best);
            rest.retain(|d| overlap(d.rect, b.rect) < iou);
            out.push(b);
        }
        out
    }

    #[test]
    fn nms_examples() {
        let one = vec![det(1, 2, 10, 10, 1.0, DetectorLabel::Number)];
        assert_eq!(group_detections(one.clone(), 0.5), one);
        let two = vec![det(1, 2, 10, 10, 1.0, DetectorLabel::Number), det(1, 2, 10, 10, 2.0, DetectorLabel::Number)];
        let kept = group_detections(two, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 2.0);
        let tie = vec![det(4, 4, 12, 24, 1.5, DetectorLabel::Digit(7)), det(4, 4, 12, 24, 1.5, DetectorLabel::Digit(3))];
        assert_eq!(group_detections(tie, 0.5)[0].label, DetectorLabel::Digit(3));
    }

    #[test]
    fn nms_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        for _ in 0..200 {
            let n = rng.random_range(0..30);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    det(
                        rng.random_range(0..40),
                        rng.random_range(0..40),
                        rng.random_range(5..20),
                        rng.random_range(5..20),
                        rng.random_range(0..5) as f64 * 0.5,
                        DetectorLabel::Digit(rng.random_range(0..10)),
                    )
                })
                .collect();
            let iou = rng.random_range(0.1..0.9);
            let kept = group_detections(dets.clone(), iou);
            assert_eq!(kept, brute_nms(&dets, iou));
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    assert!(overlap(a.rect, b.rect) < iou);
                }
            }
        }
    }

    #[test]
    fn records_round_trip() {
        let d = det(3, 4, 54, 18, 1.234_567_8, DetectorLabel::Number);
        let line = format_record("f.png", &d);
        assert_eq!(line, "f.png\tnumber\t3\t4\t54\t18\t1.234568\t1.0000");
        let (id, back) = parse_record(&line).unwrap();
        assert_eq!(id, "f.png");
        assert_eq!(back.rect, d.rect);
        assert!(parse_record("x\t1").is_err());
    }

    #[test]
    fn frame_miner_respects_cascade() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let frames: Vec<GrayImage> = (0..3).map(|_| GrayImage::from_fn(80, 60, |_, _| rng.random())).collect();
        let c = random_cascade(&mut rng, Aperture::DIGIT, 2);
        let mut miner = FrameMiner::new(frames, ScanGrid::default(), 9);
        let got = miner.mine(&c, 20).unwrap();
        assert!(!got.is_empty());
        for ii in &got {
            assert_eq!((ii.width(), ii.height()), (12, 24));
        }
        // Resampling can move a window across a decision boundary, so only
        // exact-scale windows are checked strictly.
        let mut again = FrameMiner::new(
            (0..3).map(|_| GrayImage::from_fn(80, 60, |_, _| rng.random())).collect(),
            ScanGrid {
                max_scale: 1.0,
                ..Default::default()
            },
            9,
        );
        for ii in again.mine(&c, 20).unwrap() {
            assert!(c.accepts_patch(&ii));
        }
    }
}
