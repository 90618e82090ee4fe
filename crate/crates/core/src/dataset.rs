//! Annotations, positive extraction by overlap threshold, negative
//! sampling, the seeded 3:1 split, plate normalization and sample sets.
//!
//! Annotation sidecar format (one file per image, `#` starts a comment):
//!
//! ```text
//! image frame0001.png
//! number 120 300 216 72
//! 3 130 310 20 40
//! ```
//!
//! The first line names the image; each following line is a box class
//! (`number` or a digit) and `x y w h` in pixels.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::DetectorLabel;
use crate::error::{Error, Result};
use crate::features::{Aperture, ScanGrid};
use crate::imaging::{check_rect, resample_bilinear, GrayImage, Rect};

/// Box classes are the detector labels: the number plate or a digit.
pub type BoxClass = DetectorLabel;

/// Normalized plate size used for digit detection.
pub const PLATE_WIDTH: usize = 240;
pub const PLATE_HEIGHT: usize = 76;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub rect: Rect,
    pub class: BoxClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub boxes: Vec<LabeledBox>,
}

impl Annotation {
    pub fn new(image_id: &str) -> Self {
        Annotation {
            image_id: image_id.to_string(),
            boxes: Vec::new(),
        }
    }

    /// Checks every box against the image size.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for b in &self.boxes {
            check_rect(b.rect, width, height)
                .map_err(|e| Error::Format(format!("{}: box {} {}: {e}", self.image_id, b.class, b.rect)))?;
        }
        Ok(())
    }

    pub fn rects_of(&self, class: BoxClass) -> Vec<Rect> {
        self.boxes.iter().filter(|b| b.class == class).map(|b| b.rect).collect()
    }

    pub fn parse_sidecar(text: &str, origin: &str) -> Result<Annotation> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |n: usize, msg: &str| Error::Format(format!("{origin}:{n}: {msg}"));
        let (n, first) = lines.next().ok_or_else(|| bad(1, "empty annotation"))?;
        let id = first
            .strip_prefix("image")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad(n, "expected 'image <id>'"))?;
        let mut ann = Annotation::new(id);
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(n, "expected '<class> x y w h'"));
            }
            let class: BoxClass = f[0].parse().map_err(|_| bad(n, &format!("unknown class '{}'", f[0])))?;
            let mut v = [0usize; 4];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| bad(n, &format!("bad number '{s}'")))?;
            }
            if v[2] == 0 || v[3] == 0 {
                return Err(bad(n, "empty box"));
            }
            ann.boxes.push(LabeledBox {
                rect: Rect::new(v[0], v[1], v[2], v[3]),
                class,
            });
        }
        Ok(ann)
    }

    pub fn to_sidecar(&self) -> String {
        let mut s = format!("image {}\n", self.image_id);
        for b in &self.boxes {
            s += &format!("{} {} {} {} {}\n", b.class, b.rect.x, b.rect.y, b.rect.w, b.rect.h);
        }
        s
    }

    pub fn load(path: &Path) -> Result<Annotation> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Annotation::parse_sidecar(&text, &path.display().to_string())
    }
}

/// Column names for annotations kept in a single CSV table, one box per
/// row. Rows of the same image are grouped in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub image: String,
    pub class: String,
    pub x: String,
    pub y: String,
    pub w: String,
    pub h: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            image: "image".into(),
            class: "class".into(),
            x: "x".into(),
            y: "y".into(),
            w: "w".into(),
            h: "h".into(),
        }
    }
}

pub fn load_annotations_csv(path: &Path, map: &ColumnMap) -> Result<Vec<Annotation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("{}: no column '{name}'", path.display())))
    };
    let cols = [col(&map.image)?, col(&map.class)?, col(&map.x)?, col(&map.y)?, col(&map.w)?, col(&map.h)?];
    let mut out: Vec<Annotation> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |msg: String| Error::Format(format!("{}: row {}: {msg}", path.display(), i + 2));
        let class: BoxClass = field(cols[1]).parse().map_err(|_| bad(format!("unknown class '{}'", field(cols[1]))))?;
        let mut v = [0usize; 4];
        for (slot, &c) in v.iter_mut().zip(&cols[2..]) {
            *slot = field(c).parse().map_err(|_| bad(format!("bad number '{}'", field(c))))?;
        }
        let id = field(cols[0]).to_string();
        let k = *by_id.entry(id.clone()).or_insert_with(|| {
            out.push(Annotation::new(&id));
            out.len() - 1
        });
        out[k].boxes.push(LabeledBox {
            rect: Rect::new(v[0], v[1], v[2], v[3]),
            class,
        });
    }
    Ok(out)
}

/// Intersection over union of two rectangles.
pub fn overlap(a: Rect, b: Rect) -> f64 {
    let inter = a.intersection_area(&b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// What the sample set is for; digit sets are cut from normalized plates.
    pub label: DetectorLabel,
    /// Minimum IoU between a lattice window and a marked box for the window
    /// to become a positive.
    pub overlap_threshold: f64,
    /// Negatives have IoU below this with every box of the target class.
    pub negative_overlap: f64,
    pub split_ratio: (usize, usize),
    pub seed: u64,
    pub aperture: Aperture,
    pub grid: ScanGrid,
    pub negatives_per_image: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            label: DetectorLabel::Number,
            overlap_threshold: 0.75,
            negative_overlap: 0.3,
            split_ratio: (3, 1),
            seed: 0,
            aperture: Aperture::NUMBER,
            grid: ScanGrid::default(),
            negatives_per_image: 200,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config("overlap_threshold must lie in (0, 1]".into()));
        }
        if !(self.negative_overlap > 0.0 && self.negative_overlap <= 1.0) {
            return Err(Error::Config("negative_overlap must lie in (0, 1]".into()));
        }
        if self.split_ratio.0 == 0 {
            return Err(Error::Config("split ratio needs a non-zero training share".into()));
        }
        if self.aperture.width == 0 || self.aperture.height == 0 {
            return Err(Error::Config("empty aperture".into()));
        }
        self.grid.validate()
    }
}

/// Lattice windows around `target` whose IoU with it is at least
/// `threshold`, ordered by scale, then row, then column.
pub fn qualifying_windows(
    target: Rect,
    width: usize,
    height: usize,
    aperture: Aperture,
    grid: &ScanGrid,
    threshold: f64,
) -> Vec<Rect> {
    let mut out = Vec::new();
    for s in grid.scales(aperture, width, height) {
        let proto = aperture.window(0, 0, s);
        let near = |p: usize, extent: usize, lo: usize, hi: usize| p + extent > lo && p < hi;
        let ys: Vec<usize> = grid
            .positions(s, proto.h, height)
            .filter(|&y| near(y, proto.h, target.y, target.bottom()))
            .collect();
        let xs: Vec<usize> = grid
            .positions(s, proto.w, width)
            .filter(|&x| near(x, proto.w, target.x, target.right()))
            .collect();
        for &y in &ys {
            for &x in &xs {
                let r = Rect::new(x, y, proto.w, proto.h);
                if overlap(r, target) >= threshold {
                    out.push(r);
                }
            }
        }
    }
    out
}

/// One aperture-sized patch and where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image_id: String,
    pub rect: Rect,
    pub patch: GrayImage,
}

/// Windows of `image` around the boxes of `class` with IoU at least the
/// configured threshold, resampled to the aperture. Duplicate windows
/// (qualifying for two boxes) are exported once.
pub fn extract_positives(image_id: &str, image: &GrayImage, boxes: &[Rect], cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &b in boxes {
        let wins = qualifying_windows(b, image.width(), image.height(), cfg.aperture, &cfg.grid, cfg.overlap_threshold);
        if wins.is_empty() {
            warn!("{image_id}: box {b} has no lattice window with overlap >= {}; skipped", cfg.overlap_threshold);
            continue;
        }
        for r in wins {
            if seen.insert(r) {
                out.push(Sample {
                    image_id: image_id.to_string(),
                    rect: r,
                    patch: resample_bilinear(image, r, cfg.aperture.width, cfg.aperture.height)?,
                });
            }
        }
    }
    Ok(out)
}

/// An image offered for negative sampling and the boxes to stay clear of.
pub struct NegativeSource<'a> {
    pub image_id: &'a str,
    pub image: &'a GrayImage,
    pub boxes: &'a [Rect],
}

/// Uniformly samples `count` distinct lattice windows whose IoU with every
/// box is below `cfg.negative_overlap`. Returns fewer (with a warning) when
/// the pool is smaller than `count`. The result is ordered by source, then
/// scale, then position.
pub fn sample_negatives(sources: &[NegativeSource<'_>], cfg: &DatasetConfig, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut pool: Vec<(usize, Rect)> = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let (w, h) = (src.image.width(), src.image.height());
        for s in cfg.grid.scales(cfg.aperture, w, h) {
            for r in cfg.grid.windows(cfg.aperture, w, h, s) {
                if src.boxes.iter().all(|&b| overlap(r, b) < cfg.negative_overlap) {
                    pool.push((i, r));
                }
            }
        }
    }
    let picked: Vec<usize> = if pool.len() <= count {
        if pool.len() < count {
            warn!("negative pool holds {} windows, {count} requested", pool.len());
        }
        (0..pool.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, pool.len(), count).into_vec();
        v.sort_unstable();
        v
    };
    picked
        .into_iter()
        .map(|k| {
            let (i, r) = pool[k];
            let src = &sources[i];
            Ok(Sample {
                image_id: src.image_id.to_string(),
                rect: r,
                patch: resample_bilinear(src.image, r, cfg.aperture.width, cfg.aperture.height)?,
            })
        })
        .collect()
}

/// Seeded shuffle; the first `ceil(n * a / (a + b))` items train and the
/// rest test. Pass source images (not patches) so that every patch of an
/// image lands on one side.
pub fn split_ratio<T: Clone>(items: &[T], ratio: (usize, usize), seed: u64) -> (Vec<T>, Vec<T>) {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = ratio;
    let n_train = (items.len() * a).div_ceil(a + b);
    let test = v.split_off(n_train);
    (v, test)
}

pub fn split_3to1<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>) {
    split_ratio(items, (3, 1), seed)
}

/// Crops `plate` and resamples it to 240x76.
pub fn normalize_number_plate(image: &GrayImage, plate: Rect) -> Result<GrayImage> {
    if plate.w < 2 || plate.h < 2 {
        return Err(Error::InvalidImage(format!("degenerate plate box {plate}")));
    }
    resample_bilinear(image, plate, PLATE_WIDTH, PLATE_HEIGHT)
}

/// Maps the digit boxes lying inside `plate` into normalized plate
/// coordinates (240x76), clipping to the plate.
pub fn plate_digits(plate: Rect, boxes: &[LabeledBox]) -> Vec<LabeledBox> {
    let sx = PLATE_WIDTH as f64 / plate.w as f64;
    let sy = PLATE_HEIGHT as f64 / plate.h as f64;
    let map = |v: usize, origin: usize, s: f64, limit: usize| {
        (((v.saturating_sub(origin)) as f64 * s).round() as usize).min(limit)
    };
    boxes
        .iter()
        .filter(|b| b.class != DetectorLabel::Number && plate.intersection_area(&b.rect) * 2 > b.rect.area())
        .filter_map(|b| {
            let x0 = map(b.rect.x, plate.x, sx, PLATE_WIDTH);
            let y0 = map(b.rect.y, plate.y, sy, PLATE_HEIGHT);
            let x1 = map(b.rect.right(), plate.x, sx, PLATE_WIDTH);
            let y1 = map(b.rect.bottom(), plate.y, sy, PLATE_HEIGHT);
            (x1 > x0 && y1 > y0).then(|| LabeledBox {
                rect: Rect::new(x0, y0, x1 - x0, y1 - y0),
                class: b.class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Detection surfaces cut from one annotated frame: the frame itself for
/// plate detection, or each normalized plate for digit detection. Each
/// surface carries the boxes of the target class in its own coordinates.
pub fn surfaces(ann: &Annotation, frame: &GrayImage, label: DetectorLabel) -> Result<Vec<(String, GrayImage, Vec<Rect>)>> {
    if label == DetectorLabel::Number {
        return Ok(vec![(ann.image_id.clone(), frame.clone(), ann.rects_of(label))]);
    }
    let plates = ann.rects_of(DetectorLabel::Number);
    if plates.is_empty() {
        // Already a plate strip.
        return Ok(vec![(ann.image_id.clone(), frame.clone(), ann.rects_of(label))]);
    }
    plates
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let img = normalize_number_plate(frame, p)?;
            let rects = plate_digits(p, &ann.boxes).into_iter().filter(|b| b.class == label).map(|b| b.rect).collect();
            Ok((format!("{}#{k}", ann.image_id), img, rects))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub image: String,
    pub split: Split,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl SampleRef {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

pub const MANIFEST_FORMAT: &str = "nlbp-samples";
pub const MANIFEST_VERSION: u32 = 1;

/// Provenance of every sample: enough to rebuild the sample set from the
/// source images alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub train_images: Vec<String>,
    pub test_images: Vec<String>,
    pub positives: Vec<SampleRef>,
    pub negatives: Vec<SampleRef>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(s)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("not a sample manifest ({} v{})", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::from_json(&s)
    }
}

/// Labeled aperture-sized patches split into train and test.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleSet {
    pub positives: Vec<(Split, Sample)>,
    pub negatives: Vec<(Split, Sample)>,
}

impl SampleSet {
    pub fn patches(&self, positive: bool, split: Split) -> Vec<GrayImage> {
        let v = if positive { &self.positives } else { &self.negatives };
        v.iter().filter(|(s, _)| *s == split).map(|(_, p)| p.patch.clone()).collect()
    }

    pub fn count(&self, positive: bool, split: Split) -> usize {
        let v = if positive { &self.positives } else { &self.negatives };
        v.iter().filter(|(s, _)| *s == split).count()
    }
}

/// Derives an independent seed from `seed` and a sub-stream index (splitmix64).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the sample set of `annotations`. `load` returns the frame for
/// an image id. Images are split 3:1 (by `cfg.split_ratio`) before any
/// patch is cut; negatives come from the same frames with the target boxes
/// kept clear, `negatives_per_image` per surface. Work runs in parallel per
/// image and is assembled in annotation order.
pub fn prepare<F>(annotations: &[Annotation], load: F, cfg: &DatasetConfig) -> Result<(Manifest, SampleSet)>
where
    F: Fn(&str) -> Result<GrayImage> + Sync,
{
    cfg.validate()?;
    if annotations.is_empty() {
        return Err(Error::Config("no annotated images".into()));
    }
    let ids: Vec<String> = annotations.iter().map(|a| a.image_id.clone()).collect();
    let (train, test) = split_ratio(&ids, cfg.split_ratio, cfg.seed);
    let train_set: BTreeSet<&String> = train.iter().collect();

    let per_image: Vec<Result<(Vec<(Split, Sample)>, Vec<(Split, Sample)>)>> = annotations
        .par_iter()
        .enumerate()
        .map(|(i, ann)| {
            let frame = load(&ann.image_id)?;
            ann.validate(frame.width(), frame.height())?;
            let split = if train_set.contains(&ann.image_id) { Split::Train } else { Split::Test };
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (k, (id, img, rects)) in surfaces(ann, &frame, cfg.label)?.into_iter().enumerate() {
                pos.extend(extract_positives(&id, &img, &rects, cfg)?.into_iter().map(|s| (split, s)));
                let src = [NegativeSource {
                    image_id: &id,
                    image: &img,
                    boxes: &rects,
                }];
                let seed = derive_seed(cfg.seed, ((i as u64) << 16) | k as u64);
                neg.extend(sample_negatives(&src, cfg, cfg.negatives_per_image, seed)?.into_iter().map(|s| (split, s)));
            }
            Ok((pos, neg))
        })
        .collect();

    let mut set = SampleSet::default();
    for r in per_image {
        let (p, n) = r?;
        set.positives.extend(p);
        set.negatives.extend(n);
    }
    let refs = |v: &[(Split, Sample)]| {
        v.iter()
            .map(|(split, s)| SampleRef {
                image: s.image_id.clone(),
                split: *split,
                x: s.rect.x,
                y: s.rect.y,
                w: s.rect.w,
                h: s.rect.h,
            })
            .collect()
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        train_images: train,
        test_images: test,
        positives: refs(&set.positives),
        negatives: refs(&set.negatives),
    };
    Ok((manifest, set))
}

/// Rebuilds a sample set from its manifest and the source images.
/// Sample image ids of the form `id#k` refer to the k-th plate of `id`.
pub fn rebuild<F>(manifest: &Manifest, annotations: &[Annotation], load: F) -> Result<SampleSet>
where
    F: Fn(&str) -> Result<GrayImage> + Sync,
{
    let cfg = &manifest.config;
    let by_id: HashMap<&str, &Annotation> = annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let mut cache: HashMap<String, GrayImage> = HashMap::new();
    let mut surface = |id: &str| -> Result<GrayImage> {
        if let Some(img) = cache.get(id) {
            return Ok(img.clone());
        }
        let img = match id.rsplit_once('#') {
            Some((base, k)) if by_id.contains_key(base) => {
                let k: usize = k.parse().map_err(|_| Error::Format(format!("bad sample image '{id}'")))?;
                let plate = *by_id[base]
                    .rects_of(DetectorLabel::Number)
                    .get(k)
                    .ok_or_else(|| Error::Format(format!("no plate {k} in '{base}'")))?;
                normalize_number_plate(&load(base)?, plate)?
            }
            _ => load(id)?,
        };
        cache.insert(id.to_string(), img.clone());
        Ok(img)
    };
    let mut cut = |refs: &[SampleRef]| -> Result<Vec<(Split, Sample)>> {
        refs.iter()
            .map(|r| {
                let img = surface(&r.image)?;
                Ok((
                    r.split,
                    Sample {
                        image_id: r.image.clone(),
                        rect: r.rect(),
                        patch: resample_bilinear(&img, r.rect(), cfg.aperture.width, cfg.aperture.height)?,
                    },
                ))
            })
            .collect()
    };
    let positives = cut(&manifest.positives)?;
    let negatives = cut(&manifest.negatives)?;
    Ok(SampleSet { positives, negatives })
}

const STORE_MAGIC: &[u8; 8] = b"NLBPPS01";

/// Writes the patches of a sample set in manifest order: an 8-byte magic,
/// `width`, `height`, positive count and negative count as little-endian
/// u32, then the raw pixels of every patch.
pub fn write_patch_store(path: &Path, aperture: Aperture, set: &SampleSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    {
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(STORE_MAGIC)?;
        for v in [aperture.width, aperture.height, set.positives.len(), set.negatives.len()] {
            put(&(v as u32).to_le_bytes())?;
        }
        for (_, s) in set.positives.iter().chain(&set.negatives) {
            put(s.patch.pixels())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a patch store back, pairing patches with the manifest entries.
pub fn read_patch_store(path: &Path, manifest: &Manifest) -> Result<SampleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if buf.len() < 24 || &buf[..8] != STORE_MAGIC {
        return Err(bad("not a patch store"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, np, nn) = (word(0), word(1), word(2), word(3));
    let ap = manifest.config.aperture;
    if (w, h) != (ap.width, ap.height) || np != manifest.positives.len() || nn != manifest.negatives.len() {
        return Err(bad("patch store does not match the manifest"));
    }
    if buf.len() != 24 + (np + nn) * w * h {
        return Err(bad("truncated patch store"));
    }
    let mut chunks = buf[24..].chunks_exact(w * h);
    let mut take = |refs: &[SampleRef]| -> Result<Vec<(Split, Sample)>> {
        refs.iter()
            .map(|r| {
                let patch = GrayImage::new(w, h, chunks.next().unwrap().to_vec())?;
                Ok((
                    r.split,
                    Sample {
                        image_id: r.image.clone(),
                        rect: r.rect(),
                        patch,
                    },
                ))
            })
            .collect()
    };
    let positives = take(&manifest.positives)?;
    let negatives = take(&manifest.negatives)?;
    Ok(SampleSet { positives, negatives })
}
