//! Library side of the `nlbp` command: argument types and one function per
//! subcommand, so that tests can drive runs without spawning processes.

pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::{error, info, warn};
use nlbp_core::classifiers::{train_cascade, StopReason};
use nlbp_core::dataset::{
    self, load_annotations_csv, prepare, read_patch_store, write_patch_store, Annotation, Manifest, SampleRef, SampleSet, Split,
    MANIFEST_FORMAT, MANIFEST_VERSION,
};
use nlbp_core::detector::{format_records, read_number, scan, Detection, Ensemble};
use nlbp_core::evaluation::{emit_reports, fmt_rate, measure, run_grid, write_decisions, CellStatus, EvalMetrics, FrameSource};
use nlbp_core::imaging::{load_gray, save_gray};
use nlbp_core::{synth, Cascade, DetectorLabel, GrayImage, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Overrides, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCH_FILE: &str = "patches.bin";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(name = "nlbp", version, about = "Boosted cascade detectors over non-local binary patterns")]
pub struct Cli {
    /// Worker threads (default: one per core)
    #[arg(long, global = true, env = "NLBP_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut labeled patches from annotated frames
    Prepare {
        #[command(flatten)]
        flags: Overrides,
        /// Directory image ids are resolved against
        #[arg(long)]
        images: Option<PathBuf>,
        /// Sidecar file or directory of sidecars
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// CSV annotation table
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one cascade from a prepared sample directory
    Train {
        #[command(flatten)]
        flags: Overrides,
        /// Output of `prepare` or `synth bars`
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure a model on prepared samples
    Eval {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Which split to measure on
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan frames with one model or read numbers with an ensemble
    Detect {
        #[command(flatten)]
        flags: Overrides,
        /// Single cascade model
        #[arg(long, conflicts_with = "ensemble", required_unless_present = "ensemble")]
        model: Option<PathBuf>,
        /// Directory with number.json and digit0.json .. digit9.json
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Write frames with detections outlined here
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Record file (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        frames: Vec<PathBuf>,
    },
    /// Train and measure every (features, overlap, label) cell
    Grid {
        #[command(flatten)]
        flags: Overrides,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic data
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Annotated frames with number plates (images/ and annotations/)
    Plates {
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        width: usize,
        #[arg(long, default_value_t = 100)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// A ready-to-train sample directory: glyph patches against clutter
    Bars {
        #[arg(long, default_value_t = 3)]
        digit: u8,
        #[arg(long, default_value_t = 2000)]
        positives: usize,
        #[arg(long, default_value_t = 20000)]
        negatives: usize,
        #[arg(long, default_value = "12x24")]
        aperture: nlbp_core::Aperture,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected 'train' or 'test', got '{s}'")),
    }
}

/// Why a command failed; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad files, flags or configuration.
    Input(anyhow::Error),
    /// Training stopped short of its targets; outputs were still written.
    Halt(String),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Halt(_) => 3,
            Failure::Internal(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Halt(m) => write!(f, "training halted: {m}"),
            Failure::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl From<nlbp_core::Error> for Failure {
    fn from(e: nlbp_core::Error) -> Self {
        use nlbp_core::Error as E;
        match e {
            E::SingleClass | E::PoolExhausted => Failure::Halt(e.to_string()),
            e if e.is_input_error() => Failure::Input(e.into()),
            e => Failure::Internal(e.into()),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("{}: cannot create directory", dir.display()))
        .map_err(input)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, bytes)
        .with_context(|| format!("{}: cannot write", path.display()))
        .map_err(input)
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Prepare {
            flags,
            images,
            annotations,
            csv,
            out,
        } => {
            let mut cfg = RunConfig::resolve(&flags, false).map_err(input)?;
            set_data(&mut cfg, images, annotations, csv);
            cmd_prepare(&cfg, &out).map(|_| ())
        }
        Command::Train { flags, samples, out } => {
            let mut cfg = RunConfig::resolve(&flags, false).map_err(input)?;
            if samples.is_some() {
                cfg.data.samples = samples;
            }
            cmd_train(&cfg, &out).map(|_| ())
        }
        Command::Eval {
            flags,
            model,
            samples,
            split,
            out,
        } => {
            let mut cfg = RunConfig::resolve(&flags, false).map_err(input)?;
            if samples.is_some() {
                cfg.data.samples = samples;
            }
            let m = cmd_eval(&cfg, &model, split, &out)?;
            println!("far {} frr {} ({} pos, {} neg)", fmt_rate(m.far), fmt_rate(m.frr), m.n_pos, m.n_neg);
            Ok(())
        }
        Command::Detect {
            flags,
            model,
            ensemble,
            overlay,
            out,
            frames,
        } => {
            let cfg = RunConfig::resolve(&flags, false).map_err(input)?;
            let detector = match (model, ensemble) {
                (Some(m), _) => Detector::Single(Cascade::load(&m)?),
                (None, Some(dir)) => Detector::Ensemble(Box::new(Ensemble::load(&dir)?)),
                (None, None) => return Err(input(anyhow!("either --model or --ensemble is required"))),
            };
            if let (Some(ap), Detector::Single(c)) = (flags.aperture, &detector) {
                if ap != c.aperture {
                    return Err(input(anyhow!("model aperture is {}, not {ap}", c.aperture)));
                }
            }
            let text = cmd_detect(&cfg, &detector, &frames, overlay.as_deref())?;
            match out {
                Some(p) => write_file(&p, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Grid {
            flags,
            images,
            annotations,
            csv,
            out,
        } => {
            let mut cfg = RunConfig::resolve(&flags, true).map_err(input)?;
            set_data(&mut cfg, images, annotations, csv);
            cmd_grid(&cfg, &out).map(|_| ())
        }
        Command::Synth(SynthCommand::Plates {
            count,
            seed,
            width,
            height,
            out,
        }) => synth_plates(count, seed, width, height, &out),
        Command::Synth(SynthCommand::Bars {
            digit,
            positives,
            negatives,
            aperture,
            seed,
            out,
        }) => synth_bars(digit, positives, negatives, aperture, seed, &out),
    }
}

fn set_data(cfg: &mut RunConfig, images: Option<PathBuf>, annotations: Option<PathBuf>, csv: Option<PathBuf>) {
    if images.is_some() {
        cfg.data.images = images;
    }
    if annotations.is_some() {
        cfg.data.annotations = annotations;
        cfg.data.csv = None;
    }
    if csv.is_some() {
        cfg.data.csv = csv;
        cfg.data.annotations = None;
    }
}

/// Reads the annotation sidecars or CSV named by the configuration.
pub fn load_annotations(cfg: &RunConfig) -> Outcome<Vec<Annotation>> {
    if let Some(p) = &cfg.data.csv {
        return Ok(load_annotations_csv(p, &cfg.data.columns)?);
    }
    let p = cfg
        .data
        .annotations
        .as_ref()
        .ok_or_else(|| input(anyhow!("no annotations given (--annotations or --csv)")))?;
    if !p.is_dir() {
        return Ok(vec![Annotation::load(p)?]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(p)
        .with_context(|| format!("{}: cannot list", p.display()))
        .map_err(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| f.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(input(anyhow!("{}: no .txt annotation files", p.display())));
    }
    let mut anns = Vec::with_capacity(files.len());
    let mut bad = 0;
    for f in &files {
        match Annotation::load(f) {
            Ok(a) => anns.push(a),
            Err(e) => {
                error!("{e}");
                bad += 1;
            }
        }
    }
    if bad > 0 {
        return Err(input(anyhow!("{bad} of {} annotation files could not be read", files.len())));
    }
    Ok(anns)
}

fn image_dir(cfg: &RunConfig) -> Outcome<PathBuf> {
    cfg.data.images.clone().ok_or_else(|| input(anyhow!("no image directory given (--images)")))
}

/// Reports every annotated image that is missing before any work starts.
fn check_images(dir: &Path, anns: &[Annotation]) -> Outcome {
    let missing: Vec<&Annotation> = anns.iter().filter(|a| !dir.join(&a.image_id).is_file()).collect();
    for a in &missing {
        error!("{}: image not found", dir.join(&a.image_id).display());
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(input(anyhow!("{} of {} images not found", missing.len(), anns.len())))
    }
}

/// Writes `manifest.json`, `patches.bin` and `config.toml` to `out`.
pub fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Outcome<(Manifest, SampleSet)> {
    let anns = load_annotations(cfg)?;
    let dir = image_dir(cfg)?;
    check_images(&dir, &anns)?;
    let load = |id: &str| load_gray(&dir.join(id));
    let (manifest, set) = prepare(&anns, load, &cfg.dataset)?;
    create_dir(out)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    write_patch_store(&out.join(PATCH_FILE), cfg.dataset.aperture, &set)?;
    cfg.snapshot(out).map_err(input)?;
    info!(
        "{} positives ({} train), {} negatives ({} train) from {} images",
        set.positives.len(),
        set.count(true, Split::Train),
        set.negatives.len(),
        set.count(false, Split::Train),
        anns.len()
    );
    Ok((manifest, set))
}

/// Reads a sample directory written by `prepare` or `synth bars`.
pub fn load_samples(dir: &Path) -> Outcome<(Manifest, SampleSet)> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let set = read_patch_store(&dir.join(PATCH_FILE), &manifest)?;
    Ok((manifest, set))
}

fn samples_dir(cfg: &RunConfig) -> Outcome<&Path> {
    cfg.data.samples.as_deref().ok_or_else(|| input(anyhow!("no sample directory given (--samples)")))
}

/// What `train` leaves behind besides the files.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cascade: Cascade,
    pub stop: StopReason,
    pub validation_far: f64,
    pub test: Option<EvalMetrics>,
}

/// Trains on the train split and writes `model.json`, `trace.json`,
/// `config.toml` and, when the samples have a test split, `metrics.json`.
/// Missing the FAR target is reported as a halt after all files are written.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Outcome<TrainOutcome> {
    let (manifest, set) = load_samples(samples_dir(cfg)?)?;
    let label = manifest.config.label;
    let aperture = manifest.config.aperture;
    let pos = set.patches(true, Split::Train);
    let neg = set.patches(false, Split::Train);
    info!("training {label} ({}, {aperture}) on {} positives, {} negatives", cfg.train.family, pos.len(), neg.len());
    let (cascade, trace) = train_cascade(label, aperture, &pos, &neg, &cfg.train)?;
    create_dir(out)?;
    cascade.save(&out.join(MODEL_FILE))?;
    let trace_json = serde_json::to_string_pretty(&trace).map_err(internal)?;
    write_file(&out.join(TRACE_FILE), trace_json + "\n")?;
    cfg.snapshot(out).map_err(input)?;

    let test_pos = set.patches(true, Split::Test);
    let test_neg = set.patches(false, Split::Test);
    let test = if test_pos.is_empty() && test_neg.is_empty() {
        None
    } else {
        let (m, _) = measure(&cascade, &test_pos, &test_neg)?;
        write_file(&out.join(METRICS_FILE), serde_json::to_string_pretty(&m).map_err(internal)? + "\n")?;
        Some(m)
    };
    info!(
        "{} stages, {} features, validation far {:.3e}, stop {:?}",
        cascade.stage_count(),
        cascade.feature_count(),
        trace.final_far,
        trace.stop
    );
    if let Some(m) = &test {
        info!("test far {} frr {}", fmt_rate(m.far), fmt_rate(m.frr));
    }
    if trace.final_far > cfg.train.far_target {
        return Err(Failure::Halt(format!(
            "{:?} with validation far {:.3e} above target {:.3e} ({} stages, {} features); model written to {}",
            trace.stop,
            trace.final_far,
            cfg.train.far_target,
            cascade.stage_count(),
            cascade.feature_count(),
            out.display()
        )));
    }
    Ok(TrainOutcome {
        stop: trace.stop,
        validation_far: trace.final_far,
        cascade,
        test,
    })
}

/// Measures `model` on one split; writes `metrics.json` and the per-sample
/// `decisions.csv`.
pub fn cmd_eval(cfg: &RunConfig, model: &Path, split: Split, out: &Path) -> Outcome<EvalMetrics> {
    let cascade = Cascade::load(model)?;
    let (manifest, set) = load_samples(samples_dir(cfg)?)?;
    if manifest.config.aperture != cascade.aperture {
        return Err(input(anyhow!(
            "model aperture {} does not match sample aperture {}",
            cascade.aperture,
            manifest.config.aperture
        )));
    }
    let (m, log) = measure(&cascade, &set.patches(true, split), &set.patches(false, split))?;
    create_dir(out)?;
    write_file(&out.join(METRICS_FILE), serde_json::to_string_pretty(&m).map_err(internal)? + "\n")?;
    write_decisions(&out.join("decisions.csv"), &log)?;
    cfg.snapshot(out).map_err(input)?;
    Ok(m)
}

pub enum Detector {
    Single(Cascade),
    Ensemble(Box<Ensemble>),
}

/// Digit detections come back in plate-strip coordinates; put them on the frame.
fn to_frame(plate: &Detection, d: &Detection) -> Detection {
    let sx = plate.rect.w as f64 / dataset::PLATE_WIDTH as f64;
    let sy = plate.rect.h as f64 / dataset::PLATE_HEIGHT as f64;
    let at = |v: usize, s: f64| (v as f64 * s).round() as usize;
    Detection {
        rect: Rect::new(
            plate.rect.x + at(d.rect.x, sx),
            plate.rect.y + at(d.rect.y, sy),
            at(d.rect.w, sx).max(1),
            at(d.rect.h, sy).max(1),
        ),
        scale: d.scale * sx,
        ..d.clone()
    }
}

/// Detection records of every frame, tab-separated, one per line:
/// `image label x y w h score scale`. An ensemble reports each plate
/// followed by its digits, left to right.
pub fn cmd_detect(cfg: &RunConfig, detector: &Detector, frames: &[PathBuf], overlay: Option<&Path>) -> Outcome<String> {
    if let Some(dir) = overlay {
        create_dir(dir)?;
    }
    let mut text = String::new();
    for path in frames {
        let frame = load_gray(path)?;
        let id = path.display().to_string();
        let dets: Vec<Detection> = match detector {
            Detector::Single(c) => {
                if frame.width() < c.aperture.width || frame.height() < c.aperture.height {
                    warn!("{id}: frame {}x{} is smaller than the aperture {}", frame.width(), frame.height(), c.aperture);
                }
                let (d, _) = scan(&frame, c, &cfg.scan)?;
                nlbp_core::detector::group_detections(d, cfg.scan.nms_iou)
            }
            Detector::Ensemble(e) => {
                let mut all = Vec::new();
                for r in read_number(&frame, e, &cfg.read)? {
                    info!("{id}: {} at {}", if r.digits.is_empty() { "?" } else { &r.digits }, r.plate.rect);
                    let digits: Vec<Detection> = r.digit_detections.iter().map(|d| to_frame(&r.plate, d)).collect();
                    all.push(r.plate);
                    all.extend(digits);
                }
                all
            }
        };
        text.push_str(&format_records(&id, &dets));
        if let Some(dir) = overlay {
            let name = path.file_stem().map_or_else(|| "frame".into(), |s| s.to_string_lossy().into_owned());
            save_gray(&outline(&frame, &dets), &dir.join(format!("{name}.png")))?;
        }
    }
    Ok(text)
}

fn outline(frame: &GrayImage, dets: &[Detection]) -> GrayImage {
    let mut img = frame.clone();
    for d in dets {
        let r = d.rect;
        let v = if d.label == DetectorLabel::Number { 255 } else { 0 };
        for x in r.x..r.right() {
            img.set(x, r.y, v);
            img.set(x, r.bottom() - 1, v);
        }
        for y in r.y..r.bottom() {
            img.set(r.x, y, v);
            img.set(r.right() - 1, y, v);
        }
    }
    img
}

/// Runs the experiment grid into `out`, then writes the reports. Cells
/// already finished in `out` are kept; an `out` holding a different
/// configuration is refused.
pub fn cmd_grid(cfg: &RunConfig, out: &Path) -> Outcome<Vec<nlbp_core::evaluation::CellResult>> {
    let anns = load_annotations(cfg)?;
    let dir = image_dir(cfg)?;
    check_images(&dir, &anns)?;
    create_dir(out)?;
    let snap = out.join(config::SNAPSHOT);
    let text = cfg.to_toml().map_err(input)?;
    if snap.exists() {
        let prev = std::fs::read_to_string(&snap).with_context(|| format!("{}: cannot read", snap.display())).map_err(input)?;
        if prev != text {
            return Err(input(anyhow!("{} holds a run with a different configuration", out.display())));
        }
    } else {
        write_file(&snap, &text)?;
    }
    let source = FrameSource {
        annotations: anns,
        load: |id: &str| load_gray(&dir.join(id)),
        base: cfg.dataset.clone(),
        apertures: cfg.apertures.clone(),
    };
    let results = run_grid(&cfg.grid, &source, &cfg.train, cfg.seed, Some(out))?;
    let files = emit_reports(&results, out)?;
    let failed = results.iter().filter(|r| r.status == CellStatus::Failed).count();
    if failed > 0 {
        warn!("{failed} of {} cells failed; see {}", results.len(), out.join("results.csv").display());
    }
    info!("{} cells, {} report files in {}", results.len(), files.len(), out.display());
    Ok(results)
}

fn synth_plates(count: usize, seed: u64, width: usize, height: usize, out: &Path) -> Outcome {
    if width < 60 || height < 30 {
        return Err(input(anyhow!("frames must be at least 60x30")));
    }
    let (img_dir, ann_dir) = (out.join("images"), out.join("annotations"));
    create_dir(&img_dir)?;
    create_dir(&ann_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let max_w = (width * 7 / 10).min(height * 240 / 76 * 7 / 10);
        let w = rng.random_range(max_w / 2..=max_w);
        let h = (w as f64 * dataset::PLATE_HEIGHT as f64 / dataset::PLATE_WIDTH as f64).round() as usize;
        let plate = Rect::new(rng.random_range(0..=width - w), rng.random_range(0..=height - h), w, h);
        let n = rng.random_range(2..=4);
        let digits: String = (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
        let id = format!("f{i:04}.png");
        let (img, ann) = synth::plate_frame(&mut rng, &id, width, height, &digits, plate);
        save_gray(&img, &img_dir.join(&id))?;
        write_file(&ann_dir.join(format!("f{i:04}.txt")), ann.to_sidecar())?;
    }
    info!("{count} frames in {}", out.display());
    Ok(())
}

/// Writes glyph patches and clutter as a sample directory, split 3:1.
pub fn synth_bars(digit: u8, n_pos: usize, n_neg: usize, aperture: nlbp_core::Aperture, seed: u64, out: &Path) -> Outcome {
    if digit > 9 || n_pos < 2 || n_neg < 2 {
        return Err(input(anyhow!("need a digit 0-9 and at least two samples per class")));
    }
    let (pos, neg) = synth::bars_task(seed, aperture, digit, n_pos, n_neg);
    let config = nlbp_core::dataset::DatasetConfig {
        label: DetectorLabel::Digit(digit),
        aperture,
        seed,
        ..Default::default()
    };
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config,
        train_images: Vec::new(),
        test_images: Vec::new(),
        positives: Vec::new(),
        negatives: Vec::new(),
    };
    let mut set = SampleSet::default();
    for (positive, patches) in [(true, pos), (false, neg)] {
        let kind = if positive { "pos" } else { "neg" };
        let idx: Vec<usize> = (0..patches.len()).collect();
        let (train, _) = dataset::split_ratio(&idx, (3, 1), dataset::derive_seed(seed, positive as u64));
        let mut is_train = vec![false; patches.len()];
        for i in train {
            is_train[i] = true;
        }
        for (i, patch) in patches.into_iter().enumerate() {
            let split = if is_train[i] { Split::Train } else { Split::Test };
            let image = format!("bars-{kind}-{i:05}");
            match split {
                Split::Train => manifest.train_images.push(image.clone()),
                Split::Test => manifest.test_images.push(image.clone()),
            }
            let r = SampleRef {
                image: image.clone(),
                split,
                x: 0,
                y: 0,
                w: aperture.width,
                h: aperture.height,
            };
            let sample = dataset::Sample {
                image_id: image,
                rect: patch.bounds(),
                patch,
            };
            if positive {
                manifest.positives.push(r);
                set.positives.push((split, sample));
            } else {
                manifest.negatives.push(r);
                set.negatives.push((split, sample));
            }
        }
    }
    create_dir(out)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    write_patch_store(&out.join(PATCH_FILE), aperture, &set)?;
    info!("{n_pos} positives, {n_neg} negatives in {}", out.display());
    Ok(())
}
