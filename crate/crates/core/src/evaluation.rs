//! FAR/FRR measurement, the feature-kind x overlap experiment grid and
//! report emission (CSV series, per-digit table, SVG plots).
//!
//! Rates are per patch. A rate over an empty class is undefined and shown
//! as `n/a`, never as zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{train_cascade, Cascade, CascadeConfig, CascadeDecision, DetectorLabel};
use crate::dataset::{derive_seed, prepare, Annotation, DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::features::FeatureFamily;
use crate::imaging::{GrayImage, IntegralImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Accepted negatives / negatives.
    pub far: Option<f64>,
    /// Rejected positives / positives.
    pub frr: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub false_accepts: usize,
    pub false_rejects: usize,
    pub feature_count: usize,
    pub stage_count: usize,
}

pub fn rate(k: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| k as f64 / n as f64)
}

pub fn fmt_rate(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.6}"),
        None => "n/a".into(),
    }
}

/// One line of the per-sample decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub index: usize,
    pub positive: bool,
    pub accepted: bool,
    /// Stage that rejected the sample.
    pub rejected_at: Option<usize>,
    /// Final-stage vote of accepted samples.
    pub score: Option<f64>,
}

impl EvalMetrics {
    /// Recounts the rates from a decision log.
    pub fn from_log(log: &[Decision], feature_count: usize, stage_count: usize) -> EvalMetrics {
        let n_pos = log.iter().filter(|d| d.positive).count();
        let n_neg = log.len() - n_pos;
        let false_accepts = log.iter().filter(|d| !d.positive && d.accepted).count();
        let false_rejects = log.iter().filter(|d| d.positive && !d.accepted).count();
        EvalMetrics {
            far: rate(false_accepts, n_neg),
            frr: rate(false_rejects, n_pos),
            n_pos,
            n_neg,
            false_accepts,
            false_rejects,
            feature_count,
            stage_count,
        }
    }
}

/// Classifies every test patch (positives first, then negatives) and
/// returns the metrics with the decision log they were counted from.
pub fn measure(cascade: &Cascade, positives: &[GrayImage], negatives: &[GrayImage]) -> Result<(EvalMetrics, Vec<Decision>)> {
    let ap = cascade.aperture;
    if let Some(bad) = positives.iter().chain(negatives).find(|g| (g.width(), g.height()) != (ap.width, ap.height)) {
        return Err(Error::Config(format!("test patch {}x{} does not match aperture {ap}", bad.width(), bad.height())));
    }
    let labelled: Vec<(&GrayImage, bool)> =
        positives.iter().map(|g| (g, true)).chain(negatives.iter().map(|g| (g, false))).collect();
    let log: Vec<Decision> = labelled
        .par_iter()
        .enumerate()
        .map(|(index, &(g, positive))| {
            let ii = IntegralImage::new(g);
            let d = cascade.eval(&ii, crate::features::Window::at(0, 0)).expect("patch fits aperture");
            let (accepted, rejected_at, score) = match d {
                CascadeDecision::Accept { score } => (true, None, Some(score)),
                CascadeDecision::Reject { stage } => (false, Some(stage), None),
            };
            Decision {
                index,
                positive,
                accepted,
                rejected_at,
                score,
            }
        })
        .collect();
    Ok((EvalMetrics::from_log(&log, cascade.feature_count(), cascade.stage_count()), log))
}

/// Metrics with the last stage's threshold replaced by each of `thetas`.
pub fn sweep_final_theta(cascade: &Cascade, positives: &[GrayImage], negatives: &[GrayImage], thetas: &[f64]) -> Result<Vec<EvalMetrics>> {
    thetas
        .iter()
        .map(|&t| {
            let mut c = cascade.clone();
            c.stages.last_mut().expect("cascade has stages").theta = t;
            Ok(measure(&c, positives, negatives)?.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub feature_kinds: Vec<FeatureFamily>,
    pub overlap_thresholds: Vec<f64>,
    pub detector_targets: Vec<DetectorLabel>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            feature_kinds: FeatureFamily::ALL.to_vec(),
            overlap_thresholds: vec![0.5, 0.6, 0.7, 0.75, 0.8, 0.9],
            detector_targets: vec![DetectorLabel::Number],
        }
    }
}

/// One (feature kind, overlap, target) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub family: FeatureFamily,
    pub overlap: f64,
    pub target: DetectorLabel,
}

impl Cell {
    /// File-name-safe identifier, e.g. `cs-o0.75-number`.
    pub fn id(&self) -> String {
        format!("{}-o{}-{}", self.family, self.overlap, self.target)
    }

    /// Seed of this cell: depends only on the master seed and the cell's
    /// coordinates, never on execution order.
    pub fn seed(&self, master: u64) -> u64 {
        let fam = FeatureFamily::ALL.iter().position(|f| *f == self.family).unwrap() as u64;
        let target = match self.target {
            DetectorLabel::Number => 10,
            DetectorLabel::Digit(d) => d as u64,
        };
        let overlap = (self.overlap * 1e6).round() as u64;
        derive_seed(derive_seed(derive_seed(master, fam), overlap), target)
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.feature_kinds.is_empty() || self.overlap_thresholds.is_empty() || self.detector_targets.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if let Some(t) = self.overlap_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!("overlap threshold {t} outside (0, 1]")));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &target in &self.detector_targets {
            for &family in &self.feature_kinds {
                for &overlap in &self.overlap_thresholds {
                    out.push(Cell { family, overlap, target });
                }
            }
        }
        out
    }
}

/// Train/test patches of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellData {
    pub train_pos: Vec<GrayImage>,
    pub train_neg: Vec<GrayImage>,
    pub test_pos: Vec<GrayImage>,
    pub test_neg: Vec<GrayImage>,
}

/// Where grid cells get their samples.
pub trait GridSource: Sync {
    fn samples(&self, cell: &Cell, seed: u64) -> Result<CellData>;
}

/// Annotated frames prepared per cell with the cell's overlap threshold
/// and target. The split is made on images with the base seed, so every
/// cell sees the same train/test images.
pub struct FrameSource<F> {
    pub annotations: Vec<Annotation>,
    pub load: F,
    pub base: DatasetConfig,
    /// Aperture per target; falls back to the base aperture.
    pub apertures: BTreeMap<DetectorLabel, crate::features::Aperture>,
}

impl<F> GridSource for FrameSource<F>
where
    F: Fn(&str) -> Result<GrayImage> + Sync,
{
    fn samples(&self, cell: &Cell, _seed: u64) -> Result<CellData> {
        let cfg = DatasetConfig {
            label: cell.target,
            overlap_threshold: cell.overlap,
            aperture: self.apertures.get(&cell.target).copied().unwrap_or(self.base.aperture),
            ..self.base.clone()
        };
        let (_, set) = prepare(&self.annotations, &self.load, &cfg)?;
        Ok(CellData {
            train_pos: set.patches(true, Split::Train),
            train_neg: set.patches(false, Split::Train),
            test_pos: set.patches(true, Split::Test),
            test_neg: set.patches(false, Split::Test),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One row of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub family: FeatureFamily,
    pub overlap: f64,
    pub target: DetectorLabel,
    pub status: CellStatus,
    pub seed: u64,
    pub n_train_pos: usize,
    pub n_train_neg: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
    pub feature_count: Option<usize>,
    pub stage_count: Option<usize>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(cell: &Cell, seed: u64, data: Option<&CellData>, seconds: f64, e: &Error) -> Self {
        let n = |f: fn(&CellData) -> usize| data.map_or(0, f);
        CellResult {
            cell: cell.id(),
            family: cell.family,
            overlap: cell.overlap,
            target: cell.target,
            status: CellStatus::Failed,
            seed,
            n_train_pos: n(|d| d.train_pos.len()),
            n_train_neg: n(|d| d.train_neg.len()),
            n_test_pos: n(|d| d.test_pos.len()),
            n_test_neg: n(|d| d.test_neg.len()),
            feature_count: None,
            stage_count: None,
            far: None,
            frr: None,
            seconds,
            error: Some(e.to_string()),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a decision log as CSV (one row per sample, header first).
pub fn write_decisions(path: &Path, log: &[Decision]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in log {
        w.serialize(d)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn run_cell(cell: &Cell, source: &dyn GridSource, train: &CascadeConfig, master_seed: u64, dir: Option<&Path>) -> CellResult {
    let seed = cell.seed(master_seed);
    let start = Instant::now();
    let data = match source.samples(cell, seed) {
        Ok(d) => d,
        Err(e) => return CellResult::failed(cell, seed, None, start.elapsed().as_secs_f64(), &e),
    };
    let cfg = CascadeConfig {
        family: cell.family,
        seed,
        ..train.clone()
    };
    let aperture = data.train_pos.first().map(|g| crate::features::Aperture::new(g.width(), g.height()));
    let outcome = (|| -> Result<CellResult> {
        let aperture = aperture.ok_or_else(|| Error::Config("no training positives".into()))?;
        let (cascade, trace) = train_cascade(cell.target, aperture, &data.train_pos, &data.train_neg, &cfg)?;
        let (m, log) = measure(&cascade, &data.test_pos, &data.test_neg)?;
        if let Some(dir) = dir {
            let id = cell.id();
            write_atomic(&dir.join(format!("{id}.model.json")), cascade.to_json()?.as_bytes())?;
            write_atomic(&dir.join(format!("{id}.trace.json")), serde_json::to_string_pretty(&trace)?.as_bytes())?;
            write_decisions(&dir.join(format!("{id}.decisions.csv")), &log)?;
        }
        Ok(CellResult {
            cell: cell.id(),
            family: cell.family,
            overlap: cell.overlap,
            target: cell.target,
            status: CellStatus::Ok,
            seed,
            n_train_pos: data.train_pos.len(),
            n_train_neg: data.train_neg.len(),
            n_test_pos: data.test_pos.len(),
            n_test_neg: data.test_neg.len(),
            feature_count: Some(m.feature_count),
            stage_count: Some(m.stage_count),
            far: m.far,
            frr: m.frr,
            seconds: start.elapsed().as_secs_f64(),
            error: None,
        })
    })();
    outcome.unwrap_or_else(|e| CellResult::failed(cell, seed, Some(&data), start.elapsed().as_secs_f64(), &e))
}

/// Trains and measures every cell. With `out_dir`, each finished cell is
/// written to `out_dir/cells/<id>.json` (with its model, training trace
/// and decision log) and cells already recorded as ok are not rerun.
/// A failing cell is recorded as failed and the grid continues. Results
/// come back in grid order.
pub fn run_grid(
    grid: &ExperimentGrid,
    source: &dyn GridSource,
    train: &CascadeConfig,
    master_seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<CellResult>> {
    grid.validate()?;
    train.validate()?;
    let cells_dir = out_dir.map(|d| d.join("cells"));
    if let Some(d) = &cells_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let results: Vec<Result<CellResult>> = grid
        .cells()
        .par_iter()
        .map(|cell| {
            let record: Option<PathBuf> = cells_dir.as_ref().map(|d| d.join(format!("{}.json", cell.id())));
            if let Some(p) = record.as_ref().filter(|p| p.exists()) {
                let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let prev: CellResult = serde_json::from_str(&s)?;
                if prev.status == CellStatus::Ok {
                    info!("{}: already done", cell.id());
                    return Ok(prev);
                }
            }
            let r = run_cell(cell, source, train, master_seed, cells_dir.as_deref());
            match &r.error {
                Some(e) => warn!("{}: failed: {e}", r.cell),
                None => info!("{}: {} features, far {}, frr {}", r.cell, r.feature_count.unwrap_or(0), fmt_rate(r.far), fmt_rate(r.frr)),
            }
            if let Some(p) = &record {
                write_atomic(p, serde_json::to_string_pretty(&r)?.as_bytes())?;
            }
            Ok(r)
        })
        .collect();
    results.into_iter().collect()
}

const DASH: &str = "\u{2014}";

pub fn write_results_csv(results: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_results_csv(s: &str) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_reader(s.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One figure series table: rows are overlap thresholds, columns feature
/// kinds. Missing or failed cells are empty.
pub fn series_csv(results: &[CellResult], target: DetectorLabel, value: impl Fn(&CellResult) -> Option<f64>) -> String {
    let (overlaps, families) = axes(results, target);
    let mut s = String::from("overlap");
    for f in &families {
        let _ = write!(s, ",{f}");
    }
    s.push('\n');
    for &o in &overlaps {
        let _ = write!(s, "{o}");
        for &f in &families {
            let v = lookup(results, target, f, o).and_then(&value);
            let _ = write!(s, ",{}", v.map(|v| v.to_string()).unwrap_or_default());
        }
        s.push('\n');
    }
    s
}

fn axes(results: &[CellResult], target: DetectorLabel) -> (Vec<f64>, Vec<FeatureFamily>) {
    let mut overlaps: Vec<f64> = results.iter().filter(|r| r.target == target).map(|r| r.overlap).collect();
    overlaps.sort_by(f64::total_cmp);
    overlaps.dedup();
    let families = FeatureFamily::ALL
        .into_iter()
        .filter(|f| results.iter().any(|r| r.target == target && r.family == *f))
        .collect();
    (overlaps, families)
}

fn lookup(results: &[CellResult], target: DetectorLabel, family: FeatureFamily, overlap: f64) -> Option<&CellResult> {
    results
        .iter()
        .find(|r| r.target == target && r.family == family && r.overlap == overlap && r.status == CellStatus::Ok)
}

/// Per-digit table for one feature kind and overlap: rows Training,
/// Testing and FRR(%), columns digits 0-9. Missing digits show a dash.
pub fn digit_table(results: &[CellResult], family: FeatureFamily, overlap: f64) -> String {
    let cell = |d: u8| lookup(results, DetectorLabel::Digit(d), family, overlap);
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push(("Digit".into(), (0..10).map(|d| d.to_string()).collect()));
    rows.push(("Training".into(), (0..10).map(|d| cell(d).map_or(DASH.into(), |r| r.n_train_pos.to_string())).collect()));
    rows.push(("Testing".into(), (0..10).map(|d| cell(d).map_or(DASH.into(), |r| r.n_test_pos.to_string())).collect()));
    rows.push((
        "FRR(%)".into(),
        (0..10)
            .map(|d| match cell(d) {
                Some(r) => r.frr.map_or("n/a".into(), |v| format!("{:.2}", v * 100.0)),
                None => DASH.into(),
            })
            .collect(),
    ));
    let head = rows.iter().map(|(h, _)| h.chars().count()).max().unwrap();
    let width = rows.iter().flat_map(|(_, v)| v.iter().map(|c| c.chars().count())).max().unwrap();
    let mut s = format!("{family} features, overlap {overlap}\n");
    for (h, vals) in &rows {
        let _ = write!(s, "{h:<head$}");
        for v in vals {
            let _ = write!(s, " | {v:>width$}");
        }
        s.push('\n');
    }
    s
}

/// Minimal SVG line plot: one polyline per series.
pub fn svg_plot(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, 0f64, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{title}</text>", w / 2.0);
    let _ = writeln!(
        s,
        "<path d=\"M{m} {m} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        h - m,
        w - m
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">overlap threshold</text>", w / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>",
        h / 2.0,
        h / 2.0
    );
    for (v, label) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{label}</text>", px(v), h - m + 14.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", m - 4.0, py(v) + 4.0, fmt_tick(v));
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"{c}\" fill=\"none\" stroke-width=\"2\"/>", path.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{c}\"/>", px(x), py(y));
        }
        let ly = m + 14.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{c}\">{name}</text>", w - m + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v}")
    } else {
        format!("{v:.3}")
    }
}

fn series_points(results: &[CellResult], target: DetectorLabel, value: impl Fn(&CellResult) -> Option<f64>) -> Vec<(String, Vec<(f64, f64)>)> {
    let (overlaps, families) = axes(results, target);
    families
        .iter()
        .map(|&f| {
            let p = overlaps
                .iter()
                .filter_map(|&o| lookup(results, target, f, o).and_then(&value).map(|v| (o, v)))
                .collect();
            (f.to_string(), p)
        })
        .collect()
}

/// Writes `results.csv`, per-target CSV series and SVG plots of feature
/// count and FRR against overlap, and a per-digit table for every
/// (feature kind, overlap) that has digit cells. Returns the written paths.
pub fn emit_reports(results: &[CellResult], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Config("no results to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("results.csv".into(), write_results_csv(results)?)?;
    let mut targets: Vec<DetectorLabel> = results.iter().map(|r| r.target).collect();
    targets.sort();
    targets.dedup();
    let features = |r: &CellResult| r.feature_count.map(|v| v as f64);
    let frr = |r: &CellResult| r.frr.map(|v| v * 100.0);
    for &t in &targets {
        put(format!("features-{t}.csv"), series_csv(results, t, features))?;
        put(format!("frr-{t}.csv"), series_csv(results, t, frr))?;
        put(
            format!("features-{t}.svg"),
            svg_plot(&format!("Features in cascade ({t})"), "features", &series_points(results, t, features)),
        )?;
        put(format!("frr-{t}.svg"), svg_plot(&format!("FRR ({t})"), "FRR, %", &series_points(results, t, frr)))?;
    }
    let mut combos: Vec<(FeatureFamily, f64)> = results
        .iter()
        .filter(|r| matches!(r.target, DetectorLabel::Digit(_)))
        .map(|r| (r.family, r.overlap))
        .collect();
    combos.sort_by(|a, b| a.0.as_str().cmp(b.0.as_str()).then(a.1.total_cmp(&b.1)));
    combos.dedup();
    for (f, o) in combos {
        put(format!("digits-{f}-o{o}.txt"), digit_table(results, f, o))?;
    }
    Ok(written)
}
