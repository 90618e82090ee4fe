use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::strong::{train_strong, BoostTrace, FeatureMatrix, StageTargets, StrongClassifier};
use crate::error::{Error, Result};
use crate::features::{enumerate_features, Aperture, FeatureFamily, Lattice, Window};
use crate::imaging::{check_rect, GrayImage, IntegralImage};

/// What a cascade detects: the carriage-number plate or one digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorLabel {
    Number,
    Digit(u8),
}

impl fmt::Display for DetectorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorLabel::Number => f.write_str("number"),
            DetectorLabel::Digit(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for DetectorLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "number" | "plate" => Ok(DetectorLabel::Number),
            d if d.len() == 1 && d.as_bytes()[0].is_ascii_digit() => Ok(DetectorLabel::Digit(d.as_bytes()[0] - b'0')),
            other => Err(Error::Config(format!("unknown detector label '{other}'"))),
        }
    }
}

impl Serialize for DetectorLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DetectorLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of running a cascade on one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CascadeDecision {
    /// Every stage accepted; `score` is the last stage's vote.
    Accept { score: f64 },
    /// Stage `stage` (0-based) rejected; later stages were not evaluated.
    Reject { stage: usize },
}

impl CascadeDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, CascadeDecision::Accept { .. })
    }
}

/// Strong classifiers connected in series.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub label: DetectorLabel,
    pub aperture: Aperture,
    pub family: FeatureFamily,
    pub stages: Vec<StrongClassifier>,
}

impl Cascade {
    pub fn new(label: DetectorLabel, aperture: Aperture, family: FeatureFamily, stages: Vec<StrongClassifier>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Format("cascade needs at least one stage".into()));
        }
        for stage in &stages {
            for weak in &stage.weaks {
                weak.feature.validate(aperture)?;
                if weak.feature.kind.family() != family {
                    return Err(Error::Format(format!(
                        "{} feature in a {family} cascade",
                        weak.feature.kind.family()
                    )));
                }
            }
        }
        Ok(Cascade {
            label,
            aperture,
            family,
            stages,
        })
    }

    /// Total number of weak classifiers over all stages.
    pub fn feature_count(&self) -> usize {
        self.stages.iter().map(|s| s.weaks.len()).sum()
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Checks that the scaled aperture at `win` lies inside the image.
    pub fn check_window(&self, ii: &IntegralImage, win: Window) -> Result<()> {
        check_rect(self.aperture.window(win.x, win.y, win.scale), ii.width(), ii.height())
    }

    /// Evaluates stages in order and stops at the first rejection.
    pub fn eval(&self, ii: &IntegralImage, win: Window) -> Result<CascadeDecision> {
        self.check_window(ii, win)?;
        Ok(self.eval_unchecked(ii, win, None))
    }

    /// As [`Cascade::eval`], additionally counting how many windows reach
    /// each stage (`counters[k]` is bumped when stage `k` is evaluated).
    pub fn eval_counted(&self, ii: &IntegralImage, win: Window, counters: &mut [u64]) -> Result<CascadeDecision> {
        self.check_window(ii, win)?;
        Ok(self.eval_unchecked(ii, win, Some(counters)))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, ii: &IntegralImage, win: Window, mut counters: Option<&mut [u64]>) -> CascadeDecision {
        let mut score = 0.0;
        for (k, stage) in self.stages.iter().enumerate() {
            if let Some(c) = counters.as_deref_mut() {
                c[k] += 1;
            }
            let (accept, s) = stage.eval(ii, win);
            if !accept {
                return CascadeDecision::Reject { stage: k };
            }
            score = s;
        }
        CascadeDecision::Accept { score }
    }

    /// Decision on an aperture-sized patch.
    pub fn accepts_patch(&self, ii: &IntegralImage) -> bool {
        self.eval_unchecked(ii, Window::at(0, 0), None).accepted()
    }
}

/// Supplies negatives that the partially trained cascade still accepts.
pub trait NegativeMiner {
    /// Up to `count` aperture-sized negatives accepted by every stage of
    /// `cascade` (any candidate while it has no stages yet).
    fn mine(&mut self, cascade: &Cascade, count: usize) -> Result<Vec<IntegralImage>>;
}

/// Mines from a fixed pool of aperture-sized negative patches, visited in
/// a seeded order.
pub struct PatchMiner {
    pool: Vec<IntegralImage>,
}

impl PatchMiner {
    pub fn new(patches: &[GrayImage], seed: u64) -> Self {
        let mut pool: Vec<IntegralImage> = patches.iter().map(IntegralImage::new).collect();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        PatchMiner { pool }
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }
}

impl NegativeMiner for PatchMiner {
    fn mine(&mut self, cascade: &Cascade, count: usize) -> Result<Vec<IntegralImage>> {
        let accepted: Vec<bool> = self.pool.par_iter().map(|ii| cascade.accepts_patch(ii)).collect();
        Ok(self
            .pool
            .iter()
            .zip(accepted)
            .filter(|(_, a)| *a)
            .take(count)
            .map(|(ii, _)| ii.clone())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub family: FeatureFamily,
    pub lattice: Lattice,
    pub stage: StageTargets,
    /// Stop once the held-out negative acceptance rate is at most this.
    pub far_target: f64,
    pub max_stages: usize,
    /// Negatives mined per stage; twice the positive count when unset.
    pub negatives_per_stage: Option<usize>,
    /// Fraction of the negative patches held out to measure cumulative FAR.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            family: FeatureFamily::Cs,
            lattice: Lattice::default(),
            stage: StageTargets::default(),
            far_target: 5e-5,
            max_stages: 20,
            negatives_per_stage: None,
            validation_fraction: 0.25,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.stage;
        if !(s.min_tpr > 0.0 && s.min_tpr <= 1.0) || !(s.max_fpr >= 0.0 && s.max_fpr <= 1.0) {
            return Err(Error::Config("stage targets must lie in [0, 1]".into()));
        }
        if !(self.far_target >= 0.0 && self.far_target <= 1.0) {
            return Err(Error::Config(format!("far_target {} outside [0, 1]", self.far_target)));
        }
        if self.max_stages == 0 {
            return Err(Error::Config("max_stages must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    FarReached,
    StageLimit,
    NegativesExhausted,
    PositivesExhausted,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub n_pos: usize,
    pub n_neg: usize,
    pub weak_count: usize,
    pub theta: f64,
    /// Acceptance rates of the new stage on its own training samples.
    pub tpr: f64,
    pub fpr: f64,
    /// Fraction of the held-out pool accepted by the cascade so far.
    pub cumulative_far: f64,
    /// Fraction of the held-out negatives that reached this stage and were
    /// accepted by it.
    pub conditional_far: f64,
    pub boost: BoostTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub stages: Vec<StageTrace>,
    pub stop: StopReason,
    pub validation_size: usize,
    pub final_far: f64,
}

/// Trains a cascade from positive patches and a pool of negative patches.
/// A `validation_fraction` share of the negatives is held out to decide
/// when the FAR target is met; the rest feed bootstrap mining.
pub fn train_cascade(
    label: DetectorLabel,
    aperture: Aperture,
    positives: &[GrayImage],
    negatives: &[GrayImage],
    cfg: &CascadeConfig,
) -> Result<(Cascade, CascadeTrace)> {
    cfg.validate()?;
    if negatives.len() < 2 {
        return Err(Error::Config("need at least two negative patches".into()));
    }
    let mut shuffled: Vec<&GrayImage> = negatives.iter().collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001));
    let n_val = ((negatives.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, negatives.len() - 1);
    let validation: Vec<GrayImage> = shuffled[..n_val].iter().map(|&g| g.clone()).collect();
    let mining: Vec<GrayImage> = shuffled[n_val..].iter().map(|&g| g.clone()).collect();
    let mut miner = PatchMiner::new(&mining, cfg.seed);
    train_cascade_with(label, aperture, positives, &mut miner, &validation, cfg)
}

/// Trains stages until the held-out FAR reaches `cfg.far_target`, the stage
/// limit is hit, or mining runs dry.
pub fn train_cascade_with(
    label: DetectorLabel,
    aperture: Aperture,
    positives: &[GrayImage],
    miner: &mut dyn NegativeMiner,
    validation: &[GrayImage],
    cfg: &CascadeConfig,
) -> Result<(Cascade, CascadeTrace)> {
    cfg.validate()?;
    let sized = |g: &GrayImage| g.width() == aperture.width && g.height() == aperture.height;
    if positives.is_empty() || validation.is_empty() {
        return Err(Error::Config("need positive patches and a held-out negative pool".into()));
    }
    if !positives.iter().chain(validation).all(sized) {
        return Err(Error::Config(format!("all patches must be {aperture}")));
    }
    let pool = enumerate_features(aperture, cfg.family, cfg.lattice)?;
    let positives: Vec<IntegralImage> = positives.iter().map(IntegralImage::new).collect();
    let validation: Vec<IntegralImage> = validation.iter().map(IntegralImage::new).collect();

    let mut cascade = Cascade {
        label,
        aperture,
        family: cfg.family,
        stages: Vec::new(),
    };
    let mut traces = Vec::new();
    let mut val_alive = vec![true; validation.len()];
    let mut far = 1.0;
    let stop = loop {
        if far <= cfg.far_target && !cascade.stages.is_empty() {
            break StopReason::FarReached;
        }
        if cascade.stages.len() >= cfg.max_stages {
            break StopReason::StageLimit;
        }
        let pos: Vec<&IntegralImage> = positives.iter().filter(|ii| cascade.accepts_patch(ii)).collect();
        if pos.is_empty() {
            break StopReason::PositivesExhausted;
        }
        let want = cfg.negatives_per_stage.unwrap_or(2 * pos.len()).max(1);
        let neg = miner.mine(&cascade, want)?;
        if neg.is_empty() {
            break StopReason::NegativesExhausted;
        }
        if neg.len() < want {
            log::info!("stage {}: mined only {} of {want} negatives", cascade.stages.len() + 1, neg.len());
        }
        let samples: Vec<IntegralImage> = pos.iter().map(|&ii| ii.clone()).chain(neg.iter().cloned()).collect();
        let labels: Vec<bool> = (0..samples.len()).map(|i| i < pos.len()).collect();
        let matrix = FeatureMatrix::build(&pool, &samples)?;
        drop(samples);
        let (stage, boost) = match train_strong(&matrix, &labels, &cfg.stage) {
            Ok(r) => r,
            Err(Error::PoolExhausted) if !cascade.stages.is_empty() => break StopReason::PoolExhausted,
            Err(e) => return Err(e),
        };
        let (tpr, fpr) = boost.rounds.last().map(|r| (r.tpr, r.fpr)).unwrap_or((0.0, 0.0));
        if boost.exhausted && tpr < cfg.stage.min_tpr && !cascade.stages.is_empty() {
            // The pool ran out before the stage could pass enough positives;
            // adding it would only throw positives away.
            log::warn!("stage {} dropped: tpr {tpr:.4} below target", cascade.stages.len() + 1);
            break StopReason::PoolExhausted;
        }

        let reached = val_alive.iter().filter(|&&a| a).count();
        let still: Vec<bool> = validation
            .par_iter()
            .zip(&val_alive)
            .map(|(ii, &alive)| alive && stage.eval(ii, Window::at(0, 0)).0)
            .collect();
        val_alive = still;
        let accepted = val_alive.iter().filter(|&&a| a).count();
        far = accepted as f64 / validation.len() as f64;
        let conditional_far = if reached == 0 { 0.0 } else { accepted as f64 / reached as f64 };

        log::info!(
            "stage {}: {} weaks, {} pos / {} neg, train tpr {tpr:.4} fpr {fpr:.4}, held-out far {far:.3e}",
            cascade.stages.len() + 1,
            stage.weaks.len(),
            pos.len(),
            neg.len(),
        );
        traces.push(StageTrace {
            n_pos: pos.len(),
            n_neg: neg.len(),
            weak_count: stage.weaks.len(),
            theta: stage.theta,
            tpr,
            fpr,
            cumulative_far: far,
            conditional_far,
            boost,
        });
        cascade.stages.push(stage);
    };
    if cascade.stages.is_empty() {
        return Err(match stop {
            StopReason::NegativesExhausted => Error::Config("negative pool is empty".into()),
            _ => Error::PoolExhausted,
        });
    }
    Ok((
        cascade,
        CascadeTrace {
            stages: traces,
            stop,
            validation_size: validation.len(),
            final_far: far,
        },
    ))
}
