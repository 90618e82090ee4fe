use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weak::{code_count, smoothing, HaarBins, Histograms, WeakClassifier};
use crate::error::{Error, Result};
use crate::features::{FeatureDescriptor, FeatureKind, Window};
use crate::imaging::IntegralImage;

/// Clamp applied to the weighted error before computing a vote weight.
const ERROR_CLAMP: f64 = 1e-10;

/// Weighted vote of weak classifiers with threshold `theta`: a window is
/// accepted when `Σ weight_k · h_k > theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongClassifier {
    pub weaks: Vec<WeakClassifier>,
    pub weights: Vec<f64>,
    pub theta: f64,
}

impl StrongClassifier {
    pub fn new(weaks: Vec<WeakClassifier>, weights: Vec<f64>, theta: f64) -> Result<Self> {
        if weaks.is_empty() || weaks.len() != weights.len() {
            return Err(Error::Format(format!(
                "{} weak classifiers with {} weights",
                weaks.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Format("weak weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(theta >= 0.0 && theta <= total) {
            return Err(Error::Format(format!("theta {theta} outside [0, {total}]")));
        }
        Ok(StrongClassifier { weaks, weights, theta })
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    #[inline]
    pub fn score(&self, ii: &IntegralImage, win: Window) -> f64 {
        let mut score = 0.0;
        for (weak, &w) in self.weaks.iter().zip(&self.weights) {
            if weak.eval(ii, win) {
                score += w;
            }
        }
        score
    }

    /// (decision, score)
    #[inline]
    pub fn eval(&self, ii: &IntegralImage, win: Window) -> (bool, f64) {
        let score = self.score(ii, win);
        (score > self.theta, score)
    }

    /// Decision for a precomputed score.
    #[inline]
    pub fn decide(&self, score: f64) -> bool {
        score > self.theta
    }
}

/// Per-stage training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageTargets {
    /// Minimum fraction of training positives the stage must accept.
    pub min_tpr: f64,
    /// Maximum fraction of training negatives the stage may accept.
    pub max_fpr: f64,
    /// Upper bound on boosting rounds (weak classifiers) per stage.
    pub max_rounds: usize,
}

impl Default for StageTargets {
    fn default() -> Self {
        StageTargets {
            min_tpr: 0.995,
            max_fpr: 0.5,
            max_rounds: 200,
        }
    }
}

/// Feature codes of every sample for every feature of a pool, stored
/// feature-major so each weak-learner fit scans one contiguous column.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    features: Vec<FeatureDescriptor>,
    bins: Vec<Option<HaarBins>>,
    codes: Vec<u16>,
    n_samples: usize,
    code_count: usize,
}

impl FeatureMatrix {
    /// Evaluates `pool` on aperture-sized samples (each given by its
    /// integral image, evaluated at the origin). Haar contrasts are
    /// quantized with bins fitted to this sample set.
    pub fn build(pool: &[FeatureDescriptor], samples: &[IntegralImage]) -> Result<Self> {
        let first = pool
            .first()
            .ok_or_else(|| Error::Config("empty feature pool".into()))?;
        if pool.iter().any(|f| f.kind.family() != first.kind.family()) {
            return Err(Error::Config("feature pool mixes families".into()));
        }
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let n = samples.len();
        let origin = Window::at(0, 0);
        let columns: Vec<(Option<HaarBins>, Vec<u16>)> = pool
            .par_iter()
            .map(|f| match f.kind {
                FeatureKind::Haar(_) => {
                    let values: Vec<f64> = samples.iter().map(|ii| f.contrast_at(ii, origin)).collect();
                    let bins = HaarBins::fit(&values);
                    (Some(bins), values.iter().map(|&v| bins.bin(v)).collect())
                }
                _ => (None, samples.iter().map(|ii| f.code_at(ii, origin)).collect()),
            })
            .collect();
        let mut bins = Vec::with_capacity(pool.len());
        let mut codes = Vec::with_capacity(pool.len() * n);
        for (b, col) in columns {
            bins.push(b);
            codes.extend_from_slice(&col);
        }
        Ok(FeatureMatrix {
            features: pool.to_vec(),
            bins,
            codes,
            n_samples: n,
            code_count: code_count(first.kind),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn feature(&self, f: usize) -> &FeatureDescriptor {
        &self.features[f]
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u16] {
        &self.codes[f * self.n_samples..(f + 1) * self.n_samples]
    }

    pub fn code_count(&self) -> usize {
        self.code_count
    }

    fn weak(&self, f: usize, lut: Vec<bool>) -> WeakClassifier {
        WeakClassifier {
            feature: self.features[f],
            lut,
            bins: self.bins[f],
        }
    }
}

/// One boosting round as observed during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Index of the selected feature in the pool.
    pub feature: usize,
    pub weighted_error: f64,
    pub alpha: f64,
    /// Error of the unthresholded vote (`score > Σα/2`) weighted by the
    /// initial sample distribution.
    pub training_error: f64,
    /// Running product of `2·sqrt(err·(1−err))`.
    pub error_bound: f64,
    /// Calibrated stage threshold after this round, with the resulting
    /// training TPR/FPR.
    pub theta: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    pub rounds: Vec<RoundTrace>,
    /// Set when boosting stopped because no feature had error below 0.5.
    pub exhausted: bool,
}

/// Discrete AdaBoost over the feature pool in `matrix`.
///
/// Each round fits every feature's lookup table to the current weights,
/// keeps the one with the smallest weighted error (lowest index on ties),
/// gives it weight `½·ln((1−err)/err)` and reweights the samples. The
/// stage threshold starts at half the total weight and is lowered until
/// `targets.min_tpr` of the positives pass. Boosting stops once the
/// training FPR is at most `targets.max_fpr`, or after `max_rounds`.
pub fn train_strong(matrix: &FeatureMatrix, labels: &[bool], targets: &StageTargets) -> Result<(StrongClassifier, BoostTrace)> {
    let n = matrix.n_samples();
    assert_eq!(labels.len(), n, "one label per sample");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if targets.max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    let eps = smoothing(n_pos, n_neg);
    let initial: Vec<f64> = labels
        .iter()
        .map(|&l| if l { 0.5 / n_pos as f64 } else { 0.5 / n_neg as f64 })
        .collect();
    let mut weights = initial.clone();
    let mut scores = vec![0.0f64; n];
    let mut weaks = Vec::new();
    let mut alphas = Vec::new();
    let mut trace = BoostTrace {
        rounds: Vec::new(),
        exhausted: false,
    };
    let mut bound = 1.0;
    let mut theta = 0.0;

    for _ in 0..targets.max_rounds {
        let k = matrix.code_count();
        let (best_err, best) = (0..matrix.n_features())
            .into_par_iter()
            .map_init(
                || Histograms::new(k),
                |h, f| (h.error(matrix.column(f), labels, &weights, eps), f),
            )
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        if !(best_err < 0.5) {
            trace.exhausted = true;
            break;
        }
        let fit = Histograms::new(k).fit(matrix.column(best), labels, &weights, eps);
        let err = fit.error.clamp(ERROR_CLAMP, 0.5 - ERROR_CLAMP);
        let alpha = 0.5 * ((1.0 - err) / err).ln();

        let column = matrix.column(best);
        let (up, down) = (alpha.exp(), (-alpha).exp());
        let mut total = 0.0;
        for i in 0..n {
            let h = fit.lut[column[i] as usize];
            if h {
                scores[i] += alpha;
            }
            weights[i] *= if h == labels[i] { down } else { up };
            total += weights[i];
        }
        weights.iter_mut().for_each(|w| *w /= total);

        weaks.push(matrix.weak(best, fit.lut));
        alphas.push(alpha);
        bound *= 2.0 * (err * (1.0 - err)).sqrt();

        let half = alphas.iter().sum::<f64>() / 2.0;
        let training_error = (0..n)
            .filter(|&i| (scores[i] > half) != labels[i])
            .map(|i| initial[i])
            .sum();
        theta = calibrate_theta(&scores, labels, half, targets.min_tpr);
        let (tpr, fpr) = rates(&scores, labels, theta);
        trace.rounds.push(RoundTrace {
            feature: best,
            weighted_error: fit.error,
            alpha,
            training_error,
            error_bound: bound,
            theta,
            tpr,
            fpr,
        });
        if tpr >= targets.min_tpr && fpr <= targets.max_fpr {
            break;
        }
    }
    if weaks.is_empty() {
        return Err(Error::PoolExhausted);
    }
    if trace.exhausted {
        log::warn!(
            "feature pool exhausted after {} rounds; stage kept as is",
            weaks.len()
        );
    }
    Ok((StrongClassifier::new(weaks, alphas, theta)?, trace))
}

/// Largest convenient threshold (at most `half`) that lets at least
/// `min_tpr` of the positives through: the midpoint between the k-th best
/// positive score and the next lower score of any sample.
pub(crate) fn calibrate_theta(scores: &[f64], labels: &[bool], half: f64, min_tpr: f64) -> f64 {
    let mut pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() {
        return half;
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let need = ((min_tpr * pos.len() as f64 - 1e-9).ceil().max(1.0) as usize).min(pos.len());
    let kth = pos[need - 1];
    let below = scores.iter().copied().filter(|&s| s < kth).fold(None, |m: Option<f64>, s| {
        Some(m.map_or(s, |m| m.max(s)))
    });
    let cal = match below {
        Some(b) => {
            let mid = 0.5 * (kth + b);
            if mid < kth {
                mid
            } else {
                b
            }
        }
        None => 0.5 * kth,
    };
    cal.min(half).max(0.0)
}

/// (TPR, FPR) of `score > theta` over the labelled scores.
pub(crate) fn rates(scores: &[f64], labels: &[bool], theta: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let accept = s > theta;
        if l {
            p += 1;
            tp += accept as usize;
        } else {
            n += 1;
            fp += accept as usize;
        }
    }
    (tp as f64 / p.max(1) as f64, fp as f64 / n.max(1) as f64)
}
