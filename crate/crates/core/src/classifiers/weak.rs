use crate::error::{Error, Result};
use crate::features::{FeatureDescriptor, FeatureKind, Window, CENSUS_CODES, LBP_CODES};
use crate::imaging::IntegralImage;

/// Number of quantization bins for Haar contrasts.
pub const HAAR_BINS: usize = 64;

/// Lower and upper percentiles bounding the Haar bin range.
const HAAR_PERCENTILES: (f64, f64) = (0.005, 0.995);

/// Equal-width bins over `[lo, hi]`; values outside are clamped to the edge
/// bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarBins {
    pub lo: f64,
    pub hi: f64,
}

impl HaarBins {
    /// Bin range from the 0.5% and 99.5% percentiles of `values`.
    pub fn fit(values: &[f64]) -> HaarBins {
        assert!(!values.is_empty(), "cannot fit bins to no values");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let at = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        HaarBins {
            lo: at(HAAR_PERCENTILES.0),
            hi: at(HAAR_PERCENTILES.1),
        }
    }

    #[inline]
    pub fn bin(&self, v: f64) -> u16 {
        let width = self.hi - self.lo;
        if !(width > 0.0) {
            // degenerate range: split on the single value
            return if v < self.lo {
                0
            } else if v > self.lo {
                HAAR_BINS as u16 - 1
            } else {
                HAAR_BINS as u16 / 2
            };
        }
        let b = ((v - self.lo) / width * HAAR_BINS as f64).floor();
        b.clamp(0.0, (HAAR_BINS - 1) as f64) as u16
    }
}

/// Size of the code alphabet a feature kind produces.
pub fn code_count(kind: FeatureKind) -> usize {
    match kind {
        FeatureKind::Census => CENSUS_CODES,
        FeatureKind::Lbp => LBP_CODES,
        FeatureKind::Haar(_) => HAAR_BINS,
    }
}

/// Single-feature classifier: a 0/1 lookup table over feature codes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub feature: FeatureDescriptor,
    pub lut: Vec<bool>,
    /// Present exactly for Haar features.
    pub bins: Option<HaarBins>,
}

impl WeakClassifier {
    pub fn new(feature: FeatureDescriptor, lut: Vec<bool>, bins: Option<HaarBins>) -> Result<Self> {
        if lut.len() != code_count(feature.kind) {
            return Err(Error::Format(format!(
                "lut of length {} for {} (expected {})",
                lut.len(),
                feature,
                code_count(feature.kind)
            )));
        }
        if matches!(feature.kind, FeatureKind::Haar(_)) != bins.is_some() {
            return Err(Error::Format(format!("bins must be given exactly for haar features ({feature})")));
        }
        Ok(WeakClassifier { feature, lut, bins })
    }

    /// Feature code of the window; the window must lie inside the image.
    #[inline]
    pub fn code(&self, ii: &IntegralImage, win: Window) -> u16 {
        match self.bins {
            Some(bins) => bins.bin(self.feature.contrast_at(ii, win)),
            None => self.feature.code_at(ii, win),
        }
    }

    #[inline]
    pub fn eval(&self, ii: &IntegralImage, win: Window) -> bool {
        self.lut[self.code(ii, win) as usize]
    }
}

/// Result of fitting a lookup table to weighted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LutFit {
    pub lut: Vec<bool>,
    /// Σ weight · [lut(code) != label]
    pub error: f64,
}

/// Fits a weak classifier's table from per-sample codes.
///
/// Builds the boosting-weighted code histograms of each class, adds a
/// pseudo-mass of `1 / (2 · N_class)` to every bin, and sets `lut[c]` when
/// the smoothed positive mass exceeds the smoothed negative mass. Ties map
/// to background.
pub fn train_weak(codes: &[u16], labels: &[bool], weights: &[f64], code_count: usize) -> Result<LutFit> {
    assert_eq!(codes.len(), labels.len());
    assert_eq!(codes.len(), weights.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut scratch = Histograms::new(code_count);
    Ok(scratch.fit(codes, labels, weights, smoothing(n_pos, n_neg)))
}

#[inline]
pub(crate) fn smoothing(n_pos: usize, n_neg: usize) -> (f64, f64) {
    (0.5 / n_pos as f64, 0.5 / n_neg as f64)
}

/// Reusable histogram buffers for the weak-learner search.
pub(crate) struct Histograms {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Histograms {
    pub(crate) fn new(code_count: usize) -> Self {
        Histograms {
            pos: vec![0.0; code_count],
            neg: vec![0.0; code_count],
        }
    }

    fn accumulate(&mut self, codes: &[u16], labels: &[bool], weights: &[f64]) {
        self.pos.iter_mut().for_each(|v| *v = 0.0);
        self.neg.iter_mut().for_each(|v| *v = 0.0);
        for ((&c, &l), &w) in codes.iter().zip(labels).zip(weights) {
            if l {
                self.pos[c as usize] += w;
            } else {
                self.neg[c as usize] += w;
            }
        }
    }

    /// Weighted error of the best table, without materializing it.
    #[inline]
    pub(crate) fn error(&mut self, codes: &[u16], labels: &[bool], weights: &[f64], eps: (f64, f64)) -> f64 {
        self.accumulate(codes, labels, weights);
        self.pos
            .iter()
            .zip(&self.neg)
            .map(|(&p, &n)| if p + eps.0 > n + eps.1 { n } else { p })
            .sum()
    }

    pub(crate) fn fit(&mut self, codes: &[u16], labels: &[bool], weights: &[f64], eps: (f64, f64)) -> LutFit {
        self.accumulate(codes, labels, weights);
        let mut error = 0.0;
        let lut = self
            .pos
            .iter()
            .zip(&self.neg)
            .map(|(&p, &n)| {
                let on = p + eps.0 > n + eps.1;
                error += if on { n } else { p };
                on
            })
            .collect();
        LutFit { lut, error }
    }
}
