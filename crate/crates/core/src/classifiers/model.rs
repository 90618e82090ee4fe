//! Versioned JSON model files, one cascade per document.
//!
//! ```json
//! {
//!   "format": "nlbp-cascade",
//!   "version": 1,
//!   "label": "number",
//!   "aperture": { "width": 54, "height": 18 },
//!   "family": "cs",
//!   "stages": [
//!     { "theta": 1.25,
//!       "weaks": [ { "kind": "cs", "x": 0, "y": 3, "w": 9, "h": 6,
//!                    "weight": 0.8, "lut": "00ff..." } ] }
//!   ]
//! }
//! ```
//!
//! `lut` packs the table LSB-first into bytes (entry `c` is bit `c % 8` of
//! byte `c / 8`) and hex-encodes them. Haar weaks add `"template"` and
//! `"bins": {"lo", "hi", "count"}`. Floats are written in shortest
//! round-trip form, so save → load reproduces every decision exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cascade::{Cascade, DetectorLabel};
use super::strong::StrongClassifier;
use super::weak::{HaarBins, WeakClassifier, HAAR_BINS};
use crate::error::{Error, Result};
use crate::features::{Aperture, FeatureDescriptor, FeatureFamily, FeatureKind, HaarTemplate};
use crate::imaging::Rect;

pub const MODEL_FORMAT: &str = "nlbp-cascade";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    label: DetectorLabel,
    aperture: Aperture,
    family: FeatureFamily,
    stages: Vec<StageDoc>,
}

#[derive(Serialize, Deserialize)]
struct StageDoc {
    theta: f64,
    weaks: Vec<WeakDoc>,
}

#[derive(Serialize, Deserialize)]
struct WeakDoc {
    kind: FeatureFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<HaarTemplate>,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
    lut: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<BinsDoc>,
}

#[derive(Serialize, Deserialize)]
struct BinsDoc {
    lo: f64,
    hi: f64,
    count: usize,
}

pub fn lut_to_hex(lut: &[bool]) -> String {
    let bytes: Vec<u8> = lut
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |b, (i, &on)| b | ((on as u8) << i)))
        .collect();
    hex::encode(bytes)
}

pub fn lut_from_hex(s: &str, len: usize) -> Result<Vec<bool>> {
    let bytes = hex::decode(s).map_err(|e| Error::Format(format!("bad lut hex: {e}")))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Format(format!("lut has {} bytes, expected {}", bytes.len(), len.div_ceil(8))));
    }
    Ok((0..len).map(|c| bytes[c / 8] >> (c % 8) & 1 == 1).collect())
}

impl Cascade {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            label: self.label,
            aperture: self.aperture,
            family: self.family,
            stages: self
                .stages
                .iter()
                .map(|s| StageDoc {
                    theta: s.theta,
                    weaks: s
                        .weaks
                        .iter()
                        .zip(&s.weights)
                        .map(|(w, &weight)| WeakDoc {
                            kind: w.feature.kind.family(),
                            template: match w.feature.kind {
                                FeatureKind::Haar(t) => Some(t),
                                _ => None,
                            },
                            x: w.feature.rect.x,
                            y: w.feature.rect.y,
                            w: w.feature.rect.w,
                            h: w.feature.rect.h,
                            weight,
                            lut: lut_to_hex(&w.lut),
                            bins: w.bins.map(|b| BinsDoc {
                                lo: b.lo,
                                hi: b.hi,
                                count: HAAR_BINS,
                            }),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Cascade> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a cascade model (format '{}')", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", doc.version)));
        }
        let mut stages = Vec::with_capacity(doc.stages.len());
        for stage in doc.stages {
            let mut weaks = Vec::with_capacity(stage.weaks.len());
            let mut weights = Vec::with_capacity(stage.weaks.len());
            for w in stage.weaks {
                let kind = match (w.kind, w.template) {
                    (FeatureFamily::Cs, None) => FeatureKind::Census,
                    (FeatureFamily::Lbp, None) => FeatureKind::Lbp,
                    (FeatureFamily::Haar, Some(t)) => FeatureKind::Haar(t),
                    (k, t) => return Err(Error::Format(format!("feature kind {k} with template {t:?}"))),
                };
                let bins = match (kind, w.bins) {
                    (FeatureKind::Haar(_), Some(b)) if b.count == HAAR_BINS => Some(HaarBins { lo: b.lo, hi: b.hi }),
                    (FeatureKind::Haar(_), _) => {
                        return Err(Error::Format(format!("haar weak needs {HAAR_BINS} bins")))
                    }
                    (_, None) => None,
                    (_, Some(_)) => return Err(Error::Format("bins given for a binary-pattern feature".into())),
                };
                let feature = FeatureDescriptor::new(kind, Rect::new(w.x, w.y, w.w, w.h));
                let lut = lut_from_hex(&w.lut, super::weak::code_count(kind))?;
                weaks.push(WeakClassifier::new(feature, lut, bins)?);
                weights.push(w.weight);
            }
            stages.push(StrongClassifier::new(weaks, weights, stage.theta)?);
        }
        Cascade::new(doc.label, doc.aperture, doc.family, stages)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Cascade> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Cascade::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Window;
    use crate::imaging::{GrayImage, IntegralImage};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cascade(rng: &mut ChaCha8Rng, family: FeatureFamily) -> Cascade {
        let ap = Aperture::new(12, 24);
        let stages = (0..3)
            .map(|_| {
                let n = rng.random_range(1..6);
                let weaks: Vec<WeakClassifier> = (0..n)
                    .map(|_| {
                        let (kind, sx, sy) = match family {
                            FeatureFamily::Cs => (FeatureKind::Census, 1, 1),
                            FeatureFamily::Lbp => (FeatureKind::Lbp, 1, 1),
                            FeatureFamily::Haar => {
                                let t = HaarTemplate::ALL[rng.random_range(0..5)];
                                let (sx, sy) = t.splits();
                                (FeatureKind::Haar(t), sx, sy)
                            }
                        };
                        let w = sx * rng.random_range(3..=12 / sx).max(1);
                        let h = sy * rng.random_range(3..=24 / sy).max(1);
                        let f = FeatureDescriptor::new(
                            kind,
                            Rect::new(rng.random_range(0..=12 - w), rng.random_range(0..=24 - h), w, h),
                        );
                        let k = super::super::weak::code_count(kind);
                        let bins = matches!(kind, FeatureKind::Haar(_)).then(|| HaarBins {
                            lo: rng.random_range(-80.0..0.0),
                            hi: rng.random_range(0.0..80.0),
                        });
                        WeakClassifier::new(f, (0..k).map(|_| rng.random()).collect(), bins).unwrap()
                    })
                    .collect();
                let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
                let theta = weights.iter().sum::<f64>() * rng.random_range(0.0..1.0);
                StrongClassifier::new(weaks, weights, theta).unwrap()
            })
            .collect();
        Cascade::new(DetectorLabel::Digit(7), ap, family, stages).unwrap()
    }

    #[test]
    fn round_trip_preserves_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for family in FeatureFamily::ALL {
            let c = random_cascade(&mut rng, family);
            let back = Cascade::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            let img = GrayImage::from_fn(64, 64, |_, _| rng.random());
            let ii = IntegralImage::new(&img);
            for _ in 0..1000 {
                let scale = [1.0, 1.25, 1.5625][rng.random_range(0..3)];
                let win = Window::scaled(rng.random_range(0..=20), rng.random_range(0..=20), scale);
                assert_eq!(c.eval(&ii, win).unwrap(), back.eval(&ii, win).unwrap());
            }
        }
    }

    #[test]
    fn rejects_foreign_documents() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let json = random_cascade(&mut rng, FeatureFamily::Cs).to_json().unwrap();
        assert!(Cascade::from_json(&json.replace("nlbp-cascade", "other")).is_err());
        assert!(Cascade::from_json(&json.replace("\"version\": 1", "\"version\": 9")).is_err());
        assert!(Cascade::from_json("{}").is_err());
    }

    proptest! {
        #[test]
        fn lut_hex_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..600)) {
            let back = lut_from_hex(&lut_to_hex(&bits), bits.len()).unwrap();
            prop_assert_eq!(back, bits);
        }
    }

    #[test]
    fn lut_hex_layout() {
        let mut lut = vec![false; 16];
        lut[0] = true;
        lut[9] = true;
        assert_eq!(lut_to_hex(&lut), "0102");
        assert!(lut_from_hex("01", 16).is_err());
    }
}
