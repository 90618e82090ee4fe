//! Boosted cascade detectors for character information built on
//! non-local binary-pattern features.
//!
//! The crate is organised bottom-up:
//!
//! * [`imaging`] – grayscale images, integral images, rectangle means;
//! * [`features`] – census, LBP and Haar features and their enumeration;
//! * [`classifiers`] – lookup-table weak classifiers, AdaBoost, cascades
//!   and the model file format;
//! * [`dataset`] – annotations, positive/negative window extraction and
//!   seeded train/test splitting;
//! * [`detector`] – multi-scale scanning, grouping and number reading;
//! * [`evaluation`] – FAR/FRR measurement, experiment grids and reports;
//! * [`synth`] – seeded synthetic glyph/noise data for tests and demos.

pub mod classifiers;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod imaging;
pub mod synth;

pub use classifiers::{Cascade, CascadeConfig, CascadeDecision, DetectorLabel, StrongClassifier, WeakClassifier};
pub use error::{Error, Result};
pub use features::{Aperture, FeatureDescriptor, FeatureFamily, FeatureKind, HaarTemplate, ScanGrid, Window};
pub use imaging::{GrayImage, IntegralImage, Rect};
