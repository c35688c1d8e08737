//! patchlab: a desk-scale simulator for projector-based adversarial patch
//! attacks on object detectors, plus the projection-detection defense.
//!
//! The crate is organized bottom-up:
//! - [`imaging`]: images, homographies, warping, PPM/PFM I/O
//! - [`rng`]: counter-based deterministic random streams
//! - [`scene`]: the simulated physical world and its renderers
//! - [`channel`]: capture noise and print color distortion
//! - [`logreg`]: shared logistic-regression trainer
//! - [`detector`]: pluggable toy object detectors
//! - [`attack`]: digital and physical patch learning (SPSA)
//! - [`analysis`]: norms, ANOVA, sweeps, and transfer matrices
//! - [`countermeasure`]: projection-detection classifier
//! - [`config`]: TOML run configuration with includes

pub mod analysis;
pub mod attack;
pub mod channel;
pub mod config;
pub mod countermeasure;
pub mod detector;
pub mod imaging;
pub mod logreg;
pub mod rng;
pub mod scene;

/// Tool version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
