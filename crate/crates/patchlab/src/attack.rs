//! Adversarial patch learning across the digital/physical domain split.
//!
//! Scenario names follow the learning-domain / application-domain pattern:
//! DL-DA learns and applies digitally, DL-PA learns digitally but applies
//! the printed patch as a sticker, PL-PA learns through the projector and
//! camera captures and applies by projection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, NormTriple};
use crate::channel::{self, ChannelParams};
use crate::detector::{AnyDetector, DetectorError};
use crate::imaging::{clamp01, Image};
use crate::rng::RngStream;
use crate::scene::{self, Application, ObjectId, SceneConfig, SceneError, StereoRig};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("scene error: {0}")]
    Scene(#[from] SceneError),
    #[error("imaging error: {0}")]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("detector error: {0}")]
    Detector(#[from] DetectorError),
    #[error("patch raster must be square with side >= 2, got {0}x{1}")]
    BadPatch(usize, usize),
    #[error("invalid attack configuration: {0}")]
    BadConfig(String),
}

/// Learning-domain / application-domain scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NonAdversarial,
    DlDa,
    DlPa,
    PlPa,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::NonAdversarial => "non_adversarial",
            Scenario::DlDa => "dl_da",
            Scenario::DlPa => "dl_pa",
            Scenario::PlPa => "pl_pa",
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    /// Pure confidence minimization.
    DpatchLike,
    /// Confidence plus smoothness and printability regularizers.
    NapLike,
}

impl AttackMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::DpatchLike => "dpatch_like",
            AttackMethod::NapLike => "nap_like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    Monocular,
    Stereo,
}

impl CameraMode {
    pub fn name(&self) -> &'static str {
        match self {
            CameraMode::Monocular => "monocular",
            CameraMode::Stereo => "stereo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    /// Simultaneous-perturbation stochastic approximation.
    Spsa,
    /// Per-coordinate central differences (exact on smooth objectives but
    /// far more expensive; intended for small rasters and verification).
    FiniteDiff,
}

/// Square patch raster with values in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    img: Image,
}

impl Patch {
    pub fn new(img: Image) -> Result<Self, AttackError> {
        if img.width() != img.height() || img.width() < 2 {
            return Err(AttackError::BadPatch(img.width(), img.height()));
        }
        Ok(Patch { img })
    }

    pub fn raster(&self) -> &Image {
        &self.img
    }

    pub fn side(&self) -> usize {
        self.img.width()
    }
}

/// Uniform random patch in [0,1].
pub fn init_random_patch(side: usize, rng: &mut RngStream) -> Result<Patch, AttackError> {
    if side < 2 {
        return Err(AttackError::BadPatch(side, side));
    }
    let data = (0..side * side * 3).map(|_| rng.next_f64()).collect();
    Patch::new(Image::from_data(side, side, data).expect("uniform values are in range"))
}

/// Number of stripe seeds scored before the physical optimization loop.
pub const STRIPE_CANDIDATES: usize = 8;

/// Random binary column stripes: each column is all-black or all-white by
/// a fair coin flip (at least one of each is guaranteed). A projector's
/// leverage is luminance contrast, so full-swing column stripes are
/// strong seeds for the physical loop; the exact column layout matters a
/// great deal, which is why [`run_papla`] scores several of these before
/// descending.
pub fn init_stripe_patch(side: usize, rng: &mut RngStream) -> Result<Patch, AttackError> {
    if side < 2 {
        return Err(AttackError::BadPatch(side, side));
    }
    let mut hi: Vec<bool> = (0..side).map(|_| rng.next_f64() >= 0.5).collect();
    if hi.iter().all(|&c| c == hi[0]) {
        hi[0] = !hi[0];
    }
    let img = Image::from_fn(side, side, |x, _| {
        let v = if hi[x] { 1.0 } else { 0.0 };
        [v, v, v]
    });
    Patch::new(img)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub estimator: GradientEstimator,
    /// Gradient steps.
    pub max_iters: usize,
    /// Step size in [0,1] pixel units (5/255 matches a 5-level step on the
    /// 8-bit scale).
    pub step_size: f64,
    /// Camera frames averaged per objective evaluation in physical learning.
    pub captures_per_update: usize,
    /// SPSA perturbation radius.
    pub spsa_c: f64,
    /// SPSA directions averaged per gradient estimate.
    pub spsa_samples: usize,
    /// Exponential moving average factor on gradient estimates; past probes
    /// accumulate into the step direction, which stochastic single-direction
    /// estimates need to make headway in high dimension. 0 disables.
    pub momentum: f64,
    /// Total-variation smoothness weight (NAP-like method only).
    pub tv_weight: f64,
    /// Printability palette; empty disables the palette term.
    pub palette: Vec<[f64; 3]>,
    pub palette_weight: f64,
    /// Stop once the target-class confidence drops to this level.
    pub early_stop_conf: f64,
    pub seed: u64,
    /// Side of the square patch raster.
    pub patch_side: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: AttackMethod::DpatchLike,
            estimator: GradientEstimator::Spsa,
            max_iters: 800,
            step_size: 8.0 / 255.0,
            captures_per_update: 1,
            spsa_c: 0.08,
            spsa_samples: 1,
            momentum: 0.95,
            tv_weight: 0.012,
            palette: Vec::new(),
            palette_weight: 0.05,
            early_stop_conf: 0.05,
            seed: 0xA77AC,
            patch_side: 8,
        }
    }
}

impl AttackConfig {
    /// An eight-color palette of saturated printer primaries plus black
    /// and white, for the printability regularizer.
    pub fn printable_palette() -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.9, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.1, 0.2, 0.9],
            [0.9, 0.9, 0.1],
            [0.9, 0.2, 0.8],
            [0.1, 0.8, 0.9],
        ]
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.patch_side < 2 {
            return Err(AttackError::BadConfig("patch_side must be >= 2".into()));
        }
        if self.step_size <= 0.0 {
            return Err(AttackError::BadConfig("step_size must be positive".into()));
        }
        if self.spsa_c <= 0.0 {
            return Err(AttackError::BadConfig("spsa_c must be positive".into()));
        }
        if self.spsa_samples == 0 {
            return Err(AttackError::BadConfig("spsa_samples must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AttackError::BadConfig(
                "momentum must be in [0, 1)".into(),
            ));
        }
        if self.captures_per_update == 0 {
            return Err(AttackError::BadConfig(
                "captures_per_update must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    /// Target-class confidence at each step, before the update.
    pub confidences: Vec<f64>,
    pub iterations: usize,
    pub early_stopped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub object: ObjectId,
    pub scenario: Scenario,
    pub camera: CameraMode,
    pub seed: u64,
    pub clean_conf: f64,
    pub patched_conf: f64,
    /// None when the clean confidence is zero (not detectable).
    pub reduction_pct: Option<f64>,
    /// Pixel norms of the patched render against the clean render,
    /// computed on noiseless frames so they are deterministic.
    pub norms: NormTriple,
}

fn zero_norms() -> NormTriple {
    NormTriple {
        l2: 0.0,
        linf: 0,
        l0_pct: 0.0,
    }
}

fn make_record(
    object: ObjectId,
    scenario: Scenario,
    camera: CameraMode,
    seed: u64,
    clean_conf: f64,
    patched_conf: f64,
    norms: NormTriple,
) -> ExperimentRecord {
    ExperimentRecord {
        object,
        scenario,
        camera,
        seed,
        clean_conf,
        patched_conf,
        reduction_pct: analysis::reduction_pct(clean_conf, patched_conf).ok(),
        norms,
    }
}

// ---------------------------------------------------------------------------
// Regularizers and gradient estimation
// ---------------------------------------------------------------------------

/// Mean squared difference between horizontally and vertically adjacent
/// patch pixels.
pub fn total_variation(patch: &Image) -> f64 {
    let (w, h) = (patch.width(), patch.height());
    let mut total = 0.0;
    let mut terms = 0usize;
    for y in 0..h {
        for x in 0..w {
            let p = patch.get(x, y);
            if x + 1 < w {
                let q = patch.get(x + 1, y);
                for c in 0..3 {
                    total += (p[c] - q[c]) * (p[c] - q[c]);
                }
                terms += 3;
            }
            if y + 1 < h {
                let q = patch.get(x, y + 1);
                for c in 0..3 {
                    total += (p[c] - q[c]) * (p[c] - q[c]);
                }
                terms += 3;
            }
        }
    }
    if terms == 0 {
        0.0
    } else {
        total / terms as f64
    }
}

/// Mean squared distance from each pixel to its nearest palette color.
pub fn palette_distance(patch: &Image, palette: &[[f64; 3]]) -> f64 {
    if palette.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for px in patch.data().chunks_exact(3) {
        let best = palette
            .iter()
            .map(|c| {
                (px[0] - c[0]) * (px[0] - c[0])
                    + (px[1] - c[1]) * (px[1] - c[1])
                    + (px[2] - c[2]) * (px[2] - c[2])
            })
            .fold(f64::INFINITY, f64::min);
        total += best;
        n += 1;
    }
    total / n as f64
}

/// Attack objective: detector confidence plus the method's regularizers.
/// The DPatch-like method is pure confidence; the NAP-like method adds
/// smoothness and printability terms. Lower is better.
pub fn loss(conf: f64, patch: &Image, cfg: &AttackConfig) -> f64 {
    conf + regularizers(patch, cfg)
}

fn regularizers(patch: &Image, cfg: &AttackConfig) -> f64 {
    match cfg.method {
        AttackMethod::DpatchLike => 0.0,
        AttackMethod::NapLike => {
            cfg.tv_weight * total_variation(patch)
                + cfg.palette_weight * palette_distance(patch, &cfg.palette)
        }
    }
}

fn clamp_patch(data: &mut [f64]) {
    for v in data.iter_mut() {
        *v = clamp01(*v);
    }
}

fn perturbed(base: &Image, delta: &[f64], scale: f64) -> Image {
    let mut data: Vec<f64> = base
        .data()
        .iter()
        .zip(delta)
        .map(|(v, d)| v + scale * d)
        .collect();
    clamp_patch(&mut data);
    Image::from_data(base.width(), base.height(), data).expect("clamped values are in range")
}

/// SPSA gradient estimate: Rademacher direction, two objective evaluations
/// per sample, averaged over samples.
pub fn spsa_gradient(
    patch: &Image,
    c: f64,
    samples: usize,
    rng: &mut RngStream,
    f: &mut dyn FnMut(&Image) -> f64,
) -> Vec<f64> {
    let n = patch.data().len();
    let mut grad = vec![0.0; n];
    for _ in 0..samples.max(1) {
        let delta: Vec<f64> = (0..n).map(|_| rng.rademacher()).collect();
        let plus = f(&perturbed(patch, &delta, c));
        let minus = f(&perturbed(patch, &delta, -c));
        let diff = (plus - minus) / (2.0 * c);
        for (g, d) in grad.iter_mut().zip(&delta) {
            // 1/d equals d for Rademacher directions
            *g += diff * d;
        }
    }
    let inv = 1.0 / samples.max(1) as f64;
    for g in &mut grad {
        *g *= inv;
    }
    grad
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_gradient(
    patch: &Image,
    c: f64,
    f: &mut dyn FnMut(&Image) -> f64,
) -> Vec<f64> {
    let n = patch.data().len();
    let mut grad = vec![0.0; n];
    let mut delta = vec![0.0; n];
    for i in 0..n {
        delta[i] = 1.0;
        let plus = f(&perturbed(patch, &delta, c));
        let minus = f(&perturbed(patch, &delta, -c));
        grad[i] = (plus - minus) / (2.0 * c);
        delta[i] = 0.0;
    }
    grad
}

/// Iteration count after which the step size has halved (roughly), per
/// the classic stochastic-approximation gain schedule a_k ∝ (A + k)^-α.
const GAIN_STABILITY: f64 = 150.0;
const GAIN_ALPHA: f64 = 0.602;

fn descend(
    patch: &Patch,
    cfg: &AttackConfig,
    iter: usize,
    rng: &mut RngStream,
    velocity: &mut [f64],
    f: &mut dyn FnMut(&Image) -> f64,
) -> Patch {
    let grad = match cfg.estimator {
        GradientEstimator::Spsa => {
            spsa_gradient(patch.raster(), cfg.spsa_c, cfg.spsa_samples, rng, f)
        }
        GradientEstimator::FiniteDiff => finite_diff_gradient(patch.raster(), cfg.spsa_c, f),
    };
    // A single SPSA probe only resolves the loss slope along one random
    // direction, so raw estimates are dominated by sampling noise; the
    // momentum average pools probes from past iterations into a usable
    // direction. The pooled gradient is normalized to unit max magnitude
    // so step_size sets the per-pixel move directly (raw confidence
    // gradients are orders of magnitude smaller than the pixel scale and
    // would stall).
    for (v, g) in velocity.iter_mut().zip(&grad) {
        *v = cfg.momentum * *v + (1.0 - cfg.momentum) * g;
    }
    let vinf = velocity.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let gain = (GAIN_STABILITY / (GAIN_STABILITY + iter as f64)).powf(GAIN_ALPHA);
    let scale = if vinf > 0.0 {
        gain * cfg.step_size / vinf
    } else {
        0.0
    };
    let mut data: Vec<f64> = patch
        .raster()
        .data()
        .iter()
        .zip(velocity.iter())
        .map(|(v, g)| v - scale * g)
        .collect();
    clamp_patch(&mut data);
    Patch::new(
        Image::from_data(patch.side(), patch.side(), data).expect("clamped values are in range"),
    )
    .expect("side is unchanged")
}

// ---------------------------------------------------------------------------
// Objective evaluation helpers
// ---------------------------------------------------------------------------

/// Captures used when reporting final confidences.
pub const EVAL_CAPTURES: usize = 10;

/// Stream ids (relative to the stream handed to an attack run) that the
/// final clean / patched confidence evaluations draw noise from. Exposed so
/// stereo evaluation can reuse the exact same left-lens noise.
pub const EVAL_STREAM_CLEAN: u64 = 0xE1;
pub const EVAL_STREAM_PATCHED: u64 = 0xE2;

/// Mean of the detector's attack-side sub-scores (see
/// [`AnyDetector::attack_confidences`]); the quantity the optimization
/// loops descend on. Evaluation always reports `best_class_confidence`.
pub fn attack_score(img: &Image, detector: &AnyDetector, class: ObjectId) -> f64 {
    let scores = detector.attack_confidences(img, class);
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Mean attack score over `n` noisy captures of one frame.
pub fn mean_capture_attack_score(
    img: &Image,
    detector: &AnyDetector,
    class: ObjectId,
    channel_params: &ChannelParams,
    rng: &mut RngStream,
    n: usize,
) -> f64 {
    let n = n.max(1);
    let mut total = 0.0;
    for _ in 0..n {
        let frame = channel::capture(img, channel_params, rng);
        total += attack_score(&frame, detector, class);
    }
    total / n as f64
}

/// Mean target-class confidence over `n` noisy captures of one frame.
pub fn mean_capture_confidence(
    img: &Image,
    detector: &AnyDetector,
    class: ObjectId,
    channel_params: &ChannelParams,
    rng: &mut RngStream,
    n: usize,
) -> f64 {
    let n = n.max(1);
    let mut total = 0.0;
    for _ in 0..n {
        let frame = channel::capture(img, channel_params, rng);
        total += detector.best_class_confidence(&frame, class);
    }
    total / n as f64
}

/// Stereo counterpart: per capture index the per-lens confidences are
/// fused with max, then averaged. Feeding the left lens the same stream a
/// monocular evaluation used makes the stereo mean a per-term upper bound
/// of the monocular mean.
pub fn mean_stereo_capture_confidence(
    left: &Image,
    right: &Image,
    detector: &AnyDetector,
    class: ObjectId,
    channel_params: &ChannelParams,
    left_rng: &mut RngStream,
    right_rng: &mut RngStream,
    n: usize,
) -> f64 {
    let n = n.max(1);
    let mut total = 0.0;
    for _ in 0..n {
        let lf = channel::capture(left, channel_params, left_rng);
        let rf = channel::capture(right, channel_params, right_rng);
        let lc = detector.best_class_confidence(&lf, class);
        let rc = detector.best_class_confidence(&rf, class);
        total += lc.max(rc);
    }
    total / n as f64
}

/// Raw digital paste: the patch raster is warped into the anchor footprint
/// and written over the clean render without any lighting model.
pub fn digital_composite(cfg: &SceneConfig, patch: &Patch) -> Result<Image, AttackError> {
    let clean = scene::render_clean(cfg)?;
    digital_composite_over(&clean, cfg, patch)
}

/// [`digital_composite`] with the clean base render precomputed, for the
/// optimization loop.
fn digital_composite_over(
    clean: &Image,
    cfg: &SceneConfig,
    patch: &Patch,
) -> Result<Image, AttackError> {
    let (wp, footprint) = scene::warped_patch(cfg, patch.raster())?;
    let (cw, ch) = cfg.canvas;
    let mut region = Image::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            if footprint.get(x, y) > 0.0 {
                let p = wp.get(x, y);
                region.set(x, y, [clamp01(p[0]), clamp01(p[1]), clamp01(p[2])]);
            }
        }
    }
    Ok(crate::imaging::compose(clean, &region, &footprint, (0, 0))?)
}

// ---------------------------------------------------------------------------
// Scenario runs
// ---------------------------------------------------------------------------

/// Digital learning: minimize the detector confidence on the noiseless
/// digital composite.
pub fn run_dl_da(
    scene_cfg: &SceneConfig,
    detector: &AnyDetector,
    cfg: &AttackConfig,
    stream: RngStream,
) -> Result<(AttackTrace, Patch), AttackError> {
    cfg.validate()?;
    let mut init_rng = stream.derive(0xA0);
    let mut opt_rng = stream.derive(0xA1);
    let mut patch = init_random_patch(cfg.patch_side, &mut init_rng)?;
    let class = scene_cfg.object_id;

    let mut confidences = Vec::with_capacity(cfg.max_iters);
    let mut early_stopped = false;
    let mut iterations = 0;
    let mut velocity = vec![0.0; patch.raster().data().len()];
    let clean = scene::render_clean(scene_cfg)?;
    // Best-iterate tracking: SPSA with a normalized step keeps moving at
    // full stride even near a minimum, so the final iterate can be worse
    // than the best one visited. The returned patch is the best seen.
    let mut best_conf = f64::INFINITY;
    let mut best_patch = patch.clone();
    for _ in 0..cfg.max_iters {
        let composite = digital_composite_over(&clean, scene_cfg, &patch)?;
        let conf = detector.best_class_confidence(&composite, class);
        confidences.push(conf);
        iterations += 1;
        if conf < best_conf {
            best_conf = conf;
            best_patch = patch.clone();
        }
        if conf <= cfg.early_stop_conf {
            early_stopped = true;
            break;
        }
        let mut objective = |raster: &Image| -> f64 {
            let p = Patch::new(raster.clone()).expect("square raster");
            let img =
                digital_composite_over(&clean, scene_cfg, &p).expect("composite failed");
            attack_score(&img, detector, class) + regularizers(raster, cfg)
        };
        patch = descend(&patch, cfg, iterations - 1, &mut opt_rng, &mut velocity, &mut objective);
    }
    let composite = digital_composite_over(&clean, scene_cfg, &patch)?;
    if detector.best_class_confidence(&composite, class) < best_conf {
        best_patch = patch;
    }
    Ok((
        AttackTrace {
            confidences,
            iterations,
            early_stopped,
        },
        best_patch,
    ))
}

/// Digital learning, physical application: the digitally learned patch is
/// printed and applied as a sticker, and the result is evaluated through
/// noisy captures.
pub fn run_dl_pa(
    scene_cfg: &SceneConfig,
    detector: &AnyDetector,
    cfg: &AttackConfig,
    channel_params: &ChannelParams,
    stream: RngStream,
) -> Result<(AttackTrace, ExperimentRecord, Patch), AttackError> {
    let (trace, patch) = run_dl_da(scene_cfg, detector, cfg, stream.derive(0xD0))?;
    let printed = channel::print_patch(patch.raster(), channel_params);
    let clean = scene::render_clean(scene_cfg)?;
    let sticker = scene::render_sticker(scene_cfg, &printed)?;
    let class = scene_cfg.object_id;

    let mut clean_rng = stream.derive(EVAL_STREAM_CLEAN);
    let mut patched_rng = stream.derive(EVAL_STREAM_PATCHED);
    let clean_conf = mean_capture_confidence(
        &clean,
        detector,
        class,
        channel_params,
        &mut clean_rng,
        EVAL_CAPTURES,
    );
    let patched_conf = mean_capture_confidence(
        &sticker,
        detector,
        class,
        channel_params,
        &mut patched_rng,
        EVAL_CAPTURES,
    );
    let norms = analysis::norms(&clean, &sticker, 1)
        .expect("renders share dimensions");
    let record = make_record(
        class,
        Scenario::DlPa,
        CameraMode::Monocular,
        cfg.seed,
        clean_conf,
        patched_conf,
        norms,
    );
    Ok((trace, record, patch))
}

/// Physical learning, physical application: every objective evaluation
/// renders the projection and averages detector confidence over noisy
/// captures, so the channel is inside the optimization loop.
pub fn run_papla(
    scene_cfg: &SceneConfig,
    detector: &AnyDetector,
    cfg: &AttackConfig,
    channel_params: &ChannelParams,
    stream: RngStream,
) -> Result<(AttackTrace, ExperimentRecord, Patch), AttackError> {
    cfg.validate()?;
    let mut init_rng = stream.derive(0xA0);
    let mut opt_rng = stream.derive(0xA1);
    let mut cap_rng = stream.derive(0xA2);
    let class = scene_cfg.object_id;

    // Seed search: score a handful of random stripe layouts through the
    // projection channel (shared capture noise, so the comparison is
    // paired) and start the descent from the strongest one. Stripe
    // effectiveness depends heavily on the exact column layout, and the
    // gradient loop cannot hop between layouts on its own.
    let clean_base = scene::render_clean(scene_cfg)?;
    let seed_noise = cap_rng.derive(0x5EED);
    let mut patch = init_stripe_patch(cfg.patch_side, &mut init_rng)?;
    let mut patch_score = f64::INFINITY;
    for _ in 0..STRIPE_CANDIDATES {
        let cand = init_stripe_patch(cfg.patch_side, &mut init_rng)?;
        let img = scene::render_projection_over(&clean_base, scene_cfg, cand.raster())?;
        let mut noise_rng = seed_noise.clone();
        let score = mean_capture_attack_score(
            &img,
            detector,
            class,
            channel_params,
            &mut noise_rng,
            cfg.captures_per_update,
        );
        if score < patch_score {
            patch_score = score;
            patch = cand;
        }
    }

    let mut confidences = Vec::with_capacity(cfg.max_iters);
    let mut early_stopped = false;
    let mut iterations = 0;
    let mut velocity = vec![0.0; patch.raster().data().len()];
    // Best-iterate tracking, as in the digital loop: keep the patch whose
    // per-iteration capture confidence was lowest, so late-loop drift from
    // the fixed-stride update cannot discard a good iterate.
    let mut best_conf = f64::INFINITY;
    let mut best_patch = patch.clone();
    for _ in 0..cfg.max_iters {
        let projected =
            scene::render_projection_over(&clean_base, scene_cfg, patch.raster())?;
        let conf = mean_capture_confidence(
            &projected,
            detector,
            class,
            channel_params,
            &mut cap_rng,
            cfg.captures_per_update,
        );
        confidences.push(conf);
        iterations += 1;
        if conf < best_conf {
            best_conf = conf;
            best_patch = patch.clone();
        }
        if conf <= cfg.early_stop_conf {
            early_stopped = true;
            break;
        }
        // Common random numbers: every objective evaluation within one
        // update replays the same capture noise, so paired SPSA
        // evaluations see the loss difference rather than noise.
        let noise_base = cap_rng.derive(iterations as u64);
        let mut objective = |raster: &Image| -> f64 {
            let img = scene::render_projection_over(&clean_base, scene_cfg, raster)
                .expect("render failed");
            let mut noise_rng = noise_base.clone();
            mean_capture_attack_score(
                &img,
                detector,
                class,
                channel_params,
                &mut noise_rng,
                cfg.captures_per_update,
            ) + regularizers(raster, cfg)
        };
        patch = descend(&patch, cfg, iterations - 1, &mut opt_rng, &mut velocity, &mut objective);
    }
    {
        let projected =
            scene::render_projection_over(&clean_base, scene_cfg, patch.raster())?;
        let conf = mean_capture_confidence(
            &projected,
            detector,
            class,
            channel_params,
            &mut cap_rng,
            cfg.captures_per_update,
        );
        if conf < best_conf {
            best_patch = patch.clone();
        }
    }
    let patch = best_patch;

    let clean = scene::render_clean(scene_cfg)?;
    let projected = scene::render_projection(scene_cfg, patch.raster())?;
    let mut clean_rng = stream.derive(EVAL_STREAM_CLEAN);
    let mut patched_rng = stream.derive(EVAL_STREAM_PATCHED);
    let clean_conf = mean_capture_confidence(
        &clean,
        detector,
        class,
        channel_params,
        &mut clean_rng,
        EVAL_CAPTURES,
    );
    let patched_conf = mean_capture_confidence(
        &projected,
        detector,
        class,
        channel_params,
        &mut patched_rng,
        EVAL_CAPTURES,
    );
    let norms = analysis::norms(&clean, &projected, 1)
        .expect("renders share dimensions");
    let record = make_record(
        class,
        Scenario::PlPa,
        CameraMode::Monocular,
        cfg.seed,
        clean_conf,
        patched_conf,
        norms,
    );
    Ok((
        AttackTrace {
            confidences,
            iterations,
            early_stopped,
        },
        record,
        patch,
    ))
}

// ---------------------------------------------------------------------------
// Scenario suite: all scenarios, monocular and stereo
// ---------------------------------------------------------------------------

const SUITE_DLPA: u64 = 0x10;
const SUITE_PAPLA: u64 = 0x11;
const SUITE_CLEAN_EVAL: u64 = 0x12;
const STEREO_RIGHT_CLEAN: u64 = 0x20;
const STEREO_RIGHT_PATCHED: u64 = 0x21;

/// Runs the non-adversarial baseline and all three attack scenarios on one
/// scene, evaluating the physical scenarios both monocularly and with the
/// stereo rig. The stereo left lens reuses the monocular capture noise, so
/// stereo confidences are per-frame upper bounds of the monocular ones.
pub fn run_scenario_suite(
    scene_cfg: &SceneConfig,
    rig: &StereoRig,
    detector: &AnyDetector,
    cfg: &AttackConfig,
    channel_params: &ChannelParams,
    stream: RngStream,
) -> Result<Vec<ExperimentRecord>, AttackError> {
    let class = scene_cfg.object_id;
    let clean = scene::render_clean(scene_cfg)?;
    let mut records = Vec::new();

    // Non-adversarial baseline.
    let mut base_rng = stream.derive(SUITE_CLEAN_EVAL);
    let base_conf = mean_capture_confidence(
        &clean,
        detector,
        class,
        channel_params,
        &mut base_rng,
        EVAL_CAPTURES,
    );
    records.push(make_record(
        class,
        Scenario::NonAdversarial,
        CameraMode::Monocular,
        cfg.seed,
        base_conf,
        base_conf,
        zero_norms(),
    ));

    // DL-DA: learned and evaluated in the digital domain (no capture noise).
    let dlpa_stream = stream.derive(SUITE_DLPA);
    let (_, dlpa_record, digital_patch) =
        run_dl_pa(scene_cfg, detector, cfg, channel_params, dlpa_stream.clone())?;
    let composite = digital_composite(scene_cfg, &digital_patch)?;
    let dl_da_clean = detector.best_class_confidence(&clean, class);
    let dl_da_patched = detector.best_class_confidence(&composite, class);
    records.push(make_record(
        class,
        Scenario::DlDa,
        CameraMode::Monocular,
        cfg.seed,
        dl_da_clean,
        dl_da_patched,
        analysis::norms(&clean, &composite, 1).expect("renders share dimensions"),
    ));

    // DL-PA monocular record came out of run_dl_pa directly.
    records.push(dlpa_record);

    // DL-PA stereo: same printed sticker, per-capture max fusion.
    let printed = channel::print_patch(digital_patch.raster(), channel_params);
    let (clean_l, clean_r) = scene::render_stereo(scene_cfg, rig, Application::Clean, None)?;
    let (stick_l, stick_r) =
        scene::render_stereo(scene_cfg, rig, Application::Sticker, Some(&printed))?;
    let stereo_clean = mean_stereo_capture_confidence(
        &clean_l,
        &clean_r,
        detector,
        class,
        channel_params,
        &mut dlpa_stream.derive(EVAL_STREAM_CLEAN),
        &mut dlpa_stream.derive(STEREO_RIGHT_CLEAN),
        EVAL_CAPTURES,
    );
    let stereo_patched = mean_stereo_capture_confidence(
        &stick_l,
        &stick_r,
        detector,
        class,
        channel_params,
        &mut dlpa_stream.derive(EVAL_STREAM_PATCHED),
        &mut dlpa_stream.derive(STEREO_RIGHT_PATCHED),
        EVAL_CAPTURES,
    );
    records.push(make_record(
        class,
        Scenario::DlPa,
        CameraMode::Stereo,
        cfg.seed,
        stereo_clean,
        stereo_patched,
        analysis::norms(&clean, &scene::render_sticker(scene_cfg, &printed)?, 1)
            .expect("renders share dimensions"),
    ));

    // PL-PA monocular and stereo.
    let papla_stream = stream.derive(SUITE_PAPLA);
    let (_, papla_record, physical_patch) =
        run_papla(scene_cfg, detector, cfg, channel_params, papla_stream.clone())?;
    records.push(papla_record);

    let (proj_l, proj_r) = scene::render_stereo(
        scene_cfg,
        rig,
        Application::Projection,
        Some(physical_patch.raster()),
    )?;
    let stereo_clean = mean_stereo_capture_confidence(
        &clean_l,
        &clean_r,
        detector,
        class,
        channel_params,
        &mut papla_stream.derive(EVAL_STREAM_CLEAN),
        &mut papla_stream.derive(STEREO_RIGHT_CLEAN),
        EVAL_CAPTURES,
    );
    let stereo_patched = mean_stereo_capture_confidence(
        &proj_l,
        &proj_r,
        detector,
        class,
        channel_params,
        &mut papla_stream.derive(EVAL_STREAM_PATCHED),
        &mut papla_stream.derive(STEREO_RIGHT_PATCHED),
        EVAL_CAPTURES,
    );
    records.push(make_record(
        class,
        Scenario::PlPa,
        CameraMode::Stereo,
        cfg.seed,
        stereo_clean,
        stereo_patched,
        analysis::norms(
            &clean,
            &scene::render_projection(scene_cfg, physical_patch.raster())?,
            1,
        )
        .expect("renders share dimensions"),
    ));

    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::TemplateDetectorModel;

    fn small_cfg() -> AttackConfig {
        AttackConfig {
            max_iters: 30,
            step_size: 12.0 / 255.0,
            captures_per_update: 2,
            spsa_samples: 1,
            patch_side: 16,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn random_patch_is_deterministic_and_in_range() {
        let mut r1 = RngStream::new(9, 1);
        let mut r2 = RngStream::new(9, 1);
        let p1 = init_random_patch(8, &mut r1).unwrap();
        let p2 = init_random_patch(8, &mut r2).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.raster().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(
            init_random_patch(1, &mut r1),
            Err(AttackError::BadPatch(1, 1))
        ));
    }

    #[test]
    fn tv_zero_on_constant_positive_on_noise() {
        let flat = Image::splat(8, 8, [0.3, 0.3, 0.3]);
        assert_eq!(total_variation(&flat), 0.0);
        let mut rng = RngStream::new(2, 2);
        let noisy = Image::from_fn(8, 8, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        });
        assert!(total_variation(&noisy) > 0.0);
    }

    #[test]
    fn palette_distance_zero_on_palette_colors() {
        let palette = AttackConfig::printable_palette();
        let img = Image::splat(4, 4, [0.0, 0.0, 0.0]);
        assert_eq!(palette_distance(&img, &palette), 0.0);
        let off = Image::splat(4, 4, [0.5, 0.5, 0.5]);
        assert!(palette_distance(&off, &palette) > 0.0);
        assert_eq!(palette_distance(&off, &[]), 0.0);
    }

    #[test]
    fn spsa_matches_gradient_of_linear_objective() {
        // On f(p) = w . p the SPSA estimate is unbiased, so its average
        // over many Rademacher directions converges to w.
        let base = Image::splat(2, 2, [0.5, 0.5, 0.5]);
        let w: Vec<f64> = (0..12).map(|i| (i as f64 - 6.0) / 6.0).collect();
        let wf = w.clone();
        let mut f = move |img: &Image| -> f64 {
            img.data().iter().zip(&wf).map(|(v, wi)| v * wi).sum()
        };
        let mut rng = RngStream::new(4, 4);
        let grad = spsa_gradient(&base, 0.01, 4000, &mut rng, &mut f);
        for (g, wi) in grad.iter().zip(&w) {
            assert!((g - wi).abs() < 0.15, "estimate {g} vs true {wi}");
        }
    }

    #[test]
    fn finite_diff_exact_on_linear_objective() {
        let base = Image::splat(2, 2, [0.5, 0.5, 0.5]);
        let w: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.4).collect();
        let wf = w.clone();
        let mut f = move |img: &Image| -> f64 {
            img.data().iter().zip(&wf).map(|(v, wi)| v * wi).sum()
        };
        let grad = finite_diff_gradient(&base, 0.05, &mut f);
        for (g, wi) in grad.iter().zip(&w) {
            assert!((g - wi).abs() < 1e-9);
        }
    }

    #[test]
    fn digital_composite_changes_the_anchor_region() {
        let scene_cfg = SceneConfig::default();
        let clean = scene::render_clean(&scene_cfg).unwrap();
        let patch = Patch::new(Image::splat(16, 16, [1.0, 0.0, 1.0])).unwrap();
        let composite = digital_composite(&scene_cfg, &patch).unwrap();
        assert_ne!(clean, composite);
    }

    #[test]
    fn dl_da_reduces_confidence() {
        let scene_cfg = SceneConfig::default();
        let detector = AnyDetector::Template(TemplateDetectorModel::new(&[ObjectId::Car]));
        let cfg = small_cfg();
        let stream = RngStream::new(cfg.seed, 1);
        let (trace, patch) = run_dl_da(&scene_cfg, &detector, &cfg, stream).unwrap();
        let clean = scene::render_clean(&scene_cfg).unwrap();
        let clean_conf = detector.best_class_confidence(&clean, ObjectId::Car);
        let composite = digital_composite(&scene_cfg, &patch).unwrap();
        let patched_conf = detector.best_class_confidence(&composite, ObjectId::Car);
        assert!(!trace.confidences.is_empty());
        assert!(
            patched_conf < clean_conf,
            "patched {patched_conf} vs clean {clean_conf}"
        );
    }

    #[test]
    fn papla_is_deterministic_for_a_fixed_stream() {
        let scene_cfg = SceneConfig::default();
        let detector = AnyDetector::Template(TemplateDetectorModel::new(&[ObjectId::Car]));
        let cfg = AttackConfig {
            max_iters: 4,
            ..small_cfg()
        };
        let channel_params = ChannelParams::default();
        let s1 = RngStream::new(cfg.seed, 2);
        let s2 = RngStream::new(cfg.seed, 2);
        let (t1, r1, p1) = run_papla(&scene_cfg, &detector, &cfg, &channel_params, s1).unwrap();
        let (t2, r2, p2) = run_papla(&scene_cfg, &detector, &cfg, &channel_params, s2).unwrap();
        assert_eq!(t1.confidences, t2.confidences);
        assert_eq!(r1.clean_conf, r2.clean_conf);
        assert_eq!(r1.patched_conf, r2.patched_conf);
        assert_eq!(p1, p2);
        if let Some(red) = r1.reduction_pct {
            let expected =
                analysis::reduction_pct(r1.clean_conf, r1.patched_conf).unwrap();
            assert!((red - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = AttackConfig {
            patch_side: 1,
            ..AttackConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AttackConfig {
            spsa_samples: 0,
            ..AttackConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
