//! Pluggable toy object detectors.
//!
//! Two families: a sliding-window normalized-cross-correlation template
//! matcher over a scale pyramid, and per-class logistic regressors on a
//! downsampled grayscale grid. Both return confidences in [0,1] so attack
//! and analysis code treats them interchangeably.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{warp, Homography, Image};
use crate::logreg;
use crate::rng::RngStream;
use crate::scene::{self, ObjectId, SceneConfig, TEX};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("image {0}x{1} is smaller than every template scale")]
    ImageSmallerThanTemplate(usize, usize),
    #[error("dataset must contain both positive and negative examples")]
    DegenerateDataset,
    #[error("model file is malformed: {0}")]
    MalformedModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pixel-space bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub label: ObjectId,
    pub bbox: PixelRect,
    pub confidence: f64,
}

/// Best confidence among detections of the class; 0 if none.
pub fn best_confidence(dets: &[Detection], class: ObjectId) -> f64 {
    dets.iter()
        .filter(|d| d.label == class)
        .map(|d| d.confidence)
        .fold(0.0, f64::max)
}

/// Stereo fusion: the higher of the two per-lens best confidences.
pub fn stereo_confidence(left: &[Detection], right: &[Detection], class: ObjectId) -> f64 {
    best_confidence(left, class).max(best_confidence(right, class))
}

// ---------------------------------------------------------------------------
// Template (NCC) detector
// ---------------------------------------------------------------------------

/// Default logistic squashing: calibrated so a clean rendered scene scores
/// about 0.95 while a window whose correlation has been knocked down to
/// the mid range maps to near zero, giving the detector a sharp decision
/// boundary.
pub const LOGISTIC_A_DEFAULT: f64 = 18.0;
pub const LOGISTIC_B_DEFAULT: f64 = -14.2;

/// Scale pyramid covering object footprints from roughly 1.5 m down to
/// 0.5 m viewing distance on the default canvas.
pub const SCALES_DEFAULT: [usize; 5] = [16, 23, 32, 45, 64];

#[derive(Debug, Clone)]
struct GrayPlane {
    w: usize,
    data: Vec<f64>,
    mean: f64,
    norm: f64, // sqrt of centered sum of squares
}

impl GrayPlane {
    fn from_gray(w: usize, data: Vec<f64>) -> Self {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let norm = data
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            .sqrt();
        GrayPlane {
            w,
            data,
            mean,
            norm,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassPyramid {
    object_id: ObjectId,
    levels: Vec<GrayPlane>,
}

#[derive(Debug, Clone)]
pub struct TemplateDetectorModel {
    classes: Vec<ClassPyramid>,
    scales: Vec<usize>,
    pub logistic_a: f64,
    pub logistic_b: f64,
}

fn resize_gray_tile(tile: &Image, size: usize) -> GrayPlane {
    let h = Homography::scale(
        (size - 1) as f64 / (TEX - 1) as f64,
        (size - 1) as f64 / (TEX - 1) as f64,
    )
    .expect("scale is invertible");
    let (img, _) = warp(tile, &h, size, size).expect("resize warp");
    GrayPlane::from_gray(size, img.to_gray())
}

impl TemplateDetectorModel {
    pub fn new(classes: &[ObjectId]) -> Self {
        Self::with_params(
            classes,
            &SCALES_DEFAULT,
            LOGISTIC_A_DEFAULT,
            LOGISTIC_B_DEFAULT,
        )
    }

    pub fn with_params(
        classes: &[ObjectId],
        scales: &[usize],
        logistic_a: f64,
        logistic_b: f64,
    ) -> Self {
        assert!(logistic_a > 0.0, "logistic slope must be positive");
        assert!(!classes.is_empty(), "model needs at least one class");
        let class_pyramids = classes
            .iter()
            .map(|&id| {
                let tile = scene::object_tile(id);
                ClassPyramid {
                    object_id: id,
                    levels: scales.iter().map(|&s| resize_gray_tile(&tile, s)).collect(),
                }
            })
            .collect();
        TemplateDetectorModel {
            classes: class_pyramids,
            scales: scales.to_vec(),
            logistic_a,
            logistic_b,
        }
    }

    pub fn classes(&self) -> Vec<ObjectId> {
        self.classes.iter().map(|c| c.object_id).collect()
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }
}

struct IntegralImages {
    w: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl IntegralImages {
    fn build(gray: &[f64], w: usize, h: usize) -> Self {
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0.0;
            let mut row_sq = 0.0;
            for x in 0..w {
                let v = gray[y * w + x];
                row_sum += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        IntegralImages { w, sum, sq }
    }

    #[inline]
    fn window(&self, x: usize, y: usize, s: usize) -> (f64, f64) {
        let stride = self.w + 1;
        let a = y * stride + x;
        let b = y * stride + x + s;
        let c = (y + s) * stride + x;
        let d = (y + s) * stride + x + s;
        (
            self.sum[d] - self.sum[b] - self.sum[c] + self.sum[a],
            self.sq[d] - self.sq[b] - self.sq[c] + self.sq[a],
        )
    }
}

/// Per-sample variance floor below which a window or template counts as
/// constant. Scaled by the pixel count at the use site so integral-image
/// cancellation error on large flat windows never fakes a correlation.
const VAR_EPS_PER_PIXEL: f64 = 1e-10;

/// Best NCC score and window for one template over one image plane.
fn match_template(
    gray: &[f64],
    w: usize,
    h: usize,
    ii: &IntegralImages,
    tpl: &GrayPlane,
) -> Option<(f64, PixelRect)> {
    let s = tpl.w;
    if s > w || s > h {
        return None;
    }
    // zero-variance templates cannot discriminate; score everything 0
    if tpl.norm * tpl.norm <= VAR_EPS_PER_PIXEL * (s * s) as f64 {
        return Some((
            0.0,
            PixelRect {
                x: 0,
                y: 0,
                w: s,
                h: s,
            },
        ));
    }
    let n = (s * s) as f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_pos = (0usize, 0usize);
    for y in 0..=(h - s) {
        for x in 0..=(w - s) {
            let (sum_w, sum_sq) = ii.window(x, y, s);
            let var_term = sum_sq - sum_w * sum_w / n;
            let score = if var_term <= VAR_EPS_PER_PIXEL * n {
                // zero-variance window convention
                0.0
            } else {
                let mut cross = 0.0;
                for ty in 0..s {
                    let grow = &gray[(y + ty) * w + x..(y + ty) * w + x + s];
                    let trow = &tpl.data[ty * s..ty * s + s];
                    for (gv, tv) in grow.iter().zip(trow) {
                        cross += gv * tv;
                    }
                }
                (cross - sum_w * tpl.mean) / (tpl.norm * var_term.sqrt())
            };
            if score > best {
                best = score;
                best_pos = (x, y);
            }
        }
    }
    Some((
        best,
        PixelRect {
            x: best_pos.0,
            y: best_pos.1,
            w: s,
            h: s,
        },
    ))
}

/// Sliding-window NCC over the scale pyramid; per class the best window is
/// reported with confidence `logistic(a * ncc + b)`.
pub fn detect_template(
    img: &Image,
    model: &TemplateDetectorModel,
) -> Result<Vec<Detection>, DetectorError> {
    detect_template_filtered(img, model, None)
}

fn detect_template_filtered(
    img: &Image,
    model: &TemplateDetectorModel,
    only: Option<ObjectId>,
) -> Result<Vec<Detection>, DetectorError> {
    let w = img.width();
    let h = img.height();
    let gray = img.to_gray();
    if model.scales.iter().all(|&s| s > w || s > h) {
        return Err(DetectorError::ImageSmallerThanTemplate(w, h));
    }
    let ii = IntegralImages::build(&gray, w, h);
    let mut out = Vec::new();
    for class in &model.classes {
        if let Some(target) = only {
            if class.object_id != target {
                continue;
            }
        }
        let mut best: Option<(f64, PixelRect)> = None;
        for tpl in &class.levels {
            if let Some((score, rect)) = match_template(&gray, w, h, &ii, tpl) {
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    best = Some((score, rect));
                }
            }
        }
        if let Some((score, bbox)) = best {
            out.push(Detection {
                label: class.object_id,
                bbox,
                confidence: logreg::sigmoid(model.logistic_a * score + model.logistic_b),
            });
        }
    }
    Ok(out)
}

/// Per-pyramid-level best confidences for one class. The detector itself
/// reports only the max over levels; attackers want the whole profile
/// because suppressing the reported maximum alone lets the next level take
/// over, so an attack loss built on all levels descends much faster.
pub fn template_scale_confidences(
    img: &Image,
    model: &TemplateDetectorModel,
    class: ObjectId,
) -> Result<Vec<f64>, DetectorError> {
    let w = img.width();
    let h = img.height();
    let gray = img.to_gray();
    if model.scales.iter().all(|&s| s > w || s > h) {
        return Err(DetectorError::ImageSmallerThanTemplate(w, h));
    }
    let ii = IntegralImages::build(&gray, w, h);
    let mut out = Vec::new();
    for cls in &model.classes {
        if cls.object_id != class {
            continue;
        }
        for tpl in &cls.levels {
            if let Some((score, _)) = match_template(&gray, w, h, &ii, tpl) {
                out.push(logreg::sigmoid(model.logistic_a * score + model.logistic_b));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Linear (logistic-regression) detector
// ---------------------------------------------------------------------------

/// Side of the downsampled grayscale grid the linear family sees.
pub const LINEAR_GRID: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDetectorModel {
    pub object_id: ObjectId,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained: bool,
    pub loss_history: Vec<f64>,
}

/// Downsample to the LINEAR_GRID x LINEAR_GRID grayscale feature vector.
pub fn linear_features(img: &Image) -> Vec<f64> {
    let h = Homography::scale(
        (LINEAR_GRID - 1) as f64 / (img.width() - 1) as f64,
        (LINEAR_GRID - 1) as f64 / (img.height() - 1) as f64,
    )
    .expect("scale is invertible");
    let (small, _) = warp(img, &h, LINEAR_GRID, LINEAR_GRID).expect("resize warp");
    small.to_gray()
}

/// Logistic regression on the downsampled grid, gradient descent on
/// cross-entropy with a backtracking step so the loss history is monotone
/// non-increasing.
pub fn train_linear_detector(
    dataset: &[(Image, bool)],
    epochs: usize,
    lr: f64,
    object_id: ObjectId,
) -> Result<LinearDetectorModel, DetectorError> {
    let pos = dataset.iter().filter(|(_, y)| *y).count();
    if pos == 0 || pos == dataset.len() {
        return Err(DetectorError::DegenerateDataset);
    }
    let xs: Vec<Vec<f64>> = dataset.iter().map(|(img, _)| linear_features(img)).collect();
    let ys: Vec<bool> = dataset.iter().map(|(_, y)| *y).collect();
    let fit = logreg::fit(&xs, &ys, epochs, lr, 0.0, true);
    Ok(LinearDetectorModel {
        object_id,
        weights: fit.weights,
        bias: fit.bias,
        trained: true,
        loss_history: fit.loss_history,
    })
}

impl LinearDetectorModel {
    pub fn score(&self, img: &Image) -> f64 {
        let x = linear_features(img);
        logreg::sigmoid(logreg::dot(&self.weights, &x) + self.bias)
    }

    pub fn detect(&self, img: &Image) -> Detection {
        Detection {
            label: self.object_id,
            bbox: PixelRect {
                x: 0,
                y: 0,
                w: img.width(),
                h: img.height(),
            },
            confidence: self.score(img),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDetectorBank {
    pub models: Vec<LinearDetectorModel>,
}

/// Trains one binary linear model per class on rendered clean scenes
/// (varied distance and angle) against backgrounds and the other classes.
pub fn train_linear_bank(
    classes: &[ObjectId],
    base_scene: &SceneConfig,
    epochs: usize,
    lr: f64,
    rng: &RngStream,
) -> Result<LinearDetectorBank, DetectorError> {
    let mut renders: Vec<(ObjectId, Image)> = Vec::new();
    let mut r = rng.derive(0xDE7);
    for &id in classes {
        for _ in 0..12 {
            let mut cfg = base_scene.clone();
            cfg.object_id = id;
            cfg.object_size_m = id.default_size_m();
            cfg.distance_m = 0.6 + 0.9 * r.next_f64();
            cfg.angle_deg = -20.0 + 40.0 * r.next_f64();
            renders.push((id, scene::render_clean(&cfg).expect("render failed")));
        }
    }
    // plain backgrounds as shared negatives
    let mut backgrounds = Vec::new();
    for _ in 0..12 {
        let mut cfg = base_scene.clone();
        cfg.distance_m = 50.0; // object shrinks to nothing
        backgrounds.push(scene::render_clean(&cfg).expect("render failed"));
    }
    let mut models = Vec::new();
    for &id in classes {
        let mut dataset: Vec<(Image, bool)> = Vec::new();
        for (rid, img) in &renders {
            dataset.push((img.clone(), *rid == id));
        }
        for img in &backgrounds {
            dataset.push((img.clone(), false));
        }
        models.push(train_linear_detector(&dataset, epochs, lr, id)?);
    }
    Ok(LinearDetectorBank { models })
}

// ---------------------------------------------------------------------------
// Unified detector handle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum AnyDetector {
    Template(TemplateDetectorModel),
    Linear(LinearDetectorBank),
}

impl AnyDetector {
    pub fn name(&self) -> &'static str {
        match self {
            AnyDetector::Template(_) => "template_ncc",
            AnyDetector::Linear(_) => "linear_logistic",
        }
    }

    pub fn detect(&self, img: &Image) -> Result<Vec<Detection>, DetectorError> {
        match self {
            AnyDetector::Template(m) => detect_template(img, m),
            AnyDetector::Linear(bank) => {
                Ok(bank.models.iter().map(|m| m.detect(img)).collect())
            }
        }
    }

    pub fn detect_class(&self, img: &Image, class: ObjectId) -> Option<Detection> {
        match self {
            AnyDetector::Template(m) => detect_template_filtered(img, m, Some(class))
                .ok()
                .and_then(|v| v.into_iter().next()),
            AnyDetector::Linear(bank) => bank
                .models
                .iter()
                .find(|m| m.object_id == class)
                .map(|m| m.detect(img)),
        }
    }

    /// Confidence of the best detection of `class`, 0 when absent.
    pub fn best_class_confidence(&self, img: &Image, class: ObjectId) -> f64 {
        self.detect_class(img, class)
            .map(|d| d.confidence)
            .unwrap_or(0.0)
    }

    /// Attack-side loss profile: every sub-score whose maximum forms the
    /// reported confidence (per pyramid level for the template detector,
    /// the single logit for the linear one). Suppressing the mean of this
    /// profile suppresses the max without the argmax hopping between
    /// levels and stalling a gradient-based attack.
    pub fn attack_confidences(&self, img: &Image, class: ObjectId) -> Vec<f64> {
        match self {
            AnyDetector::Template(m) => {
                template_scale_confidences(img, m, class).unwrap_or_default()
            }
            AnyDetector::Linear(bank) => bank
                .models
                .iter()
                .filter(|m| m.object_id == class)
                .map(|m| m.score(img))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Binary model container: magic, version, little-endian payload
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"PLDM";
const MODEL_VERSION: u32 = 1;

fn object_code(id: ObjectId) -> u8 {
    match id {
        ObjectId::Car => 0,
        ObjectId::StopSign => 1,
        ObjectId::PottedPlant => 2,
        ObjectId::Cup => 3,
        ObjectId::Bottle => 4,
    }
}

fn object_from_code(code: u8) -> Result<ObjectId, DetectorError> {
    Ok(match code {
        0 => ObjectId::Car,
        1 => ObjectId::StopSign,
        2 => ObjectId::PottedPlant,
        3 => ObjectId::Cup,
        4 => ObjectId::Bottle,
        c => return Err(DetectorError::MalformedModel(format!("object code {c}"))),
    })
}

/// Writes a linear bank: magic, version, model count, then per model the
/// class code, weight length, weights, and bias, all little-endian.
pub fn save_linear_bank(bank: &LinearDetectorBank, path: &Path) -> Result<(), DetectorError> {
    let mut f = fs::File::create(path)?;
    f.write_all(MODEL_MAGIC)?;
    f.write_all(&MODEL_VERSION.to_le_bytes())?;
    f.write_all(&(bank.models.len() as u32).to_le_bytes())?;
    for m in &bank.models {
        f.write_all(&[object_code(m.object_id)])?;
        f.write_all(&(m.weights.len() as u32).to_le_bytes())?;
        for w in &m.weights {
            f.write_all(&w.to_le_bytes())?;
        }
        f.write_all(&m.bias.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_linear_bank(path: &Path) -> Result<LinearDetectorBank, DetectorError> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DetectorError> {
        if *pos + n > bytes.len() {
            return Err(DetectorError::MalformedModel("truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MODEL_MAGIC {
        return Err(DetectorError::MalformedModel("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(DetectorError::MalformedModel(format!("version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut models = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let object_id = object_from_code(take(&mut pos, 1)?[0])?;
        let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut weights = Vec::with_capacity(len);
        for _ in 0..len {
            weights.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let bias = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        models.push(LinearDetectorModel {
            object_id,
            weights,
            bias,
            trained: true,
            loss_history: Vec::new(),
        });
    }
    Ok(LinearDetectorBank { models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::clamp01;

    #[test]
    fn exact_template_scores_maximal_confidence() {
        let model = TemplateDetectorModel::new(&[ObjectId::Cup]);
        let tile = scene::object_tile(ObjectId::Cup);
        let dets = detect_template(&tile, &model).unwrap();
        let conf = best_confidence(&dets, ObjectId::Cup);
        let expected = logreg::sigmoid(model.logistic_a + model.logistic_b);
        assert!((conf - expected).abs() < 1e-6, "conf {conf} vs {expected}");
    }

    #[test]
    fn brightness_scaled_template_scores_identically() {
        let model = TemplateDetectorModel::new(&[ObjectId::StopSign]);
        let tile = scene::object_tile(ObjectId::StopSign);
        let scaled = Image::from_fn(TEX, TEX, |x, y| {
            let p = tile.get(x, y);
            [
                clamp01(0.5 * p[0] + 0.2),
                clamp01(0.5 * p[1] + 0.2),
                clamp01(0.5 * p[2] + 0.2),
            ]
        });
        let d1 = detect_template(&tile, &model).unwrap();
        let d2 = detect_template(&scaled, &model).unwrap();
        assert_eq!(d1[0].bbox, d2[0].bbox);
        assert!((d1[0].confidence - d2[0].confidence).abs() < 1e-9);
    }

    #[test]
    fn constant_image_scores_logistic_b() {
        let model = TemplateDetectorModel::new(&[ObjectId::Car]);
        let img = Image::splat(80, 80, [0.4, 0.4, 0.4]);
        let dets = detect_template(&img, &model).unwrap();
        let expected = logreg::sigmoid(model.logistic_b);
        assert!((dets[0].confidence - expected).abs() < 1e-12);
    }

    #[test]
    fn detection_is_deterministic() {
        let model = TemplateDetectorModel::new(&[ObjectId::Car, ObjectId::Cup]);
        let cfg = SceneConfig::default();
        let img = scene::render_clean(&cfg).unwrap();
        let d1 = detect_template(&img, &model).unwrap();
        let d2 = detect_template(&img, &model).unwrap();
        assert_eq!(d1.len(), d2.len());
        for (a, b) in d1.iter().zip(&d2) {
            assert_eq!(a.bbox, b.bbox);
            assert_eq!(a.confidence, b.confidence);
        }
    }

    #[test]
    fn clean_scene_scores_high() {
        let model = TemplateDetectorModel::new(&[ObjectId::Car]);
        let mut cfg = SceneConfig::default();
        cfg.distance_m = 0.5;
        let img = scene::render_clean(&cfg).unwrap();
        let conf = best_confidence(&detect_template(&img, &model).unwrap(), ObjectId::Car);
        assert!(conf >= 0.9, "clean confidence {conf}");
    }

    #[test]
    fn tiny_image_rejected() {
        let model = TemplateDetectorModel::new(&[ObjectId::Car]);
        let img = Image::splat(8, 8, [0.5, 0.5, 0.5]);
        assert!(matches!(
            detect_template(&img, &model),
            Err(DetectorError::ImageSmallerThanTemplate(8, 8))
        ));
    }

    #[test]
    fn best_confidence_conventions() {
        assert_eq!(best_confidence(&[], ObjectId::Car), 0.0);
        let dets = vec![
            Detection {
                label: ObjectId::Car,
                bbox: PixelRect {
                    x: 0,
                    y: 0,
                    w: 1,
                    h: 1,
                },
                confidence: 0.2,
            },
            Detection {
                label: ObjectId::Car,
                bbox: PixelRect {
                    x: 0,
                    y: 0,
                    w: 1,
                    h: 1,
                },
                confidence: 0.9,
            },
        ];
        assert_eq!(best_confidence(&dets, ObjectId::Car), 0.9);
        assert_eq!(best_confidence(&dets, ObjectId::Cup), 0.0);
    }

    #[test]
    fn stereo_confidence_is_max() {
        let mk = |c: f64| Detection {
            label: ObjectId::Car,
            bbox: PixelRect {
                x: 0,
                y: 0,
                w: 1,
                h: 1,
            },
            confidence: c,
        };
        assert_eq!(stereo_confidence(&[mk(0.3)], &[mk(0.7)], ObjectId::Car), 0.7);
        assert_eq!(stereo_confidence(&[mk(0.59)], &[mk(0.41)], ObjectId::Car), 0.59);
        assert_eq!(stereo_confidence(&[], &[], ObjectId::Car), 0.0);
    }

    #[test]
    fn linear_detector_separable_and_degenerate() {
        let bright = Image::splat(32, 32, [0.9, 0.9, 0.9]);
        let dark = Image::splat(32, 32, [0.1, 0.1, 0.1]);
        let dataset = vec![(bright.clone(), true), (dark.clone(), false)];
        let model = train_linear_detector(&dataset, 300, 1.0, ObjectId::Car).unwrap();
        assert!(model.score(&bright) > 0.5);
        assert!(model.score(&dark) < 0.5);
        for pair in model.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
        let all_pos = vec![(bright, true), (dark, true)];
        assert!(matches!(
            train_linear_detector(&all_pos, 10, 1.0, ObjectId::Car),
            Err(DetectorError::DegenerateDataset)
        ));
    }

    #[test]
    fn linear_bank_round_trips_through_container() {
        let bank = LinearDetectorBank {
            models: vec![LinearDetectorModel {
                object_id: ObjectId::Bottle,
                weights: vec![0.5, -1.25, 3.0],
                bias: 0.75,
                trained: true,
                loss_history: vec![],
            }],
        };
        let dir = std::env::temp_dir().join("patchlab_model_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bank.bin");
        save_linear_bank(&bank, &path).unwrap();
        let back = load_linear_bank(&path).unwrap();
        assert_eq!(back.models[0].object_id, ObjectId::Bottle);
        assert_eq!(back.models[0].weights, bank.models[0].weights);
        assert_eq!(back.models[0].bias, bank.models[0].bias);
    }
}
