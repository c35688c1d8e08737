//! Projection-detection countermeasure: a logistic classifier over simple
//! photometric features that separates clean captures from frames where a
//! projector is painting a patch onto the object surface.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelParams};
use crate::imaging::{warp, Homography, Image};
use crate::logreg;
use crate::rng::RngStream;
use crate::scene::{self, SceneConfig};

#[derive(Debug, Error)]
pub enum CountermeasureError {
    #[error("classifier has not been trained")]
    UntrainedModel,
    #[error("dataset must contain both classes")]
    DegenerateDataset,
    #[error("model file is malformed: {0}")]
    MalformedModel(String),
    #[error("scene error: {0}")]
    Scene(#[from] scene::SceneError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub image: Image,
    /// True when a projection is present.
    pub projected: bool,
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Renders clean and projection-patched scenes over ranges of distance,
/// angle, lighting, and object class, each passed through the noisy
/// capture channel once.
pub fn generate_dataset(
    base_scene: &SceneConfig,
    clean_count: usize,
    projected_count: usize,
    channel_params: &ChannelParams,
    rng: &mut RngStream,
) -> Result<Vec<LabeledFrame>, CountermeasureError> {
    let objects = scene::ObjectId::all();
    let mut frames = Vec::with_capacity(clean_count + projected_count);
    for i in 0..clean_count + projected_count {
        let projected = i >= clean_count;
        let mut cfg = base_scene.clone();
        let object = objects[rng.next_below(objects.len())];
        cfg.object_id = object;
        cfg.object_size_m = object.default_size_m();
        cfg.distance_m = 0.5 + rng.next_f64();
        cfg.angle_deg = -20.0 + 40.0 * rng.next_f64();
        cfg.ambient_lux = 100.0 + 300.0 * rng.next_f64();
        let img = if projected {
            cfg.projector_lumens = 1800.0 + 4200.0 * rng.next_f64();
            let side = 16 + rng.next_below(17); // 16..=32
            let data = (0..side * side * 3).map(|_| rng.next_f64()).collect();
            let patch = Image::from_data(side, side, data).expect("uniform values in range");
            scene::render_projection(&cfg, &patch)?
        } else {
            scene::render_clean(&cfg)?
        };
        frames.push(LabeledFrame {
            image: channel::capture(&img, channel_params, rng),
            projected,
        });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub max_shift_frac: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation_deg: 15.0,
            max_shift_frac: 0.10,
            zoom_min: 0.9,
            zoom_max: 1.1,
        }
    }
}

/// One geometric augmentation. Flip is an exact index reversal (applying
/// it twice is the identity bit for bit); the others resample bilinearly
/// about the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    HorizontalFlip,
    RotationDeg(f64),
    /// Shift in pixels.
    Shift(f64, f64),
    Zoom(f64),
}

/// Horizontal flip by exact index reversal.
pub fn hflip(img: &Image) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| {
        img.get(img.width() - 1 - x, y)
    })
}

fn geometric_transform(img: &Image, h: &Homography) -> Image {
    let (out, _) = warp(img, h, img.width(), img.height()).expect("same-size warp");
    out
}

pub fn apply_augmentation(img: &Image, aug: &Augmentation) -> Image {
    let cx = (img.width() - 1) as f64 / 2.0;
    let cy = (img.height() - 1) as f64 / 2.0;
    match aug {
        Augmentation::HorizontalFlip => hflip(img),
        Augmentation::RotationDeg(deg) => {
            geometric_transform(img, &Homography::rotation_deg_about(*deg, cx, cy))
        }
        Augmentation::Shift(dx, dy) => {
            geometric_transform(img, &Homography::translation(*dx, *dy))
        }
        Augmentation::Zoom(z) => {
            let h = Homography::translation(cx, cy)
                .compose(&Homography::scale(*z, *z).expect("zoom is positive"))
                .and_then(|m| m.compose(&Homography::translation(-cx, -cy)))
                .expect("zoom homography is invertible");
            geometric_transform(img, &h)
        }
    }
}

/// Draws one transform kind uniformly and parameterizes it from the ranges.
pub fn sample_augmentation(ranges: &AugmentRanges, rng: &mut RngStream) -> Augmentation {
    match rng.next_below(4) {
        0 => Augmentation::HorizontalFlip,
        1 => Augmentation::RotationDeg(ranges.max_rotation_deg * (2.0 * rng.next_f64() - 1.0)),
        2 => Augmentation::Shift(
            ranges.max_shift_frac * (2.0 * rng.next_f64() - 1.0),
            ranges.max_shift_frac * (2.0 * rng.next_f64() - 1.0),
        ),
        _ => Augmentation::Zoom(
            ranges.zoom_min + (ranges.zoom_max - ranges.zoom_min) * rng.next_f64(),
        ),
    }
}

/// One randomly transformed copy of a frame; the label is preserved.
pub fn augment_frame(
    frame: &LabeledFrame,
    ranges: &AugmentRanges,
    rng: &mut RngStream,
) -> LabeledFrame {
    let aug = match sample_augmentation(ranges, rng) {
        // shift fraction applies to the frame's own dimensions
        Augmentation::Shift(fx, fy) => Augmentation::Shift(
            fx * frame.image.width() as f64,
            fy * frame.image.height() as f64,
        ),
        other => other,
    };
    LabeledFrame {
        image: apply_augmentation(&frame.image, &aug),
        projected: frame.projected,
    }
}

/// Expands the dataset with `copies` augmented variants per frame,
/// preserving labels. The originals are kept.
pub fn augment(
    frames: &[LabeledFrame],
    copies: usize,
    ranges: &AugmentRanges,
    rng: &mut RngStream,
) -> Vec<LabeledFrame> {
    let mut out = Vec::with_capacity(frames.len() * (copies + 1));
    for f in frames {
        out.push(f.clone());
        for _ in 0..copies {
            out.push(augment_frame(f, ranges, rng));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

const HIST_BINS: usize = 16;
const GRID: usize = 8;

/// Photometric feature vector: 16-bin saturation and value histograms,
/// Laplacian energy, per-channel means and standard deviations, and the
/// variance of 8x8 block brightnesses. Projected patches raise saturation,
/// push value toward the top bins, and add high-frequency energy.
pub fn extract_features(img: &Image) -> Vec<f64> {
    let n = (img.width() * img.height()) as f64;
    let mut sat_hist = vec![0.0; HIST_BINS];
    let mut val_hist = vec![0.0; HIST_BINS];
    let mut sums = [0.0; 3];
    let mut sqs = [0.0; 3];
    for px in img.data().chunks_exact(3) {
        let maxc = px[0].max(px[1]).max(px[2]);
        let minc = px[0].min(px[1]).min(px[2]);
        let sat = if maxc > 1e-9 { (maxc - minc) / maxc } else { 0.0 };
        let bin = |v: f64| ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        sat_hist[bin(sat)] += 1.0;
        val_hist[bin(maxc)] += 1.0;
        for c in 0..3 {
            sums[c] += px[c];
            sqs[c] += px[c] * px[c];
        }
    }
    for v in sat_hist.iter_mut().chain(val_hist.iter_mut()) {
        *v /= n;
    }

    let gray = img.to_gray();
    let (w, h) = (img.width(), img.height());
    let mut lap_energy = 0.0;
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let l = 4.0 * gray[y * w + x]
                    - gray[y * w + x - 1]
                    - gray[y * w + x + 1]
                    - gray[(y - 1) * w + x]
                    - gray[(y + 1) * w + x];
                lap_energy += l * l;
            }
        }
        lap_energy /= ((w - 2) * (h - 2)) as f64;
    }

    let mut block_means = Vec::with_capacity(GRID * GRID);
    for by in 0..GRID {
        for bx in 0..GRID {
            let x0 = bx * w / GRID;
            let x1 = ((bx + 1) * w / GRID).max(x0 + 1).min(w);
            let y0 = by * h / GRID;
            let y1 = ((by + 1) * h / GRID).max(y0 + 1).min(h);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += gray[y * w + x];
                }
            }
            block_means.push(s / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    let bm = block_means.iter().sum::<f64>() / block_means.len() as f64;
    let block_var = block_means
        .iter()
        .map(|v| (v - bm) * (v - bm))
        .sum::<f64>()
        / block_means.len() as f64;

    let mut features = Vec::with_capacity(2 * HIST_BINS + 1 + 6 + 1);
    features.extend_from_slice(&sat_hist);
    features.extend_from_slice(&val_hist);
    features.push(lap_energy);
    for c in 0..3 {
        let mean = sums[c] / n;
        features.push(mean);
        features.push((sqs[c] / n - mean * mean).max(0.0).sqrt());
    }
    features.push(block_var);
    features
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Per-feature standardization learned on the training split.
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub trained: bool,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

fn standardize(x: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(means.iter().zip(stds))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub l2_weight: f64,
    /// Early stopping: stop after this many epochs without a validation
    /// improvement and keep the best checkpoint. Zero trains one epoch.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 600,
            lr: 2.0,
            l2_weight: 1e-4,
            patience: 100,
            val_fraction: 0.2,
            seed: 0xC0DE,
        }
    }
}

/// Seeded stratified split: each class is shuffled separately and the
/// requested fraction goes to validation.
fn stratified_split(
    frames: &[LabeledFrame],
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = RngStream::new(seed, 0x5A11);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.projected == class)
            .map(|(i, _)| i)
            .collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.next_below(i + 1));
        }
        let n_val = ((idx.len() as f64) * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    (train, val)
}

/// Logistic regression on the photometric features with a stratified
/// validation split and patience-based early stopping; the returned
/// weights are the checkpoint with the best validation loss.
pub fn train_classifier(
    frames: &[LabeledFrame],
    options: &TrainOptions,
) -> Result<ProjectionClassifier, CountermeasureError> {
    let pos = frames.iter().filter(|f| f.projected).count();
    if pos == 0 || pos == frames.len() {
        return Err(CountermeasureError::DegenerateDataset);
    }
    let feats: Vec<Vec<f64>> = frames.iter().map(|f| extract_features(&f.image)).collect();
    let labels: Vec<bool> = frames.iter().map(|f| f.projected).collect();
    let (train_idx, val_idx) = stratified_split(frames, options.val_fraction, options.seed);

    // standardize on the training split so gradient descent converges at
    // one learning rate across features of very different scales
    let dim_f = feats[0].len();
    let mut means = vec![0.0; dim_f];
    for &i in &train_idx {
        for (m, v) in means.iter_mut().zip(&feats[i]) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= train_idx.len() as f64;
    }
    let mut stds = vec![0.0; dim_f];
    for &i in &train_idx {
        for (s, (v, m)) in stds.iter_mut().zip(feats[i].iter().zip(&means)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / train_idx.len() as f64).sqrt().max(1e-9);
    }

    let tx: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| standardize(&feats[i], &means, &stds))
        .collect();
    let ty: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
    let vx: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| standardize(&feats[i], &means, &stds))
        .collect();
    let vy: Vec<bool> = val_idx.iter().map(|&i| labels[i]).collect();

    let dim = tx[0].len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let epochs = options.epochs.max(1);
    let n = tx.len() as f64;
    for _ in 0..epochs {
        // one full-batch gradient step
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in tx.iter().zip(&ty) {
            let p = logreg::sigmoid(logreg::dot(&w, x) + b);
            let err = p - if y { 1.0 } else { 0.0 };
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= options.lr * (g / n + 2.0 * options.l2_weight * *wi);
        }
        b -= options.lr * gb / n;

        train_loss.push(logreg::loss(&tx, &ty, &w, b, options.l2_weight));
        let vl = if vx.is_empty() {
            *train_loss.last().unwrap()
        } else {
            logreg::loss(&vx, &vy, &w, b, 0.0)
        };
        val_loss.push(vl);
        if vl < best_val - 1e-12 {
            best_val = vl;
            best_w = w.clone();
            best_b = b;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= options.patience {
            break;
        }
    }
    Ok(ProjectionClassifier {
        weights: best_w,
        bias: best_b,
        feature_means: means,
        feature_stds: stds,
        trained: true,
        train_loss,
        val_loss,
    })
}

impl ProjectionClassifier {
    pub fn score(&self, img: &Image) -> Result<f64, CountermeasureError> {
        if !self.trained {
            return Err(CountermeasureError::UntrainedModel);
        }
        let x = standardize(
            &extract_features(img),
            &self.feature_means,
            &self.feature_stds,
        );
        Ok(logreg::sigmoid(logreg::dot(&self.weights, &x) + self.bias))
    }
}

/// Pass/block decision: a frame scoring at or above the threshold is
/// flagged as containing a projection and blocked.
pub fn gate(
    img: &Image,
    model: &ProjectionClassifier,
    threshold: f64,
) -> Result<bool, CountermeasureError> {
    Ok(model.score(img)? >= threshold)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub roc: Vec<(f64, f64)>,
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// ROC from a score-threshold sweep anchored at (0,0) and (1,1), AUC by
/// trapezoid rule, and the confusion matrix at threshold 0.5.
pub fn evaluate(
    frames: &[LabeledFrame],
    model: &ProjectionClassifier,
) -> Result<Evaluation, CountermeasureError> {
    let scored: Vec<(f64, bool)> = frames
        .iter()
        .map(|f| Ok((model.score(&f.image)?, f.projected)))
        .collect::<Result<_, CountermeasureError>>()?;
    let pos = scored.iter().filter(|(_, y)| *y).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CountermeasureError::DegenerateDataset);
    }

    let mut thresholds: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut roc = vec![(0.0, 0.0)];
    for t in &thresholds {
        let tp = scored.iter().filter(|(s, y)| *y && s >= t).count();
        let fp = scored.iter().filter(|(s, y)| !*y && s >= t).count();
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    if *roc.last().unwrap() != (1.0, 1.0) {
        roc.push((1.0, 1.0));
    }
    let mut auc = 0.0;
    for pair in roc.windows(2) {
        auc += (pair[1].0 - pair[0].0) * (pair[0].1 + pair[1].1) / 2.0;
    }

    let tp = scored.iter().filter(|(s, y)| *y && *s >= 0.5).count();
    let fp = scored.iter().filter(|(s, y)| !*y && *s >= 0.5).count();
    let fne = pos - tp;
    let tn = neg - fp;
    Ok(Evaluation {
        auc,
        roc,
        accuracy: (tp + tn) as f64 / scored.len() as f64,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fne,
    })
}

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"PLCM";
const MODEL_VERSION: u32 = 1;

pub fn save_classifier(
    model: &ProjectionClassifier,
    path: &Path,
) -> Result<(), CountermeasureError> {
    let mut f = fs::File::create(path)?;
    f.write_all(MODEL_MAGIC)?;
    f.write_all(&MODEL_VERSION.to_le_bytes())?;
    f.write_all(&(model.weights.len() as u32).to_le_bytes())?;
    for w in &model.weights {
        f.write_all(&w.to_le_bytes())?;
    }
    f.write_all(&model.bias.to_le_bytes())?;
    for m in &model.feature_means {
        f.write_all(&m.to_le_bytes())?;
    }
    for s in &model.feature_stds {
        f.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<ProjectionClassifier, CountermeasureError> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CountermeasureError> {
        if *pos + n > bytes.len() {
            return Err(CountermeasureError::MalformedModel("truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MODEL_MAGIC {
        return Err(CountermeasureError::MalformedModel("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(CountermeasureError::MalformedModel(format!(
            "version {version}"
        )));
    }
    let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut weights = Vec::with_capacity(len);
    for _ in 0..len {
        weights.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let bias = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let mut feature_means = Vec::with_capacity(len);
    for _ in 0..len {
        feature_means.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let mut feature_stds = Vec::with_capacity(len);
    for _ in 0..len {
        feature_stds.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    Ok(ProjectionClassifier {
        weights,
        bias,
        feature_means,
        feature_stds,
        trained: true,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
    })
}
