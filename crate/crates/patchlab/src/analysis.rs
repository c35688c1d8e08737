//! Metrics and statistics: pixel-difference norms on the 8-bit scale,
//! confidence-reduction percentages, one-way ANOVA with exact F p-values,
//! and the experiment harnesses (environmental-factor sweep, surface-color
//! study, per-scenario norm comparison, transferability matrix).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    self, AttackConfig, AttackMethod, CameraMode, ExperimentRecord, Scenario,
};
use crate::channel::ChannelParams;
use crate::detector::AnyDetector;
use crate::imaging::{quantize, Image};
use crate::rng::RngStream;
use crate::scene::SceneConfig;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("clean confidence is zero; cell is not detectable")]
    CleanZero,
    #[error("need at least two groups with two observations each")]
    InsufficientGroups,
    #[error("transfer matrix requires at least two detectors")]
    TooFewDetectors,
}

/// L2 / L-infinity / L0 on quantized (0-255) images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTriple {
    pub l2: f64,
    pub linf: u32,
    pub l0_pct: f64,
}

impl NormTriple {
    pub fn zero() -> Self {
        NormTriple {
            l2: 0.0,
            linf: 0,
            l0_pct: 0.0,
        }
    }
}

/// Pixel-difference norms between two images, computed on their 8-bit
/// quantizations. `l0_threshold` is the minimum per-channel level change
/// for a pixel to count as differing.
pub fn norms(a: &Image, b: &Image, l0_threshold: u32) -> Result<NormTriple, AnalysisError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(AnalysisError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let qa = quantize(a);
    let qb = quantize(b);
    let mut sum_sq = 0.0f64;
    let mut linf = 0u32;
    let mut l0 = 0usize;
    let pixels = a.width() * a.height();
    for (pa, pb) in qa.data.chunks_exact(3).zip(qb.data.chunks_exact(3)) {
        let mut pixel_differs = false;
        for c in 0..3 {
            let d = (pa[c] as i32 - pb[c] as i32).unsigned_abs();
            sum_sq += (d * d) as f64;
            linf = linf.max(d);
            if d >= l0_threshold {
                pixel_differs = true;
            }
        }
        if pixel_differs {
            l0 += 1;
        }
    }
    Ok(NormTriple {
        l2: sum_sq.sqrt(),
        linf,
        l0_pct: 100.0 * l0 as f64 / pixels as f64,
    })
}

/// Percentage drop from clean to patched confidence, clamped to [0, 100].
pub fn reduction_pct(clean_conf: f64, patched_conf: f64) -> Result<f64, AnalysisError> {
    if clean_conf <= 0.0 {
        return Err(AnalysisError::CleanZero);
    }
    Ok((100.0 * (clean_conf - patched_conf) / clean_conf).clamp(0.0, 100.0))
}

// ---------------------------------------------------------------------------
// Special functions for the F distribution
// ---------------------------------------------------------------------------

/// ln Gamma(x) for x > 0, Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in C.iter().enumerate() {
        sum += c / (x + i as f64 + 1.0);
    }
    let tmp = x + 5.5;
    (x + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / x).ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-14;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn betai(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln())
    .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_cf(x, a, b) / a
    } else {
        1.0 - bt * beta_cf(1.0 - x, b, a) / b
    }
}

/// CDF of the F distribution with (d1, d2) degrees of freedom.
pub fn f_cdf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    betai(d1 * f / (d1 * f + d2), d1 / 2.0, d2 / 2.0)
}

// ---------------------------------------------------------------------------
// One-way ANOVA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factor: String,
    pub f_stat: f64,
    pub p_value: f64,
    pub group_medians: BTreeMap<String, f64>,
    pub dof: (usize, usize),
    pub degenerate: bool,
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult, AnalysisError> {
    anova_oneway_named(
        "unnamed",
        &groups
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("group{i}"), g.clone()))
            .collect::<Vec<_>>(),
    )
}

pub fn anova_oneway_named(
    factor: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<AnovaResult, AnalysisError> {
    if groups.len() < 2 || groups.iter().any(|(_, g)| g.len() < 2) {
        return Err(AnalysisError::InsufficientGroups);
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|(_, g)| g.len()).sum();
    if n <= k {
        return Err(AnalysisError::InsufficientGroups);
    }
    let grand: f64 = groups.iter().flat_map(|(_, g)| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (_, g) in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand) * (mean - grand);
        ss_within += g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    let dof = (k - 1, n - k);
    let medians: BTreeMap<String, f64> = groups
        .iter()
        .map(|(name, g)| (name.clone(), median(g)))
        .collect();
    // All observations identical (or no within-group variance at all with
    // no between-group variance): F undefined, flagged degenerate.
    let scale = groups
        .iter()
        .flat_map(|(_, g)| g.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    if ss_within <= 1e-18 * scale * scale && ss_between <= 1e-18 * scale * scale {
        return Ok(AnovaResult {
            factor: factor.to_string(),
            f_stat: 0.0,
            p_value: 1.0,
            group_medians: medians,
            dof,
            degenerate: true,
        });
    }
    let ms_between = ss_between / dof.0 as f64;
    let ms_within = ss_within / dof.1 as f64;
    if ms_within <= 0.0 {
        // separated constant groups: infinitely significant
        return Ok(AnovaResult {
            factor: factor.to_string(),
            f_stat: f64::INFINITY,
            p_value: 0.0,
            group_medians: medians,
            dof,
            degenerate: false,
        });
    }
    let f = ms_between / ms_within;
    Ok(AnovaResult {
        factor: factor.to_string(),
        f_stat: f,
        p_value: 1.0 - f_cdf(f, dof.0 as f64, dof.1 as f64),
        group_medians: medians,
        dof,
        degenerate: false,
    })
}

/// Median with linear interpolation (same convention as the quartiles).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// R-7 quantile: linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

// ---------------------------------------------------------------------------
// Environmental-factor sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepLevels {
    pub projector_lumens: Vec<f64>,
    pub ambient_lux: Vec<f64>,
    pub distance_m: Vec<f64>,
    pub angle_deg: Vec<f64>,
}

impl Default for SweepLevels {
    fn default() -> Self {
        SweepLevels {
            projector_lumens: vec![1800.0, 3000.0, 6000.0],
            ambient_lux: vec![100.0, 200.0, 400.0],
            distance_m: vec![0.5, 1.0, 1.5],
            angle_deg: vec![-20.0, 0.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub projector_lumens: f64,
    pub ambient_lux: f64,
    pub distance_m: f64,
    pub angle_deg: f64,
    pub record: ExperimentRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxStats {
    pub factor: String,
    pub level: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub anova: Vec<AnovaResult>,
    pub box_stats: Vec<BoxStats>,
}

const FACTORS: [&str; 4] = ["projector_lumens", "ambient_lux", "distance_m", "angle_deg"];

fn cell_level(cell: &SweepCell, factor: &str) -> f64 {
    match factor {
        "projector_lumens" => cell.projector_lumens,
        "ambient_lux" => cell.ambient_lux,
        "distance_m" => cell.distance_m,
        "angle_deg" => cell.angle_deg,
        _ => unreachable!(),
    }
}

/// Runs a physical-learning attack in every cell of the factor grid and
/// reports reductions, one ANOVA per factor (remaining factors pooled),
/// and per-level box statistics.
pub fn run_factor_sweep(
    base_scene: &SceneConfig,
    levels: &SweepLevels,
    detector: &AnyDetector,
    attack_cfg: &AttackConfig,
    channel: &ChannelParams,
) -> SweepResult {
    let mut combos = Vec::new();
    for &lumens in &levels.projector_lumens {
        for &lux in &levels.ambient_lux {
            for &dist in &levels.distance_m {
                for &angle in &levels.angle_deg {
                    combos.push((lumens, lux, dist, angle));
                }
            }
        }
    }
    let cells: Vec<SweepCell> = combos
        .par_iter()
        .enumerate()
        .map(|(idx, &(lumens, lux, dist, angle))| {
            let mut scene = base_scene.clone();
            scene.projector_lumens = lumens;
            scene.ambient_lux = lux;
            scene.distance_m = dist;
            scene.angle_deg = angle;
            let stream = RngStream::new(attack_cfg.seed, 0x5EE9).derive(idx as u64);
            let (_, record, _) =
                attack::run_papla(&scene, detector, attack_cfg, channel, stream)
                    .expect("sweep cell attack failed");
            SweepCell {
                projector_lumens: lumens,
                ambient_lux: lux,
                distance_m: dist,
                angle_deg: angle,
                record,
            }
        })
        .collect();

    let mut anova = Vec::new();
    let mut box_stats = Vec::new();
    for factor in FACTORS {
        let mut by_level: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for cell in &cells {
            if let Some(red) = cell.record.reduction_pct {
                by_level
                    .entry(format!("{}", cell_level(cell, factor)))
                    .or_default()
                    .push(red);
            }
        }
        let groups: Vec<(String, Vec<f64>)> = by_level.clone().into_iter().collect();
        match anova_oneway_named(factor, &groups) {
            Ok(res) => anova.push(res),
            Err(_) => anova.push(AnovaResult {
                factor: factor.to_string(),
                f_stat: 0.0,
                p_value: 1.0,
                group_medians: groups.iter().map(|(n, g)| (n.clone(), median(g))).collect(),
                dof: (0, 0),
                degenerate: true,
            }),
        }
        for (level, vals) in &by_level {
            box_stats.push(BoxStats {
                factor: factor.to_string(),
                level: level.clone(),
                median: median(vals),
                q1: quantile(vals, 0.25),
                q3: quantile(vals, 0.75),
                count: vals.len(),
            });
        }
    }
    SweepResult {
        cells,
        anova,
        box_stats,
    }
}

// ---------------------------------------------------------------------------
// Surface-color study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub albedo: [f64; 3],
    pub mean_reduction_pct: f64,
    pub runs: Vec<f64>,
}

/// Physical attack per surface color, repeated and averaged.
pub fn run_surface_study(
    base_scene: &SceneConfig,
    albedos: &[[f64; 3]],
    repeats: usize,
    detector: &AnyDetector,
    attack_cfg: &AttackConfig,
    channel: &ChannelParams,
) -> Vec<SurfaceRow> {
    albedos
        .par_iter()
        .enumerate()
        .map(|(ai, albedo)| {
            let runs: Vec<f64> = (0..repeats.max(1))
                .map(|rep| {
                    let mut scene = base_scene.clone();
                    scene.surface_albedo = *albedo;
                    let stream = RngStream::new(attack_cfg.seed, 0x50F)
                        .derive((ai * 1000 + rep) as u64);
                    let (_, record, _) =
                        attack::run_papla(&scene, detector, attack_cfg, channel, stream)
                            .expect("surface study attack failed");
                    record.reduction_pct.unwrap_or(0.0)
                })
                .collect();
            SurfaceRow {
                albedo: *albedo,
                mean_reduction_pct: runs.iter().sum::<f64>() / runs.len() as f64,
                runs,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Per-scenario norm comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioNorms {
    pub scenario: Scenario,
    pub mean: NormTriple,
    pub count: usize,
}

/// Averages the recorded patched-vs-clean norms per scenario.
pub fn run_norms_comparison(records: &[ExperimentRecord]) -> Vec<ScenarioNorms> {
    let mut acc: BTreeMap<Scenario, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in records {
        if r.scenario == Scenario::NonAdversarial || r.camera != CameraMode::Monocular {
            continue;
        }
        let e = acc.entry(r.scenario).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += r.norms.l2;
        e.1 += r.norms.linf as f64;
        e.2 += r.norms.l0_pct;
        e.3 += 1;
    }
    acc.into_iter()
        .map(|(scenario, (l2, linf, l0, n))| ScenarioNorms {
            scenario,
            mean: NormTriple {
                l2: l2 / n as f64,
                linf: (linf / n as f64).round() as u32,
                l0_pct: l0 / n as f64,
            },
            count: n,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Transferability matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferCell {
    pub object: crate::scene::ObjectId,
    pub attack_method: AttackMethod,
    pub source_detector: String,
    pub target_detector: String,
    pub scenario: Scenario,
    /// None marks a "-" cell: the target detector does not detect the
    /// clean object, so no reduction is defined.
    pub conf_diff_pct: Option<f64>,
    pub clean_conf: f64,
    pub patched_conf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferResult {
    pub cells: Vec<TransferCell>,
    /// Mean confidence difference per scenario, "-" cells excluded.
    pub scenario_averages: BTreeMap<Scenario, f64>,
}

/// Target detector must score the clean scene at least this high for the
/// cell to count as detectable.
pub const TRANSFER_DETECTABLE_MIN: f64 = 0.5;

/// Learns patches against each source detector and evaluates them on every
/// detector, digitally (DL-DA) and through the projection channel (PL-PA).
pub fn run_transfer_matrix(
    objects: &[crate::scene::ObjectId],
    methods: &[AttackMethod],
    detectors: &[AnyDetector],
    base_scene: &SceneConfig,
    attack_cfg: &AttackConfig,
    channel: &ChannelParams,
) -> Result<TransferResult, AnalysisError> {
    if detectors.len() < 2 {
        return Err(AnalysisError::TooFewDetectors);
    }
    let mut jobs = Vec::new();
    for (oi, &object) in objects.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            for (si, source) in detectors.iter().enumerate() {
                jobs.push((oi, object, mi, method, si, source));
            }
        }
    }
    let nested: Vec<Vec<TransferCell>> = jobs
        .par_iter()
        .map(|&(oi, object, mi, method, si, source)| {
            let mut scene = base_scene.clone();
            scene.object_id = object;
            scene.object_size_m = object.default_size_m();
            let mut cfg = attack_cfg.clone();
            cfg.method = method;
            let job_id = ((oi * 16 + mi) * 16 + si) as u64;
            let stream = RngStream::new(cfg.seed, 0x7A_05).derive(job_id);

            let mut cells = Vec::new();
            // DL-DA: learn and evaluate digitally.
            let (_, digital_patch) =
                attack::run_dl_da(&scene, source, &cfg, stream.derive(1))
                    .expect("transfer digital attack failed");
            let clean = crate::scene::render_clean(&scene).expect("render failed");
            let patched = attack::digital_composite(&scene, &digital_patch)
                .expect("composite failed");
            for target in detectors {
                let clean_conf = target.best_class_confidence(&clean, object);
                let patched_conf = target.best_class_confidence(&patched, object);
                cells.push(make_cell(
                    object,
                    method,
                    source.name(),
                    target.name(),
                    Scenario::DlDa,
                    clean_conf,
                    patched_conf,
                ));
            }
            // PL-PA: learn through the projector, evaluate captures.
            let (_, _, physical_patch) =
                attack::run_papla(&scene, source, &cfg, channel, stream.derive(2))
                    .expect("transfer physical attack failed");
            let projected = crate::scene::render_projection(&scene, physical_patch.raster())
                .expect("render failed");
            let mut eval_rng = stream.derive(3);
            for target in detectors {
                let clean_conf = attack::mean_capture_confidence(
                    &clean,
                    target,
                    object,
                    channel,
                    &mut eval_rng,
                    attack::EVAL_CAPTURES,
                );
                let patched_conf = attack::mean_capture_confidence(
                    &projected,
                    target,
                    object,
                    channel,
                    &mut eval_rng,
                    attack::EVAL_CAPTURES,
                );
                cells.push(make_cell(
                    object,
                    method,
                    source.name(),
                    target.name(),
                    Scenario::PlPa,
                    clean_conf,
                    patched_conf,
                ));
            }
            cells
        })
        .collect();
    let cells: Vec<TransferCell> = nested.into_iter().flatten().collect();

    let mut sums: BTreeMap<Scenario, (f64, usize)> = BTreeMap::new();
    for cell in &cells {
        if let Some(diff) = cell.conf_diff_pct {
            let e = sums.entry(cell.scenario).or_insert((0.0, 0));
            e.0 += diff;
            e.1 += 1;
        }
    }
    let scenario_averages = sums
        .into_iter()
        .map(|(s, (sum, n))| (s, sum / n as f64))
        .collect();
    Ok(TransferResult {
        cells,
        scenario_averages,
    })
}

fn make_cell(
    object: crate::scene::ObjectId,
    attack_method: AttackMethod,
    source: &str,
    target: &str,
    scenario: Scenario,
    clean_conf: f64,
    patched_conf: f64,
) -> TransferCell {
    let conf_diff_pct = if clean_conf >= TRANSFER_DETECTABLE_MIN {
        reduction_pct(clean_conf, patched_conf).ok()
    } else {
        None
    };
    TransferCell {
        object,
        attack_method,
        source_detector: source.to_string(),
        target_detector: target.to_string(),
        scenario,
        conf_diff_pct,
        clean_conf,
        patched_conf,
    }
}

// ---------------------------------------------------------------------------
// CSV emitters (RFC 4180: fields here never need quoting)
// ---------------------------------------------------------------------------

pub fn grid_csv(result: &SweepResult) -> String {
    let mut out = String::from(
        "projector_lumens,ambient_lux,distance_m,angle_deg,clean_conf,patched_conf,reduction_pct\n",
    );
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{}\n",
            c.projector_lumens,
            c.ambient_lux,
            c.distance_m,
            c.angle_deg,
            c.record.clean_conf,
            c.record.patched_conf,
            c.record
                .reduction_pct
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    out
}

pub fn box_stats_csv(result: &SweepResult) -> String {
    let mut out = String::from("factor,level,median,q1,q3,count\n");
    for b in &result.box_stats {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{}\n",
            b.factor, b.level, b.median, b.q1, b.q3, b.count
        ));
    }
    out
}

pub fn transfer_csv(result: &TransferResult) -> String {
    let mut out = String::from(
        "object,attack_method,source_detector,target_detector,scenario,clean_conf,patched_conf,conf_diff_pct\n",
    );
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{}\n",
            c.object.name(),
            c.attack_method.name(),
            c.source_detector,
            c.target_detector,
            c.scenario.name(),
            c.clean_conf,
            c.patched_conf,
            c.conf_diff_pct
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    for (scenario, avg) in &result.scenario_averages {
        out.push_str(&format!(
            "average,,,,{},,,{avg:.4}\n",
            scenario.name()
        ));
    }
    out
}

pub fn surface_csv(rows: &[SurfaceRow]) -> String {
    let mut out = String::from("albedo_r,albedo_g,albedo_b,mean_reduction_pct,runs\n");
    for r in rows {
        let runs = r
            .runs
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{:.4},{}\n",
            r.albedo[0], r.albedo[1], r.albedo[2], r.mean_reduction_pct, runs
        ));
    }
    out
}

pub fn norms_csv(rows: &[ScenarioNorms]) -> String {
    let mut out = String::from("scenario,mean_l2,mean_linf,mean_l0_pct,count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{},{:.4},{}\n",
            r.scenario.name(),
            r.mean.l2,
            r.mean.linf,
            r.mean.l0_pct,
            r.count
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_identical_images_zero() {
        let img = Image::splat(4, 4, [0.3, 0.6, 0.9]);
        let t = norms(&img, &img, 1).unwrap();
        assert_eq!(t.l2, 0.0);
        assert_eq!(t.linf, 0);
        assert_eq!(t.l0_pct, 0.0);
    }

    #[test]
    fn norms_hand_case() {
        // one pixel of a 2x2 differs by (3,4,0) levels: l2 = 5, linf = 4,
        // l0 = 25%
        let a = Image::splat(2, 2, [100.0 / 255.0, 100.0 / 255.0, 100.0 / 255.0]);
        let mut b = a.clone();
        b.set(1, 1, [103.0 / 255.0, 104.0 / 255.0, 100.0 / 255.0]);
        let t = norms(&a, &b, 1).unwrap();
        assert!((t.l2 - 5.0).abs() < 1e-9);
        assert_eq!(t.linf, 4);
        assert!((t.l0_pct - 25.0).abs() < 1e-12);
    }

    #[test]
    fn norms_maximal_difference() {
        let a = Image::splat(3, 2, [0.0, 0.0, 0.0]);
        let b = Image::splat(3, 2, [1.0, 1.0, 1.0]);
        let t = norms(&a, &b, 1).unwrap();
        assert!((t.l2 - 255.0 * (3.0 * 6.0f64).sqrt()).abs() < 1e-9);
        assert_eq!(t.linf, 255);
        assert_eq!(t.l0_pct, 100.0);
    }

    #[test]
    fn norms_symmetry() {
        let a = Image::from_fn(4, 4, |x, y| [x as f64 / 3.0, y as f64 / 3.0, 0.5]);
        let b = Image::from_fn(4, 4, |x, y| [y as f64 / 3.0, x as f64 / 3.0, 0.25]);
        assert_eq!(norms(&a, &b, 1).unwrap(), norms(&b, &a, 1).unwrap());
    }

    #[test]
    fn norms_dimension_mismatch() {
        let a = Image::new(2, 2);
        let b = Image::new(3, 2);
        assert!(matches!(
            norms(&a, &b, 1),
            Err(AnalysisError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn reduction_pct_paper_anchors() {
        assert!((reduction_pct(0.96, 0.16).unwrap() - 83.33).abs() < 0.01);
        assert_eq!(reduction_pct(0.95, 0.0).unwrap(), 100.0);
        assert_eq!(reduction_pct(0.5, 0.5).unwrap(), 0.0);
        // negative reductions clamp to zero
        assert_eq!(reduction_pct(0.5, 0.9).unwrap(), 0.0);
        assert!(matches!(
            reduction_pct(0.0, 0.5),
            Err(AnalysisError::CleanZero)
        ));
    }

    #[test]
    fn anova_hand_fixture_f_three() {
        let groups = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 3.0, 4.0],
            vec![3.0, 4.0, 5.0],
        ];
        let res = anova_oneway(&groups).unwrap();
        assert!((res.f_stat - 3.0).abs() < 1e-12, "F = {}", res.f_stat);
        assert_eq!(res.dof, (2, 6));
        // p = 1 - F_cdf(3; 2, 6) = 0.125 exactly for this fixture
        assert!((res.p_value - 0.125).abs() < 1e-9, "p = {}", res.p_value);
    }

    #[test]
    fn anova_identical_groups_degenerate() {
        let groups = vec![vec![2.0, 2.0, 2.0], vec![2.0, 2.0, 2.0]];
        let res = anova_oneway(&groups).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.f_stat, 0.0);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn anova_two_equal_distributions() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let res = anova_oneway(&groups).unwrap();
        assert!(!res.degenerate);
        assert!(res.f_stat.abs() < 1e-12);
        assert!((res.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn anova_shift_and_scale_invariance() {
        let base = vec![
            vec![1.0, 2.5, 3.0, 4.2],
            vec![2.0, 3.1, 4.0],
            vec![0.5, 1.0, 2.2, 2.9, 3.3],
        ];
        let f0 = anova_oneway(&base).unwrap().f_stat;
        let shifted: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|v| v + 17.3).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|v| v * 4.7).collect())
            .collect();
        assert!((anova_oneway(&shifted).unwrap().f_stat - f0).abs() < 1e-9);
        assert!((anova_oneway(&scaled).unwrap().f_stat - f0).abs() < 1e-9);
    }

    #[test]
    fn anova_rejects_insufficient_input() {
        assert!(matches!(
            anova_oneway(&[vec![1.0, 2.0]]),
            Err(AnalysisError::InsufficientGroups)
        ));
        assert!(matches!(
            anova_oneway(&[vec![1.0], vec![2.0, 3.0]]),
            Err(AnalysisError::InsufficientGroups)
        ));
    }

    #[test]
    fn betai_reference_values() {
        // I_x(a,b) closed forms: I_x(1,1) = x; I_x(1,b) = 1-(1-x)^b
        assert!((betai(0.3, 1.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((betai(0.4, 1.0, 3.0) - (1.0 - 0.6f64.powi(3))).abs() < 1e-12);
        assert!((betai(0.7, 2.0, 1.0) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
