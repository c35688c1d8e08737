//! Deterministic renderer for the simulated physical world: clean object,
//! printed-sticker application, and projector-illuminated application.
//!
//! The optical model is a minimal Lambertian one: the camera sees
//! `albedo * (ambient_gain + projector_gain * patch)` inside the projected
//! footprint, clamped to `[0,1]`. Dark surfaces therefore attenuate
//! projections and stronger projectors brighten them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, clamp01, Homography, Image, ImagingError, Mask};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("patch raster side {side} exceeds canvas extent {canvas}")]
    PatchTooLarge { side: usize, canvas: usize },
    #[error("patch raster must be square and at least 2x2, got {0}x{1}")]
    BadPatchRaster(usize, usize),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectId {
    Car,
    StopSign,
    PottedPlant,
    Cup,
    Bottle,
}

impl ObjectId {
    pub fn all() -> [ObjectId; 5] {
        [
            ObjectId::Car,
            ObjectId::StopSign,
            ObjectId::PottedPlant,
            ObjectId::Cup,
            ObjectId::Bottle,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectId::Car => "car",
            ObjectId::StopSign => "stop_sign",
            ObjectId::PottedPlant => "potted_plant",
            ObjectId::Cup => "cup",
            ObjectId::Bottle => "bottle",
        }
    }

    /// Nominal physical size used to scale the rendered footprint.
    pub fn default_size_m(&self) -> f64 {
        match self {
            ObjectId::Car => 0.33,
            ObjectId::StopSign => 0.30,
            ObjectId::PottedPlant => 0.28,
            ObjectId::Cup => 0.25,
            ObjectId::Bottle => 0.22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundId {
    DarkLab,
    GrayWall,
    Outdoor,
}

impl BackgroundId {
    fn color(&self) -> [f64; 3] {
        match self {
            BackgroundId::DarkLab => [0.05, 0.05, 0.06],
            BackgroundId::GrayWall => [0.16, 0.16, 0.17],
            BackgroundId::Outdoor => [0.10, 0.13, 0.18],
        }
    }
}

/// The physical world for one render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub object_id: ObjectId,
    pub object_size_m: f64,
    pub surface_albedo: [f64; 3],
    pub ambient_lux: f64,
    pub projector_lumens: f64,
    pub distance_m: f64,
    pub angle_deg: f64,
    pub background_id: BackgroundId,
    pub canvas: (usize, usize),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            object_id: ObjectId::Car,
            object_size_m: ObjectId::Car.default_size_m(),
            surface_albedo: [1.0, 1.0, 1.0],
            ambient_lux: 100.0,
            projector_lumens: 3000.0,
            distance_m: 1.0,
            angle_deg: 0.0,
            background_id: BackgroundId::DarkLab,
            canvas: (96, 96),
        }
    }
}

impl SceneConfig {
    pub fn for_object(object_id: ObjectId) -> Self {
        SceneConfig {
            object_id,
            object_size_m: object_id.default_size_m(),
            ..SceneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ambient_lux <= 0.0 {
            return Err("ambient_lux must be positive".into());
        }
        if self.projector_lumens <= 0.0 {
            return Err("projector_lumens must be positive".into());
        }
        if self.distance_m <= 0.0 {
            return Err("distance_m must be positive".into());
        }
        if self
            .surface_albedo
            .iter()
            .any(|a| !(0.0..=1.0).contains(a))
        {
            return Err("surface_albedo components must lie in [0,1]".into());
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err("canvas must be non-empty".into());
        }
        Ok(())
    }
}

/// Normalized rectangle in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Procedural object: texture pattern, silhouette, and the normalized
/// rectangle where patches attach. The texture is exactly 1.0 on a margin
/// around the anchor so patch blending starts from a flat surface.
#[derive(Debug, Clone)]
pub struct ObjectTemplate {
    pub object_id: ObjectId,
    pub texture: Image,
    pub silhouette: Mask,
    pub patch_anchor: RectF,
}

/// Texture tile resolution for every procedural template.
pub const TEX: usize = 64;

/// Margin (in normalized units) around the anchor kept flat at 1.0.
const ANCHOR_MARGIN: f64 = 3.0 / TEX as f64;

fn object_shape(id: ObjectId, u: f64, v: f64) -> bool {
    let du = u - 0.5;
    let dv = v - 0.5;
    match id {
        ObjectId::Car => {
            let body = (0.45..=0.80).contains(&v) && (0.05..=0.95).contains(&u);
            let cabin = (0.20..=0.45).contains(&v) && (0.28..=0.72).contains(&u);
            let wheel1 = ((u - 0.25).powi(2) + (v - 0.80).powi(2)).sqrt() <= 0.13;
            let wheel2 = ((u - 0.75).powi(2) + (v - 0.80).powi(2)).sqrt() <= 0.13;
            body || cabin || wheel1 || wheel2
        }
        ObjectId::StopSign => du.abs().max(dv.abs()) <= 0.45 && du.abs() + dv.abs() <= 0.63,
        ObjectId::PottedPlant => {
            let pot = (0.55..=0.90).contains(&v)
                && du.abs() <= 0.30 - 0.10 * (v - 0.55) / 0.35;
            let foliage = ((u - 0.5).powi(2) + (v - 0.32).powi(2)).sqrt() <= 0.30;
            pot || foliage
        }
        ObjectId::Cup => {
            let body = du.abs() <= 0.30 && (0.22..=0.86).contains(&v);
            let r = ((u - 0.82).powi(2) + (v - 0.54).powi(2)).sqrt();
            let handle = (0.07..=0.15).contains(&r);
            body || handle
        }
        ObjectId::Bottle => {
            let body = du.abs() <= 0.20 && (0.35..=0.92).contains(&v);
            let neck = du.abs() <= 0.08 && (0.08..=0.35).contains(&v);
            body || neck
        }
    }
}

fn object_pattern(id: ObjectId, u: f64, v: f64) -> f64 {
    use std::f64::consts::PI;
    let base = match id {
        ObjectId::Car => (10.0 * PI * u).cos(),
        ObjectId::StopSign => {
            let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            (16.0 * PI * r).cos()
        }
        ObjectId::PottedPlant => (12.0 * PI * v).cos(),
        ObjectId::Cup => (10.0 * PI * (u + v)).cos(),
        ObjectId::Bottle => (14.0 * PI * (u - v)).cos(),
    };
    0.62 + 0.38 * base
}

fn anchor_rect(id: ObjectId) -> RectF {
    match id {
        ObjectId::Car => RectF {
            x: 0.12,
            y: 0.48,
            w: 0.76,
            h: 0.28,
        },
        ObjectId::StopSign => RectF {
            x: 0.22,
            y: 0.22,
            w: 0.56,
            h: 0.56,
        },
        ObjectId::PottedPlant => RectF {
            x: 0.36,
            y: 0.20,
            w: 0.28,
            h: 0.65,
        },
        ObjectId::Cup => RectF {
            x: 0.24,
            y: 0.26,
            w: 0.52,
            h: 0.54,
        },
        ObjectId::Bottle => RectF {
            x: 0.32,
            y: 0.38,
            w: 0.36,
            h: 0.50,
        },
    }
}

pub fn template(id: ObjectId) -> ObjectTemplate {
    let anchor = anchor_rect(id);
    let flat_x0 = anchor.x - ANCHOR_MARGIN;
    let flat_x1 = anchor.x + anchor.w + ANCHOR_MARGIN;
    let flat_y0 = anchor.y - ANCHOR_MARGIN;
    let flat_y1 = anchor.y + anchor.h + ANCHOR_MARGIN;
    let mut sil = Mask::zeros(TEX, TEX);
    let texture = Image::from_fn(TEX, TEX, |x, y| {
        let u = x as f64 / (TEX - 1) as f64;
        let v = y as f64 / (TEX - 1) as f64;
        let inside = object_shape(id, u, v);
        sil.set(x, y, if inside { 1.0 } else { 0.0 });
        if !inside {
            return [0.0, 0.0, 0.0];
        }
        let flat = u >= flat_x0 && u <= flat_x1 && v >= flat_y0 && v <= flat_y1;
        let t = if flat { 1.0 } else { object_pattern(id, u, v) };
        [t, t, t]
    });
    ObjectTemplate {
        object_id: id,
        texture,
        silhouette: sil,
        patch_anchor: anchor,
    }
}

/// Grayscale tile of the object as the detector expects to see it: pattern
/// inside the silhouette, zero outside.
pub fn object_tile(id: ObjectId) -> Image {
    let t = template(id);
    t.texture
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoRig {
    pub baseline_m: f64,
    pub offset_left_deg: f64,
    pub offset_right_deg: f64,
}

impl Default for StereoRig {
    fn default() -> Self {
        StereoRig {
            baseline_m: 0.12,
            offset_left_deg: 0.0,
            offset_right_deg: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Application {
    Clean,
    Sticker,
    Projection,
}

/// Ambient gain: linear in lux, saturating at the 400 lux normalizer.
pub fn ambient_gain(lux: f64) -> f64 {
    (lux / 400.0).clamp(0.0, 1.0)
}

/// Headroom above the clamp so stronger projectors keep helping. At desk
/// range a projector's illuminance on the surface dwarfs indoor ambient:
/// 6000 ANSI lumens spread over roughly 1.25 m² at ~1 m is ~4800 lux,
/// twelve times the 400-lux ambient normalizer.
pub const PROJECTOR_GAIN_MAX: f64 = 12.0;

/// Projector gain: linear in ANSI lumens against a 6000 lumen ceiling.
pub fn projector_gain(lumens: f64) -> f64 {
    lumens / 6000.0 * PROJECTOR_GAIN_MAX
}

/// Homography mapping texture pixel coordinates onto the canvas:
/// normalize, foreshorten horizontally by the viewing angle, scale by the
/// distance-dependent footprint, and center.
pub fn object_homography(cfg: &SceneConfig) -> Result<Homography, ImagingError> {
    let (cw, ch) = cfg.canvas;
    let s_px = ch as f64 * cfg.object_size_m / cfg.distance_m;
    let norm = Homography::scale(1.0 / (TEX - 1) as f64, 1.0 / (TEX - 1) as f64)?;
    let k = 0.7 * cfg.angle_deg.to_radians().sin();
    let persp = Homography::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, k, 0.0, 1.0])?;
    let center = Homography::translation(0.5, 0.5)
        .compose(&persp)?
        .compose(&Homography::translation(-0.5, -0.5))?;
    let scale = Homography::scale(s_px, s_px)?;
    let place = Homography::translation(
        (cw as f64 - s_px) / 2.0,
        (ch as f64 - s_px) / 2.0,
    );
    place
        .compose(&scale)?
        .compose(&center)?
        .compose(&norm)
}

/// Homography mapping patch raster pixels into the canvas through the
/// object's anchor rectangle.
pub fn patch_homography(
    cfg: &SceneConfig,
    patch_side: usize,
) -> Result<Homography, SceneError> {
    if patch_side < 2 {
        return Err(SceneError::BadPatchRaster(patch_side, patch_side));
    }
    let anchor = anchor_rect(cfg.object_id);
    let tex = (TEX - 1) as f64;
    let to_anchor = Homography::translation(anchor.x * tex, anchor.y * tex).compose(
        &Homography::scale(
            anchor.w * tex / (patch_side - 1) as f64,
            anchor.h * tex / (patch_side - 1) as f64,
        )?,
    )?;
    Ok(object_homography(cfg)?.compose(&to_anchor)?)
}

fn check_patch(cfg: &SceneConfig, patch: &Image) -> Result<(), SceneError> {
    if patch.width() != patch.height() || patch.width() < 2 {
        return Err(SceneError::BadPatchRaster(patch.width(), patch.height()));
    }
    let canvas = cfg.canvas.0.min(cfg.canvas.1);
    if patch.width() > canvas {
        return Err(SceneError::PatchTooLarge {
            side: patch.width(),
            canvas,
        });
    }
    Ok(())
}

/// Renders the clean scene: background and lit object, no noise.
pub fn render_clean(cfg: &SceneConfig) -> Result<Image, SceneError> {
    let a = ambient_gain(cfg.ambient_lux);
    let tpl = template(cfg.object_id);
    let h = object_homography(cfg)?;
    let (cw, ch) = cfg.canvas;
    let (warped_tex, coverage) = imaging::warp(&tpl.texture, &h, cw, ch)?;
    let mask_w = imaging::warp_mask(&tpl.silhouette, &h, cw, ch)?;
    let bg = cfg.background_id.color();
    let mut out = Image::splat(cw, ch, [bg[0] * a, bg[1] * a, bg[2] * a]);
    for y in 0..ch {
        for x in 0..cw {
            let m = mask_w.get(x, y) * coverage.get(x, y);
            if m <= 0.0 {
                continue;
            }
            let t = warped_tex.get(x, y);
            let obj = [
                clamp01(cfg.surface_albedo[0] * t[0] * a),
                clamp01(cfg.surface_albedo[1] * t[1] * a),
                clamp01(cfg.surface_albedo[2] * t[2] * a),
            ];
            if m >= 1.0 {
                out.set(x, y, obj);
            } else {
                let b = out.get(x, y);
                out.set(
                    x,
                    y,
                    [
                        b[0] * (1.0 - m) + obj[0] * m,
                        b[1] * (1.0 - m) + obj[1] * m,
                        b[2] * (1.0 - m) + obj[2] * m,
                    ],
                );
            }
        }
    }
    Ok(out)
}

/// Warped patch raster and its canvas footprint.
pub fn warped_patch(
    cfg: &SceneConfig,
    patch: &Image,
) -> Result<(Image, Mask), SceneError> {
    check_patch(cfg, patch)?;
    let h = patch_homography(cfg, patch.width())?;
    Ok(imaging::warp(patch, &h, cfg.canvas.0, cfg.canvas.1)?)
}

/// Printed sticker replaces the surface inside the anchor: the camera sees
/// `ambient_gain * sticker_color` there.
pub fn render_sticker(cfg: &SceneConfig, printed: &Image) -> Result<Image, SceneError> {
    let clean = render_clean(cfg)?;
    let a = ambient_gain(cfg.ambient_lux);
    let (wp, footprint) = warped_patch(cfg, printed)?;
    let (cw, ch) = cfg.canvas;
    let mut region = Image::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            if footprint.get(x, y) > 0.0 {
                let c = wp.get(x, y);
                region.set(x, y, [clamp01(c[0] * a), clamp01(c[1] * a), clamp01(c[2] * a)]);
            }
        }
    }
    Ok(imaging::compose(&clean, &region, &footprint, (0, 0))?)
}

/// Projector-illuminated patch: inside the footprint the camera sees
/// `albedo * (ambient_gain + projector_gain * patch)`, clamped.
pub fn render_projection(cfg: &SceneConfig, patch: &Image) -> Result<Image, SceneError> {
    let clean = render_clean(cfg)?;
    render_projection_over(&clean, cfg, patch)
}

/// [`render_projection`] with the clean base render precomputed; the
/// optimization loops re-render the projection hundreds of times against
/// the same scene.
pub fn render_projection_over(
    clean: &Image,
    cfg: &SceneConfig,
    patch: &Image,
) -> Result<Image, SceneError> {
    let a = ambient_gain(cfg.ambient_lux);
    let g = projector_gain(cfg.projector_lumens);
    let (wp, footprint) = warped_patch(cfg, patch)?;
    let (cw, ch) = cfg.canvas;
    let mut region = Image::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            if footprint.get(x, y) > 0.0 {
                let p = wp.get(x, y);
                region.set(
                    x,
                    y,
                    [
                        clamp01(cfg.surface_albedo[0] * (a + g * p[0])),
                        clamp01(cfg.surface_albedo[1] * (a + g * p[1])),
                        clamp01(cfg.surface_albedo[2] * (a + g * p[2])),
                    ],
                );
            }
        }
    }
    Ok(imaging::compose(clean, &region, &footprint, (0, 0))?)
}

pub fn render_application(
    cfg: &SceneConfig,
    application: Application,
    patch: Option<&Image>,
) -> Result<Image, SceneError> {
    match application {
        Application::Clean => render_clean(cfg),
        Application::Sticker => {
            render_sticker(cfg, patch.expect("sticker application requires a patch"))
        }
        Application::Projection => {
            render_projection(cfg, patch.expect("projection application requires a patch"))
        }
    }
}

/// Two renders whose viewing angles differ by the rig's per-lens offsets.
/// With offsets `(0, d)` the left image equals the monocular render.
pub fn render_stereo(
    cfg: &SceneConfig,
    rig: &StereoRig,
    application: Application,
    patch: Option<&Image>,
) -> Result<(Image, Image), SceneError> {
    let mut left_cfg = cfg.clone();
    left_cfg.angle_deg += rig.offset_left_deg;
    let mut right_cfg = cfg.clone();
    right_cfg.angle_deg += rig.offset_right_deg;
    Ok((
        render_application(&left_cfg, application, patch)?,
        render_application(&right_cfg, application, patch)?,
    ))
}

/// Warped silhouette footprint of the object on the canvas.
pub fn object_footprint(cfg: &SceneConfig) -> Result<Mask, SceneError> {
    let tpl = template(cfg.object_id);
    let h = object_homography(cfg)?;
    Ok(imaging::warp_mask(&tpl.silhouette, &h, cfg.canvas.0, cfg.canvas.1)?)
}
