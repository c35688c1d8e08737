//! The lossy paths between digital and physical domains: sensor capture
//! noise and print color distortion, calibrated so that consecutive
//! captures and printed patches reproduce the measured pixel-difference
//! statistics (L0 of roughly 78% for capture pairs, >= 95% for prints).

use serde::{Deserialize, Serialize};

use crate::analysis::{self, AnalysisError, NormTriple};
use crate::imaging::{clamp01, Image};
use crate::rng::RngStream;

/// Default per-channel sensor noise, in [0,1] units. Calibrated (0.428
/// quantization levels) so the mean 8-bit L0 between consecutive captures
/// of a mid-gray frame lands near 78%.
pub const SENSOR_SIGMA_DEFAULT: f64 = 0.00168;

/// Default print transfer matrix: mild channel cross-talk.
pub const PRINT_MATRIX_DEFAULT: [[f64; 3]; 3] = [
    [0.85, 0.05, 0.05],
    [0.05, 0.85, 0.05],
    [0.05, 0.05, 0.85],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Per-channel Gaussian noise std added at capture, in [0,1] units.
    pub sensor_sigma: f64,
    /// Lower bound on the effective capture noise.
    pub shot_floor: f64,
    pub print_matrix: [[f64; 3]; 3],
    pub print_gamma: f64,
    /// Reflectance of full ink coverage: printed black still reflects this
    /// fraction of incident light, so the print range is [print_black, 1].
    pub print_black: f64,
    pub print_quant_levels: u32,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            sensor_sigma: SENSOR_SIGMA_DEFAULT,
            shot_floor: 0.0,
            print_matrix: PRINT_MATRIX_DEFAULT,
            print_gamma: 2.2,
            print_black: 0.25,
            print_quant_levels: 16,
            seed: 0x5EED,
        }
    }
}

impl ChannelParams {
    /// A channel that changes nothing: no noise, identity print transfer.
    pub fn identity() -> Self {
        ChannelParams {
            sensor_sigma: 0.0,
            shot_floor: 0.0,
            print_matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            print_gamma: 1.0,
            print_black: 0.0,
            print_quant_levels: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sensor_sigma < 0.0 || self.shot_floor < 0.0 {
            return Err("noise parameters must be non-negative".into());
        }
        if self.print_gamma <= 0.0 {
            return Err("print_gamma must be positive".into());
        }
        if !(0.0..1.0).contains(&self.print_black) {
            return Err("print_black must be in [0, 1)".into());
        }
        if self.print_quant_levels < 2 {
            return Err("print_quant_levels must be at least 2".into());
        }
        Ok(())
    }

    fn effective_sigma(&self) -> f64 {
        self.sensor_sigma.max(self.shot_floor)
    }
}

/// One noisy camera frame: per-sample independent Gaussian noise, clamped.
/// With zero noise the input is returned unchanged.
pub fn capture(scene_image: &Image, params: &ChannelParams, rng: &mut RngStream) -> Image {
    let sigma = params.effective_sigma();
    if sigma <= 0.0 {
        return scene_image.clone();
    }
    let data = scene_image
        .data()
        .iter()
        .map(|&v| clamp01(v + sigma * rng.next_gaussian()))
        .collect();
    Image::from_data(scene_image.width(), scene_image.height(), data)
        .expect("clamped noise stays in range")
}

/// Deterministic print distortion: linear color transfer, gamma lift, then
/// quantization to the printer's level grid.
pub fn print_patch(patch: &Image, params: &ChannelParams) -> Image {
    let m = &params.print_matrix;
    let inv_gamma = 1.0 / params.print_gamma;
    let levels = (params.print_quant_levels.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(patch.data().len());
    for px in patch.data().chunks_exact(3) {
        for row in m.iter() {
            let mixed = clamp01(row[0] * px[0] + row[1] * px[1] + row[2] * px[2]);
            let lifted = params.print_black + (1.0 - params.print_black) * mixed.powf(inv_gamma);
            out.push((lifted * levels).round() / levels);
        }
    }
    Image::from_data(patch.width(), patch.height(), out).expect("print output stays in range")
}

/// Convenience bundling of the metric triple on two frames.
pub fn channel_discrepancy_report(a: &Image, b: &Image) -> Result<NormTriple, AnalysisError> {
    analysis::norms(a, b, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_capture_is_identity() {
        let img = Image::splat(8, 8, [0.5, 0.25, 0.75]);
        let mut rng = RngStream::new(1, 0);
        let params = ChannelParams {
            sensor_sigma: 0.0,
            shot_floor: 0.0,
            ..ChannelParams::default()
        };
        assert_eq!(capture(&img, &params, &mut rng), img);
        assert_eq!(rng.counter(), 0);
    }

    #[test]
    fn same_seed_and_counter_same_frame() {
        let img = Image::splat(8, 8, [0.5, 0.5, 0.5]);
        let params = ChannelParams::default();
        let mut r1 = RngStream::new(7, 3);
        let mut r2 = RngStream::new(7, 3);
        assert_eq!(capture(&img, &params, &mut r1), capture(&img, &params, &mut r2));
    }

    #[test]
    fn consecutive_captures_differ() {
        let img = Image::splat(8, 8, [0.5, 0.5, 0.5]);
        let params = ChannelParams::default();
        let mut rng = RngStream::new(7, 3);
        let a = capture(&img, &params, &mut rng);
        let b = capture(&img, &params, &mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn default_noise_hits_consecutive_capture_l0_band() {
        // Targets the measured 78.26% average of pixels differing between
        // frames captured back to back under constant conditions. The test
        // frame sits on the 8-bit grid so quantization is unbiased.
        let g = 128.0 / 255.0;
        let img = Image::splat(64, 64, [g, g, g]);
        let params = ChannelParams::default();
        let mut rng = RngStream::new(11, 0);
        let mut total = 0.0;
        let pairs = 20;
        for _ in 0..pairs {
            let a = capture(&img, &params, &mut rng);
            let b = capture(&img, &params, &mut rng);
            total += channel_discrepancy_report(&a, &b).unwrap().l0_pct;
        }
        let mean = total / pairs as f64;
        assert!((68.0..=88.0).contains(&mean), "mean L0 {mean}");
    }

    #[test]
    fn identity_print_is_noop_at_8bit() {
        let params = ChannelParams::identity();
        // values on the 8-bit grid survive the 256-level quantizer exactly
        let patch = Image::from_fn(8, 8, |x, y| {
            [
                ((x * 37 + y) % 256) as f64 / 255.0,
                ((x + y * 11) % 256) as f64 / 255.0,
                ((x * 5 + y * 3) % 256) as f64 / 255.0,
            ]
        });
        let printed = print_patch(&patch, &params);
        for (a, b) in patch.data().iter().zip(printed.data()) {
            assert!((a - b).abs() < 0.5 / 255.0);
        }
    }

    #[test]
    fn two_level_print_is_binary() {
        let params = ChannelParams {
            print_quant_levels: 2,
            ..ChannelParams::default()
        };
        let patch = Image::from_fn(8, 8, |x, y| {
            [x as f64 / 7.0, y as f64 / 7.0, (x + y) as f64 / 14.0]
        });
        for v in print_patch(&patch, &params).data() {
            assert!(*v == 0.0 || *v == 1.0);
        }
    }

    #[test]
    fn default_print_changes_nearly_every_pixel() {
        // Targets the "almost every pixel differs" print statistic (99.34%).
        let mut rng = RngStream::new(3, 9);
        let patch = Image::from_fn(32, 32, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        });
        let printed = print_patch(&patch, &ChannelParams::default());
        let l0 = channel_discrepancy_report(&patch, &printed).unwrap().l0_pct;
        assert!(l0 >= 95.0, "L0 {l0}");
    }

    #[test]
    fn print_idempotent_when_quantizer_aligned() {
        // With an identity transfer the only action is quantization, and
        // quantization is idempotent, so printing a printed patch changes
        // nothing.
        let params = ChannelParams {
            print_matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            print_gamma: 1.0,
            print_black: 0.0,
            print_quant_levels: 16,
            ..ChannelParams::default()
        };
        let mut rng = RngStream::new(5, 1);
        let patch = Image::from_fn(16, 16, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        });
        let once = print_patch(&patch, &params);
        let twice = print_patch(&once, &params);
        assert_eq!(once, twice);
    }
}
