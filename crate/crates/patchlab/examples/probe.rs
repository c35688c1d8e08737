//! Scratch diagnostics for calibrating defaults. Not part of the test
//! suite; run with `cargo run --example probe --release`.

use patchlab::attack::{self, AttackConfig};
use patchlab::channel::ChannelParams;
use patchlab::detector::{AnyDetector, TemplateDetectorModel};
use patchlab::rng::RngStream;
use patchlab::scene::{self, ObjectId, SceneConfig};

fn main() {
    let det = AnyDetector::Template(TemplateDetectorModel::new(&ObjectId::all()));

    println!("== clean confidences by object and distance ==");
    for object in ObjectId::all() {
        let mut line = format!("{:<13}", object.name());
        for dist in [0.5, 1.0, 1.5] {
            let mut cfg = SceneConfig::for_object(object);
            cfg.distance_m = dist;
            let img = scene::render_clean(&cfg).unwrap();
            line.push_str(&format!(
                "  {:.3}@{dist}",
                det.best_class_confidence(&img, object)
            ));
        }
        println!("{line}");
    }

    println!("== angle effect (car) ==");
    for angle in [-20.0, 0.0, 20.0] {
        let mut cfg = SceneConfig::default();
        cfg.angle_deg = angle;
        let img = scene::render_clean(&cfg).unwrap();
        println!(
            "angle {angle:>5}: {:.3}",
            det.best_class_confidence(&img, ObjectId::Car)
        );
    }

    println!("== best detection geometry (car) ==");
    {
        let cfg = SceneConfig::default();
        let model = TemplateDetectorModel::new(&[ObjectId::Car]);
        let clean = scene::render_clean(&cfg).unwrap();
        let dets = patchlab::detector::detect_template(&clean, &model).unwrap();
        let best = dets
            .iter()
            .max_by(|a, b| a.confidence.partial_cmp(&b.confidence).unwrap())
            .unwrap();
        println!("clean: conf {:.3} bbox {:?}", best.confidence, best.bbox);
        let mut rng = RngStream::new(77, 0);
        let patch = attack::init_random_patch(24, &mut rng).unwrap();
        let comp = attack::digital_composite(&cfg, &patch).unwrap();
        let dets = patchlab::detector::detect_template(&comp, &model).unwrap();
        let best = dets
            .iter()
            .max_by(|a, b| a.confidence.partial_cmp(&b.confidence).unwrap())
            .unwrap();
        println!("rand patch: conf {:.3} bbox {:?}", best.confidence, best.bbox);
        let (_, fp) = scene::warped_patch(&cfg, patch.raster()).unwrap();
        let obj = scene::object_footprint(&cfg).unwrap();
        println!(
            "patch footprint px {} / object px {}",
            fp.count_covered(),
            obj.count_covered()
        );
    }

    println!("== handcrafted patch floors (car) ==");
    {
        let cfg = SceneConfig::default();
        let model = TemplateDetectorModel::new(&[ObjectId::Car]);
        let side = 16usize;
        let mk = |f: &dyn Fn(usize, usize) -> f64| {
            patchlab::imaging::Image::from_fn(side, side, |x, y| {
                let v = f(x, y);
                [v, v, v]
            })
        };
        let candidates: Vec<(&str, patchlab::imaging::Image)> = vec![
            ("zeros", mk(&|_, _| 0.0)),
            ("ones", mk(&|_, _| 1.0)),
            ("checker1", mk(&|x, y| ((x + y) % 2) as f64)),
            ("checker2", mk(&|x, y| ((x / 2 + y / 2) % 2) as f64)),
            ("vstripe2", mk(&|x, _| ((x / 2) % 2) as f64)),
            ("hstripe2", mk(&|_, y| ((y / 2) % 2) as f64)),
            ("vstripe4", mk(&|x, _| ((x / 4) % 2) as f64)),
        ];
        for (name, raster) in candidates {
            let proj = scene::render_projection(&cfg, &raster).unwrap();
            let pconf = patchlab::detector::detect_template(&proj, &model)
                .unwrap()
                .iter()
                .map(|d| d.confidence)
                .fold(0.0, f64::max);
            let p = attack::Patch::new(raster).unwrap();
            let comp = attack::digital_composite(&cfg, &p).unwrap();
            let dconf = patchlab::detector::detect_template(&comp, &model)
                .unwrap()
                .iter()
                .map(|d| d.confidence)
                .fold(0.0, f64::max);
            println!("{name:<9} projected {pconf:.3}  digital {dconf:.3}");
        }
    }

    println!("== scenario confidences (car, reduced budget) ==");
    let cfg = AttackConfig::default();
    let scene_cfg = SceneConfig::default();
    let channel = ChannelParams::default();
    let stream = RngStream::new(1234, 1);
    let t0 = std::time::Instant::now();
    let (trace, record, patch) =
        attack::run_dl_pa(&scene_cfg, &det, &cfg, &channel, stream.clone()).unwrap();
    println!(
        "dl_da final conf {:.3} (start {:.3}), dl_pa clean {:.3} patched {:.3}, norms l2={:.1} linf={} l0={:.1} [{}s]",
        trace.confidences.last().unwrap(),
        trace.confidences[0],
        record.clean_conf,
        record.patched_conf,
        record.norms.l2,
        record.norms.linf,
        record.norms.l0_pct,
        t0.elapsed().as_secs_f32()
    );
    let composite = attack::digital_composite(&scene_cfg, &patch).unwrap();
    let dlda_norms = patchlab::analysis::norms(
        &scene::render_clean(&scene_cfg).unwrap(),
        &composite,
        1,
    )
    .unwrap();
    println!(
        "dl_da norms l2={:.1} linf={} l0={:.1}",
        dlda_norms.l2, dlda_norms.linf, dlda_norms.l0_pct
    );

    let pcfg = AttackConfig::default();
    let t0 = std::time::Instant::now();
    let (ptrace, precord, _) =
        attack::run_papla(&scene_cfg, &det, &pcfg, &channel, stream.derive(9)).unwrap();
    let marks: Vec<String> = ptrace
        .confidences
        .iter()
        .step_by(50)
        .map(|c| format!("{c:.3}"))
        .collect();
    println!("pl_pa trace every 50: {}", marks.join(" "));
    println!(
        "pl_pa trace start {:.3} end {:.3}; clean {:.3} patched {:.3}; red {:?}; norms l2={:.1} linf={} l0={:.1} [{}s]",
        ptrace.confidences[0],
        ptrace.confidences.last().unwrap(),
        precord.clean_conf,
        precord.patched_conf,
        precord.reduction_pct,
        precord.norms.l2,
        precord.norms.linf,
        precord.norms.l0_pct,
        t0.elapsed().as_secs_f32()
    );

    let pcfg = AttackConfig {
        max_iters: 150,
        ..pcfg
    };
    println!("== factor levels (papla quick, car) ==");
    for (name, field) in [("lumens", 0usize), ("lux", 1), ("dist", 2)] {
        let levels: [f64; 3] = match field {
            0 => [1800.0, 3000.0, 6000.0],
            1 => [100.0, 200.0, 400.0],
            _ => [0.5, 1.0, 1.5],
        };
        for lv in levels {
            let mut sc = SceneConfig::default();
            match field {
                0 => sc.projector_lumens = lv,
                1 => sc.ambient_lux = lv,
                _ => sc.distance_m = lv,
            }
            let (_, r, _) = attack::run_papla(
                &sc,
                &det,
                &pcfg,
                &channel,
                stream.derive(100 + field as u64 * 10 + lv as u64),
            )
            .unwrap();
            println!(
                "{name} {lv:>6}: clean {:.3} patched {:.3} red {:?}",
                r.clean_conf, r.patched_conf, r.reduction_pct
            );
        }
    }

    println!("== albedo (papla quick, car) ==");
    for a in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let mut sc = SceneConfig::default();
        sc.surface_albedo = [a, a, a];
        let (_, r, _) = attack::run_papla(
            &sc,
            &det,
            &pcfg,
            &channel,
            stream.derive(200 + (a * 10.0) as u64),
        )
        .unwrap();
        println!(
            "albedo {a:.1}: clean {:.3} patched {:.3} red {:?}",
            r.clean_conf, r.patched_conf, r.reduction_pct
        );
    }
}
