//! Command-line entry point: reproducible experiment runs with file
//! outputs. Exit codes: 0 success, 2 usage/config error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use patchlab::analysis;
use patchlab::attack::{self, AttackMethod, Scenario};
use patchlab::config::{load_config, RunConfig};
use patchlab::countermeasure;
use patchlab::detector::{
    train_linear_bank, AnyDetector, TemplateDetectorModel, SCALES_DEFAULT,
};
use patchlab::imaging;
use patchlab::rng::RngStream;
use patchlab::scene;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "patchlab",
    version,
    about = "Desk-scale simulator for projector-based adversarial patch attacks"
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Root seed override (wins over the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel experiment grids.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one attack scenario (dl_da, dl_pa, or pl_pa) on the configured scene.
    Attack {
        /// Scenario name: dl_da | dl_pa | pl_pa
        scenario: String,
    },
    /// Run the full environmental-factor grid with per-factor ANOVA.
    Sweep,
    /// Cross-detector transferability matrix.
    Transfer,
    /// Scenario suite plus per-scenario pixel-norm averages.
    Norms,
    /// Surface-color study.
    Surface,
    /// Projection-detection countermeasure.
    Countermeasure {
        #[command(subcommand)]
        verb: CountermeasureVerb,
    },
}

#[derive(Subcommand)]
enum CountermeasureVerb {
    /// Generate the dataset, train the classifier, save the model.
    Train,
    /// Evaluate a saved model on a freshly generated held-out dataset.
    Eval {
        /// Model file (defaults to <out>/countermeasure.bin).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score one PPM frame and print "pass" or "flag".
    Gate {
        /// Model file (defaults to <out>/countermeasure.bin).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Frame to score (PPM).
        #[arg(long)]
        frame: PathBuf,
        /// Decision threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    seed: u64,
    version: &'a str,
    outputs: Vec<String>,
    wall_time_ms: u128,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Config(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_CONFIG)
            }
            CliError::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// JSON with sorted object keys, for byte-stable reruns.
fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(runtime)?;
    let mut s = serde_json::to_string_pretty(&v).map_err(runtime)?;
    s.push('\n');
    Ok(s)
}

fn write_output(
    dir: &Path,
    name: &str,
    contents: &str,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)
        .map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))?;
    outputs.push(name.to_string());
    Ok(())
}

fn build_detector(cfg: &RunConfig, kind: &str) -> Result<AnyDetector, CliError> {
    match kind {
        "template" => Ok(AnyDetector::Template(TemplateDetectorModel::with_params(
            &cfg.detector.classes,
            &SCALES_DEFAULT,
            cfg.detector.logistic_a,
            cfg.detector.logistic_b,
        ))),
        "linear" => {
            let rng = RngStream::new(cfg.attack.seed, 0x11EA);
            let bank = train_linear_bank(
                &cfg.detector.classes,
                &cfg.scene,
                cfg.detector.linear_epochs,
                cfg.detector.linear_lr,
                &rng,
            )
            .map_err(runtime)?;
            Ok(AnyDetector::Linear(bank))
        }
        other => Err(CliError::Config(format!("unknown detector kind '{other}'"))),
    }
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
        cfg.apply_root_seed();
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_attack(cfg: &RunConfig, scenario: &str, out: &Path) -> Result<Vec<String>, CliError> {
    let scenario = match scenario {
        "dl_da" => Scenario::DlDa,
        "dl_pa" => Scenario::DlPa,
        "pl_pa" => Scenario::PlPa,
        other => {
            return Err(CliError::Config(format!(
                "unknown scenario '{other}' (expected dl_da, dl_pa, or pl_pa)"
            )))
        }
    };
    let detector = build_detector(cfg, &cfg.detector.kind)?;
    let stream = RngStream::new(cfg.attack.seed, 0xA77A);
    let mut outputs = Vec::new();

    let (trace, record, patch) = match scenario {
        Scenario::DlDa => {
            let (trace, patch) =
                attack::run_dl_da(&cfg.scene, &detector, &cfg.attack, stream)
                    .map_err(runtime)?;
            let clean = scene::render_clean(&cfg.scene).map_err(runtime)?;
            let composite = attack::digital_composite(&cfg.scene, &patch).map_err(runtime)?;
            let class = cfg.scene.object_id;
            let clean_conf = detector.best_class_confidence(&clean, class);
            let patched_conf = detector.best_class_confidence(&composite, class);
            let record = attack::ExperimentRecord {
                object: class,
                scenario,
                camera: attack::CameraMode::Monocular,
                seed: cfg.attack.seed,
                clean_conf,
                patched_conf,
                reduction_pct: analysis::reduction_pct(clean_conf, patched_conf).ok(),
                norms: analysis::norms(&clean, &composite, 1).map_err(runtime)?,
            };
            (trace, record, patch)
        }
        Scenario::DlPa => {
            let (trace, record, patch) =
                attack::run_dl_pa(&cfg.scene, &detector, &cfg.attack, &cfg.channel, stream)
                    .map_err(runtime)?;
            (trace, record, patch)
        }
        Scenario::PlPa => {
            let (trace, record, patch) =
                attack::run_papla(&cfg.scene, &detector, &cfg.attack, &cfg.channel, stream)
                    .map_err(runtime)?;
            (trace, record, patch)
        }
        Scenario::NonAdversarial => unreachable!(),
    };

    write_output(out, "trace.json", &to_sorted_json(&trace)?, &mut outputs)?;
    write_output(out, "record.json", &to_sorted_json(&record)?, &mut outputs)?;
    imaging::write_ppm(patch.raster(), &out.join("patch.ppm")).map_err(runtime)?;
    outputs.push("patch.ppm".to_string());
    Ok(outputs)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let detector = build_detector(cfg, &cfg.detector.kind)?;
    let result = analysis::run_factor_sweep(
        &cfg.scene,
        &cfg.sweep,
        &detector,
        &cfg.attack,
        &cfg.channel,
    );
    let mut outputs = Vec::new();
    write_output(out, "grid.csv", &analysis::grid_csv(&result), &mut outputs)?;
    write_output(
        out,
        "box_stats.csv",
        &analysis::box_stats_csv(&result),
        &mut outputs,
    )?;
    write_output(out, "anova.json", &to_sorted_json(&result.anova)?, &mut outputs)?;
    Ok(outputs)
}

fn cmd_transfer(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    if cfg.transfer.detectors.len() < 2 {
        return Err(CliError::Config(
            "transfer requires at least two detectors".into(),
        ));
    }
    let detectors: Vec<AnyDetector> = cfg
        .transfer
        .detectors
        .iter()
        .map(|k| build_detector(cfg, k))
        .collect::<Result<_, _>>()?;
    let methods: Vec<AttackMethod> = cfg
        .transfer
        .methods
        .iter()
        .map(|m| match m.as_str() {
            "dpatch_like" => Ok(AttackMethod::DpatchLike),
            "nap_like" => Ok(AttackMethod::NapLike),
            other => Err(CliError::Config(format!("unknown attack method '{other}'"))),
        })
        .collect::<Result<_, _>>()?;
    let result = analysis::run_transfer_matrix(
        &cfg.transfer.objects,
        &methods,
        &detectors,
        &cfg.scene,
        &cfg.attack,
        &cfg.channel,
    )
    .map_err(runtime)?;
    let mut outputs = Vec::new();
    write_output(
        out,
        "transfer.csv",
        &analysis::transfer_csv(&result),
        &mut outputs,
    )?;
    write_output(
        out,
        "transfer_summary.json",
        &to_sorted_json(&result.scenario_averages)?,
        &mut outputs,
    )?;
    Ok(outputs)
}

fn cmd_norms(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let detector = build_detector(cfg, &cfg.detector.kind)?;
    let stream = RngStream::new(cfg.attack.seed, 0x5017E);
    let records = attack::run_scenario_suite(
        &cfg.scene,
        &cfg.rig,
        &detector,
        &cfg.attack,
        &cfg.channel,
        stream,
    )
    .map_err(runtime)?;
    let rows = analysis::run_norms_comparison(&records);
    let mut outputs = Vec::new();
    write_output(out, "norms.csv", &analysis::norms_csv(&rows), &mut outputs)?;
    write_output(out, "records.json", &to_sorted_json(&records)?, &mut outputs)?;
    Ok(outputs)
}

fn cmd_surface(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let detector = build_detector(cfg, &cfg.detector.kind)?;
    let rows = analysis::run_surface_study(
        &cfg.scene,
        &cfg.surface.albedos,
        cfg.surface.repeats,
        &detector,
        &cfg.attack,
        &cfg.channel,
    );
    let mut outputs = Vec::new();
    write_output(out, "surface.csv", &analysis::surface_csv(&rows), &mut outputs)?;
    Ok(outputs)
}

fn cm_dataset(
    cfg: &RunConfig,
    stream_id: u64,
) -> Result<Vec<countermeasure::LabeledFrame>, CliError> {
    let mut rng = RngStream::new(cfg.countermeasure.train.seed, stream_id);
    countermeasure::generate_dataset(
        &cfg.scene,
        cfg.countermeasure.clean_count,
        cfg.countermeasure.projected_count,
        &cfg.channel,
        &mut rng,
    )
    .map_err(runtime)
}

const CM_TRAIN_STREAM: u64 = 0xDA7A_1;
const CM_EVAL_STREAM: u64 = 0xDA7A_2;

fn cmd_countermeasure(
    cfg: &RunConfig,
    verb: &CountermeasureVerb,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    let mut outputs = Vec::new();
    match verb {
        CountermeasureVerb::Train => {
            let mut frames = cm_dataset(cfg, CM_TRAIN_STREAM)?;
            if cfg.countermeasure.augment_copies > 0 {
                let mut rng = RngStream::new(cfg.countermeasure.train.seed, 0xA46);
                frames = countermeasure::augment(
                    &frames,
                    cfg.countermeasure.augment_copies,
                    &cfg.countermeasure.augment,
                    &mut rng,
                );
            }
            let model = countermeasure::train_classifier(&frames, &cfg.countermeasure.train)
                .map_err(runtime)?;
            countermeasure::save_classifier(&model, &out.join("countermeasure.bin"))
                .map_err(runtime)?;
            outputs.push("countermeasure.bin".to_string());
            write_output(
                out,
                "training.json",
                &to_sorted_json(&serde_json::json!({
                    "epochs_run": model.train_loss.len(),
                    "train_loss": model.train_loss,
                    "val_loss": model.val_loss,
                }))?,
                &mut outputs,
            )?;
        }
        CountermeasureVerb::Eval { model } => {
            let path = model
                .clone()
                .unwrap_or_else(|| out.join("countermeasure.bin"));
            let model = countermeasure::load_classifier(&path).map_err(runtime)?;
            let frames = cm_dataset(cfg, CM_EVAL_STREAM)?;
            let eval = countermeasure::evaluate(&frames, &model).map_err(runtime)?;
            write_output(out, "eval.json", &to_sorted_json(&eval)?, &mut outputs)?;
            println!("auc {:.4} accuracy {:.4}", eval.auc, eval.accuracy);
        }
        CountermeasureVerb::Gate {
            model,
            frame,
            threshold,
        } => {
            let path = model
                .clone()
                .unwrap_or_else(|| out.join("countermeasure.bin"));
            let model = countermeasure::load_classifier(&path).map_err(runtime)?;
            let img = imaging::read_ppm(frame).map_err(runtime)?;
            let threshold = threshold.unwrap_or(cfg.countermeasure.gate_threshold);
            let flagged = countermeasure::gate(&img, &model, threshold).map_err(runtime)?;
            println!("{}", if flagged { "flag" } else { "pass" });
        }
    }
    Ok(outputs)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        // a second initialization in the same process is harmless; ignore it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let cfg = load_run_config(cli)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Runtime(format!("creating output dir: {e}")))?;

    let started = Instant::now();
    let (name, outputs) = match &cli.command {
        Command::Attack { scenario } => (
            "attack",
            cmd_attack(&cfg, scenario, &cli.out)?,
        ),
        Command::Sweep => ("sweep", cmd_sweep(&cfg, &cli.out)?),
        Command::Transfer => ("transfer", cmd_transfer(&cfg, &cli.out)?),
        Command::Norms => ("norms", cmd_norms(&cfg, &cli.out)?),
        Command::Surface => ("surface", cmd_surface(&cfg, &cli.out)?),
        Command::Countermeasure { verb } => {
            ("countermeasure", cmd_countermeasure(&cfg, verb, &cli.out)?)
        }
    };

    let manifest = RunManifest {
        command: name,
        config: &cfg,
        seed: cfg.seed.unwrap_or(cfg.attack.seed),
        version: patchlab::VERSION,
        outputs,
        wall_time_ms: started.elapsed().as_millis(),
    };
    std::fs::write(cli.out.join("manifest.json"), to_sorted_json(&manifest)?)
        .map_err(|e| CliError::Runtime(format!("writing manifest: {e}")))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
