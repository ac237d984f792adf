//! The `tactsim` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (divergence, I/O), 2 usage error,
//! 3 missing input file, 4 invalid input or violated invariant. Failures print
//! one line `error[<category>]: <message>` to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{efficiency_sweep, perturbed_sensor};
use crate::config::{load_config, Config};
use crate::dataset::{self, config_hash, dump_images, generate, split, Backend, Dataset, Sweep};
use crate::error::{Error, Result};
use crate::flow::{translation_benchmark, FlowParams};
use crate::metrics::{self, evaluate, EvalReport};
use crate::nn::{load_model, save_model, train_standardized, Activation, MlpModel, TrainOptions};
use crate::plot::{heatmaps, line_chart, Series};

const DUMP_LIMIT: usize = 8;
const HEATMAP_SAMPLES: usize = 3;

#[derive(Debug, Parser)]
#[command(name = "tactsim", version, about = "Synthetic vision-based tactile sensor pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (`key = value` lines); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the marker seed for `generate` and the training seed elsewhere.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an indentation sweep and write a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "oracle", value_parser = parse_backend)]
        backend: Backend,
        /// Simulate the perturbed gel (stiffer, camera moved back) with this marker seed.
        #[arg(long, value_name = "MARKER_SEED")]
        perturbed: Option<u64>,
        /// Write the rest frame and the first pressed frames as PGM images.
        #[arg(long, value_name = "DIR")]
        dump_images: Option<PathBuf>,
    },
    /// Train a network on the training part of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which part of the seeded split to score.
        #[arg(long, value_enum, default_value = "all")]
        part: Part,
        /// Report CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample CSV with true and predicted force grids.
        #[arg(long, value_name = "CSV")]
        per_sample: Option<PathBuf>,
    },
    /// Calibration sample-efficiency sweep on data from another gel.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Calibration set sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        sweep: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optical-flow accuracy on seeded rigid translations of a rendered frame.
    FlowCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 8.0)]
        max_shift_px: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse::<Backend>().map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct Seeds {
    marker: u64,
    training: u64,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: &'static str,
    tool_version: &'static str,
    config_hash: String,
    config: String,
    seeds: Seeds,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_time_s: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// `path` with `suffix` appended to its file name.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Run {
    subcommand: &'static str,
    cfg: Config,
    start: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(subcommand: &'static str, cfg: Config) -> Self {
        Self {
            subcommand,
            cfg,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes `<primary>.manifest.json`.
    fn finish(self, primary: &Path) -> Result<()> {
        let path = suffixed(primary, ".manifest.json");
        let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect();
        let manifest = RunManifest {
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: hex(&config_hash(&self.cfg)),
            config: self.cfg.to_text(),
            seeds: Seeds {
                marker: self.cfg.sensor.rng_seed,
                training: self.cfg.pipeline.seed,
            },
            inputs: show(&self.inputs),
            outputs: show(&self.outputs),
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
        write_text(&path, &(text + "\n"))
    }
}

fn resolve_config(common: &Common) -> Result<Config> {
    let cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => Config::default(),
    };
    cfg.with_env_overrides()
}

fn training_seed(common: &Common, cfg: &mut Config) {
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
}

/// Loads a dataset; with an explicit config its `m` and `n` must match.
fn load_data(common: &Common, cfg: &Config, path: &Path) -> Result<Dataset> {
    if common.config.is_some() {
        dataset::load_expecting(path, cfg.pipeline.m, cfg.pipeline.n)
    } else {
        dataset::load(path)
    }
}

fn cmd_generate(
    common: &Common,
    out: &Path,
    backend: Backend,
    perturbed: Option<u64>,
    dump: Option<&Path>,
) -> Result<String> {
    let mut cfg = resolve_config(common)?;
    if let Some(seed) = common.seed {
        cfg.sensor.rng_seed = seed;
    }
    if let Some(marker_seed) = perturbed {
        cfg.sensor = perturbed_sensor(&cfg.sensor, marker_seed);
    }
    let mut run = Run::new("generate", cfg.clone());
    let sweep = Sweep::from_config(&cfg)?;
    let ds = generate(&cfg, &sweep, backend)?;
    dataset::save(&ds, out, cfg.sensor.surface_side_mm)?;
    run.outputs.push(out.to_path_buf());
    run.outputs.push(dataset::sidecar_path(out));
    if let Some(dir) = dump {
        dump_images(&cfg, &sweep, dir, DUMP_LIMIT)?;
        run.outputs.push(dir.to_path_buf());
    }
    run.finish(out)?;
    Ok(format!(
        "wrote {} samples (m = {}, n = {}, backend {backend}) to {}\n",
        ds.len(),
        ds.m,
        ds.n,
        out.display()
    ))
}

fn loss_curves(model: &MlpModel<f32>) -> (String, String) {
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &model.log {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
    }
    let series = [
        Series {
            name: "train",
            points: model.log.iter().map(|e| (e.epoch as f64, e.train_loss)).collect(),
        },
        Series {
            name: "validation",
            points: model.log.iter().map(|e| (e.epoch as f64, e.val_loss)).collect(),
        },
    ];
    (csv, line_chart("Training loss", "epoch", "aRMSE (N)", &series, None))
}

fn cmd_train(common: &Common, data: &Path, out: &Path) -> Result<String> {
    let mut cfg = resolve_config(common)?;
    training_seed(common, &mut cfg);
    let mut run = Run::new("train", cfg.clone());
    let ds = load_data(common, &cfg, data)?;
    run.inputs.push(data.to_path_buf());
    let p = &cfg.pipeline;
    let parts = split(&ds, p.test_fraction, p.validation_fraction, p.seed)?;
    let mut model = MlpModel::<f32>::new(2 * ds.m, &p.hidden_sizes, ds.n, Activation::Logistic, p.seed)?;
    let report = train_standardized(
        &mut model,
        (&parts.train.inputs(), &parts.train.targets()),
        (&parts.val.inputs(), &parts.val.targets()),
        &TrainOptions::from_pipeline(p),
    )?;
    save_model(&model, out)?;
    let (csv, svg) = loss_curves(&model);
    let (csv_path, svg_path) = (suffixed(out, ".loss.csv"), suffixed(out, ".loss.svg"));
    write_text(&csv_path, &csv)?;
    write_text(&svg_path, &svg)?;
    run.outputs.extend([out.to_path_buf(), csv_path, svg_path]);
    run.finish(out)?;
    Ok(format!(
        "trained on {} samples: {} epochs, best validation aRMSE {:.6} N at epoch {}{}\nwrote {}\n",
        parts.train.len(),
        report.epochs_run,
        report.best_val_loss,
        report.best_epoch,
        if report.stopped_early { " (early stop)" } else { "" },
        out.display()
    ))
}

fn per_sample_csv(ds: &Dataset, pred: &ndarray::Array2<f64>, side_mm: f64) -> Result<String> {
    let truth = ds.targets().mapv(f64::from);
    let mut out = String::from("sample,d_loc_mm,mc_error_n,true_bin,pred_bin");
    for prefix in ["true", "pred"] {
        for i in 0..ds.n {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    out.push('\n');
    for (l, (t, p)) in truth.rows().into_iter().zip(pred.rows()).enumerate() {
        let _ = write!(
            out,
            "{l},{},{},{},{}",
            metrics::localisation_error(t, p, side_mm)?,
            metrics::max_component_error(t, p),
            metrics::argmax_abs(t),
            metrics::argmax_abs(p)
        );
        for v in t.iter().chain(p.iter()) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn force_grids(ds: &Dataset, pred: &ndarray::Array2<f64>) -> String {
    let g = (ds.n as f64).sqrt().round() as usize;
    let mut panels = Vec::new();
    for (l, s) in ds.samples.iter().enumerate().take(HEATMAP_SAMPLES) {
        panels.push((format!("#{l} true"), s.label.iter().map(|&v| f64::from(v)).collect()));
        panels.push((format!("#{l} predicted"), pred.row(l).to_vec()));
    }
    heatmaps(&panels, g)
}

fn cmd_eval(
    common: &Common,
    model_path: &Path,
    data: &Path,
    part: Part,
    out: Option<&Path>,
    per_sample: Option<&Path>,
) -> Result<String> {
    let mut cfg = resolve_config(common)?;
    training_seed(common, &mut cfg);
    let mut run = Run::new("eval", cfg.clone());
    let model = load_model::<f32>(model_path)?;
    let ds = load_data(common, &cfg, data)?;
    run.inputs.extend([model_path.to_path_buf(), data.to_path_buf()]);
    let p = &cfg.pipeline;
    let ds = match part {
        Part::All => ds,
        other => {
            let parts = split(&ds, p.test_fraction, p.validation_fraction, p.seed)?;
            match other {
                Part::Train => parts.train,
                Part::Val => parts.val,
                _ => parts.test,
            }
        }
    };
    let side = cfg.sensor.surface_side_mm;
    let (report, pred) = evaluate(&model, &ds, side)?;
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    if let Some(path) = per_sample {
        write_text(path, &per_sample_csv(&ds, &pred, side)?)?;
        let svg = suffixed(path, ".svg");
        write_text(&svg, &force_grids(&ds, &pred))?;
        run.outputs.extend([path.to_path_buf(), svg]);
    }
    if let Some(path) = out {
        write_text(path, &csv)?;
        run.outputs.push(path.to_path_buf());
    }
    if let Some(primary) = out.or(per_sample) {
        run.finish(primary)?;
    }
    Ok(format!("{csv}\n{}", report.to_text()))
}

fn cmd_calibrate(common: &Common, model_path: &Path, data: &Path, sizes: &[usize], out: &Path) -> Result<String> {
    let mut cfg = resolve_config(common)?;
    training_seed(common, &mut cfg);
    let mut run = Run::new("calibrate", cfg.clone());
    let model = load_model::<f32>(model_path)?;
    if model.layers[0].offset.is_some() {
        return Err(Error::invariant("the model already carries a calibration layer"));
    }
    let ds = load_data(common, &cfg, data)?;
    model.expect_shape(ds.m, ds.n)?;
    run.inputs.extend([model_path.to_path_buf(), data.to_path_buf()]);
    let side = cfg.sensor.surface_side_mm;
    let result = efficiency_sweep(
        &model,
        &ds,
        sizes,
        &cfg.calibration,
        cfg.pipeline.validation_fraction,
        side,
        cfg.pipeline.seed,
    )?;
    let csv = result.to_csv();
    write_text(out, &csv)?;
    let metric_series = |name, f: fn(&EvalReport) -> f64| Series {
        name,
        points: result.rows.iter().map(|r| (r.size as f64, f(&r.report))).collect(),
    };
    let svg = line_chart(
        "Calibration sample efficiency",
        "calibration samples",
        "aRMSE (N)",
        &[metric_series("calibrated", |r| r.armse_n)],
        Some(("uncalibrated", result.baseline.armse_n)),
    );
    let svg_path = suffixed(out, ".svg");
    write_text(&svg_path, &svg)?;
    run.outputs.extend([out.to_path_buf(), svg_path]);
    run.finish(out)?;
    Ok(format!(
        "uncalibrated on {} test samples: {}\n{csv}",
        result.test_size,
        result.baseline.csv_row()
    ))
}

fn cmd_flow_check(common: &Common, cases: usize, max_shift: f64, out: Option<&Path>) -> Result<String> {
    let mut cfg = resolve_config(common)?;
    training_seed(common, &mut cfg);
    let mut run = Run::new("flow-check", cfg.clone());
    if cases == 0 {
        return Err(Error::Empty("flow-check needs at least one case"));
    }
    let params = FlowParams::from_pipeline(&cfg.pipeline);
    let results = translation_benchmark(&cfg.sensor, &params, cases, max_shift, cfg.pipeline.seed)?;
    let mut csv = String::from("case,du_px,dv_px,epe_px\n");
    for (k, c) in results.iter().enumerate() {
        let _ = writeln!(csv, "{k},{},{},{}", c.du, c.dv, c.epe);
    }
    let mut epe: Vec<f64> = results.iter().map(|c| c.epe).collect();
    epe.sort_by(f64::total_cmp);
    let mean = epe.iter().sum::<f64>() / epe.len() as f64;
    let summary = format!(
        "mean_epe_px,median_epe_px,max_epe_px\n{mean},{},{}\n",
        epe[epe.len() / 2],
        epe[epe.len() - 1]
    );
    match out {
        Some(path) => {
            write_text(path, &csv)?;
            run.outputs.push(path.to_path_buf());
            run.finish(path)?;
            Ok(summary)
        }
        None => Ok(format!("{csv}\n{summary}")),
    }
}

fn category(err: &Error) -> (&'static str, i32) {
    match err {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("missing-file", 3),
        Error::Io { .. } => ("io", 1),
        Error::Divergence { .. } => ("divergence", 1),
        Error::ConfigParse { .. } => ("config", 4),
        Error::Format { .. } => ("format", 4),
        Error::Shape { .. } => ("shape", 4),
        Error::Invariant(_) | Error::Empty(_) | Error::NoTrackablePattern => ("invariant", 4),
    }
}

fn dispatch(command: &Command) -> Result<String> {
    match command {
        Command::Generate {
            common,
            out,
            backend,
            perturbed,
            dump_images,
        } => cmd_generate(common, out, *backend, *perturbed, dump_images.as_deref()),
        Command::Train { common, data, out } => cmd_train(common, data, out),
        Command::Eval {
            common,
            model,
            data,
            part,
            out,
            per_sample,
        } => cmd_eval(common, model, data, *part, out.as_deref(), per_sample.as_deref()),
        Command::Calibrate {
            common,
            model,
            data,
            sweep,
            out,
        } => cmd_calibrate(common, model, data, sweep, out),
        Command::FlowCheck {
            common,
            cases,
            max_shift_px,
            out,
        } => cmd_flow_check(common, *cases, *max_shift_px, out.as_deref()),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(err) => {
            let (cat, code) = category(&err);
            eprintln!("error[{cat}]: {err}");
            code
        }
    }
}
