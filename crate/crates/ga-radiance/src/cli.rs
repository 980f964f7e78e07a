//! Command-line front end: simulate | train | eval | plot | gradcheck.
//!
//! Exit codes: 0 ok, 2 input problem, 3 numerical failure, 4 checkpoint or
//! config compatibility mismatch. Anything affecting the checkpoint hash
//! lives in the JSON run config; flags only override documented knobs
//! (variant, steps, threads) and the `GA_RADIANCE_SEED` environment
//! variable overrides the config seed (logged when used).

use crate::error::{Error, Result};
use crate::pipeline::experiments::{self, AnyModel};
use crate::pipeline::metrics::{snr_cdf, MetricsReport};
use crate::pipeline::model::{GaiNerf, ModelConfig, Variant};
use crate::pipeline::params;
use crate::pipeline::train::{grad_check, train, TrainConfig};
use crate::render::RenderMode;
use crate::sim::{
    self, generate_dataset, read_dataset, DatasetRecord, GridSpec, LabelMode, SceneEdit,
    SceneGraph, SimCfg, SplitSpec,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "ga-radiance", version, about = "Geometric-algebra radiance fields for wireless channel prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled dataset from a scene file.
    Simulate(SimulateArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint; optionally run ablations or scene-edit
    /// generalization.
    Eval(EvalArgs),
    /// Render CDF curves or RSSI heatmaps as SVG.
    Plot(PlotArgs),
    /// Finite-difference check of the gradient engine on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Grid as NXxNY, e.g. 10x10.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 1.5)]
    pub z: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Rssi)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 52)]
    pub subcarriers: usize,
    /// Shadowing noise sigma in dB (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub shadowing: f64,
    #[arg(long)]
    pub no_reflections: bool,
    /// Train/val/test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Rssi,
    Csi,
    Both,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Override the config's model variant.
    #[arg(long)]
    pub variant: Option<VariantArg>,
    /// Override the config's step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Cap the worker count.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantArg {
    Full,
    NoTokenizer,
    NoAttentionRt,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoTokenizer => Variant::NoTokenizer,
            VariantArg::NoAttentionRt => Variant::NoAttentionRt,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset override (defaults to the config's dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// CDF CSV output (CSI mode).
    #[arg(long)]
    pub cdf: Option<PathBuf>,
    /// Run the ablation protocol (retrains the reduced variants with the
    /// same budget) and append their reports.
    #[arg(long)]
    pub ablation: bool,
    /// JSON file with named scene edits: frozen-weights generalization.
    #[arg(long)]
    pub edits: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Comma-separated CDF CSV files to overlay.
    #[arg(long)]
    pub cdf: Option<String>,
    /// Labels for the CDF curves, comma separated.
    #[arg(long)]
    pub labels: Option<String>,
    /// Dataset (JSONL) for an RSSI heatmap.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Run config
// ---------------------------------------------------------------------------

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required schema marker; must equal [`SCHEMA_VERSION`].
    pub schema_version: u32,
    pub scene: PathBuf,
    pub dataset: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Resolve a path relative to the config file's directory.
    pub fn resolve(&self, config_path: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

fn seed_override(train: &mut TrainConfig) {
    if let Ok(v) = std::env::var("GA_RADIANCE_SEED") {
        if let Ok(seed) = v.parse::<u64>() {
            eprintln!("[ga-radiance] GA_RADIANCE_SEED={seed} overrides config seed {}", train.seed);
            train.seed = seed;
        } else {
            eprintln!("[ga-radiance] ignoring non-numeric GA_RADIANCE_SEED={v}");
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return Err(Error::usage(format!("grid must look like 10x10, got {s}")));
    }
    let nx = parts[0]
        .parse()
        .map_err(|_| Error::usage(format!("bad grid x count {}", parts[0])))?;
    let ny = parts[1]
        .parse()
        .map_err(|_| Error::usage(format!("bad grid y count {}", parts[1])))?;
    Ok((nx, ny))
}

fn parse_split(s: &str) -> Result<SplitSpec> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.parse::<f64>().map_err(|_| Error::usage(format!("bad split {s}"))))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::usage("split needs train,val,test fractions"));
    }
    Ok(SplitSpec {
        train: parts[0],
        val: parts[1],
        test: parts[2],
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if !args.scene.exists() {
        return Err(Error::usage(format!(
            "scene file not found: {}",
            args.scene.display()
        )));
    }
    let scene = SceneGraph::load(&args.scene)?;
    let (nx, ny) = parse_grid(&args.grid)?;
    let grid = GridSpec {
        nx,
        ny,
        z: args.z,
        jitter: args.jitter,
        margin: args.margin,
    };
    let split = parse_split(&args.split)?;
    let mode = match args.mode {
        ModeArg::Rssi => LabelMode::Rssi,
        ModeArg::Csi => LabelMode::Csi,
        ModeArg::Both => LabelMode::Both,
    };
    let cfg = SimCfg {
        p_tx_dbm: 0.0,
        reflections: !args.no_reflections,
        shadowing_sigma_db: args.shadowing,
        seed: args.seed,
    };
    let stats = generate_dataset(
        &scene,
        &grid,
        &split,
        mode,
        &cfg,
        args.seed,
        args.subcarriers,
        &args.out,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    Ok(())
}

fn load_records(path: &Path, split: Option<&str>) -> Result<Vec<DatasetRecord>> {
    let records = read_dataset(path)?;
    Ok(match split {
        Some(s) => records.into_iter().filter(|r| r.split == s).collect(),
        None => records,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = args.variant {
        cfg.model.variant = v.into();
    }
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    if let Some(t) = args.threads {
        cfg.train.threads = t;
    }
    seed_override(&mut cfg.train);
    cfg.model.validate()?;

    let scene = SceneGraph::load(&cfg.resolve(&args.config, &cfg.scene))?;
    let records = load_records(&cfg.resolve(&args.config, &cfg.dataset), None)?;
    let model = GaiNerf::new(cfg.model.clone())?;
    let data = model.prepare(&scene, &records, cfg.train.seed)?;
    let (params, history) = train(&model, &data, &data.train_idx, &data.val_idx, &cfg.train)?;
    params::write_checkpoint(&args.out, &params, cfg.model.hash())?;
    if let Some(h) = &args.history {
        history.write_csv(h)?;
    }

    match cfg.model.mode {
        RenderMode::Rssi => {
            let any = AnyModel::Gai(&model, &params);
            let train_recs: Vec<DatasetRecord> =
                records.iter().filter(|r| r.split == "train").cloned().collect();
            let val_recs: Vec<DatasetRecord> =
                records.iter().filter(|r| r.split == "val").cloned().collect();
            let tr = experiments::eval_rssi(&any, &scene, &train_recs, cfg.train.seed)?;
            println!("train mae: mean {:.3} dB, median {:.3} dB", tr.mean_db, tr.median_db);
            if !val_recs.is_empty() {
                let va = experiments::eval_rssi(&any, &scene, &val_recs, cfg.train.seed)?;
                println!("val mae: mean {:.3} dB, median {:.3} dB", va.mean_db, va.median_db);
            }
        }
        RenderMode::Csi => {
            let last = history.loss.last().copied().unwrap_or(f64::NAN);
            println!("final train loss: {last:.6}");
        }
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NamedEdit {
    label: String,
    #[serde(flatten)]
    edit: SceneEdit,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(t) = args.threads {
        cfg.train.threads = t;
    }
    seed_override(&mut cfg.train);
    let (params, ckpt_hash) = params::read_checkpoint(&args.ckpt)?;
    let expect = cfg.model.hash();
    if ckpt_hash != expect {
        return Err(Error::Incompatible(format!(
            "checkpoint hash {ckpt_hash:016x} does not match config hash {expect:016x}"
        )));
    }
    let scene = SceneGraph::load(&cfg.resolve(&args.config, &cfg.scene))?;
    let dataset_path = match &args.dataset {
        Some(p) => p.clone(),
        None => cfg.resolve(&args.config, &cfg.dataset),
    };
    let records = load_records(&dataset_path, Some(args.split.as_str()))?;
    if records.is_empty() {
        return Err(Error::Degenerate(format!(
            "no records in split {}",
            args.split
        )));
    }
    let model = GaiNerf::new(cfg.model.clone())?;
    let any = AnyModel::Gai(&model, &params);
    let scene_name = cfg.scene.file_stem().map(|s| s.to_string_lossy().into_owned());
    let scene_name = scene_name.unwrap_or_else(|| "scene".into());

    let mut reports: Vec<MetricsReport> = Vec::new();
    match cfg.model.mode {
        RenderMode::Rssi => {
            let mae = experiments::eval_rssi(&any, &scene, &records, cfg.train.seed)?;
            reports.push(MetricsReport {
                variant: cfg.model.variant.name().into(),
                scene: scene_name.clone(),
                freq_hz: scene.frequency_hz,
                mae_mean_db: mae.mean_db,
                mae_median_db: mae.median_db,
                snr_db: None,
                n: mae.n,
            });
        }
        RenderMode::Csi => {
            let snrs = experiments::eval_csi_snrs(&any, &scene, &records, cfg.train.seed)?;
            let cdf = snr_cdf(&snrs);
            let median = cdf[cdf.len() / 2].0;
            reports.push(MetricsReport {
                variant: cfg.model.variant.name().into(),
                scene: scene_name.clone(),
                freq_hz: scene.frequency_hz,
                mae_mean_db: f64::NAN,
                mae_median_db: f64::NAN,
                snr_db: Some(median),
                n: snrs.len(),
            });
            if let Some(cdf_path) = &args.cdf {
                write_cdf_csv(cdf_path, &cdf)?;
            }
        }
    }

    if args.ablation {
        let all_records = load_records(&dataset_path, None)?;
        for variant in [Variant::NoTokenizer, Variant::NoAttentionRt] {
            let report = experiments::run_ablation(
                &cfg.model,
                variant,
                &scene,
                &scene_name,
                &all_records,
                &cfg.train,
            )?;
            reports.push(report);
        }
    }

    if let Some(edits_path) = &args.edits {
        let text = std::fs::read_to_string(edits_path).map_err(|e| Error::io(edits_path, e))?;
        let edits: Vec<NamedEdit> = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", edits_path.display())))?;
        let named: Vec<(String, SceneEdit)> =
            edits.into_iter().map(|e| (e.label, e.edit)).collect();
        let grid = GridSpec {
            nx: 8,
            ny: 8,
            z: 1.5,
            jitter: 0.0,
            margin: 0.4,
        };
        let gen = experiments::run_generalization(
            &any,
            &scene,
            &named,
            &grid,
            &SimCfg::default(),
            cfg.train.seed,
            cfg.model.variant.name(),
        )?;
        reports.extend(gen);
    }

    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    std::fs::write(&args.out, &json).map_err(|e| Error::io(&args.out, e))?;
    println!("{json}");
    Ok(())
}

fn write_cdf_csv(path: &Path, cdf: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("snr_db,cumulative_fraction\n");
    for (v, f) in cdf {
        s.push_str(&format!("{v},{f}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Plotting (pure SVG emission)
// ---------------------------------------------------------------------------

const CURVE_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn svg_cdf(curves: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|(_, c)| c.is_empty()) {
        return Err(Error::usage("cdf plot needs at least one nonempty curve"));
    }
    let (w, h, ml, mb) = (640.0, 420.0, 60.0, 40.0);
    let xmin = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.0))
        .fold(f64::INFINITY, f64::min);
    let xmax = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (xmax - xmin).max(1e-9);
    let sx = |x: f64| ml + (x - xmin) / span * (w - ml - 20.0);
    let sy = |y: f64| (h - mb) - y * (h - mb - 20.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - 20.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">snr_db</text>\n",
        w / 2.0 - 20.0,
        h - 8.0
    ));
    svg.push_str("<text x=\"12\" y=\"220\" font-size=\"12\" transform=\"rotate(-90 12 220)\">cumulative fraction</text>\n");
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[i % CURVE_COLORS.len()];
        let pts: Vec<String> = curve
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            ml + 10.0,
            30.0 + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn svg_heatmap(records: &[DatasetRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::usage("heatmap needs at least one record"));
    }
    let vals: Vec<f64> = records
        .iter()
        .map(|r| r.rssi_db.ok_or_else(|| Error::usage("heatmap needs rssi_db labels")))
        .collect::<Result<_>>()?;
    let (mut xmin, mut xmax, mut ymin, mut ymax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in records {
        xmin = xmin.min(r.rx[0]);
        xmax = xmax.max(r.rx[0]);
        ymin = ymin.min(r.rx[1]);
        ymax = ymax.max(r.rx[1]);
    }
    let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vspan = (vmax - vmin).max(1e-9);
    let (w, h, m) = (560.0, 460.0, 40.0);
    let sx = |x: f64| m + (x - xmin) / (xmax - xmin).max(1e-9) * (w - 2.0 * m);
    let sy = |y: f64| (h - m) - (y - ymin) / (ymax - ymin).max(1e-9) * (h - 2.0 * m);
    // cell size from the sample count, assuming a roughly square grid
    let n = records.len() as f64;
    let cell = ((w - 2.0 * m) / n.sqrt()).max(4.0) * 0.55;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    for (r, v) in records.iter().zip(&vals) {
        let t = (v - vmin) / vspan;
        // blue (cold / weak) to red (hot / strong)
        let red = (255.0 * t).round() as u8;
        let blue = (255.0 * (1.0 - t)).round() as u8;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({red},40,{blue})\"><title>{:.2} dBm</title></rect>\n",
            sx(r.rx[0]) - cell / 2.0,
            sy(r.rx[1]) - cell / 2.0,
            v
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{m}\" y=\"20\" font-size=\"12\">rssi {vmin:.1} dBm (blue) to {vmax:.1} dBm (red)</text>\n"
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let svg = match (&args.cdf, &args.heatmap) {
        (Some(cdf_list), None) => {
            let files: Vec<&str> = cdf_list.split(',').collect();
            let labels: Vec<String> = match &args.labels {
                Some(l) => l.split(',').map(|s| s.to_string()).collect(),
                None => files
                    .iter()
                    .map(|f| {
                        Path::new(f)
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| (*f).to_string())
                    })
                    .collect(),
            };
            if labels.len() != files.len() {
                return Err(Error::usage("label count must match file count"));
            }
            let mut curves = Vec::new();
            for (f, label) in files.iter().zip(labels) {
                let path = Path::new(f);
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut curve = Vec::new();
                for line in text.lines().skip(1) {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let mut it = line.split(',');
                    let x: f64 = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::usage(format!("bad cdf line: {line}")))?;
                    let y: f64 = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::usage(format!("bad cdf line: {line}")))?;
                    curve.push((x, y));
                }
                curves.push((label, curve));
            }
            svg_cdf(&curves)?
        }
        (None, Some(ds)) => {
            let records = read_dataset(ds)?;
            svg_heatmap(&records)?
        }
        _ => {
            return Err(Error::usage(
                "plot needs exactly one of --cdf <files> or --heatmap <dataset>",
            ))
        }
    };
    std::fs::write(&args.out, svg).map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let cfg = ModelConfig {
        channels: 2,
        depth: 1,
        f_pos: 2,
        f_dir: 1,
        rays: 2,
        samples_per_ray: 3,
        atten_layers: 2,
        atten_width: 6,
        d_f: 4,
        film_hidden: 4,
        signal_layers: 1,
        signal_width: 5,
        d_s: 8,
        ..ModelConfig::default()
    };
    let model = GaiNerf::new(cfg)?;
    let scene = experiments::room1(sim::FREQ_2G4);
    let (records, _) = sim::grid_records(
        &scene,
        &GridSpec {
            nx: 3,
            ny: 2,
            z: 1.5,
            jitter: 0.0,
            margin: 0.8,
        },
        &SplitSpec::default(),
        LabelMode::Rssi,
        &SimCfg::default(),
        args.seed,
        52,
    )?;
    let data = model.prepare(&scene, &records, args.seed)?;
    let params = model.init_params(args.seed);
    let report = grad_check(&model, &params, &data, &[0, 1], args.tolerance)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialize")
    );
    if !report.passed {
        return Err(Error::Numerical(format!(
            "gradient check failed: max rel err {} in {}",
            report.max_rel_err, report.worst_segment
        )));
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_split_parsing() {
        assert_eq!(parse_grid("10x10").unwrap(), (10, 10));
        assert!(parse_grid("10").is_err());
        let s = parse_split("0.8,0.1,0.1").unwrap();
        assert_eq!(s.train, 0.8);
        assert!(parse_split("0.8,0.2").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys_and_bad_version() {
        let good = r#"{"schema_version":1,"scene":"s.json","dataset":"d.jsonl"}"#;
        let cfg: RunConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.schema_version, 1);
        let unknown = r#"{"schema_version":1,"scene":"s.json","dataset":"d.jsonl","mystery":2}"#;
        assert!(serde_json::from_str::<RunConfig>(unknown).is_err());
        let missing = r#"{"scene":"s.json","dataset":"d.jsonl"}"#;
        assert!(serde_json::from_str::<RunConfig>(missing).is_err());
    }

    #[test]
    fn cdf_svg_deterministic_and_labelled() {
        let curves = vec![
            ("full".to_string(), vec![(1.0, 0.25), (2.0, 0.5), (3.0, 1.0)]),
            ("ablation".to_string(), vec![(0.5, 0.5), (2.5, 1.0)]),
        ];
        let a = svg_cdf(&curves).unwrap();
        let b = svg_cdf(&curves).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("full") && a.contains("ablation"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(svg_cdf(&[]).is_err());
    }

    #[test]
    fn heatmap_requires_labels() {
        let rec = DatasetRecord {
            rx: [1.0, 2.0, 1.5],
            tx: [0.0, 0.0, 1.5],
            freq_hz: 2.4e9,
            rssi_db: None,
            csi: None,
            split: "test".into(),
        };
        assert!(svg_heatmap(&[rec]).is_err());
    }

    #[test]
    fn named_edit_round_trip() {
        let edits = vec![NamedEdit {
            label: "removal".into(),
            edit: SceneEdit::Remove { name: "laptop".into() },
        }];
        let text = serde_json::to_string(&edits).unwrap();
        let back: Vec<NamedEdit> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].label, "removal");
        assert!(text.contains("\"label\":\"removal\""));
    }
}
