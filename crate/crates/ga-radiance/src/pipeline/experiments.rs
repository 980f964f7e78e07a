//! Experiment drivers: the synthetic two-room benchmark, ablation runs, and
//! the frozen-weights generalization protocol over scene edits.

use crate::error::{Error, Result};
use crate::pipeline::metrics::{mae_db, snr_db, MaeStats, MetricsReport};
use crate::pipeline::model::{GaiNerf, MlpBaseline, ModelConfig, Variant};
use crate::pipeline::params::ModelParams;
use crate::pipeline::train::{train, TrainConfig, TrainHistory};
use crate::render::{RenderMode, RenderOut};
use crate::sim::{
    grid_records, DatasetRecord, GridSpec, Material, Obstacle, ObstacleKind, SceneEdit,
    SceneGraph, SimCfg, SplitSpec,
};

// ---------------------------------------------------------------------------
// Shipped benchmark protocol
// ---------------------------------------------------------------------------

/// The two-room benchmark protocol as shipped in `configs/benchmark.json`:
/// model and training configuration, simulator settings, sampling grids,
/// and the frequencies of the four scene x frequency cells.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimCfg,
    pub grid: GridSpec,
    pub gen_grid: GridSpec,
    pub frequencies: Vec<f64>,
    pub dataset_seed: u64,
}

impl BenchmarkSpec {
    pub fn load(path: &std::path::Path) -> crate::error::Result<BenchmarkSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: BenchmarkSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if spec.schema_version != 1 {
            return Err(Error::Schema("unsupported benchmark schema".into()));
        }
        spec.model.validate()?;
        spec.train.validate()?;
        Ok(spec)
    }

    /// The four benchmark cells: (label, scene).
    pub fn cells(&self) -> Vec<(String, SceneGraph)> {
        let mut out = Vec::new();
        for room in [1usize, 2] {
            for &f in &self.frequencies {
                let scene = if room == 1 { room1(f) } else { room2(f) };
                out.push((format!("room{room}@{:.1}GHz", f / 1e9), scene));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Benchmark scenes
// ---------------------------------------------------------------------------

/// Room 1: 7 x 5 m with two columns and a laptop-sized box.
pub fn room1(frequency_hz: f64) -> SceneGraph {
    SceneGraph {
        bounds: crate::sim::Aabb {
            min: [0.0, 0.0, 0.0],
            max: [7.0, 5.0, 3.0],
        },
        obstacles: vec![
            Obstacle {
                name: "column_a".into(),
                kind: ObstacleKind::Column {
                    min: [2.0, 1.2, 0.0],
                    max: [2.8, 2.0, 3.0],
                },
                material: Material {
                    penetration_loss_db: 9.0,
                    reflection_coeff: 0.45,
                },
            },
            Obstacle {
                name: "column_b".into(),
                kind: ObstacleKind::Column {
                    min: [4.4, 2.9, 0.0],
                    max: [5.2, 3.7, 3.0],
                },
                material: Material {
                    penetration_loss_db: 9.0,
                    reflection_coeff: 0.45,
                },
            },
            Obstacle {
                name: "laptop".into(),
                kind: ObstacleKind::Column {
                    min: [5.3, 0.9, 0.6],
                    max: [6.0, 1.6, 1.8],
                },
                material: Material {
                    penetration_loss_db: 4.0,
                    reflection_coeff: 0.3,
                },
            },
        ],
        tx: [0.7, 0.7, 1.5],
        frequency_hz,
        wall_material: Material {
            penetration_loss_db: 12.0,
            reflection_coeff: 0.35,
        },
    }
}

/// Room 2: 8 x 6 m with an interior wall stub and three columns.
pub fn room2(frequency_hz: f64) -> SceneGraph {
    SceneGraph {
        bounds: crate::sim::Aabb {
            min: [0.0, 0.0, 0.0],
            max: [8.0, 6.0, 3.0],
        },
        obstacles: vec![
            Obstacle {
                name: "partition".into(),
                kind: ObstacleKind::Wall {
                    a: [4.0, 0.0],
                    b: [4.0, 3.6],
                    z0: 0.0,
                    z1: 3.0,
                },
                material: Material {
                    penetration_loss_db: 7.0,
                    reflection_coeff: 0.4,
                },
            },
            Obstacle {
                name: "column_a".into(),
                kind: ObstacleKind::Column {
                    min: [1.6, 4.0, 0.0],
                    max: [2.4, 4.8, 3.0],
                },
                material: Material {
                    penetration_loss_db: 9.0,
                    reflection_coeff: 0.45,
                },
            },
            Obstacle {
                name: "column_b".into(),
                kind: ObstacleKind::Column {
                    min: [6.0, 1.2, 0.0],
                    max: [6.8, 2.0, 3.0],
                },
                material: Material {
                    penetration_loss_db: 9.0,
                    reflection_coeff: 0.45,
                },
            },
            Obstacle {
                name: "laptop".into(),
                kind: ObstacleKind::Column {
                    min: [2.5, 1.3, 0.6],
                    max: [3.2, 2.0, 1.8],
                },
                material: Material {
                    penetration_loss_db: 4.0,
                    reflection_coeff: 0.3,
                },
            },
        ],
        tx: [0.8, 5.2, 1.5],
        frequency_hz,
        wall_material: Material {
            penetration_loss_db: 12.0,
            reflection_coeff: 0.35,
        },
    }
}

/// The three scene edits mirroring the generalization protocol: add a
/// tablet set, relocate the laptop, remove the laptop.
pub fn generalization_edits(scene: &SceneGraph) -> Vec<(String, SceneEdit)> {
    let c = scene.bounds.center();
    vec![
        (
            "addition".into(),
            SceneEdit::Add {
                obstacle: Obstacle {
                    name: "tablet_set".into(),
                    kind: ObstacleKind::Column {
                        min: [c[0] - 0.5, c[1] - 0.4, 0.6],
                        max: [c[0] + 0.5, c[1] + 0.4, 1.8],
                    },
                    material: Material {
                        penetration_loss_db: 5.0,
                        reflection_coeff: 0.3,
                    },
                },
            },
        ),
        (
            "relocation".into(),
            SceneEdit::Relocate {
                name: "laptop".into(),
                to: [c[0] + 1.2, c[1] + 1.0, 1.2],
            },
        ),
        ("removal".into(), SceneEdit::Remove { name: "laptop".into() }),
    ]
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

/// Either trained model, for shared evaluation plumbing.
pub enum AnyModel<'a> {
    Gai(&'a GaiNerf, &'a ModelParams),
    Mlp(&'a MlpBaseline, &'a ModelParams),
}

impl AnyModel<'_> {
    pub fn predict(
        &self,
        scene: &SceneGraph,
        rx: [f64; 3],
        freq_hz: f64,
        seed: u64,
    ) -> Result<RenderOut> {
        match self {
            AnyModel::Gai(model, params) => model.predict(params, scene, rx, freq_hz, seed),
            AnyModel::Mlp(model, params) => {
                let rec = DatasetRecord {
                    rx,
                    tx: scene.tx,
                    freq_hz,
                    rssi_db: Some(0.0),
                    csi: Some(vec![[1.0, 0.0]; model.subcarriers]),
                    split: "test".into(),
                };
                let data = model.prepare(scene, &[rec])?;
                model.predict(params, &data, 0)
            }
        }
    }

    pub fn mode(&self) -> RenderMode {
        match self {
            AnyModel::Gai(m, _) => m.cfg.mode,
            AnyModel::Mlp(m, _) => m.mode,
        }
    }
}

/// RSSI MAE of a frozen model over labelled records.
pub fn eval_rssi(
    model: &AnyModel,
    scene: &SceneGraph,
    records: &[DatasetRecord],
    seed: u64,
) -> Result<MaeStats> {
    let mut preds = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for r in records {
        let truth = r
            .rssi_db
            .ok_or_else(|| Error::usage("record lacks rssi_db"))?;
        match model.predict(scene, r.rx, r.freq_hz, seed)? {
            RenderOut::Rssi(p) => {
                preds.push(p);
                truths.push(truth);
            }
            RenderOut::Csi(_) => return Err(Error::usage("model is in CSI mode")),
        }
    }
    mae_db(&preds, &truths)
}

/// Per-record SNR of a frozen CSI-mode model, against FIRE-standardized
/// ground truth.
pub fn eval_csi_snrs(
    model: &AnyModel,
    scene: &SceneGraph,
    records: &[DatasetRecord],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut snrs = Vec::with_capacity(records.len());
    for r in records {
        let truth = r
            .csi_c64()
            .ok_or_else(|| Error::usage("record lacks csi"))?;
        let truth = crate::pipeline::fire::fire_standardize(&truth)?;
        match model.predict(scene, r.rx, r.freq_hz, seed)? {
            RenderOut::Csi(pred) => snrs.push(snr_db(&pred, &truth)?),
            RenderOut::Rssi(_) => return Err(Error::usage("model is in RSSI mode")),
        }
    }
    Ok(snrs)
}

fn records_of_split<'a>(records: &'a [DatasetRecord], split: &str) -> Vec<&'a DatasetRecord> {
    records.iter().filter(|r| r.split == split).collect()
}

fn cloned_split(records: &[DatasetRecord], split: &str) -> Vec<DatasetRecord> {
    records_of_split(records, split).into_iter().cloned().collect()
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

pub struct TrainedGai {
    pub model: GaiNerf,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub test_mae: MaeStats,
    pub val_mae: MaeStats,
}

/// Train one GAI-NeRF variant on a labelled dataset and evaluate RSSI MAE
/// on the held-out splits.
pub fn train_gai(
    base_cfg: &ModelConfig,
    variant: Variant,
    scene: &SceneGraph,
    records: &[DatasetRecord],
    train_cfg: &TrainConfig,
) -> Result<TrainedGai> {
    let cfg = ModelConfig {
        variant,
        ..base_cfg.clone()
    };
    let model = GaiNerf::new(cfg)?;
    let data = model.prepare(scene, records, train_cfg.seed)?;
    let (params, history) = train(&model, &data, &data.train_idx, &data.val_idx, train_cfg)?;
    let any = AnyModel::Gai(&model, &params);
    let test_mae = eval_rssi(&any, scene, &cloned_split(records, "test"), train_cfg.seed)?;
    let val_mae = eval_rssi(&any, scene, &cloned_split(records, "val"), train_cfg.seed)?;
    Ok(TrainedGai {
        model,
        params,
        history,
        test_mae,
        val_mae,
    })
}

pub struct TrainedMlp {
    pub model: MlpBaseline,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub test_mae: MaeStats,
}

/// Train the reference MLP baseline with the same harness and budgets.
pub fn train_mlp(
    scene: &SceneGraph,
    records: &[DatasetRecord],
    train_cfg: &TrainConfig,
) -> Result<TrainedMlp> {
    let model = MlpBaseline::reference(RenderMode::Rssi, 52);
    let data = model.prepare(scene, records)?;
    let (params, history) = train(&model, &data, &data.train_idx, &data.val_idx, train_cfg)?;
    let any = AnyModel::Mlp(&model, &params);
    let test_mae = eval_rssi(&any, scene, &cloned_split(records, "test"), train_cfg.seed)?;
    Ok(TrainedMlp {
        model,
        params,
        history,
        test_mae,
    })
}

/// Train and evaluate one ablation variant; identical budgets, fewer parts.
pub fn run_ablation(
    base_cfg: &ModelConfig,
    variant: Variant,
    scene: &SceneGraph,
    scene_name: &str,
    records: &[DatasetRecord],
    train_cfg: &TrainConfig,
) -> Result<MetricsReport> {
    let trained = train_gai(base_cfg, variant, scene, records, train_cfg)?;
    Ok(MetricsReport {
        variant: variant.name().into(),
        scene: scene_name.into(),
        freq_hz: scene.frequency_hz,
        mae_mean_db: trained.test_mae.mean_db,
        mae_median_db: trained.test_mae.median_db,
        snr_db: None,
        n: trained.test_mae.n,
    })
}

/// Frozen-weights generalization: evaluate a trained model on edited
/// scenes with freshly simulated ground truth. Reports MAE per edit.
pub fn run_generalization(
    model: &AnyModel,
    base_scene: &SceneGraph,
    edits: &[(String, SceneEdit)],
    grid: &GridSpec,
    sim_cfg: &SimCfg,
    seed: u64,
    variant_label: &str,
) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for (name, edit) in edits {
        let scene = crate::sim::edit_scene(base_scene, edit)?;
        let (records, _) = grid_records(
            &scene,
            grid,
            &SplitSpec {
                train: 0.0,
                val: 0.0,
                test: 1.0,
            },
            crate::sim::LabelMode::Rssi,
            sim_cfg,
            seed,
            52,
        )?;
        let mae = eval_rssi(model, &scene, &records, seed)?;
        out.push(MetricsReport {
            variant: variant_label.into(),
            scene: name.clone(),
            freq_hz: scene.frequency_hz,
            mae_mean_db: mae.mean_db,
            mae_median_db: mae.median_db,
            snr_db: None,
            n: mae.n,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_scenes_validate() {
        for f in [crate::sim::FREQ_2G4, crate::sim::FREQ_5G] {
            room1(f).validate().unwrap();
            room2(f).validate().unwrap();
        }
    }

    #[test]
    fn edits_apply_to_both_rooms() {
        for scene in [room1(2.4e9), room2(2.4e9)] {
            let edits = generalization_edits(&scene);
            assert_eq!(edits.len(), 3);
            for (name, edit) in &edits {
                let edited = crate::sim::edit_scene(&scene, edit).unwrap();
                match name.as_str() {
                    "addition" => assert_eq!(edited.obstacles.len(), scene.obstacles.len() + 1),
                    "relocation" => assert_eq!(edited.obstacles.len(), scene.obstacles.len()),
                    "removal" => assert_eq!(edited.obstacles.len(), scene.obstacles.len() - 1),
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn edits_change_the_field() {
        // the generalization protocol is only meaningful if edits move the
        // ground truth by a measurable amount somewhere
        let scene = room1(2.4e9);
        let cfg = SimCfg::default();
        for (_, edit) in generalization_edits(&scene) {
            let edited = crate::sim::edit_scene(&scene, &edit).unwrap();
            let mut max_shift = 0.0f64;
            for ix in 0..12 {
                for iy in 0..8 {
                    let rx = [0.5 + ix as f64 * 0.5, 0.5 + iy as f64 * 0.5, 1.2];
                    let a = crate::sim::trace_rssi(&scene, rx, &cfg).unwrap();
                    let b = crate::sim::trace_rssi(&edited, rx, &cfg).unwrap();
                    max_shift = max_shift.max((a - b).abs());
                }
            }
            assert!(max_shift > 0.5, "edit shifts truth by {max_shift} dB");
        }
    }
}
