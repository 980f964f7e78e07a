// scratch: (a)/(b) sweep over encoder sizes
use ga_radiance::pipeline::experiments::*;
use ga_radiance::pipeline::model::{ModelConfig, Variant};
use ga_radiance::pipeline::train::{LrSchedule, TrainConfig};
use ga_radiance::sim::{grid_records, GridSpec, LabelMode, SimCfg, SplitSpec};

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: usize) -> usize { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let model_cfg = ModelConfig {
        channels: envu("CH", 2),
        depth: envu("DEPTH", 1),
        f_pos: envu("FPOS", 3),
        f_dir: envu("FDIR", 3),
        rays: envu("RAYS", 12),
        samples_per_ray: envu("SAMP", 8),
        atten_layers: 8,
        atten_width: envu("AW", 32),
        d_f: envu("DF", 32),
        film_hidden: envu("FH", 32),
        signal_layers: 4,
        signal_width: envu("SW", 32),
        d_s: envu("DS", 18),
        stratified: false,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        steps: envu("STEPS", 500),
        batch_size: envu("BATCH", 16),
        learning_rate: envf("LR", 1.2e-3),
        seed: envu("SEED", 17) as u64,
        lr_schedule: LrSchedule::Cosine,
        val_selection: envu("VALSEL", 1) == 1,
        ..TrainConfig::default()
    };
    let sim = SimCfg { shadowing_sigma_db: envf("SHADOW", 0.5), seed: 99, ..SimCfg::default() };
    let grid = GridSpec { nx: 20, ny: 20, z: 1.5, jitter: 0.06, margin: 0.45 };
    let with_rt = envu("NORT", 0) == 0;
    let (mut a_n, mut b_n) = (0, 0);
    for (name, scene) in [
        ("room1@2.4", room1(2.4e9)), ("room1@5.0", room1(5.0e9)),
        ("room2@2.4", room2(2.4e9)), ("room2@5.0", room2(5.0e9)),
    ] {
        let (records, _) = grid_records(&scene, &grid, &SplitSpec::default(), LabelMode::Rssi, &sim, 41, 52).unwrap();
        let full = train_gai(&model_cfg, Variant::Full, &scene, &records, &train_cfg).unwrap();
        let no_tok = train_gai(&model_cfg, Variant::NoTokenizer, &scene, &records, &train_cfg).unwrap();
        let no_rt_mae = if with_rt {
            train_gai(&model_cfg, Variant::NoAttentionRt, &scene, &records, &train_cfg).unwrap().test_mae.mean_db
        } else { f64::INFINITY };
        let mlp = train_mlp(&scene, &records, &train_cfg).unwrap();
        let a = full.test_mae.mean_db < mlp.test_mae.mean_db;
        let b = full.test_mae.mean_db <= no_tok.test_mae.mean_db && full.test_mae.mean_db <= no_rt_mae;
        a_n += a as usize; b_n += b as usize;
        println!("{name}: full {:.3} mlp {:.3} no_tok {:.3} no_rt {:.3} a={a} b={b}",
            full.test_mae.mean_db, mlp.test_mae.mean_db, no_tok.test_mae.mean_db, no_rt_mae);
    }
    println!("summary a={a_n}/4 b={b_n}/4");
}
