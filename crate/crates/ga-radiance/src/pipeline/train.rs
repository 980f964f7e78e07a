//! Gradient-based training: Adam over MSE, deterministic batching, and the
//! finite-difference gradient checker that backs the whole engine.
//!
//! Determinism contract: a fixed seed fixes initialisation, batch order,
//! and (because gradient reduction happens in fixed chunk order regardless
//! of worker count) the entire parameter trajectory, byte for byte.

use crate::error::{Error, Result};
use crate::pipeline::model::{GaiData, GaiNerf, MlpBaseline, MlpData};
use crate::pipeline::params::ModelParams;
use crate::rng::Rng64;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Constant learning rate.
    None,
    /// Cosine decay to 10% of the initial rate, which quiets the late
    /// optimisation endpoint.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub threads: usize,
    pub lr_schedule: LrSchedule,
    /// Keep the parameters with the best validation loss (probed every 25
    /// steps) instead of the final step's.
    pub val_selection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 200,
            batch_size: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            threads: 1,
            lr_schedule: LrSchedule::None,
            val_selection: false,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::None => self.learning_rate,
            LrSchedule::Cosine => {
                let t = step as f64 / self.steps.max(1) as f64;
                let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.learning_rate * (0.1 + 0.9 * w)
            }
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::usage("learning rate and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::usage("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Exponential moving average with alpha = 2 / (window + 1).
pub fn ema_smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = match xs.first() {
        Some(&x) => x,
        None => return out,
    };
    for &x in xs {
        acc = alpha * x + (1.0 - alpha) * acc;
        out.push(acc);
    }
    out
}

/// Anything the trainer can optimise: a deterministic parameter layout plus
/// a loss/gradient evaluator over prepared data.
pub trait TrainableModel: Sync {
    type Data: Sync;

    fn init_params(&self, seed: u64) -> ModelParams;

    /// Summed loss over the given indices, optional flat gradient, and the
    /// smallest RePU kink gap observed during the forward pass.
    fn eval_indices(
        &self,
        params: &ModelParams,
        data: &Self::Data,
        idxs: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, f64)>;

    /// dB target used for normalisation statistics, when the model trains
    /// in normalised units.
    fn rssi_target(&self, data: &Self::Data, idx: usize) -> Option<f64>;
}

impl TrainableModel for GaiNerf {
    type Data = GaiData;

    fn init_params(&self, seed: u64) -> ModelParams {
        GaiNerf::init_params(self, seed)
    }

    fn eval_indices(
        &self,
        params: &ModelParams,
        data: &GaiData,
        idxs: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, f64)> {
        GaiNerf::eval_indices(self, params, data, idxs, want_grad)
    }

    fn rssi_target(&self, data: &GaiData, idx: usize) -> Option<f64> {
        data.queries[idx].target_rssi
    }
}

impl TrainableModel for MlpBaseline {
    type Data = MlpData;

    fn init_params(&self, seed: u64) -> ModelParams {
        MlpBaseline::init_params(self, seed)
    }

    fn eval_indices(
        &self,
        params: &ModelParams,
        data: &MlpData,
        idxs: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, f64)> {
        MlpBaseline::eval_indices(self, params, data, idxs, want_grad)
    }

    fn rssi_target(&self, data: &MlpData, idx: usize) -> Option<f64> {
        data.targets_rssi[idx]
    }
}

/// Write the mean/std of the dB targets over `idxs` into the `norm.*`
/// buffer segments, so the model trains and predicts in normalised units.
/// No-op when the model has no dB targets (CSI mode).
pub fn bake_target_stats<M: TrainableModel>(
    model: &M,
    params: &mut ModelParams,
    data: &M::Data,
    idxs: &[usize],
) -> Result<()> {
    let targets: Vec<f64> = idxs
        .iter()
        .filter_map(|&i| model.rssi_target(data, i))
        .collect();
    if !targets.is_empty() && targets.len() == idxs.len() {
        let mu = targets.iter().sum::<f64>() / targets.len() as f64;
        let var =
            targets.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / targets.len() as f64;
        let sigma = var.sqrt().max(1e-6);
        params.slice_mut("norm.target_mean")?[0] = mu;
        params.slice_mut("norm.target_std")?[0] = sigma;
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Queries per reduction chunk; fixed so that gradient summation order is
/// independent of the worker count.
const GRAD_CHUNK: usize = 4;

fn batch_eval<M: TrainableModel>(
    model: &M,
    params: &ModelParams,
    data: &M::Data,
    idxs: &[usize],
    threads: usize,
) -> Result<(f64, Vec<f64>)> {
    let chunks: Vec<&[usize]> = idxs.chunks(GRAD_CHUNK).collect();
    let results: Vec<Result<(f64, Option<Vec<f64>>, f64)>> = if threads <= 1 || chunks.len() == 1 {
        chunks
            .iter()
            .map(|c| model.eval_indices(params, data, c, true))
            .collect()
    } else {
        let n_workers = threads.min(chunks.len());
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<(f64, Option<Vec<f64>>, f64)>>> =
            (0..chunks.len()).map(|_| None).collect();
        let slot_refs: Vec<std::sync::Mutex<&mut Option<_>>> =
            slots.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            for _ in 0..n_workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = model.eval_indices(params, data, chunks[i], true);
                    **slot_refs[i].lock().unwrap() = Some(r);
                });
            }
        });
        drop(slot_refs);
        slots.into_iter().map(|s| s.expect("chunk computed")).collect()
    };

    let inv = 1.0 / idxs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for r in results {
        let (l, g, _) = r?;
        loss += l;
        let g = g.expect("gradient requested");
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    for g in &mut grad {
        *g *= inv;
    }
    Ok((loss * inv, grad))
}

/// Adam over MSE with deterministic seeded batching. RSSI targets are
/// normalised by train-split statistics, which are stored in the
/// gradient-free `norm.*` segments so checkpoints are self-contained.
/// With `val_selection` on (and a nonempty validation split) the returned
/// parameters are the best-validation snapshot.
pub fn train<M: TrainableModel>(
    model: &M,
    data: &M::Data,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Degenerate("no training samples".into()));
    }
    let mut params = model.init_params(cfg.seed);
    bake_target_stats(model, &mut params, data, train_idx)?;

    let select = cfg.val_selection && !val_idx.is_empty();
    let mut best: Option<(f64, ModelParams)> = None;
    let probe_val = |params: &ModelParams, best: &mut Option<(f64, ModelParams)>| -> Result<()> {
        if !select {
            return Ok(());
        }
        let (val_loss, _, _) = model.eval_indices(params, data, val_idx, false)?;
        if best.as_ref().map(|(b, _)| val_loss < *b).unwrap_or(true) {
            *best = Some((val_loss, params.clone()));
        }
        Ok(())
    };

    let mut adam = Adam::new(params.len());
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor >= order.len() {
                order = train_idx.to_vec();
                Rng64::stream(cfg.seed, 0xE70C ^ epoch).shuffle(&mut order);
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (loss, grad) = batch_eval(model, &params, data, &batch, cfg.threads)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at step {step}: loss = {loss}"
            )));
        }
        adam.step(&mut params.data, &grad, cfg, cfg.lr_at(step));
        history.loss.push(loss);
        if (step + 1) % 25 == 0 || step + 1 == cfg.steps {
            probe_val(&params, &mut best)?;
        }
    }
    match best {
        Some((_, p)) => Ok((p, history)),
        None => Ok((params, history)),
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst_segment: String,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients against finite differences; `fd` holds
/// (parameter index, central difference) for every parameter that was not
/// skipped near a RePU kink.
pub fn compare_grads(
    params: &ModelParams,
    analytic: &[f64],
    fd: &[(usize, f64)],
    tolerance: f64,
) -> GradCheckReport {
    let mut max_rel = 0.0;
    let mut worst = String::from("-");
    for &(i, fdv) in fd {
        let ad = analytic[i];
        let rel = (ad - fdv).abs() / ad.abs().max(fdv.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = params
                .segment_of(i)
                .map(|s| s.name.clone())
                .unwrap_or_else(|| "-".into());
        }
    }
    GradCheckReport {
        checked: fd.len(),
        skipped: params.len() - fd.len(),
        max_rel_err: max_rel,
        worst_segment: worst,
        tolerance,
        passed: max_rel < tolerance,
    }
}

/// Central finite differences (h = 1e-5) against the reverse-mode gradient
/// for every parameter of a tiny model. Parameters whose perturbed forward
/// pass comes within 1e-7 of a RePU kink are skipped.
pub fn grad_check<M: TrainableModel>(
    model: &M,
    params: &ModelParams,
    data: &M::Data,
    idxs: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    if params.len() > 8192 {
        return Err(Error::usage(format!(
            "grad_check is for tiny models (<= 8192 params, got {})",
            params.len()
        )));
    }
    let (_, grad, _) = model.eval_indices(params, data, idxs, true)?;
    let analytic = grad.expect("gradient requested");
    let h = 1e-5;
    let mut fd = Vec::with_capacity(params.len());
    let mut scratch = params.clone();
    for i in 0..params.len() {
        if params.segment_of(i).is_some_and(|s| s.is_buffer()) {
            continue;
        }
        let orig = params.data[i];
        scratch.data[i] = orig + h;
        let (fp, _, gap_p) = model.eval_indices(&scratch, data, idxs, false)?;
        scratch.data[i] = orig - h;
        let (fm, _, gap_m) = model.eval_indices(&scratch, data, idxs, false)?;
        scratch.data[i] = orig;
        if gap_p.min(gap_m) < 1e-7 {
            continue;
        }
        fd.push((i, (fp - fm) / (2.0 * h)));
    }
    Ok(compare_grads(params, &analytic, &fd, tolerance))
}
