//! Data splitting, the training loop, and prediction helpers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ingest::{PlotSeries, SNIP_LEN, SNIP_WID};
use crate::metrics::PlotPrediction;
use crate::neural::{
    adam_step, forward_batch, inverse_time_lr, loss_and_grads_batch, AdamHyper, AdamState,
    NetworkConfig, NetworkParams, Scalar, Tensor,
};
use crate::rng::{hash_tag, stream};
use crate::{CoreError, Result};

pub const DEFAULT_TEST_FRACTION: f64 = 0.15;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;
const MIN_PLOTS_PER_ENVIRONMENT: usize = 10;

/// Disjoint per-environment plot-id partitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub environment_id: String,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub entries: Vec<SplitEntry>,
}

impl Split {
    /// Materializes the partitions against a dataset.
    pub fn partition<'a>(
        &self,
        dataset: &'a [PlotSeries],
    ) -> (Vec<&'a PlotSeries>, Vec<&'a PlotSeries>, Vec<&'a PlotSeries>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for s in dataset {
            let Some(entry) = self
                .entries
                .iter()
                .find(|e| e.environment_id == s.environment_id)
            else {
                continue;
            };
            if entry.train_ids.contains(&s.plot_id) {
                train.push(s);
            } else if entry.val_ids.contains(&s.plot_id) {
                val.push(s);
            } else if entry.test_ids.contains(&s.plot_id) {
                test.push(s);
            }
        }
        (train, val, test)
    }
}

/// Per-environment random split: `test_fraction` of plots held out for
/// testing, then `val_fraction` of the remaining input reserved for
/// validation. Deterministic under the seed.
pub fn split(
    dataset: &[PlotSeries],
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) || !(0.0..1.0).contains(&val_fraction) {
        return Err(CoreError::InvalidConfig(
            "split fractions must lie in [0, 1)".into(),
        ));
    }
    let mut by_env: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in dataset {
        if s.rm_day.is_none() {
            return Err(CoreError::Data(format!(
                "plot ({}, {}) lacks ground truth; cannot split for training",
                s.plot_id, s.environment_id
            )));
        }
        by_env
            .entry(s.environment_id.clone())
            .or_default()
            .push(s.plot_id.clone());
    }
    let mut counts = BTreeMap::new();
    for (env, ids) in &by_env {
        counts.insert(env.clone(), (ids.len() as f64 * test_fraction).round() as usize);
    }
    split_with_test_counts(dataset, &counts, val_fraction, seed)
}

/// Split with explicit per-environment test counts (for reproducing a known
/// layout); the remaining input is still split `val_fraction` for
/// validation.
pub fn split_with_test_counts(
    dataset: &[PlotSeries],
    test_counts: &BTreeMap<String, usize>,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    let mut by_env: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in dataset {
        by_env
            .entry(s.environment_id.clone())
            .or_default()
            .push(s.plot_id.clone());
    }
    let mut entries = Vec::new();
    for (env, mut ids) in by_env {
        if ids.len() < MIN_PLOTS_PER_ENVIRONMENT {
            return Err(CoreError::Data(format!(
                "environment `{env}` has only {} plots; at least {MIN_PLOTS_PER_ENVIRONMENT} required",
                ids.len()
            )));
        }
        ids.sort();
        let mut rng = stream(seed, &[hash_tag(&env), hash_tag("split")]);
        ids.shuffle(&mut rng);
        let n_test = *test_counts.get(&env).ok_or_else(|| {
            CoreError::Data(format!("no test count provided for environment `{env}`"))
        })?;
        if n_test >= ids.len() {
            return Err(CoreError::Data(format!(
                "test count {n_test} consumes every plot of environment `{env}`"
            )));
        }
        let test_ids: Vec<String> = ids.drain(..n_test).collect();
        let n_val = (ids.len() as f64 * val_fraction).round() as usize;
        let val_ids: Vec<String> = ids.drain(..n_val).collect();
        entries.push(SplitEntry {
            environment_id: env,
            train_ids: ids,
            val_ids,
            test_ids,
        });
    }
    Ok(Split { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected 32 or 64)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Inverse-time decay applied per completed update:
    /// lr_t = lr / (1 + decay * t).
    pub decay: f64,
    pub huber_delta: f64,
    pub seed: u64,
    /// Regress on standardized targets (z-scores of the training labels);
    /// predictions are mapped back to days.
    pub normalize_targets: bool,
    pub precision: Precision,
    /// Items differenced in parallel per reduction chunk; reductions always
    /// run in item order, so this does not affect results.
    pub parallel_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 300,
            learning_rate: 1e-3,
            decay: 1e-1,
            huber_delta: 1.0,
            seed: 0,
            normalize_targets: true,
            precision: Precision::F32,
            parallel_chunk: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.learning_rate < 0.0 || self.decay < 0.0 || self.huber_delta <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "learning_rate/decay must be non-negative and huber_delta positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

/// Affine map between day-scale targets and the network's regression scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }

    fn fit(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-9 { std } else { 1.0 },
        }
    }

    pub fn normalize(&self, day: f64) -> f64 {
        (day - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// A trained network with everything needed to predict on new series.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: NetworkConfig,
    pub params: NetworkParams<f32>,
    pub trace: LossTrace,
    pub target_stats: TargetStats,
}

/// Converts a series of snips into the network input tensor
/// [T, 256, 64, 3] with channel values scaled to [0, 1]. Index [t][i][j][c]
/// holds snip t's pixel at (x = i along the long axis, y = j).
pub fn series_to_tensor<T: Scalar>(series: &PlotSeries, time_steps: usize) -> Result<Tensor<T>> {
    if series.snips.len() != time_steps {
        return Err(CoreError::Data(format!(
            "plot ({}, {}) has {} snips, the network expects {time_steps}",
            series.plot_id,
            series.environment_id,
            series.snips.len()
        )));
    }
    let (len, wid) = (SNIP_LEN as usize, SNIP_WID as usize);
    let mut data = Vec::with_capacity(time_steps * len * wid * 3);
    let inv = 1.0 / 255.0;
    for snip in &series.snips {
        snip.validate()?;
        for i in 0..len {
            for j in 0..wid {
                let px = snip.image.get(i as u32, j as u32);
                data.push(T::of(f64::from(px[0]) * inv));
                data.push(T::of(f64::from(px[1]) * inv));
                data.push(T::of(f64::from(px[2]) * inv));
            }
        }
    }
    Ok(Tensor::from_vec(&[time_steps, len, wid, 3], data))
}

/// Mini-batch training loop: seeded shuffling per epoch, Huber loss, Adam
/// with the inverse-time rate schedule, per-epoch train and validation loss.
pub fn train(
    cfg: &NetworkConfig,
    train_data: &[PlotSeries],
    val_data: &[PlotSeries],
    tc: &TrainConfig,
) -> Result<TrainedModel> {
    tc.validate()?;
    cfg.shape_trace()?;
    if train_data.is_empty() {
        return Err(CoreError::Data("empty training set".into()));
    }
    let targets_of = |data: &[PlotSeries]| -> Result<Vec<f64>> {
        data.iter()
            .map(|s| {
                s.rm_day.map(f64::from).ok_or_else(|| {
                    CoreError::Data(format!(
                        "plot ({}, {}) lacks ground truth",
                        s.plot_id, s.environment_id
                    ))
                })
            })
            .collect()
    };
    let train_days = targets_of(train_data)?;
    let val_days = targets_of(val_data)?;
    let stats = if tc.normalize_targets {
        TargetStats::fit(&train_days)
    } else {
        TargetStats::identity()
    };

    match tc.precision {
        Precision::F32 => train_impl::<f32>(cfg, train_data, &train_days, val_data, &val_days, tc, stats),
        Precision::F64 => train_impl::<f64>(cfg, train_data, &train_days, val_data, &val_days, tc, stats),
    }
}

fn train_impl<T: Scalar>(
    cfg: &NetworkConfig,
    train_data: &[PlotSeries],
    train_days: &[f64],
    val_data: &[PlotSeries],
    val_days: &[f64],
    tc: &TrainConfig,
    stats: TargetStats,
) -> Result<TrainedModel>
where
    NetworkParams<T>: ParamsToF32,
{
    let mut params = NetworkParams::<T>::xavier(cfg, tc.seed)?;
    let mut adam = AdamState::for_params(&params);
    let hyper = AdamHyper::default();
    let delta = T::of(tc.huber_delta);

    let train_z: Vec<T> = train_days.iter().map(|d| T::of(stats.normalize(*d))).collect();
    let val_z: Vec<T> = val_days.iter().map(|d| T::of(stats.normalize(*d))).collect();
    // validation tensors are reused every epoch; training tensors are built
    // per batch to keep the resident set small
    let val_xs: Vec<Tensor<T>> = val_data
        .iter()
        .map(|s| series_to_tensor(s, cfg.time_steps))
        .collect::<Result<Vec<_>>>()?;

    let mut trace = LossTrace::default();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=tc.epochs {
        let mut rng = stream(tc.seed, &[hash_tag("shuffle"), epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks(tc.batch_size) {
            let xs: Vec<Tensor<T>> = batch_ids
                .iter()
                .map(|&i| series_to_tensor(&train_data[i], cfg.time_steps))
                .collect::<Result<Vec<_>>>()?;
            let ys: Vec<T> = batch_ids.iter().map(|&i| train_z[i]).collect();
            let (loss, grads) =
                loss_and_grads_batch(cfg, &params, &xs, &ys, delta, tc.parallel_chunk)?;
            let lr_t = inverse_time_lr(tc.learning_rate, tc.decay, adam.t);
            adam_step(&mut params, &grads, &mut adam, &hyper, lr_t);
            epoch_loss += loss.as_f64() * batch_ids.len() as f64;
        }
        let train_loss = epoch_loss / train_data.len() as f64;
        if !train_loss.is_finite() || !params.all_finite() {
            return Err(CoreError::Diverged { epoch });
        }
        let val_loss = if val_xs.is_empty() {
            None
        } else {
            let preds = forward_batch(cfg, &params, &val_xs)?;
            let (l, _) = crate::neural::huber_batch(&val_z, &preds, delta);
            Some(l.as_f64())
        };
        trace.epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }

    Ok(TrainedModel {
        config: cfg.clone(),
        params: params.to_f32(),
        trace,
        target_stats: stats,
    })
}

/// Narrowing of trained parameters to the stored f32 precision.
pub trait ParamsToF32 {
    fn to_f32(self) -> NetworkParams<f32>;
}

impl ParamsToF32 for NetworkParams<f32> {
    fn to_f32(self) -> NetworkParams<f32> {
        self
    }
}

impl ParamsToF32 for NetworkParams<f64> {
    fn to_f32(self) -> NetworkParams<f32> {
        self.cast()
    }
}

/// Predictions (in days after Aug 31) for a set of series.
pub fn predict(model: &TrainedModel, data: &[PlotSeries]) -> Result<Vec<PlotPrediction>> {
    let xs: Vec<Tensor<f32>> = data
        .iter()
        .map(|s| series_to_tensor(s, model.config.time_steps))
        .collect::<Result<Vec<_>>>()?;
    let raw = forward_batch(&model.config, &model.params, &xs)?;
    Ok(data
        .iter()
        .zip(raw)
        .map(|(s, z)| PlotPrediction {
            plot_id: s.plot_id.clone(),
            environment_id: s.environment_id.clone(),
            predicted: model.target_stats.denormalize(f64::from(z)),
            rm_day_gt: s.rm_day,
        })
        .collect())
}
