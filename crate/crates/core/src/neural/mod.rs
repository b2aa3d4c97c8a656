//! From-scratch CNN-LSTM engine: time-distributed convolutions and pooling,
//! two LSTM layers and a linear head, with manual forward/backward passes,
//! Huber loss, Xavier initialization and Adam.

pub mod adam;
pub mod init;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod tensor;

mod io;

pub use adam::{inverse_time_lr, AdamHyper, AdamState};
pub use io::{load_weights, save_weights};
pub use loss::{huber_batch, huber_loss};
pub use lstm::{LstmCache, LstmParams};
pub use tensor::{Scalar, Tensor};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{CoreError, Result};
use init::xavier_uniform;
use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, KERNEL,
};
use lstm::{lstm_backward, lstm_forward};

/// Layer stack specification. The default mirrors the production network:
/// four 32-filter stride-2 convolutions with max pooling after the second
/// and fourth, two 256-unit LSTM layers and a single linear neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub time_steps: usize,
    /// First spatial extent of an input frame (snip length).
    pub input_len: usize,
    /// Second spatial extent (snip width).
    pub input_wid: usize,
    pub channels: usize,
    /// Filters per convolution layer.
    pub conv_filters: Vec<usize>,
    /// 0-based indices of convolutions followed by a 2x2 max pool.
    pub pool_after: Vec<usize>,
    pub conv_stride: usize,
    pub lstm1_units: usize,
    pub lstm2_units: usize,
}

impl NetworkConfig {
    /// The production architecture for a given number of flights.
    pub fn for_time_steps(time_steps: usize) -> Self {
        Self {
            time_steps,
            input_len: 256,
            input_wid: 64,
            channels: 3,
            conv_filters: vec![32, 32, 32, 32],
            pool_after: vec![1, 3],
            conv_stride: 2,
            lstm1_units: 256,
            lstm2_units: 256,
        }
    }

    /// The default five-flight (weekly) network.
    pub fn table_default() -> Self {
        Self::for_time_steps(5)
    }

    /// Small configuration for finite-difference gradient checks: every
    /// layer type is present but cheap enough to difference through.
    pub fn reduced_gradcheck() -> Self {
        Self {
            time_steps: 3,
            input_len: 32,
            input_wid: 8,
            channels: 3,
            conv_filters: vec![8, 8],
            pool_after: vec![1],
            conv_stride: 2,
            lstm1_units: 16,
            lstm2_units: 16,
        }
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [
            self.time_steps,
            self.input_len,
            self.input_wid,
            self.channels,
        ]
    }

    /// Derives the per-layer input shapes, validating that no extent
    /// collapses to zero.
    pub fn shape_trace(&self) -> Result<ShapeTrace> {
        if self.conv_filters.is_empty() {
            return Err(CoreError::InvalidConfig("at least one convolution required".into()));
        }
        if self.time_steps == 0 || self.conv_stride == 0 {
            return Err(CoreError::InvalidConfig(
                "time_steps and conv_stride must be positive".into(),
            ));
        }
        if let Some(&bad) = self
            .pool_after
            .iter()
            .find(|&&i| i >= self.conv_filters.len())
        {
            return Err(CoreError::InvalidConfig(format!(
                "pool_after index {bad} exceeds the {} conv layers",
                self.conv_filters.len()
            )));
        }
        let mut rows = Vec::new();
        let mut h = self.input_len;
        let mut w = self.input_wid;
        let mut c = self.channels;
        let mut pool_no = 0;
        for (i, &filters) in self.conv_filters.iter().enumerate() {
            rows.push(TraceRow {
                layer: format!("Time distributed Conv2D_{}", i + 1),
                input_shape: vec![self.time_steps, h, w, c],
            });
            h = h.div_ceil(self.conv_stride);
            w = w.div_ceil(self.conv_stride);
            c = filters;
            if self.pool_after.contains(&i) {
                pool_no += 1;
                rows.push(TraceRow {
                    layer: format!("Time distributed MaxPooling2D_{pool_no}"),
                    input_shape: vec![self.time_steps, h, w, c],
                });
                h /= 2;
                w /= 2;
                if h == 0 || w == 0 {
                    return Err(CoreError::InvalidConfig(format!(
                        "max pool {pool_no} collapses the spatial extents to {h}x{w}"
                    )));
                }
            }
        }
        rows.push(TraceRow {
            layer: "Time distributed Flatten".into(),
            input_shape: vec![self.time_steps, h, w, c],
        });
        let flat = h * w * c;
        rows.push(TraceRow {
            layer: "LSTM_1".into(),
            input_shape: vec![self.time_steps, flat],
        });
        rows.push(TraceRow {
            layer: "LSTM_2".into(),
            input_shape: vec![self.time_steps, self.lstm1_units],
        });
        rows.push(TraceRow {
            layer: "Dense".into(),
            input_shape: vec![self.lstm2_units],
        });
        Ok(ShapeTrace {
            rows,
            output: vec![1],
        })
    }

    /// Flattened feature count entering the first LSTM.
    pub fn flatten_dim(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        Ok(trace
            .rows
            .iter()
            .find(|r| r.layer == "LSTM_1")
            .expect("trace always contains LSTM_1")
            .input_shape[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub layer: String,
    pub input_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub rows: Vec<TraceRow>,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All trainable tensors. Also used as the gradient container, since
/// gradients mirror the parameter structure exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub lstm1: LstmParams<T>,
    pub lstm2: LstmParams<T>,
    pub dense_weights: Tensor<T>,
    pub dense_bias: Tensor<T>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        let flat = cfg.flatten_dim()?;
        let mut convs = Vec::with_capacity(cfg.conv_filters.len());
        let mut cin = cfg.channels;
        for &cout in &cfg.conv_filters {
            convs.push(ConvParams {
                weights: Tensor::zeros(&[KERNEL, KERNEL, cin, cout]),
                bias: Tensor::zeros(&[cout]),
            });
            cin = cout;
        }
        Ok(Self {
            convs,
            lstm1: LstmParams::zeros(flat, cfg.lstm1_units),
            lstm2: LstmParams::zeros(cfg.lstm1_units, cfg.lstm2_units),
            dense_weights: Tensor::zeros(&[cfg.lstm2_units]),
            dense_bias: Tensor::zeros(&[1]),
        })
    }

    /// Xavier-initialized weights with zero biases, deterministic under the
    /// seed.
    pub fn xavier(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(cfg)?;
        let mut rng = stream(seed, &[crate::rng::hash_tag("xavier")]);
        for conv in &mut params.convs {
            let s = conv.weights.shape().to_vec();
            let fan_in = KERNEL * KERNEL * s[2];
            let fan_out = KERNEL * KERNEL * s[3];
            conv.weights = xavier_uniform(&s, fan_in, fan_out, &mut rng);
        }
        for l in [&mut params.lstm1, &mut params.lstm2] {
            l.kernel = xavier_uniform(
                &[l.input_dim, 4 * l.units],
                l.input_dim,
                4 * l.units,
                &mut rng,
            );
            l.recurrent =
                xavier_uniform(&[l.units, 4 * l.units], l.units, 4 * l.units, &mut rng);
        }
        params.dense_weights = xavier_uniform(
            &[cfg.lstm2_units],
            cfg.lstm2_units,
            1,
            &mut rng,
        );
        Ok(params)
    }

    /// Canonical tensor ordering shared by Adam state, gradient checks and
    /// serialization.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weights);
            out.push(&c.bias);
        }
        for l in [&self.lstm1, &self.lstm2] {
            out.push(&l.kernel);
            out.push(&l.recurrent);
            out.push(&l.bias);
        }
        out.push(&self.dense_weights);
        out.push(&self.dense_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        for l in [&mut self.lstm1, &mut self.lstm2] {
            out.push(&mut l.kernel);
            out.push(&mut l.recurrent);
            out.push(&mut l.bias);
        }
        out.push(&mut self.dense_weights);
        out.push(&mut self.dense_bias);
        out
    }

    pub fn tensor_names(cfg: &NetworkConfig) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..cfg.conv_filters.len() {
            names.push(format!("conv{}.weights", i + 1));
            names.push(format!("conv{}.bias", i + 1));
        }
        for l in ["lstm1", "lstm2"] {
            names.push(format!("{l}.kernel"));
            names.push(format!("{l}.recurrent"));
            names.push(format!("{l}.bias"));
        }
        names.push("dense.weights".into());
        names.push("dense.bias".into());
        names
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weights: c.weights.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
            lstm1: LstmParams {
                kernel: self.lstm1.kernel.cast(),
                recurrent: self.lstm1.recurrent.cast(),
                bias: self.lstm1.bias.cast(),
                input_dim: self.lstm1.input_dim,
                units: self.lstm1.units,
            },
            lstm2: LstmParams {
                kernel: self.lstm2.kernel.cast(),
                recurrent: self.lstm2.recurrent.cast(),
                bias: self.lstm2.bias.cast(),
                input_dim: self.lstm2.input_dim,
                units: self.lstm2.units,
            },
            dense_weights: self.dense_weights.cast(),
            dense_bias: self.dense_bias.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
    }
}

/// Trainable parameter count implied by a configuration.
pub fn param_count(cfg: &NetworkConfig) -> Result<usize> {
    Ok(NetworkParams::<f32>::zeros(cfg)?.param_count())
}

enum StageRecord {
    Conv { conv_idx: usize },
    Pool { argmax: Vec<u32> },
}

/// Activations retained for the backward pass.
pub struct ForwardCache<T> {
    /// acts[0] is the input; acts[k + 1] the output of stage k.
    acts: Vec<Tensor<T>>,
    stages: Vec<StageRecord>,
    lstm1: LstmCache<T>,
    lstm2: LstmCache<T>,
    h2: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Shapes of the realized layer inputs, in layer order (conv/pool
    /// stages, flatten input, LSTM inputs, dense input) — the runtime
    /// counterpart of [`NetworkConfig::shape_trace`].
    pub fn realized_trace(&self) -> Vec<Vec<usize>> {
        let mut rows: Vec<Vec<usize>> =
            self.acts.iter().map(|a| a.shape().to_vec()).collect();
        rows.push(self.lstm1.input_shape().to_vec());
        rows.push(self.lstm2.input_shape().to_vec());
        rows.push(self.h2.shape().to_vec());
        rows
    }
}

fn check_input_shape<T: Scalar>(cfg: &NetworkConfig, x: &Tensor<T>) -> Result<()> {
    if x.shape() != cfg.input_shape() {
        return Err(CoreError::ShapeMismatch {
            layer: "input".into(),
            expected: format!("{:?}", cfg.input_shape()),
            got: format!("{:?}", x.shape()),
        });
    }
    Ok(())
}

/// Forward pass for one series, retaining everything backward needs.
pub fn forward_single<T: Scalar>(
    cfg: &NetworkConfig,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
) -> Result<(T, ForwardCache<T>)> {
    check_input_shape(cfg, x)?;
    let mut acts: Vec<Tensor<T>> = vec![x.clone()];
    let mut stages = Vec::new();
    for (i, conv) in params.convs.iter().enumerate() {
        let mut y = conv2d_forward(
            acts.last().unwrap(),
            &conv.weights,
            &conv.bias,
            cfg.conv_stride,
            &format!("conv{}", i + 1),
        )?;
        relu_forward(&mut y);
        stages.push(StageRecord::Conv { conv_idx: i });
        acts.push(y);
        if cfg.pool_after.contains(&i) {
            let (p, argmax) = maxpool_forward(acts.last().unwrap());
            stages.push(StageRecord::Pool { argmax });
            acts.push(p);
        }
    }
    let last = acts.last().unwrap();
    let flat_dim: usize = last.shape()[1..].iter().product();
    let flat = last
        .clone()
        .reshaped(&[cfg.time_steps, flat_dim]);
    let (h1, lstm1_cache) = lstm_forward(&params.lstm1, &flat, true)?;
    let (h2, lstm2_cache) = lstm_forward(&params.lstm2, &h1, false)?;
    let pred = dense_forward(&h2, &params.dense_weights, params.dense_bias.data()[0])?;
    Ok((
        pred,
        ForwardCache {
            acts,
            stages,
            lstm1: lstm1_cache,
            lstm2: lstm2_cache,
            h2,
        },
    ))
}

/// Forward pass without caching; used for evaluation and finite differences.
pub fn forward_only<T: Scalar>(
    cfg: &NetworkConfig,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
) -> Result<T> {
    check_input_shape(cfg, x)?;
    let mut cur: Option<Tensor<T>> = None;
    for (i, conv) in params.convs.iter().enumerate() {
        let src = cur.as_ref().unwrap_or(x);
        let mut y = conv2d_forward(
            src,
            &conv.weights,
            &conv.bias,
            cfg.conv_stride,
            &format!("conv{}", i + 1),
        )?;
        relu_forward(&mut y);
        if cfg.pool_after.contains(&i) {
            let (p, _) = maxpool_forward(&y);
            cur = Some(p);
        } else {
            cur = Some(y);
        }
    }
    let last = cur.expect("at least one conv layer");
    let flat_dim: usize = last.shape()[1..].iter().product();
    let flat = last.reshaped(&[cfg.time_steps, flat_dim]);
    let (h1, _) = lstm_forward(&params.lstm1, &flat, true)?;
    let (h2, _) = lstm_forward(&params.lstm2, &h1, false)?;
    dense_forward(&h2, &params.dense_weights, params.dense_bias.data()[0])
}

/// Batch prediction, parallel over items with order-stable output.
pub fn forward_batch<T: Scalar>(
    cfg: &NetworkConfig,
    params: &NetworkParams<T>,
    xs: &[Tensor<T>],
) -> Result<Vec<T>> {
    xs.par_iter()
        .map(|x| forward_only(cfg, params, x))
        .collect()
}

/// Backward pass for one series given dLoss/dPrediction.
pub fn backward_single<T: Scalar>(
    cfg: &NetworkConfig,
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    d_pred: T,
) -> Result<NetworkParams<T>> {
    let mut grads = NetworkParams::zeros(cfg)?;

    let (dh2, dw_dense, db_dense) = dense_backward(&cache.h2, &params.dense_weights, d_pred);
    grads.dense_weights = dw_dense;
    grads.dense_bias.data_mut()[0] = db_dense;

    let (dx2, dk2, dr2, dbias2) = lstm_backward(&params.lstm2, &cache.lstm2, &dh2, false);
    grads.lstm2.kernel = dk2;
    grads.lstm2.recurrent = dr2;
    grads.lstm2.bias = dbias2;

    let (dx1, dk1, dr1, dbias1) = lstm_backward(&params.lstm1, &cache.lstm1, &dx2, true);
    grads.lstm1.kernel = dk1;
    grads.lstm1.recurrent = dr1;
    grads.lstm1.bias = dbias1;

    let mut d = dx1.reshaped(cache.acts.last().unwrap().shape());
    for (k, stage) in cache.stages.iter().enumerate().rev() {
        match stage {
            StageRecord::Pool { argmax } => {
                d = maxpool_backward(cache.acts[k].shape(), argmax, &d);
            }
            StageRecord::Conv { conv_idx } => {
                relu_backward(&cache.acts[k + 1], &mut d);
                let need_dx = k > 0;
                let (dx, dw, db) = conv2d_backward(
                    &cache.acts[k],
                    &params.convs[*conv_idx].weights,
                    &d,
                    cfg.conv_stride,
                    need_dx,
                );
                grads.convs[*conv_idx].weights = dw;
                grads.convs[*conv_idx].bias = db;
                match dx {
                    Some(dx) => d = dx,
                    None => break, // gradient w.r.t. the network input is not needed
                }
            }
        }
    }
    Ok(grads)
}

/// Mean Huber loss and summed gradients over a batch.
///
/// Items are processed in parallel chunks but always reduced in item order,
/// so the result is bitwise reproducible for any thread count.
pub fn loss_and_grads_batch<T: Scalar>(
    cfg: &NetworkConfig,
    params: &NetworkParams<T>,
    xs: &[Tensor<T>],
    ys: &[T],
    huber_delta: T,
    parallel_chunk: usize,
) -> Result<(T, NetworkParams<T>)> {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    let n = T::of(xs.len() as f64);
    let mut total_loss = T::zero();
    let mut grads = NetworkParams::zeros(cfg)?;
    let chunk = parallel_chunk.max(1);
    for (base, chunk_xs) in xs.chunks(chunk).enumerate() {
        let items: Vec<(T, NetworkParams<T>)> = chunk_xs
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let idx = base * chunk + j;
                let (pred, cache) = forward_single(cfg, params, x)?;
                let (loss, dpred) = huber_loss(ys[idx], pred, huber_delta);
                let g = backward_single(cfg, params, &cache, dpred / n)?;
                Ok((loss, g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (loss, g) in &items {
            total_loss += *loss;
            grads.accumulate(g);
        }
    }
    Ok((total_loss / n, grads))
}

/// One Adam update over all parameter groups with the given effective rate.
pub fn adam_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
    lr_t: f64,
) {
    state.t += 1;
    let t = state.t;
    for (i, (p, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .enumerate()
    {
        adam::adam_update_group(
            p.data_mut(),
            g.data(),
            state.m[i].data_mut(),
            state.v[i].data_mut(),
            hyper,
            lr_t,
            t,
        );
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &NetworkParams<T>) -> Self {
        let shapes: Vec<&[usize]> = params.tensors().iter().map(|t| t.shape()).collect();
        Self::for_shapes(&shapes)
    }
}

/// Deliberate gradient corruption used to validate that the checker catches
/// wrong gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    /// Doubles the analytic gradient of the first convolution's weights.
    DoubleFirstConvWeightGrads,
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub layers: Vec<LayerCheck>,
}

/// Central finite differences against the analytic gradients for every
/// parameter group. Relative error is |a − n| / max(|a|, |n|, 1e-8).
pub fn grad_check(
    cfg: &NetworkConfig,
    params: &mut NetworkParams<f64>,
    xs: &[Tensor<f64>],
    ys: &[f64],
    huber_delta: f64,
    eps: f64,
    fault: Option<FaultInjection>,
) -> Result<GradCheckReport> {
    let (_, mut analytic) = loss_and_grads_batch(cfg, params, xs, ys, huber_delta, 1)?;
    if let Some(FaultInjection::DoubleFirstConvWeightGrads) = fault {
        for v in analytic.convs[0].weights.data_mut() {
            *v *= 2.0;
        }
    }

    let loss_of = |params: &NetworkParams<f64>| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let pred = forward_only(cfg, params, x)?;
            let (l, _) = huber_loss(*y, pred, huber_delta);
            total += l;
        }
        Ok(total / xs.len() as f64)
    };

    let names = NetworkParams::<f64>::tensor_names(cfg);
    let analytic_tensors = analytic.tensors();
    let mut layers = Vec::with_capacity(names.len());
    let mut overall: f64 = 0.0;
    for (gi, name) in names.iter().enumerate() {
        let len = analytic_tensors[gi].len();
        let mut worst: f64 = 0.0;
        for j in 0..len {
            let original = params.tensors()[gi].data()[j];
            params.tensors_mut()[gi].data_mut()[j] = original + eps;
            let plus = loss_of(params)?;
            params.tensors_mut()[gi].data_mut()[j] = original - eps;
            let minus = loss_of(params)?;
            params.tensors_mut()[gi].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic_tensors[gi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
        overall = overall.max(worst);
        layers.push(LayerCheck {
            name: name.clone(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: overall,
        layers,
    })
}
