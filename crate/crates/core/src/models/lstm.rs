//! Single-layer LSTM regressor trained with full backpropagation through time.
//!
//! Each training sample is a window of `w` consecutive standardized rows
//! (target first, then the exogenous variables) and the label is the next
//! standardized target value. Training is full-batch gradient descent with a
//! fixed learning rate on the mean squared error. Multi-step forecasts feed the
//! predicted target and the supplied exogenous values back in as the next row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{fit_range, path_prefix, ExogPaths, FittedModel, Hyperparams, ModelError, ModelSpec, Parameters};
use crate::timeseries::TimeSeriesFrame;

/// Relative gradient error below which both gradients count as zero.
pub const GRAD_ZERO: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-5;
const MAX_CHECK_HIDDEN: usize = 4;
const MAX_CHECK_WINDOW: usize = 3;
const MAX_CHECK_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LstmConfig {
    pub window: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            window: 4,
            hidden_size: 8,
            epochs: 300,
            learning_rate: 0.05,
            seed: 42,
        }
    }
}

/// Gate weights are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNetwork {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4h x input_size`, row-major.
    pub w_input: Vec<f64>,
    /// `4h x h`, row-major.
    pub w_hidden: Vec<f64>,
    pub bias: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// A standardized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub label: f64,
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmNetwork {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w_input: vec![0.0; g * input_size],
            w_hidden: vec![0.0; g * hidden_size],
            bias: vec![0.0; g],
            w_out: vec![0.0; hidden_size],
            b_out: 0.0,
        }
    }

    /// Every parameter drawn uniformly from `±1/sqrt(hidden_size)`.
    pub fn seeded(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = net.to_flat();
        for v in flat.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        net.set_flat(&flat);
        net
    }

    pub fn num_params(&self) -> usize {
        self.w_input.len() + self.w_hidden.len() + self.bias.len() + self.w_out.len() + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.w_input);
        v.extend_from_slice(&self.w_hidden);
        v.extend_from_slice(&self.bias);
        v.extend_from_slice(&self.w_out);
        v.push(self.b_out);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut rest = flat;
        for part in [&mut self.w_input, &mut self.w_hidden, &mut self.bias, &mut self.w_out] {
            let (head, tail) = rest.split_at(part.len());
            part.copy_from_slice(head);
            rest = tail;
        }
        self.b_out = rest[0];
    }

    fn run(&self, inputs: &[Vec<f64>]) -> (f64, Vec<StepCache>, Vec<f64>) {
        let h = self.hidden_size;
        let m = self.input_size;
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut a = self.bias.clone();
            for (r, a_r) in a.iter_mut().enumerate() {
                let wi = &self.w_input[r * m..(r + 1) * m];
                let wh = &self.w_hidden[r * h..(r + 1) * h];
                *a_r += wi.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                *a_r += wh.iter().zip(&h_t).map(|(w, v)| w * v).sum::<f64>();
            }
            let i: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = a[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = a[3 * h..].iter().map(|&v| sigmoid(v)).collect();
            let c_new: Vec<f64> = (0..h).map(|k| f[k] * c_t[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
            caches.push(StepCache {
                x: x.clone(),
                h_prev: std::mem::replace(&mut h_t, h_new),
                c_prev: std::mem::replace(&mut c_t, c_new),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        let y = self.b_out + self.w_out.iter().zip(&h_t).map(|(w, v)| w * v).sum::<f64>();
        (y, caches, h_t)
    }

    /// Standardized one-step prediction for a window of standardized rows.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> f64 {
        self.run(inputs).0
    }

    /// Mean squared error over the samples.
    pub fn loss(&self, samples: &[Sample]) -> f64 {
        samples
            .iter()
            .map(|s| (self.predict(&s.inputs) - s.label).powi(2))
            .sum::<f64>()
            / samples.len() as f64
    }

    /// Loss and its gradient with respect to [`Self::to_flat`] ordering.
    // BPTT indexes several gate buffers with the same unit index.
    #[allow(clippy::needless_range_loop)]
    pub fn loss_and_gradient(&self, samples: &[Sample]) -> (f64, Vec<f64>) {
        let h = self.hidden_size;
        let m = self.input_size;
        let n = samples.len() as f64;
        let mut grad = Self::zeros(m, h);
        let mut loss = 0.0;
        for s in samples {
            let (y, caches, h_last) = self.run(&s.inputs);
            let err = y - s.label;
            loss += err * err / n;
            let dy = 2.0 * err / n;
            grad.b_out += dy;
            for k in 0..h {
                grad.w_out[k] += dy * h_last[k];
            }
            let mut dh: Vec<f64> = self.w_out.iter().map(|w| dy * w).collect();
            let mut dc = vec![0.0; h];
            for cache in caches.iter().rev() {
                let mut da = vec![0.0; 4 * h];
                for k in 0..h {
                    let d_o = dh[k] * cache.tanh_c[k];
                    dc[k] += dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
                    let d_i = dc[k] * cache.g[k];
                    let d_g = dc[k] * cache.i[k];
                    let d_f = dc[k] * cache.c_prev[k];
                    da[k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
                    da[h + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
                    da[2 * h + k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
                    da[3 * h + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
                    dc[k] *= cache.f[k];
                }
                let mut dh_prev = vec![0.0; h];
                for (r, &d) in da.iter().enumerate() {
                    grad.bias[r] += d;
                    for (j, x) in cache.x.iter().enumerate() {
                        grad.w_input[r * m + j] += d * x;
                    }
                    for j in 0..h {
                        grad.w_hidden[r * h + j] += d * cache.h_prev[j];
                        dh_prev[j] += d * self.w_hidden[r * h + j];
                    }
                }
                dh = dh_prev;
            }
        }
        (loss, grad.to_flat())
    }

    /// Largest relative disagreement between the analytic gradient and a
    /// central finite difference, over every parameter.
    pub fn gradient_check(&self, samples: &[Sample]) -> f64 {
        let (_, analytic) = self.loss_and_gradient(samples);
        let base = self.to_flat();
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for (idx, &a) in analytic.iter().enumerate() {
            let mut shifted = base.clone();
            shifted[idx] = base[idx] + FD_STEP;
            probe.set_flat(&shifted);
            let up = probe.loss(samples);
            shifted[idx] = base[idx] - FD_STEP;
            probe.set_flat(&shifted);
            let down = probe.loss(samples);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
        worst
    }
}

/// `|a - b| / max(|a|, |b|)`, defined as 0 when both are below [`GRAD_ZERO`].
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a.abs() < GRAD_ZERO && b.abs() < GRAD_ZERO {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Per-variable standardization frozen at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub config: LstmConfig,
    pub network: LstmNetwork,
    /// Target first, then exogenous variables in spec order.
    pub scalers: Vec<Standardizer>,
    /// Last `window` raw rows of the training sample, oldest first.
    pub recent_rows: Vec<Vec<f64>>,
    pub loss_history: Vec<f64>,
    pub trained: bool,
}

fn config_of(spec: &ModelSpec) -> Result<LstmConfig, ModelError> {
    let Hyperparams::Lstm(cfg) = spec.hyperparams else {
        return Err(ModelError::InvalidSpec("expected LSTM hyperparameters".into()));
    };
    if cfg.window == 0 || cfg.hidden_size == 0 {
        return Err(ModelError::InvalidSpec("window and hidden_size must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(ModelError::InvalidSpec("learning_rate must be positive".into()));
    }
    Ok(cfg)
}

/// Standardized sliding-window samples from dense raw rows.
pub fn build_samples(rows: &[Vec<f64>], scalers: &[Standardizer], window: usize) -> Vec<Sample> {
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(scalers).map(|(v, s)| s.apply(*v)).collect())
        .collect();
    (window..z.len())
        .map(|t| Sample {
            inputs: z[t - window..t].to_vec(),
            label: z[t][0],
        })
        .collect()
}

fn scalers_for(rows: &[Vec<f64>], width: usize) -> Vec<Standardizer> {
    (0..width)
        .map(|c| Standardizer::from_values(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect()
}

pub fn fit(frame: &TimeSeriesFrame, spec: &ModelSpec) -> Result<FittedModel, ModelError> {
    spec.validate(frame)?;
    let cfg = config_of(spec)?;
    let variables = spec.variables();
    let (start, rows) = frame.complete_suffix(&variables)?;
    let needed = cfg.window + 11;
    if rows.len() < needed {
        return Err(ModelError::InsufficientData {
            needed,
            available: rows.len(),
        });
    }
    let scalers = scalers_for(&rows, variables.len());
    let samples = build_samples(&rows, &scalers, cfg.window);

    let mut network = LstmNetwork::seeded(variables.len(), cfg.hidden_size, cfg.seed);
    let mut flat = network.to_flat();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = network.loss_and_gradient(&samples);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::DivergedTraining { epoch });
        }
        loss_history.push(loss);
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        network.set_flat(&flat);
    }
    let final_loss = network.loss(&samples);
    if !final_loss.is_finite() {
        return Err(ModelError::DivergedTraining { epoch: cfg.epochs });
    }

    let in_sample: Vec<f64> = samples
        .iter()
        .map(|s| scalers[0].std * (network.predict(&s.inputs) - s.label))
        .collect();
    let residual_sigma = (in_sample.iter().map(|e| e * e).sum::<f64>() / in_sample.len() as f64).sqrt();

    Ok(FittedModel {
        spec: spec.clone(),
        parameters: Parameters::Lstm(LstmParams {
            config: cfg,
            network,
            scalers,
            recent_rows: rows[rows.len() - cfg.window..].to_vec(),
            loss_history,
            trained: cfg.epochs > 0,
        }),
        residual_sigma,
        fit_range: fit_range(frame, start, frame.len() - 1, rows.len()),
    })
}

pub fn forecast(
    params: &LstmParams,
    spec: &ModelSpec,
    paths: &ExogPaths,
    horizon: usize,
) -> Result<Vec<f64>, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let width = spec.exogenous.len() + 1;
    if params.scalers.len() != width
        || params.network.input_size != width
        || params.recent_rows.len() != params.config.window
        || params.recent_rows.iter().any(|r| r.len() != width)
    {
        return Err(ModelError::InvalidDocument("LSTM state is inconsistent".into()));
    }
    let exog = spec
        .exogenous
        .iter()
        .map(|v| path_prefix(paths, v, horizon))
        .collect::<Result<Vec<_>, _>>()?;

    let standardize = |row: &[f64]| -> Vec<f64> {
        row.iter().zip(&params.scalers).map(|(v, s)| s.apply(*v)).collect()
    };
    let mut window: Vec<Vec<f64>> = params.recent_rows.iter().map(|r| standardize(r)).collect();
    let mut out = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let z = params.network.predict(&window);
        let level = params.scalers[0].invert(z);
        out.push(level);
        let mut next = vec![level];
        next.extend(exog.iter().map(|p| p[s]));
        window.remove(0);
        window.push(standardize(&next));
    }
    Ok(out)
}

/// Gradient check at the seeded initial weights on the frame's standardized
/// samples (the last [`MAX_CHECK_SAMPLES`] of them). Only tiny networks are
/// accepted so every parameter can be probed.
pub fn lstm_gradient_check(spec: &ModelSpec, frame: &TimeSeriesFrame) -> Result<f64, ModelError> {
    spec.validate(frame)?;
    let cfg = config_of(spec)?;
    if cfg.hidden_size > MAX_CHECK_HIDDEN || cfg.window > MAX_CHECK_WINDOW {
        return Err(ModelError::InvalidSpec(format!(
            "gradient check needs hidden_size <= {MAX_CHECK_HIDDEN} and window <= {MAX_CHECK_WINDOW}"
        )));
    }
    let variables = spec.variables();
    let (_, rows) = frame.complete_suffix(&variables)?;
    if rows.len() <= cfg.window {
        return Err(ModelError::InsufficientData {
            needed: cfg.window + 1,
            available: rows.len(),
        });
    }
    let scalers = scalers_for(&rows, variables.len());
    let mut samples = build_samples(&rows, &scalers, cfg.window);
    let keep = samples.len().min(MAX_CHECK_SAMPLES);
    samples.drain(..samples.len() - keep);
    let network = LstmNetwork::seeded(variables.len(), cfg.hidden_size, cfg.seed);
    Ok(network.gradient_check(&samples))
}
