//! Small feed-forward network used as the gain schedule: tanh hidden
//! layers, linear output, min-max normalisation on both ends.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MlpError {
    #[error("non-finite loss at epoch {epoch} (learning rate {learning_rate:e}); lower the learning rate")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },
    #[error("schedule file version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training data is degenerate: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl Network {
    /// Xavier-uniform initialisation with zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(MlpError::Dimension(format!("invalid layer sizes {sizes:?}")).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-limit..limit)));
            biases.push(DVector::zeros(n_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(MlpError::Dimension("weights and biases must pair up".into()).into());
        }
        let mut sizes = vec![weights[0].ncols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *sizes.last().unwrap() || w.nrows() != b.len() {
                return Err(MlpError::Dimension(format!("layer {k} shapes do not chain")).into());
            }
            sizes.push(w.nrows());
        }
        Ok(Self { sizes, weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer: W row-major, then b.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[i];
                    i += 1;
                }
            }
            for v in b.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
    }

    /// Forward pass on a batch stored column-wise; returns every layer's activation.
    fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if k != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = DVector::from_column_slice(x);
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if k != last {
                a.apply(|v| *v = v.tanh());
            }
        }
        a.iter().copied().collect()
    }

    /// Mean squared error over all samples and outputs, with its gradient
    /// in `params()` order.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let acts = self.forward_batch(x);
        let out = acts.last().unwrap();
        let diff = out - y;
        let count = diff.len() as f64;
        let loss = diff.norm_squared() / count;

        let mut grads_w = vec![DMatrix::zeros(0, 0); self.weights.len()];
        let mut grads_b = vec![DVector::zeros(0); self.weights.len()];
        let mut delta = diff * (2.0 / count);
        for k in (0..self.weights.len()).rev() {
            grads_w[k] = &delta * acts[k].transpose();
            grads_b[k] = delta.column_sum();
            if k > 0 {
                let mut back = self.weights[k].transpose() * &delta;
                back.zip_apply(&acts[k], |g, a| *g *= 1.0 - a * a);
                delta = back;
            }
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            for r in 0..w.nrows() {
                flat.extend(w.row(r).iter());
            }
            flat.extend(b.iter());
        }
        (loss, flat)
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let out = self.forward_batch(x).pop().unwrap();
        (out - y).norm_squared() / y.len() as f64
    }
}

/// Per-dimension affine map onto [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub ranges: Vec<(f64, f64)>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows[0].len();
        let ranges = (0..dim)
            .map(|j| {
                rows.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])))
            })
            .collect();
        Self { ranges }
    }

    fn span(lo: f64, hi: f64) -> f64 {
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| (v - lo) / Self::span(lo, hi))
            .collect()
    }

    pub fn normalize_clamped(&self, x: &[f64]) -> Vec<f64> {
        self.normalize(x).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| lo + v * Self::span(lo, hi))
            .collect()
    }
}

/// Trained map from operating point to controller outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub network: Network,
    pub norm_in: Normalizer,
    pub norm_out: Normalizer,
}

impl GainSchedule {
    pub fn new(network: Network, norm_in: Normalizer, norm_out: Normalizer) -> Result<Self> {
        if norm_in.ranges.len() != network.input_dim() || norm_out.ranges.len() != network.output_dim() {
            return Err(MlpError::Dimension("normalisation ranges do not match the network".into()).into());
        }
        Ok(Self {
            network,
            norm_in,
            norm_out,
        })
    }

    /// Clamped-normalised forward pass, outputs clamped at zero.
    pub fn predict_vec(&self, input: &[f64]) -> Vec<f64> {
        let x = self.norm_in.normalize_clamped(input);
        let y = self.network.forward(&x);
        self.norm_out.denormalize(&y).into_iter().map(|v| v.max(0.0)).collect()
    }

    /// Relative error of each output at each point, floored by the
    /// output ranges the schedule was fitted on.
    pub fn relative_errors(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
        inputs
            .iter()
            .zip(targets)
            .map(|(i, t)| {
                let p = self.predict_vec(i);
                p.iter()
                    .zip(t)
                    .zip(&self.norm_out.ranges)
                    .map(|((&p, &t), &r)| relative_error(p, t, r))
                    .collect()
            })
            .collect()
    }

    pub fn predict(&self, h: f64, speed: f64) -> Vec<f64> {
        self.predict_vec(&[h, speed])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut String, xs: &mut dyn Iterator<Item = f64>| {
            let parts: Vec<String> = xs.map(|x| format!("{x:.16e}")).collect();
            v.push_str(&parts.join(" "));
        };
        writeln!(s, "version {FORMAT_VERSION}").unwrap();
        let sizes: Vec<String> = self.network.sizes.iter().map(|n| n.to_string()).collect();
        writeln!(s, "layers {}", sizes.join(" ")).unwrap();
        for (key, norm) in [("norm_in", &self.norm_in), ("norm_out", &self.norm_out)] {
            s.push_str(key);
            s.push(' ');
            join(&mut s, &mut norm.ranges.iter().flat_map(|&(lo, hi)| [lo, hi]));
            s.push('\n');
        }
        for (k, (w, b)) in self.network.weights.iter().zip(&self.network.biases).enumerate() {
            writeln!(s, "W {k}").unwrap();
            for r in 0..w.nrows() {
                join(&mut s, &mut w.row(r).iter().copied());
                s.push('\n');
            }
            writeln!(s, "b {k}").unwrap();
            join(&mut s, &mut b.iter().copied());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut last_line = 0;
        let parse_err = |line: u64, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut next = |expect: &str| -> Result<(u64, Vec<String>)> {
            let (n, l) = lines.next().ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: last_line + 1,
                message: format!("unexpected end of file, expected {expect}"),
            })?;
            last_line = n;
            Ok((n, l.split_whitespace().map(str::to_string).collect()))
        };
        fn nums<T: std::str::FromStr>(
            tokens: &[String],
            line: u64,
            err: &dyn Fn(u64, String) -> Error,
        ) -> Result<Vec<T>> {
            tokens
                .iter()
                .map(|t| t.parse::<T>().map_err(|_| err(line, format!("cannot parse number '{t}'"))))
                .collect()
        }

        let (n, t) = next("version")?;
        if t.first().map(String::as_str) != Some("version") || t.len() != 2 {
            return Err(parse_err(n, "expected 'version <n>'".into()));
        }
        let version: u32 = nums(&t[1..], n, &parse_err)?[0];
        if version != FORMAT_VERSION {
            return Err(MlpError::VersionMismatch { found: version }.into());
        }

        let (n, t) = next("layers")?;
        if t.first().map(String::as_str) != Some("layers") {
            return Err(parse_err(n, "expected 'layers ...'".into()));
        }
        let sizes: Vec<usize> = nums(&t[1..], n, &parse_err)?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(MlpError::Dimension(format!("invalid layer sizes {sizes:?}")).into());
        }

        let mut norms = Vec::new();
        for (key, dim) in [("norm_in", sizes[0]), ("norm_out", *sizes.last().unwrap())] {
            let (n, t) = next(key)?;
            if t.first().map(String::as_str) != Some(key) {
                return Err(parse_err(n, format!("expected '{key} ...'")));
            }
            let v: Vec<f64> = nums(&t[1..], n, &parse_err)?;
            if v.len() != 2 * dim {
                return Err(MlpError::Dimension(format!("{key} has {} values, expected {}", v.len(), 2 * dim)).into());
            }
            norms.push(Normalizer {
                ranges: v.chunks(2).map(|c| (c[0], c[1])).collect(),
            });
        }

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (n, t) = next("weight block")?;
            if t != ["W".to_string(), k.to_string()] {
                return Err(parse_err(n, format!("expected 'W {k}'")));
            }
            let mut m = DMatrix::zeros(n_out, n_in);
            for r in 0..n_out {
                let (n, t) = next("weight row")?;
                let row: Vec<f64> = nums(&t, n, &parse_err)?;
                if row.len() != n_in {
                    return Err(MlpError::Dimension(format!("W {k} row {r} has {} values, expected {n_in}", row.len())).into());
                }
                for (c, v) in row.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            let (n, t) = next("bias block")?;
            if t != ["b".to_string(), k.to_string()] {
                return Err(parse_err(n, format!("expected 'b {k}'")));
            }
            let (n, t) = next("bias row")?;
            let b: Vec<f64> = nums(&t, n, &parse_err)?;
            if b.len() != n_out {
                return Err(MlpError::Dimension(format!("b {k} has {} values, expected {n_out}", b.len())).into());
            }
            weights.push(m);
            biases.push(DVector::from_vec(b));
        }
        if let Some((n, _)) = lines.next() {
            return Err(parse_err(n, "trailing content after the last layer".into()));
        }
        let norm_out = norms.pop().unwrap();
        let norm_in = norms.pop().unwrap();
        Self::new(Network::from_parts(weights, biases)?, norm_in, norm_out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub target_mse: f64,
    /// Multiplier applied to the learning rate after every accepted step.
    pub lr_growth: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: [16, 16],
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 200_000,
            target_mse: 1e-8,
            lr_growth: 1.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Normalised-unit MSE over the training set at the returned weights.
    pub final_mse: f64,
    pub epochs: usize,
    /// Relative error per training point and output.
    pub relative_errors: Vec<Vec<f64>>,
    /// Loss after each epoch (accepted or rejected steps keep the previous value).
    pub loss_history: Vec<f64>,
}

impl TrainReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

/// Per-point relative errors next to the inputs they were measured at.
pub fn write_train_report_csv<W: std::io::Write>(report: &TrainReport, inputs: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n_in = inputs.first().map_or(0, Vec::len);
    let n_out = report.relative_errors.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..n_in)
        .map(|i| format!("x{i}"))
        .chain((0..n_out).map(|j| format!("rel_err{j}")))
        .collect();
    w.write_record(&header)?;
    for (x, e) in inputs.iter().zip(&report.relative_errors) {
        w.write_record(x.iter().chain(e).map(|v| format!("{v:.12e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Relative error with the denominator floored at a tenth of the output's
/// range, so near-zero targets do not dominate.
pub fn relative_error(predicted: f64, target: f64, range: (f64, f64)) -> f64 {
    let floor = 0.1 * (range.1 - range.0).abs();
    let denom = target.abs().max(floor).max(1e-12);
    (predicted - target).abs() / denom
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows[0].len(), rows.len(), |r, c| rows[c][r])
}

pub fn train(inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<(GainSchedule, TrainReport)> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(MlpError::Dimension("inputs and targets must be non-empty and equally long".into()).into());
    }
    let (n_in, n_out) = (inputs[0].len(), targets[0].len());
    if inputs.iter().any(|r| r.len() != n_in) || targets.iter().any(|r| r.len() != n_out) {
        return Err(MlpError::Dimension("ragged training rows".into()).into());
    }
    if inputs.iter().chain(targets).flatten().any(|v| !v.is_finite()) {
        return Err(MlpError::Degenerate("non-finite training value".into()).into());
    }
    let mut distinct: Vec<&Vec<f64>> = inputs.iter().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(MlpError::Degenerate(format!("only {} distinct inputs", distinct.len())).into());
    }
    let norm_in = Normalizer::fit(inputs);
    if norm_in.ranges.iter().all(|(lo, hi)| hi <= lo) {
        return Err(MlpError::Degenerate("inputs span no envelope".into()).into());
    }
    let norm_out = Normalizer::fit(targets);

    let x = to_matrix(&inputs.iter().map(|r| norm_in.normalize(r)).collect::<Vec<_>>());
    let y = to_matrix(&targets.iter().map(|r| norm_out.normalize(r)).collect::<Vec<_>>());

    let mut sizes = vec![n_in];
    sizes.extend(cfg.hidden.iter().copied().filter(|&h| h > 0));
    sizes.push(n_out);
    let mut net = Network::new(&sizes, cfg.seed)?;

    let mut theta = net.params();
    let (mut loss, mut grad) = net.loss_and_gradient(&x, &y);
    if !loss.is_finite() {
        return Err(MlpError::NonFiniteLoss {
            epoch: 0,
            learning_rate: cfg.learning_rate,
        }
        .into());
    }
    let mut velocity = vec![0.0; theta.len()];
    let mut lr = cfg.learning_rate;
    let mut history = Vec::new();
    let mut epochs = 0;

    while epochs < cfg.max_epochs && loss > cfg.target_mse && lr > 1e-14 {
        epochs += 1;
        let trial_velocity: Vec<f64> = velocity
            .iter()
            .zip(&grad)
            .map(|(v, g)| cfg.momentum * v - lr * g)
            .collect();
        let trial: Vec<f64> = theta.iter().zip(&trial_velocity).map(|(t, v)| t + v).collect();
        net.set_params(&trial);
        let (trial_loss, trial_grad) = net.loss_and_gradient(&x, &y);
        if !trial_loss.is_finite() {
            return Err(MlpError::NonFiniteLoss {
                epoch: epochs,
                learning_rate: lr,
            }
            .into());
        }
        if trial_loss > loss {
            lr *= 0.5;
            velocity.iter_mut().for_each(|v| *v = 0.0);
            net.set_params(&theta);
        } else {
            theta = trial;
            velocity = trial_velocity;
            loss = trial_loss;
            grad = trial_grad;
            lr *= cfg.lr_growth;
        }
        history.push(loss);
    }
    net.set_params(&theta);

    let schedule = GainSchedule::new(net, norm_in, norm_out)?;
    let final_mse = schedule.network.loss(&x, &y);
    let relative_errors = schedule.relative_errors(inputs, targets);
    log::debug!("mlp training stopped after {epochs} epochs at mse {final_mse:.3e}");
    Ok((
        schedule,
        TrainReport {
            final_mse,
            epochs,
            relative_errors,
            loss_history: history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn affine_table() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let h = 1.3 + 0.925 * i as f64;
                let v = 0.725 * j as f64;
                xs.push(vec![h, v]);
                ys.push(vec![0.5 + 0.1 * h + 0.2 * v, 0.3 - 0.02 * h + 0.05 * v, 0.2 + 0.03 * v, 0.4 + 0.5 * v]);
            }
        }
        (xs, ys)
    }

    #[test]
    fn affine_target_is_learned() {
        let (xs, ys) = affine_table();
        let cfg = TrainConfig {
            target_mse: 1e-7,
            lr_growth: 1.01,
            ..TrainConfig::default()
        };
        let (_, report) = train(&xs, &ys, &cfg).unwrap();
        assert!(report.final_mse < 1e-6, "mse {}", report.final_mse);
    }

    #[test]
    fn loss_never_increases() {
        let (xs, ys) = affine_table();
        let cfg = TrainConfig {
            max_epochs: 3000,
            learning_rate: 0.5,
            lr_growth: 1.05,
            ..TrainConfig::default()
        };
        let (_, report) = train(&xs, &ys, &cfg).unwrap();
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn report_mse_matches_recomputation() {
        let (xs, ys) = affine_table();
        let (s, report) = train(&xs, &ys, &TrainConfig { max_epochs: 500, ..TrainConfig::default() }).unwrap();
        let mut sum = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let yn = s.norm_out.normalize(y);
            let pn = s.network.forward(&s.norm_in.normalize(x));
            sum += yn.iter().zip(&pn).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert_abs_diff_eq!(report.final_mse, sum / (xs.len() * 4) as f64, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (xs, ys) = affine_table();
        let mut ys = ys;
        // Non-affine targets exercise the hidden-layer curvature.
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            y[0] += (x[0] * x[1]).sin();
        }
        let norm_in = Normalizer::fit(&xs);
        let norm_out = Normalizer::fit(&ys);
        let x = to_matrix(&xs.iter().map(|r| norm_in.normalize(r)).collect::<Vec<_>>());
        let y = to_matrix(&ys.iter().map(|r| norm_out.normalize(r)).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = Network::new(&[2, 16, 16, 4], 3).unwrap();
        for _ in 0..10 {
            let mut net = base.clone();
            let p: Vec<f64> = net.params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            net.set_params(&p);
            let (_, grad) = net.loss_and_gradient(&x, &y);
            let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let h = 1e-5;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus[i] += h;
                let mut minus = p.clone();
                minus[i] -= h;
                net.set_params(&plus);
                let lp = net.loss(&x, &y);
                net.set_params(&minus);
                let lm = net.loss(&x, &y);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(1e-3 * scale).max(1e-12);
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = affine_table();
        let cfg = TrainConfig { max_epochs: 300, seed: 9, ..TrainConfig::default() };
        let (a, _) = train(&xs, &ys, &cfg).unwrap();
        let (b, _) = train(&xs, &ys, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inputs_below_the_envelope_are_clamped() {
        let (xs, ys) = affine_table();
        let (s, _) = train(&xs, &ys, &TrainConfig { max_epochs: 200, ..TrainConfig::default() }).unwrap();
        assert_eq!(s.predict(0.2, 1.0), s.predict(1.3, 1.0));
        assert_eq!(s.predict(10.0, 1.0), s.predict(5.0, 1.0));
        assert!(s.predict(3.0, 1.0).iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn hand_written_network_matches_hand_computation() {
        let text = "version 1\n\
                    layers 2 1\n\
                    norm_in 0 2 0 4\n\
                    norm_out -1 1\n\
                    W 0\n\
                    1.0 0.5\n\
                    b 0\n\
                    0.25\n";
        let s = GainSchedule::from_text(text, "inline").unwrap();
        // x = (1, 1) -> normalised (0.5, 0.25) -> 0.5 + 0.125 + 0.25 = 0.875 -> -1 + 0.875*2 = 0.75
        assert_abs_diff_eq!(s.predict_vec(&[1.0, 1.0])[0], 0.75, epsilon = 1e-15);
        // Negative outputs clamp to zero.
        assert_eq!(s.predict_vec(&[0.0, 0.0])[0], 0.0);
    }

    #[test]
    fn tanh_hidden_layer_by_hand() {
        let text = "version 1\nlayers 1 1 1\nnorm_in 0 1\nnorm_out 0 1\nW 0\n2.0\nb 0\n-0.5\nW 1\n3.0\nb 1\n0.1\n";
        let s = GainSchedule::from_text(text, "inline").unwrap();
        let expected = 3.0 * (2.0f64 * 0.4 - 0.5).tanh() + 0.1;
        assert_abs_diff_eq!(s.predict_vec(&[0.4])[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (xs, ys) = affine_table();
        let (s, _) = train(&xs, &ys, &TrainConfig { max_epochs: 300, ..TrainConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.txt");
        s.save(&path).unwrap();
        let back = GainSchedule::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (h, v) = (rng.random_range(0.0..6.0), rng.random_range(-0.5..3.5));
            assert_eq!(s.predict(h, v), back.predict(h, v));
        }
    }

    #[test]
    fn malformed_files_fail_cleanly() {
        let (xs, ys) = affine_table();
        let (s, _) = train(&xs, &ys, &TrainConfig { max_epochs: 10, ..TrainConfig::default() }).unwrap();
        let text = s.to_text();
        let truncated = &text[..text.len() / 2];
        assert!(GainSchedule::from_text(truncated, "t").is_err());
        let versioned = text.replacen("version 1", "version 2", 1);
        assert!(matches!(
            GainSchedule::from_text(&versioned, "t"),
            Err(Error::Mlp(MlpError::VersionMismatch { found: 2 }))
        ));
        let widened = text.replacen("layers 2 16 16 4", "layers 2 16 16 5", 1);
        assert!(GainSchedule::from_text(&widened, "t").is_err());
        let garbage = text.replacen("W 0\n", "W 0\nnot-a-number ", 1);
        assert!(matches!(GainSchedule::from_text(&garbage, "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn degenerate_tables_are_rejected() {
        let xs = vec![vec![1.0, 1.0]; 6];
        let ys = vec![vec![0.0; 4]; 6];
        assert!(train(&xs, &ys, &TrainConfig::default()).is_err());
    }
}
