//! The regression task: synthetic data `y = x1 + x2 + 1`, a linear model
//! with three parameters, squared-error gradients, and the two optimizers.

use std::io::{Read, Write};
use std::ops::{Deref, DerefMut, Range};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model dimension: two weights and a bias.
pub const MODEL_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(dim: usize) -> Self {
        GradientVector(vec![0.0; dim])
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn add_assign(&mut self, other: &GradientVector) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scaled(&self, factor: f64) -> GradientVector {
        GradientVector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradientVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(v: Vec<f64>) -> Self {
        GradientVector(v)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: [f64; 2],
    pub bias: f64,
}

impl ModelParams {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values {
            [w1, w2, b] => Ok(ModelParams {
                weights: [*w1, *w2],
                bias: *b,
            }),
            _ => Err(Error::invalid(format!(
                "model has {MODEL_DIM} parameters, got {}",
                values.len()
            ))),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.weights[0], self.weights[1], self.bias]
    }

    pub fn predict(&self, x: [f64; 2]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Which portion of the dataset to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<[f64; 2]>,
    pub labels: Vec<f64>,
    train: Range<usize>,
    validation: Range<usize>,
    test: Range<usize>,
}

fn split_ranges(n: usize) -> (Range<usize>, Range<usize>, Range<usize>) {
    let train = n * 6 / 10;
    let validation = n * 2 / 10;
    (0..train, train..train + validation, train + validation..n)
}

impl Dataset {
    /// Builds a dataset from rows in order, applying the 60/20/20 split.
    pub fn from_rows(features: Vec<[f64; 2]>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid("features and labels differ in length"));
        }
        if features.len() < 5 {
            return Err(Error::invalid("need at least 5 samples so every split is non-empty"));
        }
        let (train, validation, test) = split_ranges(features.len());
        Ok(Dataset {
            features,
            labels,
            train,
            validation,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x1", "x2", "y"])?;
        for (x, y) in self.features.iter().zip(&self.labels) {
            w.write_record([x[0].to_string(), x[1].to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for record in r.deserialize() {
            let (x1, x2, y): (f64, f64, f64) = record?;
            features.push([x1, x2]);
            labels.push(y);
        }
        Dataset::from_rows(features, labels)
    }
}

/// `n_samples` rows with features uniform on `[0, 1)^2` and
/// `y = x1 + x2 + 1`.
pub fn generate_dataset<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> Result<Dataset> {
    let features: Vec<[f64; 2]> = (0..n_samples)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let labels = features.iter().map(|x| x[0] + x[1] + 1.0).collect();
    Dataset::from_rows(features, labels)
}

/// Contiguous equal blocks of `range`; the last client absorbs the remainder.
pub fn partition_iid(range: Range<usize>, n_clients: usize) -> Result<Vec<Range<usize>>> {
    let total = range.len();
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if n_clients > total {
        return Err(Error::invalid(format!(
            "{n_clients} clients but only {total} training samples"
        )));
    }
    let block = total / n_clients;
    Ok((0..n_clients)
        .map(|i| {
            let start = range.start + i * block;
            let end = if i + 1 == n_clients { range.end } else { start + block };
            start..end
        })
        .collect())
}

/// Gradient of `½(ŷ - y)²` with `ŷ = w·x + b`.
pub fn per_sample_gradient(params: &ModelParams, x: [f64; 2], y: f64) -> GradientVector {
    let residual = params.predict(x) - y;
    GradientVector(vec![residual * x[0], residual * x[1], residual])
}

pub fn half_squared_error(params: &ModelParams, x: [f64; 2], y: f64) -> f64 {
    let r = params.predict(x) - y;
    0.5 * r * r
}

/// Mean gradient over `rows` of the dataset.
pub fn mean_gradient(params: &ModelParams, data: &Dataset, rows: Range<usize>) -> GradientVector {
    let n = rows.len() as f64;
    let mut acc = GradientVector::zeros(MODEL_DIM);
    for i in rows {
        acc.add_assign(&per_sample_gradient(params, data.features[i], data.labels[i]));
    }
    acc.scaled(1.0 / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }

    /// Adam with (β1, β2, ε) = (0.9, 0.999, 1e-8).
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        OptimizerState {
            kind,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One optimizer step along `direction`.
pub fn apply_update(
    params: &ModelParams,
    opt: &mut OptimizerState,
    direction: &GradientVector,
) -> Result<ModelParams> {
    if direction.len() != MODEL_DIM || opt.first_moment.len() != MODEL_DIM {
        return Err(Error::invalid(format!(
            "update direction has dimension {}, model has {MODEL_DIM}",
            direction.len()
        )));
    }
    let theta = params.to_vec();
    opt.step += 1;
    let next: Vec<f64> = match opt.kind {
        OptimizerKind::Sgd { lr } => theta.iter().zip(direction.iter()).map(|(t, g)| t - lr * g).collect(),
        OptimizerKind::Adam { lr, beta1, beta2, eps } => {
            let t = opt.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            theta
                .iter()
                .zip(direction.iter())
                .zip(opt.first_moment.iter_mut().zip(opt.second_moment.iter_mut()))
                .map(|((theta, g), (m, v))| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    theta - lr * m_hat / (v_hat.sqrt() + eps)
                })
                .collect()
        }
    };
    ModelParams::from_slice(&next)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub r_squared: f64,
}

/// Plain mean squared error and the coefficient of determination.
pub fn evaluate(params: &ModelParams, data: &Dataset, split: Split) -> Result<Evaluation> {
    let rows = data.range(split);
    if rows.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let n = rows.len() as f64;
    let labels = &data.labels[rows.clone()];
    let mean = labels.iter().sum::<f64>() / n;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateLabels);
    }
    let ss_res: f64 = rows
        .map(|i| (params.predict(data.features[i]) - data.labels[i]).powi(2))
        .sum();
    Ok(Evaluation {
        mse: ss_res / n,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}
