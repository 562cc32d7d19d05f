//! Maximum-likelihood training with Adam and early stopping on held-out NLL.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ElementwiseAffine, FlowModel, Layer, LowerLinear};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataInit {
    None,
    /// Per-coordinate mean and standard deviation.
    Marginal,
    /// Mean and Cholesky factor of the covariance.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Upper bound on gradient steps.
    pub max_steps: usize,
    /// Steps without a new best test loss before stopping.
    pub patience: usize,
    /// Fraction of rows used for training; the rest is the test split.
    pub train_fraction: f64,
    /// Rows per step; `None` means full batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub coupling_layers: usize,
    pub hidden: usize,
    /// Data-side layer fitted to the training split before the first step
    /// and held fixed during training.
    pub data_init: DataInit,
    /// Fit the data-side layer about the origin instead of the sample mean.
    /// Suits data whose generator is zero-mean by construction.
    pub zero_mean: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 1100,
            patience: 50,
            train_fraction: 0.6,
            batch_size: None,
            learning_rate: 1e-3,
            coupling_layers: 16,
            hidden: 128,
            data_init: DataInit::Gaussian,
            zero_mean: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Stable hex digest of the configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub train_nll: f64,
    pub test_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn initial_test(&self) -> Option<f64> {
        self.points.first().map(|p| p.test_nll)
    }

    pub fn best_test(&self) -> Option<f64> {
        self.points.iter().map(|p| p.test_nll).reduce(f64::min)
    }

    /// Running minimum of the test loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.points
            .iter()
            .scan(f64::INFINITY, |m, p| {
                *m = m.min(p.test_nll);
                Some(*m)
            })
            .collect()
    }
}

pub fn write_loss_csv(curve: &LossCurve, path: &Path) -> Result<()> {
    let mut out = String::from("step,train_nll,test_nll\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.step, p.train_nll, p.test_nll));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest test loss.
    pub model: FlowModel,
    pub curve: LossCurve,
    pub best_step: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &FlowModel, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.params().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut FlowModel, grad: &FlowModel) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grad.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn split_rows(data: &Array2<f64>, cfg: &TrainConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows = data.nrows();
    let n_train = (rows as f64 * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train == rows {
        return Err(Error::InvalidParameter(format!(
            "cannot split {rows} rows with train fraction {}",
            cfg.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut rng_from_seed(cfg.seed ^ 0x5EED_5917));
    Ok((
        data.select(Axis(0), &idx[..n_train]),
        data.select(Axis(0), &idx[n_train..]),
    ))
}

fn column_means(train: &Array2<f64>, zero_mean: bool) -> Array1<f64> {
    if zero_mean {
        Array1::zeros(train.ncols())
    } else {
        train.mean_axis(Axis(0)).expect("non-empty")
    }
}

fn moment_affine(train: &Array2<f64>, zero_mean: bool) -> ElementwiseAffine {
    let mean = column_means(train, zero_mean);
    let std = (train - &mean)
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .expect("non-empty")
        .mapv(|v| v.sqrt().max(1e-6));
    ElementwiseAffine {
        log_scale: std.mapv(f64::ln),
        shift: mean,
    }
}

fn gaussian_fit(train: &Array2<f64>, zero_mean: bool) -> Result<LowerLinear> {
    let n = train.ncols();
    let mean = column_means(train, zero_mean);
    let centered = train - &mean;
    let mut cov = centered.t().dot(&centered) / train.nrows() as f64;
    // small ridge keeps the factor well defined when rows < dim or columns are constant
    let ridge = 1e-6 * cov.diag().mean().unwrap_or(1.0).max(1e-12);
    cov.diag_mut().mapv_inplace(|v| v + ridge);
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cov[[i, j]]);
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::InvalidParameter("training covariance is not positive definite".into()))?;
    let l = chol.l();
    let factor = Array2::from_shape_fn((n, n), |(i, j)| l[(i, j)]);
    Ok(LowerLinear::from_factor(&factor, mean))
}

/// Trains a flow on the rows of `data` (B x N).
pub fn train(data: &Array2<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.nrows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rows to train, got {}",
            data.nrows()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "training data" });
    }
    let (train_rows, test_rows) = split_rows(data, cfg)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut model = FlowModel::new(data.ncols(), cfg.coupling_layers, cfg.hidden, &mut rng)?;
    match cfg.data_init {
        DataInit::None => {}
        DataInit::Marginal => model.layers_mut().push(Layer::Affine(moment_affine(&train_rows, cfg.zero_mean))),
        DataInit::Gaussian => model.layers_mut().push(Layer::Linear(gaussian_fit(&train_rows, cfg.zero_mean)?)),
    }
    model.metadata.train_config_hash = Some(cfg.digest());
    // the fitted data-side layer stays fixed; only the couplings are trained
    let frozen = (cfg.data_init != DataInit::None).then(|| model.layers().len() - 1);

    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut curve = LossCurve::default();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut stopped_early = false;
    let batch = cfg.batch_size.filter(|&b| b < train_rows.nrows());
    let mut order: Vec<usize> = (0..train_rows.nrows()).collect();

    for step in 0..=cfg.max_steps {
        let (train_nll, grad) = match batch {
            None => model.nll_and_grad(&train_rows)?,
            Some(b) => {
                order.shuffle(&mut rng);
                model.nll_and_grad(&train_rows.select(Axis(0), &order[..b]))?
            }
        };
        let test_nll = model.mean_nll(&test_rows)?;
        if !train_nll.is_finite() || !test_nll.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                reason: format!("train nll {train_nll}, test nll {test_nll}"),
            });
        }
        curve.points.push(LossPoint {
            step,
            train_nll,
            test_nll,
        });
        if test_nll < best.0 {
            best = (test_nll, step, model.clone());
        } else if step - best.1 >= cfg.patience {
            stopped_early = true;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        let mut grad = grad;
        if let Some(i) = frozen {
            for p in grad.layers_mut()[i].params_mut() {
                p.fill(0.0);
            }
        }
        adam.step(&mut model, &grad);
    }
    log::debug!(
        "flow training finished: best test nll {:.4} at step {}, {} steps recorded",
        best.0,
        best.1,
        curve.points.len()
    );
    Ok(TrainOutcome {
        model: best.2,
        curve,
        best_step: best.1,
        stopped_early,
    })
}
