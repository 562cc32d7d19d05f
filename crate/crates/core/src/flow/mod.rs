//! Normalizing flows over `R^N` with a standard-normal base.
//!
//! A [`FlowModel`] is an ordered stack of invertible layers `g_1 .. g_L`.
//! `forward` maps base draws to data space, `inverse` maps data back to the
//! base; both return the log-determinant of the Jacobian of the direction
//! taken, so `log_prob(x) = log N(inverse(x)) + logdet_inverse(x)`.

mod io;
mod layers;
mod mlp;
mod train;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load, load_with_dim, save, MAGIC, FORMAT_VERSION};
pub use layers::{AffineCoupling, ElementwiseAffine, Layer, LowerLinear, SCALE_BOUND};
pub use mlp::Mlp;
pub use train::{train, write_loss_csv, DataInit, LossCurve, LossPoint, TrainConfig, TrainOutcome};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Free-form provenance recorded alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMetadata {
    /// Input channel the model was trained for (1 = steering rate, 2 = acceleration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u8>,
    /// Dataset generator, e.g. `"a2df"` or `"ail"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    /// Generator parameters as JSON text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    dim: usize,
    layers: Vec<Layer>,
    pub metadata: FlowMetadata,
}

impl FlowModel {
    /// `coupling_layers` coupling layers with alternating masks, all at the
    /// identity.
    pub fn new<R: Rng + ?Sized>(dim: usize, coupling_layers: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("flow dimension must be >= 2, got {dim}")));
        }
        if hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        let layers = (0..coupling_layers)
            .map(|l| Layer::Coupling(AffineCoupling::new(dim, l % 2, hidden, rng)))
            .collect();
        Ok(Self {
            dim,
            layers,
            metadata: FlowMetadata::default(),
        })
    }

    pub fn from_layers(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if let Some(bad) = layers.iter().find(|l| l.dim() != dim) {
            return Err(Error::InvalidParameter(format!(
                "layer dimension {} does not match flow dimension {dim}",
                bad.dim()
            )));
        }
        Ok(Self {
            dim,
            layers,
            metadata: FlowMetadata::default(),
        })
    }

    /// Identity model consisting only of an elementwise affine layer.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            layers: vec![Layer::Affine(ElementwiseAffine::identity(dim))],
            metadata: FlowMetadata::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    fn check_cols(&self, m: &Array2<f64>) -> Result<()> {
        if m.ncols() != self.dim {
            return Err(Error::LengthMismatch {
                what: "flow input dimension",
                expected: self.dim,
                actual: m.ncols(),
            });
        }
        Ok(())
    }

    /// Base to data for a batch of rows.
    pub fn forward_batch(&self, z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_cols(z)?;
        let mut x = z.clone();
        let mut ld = Array1::zeros(z.nrows());
        for layer in &self.layers {
            let (y, l) = layer.forward(&x);
            x = y;
            ld += &l;
        }
        Ok((x, ld))
    }

    /// Data to base for a batch of rows.
    pub fn inverse_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_cols(x)?;
        let mut z = x.clone();
        let mut ld = Array1::zeros(x.nrows());
        for layer in self.layers.iter().rev() {
            let (y, l) = layer.inverse(&z);
            z = y;
            ld += &l;
        }
        Ok((z, ld))
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, ld) = self.forward_batch(&row(z))?;
        Ok((x.into_raw_vec(), ld[0]))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.inverse_batch(&row(x))?;
        Ok((z.into_raw_vec(), ld[0]))
    }

    pub fn log_prob_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, ld) = self.inverse_batch(x)?;
        Ok(base_log_prob(&z) + ld)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_prob_batch(&row(x))?[0])
    }

    /// Pushes `k` standard-normal draws through the flow.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Array2<f64> {
        let z = Array2::from_shape_simple_fn((k, self.dim), || rng.sample::<f64, _>(StandardNormal));
        self.forward_batch(&z).expect("dimension matches by construction").0
    }

    /// Mean negative log-likelihood of `x` and its gradient with respect to
    /// every parameter, returned as a model-shaped gradient.
    pub fn nll_and_grad(&self, x: &Array2<f64>) -> Result<(f64, FlowModel)> {
        self.check_cols(x)?;
        let rows = x.nrows();
        if rows == 0 {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut z = x.clone();
        let mut ld = Array1::<f64>::zeros(rows);
        for layer in self.layers.iter().rev() {
            let (y, l, c) = layer.inverse_cached(&z);
            z = y;
            ld += &l;
            caches.push(c);
        }
        let nll = -(base_log_prob(&z) + ld).mean().unwrap();

        let mut grad = self.zeros_like();
        let inv_b = 1.0 / rows as f64;
        let mut g = z * inv_b;
        let g_ld = -inv_b;
        // caches were pushed from the last layer down to the first
        for (idx, cache) in caches.iter().enumerate().rev() {
            let li = self.layers.len() - 1 - idx;
            g = self.layers[li].inverse_backward(cache, &g, g_ld, &mut grad.layers[li]);
        }
        Ok((nll, grad))
    }

    pub fn mean_nll(&self, x: &Array2<f64>) -> Result<f64> {
        Ok(-self.log_prob_batch(x)?.mean().unwrap_or(f64::NAN))
    }

    pub fn zeros_like(&self) -> FlowModel {
        let mut g = self.clone();
        for s in g.params_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        g
    }

    /// Parameter slices in a fixed order shared with [`Self::params_mut`].
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|s| s.len()).sum()
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

/// Row-wise log-density of the standard normal.
pub fn base_log_prob(z: &Array2<f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.map_axis(Axis(1), |r| -0.5 * (r.dot(&r) + d * LN_2PI))
}
