//! Two-hidden-layer tanh MLP used as the coupling conditioner.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
    pub(crate) w3: Array2<f64>,
    pub(crate) b3: Array1<f64>,
}

pub(crate) struct MlpCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
}

impl Mlp {
    /// Hidden layers get variance `1/fan_in`; the output layer starts at
    /// zero so the whole network initially emits zeros.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut dense = |rows: usize, cols: usize| {
            let scale = (1.0 / rows.max(1) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || {
                scale * rng.sample::<f64, _>(StandardNormal)
            })
        };
        let w1 = dense(input, hidden);
        let w2 = dense(hidden, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(hidden),
            w3: Array2::zeros((hidden, output)),
            b3: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w3.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let h1 = (x.dot(&self.w1) + &self.b1).mapv_into(f64::tanh);
        let h2 = (h1.dot(&self.w2) + &self.b2).mapv_into(f64::tanh);
        h2.dot(&self.w3) + &self.b3
    }

    pub(crate) fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let h1 = (x.dot(&self.w1) + &self.b1).mapv_into(f64::tanh);
        let h2 = (h1.dot(&self.w2) + &self.b2).mapv_into(f64::tanh);
        let out = h2.dot(&self.w3) + &self.b3;
        (out, MlpCache { input: x, h1, h2 })
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    pub(crate) fn backward(&self, cache: &MlpCache, g_out: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        grad.w3 += &cache.h2.t().dot(g_out);
        grad.b3 += &g_out.sum_axis(Axis(0));
        let mut g = g_out.dot(&self.w3.t());
        g.zip_mut_with(&cache.h2, |g, h| *g *= 1.0 - h * h);
        grad.w2 += &cache.h1.t().dot(&g);
        grad.b2 += &g.sum_axis(Axis(0));
        let mut g1 = g.dot(&self.w2.t());
        g1.zip_mut_with(&cache.h1, |g, h| *g *= 1.0 - h * h);
        grad.w1 += &cache.input.t().dot(&g1);
        grad.b1 += &g1.sum_axis(Axis(0));
        g1.dot(&self.w1.t())
    }

    #[cfg(test)]
    pub(crate) fn zero(&mut self) {
        for s in self.params_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub(crate) fn params(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
        ]
    }
}
