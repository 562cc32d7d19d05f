//! Invertible layers: affine coupling and elementwise affine.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::mlp::{Mlp, MlpCache};

/// Log-scales are squashed to `(-SCALE_BOUND, SCALE_BOUND)`.
pub const SCALE_BOUND: f64 = 2.0;

/// Affine coupling layer.
///
/// Coordinates with index parity `parity` pass through unchanged and condition
/// an MLP that emits a bounded log-scale and a shift for the other coordinates:
/// `x_A = z_A * exp(s(z_P)) + t(z_P)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoupling {
    pub(crate) dim: usize,
    pub(crate) parity: usize,
    pub(crate) passive: Vec<usize>,
    pub(crate) active: Vec<usize>,
    pub(crate) conditioner: Mlp,
}

/// Per-coordinate `x = z * exp(log_scale) + shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementwiseAffine {
    pub(crate) log_scale: Array1<f64>,
    pub(crate) shift: Array1<f64>,
}

/// `x = L z + shift` with `L` lower triangular and a positive diagonal
/// `exp(log_diag)`. Only the strictly lower part of `lower` is read.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerLinear {
    pub(crate) log_diag: Array1<f64>,
    pub(crate) lower: Array2<f64>,
    pub(crate) shift: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Coupling(AffineCoupling),
    Affine(ElementwiseAffine),
    Linear(LowerLinear),
}

pub(crate) enum LayerCache {
    Coupling {
        mlp: MlpCache,
        /// bounded log-scales
        s: Array2<f64>,
        /// active part of the layer output (base side)
        z_active: Array2<f64>,
    },
    /// layer output only
    Output {
        z: Array2<f64>,
    },
}

fn split_indices(dim: usize, parity: usize) -> (Vec<usize>, Vec<usize>) {
    (0..dim).partition(|j| j % 2 == parity)
}

#[inline]
fn bound(raw: f64) -> f64 {
    SCALE_BOUND * (raw / SCALE_BOUND).tanh()
}

impl AffineCoupling {
    pub fn new<R: Rng + ?Sized>(dim: usize, parity: usize, hidden: usize, rng: &mut R) -> Self {
        let (passive, active) = split_indices(dim, parity);
        let conditioner = Mlp::new(passive.len(), hidden, 2 * active.len(), rng);
        Self {
            dim,
            parity,
            passive,
            active,
            conditioner,
        }
    }

    /// Rebuilds the index split for a given conditioner (used when loading).
    pub(crate) fn from_parts(dim: usize, parity: usize, conditioner: Mlp) -> Self {
        let (passive, active) = split_indices(dim, parity);
        Self {
            dim,
            parity,
            passive,
            active,
            conditioner,
        }
    }

    fn scale_shift(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let na = self.active.len();
        let s = out.slice(ndarray::s![.., ..na]).mapv(bound);
        let t = out.slice(ndarray::s![.., na..]).to_owned();
        (s, t)
    }

    fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let zp = z.select(Axis(1), &self.passive);
        let (s, t) = self.scale_shift(&self.conditioner.forward(&zp));
        let mut x = z.clone();
        for (k, &j) in self.active.iter().enumerate() {
            let mut col = x.column_mut(j);
            let (sc, tc) = (s.column(k), t.column(k));
            for b in 0..col.len() {
                col[b] = col[b] * sc[b].exp() + tc[b];
            }
        }
        (x, s.sum_axis(Axis(1)))
    }

    fn inverse(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let (z, ld, _) = self.inverse_impl(x, false);
        (z, ld)
    }

    fn inverse_impl(&self, x: &Array2<f64>, keep: bool) -> (Array2<f64>, Array1<f64>, Option<LayerCache>) {
        let xp = x.select(Axis(1), &self.passive);
        let (out, cache) = if keep {
            let (o, c) = self.conditioner.forward_cached(xp);
            (o, Some(c))
        } else {
            (self.conditioner.forward(&xp), None)
        };
        let (s, t) = self.scale_shift(&out);
        let mut z = x.clone();
        let mut z_active = Array2::zeros((x.nrows(), self.active.len()));
        for (k, &j) in self.active.iter().enumerate() {
            let mut col = z.column_mut(j);
            let (sc, tc) = (s.column(k), t.column(k));
            for b in 0..col.len() {
                col[b] = (col[b] - tc[b]) * (-sc[b]).exp();
                z_active[[b, k]] = col[b];
            }
        }
        let ld = -s.sum_axis(Axis(1));
        let cache = cache.map(|mlp| LayerCache::Coupling { mlp, s, z_active });
        (z, ld, cache)
    }

    /// Backward pass of the inverse direction. `g_z` is dLoss/dz for the
    /// layer output, `g_ld` is dLoss/dlogdet (same for every row).
    fn inverse_backward(
        &self,
        cache: &LayerCache,
        g_z: &Array2<f64>,
        g_ld: f64,
        grad: &mut AffineCoupling,
    ) -> Array2<f64> {
        let LayerCache::Coupling { mlp, s, z_active } = cache else {
            unreachable!("cache kind mismatch")
        };
        let rows = g_z.nrows();
        let na = self.active.len();
        let mut g_x = g_z.clone();
        let mut g_out = Array2::zeros((rows, 2 * na));
        for (k, &j) in self.active.iter().enumerate() {
            for b in 0..rows {
                let inv = (-s[[b, k]]).exp();
                let gz = g_z[[b, j]];
                g_x[[b, j]] = gz * inv;
                // d z_A / d t = -exp(-s);  d z_A / d s = -z_A;  d ld / d s = -1
                let g_s = -gz * z_active[[b, k]] - g_ld;
                let r = s[[b, k]] / SCALE_BOUND;
                g_out[[b, k]] = g_s * (1.0 - r * r);
                g_out[[b, na + k]] = -gz * inv;
            }
        }
        let g_in = self.conditioner.backward(mlp, &g_out, &mut grad.conditioner);
        for (k, &j) in self.passive.iter().enumerate() {
            g_x.column_mut(j).zip_mut_with(&g_in.column(k), |a, b| *a += b);
        }
        g_x
    }
}

impl ElementwiseAffine {
    pub fn identity(dim: usize) -> Self {
        Self {
            log_scale: Array1::zeros(dim),
            shift: Array1::zeros(dim),
        }
    }

    fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let scale = self.log_scale.mapv(f64::exp);
        let x = z * &scale + &self.shift;
        let ld = Array1::from_elem(z.nrows(), self.log_scale.sum());
        (x, ld)
    }

    fn inverse(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let inv = self.log_scale.mapv(|l| (-l).exp());
        let z = (x - &self.shift) * &inv;
        let ld = Array1::from_elem(x.nrows(), -self.log_scale.sum());
        (z, ld)
    }

    fn inverse_backward(
        &self,
        cache: &LayerCache,
        g_z: &Array2<f64>,
        g_ld: f64,
        grad: &mut ElementwiseAffine,
    ) -> Array2<f64> {
        let LayerCache::Output { z } = cache else {
            unreachable!("cache kind mismatch")
        };
        let inv = self.log_scale.mapv(|l| (-l).exp());
        let g_x = g_z * &inv;
        grad.shift -= &g_x.sum_axis(Axis(0));
        let rows = g_z.nrows() as f64;
        grad.log_scale -= &((g_z * z).sum_axis(Axis(0)) + rows * g_ld);
        g_x
    }
}

impl LowerLinear {
    pub fn identity(dim: usize) -> Self {
        Self {
            log_diag: Array1::zeros(dim),
            lower: Array2::zeros((dim, dim)),
            shift: Array1::zeros(dim),
        }
    }

    /// Builds the layer from a lower-triangular factor with positive diagonal.
    pub fn from_factor(factor: &Array2<f64>, shift: Array1<f64>) -> Self {
        let n = shift.len();
        assert_eq!(factor.dim(), (n, n));
        let mut lower = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..i {
                lower[[i, j]] = factor[[i, j]];
            }
        }
        Self {
            log_diag: factor.diag().mapv(f64::ln),
            lower,
            shift,
        }
    }

    /// The full triangular matrix `L`.
    pub fn matrix(&self) -> Array2<f64> {
        let n = self.log_diag.len();
        Array2::from_shape_fn((n, n), |(i, j)| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lower[[i, j]],
            std::cmp::Ordering::Equal => self.log_diag[i].exp(),
            std::cmp::Ordering::Less => 0.0,
        })
    }

    fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let x = z.dot(&self.matrix().t()) + &self.shift;
        (x, Array1::from_elem(z.nrows(), self.log_diag.sum()))
    }

    fn inverse(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let n = self.log_diag.len();
        let diag = self.log_diag.mapv(f64::exp);
        let mut z = x - &self.shift;
        for mut row in z.rows_mut() {
            let r = row.as_slice_mut().expect("contiguous rows");
            for i in 0..n {
                let li = self.lower.row(i);
                let li = li.as_slice().expect("contiguous rows");
                let mut acc = r[i];
                for j in 0..i {
                    acc -= li[j] * r[j];
                }
                r[i] = acc / diag[i];
            }
        }
        (z, Array1::from_elem(x.nrows(), -self.log_diag.sum()))
    }

    fn inverse_backward(
        &self,
        cache: &LayerCache,
        g_z: &Array2<f64>,
        g_ld: f64,
        grad: &mut LowerLinear,
    ) -> Array2<f64> {
        let LayerCache::Output { z } = cache else {
            unreachable!("cache kind mismatch")
        };
        let n = self.log_diag.len();
        let diag = self.log_diag.mapv(f64::exp);
        // g_x = L^{-T} g_z, by back substitution
        let mut g_x = g_z.clone();
        for mut row in g_x.rows_mut() {
            let r = row.as_slice_mut().expect("contiguous rows");
            for i in (0..n).rev() {
                let mut acc = r[i];
                for j in i + 1..n {
                    acc -= self.lower[[j, i]] * r[j];
                }
                r[i] = acc / diag[i];
            }
        }
        // z = L^{-1}(x - shift): dz = -L^{-1} dL z, dz/dshift = -L^{-1}
        let outer = g_x.t().dot(z);
        for i in 0..n {
            for j in 0..i {
                grad.lower[[i, j]] -= outer[[i, j]];
            }
            grad.log_diag[i] -= diag[i] * outer[[i, i]] + z.nrows() as f64 * g_ld;
        }
        grad.shift -= &g_x.sum_axis(Axis(0));
        g_x
    }
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::Coupling(c) => c.dim,
            Layer::Affine(a) => a.log_scale.len(),
            Layer::Linear(a) => a.log_diag.len(),
        }
    }

    pub fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        match self {
            Layer::Coupling(c) => c.forward(z),
            Layer::Affine(a) => a.forward(z),
            Layer::Linear(a) => a.forward(z),
        }
    }

    pub fn inverse(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        match self {
            Layer::Coupling(c) => c.inverse(x),
            Layer::Affine(a) => a.inverse(x),
            Layer::Linear(a) => a.inverse(x),
        }
    }

    pub(crate) fn inverse_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>, LayerCache) {
        match self {
            Layer::Coupling(c) => {
                let (z, ld, cache) = c.inverse_impl(x, true);
                (z, ld, cache.unwrap())
            }
            Layer::Affine(a) => {
                let (z, ld) = a.inverse(x);
                (z.clone(), ld, LayerCache::Output { z })
            }
            Layer::Linear(a) => {
                let (z, ld) = a.inverse(x);
                (z.clone(), ld, LayerCache::Output { z })
            }
        }
    }

    pub(crate) fn inverse_backward(
        &self,
        cache: &LayerCache,
        g_z: &Array2<f64>,
        g_ld: f64,
        grad: &mut Layer,
    ) -> Array2<f64> {
        match (self, grad) {
            (Layer::Coupling(c), Layer::Coupling(g)) => c.inverse_backward(cache, g_z, g_ld, g),
            (Layer::Affine(a), Layer::Affine(g)) => a.inverse_backward(cache, g_z, g_ld, g),
            (Layer::Linear(a), Layer::Linear(g)) => a.inverse_backward(cache, g_z, g_ld, g),
            _ => unreachable!("gradient structure mismatch"),
        }
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Coupling(c) => c.conditioner.params().to_vec(),
            Layer::Affine(a) => vec![a.log_scale.as_slice().unwrap(), a.shift.as_slice().unwrap()],
            Layer::Linear(a) => vec![
                a.log_diag.as_slice().unwrap(),
                a.lower.as_slice().unwrap(),
                a.shift.as_slice().unwrap(),
            ],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Coupling(c) => c.conditioner.params_mut().into_iter().collect(),
            Layer::Affine(a) => vec![
                a.log_scale.as_slice_mut().unwrap(),
                a.shift.as_slice_mut().unwrap(),
            ],
            Layer::Linear(a) => vec![
                a.log_diag.as_slice_mut().unwrap(),
                a.lower.as_slice_mut().unwrap(),
                a.shift.as_slice_mut().unwrap(),
            ],
        }
    }
}
