use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamStore, Slot};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x W + b` with `W` stored `(in, out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: Slot,
    pub b: Slot,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Self {
            w: store.add_matrix(format!("{name}.weight"), input, output),
            b: store.add_vector(format!("{name}.bias"), output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.rows
    }

    pub fn output(&self) -> usize {
        self.w.cols
    }

    /// Uniform in `±sqrt(1 / fan_in)` for weights and bias.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = (1.0 / self.input() as f64).sqrt();
        store.fill_uniform(self.w, bound, rng);
        store.fill_uniform(self.b, bound, rng);
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.mat(p));
        y += &self.b.vec(p);
        y
    }

    /// Accumulate parameter gradients into `g`; returns `dL/dx` when asked.
    pub fn backward(
        &self,
        p: &[f64],
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        g: &mut [f64],
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut self.w.mat_mut(g));
        self.b.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        want_dx.then(|| dy.dot(&self.w.mat(p).t()))
    }
}

/// Row-wise normalization with learned scale and shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub scale: Slot,
    pub shift: Slot,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            scale: store.add_vector(format!("{name}.scale"), width),
            shift: store.add_vector(format!("{name}.shift"), width),
        }
    }

    pub fn width(&self) -> usize {
        self.scale.cols
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.fill(self.scale, 1.0);
        store.fill(self.shift, 0.0);
    }

    pub fn forward(&self, p: &[f64], x: Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let w = x.ncols() as f64;
        let mut xhat = x;
        let mut inv_std = Array1::zeros(xhat.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / w;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / w;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *s;
        }
        let mut y = &xhat * &self.scale.vec(p);
        y += &self.shift.vec(p);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], cache: &LayerNormCache, dy: ArrayView2<'_, f64>, g: &mut [f64]) -> Array2<f64> {
        self.scale
            .vec_mut(g)
            .scaled_add(1.0, &(&dy * &cache.xhat).sum_axis(Axis(0)));
        self.shift.vec_mut(g).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let w = dy.ncols() as f64;
        let mut dx = &dy * &self.scale.vec(p);
        for ((mut row, xh), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean = row.sum() / w;
            let proj = row.dot(&xh) / w;
            for (d, &x) in row.iter_mut().zip(xh) {
                *d = s * (*d - mean - x * proj);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    /// Layer normalization on the output.
    pub layer_norm: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.input == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::Config(format!("invalid MLP {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = (self.input + 1) * self.hidden;
        n += (self.layers - 2) * (self.hidden + 1) * self.hidden;
        n += (self.hidden + 1) * self.output;
        if self.layer_norm {
            n += 2 * self.output;
        }
        n
    }
}

/// Dense layers with relu between them and optional trailing layer norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub dense: Vec<Dense>,
    pub norm: Option<LayerNorm>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every dense layer (post-relu for all but the first).
    inputs: Vec<Array2<f64>>,
    norm: Option<LayerNormCache>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut dense = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let input = if l == 0 { spec.input } else { spec.hidden };
            let output = if l + 1 == spec.layers { spec.output } else { spec.hidden };
            dense.push(Dense::new(store, &format!("{name}.{l}"), input, output));
        }
        let norm = spec
            .layer_norm
            .then(|| LayerNorm::new(store, &format!("{name}.norm"), spec.output));
        Ok(Self { spec, dense, norm })
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for d in &self.dense {
            d.init(store, rng);
        }
        if let Some(n) = &self.norm {
            n.init(store);
        }
    }

    pub fn last(&self) -> Dense {
        *self.dense.last().expect("MLP has layers")
    }

    pub fn forward(&self, p: &[f64], x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        debug_assert_eq!(x.ncols(), self.spec.input);
        let mut inputs = Vec::with_capacity(self.dense.len());
        let mut h = x;
        for (l, d) in self.dense.iter().enumerate() {
            let mut y = d.forward(p, h.view());
            if l + 1 < self.dense.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        let norm = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(p, h);
                h = y;
                Some(c)
            }
            None => None,
        };
        (h, MlpCache { inputs, norm })
    }

    /// Forward pass without keeping activations.
    pub fn apply(&self, p: &[f64], x: Array2<f64>) -> Array2<f64> {
        let mut h = x;
        for (l, d) in self.dense.iter().enumerate() {
            let mut y = d.forward(p, h.view());
            if l + 1 < self.dense.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            h = y;
        }
        match &self.norm {
            Some(n) => n.forward(p, h).0,
            None => h,
        }
    }

    pub fn backward(
        &self,
        p: &[f64],
        cache: &MlpCache,
        dy: Array2<f64>,
        g: &mut [f64],
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut d = match (&self.norm, &cache.norm) {
            (Some(n), Some(c)) => n.backward(p, c, dy.view(), g),
            _ => dy,
        };
        for l in (0..self.dense.len()).rev() {
            let x = &cache.inputs[l];
            let need = l > 0 || want_dx;
            let dx = self.dense[l].backward(p, x.view(), d.view(), g, need);
            match dx {
                Some(mut dx) if l > 0 => {
                    // relu mask from the stored post-activation
                    dx.zip_mut_with(x, |a, &h| {
                        if h <= 0.0 {
                            *a = 0.0;
                        }
                    });
                    d = dx;
                }
                Some(dx) => return Some(dx),
                None => return None,
            }
        }
        None
    }
}
