use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::{ParamStore, Slot};

/// One LSTM layer applied row-wise (per node) with shared weights. Gate
/// blocks are ordered input, forget, cell, output; both the input and the
/// recurrent map carry a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub wx: Slot,
    pub wh: Slot,
    pub bx: Slot,
    pub bh: Slot,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[i, f, g, o]`, `(rows, 4h)`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            wx: store.add_matrix(format!("{name}.weight_x"), input, 4 * hidden),
            wh: store.add_matrix(format!("{name}.weight_h"), hidden, 4 * hidden),
            bx: store.add_vector(format!("{name}.bias_x"), 4 * hidden),
            bh: store.add_vector(format!("{name}.bias_h"), 4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.rows
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden + 2)
    }

    /// Uniform in `±sqrt(1 / hidden)`.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = (1.0 / self.hidden() as f64).sqrt();
        for slot in [self.wx, self.wh, self.bx, self.bh] {
            store.fill_uniform(slot, bound, rng);
        }
    }

    pub fn forward(
        &self,
        p: &[f64],
        x: Array2<f64>,
        h_prev: Array2<f64>,
        c_prev: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, LstmCache) {
        let h = self.hidden();
        let mut z = x.dot(&self.wx.mat(p));
        general_mat_mul(1.0, &h_prev, &self.wh.mat(p), 1.0, &mut z);
        z += &self.bx.vec(p);
        z += &self.bh.vec(p);
        z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
        z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
        let gates = z;
        let (gi, gf, gg, go) = (
            gates.slice(s![.., 0..h]),
            gates.slice(s![.., h..2 * h]),
            gates.slice(s![.., 2 * h..3 * h]),
            gates.slice(s![.., 3 * h..]),
        );
        let mut c = Array2::zeros(c_prev.dim());
        Zip::from(&mut c)
            .and(&gf)
            .and(&c_prev)
            .and(&gi)
            .and(&gg)
            .for_each(|c, &f, &cp, &i, &g| *c = f * cp + i * g);
        let tanh_c = c.mapv(f64::tanh);
        let h_new = &go * &tanh_c;
        let cache = LstmCache {
            x,
            h_prev,
            c_prev,
            gates,
            tanh_c,
        };
        (h_new, c, cache)
    }

    /// Returns `(dx, dh_prev, dc_prev)` given the gradients on the outputs.
    pub fn backward(
        &self,
        p: &[f64],
        cache: &LstmCache,
        dh: ArrayView2<'_, f64>,
        dc: ArrayView2<'_, f64>,
        g: &mut [f64],
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let h = self.hidden();
        let gates = &cache.gates;
        let (gi, gf, gg, go) = (
            gates.slice(s![.., 0..h]),
            gates.slice(s![.., h..2 * h]),
            gates.slice(s![.., 2 * h..3 * h]),
            gates.slice(s![.., 3 * h..]),
        );
        let mut dc_total = dc.to_owned();
        Zip::from(&mut dc_total)
            .and(&dh)
            .and(&go)
            .and(&cache.tanh_c)
            .for_each(|d, &dh, &o, &t| *d += dh * o * (1.0 - t * t));
        let mut dz = Array2::zeros(gates.dim());
        {
            let (mut di, rest) = dz.view_mut().split_at(Axis(1), h);
            let (mut df, rest) = rest.split_at(Axis(1), h);
            let (mut dg, mut do_) = rest.split_at(Axis(1), h);
            Zip::from(&mut di)
                .and(&dc_total)
                .and(&gi)
                .and(&gg)
                .for_each(|d, &dc, &i, &g| *d = dc * g * i * (1.0 - i));
            Zip::from(&mut df)
                .and(&dc_total)
                .and(&gf)
                .and(&cache.c_prev)
                .for_each(|d, &dc, &f, &cp| *d = dc * cp * f * (1.0 - f));
            Zip::from(&mut dg)
                .and(&dc_total)
                .and(&gi)
                .and(&gg)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(&mut do_)
                .and(&dh)
                .and(&go)
                .and(&cache.tanh_c)
                .for_each(|d, &dh, &o, &t| *d = dh * t * o * (1.0 - o));
        }
        general_mat_mul(1.0, &cache.x.t(), &dz, 1.0, &mut self.wx.mat_mut(g));
        general_mat_mul(1.0, &cache.h_prev.t(), &dz, 1.0, &mut self.wh.mat_mut(g));
        let db = dz.sum_axis(Axis(0));
        self.bx.vec_mut(g).scaled_add(1.0, &db);
        self.bh.vec_mut(g).scaled_add(1.0, &db);
        let dx = dz.dot(&self.wx.mat(p).t());
        let dh_prev = dz.dot(&self.wh.mat(p).t());
        let dc_prev = &dc_total * &gf;
        (dx, dh_prev, dc_prev)
    }
}
