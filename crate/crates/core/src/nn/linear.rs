//! Fully connected layers for the projection and self-distillation heads.

use super::{init, Param, Scalar};
use ndarray::{Array1, Array2, Axis, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

/// y = x W^T + b; weight layout (out, in).
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    cache: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(init::kaiming_normal(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_dim]))),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let w = self.weight.data.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.data.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        y += &b;
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<F>) -> Array2<F> {
        let x = self.cache.take().expect("linear backward without forward");
        let w = self.weight.data.view().into_dimensionality::<Ix2>().unwrap();
        let gw = gy.t().dot(&x);
        let gb = gy.sum_axis(Axis(0));
        let gx = gy.dot(&w);
        self.weight.grad += &gw.into_dyn();
        self.bias.grad += &gb.into_dyn();
        gx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(super::join_path(prefix, "weight"), &mut self.weight);
        f(super::join_path(prefix, "bias"), &mut self.bias);
    }
}

/// Linear layer whose rows are L2-normalized at every forward pass
/// (weight-normalized with unit gain, no bias). The self-distillation
/// head ends in one of these.
#[derive(Debug, Clone)]
pub struct WeightNormLinear<F: Scalar> {
    pub v: Param<F>, // direction parameters, layout (out, in)
    cache: Option<Array2<F>>,
}

impl<F: Scalar> WeightNormLinear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        WeightNormLinear {
            v: Param::new(init::kaiming_normal(&[out_dim, in_dim], in_dim, rng)),
            cache: None,
        }
    }

    fn unit_rows(&self) -> Array2<F> {
        let v = self.v.data.view().into_dimensionality::<Ix2>().unwrap();
        let mut w = v.to_owned();
        for mut row in w.axis_iter_mut(Axis(0)) {
            let norm = row.mapv(|x| x * x).sum().sqrt().max(F::from_f64(1e-12));
            row.mapv_inplace(|x| x / norm);
        }
        w
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let w = self.unit_rows();
        let y = x.dot(&w.t());
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<F>) -> Array2<F> {
        let x = self
            .cache
            .take()
            .expect("weight-norm backward without forward");
        let w = self.unit_rows();
        let gx = gy.dot(&w);
        // per-row: d v_j = (g_j - (g_j . w_j) w_j) / ||v_j||, g_j = dL/dw_j
        let gw = gy.t().dot(&x); // (out, in)
        let v = self.v.data.view().into_dimensionality::<Ix2>().unwrap();
        let mut gv = Array2::zeros(gw.raw_dim());
        for j in 0..gw.nrows() {
            let vnorm = v
                .row(j)
                .mapv(|x| x * x)
                .sum()
                .sqrt()
                .max(F::from_f64(1e-12));
            let wj = w.row(j);
            let gj = gw.row(j);
            let dot = gj.dot(&wj);
            let mut row = gv.row_mut(j);
            for (i, r) in row.iter_mut().enumerate() {
                *r = (gj[i] - dot * wj[i]) / vnorm;
            }
        }
        self.v.grad += &gv.into_dyn();
        gx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(super::join_path(prefix, "v"), &mut self.v);
    }
}

#[allow(dead_code)]
fn bias_row<F: Scalar>(b: &Array1<F>) -> Array2<F> {
    b.clone().insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn randn2(rng: &mut ChaCha8Rng, dims: (usize, usize)) -> Array2<f64> {
        let mut a = Array2::zeros(dims);
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let x = randn2(&mut rng, (5, 4));
        let r = randn2(&mut rng, (5, 3));
        let _ = lin.forward(&x, true);
        let gx = lin.backward(&r);

        let h = 1e-6;
        let an_flat = gx.as_slice().unwrap().to_vec();
        let mut x2 = x.clone();
        for i in 0..x.len() {
            let orig = x2.as_slice().unwrap()[i];
            x2.as_slice_mut().unwrap()[i] = orig + h;
            let lp = (&lin.clone().forward(&x2, false) * &r).sum();
            x2.as_slice_mut().unwrap()[i] = orig - h;
            let lm = (&lin.clone().forward(&x2, false) * &r).sum();
            x2.as_slice_mut().unwrap()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - an_flat[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn weight_norm_rows_are_unit_and_gradients_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut wn = WeightNormLinear::<f64>::new(4, 3, &mut rng);
        let w = wn.unit_rows();
        for row in w.axis_iter(Axis(0)) {
            let n: f64 = row.mapv(|x| x * x).sum().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }

        let x = randn2(&mut rng, (5, 4));
        let r = randn2(&mut rng, (5, 3));
        let _ = wn.forward(&x, true);
        let _ = wn.backward(&r);
        let gv = wn.v.grad.clone();
        let an_flat = gv.as_slice().unwrap().to_vec();
        let h = 1e-6;
        for i in 0..wn.v.data.len() {
            let orig = wn.v.data.as_slice().unwrap()[i];
            wn.v.data.as_slice_mut().unwrap()[i] = orig + h;
            let lp = (&wn.forward(&x, false) * &r).sum();
            wn.v.data.as_slice_mut().unwrap()[i] = orig - h;
            let lm = (&wn.forward(&x, false) * &r).sum();
            wn.v.data.as_slice_mut().unwrap()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - an_flat[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "mismatch at flat {i}"
            );
        }
    }
}
