//! Instance normalization with affine parameters.

use super::{Param, Scalar};
use crate::parallel;
use ndarray::{Array2, Array4, Axis, IxDyn};

#[derive(Debug, Clone)]
pub struct InstanceNorm2d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    eps: F,
    channels: usize,
    // (normalized activations, per-(b,c) inverse std)
    cache: Option<(Array4<F>, Array2<F>)>,
}

impl<F: Scalar> InstanceNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Param::new(ndarray::ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ndarray::ArrayD::zeros(IxDyn(&[channels]))),
            eps: F::from_f64(1e-5),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "instance-norm channels");
        let n = F::from_f64((h * w) as f64);
        let eps = self.eps;

        let rows: Vec<(Array2<F>, F)> = parallel::map_collect(b * c, |i| {
            let (bi, ci) = (i / c, i % c);
            let plane = x.index_axis(Axis(0), bi);
            let plane = plane.index_axis(Axis(0), ci);
            let mean = plane.sum() / n;
            let var = plane.mapv(|v| (v - mean) * (v - mean)).sum() / n;
            let inv_std = F::one() / (var + eps).sqrt();
            (plane.mapv(|v| (v - mean) * inv_std), inv_std)
        });

        let mut xhat = Array4::zeros((b, c, h, w));
        let mut inv_stds = Array2::zeros((b, c));
        for (i, (plane, inv_std)) in rows.into_iter().enumerate() {
            let (bi, ci) = (i / c, i % c);
            let mut dst = xhat.index_axis_mut(Axis(0), bi);
            dst.index_axis_mut(Axis(0), ci).assign(&plane);
            inv_stds[(bi, ci)] = inv_std;
        }

        let mut out = xhat.clone();
        for ci in 0..c {
            let g = self.gamma.data[IxDyn(&[ci])];
            let bt = self.beta.data[IxDyn(&[ci])];
            out.index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| v * g + bt);
        }
        if train {
            self.cache = Some((xhat, inv_stds));
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<F>) -> Array4<F> {
        let (xhat, inv_stds) = self
            .cache
            .take()
            .expect("instance-norm backward without forward");
        let (b, c, h, w) = gy.dim();
        let n = F::from_f64((h * w) as f64);

        let planes: Vec<(Array2<F>, F, F)> = parallel::map_collect(b * c, |i| {
            let (bi, ci) = (i / c, i % c);
            let g = self.gamma.data[IxDyn(&[ci])];
            let gy_p = gy.index_axis(Axis(0), bi);
            let gy_p = gy_p.index_axis(Axis(0), ci);
            let xh_p = xhat.index_axis(Axis(0), bi);
            let xh_p = xh_p.index_axis(Axis(0), ci);
            let dgamma = (&gy_p * &xh_p).sum();
            let dbeta = gy_p.sum();
            // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
            let m_dy = dbeta / n;
            let m_dyxh = dgamma / n;
            let scale = g * inv_stds[(bi, ci)];
            let mut dx = Array2::zeros((h, w));
            ndarray::Zip::from(&mut dx)
                .and(&gy_p)
                .and(&xh_p)
                .for_each(|d, &dy, &xh| *d = scale * (dy - m_dy - xh * m_dyxh));
            (dx, dgamma, dbeta)
        });

        let mut gx = Array4::zeros((b, c, h, w));
        for (i, (dx, dgamma, dbeta)) in planes.into_iter().enumerate() {
            let (bi, ci) = (i / c, i % c);
            let mut dst = gx.index_axis_mut(Axis(0), bi);
            dst.index_axis_mut(Axis(0), ci).assign(&dx);
            self.gamma.grad[IxDyn(&[ci])] = self.gamma.grad[IxDyn(&[ci])] + dgamma;
            self.beta.grad[IxDyn(&[ci])] = self.beta.grad[IxDyn(&[ci])] + dbeta;
        }
        gx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(super::join_path(prefix, "gamma"), &mut self.gamma);
        f(super::join_path(prefix, "beta"), &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalizes_per_instance_and_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = Array4::<f64>::zeros((2, 3, 4, 4));
        for v in x.iter_mut() {
            *v = rng.random_range(-2.0..5.0);
        }
        let mut norm = InstanceNorm2d::new(3);
        let y = norm.forward(&x, false);
        for bi in 0..2 {
            for ci in 0..3 {
                let plane = y.index_axis(Axis(0), bi);
                let plane = plane.index_axis(Axis(0), ci);
                let mean = plane.mean().unwrap();
                let var = plane.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Array4::<f64>::zeros((2, 2, 3, 3));
        let mut r = Array4::<f64>::zeros((2, 2, 3, 3));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in r.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut norm = InstanceNorm2d::new(2);
        norm.gamma.data.mapv_inplace(|_| 1.3);
        norm.beta.data.mapv_inplace(|_| -0.2);
        let _ = norm.forward(&x, true);
        let gx = norm.backward(&r);

        let h = 1e-6;
        let mut x2 = x.clone();
        let an_flat = gx.as_slice().unwrap().to_vec();
        for i in 0..x.len() {
            let orig = x2.as_slice().unwrap()[i];
            x2.as_slice_mut().unwrap()[i] = orig + h;
            let lp = (&norm.clone().forward(&x2, false) * &r).sum();
            x2.as_slice_mut().unwrap()[i] = orig - h;
            let lm = (&norm.clone().forward(&x2, false) * &r).sum();
            x2.as_slice_mut().unwrap()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = an_flat[i];
            assert!(
                (fd - an).abs() < 1e-5 * (1.0 + fd.abs()),
                "mismatch at flat {i}: {fd} vs {an}"
            );
        }
    }
}
