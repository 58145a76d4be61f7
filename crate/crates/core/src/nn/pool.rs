//! Global average pooling over the spatial axes.

use super::Scalar;
use ndarray::{Array2, Array4, Axis};

#[derive(Debug, Clone)]
pub struct GlobalAvgPool {
    cache: Option<(usize, usize)>, // (h, w)
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { cache: None }
    }

    /// (B, C, H, W) -> (B, C)
    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>, train: bool) -> Array2<F> {
        let (_, _, h, w) = x.dim();
        let n = F::from_f64((h * w) as f64);
        let y = x.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v / n);
        if train {
            self.cache = Some((h, w));
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, gy: &Array2<F>) -> Array4<F> {
        let (h, w) = self.cache.take().expect("pool backward without forward");
        let (b, c) = gy.dim();
        let n = F::from_f64((h * w) as f64);
        let mut gx = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                let v = gy[(bi, ci)] / n;
                gx.index_axis_mut(Axis(0), bi)
                    .index_axis_mut(Axis(0), ci)
                    .fill(v);
            }
        }
        gx
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_to_mean_and_spreads_gradient() {
        let mut x = Array4::<f64>::zeros((1, 2, 2, 2));
        x.index_axis_mut(Axis(0), 0)
            .index_axis_mut(Axis(0), 0)
            .assign(&ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        let mut pool = GlobalAvgPool::new();
        let y = pool.forward(&x, true);
        assert_eq!(y[(0, 0)], 2.5);
        let gy = ndarray::array![[1.0, 0.0]];
        let gx = pool.backward(&gy);
        assert_eq!(gx[(0, 0, 1, 1)], 0.25);
        assert_eq!(gx[(0, 1, 0, 0)], 0.0);
    }
}
