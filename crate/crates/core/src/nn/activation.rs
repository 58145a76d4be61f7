//! Elementwise activations.

use super::Scalar;
use ndarray::{Array, ArrayD, Dimension};

/// Leaky rectifier; the whole crate uses slope 0.01 (see [`super::init::LEAKY_SLOPE`]).
#[derive(Debug, Clone)]
pub struct LeakyRelu<F: Scalar> {
    slope: F,
    cache: Option<ArrayD<F>>, // input
}

impl<F: Scalar> LeakyRelu<F> {
    pub fn new(slope: F) -> Self {
        LeakyRelu { slope, cache: None }
    }

    pub fn default_slope() -> Self {
        Self::new(F::from_f64(super::init::LEAKY_SLOPE))
    }

    pub fn forward<D: Dimension>(&mut self, x: &Array<F, D>, train: bool) -> Array<F, D> {
        let s = self.slope;
        let y = x.mapv(|v| if v > F::zero() { v } else { v * s });
        if train {
            self.cache = Some(x.clone().into_dyn());
        }
        y
    }

    pub fn backward<D: Dimension>(&mut self, gy: &Array<F, D>) -> Array<F, D> {
        let x = self
            .cache
            .take()
            .expect("leaky-relu backward without forward")
            .into_dimensionality::<D>()
            .unwrap();
        let s = self.slope;
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&x).for_each(|g, &xv| {
            if xv <= F::zero() {
                *g = *g * s;
            }
        });
        gx
    }
}

/// Gaussian error linear unit (tanh approximation), used in the
/// self-distillation head.
#[derive(Debug, Clone)]
pub struct Gelu<F: Scalar> {
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> Gelu<F> {
    pub fn new() -> Self {
        Gelu { cache: None }
    }

    fn phi(x: f64) -> f64 {
        // 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
    }

    fn dphi(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let u = c * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        let du = c * (1.0 + 3.0 * 0.044715 * x * x);
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    }

    pub fn forward<D: Dimension>(&mut self, x: &Array<F, D>, train: bool) -> Array<F, D> {
        let y = x.mapv(|v| F::from_f64(Self::phi(v.to_f64())));
        if train {
            self.cache = Some(x.clone().into_dyn());
        }
        y
    }

    pub fn backward<D: Dimension>(&mut self, gy: &Array<F, D>) -> Array<F, D> {
        let x = self
            .cache
            .take()
            .expect("gelu backward without forward")
            .into_dimensionality::<D>()
            .unwrap();
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx)
            .and(&x)
            .for_each(|g, &xv| *g = *g * F::from_f64(Self::dphi(xv.to_f64())));
        gx
    }
}

impl<F: Scalar> Default for Gelu<F> {
    fn default() -> Self {
        Self::new()
    }
}
