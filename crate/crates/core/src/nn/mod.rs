//! Minimal neural-network substrate: layers with explicit forward/backward
//! passes, SGD, and learning-rate schedules.
//!
//! Layers cache what they need during a training forward pass and release it
//! on backward. Everything is generic over [`Scalar`] so gradient correctness
//! can be checked against central finite differences in `f64` while training
//! runs in `f32`.

pub mod activation;
pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod pool;

use ndarray::{ArrayD, NdFloat};

pub use activation::{Gelu, LeakyRelu};
pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::{Linear, WeightNormLinear};
pub use norm::InstanceNorm2d;
pub use optim::{cosine_lr, polynomial_lr, Sgd};
pub use pool::GlobalAvgPool;

/// Element type for tensors; implemented for `f32` and `f64`.
pub trait Scalar: NdFloat + Send + Sync {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub data: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(data: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(data.raw_dim());
        Param { data, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// Accumulates `g` into the gradient; shapes must match.
    pub fn add_grad(&mut self, g: &ArrayD<F>) {
        self.grad += g;
    }
}

/// Anything that exposes named trainable parameters.
///
/// Names are hierarchical dot-separated paths ("encoder.s0.c1.conv.weight");
/// they are stable across runs and form the checkpoint manifest.
pub trait HasParams<F: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, _| n += 1);
        n
    }

    /// Snapshot of all parameter tensors keyed by name.
    fn param_map(&mut self) -> std::collections::BTreeMap<String, ArrayD<F>> {
        let mut out = std::collections::BTreeMap::new();
        self.visit_params("", &mut |name, p| {
            out.insert(name, p.data.clone());
        });
        out
    }
}

/// Joins a prefix and a component into a parameter path.
pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
