//! SGD with momentum and the two learning-rate schedules used by the
//! training loops.

use super::{HasParams, Scalar};
use ndarray::ArrayD;
use std::collections::HashMap;

/// Stochastic gradient descent with classical or Nesterov momentum and
/// decoupled-from-nothing L2 weight decay folded into the gradient:
///
/// ```text
/// g = grad + wd * w
/// v = m * v + g
/// w -= lr * (g + m * v)   (Nesterov)
/// w -= lr * v             (classical)
/// ```
#[derive(Debug, Clone)]
pub struct Sgd<F: Scalar> {
    pub lr: F,
    pub momentum: F,
    pub nesterov: bool,
    pub weight_decay: F,
    velocity: HashMap<String, ArrayD<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: F, momentum: F, nesterov: bool, weight_decay: F) -> Self {
        Sgd {
            lr,
            momentum,
            nesterov,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut impl HasParams<F>) {
        let lr = self.lr;
        let m = self.momentum;
        let wd = self.weight_decay;
        let nesterov = self.nesterov;
        let velocity = &mut self.velocity;
        model.visit_params("", &mut |name, p| {
            let mut g = p.grad.clone();
            if wd != F::zero() {
                g.zip_mut_with(&p.data, |gv, &wv| *gv = *gv + wd * wv);
            }
            let v = velocity
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(p.data.raw_dim()));
            v.zip_mut_with(&g, |vv, &gv| *vv = m * *vv + gv);
            if nesterov {
                ndarray::Zip::from(&mut p.data)
                    .and(&g)
                    .and(&*v)
                    .for_each(|w, &gv, &vv| *w = *w - lr * (gv + m * vv));
            } else {
                p.data.zip_mut_with(&*v, |w, &vv| *w = *w - lr * vv);
            }
        });
    }
}

/// Cosine decay from `initial` to ~0 over `total` epochs.
pub fn cosine_lr(initial: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return initial;
    }
    let t = epoch as f64 / total as f64;
    initial * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Polynomial decay `initial * (1 - epoch/total)^power`; `power` 0.9 everywhere.
pub fn polynomial_lr(initial: f64, epoch: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return initial;
    }
    let t = (epoch as f64 / total as f64).min(1.0);
    initial * (1.0 - t).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::IxDyn;

    struct Toy {
        p: Param<f64>,
    }

    impl HasParams<f64> for Toy {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<f64>)) {
            f(super::super::join_path(prefix, "p"), &mut self.p);
        }
    }

    #[test]
    fn sgd_matches_hand_computation() {
        // two steps with momentum 0.9, nesterov off, wd 0, lr 0.1, grad 1
        let mut toy = Toy {
            p: Param::new(ArrayD::zeros(IxDyn(&[1]))),
        };
        let mut opt = Sgd::new(0.1, 0.9, false, 0.0);
        toy.p.grad.fill(1.0);
        opt.step(&mut toy); // v=1, w=-0.1
        toy.p.grad.fill(1.0);
        opt.step(&mut toy); // v=1.9, w=-0.29
        assert!((toy.p.data[IxDyn(&[0])] + 0.29).abs() < 1e-12);

        // nesterov: w -= lr*(g + m*v)
        let mut toy = Toy {
            p: Param::new(ArrayD::zeros(IxDyn(&[1]))),
        };
        let mut opt = Sgd::new(0.1, 0.9, true, 0.0);
        toy.p.grad.fill(1.0);
        opt.step(&mut toy); // v=1, w=-0.1*(1+0.9)= -0.19
        assert!((toy.p.data[IxDyn(&[0])] + 0.19).abs() < 1e-12);
    }

    #[test]
    fn schedules_hit_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!(cosine_lr(0.1, 99, 100) < 0.001); // < 1% of initial at final epoch
        assert_eq!(polynomial_lr(0.01, 0, 1000, 0.9), 0.01);
        assert_eq!(polynomial_lr(0.01, 1000, 1000, 0.9), 0.0);
        let mut prev = f64::INFINITY;
        for e in 0..=1000 {
            let lr = polynomial_lr(0.01, e, 1000, 0.9);
            assert!(lr < prev);
            prev = lr;
        }
    }
}
