//! 2D convolution and transposed convolution, im2col-based.
//!
//! Forward and backward parallelize over the batch axis; per-sample partial
//! weight gradients are reduced sequentially in batch order so results do not
//! depend on thread scheduling.

use super::{init, Param, Scalar};
use crate::parallel;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Ix1, Ix4};
use rand_chacha::ChaCha8Rng;

/// Lays out `k`×`k` patches of one (C, H, W) sample as columns:
/// output is (C·k·k, Ho·Wo) with zero padding `pad` and the given stride.
pub fn im2col<F: Scalar>(x: ArrayView3<F>, k: usize, stride: usize, pad: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let mut out_row = col.row_mut(row);
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        out_row[oi * wo + oj] = x[(ci, ii as usize, jj as usize)];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add inverse of [`im2col`]: folds (C·k·k, Ho·Wo) columns back into
/// a (C, H, W) image.
pub fn col2im<F: Scalar>(
    col: ArrayView2<F>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut img = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let col_row = col.row(row);
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        img[(ci, ii as usize, jj as usize)] =
                            img[(ci, ii as usize, jj as usize)] + col_row[oi * wo + oj];
                    }
                }
            }
        }
    }
    img
}

/// Standard convolution; weight layout (out, in, k, k).
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    in_channels: usize,
    out_channels: usize,
    cache: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(init::kaiming_normal(
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        ));
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])));
        Conv2d {
            weight,
            bias,
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            cache: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (ho, wo)
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.out_spatial(h, w);
        let o = self.out_channels;
        let ckk = c * self.kernel * self.kernel;
        let w4 = self.weight.data.view().into_dimensionality::<Ix4>().unwrap();
        let w2 = w4.into_shape_with_order((o, ckk)).unwrap();
        let bias = self.bias.data.view().into_dimensionality::<Ix1>().unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.padding);

        let per_sample: Vec<Array2<F>> = parallel::map_collect(b, |bi| {
            let col = im2col(x.index_axis(Axis(0), bi), kernel, stride, pad);
            let mut out = w2.dot(&col);
            for (oi, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                let bv = bias[oi];
                row.mapv_inplace(|v| v + bv);
            }
            out
        });

        let mut out = Array4::zeros((b, o, ho, wo));
        for (bi, m) in per_sample.into_iter().enumerate() {
            let m3 = m.into_shape_with_order((o, ho, wo)).unwrap();
            out.index_axis_mut(Axis(0), bi).assign(&m3);
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<F>) -> Array4<F> {
        let x = self.cache.take().expect("conv backward without forward");
        let (b, c, h, w) = x.dim();
        let (_, o, ho, wo) = gy.dim();
        let ckk = c * self.kernel * self.kernel;
        let w4 = self.weight.data.view().into_dimensionality::<Ix4>().unwrap();
        let w2 = w4.into_shape_with_order((o, ckk)).unwrap();
        let (kernel, stride, pad) = (self.kernel, self.stride, self.padding);

        let per_sample: Vec<(Array2<F>, Array1<F>, Array3<F>)> = parallel::map_collect(b, |bi| {
            let col = im2col(x.index_axis(Axis(0), bi), kernel, stride, pad);
            let gy2 = gy
                .index_axis(Axis(0), bi)
                .into_shape_with_order((o, ho * wo))
                .unwrap();
            let gw = gy2.dot(&col.t());
            let gb = gy2.sum_axis(Axis(1));
            let gcol = w2.t().dot(&gy2);
            let gx = col2im(gcol.view(), c, h, w, kernel, stride, pad);
            (gw, gb, gx)
        });

        let mut gx_all = Array4::zeros((b, c, h, w));
        {
            let mut gw_acc = Array2::<F>::zeros((o, ckk));
            let mut gb_acc = Array1::<F>::zeros(o);
            for (bi, (gw, gb, gx)) in per_sample.into_iter().enumerate() {
                gw_acc += &gw;
                gb_acc += &gb;
                gx_all.index_axis_mut(Axis(0), bi).assign(&gx);
            }
            let gw4 = gw_acc
                .into_shape_with_order((o, c, self.kernel, self.kernel))
                .unwrap();
            self.weight.grad += &gw4.into_dyn();
            self.bias.grad += &gb_acc.into_dyn();
        }
        gx_all
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(super::join_path(prefix, "weight"), &mut self.weight);
        f(super::join_path(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution with `stride == kernel` (non-overlapping upsampling).
/// Weight layout (in, out, k, k).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub kernel: usize,
    in_channels: usize,
    out_channels: usize,
    cache: Option<Array4<F>>,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(init::kaiming_normal(
            &[in_channels, out_channels, kernel, kernel],
            fan_in,
            rng,
        ));
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])));
        ConvTranspose2d {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv-transpose input channels");
        let k = self.kernel;
        let o = self.out_channels;
        let w4 = self.weight.data.view().into_dimensionality::<Ix4>().unwrap();
        let w2 = w4.into_shape_with_order((c, o * k * k)).unwrap();
        let bias = self.bias.data.view().into_dimensionality::<Ix1>().unwrap();

        let per_sample: Vec<Array3<F>> = parallel::map_collect(b, |bi| {
            let x2 = x
                .index_axis(Axis(0), bi)
                .into_shape_with_order((c, h * w))
                .unwrap();
            let tmp = w2.t().dot(&x2); // (o*k*k, h*w)
            let mut out = Array3::zeros((o, h * k, w * k));
            for oi in 0..o {
                let bv = bias[oi];
                for di in 0..k {
                    for dj in 0..k {
                        let row = tmp.row((oi * k + di) * k + dj);
                        for i in 0..h {
                            for j in 0..w {
                                out[(oi, i * k + di, j * k + dj)] = row[i * w + j] + bv;
                            }
                        }
                    }
                }
            }
            out
        });

        let mut out = Array4::zeros((b, o, h * k, w * k));
        for (bi, m) in per_sample.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), bi).assign(&m);
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<F>) -> Array4<F> {
        let x = self
            .cache
            .take()
            .expect("conv-transpose backward without forward");
        let (b, c, h, w) = x.dim();
        let k = self.kernel;
        let o = self.out_channels;
        let w4 = self.weight.data.view().into_dimensionality::<Ix4>().unwrap();
        let w2 = w4.into_shape_with_order((c, o * k * k)).unwrap();

        let per_sample: Vec<(Array2<F>, Array1<F>, Array2<F>)> = parallel::map_collect(b, |bi| {
            let gyb = gy.index_axis(Axis(0), bi);
            // gather (o*k*k, h*w) from the strided output grid
            let mut gcol = Array2::zeros((o * k * k, h * w));
            let mut gb = Array1::zeros(o);
            for oi in 0..o {
                let mut s = F::zero();
                for di in 0..k {
                    for dj in 0..k {
                        let mut row = gcol.row_mut((oi * k + di) * k + dj);
                        for i in 0..h {
                            for j in 0..w {
                                let v = gyb[(oi, i * k + di, j * k + dj)];
                                row[i * w + j] = v;
                                s = s + v;
                            }
                        }
                    }
                }
                gb[oi] = s;
            }
            let x2 = x
                .index_axis(Axis(0), bi)
                .into_shape_with_order((c, h * w))
                .unwrap();
            let gw = x2.dot(&gcol.t()); // (c, o*k*k)
            let gx = w2.dot(&gcol); // (c, h*w)
            (gw, gb, gx)
        });

        let mut gx_all = Array4::zeros((b, c, h, w));
        let mut gw_acc = Array2::<F>::zeros((c, o * k * k));
        let mut gb_acc = Array1::<F>::zeros(o);
        for (bi, (gw, gb, gx)) in per_sample.into_iter().enumerate() {
            gw_acc += &gw;
            gb_acc += &gb;
            let gx3 = gx.into_shape_with_order((c, h, w)).unwrap();
            gx_all.index_axis_mut(Axis(0), bi).assign(&gx3);
        }
        let gw4 = gw_acc.into_shape_with_order((c, o, k, k)).unwrap();
        self.weight.grad += &gw4.into_dyn();
        self.bias.grad += &gb_acc.into_dyn();
        gx_all
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(super::join_path(prefix, "weight"), &mut self.weight);
        f(super::join_path(prefix, "bias"), &mut self.bias);
    }
}
