//! Strided 2-D convolution and its transpose, lowered to GEMM through
//! im2col / col2im. Tensors are `(batch, channels, freq, time)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array4, ArrayView2, ArrayViewMut2};

use super::Scalar;

/// Kernel shape of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub s_h: usize,
    pub s_w: usize,
}

impl KernelSpec {
    pub fn taps(&self) -> usize {
        self.k_h * self.k_w
    }
}

/// Geometry relating an image grid to the column grid a strided kernel
/// visits. For a convolution the image is the input; for a transposed
/// convolution the image is the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub s_h: usize,
    pub s_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `"same"` padding: `out = ceil(n / s)`, the total padding split with the
/// smaller half leading.
pub fn same_dim(n: usize, k: usize, s: usize) -> (usize, usize) {
    let out = n.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(n);
    (out, total / 2)
}

impl ConvGeom {
    pub fn same(channels: usize, in_h: usize, in_w: usize, k: &KernelSpec) -> Self {
        let (out_h, pad_h) = same_dim(in_h, k.k_h, k.s_h);
        let (out_w, pad_w) = same_dim(in_w, k.k_w, k.s_w);
        ConvGeom {
            channels,
            in_h,
            in_w,
            k_h: k.k_h,
            k_w: k.k_w,
            s_h: k.s_h,
            s_w: k.s_w,
            pad_h,
            pad_w,
            out_h,
            out_w,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k_h * self.k_w
    }

    pub fn col_len(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source_index(&self, o: usize, k: usize, s: usize, pad: usize, n: usize) -> Option<usize> {
        let i = (o * s + k) as isize - pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

/// Unfold `img` (`channels × in_h × in_w`) into `cols` (`col_rows × col_len`).
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    debug_assert_eq!(img.len(), g.channels * g.in_h * g.in_w);
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_len());
    let plane = g.col_len();
    for c in 0..g.channels {
        let src = &img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let row = (c * g.k_h + kh) * g.k_w + kw;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    match g.source_index(oh, kh, g.s_h, g.pad_h, g.in_h) {
                        None => line.fill(T::zero()),
                        Some(ih) => {
                            let src_row = &src[ih * g.in_w..(ih + 1) * g.in_w];
                            for (ow, v) in line.iter_mut().enumerate() {
                                *v = match g.source_index(ow, kw, g.s_w, g.pad_w, g.in_w) {
                                    Some(iw) => src_row[iw],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back onto `img`.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    debug_assert_eq!(img.len(), g.channels * g.in_h * g.in_w);
    let plane = g.col_len();
    for c in 0..g.channels {
        let dst = &mut img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let row = (c * g.k_h + kh) * g.k_w + kw;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    let Some(ih) = g.source_index(oh, kh, g.s_h, g.pad_h, g.in_h) else {
                        continue;
                    };
                    let line = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    let dst_row = &mut dst[ih * g.in_w..(ih + 1) * g.in_w];
                    for (ow, &v) in line.iter().enumerate() {
                        if let Some(iw) = g.source_index(ow, kw, g.s_w, g.pad_w, g.in_w) {
                            dst_row[iw] += v;
                        }
                    }
                }
            }
        }
    }
}

fn sample<T: Scalar>(x: &Array4<T>, n: usize) -> &[T] {
    let per = x.len() / x.shape()[0];
    &x.as_slice().expect("standard layout")[n * per..(n + 1) * per]
}

fn sample_mut<T: Scalar>(x: &mut Array4<T>, n: usize) -> &mut [T] {
    let per = x.len() / x.shape()[0];
    &mut x.as_slice_mut().expect("standard layout")[n * per..(n + 1) * per]
}

fn matrix<T>(rows: usize, cols: usize, data: &[T]) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

fn matrix_mut<T>(rows: usize, cols: usize, data: &mut [T]) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(dy: &[T], db: &mut [T], plane: usize) {
    for (c, g) in db.iter_mut().enumerate() {
        *g += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

/// Output geometry of a `"same"` convolution on `x`.
pub fn conv_geom<T>(x: &Array4<T>, k: &KernelSpec) -> ConvGeom {
    let s = x.shape();
    ConvGeom::same(s[1], s[2], s[3], k)
}

/// Forward convolution. `weight` is `out × in × k_h × k_w`.
pub fn conv2d<T: Scalar>(x: &Array4<T>, weight: &[T], bias: &[T], k: &KernelSpec) -> Array4<T> {
    let g = conv_geom(x, k);
    assert_eq!(g.channels, k.in_channels, "conv input channels");
    let n = x.shape()[0];
    let rows = g.col_rows();
    let mut cols = vec![T::zero(); rows * g.col_len()];
    let mut y = Array4::zeros((n, k.out_channels, g.out_h, g.out_w));
    let w = matrix(k.out_channels, rows, weight);
    for b in 0..n {
        im2col(&g, sample(x, b), &mut cols);
        let out = sample_mut(&mut y, b);
        general_mat_mul(
            T::one(),
            &w,
            &matrix(rows, g.col_len(), &cols),
            T::zero(),
            &mut matrix_mut(k.out_channels, g.col_len(), out),
        );
        add_bias(out, bias, g.col_len());
    }
    y
}

/// Backward pass of [`conv2d`]. Accumulates into `dw`/`db` and returns the
/// input gradient when `need_dx`.
pub fn conv2d_backward<T: Scalar>(
    x: &Array4<T>,
    weight: &[T],
    k: &KernelSpec,
    dy: &Array4<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Array4<T>> {
    let g = conv_geom(x, k);
    let n = x.shape()[0];
    let rows = g.col_rows();
    let plane = g.col_len();
    let mut cols = vec![T::zero(); rows * plane];
    let mut dcols = vec![T::zero(); rows * plane];
    let mut dx = need_dx.then(|| Array4::zeros(x.raw_dim()));
    let w = matrix(k.out_channels, rows, weight);
    let mut dw_m = matrix_mut(k.out_channels, rows, dw);
    for b in 0..n {
        let dy_b = sample(dy, b);
        let dy_m = matrix(k.out_channels, plane, dy_b);
        im2col(&g, sample(x, b), &mut cols);
        general_mat_mul(T::one(), &dy_m, &matrix(rows, plane, &cols).t(), T::one(), &mut dw_m);
        accumulate_bias_grad(dy_b, db, plane);
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(T::one(), &w.t(), &dy_m, T::zero(), &mut matrix_mut(rows, plane, &mut dcols));
            col2im(&g, &dcols, sample_mut(dx, b));
        }
    }
    dx
}

/// Geometry of a transposed convolution producing an `out_h × out_w` image;
/// it mirrors the `"same"` convolution taking that image back to `x`'s grid.
pub fn conv_transpose_geom<T>(x: &Array4<T>, k: &KernelSpec, out_h: usize, out_w: usize) -> ConvGeom {
    let g = ConvGeom::same(k.out_channels, out_h, out_w, k);
    assert_eq!(
        (g.out_h, g.out_w),
        (x.shape()[2], x.shape()[3]),
        "transposed conv target size does not mirror input grid"
    );
    g
}

/// Transposed convolution. `weight` is `in × out × k_h × k_w`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Array4<T>,
    weight: &[T],
    bias: &[T],
    k: &KernelSpec,
    out_h: usize,
    out_w: usize,
) -> Array4<T> {
    assert_eq!(x.shape()[1], k.in_channels, "transposed conv input channels");
    let g = conv_transpose_geom(x, k, out_h, out_w);
    let n = x.shape()[0];
    let rows = g.col_rows();
    let plane = g.col_len();
    let mut cols = vec![T::zero(); rows * plane];
    let mut y = Array4::zeros((n, k.out_channels, out_h, out_w));
    let w = matrix(k.in_channels, rows, weight);
    for b in 0..n {
        general_mat_mul(
            T::one(),
            &w.t(),
            &matrix(k.in_channels, plane, sample(x, b)),
            T::zero(),
            &mut matrix_mut(rows, plane, &mut cols),
        );
        let out = sample_mut(&mut y, b);
        col2im(&g, &cols, out);
        add_bias(out, bias, out_h * out_w);
    }
    y
}

/// Backward pass of [`conv_transpose2d`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Array4<T>,
    weight: &[T],
    k: &KernelSpec,
    dy: &Array4<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Array4<T>> {
    let (out_h, out_w) = (dy.shape()[2], dy.shape()[3]);
    let g = conv_transpose_geom(x, k, out_h, out_w);
    let n = x.shape()[0];
    let rows = g.col_rows();
    let plane = g.col_len();
    let mut dcols = vec![T::zero(); rows * plane];
    let mut dx = need_dx.then(|| Array4::zeros(x.raw_dim()));
    let w = matrix(k.in_channels, rows, weight);
    let mut dw_m = matrix_mut(k.in_channels, rows, dw);
    for b in 0..n {
        let dy_b = sample(dy, b);
        im2col(&g, dy_b, &mut dcols);
        let dcols_m = matrix(rows, plane, &dcols);
        general_mat_mul(
            T::one(),
            &matrix(k.in_channels, plane, sample(x, b)),
            &dcols_m.t(),
            T::one(),
            &mut dw_m,
        );
        accumulate_bias_grad(dy_b, db, out_h * out_w);
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(
                T::one(),
                &w,
                &dcols_m,
                T::zero(),
                &mut matrix_mut(k.in_channels, plane, sample_mut(dx, b)),
            );
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    /// Direct nested-loop correlation used as a reference.
    fn naive_conv(x: &Array4<f64>, w: &[f64], b: &[f64], k: &KernelSpec) -> Array4<f64> {
        let g = conv_geom(x, k);
        let n = x.shape()[0];
        let mut y = Array4::zeros((n, k.out_channels, g.out_h, g.out_w));
        for bi in 0..n {
            for co in 0..k.out_channels {
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        let mut acc = b[co];
                        for ci in 0..k.in_channels {
                            for kh in 0..k.k_h {
                                for kw in 0..k.k_w {
                                    let ih = (oh * k.s_h + kh) as isize - g.pad_h as isize;
                                    let iw = (ow * k.s_w + kw) as isize - g.pad_w as isize;
                                    if ih < 0 || iw < 0 || ih >= g.in_h as isize || iw >= g.in_w as isize {
                                        continue;
                                    }
                                    let wi = ((co * k.in_channels + ci) * k.k_h + kh) * k.k_w + kw;
                                    acc += w[wi] * x[[bi, ci, ih as usize, iw as usize]];
                                }
                            }
                        }
                        y[[bi, co, oh, ow]] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|i| ((i * 7919) % 97) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn same_dim_matches_ceil_rule() {
        assert_eq!(same_dim(164, 3, 1), (164, 1));
        assert_eq!(same_dim(164, 3, 2), (82, 0));
        assert_eq!(same_dim(53, 4, 2), (27, 1));
        assert_eq!(same_dim(7, 4, 2), (4, 1));
    }

    #[test]
    fn gemm_conv_matches_naive() {
        let k = KernelSpec { in_channels: 2, out_channels: 3, k_h: 4, k_w: 3, s_h: 2, s_w: 1 };
        let x = Array4::from_shape_vec((2, 2, 9, 6), ramp(2 * 2 * 9 * 6, 0.01)).unwrap();
        let w = ramp(3 * 2 * 4 * 3, 0.02);
        let b = vec![0.1, -0.2, 0.3];
        let fast = conv2d(&x, &w, &b, &k);
        let slow = naive_conv(&x, &w, &b, &k);
        assert_eq!(fast.shape(), slow.shape());
        for (a, e) in fast.iter().zip(slow.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    /// <conv(x), y> == <x, conv^T(y)> with the transposed op built from the
    /// same weights; pins the adjoint relation between the two layers.
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let k = KernelSpec { in_channels: 2, out_channels: 3, k_h: 3, k_w: 3, s_h: 2, s_w: 2 };
        let x = Array4::from_shape_vec((1, 2, 10, 8), ramp(160, 0.013)).unwrap();
        let w = ramp(3 * 2 * 9, 0.021);
        let zero3 = vec![0.0; 3];
        let y = conv2d(&x, &w, &zero3, &k);
        let probe = Array4::from_shape_vec(y.raw_dim(), ramp(y.len(), 0.017)).unwrap();
        let lhs: f64 = y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();

        // transposed layer mapping 3 -> 2 channels with weight[in=3][out=2] = w[co][ci]
        let kt = KernelSpec { in_channels: 3, out_channels: 2, ..k };
        let back = conv_transpose2d(&probe, &w, &[0.0, 0.0], &kt, 10, 8);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
