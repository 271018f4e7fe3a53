//! Minimal tensor kernels with hand-written backward passes.

mod conv;
mod scalar;

use ndarray::{s, Array4, Axis, Zip};

pub use conv::{
    col2im, conv2d, conv2d_backward, conv_geom, conv_transpose2d, conv_transpose2d_backward, im2col, same_dim,
    ConvGeom, KernelSpec,
};
pub use scalar::Scalar;

/// A named parameter tensor, stored flat in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Param {
            name: name.into(),
            dims,
            data: vec![T::zero(); len],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Gradient buffers parallel to a parameter list.
pub type Grads<T> = Vec<Vec<T>>;

pub fn zero_grads<T: Scalar>(params: &[Param<T>]) -> Grads<T> {
    params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
}

pub fn relu_inplace<T: Scalar>(x: &mut Array4<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

pub fn leaky_relu_inplace<T: Scalar>(x: &mut Array4<T>, slope: T) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { v * slope });
}

/// Masks `grad` by the rectifier derivative, read off the activation output.
pub fn relu_backward<T: Scalar>(grad: &mut Array4<T>, output: &Array4<T>) {
    Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

pub fn leaky_relu_backward<T: Scalar>(grad: &mut Array4<T>, output: &Array4<T>, slope: T) {
    Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= T::zero() {
            *g *= slope;
        }
    });
}

/// Reflect-pads the frequency axis (axis 2) by `lo` rows before and `hi`
/// after, without repeating the edge row.
pub fn reflect_pad_freq<T: Scalar>(x: &Array4<T>, lo: usize, hi: usize) -> Array4<T> {
    let (n, c, f, t) = x.dim();
    let mut out = Array4::zeros((n, c, f + lo + hi, t));
    for p in 0..f + lo + hi {
        let src = reflect_index(p as isize - lo as isize, f);
        out.slice_mut(s![.., .., p, ..]).assign(&x.slice(s![.., .., src, ..]));
    }
    out
}

/// Adjoint of [`reflect_pad_freq`].
pub fn reflect_pad_freq_backward<T: Scalar>(grad: &Array4<T>, lo: usize, f: usize) -> Array4<T> {
    let (n, c, fp, t) = grad.dim();
    let mut out = Array4::zeros((n, c, f, t));
    for p in 0..fp {
        let src = reflect_index(p as isize - lo as isize, f);
        let mut dst = out.slice_mut(s![.., .., src, ..]);
        dst += &grad.slice(s![.., .., p, ..]);
    }
    out
}

fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

pub fn concat_channels<T: Scalar>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()])
        .expect("matching spatial dims")
        .as_standard_layout()
        .into_owned()
}

pub fn split_channels<T: Scalar>(x: &Array4<T>, first: usize) -> (Array4<T>, Array4<T>) {
    (
        x.slice(s![.., ..first, .., ..]).to_owned(),
        x.slice(s![.., first.., .., ..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_matches_definition() {
        let x = Array4::from_shape_vec((1, 1, 4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = reflect_pad_freq(&x, 1, 2);
        assert_eq!(p.iter().copied().collect::<Vec<f64>>(), vec![1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn reflect_pad_backward_is_adjoint() {
        let x = Array4::from_shape_fn((2, 1, 5, 3), |(a, _, b, c)| (a * 15 + b * 3 + c) as f64 * 0.1);
        let g = Array4::from_shape_fn((2, 1, 8, 3), |(a, _, b, c)| ((a + b * 7 + c * 3) % 5) as f64 - 2.0);
        let lhs: f64 = reflect_pad_freq(&x, 1, 2).iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(reflect_pad_freq_backward(&g, 1, 5).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
