//! Strided valid cross-correlation, its adjoint, and the kernel gradient.
//!
//! All three run through an im2col patch matrix and a single GEMM. The naive
//! loop formulation lives in the test suites as the reference.

use crate::error::{dim_err, param_err, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Owned `out_ch x in_ch x size x size` kernel stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernels<T> {
    out_ch: usize,
    in_ch: usize,
    size: usize,
    data: Vec<T>,
}

/// Borrowed view of a kernel stack, laid out `[out][in][ky][kx]`.
#[derive(Clone, Copy, Debug)]
pub struct KernelsRef<'a, T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub size: usize,
    pub data: &'a [T],
}

impl<T: Real> Kernels<T> {
    pub fn zeros(out_ch: usize, in_ch: usize, size: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            size,
            data: vec![T::zero(); out_ch * in_ch * size * size],
        }
    }

    pub fn from_vec(out_ch: usize, in_ch: usize, size: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != out_ch * in_ch * size * size {
            return dim_err(format!(
                "kernel data length {} does not match {out_ch}x{in_ch}x{size}x{size}",
                data.len()
            ));
        }
        Ok(Self {
            out_ch,
            in_ch,
            size,
            data,
        })
    }

    pub fn view(&self) -> KernelsRef<'_, T> {
        KernelsRef {
            out_ch: self.out_ch,
            in_ch: self.in_ch,
            size: self.size,
            data: &self.data,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Taps of kernel `(o, i)` as a row-major `size x size` slice.
    pub fn tap(&self, o: usize, i: usize) -> &[T] {
        let k2 = self.size * self.size;
        let start = (o * self.in_ch + i) * k2;
        &self.data[start..start + k2]
    }

    pub fn cast<U: Real>(&self) -> Kernels<U> {
        Kernels {
            out_ch: self.out_ch,
            in_ch: self.in_ch,
            size: self.size,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// The stack as a `(out_ch * in_ch) x size x size` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(self.out_ch * self.in_ch, self.size, self.size),
            self.data.clone(),
        )
        .expect("kernel length is consistent by construction")
    }
}

impl<'a, T: Real> KernelsRef<'a, T> {
    pub fn new(out_ch: usize, in_ch: usize, size: usize, data: &'a [T]) -> Result<Self> {
        if data.len() != out_ch * in_ch * size * size {
            return dim_err(format!(
                "kernel data length {} does not match {out_ch}x{in_ch}x{size}x{size}",
                data.len()
            ));
        }
        Ok(Self {
            out_ch,
            in_ch,
            size,
            data,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.size * self.size
    }
}

/// Output length of a valid strided window sweep, or an error when the input
/// is too small or the stride does not divide `len - size`.
pub fn valid_output_len(len: usize, size: usize, stride: usize) -> Result<usize> {
    if stride == 0 || size == 0 {
        return param_err(format!("kernel size {size} and stride {stride} must be positive"));
    }
    if len < size {
        return dim_err(format!("input extent {len} smaller than kernel size {size}"));
    }
    if (len - size) % stride != 0 {
        return dim_err(format!(
            "({len} - {size}) is not divisible by stride {stride}; pad the input first"
        ));
    }
    Ok((len - size) / stride + 1)
}

fn chunk_rows(rows: usize) -> usize {
    let workers = par::workers();
    if workers <= 1 {
        rows.max(1)
    } else {
        rows.div_ceil(workers).max(1)
    }
}

/// Patch matrix of shape `(in_ch * k * k) x (out_h * out_w)`.
fn im2col<T: Real>(input: &Tensor<T>, size: usize, stride: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let p = out_h * out_w;
    let mut cols = vec![T::zero(); input.channels() * size * size * p];
    let (h, w) = (input.height(), input.width());
    let data = input.data();
    par::for_each_chunk_mut(&mut cols, p, |row, dst| {
        let i = row / (size * size);
        let ky = (row / size) % size;
        let kx = row % size;
        let plane = &data[i * h * w..(i + 1) * h * w];
        for oy in 0..out_h {
            let src = &plane[(oy * stride + ky) * w..];
            let dst = &mut dst[oy * out_w..(oy + 1) * out_w];
            if stride == 1 {
                dst.copy_from_slice(&src[kx..kx + out_w]);
            } else {
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox * stride + kx];
                }
            }
        }
    });
    cols
}

/// Scatter-add a patch matrix back onto a `channels x h x w` tensor.
fn col2im<T: Real>(
    cols: &[T],
    channels: usize,
    size: usize,
    stride: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor<T> {
    let p = out_h * out_w;
    let mut out = Tensor::zeros(Shape::new(channels, h, w));
    par::for_each_chunk_mut(out.data_mut(), h * w, |i, plane| {
        for ky in 0..size {
            for kx in 0..size {
                let row = (i * size + ky) * size + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..out_h {
                    let dst = &mut plane[(oy * stride + ky) * w..];
                    let s = &src[oy * out_w..(oy + 1) * out_w];
                    if stride == 1 {
                        for (d, &v) in dst[kx..kx + out_w].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (ox, &v) in s.iter().enumerate() {
                            dst[ox * stride + kx] += v;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Strided valid cross-correlation: `out[o, y, x] = sum_{i,ky,kx} k[o,i,ky,kx] *
/// in[i, y*stride + ky, x*stride + kx]`.
pub fn conv2d_valid<T: Real>(input: &Tensor<T>, kernels: KernelsRef<'_, T>, stride: usize) -> Result<Tensor<T>> {
    if input.channels() != kernels.in_ch {
        return dim_err(format!(
            "input has {} channels, kernels expect {}",
            input.channels(),
            kernels.in_ch
        ));
    }
    let out_h = valid_output_len(input.height(), kernels.size, stride)?;
    let out_w = valid_output_len(input.width(), kernels.size, stride)?;
    let p = out_h * out_w;
    let r = kernels.patch_len();
    let cols = im2col(input, kernels.size, stride, out_h, out_w);
    let mut out = Tensor::zeros(Shape::new(kernels.out_ch, out_h, out_w));
    let rows = chunk_rows(kernels.out_ch);
    par::for_each_chunk_mut(out.data_mut(), rows * p, |ci, dst| {
        let o0 = ci * rows;
        let m = dst.len() / p;
        T::gemm(
            m,
            r,
            p,
            &kernels.data[o0 * r..(o0 + m) * r],
            (r as isize, 1),
            &cols,
            (p as isize, 1),
            T::zero(),
            dst,
            (p as isize, 1),
        );
    });
    Ok(out)
}

/// Exact adjoint of [`conv2d_valid`] with the same kernels and stride: maps an
/// `out_ch x out_h x out_w` tensor back to `in_ch x out_shape`.
pub fn conv2d_transposed<T: Real>(
    input: &Tensor<T>,
    kernels: KernelsRef<'_, T>,
    stride: usize,
    out_shape: (usize, usize),
) -> Result<Tensor<T>> {
    let (h, w) = out_shape;
    let out_h = valid_output_len(h, kernels.size, stride)?;
    let out_w = valid_output_len(w, kernels.size, stride)?;
    if input.shape() != Shape::new(kernels.out_ch, out_h, out_w) {
        return dim_err(format!(
            "transposed conv input {} inconsistent with output {h}x{w} (expected {}x{out_h}x{out_w})",
            input.shape(),
            kernels.out_ch
        ));
    }
    let p = out_h * out_w;
    let r = kernels.patch_len();
    let mut cols = vec![T::zero(); r * p];
    let rows = chunk_rows(r);
    par::for_each_chunk_mut(&mut cols, rows * p, |ci, dst| {
        let r0 = ci * rows;
        let m = dst.len() / p;
        // rows r0..r0+m of K^T, i.e. columns of the row-major out_ch x r kernel matrix
        T::gemm(
            m,
            kernels.out_ch,
            p,
            &kernels.data[r0..],
            (1, r as isize),
            input.data(),
            (p as isize, 1),
            T::zero(),
            dst,
            (p as isize, 1),
        );
    });
    Ok(col2im(&cols, kernels.in_ch, kernels.size, stride, h, w, out_h, out_w))
}

/// Gradient of `<conv2d_valid(input, K, stride), out_grad>` with respect to `K`.
pub fn conv2d_kernel_grad<T: Real>(
    input: &Tensor<T>,
    out_grad: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<Kernels<T>> {
    let out_h = valid_output_len(input.height(), size, stride)?;
    let out_w = valid_output_len(input.width(), size, stride)?;
    if out_grad.height() != out_h || out_grad.width() != out_w {
        return dim_err(format!(
            "output gradient {} does not match conv output {out_h}x{out_w}",
            out_grad.shape()
        ));
    }
    let p = out_h * out_w;
    let out_ch = out_grad.channels();
    let r = input.channels() * size * size;
    let cols = im2col(input, size, stride, out_h, out_w);
    let mut grad = Kernels::zeros(out_ch, input.channels(), size);
    let rows = chunk_rows(out_ch);
    par::for_each_chunk_mut(grad.data_mut(), rows * r, |ci, dst| {
        let o0 = ci * rows;
        let m = dst.len() / r;
        T::gemm(
            m,
            p,
            r,
            &out_grad.data()[o0 * p..(o0 + m) * p],
            (p as isize, 1),
            &cols,
            (1, p as isize),
            T::zero(),
            dst,
            (r as isize, 1),
        );
    });
    Ok(grad)
}
