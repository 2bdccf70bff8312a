//! Dense channel-major tensors, images and reflect padding.

use std::ops::{Index, IndexMut};

use crate::error::{dim_err, Error, Result};
use crate::real::Real;

/// `(channels, height, width)` extent of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Contiguous row-major `channels x height x width` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return dim_err(format!(
                "data length {} does not match shape {shape}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
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

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Same data, new shape with identical element count.
    pub fn reshaped(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    fn check_same(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!(
                "{what}: shapes {} and {} differ",
                self.shape, other.shape
            ));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, "elementwise op")?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.axpy(T::one(), other)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Every channel restricted to the `height x width` window at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.shape.height || left + width > self.shape.width {
            return dim_err(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}",
                self.shape
            ));
        }
        let shape = Shape::new(self.shape.channels, height, width);
        Ok(Self::from_fn(shape, |c, y, x| self[(c, y + top, x + left)]))
    }
}

impl<T> Index<(usize, usize, usize)> for Tensor<T> {
    type Output = T;

    fn index(&self, (c, y, x): (usize, usize, usize)) -> &T {
        debug_assert!(c < self.shape.channels && y < self.shape.height && x < self.shape.width);
        &self.data[(c * self.shape.height + y) * self.shape.width + x]
    }
}

impl<T> IndexMut<(usize, usize, usize)> for Tensor<T> {
    fn index_mut(&mut self, (c, y, x): (usize, usize, usize)) -> &mut T {
        debug_assert!(c < self.shape.channels && y < self.shape.height && x < self.shape.width);
        &mut self.data[(c * self.shape.height + y) * self.shape.width + x]
    }
}

/// A single-channel image with intensities in `[0, 1]`.
///
/// The range is checked on construction only. Intermediate reconstructions are
/// plain tensors and may leave the range; [`Image::from_clamped`] is the
/// export path.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor<f64>);

impl Image {
    pub fn new(t: Tensor<f64>) -> Result<Self> {
        if t.channels() != 1 {
            return dim_err(format!("image must have one channel, got {}", t.shape()));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self(t))
    }

    pub fn from_clamped(t: &Tensor<f64>) -> Result<Self> {
        Self::new(t.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f64> {
        self.0
    }
}

impl AsRef<Tensor<f64>> for Image {
    fn as_ref(&self) -> &Tensor<f64> {
        &self.0
    }
}

/// Border sizes added around every channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Self {
            top,
            bottom,
            left,
            right,
        }
    }

    pub const fn uniform(p: usize) -> Self {
        Self::new(p, p, p, p)
    }

    /// Centered padding from `(h, w)` to `(target_h, target_w)`; any odd
    /// remainder goes to the bottom/right.
    pub fn centered(h: usize, w: usize, target_h: usize, target_w: usize) -> Result<Self> {
        if target_h < h || target_w < w {
            return dim_err(format!(
                "target {target_h}x{target_w} smaller than input {h}x{w}"
            ));
        }
        let (dh, dw) = (target_h - h, target_w - w);
        Ok(Self::new(dh / 2, dh - dh / 2, dw / 2, dw - dw / 2))
    }

    pub const fn is_zero(&self) -> bool {
        self.top == 0 && self.bottom == 0 && self.left == 0 && self.right == 0
    }

    pub fn padded(&self, shape: Shape) -> Shape {
        Shape::new(
            shape.channels,
            shape.height + self.top + self.bottom,
            shape.width + self.left + self.right,
        )
    }
}

/// Mirror index `i` (may lie in `-(n-1)..2n-1`) into `0..n` without repeating
/// the edge sample.
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r));
    r as usize
}

fn check_reflect(shape: Shape, pad: Padding) -> Result<()> {
    let ph = pad.top.max(pad.bottom);
    let pw = pad.left.max(pad.right);
    if (ph > 0 && ph >= shape.height) || (pw > 0 && pw >= shape.width) {
        return dim_err(format!(
            "reflect padding {pad:?} needs every pad amount below the input size {shape}"
        ));
    }
    Ok(())
}

/// Reflect-pad so that the input sits centered inside `target` (height, width).
pub fn pad_reflect<T: Real>(input: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let pad = Padding::centered(input.height(), input.width(), target.0, target.1)?;
    pad_reflect_with(input, pad)
}

/// Reflect-pad with explicit border sizes.
pub fn pad_reflect_with<T: Real>(input: &Tensor<T>, pad: Padding) -> Result<Tensor<T>> {
    let shape = input.shape();
    check_reflect(shape, pad)?;
    if pad.is_zero() {
        return Ok(input.clone());
    }
    let out = pad.padded(shape);
    Ok(Tensor::from_fn(out, |c, y, x| {
        let sy = reflect_index(y as isize - pad.top as isize, shape.height);
        let sx = reflect_index(x as isize - pad.left as isize, shape.width);
        input[(c, sy, sx)]
    }))
}

/// Adjoint of [`pad_reflect_with`]: folds every padded sample back onto the
/// interior pixel it was copied from.
pub fn pad_reflect_adjoint<T: Real>(grad: &Tensor<T>, pad: Padding) -> Result<Tensor<T>> {
    let gs = grad.shape();
    if gs.height < pad.top + pad.bottom || gs.width < pad.left + pad.right {
        return dim_err(format!("gradient {gs} smaller than padding {pad:?}"));
    }
    let inner = Shape::new(
        gs.channels,
        gs.height - pad.top - pad.bottom,
        gs.width - pad.left - pad.right,
    );
    check_reflect(inner, pad)?;
    if pad.is_zero() {
        return Ok(grad.clone());
    }
    let mut out = Tensor::zeros(inner);
    for c in 0..gs.channels {
        for y in 0..gs.height {
            let sy = reflect_index(y as isize - pad.top as isize, inner.height);
            for x in 0..gs.width {
                let sx = reflect_index(x as isize - pad.left as isize, inner.width);
                out[(c, sy, sx)] += grad[(c, y, x)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_row_example() {
        let t = Tensor::from_vec(Shape::new(1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect_with(&t, Padding::new(0, 0, 1, 1)).unwrap();
        assert_eq!(p.data(), &[2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn identity_when_target_matches() {
        let t = Tensor::from_fn(Shape::new(1, 4, 5), |_, y, x| (y * 5 + x) as f64);
        assert_eq!(pad_reflect(&t, (4, 5)).unwrap(), t);
    }

    #[test]
    fn rejects_oversized_padding() {
        let t = Tensor::<f64>::zeros(Shape::new(1, 3, 3));
        assert!(pad_reflect(&t, (9, 3)).is_err());
        assert!(pad_reflect(&t, (2, 3)).is_err());
    }

    #[test]
    fn pad_adjoint_dot_product() {
        let x = Tensor::from_fn(Shape::new(2, 5, 6), |c, y, x| ((c * 31 + y * 7 + x * 3) % 11) as f64 - 5.0);
        let pad = Padding::new(2, 1, 3, 4);
        let px = pad_reflect_with(&x, pad).unwrap();
        let g = Tensor::from_fn(px.shape(), |c, y, x| ((c + y * 13 + x * 5) % 7) as f64 - 3.0);
        let lhs = px.dot(&g).unwrap();
        let rhs = x.dot(&pad_reflect_adjoint(&g, pad).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn image_range_checked() {
        let t = Tensor::filled(Shape::new(1, 2, 2), 1.5);
        assert!(Image::new(t.clone()).is_err());
        let img = Image::from_clamped(&t).unwrap();
        assert!(img.tensor().data().iter().all(|&v| v == 1.0));
    }
}
