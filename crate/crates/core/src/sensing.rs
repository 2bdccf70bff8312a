//! Convolutional compressive sensing operator.
//!
//! An image is measured by `m` random `L x L` filters applied as a strided
//! valid cross-correlation; every window position of every filter yields one
//! measurement. Equivalently, all `L x L` blocks at step `s` are extracted and
//! multiplied by the `m x L^2` matrix whose rows are the vectorized filters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::conv::{conv2d_transposed, conv2d_valid, valid_output_len, Kernels};
use crate::error::{param_err, Error, Result};
use crate::tensor::{pad_reflect_with, Image, Padding, Shape, Tensor};

/// Default cap on `N = H * W` for [`dense_matrix`].
pub const DENSE_CAP: usize = 4096;

/// Numeric precision a measurement set was produced in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn flag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Precision::F32),
            1 => Ok(Precision::F64),
            other => Err(Error::Format(format!("unknown precision flag {other}"))),
        }
    }
}

/// Named sensing configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// `L=17, m=8, s=8` as published for rate 0.05 (achieves 0.125).
    Rate005,
    /// `L=17, m=3, s=8`, achieving 3/64 ≈ 0.047.
    Rate005Corrected,
    /// `L=17, m=6, s=8`.
    Rate01,
    /// `L=11, m=5, s=5`.
    Rate02,
    /// `L=11, m=8, s=5`.
    Rate03,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Rate005,
        Preset::Rate005Corrected,
        Preset::Rate01,
        Preset::Rate02,
        Preset::Rate03,
    ];

    /// `(m, L, s)`
    pub fn params(self) -> (usize, usize, usize) {
        match self {
            Preset::Rate005 => (8, 17, 8),
            Preset::Rate005Corrected => (3, 17, 8),
            Preset::Rate01 => (6, 17, 8),
            Preset::Rate02 => (5, 11, 5),
            Preset::Rate03 => (8, 11, 5),
        }
    }

    pub fn nominal_rate(self) -> f64 {
        match self {
            Preset::Rate005 | Preset::Rate005Corrected => 0.05,
            Preset::Rate01 => 0.1,
            Preset::Rate02 => 0.2,
            Preset::Rate03 => 0.3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Rate005 => "rate0.05",
            Preset::Rate005Corrected => "rate0.05-corrected",
            Preset::Rate01 => "rate0.1",
            Preset::Rate02 => "rate0.2",
            Preset::Rate03 => "rate0.3",
        }
    }

    pub fn bank(self, seed: u64) -> Result<FilterBank> {
        let (m, l, s) = self.params();
        let mut bank = make_filter_bank(m, l, s, seed)?;
        bank.rate_label = self.nominal_rate();
        Ok(bank)
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown preset {s:?}")))
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `m` sensing filters of size `L x L` applied with stride `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    filters: Kernels<f64>,
    stride: usize,
    seed: u64,
    pub rate_label: f64,
}

/// Draw `m` filters with i.i.d. `N(0, 1/L^2)` taps from a ChaCha8 stream seeded
/// with `seed`.
pub fn make_filter_bank(m: usize, size: usize, stride: usize, seed: u64) -> Result<FilterBank> {
    if m == 0 || size == 0 || stride == 0 {
        return param_err(format!(
            "m = {m}, L = {size} and s = {stride} must all be positive"
        ));
    }
    if stride > size {
        return param_err(format!("stride {stride} exceeds filter size {size}"));
    }
    let normal = Normal::new(0.0, 1.0 / size as f64)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * size * size).map(|_| normal.sample(&mut rng)).collect();
    Ok(FilterBank {
        filters: Kernels::from_vec(m, 1, size, data)?,
        stride,
        seed,
        rate_label: m as f64 / (stride * stride) as f64,
    })
}

impl FilterBank {
    /// Bank with caller-provided filters (stack of `m x 1 x L x L`); the seed is
    /// kept only as a label.
    pub fn from_filters(filters: Kernels<f64>, stride: usize, seed: u64) -> Result<Self> {
        if filters.in_channels() != 1 || filters.out_channels() == 0 {
            return param_err("sensing filters must be an m x 1 x L x L stack with m >= 1");
        }
        if stride == 0 || stride > filters.size() {
            return param_err(format!(
                "stride {stride} must lie in 1..={}",
                filters.size()
            ));
        }
        let m = filters.out_channels();
        Ok(Self {
            filters,
            stride,
            seed,
            rate_label: m as f64 / (stride * stride) as f64,
        })
    }

    pub fn filters(&self) -> &Kernels<f64> {
        &self.filters
    }

    pub fn count(&self) -> usize {
        self.filters.out_channels()
    }

    pub fn size(&self) -> usize {
        self.filters.size()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of windows per axis for an `h x w` image.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            valid_output_len(h, self.size(), self.stride)?,
            valid_output_len(w, self.size(), self.stride)?,
        ))
    }

    /// Smallest `(H', W') >= (h, w)` with `H' >= L` and `(H' - L)` divisible by `s`.
    pub fn valid_geometry(&self, h: usize, w: usize) -> (usize, usize) {
        let fit = |n: usize| {
            let l = self.size();
            if n <= l {
                l
            } else {
                l + (n - l).div_ceil(self.stride) * self.stride
            }
        };
        (fit(h), fit(w))
    }

    /// Mean diagonal entry of `Phi^T Phi` on an `h x w` image, i.e.
    /// `||Phi||_F^2 / N`.
    pub fn gram_diag_mean(&self, h: usize, w: usize) -> Result<f64> {
        let (gh, gw) = self.grid(h, w)?;
        let energy: f64 = self.filters.data().iter().map(|v| v * v).sum();
        Ok((gh * gw) as f64 * energy / (h * w) as f64)
    }
}

/// Geometry and provenance carried alongside the measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMeta {
    /// Sensed (padded) image height.
    pub height: usize,
    /// Sensed (padded) image width.
    pub width: usize,
    pub filter_size: usize,
    pub filters: usize,
    pub stride: usize,
    pub seed: u64,
    pub noise_sigma255: f64,
    pub precision: Precision,
    /// Reflect padding applied before sensing; cropping it off restores the
    /// original image size.
    pub padding: Padding,
}

impl MeasurementMeta {
    pub fn grid(&self) -> (usize, usize) {
        (
            (self.height - self.filter_size) / self.stride + 1,
            (self.width - self.filter_size) / self.stride + 1,
        )
    }

    pub fn measurement_count(&self) -> usize {
        let (gh, gw) = self.grid();
        self.filters * gh * gw
    }

    /// `M / N` on the sensed geometry.
    pub fn achieved_rate(&self) -> f64 {
        self.measurement_count() as f64 / (self.height * self.width) as f64
    }

    pub fn original_size(&self) -> (usize, usize) {
        (
            self.height - self.padding.top - self.padding.bottom,
            self.width - self.padding.left - self.padding.right,
        )
    }

    /// Rebuild the seeded filter bank this metadata refers to.
    pub fn filter_bank(&self) -> Result<FilterBank> {
        make_filter_bank(self.filters, self.filter_size, self.stride, self.seed)
    }

    /// Crop a sensed-geometry reconstruction back to the original image size.
    pub fn crop_to_original(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (h, w) = self.original_size();
        x.crop(self.padding.top, self.padding.left, h, w)
    }

    pub fn check_bank(&self, bank: &FilterBank) -> Result<()> {
        if bank.count() != self.filters || bank.size() != self.filter_size || bank.stride() != self.stride {
            return Err(Error::MetaMismatch(format!(
                "measurements were taken with (m={}, L={}, s={}), bank is (m={}, L={}, s={})",
                self.filters,
                self.filter_size,
                self.stride,
                bank.count(),
                bank.size(),
                bank.stride()
            )));
        }
        Ok(())
    }
}

/// Measurements organised as `m` maps of `M0h x M0w`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub maps: Tensor<f64>,
    pub meta: MeasurementMeta,
}

impl MeasurementSet {
    pub fn new(maps: Tensor<f64>, meta: MeasurementMeta) -> Result<Self> {
        let (gh, gw) = meta.grid();
        if maps.shape() != Shape::new(meta.filters, gh, gw) {
            return Err(Error::Dimension(format!(
                "measurement maps {} do not match metadata {}x{gh}x{gw}",
                maps.shape(),
                meta.filters
            )));
        }
        Ok(Self { maps, meta })
    }

    pub fn achieved_rate(&self) -> f64 {
        self.meta.achieved_rate()
    }
}

/// Apply `Phi` to a single-channel tensor whose size already satisfies the
/// window divisibility constraint.
pub fn sense(x: &Tensor<f64>, bank: &FilterBank) -> Result<MeasurementSet> {
    if x.channels() != 1 {
        return Err(Error::Dimension(format!(
            "sensing expects a single-channel image, got {}",
            x.shape()
        )));
    }
    let maps = conv2d_valid(x, bank.filters.view(), bank.stride)?;
    let meta = MeasurementMeta {
        height: x.height(),
        width: x.width(),
        filter_size: bank.size(),
        filters: bank.count(),
        stride: bank.stride,
        seed: bank.seed,
        noise_sigma255: 0.0,
        precision: Precision::F64,
        padding: Padding::default(),
    };
    MeasurementSet::new(maps, meta)
}

/// Reflect-pad an arbitrary image to the nearest valid geometry, then sense.
pub fn sense_image(img: &Image, bank: &FilterBank) -> Result<MeasurementSet> {
    let (h, w) = bank.valid_geometry(img.height(), img.width());
    let pad = Padding::centered(img.height(), img.width(), h, w)?;
    let padded = pad_reflect_with(img.tensor(), pad)?;
    let mut y = sense(&padded, bank)?;
    y.meta.padding = pad;
    Ok(y)
}

/// `Phi^T y`: scatter every measurement back through its filter.
pub fn adjoint(y: &MeasurementSet, bank: &FilterBank) -> Result<Tensor<f64>> {
    y.meta.check_bank(bank)?;
    conv2d_transposed(
        &y.maps,
        bank.filters.view(),
        bank.stride,
        (y.meta.height, y.meta.width),
    )
}

/// Back-projection `Phi^T y / c0` with `c0` the mean diagonal of `Phi^T Phi`,
/// so a constant image maps to roughly itself.
pub fn back_project(y: &MeasurementSet, bank: &FilterBank) -> Result<Tensor<f64>> {
    let c0 = bank.gram_diag_mean(y.meta.height, y.meta.width)?;
    let mut x = adjoint(y, bank)?;
    if c0 > 0.0 {
        x.scale_in_place(1.0 / c0);
    }
    Ok(x)
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma255 / 255`.
pub fn add_noise(y: &MeasurementSet, sigma255: f64, seed: u64) -> Result<MeasurementSet> {
    if !(sigma255 >= 0.0) || !sigma255.is_finite() {
        return param_err(format!("noise level {sigma255} must be finite and >= 0"));
    }
    let mut out = y.clone();
    if sigma255 == 0.0 {
        return Ok(out);
    }
    let sigma = sigma255 / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.maps.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * n;
    }
    out.meta.noise_sigma255 = y.meta.noise_sigma255.hypot(sigma255);
    Ok(out)
}

/// Explicit row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matvec_transposed(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }
}

/// `Phi` as an explicit `M x N` matrix for an `h x w` image; rows are ordered
/// filter-major, then window row-major, matching [`sense`].
pub fn dense_matrix(bank: &FilterBank, h: usize, w: usize) -> Result<DenseMatrix> {
    dense_matrix_with_cap(bank, h, w, DENSE_CAP)
}

pub fn dense_matrix_with_cap(bank: &FilterBank, h: usize, w: usize, cap: usize) -> Result<DenseMatrix> {
    let n = h * w;
    if n > cap {
        return Err(Error::SizeCap { n, cap });
    }
    let (gh, gw) = bank.grid(h, w)?;
    let (l, s) = (bank.size(), bank.stride());
    let rows = bank.count() * gh * gw;
    let mut data = vec![0.0; rows * n];
    for i in 0..bank.count() {
        let taps = bank.filters.tap(i, 0);
        for wy in 0..gh {
            for wx in 0..gw {
                let r = (i * gh + wy) * gw + wx;
                let row = &mut data[r * n..(r + 1) * n];
                for ky in 0..l {
                    for kx in 0..l {
                        row[(wy * s + ky) * w + wx * s + kx] = taps[ky * l + kx];
                    }
                }
            }
        }
    }
    Ok(DenseMatrix {
        rows,
        cols: n,
        data,
    })
}
