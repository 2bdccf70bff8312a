//! The two-branch reconstruction network.
//!
//! Branch 1 turns zero-filled measurements into feature maps through one
//! `L x L` layer and fourteen `3 x 3` layers. Branch 2 starts from the scaled
//! adjoint `x0` and runs the recursion
//!
//! ```text
//! x_{t+1} = rho_t x_t + delta_t x0 + gamma_t conv3x3(a_t)
//! ```
//!
//! where `a_t` is a tap of branch 1.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{ConvSpec, Graph, NodeId};
use crate::conv::{conv2d_transposed, valid_output_len, KernelsRef};
use crate::error::{param_err, Error, Result};
use crate::real::Real;
use crate::sensing::{make_filter_bank, FilterBank, MeasurementSet};
use crate::tensor::{Padding, Shape, Tensor};

/// Number of `3 x 3` layers in branch 1.
pub const BRANCH_LAYERS: usize = 14;
/// Feature maps per branch-1 layer.
pub const FEATURES: usize = 96;
/// Initial `(rho, delta, gamma)` of every stage.
pub const INIT_SCALARS: [f64; 3] = [0.8, 0.1, 0.1];

/// Where a measurement lands in its zero-filled map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    /// Top-left pixel of the sensing window.
    TopLeft,
    /// Pixel `(L/2, L/2)` of the window.
    Center,
}

impl Placement {
    pub fn offset(self, size: usize) -> usize {
        match self {
            Placement::TopLeft => 0,
            Placement::Center => size / 2,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Placement::TopLeft => 0,
            Placement::Center => 1,
        }
    }

    pub fn from_flag(f: u8) -> Result<Self> {
        match f {
            0 => Ok(Placement::TopLeft),
            1 => Ok(Placement::Center),
            _ => Err(Error::Format(format!("unknown placement flag {f}"))),
        }
    }
}

/// Which branch-1 output each stage reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TapMode {
    /// Taps spread evenly over the branch-1 layers.
    PerLayer,
    /// Every stage reads the last layer.
    FinalOnly,
}

impl TapMode {
    pub fn flag(self) -> u8 {
        match self {
            TapMode::PerLayer => 0,
            TapMode::FinalOnly => 1,
        }
    }

    pub fn from_flag(f: u8) -> Result<Self> {
        match f {
            0 => Ok(TapMode::PerLayer),
            1 => Ok(TapMode::FinalOnly),
            _ => Err(Error::Format(format!("unknown tap mode flag {f}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetConfig {
    pub m: usize,
    pub size: usize,
    pub stride: usize,
    pub stages: usize,
    pub init_seed: u64,
    /// Seed of the sensing bank the first layer starts from.
    pub sensing_seed: u64,
    pub placement: Placement,
    pub tap_mode: TapMode,
}

impl NetConfig {
    pub fn new(m: usize, size: usize, stride: usize) -> Self {
        Self {
            m,
            size,
            stride,
            stages: BRANCH_LAYERS,
            init_seed: 0,
            sensing_seed: 0,
            placement: Placement::TopLeft,
            tap_mode: TapMode::PerLayer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.size == 0 || self.stride == 0 || self.stride > self.size {
            return param_err(format!(
                "network geometry m = {}, L = {}, s = {} is invalid",
                self.m, self.size, self.stride
            ));
        }
        if self.stages == 0 {
            return param_err("a network needs at least one stage");
        }
        Ok(())
    }

    /// Branch-1 layer feeding stage `t`.
    pub fn tap_layer(&self, t: usize) -> usize {
        match self.tap_mode {
            TapMode::FinalOnly => BRANCH_LAYERS - 1,
            TapMode::PerLayer => ((t + 1) * BRANCH_LAYERS / self.stages).max(1) - 1,
        }
    }

    /// Whether this network can read measurements taken with `bank`'s geometry.
    pub fn matches_bank(&self, bank: &FilterBank) -> bool {
        self.m == bank.count() && self.size == bank.size() && self.stride == bank.stride()
    }
}

impl fmt::Display for NetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m={} L={} s={} stages={} init_seed={} sensing_seed={} placement={:?} taps={:?}",
            self.m,
            self.size,
            self.stride,
            self.stages,
            self.init_seed,
            self.sensing_seed,
            self.placement,
            self.tap_mode
        )
    }
}

/// A named, shaped block of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> ParamGroup<T> {
    fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    /// Graph-side shape: kernels as `(out*in, k, k)`, vectors as `(n, 1, 1)`.
    fn shape(&self) -> Shape {
        match self.dims.as_slice() {
            [o, i, k, k2] => Shape::new(o * i, *k, *k2),
            _ => Shape::new(self.data.len(), 1, 1),
        }
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape(), self.data.clone()).expect("group length matches dims")
    }

    pub fn cast<U: Real>(&self) -> ParamGroup<U> {
        ParamGroup {
            name: self.name.clone(),
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}

/// Group names in storage order.
pub fn group_names(cfg: &NetConfig) -> Vec<String> {
    let mut names = vec![
        "sensing".to_string(),
        "backproj.weight".to_string(),
        "backproj.bias".to_string(),
    ];
    for j in 0..BRANCH_LAYERS {
        names.push(format!("branch.{j}.weight"));
        names.push(format!("branch.{j}.bias"));
    }
    for t in 0..cfg.stages {
        names.push(format!("stage.{t}.weight"));
        names.push(format!("stage.{t}.bias"));
        names.push(format!("stage.{t}.scalars"));
    }
    names
}

/// Expected dims of every group, in storage order.
pub fn group_dims(cfg: &NetConfig) -> Vec<Vec<usize>> {
    let (m, l) = (cfg.m, cfg.size);
    let mut dims = vec![vec![m, 1, l, l], vec![m, m, l, l], vec![m]];
    for j in 0..BRANCH_LAYERS {
        let cin = if j == 0 { m } else { FEATURES };
        dims.push(vec![FEATURES, cin, 3, 3]);
        dims.push(vec![FEATURES]);
    }
    for _ in 0..cfg.stages {
        dims.push(vec![1, FEATURES, 3, 3]);
        dims.push(vec![1]);
        dims.push(vec![3]);
    }
    dims
}

/// Total number of scalar parameters for a configuration.
pub fn parameter_count(cfg: &NetConfig) -> usize {
    group_dims(cfg).iter().map(|d| d.iter().product::<usize>()).sum()
}

/// Indices of groups inside [`NetworkParams::groups`].
const SENSING: usize = 0;
const BACKPROJ_W: usize = 1;
const BACKPROJ_B: usize = 2;
const fn branch_w(j: usize) -> usize {
    3 + 2 * j
}
const fn stage_base(t: usize) -> usize {
    3 + 2 * BRANCH_LAYERS + 3 * t
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub groups: Vec<ParamGroup<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// Fresh parameters: sensing filters from `sensing_seed`, back-projection
    /// kernels set to the flipped sensing filters on the diagonal, He-scaled
    /// Gaussian weights elsewhere, zero biases, stage scalars at
    /// [`INIT_SCALARS`].
    pub fn init(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, l) = (cfg.m, cfg.size);
        let bank = make_filter_bank(m, l, cfg.stride, cfg.sensing_seed)?;
        let phi = bank.filters().data();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };

        let mut groups: Vec<ParamGroup<f64>> = Vec::new();
        groups.push(ParamGroup::new("sensing", vec![m, 1, l, l], phi.to_vec()));
        let mut bp = vec![0.0; m * m * l * l];
        for i in 0..m {
            for ky in 0..l {
                for kx in 0..l {
                    bp[((i * m + i) * l + ky) * l + kx] = phi[(i * l + (l - 1 - ky)) * l + (l - 1 - kx)];
                }
            }
        }
        groups.push(ParamGroup::new("backproj.weight", vec![m, m, l, l], bp));
        groups.push(ParamGroup::new("backproj.bias", vec![m], vec![0.0; m]));
        for j in 0..BRANCH_LAYERS {
            let cin = if j == 0 { m } else { FEATURES };
            let w = he(cin * 9, FEATURES * cin * 9);
            groups.push(ParamGroup::new(format!("branch.{j}.weight"), vec![FEATURES, cin, 3, 3], w));
            groups.push(ParamGroup::new(format!("branch.{j}.bias"), vec![FEATURES], vec![0.0; FEATURES]));
        }
        for t in 0..cfg.stages {
            let w = he(FEATURES * 9, FEATURES * 9);
            groups.push(ParamGroup::new(format!("stage.{t}.weight"), vec![1, FEATURES, 3, 3], w));
            groups.push(ParamGroup::new(format!("stage.{t}.bias"), vec![1], vec![0.0]));
            groups.push(ParamGroup::new(format!("stage.{t}.scalars"), vec![3], INIT_SCALARS.to_vec()));
        }
        Ok(NetworkParams { groups }.cast())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            groups: self.groups.iter().map(ParamGroup::cast).collect(),
        }
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup<T>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup<T>> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub fn count(&self) -> usize {
        self.groups.iter().map(|g| g.data.len()).sum()
    }

    /// Check names and dims against the configuration.
    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        let names = group_names(cfg);
        let dims = group_dims(cfg);
        if self.groups.len() != names.len() {
            return param_err(format!(
                "expected {} parameter groups for {cfg}, found {}",
                names.len(),
                self.groups.len()
            ));
        }
        for ((g, n), d) in self.groups.iter().zip(&names).zip(&dims) {
            if &g.name != n || &g.dims != d || g.data.len() != d.iter().product::<usize>() {
                return param_err(format!(
                    "parameter group {} {:?} does not match expected {n} {d:?}",
                    g.name, g.dims
                ));
            }
        }
        Ok(())
    }

    /// Sensing filters as a bank usable by the classical operators.
    pub fn sensing_bank(&self, cfg: &NetConfig) -> Result<FilterBank> {
        let g = &self.groups[SENSING];
        let data = g.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        FilterBank::from_filters(
            crate::conv::Kernels::from_vec(cfg.m, 1, cfg.size, data)?,
            cfg.stride,
            cfg.sensing_seed,
        )
    }

    /// Set every stage to `(rho, delta, gamma)`.
    pub fn set_stage_scalars(&mut self, cfg: &NetConfig, scalars: [T; 3]) {
        for t in 0..cfg.stages {
            self.groups[stage_base(t) + 2].data.copy_from_slice(&scalars);
        }
    }
}

/// Graph inputs of one forward pass.
pub enum Source<'a, T> {
    /// Image on a valid sensing geometry; sensed inside the graph so the
    /// sensing filters receive gradients.
    Image(&'a Tensor<T>),
    /// Precomputed measurement maps and the image size they came from.
    Measurements(&'a Tensor<T>, (usize, usize)),
}

/// A built graph plus the handles needed to read it.
pub struct Built<T> {
    pub graph: Graph<T>,
    pub output: NodeId,
    /// One node per parameter group, in storage order.
    pub params: Vec<NodeId>,
    pub x0: NodeId,
}

fn delta_kernels<T: Real>(m: usize, l: usize, off: usize) -> Tensor<T> {
    let mut k = Tensor::zeros(Shape::new(m * m, l, l));
    for i in 0..m {
        k[(i * m + i, off, off)] = T::one();
    }
    k
}

/// Place every measurement at its window's offset pixel in an otherwise zero
/// `m x H x W` stack.
pub fn zero_fill_backproject(y: &MeasurementSet, cfg: &NetConfig) -> Result<Tensor<f64>> {
    let meta = &y.meta;
    if meta.filters != cfg.m || meta.filter_size != cfg.size || meta.stride != cfg.stride {
        return Err(Error::MetaMismatch(format!(
            "measurements (m={}, L={}, s={}) vs network {cfg}",
            meta.filters, meta.filter_size, meta.stride
        )));
    }
    let k = delta_kernels::<f64>(cfg.m, cfg.size, cfg.placement.offset(cfg.size));
    conv2d_transposed(
        &y.maps,
        KernelsRef::new(cfg.m, cfg.m, cfg.size, k.data())?,
        cfg.stride,
        (meta.height, meta.width),
    )
}

/// Build the full network graph.
pub fn build<T: Real>(params: &NetworkParams<T>, cfg: &NetConfig, source: Source<'_, T>) -> Result<Built<T>> {
    cfg.validate()?;
    params.check(cfg)?;
    let (m, l, s) = (cfg.m, cfg.size, cfg.stride);
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.groups.iter().map(|p| g.param(p.tensor())).collect();

    let sense_spec = ConvSpec { out_ch: m, in_ch: 1, size: l, stride: s };
    let (y, (h, w)) = match source {
        Source::Image(x) => {
            if x.channels() != 1 {
                return param_err(format!("network input must be one channel, got {}", x.shape()));
            }
            let xi = g.input(x.clone());
            (g.conv(xi, ids[SENSING], sense_spec, Padding::default())?, (x.height(), x.width()))
        }
        Source::Measurements(maps, hw) => {
            let gh = valid_output_len(hw.0, l, s)?;
            let gw = valid_output_len(hw.1, l, s)?;
            if maps.shape() != Shape::new(m, gh, gw) {
                return Err(Error::MetaMismatch(format!(
                    "measurement maps {} do not fit {m}x{gh}x{gw}",
                    maps.shape()
                )));
            }
            (g.input(maps.clone()), hw)
        }
    };
    let (gh, gw) = (valid_output_len(h, l, s)?, valid_output_len(w, l, s)?);

    // branch 2 start: Phi^T y over the mean Gram diagonal of the current filters
    let adj = g.conv_transposed(y, ids[SENSING], sense_spec, (h, w))?;
    let x0 = g.energy_norm(adj, ids[SENSING], (gh * gw) as f64 / (h * w) as f64)?;

    // branch 1
    let off = cfg.placement.offset(l);
    let zf_kernel = g.input(delta_kernels(m, l, off));
    let zf = g.conv_transposed(y, zf_kernel, ConvSpec { out_ch: m, in_ch: m, size: l, stride: s }, (h, w))?;
    let bp_pad = Padding::new(l - 1 - off, off, l - 1 - off, off);
    let bp = g.conv(zf, ids[BACKPROJ_W], ConvSpec { out_ch: m, in_ch: m, size: l, stride: 1 }, bp_pad)?;
    let bp = g.bias(bp, ids[BACKPROJ_B])?;
    let mut feat = g.relu(bp)?;
    let mut taps = Vec::with_capacity(BRANCH_LAYERS);
    for j in 0..BRANCH_LAYERS {
        let cin = if j == 0 { m } else { FEATURES };
        let spec = ConvSpec { out_ch: FEATURES, in_ch: cin, size: 3, stride: 1 };
        let c = g.conv(feat, ids[branch_w(j)], spec, Padding::uniform(1))?;
        let c = g.bias(c, ids[branch_w(j) + 1])?;
        feat = if j + 1 < BRANCH_LAYERS { g.relu(c)? } else { c };
        taps.push(feat);
    }

    // branch 2 recursion
    let mut x = x0;
    for t in 0..cfg.stages {
        let base = stage_base(t);
        let spec = ConvSpec { out_ch: 1, in_ch: FEATURES, size: 3, stride: 1 };
        let c = g.conv(taps[cfg.tap_layer(t)], ids[base], spec, Padding::uniform(1))?;
        let c = g.bias(c, ids[base + 1])?;
        let a = g.scale(x, ids[base + 2], 0)?;
        let b = g.scale(x0, ids[base + 2], 1)?;
        let c = g.scale(c, ids[base + 2], 2)?;
        let ab = g.add(a, b)?;
        x = g.add(ab, c)?;
    }

    Ok(Built {
        graph: g,
        output: x,
        params: ids,
        x0,
    })
}

/// Forward pass without gradients.
pub fn forward<T: Real>(params: &NetworkParams<T>, cfg: &NetConfig, source: Source<'_, T>) -> Result<Tensor<T>> {
    let mut b = build(params, cfg, source)?;
    b.graph.forward()?;
    Ok(b.graph.value(b.output)?.clone())
}

/// Reconstruct from a measurement set. The result has the sensed (padded)
/// geometry; crop with the metadata to get the original size.
pub fn reconstruct<T: Real>(params: &NetworkParams<T>, cfg: &NetConfig, y: &MeasurementSet) -> Result<Tensor<f64>> {
    zero_fill_backproject(y, cfg)?;
    let maps = y.maps.cast::<T>();
    let out = forward(params, cfg, Source::Measurements(&maps, (y.meta.height, y.meta.width)))?;
    Ok(out.cast())
}

/// Squared error `|f(x) - x|^2` of one example and its parameter gradients
/// scaled by `weight` (use `1/batch` for a mean).
pub fn example_loss_grad<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetConfig,
    x: &Tensor<T>,
    weight: T,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut b = build(params, cfg, Source::Image(x))?;
    b.graph.forward()?;
    let out = b.graph.value(b.output)?;
    let diff = out.sub(x)?;
    let loss = diff.norm_sq();
    let two = T::one() + T::one();
    b.graph.backward(b.output, diff.scale(two * weight))?;
    let grads = b
        .params
        .iter()
        .map(|&id| b.graph.grad(id).cloned())
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}
