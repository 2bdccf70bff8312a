//! Self-checks behind `convcs verify`.
//!
//! Every suite compares a fast path against an independent reference and
//! reports the worst observed error next to its tolerance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{param_err, Error, Result};
use crate::nn::{build, example_loss_grad, NetConfig, NetworkParams, Source};
use crate::sensing::{adjoint, dense_matrix, make_filter_bank, sense, FilterBank, Preset};
use crate::solver::AnalysisFilterBank;
use crate::tensor::{pad_reflect, Shape, Tensor};

pub const ADJOINT_TOL: f64 = 1e-10;
pub const ORACLE_TOL: f64 = 1e-12;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const FRAME_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Adjoint,
    Oracle,
    Gradcheck,
    Frame,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(Suite::Adjoint),
            "oracle" => Ok(Suite::Oracle),
            "gradcheck" => Ok(Suite::Gradcheck),
            "frame" => Ok(Suite::Frame),
            _ => param_err(format!("unknown suite {s:?} (adjoint|oracle|gradcheck|frame)")),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Adjoint => "adjoint",
            Suite::Oracle => "oracle",
            Suite::Gradcheck => "gradcheck",
            Suite::Frame => "frame",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub error: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn max_error(&self) -> f64 {
        self.cases.iter().map(|c| c.error).fold(0.0, f64::max)
    }

    pub fn tolerance(&self) -> f64 {
        self.cases.first().map_or(0.0, |c| c.tolerance)
    }

    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(CaseResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Adjoint => adjoint_suite(seed, 100),
        Suite::Oracle => oracle_suite(seed, 50),
        Suite::Gradcheck => gradcheck_suite(seed, 5),
        Suite::Frame => frame_suite(),
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.sample(StandardNormal))
}

/// A random sensing geometry `(m, L, s, H, W)` with `s <= L` and a valid image size.
pub fn random_geometry(rng: &mut ChaCha8Rng, max_pixels: usize) -> (usize, usize, usize, usize, usize) {
    loop {
        let m = rng.random_range(1..=4);
        let l = rng.random_range(1..=9);
        let s = rng.random_range(1..=l);
        let h = l + s * rng.random_range(0..=8);
        let w = l + s * rng.random_range(0..=8);
        if h * w <= max_pixels {
            return (m, l, s, h, w);
        }
    }
}

/// `|<Phi x, y> - <x, Phi^T y>| / (|x| |y|)` over random geometries.
pub fn adjoint_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for config in 0..5 {
        let (m, l, s, h, w) = random_geometry(&mut rng, 4096);
        let bank = make_filter_bank(m, l, s, rng.random())?;
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let x = normal_tensor(&mut rng, Shape::new(1, h, w));
            let yx = sense(&x, &bank)?;
            let mut y = yx.clone();
            y.maps = normal_tensor(&mut rng, yx.maps.shape());
            let lhs = yx.maps.dot(&y.maps)?;
            let rhs = x.dot(&adjoint(&y, &bank)?)?;
            worst = worst.max((lhs - rhs).abs() / (x.norm() * y.maps.norm()));
        }
        cases.push(CaseResult {
            name: format!("config {config}: m={m} L={l} s={s} {h}x{w}, {trials} trials"),
            seed,
            error: worst,
            tolerance: ADJOINT_TOL,
        });
    }
    Ok(SuiteReport {
        suite: Suite::Adjoint,
        cases,
    })
}

/// Measurements by explicit block extraction: gather every `L x L` window at
/// step `s`, vectorise it, and multiply by the `m x L^2` filter matrix.
pub fn block_extraction(x: &Tensor<f64>, bank: &FilterBank) -> Result<Tensor<f64>> {
    let (l, s, m) = (bank.size(), bank.stride(), bank.count());
    let (gh, gw) = bank.grid(x.height(), x.width())?;
    let filters = bank.filters().data();
    let mut out = Tensor::zeros(Shape::new(m, gh, gw));
    let mut block = vec![0.0; l * l];
    for by in 0..gh {
        for bx in 0..gw {
            for ky in 0..l {
                for kx in 0..l {
                    block[ky * l + kx] = x[(0, by * s + ky, bx * s + kx)];
                }
            }
            for i in 0..m {
                let row = &filters[i * l * l..(i + 1) * l * l];
                out[(i, by, bx)] = row.iter().zip(&block).map(|(a, b)| a * b).sum();
            }
        }
    }
    Ok(out)
}

/// Dense-matrix and block-extraction oracles against [`sense`], as
/// `|A x - sense(x)| / |x|`.
pub fn oracle_suite(seed: u64, configs: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for config in 0..configs {
        let (m, l, s, h, w) = random_geometry(&mut rng, 1600);
        let bank = make_filter_bank(m, l, s, rng.random())?;
        let x = normal_tensor(&mut rng, Shape::new(1, h, w));
        let y = sense(&x, &bank)?;
        let a = dense_matrix(&bank, h, w)?;
        let ax = Tensor::from_vec(y.maps.shape(), a.matvec(x.data()))?;
        let blocks = block_extraction(&x, &bank)?;
        let err = ax.sub(&y.maps)?.norm().max(blocks.sub(&y.maps)?.norm()) / x.norm();
        cases.push(CaseResult {
            name: format!("config {config}: m={m} L={l} s={s} {h}x{w}"),
            seed,
            error: err,
            tolerance: ORACLE_TOL,
        });
    }
    Ok(SuiteReport {
        suite: Suite::Oracle,
        cases,
    })
}

/// Tight-frame identity `synthesize(analyze(x)) = c x` for the default bank
/// and a few other DCT sizes.
pub fn frame_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cases = Vec::new();
    let banks = [
        ("default".to_string(), AnalysisFilterBank::default()),
        ("dct2".to_string(), AnalysisFilterBank::dct(2)?),
        ("dct8".to_string(), AnalysisFilterBank::dct(8)?),
    ];
    for (name, bank) in banks {
        for (h, w) in [(16, 16), (13, 21), (64, 64)] {
            let x = normal_tensor(&mut rng, Shape::new(1, h, w));
            let back = bank.synthesize(&bank.analyze(&x)?)?;
            let err = back.sub(&x.scale(bank.norm_const()))?.norm() / x.norm();
            cases.push(CaseResult {
                name: format!("{name} on {h}x{w}"),
                seed: 0,
                error: err,
                tolerance: FRAME_TOL,
            });
        }
    }
    Ok(SuiteReport {
        suite: Suite::Frame,
        cases,
    })
}

/// Per-group result of a finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Relative step for the central differences (64-bit).
pub const FD_STEP: f64 = 1e-4;

/// Compare backprop against central differences of the squared-error loss on
/// a `side x side` image, for every parameter group. Per group the two
/// largest-gradient entries and `extra` random entries are checked; errors
/// are `|g - fd| / max(|g|, |fd|, 1e-3 * max_group |g|)`.
///
/// Biases are jittered off zero first, and the differences are taken with the
/// ReLU gates frozen at the test point, so a perturbation that crosses a kink
/// cannot corrupt the quotient. The frozen network has the same derivative as
/// the free one at that point.
pub fn gradcheck_network(cfg: &NetConfig, side: usize, seed: u64, extra: usize) -> Result<Vec<GroupCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<f64>::init(cfg)?;
    for g in params.groups.iter_mut().filter(|g| g.name.ends_with(".bias")) {
        g.data.iter_mut().for_each(|v| *v += 0.05 * rng.sample::<f64, _>(StandardNormal));
    }
    let bank = params.sensing_bank(cfg)?;
    let img = Tensor::from_fn(Shape::new(1, side, side), |_, _, _| rng.random::<f64>());
    let x = pad_reflect(&img, bank.valid_geometry(side, side))?;

    let mut base = build(&params, cfg, Source::Image(&x))?;
    base.graph.forward()?;
    let pattern = base.graph.activation_pattern()?;
    let (_, grads) = example_loss_grad(&params, cfg, &x, 1.0)?;
    let loss = |p: &NetworkParams<f64>| -> Result<f64> {
        let mut b = build(p, cfg, Source::Image(&x))?;
        b.graph.freeze_activations(pattern.clone());
        b.graph.forward()?;
        Ok(b.graph.value(b.output)?.sub(&x)?.norm_sq())
    };

    let mut report = Vec::new();
    for (gi, group) in params.groups.iter().enumerate() {
        let g = grads[gi].data();
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut picks: Vec<usize> = order.into_iter().take(2).collect();
        for _ in 0..extra {
            picks.push(rng.random_range(0..g.len()));
        }
        picks.sort_unstable();
        picks.dedup();
        let mut worst: f64 = 0.0;
        for &j in &picks {
            let orig = group.data[j];
            let h = FD_STEP * orig.abs().max(1.0);
            let mut p = params.clone();
            p.groups[gi].data[j] = orig + h;
            let up = loss(&p)?;
            p.groups[gi].data[j] = orig - h;
            let down = loss(&p)?;
            let fd = (up - down) / (2.0 * h);
            let denom = g[j].abs().max(fd.abs()).max(1e-3 * gmax);
            let rel = if denom == 0.0 { 0.0 } else { (g[j] - fd).abs() / denom };
            worst = worst.max(rel);
        }
        report.push(GroupCheck {
            group: group.name.clone(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Configuration the gradient suite runs on: the rate-0.2 geometry at the
/// default depth.
pub fn gradcheck_config(seed: u64) -> NetConfig {
    let (m, l, s) = Preset::Rate02.params();
    NetConfig {
        init_seed: seed,
        sensing_seed: seed ^ 0x5eed,
        ..NetConfig::new(m, l, s)
    }
}

pub fn gradcheck_suite(seed: u64, seeds: usize) -> Result<SuiteReport> {
    let per_seed: Vec<Result<Vec<GroupCheck>>> = crate::par::map_range(seeds, |k| {
        let s = seed + k as u64;
        gradcheck_network(&gradcheck_config(s), 24, s, 1)
    });
    let mut cases = Vec::new();
    for (k, r) in per_seed.into_iter().enumerate() {
        for g in r? {
            cases.push(CaseResult {
                name: format!("{} ({} entries)", g.group, g.checked),
                seed: seed + k as u64,
                error: g.max_rel_error,
                tolerance: GRADCHECK_TOL,
            });
        }
    }
    Ok(SuiteReport {
        suite: Suite::Gradcheck,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in [Suite::Adjoint, Suite::Oracle, Suite::Gradcheck, Suite::Frame] {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn quick_suites_pass() {
        for r in [adjoint_suite(1, 10).unwrap(), oracle_suite(2, 5).unwrap(), frame_suite().unwrap()] {
            assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn block_extraction_delta_filter() {
        let mut k = crate::conv::Kernels::zeros(1, 1, 3);
        k.data_mut()[0] = 1.0;
        let bank = FilterBank::from_filters(k, 3, 0).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 6, 6), |_, y, x| (y * 6 + x) as f64);
        let b = block_extraction(&x, &bank).unwrap();
        assert_eq!(b.data(), &[0.0, 3.0, 18.0, 21.0]);
    }
}
