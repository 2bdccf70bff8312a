//! Patch datasets, the minibatch ADAM loop and PSNR evaluation sweeps.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Error, Result};
use crate::formats::read_ccsn;
use crate::imageio::read_image;
use crate::nn::{adam_step, example_loss_grad, reconstruct, AdamState, NetConfig, NetworkParams};
use crate::par;
use crate::sensing::{add_noise, back_project, sense_image, FilterBank, Preset};
use crate::solver::{reconstruct_iterative, AnalysisFilterBank, SolverConfig};
use crate::tensor::{pad_reflect, Image, Shape, Tensor};

/// Mean over the batch of `|out - target|^2`.
pub fn l2_loss(out: &[Tensor<f64>], target: &[Tensor<f64>]) -> Result<f64> {
    if out.len() != target.len() {
        return Err(Error::Dimension(format!(
            "batch sizes differ: {} outputs, {} targets",
            out.len(),
            target.len()
        )));
    }
    if out.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (o, t) in out.iter().zip(target) {
        total += o.sub(t)?.norm_sq();
    }
    Ok(total / out.len() as f64)
}

/// Gradient of [`l2_loss`] with respect to each output: `2 (out - target) / T`.
pub fn l2_loss_grad(out: &[Tensor<f64>], target: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let scale = 2.0 / out.len().max(1) as f64;
    out.iter()
        .zip(target)
        .map(|(o, t)| Ok(o.sub(t)?.scale(scale)))
        .collect()
}

/// Step-halving schedule `lr0 * 2^-floor(u / halve_every)`.
pub fn learning_rate(lr0: f64, halve_every: usize, update: usize) -> f64 {
    let halvings = (update / halve_every.max(1)).min(i32::MAX as usize) as i32;
    lr0 * 0.5f64.powi(halvings)
}

/// Which dihedral variants to add per patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub flips: bool,
    pub rotations: bool,
}

impl Augment {
    pub const ALL: Augment = Augment { flips: true, rotations: true };
    pub const NONE: Augment = Augment { flips: false, rotations: false };
}

fn rot90(t: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (t.height(), t.width());
    Tensor::from_fn(Shape::new(t.channels(), w, h), |c, y, x| t[(c, x, w - 1 - y)])
}

fn flip_h(t: &Tensor<f64>) -> Tensor<f64> {
    let w = t.width();
    Tensor::from_fn(t.shape(), |c, y, x| t[(c, y, w - 1 - x)])
}

fn flip_v(t: &Tensor<f64>) -> Tensor<f64> {
    let h = t.height();
    Tensor::from_fn(t.shape(), |c, y, x| t[(c, h - 1 - y, x)])
}

/// Distinct dihedral variants of `t` (identity first). With both flags on this
/// is the full orbit of up to 8 elements.
pub fn variants(t: &Tensor<f64>, aug: Augment) -> Vec<Tensor<f64>> {
    let mut out = vec![t.clone()];
    if aug.rotations {
        for _ in 0..3 {
            let next = rot90(out.last().expect("nonempty"));
            out.push(next);
        }
    }
    if aug.flips {
        if aug.rotations {
            let flipped: Vec<_> = out.iter().map(flip_h).collect();
            out.extend(flipped);
        } else {
            out.push(flip_h(t));
            out.push(flip_v(t));
        }
    }
    let mut uniq: Vec<Tensor<f64>> = Vec::with_capacity(out.len());
    for v in out {
        if !uniq.contains(&v) {
            uniq.push(v);
        }
    }
    uniq
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub patch_size: usize,
    /// Step between patch origins; defaults to `patch_size`.
    pub patch_stride: usize,
    pub augment: Augment,
    pub seed: u64,
    /// Fraction of source images held out, rounded, at least one when there
    /// are two or more images.
    pub heldout_fraction: f64,
    /// Keep at most this many training patches after augmentation and shuffle.
    pub max_patches: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            patch_stride: 32,
            augment: Augment::ALL,
            seed: 0,
            heldout_fraction: 0.1,
            max_patches: None,
        }
    }
}

/// Training patches plus whole held-out images. The split is by source image.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    pub patches: Vec<Image>,
    pub train_sources: Vec<String>,
    pub heldout: Vec<(String, Image)>,
}

impl PatchDataset {
    pub fn from_images(mut images: Vec<(String, Image)>, cfg: &DatasetConfig) -> Result<Self> {
        let p = cfg.patch_size;
        if p == 0 || cfg.patch_stride == 0 {
            return param_err("patch size and stride must be positive");
        }
        if !(0.0..1.0).contains(&cfg.heldout_fraction) {
            return param_err(format!("held-out fraction {} must lie in [0, 1)", cfg.heldout_fraction));
        }
        images.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        images.shuffle(&mut rng);
        let mut n_held = (images.len() as f64 * cfg.heldout_fraction).round() as usize;
        if cfg.heldout_fraction > 0.0 && images.len() >= 2 {
            n_held = n_held.clamp(1, images.len() - 1);
        }
        let mut heldout = images.split_off(images.len() - n_held);
        heldout.sort_by(|a, b| a.0.cmp(&b.0));

        let mut patches = Vec::new();
        for (_, img) in &images {
            let (h, w) = (img.height(), img.width());
            if h < p || w < p {
                continue;
            }
            for y in (0..=h - p).step_by(cfg.patch_stride) {
                for x in (0..=w - p).step_by(cfg.patch_stride) {
                    let patch = img.tensor().crop(y, x, p, p)?;
                    for v in variants(&patch, cfg.augment) {
                        patches.push(Image::new(v)?);
                    }
                }
            }
        }
        patches.shuffle(&mut rng);
        if let Some(max) = cfg.max_patches {
            patches.truncate(max);
        }
        let mut train_sources: Vec<String> = images.into_iter().map(|(n, _)| n).collect();
        train_sources.sort();
        Ok(Self {
            patches,
            train_sources,
            heldout,
        })
    }

    /// Load every `.pgm`/`.png` file in `dir` (non-recursive).
    pub fn from_dir(dir: &Path, cfg: &DatasetConfig) -> Result<Self> {
        Self::from_images(load_images(dir)?, cfg)
    }
}

/// All PGM/PNG images in `dir`, sorted by file name.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_image(&p)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub max_updates: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Whether the sensing filters are updated along with the rest.
    pub train_sensing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch: 4,
            lr0: 1e-3,
            halve_every: 200_000,
            max_updates: 300,
            eval_every: 100,
            seed: 0,
            train_sensing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.halve_every == 0 || self.eval_every == 0 {
            return param_err("minibatch, halve_every and eval_every must be positive");
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return param_err(format!("lr0 = {} must be finite and >= 0", self.lr0));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEntry {
    pub update: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Plain-text `update,loss,lr` trace with a header line.
pub fn write_loss_trace<W: Write>(trace: &[LossEntry], mut out: W) -> Result<()> {
    writeln!(out, "update,loss,lr")?;
    for e in trace {
        writeln!(out, "{},{:e},{:e}", e.update, e.loss, e.lr)?;
    }
    Ok(())
}

/// Mean of the first and last `window` entries of a loss trace.
pub fn smoothed_ends(trace: &[LossEntry], window: usize) -> Option<(f64, f64)> {
    let w = window.min(trace.len() / 2);
    if w == 0 {
        return None;
    }
    let mean = |s: &[LossEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&trace[..w]), mean(&trace[trace.len() - w..])))
}

/// Sensing geometry a network needs for an `h x w` image.
pub fn net_geometry(cfg: &NetConfig, h: usize, w: usize) -> (usize, usize) {
    let fit = |n: usize| {
        if n <= cfg.size {
            cfg.size
        } else {
            cfg.size + (n - cfg.size).div_ceil(cfg.stride) * cfg.stride
        }
    };
    (fit(h), fit(w))
}

/// Network configuration for a sensing preset.
pub fn net_config_for(preset: Preset) -> NetConfig {
    let (m, l, s) = preset.params();
    NetConfig::new(m, l, s)
}

pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub trace: Vec<LossEntry>,
}

/// Minibatch ADAM on `patches`. Each patch is reflect-padded to the network's
/// sensing geometry and the loss is taken there. `on_checkpoint` runs after
/// every `eval_every` updates and after the last one.
///
/// Examples within a minibatch are processed in parallel; their gradients are
/// summed in index order, so the trajectory does not depend on scheduling.
pub fn train(
    patches: &[Image],
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    init: NetworkParams<f32>,
    mut on_checkpoint: impl FnMut(usize, &NetworkParams<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    init.check(net_cfg)?;
    if patches.is_empty() {
        return param_err("training needs at least one patch");
    }
    let padded: Vec<Tensor<f32>> = patches
        .iter()
        .map(|p| {
            let target = net_geometry(net_cfg, p.height(), p.width());
            Ok(pad_reflect(p.tensor(), target)?.cast::<f32>())
        })
        .collect::<Result<_>>()?;

    let mut params = init;
    let mut state = AdamState::new(&params);
    let frozen: Vec<bool> = params
        .groups
        .iter()
        .map(|g| !cfg.train_sensing && g.name == "sensing")
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.max_updates);
    let mut last_good = 0;
    let batch = cfg.minibatch.min(padded.len());
    let weight = 1.0 / batch as f32;

    for u in 0..cfg.max_updates {
        if order.len() < batch {
            let mut fresh: Vec<usize> = (0..padded.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let mut idx: Vec<usize> = order.drain(..batch).collect();
        idx.sort_unstable();
        let results = par::map(&idx, |&i| example_loss_grad(&params, net_cfg, &padded[i], weight));
        let mut loss = 0.0f64;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        for r in results {
            let (l, g) = r?;
            loss += l as f64;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        a.add_assign(gi)?;
                    }
                }
            }
        }
        let grads = grads.expect("batch is nonempty");
        loss /= batch as f64;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "training diverged at update {u} (loss {loss}); last good checkpoint is from update {last_good}"
            )));
        }
        let lr = learning_rate(cfg.lr0, cfg.halve_every, u);
        trace.push(LossEntry { update: u, loss, lr });
        adam_step(&mut params, &grads, &mut state, lr, &frozen)?;
        let done = u + 1;
        if done % cfg.eval_every == 0 || done == cfg.max_updates {
            on_checkpoint(done, &params)?;
            last_good = done;
        }
    }
    Ok(TrainOutcome { params, trace })
}

/// `10 log10(1 / MSE)` with peak 1; `+inf` when the images are identical.
pub fn psnr(reference: &Image, estimate: &Image) -> Result<f64> {
    let a = reference.tensor();
    let b = estimate.tensor();
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("PSNR of {} against {}", a.shape(), b.shape())));
    }
    let mse = a.sub(b)?.norm_sq() / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Method {
    /// Scaled back-projection `x^(0)`.
    Adjoint,
    Iterative,
    /// Trained network; one checkpoint per preset.
    Net(Vec<(Preset, PathBuf)>),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Adjoint => "adjoint",
            Method::Iterative => "iterative",
            Method::Net(_) => "net",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub presets: Vec<Preset>,
    /// Noise levels on the 0-255 scale; 0 is the clean case.
    pub noise: Vec<f64>,
    /// Sensing and noise seeds; PSNR and time are averaged over them.
    pub seeds: Vec<u64>,
    pub solver: SolverConfig,
    pub analysis: AnalysisFilterBank,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            presets: vec![Preset::Rate005Corrected, Preset::Rate01, Preset::Rate02, Preset::Rate03],
            noise: vec![0.0, 10.0],
            seeds: vec![0],
            solver: SolverConfig::default(),
            analysis: AnalysisFilterBank::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub rate_nominal: f64,
    pub rate_achieved: f64,
    pub noise_sigma255: f64,
    pub image: String,
    pub psnr_db: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellError {
    pub method: String,
    pub preset: Preset,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub errors: Vec<CellError>,
}

enum Recon<'a> {
    Adjoint,
    Iterative,
    Net(&'a NetConfig, &'a NetworkParams<f32>),
}

fn run_cell(img: &Image, preset: Preset, noise: f64, seed: u64, recon: &Recon<'_>, cfg: &EvalConfig) -> Result<(f64, f64, f64)> {
    let bank: FilterBank = match recon {
        Recon::Net(nc, p) => p.sensing_bank(nc)?,
        _ => preset.bank(seed)?,
    };
    let y = add_noise(&sense_image(img, &bank)?, noise, seed ^ 0x6e6f_6973_65)?;
    let start = Instant::now();
    let x = match recon {
        Recon::Adjoint => back_project(&y, &bank)?,
        Recon::Iterative => reconstruct_iterative(&y, &bank, &cfg.analysis, &cfg.solver)?.image,
        Recon::Net(nc, p) => reconstruct(*p, nc, &y)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    let est = Image::from_clamped(&y.meta.crop_to_original(&x)?)?;
    Ok((psnr(img, &est)?, y.achieved_rate(), seconds))
}

/// Full cross product of methods, presets, noise levels and images. A missing
/// or mismatched checkpoint fails only its own cells.
pub fn evaluate(images: &[(String, Image)], methods: &[Method], cfg: &EvalConfig) -> EvalReport {
    let mut report = EvalReport::default();
    if images.is_empty() {
        return report;
    }
    if cfg.seeds.is_empty() {
        report.errors.extend(methods.iter().flat_map(|m| {
            cfg.presets.iter().map(move |&p| CellError {
                method: m.name().into(),
                preset: p,
                message: "no seeds given".into(),
            })
        }));
        return report;
    }
    for method in methods {
        for &preset in &cfg.presets {
            let loaded;
            let recon = match method {
                Method::Adjoint => Recon::Adjoint,
                Method::Iterative => Recon::Iterative,
                Method::Net(ckpts) => {
                    let found = ckpts.iter().find(|(p, _)| *p == preset);
                    let res = match found {
                        None => Err(Error::Parameter(format!("no checkpoint given for {preset}"))),
                        Some((_, path)) => read_ccsn(path).and_then(|(nc, p)| {
                            let (m, l, s) = preset.params();
                            if (nc.m, nc.size, nc.stride) != (m, l, s) {
                                Err(Error::MetaMismatch(format!(
                                    "{} holds a network for {nc}, preset {preset} needs m={m} L={l} s={s}",
                                    path.display()
                                )))
                            } else {
                                Ok((nc, p))
                            }
                        }),
                    };
                    match res {
                        Ok(v) => {
                            loaded = v;
                            Recon::Net(&loaded.0, &loaded.1)
                        }
                        Err(e) => {
                            report.errors.push(CellError {
                                method: method.name().into(),
                                preset,
                                message: e.to_string(),
                            });
                            continue;
                        }
                    }
                }
            };
            let cells: Vec<(usize, f64)> = cfg
                .noise
                .iter()
                .flat_map(|&n| (0..images.len()).map(move |i| (i, n)))
                .collect();
            let results = par::map(&cells, |&(i, noise)| {
                let mut acc = (0.0, 0.0, 0.0);
                for &seed in &cfg.seeds {
                    let (p, r, s) = run_cell(&images[i].1, preset, noise, seed, &recon, cfg)?;
                    acc = (acc.0 + p, r, acc.2 + s);
                }
                let k = cfg.seeds.len() as f64;
                Ok::<_, Error>((acc.0 / k, acc.1, acc.2 / k))
            });
            for (&(i, noise), res) in cells.iter().zip(results) {
                match res {
                    Ok((p, rate, secs)) => report.rows.push(EvalRow {
                        method: method.name().into(),
                        rate_nominal: preset.nominal_rate(),
                        rate_achieved: rate,
                        noise_sigma255: noise,
                        image: images[i].0.clone(),
                        psnr_db: p,
                        seconds: secs,
                    }),
                    Err(e) => report.errors.push(CellError {
                        method: method.name().into(),
                        preset,
                        message: format!("{}: {e}", images[i].0),
                    }),
                }
            }
        }
    }
    report
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "rate_nominal", "rate_achieved", "noise_sigma255", "image", "psnr_db", "seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.rate_nominal.to_string(),
                format!("{:.6}", r.rate_achieved),
                r.noise_sigma255.to_string(),
                r.image.clone(),
                if r.psnr_db.is_infinite() { "inf".into() } else { format!("{:.4}", r.psnr_db) },
                format!("{:.6}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean PSNR per (method, achieved rate, noise), in first-seen order.
    pub fn averages(&self) -> Vec<(String, f64, f64, f64)> {
        let mut keys: Vec<(String, f64, f64)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.clone(), r.rate_achieved, r.noise_sigma255);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(m, rate, noise)| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == m && r.rate_achieved == rate && r.noise_sigma255 == noise)
                    .map(|r| r.psnr_db)
                    .collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                (m, rate, noise, mean)
            })
            .collect()
    }

    /// Human-readable per-image table followed by per-rate averages.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>6} {:<20} {:>9} {:>9}", "method", "nominal", "achieved", "noise", "image", "psnr_db", "seconds");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>8.3} {:>8.4} {:>6} {:<20} {:>9.2} {:>9.3}",
                r.method, r.rate_nominal, r.rate_achieved, r.noise_sigma255, r.image, r.psnr_db, r.seconds
            );
        }
        if !self.rows.is_empty() {
            let _ = writeln!(s, "\nmean PSNR");
            for (m, rate, noise, mean) in self.averages() {
                let _ = writeln!(s, "{m:<10} rate {rate:.4} noise {noise:>4}: {mean:.2} dB");
            }
        }
        for e in &self.errors {
            let _ = writeln!(s, "error [{} {}]: {}", e.method, e.preset, e.message);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn loss_arithmetic() {
        let a = Tensor::filled(Shape::new(1, 32, 32), 0.3);
        let b = Tensor::filled(Shape::new(1, 32, 32), 0.4);
        assert!((l2_loss(&[a.clone()], &[b]).unwrap() - 10.24).abs() < 1e-9);
        assert_eq!(l2_loss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert!(l2_loss(&[a.clone()], &[]).is_err());
    }

    #[test]
    fn schedule() {
        assert_eq!(learning_rate(1e-4, 200_000, 199_999), 1e-4);
        assert_eq!(learning_rate(1e-4, 200_000, 200_000), 5e-5);
        assert_eq!(learning_rate(1.0, 3, 7), 0.25);
    }

    #[test]
    fn psnr_values() {
        let a = synth::constant(4, 4, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = synth::constant(4, 4, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn orbit_sizes() {
        let t = synth::scene(8, 8, 1).into_tensor();
        assert_eq!(variants(&t, Augment::ALL).len(), 8);
        assert_eq!(variants(&t, Augment::NONE).len(), 1);
        assert_eq!(variants(&t, Augment { flips: false, rotations: true }).len(), 4);
        let c = synth::constant(8, 8, 0.2).into_tensor();
        assert_eq!(variants(&c, Augment::ALL).len(), 1);
    }

    #[test]
    fn split_is_by_source() {
        let imgs: Vec<_> = (0..10).map(|i| (format!("img{i}"), synth::scene(40, 40, i))).collect();
        let cfg = DatasetConfig { patch_size: 16, patch_stride: 16, heldout_fraction: 0.2, ..Default::default() };
        let ds = PatchDataset::from_images(imgs, &cfg).unwrap();
        assert_eq!(ds.heldout.len(), 2);
        assert_eq!(ds.train_sources.len(), 8);
        for (name, _) in &ds.heldout {
            assert!(!ds.train_sources.contains(name));
        }
        assert!(ds.patches.len() <= 8 * 4 * 8);
        assert!(ds.patches.iter().all(|p| p.height() == 16 && p.width() == 16));
    }

    #[test]
    fn empty_eval_is_empty() {
        let r = evaluate(&[], &[Method::Iterative], &EvalConfig::default());
        assert!(r.rows.is_empty() && r.errors.is_empty());
    }

    #[test]
    fn missing_checkpoint_fails_only_its_cells() {
        let imgs = vec![("a".to_string(), synth::constant(16, 16, 0.5))];
        let cfg = EvalConfig {
            presets: vec![Preset::Rate03],
            noise: vec![0.0],
            solver: SolverConfig { max_iters: 5, ..Default::default() },
            ..Default::default()
        };
        let r = evaluate(&imgs, &[Method::Adjoint, Method::Net(Vec::new())], &cfg);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.errors.len(), 1);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,rate_nominal,rate_achieved,noise_sigma255,image,psnr_db,seconds\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
