//! Manifest-driven training and evaluation runs.

use std::fs;
use std::path::{Path, PathBuf};

use convcs::formats::{write_atomic, write_ccsn, Manifest};
use convcs::nn::{NetConfig, NetworkParams, Placement, TapMode};
use convcs::par;
use convcs::sensing::Preset;
use convcs::solver::{AnalysisFilterBank, SolverConfig};
use convcs::synth;
use convcs::train::{
    evaluate, load_images, net_config_for, train, write_loss_trace, Augment, DatasetConfig, EvalConfig,
    Method, PatchDataset, TrainConfig,
};
use convcs::{Error, Image, Result};

pub const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "preset",
    "m",
    "L",
    "s",
    "stages",
    "init_seed",
    "sensing_seed",
    "placement",
    "taps",
    "patch_size",
    "patch_stride",
    "augment",
    "heldout_fraction",
    "max_patches",
    "minibatch",
    "lr0",
    "halve_every",
    "max_updates",
    "eval_every",
    "seed",
    "train_sensing",
    "parallel",
];

pub const EVAL_KEYS: &[&str] = &[
    "images",
    "methods",
    "presets",
    "noise",
    "seeds",
    "eta",
    "delta",
    "tau",
    "max_iters",
    "rel_tol",
    "dct_size",
    "parallel",
    "checkpoint.rate0.05",
    "checkpoint.rate0.05-corrected",
    "checkpoint.rate0.1",
    "checkpoint.rate0.2",
    "checkpoint.rate0.3",
];

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

fn list<T: std::str::FromStr>(man: &Manifest, key: &str, default: Vec<T>) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    match man.get(key) {
        None => Ok(default),
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| bad(format!("`{key}`: {s}: {e}"))))
            .collect(),
    }
}

/// `synthetic:<count>:<size>` or a directory relative to the manifest.
fn images(spec: &str, base: &Path) -> Result<Vec<(String, Image)>> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let (n, size) = rest
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .filter(|&(n, size)| n > 0 && size >= 4)
            .ok_or_else(|| bad(format!("`{spec}`: expected synthetic:<count>:<size>")))?;
        return Ok((0..n as u64).map(|i| (format!("synthetic{i:03}"), synth::scene(size, size, i))).collect());
    }
    let dir = base.join(spec);
    if !dir.is_dir() {
        return Err(bad(format!("image directory {} does not exist", dir.display())));
    }
    load_images(&dir)
}

fn net_config(man: &Manifest) -> Result<NetConfig> {
    let mut cfg = match (man.get("preset"), man.get("m"), man.get("L"), man.get("s")) {
        (Some(p), None, None, None) => net_config_for(p.parse()?),
        (None, Some(_), Some(_), Some(_)) => NetConfig::new(
            man.parse_or("m", 0usize)?,
            man.parse_or("L", 0usize)?,
            man.parse_or("s", 0usize)?,
        ),
        _ => return Err(bad("give either `preset` or all of `m`, `L`, `s`")),
    };
    cfg.stages = man.parse_or("stages", cfg.stages)?;
    cfg.init_seed = man.parse_or("init_seed", 0u64)?;
    cfg.sensing_seed = man.parse_or("sensing_seed", 0u64)?;
    cfg.placement = match man.get("placement").unwrap_or("topleft") {
        "topleft" => Placement::TopLeft,
        "center" => Placement::Center,
        other => return Err(bad(format!("placement `{other}` (topleft|center)"))),
    };
    cfg.tap_mode = match man.get("taps").unwrap_or("per-layer") {
        "per-layer" => TapMode::PerLayer,
        "final-only" => TapMode::FinalOnly,
        other => return Err(bad(format!("taps `{other}` (per-layer|final-only)"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn augment(man: &Manifest) -> Result<Augment> {
    Ok(match man.get("augment").unwrap_or("all") {
        "all" => Augment::ALL,
        "none" => Augment::NONE,
        "flips" => Augment { flips: true, rotations: false },
        "rotations" => Augment { flips: false, rotations: true },
        other => return Err(bad(format!("augment `{other}` (all|none|flips|rotations)"))),
    })
}

/// Run directory `<root>/<manifest hash>`, created with the canonical
/// manifest inside.
fn run_dir(man: &Manifest, root: &Path) -> Result<PathBuf> {
    let dir = root.join(man.hash());
    fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("manifest.txt"), man.canonical().as_bytes())?;
    Ok(dir)
}

pub fn cmd_train(path: &Path, root: &Path) -> Result<PathBuf> {
    let man = Manifest::read(path)?;
    man.check_keys(TRAIN_KEYS)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let net = net_config(&man)?;
    let dcfg = DatasetConfig {
        patch_size: man.parse_or("patch_size", 32)?,
        patch_stride: man.parse_or("patch_stride", man.parse_or("patch_size", 32)?)?,
        augment: augment(&man)?,
        seed: man.parse_or("seed", 0)?,
        heldout_fraction: man.parse_or("heldout_fraction", 0.1)?,
        max_patches: man.get("max_patches").map(|v| v.parse()).transpose().map_err(|e| bad(format!("max_patches: {e}")))?,
    };
    let defaults = TrainConfig::default();
    let tcfg = TrainConfig {
        minibatch: man.parse_or("minibatch", defaults.minibatch)?,
        lr0: man.parse_or("lr0", defaults.lr0)?,
        halve_every: man.parse_or("halve_every", defaults.halve_every)?,
        max_updates: man.parse_or("max_updates", defaults.max_updates)?,
        eval_every: man.parse_or("eval_every", defaults.eval_every)?,
        seed: man.parse_or("seed", defaults.seed)?,
        train_sensing: man.parse_or("train_sensing", defaults.train_sensing)?,
    };
    tcfg.validate()?;
    par::set_enabled(man.parse_or("parallel", true)?);
    let ds = PatchDataset::from_images(images(man.require("dataset")?, base)?, &dcfg)?;
    let dir = run_dir(&man, root)?;
    let heldout: String = ds.heldout.iter().map(|(n, _)| format!("{n}\n")).collect();
    write_atomic(&dir.join("heldout.txt"), heldout.as_bytes())?;
    eprintln!(
        "training {net} on {} patches from {} images, {} held out",
        ds.patches.len(),
        ds.train_sources.len(),
        ds.heldout.len()
    );
    let ckpt = dir.join("checkpoint.ccsn");
    let init = NetworkParams::<f32>::init(&net)?;
    let outcome = train(&ds.patches, &net, &tcfg, init, |u, p| {
        eprintln!("update {u}: checkpoint");
        write_ccsn(&ckpt, &net, p)
    });
    let outcome = outcome?;
    let mut trace = Vec::new();
    write_loss_trace(&outcome.trace, &mut trace)?;
    write_atomic(&dir.join("loss.csv"), &trace)?;
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        eprintln!("loss {:.4} -> {:.4}", first.loss, last.loss);
    }
    Ok(dir)
}

pub fn cmd_eval(path: &Path, root: &Path) -> Result<(PathBuf, String, bool)> {
    let man = Manifest::read(path)?;
    man.check_keys(EVAL_KEYS)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let presets: Vec<Preset> = list(&man, "presets", EvalConfig::default().presets)?;
    let mut methods = Vec::new();
    for m in list::<String>(&man, "methods", vec!["iterative".into()])? {
        methods.push(match m.as_str() {
            "adjoint" => Method::Adjoint,
            "iterative" | "ista" => Method::Iterative,
            "net" => Method::Net(
                presets
                    .iter()
                    .filter_map(|p| man.get(&format!("checkpoint.{p}")).map(|c| (*p, base.join(c))))
                    .collect(),
            ),
            other => return Err(bad(format!("method `{other}` (adjoint|iterative|net)"))),
        });
    }
    let sd = SolverConfig::default();
    let solver = SolverConfig {
        eta: man.parse_or("eta", sd.eta)?,
        delta: man.parse_or("delta", sd.delta)?,
        tau: man.parse_or("tau", sd.tau)?,
        max_iters: man.parse_or("max_iters", sd.max_iters)?,
        rel_tol: man.parse_or("rel_tol", sd.rel_tol)?,
        ..sd
    };
    solver.validate()?;
    let cfg = EvalConfig {
        presets,
        noise: list(&man, "noise", vec![0.0])?,
        seeds: list(&man, "seeds", vec![0])?,
        solver,
        analysis: AnalysisFilterBank::dct(man.parse_or("dct_size", convcs::solver::DEFAULT_DCT_SIZE)?)?,
    };
    par::set_enabled(man.parse_or("parallel", true)?);
    let imgs = images(man.require("images")?, base)?;
    let report = evaluate(&imgs, &methods, &cfg);
    let dir = run_dir(&man, root)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_atomic(&dir.join("report.csv"), &csv)?;
    let table = report.table();
    write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    Ok((dir, table, report.errors.is_empty()))
}
