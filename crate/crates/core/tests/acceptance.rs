//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line; the
//! test fails at the end if any of them did.

use std::time::{Duration, Instant};

use convcs::conv::Kernels;
use convcs::formats::{decode_ccsm, decode_ccsn, encode_ccsm, encode_ccsn, read_ccsm, read_ccsn, write_ccsm, write_ccsn, Manifest};
use convcs::nn::{reconstruct, NetConfig, NetworkParams};
use convcs::par;
use convcs::sensing::{add_noise, back_project, make_filter_bank, sense, sense_image, FilterBank, Preset};
use convcs::solver::{
    reconstruct_iterative, simplified_coefficients, update_x, update_x_simplified, AnalysisFilterBank, SolverConfig,
    SparseCodeStack,
};
use convcs::synth;
use convcs::tensor::{Image, Shape, Tensor};
use convcs::train::{
    net_config_for, psnr, smoothed_ends, train, write_loss_trace, Augment, DatasetConfig, PatchDataset, TrainConfig,
};
use convcs::verify::{adjoint_suite, block_extraction, gradcheck_suite, oracle_suite, random_geometry, ORACLE_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TREND: [Preset; 4] = [Preset::Rate005Corrected, Preset::Rate01, Preset::Rate02, Preset::Rate03];
const NOISE: f64 = 10.0;

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, n: usize, ok: bool, took: Duration, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("criterion {n:>2}: {tag}  ({:.1}s) {detail}", took.as_secs_f64());
        self.0.push((n, ok));
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.sample(StandardNormal))
}

fn psnr_of(reference: &Image, y_meta: &convcs::sensing::MeasurementMeta, x: &Tensor<f64>) -> f64 {
    let est = Image::from_clamped(&y_meta.crop_to_original(x).unwrap()).unwrap();
    psnr(reference, &est).unwrap()
}

fn iterative_psnr(img: &Image, bank: &FilterBank, noise_seed: Option<u64>, analysis: &AnalysisFilterBank, cfg: &SolverConfig) -> f64 {
    let mut y = sense_image(img, bank).unwrap();
    if let Some(seed) = noise_seed {
        y = add_noise(&y, NOISE, seed).unwrap();
    }
    let out = reconstruct_iterative(&y, bank, analysis, cfg).unwrap();
    psnr_of(img, &y.meta, &out.image)
}

fn operator_oracle(v: &mut Verdicts) {
    let t = Instant::now();
    let report = oracle_suite(11, 60).unwrap();
    let took = t.elapsed();
    let ok = report.passed() && report.cases.len() >= 50 && took < Duration::from_secs(60);
    v.record(1, ok, took, format!("{} configs, max rel error {:.2e} (tol {ORACLE_TOL:.0e})", report.cases.len(), report.max_error()));
}

fn adjoint_identity(v: &mut Verdicts) {
    let t = Instant::now();
    let mut cases = Vec::new();
    for seed in 0..4 {
        cases.extend(adjoint_suite(seed, 100).unwrap().cases);
    }
    let took = t.elapsed();
    let worst = cases.iter().map(|c| c.error).fold(0.0, f64::max);
    let ok = cases.iter().all(|c| c.passed()) && took < Duration::from_secs(60);
    v.record(2, ok, took, format!("{} configs x 100 trials, worst {worst:.2e} (tol 1e-10)", cases.len()));
}

fn block_equivalence(v: &mut Verdicts) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut geoms: Vec<(usize, usize, usize, usize, usize)> = (0..100).map(|_| random_geometry(&mut rng, 4096)).collect();
    for p in Preset::ALL {
        let (m, l, s) = p.params();
        geoms.push((m, l, s, l + 5 * s, l + 7 * s));
    }
    let mut worst: f64 = 0.0;
    for &(m, l, s, h, w) in &geoms {
        let bank = make_filter_bank(m, l, s, rng.random()).unwrap();
        let x = randn(&mut rng, Shape::new(1, h, w));
        let y = sense(&x, &bank).unwrap();
        let blocks = block_extraction(&x, &bank).unwrap();
        worst = worst.max(blocks.sub(&y.maps).unwrap().norm() / x.norm());
    }
    v.record(3, worst <= ORACLE_TOL, t.elapsed(), format!("{} cases, max rel error {worst:.2e}", geoms.len()));
}

fn solver_descent(v: &mut Verdicts) {
    let t = Instant::now();
    let analysis = AnalysisFilterBank::default();
    let cfg = SolverConfig::default();
    let jobs: Vec<(Preset, u64)> = Preset::ALL.iter().flat_map(|&p| (0..20).map(move |k| (p, k))).collect();
    let rises: Vec<usize> = par::map(&jobs, |&(p, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let img = Image::new(Tensor::from_fn(Shape::new(1, 64, 64), |_, _, _| rng.random::<f64>())).unwrap();
        let bank = p.bank(rng.random()).unwrap();
        let y = sense_image(&img, &bank).unwrap();
        let out = reconstruct_iterative(&y, &bank, &analysis, &cfg).unwrap();
        out.trace.windows(2).skip(1).filter(|w| w[1].objective > w[0].objective).count()
    });
    let rising = rises.iter().filter(|&&r| r > 0).count();

    let consts: Vec<(Preset, f64)> = Preset::ALL.iter().flat_map(|&p| [0.2, 0.45, 0.7].map(|c| (p, c))).collect();
    let runs: Vec<(bool, usize, f64)> = par::map(&consts, |&(p, c)| {
        let img = synth::constant(64, 64, c);
        let bank = p.bank(7).unwrap();
        let y = sense_image(&img, &bank).unwrap();
        let out = reconstruct_iterative(&y, &bank, &analysis, &cfg).unwrap();
        let last = out.trace.last().map_or(0.0, |e| e.rel_change);
        (out.converged && last < 1e-6, out.iterations(), last)
    });
    let converged = runs.iter().filter(|r| r.0).count();
    let max_iters = runs.iter().map(|r| r.1).max().unwrap_or(0);
    let ok = rising == 0 && converged == runs.len();
    v.record(
        4,
        ok,
        t.elapsed(),
        format!(
            "{} random instances, {rising} with a rising objective; {converged}/{} constants below 1e-6 (at most {max_iters} iterations)",
            jobs.len(),
            runs.len()
        ),
    );
}

fn sparse_recovery(v: &mut Verdicts) {
    let t = Instant::now();
    let analysis = AnalysisFilterBank::dct(2).unwrap();
    let cfg = SolverConfig { tau: 0.003, max_iters: 1000, ..SolverConfig::default() };
    let images: Vec<Image> = (0..4).map(|i| synth::piecewise_constant(64, 64, 5, i)).collect();
    let jobs: Vec<(usize, usize)> = (0..TREND.len()).flat_map(|r| (0..images.len()).map(move |i| (r, i))).collect();
    let scores = par::map(&jobs, |&(r, i)| {
        let bank = TREND[r].bank(100 + i as u64).unwrap();
        iterative_psnr(&images[i], &bank, None, &analysis, &cfg)
    });
    let table: Vec<Vec<f64>> = (0..TREND.len()).map(|r| scores[r * images.len()..(r + 1) * images.len()].to_vec()).collect();
    let means: Vec<f64> = table.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    let top_ok = table[TREND.len() - 1].iter().all(|&p| p >= 35.0);
    let trend_ok = (0..images.len()).all(|i| table.windows(2).all(|w| w[1][i] >= w[0][i]));
    let took = t.elapsed();
    let ok = top_ok && trend_ok && took < Duration::from_secs(600);
    let rate3 = table[TREND.len() - 1].iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>().join(", ");
    let trend = means.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>().join(" -> ");
    v.record(5, ok, took, format!("rate 0.32 PSNR [{rate3}] dB; mean over rates {trend} dB; per-image nondecreasing: {trend_ok}"));
}

fn gradient_check(v: &mut Verdicts) {
    let t = Instant::now();
    let report = gradcheck_suite(0, 5).unwrap();
    let seeds = report.cases.iter().map(|c| c.seed).collect::<std::collections::BTreeSet<_>>().len();
    let took = t.elapsed();
    let ok = report.passed() && seeds >= 5 && took < Duration::from_secs(300);
    v.record(6, ok, took, format!("{} group checks over {seeds} seeds, worst rel error {:.2e} (tol 1e-4)", report.cases.len(), report.max_error()));
}

fn simplified_algebra(v: &mut Verdicts) {
    let t = Instant::now();
    let identity = Kernels::from_vec(1, 1, 1, vec![1.0]).unwrap();
    let sensing = FilterBank::from_filters(identity.clone(), 1, 0).unwrap();
    let analysis = AnalysisFilterBank::new(identity, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut exact, mut cells) = (0.0f64, true, 0);
    for &delta in &[0.0, 0.01, 0.1, 0.25, 0.5, 1.0, 2.0] {
        for &eta in &[0.0, 0.05, 0.1, 0.5, 1.0, 3.0] {
            let cfg = SolverConfig { delta, eta, ..SolverConfig::default() };
            let shape = Shape::new(1, 12, 9);
            let (xt, xh, x0) = (randn(&mut rng, shape), randn(&mut rng, shape), randn(&mut rng, shape));
            let y = sense(&x0, &sensing).unwrap();
            let full = update_x(&xt, &SparseCodeStack(xh.clone()), &y, &sensing, &analysis, &cfg).unwrap();
            let simple = update_x_simplified(&xt, &xh, &x0, &cfg).unwrap();
            worst = worst.max(full.sub(&simple).unwrap().norm() / full.norm().max(1.0));
            exact &= simplified_coefficients(delta, eta) == (1.0 - delta * (1.0 + eta), delta * eta);
            cells += 1;
        }
    }
    v.record(7, worst <= 1e-12 && exact, t.elapsed(), format!("{cells} (delta, eta) cells, max rel difference {worst:.2e}, coefficients exact: {exact}"));
}

struct Trained {
    cfg: NetConfig,
    params: NetworkParams<f32>,
    heldout: Vec<(String, Image)>,
}

fn toy_training(v: &mut Verdicts) -> Trained {
    let t = Instant::now();
    let images: Vec<(String, Image)> = (0..24).map(|i| (format!("scene{i:02}"), synth::scene(64, 64, i))).collect();
    let dcfg = DatasetConfig {
        patch_size: 32,
        patch_stride: 16,
        augment: Augment::ALL,
        seed: 0,
        heldout_fraction: 0.1,
        max_patches: Some(500),
    };
    let ds = PatchDataset::from_images(images, &dcfg).unwrap();
    let cfg = net_config_for(Preset::Rate02);
    let tcfg = TrainConfig { max_updates: 300, ..TrainConfig::default() };
    let init = NetworkParams::<f32>::init(&cfg).unwrap();
    let out = train(&ds.patches, &cfg, &tcfg, init, |_, _| Ok(())).unwrap();

    let blocks: Vec<f64> = out.trace.chunks(50).map(|c| c.iter().map(|e| e.loss).sum::<f64>() / c.len() as f64).collect();
    let decreasing = blocks.windows(2).all(|w| w[1] < w[0]);
    let (head, tail) = smoothed_ends(&out.trace, 50).unwrap();
    let bank = out.params.sensing_bank(&cfg).unwrap();
    let mut beats = true;
    let mut scores = Vec::new();
    for (_, img) in &ds.heldout {
        let y = sense_image(img, &bank).unwrap();
        let net = psnr_of(img, &y.meta, &reconstruct(&out.params, &cfg, &y).unwrap());
        let x0 = psnr_of(img, &y.meta, &back_project(&y, &bank).unwrap());
        beats &= net > x0;
        scores.push(format!("{net:.1} vs {x0:.1}"));
    }
    let took = t.elapsed();
    let ok = ds.patches.len() == 500 && decreasing && beats && took < Duration::from_secs(900);
    let curve = blocks.iter().map(|b| format!("{b:.1}")).collect::<Vec<_>>().join(" > ");
    v.record(
        8,
        ok,
        took,
        format!(
            "{} patches, loss {head:.1} -> {tail:.1} (50-update means {curve}); held-out net vs x0 PSNR [{}] dB",
            ds.patches.len(),
            scores.join(", ")
        ),
    );
    Trained { cfg, params: out.params, heldout: ds.heldout }
}

fn noise_robustness(v: &mut Verdicts, net: &Trained) {
    let t = Instant::now();
    let analysis = AnalysisFilterBank::default();
    let cfg = SolverConfig::default();
    let mut images: Vec<Image> = [0.2, 0.45, 0.7].iter().map(|&c| synth::constant(64, 64, c)).collect();
    let n_const = images.len();
    images.extend((0..3).map(|i| synth::piecewise_constant(64, 64, 5, i)));
    let jobs: Vec<(usize, usize)> = (0..TREND.len()).flat_map(|r| (0..images.len()).map(move |i| (r, i))).collect();
    let cells: Vec<(usize, usize, f64, f64)> = par::map(&jobs, |&(r, i)| {
        let bank = TREND[r].bank(200 + i as u64).unwrap();
        let clean = iterative_psnr(&images[i], &bank, None, &analysis, &cfg);
        let noisy = iterative_psnr(&images[i], &bank, Some(300 + i as u64), &analysis, &cfg);
        (r, i, clean, noisy)
    });
    let violations: Vec<String> = cells
        .iter()
        .filter(|c| c.3 >= c.2)
        .map(|c| format!("iterative {} image {}: {:.2}/{:.2}", TREND[c.0], c.1, c.2, c.3))
        .collect();
    let mut degrade_ok = violations.is_empty();

    let bank = net.params.sensing_bank(&net.cfg).unwrap();
    let mut net_cells = Vec::new();
    for (k, (_, img)) in net.heldout.iter().enumerate() {
        let y = sense_image(img, &bank).unwrap();
        let yn = add_noise(&y, NOISE, 400 + k as u64).unwrap();
        let clean = psnr_of(img, &y.meta, &reconstruct(&net.params, &net.cfg, &y).unwrap());
        let noisy = psnr_of(img, &y.meta, &reconstruct(&net.params, &net.cfg, &yn).unwrap());
        if noisy >= clean {
            degrade_ok = false;
        }
        net_cells.push(format!("{clean:.1}/{noisy:.1}"));
    }

    let rate02 = TREND.iter().position(|&p| p == Preset::Rate02).unwrap();
    let gaps: Vec<(f64, f64)> = cells.iter().filter(|c| c.0 == rate02 && c.1 < n_const).map(|c| (c.2, c.3)).collect();
    let within = gaps.iter().all(|&(clean, noisy)| clean - noisy <= 6.0);
    let shown = gaps.iter().map(|(c, n)| format!("{c:.1}/{n:.1}")).collect::<Vec<_>>().join(", ");
    v.record(
        9,
        degrade_ok && within,
        t.elapsed(),
        format!(
            "noisy < clean in every cell: {degrade_ok} (net clean/noisy [{}]; violations [{}]); rate 0.2 constants clean/noisy [{shown}] dB, within 6 dB: {within}",
            net_cells.join(", "),
            violations.join("; ")
        ),
    );
}

fn toy_manifest_run(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>, String) {
    let man = Manifest::parse("preset = rate0.2\nstages = 2\nmax_updates = 12\nminibatch = 3\nparallel = false\n").unwrap();
    let mut cfg = net_config_for(man.require("preset").unwrap().parse().unwrap());
    cfg.stages = man.parse_or("stages", 14).unwrap();
    par::set_enabled(man.parse_or("parallel", true).unwrap());
    let images: Vec<(String, Image)> = (0..4).map(|i| (format!("s{i}"), synth::scene(48, 48, i))).collect();
    let ds = PatchDataset::from_images(images, &DatasetConfig { max_patches: Some(24), ..DatasetConfig::default() }).unwrap();
    let tcfg = TrainConfig {
        max_updates: man.parse_or("max_updates", 0).unwrap(),
        minibatch: man.parse_or("minibatch", 0).unwrap(),
        ..TrainConfig::default()
    };
    let out = train(&ds.patches, &cfg, &tcfg, NetworkParams::init(&cfg).unwrap(), |_, _| Ok(())).unwrap();
    par::set_enabled(true);
    let ckpt = dir.join(format!("{}.ccsn", man.hash()));
    write_ccsn(&ckpt, &cfg, &out.params).unwrap();
    let mut trace = Vec::new();
    write_loss_trace(&out.trace, &mut trace).unwrap();
    (std::fs::read(&ckpt).unwrap(), trace, man.hash())
}

fn round_trips(v: &mut Verdicts) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    for (k, p) in Preset::ALL.iter().enumerate() {
        let img = synth::scene(50 + k, 61, k as u64);
        let y = add_noise(&sense_image(&img, &p.bank(k as u64).unwrap()).unwrap(), 3.0, 1).unwrap();
        let bytes = encode_ccsm(&y).unwrap();
        let path = dir.path().join(format!("{k}.ccsm"));
        write_ccsm(&path, &decode_ccsm(&bytes).unwrap()).unwrap();
        let again = encode_ccsm(&read_ccsm(&path).unwrap()).unwrap();
        ok &= std::fs::read(&path).unwrap() == bytes && again == bytes;
    }
    let cfg = NetConfig { stages: 3, init_seed: 5, sensing_seed: 6, ..net_config_for(Preset::Rate01) };
    let params = NetworkParams::<f32>::init(&cfg).unwrap();
    let bytes = encode_ccsn(&cfg, &params).unwrap();
    let (c2, p2) = decode_ccsn(&bytes).unwrap();
    let path = dir.path().join("net.ccsn");
    write_ccsn(&path, &c2, &p2).unwrap();
    let (c3, p3) = read_ccsn(&path).unwrap();
    ok &= std::fs::read(&path).unwrap() == bytes && encode_ccsn(&c3, &p3).unwrap() == bytes;

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = toy_manifest_run(a.path());
    let second = toy_manifest_run(b.path());
    let rerun_ok = first == second;
    v.record(
        10,
        ok && rerun_ok,
        t.elapsed(),
        format!("ccsm and ccsn byte-identical: {ok}; single-threaded rerun identical (run {}): {rerun_ok}", first.2),
    );
}

#[test]
fn acceptance() {
    let mut v = Verdicts(Vec::new());
    operator_oracle(&mut v);
    adjoint_identity(&mut v);
    block_equivalence(&mut v);
    solver_descent(&mut v);
    sparse_recovery(&mut v);
    gradient_check(&mut v);
    simplified_algebra(&mut v);
    let net = toy_training(&mut v);
    noise_robustness(&mut v, &net);
    round_trips(&mut v);
    let failed: Vec<usize> = v.0.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("{} of {} criteria pass", v.0.len() - failed.len(), v.0.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
