//! Acceptance criteria 1-10. Each test writes one `PASS`/`FAIL`/`SKIP` line
//! straight to stderr (so it shows without `--nocapture`) before asserting.
//!
//! Criterion 10 needs the CIC-IDS-2017 CSVs: set `SCULPT_CIC_DIR` to the
//! directory holding them. It takes hours at full scale.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sculpt::config::RunConfig;
use sculpt::container::ModelContainer;
use sculpt::data::{load_flow_csv, normalize_label};
use sculpt::dccl::{dccl_loss, dccl_on, CentroidPair, DcclConfig};
use sculpt::encoder::{encode_on, EncoderConfig, EncoderParams, Mode};
use sculpt::infer::{calibrate_thresholds, classify_latents, score, VerdictKind, DEFAULT_PERCENTILES};
use sculpt::maf::{flow_forward, flow_inverse, nll, nll_on, MafConfig, MafParams};
use sculpt::metrics::{auprc, auroc};
use sculpt::ndiff::{finite_difference, finite_difference_vec, relative_error, ParamStore, Tape, Tensor};
use sculpt::pipeline::{evaluate, fit};
use sculpt::synthexp::run_sculpting_experiment;
use sculpt::train::{train_stage2, Stage2Config};

fn line(n: u32, name: &str, passed: bool, detail: &str, start: Instant) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {n:>2} {verdict} {name}: {detail} [{:.1}s]",
        start.elapsed().as_secs_f64()
    );
}

fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, p) in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
    }
}

fn uniform(rows: usize, d: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::new(&[rows, d], (0..rows * d).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[derive(Default, Clone, Copy)]
struct Check {
    worst: f64,
    partials: usize,
    over: usize,
    /// of `over`, how many differ by more than central-difference roundoff
    over_roundoff: usize,
}

impl Check {
    fn add(&mut self, a: f64, n: f64, loss: f64) {
        let r = relative_error(a, n);
        self.worst = self.worst.max(r);
        self.partials += 1;
        if r >= 1e-4 {
            self.over += 1;
            // a few ulps of the loss, divided by the 2h stencil width
            if (a - n).abs() > 8.0 * f64::EPSILON * loss.abs() / (2.0 * H) {
                self.over_roundoff += 1;
            }
        }
    }

    fn merge(&mut self, o: Check) {
        self.worst = self.worst.max(o.worst);
        self.partials += o.partials;
        self.over += o.over;
        self.over_roundoff += o.over_roundoff;
    }
}

fn param_check(analytic: &ParamStore, numeric: &BTreeMap<String, Vec<f64>>, loss: f64) -> Check {
    let mut c = Check::default();
    for (name, p) in analytic.iter() {
        for (a, n) in p.grad.iter().zip(&numeric[name]) {
            c.add(*a, *n, loss);
        }
    }
    c
}

const H: f64 = 1e-5;

/// Central differences at `H`, or `None` when the loss has a ReLU or
/// max-pool kink within reach of the stencil (the `H` and `10 H` estimates
/// disagree). Never looks at the analytic gradient.
fn smooth_fd(loss: impl Fn(&ParamStore) -> f64, store: &mut ParamStore) -> Option<BTreeMap<String, Vec<f64>>> {
    let fine = finite_difference(&loss, store, H);
    let coarse = finite_difference(&loss, store, 10.0 * H);
    let smooth = fine.iter().all(|(k, v)| {
        v.iter().zip(&coarse[k]).all(|(a, b)| (a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-6))
    });
    smooth.then_some(fine)
}

const ATTEMPTS: usize = 20;

fn encoder_check(seed: u64, rng: &mut ChaCha8Rng, dccl: &DcclConfig) -> Check {
    let cfg = EncoderConfig {
        input_dim: 11,
        cnn_channels: vec![4; 5],
        kernel: 2,
        pool_k: 2,
        pool_s: 2,
        d_model: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        head_hidden: 8,
        latent_dim: 4,
        dropout: 0.1,
    };
    // wide perturbation so the tiny net does not map every row to one point
    let mut enc = EncoderParams::init(cfg, seed).unwrap();
    jitter(&mut enc.store, rng, 1.0);
    for _ in 0..ATTEMPTS {
        let xb = uniform(12, 11, rng, -2.0, 2.0);
        let xa = uniform(10, 11, rng, -2.0, 2.0);
        let loss_of = |tape: &mut Tape, p: &EncoderParams| {
            let b = tape.constant(xb.clone());
            let a = tape.constant(xa.clone());
            let zb = encode_on(tape, p, b, &mut Mode::Eval).unwrap();
            let za = encode_on(tape, p, a, &mut Mode::Eval).unwrap();
            dccl_on(tape, zb, za, dccl).unwrap().total
        };
        let template = enc.clone();
        let value = |s: &ParamStore| {
            let p = EncoderParams { store: s.clone(), ..template.clone() };
            let mut t = Tape::new();
            let l = loss_of(&mut t, &p);
            t.value(l).data()[0]
        };
        let Some(numeric) = smooth_fd(value, &mut enc.store) else { continue };
        let mut tape = Tape::new();
        let l = loss_of(&mut tape, &enc);
        let loss = tape.value(l).data()[0];
        tape.backward_into(l, &mut enc.store).unwrap();
        return param_check(&enc.store, &numeric, loss);
    }
    panic!("no kink-free encoder input in {ATTEMPTS} draws");
}

fn embedding_check(rng: &mut ChaCha8Rng, dccl: &DcclConfig) -> Check {
    let zb = uniform(5, 4, rng, -1.0, 1.0);
    let za = uniform(3, 4, rng, -1.0, 1.0);
    let mut tape = Tape::new();
    let (b, a) = (tape.constant(zb.clone()), tape.constant(za.clone()));
    let total = dccl_on(&mut tape, b, a, dccl).unwrap().total;
    let loss = tape.value(total).data()[0];
    let g = tape.backward(total).unwrap();
    let f = |xb: &[f64], xa: &[f64]| {
        dccl_loss(&Tensor::new(&[5, 4], xb.to_vec()).unwrap(), &Tensor::new(&[3, 4], xa.to_vec()).unwrap(), dccl)
            .unwrap()
            .total
    };
    let nb = finite_difference_vec(|x| f(x, za.data()), zb.data(), H);
    let na = finite_difference_vec(|x| f(zb.data(), x), za.data(), H);
    let mut c = Check::default();
    for (x, y) in g.get(b).unwrap().iter().zip(&nb).chain(g.get(a).unwrap().iter().zip(&na)) {
        c.add(*x, *y, loss);
    }
    c
}

fn flow_check(seed: u64, rng: &mut ChaCha8Rng) -> Check {
    let mut maf = MafParams::init(MafConfig { dim: 3, n_layers: 2, hidden: 8, made_hidden_layers: 2 }, seed).unwrap();
    jitter(&mut maf.store, rng, 0.3);
    let cfg = maf.config.clone();
    for _ in 0..ATTEMPTS {
        let z = uniform(4, 3, rng, -1.5, 1.5);
        let nll_of = |tape: &mut Tape, p: &MafParams| {
            let zv = tape.constant(z.clone());
            let per = nll_on(tape, p, zv).unwrap();
            tape.mean(per)
        };
        let value = |s: &ParamStore| {
            let p = MafParams::from_store(cfg.clone(), s.clone()).unwrap();
            let mut t = Tape::new();
            let l = nll_of(&mut t, &p);
            t.value(l).data()[0]
        };
        let Some(numeric) = smooth_fd(value, &mut maf.store) else { continue };
        let mut tape = Tape::new();
        let l = nll_of(&mut tape, &maf);
        let loss = tape.value(l).data()[0];
        tape.backward_into(l, &mut maf.store).unwrap();
        return param_check(&maf.store, &numeric, loss);
    }
    panic!("no kink-free flow input in {ATTEMPTS} draws");
}

#[test]
fn criterion_01_gradient_fidelity() {
    let t0 = Instant::now();
    let dccl = DcclConfig::default();
    let mut parts = [Check::default(); 3];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let runs = [encoder_check(seed, &mut rng, &dccl), embedding_check(&mut rng, &dccl), flow_check(seed, &mut rng)];
        for (slot, c) in parts.iter_mut().zip(runs) {
            slot.merge(c);
        }
    }
    let worst = parts.iter().map(|p| p.worst).fold(0.0, f64::max);
    let passed = worst < 1e-4 && t0.elapsed().as_secs() < 60;
    let show = |c: &Check| {
        format!("{:.2e} ({} partials, {} >= 1e-4, {} of those beyond roundoff)", c.worst, c.partials, c.over, c.over_roundoff)
    };
    line(
        1,
        "gradient fidelity",
        passed,
        &format!(
            "5 seeds, worst relative error: encoder under DCCL {}; DCCL in the embeddings {}; flow NLL {} (< 1e-4)",
            show(&parts[0]),
            show(&parts[1]),
            show(&parts[2])
        ),
        t0,
    );
    assert!(passed);
}

/// log|det A| by partial-pivot LU.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        let piv = a[k][k];
        acc += piv.abs().ln();
        for i in k + 1..n {
            let f = a[i][k] / piv;
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    acc
}

#[test]
fn criterion_02_log_det_exactness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for draw in 0..20usize {
        let dim = 2 + draw % 5;
        let layers = 1 + draw % 3;
        let mut p = MafParams::init(MafConfig { dim, n_layers: layers, hidden: 12, made_hidden_layers: 2 }, draw as u64).unwrap();
        jitter(&mut p.store, &mut rng, 0.4);
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let analytic = flow_forward(&Tensor::new(&[1, dim], z.clone()).unwrap(), &p).unwrap().log_det[0];
        // column j of the Jacobian is du/dz_j
        let mut jac = vec![vec![0.0; dim]; dim];
        for j in 0..dim {
            let mut up = z.clone();
            let mut down = z.clone();
            up[j] += H;
            down[j] -= H;
            let fu = flow_forward(&Tensor::new(&[1, dim], up).unwrap(), &p).unwrap().u;
            let fd = flow_forward(&Tensor::new(&[1, dim], down).unwrap(), &p).unwrap().u;
            for i in 0..dim {
                jac[i][j] = (fu.data()[i] - fd.data()[i]) / (2.0 * H);
            }
        }
        let numeric = log_abs_det(jac);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
        assert!(analytic.abs() > 1e-3, "draw {draw} has a trivial log-det");
    }
    let passed = worst < 1e-5;
    line(2, "log-det exactness", passed, &format!("20 flows, dims 2-6, 1-3 layers, worst relative error {worst:.2e} (< 1e-5)"), t0);
    assert!(passed);
}

#[test]
fn criterion_03_invertibility() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = MafParams::init(MafConfig::default(), 3).unwrap();
    jitter(&mut p.store, &mut rng, 0.05);
    let z = Tensor::new(&[16, 32], (0..16 * 32).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
    let out = flow_forward(&z, &p).unwrap();
    let back = flow_inverse(&out.u, &p).unwrap();
    let err = back.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let moved = out.log_det.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let passed = err < 1e-6 && moved > 1e-2;
    line(3, "invertibility", passed, &format!("16 layers, dim 32, hidden 512: max |z - inv(fwd(z))| = {err:.2e} (< 1e-6), max |log det| {moved:.2}"), t0);
    assert!(passed);
}

#[test]
fn criterion_04_density_sanity() {
    let t0 = Instant::now();
    let p = MafParams::init(MafConfig::default(), 4).unwrap();
    let at_zero = nll(&Tensor::zeros(&[1, 32]), &p).unwrap().0[0];
    let expect = 16.0 * (2.0 * std::f64::consts::PI).ln();
    let base_ok = (at_zero - expect).abs() < 1e-6;

    let (dim, sigma) = (8usize, 0.5f64);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut draw = |n: usize| {
        Tensor::new(&[n, dim], (0..n * dim).map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect()).unwrap()
    };
    let (train, held) = (draw(2000), draw(1000));
    let cfg = Stage2Config { lr: 2e-3, epochs: 8, batch: 128, ..Stage2Config::default() };
    let (maf, _) = train_stage2(&train, None, MafConfig { dim, n_layers: 4, hidden: 32, made_hidden_layers: 2 }, &cfg, 42).unwrap();
    let mean = nll(&held, &maf).unwrap().1;
    let entropy = 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
    let rel = (mean - entropy).abs() / entropy.abs();
    let passed = base_ok && rel < 0.10;
    line(
        4,
        "density sanity",
        passed,
        &format!("NLL(0) = {at_zero:.9} vs 16 ln 2pi = {expect:.9}; trained held-out NLL {mean:.4} vs entropy {entropy:.4} ({:.1}% off, < 10%)", 100.0 * rel),
        t0,
    );
    assert!(passed);
}

#[test]
fn criterion_05_dccl_algebra() {
    let t0 = Instant::now();
    let cfg = DcclConfig::default();
    let t = |rows: &[[f64; 2]]| Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let l = dccl_loss(&t(&[[0.0, 0.0], [2.0, 2.0]]), &t(&[[10.0, 10.0], [12.0, 12.0]]), &cfg).unwrap();
    let worked = (l.l_cb - 2.0).abs() < 1e-12 && (l.l_ca - 2.0).abs() < 1e-12 && l.l_s == 0.0 && (l.total - 0.4).abs() < 1e-12;
    // separation exactly equal to the margin: ‖(0,0) − (1,2)‖² = 5
    let at_margin = dccl_loss(&t(&[[0.0, 0.0]]), &t(&[[1.0, 2.0]]), &cfg).unwrap().l_s;
    let same = t(&[[1.0, -1.0], [3.0, 0.5]]);
    let colocated = dccl_loss(&same, &same, &cfg).unwrap();
    let passed = worked && at_margin == 0.0 && colocated.l_s == cfg.margin && colocated.total == 0.1 * colocated.l_cb * 2.0 + 5.0;
    line(
        5,
        "DCCL algebra",
        passed,
        &format!(
            "worked example l_cb={} l_ca={} l_s={} total={}; L_s at the margin {at_margin}; co-located L_s {}",
            l.l_cb, l.l_ca, l.l_s, l.total, colocated.l_s
        ),
        t0,
    );
    assert!(passed);
}

#[test]
fn criterion_06_threshold_semantics() {
    let t0 = Instant::now();
    let n = 1000usize;
    let mut ok = true;
    let mut worst_excess = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let scores: Vec<f64> = match seed % 3 {
            0 => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
            1 => (0..n).map(|_| -rng.random::<f64>().ln() * 10.0 - 50.0).collect(),
            _ => (0..n).map(|_| (rng.random_range(0..40) as f64) * 0.5).collect(),
        };
        let th = calibrate_thresholds(&scores, &DEFAULT_PERCENTILES).unwrap();
        let (t99, t97, t95) = (th.get(99).unwrap(), th.get(97).unwrap(), th.get(95).unwrap());
        ok &= t99 >= t97 && t97 >= t95;
        for &(p, tau) in &th.entries {
            let above = scores.iter().filter(|&&s| s > tau).count() as f64 / n as f64;
            let target = (100 - p) as f64 / 100.0;
            // tied samples cannot be split, so ties only ever push the share down
            let distinct = seed % 3 != 2;
            let excess = if distinct { (above - target).abs() } else { (above - target).max(0.0) };
            worst_excess = worst_excess.max(excess);
            ok &= excess <= 1.0 / n as f64 + 1e-12;
        }
    }

    // nested flag sets on a fixed evaluation set
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let maf = MafParams::init(MafConfig { dim: 2, n_layers: 2, hidden: 4, made_hidden_layers: 2 }, 0).unwrap();
    let c = CentroidPair { c_benign: vec![0.0, 0.0], c_anomaly: vec![5.0, 5.0] };
    let calib = uniform(n, 2, &mut rng, -2.0, 2.0);
    let th = calibrate_thresholds(&score(&calib, &maf).unwrap(), &DEFAULT_PERCENTILES).unwrap();
    let eval = uniform(500, 2, &mut rng, -4.0, 4.0);
    let flags = |p: u32| -> Vec<bool> {
        classify_latents(&eval, &c, &maf, th.get(p).unwrap())
            .unwrap()
            .iter()
            .map(|v| v.kind == VerdictKind::OodAnomaly)
            .collect()
    };
    let (f99, f97, f95) = (flags(99), flags(97), flags(95));
    let nested = (0..500).all(|i| (!f99[i] || f97[i]) && (!f97[i] || f95[i]));
    let counts = [f99.iter().filter(|&&b| b).count(), f97.iter().filter(|&&b| b).count(), f95.iter().filter(|&&b| b).count()];
    let passed = ok && nested;
    line(
        6,
        "threshold semantics",
        passed,
        &format!("20 score samples of n=1000, worst |share above tau - target| {worst_excess:.4} (<= 1/n); OOD flags P99/P97/P95 {counts:?} nested: {nested}"),
        t0,
    );
    assert!(passed);
}

#[test]
fn criterion_07_sculpting_gap() {
    let t0 = Instant::now();
    let cfg = RunConfig::desk_scale();
    let r = run_sculpting_experiment(&cfg.synth_config(), &cfg).unwrap();
    let p95 = r.twostage_ood_recall[&95];
    let gap = r.gap(95).unwrap();
    let floors_ok = r
        .benign_specificity
        .iter()
        .all(|(&p, &s)| s >= 1.0 - (100 - p) as f64 / 100.0 - 0.05);
    let passed = r.stage1_ood_recall < 0.25
        && p95 > 0.70
        && gap >= 0.40
        && r.known_recall > 0.95
        && floors_ok
        && t0.elapsed().as_secs() < 15 * 60;
    line(
        7,
        "sculpting gap",
        passed,
        &format!(
            "seed 42: stage-1 OOD recall {:.3} (< 0.25), two-stage P95 {p95:.3} (> 0.70), gap {gap:.3} (>= 0.40), known recall {:.3} (> 0.95), benign specificity {:?}",
            r.stage1_ood_recall,
            r.known_recall,
            r.benign_specificity.iter().map(|(p, s)| format!("P{p}={s:.3}")).collect::<Vec<_>>()
        ),
        t0,
    );
    assert!(passed);
}

fn pair_count_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

/// Sum over each distinct threshold t (descending) of
/// (recall(t) − recall(previous t)) · precision(t), predicting score ≥ t.
fn exhaustive_ap(s: &[f64], y: &[bool]) -> f64 {
    let mut ts: Vec<f64> = s.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let pos = y.iter().filter(|&&b| b).count() as f64;
    let (mut prev, mut area) = (0.0, 0.0);
    for t in ts {
        let tp = s.iter().zip(y).filter(|(v, l)| **v >= t && **l).count() as f64;
        let flagged = s.iter().filter(|v| **v >= t).count() as f64;
        let recall = tp / pos;
        area += (recall - prev) * tp / flagged;
        prev = recall;
    }
    area
}

#[test]
fn criterion_08_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_roc, mut worst_pr, mut done) = (0.0f64, 0.0f64, 0);
    while done < 100 {
        let n = rng.random_range(2..=30);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if y.iter().all(|&b| b) || y.iter().all(|&b| !b) {
            continue;
        }
        // coarse grid so ties are common
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        worst_roc = worst_roc.max((auroc(&s, &y).unwrap() - pair_count_auroc(&s, &y)).abs());
        worst_pr = worst_pr.max((auprc(&s, &y).unwrap() - exhaustive_ap(&s, &y)).abs());
        done += 1;
    }
    let passed = worst_roc <= 1e-12 && worst_pr <= 1e-12;
    line(8, "metric oracles", passed, &format!("100 instances n<=30: max AUROC diff {worst_roc:.1e}, max AUPRC diff {worst_pr:.1e} (<= 1e-12)"), t0);
    assert!(passed);
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::desk_scale();
    let raw = sculpt::data::gen_synthetic(&cfg.synth_config()).unwrap();
    let mut files = Vec::new();
    let mut models = Vec::new();
    for run in 0..2 {
        let out = fit(&raw, &cfg).unwrap();
        let ev = evaluate(&raw.select(&out.plan.ood_eval), &out.model).unwrap();
        let path = dir.path().join(format!("metrics{run}.kv"));
        std::fs::write(&path, ev.to_key_values()).unwrap();
        files.push(std::fs::read(&path).unwrap());
        models.push((out.model, ev, out.plan));
    }
    let same_metrics = files[0] == files[1];
    let same_model = models[0].0.to_bytes().unwrap() == models[1].0.to_bytes().unwrap();

    let (model, before, plan) = &models[0];
    let path = dir.path().join("model.sclpt");
    model.save(&path).unwrap();
    let loaded = ModelContainer::load(&path).unwrap();
    let after = evaluate(&raw.select(&plan.ood_eval), &loaded).unwrap();
    let resaved = loaded.to_bytes().unwrap() == std::fs::read(&path).unwrap();
    let passed = same_metrics && same_model && &after == before && loaded == *model && resaved;
    line(
        9,
        "determinism and persistence",
        passed,
        &format!(
            "two seed-42 runs: metric files identical {same_metrics}, containers identical {same_model}; save/load evaluation identical {}, re-save byte-identical {resaved}",
            &after == before
        ),
        t0,
    );
    assert!(passed);
}

const INTERNAL_RECALL: [(&str, [f64; 3]); 10] = [
    ("DoS Hulk", [99.81, 99.81, 99.81]),
    ("PortScan", [99.97, 99.98, 99.99]),
    ("DDoS", [98.38, 98.42, 98.43]),
    ("DoS GoldenEye", [94.16, 94.16, 94.46]),
    ("Heartbleed", [100.0, 100.0, 100.0]),
    ("FTP-Patator", [96.70, 97.47, 99.81]),
    ("SSH-Patator", [47.65, 47.74, 47.83]),
    ("Web Attack - Brute Force", [4.76, 9.21, 11.75]),
    ("Web Attack - XSS", [4.55, 5.30, 6.06]),
    ("Web Attack - Sql Injection", [0.0, 0.0, 0.0]),
];
const OOD_RECALL: [(&str, [f64; 3]); 4] = [
    ("DoS slowloris", [86.23, 99.14, 99.59]),
    ("DoS Slowhttptest", [38.10, 46.37, 97.69]),
    ("Infiltration", [69.44, 86.11, 88.89]),
    ("Bot", [1.53, 2.95, 4.07]),
];

#[test]
fn criterion_10_full_benchmark() {
    let t0 = Instant::now();
    let Ok(dir) = std::env::var("SCULPT_CIC_DIR") else {
        let _ = writeln!(std::io::stderr(), "acceptance 10 SKIP full benchmark: set SCULPT_CIC_DIR to the CIC-IDS-2017 CSV directory to run");
        return;
    };
    let mut cfg = RunConfig::default();
    if let Ok(p) = std::env::var("SCULPT_CIC_CONFIG") {
        cfg = cfg.apply_file(p).unwrap();
    }
    let raw = load_flow_csv(&dir, &cfg.label_column).unwrap();
    let out = fit(&raw, &cfg).unwrap();
    let internal = evaluate(&raw.select(&out.plan.internal_val), &out.model).unwrap();
    let ood = evaluate(&raw.select(&out.plan.ood_eval), &out.model).unwrap();
    let f1_internal = internal.get(99).unwrap().f1_anomaly;
    let f1_ood = ood.get(95).unwrap().f1_anomaly;
    let mut misses = Vec::new();
    for (eval, table) in [(&internal, &INTERNAL_RECALL[..]), (&ood, &OOD_RECALL[..])] {
        for (label, reference) in table {
            for (k, p) in [99u32, 97, 95].into_iter().enumerate() {
                let got = eval.get(p).unwrap().per_class_recall.get(&normalize_label(label)).map(|r| 100.0 * r.recall());
                match got {
                    Some(v) if (v - reference[k]).abs() <= 10.0 => {}
                    other => misses.push(format!("{label} P{p}: {other:?} vs {}", reference[k])),
                }
            }
        }
    }
    let _ = writeln!(std::io::stderr(), "internal validation\n{}\nOOD evaluation\n{}", internal.render_text(), ood.render_text());
    let passed = f1_internal >= 0.93 && f1_ood >= 0.80 && misses.is_empty();
    line(
        10,
        "full benchmark",
        passed,
        &format!("internal F1 at P99 {f1_internal:.4} (>= 0.93), OOD F1 at P95 {f1_ood:.4} (>= 0.80), per-attack recalls outside +-10 points: {misses:?}"),
        t0,
    );
    assert!(passed);
}
