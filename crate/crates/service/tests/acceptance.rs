//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redzone_core::data::{load_grid_csv, synth_map, GridMap, NoisyOracle, SynthSpec};
use redzone_core::engine::classify::{straddle, violation, CredibleInterval};
use redzone_core::engine::{Label, LevelSetPartition, Session, SessionConfig, Strategy};
use redzone_core::metrics::{auc, confusion, cost_sensitive, risk_sensitive, ConfusionCounts, Fraction};
use redzone_core::transfer::SourceDataset;
use redzone_core::{GpPosterior, GridDomain, KernelParams, LabeledDataset, Position};
use redzone_service::bench::{run_benchmark, BenchmarkPlan};
use redzone_service::maps::MapSpec;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- GP oracle ----

fn rbf(p: &KernelParams, a: &Position, b: &Position) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    p.amplitude * (-d2 / (2.0 * p.length_scale * p.length_scale)).exp()
}

/// Mean and variance from an explicit inverse of the regularized Gram matrix.
fn dense(post: &GpPosterior, queries: &[Position]) -> Vec<(f64, f64)> {
    let p = post.params();
    let data = post.training();
    let pts = data.points();
    let n = pts.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        rbf(p, &pts[i], &pts[j]) + if i == j { p.noise_variance + data.extra_noise(i) + post.jitter() } else { 0.0 }
    });
    let inv = k.try_inverse().expect("invertible");
    let r = DVector::from_fn(n, |i, _| data.values()[i] - post.prior_mean_at_points()[i]);
    let alpha = &inv * r;
    queries
        .iter()
        .map(|x| {
            let kx = DVector::from_fn(n, |i, _| rbf(p, &pts[i], x));
            let var = p.amplitude - kx.dot(&(&inv * &kx));
            (kx.dot(&alpha), var.clamp(0.0, p.amplitude))
        })
        .collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> (KernelParams, LabeledDataset) {
    let v = rng.random_range(0.5..4.0);
    let params = KernelParams::new(v, rng.random_range(0.3..2.0), v * rng.random_range(1e-3..1e-1)).unwrap();
    let pts = (0..n).map(|_| Position::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
    let ys = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    (params, LabeledDataset::new(pts, ys).unwrap())
}

fn gp_oracle() -> Outcome {
    let started = Instant::now();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=200);
        let (params, data) = random_dataset(&mut rng, n);
        let scale = data.values().iter().fold(1.0f64, |a, y| a.max(y.abs()));
        let post = GpPosterior::fit(params, data, None).map_err(|e| e.to_string())?;
        let queries: Vec<Position> =
            (0..50).map(|_| Position::new(rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0))).collect();
        for (q, (m, v)) in queries.iter().zip(dense(&post, &queries)) {
            let got = post.predict(q);
            worst_mean = worst_mean.max((got.mean - m).abs() / scale);
            worst_var = worst_var.max((got.variance - v).abs() / params.amplitude);
        }
    }
    let elapsed = started.elapsed();
    ensure(
        worst_mean <= 1e-8 && worst_var <= 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "50 datasets, max rel err mean {worst_mean:.1e} var {worst_var:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---- variance laws ----

fn variance_laws() -> Outcome {
    let mut violations = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(2..=60);
        let (params, data) = random_dataset(&mut rng, n);
        let mut grown = data.clone();
        for _ in 0..5 {
            grown.push(Position::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)), rng.random_range(-3.0..3.0), 0.0);
        }
        let before = GpPosterior::fit(params, data, None).map_err(|e| e.to_string())?;
        let after = GpPosterior::fit(params, grown, None).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let q = Position::new(rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0));
            let (a, b) = (before.predict(&q).variance, after.predict(&q).variance);
            let bad = a < 0.0 || b < 0.0 || a > params.amplitude + 1e-9 || b > params.amplitude + 1e-9 || b > a + 1e-9;
            violations += bad as usize;
        }
    }
    ensure(violations == 0, format!("20 cases x 100 queries, {violations} violations"))
}

// ---- straddle and violation ----

fn straddle_violation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for k in 0..10_000 {
        let mu = rng.random_range(-10.0..10.0);
        let sd = rng.random_range(1e-3..5.0);
        let ci = CredibleInterval::new(mu, sd);
        let inside = k % 2 == 0;
        let u: f64 = if inside {
            rng.random_range(-0.999..0.999)
        } else {
            rng.random_range(1.001..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        };
        let theta = mu + u * ci.halfwidth;
        let (s, v) = (straddle(&ci, theta), violation(&ci, theta));
        let ok = if inside { (v - s).abs() <= 1e-12 } else { v == 0.0 && s < 0.0 };
        bad += !ok as usize;
    }
    ensure(bad == 0, format!("10^4 triples, {bad} mismatches"))
}

// ---- metrics ----

/// Expand a count table into labels and truth, then count each rate from
/// its definition directly.
fn direct_rates(c: &ConfusionCounts) -> [(u64, u64); 6] {
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for (n, l, t) in [
        (c.tp, Label::Upper, true),
        (c.up, Label::Undetermined, true),
        (c.fn_, Label::Lower, true),
        (c.fp, Label::Upper, false),
        (c.un, Label::Undetermined, false),
        (c.tn, Label::Lower, false),
    ] {
        for _ in 0..n {
            labels.push(l);
            truth.push(t);
        }
    }
    let tally = |positive: &dyn Fn(Label) -> bool| {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (l, t) in labels.iter().zip(&truth) {
            match (positive(*l), *t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        [(tp, tp + fn_), (tn, tn + fp), (2 * tp, 2 * tp + fp + fn_)]
    };
    // risk: only U is a predicted positive; cost: anything but L
    let r = tally(&|l| l == Label::Upper);
    let k = tally(&|l| l != Label::Lower);
    let confusion_back = confusion(&LevelSetPartition::from_labels(labels, 0.0, 0.0), &truth);
    assert_eq!(confusion_back, *c);
    [r[0], r[1], r[2], k[0], k[1], k[2]]
}

fn frac_eq(f: Fraction, (num, den): (u64, u64)) -> bool {
    f.den == den && f.same_ratio(&Fraction::new(num, den))
}

fn le(a: Fraction, b: Fraction) -> bool {
    a.num as u128 * b.den as u128 <= b.num as u128 * a.den as u128
}

fn metric_arithmetic() -> Outcome {
    // every table with cells drawn from {0, 1, 3}, taken at a fixed stride
    let cells = [0u64, 1, 3];
    let tables: Vec<ConfusionCounts> = (0..729usize)
        .step_by(37)
        .take(20)
        .map(|k| {
            let d = |i: u32| cells[(k / 3usize.pow(i)) % 3];
            ConfusionCounts { tp: d(0), up: d(1), fn_: d(2), fp: d(3), un: d(4), tn: d(5) }
        })
        .collect();
    let mut mismatches = 0;
    for c in &tables {
        let want = direct_rates(c);
        let (r, k) = (risk_sensitive(c), cost_sensitive(c));
        let got = [r.sensitivity, r.specificity, r.f1, k.sensitivity, k.specificity, k.f1];
        mismatches += got.iter().zip(want).filter(|(g, w)| !frac_eq(**g, *w)).count();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut order_bad = 0;
    for _ in 0..10_000 {
        let mut d = || rng.random_range(0..1000u64);
        let c = ConfusionCounts { tp: d(), up: d(), fn_: d(), fp: d(), un: d(), tn: d() };
        let (r, k) = (risk_sensitive(&c), cost_sensitive(&c));
        let sens_ok = r.sensitivity.den == 0 || le(r.sensitivity, k.sensitivity);
        let spec_ok = k.specificity.den == 0 || le(k.specificity, r.specificity);
        order_bad += !(sens_ok && spec_ok) as usize;
    }
    ensure(
        mismatches == 0 && order_bad == 0,
        format!("{} hand tables ({mismatches} mismatches), 10^4 ordering checks ({order_bad} failures)", tables.len()),
    )
}

fn auc_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let levels = [f64::NEG_INFINITY, -1.0, 0.0, 0.25, 0.5, 1.0, f64::INFINITY];
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..5_000 {
        let n = rng.random_range(1..=50);
        let continuous = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if continuous { rng.random_range(-1.0..1.0) } else { levels[rng.random_range(0..levels.len())] })
            .collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let (mut wins_x2, mut pairs) = (0u64, 0u64);
        for (i, si) in scores.iter().enumerate() {
            for (j, sj) in scores.iter().enumerate() {
                if truth[i] && !truth[j] {
                    pairs += 1;
                    wins_x2 += if si > sj { 2 } else if si == sj { 1 } else { 0 };
                }
            }
        }
        let want = (pairs > 0).then(|| wins_x2 as f64 / (2 * pairs) as f64);
        checked += 1;
        bad += (auc(&scores, &truth) != want) as usize;
    }
    ensure(bad == 0, format!("{checked} instances with N <= 50, {bad} mismatches"))
}

// ---- benchmark ----

fn benchmark_ordering() -> Outcome {
    let started = Instant::now();
    let report = run_benchmark(&BenchmarkPlan::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let s = |k| report.summary(k).expect("strategy summary");
    let (al, rnd, na) = (s(Strategy::Al), s(Strategy::Random), s(Strategy::NonAdaptive));
    let detail = format!(
        "median reach AL {} RANDOM {} (ratio {}), undetermined at {:?}: AL {:?} RANDOM {:?} NON-ADAPTIVE {:?}, {:.0}s",
        al.median_reach_bound,
        // a censored median is reported at the cap, as in the bench report
        if rnd.median_censored {
            format!(">{}", rnd.runs.first().map_or(0, |r| r.cap))
        } else {
            rnd.median_reach_bound.to_string()
        },
        report.reach_ratio.map_or("n/a".into(), |r| format!("{r:.3}")),
        report.plan.checkpoints,
        al.median_undetermined,
        rnd.median_undetermined,
        na.median_undetermined,
        elapsed.as_secs_f64()
    );
    ensure(report.passed() && elapsed < Duration::from_secs(300), detail)
}

// ---- transfer ----

fn edge_band_map() -> GridMap {
    MapSpec::edge_band_benchmark().load().unwrap()
}

fn undetermined_after(session: &mut Session, oracle: &mut NoisyOracle, steps: usize) -> usize {
    for _ in 0..steps {
        let i = session.suggestion().expect("active").index;
        let y = oracle.query(i).unwrap();
        session.ingest(i, y).unwrap();
    }
    session.partition().counts().undetermined
}

fn transfer_benefit() -> Outcome {
    let map = edge_band_map();
    let noise = 0.01 * map.range();
    // every 4th point of the same surface keeps the source fit cheap
    let data = LabeledDataset::new(map.domain().points(), map.values().to_vec()).unwrap();
    let source = Arc::new(SourceDataset::fit(data, 4).map_err(|e| e.to_string())?);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let config = |strategy| SessionConfig { strategy, seed, ..Default::default() };
        let mut al = Session::new(config(Strategy::Al), map.domain().clone(), None).unwrap();
        let mut atl = Session::new(config(Strategy::Atl), map.domain().clone(), Some(source.clone())).unwrap();
        let a = undetermined_after(&mut al, &mut NoisyOracle::new(map.clone(), noise, seed + 1000).unwrap(), 10);
        let t = undetermined_after(&mut atl, &mut NoisyOracle::new(map.clone(), noise, seed + 1000).unwrap(), 10);
        wins += (t <= a) as usize;
        pairs.push(format!("{t}/{a}"));
    }
    ensure(wins >= 8, format!("ATL <= AL at step 10 in {wins}/10 seeds (ATL/AL: {})", pairs.join(" ")))
}

fn lss_recovery() -> Outcome {
    let d = GridDomain::regular(30, 30, 2.0).unwrap();
    let spec = SynthSpec::SinusoidRidge { offset: 1.0, amplitude: 1.0, wavelength_mm: 40.0 };
    let src_map = synth_map(&spec, &d, 4).map_err(|e| e.to_string())?;
    let target = GridMap::new(d.clone(), src_map.values().iter().map(|v| 2.0 * v + 1.0).collect()).unwrap();
    let data = LabeledDataset::new(d.points(), src_map.values().to_vec()).unwrap();
    let source = Arc::new(SourceDataset::fit(data, 3).map_err(|e| e.to_string())?);

    let config = |strategy, forced_shift| SessionConfig { strategy, theta: 3.0, forced_shift, seed: 2, ..Default::default() };
    let mut lss = Session::new(config(Strategy::LssAtl, None), d.clone(), Some(source.clone())).unwrap();
    let mut oracle = NoisyOracle::new(target.clone(), 0.0, 0).unwrap();
    undetermined_after(&mut lss, &mut oracle, 15);
    let (g, e) = lss.transfer_shift().ok_or("no shift")?;
    let recovered = ((g - 2.0) / 2.0).abs() <= 0.05 && (e - 1.0).abs() <= 0.05;

    let mut atl = Session::new(config(Strategy::Atl, None), d.clone(), Some(source.clone())).unwrap();
    let mut unit = Session::new(config(Strategy::LssAtl, Some((1.0, 0.0))), d.clone(), Some(source)).unwrap();
    let mut identical = true;
    for _ in 0..20 {
        identical &= atl.partition() == unit.partition()
            && atl.suggestion() == unit.suggestion()
            && bits(atl.predictions()) == bits(unit.predictions());
        let i = atl.suggestion().unwrap().index;
        let y = target.values()[i];
        atl.ingest(i, y).unwrap();
        unit.ingest(i, y).unwrap();
    }
    identical &= atl.partition() == unit.partition() && bits(atl.predictions()) == bits(unit.predictions());
    ensure(
        recovered && identical,
        format!("(gamma, eta) = ({g:.4}, {e:.4}) after 15 observations; unit shift identical to ATL over 20 steps: {identical}"),
    )
}

fn bits(preds: Option<&[redzone_core::Prediction]>) -> Vec<(u64, u64)> {
    preds
        .unwrap_or(&[])
        .iter()
        .map(|p| (p.mean.to_bits(), p.variance.to_bits()))
        .collect()
}

// ---- determinism and replay ----

fn run_cli(config: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_redzone"))
        .args(["run", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--snapshot-steps", "10,40"])
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism_and_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "map.kind = edge_band\nmap.cols = 30\nmap.rows = 30\nseed = 5\nbudget = 80\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_cli(&cfg, &a)?;
    run_cli(&cfg, &b)?;
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing = names.iter().filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok()).count();

    // replay a live session, with one off-suggestion measurement, from its log
    let map = edge_band_map();
    let mut oracle = NoisyOracle::new(map.clone(), 0.04, 77).unwrap();
    let config = SessionConfig { seed: 9, ..Default::default() };
    let mut live = Session::new(config.clone(), map.domain().clone(), None).unwrap();
    let mut log = Vec::new();
    for step in 0..60 {
        let i = if step == 20 {
            (0..map.domain().len()).find(|i| !live.measured_mask()[*i] && Some(*i) != live.suggestion().map(|s| s.index)).unwrap()
        } else {
            live.suggestion().unwrap().index
        };
        let y = oracle.query(i).unwrap();
        live.ingest(i, y).unwrap();
        log.push((i, y));
    }
    let replayed = Session::replay(config, map.domain().clone(), None, &log).map_err(|e| e.to_string())?;
    let same = replayed.partition() == live.partition()
        && replayed.suggestion() == live.suggestion()
        && bits(replayed.predictions()) == bits(live.predictions());
    ensure(
        differing == 0 && same && names.len() >= 5,
        format!("{} output files, {differing} differ between runs; 60-step log replay identical: {same}", names.len()),
    )
}

fn data_format() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("grid.csv");
    let mut text = String::from("x_mm,y_mm,value\n");
    for r in 0..89 {
        for c in 0..74 {
            text.push_str(&format!("{},{},{}\n", c * 2, r * 2, 1.0 + ((r * 7 + c * 3) % 11) as f64 / 4.0));
        }
    }
    std::fs::write(&path, text).unwrap();
    let map = load_grid_csv(&path).map_err(|e| e.to_string())?;
    let via_spec = MapSpec::File { path: path.clone() }.load().map_err(|e| e.to_string())?;
    let d = map.domain();
    ensure(
        map.values().len() == 6586 && d.cols() == 74 && d.rows() == 89 && d.spacing() == (2.0, 2.0) && via_spec.values().len() == 6586,
        format!("{}x{} lattice at {:?} mm, N = {}", d.cols(), d.rows(), d.spacing(), map.values().len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gp-oracle-equivalence", gp_oracle),
        ("variance-laws", variance_laws),
        ("straddle-violation-equivalence", straddle_violation),
        ("metric-arithmetic", metric_arithmetic),
        ("auc-brute-force", auc_brute_force),
        ("synthetic-benchmark-ordering", benchmark_ordering),
        ("transfer-benefit", transfer_benefit),
        ("lss-recovery", lss_recovery),
        ("determinism-and-replay", determinism_and_replay),
        ("data-format", data_format),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
