//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twophoton::cli::{self, Preset, RunArgs, CAVITY_DECOHERENCE_TIME_S};
use twophoton::dynamics::{lambda_n, manifold_propagator, max_abs_diff, ManifoldIndex, ManifoldPropagator};
use twophoton::metrics::closed_form::{self, PassCoefficients};
use twophoton::metrics::{fidelity_no_detection, fidelity_post_selected, target_epr, target_w_two_photon};
use twophoton::ode::{default_max_step, integrate_manifold, integrate_propagator, ManifoldAmplitudes};
use twophoton::protocol::{AtomLevel, ProtocolSpec};
use twophoton::{FrequencyConvention, PhysicalParams};

// Tolerances and thresholds, one block per criterion.
const EPR_P: (f64, f64) = (0.40, 0.05);
const EPR_F: (f64, f64) = (0.97, 0.02);
const W_P: (f64, f64) = (0.30, 0.05);
const W_F: (f64, f64) = (0.95, 0.02);
const SIMULATE_BUDGET: Duration = Duration::from_secs(1);

const NO_DETECTION_RANGE: (f64, f64) = (0.75, 0.85);
const NO_DETECTION_POINTS: usize = 201;
const NO_DETECTION_BUDGET: Duration = Duration::from_secs(60);

const ORACLE_SETS: usize = 100;
const ORACLE_MAX_PHASE: f64 = 200.0;
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);

const UNITARY_SAMPLES: usize = 10_000;
const UNITARY_TOL: f64 = 1e-10;
const COMPOSITION_TOL: f64 = 1e-10;
const UNITARY_BUDGET: Duration = Duration::from_secs(10);

const STRUCTURAL_SAMPLES: usize = 1000;
const STRUCTURAL_TOL: f64 = 1e-10;

const RESONANCE_TOL: f64 = 1e-8;

const BRANCH_TOL: f64 = 1e-10;
const BRANCH_RUNS: usize = 2000;

const TOTAL_TIME_LIMIT_S: f64 = 1e-4;

const MANIFOLDS: [i64; 5] = [-1, 0, 1, 2, 5];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(x: f64, (centre, tol): (f64, f64)) -> bool {
    (x - centre).abs() <= tol
}

fn nominal(convention: FrequencyConvention) -> PhysicalParams {
    PhysicalParams::nominal(convention)
}

fn fixed(preset: Preset, times: &[f64], convention: FrequencyConvention) -> RunArgs {
    RunArgs {
        preset: Some(preset),
        t1: times.first().copied(),
        t2: times.get(1).copied(),
        t3: times.get(2).copied(),
        convention: Some(convention),
        ..Default::default()
    }
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("twophoton").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap() + &String::from_utf8(err).unwrap())
}

fn reproduce(preset: Preset, times: &[f64], p_band: (f64, f64), f_band: (f64, f64), name: &str) -> Outcome {
    let mut notes = Vec::new();
    let mut any = false;
    for convention in [FrequencyConvention::Angular, FrequencyConvention::Cyclic] {
        let start = Instant::now();
        let report = match cli::simulate(&fixed(preset, times, convention)) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("simulate failed: {e:?}")),
        };
        let elapsed = start.elapsed();
        let f = report.fidelity.unwrap_or(f64::NAN);
        let p = report.success_probability;
        let ok = within(p, p_band) && within(f, f_band) && elapsed < SIMULATE_BUDGET;
        any |= ok;
        notes.push(format!(
            "{}: P={p:.4} F={f:.4} ({:.1} ms){}",
            report.convention,
            elapsed.as_secs_f64() * 1e3,
            if ok { " <- reproduces" } else { "" }
        ));
    }
    // the CLI path itself, with the default convention
    let mut argv = vec!["simulate", "--preset", name];
    let tv: Vec<String> = times.iter().map(|t| t.to_string()).collect();
    for (flag, v) in ["--t1", "--t2", "--t3"].iter().zip(&tv) {
        argv.push(flag);
        argv.push(v);
    }
    let (code, text) = run_cli(&argv);
    let cli_ok = code == 0 && text.contains("convention: angular");
    outcome(any && cli_ok, notes.join("; "))
}

fn criterion_1() -> Outcome {
    reproduce(Preset::Epr, &[3.0, 3.0], EPR_P, EPR_F, "epr")
}

fn criterion_2() -> Outcome {
    reproduce(Preset::W, &[32.0, 32.0, 32.0], W_P, W_F, "w")
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let grid = format!("0:40:{NO_DETECTION_POINTS}");
    let args = RunArgs {
        preset: Some(Preset::Epr),
        grid: vec![format!("t1={grid}"), format!("t2={grid}")],
        no_detection: true,
        ..Default::default()
    };
    let (result, _, _) = match cli::sweep(&args) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e:?}")),
    };
    let elapsed = start.elapsed();
    let best = result.best_record().expect("no-detection records are always defined");
    let f = best.fidelity.unwrap();
    let n = result.records.len();
    let ok = f >= NO_DETECTION_RANGE.0
        && f <= NO_DETECTION_RANGE.1
        && n == NO_DETECTION_POINTS * NO_DETECTION_POINTS
        && elapsed < NO_DETECTION_BUDGET;
    outcome(
        ok,
        format!(
            "max F={f:.4} at t1={:.2} t2={:.2} over {n} points ({:.2} s)",
            best.times[0],
            best.times[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..ORACLE_SETS {
        let g1 = rng.gen_range(0.1..50.0);
        let g2 = rng.gen_range(0.1..50.0);
        let g = 0.5 * (g1 + g2);
        let delta = rng.gen_range(-50.0 * g..50.0 * g);
        let params = PhysicalParams::angular(g1, g2, delta).unwrap();
        let n = ManifoldIndex::new(MANIFOLDS[rng.gen_range(0..MANIFOLDS.len())]).unwrap();
        let t = rng.gen_range(0.0..ORACLE_MAX_PHASE) / lambda_n(&params, n).unwrap();
        let numeric = integrate_propagator(&params, n, t, default_max_step(&params, n)).unwrap();
        let exact = manifold_propagator(&params, n, t).unwrap();
        worst = worst.max(max_abs_diff(&numeric, &exact.to_rows()));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!("max |RK4 - closed form| = {worst:.2e} over {ORACLE_SETS} sets ({:.2} s)", elapsed.as_secs_f64()),
    )
}

struct UnitaryStats {
    unitarity: f64,
    composition: f64,
    two_time: f64,
    elapsed: Duration,
}

fn unitary_stats() -> UnitaryStats {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut unitarity, mut composition, mut two_time) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..UNITARY_SAMPLES {
        let g1 = rng.gen_range(0.0..50.0);
        let g2 = rng.gen_range(0.0..50.0);
        let delta = rng.gen_range(-2500.0..2500.0);
        let params = PhysicalParams::angular(g1, g2, delta).unwrap();
        let n = ManifoldIndex::new(MANIFOLDS[rng.gen_range(0..MANIFOLDS.len())]).unwrap();
        let lam = lambda_n(&params, n).unwrap().max(1e-12);
        let t1 = rng.gen_range(0.0..500.0) / lam;
        let t2 = rng.gen_range(0.0..500.0) / lam;
        let u1 = manifold_propagator(&params, n, t1).unwrap();
        let u2 = manifold_propagator(&params, n, t2).unwrap();
        let u12 = manifold_propagator(&params, n, t1 + t2).unwrap();
        unitarity = unitarity.max(u1.unitarity_residual()).max(u12.unitarity_residual());
        composition = composition.max(max_abs_diff(&u2.compose(&u1), &u12.to_rows()));
        let later = ManifoldPropagator::between(&params, n, t1, t1 + t2).unwrap();
        two_time = two_time.max(max_abs_diff(&later.compose(&u1), &u12.to_rows()));
    }
    UnitaryStats { unitarity, composition, two_time, elapsed: start.elapsed() }
}

fn criterion_5(stats: &UnitaryStats) -> Outcome {
    let ok = stats.unitarity <= UNITARY_TOL && stats.composition <= COMPOSITION_TOL && stats.elapsed < UNITARY_BUDGET;
    outcome(
        ok,
        format!(
            "max |U'U - I| = {:.2e}; max |U(t2)U(t1) - U(t1+t2)| = {:.2e} over {UNITARY_SAMPLES} draws ({:.2} s)",
            stats.unitarity,
            stats.composition,
            stats.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5_two_time(stats: &UnitaryStats) -> Outcome {
    outcome(
        stats.two_time <= COMPOSITION_TOL,
        format!("max |R(t1)U(t2)R(t1)' U(t1) - U(t1+t2)| = {:.2e}", stats.two_time),
    )
}

fn criterion_6() -> Outcome {
    let params = nominal(FrequencyConvention::Angular);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (epr, w) = (target_epr(), target_w_two_photon());
    let (mut post, mut nodet, mut wpost) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..STRUCTURAL_SAMPLES {
        let t: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..40.0)).collect();
        let c: Vec<_> = t.iter().map(|&x| PassCoefficients::at(&params, x).unwrap()).collect();

        let s = ProtocolSpec::epr(params, t[0], t[1]).evolve().unwrap();
        let f = fidelity_post_selected(&s, AtomLevel::G, &epr).unwrap();
        post = post
            .max((f.fidelity - closed_form::epr_fidelity(&c[0], &c[1])).abs())
            .max((f.probability - closed_form::epr_probability(&c[0], &c[1])).abs());
        let nd = fidelity_no_detection(&s, &epr).unwrap();
        nodet = nodet.max((nd - closed_form::epr_fidelity_no_detection(&c[0], &c[1])).abs());

        let s = ProtocolSpec::w(params, t[0], t[1], t[2]).evolve().unwrap();
        let f = fidelity_post_selected(&s, AtomLevel::G, &w).unwrap();
        wpost = wpost
            .max((f.fidelity - closed_form::w_fidelity(&c[0], &c[1], &c[2])).abs())
            .max((f.probability - closed_form::w_probability(&c[0], &c[1], &c[2])).abs());
    }
    let worst = post.max(nodet).max(wpost);
    outcome(
        worst <= STRUCTURAL_TOL,
        format!("EPR post {post:.1e}, EPR no-detection {nodet:.1e}, W post {wpost:.1e} over {STRUCTURAL_SAMPLES} tuples"),
    )
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    let n = ManifoldIndex::new(0).unwrap();
    for g in [0.3, 1.0, 17.5] {
        let params = PhysicalParams::angular(g, g, 0.0).unwrap();
        let t = PI / (3f64.sqrt() * g);
        let closed = manifold_propagator(&params, n, t).unwrap().coefficient(AtomLevel::G, AtomLevel::E).unwrap();
        let ode = integrate_manifold(&params, n, &ManifoldAmplitudes::unit(n, 0), t, default_max_step(&params, n))
            .unwrap()
            .c_g
            .unwrap();
        worst = worst.max((closed.norm_sqr() - 8.0 / 9.0).abs()).max((ode.norm_sqr() - 8.0 / 9.0).abs());
    }
    outcome(worst <= RESONANCE_TOL, format!("max | |C_g2|^2 - 8/9 | = {worst:.2e} (closed form and RK4)"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut completeness: f64 = 0.0;
    let mut norm: f64 = 0.0;
    let mut max_excitation = 0;
    let mut runs: Vec<Vec<f64>> = vec![vec![3.0, 3.0], vec![32.0, 32.0, 32.0], vec![0.0, 0.0]];
    for i in 0..BRANCH_RUNS {
        let k = 2 + i % 2;
        runs.push((0..k).map(|_| rng.gen_range(0.0..40.0)).collect());
    }
    for times in &runs {
        let spec = ProtocolSpec::sequential(nominal(FrequencyConvention::Angular), times);
        let state = spec.evolve().unwrap();
        norm = norm.max((state.norm_sqr() - 1.0).abs());
        let total: f64 = state.level_probabilities().iter().sum();
        completeness = completeness.max((total - 1.0).abs());
        max_excitation = max_excitation.max(state.max_excitation());
    }
    outcome(
        completeness <= BRANCH_TOL && norm <= BRANCH_TOL && max_excitation <= 2,
        format!(
            "{} runs: max |sum P_level - 1| = {completeness:.1e}, max excitation {max_excitation} (bound 2)",
            runs.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (preset, times, name) in [(Preset::Epr, vec![3.0, 3.0], "epr"), (Preset::W, vec![32.0; 3], "w")] {
        let r = cli::simulate(&fixed(preset, &times, FrequencyConvention::Angular)).unwrap();
        let text = r.to_text();
        let stated = text.contains("time_ratio:") && text.contains("cavity_decoherence_time_s: 0.1");
        let ratio_ok = (r.time_ratio - r.total_interaction_time_s / CAVITY_DECOHERENCE_TIME_S).abs() < 1e-18;
        ok &= r.total_interaction_time_s <= TOTAL_TIME_LIMIT_S && stated && ratio_ok;
        notes.push(format!("{name}: {:.2e} s, ratio {:.2e}", r.total_interaction_time_s, r.time_ratio));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, Vec<String>)> = vec![
        (
            "epr_t2_scan",
            vec!["sweep", "--preset", "epr", "--grid", "t1=2:5:2", "--grid", "t2=0:10:201"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        ("w_t3_scan_16_16", w_t3_scan(16.0, 16.0)),
        ("w_t3_scan_2_2", w_t3_scan(2.0, 2.0)),
        ("w_t3_scan_13_13", w_t3_scan(13.0, 13.0)),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, args) in cases {
        let mut contents = Vec::new();
        // same path both times: the embedded config records it
        let path = dir.path().join(format!("{name}.csv"));
        for _ in 0..2 {
            let mut argv: Vec<String> = args.clone();
            argv.push("--out".into());
            argv.push(path.display().to_string());
            let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
            let (code, msg) = run_cli(&refs);
            if code != 0 {
                return outcome(false, format!("{name}: exit {code}: {msg}"));
            }
            contents.push(std::fs::read(&path).unwrap());
        }
        let text = String::from_utf8(contents[0].clone()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let identical = contents[0] == contents[1];
        let expected_rows = if name == "epr_t2_scan" { 2 * 201 } else { 401 };
        let header_ok = rows[0] == if name == "epr_t2_scan" { "t1,t2,fidelity,probability" } else { "t1,t2,t3,fidelity,probability" };
        ok &= identical && header_ok && rows.len() == expected_rows + 1;
        notes.push(format!("{name}: {} rows{}", rows.len() - 1, if identical { " bit-identical" } else { " DIFFER" }));
    }
    outcome(ok, notes.join("; "))
}

fn w_t3_scan(t1: f64, t2: f64) -> Vec<String> {
    vec![
        "sweep".into(),
        "--preset".into(),
        "w".into(),
        "--t1".into(),
        t1.to_string(),
        "--t2".into(),
        t2.to_string(),
        "--grid".into(),
        "t3=0:40:401".into(),
        "--no-detection".into(),
    ]
}

fn main() {
    let stats = unitary_stats();
    let results: Vec<(&str, &str, Outcome)> = vec![
        ("1", "EPR operating point (t1=t2=3 us)", criterion_1()),
        ("2", "W operating point (t1=t2=t3=32 us)", criterion_2()),
        ("3", "EPR no-detection ceiling", criterion_3()),
        ("4", "closed form vs RK4 oracle", criterion_4()),
        ("5", "unitarity and composition U(t1+t2)=U(t2)U(t1)", criterion_5(&stats)),
        ("5'", "frame-corrected two-time composition (supplementary)", criterion_5_two_time(&stats)),
        ("6", "structural identity of F and P", criterion_6()),
        ("7", "resonant 8/9 population", criterion_7()),
        ("8", "branch completeness and excitation bound", criterion_8()),
        ("9", "total interaction time report", criterion_9()),
        ("10", "CSV emission is deterministic", criterion_10()),
    ];

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("[{}] criterion {id}: {name} -- {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
