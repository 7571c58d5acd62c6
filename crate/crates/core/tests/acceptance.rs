//! Acceptance suite. Runs the full default sweep twice through the CLI pipeline (one and four
//! workers), then checks every criterion and prints one PASS/FAIL line each. Exits non-zero
//! when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use mixfd::cli::tables::{self, FaultRow, RunRow};
use mixfd::cli::{cmd_sweep, SweepArgs};
use mixfd::coordination::{failsafe_arbitrate, Decision};
use mixfd::experiment::{run_sim, ExperimentPlan, RunConfig};
use mixfd::fdfit::{fit_quadratic, residual_sum};
use mixfd::geometry::{build_intersection, IntersectionKind};
use mixfd::report::FitRow;
use rand::Rng;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn read<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Vec<T> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    tables::read_csv(text.as_bytes(), header).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn sweep(out: &Path, jobs: usize) -> Duration {
    let start = Instant::now();
    let outcome = cmd_sweep(&SweepArgs {
        config: None,
        out: Some(out.to_path_buf()),
        jobs: Some(jobs),
        no_plots: false,
        seed_override: None,
    })
    .expect("default sweep runs");
    let took = start.elapsed();
    eprintln!(
        "sweep with {jobs} workers: {:.1}s, exit code {}",
        took.as_secs_f64(),
        outcome.exit_code()
    );
    took
}

type Cell = (String, u64);

fn cell_of(intersection: &str, penetration: f64) -> Cell {
    (intersection.to_string(), penetration.to_bits())
}

fn eq1(runs: &[RunRow]) -> Verdict {
    let worst = runs
        .iter()
        .map(|r| (r.q - r.k * r.v).abs() / r.q.max(1.0))
        .fold(0.0f64, f64::max);
    Verdict {
        id: 1,
        name: "Q = k V identity",
        pass: !runs.is_empty() && worst <= 1e-9,
        detail: format!("{} samples, worst residual {worst:.3e}", runs.len()),
    }
}

fn safety(faults: &[FaultRow]) -> Verdict {
    let unsafe_faults: Vec<&FaultRow> = faults
        .iter()
        .filter(|f| f.fault.contains("overlaps") || f.fault.contains("conflicting") || f.fault.contains("without a grant"))
        .collect();
    Verdict {
        id: 2,
        name: "safety",
        pass: unsafe_faults.is_empty(),
        detail: format!(
            "{} exclusion/gap violations, {} faulted runs in total{}",
            unsafe_faults.len(),
            faults.len(),
            unsafe_faults.first().map(|f| format!(", first: {}", f.fault)).unwrap_or_default()
        ),
    }
}

fn protocol(runs: &[RunRow], faults: &[FaultRow], fits: &[FitRow]) -> Verdict {
    let planned = ExperimentPlan::default().jobs().map(|j| j.len()).unwrap_or(0);
    let mut seen: BTreeSet<(String, u64, u64, usize)> = BTreeSet::new();
    for r in runs {
        seen.insert((r.intersection.clone(), r.penetration.to_bits(), r.seed, r.vehicle_count));
    }
    for f in faults {
        seen.insert((f.intersection.clone(), f.penetration.to_bits(), f.seed, f.vehicle_count));
    }
    let intersections: BTreeSet<&str> = fits.iter().map(|f| f.intersection.as_str()).collect();
    let pens: BTreeSet<u64> = fits.iter().map(|f| f.penetration.to_bits()).collect();
    let seeds: BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
    let pass = planned == 720
        && seen.len() == 720
        && fits.len() == 20
        && intersections.len() == 4
        && pens.len() == 5
        && seeds.len() == 3;
    Verdict {
        id: 3,
        name: "protocol",
        pass,
        detail: format!(
            "{} runs ({} planned), {} fits, {} intersections x {} penetrations x {} seeds",
            seen.len(),
            planned,
            fits.len(),
            intersections.len(),
            pens.len(),
            seeds.len()
        ),
    }
}

fn fit_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = common::rng(4);
    let mut worst_coef = 0.0f64;
    let mut optimality_ok = true;
    let mut perturbation_ok = true;
    for _ in 0..200 {
        let a = rng.random_range(-0.2..-0.001);
        let b = rng.random_range(0.0..30.0);
        let c = rng.random_range(-100.0..100.0);
        let ks: Vec<f64> = (0..rng.random_range(8..60))
            .map(|_| rng.random_range(0.0..150.0))
            .collect();
        let clean: Vec<(f64, f64)> = ks.iter().map(|&k| (k, a * k * k + b * k + c)).collect();
        let f = fit_quadratic(&clean).expect("fit");
        worst_coef = worst_coef
            .max((f.a - a).abs())
            .max((f.b - b).abs())
            .max((f.c - c).abs());

        let noisy: Vec<(f64, f64)> = clean
            .iter()
            .map(|&(k, q)| (k, q + rng.random_range(-40.0..40.0)))
            .collect();
        let g = fit_quadratic(&noisy).expect("fit");
        let fitted = g.residual_sum(&noisy);
        optimality_ok &= fitted <= residual_sum(a, b, c, &noisy);
        for (da, db, dc) in [(1e-3, 0.0, 0.0), (0.0, 1e-3, 0.0), (0.0, 0.0, 1e-3)] {
            for s in [-1.0, 1.0] {
                perturbation_ok &= residual_sum(g.a + s * da, g.b + s * db, g.c + s * dc, &noisy) >= fitted;
            }
        }
    }
    let took = start.elapsed();
    Verdict {
        id: 4,
        name: "fit oracle",
        pass: worst_coef <= 1e-6 && optimality_ok && perturbation_ok && took < Duration::from_secs(1),
        detail: format!(
            "worst noiseless coefficient error {worst_coef:.2e}, optimality {}, perturbation {}, {:.0} ms",
            if optimality_ok { "held" } else { "violated" },
            if perturbation_ok { "held" } else { "violated" },
            took.as_secs_f64() * 1e3
        ),
    }
}

fn fd_shape(runs: &[RunRow], fits: &[FitRow]) -> Verdict {
    let mut range: BTreeMap<Cell, (f64, f64)> = BTreeMap::new();
    for r in runs {
        let e = range
            .entry(cell_of(&r.intersection, r.penetration))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(r.k);
        e.1 = e.1.max(r.k);
    }
    let non_concave: Vec<&FitRow> = fits.iter().filter(|f| f.flag == "non_concave").collect();
    let mut bad = Vec::new();
    let mut checked = 0;
    for f in fits.iter().filter(|f| f.flag == "ok") {
        checked += 1;
        let (lo, hi) = range[&cell_of(&f.intersection, f.penetration)];
        let inside = f.k_crit.map(|k| lo < k && k < hi).unwrap_or(false);
        if !(f.a.unwrap_or(0.0) < 0.0 && inside) {
            bad.push(format!("{}@{}", f.intersection, f.penetration));
        }
    }
    let mut detail = format!("{checked} unflagged fits checked, all concave with interior k_crit");
    if !bad.is_empty() {
        detail = format!("{checked} unflagged fits checked; failing: {}", bad.join(" "));
    }
    if !non_concave.is_empty() {
        detail += &format!(
            "; DENSITY LADDER MIS-SPECIFIED: {} non-concave cells",
            non_concave.len()
        );
    }
    Verdict {
        id: 5,
        name: "FD shape",
        pass: bad.is_empty() && non_concave.is_empty() && checked > 0,
        detail,
    }
}

fn anchors(runs: &[RunRow], fits: &[FitRow]) -> Verdict {
    let config = RunConfig::default();
    let mut worst_dv = 0.0f64;
    let mut windows = 0;
    for kind in IntersectionKind::ALL {
        let spec = build_intersection(kind);
        let limit = spec.speed_limit * 3.6;
        for p in [0.0, 1.0] {
            let r = run_sim(&spec, 1, p, 1, &config).expect("lone vehicle run");
            assert!(r.fault.is_none(), "{kind}: {:?}", r.fault);
            for s in &r.samples {
                windows += 1;
                worst_dv = worst_dv.max((s.v - limit).abs());
            }
        }
    }
    let free_ok = windows > 0 && worst_dv <= 2.0;

    // Near-jam level: the largest vehicle count of each intersection.
    let mut top: BTreeMap<&str, usize> = BTreeMap::new();
    for r in runs {
        let e = top.entry(&r.intersection).or_insert(0);
        *e = (*e).max(r.vehicle_count);
    }
    let mut per_run: BTreeMap<(Cell, u64), (f64, usize)> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.vehicle_count == top[r.intersection.as_str()]) {
        let e = per_run
            .entry((cell_of(&r.intersection, r.penetration), r.seed))
            .or_insert((0.0, 0));
        e.0 += r.q;
        e.1 += 1;
    }
    let q_max: BTreeMap<Cell, f64> = fits
        .iter()
        .filter_map(|f| f.q_max.map(|q| (cell_of(&f.intersection, f.penetration), q)))
        .collect();
    let mut jam_pass = 0;
    let mut worst_ratio = 0.0f64;
    let mut best_ratio = f64::INFINITY;
    for ((cell, _), (sum, n)) in &per_run {
        let ratio = match q_max.get(cell) {
            Some(&qm) if qm > 0.0 => sum / *n as f64 / qm,
            _ => f64::INFINITY,
        };
        worst_ratio = worst_ratio.max(ratio);
        best_ratio = best_ratio.min(ratio);
        if ratio < 0.2 {
            jam_pass += 1;
        }
    }
    let jam_ok = !per_run.is_empty() && jam_pass == per_run.len();
    Verdict {
        id: 6,
        name: "free-flow and jam anchors",
        pass: free_ok && jam_ok,
        detail: format!(
            "free flow: {windows} windows, worst |V - limit| {worst_dv:.3} km/h ({}); jam: {jam_pass}/{} near-jam runs below 0.2 q_max, Q/q_max from {best_ratio:.3} to {worst_ratio:.3} ({})",
            if free_ok { "ok" } else { "FAIL" },
            per_run.len(),
            if jam_ok { "ok" } else { "FAIL" }
        ),
    }
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let same = |f: &str| fs::read(a.join(f)).ok().zip(fs::read(b.join(f)).ok()).map(|(x, y)| x == y);
    let runs = same("runs.csv") == Some(true);
    let fits = same("fits.csv") == Some(true);
    Verdict {
        id: 7,
        name: "determinism",
        pass: runs && fits,
        detail: format!(
            "--jobs 1 vs --jobs 4: runs.csv {}, fits.csv {}",
            if runs { "identical" } else { "DIFFERENT" },
            if fits { "identical" } else { "DIFFERENT" }
        ),
    }
}

fn arbiter() -> Verdict {
    let mut rng = common::rng(2024);
    let mut mismatches = 0;
    let mut claims = 0;
    for _ in 0..10_000 {
        let (spec, proposals, occupancy) = common::random_case(&mut rng);
        claims += proposals.len();
        let grants = failsafe_arbitrate(&proposals, &spec, &occupancy, 0.0);
        let mut went: Vec<u32> = grants
            .iter()
            .filter(|g| g.decision == Decision::Go)
            .map(|g| g.vehicle)
            .collect();
        went.sort_unstable();
        if went != common::brute_force_grants(&proposals, &spec, &occupancy) {
            mismatches += 1;
        }
    }
    Verdict {
        id: 8,
        name: "arbiter oracle",
        pass: mismatches == 0,
        detail: format!("10000 claim sets ({claims} claims), {mismatches} mismatches"),
    }
}

fn runtime(took: Duration) -> Verdict {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Verdict {
        id: 9,
        name: "runtime",
        pass: took < Duration::from_secs(600),
        detail: format!(
            "default sweep with --jobs 4 took {:.1}s on {cores} available core(s)",
            took.as_secs_f64()
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let one = tmp.path().join("jobs1");
    let four = tmp.path().join("jobs4");
    sweep(&one, 1);
    let took = sweep(&four, 4);

    let runs: Vec<RunRow> = read(&four.join("runs.csv"), &tables::RUNS_HEADER);
    let faults: Vec<FaultRow> = read(&four.join("faults.csv"), &tables::FAULTS_HEADER);
    let fits: Vec<FitRow> = read(&four.join("fits.csv"), &tables::FITS_HEADER);

    let verdicts = [
        eq1(&runs),
        safety(&faults),
        protocol(&runs, &faults, &fits),
        fit_oracle(),
        fd_shape(&runs, &fits),
        anchors(&runs, &fits),
        determinism(&one, &four),
        arbiter(),
        runtime(took),
    ];
    let mut failed = 0;
    for v in &verdicts {
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
