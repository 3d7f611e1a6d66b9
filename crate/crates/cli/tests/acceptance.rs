//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use geotopic::ingest::{CorpusStats, TENSOR_FILE};
use geotopic::nmf::{flatten_location, flatten_time};
use geotopic::ntf::{ccd_sweep_mode, factorize, init_factors, mode_gradient, objective};
use geotopic::patterns::{factor_match_score, AssociationReport};
use geotopic::synth::{oracle, plant_model, PlantedSpec};
use geotopic::tensor::{gram_hadamard, mttkrp, residual_sq};
use geotopic::{io, Algorithm, Mode, SolverConfig, SolverTrace};

const KERNEL_INSTANCES: u64 = 50;
const KERNEL_MAX_DIM: usize = 5;
const KERNEL_EXACT_TOL: f64 = 1e-12;
const KERNEL_RESIDUAL_REL_TOL: f64 = 1e-10;
const KERNEL_BUDGET: Duration = Duration::from_secs(10);

const DESCENT_INSTANCES: u64 = 100;
const DESCENT_MAX_DIM: usize = 10;
const DESCENT_SLACK: f64 = 1e-9;
const DESCENT_SWEEPS: usize = 30;
const DESCENT_BUDGET: Duration = Duration::from_secs(60);

const GRADIENT_INSTANCES: u64 = 20;
const GRADIENT_STEP: f64 = 1e-4;
const GRADIENT_REL_TOL: f64 = 1e-3;

const RECOVERY_FMS: f64 = 0.95;
const RECOVERY_MAX_ITERS: usize = 200;
const RECOVERY_SEED: u64 = 7;
const RECOVERY_BUDGET: Duration = Duration::from_secs(30);

const SACD_ERROR_GAP: f64 = 0.02;
const SACD_ACTIVE_AFTER: usize = 5;
const SACD_ACTIVE_LIMIT: f64 = 0.6;

const ASSOCIATION_FMS: f64 = 0.95;

const MAX_RANK: usize = 4;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("kernel oracle suite", kernel_oracle),
        ("monotone descent", monotone_descent),
        ("gradient check", gradient_check),
        ("planted recovery", planted_recovery),
        ("sacd efficiency", sacd_efficiency),
        ("association loss", association_loss),
        ("ingestion round trip", ingestion_round_trip),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:?}, budget {budget:?}"))?;
    Ok(took)
}

fn kernel_oracle() -> Result<String, String> {
    let start = Instant::now();
    let (mut worst_exact, mut worst_residual) = (0.0f64, 0.0f64);
    for seed in 0..KERNEL_INSTANCES {
        let mut rng = rng(seed);
        let dims = random_dims(&mut rng, KERNEL_MAX_DIM);
        let rank = 1 + seed as usize % MAX_RANK;
        let x = random_tensor(&mut rng, dims, 0.4);
        let model = random_model(&mut rng, dims, rank, 0.0, 1.0);
        for mode in Mode::ALL {
            let (a, b) = mode.others();
            let fast = mttkrp(&x, mode, model.factor(a), model.factor(b)).map_err(|e| e.to_string())?;
            let slow = oracle::mttkrp(&x, mode, model.factor(a), model.factor(b)).map_err(|e| e.to_string())?;
            worst_exact = worst_exact.max(max_abs_diff(&slow, fast.as_slice()));
            let gh = gram_hadamard(model.factor(a), model.factor(b)).map_err(|e| e.to_string())?;
            worst_exact = worst_exact.max(max_abs_diff(&oracle::gram_hadamard(model.factor(a), model.factor(b)), gh.as_slice()));
        }
        let (ft, fl) = (flatten_time(&x), flatten_location(&x));
        let dt = oracle::flatten_time(&x).map_err(|e| e.to_string())?;
        let dl = oracle::flatten_location(&x).map_err(|e| e.to_string())?;
        for (m, row) in dt.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                worst_exact = worst_exact.max((ft.get(m, o) - v).abs());
            }
        }
        for (m, row) in dl.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                worst_exact = worst_exact.max((fl.get(m, n) - v).abs());
            }
        }
        let fast = residual_sq(&x, &model).map_err(|e| e.to_string())?;
        let slow = oracle::residual_sq(&x, &model).map_err(|e| e.to_string())?;
        worst_residual = worst_residual.max((fast - slow).abs() / slow);
    }
    ensure(worst_exact <= KERNEL_EXACT_TOL, || format!("exact kernels off by {worst_exact:e}"))?;
    ensure(worst_residual <= KERNEL_RESIDUAL_REL_TOL, || {
        format!("residual off by {worst_residual:e} relative")
    })?;
    let took = within_budget(start, KERNEL_BUDGET)?;
    Ok(format!(
        "{KERNEL_INSTANCES} instances, max abs diff {worst_exact:.1e}, residual rel diff {worst_residual:.1e}, {took:.2?}"
    ))
}

fn monotone_descent() -> Result<String, String> {
    let start = Instant::now();
    let mut checked = 0usize;
    for seed in 0..DESCENT_INSTANCES {
        let mut rng = rng(1000 + seed);
        let dims = random_dims(&mut rng, DESCENT_MAX_DIM);
        let rank = 1 + seed as usize % MAX_RANK;
        let x = random_tensor(&mut rng, dims, 0.3);

        // Sweep by sweep, checking signs after every factor update.
        let mut model = init_factors(dims, rank, seed).map_err(|e| e.to_string())?;
        let mut prev = objective(&x, &model).map_err(|e| e.to_string())?;
        for sweep in 0..DESCENT_SWEEPS {
            for mode in Mode::ALL {
                ccd_sweep_mode(&x, &mut model, mode, None, 1e-12).map_err(|e| e.to_string())?;
                ensure(model.factor(mode).as_slice().iter().all(|v| *v >= 0.0), || {
                    format!("seed {seed}: negative entry in {mode} after sweep {sweep}")
                })?;
            }
            let now = objective(&x, &model).map_err(|e| e.to_string())?;
            ensure(now <= prev + DESCENT_SLACK * (1.0 + prev), || {
                format!("seed {seed}: objective rose {prev} -> {now} at sweep {sweep}")
            })?;
            prev = now;
            checked += 1;
        }

        // The full solver, including reseeds and duplicate folding.
        let config = SolverConfig { seed, ..SolverConfig::new(rank) };
        let (fitted, trace) = factorize(&x, &config).map_err(|e| e.to_string())?;
        let mut prev = trace.initial_objective;
        for rec in &trace.records {
            ensure(rec.objective <= prev + DESCENT_SLACK * (1.0 + prev), || {
                format!("seed {seed}: traced objective rose {prev} -> {} at iteration {}", rec.objective, rec.iteration)
            })?;
            prev = rec.objective;
            checked += 1;
        }
        ensure(Mode::ALL.iter().all(|m| fitted.factor(*m).as_slice().iter().all(|v| *v >= 0.0)), || {
            format!("seed {seed}: fitted model has a negative entry")
        })?;
    }
    let took = within_budget(start, DESCENT_BUDGET)?;
    Ok(format!("{DESCENT_INSTANCES} instances, {checked} iterations checked, {took:.2?}"))
}

fn gradient_check() -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut elements = 0usize;
    for seed in 0..GRADIENT_INSTANCES {
        let mut rng = rng(2000 + seed);
        let dims = random_dims(&mut rng, 4);
        let rank = 1 + seed as usize % 3;
        let x = random_tensor(&mut rng, dims, 0.5);
        // Entries stay well above the step so every difference is central.
        let model = random_model(&mut rng, dims, rank, 0.1, 1.1);
        for mode in Mode::ALL {
            let analytic = mode_gradient(&x, &model, mode).map_err(|e| e.to_string())?;
            let fd = oracle::finite_difference_gradient(&x, &model, mode, GRADIENT_STEP).map_err(|e| e.to_string())?;
            for (i, row) in fd.iter().enumerate() {
                for (r, d) in row.iter().enumerate() {
                    let a = analytic.get(i, r);
                    let scale = a.abs().max(d.abs());
                    let rel = if scale == 0.0 { 0.0 } else { (a - d).abs() / scale };
                    ensure(rel <= GRADIENT_REL_TOL, || {
                        format!("seed {seed} {mode} ({i},{r}): analytic {a}, central difference {d}")
                    })?;
                    worst = worst.max(rel);
                    elements += 1;
                }
            }
        }
    }
    Ok(format!("{GRADIENT_INSTANCES} instances, {elements} partials, max relative gap {worst:.1e}"))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn relative_error(trace: &SolverTrace, norm_sq: f64) -> f64 {
    (trace.final_objective().max(0.0) / norm_sq).sqrt()
}

fn planted_recovery() -> Result<String, String> {
    let spec = PlantedSpec::default_acceptance();
    let planted = plant_model(&spec).map_err(|e| e.to_string())?;
    let config = SolverConfig {
        seed: RECOVERY_SEED,
        max_iters: RECOVERY_MAX_ITERS,
        ..SolverConfig::new(spec.rank)
    };
    let start = Instant::now();
    let (model, trace) = single_threaded(|| factorize(&planted.observation, &config)).map_err(|e| e.to_string())?;
    let took = within_budget(start, RECOVERY_BUDGET)?;
    let fms = factor_match_score(&planted.truth, &model).map_err(|e| e.to_string())?;
    ensure(fms >= RECOVERY_FMS, || format!("FMS {fms:.4} after {} iterations", trace.iterations()))?;
    ensure(trace.iterations() <= RECOVERY_MAX_ITERS, || format!("{} iterations", trace.iterations()))?;
    Ok(format!(
        "FMS {fms:.6} in {} iterations, relative error {:.4}, {took:.2?} single-threaded",
        trace.iterations(),
        relative_error(&trace, planted.observation.frobenius_sq())
    ))
}

fn sacd_efficiency() -> Result<String, String> {
    let spec = PlantedSpec::default_acceptance();
    let planted = plant_model(&spec).map_err(|e| e.to_string())?;
    let x = &planted.observation;
    let ccd = SolverConfig { seed: RECOVERY_SEED, ..SolverConfig::new(spec.rank) };
    let sacd = SolverConfig { algorithm: Algorithm::Sacd, ..ccd.clone() };
    let (_, tc) = factorize(x, &ccd).map_err(|e| e.to_string())?;
    let (_, ts) = factorize(x, &sacd).map_err(|e| e.to_string())?;
    let (ec, es) = (relative_error(&tc, x.frobenius_sq()), relative_error(&ts, x.frobenius_sq()));
    ensure((es - ec).abs() <= SACD_ERROR_GAP, || format!("sacd error {es:.4} vs ccd {ec:.4}"))?;
    let active = ts
        .mean_active_fraction_after(SACD_ACTIVE_AFTER)
        .ok_or_else(|| format!("sacd stopped after {} iterations", ts.iterations()))?;
    ensure(active < SACD_ACTIVE_LIMIT, || format!("mean active fraction {active:.3}"))?;

    let exhaustive = SolverConfig {
        sacd_threshold: 0.0,
        refresh_interval: 1,
        ..sacd.clone()
    };
    let (mc, tc2) = factorize(x, &ccd).map_err(|e| e.to_string())?;
    let (me, te) = factorize(x, &exhaustive).map_err(|e| e.to_string())?;
    let bits = |t: &SolverTrace| t.records.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>();
    ensure(mc == me && bits(&tc2) == bits(&te), || "tau = 0 sacd differs from ccd".into())?;
    Ok(format!(
        "relative error sacd {es:.6} vs ccd {ec:.6}, mean active fraction after iteration {SACD_ACTIVE_AFTER} {active:.3}, tau = 0 bitwise equal over {} iterations",
        te.iterations()
    ))
}

fn association_loss() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted = dir.path().join("planted");
    ok(&["synth", "--preset", "adversarial", "--out", &p(&planted)])?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["bench", "--planted", &p(&planted), "--out", &p(&out)])?;
        reports.push(std::fs::read(out.join("association.json")).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], || "association report differs between runs".into())?;
    let report: AssociationReport = serde_json::from_slice(&reports[0]).map_err(|e| e.to_string())?;
    ensure(report.components.len() == 2, || format!("{} components", report.components.len()))?;
    ensure(report.ntf_fms >= ASSOCIATION_FMS, || format!("NTF FMS {:.4}", report.ntf_fms))?;
    ensure(report.ntf_mismatches() == 0, || format!("NTF mismatches {}", report.ntf_mismatches()))?;
    ensure(report.nmf_mismatches() >= 1, || "NMF pairing reproduced every coupling".into())?;
    Ok(format!(
        "NTF FMS {:.6} with 0 mismatches, NMF mismatches on {} of 2 components, deterministic",
        report.ntf_fms,
        report.nmf_mismatches()
    ))
}

fn ingestion_round_trip() -> Result<String, String> {
    let spec = PlantedSpec::default_acceptance();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec_file = dir.path().join("spec.json");
    std::fs::write(&spec_file, serde_json::to_vec(&spec).unwrap()).map_err(|e| e.to_string())?;
    let planted = dir.path().join("planted");
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--spec", &p(&spec_file), "--out", &p(&planted)])?;
    ok(&[
        "ingest",
        "--input",
        &p(&planted.join("tweets.jsonl")),
        "--gazetteer",
        &p(&planted.join("gazetteer.csv")),
        "--stopwords",
        &p(&planted.join("stopwords.txt")),
        "--keywords",
        &p(&planted.join("keywords.txt")),
        "--out",
        &p(&corpus),
    ])?;

    let ingested = io::read_tensor(&corpus.join(TENSOR_FILE)).map_err(|e| e.to_string())?;
    let expected = io::read_tensor(&planted.join("expected").join(TENSOR_FILE)).map_err(|e| e.to_string())?;
    ensure(ingested == expected, || "ingested tensor differs from the expected tensor".into())?;

    // Independently of the generator's relabeling: the nonzero values are
    // exactly the rounded planted counts.
    let observation = plant_model(&spec).map_err(|e| e.to_string())?.observation;
    let mut want: Vec<u64> = observation
        .entries()
        .iter()
        .map(|e| (spec.count_scale * e.value).round() as u64)
        .filter(|c| *c > 0)
        .collect();
    let mut got: Vec<u64> = ingested.entries().iter().map(|e| e.value as u64).collect();
    want.sort_unstable();
    got.sort_unstable();
    ensure(want == got, || format!("{} planted counts vs {} ingested", want.len(), got.len()))?;

    let stats: CorpusStats = io::read_json(&corpus.join("stats.json")).map_err(|e| e.to_string())?;
    ensure(ingested.total_mass() == stats.retained_tokens as f64, || {
        format!("mass {} vs {} retained tokens", ingested.total_mass(), stats.retained_tokens)
    })?;

    let synth_manifest: serde_json::Value = io::read_json(&planted.join("manifest.json")).map_err(|e| e.to_string())?;
    let ingest_manifest: serde_json::Value = io::read_json(&corpus.join("manifest.json")).map_err(|e| e.to_string())?;
    let generated = &synth_manifest["summary"]["expected_dims"];
    let reported = &ingest_manifest["summary"]["dims"];
    ensure(generated == reported && *reported == serde_json::json!(ingested.dims()), || {
        format!("generator dims {generated}, ingest dims {reported}")
    })?;
    ensure(ingested.dims() == spec.dims, || format!("dims {:?} vs planted {:?}", ingested.dims(), spec.dims))?;
    Ok(format!(
        "{} nonzeros entry-for-entry, mass {} = retained tokens, dims {:?}",
        ingested.nnz(),
        stats.retained_tokens,
        ingested.dims()
    ))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| p(&dir.path().join(name));
    let planted = d("planted");
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--preset".into(), "default".into(), "--out".into(), planted.clone()],
        vec![
            "ingest".into(),
            "--input".into(),
            format!("{planted}/tweets.jsonl"),
            "--gazetteer".into(),
            format!("{planted}/gazetteer.csv"),
            "--stopwords".into(),
            format!("{planted}/stopwords.txt"),
            "--keywords".into(),
            format!("{planted}/keywords.txt"),
            "--out".into(),
            d("corpus"),
        ],
        vec![
            "factorize".into(),
            "--tensor".into(),
            d("corpus"),
            "--rank".into(),
            "5".into(),
            "--algo".into(),
            "ccd".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            d("ccd"),
        ],
        vec![
            "factorize".into(),
            "--tensor".into(),
            d("corpus"),
            "--rank".into(),
            "5".into(),
            "--algo".into(),
            "sacd".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            d("sacd"),
        ],
        vec![
            "extract".into(),
            "--model".into(),
            d("ccd"),
            "--indices".into(),
            d("corpus"),
            "--top-k".into(),
            "10".into(),
            "--out".into(),
            d("report"),
        ],
        vec!["bench".into(), "--planted".into(), planted.clone(), "--out".into(), d("bench")],
    ];
    let mut files = 0;
    for step in &steps {
        let out_dir = std::path::PathBuf::from(step.last().unwrap());
        let mut snaps = Vec::new();
        for threads in ["1", "8", "8"] {
            let mut args = step.clone();
            args.extend(["--threads".to_string(), threads.to_string()]);
            ok(&args)?;
            snaps.push(snapshot(&out_dir));
        }
        for (run, snap) in snaps.iter().enumerate().skip(1) {
            for (path, bytes) in &snaps[0] {
                ensure(snap.get(path) == Some(bytes), || {
                    format!("{} run {run}: {} differs", step[0], path.display())
                })?;
            }
            ensure(snap.len() == snaps[0].len(), || format!("{} run {run}: file set differs", step[0]))?;
        }
        files += snaps[0].len();
    }
    Ok(format!(
        "{} subcommand runs, {files} files byte-identical across reruns and --threads 1 vs 8",
        steps.len()
    ))
}
