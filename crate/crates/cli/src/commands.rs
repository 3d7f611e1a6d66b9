use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use geotopic::ingest::{
    build_corpus, BinWidth, CountMode, Gazetteer, IndexMaps, IngestConfig, DEFAULT_KEYWORDS, DEFAULT_STOPWORDS, TENSOR_FILE,
};
use geotopic::nmf::{flatten_location, flatten_time, nmf_factorize, write_nmf, NmfMeta};
use geotopic::ntf::{factorize_into, init_factors, read_model, write_model, ModelMeta};
use geotopic::patterns::{association_loss_report, extract_reports, factor_match_score, nmf_match_score, topics_csv};
use geotopic::synth::{plant_corpus, PlantedSpec, OBSERVATION_FILE, SPEC_FILE, TRUTH_DIR};
use geotopic::{io, Algorithm, Mode, SolverConfig, SolverTrace, SparseTensor3};

use crate::error::{CliError, Result};
use crate::manifest::{self, RunManifest};
use crate::{AlgoArg, BinArg, Cli, Command, CountModeArg, PresetArg, SolverArgs};

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const REPORT_FILE: &str = "report.json";
pub const TOPICS_FILE: &str = "topics.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const ASSOCIATION_FILE: &str = "association.json";

/// Iterations after which sacd's active fraction is averaged.
pub const ACTIVE_FRACTION_AFTER: usize = 5;

pub fn dispatch(cli: &Cli) -> Result<()> {
    let clock = Clock {
        start: Instant::now(),
        enabled: cli.timing,
    };
    match &cli.command {
        Command::Ingest(a) => ingest(a, clock),
        Command::Factorize(a) => factorize(a, clock),
        Command::Extract(a) => extract(a, clock),
        Command::Synth(a) => synth(a, clock),
        Command::Bench(a) => bench(a, clock),
    }
}

/// Wall time that reads as 0 unless timing was requested.
#[derive(Clone, Copy)]
struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn since(&self, t: Instant) -> f64 {
        if self.enabled {
            t.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn total(&self) -> f64 {
        self.since(self.start)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(geotopic::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist or is not a file", path.display())))
    }
}

fn ingest(a: &crate::IngestArgs, clock: Clock) -> Result<()> {
    require_file(&a.input, "input")?;
    require_file(&a.gazetteer, "gazetteer")?;
    let gazetteer = Gazetteer::read_csv(&a.gazetteer)?;
    let stopwords = match &a.stopwords {
        Some(p) => io::read_lines(p)?,
        None => DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
    };
    let keywords = match &a.keywords {
        Some(p) => io::read_lines(p)?,
        None => DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
    };
    let config = IngestConfig {
        stopwords,
        keywords,
        bin: match a.bin {
            BinArg::Day => BinWidth::Day,
            BinArg::Week => BinWidth::Week,
        },
        count_mode: match a.count_mode {
            CountModeArg::Occurrence => CountMode::Occurrence,
            CountModeArg::Binary => CountMode::Binary,
        },
        origin: a.origin,
        bin_count: a.bins,
    };
    let file = File::open(&a.input).map_err(|e| io_error(&a.input, e))?;
    let corpus = build_corpus(BufReader::new(file), &gazetteer, &config)?;
    corpus.write(&a.out)?;

    let dims = corpus.tensor.dims();
    eprintln!(
        "ingest: {} of {} tweets kept, {} terms x {} locations x {} bins, {} nonzeros, {} tokens",
        corpus.stats.kept,
        corpus.stats.records_read,
        dims[0],
        dims[1],
        dims[2],
        corpus.tensor.nnz(),
        corpus.stats.retained_tokens
    );

    let mut manifest = RunManifest::new("ingest", None, json!({ "ingest": config, "out": a.out }));
    manifest.input("input", &a.input)?;
    manifest.input("gazetteer", &a.gazetteer)?;
    if let Some(p) = &a.stopwords {
        manifest.input("stopwords", p)?;
    }
    if let Some(p) = &a.keywords {
        manifest.input("keywords", p)?;
    }
    for f in [
        TENSOR_FILE,
        geotopic::ingest::TERMS_FILE,
        geotopic::ingest::LOCATIONS_FILE,
        geotopic::ingest::TIME_AXIS_FILE,
        geotopic::ingest::STATS_FILE,
    ] {
        manifest.output(f);
    }
    manifest.summary = json!({ "dims": dims, "nnz": corpus.tensor.nnz(), "stats": corpus.stats });
    manifest.wall_seconds = clock.total();
    manifest.write(&a.out)
}

fn solver_config(rank: usize, seed: u64, algo: AlgoArg, s: &SolverArgs) -> SolverConfig {
    SolverConfig {
        max_iters: s.max_iters,
        rel_tol: s.tol,
        seed,
        algorithm: match algo {
            AlgoArg::Ccd => Algorithm::Ccd,
            AlgoArg::Sacd => Algorithm::Sacd,
        },
        sacd_threshold: s.sacd_threshold,
        refresh_interval: s.refresh_interval,
        merge_duplicates: !s.no_merge,
        ..SolverConfig::new(rank)
    }
}

fn tensor_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TENSOR_FILE)
    } else {
        p.to_path_buf()
    }
}

fn relative_error(objective: f64, norm_sq: f64) -> f64 {
    if norm_sq > 0.0 {
        (objective.max(0.0) / norm_sq).sqrt()
    } else {
        0.0
    }
}

fn log_trace(name: &str, trace: &SolverTrace) {
    for rec in &trace.records {
        log::info!(
            "{name} iter {} objective {} rel_change {:.3e} active {:?}{}",
            rec.iteration,
            rec.objective,
            rec.rel_change,
            rec.active_fraction,
            if rec.full_sweep { "" } else { " (selective)" }
        );
    }
}

fn events_json(trace: &SolverTrace, norm_sq: f64, failure: Option<&geotopic::Error>) -> serde_json::Value {
    json!({
        "stop_reason": match failure {
            Some(_) => json!("failed"),
            None => json!(trace.stop_reason),
        },
        "error": failure.map(|e| e.to_string()),
        "iterations": trace.iterations(),
        "initial_objective": trace.initial_objective,
        "final_objective": trace.final_objective(),
        "relative_error": relative_error(trace.final_objective(), norm_sq),
        "mean_active_fraction": trace.mean_active_fraction_after(ACTIVE_FRACTION_AFTER),
        "reseeds": trace.reseeds,
        "merges": trace.merges,
    })
}

fn write_trace(dir: &Path, trace: &SolverTrace, timing: bool) -> Result<()> {
    io::write_atomic(&dir.join(TRACE_FILE), trace.to_csv(timing).as_bytes())?;
    Ok(())
}

fn factorize(a: &crate::FactorizeArgs, clock: Clock) -> Result<()> {
    let path = tensor_path(&a.tensor);
    require_file(&path, "tensor")?;
    let x = io::read_tensor(&path)?;
    let config = solver_config(a.rank, a.seed, a.algo, &a.solver);
    config.validate()?;
    let init = init_factors(x.dims(), config.rank, config.seed)?;
    let mut trace = SolverTrace::default();
    let result = factorize_into(&x, init, &config, &mut trace);
    log_trace(&format!("{:?}", config.algorithm).to_lowercase(), &trace);

    io::ensure_dir(&a.out)?;
    write_trace(&a.out, &trace, clock.enabled)?;
    let norm_sq = x.frobenius_sq();
    io::write_json(&a.out.join(EVENTS_FILE), &events_json(&trace, norm_sq, result.as_ref().err()))?;

    let mut manifest = RunManifest::new("factorize", Some(config.seed), json!({ "solver": config, "out": a.out }));
    manifest.input("tensor", &path)?;
    manifest.output(TRACE_FILE);
    manifest.output(EVENTS_FILE);
    let model = match result {
        Ok(model) => model,
        Err(e) => {
            manifest.summary = json!({ "error": e.to_string(), "iterations": trace.iterations() });
            manifest.wall_seconds = clock.total();
            manifest.write(&a.out)?;
            return Err(e.into());
        }
    };
    let meta = ModelMeta {
        dims: model.dims(),
        rank: model.rank(),
        algorithm: Some(config.algorithm),
        seed: Some(config.seed),
        iterations: trace.iterations(),
        final_objective: Some(trace.final_objective()),
    };
    write_model(&a.out, &model, &meta)?;
    for f in ["lambda.csv", "U.csv", "L.csv", "T.csv", "meta.json"] {
        manifest.output(f);
    }
    let rel = relative_error(trace.final_objective(), norm_sq);
    eprintln!(
        "factorize: {} iterations, stop {:?}, objective {}, relative error {:.6}",
        trace.iterations(),
        trace.stop_reason,
        trace.final_objective(),
        rel
    );
    if let Some(f) = trace.mean_active_fraction_after(ACTIVE_FRACTION_AFTER) {
        log::info!("mean active fraction after iteration {ACTIVE_FRACTION_AFTER}: {f:.4}");
    }
    manifest.summary = json!({
        "iterations": trace.iterations(),
        "final_objective": trace.final_objective(),
        "relative_error": rel,
        "stop_reason": trace.stop_reason,
    });
    manifest.wall_seconds = clock.total();
    manifest.write(&a.out)
}

fn extract(a: &crate::ExtractArgs, clock: Clock) -> Result<()> {
    if a.top_k == 0 {
        return Err(CliError::Usage("--top-k must be at least 1".into()));
    }
    let (model, _) = read_model(&a.model)?;
    let maps = IndexMaps::read(&a.indices)?;
    if maps.dims() != model.dims() {
        return Err(CliError::Usage(format!(
            "model is {:?} but the index maps cover {:?}",
            model.dims(),
            maps.dims()
        )));
    }
    let reports = extract_reports(&model, &maps, a.top_k)?;
    for r in reports.iter().filter(|r| r.degenerate) {
        log::warn!("component {} is degenerate (a factor column is zero)", r.component_id);
    }
    io::ensure_dir(&a.out)?;
    let report = json!({
        "dims": model.dims(),
        "rank": model.rank(),
        "top_k": a.top_k,
        "components": reports,
    });
    io::write_json(&a.out.join(REPORT_FILE), &report)?;
    io::write_atomic(&a.out.join(TOPICS_FILE), topics_csv(&reports)?.as_bytes())?;

    let mut manifest = RunManifest::new("extract", None, json!({ "top_k": a.top_k, "out": a.out }));
    manifest.input("model", &a.model)?;
    manifest.input("indices", &a.indices)?;
    manifest.output(REPORT_FILE);
    manifest.output(TOPICS_FILE);
    manifest.summary = json!({
        "components": reports.len(),
        "degenerate": reports.iter().filter(|r| r.degenerate).map(|r| r.component_id).collect::<Vec<_>>(),
    });
    manifest.wall_seconds = clock.total();
    manifest.write(&a.out)
}

fn synth(a: &crate::SynthArgs, clock: Clock) -> Result<()> {
    let spec = match (&a.spec, a.preset) {
        (Some(p), _) => {
            require_file(p, "spec")?;
            PlantedSpec::read(p)?
        }
        (None, Some(PresetArg::Default)) => PlantedSpec::default_acceptance(),
        (None, Some(PresetArg::Adversarial)) => PlantedSpec::adversarial_coupling(),
        (None, None) => return Err(CliError::Usage("one of --spec or --preset is required".into())),
    };
    spec.validate()?;
    let pc = plant_corpus(&spec)?;
    pc.write(&a.out, &spec)?;
    let nnz = pc.planted.observation.nnz();
    match &pc.expected {
        Some(e) => eprintln!(
            "synth: {:?} rank {}, {} nonzeros, {} tweets, {} tokens",
            spec.dims,
            spec.rank,
            nnz,
            pc.tweets.len(),
            e.retained_tokens
        ),
        None => log::warn!("every count rounds to zero; no tweets were written"),
    }

    let mut manifest = RunManifest::new("synth", Some(spec.seed), json!({ "spec": spec, "out": a.out }));
    if let Some(p) = &a.spec {
        manifest.input("spec", p)?;
    }
    manifest.outputs = manifest::list_outputs(&a.out)?;
    manifest.summary = json!({
        "dims": spec.dims,
        "rank": spec.rank,
        "nnz": nnz,
        "tweets": pc.tweets.len(),
        "expected_dims": pc.expected.as_ref().map(|e| e.tensor.dims()),
        "retained_tokens": pc.expected.as_ref().map(|e| e.retained_tokens),
    });
    manifest.wall_seconds = clock.total();
    manifest.write(&a.out)
}

/// One `bench.csv` row.
struct BenchRow {
    algorithm: &'static str,
    relative_error: f64,
    fms: Option<f64>,
    iterations: usize,
    seconds: f64,
    mean_active_fraction: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(io::fmt_f64).unwrap_or_default()
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("algorithm,final_relative_error,fms,iterations,seconds,mean_active_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.algorithm,
            io::fmt_f64(r.relative_error),
            opt(r.fms),
            r.iterations,
            io::fmt_f64(r.seconds),
            opt(r.mean_active_fraction)
        ));
    }
    out
}

fn bench(a: &crate::BenchArgs, clock: Clock) -> Result<()> {
    let spec_path = a.planted.join(SPEC_FILE);
    let tensor_file = a.planted.join(OBSERVATION_FILE);
    require_file(&spec_path, "planted spec")?;
    require_file(&tensor_file, "planted tensor")?;
    let spec = PlantedSpec::read(&spec_path)?;
    let x: SparseTensor3 = io::read_tensor(&tensor_file)?;
    let (truth, _) = read_model(&a.planted.join(TRUTH_DIR))?;
    if truth.dims() != x.dims() {
        return Err(CliError::Usage(format!(
            "planted truth is {:?} but the tensor is {:?}",
            truth.dims(),
            x.dims()
        )));
    }
    let rank = a.rank.unwrap_or(spec.rank);
    let seed = a.seed.unwrap_or(spec.seed);
    let comparable = rank == truth.rank();
    if !comparable {
        log::warn!("rank {rank} differs from the planted rank {}; FMS and association are skipped", truth.rank());
    }
    io::ensure_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "bench",
        Some(seed),
        json!({
            "rank": rank,
            "ccd": solver_config(rank, seed, AlgoArg::Ccd, &a.solver),
            "sacd": solver_config(rank, seed, AlgoArg::Sacd, &a.solver),
            "out": a.out,
        }),
    );
    manifest.input("planted", &a.planted)?;

    let mut rows = Vec::new();
    let mut ccd_model = None;
    for (name, algo) in [("ccd", AlgoArg::Ccd), ("sacd", AlgoArg::Sacd)] {
        let config = solver_config(rank, seed, algo, &a.solver);
        config.validate()?;
        let dir = a.out.join(name);
        io::ensure_dir(&dir)?;
        let init = init_factors(x.dims(), rank, seed)?;
        let mut trace = SolverTrace::default();
        let started = Instant::now();
        let result = factorize_into(&x, init, &config, &mut trace);
        let seconds = clock.since(started);
        log_trace(name, &trace);
        write_trace(&dir, &trace, clock.enabled)?;
        io::write_json(&dir.join(EVENTS_FILE), &events_json(&trace, x.frobenius_sq(), result.as_ref().err()))?;
        let model = result?;
        write_model(
            &dir,
            &model,
            &ModelMeta {
                dims: model.dims(),
                rank,
                algorithm: Some(config.algorithm),
                seed: Some(seed),
                iterations: trace.iterations(),
                final_objective: Some(trace.final_objective()),
            },
        )?;
        rows.push(BenchRow {
            algorithm: name,
            relative_error: relative_error(trace.final_objective(), x.frobenius_sq()),
            fms: if comparable { Some(factor_match_score(&truth, &model)?) } else { None },
            iterations: trace.iterations(),
            seconds,
            mean_active_fraction: trace.mean_active_fraction_after(ACTIVE_FRACTION_AFTER),
        });
        if algo == AlgoArg::Ccd {
            ccd_model = Some(model);
        }
    }

    let nmf_config = solver_config(rank, seed, AlgoArg::Ccd, &a.solver);
    let mut nmf_models = Vec::new();
    for (name, mode) in [("nmf_time", Mode::Time), ("nmf_location", Mode::Location)] {
        let mx = match mode {
            Mode::Time => flatten_time(&x),
            _ => flatten_location(&x),
        };
        let started = Instant::now();
        let (model, trace) = nmf_factorize(&mx, &nmf_config)?;
        let seconds = clock.since(started);
        log_trace(name, &trace);
        let dir = a.out.join(name);
        let (rows_, cols) = mx.dims();
        write_nmf(
            &dir,
            &model,
            &NmfMeta {
                rows: rows_,
                cols,
                rank,
                algorithm: nmf_config.algorithm,
                seed,
                iterations: trace.iterations(),
                final_objective: trace.final_objective(),
            },
        )?;
        write_trace(&dir, &trace, clock.enabled)?;
        rows.push(BenchRow {
            algorithm: name,
            relative_error: relative_error(trace.final_objective(), mx.frobenius_sq()),
            fms: if comparable { Some(nmf_match_score(&model, &truth, mode)?) } else { None },
            iterations: trace.iterations(),
            seconds,
            mean_active_fraction: trace.mean_active_fraction_after(ACTIVE_FRACTION_AFTER),
        });
        nmf_models.push(model);
    }

    let table = bench_csv(&rows);
    io::write_atomic(&a.out.join(BENCH_FILE), table.as_bytes())?;
    print!("{table}");

    let ccd_model = ccd_model.expect("ccd arm ran");
    let association = if comparable {
        let report = association_loss_report(&ccd_model, &nmf_models[0], &nmf_models[1], &truth)?;
        io::write_json(&a.out.join(ASSOCIATION_FILE), &report)?;
        for c in &report.components {
            eprintln!(
                "planted component {}: ntf {} (component {}), nmf {} (time {}, location {})",
                c.planted_component,
                c.ntf_verdict,
                c.ntf_component,
                c.nmf_verdict,
                c.nmf_time_component,
                c.nmf_location_component
            );
        }
        json!({ "ntf_mismatches": report.ntf_mismatches(), "nmf_mismatches": report.nmf_mismatches() })
    } else {
        serde_json::Value::Null
    };

    manifest.outputs = manifest::list_outputs(&a.out)?;
    manifest.summary = json!({
        "rows": rows.iter().map(|r| json!({
            "algorithm": r.algorithm,
            "final_relative_error": r.relative_error,
            "fms": r.fms,
            "iterations": r.iterations,
        })).collect::<Vec<_>>(),
        "association": association,
    });
    manifest.wall_seconds = clock.total();
    manifest.write(&a.out)
}
