use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jadce::coherence_weights::{compute_weight, generalized_coherence, load_or_compute, PgdOptions, WeightMethod};
use jadce::metrics::{detection_counts_blocked, nmse, ThresholdRule};
use jadce::rng::derive_seed;
use jadce::signal_model::{Dataset, DatasetConfig, PreambleMatrix};
use jadce::solvers::{ista_gs_blocked, nesterov_gs_blocked, Step};
use jadce::theory_checks::{coupling_report, in_class_batch, oracle_report, TheoryReport};
use jadce::unrolled_nets::{
    forward_batch, init_params, init_params_with_weight, ista_equivalent_params, load_checkpoint, save_checkpoint, train_layerwise, Arch,
    FreshSampler, NetParams, SampleSource, TrainLog,
};
use jadce::RMat;
use log::{info, warn};

use crate::config::{ExperimentConfig, Sampling, Split};
use crate::THREADS_ENV;

const SEED_FRESH: u64 = 0x6672;
const SEED_SWEEP: u64 = 0x7377;
const SEED_ORACLE: u64 = 0x6f72;

fn split_dir(dataset: &Path, split: Split) -> PathBuf {
    dataset.join(split.name())
}

fn load_split(dataset: &Path, split: Split) -> Result<Dataset> {
    let dir = split_dir(dataset, split);
    Dataset::load(&dir).with_context(|| format!("loading {} split from {}", split.name(), dir.display()))
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.data_dir();
    let train_cfg = cfg.split_config(Split::Train);
    let preamble = train_cfg.build_preamble()?;
    for split in Split::ALL {
        let ds = Dataset::generate_with_preamble(&cfg.split_config(split), preamble.clone())?;
        let manifest = ds.save(&split_dir(&dir, split))?;
        info!("{} split: {} samples", split.name(), ds.len());
        println!("{}", manifest.display());
    }
    let mut saved = serde_json::to_value(cfg)?;
    if let Some(obj) = saved.as_object_mut() {
        obj.remove("out");
    }
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&saved)? + "\n")?;
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, dataset: &Path) -> Result<()> {
    let train_ds = load_split(dataset, Split::Train)?;
    let val = load_split(dataset, Split::Val)?.stacked();
    let dc = &train_ds.config;
    if (dc.l, dc.n, dc.m) != (cfg.l, cfg.n, cfg.m) {
        warn!(
            "dataset dims ({}, {}, {}) differ from config; using the dataset",
            dc.l, dc.n, dc.m
        );
    }
    let s = train_ds.s_tilde();
    let source = match cfg.sampling {
        Sampling::Fixed => SampleSource::Fixed(train_ds.stacked()),
        Sampling::Fresh => SampleSource::Fresh(FreshSampler {
            preamble: train_ds.preamble.clone(),
            m: dc.m,
            activity_prob: dc.activity_prob,
            snr_db: dc.snr_db,
            batch_size: cfg.batch_size,
            seed: derive_seed(cfg.seed, SEED_FRESH, 0),
        }),
    };
    let schedule = cfg.schedule();
    let run_one = |arch: Arch| -> Result<()> {
        let mut params = match arch {
            Arch::AlistaGs => {
                let w = load_or_compute(&cfg.out.join("weights"), &s, WeightMethod::Pgd, PgdOptions::default())?;
                init_params_with_weight(arch, &s, cfg.k_layers, Some(w.w))?
            }
            _ => init_params(arch, &s, cfg.k_layers)?,
        };
        let mut log = TrainLog::new(arch, cfg.k_layers, schedule);
        info!("training {arch}, K = {}", cfg.k_layers);
        let outcome = train_layerwise(&mut params, &s, &source, &schedule, Some(&val), &mut log);
        let log_path = cfg.out.join(format!("train_log_{}.csv", arch.name()));
        write_train_log(&log_path, &log)?;
        outcome.with_context(|| format!("training {arch} (partial log in {})", log_path.display()))?;
        let extra = serde_json::json!({ "config": cfg, "dataset": dataset });
        let manifest = save_checkpoint(&cfg.out.join("checkpoints").join(arch.name()), &params, &s, Some(&log), extra)?;
        if let Some(v) = log.stages.last().and_then(|st| st.val_nmse_db) {
            info!("{arch}: validation NMSE {v:.3} dB");
        }
        println!("{}", manifest.display());
        Ok(())
    };
    let threads = thread_count().min(cfg.archs.len()).max(1);
    for chunk in cfg.archs.chunks(threads) {
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|a| scope.spawn(|| run_one(*a))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }
    Ok(())
}

fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arch", "stage", "depth", "phase", "step", "lr", "loss", "val_nmse_db"])?;
    let arch = log.arch.name();
    for st in &log.stages {
        let head = [arch.to_string(), st.stage.to_string(), st.depth.to_string(), st.phase.label().to_string()];
        for (i, loss) in st.losses.iter().enumerate() {
            let row = [i.to_string(), st.lr.to_string(), loss.to_string(), String::new()];
            w.write_record(head.iter().chain(&row))?;
        }
        let val = st.val_nmse_db.map(|v| v.to_string()).unwrap_or_default();
        let row = [st.losses.len().to_string(), st.lr.to_string(), st.final_loss.to_string(), val];
        w.write_record(head.iter().chain(&row))?;
    }
    w.flush()?;
    Ok(())
}

enum Method {
    Ista,
    Fista,
    Net(NetParams),
}

struct NamedMethod {
    name: String,
    method: Method,
}

fn resolve_method(spec: &str, s: &RMat, cfg: &ExperimentConfig, iterations: usize) -> Result<NamedMethod> {
    let method = match spec {
        "ista-gs" | "ista_gs" => Method::Ista,
        "fista-gs" | "fista_gs" | "nesterov-gs" => Method::Fista,
        _ => {
            if let Some(arch) = spec.strip_prefix("init:") {
                let arch: Arch = arch.parse()?;
                Method::Net(ista_equivalent_params(arch, s, iterations, cfg.lambda)?)
            } else {
                let ck = load_checkpoint(Path::new(spec)).with_context(|| format!("loading checkpoint {spec}"))?;
                ck.check_dictionary(s).with_context(|| format!("checkpoint {spec} does not fit the dataset"))?;
                let name = Path::new(spec)
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| ck.params.arch.name().to_string());
                return Ok(NamedMethod {
                    name,
                    method: Method::Net(ck.params),
                });
            }
        }
    };
    Ok(NamedMethod {
        name: spec.to_string(),
        method,
    })
}

struct EvalPoint {
    config: DatasetConfig,
    dataset: Dataset,
}

fn sweep_points(cfg: &ExperimentConfig, base: Dataset, preamble: &PreambleMatrix) -> Result<Vec<EvalPoint>> {
    let make = |i: usize, f: &dyn Fn(&mut DatasetConfig)| -> Result<EvalPoint> {
        let mut c = base.config.clone();
        c.samples = cfg.test_samples;
        c.seed = derive_seed(cfg.seed, SEED_SWEEP, i as u64);
        f(&mut c);
        let dataset = Dataset::generate_with_preamble(&c, preamble.clone())?;
        Ok(EvalPoint { config: c, dataset })
    };
    if !cfg.snr_sweep.is_empty() {
        cfg.snr_sweep
            .iter()
            .enumerate()
            .map(|(i, snr)| make(i, &|c| c.snr_db = Some(*snr)))
            .collect()
    } else if !cfg.activity_sweep.is_empty() {
        cfg.activity_sweep
            .iter()
            .enumerate()
            .map(|(i, p)| make(i, &|c| c.activity_prob = *p))
            .collect()
    } else {
        Ok(vec![EvalPoint {
            config: base.config.clone(),
            dataset: base,
        }])
    }
}

fn iterates(method: &Method, s: &RMat, ds: &Dataset, lambda: f64, iterations: usize) -> Result<Vec<RMat>> {
    let batch = ds.stacked();
    let x0 = batch.zero_start();
    Ok(match method {
        Method::Ista => ista_gs_blocked(&batch.y, s, lambda, iterations, Step::Auto, &x0, batch.m)?.iterates,
        Method::Fista => nesterov_gs_blocked(&batch.y, s, lambda, iterations, Step::Auto, &x0, batch.m)?.iterates,
        Method::Net(p) => forward_batch(p, s, &batch, p.k_layers())?.iterates,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_db(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

pub fn eval(cfg: &ExperimentConfig, dataset: &Path, specs: &[String], split: Split, iterations: usize) -> Result<()> {
    let base = load_split(dataset, split)?;
    let s = base.s_tilde();
    let preamble = base.preamble.clone();
    let methods = specs
        .iter()
        .map(|m| resolve_method(m, &s, cfg, iterations))
        .collect::<Result<Vec<_>>>()?;
    let points = sweep_points(cfg, base, &preamble)?;
    let rule = ThresholdRule::RelativeToMax(cfg.detection_threshold);
    std::fs::create_dir_all(&cfg.out)?;
    let long_path = cfg.out.join("results.csv");
    let wide_path = cfg.out.join("results_wide.csv");
    let mut long = csv::Writer::from_path(&long_path)?;
    long.write_record([
        "method",
        "layer_or_iter",
        "nmse_db",
        "snr_db",
        "seed",
        "activity_prob",
        "detection_error_prob",
        "misses",
        "false_alarms",
    ])?;
    let mut wide = csv::Writer::from_path(&wide_path)?;
    let mut wide_header = vec!["snr_db".to_string(), "activity_prob".to_string()];
    for m in &methods {
        let depth = match &m.method {
            Method::Net(p) => p.k_layers(),
            _ => iterations,
        };
        wide_header.extend((1..=depth).map(|k| format!("{}@{k}", m.name)));
    }
    wide.write_record(&wide_header)?;
    for point in &points {
        let batch = point.dataset.stacked();
        let truth: Vec<Vec<bool>> = point.dataset.samples.iter().map(|s| s.signal.activity.clone()).collect();
        let mut wide_row = vec![fmt_opt(point.config.snr_db), point.config.activity_prob.to_string()];
        for m in &methods {
            let its = iterates(&m.method, &s, &point.dataset, cfg.lambda, iterations)?;
            for (k, x) in its.iter().enumerate() {
                let v = nmse(x, &batch.x_true)?;
                let counts = detection_counts_blocked(x, batch.m, point.config.n, &truth, rule)?;
                long.write_record([
                    m.name.clone(),
                    k.to_string(),
                    fmt_db(v),
                    fmt_opt(point.config.snr_db),
                    point.config.seed.to_string(),
                    point.config.activity_prob.to_string(),
                    counts.error_prob().to_string(),
                    counts.misses.to_string(),
                    counts.false_alarms.to_string(),
                ])?;
                if k > 0 {
                    wide_row.push(fmt_db(v));
                }
            }
            let last = nmse(its.last().expect("at least the initial iterate"), &batch.x_true)?;
            info!(
                "{} (snr {}, p {}): NMSE {:.3} dB after {} layers",
                m.name,
                fmt_opt(point.config.snr_db),
                point.config.activity_prob,
                last,
                its.len() - 1
            );
        }
        wide.write_record(&wide_row)?;
    }
    long.flush()?;
    wide.flush()?;
    println!("{}", long_path.display());
    println!("{}", wide_path.display());
    Ok(())
}

fn write_report(cfg: &ExperimentConfig, name: &str, report: &TheoryReport) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    println!("{}", path.display());
    Ok(())
}

fn dictionary(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<RMat> {
    match dataset {
        Some(d) => Ok(load_split(d, Split::Train)?.s_tilde()),
        None => Ok(cfg.split_config(Split::Train).build_preamble()?.lifted()),
    }
}

pub fn theory_coupling(cfg: &ExperimentConfig, checkpoint: &Path, dataset: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let data = dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.data_dir());
    let s = load_split(&data, Split::Train)?.s_tilde();
    ck.check_dictionary(&s)?;
    let report = coupling_report(&ck.params, &s)?;
    for (k, (r, t)) in report.coupling_residuals.iter().zip(&report.thresholds).enumerate() {
        info!("layer {}: coupling residual {r:.4e}, theta {t:.4e}", k + 1);
    }
    write_report(cfg, "theory_coupling.json", &report)
}

pub struct OracleOptions {
    pub arch: Arch,
    pub sparsity: usize,
    pub beta: f64,
    pub batch: usize,
    pub layers: usize,
    pub weight_method: WeightMethod,
}

pub fn theory_oracle(cfg: &ExperimentConfig, dataset: Option<&Path>, opts: &OracleOptions) -> Result<()> {
    if opts.arch == Arch::ListaGs {
        bail!("oracle mode needs lista_gscp or alista_gs; use `theory coupling` for lista_gs");
    }
    let s = dictionary(cfg, dataset)?;
    let weight = compute_weight(&s, opts.weight_method, PgdOptions::default())?;
    let mu = generalized_coherence(&weight.w, &s)?;
    let batch = in_class_batch(
        &s,
        cfg.m,
        opts.batch,
        opts.sparsity,
        opts.beta,
        0.0,
        derive_seed(cfg.seed, SEED_ORACLE, 0),
    )?;
    let report = oracle_report(opts.arch, &batch, &s, &weight.w, mu, opts.layers, opts.sparsity, opts.beta)?;
    info!(
        "{}: mu {mu:.4}, {} bound violations, {} false positives, final error {:.3e}",
        opts.arch,
        report.bound_violations.len(),
        report.nfp_violations,
        report.empirical_fro.last().copied().unwrap_or(f64::NAN)
    );
    if report.analytic_bounds.is_empty() {
        warn!("sparsity condition fails for s = {}, mu = {mu:.4}; no bound reported", opts.sparsity);
    }
    write_report(cfg, &format!("theory_oracle_{}.json", opts.arch.name()), &report)
}

pub fn weights(cfg: &ExperimentConfig, dataset: Option<&Path>, method: WeightMethod) -> Result<()> {
    let s = dictionary(cfg, dataset)?;
    let cache = cfg.out.join("weights");
    let w = load_or_compute(&cache, &s, method, PgdOptions::default())?;
    println!(
        "method {:?}: mu {:.6}, objective {:.6}, constraint violation {:.2e}, cached in {}",
        w.method,
        w.mu_tilde_estimate,
        w.objective,
        w.constraint_violation,
        cache.display()
    );
    Ok(())
}
