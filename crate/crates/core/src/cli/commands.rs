use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{resolve, CliError, Command, CommonArgs, DataFormat, RunConfig};
use crate::data::{
    bayes_optimal_rate, generate, read_dataset, split, standardize, subsample, write_grouped_csv, write_jsonl, Dataset,
    FeatureTransform,
};
use crate::metrics::{evaluate, mean_se, median, region_partition, violation_capacity, CompareTo, EvalReport};
use crate::models::{AggregatorConfig, Model, Scorer};
use crate::training::{random_search, train, EpochRecord, TrainConfig, TrainOutcome, Trial};
use crate::triplebasis::{build_circuit, verify_isolation_with, BasisReport};
use crate::{Error, Result};

pub(super) fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate { common, model } => cmd_evaluate(&common, model),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Tune(args) => cmd_tune(&args),
        Command::SweepEll { common, values } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = values {
                cfg.model.ell_values = v;
                cfg.validate()?;
            }
            cmd_sweep(&cfg)
        }
        Command::TripleBasis { common, values } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = values {
                cfg.basis.scales = v;
                cfg.validate()?;
            }
            cmd_triple_basis(&cfg)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in history {
        writeln!(file, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Creates the output directory and echoes the resolved configuration.
fn start(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("resolved_config.toml"), &cfg.to_toml()?)?;
    Ok(dir)
}

fn seed_dir(dir: &Path, seed: u64) -> Result<PathBuf> {
    let path = dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset<f64>> {
    cfg.validate_data()?;
    let ds = match (&cfg.data.path, &cfg.data.generator) {
        (Some(path), _) => read_dataset(path)?,
        (None, Some(spec)) => generate(spec)?,
        (None, None) => unreachable!("validated data source"),
    };
    let ds = match cfg.data.max_items {
        Some(n) => ds.filter_max_items(n)?,
        None => ds,
    };
    match cfg.data.subsample {
        Some(m) => subsample(&ds, m, cfg.seed.unwrap_or(0)),
        None => Ok(ds),
    }
}

struct Prepared {
    train: Dataset<f64>,
    val: Dataset<f64>,
    test: Dataset<f64>,
    transform: FeatureTransform,
}

fn prepare(ds: &Dataset<f64>, seed: u64) -> Result<Prepared> {
    let sp = split(ds, seed)?;
    let (train, mut others, transform) = standardize(&sp.train, &[&sp.validation, &sp.test])?;
    let test = others.pop().expect("two held-out sets");
    let val = others.pop().expect("two held-out sets");
    Ok(Prepared { train, val, test, transform })
}

fn fit(cfg: &RunConfig, agg: &AggregatorConfig, p: &Prepared, seed: u64) -> Result<TrainOutcome<f64>> {
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    train(agg, &tc, &p.train, &p.val)
}

#[derive(Clone, Debug, Serialize)]
struct SeedRow {
    seed: u64,
    top1: f64,
    top5: f64,
    mrr_reciprocal: f64,
    mean_rank: f64,
    kappa: f64,
    best_epoch: Option<usize>,
    best_val_top1: Option<f64>,
    epochs: usize,
}

impl SeedRow {
    fn new(seed: u64, report: &EvalReport, kappa: f64, outcome: &TrainOutcome<f64>) -> Self {
        Self {
            seed,
            top1: report.top1,
            top5: report.top5,
            mrr_reciprocal: report.mrr_reciprocal,
            mean_rank: report.mean_rank,
            kappa,
            best_epoch: outcome.best_epoch,
            best_val_top1: outcome.best_val_top1,
            epochs: outcome.history.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
struct Stat {
    mean: f64,
    se: f64,
    median: f64,
}

fn stat(values: &[f64]) -> Stat {
    let (mean, se) = mean_se(values);
    Stat { mean, se, median: median(values) }
}

fn summarize(rows: &[SeedRow]) -> BTreeMap<&'static str, Stat> {
    let col = |f: fn(&SeedRow) -> f64| stat(&rows.iter().map(f).collect::<Vec<_>>());
    BTreeMap::from([
        ("top1", col(|r| r.top1)),
        ("top5", col(|r| r.top5)),
        ("mrr_reciprocal", col(|r| r.mrr_reciprocal)),
        ("mean_rank", col(|r| r.mean_rank)),
        ("kappa", col(|r| r.kappa)),
    ])
}

fn save_run(
    dir: &Path,
    cfg: &RunConfig,
    seed: u64,
    outcome: &TrainOutcome<f64>,
    transform: &FeatureTransform,
) -> Result<()> {
    let sd = seed_dir(dir, seed)?;
    write_history(&sd.join("history.jsonl"), &outcome.history)?;
    if cfg.output.snapshots {
        let mut model = outcome.model.clone();
        model.set_transform(Some(transform.clone()));
        model.save(sd.join("model.json"))?;
    }
    Ok(())
}

fn cmd_generate(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let spec =
        cfg.data.generator.clone().ok_or_else(|| Error::Config("generate needs a [data.generator] section".into()))?;
    let ds = load_data(&cfg)?;
    let dir = start(&cfg)?;
    match cfg.output.format {
        DataFormat::Csv => write_grouped_csv(&ds, dir.join("data.csv"))?,
        DataFormat::Jsonl => write_jsonl(&ds, dir.join("data.jsonl"))?,
    }

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        m: usize,
        d: usize,
        mean_set_size: f64,
        max_set_size: usize,
        bayes_optimal_rate: f64,
    }
    let out = Out {
        command: "generate",
        m: ds.len(),
        d: ds.d(),
        mean_set_size: ds.mean_set_size(),
        max_set_size: ds.max_set_size(),
        bayes_optimal_rate: bayes_optimal_rate(&spec, &ds)?,
    };
    write_json(&dir.join("metrics.json"), &out)?;
    Ok(())
}

fn cmd_train(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let agg = cfg.model.aggregator()?;
    let ds = load_data(&cfg)?;
    let dir = start(&cfg)?;
    let seeds = cfg.seed_list();
    let results: Vec<Result<(SeedRow, TrainOutcome<f64>, FeatureTransform)>> = seeds
        .par_iter()
        .map(|&seed| {
            let p = prepare(&ds, seed)?;
            let outcome = fit(&cfg, &agg, &p, seed)?;
            let report = evaluate(&outcome.model, &p.test)?;
            let kappa = violation_capacity(&outcome.model, &p.test, cfg.output.kappa)?.kappa;
            Ok((SeedRow::new(seed, &report, kappa, &outcome), outcome, p.transform))
        })
        .collect();
    let mut rows = Vec::with_capacity(seeds.len());
    for result in results {
        let (row, outcome, transform) = result?;
        save_run(&dir, &cfg, row.seed, &outcome, &transform)?;
        rows.push(row);
    }

    #[derive(Serialize)]
    struct Out<'a> {
        command: &'static str,
        model: &'a AggregatorConfig,
        kappa_compare_to: CompareTo,
        seeds: &'a [u64],
        per_seed: &'a [SeedRow],
        summary: BTreeMap<&'static str, Stat>,
    }
    let out = Out {
        command: "train",
        model: &agg,
        kappa_compare_to: cfg.output.kappa,
        seeds: &seeds,
        per_seed: &rows,
        summary: summarize(&rows),
    };
    write_json(&dir.join("metrics.json"), &out)?;
    print_summary(&out.summary);
    Ok(())
}

fn print_summary(summary: &BTreeMap<&'static str, Stat>) {
    for (name, s) in summary {
        println!("{name:<16} {:.4} ± {:.4}", s.mean, s.se);
    }
}

fn cmd_evaluate(args: &CommonArgs, model: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = resolve(args)?;
    if model.is_some() {
        cfg.model.snapshot = model;
    }
    let path =
        cfg.model.snapshot.clone().ok_or_else(|| Error::Config("evaluate needs --model or [model] snapshot".into()))?;
    if !path.is_file() {
        return Err(Error::Config(format!("model snapshot not found: {}", path.display())).into());
    }
    let model = Model::<f64>::load(&path)?;
    let ds = load_data(&cfg)?;
    let dir = start(&cfg)?;
    let report = evaluate(&model, &ds)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        snapshot: String,
        report: EvalReport,
        kappa_label: f64,
        kappa_full_set_prediction: f64,
    }
    let out = Out {
        command: "evaluate",
        snapshot: path.display().to_string(),
        report,
        kappa_label: violation_capacity(&model, &ds, CompareTo::Label)?.kappa,
        kappa_full_set_prediction: violation_capacity(&model, &ds, CompareTo::FullSetPrediction)?.kappa,
    };
    write_json(&dir.join("metrics.json"), &out)?;
    println!("top1 {:.4}  top5 {:.4}  mean rank {:.3}", report.top1, report.top5, report.mean_rank);
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct ModelRow {
    name: String,
    top1: f64,
    kappa: f64,
}

fn cmd_analyze(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let main = cfg.model.aggregator()?;
    let mut configs = vec![(main.preset.clone().unwrap_or_else(|| "model".into()), main)];
    for name in &cfg.model.compare {
        configs.push((name.clone(), crate::models::preset(name)?));
    }
    if configs.len() < 2 {
        return Err(Error::Config("analyze needs at least one preset in [model] compare".into()).into());
    }
    let ds = load_data(&cfg)?;
    let dir = start(&cfg)?;
    let seeds = cfg.seed_list();
    let results: Vec<Result<(Vec<ModelRow>, String)>> = seeds
        .par_iter()
        .map(|&seed| {
            let p = prepare(&ds, seed)?;
            let mut models = Vec::with_capacity(configs.len());
            let mut rows = Vec::with_capacity(configs.len());
            for (name, agg) in &configs {
                let outcome = fit(&cfg, agg, &p, seed)?;
                rows.push(ModelRow {
                    name: name.clone(),
                    top1: evaluate(&outcome.model, &p.test)?.top1,
                    kappa: violation_capacity(&outcome.model, &p.test, cfg.output.kappa)?.kappa,
                });
                models.push(outcome.model);
            }
            let named: Vec<(&str, &dyn Scorer<f64>)> =
                configs.iter().zip(&models).map(|((n, _), m)| (n.as_str(), m as &dyn Scorer<f64>)).collect();
            let table = region_partition(&named, &p.test, cfg.output.kappa)?;
            Ok((rows, table.to_csv()))
        })
        .collect();

    #[derive(Serialize)]
    struct SeedModels {
        seed: u64,
        models: Vec<ModelRow>,
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut csv = String::new();
    for (&seed, result) in seeds.iter().zip(results) {
        let (rows, table) = result?;
        let mut lines = table.lines();
        if let Some(header) = lines.next() {
            if csv.is_empty() {
                csv.push_str(&format!("seed,{header}\n"));
            }
        }
        for line in lines {
            csv.push_str(&format!("{seed},{line}\n"));
        }
        per_seed.push(SeedModels { seed, models: rows });
    }
    write_file(&dir.join("regions.csv"), &csv)?;

    let mut summary = BTreeMap::new();
    for (i, (name, _)) in configs.iter().enumerate() {
        let top1: Vec<f64> = per_seed.iter().map(|s| s.models[i].top1).collect();
        let kappa: Vec<f64> = per_seed.iter().map(|s| s.models[i].kappa).collect();
        summary.insert(name.clone(), BTreeMap::from([("top1", stat(&top1)), ("kappa", stat(&kappa))]));
    }

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        models: Vec<String>,
        kappa_compare_to: CompareTo,
        per_seed: Vec<SeedModels>,
        summary: BTreeMap<String, BTreeMap<&'static str, Stat>>,
    }
    let out = Out {
        command: "analyze",
        models: configs.iter().map(|(n, _)| n.clone()).collect(),
        kappa_compare_to: cfg.output.kappa,
        per_seed,
        summary,
    };
    write_json(&dir.join("metrics.json"), &out)?;
    for (name, s) in &out.summary {
        println!(
            "{name:<16} top1 {:.4} ± {:.4}  κ {:.4} ± {:.4}",
            s["top1"].mean, s["top1"].se, s["kappa"].mean, s["kappa"].se
        );
    }
    Ok(())
}

fn cmd_tune(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let agg = cfg.model.aggregator()?;
    let ds = load_data(&cfg)?;
    let dir = start(&cfg)?;
    let seeds = cfg.seed_list();
    type Tuned = (SeedRow, TrainConfig, Vec<Trial>, TrainOutcome<f64>, FeatureTransform);
    let results: Vec<Result<Tuned>> = seeds
        .par_iter()
        .map(|&seed| {
            let p = prepare(&ds, seed)?;
            let base = TrainConfig { seed, ..cfg.train.clone() };
            let search = random_search(&cfg.search, &agg, &base, &p.train, &p.val, seed)?;
            let outcome = search.best_outcome;
            let report = evaluate(&outcome.model, &p.test)?;
            let kappa = violation_capacity(&outcome.model, &p.test, cfg.output.kappa)?.kappa;
            Ok((SeedRow::new(seed, &report, kappa, &outcome), search.best, search.leaderboard, outcome, p.transform))
        })
        .collect();

    #[derive(Serialize)]
    struct Best {
        seed: u64,
        config: TrainConfig,
    }
    let mut rows = Vec::with_capacity(seeds.len());
    let mut best = Vec::with_capacity(seeds.len());
    for result in results {
        let (row, config, leaderboard, outcome, transform) = result?;
        save_run(&dir, &cfg, row.seed, &outcome, &transform)?;
        write_json(&dir.join(format!("seed_{}", row.seed)).join("leaderboard.json"), &leaderboard)?;
        best.push(Best { seed: row.seed, config });
        rows.push(row);
    }

    #[derive(Serialize)]
    struct Out<'a> {
        command: &'static str,
        model: &'a AggregatorConfig,
        kappa_compare_to: CompareTo,
        best: Vec<Best>,
        per_seed: &'a [SeedRow],
        summary: BTreeMap<&'static str, Stat>,
    }
    let out = Out {
        command: "tune",
        model: &agg,
        kappa_compare_to: cfg.output.kappa,
        best,
        per_seed: &rows,
        summary: summarize(&rows),
    };
    write_json(&dir.join("metrics.json"), &out)?;
    print_summary(&out.summary);
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.model.aggregator()?;
    let ds = load_data(cfg)?;
    let dir = start(cfg)?;
    let seeds = cfg.seed_list();
    let prepared: Vec<Prepared> = seeds.iter().map(|&s| prepare(&ds, s)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.model.ell_values.len()).flat_map(|e| (0..seeds.len()).map(move |s| (e, s))).collect();
    let results: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(e, s)| {
            let agg = AggregatorConfig { ell: cfg.model.ell_values[e], ..base.clone() };
            agg.validate()?;
            let p = &prepared[s];
            let outcome = fit(cfg, &agg, p, seeds[s])?;
            let top1 = evaluate(&outcome.model, &p.test)?.top1;
            let kappa = violation_capacity(&outcome.model, &p.test, cfg.output.kappa)?.kappa;
            Ok((top1, kappa))
        })
        .collect();
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_>>()?;

    #[derive(Serialize)]
    struct Row {
        ell: usize,
        top1: Stat,
        kappa: Stat,
        per_seed_top1: Vec<f64>,
        per_seed_kappa: Vec<f64>,
    }
    let n = seeds.len();
    let rows: Vec<Row> = cfg
        .model
        .ell_values
        .iter()
        .enumerate()
        .map(|(e, &ell)| {
            let chunk = &results[e * n..(e + 1) * n];
            let top1: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let kappa: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            Row { ell, top1: stat(&top1), kappa: stat(&kappa), per_seed_top1: top1, per_seed_kappa: kappa }
        })
        .collect();

    let mut csv = String::from("ell,top1_mean,top1_se,top1_median,kappa_mean,kappa_se,kappa_median\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.ell, r.top1.mean, r.top1.se, r.top1.median, r.kappa.mean, r.kappa.se, r.kappa.median
        ));
        println!(
            "ℓ = {:<3} top1 {:.4} ± {:.4}  κ {:.4} ± {:.4}",
            r.ell, r.top1.mean, r.top1.se, r.kappa.mean, r.kappa.se
        );
    }
    write_file(&dir.join("sweep.csv"), &csv)?;

    #[derive(Serialize)]
    struct Out<'a> {
        command: &'static str,
        model: &'a AggregatorConfig,
        kappa_compare_to: CompareTo,
        seeds: &'a [u64],
        rows: Vec<Row>,
    }
    let out = Out { command: "sweep-ell", model: &base, kappa_compare_to: cfg.output.kappa, seeds: &seeds, rows };
    write_json(&dir.join("metrics.json"), &out)?;
    Ok(())
}

fn cmd_triple_basis(cfg: &RunConfig) -> Result<(), CliError> {
    let basis = &cfg.basis;
    let inst = basis.instance()?;
    let reports: Vec<BasisReport> = basis
        .scales
        .iter()
        .map(|&m| {
            let circuits = build_circuit(&basis.b, &basis.b_prime, &inst.universe, &inst.triple, &inst.utilities, m)?;
            verify_isolation_with(&circuits, &inst.universe, &inst.triple, basis.epsilon, basis.aggregation)
        })
        .collect::<Result<_>>()?;
    let dir = start(cfg)?;
    write_json(&dir.join("basis_report.json"), &reports)?;

    #[derive(Serialize)]
    struct Out {
        command: &'static str,
        scales: Vec<f64>,
        indifference_gap: Vec<f64>,
        choice_correct: Vec<bool>,
        passed: Vec<bool>,
        gap_decreasing: bool,
    }
    let gaps: Vec<f64> = reports.iter().map(|r| r.indifference_gap).collect();
    let out = Out {
        command: "triple-basis",
        scales: basis.scales.clone(),
        indifference_gap: gaps.clone(),
        choice_correct: reports.iter().map(|r| r.choice_correct).collect(),
        passed: reports.iter().map(BasisReport::passed).collect(),
        gap_decreasing: gaps.windows(2).all(|w| w[1] < w[0]),
    };
    write_json(&dir.join("metrics.json"), &out)?;
    for r in &reports {
        println!(
            "M = {:<6} gap {:.3e}  choice {}  {}",
            r.m,
            r.indifference_gap,
            if r.choice_correct { "ok" } else { "FAILED" },
            if r.passed() { "pass" } else { "fail" }
        );
    }
    Ok(())
}
