use std::path::{Path, PathBuf};

use serde::Serialize;
use tightprop::data::{data_dir, load_mnist_split, split, synthetic_blobs, Dataset};
use tightprop::oracle::{emit_polytope_cloud, run_correctness_experiment, run_tightness_experiment};
use tightprop::robust::{evaluate_grid, train, write_train_log, EvalModel, TrainConfig};
use tightprop::stats::{
    approx_true_bounds, block_output_moments, clt_normality_check, covariance_monte_carlo, layer_output_law,
    prop3_arbitrate, theorem2_assumption_check,
};
use tightprop::{init_network, InitScheme, InputBox, ReluNetwork, RngState, Vector};

use crate::config::{
    BlockScanSection, CltSection, DatasetSpec, EvaluateSection, ExperimentConfig, PolytopeSection, Prop2Section,
    Prop3Section, StatsSection, TrainSection,
};
use crate::manifest::Recorder;
use crate::CliError;

const DATA_STREAM: u64 = 0xda7a;
const INIT_STREAM: u64 = 0x1417;
const POLYTOPE_STREAM: u64 = 0x9017;
const STATS_STREAM: u64 = 0x5747;

pub struct RunOptions {
    pub force: bool,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> tightprop::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn serialize_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(tightprop::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::io("<csv>", e.into_error()))
}

pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder, opts: &RunOptions) -> Result<(), CliError> {
    let stem = cfg.stem().to_string();
    if let Some(c) = &cfg.correctness {
        let table = rec.time("correctness", |_| run_correctness_experiment(c, cfg.seed))?;
        rec.write(&format!("{stem}.csv"), &csv_bytes(|b| table.write_summary_csv(b))?)?;
        rec.write(&format!("{stem}_trials.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
        for s in table.summaries() {
            println!(
                "n={} k={} depth={} trials={} mean_gamma={:.6} mean_min_gamma={:.6}",
                s.n, s.k, s.depth, s.trials, s.mean_gamma, s.mean_min_gamma
            );
        }
    }
    if let Some(c) = &cfg.tightness {
        let table = rec.time("tightness", |_| run_tightness_experiment(c, cfg.seed))?;
        rec.write(&format!("{stem}.csv"), &csv_bytes(|b| table.write_summary_csv(b))?)?;
        rec.write(&format!("{stem}_trials.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
        for s in table.summaries() {
            println!(
                "{:?}={} eps={} mean_diff={:.6e} mean_ratio={:.6e} geomean_ratio={:.6e}",
                table.axis, s.axis_value, s.eps, s.mean_diff, s.mean_ratio, s.geomean_ratio
            );
        }
    }
    if let Some(p) = &cfg.polytope {
        rec.time("polytope", |rec| polytope(p, cfg.seed, &stem, rec))?;
    }
    if let Some(t) = &cfg.train {
        train_models(t, cfg.seed, &stem, rec, opts)?;
    }
    if let Some(e) = &cfg.evaluate {
        evaluate(e, cfg.seed, &stem, rec)?;
    }
    if let Some(s) = &cfg.stats {
        stats(s, cfg.seed, rec)?;
    }
    Ok(())
}

fn polytope(p: &PolytopeSection, seed: u64, stem: &str, rec: &mut Recorder) -> Result<(), CliError> {
    if p.networks == 0 {
        return Err(CliError::config("polytope.networks", "must be positive"));
    }
    for i in 0..p.networks {
        let mut rng = RngState::with_stream(seed, POLYTOPE_STREAM + i as u64);
        let net = init_network(&mut rng, &p.dims, InitScheme::PaperRandom)?;
        let center: Vector = match &p.center {
            Some(c) => c.clone().into(),
            None => (0..net.input_dim()).map(|_| rng.standard_normal()).collect(),
        };
        let bx = InputBox::new(center, p.eps)?;
        let cloud = emit_polytope_cloud(&net, &bx, p.samples, &mut rng)?;
        let name = if p.networks == 1 { format!("{stem}.csv") } else { format!("{stem}_{i}.csv") };
        rec.write(&name, &csv_bytes(|b| cloud.write_csv(b))?)?;
        println!(
            "network {i}: ibp_violations={} expected_misses={} of {}",
            cloud.ibp_violations, cloud.expected_misses, p.samples
        );
    }
    Ok(())
}

/// Loads `(train, test)` for a dataset specification.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    match spec {
        DatasetSpec::Mnist {
            dir,
            train_limit,
            test_limit,
        } => {
            let dir = dir.clone().unwrap_or_else(data_dir);
            Ok((
                load_mnist_split(&dir, "train", *train_limit)?,
                load_mnist_split(&dir, "t10k", *test_limit)?,
            ))
        }
        DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            separation,
            train_fraction,
        } => {
            let mut rng = RngState::with_stream(seed, DATA_STREAM);
            let all = synthetic_blobs(&mut rng, *classes, *per_class, *dim, *separation)?;
            Ok(split(&all, *train_fraction, &mut rng)?)
        }
    }
}

fn checkpoint_path(dir: &Path, model_id: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{model_id}.json"))
}

fn train_models(
    t: &TrainSection,
    seed: u64,
    stem: &str,
    rec: &mut Recorder,
    opts: &RunOptions,
) -> Result<(), CliError> {
    if t.runs.is_empty() {
        return Err(CliError::config("train.runs", "must not be empty"));
    }
    for (i, r) in t.runs.iter().enumerate() {
        if r.model_id.is_empty() || r.model_id.contains(['/', '\\']) {
            return Err(CliError::config(format!("train.runs[{i}].model_id"), "must be a plain file stem"));
        }
        if t.runs[..i].iter().any(|o| o.model_id == r.model_id) {
            return Err(CliError::config(format!("train.runs[{i}].model_id"), "duplicate model id"));
        }
    }
    let configs: Vec<TrainConfig> = t
        .runs
        .iter()
        .map(|r| TrainConfig {
            kappa: r.kappa,
            eps_train: r.eps_train,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            temperature: t.temperature,
            momentum: t.momentum,
            seed,
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    for r in &t.runs {
        let path = checkpoint_path(rec.dir(), &r.model_id);
        if path.exists() && !opts.force {
            return Err(CliError::Refusal(format!(
                "checkpoint {} already exists; pass --force to overwrite",
                path.display()
            )));
        }
    }

    let (train_set, test_set) = rec.time("load", |_| load_dataset(&t.dataset, seed))?;
    let mut dims = vec![train_set.dim()];
    dims.extend(&t.hidden);
    dims.push(train_set.class_count());
    let init = init_network(&mut RngState::with_stream(seed, INIT_STREAM), &dims, InitScheme::TrainedDefault)?;

    let mut models = Vec::with_capacity(t.runs.len());
    for (r, c) in t.runs.iter().zip(&configs) {
        let (net, log) = rec.time(&format!("train {}", r.model_id), |_| train(&init, &train_set, Some(&test_set), c))?;
        let path = checkpoint_path(rec.dir(), &r.model_id);
        rec.write(
            &path.strip_prefix(rec.dir()).unwrap().display().to_string(),
            net.to_json()?.as_bytes(),
        )?;
        rec.write(&format!("train_log_{}.csv", r.model_id), &csv_bytes(|b| write_train_log(&log, b))?)?;
        if let Some(last) = log.last() {
            println!(
                "{}: epochs={} final_loss={:.6} nominal_acc={:.4}",
                r.model_id, last.epoch + 1, last.loss, last.nominal_acc
            );
        }
        models.push(EvalModel {
            model_id: r.model_id.clone(),
            eps_train: r.eps_train,
            kappa: r.kappa,
            net,
        });
    }

    if let Some(pgd) = &t.evaluate {
        let table = rec.time("evaluate", |_| {
            evaluate_grid(&models, &test_set, &pgd.eps_test, pgd.steps, pgd.restarts, seed, pgd.accuracy_floor)
        })?;
        rec.write(&format!("{stem}_scatter.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
        print_eval(&table);
    }
    Ok(())
}

fn print_eval(table: &tightprop::robust::EvalTable) {
    for r in &table.rows {
        let rob: Vec<String> = r.robustness.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{}: accuracy={:.4} robustness=[{}] mean_robustness={:.4}",
            r.model_id,
            r.accuracy,
            rob.join(", "),
            r.mean_robustness
        );
    }
}

fn evaluate(e: &EvaluateSection, seed: u64, stem: &str, rec: &mut Recorder) -> Result<(), CliError> {
    if e.models.is_empty() {
        return Err(CliError::config("evaluate.models", "must not be empty"));
    }
    let models = e
        .models
        .iter()
        .map(|m| {
            Ok(EvalModel {
                model_id: m.model_id.clone(),
                eps_train: m.eps_train,
                kappa: m.kappa,
                net: ReluNetwork::load(&m.path)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (_, test_set) = rec.time("load", |_| load_dataset(&e.dataset, seed))?;
    let p = &e.pgd;
    let table = rec.time("evaluate", |_| {
        evaluate_grid(&models, &test_set, &p.eps_test, p.steps, p.restarts, seed, p.accuracy_floor)
    })?;
    rec.write(&format!("{stem}.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
    print_eval(&table);
    Ok(())
}

fn stats(s: &StatsSection, seed: u64, rec: &mut Recorder) -> Result<(), CliError> {
    let rng = |part: u64| RngState::with_stream(seed, STATS_STREAM + part);
    if let Some(p) = &s.prop2 {
        rec.time("prop2", |rec| prop2(p, &mut rng(0), rec))?;
    }
    if let Some(p) = &s.prop3 {
        rec.time("prop3", |rec| prop3(p, &mut rng(1), rec))?;
    }
    if let Some(c) = &s.clt {
        rec.time("clt", |rec| clt(c, &mut rng(2), rec))?;
    }
    if let Some(b) = &s.self_consistency {
        rec.time("self_consistency", |rec| self_consistency(b, &mut rng(3), rec))?;
    }
    if let Some(b) = &s.theorem2 {
        rec.time("theorem2", |rec| theorem2(b, &mut rng(4), rec))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Prop2Row {
    output: usize,
    predicted_variance: f64,
    empirical_variance: f64,
}

fn prop2(p: &Prop2Section, rng: &mut RngState, rec: &mut Recorder) -> Result<(), CliError> {
    let x: Vec<f64> = match &p.x {
        Some(x) if x.len() != p.n => {
            return Err(CliError::config("stats.prop2.x", format!("length {} differs from n = {}", x.len(), p.n)))
        }
        Some(x) => x.clone(),
        None => (0..p.n).map(|_| rng.standard_normal()).collect(),
    };
    let chk = covariance_monte_carlo(p.sigma, &x, p.eps, p.outputs, p.draws, rng)?;
    let rows: Vec<Prop2Row> = chk
        .empirical_diagonal
        .iter()
        .enumerate()
        .map(|(output, &v)| Prop2Row {
            output,
            predicted_variance: chk.predicted_variance,
            empirical_variance: v,
        })
        .collect();
    rec.write("prop2.csv", &serialize_rows(&rows)?)?;
    let max_z = chk.off_diagonal_z.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    println!(
        "prop2 predicted_variance={} max_relative_error={:.4} max_offdiag_z={:.3}",
        chk.predicted_variance, chk.max_relative_error, max_z
    );
    Ok(())
}

fn prop3(p: &Prop3Section, rng: &mut RngState, rec: &mut Recorder) -> Result<(), CliError> {
    if let Some(i) = p.ks.iter().position(|&k| k == 0) {
        return Err(CliError::config(format!("stats.prop3.ks[{i}]"), "k must be at least 1"));
    }
    let rows = prop3_arbitrate(&p.ks, p.draws, p.rel_tol, rng)?;
    rec.write("prop3.csv", &serialize_rows(&rows)?)?;
    for r in &rows {
        println!(
            "prop3 k={} printed={:.6} corrected={:.6} mc={:.6}±{:.1e} matches={:?}",
            r.k, r.formula_paper, r.formula_corrected, r.mc_mean, r.mc_stderr, r.matches
        );
    }
    Ok(())
}

fn clt(c: &CltSection, rng: &mut RngState, rec: &mut Recorder) -> Result<(), CliError> {
    let reports = c
        .n_values
        .iter()
        .map(|&n| clt_normality_check(n, c.trials, rng))
        .collect::<tightprop::Result<Vec<_>>>()?;
    rec.write("clt.csv", &serialize_rows(&reports)?)?;
    for r in &reports {
        println!(
            "clt n={} skewness={:.4} excess_kurtosis={:.4} ks={:.4}",
            r.n, r.skewness, r.excess_kurtosis, r.ks_distance
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SlackRow {
    trial: usize,
    mean: f64,
    variance: f64,
    m_hat: f64,
    l_approx: f64,
    u_approx: f64,
    covered: bool,
}

fn check_scan(name: &str, b: &BlockScanSection) -> Result<(), CliError> {
    for (field, v) in [("n", b.n), ("k", b.k), ("trials", b.trials), ("samples", b.samples)] {
        if v == 0 {
            return Err(CliError::config(format!("stats.{name}.{field}"), "must be positive"));
        }
    }
    Ok(())
}

/// Draws fresh unit-variance weights for every sample, so the sampled
/// outputs follow the law the approximation describes.
fn self_consistency(b: &BlockScanSection, rng: &mut RngState, rec: &mut Recorder) -> Result<(), CliError> {
    check_scan("self_consistency", b)?;
    let mut rows = Vec::with_capacity(b.trials);
    for trial in 0..b.trials {
        let x: Vec<f64> = (0..b.n).map(|_| rng.standard_normal()).collect();
        let law = layer_output_law(1.0, &x, b.eps, &Vector::zeros(b.k))?;
        let (mean, variance) = block_output_moments(&law, 1.0, 0.0);
        let samples: Vec<f64> = (0..b.samples)
            .map(|_| {
                let xt: Vec<f64> = x.iter().map(|&c| rng.uniform_in(c - b.eps, c + b.eps)).collect();
                (0..b.k)
                    .map(|_| {
                        let y: f64 = xt.iter().map(|&v| rng.standard_normal() * v).sum();
                        rng.standard_normal() * y.max(0.0)
                    })
                    .sum()
            })
            .collect();
        let m_hat = samples.iter().map(|g| (g - mean).abs() / variance.sqrt()).fold(0.0, f64::max);
        let bounds = approx_true_bounds(&law, 1.0, 0.0, m_hat)?;
        let covered = samples
            .iter()
            .all(|&g| bounds.l_approx <= g + 1e-12 && g <= bounds.u_approx + 1e-12);
        rows.push(SlackRow {
            trial,
            mean,
            variance,
            m_hat,
            l_approx: bounds.l_approx,
            u_approx: bounds.u_approx,
            covered,
        });
    }
    rec.write("self_consistency.csv", &serialize_rows(&rows)?)?;
    let mean_m = rows.iter().map(|r| r.m_hat).sum::<f64>() / rows.len() as f64;
    let covered = rows.iter().filter(|r| r.covered).count();
    println!("self_consistency mean_m_hat={mean_m:.4} covered={covered}/{}", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct Theorem2Row {
    trial: usize,
    fraction: f64,
}

fn theorem2(b: &BlockScanSection, rng: &mut RngState, rec: &mut Recorder) -> Result<(), CliError> {
    check_scan("theorem2", b)?;
    let mut rows = Vec::with_capacity(b.trials);
    for trial in 0..b.trials {
        let net = init_network(rng, &[b.n, b.k, 1], InitScheme::PaperRandom)?;
        let x: Vec<f64> = (0..b.n).map(|_| rng.standard_normal()).collect();
        let first = &net.layers()[0];
        let chk = theorem2_assumption_check(first.weights(), first.bias(), &x, b.eps)?;
        rows.push(Theorem2Row {
            trial,
            fraction: chk.fraction,
        });
    }
    rec.write("theorem2.csv", &serialize_rows(&rows)?)?;
    let mean = rows.iter().map(|r| r.fraction).sum::<f64>() / rows.len() as f64;
    println!("theorem2 mean_fraction_satisfied={mean:.4}");
    Ok(())
}
