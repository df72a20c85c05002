//! Subcommand implementations wiring the config to the library modules.

use std::fs;
use std::path::Path;

use coact::data::{load_dataset, save_dataset, split_generalization, Schema};
use coact::error::{Error, Result};
use coact::eval::{report_csv, report_table, run_experiment, ExperimentConfig};
use coact::kernel::{bench_csv, default_grid, run_bench, BatchShapes, Precision};
use coact::model::checkpoint::{load_model, save_model};
use coact::model::gradcheck::{gradient_check, small_check_setup};
use coact::model::{train, CanModel};

use crate::config::RunConfig;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, content)?;
    Ok(())
}

/// Generates the synthetic datasets, schema, and an oracle summary.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.synthetic_spec()?;
    let (train_ds, test_ds, oracle) = coact::data::generate_synthetic(&spec)?;

    let train_path = cfg.path_or_default("train_path", "train.txt");
    let test_path = cfg.path_or_default("test_path", "test.txt");
    let schema_path = cfg.path_or_default("schema_path", "schema.txt");
    let summary_path = cfg.path_or_default("summary_path", "summary.txt");

    for p in [&train_path, &test_path, &schema_path, &summary_path] {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
    }
    save_dataset(&train_ds, &train_path)?;
    save_dataset(&test_ds, &test_path)?;
    train_ds.schema.save(&schema_path)?;

    let summary = format!(
        "n_users = {}\nn_items = {}\nbuckets = {}\nbeta = {}\nn_train = {}\nn_test = {}\n\
         seq_len = {}\ndata_seed = {}\nbayes_auc = {:.6}\nglobal_mean = {:.6}\n\
         train_click_rate = {:.6}\ntest_click_rate = {:.6}\n",
        spec.n_users,
        spec.n_items,
        spec.buckets,
        spec.strength,
        spec.n_train,
        spec.n_test,
        spec.seq_len,
        spec.seed,
        oracle.bayes_auc(),
        oracle.global_mean(),
        train_ds.click_rate(),
        test_ds.click_rate(),
    );
    write_text(&summary_path, &summary)?;
    println!(
        "wrote {} train / {} test examples; bayes_auc = {:.4}",
        train_ds.len(),
        test_ds.len(),
        oracle.bayes_auc()
    );
    Ok(())
}

/// Trains one model and writes a checkpoint plus a per-epoch loss log.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let schema = Schema::load(&cfg.path_or_default("schema_path", "schema.txt"))?;
    let train_ds = load_dataset(&cfg.path_or_default("train_path", "train.txt"), &schema)?;
    let model_cfg = cfg.model_config()?;
    let opts = cfg.train_options()?;

    // Validation happens before any training step.
    model_cfg.validate(&schema)?;
    let mut model = CanModel::new(model_cfg, schema, opts.seed)?;
    let log = train(&mut model, &train_ds, &opts)?;

    let ckpt_dir = cfg.path_or_default("checkpoint_dir", "checkpoint");
    save_model(&model, &ckpt_dir)?;
    let mut loss_text = String::new();
    for l in &log.epoch_losses {
        loss_text.push_str(&format!("{l}\n"));
    }
    write_text(&cfg.path_or_default("loss_log", "loss.txt"), &loss_text)?;
    println!(
        "trained `{}` for {} epochs ({} steps); checkpoint at {}",
        model.variant_name(),
        log.epoch_losses.len(),
        log.steps,
        ckpt_dir.display()
    );
    Ok(())
}

/// Either scores one checkpoint on a test file, or runs the full multi-seed
/// variant comparison when `variants` is configured.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    if cfg.get("checkpoint_dir").is_some() {
        return eval_checkpoint(cfg);
    }
    let experiment = ExperimentConfig {
        synthetic: cfg.synthetic_spec()?,
        model: cfg.model_config()?,
        train: cfg.train_options()?,
        split_pair: (
            cfg.str_or("split_user_field", "user").to_string(),
            cfg.str_or("split_item_field", "item").to_string(),
        ),
    };
    let variants = cfg.string_list_or("variants", &["plain_dnn", "cartesian", "can"]);
    let seeds = cfg.u64_list_or("seeds", &[0, 1, 2, 3, 4])?;
    let outcome = run_experiment(&experiment, &variants, &seeds)?;

    let table = report_table(&outcome);
    write_text(&cfg.path_or_default("report_csv", "report.csv"), &report_csv(&outcome))?;
    write_text(&cfg.path_or_default("report_txt", "report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval_checkpoint(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.path_or_default("checkpoint_dir", "checkpoint"))?;
    let test_ds = load_dataset(&cfg.path_or_default("test_path", "test.txt"), &model.schema)?;
    let labels: Vec<u8> = test_ds.examples.iter().map(|e| e.label).collect();
    let scores = model.scores(&test_ds)?;
    let auc = coact::eval::auc(&scores, &labels)?;
    let seed = cfg.u64_or("seed", 0)?;
    let csv = format!(
        "variant,split,seed,auc\n{},full,{},{:.6}\n",
        model.variant_name(),
        seed,
        auc
    );
    write_text(&cfg.path_or_default("report_csv", "report.csv"), &csv)?;
    println!("{} test AUC = {:.6} ({} examples)", model.variant_name(), auc, test_ds.len());
    Ok(())
}

fn parse_shapes(raw: &str) -> Result<Vec<BatchShapes>> {
    raw.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|group| {
            let dims: Vec<usize> = group
                .split(',')
                .map(|d| {
                    d.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad bench shape `{group}`")))
                })
                .collect::<Result<_>>()?;
            if dims.len() != 5 {
                return Err(Error::Config(format!(
                    "bench shape `{group}` must be B,K,S,din,dout"
                )));
            }
            BatchShapes::new(dims[0], dims[1], dims[2], dims[3], dims[4])
        })
        .collect()
}

/// Runs the fused-kernel benchmark grid and writes the CSV report.
pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let shapes = match cfg.get("bench_shapes") {
        Some(raw) => parse_shapes(raw)?,
        None => default_grid(),
    };
    let reps = cfg.usize_or("bench_reps", 5)?;
    let seed = cfg.u64_or("bench_seed", 7)?;
    let modes: Vec<Precision> = match cfg.str_or("bench_mode", "both") {
        "f32" => vec![Precision::F32],
        "f64" => vec![Precision::F64],
        "both" => vec![Precision::F64, Precision::F32],
        other => {
            return Err(Error::Config(format!(
                "bench_mode must be f32, f64, or both, got `{other}`"
            )))
        }
    };
    let mut reports = Vec::new();
    for mode in modes {
        reports.extend(run_bench(&shapes, reps, mode, seed)?);
    }
    let csv = bench_csv(&reports);
    write_text(&cfg.path_or_default("bench_csv", "bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// End-to-end finite-difference check over repeated random parameter draws.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let trials = cfg.usize_or("gc_trials", 20)?;
    let base_seed = cfg.u64_or("seed", 0)?;
    let mut worst = 0.0_f64;
    let mut coords = 0;
    for t in 0..trials {
        let (config, schema, example) = small_check_setup();
        let mut model = CanModel::new(config, schema, base_seed + t as u64)?;
        let report = gradient_check(&mut model, &example, GRADCHECK_EPS)?;
        worst = worst.max(report.max_rel_error);
        coords = report.coordinates;
    }
    println!(
        "gradcheck: max relative error {worst:.3e} over {trials} draws \
         ({coords} coordinates each, tolerance {GRADCHECK_TOLERANCE:.0e})"
    );
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}

/// Standalone generalization split: writes the seen/unseen record files.
pub fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let schema = Schema::load(&cfg.path_or_default("schema_path", "schema.txt"))?;
    let train_ds = load_dataset(&cfg.path_or_default("train_path", "train.txt"), &schema)?;
    let test_ds = load_dataset(&cfg.path_or_default("test_path", "test.txt"), &schema)?;
    let pair = (
        cfg.str_or("split_user_field", "user"),
        cfg.str_or("split_item_field", "item"),
    );
    let (seen, unseen) = split_generalization(&train_ds, &test_ds, pair)?;
    let seen_path = cfg.path_or_default("seen_path", "seen.txt");
    let unseen_path = cfg.path_or_default("unseen_path", "unseen.txt");
    for p in [&seen_path, &unseen_path] {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
    }
    save_dataset(&seen, &seen_path)?;
    save_dataset(&unseen, &unseen_path)?;
    println!(
        "split {} test examples into {} seen / {} unseen on ({}, {})",
        test_ds.len(),
        seen.len(),
        unseen.len(),
        pair.0,
        pair.1
    );
    Ok(())
}
