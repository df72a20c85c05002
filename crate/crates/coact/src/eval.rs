//! AUC computation and the experiment runner: multi-seed training of several
//! variants over the planted-interaction data, scored on the full test split
//! and on the unseen-combination split.

use std::fmt::Write as _;

use crate::data::{generate_synthetic, unseen_mask, Dataset, FieldKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{train, CanModel, ModelConfig, TrainOptions};

/// ROC AUC via the Mann-Whitney rank statistic, ties weighted 0.5.
///
/// Computed with an integer numerator (twice the rank sum), so the result is
/// exactly the pair-counting statistic for any input. O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dimension(
            "auc",
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("auc scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Twice the positive rank sum, using average ranks within tie groups:
    // for a group spanning 1-based ranks [first, last], 2*avg = first + last.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let two_avg = (i as u64 + 1) + j as u64;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                twice_rank_sum += two_avg;
            }
        }
        i = j;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Scores each test example by the empirical train click rate of its ID in
/// `field`; IDs never seen in training fall back to the global train mean.
pub fn unary_rate_scores(train_ds: &Dataset, test_ds: &Dataset, field: &str) -> Result<Vec<f64>> {
    let idx = train_ds.schema.index_of(field)?;
    let card = train_ds.schema.field(idx).cardinality as usize;
    let mut clicks = vec![0u64; card];
    let mut counts = vec![0u64; card];
    for ex in &train_ds.examples {
        for &id in ex.value(idx).ids() {
            clicks[id as usize] += ex.label as u64;
            counts[id as usize] += 1;
        }
    }
    let global = train_ds.click_rate();
    Ok(test_ds
        .examples
        .iter()
        .map(|ex| {
            let ids = ex.value(idx).ids();
            if ids.is_empty() {
                return global;
            }
            // Sequence fields average their per-ID rates.
            let s: f64 = ids
                .iter()
                .map(|&id| {
                    if counts[id as usize] > 0 {
                        clicks[id as usize] as f64 / counts[id as usize] as f64
                    } else {
                        global
                    }
                })
                .sum();
            s / ids.len() as f64
        })
        .collect())
}

/// AUC of the strongest single-scalar-feature rate predictor.
pub fn best_unary_auc(train_ds: &Dataset, test_ds: &Dataset) -> Result<f64> {
    let labels: Vec<u8> = test_ds.examples.iter().map(|e| e.label).collect();
    let mut best = f64::NEG_INFINITY;
    for field in train_ds.schema.fields() {
        if field.kind != FieldKind::Scalar {
            continue;
        }
        let scores = unary_rate_scores(train_ds, test_ds, &field.name)?;
        best = best.max(auc(&scores, &labels)?);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Metric("no scalar fields to score".into()))
    }
}

/// Aggregated result of one (variant, split) cell across seeds.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub variant: String,
    pub split: String,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    fn from_values(variant: &str, split: &str, per_seed: Vec<(u64, f64)>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|(_, v)| v).sum::<f64>() / n.max(1.0);
        let std = if per_seed.len() > 1 {
            (per_seed
                .iter()
                .map(|(_, v)| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        EvalReport {
            variant: variant.to_string(),
            split: split.to_string(),
            per_seed,
            mean,
            std,
        }
    }

    pub fn n_seeds(&self) -> usize {
        self.per_seed.len()
    }
}

/// Outcome of one variant-seed training run.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    pub full_auc: Option<f64>,
    pub unseen_auc: Option<f64>,
    /// Training/eval failure, if any; the runner continues past it.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellResult>,
    pub reports: Vec<EvalReport>,
    pub bayes_auc: f64,
    pub unary_auc: f64,
}

/// Everything the runner needs for one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    /// Base model config; `variant` is overridden per run.
    pub model: ModelConfig,
    /// Base training options; `seed` is overridden per run.
    pub train: TrainOptions,
    /// (user_field, item_field) pair defining the generalization split.
    pub split_pair: (String, String),
}

/// Trains every variant under every seed on one generated dataset and scores
/// both test splits. The dataset is fixed by the synthetic spec's own seed;
/// run seeds vary model initialization and shuffling.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    variants: &[String],
    seeds: &[u64],
) -> Result<ExperimentOutcome> {
    if seeds.len() < 2 {
        return Err(Error::Config(
            "experiment needs >= 2 seeds for std reporting".into(),
        ));
    }
    let (train_ds, test_ds, oracle) = generate_synthetic(&cfg.synthetic)?;
    let pair = (cfg.split_pair.0.as_str(), cfg.split_pair.1.as_str());
    let mask = unseen_mask(&train_ds, &test_ds, pair)?;
    let labels: Vec<u8> = test_ds.examples.iter().map(|e| e.label).collect();
    let unseen_labels: Vec<u8> = labels
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .collect();
    let unary_auc = best_unary_auc(&train_ds, &test_ds)?;

    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for variant in variants {
        let mut full_values = Vec::new();
        let mut unseen_values = Vec::new();
        for &seed in seeds {
            let cell = run_cell(
                cfg, variant, seed, &train_ds, &test_ds, &labels, &mask, &unseen_labels,
            );
            match &cell {
                Ok((full, unseen)) => {
                    full_values.push((seed, *full));
                    unseen_values.push((seed, *unseen));
                    cells.push(CellResult {
                        variant: variant.clone(),
                        seed,
                        full_auc: Some(*full),
                        unseen_auc: Some(*unseen),
                        error: None,
                    });
                }
                Err(e) => cells.push(CellResult {
                    variant: variant.clone(),
                    seed,
                    full_auc: None,
                    unseen_auc: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        if !full_values.is_empty() {
            reports.push(EvalReport::from_values(variant, "full", full_values));
            reports.push(EvalReport::from_values(variant, "unseen", unseen_values));
        }
    }

    Ok(ExperimentOutcome {
        cells,
        reports,
        bayes_auc: oracle.bayes_auc(),
        unary_auc,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    variant: &str,
    seed: u64,
    train_ds: &Dataset,
    test_ds: &Dataset,
    labels: &[u8],
    mask: &[bool],
    unseen_labels: &[u8],
) -> Result<(f64, f64)> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.variant = variant.to_string();
    if variant == "plain_dnn" {
        model_cfg.combinations.clear();
    }
    let mut model = CanModel::new(model_cfg, train_ds.schema.clone(), seed)?;
    let opts = TrainOptions {
        seed,
        ..cfg.train.clone()
    };
    train(&mut model, train_ds, &opts)?;

    let scores = model.scores(test_ds)?;
    let full = auc(&scores, labels)?;
    let unseen_scores: Vec<f64> = scores
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(s, _)| *s)
        .collect();
    let unseen = auc(&unseen_scores, unseen_labels)?;
    Ok((full, unseen))
}

/// CSV report: per-seed rows, then an aggregate section.
pub fn report_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from("variant,split,seed,auc\n");
    for cell in &outcome.cells {
        if let (Some(full), Some(unseen)) = (cell.full_auc, cell.unseen_auc) {
            let _ = writeln!(out, "{},full,{},{:.6}", cell.variant, cell.seed, full);
            let _ = writeln!(out, "{},unseen,{},{:.6}", cell.variant, cell.seed, unseen);
        }
    }
    out.push_str("variant,split,mean,std\n");
    for r in &outcome.reports {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.variant, r.split, r.mean, r.std);
    }
    out
}

/// Aligned text comparison table.
pub fn report_table(outcome: &ExperimentOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<8} {:>8} {:>8} {:>6}",
        "variant", "split", "mean", "std", "seeds"
    );
    for r in &outcome.reports {
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>8.4} {:>8.4} {:>6}",
            r.variant,
            r.split,
            r.mean,
            r.std,
            r.n_seeds()
        );
    }
    let _ = writeln!(out, "bayes_auc = {:.6}", outcome.bayes_auc);
    let _ = writeln!(out, "unary_auc = {:.6}", outcome.unary_auc);
    for cell in &outcome.cells {
        if let Some(err) = &cell.error {
            let _ = writeln!(out, "FAILED {} seed {}: {err}", cell.variant, cell.seed);
        }
    }
    out
}
