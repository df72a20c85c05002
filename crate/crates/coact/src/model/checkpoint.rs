//! Model checkpoint: the parameter-table checkpoint plus a `model.cfg`
//! manifest and a `schema.txt` file, together sufficient to reconstruct every
//! shape and rebuild the model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::coaction::MlpCanSpec;
use crate::data::Schema;
use crate::embeddings::checkpoint::{load_store, save_store};
use crate::error::{Error, Result};
use crate::model::{CanModel, ModelConfig};

pub const CONFIG_NAME: &str = "model.cfg";
pub const SCHEMA_NAME: &str = "schema.txt";

fn join_usizes(v: &[usize]) -> String {
    v.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Serializes a model config as `key = value` lines.
pub fn config_to_text(cfg: &ModelConfig) -> String {
    let mut out = String::new();
    let combos = cfg
        .combinations
        .iter()
        .map(|(a, b)| format!("{a}:{b}"))
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(out, "variant = {}", cfg.variant);
    let _ = writeln!(out, "repr_dim = {}", cfg.repr_dim);
    let _ = writeln!(out, "mlp_can_dims = {}", join_usizes(&cfg.mlp_can.dims_chain()));
    let _ = writeln!(out, "orders = {}", cfg.orders);
    let _ = writeln!(out, "combination_independent = {}", cfg.combination_independent);
    let _ = writeln!(out, "order_independent = {}", cfg.order_independent);
    let _ = writeln!(out, "head_dims = {}", join_usizes(&cfg.head_dims));
    let _ = writeln!(out, "combinations = {combos}");
    let _ = writeln!(out, "init_std = {}", cfg.init_std);
    let _ = writeln!(out, "cartesian_cap = {}", cfg.cartesian_cap);
    out
}

fn parse_usizes(raw: &str, key: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad value `{s}` for `{key}`")))
        })
        .collect()
}

fn parse_bool(raw: &str, key: &str) -> Result<bool> {
    match raw {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad boolean `{other}` for `{key}`"))),
    }
}

/// Parses `key = value` lines back into a model config. Unknown keys are
/// errors naming the key.
pub fn config_from_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "variant" => cfg.variant = value.to_string(),
            "repr_dim" => {
                cfg.repr_dim = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{value}` for `repr_dim`")))?
            }
            "mlp_can_dims" => cfg.mlp_can = MlpCanSpec::from_dims(&parse_usizes(value, key)?)?,
            "orders" => {
                cfg.orders = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{value}` for `orders`")))?
            }
            "combination_independent" => cfg.combination_independent = parse_bool(value, key)?,
            "order_independent" => cfg.order_independent = parse_bool(value, key)?,
            "head_dims" => cfg.head_dims = parse_usizes(value, key)?,
            "combinations" => {
                cfg.combinations = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|pair| {
                        pair.split_once(':')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| {
                                Error::Config(format!("combination `{pair}` is not `item:user`"))
                            })
                    })
                    .collect::<Result<_>>()?
            }
            "init_std" => {
                cfg.init_std = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{value}` for `init_std`")))?
            }
            "cartesian_cap" => {
                cfg.cartesian_cap = value.parse().map_err(|_| {
                    Error::Config(format!("bad value `{value}` for `cartesian_cap`"))
                })?
            }
            other => return Err(Error::Config(format!("unknown model config key `{other}`"))),
        }
    }
    Ok(cfg)
}

/// Writes tables, config manifest, and schema into `dir`.
pub fn save_model(model: &CanModel, dir: &Path) -> Result<()> {
    save_store(&model.store, dir)?;
    fs::write(dir.join(CONFIG_NAME), config_to_text(&model.config))?;
    model.schema.save(&dir.join(SCHEMA_NAME))?;
    Ok(())
}

/// Rebuilds a model from a checkpoint directory.
pub fn load_model(dir: &Path) -> Result<CanModel> {
    let cfg = config_from_text(&fs::read_to_string(dir.join(CONFIG_NAME))?)?;
    let schema = Schema::load(&dir.join(SCHEMA_NAME))?;
    let store = load_store(dir)?;
    CanModel::from_store(cfg, schema, store)
}
