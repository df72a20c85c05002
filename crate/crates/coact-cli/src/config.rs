//! Plain-text `key = value` run configuration with CLI `--set` overrides.
//! Every key is validated against the published key list; unknown keys are
//! errors naming the offending key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use coact::coaction::MlpCanSpec;
use coact::data::SyntheticSpec;
use coact::error::{Error, Result};
use coact::model::{ModelConfig, TrainOptions};

/// Every key any subcommand understands.
pub const KNOWN_KEYS: &[&str] = &[
    // synthetic data
    "n_users",
    "n_items",
    "buckets",
    "beta",
    "n_train",
    "n_test",
    "seq_len",
    "data_seed",
    // file locations
    "out_dir",
    "train_path",
    "test_path",
    "schema_path",
    "summary_path",
    "checkpoint_dir",
    "loss_log",
    "report_csv",
    "report_txt",
    "seen_path",
    "unseen_path",
    // model
    "variant",
    "repr_dim",
    "mlp_can_dims",
    "orders",
    "combination_independent",
    "order_independent",
    "head_dims",
    "combinations",
    "init_std",
    "cartesian_cap",
    // training
    "epochs",
    "batch_size",
    "lr",
    "seed",
    // experiment runner
    "variants",
    "seeds",
    "split_user_field",
    "split_item_field",
    // benchmark
    "bench_shapes",
    "bench_reps",
    "bench_mode",
    "bench_seed",
    "bench_csv",
    // gradcheck
    "gc_trials",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Loads the optional config file, then applies `--set key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                })?;
                cfg.insert(key.trim(), value.trim())?;
            }
        }
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set `{entry}` is not KEY=VALUE"))
            })?;
            cfg.insert(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse::<T>()
            .map_err(|_| Error::Config(format!("bad value `{raw}` for key `{key}`")))
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32> {
        self.get(key).map_or(Ok(default), |v| self.parse(key, v))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key).map_or(Ok(default), |v| self.parse(key, v))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| self.parse(key, v))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| self.parse(key, v))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "bad boolean `{other}` for key `{key}`"
            ))),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| self.parse(key, s.trim()))
                .collect(),
        }
    }

    pub fn u64_list_or(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| self.parse(key, s.trim()))
                .collect(),
        }
    }

    pub fn string_list_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.get(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// Output directory; several default paths hang off it.
    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str_or("out_dir", "out"))
    }

    pub fn path_or_default(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join(default_name),
        }
    }

    /// Synthetic data spec from the config keys.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = SyntheticSpec::default();
        Ok(SyntheticSpec {
            n_users: self.u32_or("n_users", d.n_users)?,
            n_items: self.u32_or("n_items", d.n_items)?,
            buckets: self.u32_or("buckets", d.buckets)?,
            strength: self.f64_or("beta", d.strength)?,
            n_train: self.usize_or("n_train", d.n_train)?,
            n_test: self.usize_or("n_test", d.n_test)?,
            seq_len: self.usize_or("seq_len", d.seq_len)?,
            seed: self.u64_or("data_seed", d.seed)?,
        })
    }

    /// Model config from the config keys.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let mlp_can = match self.get("mlp_can_dims") {
            None => d.mlp_can,
            Some(_) => MlpCanSpec::from_dims(&self.usize_list_or("mlp_can_dims", &[])?)?,
        };
        let combinations = self
            .string_list_or("combinations", &["item:user"])
            .into_iter()
            .map(|pair| {
                pair.split_once(':')
                    .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("combination `{pair}` is not `item:user`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelConfig {
            variant: self.str_or("variant", &d.variant).to_string(),
            repr_dim: self.usize_or("repr_dim", d.repr_dim)?,
            mlp_can,
            orders: self.u32_or("orders", d.orders)?,
            combination_independent: self
                .bool_or("combination_independent", d.combination_independent)?,
            order_independent: self.bool_or("order_independent", d.order_independent)?,
            head_dims: self.usize_list_or("head_dims", &d.head_dims)?,
            combinations,
            init_std: self.f64_or("init_std", d.init_std)?,
            cartesian_cap: self.u64_or("cartesian_cap", d.cartesian_cap)?,
        })
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let d = TrainOptions::default();
        Ok(TrainOptions {
            epochs: self.usize_or("epochs", d.epochs)?,
            batch_size: self.usize_or("batch_size", d.batch_size)?,
            lr: self.f64_or("lr", d.lr)?,
            seed: self.u64_or("seed", d.seed)?,
        })
    }
}
