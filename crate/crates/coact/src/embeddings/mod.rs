//! Independence-aware parameter tables.
//!
//! Three disjoint parameter sets live in one store: representation
//! embeddings, co-action lookup tables (weight-side and input-side, with
//! combination/order dimension expansion), and head weights. Lookups register
//! on the tape so gradients flow only into the touched rows.

pub mod checkpoint;

use std::collections::HashMap;

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::coaction::MlpCanSpec;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamKey, Tape, Tensor};

/// Which of the three disjoint parameter sets a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    /// Representation embeddings.
    Representation,
    /// Co-action lookup tables.
    CoAction,
    /// Head (DNN) weights.
    Head,
}

impl ParamSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamSet::Representation => "repr",
            ParamSet::CoAction => "coaction",
            ParamSet::Head => "head",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "repr" => Ok(ParamSet::Representation),
            "coaction" => Ok(ParamSet::CoAction),
            "head" => Ok(ParamSet::Head),
            other => Err(Error::Config(format!("unknown parameter set `{other}`"))),
        }
    }
}

struct ParamEntry {
    name: String,
    set: ParamSet,
    tensor: Tensor,
}

/// Owns every trainable tensor. Names are unique and filesystem-safe so the
/// checkpoint format can address tensors by name.
#[derive(Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn add(&mut self, name: &str, set: ParamSet, tensor: Tensor) -> Result<ParamId> {
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            return Err(Error::Config(format!(
                "parameter name `{name}` must be non-empty [A-Za-z0-9_.]"
            )));
        }
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            set,
            tensor,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a tensor initialized from N(0, std^2).
    pub fn add_normal(
        &mut self,
        name: &str,
        set: ParamSet,
        shape: Vec<usize>,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, set, Tensor::new(shape, data)?)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn set_of(&self, id: ParamId) -> ParamSet {
        self.entries[id.0].set
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, set: ParamSet) -> Vec<ParamId> {
        self.ids().filter(|&id| self.set_of(id) == set).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count in one set.
    pub fn count_in(&self, set: ParamSet) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.set == set)
            .map(|e| e.tensor.len() as u64)
            .sum()
    }
}

/// Builds tape leaves for parameters, deduplicating by key so every use of a
/// tensor (or row) within one tape accumulates into a single gradient slot.
pub struct Recorder<'s> {
    pub tape: Tape,
    store: &'s ParameterStore,
    cache: HashMap<ParamKey, NodeId>,
}

impl<'s> Recorder<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Recorder {
            tape: Tape::new(),
            store,
            cache: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    /// Whole-tensor parameter leaf.
    pub fn dense(&mut self, id: ParamId) -> NodeId {
        let key = ParamKey::Dense(id);
        if let Some(&n) = self.cache.get(&key) {
            return n;
        }
        let node = self.tape.param(key, self.store.get(id).clone());
        self.cache.insert(key, node);
        node
    }

    /// Single-row parameter leaf of a 2-D table.
    pub fn row(&mut self, id: ParamId, row: usize) -> NodeId {
        let key = ParamKey::Row(id, row);
        if let Some(&n) = self.cache.get(&key) {
            return n;
        }
        let tensor = self.store.get(id);
        let node = self
            .tape
            .param(key, Tensor::vector(tensor.row(row)));
        self.cache.insert(key, node);
        node
    }

    /// Non-parameter input.
    pub fn input(&mut self, tensor: Tensor) -> NodeId {
        self.tape.input(tensor)
    }
}

/// One lookup table: `cardinality` rows of `dim` parameters.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub field: String,
    pub cardinality: u32,
    pub dim: usize,
    pub param: ParamId,
}

impl EmbeddingTable {
    /// Creates the table in the store under `name`, rows ~ N(0, std^2).
    pub fn create(
        store: &mut ParameterStore,
        name: &str,
        field: &str,
        set: ParamSet,
        cardinality: u32,
        dim: usize,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let param = store.add_normal(name, set, vec![cardinality as usize, dim], std, rng)?;
        Ok(EmbeddingTable {
            field: field.to_string(),
            cardinality,
            dim,
            param,
        })
    }

    /// Tape-registered row lookup; gradient flows only to that row.
    pub fn lookup(&self, rec: &mut Recorder, id: u32) -> Result<NodeId> {
        if id >= self.cardinality {
            return Err(Error::Index {
                field: self.field.clone(),
                id,
                cardinality: self.cardinality,
            });
        }
        Ok(rec.row(self.param, id as usize))
    }

    /// Direct row read without tape registration (frozen evaluation).
    pub fn row_values<'a>(&self, store: &'a ParameterStore, id: u32) -> Result<&'a [f64]> {
        if id >= self.cardinality {
            return Err(Error::Index {
                field: self.field.clone(),
                id,
                cardinality: self.cardinality,
            });
        }
        Ok(store.get(self.param).row(id as usize))
    }
}

/// Multi-level independence switches and the field counts that drive the
/// dimension expansion.
#[derive(Debug, Clone, Copy)]
pub struct IndependenceConfig {
    pub combination_independent: bool,
    pub order_independent: bool,
    /// M: number of weight-side fields selected for co-action.
    pub weight_fields: usize,
    /// N: number of input-side fields selected for co-action.
    pub input_fields: usize,
    /// C: order count.
    pub orders: u32,
}

impl IndependenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weight_fields == 0 || self.input_fields == 0 {
            return Err(Error::Config(
                "independence config needs at least one field on each side".into(),
            ));
        }
        if self.orders == 0 {
            return Err(Error::Config("order count must be >= 1".into()));
        }
        Ok(())
    }

    fn combination_multiplier_weight(&self) -> usize {
        if self.combination_independent {
            self.input_fields
        } else {
            1
        }
    }

    fn combination_multiplier_input(&self) -> usize {
        if self.combination_independent {
            self.weight_fields
        } else {
            1
        }
    }

    fn order_multiplier(&self) -> usize {
        if self.order_independent {
            self.orders as usize
        } else {
            1
        }
    }
}

/// Widths of the co-action vectors after dimension expansion:
/// weight side = base length x N (combinations) x C (orders);
/// input side = micro-MLP input dim x M.
pub fn coaction_param_dims(
    mlp_spec: &MlpCanSpec,
    ind: &IndependenceConfig,
) -> Result<(usize, usize)> {
    ind.validate()?;
    let base = mlp_spec.param_len();
    let weight = base * ind.combination_multiplier_weight() * ind.order_multiplier();
    let input = mlp_spec.input_dim() * ind.combination_multiplier_input();
    Ok((weight, input))
}

/// Flat offset of the weight-side segment for input-side combination index
/// `combination` and order index `order` (0-based). Segments are laid out
/// combination-major, order-minor.
pub fn weight_segment_offset(
    ind: &IndependenceConfig,
    base_len: usize,
    combination: usize,
    order: usize,
) -> usize {
    let c = if ind.combination_independent {
        combination
    } else {
        0
    };
    let o = if ind.order_independent { order } else { 0 };
    (c * ind.order_multiplier() + o) * base_len
}

/// Flat offset of the input-side segment for weight-side combination index
/// `combination`.
pub fn input_segment_offset(ind: &IndependenceConfig, input_dim: usize, combination: usize) -> usize {
    if ind.combination_independent {
        combination * input_dim
    } else {
        0
    }
}

/// How a co-action family scales its parameter count with vocabulary size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// One embedding per ordered ID pair: n^2 x dim.
    Cartesian,
    /// One co-action vector per ID: n x dim.
    CoAction,
}

/// Parameter count of each scaling regime.
pub fn parameter_scale(n_ids: u64, dim: u64, mode: ScaleMode) -> u128 {
    match mode {
        ScaleMode::Cartesian => n_ids as u128 * n_ids as u128 * dim as u128,
        ScaleMode::CoAction => n_ids as u128 * dim as u128,
    }
}
