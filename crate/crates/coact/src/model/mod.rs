//! Full model assembly: representation embeddings feed a softmax-headed MLP,
//! and a pluggable interaction variant appends co-action (or baseline)
//! features to the head input.

pub mod checkpoint;
pub mod gradcheck;
pub mod trainer;
pub mod variants;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coaction::MlpCanSpec;
use crate::data::{Dataset, Example, FieldKind, FieldValue, Schema};
use crate::embeddings::{EmbeddingTable, ParamSet, ParameterStore, Recorder};
use crate::error::{Error, Result};
use crate::numerics::{Activation, NodeId, ParamId, Tensor};

pub use trainer::{train, TrainLog, TrainOptions};
pub use variants::{lookup_variant, variant_names, Interaction, VariantBuilder};

/// One co-action pair: (weight-side field, input-side field). The weight-side
/// field must be scalar; the input side may be a scalar or a sequence.
pub type Combination = (String, String);

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Interaction variant name, resolved against the registry.
    pub variant: String,
    /// Representation embedding width per field.
    pub repr_dim: usize,
    pub mlp_can: MlpCanSpec,
    /// Order count C.
    pub orders: u32,
    pub combination_independent: bool,
    pub order_independent: bool,
    /// Head layer output widths; the last must be 2 (two-way softmax).
    pub head_dims: Vec<usize>,
    pub combinations: Vec<Combination>,
    pub init_std: f64,
    /// Largest allowed product vocabulary for a cartesian table.
    pub cartesian_cap: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: "can".to_string(),
            repr_dim: 16,
            mlp_can: MlpCanSpec::uniform(8, 4).expect("static dims"),
            orders: 2,
            combination_independent: true,
            order_independent: false,
            head_dims: vec![200, 100, 2],
            combinations: Vec::new(),
            init_std: 0.01,
            cartesian_cap: 10_000_000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        lookup_variant(&self.variant)?;
        if self.head_dims.last() != Some(&2) {
            return Err(Error::Config(format!(
                "head output dim must be 2, got dims {:?}",
                self.head_dims
            )));
        }
        if self.head_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("head dims must be positive".into()));
        }
        if self.repr_dim == 0 {
            return Err(Error::Config("repr_dim must be positive".into()));
        }
        if self.orders == 0 {
            return Err(Error::Config("orders must be >= 1".into()));
        }
        if self.variant != "plain_dnn" && self.combinations.is_empty() {
            return Err(Error::Config(format!(
                "variant `{}` needs a nonempty combination list",
                self.variant
            )));
        }
        for (wf, uf) in &self.combinations {
            let w_idx = schema.index_of(wf)?;
            schema.index_of(uf)?;
            if schema.field(w_idx).kind != FieldKind::Scalar {
                return Err(Error::Config(format!(
                    "weight-side field `{wf}` must be scalar"
                )));
            }
        }
        Ok(())
    }
}

/// Combined ID of a (user, item) pair over the product vocabulary.
/// Bijective: `u * item_cardinality + m`.
pub fn cartesian_id(u: u32, m: u32, item_cardinality: u32) -> Result<u64> {
    if m >= item_cardinality {
        return Err(Error::Index {
            field: "cartesian item".to_string(),
            id: m,
            cardinality: item_cardinality,
        });
    }
    Ok(u as u64 * item_cardinality as u64 + m as u64)
}

/// Creates parameters with seeded Gaussian init, or resolves existing ones by
/// name when rebuilding a model around a loaded checkpoint.
pub struct Allocator<'a> {
    store: &'a mut ParameterStore,
    rng: Option<&'a mut dyn RngCore>,
    init_std: f64,
}

impl<'a> Allocator<'a> {
    pub fn initializing(
        store: &'a mut ParameterStore,
        rng: &'a mut dyn RngCore,
        init_std: f64,
    ) -> Self {
        Allocator {
            store,
            rng: Some(rng),
            init_std,
        }
    }

    pub fn resolving(store: &'a mut ParameterStore) -> Self {
        Allocator {
            store,
            rng: None,
            init_std: 0.0,
        }
    }

    pub fn tensor(&mut self, name: &str, set: ParamSet, shape: Vec<usize>) -> Result<ParamId> {
        match &mut self.rng {
            Some(rng) => self
                .store
                .add_normal(name, set, shape, self.init_std, &mut **rng),
            None => {
                let id = self.store.find(name).ok_or_else(|| {
                    Error::Config(format!("checkpoint is missing parameter `{name}`"))
                })?;
                if self.store.get(id).shape() != shape.as_slice() {
                    return Err(Error::dimension(
                        format!("checkpoint parameter `{name}`"),
                        format!("{shape:?}"),
                        format!("{:?}", self.store.get(id).shape()),
                    ));
                }
                Ok(id)
            }
        }
    }

    pub fn table(
        &mut self,
        name: &str,
        field: &str,
        set: ParamSet,
        cardinality: u32,
        dim: usize,
    ) -> Result<EmbeddingTable> {
        let param = self.tensor(name, set, vec![cardinality as usize, dim])?;
        Ok(EmbeddingTable {
            field: field.to_string(),
            cardinality,
            dim,
            param,
        })
    }
}

/// Everything a variant needs while building one example's head inputs.
pub struct ForwardCtx<'a, 'r, 's> {
    pub rec: &'a mut Recorder<'s>,
    pub schema: &'r Schema,
    /// Pooled representation embedding node per schema field.
    pub base: &'a [NodeId],
}

struct HeadLayer {
    w: ParamId,
    b: ParamId,
}

/// The assembled model: parameter store, representation tables, head layers,
/// and the interaction variant behind its strategy trait.
pub struct CanModel {
    pub config: ModelConfig,
    pub schema: Schema,
    pub store: ParameterStore,
    repr_tables: Vec<EmbeddingTable>,
    head: Vec<HeadLayer>,
    interaction: Box<dyn Interaction>,
}

struct Parts {
    repr_tables: Vec<EmbeddingTable>,
    head: Vec<HeadLayer>,
    interaction: Box<dyn Interaction>,
}

impl CanModel {
    /// Builds and initializes a fresh model. All parameters come from one
    /// seeded stream, so identical seeds give identical models.
    pub fn new(config: ModelConfig, schema: Schema, seed: u64) -> Result<Self> {
        config.validate(&schema)?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = {
            let mut alloc = Allocator::initializing(&mut store, &mut rng, config.init_std);
            build_parts(&config, &schema, &mut alloc)?
        };
        Ok(CanModel {
            config,
            schema,
            store,
            repr_tables: parts.repr_tables,
            head: parts.head,
            interaction: parts.interaction,
        })
    }

    /// Rebuilds the model structure around an existing parameter store
    /// (checkpoint loading). Shapes are verified against the config.
    pub fn from_store(config: ModelConfig, schema: Schema, mut store: ParameterStore) -> Result<Self> {
        config.validate(&schema)?;
        let parts = {
            let mut alloc = Allocator::resolving(&mut store);
            build_parts(&config, &schema, &mut alloc)?
        };
        Ok(CanModel {
            config,
            schema,
            store,
            repr_tables: parts.repr_tables,
            head: parts.head,
            interaction: parts.interaction,
        })
    }

    /// Width of the concatenated head input.
    pub fn head_input_width(&self) -> usize {
        self.schema.len() * self.config.repr_dim + self.interaction.width()
    }

    /// Width contributed by the interaction variant alone.
    pub fn interaction_width(&self) -> usize {
        self.interaction.width()
    }

    pub fn variant_name(&self) -> &str {
        self.interaction.name()
    }

    fn pooled_base(&self, rec: &mut Recorder, example: &Example) -> Result<Vec<NodeId>> {
        if example.values.len() != self.schema.len() {
            return Err(Error::Schema(format!(
                "example has {} fields, schema has {}",
                example.values.len(),
                self.schema.len()
            )));
        }
        let mut base = Vec::with_capacity(self.schema.len());
        for (idx, table) in self.repr_tables.iter().enumerate() {
            let node = match example.value(idx) {
                FieldValue::Scalar(id) => table.lookup(rec, *id)?,
                FieldValue::Sequence(ids) => {
                    if ids.is_empty() {
                        rec.input(Tensor::zeros(vec![self.config.repr_dim]))
                    } else {
                        let rows: Vec<NodeId> = ids
                            .iter()
                            .map(|&id| table.lookup(rec, id))
                            .collect::<Result<_>>()?;
                        rec.tape.sum_elems(&rows)?
                    }
                }
            };
            base.push(node);
        }
        Ok(base)
    }

    /// Two-way logits for one example.
    pub fn logits_on(&self, rec: &mut Recorder, example: &Example) -> Result<NodeId> {
        let base = self.pooled_base(rec, example)?;
        let extra = {
            let mut ctx = ForwardCtx {
                rec,
                schema: &self.schema,
                base: &base,
            };
            self.interaction.head_inputs(&mut ctx, example)?
        };
        let mut parts = base;
        parts.extend(extra);
        let mut h = rec.tape.concat(&parts)?;
        for (li, layer) in self.head.iter().enumerate() {
            let w = rec.dense(layer.w);
            let b = rec.dense(layer.b);
            let pre = rec.tape.affine(h, w, b)?;
            h = if li + 1 < self.head.len() {
                rec.tape.activate(Activation::SeLU, pre)
            } else {
                pre
            };
        }
        Ok(h)
    }

    /// Click-class probability node for one example.
    pub fn predict_on(&self, rec: &mut Recorder, example: &Example) -> Result<NodeId> {
        let logits = self.logits_on(rec, example)?;
        let probs = rec.tape.softmax(logits);
        rec.tape.index(probs, 1)
    }

    /// Probability and cross-entropy loss nodes for one example.
    pub fn loss_on(&self, rec: &mut Recorder, example: &Example) -> Result<(NodeId, NodeId)> {
        let y_hat = self.predict_on(rec, example)?;
        let loss = rec.tape.cross_entropy(y_hat, example.label)?;
        Ok((y_hat, loss))
    }

    /// Click probability of one example over frozen parameters.
    pub fn forward(&self, example: &Example) -> Result<f64> {
        let mut rec = Recorder::new(&self.store);
        let y_hat = self.predict_on(&mut rec, example)?;
        rec.tape.value(y_hat).item()
    }

    /// Scores every example of a dataset.
    pub fn scores(&self, ds: &Dataset) -> Result<Vec<f64>> {
        ds.examples.iter().map(|ex| self.forward(ex)).collect()
    }

    #[cfg(test)]
    pub(crate) fn interaction_for_tests(&self) -> &dyn Interaction {
        self.interaction.as_ref()
    }
}

fn build_parts(
    config: &ModelConfig,
    schema: &Schema,
    alloc: &mut Allocator<'_>,
) -> Result<Parts> {
    let mut repr_tables = Vec::with_capacity(schema.len());
    for field in schema.fields() {
        repr_tables.push(alloc.table(
            &format!("e_{}", field.name),
            &field.name,
            ParamSet::Representation,
            field.cardinality,
            config.repr_dim,
        )?);
    }

    let builder = lookup_variant(&config.variant)?;
    let interaction = builder.build(config, schema, alloc)?;

    let mut head = Vec::with_capacity(config.head_dims.len());
    let mut in_dim = schema.len() * config.repr_dim + interaction.width();
    for (i, &out_dim) in config.head_dims.iter().enumerate() {
        let w = alloc.tensor(&format!("head_w{i}"), ParamSet::Head, vec![out_dim, in_dim])?;
        let b = alloc.tensor(&format!("head_b{i}"), ParamSet::Head, vec![out_dim])?;
        head.push(HeadLayer { w, b });
        in_dim = out_dim;
    }

    Ok(Parts {
        repr_tables,
        head,
        interaction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSpec, Side};

    fn small_schema() -> Schema {
        Schema::new(vec![
            FieldSpec::scalar("user", Side::User, 20),
            FieldSpec::scalar("item", Side::Item, 10),
            FieldSpec::sequence("hist", Side::User, 10, 4),
        ])
        .unwrap()
    }

    fn small_config(variant: &str) -> ModelConfig {
        ModelConfig {
            variant: variant.to_string(),
            repr_dim: 4,
            mlp_can: MlpCanSpec::uniform(2, 3).unwrap(),
            orders: 2,
            head_dims: vec![8, 2],
            combinations: vec![
                ("item".into(), "user".into()),
                ("item".into(), "hist".into()),
            ],
            ..ModelConfig::default()
        }
    }

    fn example(user: u32, item: u32, hist: Vec<u32>) -> Example {
        Example {
            label: 1,
            values: vec![
                FieldValue::Scalar(user),
                FieldValue::Scalar(item),
                FieldValue::Sequence(hist),
            ],
        }
    }

    #[test]
    fn zero_head_weights_predict_one_half() {
        let model = CanModel::new(small_config("can"), small_schema(), 3).unwrap();
        let mut zeroed = model;
        for id in zeroed.store.ids_in(ParamSet::Head) {
            let t = zeroed.store.get_mut(id);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let p = zeroed.forward(&example(1, 2, vec![3, 4])).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_pair_sums_to_one() {
        let model = CanModel::new(small_config("can"), small_schema(), 4).unwrap();
        let mut rec = Recorder::new(&model.store);
        let logits = model.logits_on(&mut rec, &example(5, 3, vec![1])).unwrap();
        let probs = rec.tape.softmax(logits);
        let s: f64 = rec.tape.value(probs).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plain_dnn_shrinks_head_input_by_interaction_width() {
        let can = CanModel::new(small_config("can"), small_schema(), 5).unwrap();
        let mut plain_cfg = small_config("plain_dnn");
        plain_cfg.combinations.clear();
        let plain = CanModel::new(plain_cfg, small_schema(), 5).unwrap();
        let out_dim = can.config.mlp_can.output_dim();
        assert_eq!(
            can.head_input_width(),
            plain.head_input_width() + 2 * out_dim
        );
        assert_eq!(plain.interaction_width(), 0);
    }

    #[test]
    fn forward_matches_composition_of_module_oracles() {
        // Straight-line recomputation of the whole pipeline for one example,
        // composing the module-level primitives directly.
        use crate::coaction::{
            activation_for_orders, apply_mlp_can, multi_order_input, slice_params,
        };
        use crate::embeddings::{
            coaction_param_dims, input_segment_offset, weight_segment_offset, IndependenceConfig,
        };

        let cfg = small_config("can");
        let schema = small_schema();
        let model = CanModel::new(cfg.clone(), schema.clone(), 3).unwrap();
        let ex = example(7, 4, vec![2, 9]);
        let got = model.forward(&ex).unwrap();

        // Independent recomputation on a scratch tape, reading raw rows out
        // of the store by name.
        let store = &model.store;
        let mut rec = Recorder::new(store);
        let row = |store: &ParameterStore, name: &str, id: u32| -> Tensor {
            let pid = store.find(name).unwrap();
            Tensor::vector(store.get(pid).row(id as usize))
        };

        let e_user = rec.input(row(store, "e_user", 7));
        let e_item = rec.input(row(store, "e_item", 4));
        let h2 = row(store, "e_hist", 2);
        let h9 = row(store, "e_hist", 9);
        let e_hist = rec.input(Tensor::vector(
            &h2.data()
                .iter()
                .zip(h9.data())
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        ));

        let ind = IndependenceConfig {
            combination_independent: cfg.combination_independent,
            order_independent: cfg.order_independent,
            weight_fields: 1,
            input_fields: 2,
            orders: cfg.orders,
        };
        let (_, in_width) = coaction_param_dims(&cfg.mlp_can, &ind).unwrap();
        assert_eq!(in_width, cfg.mlp_can.input_dim());
        let base = cfg.mlp_can.param_len();
        let act = activation_for_orders(cfg.orders);

        let p_item_full = rec.input(row(store, "can_w_item", 4));
        let mut h_nodes = Vec::new();
        // Combination (item, user): input-side combination index 0.
        {
            let off = weight_segment_offset(&ind, base, 0, 0);
            let seg = rec.tape.slice(p_item_full, off, vec![base]).unwrap();
            let mlp = slice_params(&mut rec.tape, seg, &cfg.mlp_can).unwrap();
            let u_full = rec.input(row(store, "can_in_user", 7));
            let u_off = input_segment_offset(&ind, cfg.mlp_can.input_dim(), 0);
            let u_seg = rec
                .tape
                .slice(u_full, u_off, vec![cfg.mlp_can.input_dim()])
                .unwrap();
            let x = multi_order_input(&mut rec.tape, u_seg, cfg.orders).unwrap();
            h_nodes.push(apply_mlp_can(&mut rec.tape, &mlp, x, act).unwrap());
        }
        // Combination (item, hist): input-side combination index 1, pooled
        // over the two history steps.
        {
            let off = weight_segment_offset(&ind, base, 1, 0);
            let seg = rec.tape.slice(p_item_full, off, vec![base]).unwrap();
            let mlp = slice_params(&mut rec.tape, seg, &cfg.mlp_can).unwrap();
            let mut step_outs = Vec::new();
            for hid in [2u32, 9] {
                let h_full = rec.input(row(store, "can_in_hist", hid));
                let h_off = input_segment_offset(&ind, cfg.mlp_can.input_dim(), 0);
                let h_seg = rec
                    .tape
                    .slice(h_full, h_off, vec![cfg.mlp_can.input_dim()])
                    .unwrap();
                let x = multi_order_input(&mut rec.tape, h_seg, cfg.orders).unwrap();
                step_outs.push(apply_mlp_can(&mut rec.tape, &mlp, x, act).unwrap());
            }
            h_nodes.push(rec.tape.sum_elems(&step_outs).unwrap());
        }

        let mut parts = vec![e_user, e_item, e_hist];
        parts.extend(h_nodes);
        let mut h = rec.tape.concat(&parts).unwrap();
        for (li, dims) in cfg.head_dims.iter().enumerate() {
            let w = rec.input(store.get(store.find(&format!("head_w{li}")).unwrap()).clone());
            let b = rec.input(store.get(store.find(&format!("head_b{li}")).unwrap()).clone());
            let pre = rec.tape.affine(h, w, b).unwrap();
            h = if li + 1 < cfg.head_dims.len() {
                rec.tape.activate(Activation::SeLU, pre)
            } else {
                pre
            };
            let _ = dims;
        }
        let probs = rec.tape.softmax(h);
        let y_hat = rec.tape.index(probs, 1).unwrap();
        let expect = rec.tape.value(y_hat).item().unwrap();

        assert!(
            (got - expect).abs() < 1e-14,
            "forward {got} vs oracle {expect}"
        );
    }

    #[test]
    fn cartesian_id_examples() {
        assert_eq!(cartesian_id(3, 2, 10).unwrap(), 32);
        assert_eq!(cartesian_id(0, 0, 7).unwrap(), 0);
        // Bijective over a 7x5 grid.
        let mut seen = std::collections::HashSet::new();
        for u in 0..7 {
            for m in 0..5 {
                seen.insert(cartesian_id(u, m, 5).unwrap());
            }
        }
        assert_eq!(seen.len(), 35);
        assert!(cartesian_id(1, 5, 5).is_err());
    }

    #[test]
    fn schema_mismatch_names_the_field() {
        let model = CanModel::new(small_config("can"), small_schema(), 6).unwrap();
        let bad = example(25, 3, vec![]); // user cardinality is 20
        let err = model.forward(&bad).unwrap_err();
        assert!(err.to_string().contains("user"), "{err}");
    }
}
