//! Interaction variants behind a common strategy trait, registered by name
//! and selected at runtime from the config.
//!
//! Every variant shares the representation pathway and the head; what differs
//! is the extra feature block appended to the head input: nothing (plain
//! DNN), micro-MLP co-action, a cartesian product-space embedding, an inner
//! product, or co-action plus cartesian.

use crate::coaction::{coaction_sequence, coaction_shared, coaction_sum_form, MlpCanSpec};
use crate::data::{Example, FieldKind, FieldValue, Schema};
use crate::embeddings::{
    coaction_param_dims, input_segment_offset, weight_segment_offset, EmbeddingTable,
    IndependenceConfig, ParamSet,
};
use crate::error::{Error, Result};
use crate::model::{cartesian_id, Allocator, ForwardCtx, ModelConfig};
use crate::numerics::{NodeId, Tensor};

/// Runtime interaction strategy: computes the variant's extra head inputs.
pub trait Interaction: Send + Sync {
    fn name(&self) -> &'static str;
    /// Total width the variant appends to the head input.
    fn width(&self) -> usize;
    fn head_inputs(&self, ctx: &mut ForwardCtx, example: &Example) -> Result<Vec<NodeId>>;
}

/// Builds an [`Interaction`] from the model config, allocating (or resolving)
/// its parameter tables.
pub trait VariantBuilder: Sync {
    fn name(&self) -> &'static str;
    fn build(
        &self,
        config: &ModelConfig,
        schema: &Schema,
        alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>>;
}

static VARIANTS: &[&dyn VariantBuilder] = &[
    &PlainDnnBuilder,
    &CanBuilder,
    &CartesianBuilder,
    &InnerProductBuilder,
    &CanCartesianBuilder,
];

/// Resolves a variant by its registered name.
pub fn lookup_variant(name: &str) -> Result<&'static dyn VariantBuilder> {
    VARIANTS
        .iter()
        .find(|v| v.name() == name)
        .copied()
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown variant `{name}`; known: {}",
                variant_names().join(", ")
            ))
        })
}

pub fn variant_names() -> Vec<&'static str> {
    VARIANTS.iter().map(|v| v.name()).collect()
}

// ---------------------------------------------------------------------------
// plain_dnn

struct PlainDnnBuilder;

impl VariantBuilder for PlainDnnBuilder {
    fn name(&self) -> &'static str {
        "plain_dnn"
    }

    fn build(
        &self,
        _config: &ModelConfig,
        _schema: &Schema,
        _alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>> {
        Ok(Box::new(PlainDnn))
    }
}

struct PlainDnn;

impl Interaction for PlainDnn {
    fn name(&self) -> &'static str {
        "plain_dnn"
    }

    fn width(&self) -> usize {
        0
    }

    fn head_inputs(&self, _ctx: &mut ForwardCtx, _example: &Example) -> Result<Vec<NodeId>> {
        Ok(Vec::new())
    }
}

// ---------------------------------------------------------------------------
// can

struct CanBuilder;

impl VariantBuilder for CanBuilder {
    fn name(&self) -> &'static str {
        "can"
    }

    fn build(
        &self,
        config: &ModelConfig,
        schema: &Schema,
        alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>> {
        Ok(Box::new(CanInteraction::build(config, schema, alloc)?))
    }
}

/// Resolved combination: schema field indices plus positions in the deduped
/// side lists (which select the dimension-expansion segments).
struct ResolvedCombo {
    weight_field_idx: usize,
    input_field_idx: usize,
    /// Index into the weight-side table list (input-side segment selector).
    weight_pos: usize,
    /// Index into the input-side table list (weight-side segment selector).
    input_pos: usize,
}

struct CanInteraction {
    mlp: MlpCanSpec,
    orders: u32,
    independence: IndependenceConfig,
    weight_tables: Vec<EmbeddingTable>,
    input_tables: Vec<EmbeddingTable>,
    combos: Vec<ResolvedCombo>,
    width: usize,
}

/// Distinct field names, ordered by schema index.
fn distinct_fields(names: impl Iterator<Item = String>, schema: &Schema) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.contains(&n) {
            out.push(n);
        }
    }
    let mut indexed = out
        .into_iter()
        .map(|n| Ok((schema.index_of(&n)?, n)))
        .collect::<Result<Vec<_>>>()?;
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, n)| n).collect())
}

impl CanInteraction {
    fn build(config: &ModelConfig, schema: &Schema, alloc: &mut Allocator) -> Result<Self> {
        let weight_fields =
            distinct_fields(config.combinations.iter().map(|c| c.0.clone()), schema)?;
        let input_fields =
            distinct_fields(config.combinations.iter().map(|c| c.1.clone()), schema)?;
        let independence = IndependenceConfig {
            combination_independent: config.combination_independent,
            order_independent: config.order_independent,
            weight_fields: weight_fields.len(),
            input_fields: input_fields.len(),
            orders: config.orders,
        };
        let (weight_width, input_width) = coaction_param_dims(&config.mlp_can, &independence)?;

        let mut weight_tables = Vec::with_capacity(weight_fields.len());
        for f in &weight_fields {
            let spec = schema.field(schema.index_of(f)?);
            if spec.kind != FieldKind::Scalar {
                return Err(Error::Config(format!(
                    "weight-side field `{f}` must be scalar"
                )));
            }
            weight_tables.push(alloc.table(
                &format!("can_w_{f}"),
                f,
                ParamSet::CoAction,
                spec.cardinality,
                weight_width,
            )?);
        }
        let mut input_tables = Vec::with_capacity(input_fields.len());
        for f in &input_fields {
            let spec = schema.field(schema.index_of(f)?);
            input_tables.push(alloc.table(
                &format!("can_in_{f}"),
                f,
                ParamSet::CoAction,
                spec.cardinality,
                input_width,
            )?);
        }

        let combos = config
            .combinations
            .iter()
            .map(|(wf, uf)| {
                Ok(ResolvedCombo {
                    weight_field_idx: schema.index_of(wf)?,
                    input_field_idx: schema.index_of(uf)?,
                    weight_pos: weight_fields.iter().position(|f| f == wf).expect("deduped"),
                    input_pos: input_fields.iter().position(|f| f == uf).expect("deduped"),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let width = combos.len() * config.mlp_can.output_dim();
        Ok(CanInteraction {
            mlp: config.mlp_can.clone(),
            orders: config.orders,
            independence,
            weight_tables,
            input_tables,
            combos,
            width,
        })
    }
}

impl Interaction for CanInteraction {
    fn name(&self) -> &'static str {
        "can"
    }

    fn width(&self) -> usize {
        self.width
    }

    fn head_inputs(&self, ctx: &mut ForwardCtx, example: &Example) -> Result<Vec<NodeId>> {
        let base_len = self.mlp.param_len();
        let in_dim = self.mlp.input_dim();
        let mut out = Vec::with_capacity(self.combos.len());
        for combo in &self.combos {
            let item_id = match example.value(combo.weight_field_idx) {
                FieldValue::Scalar(id) => *id,
                FieldValue::Sequence(_) => {
                    return Err(Error::Schema(
                        "weight-side field value must be scalar".into(),
                    ))
                }
            };
            let p_row = self.weight_tables[combo.weight_pos].lookup(ctx.rec, item_id)?;
            let mut segments = Vec::new();
            let n_segments = if self.independence.order_independent {
                self.orders as usize
            } else {
                1
            };
            for c in 0..n_segments {
                let offset =
                    weight_segment_offset(&self.independence, base_len, combo.input_pos, c);
                segments.push(ctx.rec.tape.slice(p_row, offset, vec![base_len])?);
            }

            let input_offset = input_segment_offset(&self.independence, in_dim, combo.weight_pos);
            let h = match example.value(combo.input_field_idx) {
                FieldValue::Scalar(uid) => {
                    let row = self.input_tables[combo.input_pos].lookup(ctx.rec, *uid)?;
                    let seg = ctx.rec.tape.slice(row, input_offset, vec![in_dim])?;
                    if segments.len() > 1 {
                        coaction_sum_form(&mut ctx.rec.tape, &segments, seg, &self.mlp, self.orders)?
                    } else {
                        coaction_shared(&mut ctx.rec.tape, segments[0], seg, &self.mlp, self.orders)?
                    }
                }
                FieldValue::Sequence(ids) => {
                    let steps = ids
                        .iter()
                        .map(|&id| {
                            let row = self.input_tables[combo.input_pos].lookup(ctx.rec, id)?;
                            ctx.rec.tape.slice(row, input_offset, vec![in_dim])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    coaction_sequence(&mut ctx.rec.tape, &segments, &steps, &self.mlp, self.orders)?
                }
            };
            out.push(h);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// cartesian

struct CartesianBuilder;

impl VariantBuilder for CartesianBuilder {
    fn name(&self) -> &'static str {
        "cartesian"
    }

    fn build(
        &self,
        config: &ModelConfig,
        schema: &Schema,
        alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>> {
        Ok(Box::new(CartesianInteraction::build(config, schema, alloc)?))
    }
}

struct CartesianCombo {
    weight_field_idx: usize,
    input_field_idx: usize,
    item_cardinality: u32,
    table: EmbeddingTable,
}

struct CartesianInteraction {
    repr_dim: usize,
    combos: Vec<CartesianCombo>,
}

impl CartesianInteraction {
    fn build(config: &ModelConfig, schema: &Schema, alloc: &mut Allocator) -> Result<Self> {
        let mut combos = Vec::with_capacity(config.combinations.len());
        for (wf, uf) in &config.combinations {
            let w_idx = schema.index_of(wf)?;
            let u_idx = schema.index_of(uf)?;
            let item_card = schema.field(w_idx).cardinality;
            let user_card = schema.field(u_idx).cardinality;
            let product = item_card as u64 * user_card as u64;
            if product > config.cartesian_cap {
                return Err(Error::Config(format!(
                    "cartesian table for ({wf}, {uf}) needs {product} rows of {} parameters, \
                     above the cap of {}; the product vocabulary explodes quadratically where \
                     co-action tables grow linearly",
                    config.repr_dim, config.cartesian_cap
                )));
            }
            let table = alloc.table(
                &format!("cart_{wf}_{uf}"),
                &format!("{wf}x{uf}"),
                ParamSet::CoAction,
                product as u32,
                config.repr_dim,
            )?;
            combos.push(CartesianCombo {
                weight_field_idx: w_idx,
                input_field_idx: u_idx,
                item_cardinality: item_card,
                table,
            });
        }
        Ok(CartesianInteraction {
            repr_dim: config.repr_dim,
            combos,
        })
    }
}

impl Interaction for CartesianInteraction {
    fn name(&self) -> &'static str {
        "cartesian"
    }

    fn width(&self) -> usize {
        self.combos.len() * self.repr_dim
    }

    fn head_inputs(&self, ctx: &mut ForwardCtx, example: &Example) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(self.combos.len());
        for combo in &self.combos {
            let item_id = match example.value(combo.weight_field_idx) {
                FieldValue::Scalar(id) => *id,
                FieldValue::Sequence(_) => {
                    return Err(Error::Schema(
                        "weight-side field value must be scalar".into(),
                    ))
                }
            };
            let node = match example.value(combo.input_field_idx) {
                FieldValue::Scalar(uid) => {
                    let id = cartesian_id(*uid, item_id, combo.item_cardinality)?;
                    combo.table.lookup(ctx.rec, id as u32)?
                }
                FieldValue::Sequence(ids) => {
                    if ids.is_empty() {
                        ctx.rec.input(Tensor::zeros(vec![self.repr_dim]))
                    } else {
                        let rows = ids
                            .iter()
                            .map(|&uid| {
                                let id = cartesian_id(uid, item_id, combo.item_cardinality)?;
                                combo.table.lookup(ctx.rec, id as u32)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        ctx.rec.tape.sum_elems(&rows)?
                    }
                }
            };
            out.push(node);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// inner_product

struct InnerProductBuilder;

impl VariantBuilder for InnerProductBuilder {
    fn name(&self) -> &'static str {
        "inner_product"
    }

    fn build(
        &self,
        config: &ModelConfig,
        schema: &Schema,
        _alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>> {
        let combos = config
            .combinations
            .iter()
            .map(|(wf, uf)| Ok((schema.index_of(wf)?, schema.index_of(uf)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(InnerProductInteraction { combos }))
    }
}

/// Inner product of the two representation embeddings of each combination,
/// appended to the head input as a scalar feature.
struct InnerProductInteraction {
    combos: Vec<(usize, usize)>,
}

impl Interaction for InnerProductInteraction {
    fn name(&self) -> &'static str {
        "inner_product"
    }

    fn width(&self) -> usize {
        self.combos.len()
    }

    fn head_inputs(&self, ctx: &mut ForwardCtx, _example: &Example) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(self.combos.len());
        for &(w_idx, u_idx) in &self.combos {
            let a = ctx.base[w_idx];
            let b = ctx.base[u_idx];
            out.push(ctx.rec.tape.dot(a, b)?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// can_cartesian

struct CanCartesianBuilder;

impl VariantBuilder for CanCartesianBuilder {
    fn name(&self) -> &'static str {
        "can_cartesian"
    }

    fn build(
        &self,
        config: &ModelConfig,
        schema: &Schema,
        alloc: &mut Allocator,
    ) -> Result<Box<dyn Interaction>> {
        let can = CanInteraction::build(config, schema, alloc)?;
        let cartesian = CartesianInteraction::build(config, schema, alloc)?;
        Ok(Box::new(CanCartesian { can, cartesian }))
    }
}

struct CanCartesian {
    can: CanInteraction,
    cartesian: CartesianInteraction,
}

impl Interaction for CanCartesian {
    fn name(&self) -> &'static str {
        "can_cartesian"
    }

    fn width(&self) -> usize {
        self.can.width() + self.cartesian.width()
    }

    fn head_inputs(&self, ctx: &mut ForwardCtx, example: &Example) -> Result<Vec<NodeId>> {
        let mut out = self.can.head_inputs(ctx, example)?;
        out.extend(self.cartesian.head_inputs(ctx, example)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSpec, Side};
    use crate::embeddings::Recorder;
    use crate::model::CanModel;
    use crate::numerics::Tape;

    fn schema() -> Schema {
        Schema::new(vec![
            FieldSpec::scalar("user", Side::User, 12),
            FieldSpec::scalar("item", Side::Item, 6),
            FieldSpec::sequence("hist", Side::User, 6, 4),
        ])
        .unwrap()
    }

    fn config(variant: &str) -> ModelConfig {
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
            label: 0,
            values: vec![
                FieldValue::Scalar(user),
                FieldValue::Scalar(item),
                FieldValue::Sequence(hist),
            ],
        }
    }

    #[test]
    fn registry_knows_all_variants() {
        let names = variant_names();
        for n in ["plain_dnn", "can", "cartesian", "inner_product", "can_cartesian"] {
            assert!(names.contains(&n), "missing {n}");
            assert_eq!(lookup_variant(n).unwrap().name(), n);
        }
        let err = lookup_variant("nope").err().expect("unknown variant");
        assert!(err.to_string().contains("plain_dnn"), "{err}");
    }

    #[test]
    fn variant_widths_satisfy_containment() {
        let can = CanModel::new(config("can"), schema(), 1).unwrap();
        let mut plain_cfg = config("plain_dnn");
        plain_cfg.combinations.clear();
        let plain = CanModel::new(plain_cfg, schema(), 1).unwrap();
        let cart = CanModel::new(config("cartesian"), schema(), 1).unwrap();
        let both = CanModel::new(config("can_cartesian"), schema(), 1).unwrap();
        let ip = CanModel::new(config("inner_product"), schema(), 1).unwrap();

        let out_dim = 3; // micro-MLP output dim
        assert_eq!(
            can.head_input_width(),
            plain.head_input_width() + 2 * out_dim
        );
        // Cartesian adds exactly one representation-dim embedding per combination.
        assert_eq!(cart.interaction_width(), 2 * 4);
        assert_eq!(
            both.interaction_width(),
            can.interaction_width() + cart.interaction_width()
        );
        assert_eq!(ip.interaction_width(), 2);
    }

    #[test]
    fn cartesian_cap_aborts_with_a_clear_message() {
        let big_schema = Schema::new(vec![
            FieldSpec::scalar("user", Side::User, 10_000),
            FieldSpec::scalar("item", Side::Item, 10_000),
        ])
        .unwrap();
        let mut cfg = config("cartesian");
        cfg.combinations = vec![("item".into(), "user".into())];
        let err = CanModel::new(cfg, big_schema, 1).err().expect("over cap");
        let msg = err.to_string();
        assert!(msg.contains("100000000") && msg.contains("cap"), "{msg}");
    }

    #[test]
    fn inner_product_examples() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(&[1.0, 0.0]));
        let b = tape.input(Tensor::vector(&[0.0, 1.0]));
        let d = tape.dot(a, b).unwrap();
        assert_eq!(tape.value(d).item().unwrap(), 0.0);

        let u = tape.input(Tensor::vector(&[1.0, 0.0]));
        let d2 = tape.dot(u, u).unwrap();
        assert_eq!(tape.value(d2).item().unwrap(), 1.0);

        let x = tape.input(Tensor::vector(&[1.0, 2.0]));
        let y = tape.input(Tensor::vector(&[3.0, -1.0]));
        let d3 = tape.dot(x, y).unwrap();
        assert_eq!(tape.value(d3).item().unwrap(), 1.0);

        let short = tape.input(Tensor::vector(&[1.0]));
        assert!(tape.dot(x, short).is_err());
    }

    #[test]
    fn combination_independence_isolates_segments() {
        // Perturbing the weight-side segment assigned to combination 1 must
        // leave combination 0's output bit-identical.
        let cfg = config("can");
        let sch = schema();
        let mut model = CanModel::new(cfg, sch, 9).unwrap();
        let ex = example(3, 2, vec![1, 5]);

        let h_outputs = |model: &CanModel, ex: &Example| -> Vec<Vec<f64>> {
            let mut rec = Recorder::new(&model.store);
            let base: Vec<_> = (0..3)
                .map(|_| rec.input(Tensor::zeros(vec![1])))
                .collect();
            // Go through the interaction directly to observe per-combination H.
            let mut ctx = ForwardCtx {
                rec: &mut rec,
                schema: &model.schema,
                base: &base,
            };
            model
                .interaction_for_tests()
                .head_inputs(&mut ctx, ex)
                .unwrap()
                .into_iter()
                .map(|n| rec.tape.value(n).data().to_vec())
                .collect()
        };

        let before = h_outputs(&model, &ex);

        // Combination 1 is (item, hist); its weight segment index is the
        // position of `hist` in the input-side field list = 1.
        let spec = MlpCanSpec::uniform(2, 3).unwrap();
        let base_len = spec.param_len();
        let table = model.store.find("can_w_item").unwrap();
        {
            let t = model.store.get_mut(table);
            let cols = t.shape()[1];
            let row = 2; // the item id used above
            for i in base_len..2 * base_len {
                t.data_mut()[row * cols + i] += 0.5;
            }
        }

        let after = h_outputs(&model, &ex);
        assert_eq!(before[0], after[0], "combination 0 must be untouched");
        assert_ne!(before[1], after[1], "combination 1 must change");
    }
}
