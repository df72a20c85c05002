//! End-to-end gradient verification: tape gradients of the full model loss
//! against central differences over every parameter coordinate.

use crate::coaction::MlpCanSpec;
use crate::data::{Example, FieldSpec, FieldValue, Schema, Side};
use crate::embeddings::Recorder;
use crate::error::Result;
use crate::model::{CanModel, ModelConfig};
use crate::numerics::{max_relative_error, ParamKey, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative disagreement across all parameter coordinates.
    pub max_rel_error: f64,
    /// Number of scalar coordinates checked.
    pub coordinates: usize,
}

fn loss_value(model: &CanModel, example: &Example) -> Result<f64> {
    let mut rec = Recorder::new(&model.store);
    let (_, loss) = model.loss_on(&mut rec, example)?;
    rec.tape.value(loss).item()
}

/// Tape gradient of the example loss, assembled as one full tensor per
/// parameter (row gradients scattered into place, untouched entries zero).
fn tape_gradients(model: &CanModel, example: &Example) -> Result<Vec<Tensor>> {
    let grads = {
        let mut rec = Recorder::new(&model.store);
        let (_, loss) = model.loss_on(&mut rec, example)?;
        rec.tape.backward(loss)?
    };
    let mut out = Vec::new();
    for id in model.store.ids() {
        let shape = model.store.get(id).shape().to_vec();
        let mut full = grads.get_or_zeros(&ParamKey::Dense(id), &shape);
        if shape.len() == 2 {
            let cols = shape[1];
            for r in 0..shape[0] {
                if let Some(g) = grads.get(&ParamKey::Row(id, r)) {
                    for (i, v) in g.data().iter().enumerate() {
                        full.data_mut()[r * cols + i] += v;
                    }
                }
            }
        }
        out.push(full);
    }
    Ok(out)
}

/// Compares tape gradients against central differences for one example,
/// over every coordinate of every parameter in the store.
pub fn gradient_check(model: &mut CanModel, example: &Example, eps: f64) -> Result<GradCheckReport> {
    let analytic = tape_gradients(model, example)?;
    let ids: Vec<_> = model.store.ids().collect();
    let mut max_rel = 0.0_f64;
    let mut coordinates = 0;
    for (slot, id) in ids.into_iter().enumerate() {
        let n = model.store.get(id).len();
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let base = model.store.get(id).data()[i];
            model.store.get_mut(id).data_mut()[i] = base + eps;
            let plus = loss_value(model, example)?;
            model.store.get_mut(id).data_mut()[i] = base - eps;
            let minus = loss_value(model, example)?;
            model.store.get_mut(id).data_mut()[i] = base;
            numeric[i] = (plus - minus) / (2.0 * eps);
        }
        max_rel = max_rel.max(max_relative_error(analytic[slot].data(), &numeric));
        coordinates += n;
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coordinates,
    })
}

/// The small reference configuration for end-to-end checks: a two-layer
/// 2->2 micro-MLP, C=2, combination- and order-independent tables, and an
/// 8x2 head, over a three-field schema with a short history sequence.
pub fn small_check_setup() -> (ModelConfig, Schema, Example) {
    let schema = Schema::new(vec![
        FieldSpec::scalar("user", Side::User, 6),
        FieldSpec::scalar("item", Side::Item, 5),
        FieldSpec::sequence("hist", Side::User, 5, 3),
    ])
    .expect("static schema");
    let config = ModelConfig {
        variant: "can".to_string(),
        repr_dim: 2,
        mlp_can: MlpCanSpec::uniform(2, 2).expect("static dims"),
        orders: 2,
        combination_independent: true,
        order_independent: true,
        head_dims: vec![8, 2],
        combinations: vec![
            ("item".to_string(), "user".to_string()),
            ("item".to_string(), "hist".to_string()),
        ],
        ..ModelConfig::default()
    };
    let example = Example {
        label: 1,
        values: vec![
            FieldValue::Scalar(3),
            FieldValue::Scalar(2),
            FieldValue::Sequence(vec![1, 4]),
        ],
    };
    (config, schema, example)
}
