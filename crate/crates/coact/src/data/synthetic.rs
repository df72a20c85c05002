//! Planted-interaction synthetic data generator with a closed-form Bayes
//! oracle.
//!
//! Users and items map onto `g` buckets (`id mod g`). A hidden sign table `R`
//! decides each bucket pair's click probability `sigmoid(beta * R[r,c])`.
//! `R` is doubly balanced (every row and every column holds exactly g/2
//! entries of each sign), so every single ID's marginal click rate equals the
//! global mean: there is no unary signal, only co-action signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Example, FieldSpec, FieldValue, Schema, Side};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

/// Parameters of the generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_users: u32,
    pub n_items: u32,
    /// Bucket count g; even (or 1) so the sign table can be balanced.
    pub buckets: u32,
    /// Interaction strength beta.
    pub strength: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Click-history length per example; 0 disables the history field.
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 2000,
            n_items: 1000,
            buckets: 8,
            strength: 3.0,
            n_train: 50_000,
            n_test: 10_000,
            seq_len: 10,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::Config("n_users and n_items must be positive".into()));
        }
        if self.buckets == 0 || self.buckets > self.n_users.min(self.n_items) {
            return Err(Error::Config(format!(
                "buckets must satisfy 1 <= g <= min(n_users, n_items), got {}",
                self.buckets
            )));
        }
        if self.buckets > 1 && self.buckets % 2 != 0 {
            return Err(Error::Config(
                "buckets must be even (or 1) so the sign table can be balanced".into(),
            ));
        }
        if !self.strength.is_finite() {
            return Err(Error::Config("strength must be finite".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    /// Schema of the generated datasets: `user`, `item`, and (when
    /// `seq_len > 0`) a `hist` click-history sequence of item IDs.
    pub fn schema(&self) -> Schema {
        let mut fields = vec![
            FieldSpec::scalar("user", Side::User, self.n_users),
            FieldSpec::scalar("item", Side::Item, self.n_items),
        ];
        if self.seq_len > 0 {
            fields.push(FieldSpec::sequence(
                "hist",
                Side::User,
                self.n_items,
                self.seq_len,
            ));
        }
        Schema::new(fields).expect("generator schema is well-formed")
    }
}

/// Ground truth behind a generated dataset: the sign table and strength.
#[derive(Debug, Clone)]
pub struct BayesOracle {
    /// g x g sign entries in {+1, -1}, row-major; rows are user buckets,
    /// columns item buckets.
    signs: Vec<i8>,
    g: u32,
    beta: f64,
    n_users: u32,
    n_items: u32,
}

impl BayesOracle {
    pub fn buckets(&self) -> u32 {
        self.g
    }

    pub fn sign(&self, user_bucket: u32, item_bucket: u32) -> i8 {
        self.signs[(user_bucket * self.g + item_bucket) as usize]
    }

    /// True click probability of a (user, item) pair.
    pub fn click_prob(&self, user: u32, item: u32) -> f64 {
        let s = self.sign(user % self.g, item % self.g) as f64;
        sigmoid(self.beta * s)
    }

    /// Mass of each (row, col) bucket cell under uniform ID sampling.
    fn cell_mass(&self, r: u32, c: u32) -> f64 {
        let rows = ids_in_bucket(self.n_users, self.g, r) as f64 / self.n_users as f64;
        let cols = ids_in_bucket(self.n_items, self.g, c) as f64 / self.n_items as f64;
        rows * cols
    }

    /// Probability-weighted fraction of +1 cells.
    pub fn positive_mass(&self) -> f64 {
        let mut q = 0.0;
        for r in 0..self.g {
            for c in 0..self.g {
                if self.sign(r, c) > 0 {
                    q += self.cell_mass(r, c);
                }
            }
        }
        q
    }

    /// Expected click rate over the whole population.
    pub fn global_mean(&self) -> f64 {
        let q = self.positive_mass();
        q * sigmoid(self.beta) + (1.0 - q) * sigmoid(-self.beta)
    }

    /// AUC of the Bayes-optimal scorer (score = true click probability),
    /// in closed form over the four (bucket-sign, label) mass combinations.
    pub fn bayes_auc(&self) -> f64 {
        let q = self.positive_mass();
        let p_hi = sigmoid(self.beta);
        let p_lo = sigmoid(-self.beta);
        if (p_hi - p_lo).abs() < 1e-15 {
            return 0.5; // one score value; every pair ties
        }
        let p1 = q * p_hi + (1.0 - q) * p_lo;
        let p0 = 1.0 - p1;
        // Score distribution conditioned on each label.
        let hi_given_pos = q * p_hi / p1;
        let lo_given_pos = (1.0 - q) * p_lo / p1;
        let hi_given_neg = q * (1.0 - p_hi) / p0;
        let lo_given_neg = (1.0 - q) * (1.0 - p_lo) / p0;
        let (win, tie) = if p_hi > p_lo {
            (
                hi_given_pos * lo_given_neg,
                hi_given_pos * hi_given_neg + lo_given_pos * lo_given_neg,
            )
        } else {
            (
                lo_given_pos * hi_given_neg,
                hi_given_pos * hi_given_neg + lo_given_pos * lo_given_neg,
            )
        };
        win + 0.5 * tie
    }
}

fn ids_in_bucket(cardinality: u32, g: u32, bucket: u32) -> u32 {
    // Count of ids in [0, cardinality) with id % g == bucket.
    if bucket >= cardinality {
        return 0;
    }
    (cardinality - 1 - bucket) / g + 1
}

/// Doubly balanced random sign table: a balanced circulant base under
/// seeded row and column permutations. Every row and column keeps exactly
/// g/2 entries of each sign, and each cell is +1 or -1 with equal
/// probability marginally.
fn draw_sign_table(g: u32, rng: &mut ChaCha8Rng) -> Vec<i8> {
    let gs = g as usize;
    if g == 1 {
        return vec![if rng.gen::<bool>() { 1 } else { -1 }];
    }
    let mut rows: Vec<usize> = (0..gs).collect();
    let mut cols: Vec<usize> = (0..gs).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    let mut signs = vec![0i8; gs * gs];
    for r in 0..gs {
        for c in 0..gs {
            let base = if (cols[c] + gs - rows[r]) % gs < gs / 2 {
                1
            } else {
                -1
            };
            signs[r * gs + c] = base;
        }
    }
    signs
}

fn draw_examples(
    spec: &SyntheticSpec,
    oracle: &BayesOracle,
    schema: &Schema,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let g = spec.buckets;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let user = rng.gen_range(0..spec.n_users);
        let item = rng.gen_range(0..spec.n_items);
        let p = oracle.click_prob(user, item);
        let label = u8::from(rng.gen::<f64>() < p);

        let mut values = vec![FieldValue::Scalar(user), FieldValue::Scalar(item)];
        if spec.seq_len > 0 {
            let row = user % g;
            let positive: Vec<u32> = (0..g).filter(|&c| oracle.sign(row, c) > 0).collect();
            let mut hist = Vec::with_capacity(spec.seq_len);
            for _ in 0..spec.seq_len {
                let id = if positive.is_empty() {
                    rng.gen_range(0..spec.n_items)
                } else {
                    let bucket = positive[rng.gen_range(0..positive.len())];
                    let count = ids_in_bucket(spec.n_items, g, bucket);
                    bucket + g * rng.gen_range(0..count)
                };
                hist.push(id);
            }
            values.push(FieldValue::Sequence(hist));
        }
        examples.push(Example { label, values });
    }
    Dataset {
        schema: schema.clone(),
        examples,
    }
}

/// Draws the sign table and both datasets deterministically from the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, BayesOracle)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signs = draw_sign_table(spec.buckets, &mut rng);
    let oracle = BayesOracle {
        signs,
        g: spec.buckets,
        beta: spec.strength,
        n_users: spec.n_users,
        n_items: spec.n_items,
    };
    let schema = spec.schema();
    let train = draw_examples(spec, &oracle, &schema, spec.n_train, &mut rng);
    let test = draw_examples(spec, &oracle, &schema, spec.n_test, &mut rng);
    Ok((train, test, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 64,
            n_items: 32,
            buckets: 4,
            strength: 2.0,
            n_train: 400,
            n_test: 100,
            seq_len: 3,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (tr1, te1, _) = generate_synthetic(&spec).unwrap();
        let (tr2, te2, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(tr1.examples, tr2.examples);
        assert_eq!(te1.examples, te2.examples);
    }

    #[test]
    fn zero_strength_means_no_signal() {
        let spec = SyntheticSpec {
            strength: 0.0,
            n_train: 4000,
            ..small_spec()
        };
        let (train, _, oracle) = generate_synthetic(&spec).unwrap();
        assert_eq!(oracle.bayes_auc(), 0.5);
        assert!((train.click_rate() - 0.5).abs() < 0.05);
    }

    #[test]
    fn single_bucket_is_degenerate() {
        let spec = SyntheticSpec {
            buckets: 1,
            ..small_spec()
        };
        let (_, _, oracle) = generate_synthetic(&spec).unwrap();
        // One bucket: every pair shares a click probability.
        assert_eq!(oracle.bayes_auc(), 0.5);
    }

    #[test]
    fn sign_table_is_doubly_balanced() {
        let spec = SyntheticSpec::default();
        let (_, _, oracle) = generate_synthetic(&spec).unwrap();
        let g = oracle.buckets();
        for r in 0..g {
            let row_sum: i32 = (0..g).map(|c| oracle.sign(r, c) as i32).sum();
            assert_eq!(row_sum, 0, "row {r} unbalanced");
        }
        for c in 0..g {
            let col_sum: i32 = (0..g).map(|r| oracle.sign(r, c) as i32).sum();
            assert_eq!(col_sum, 0, "column {c} unbalanced");
        }
    }

    #[test]
    fn default_spec_bayes_auc_is_sigmoid_beta() {
        // Balanced table with divisible cardinalities: the closed form
        // collapses to sigmoid(beta) ~= 0.9526.
        let spec = SyntheticSpec::default();
        let (_, _, oracle) = generate_synthetic(&spec).unwrap();
        let auc = oracle.bayes_auc();
        assert!((auc - sigmoid(3.0)).abs() < 1e-12, "bayes auc {auc}");
        assert!((auc - 0.95).abs() < 0.01);
        assert!((oracle.global_mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_empirical_click_rate_tracks_global_mean() {
        let spec = SyntheticSpec::default();
        let (train, test, oracle) = generate_synthetic(&spec).unwrap();
        assert!((train.click_rate() - oracle.global_mean()).abs() < 0.02);
        assert!((test.click_rate() - oracle.global_mean()).abs() < 0.02);
    }

    #[test]
    fn history_items_come_from_positive_buckets() {
        let spec = small_spec();
        let (train, _, oracle) = generate_synthetic(&spec).unwrap();
        for ex in train.examples.iter().take(50) {
            let user = ex.value(0).scalar();
            let row = user % spec.buckets;
            for &h in ex.value(2).ids() {
                assert!(oracle.sign(row, h % spec.buckets) > 0);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec();
        spec.buckets = 3; // odd, > 1
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.buckets = 100; // > min(n_users, n_items)
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.strength = f64::NAN;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }
}
