//! Feature schema, dataset I/O, and the generalization split.
//!
//! Record format, one example per line:
//! `label|field=v[,v...]|field=v...` with `label` in {0,1}, fields matched to
//! the schema by name, sequence values comma-separated, ASCII decimal IDs.
//!
//! Schema file: one field per line, `name side kind cardinality max_len`.

pub mod synthetic;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, BayesOracle, SyntheticSpec};

/// Which tower a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Sequence,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Sequence => "sequence",
        }
    }
}

/// Declares one sparse ID feature.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub name: String,
    pub side: Side,
    pub kind: FieldKind,
    /// Vocabulary size; valid IDs are `[0, cardinality)`.
    pub cardinality: u32,
    /// Maximum sequence length; scalar fields have `max_len == 1`.
    pub max_len: usize,
}

impl FieldSpec {
    pub fn scalar(name: &str, side: Side, cardinality: u32) -> Self {
        FieldSpec {
            name: name.to_string(),
            side,
            kind: FieldKind::Scalar,
            cardinality,
            max_len: 1,
        }
    }

    pub fn sequence(name: &str, side: Side, cardinality: u32, max_len: usize) -> Self {
        FieldSpec {
            name: name.to_string(),
            side,
            kind: FieldKind::Sequence,
            cardinality,
            max_len,
        }
    }
}

/// Ordered collection of field specs with unique names.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    fields: Vec<FieldSpec>,
}

impl Schema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &fields {
            if f.cardinality < 1 {
                return Err(Error::Config(format!(
                    "field `{}`: cardinality must be >= 1",
                    f.name
                )));
            }
            if f.kind == FieldKind::Scalar && f.max_len != 1 {
                return Err(Error::Config(format!(
                    "field `{}`: scalar fields have max_len == 1",
                    f.name
                )));
            }
            if !seen.insert(f.name.clone()) {
                return Err(Error::Config(format!("duplicate field name `{}`", f.name)));
            }
        }
        Ok(Schema { fields })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, idx: usize) -> &FieldSpec {
        &self.fields[idx]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown field `{}`", name)))
    }

    /// Parses a schema file: one field per line,
    /// `name side kind cardinality max_len`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut fields = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected `name side kind cardinality max_len`, got `{line}`"),
                });
            }
            let side = match parts[1] {
                "user" => Side::User,
                "item" => Side::Item,
                other => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("unknown side `{other}`"),
                    })
                }
            };
            let kind = match parts[2] {
                "scalar" => FieldKind::Scalar,
                "sequence" => FieldKind::Sequence,
                other => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("unknown kind `{other}`"),
                    })
                }
            };
            let cardinality: u32 = parts[3].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad cardinality `{}`", parts[3]),
            })?;
            let max_len: usize = parts[4].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad max_len `{}`", parts[4]),
            })?;
            fields.push(FieldSpec {
                name: parts[0].to_string(),
                side,
                kind,
                cardinality,
                max_len,
            });
        }
        Schema::new(fields)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for f in &self.fields {
            writeln!(
                out,
                "{} {} {} {} {}",
                f.name,
                f.side.as_str(),
                f.kind.as_str(),
                f.cardinality,
                f.max_len
            )
            .expect("write to string");
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Per-field values of one example, indexed like the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Scalar(u32),
    Sequence(Vec<u32>),
}

impl FieldValue {
    pub fn scalar(&self) -> u32 {
        match self {
            FieldValue::Scalar(v) => *v,
            FieldValue::Sequence(_) => panic!("scalar() on a sequence value"),
        }
    }

    pub fn ids(&self) -> &[u32] {
        match self {
            FieldValue::Scalar(v) => std::slice::from_ref(v),
            FieldValue::Sequence(v) => v,
        }
    }
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub label: u8,
    pub values: Vec<FieldValue>,
}

impl Example {
    pub fn value(&self, field_idx: usize) -> &FieldValue {
        &self.values[field_idx]
    }
}

/// Immutable collection of examples plus their schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Fraction of positive labels.
    pub fn click_rate(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().map(|e| e.label as u64).sum::<u64>() as f64
            / self.examples.len() as f64
    }
}

fn validate_id(field: &FieldSpec, id: u32) -> Result<()> {
    if id >= field.cardinality {
        return Err(Error::Schema(format!(
            "field `{}`: id {} out of range (cardinality {})",
            field.name, id, field.cardinality
        )));
    }
    Ok(())
}

fn parse_line(lineno: usize, line: &str, schema: &Schema) -> Result<Example> {
    let mut parts = line.split('|');
    let label_str = parts.next().unwrap_or("");
    let label: u8 = match label_str {
        "0" => 0,
        "1" => 1,
        other => {
            return Err(Error::Parse {
                line: lineno,
                message: format!("label must be 0 or 1, got `{other}`"),
            })
        }
    };

    let mut values: Vec<Option<FieldValue>> = vec![None; schema.len()];
    for part in parts {
        let (name, raw) = part.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("field segment `{part}` is missing `=`"),
        })?;
        let idx = schema.index_of(name).map_err(|_| Error::Parse {
            line: lineno,
            message: format!("unknown field `{name}`"),
        })?;
        let field = schema.field(idx);
        let value = match field.kind {
            FieldKind::Scalar => {
                let id: u32 = raw.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("field `{name}`: bad id `{raw}`"),
                })?;
                validate_id(field, id)?;
                FieldValue::Scalar(id)
            }
            FieldKind::Sequence => {
                let mut ids = Vec::new();
                if !raw.is_empty() {
                    for tok in raw.split(',') {
                        let id: u32 = tok.parse().map_err(|_| Error::Parse {
                            line: lineno,
                            message: format!("field `{name}`: bad id `{tok}`"),
                        })?;
                        validate_id(field, id)?;
                        ids.push(id);
                    }
                }
                if ids.len() > field.max_len {
                    return Err(Error::Schema(format!(
                        "field `{}`: sequence length {} exceeds max_len {}",
                        field.name,
                        ids.len(),
                        field.max_len
                    )));
                }
                FieldValue::Sequence(ids)
            }
        };
        if values[idx].is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("field `{name}` appears twice"),
            });
        }
        values[idx] = Some(value);
    }

    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("missing field `{}`", schema.field(i).name),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Example { label, values })
}

/// Parses every record of a line-delimited file against the schema.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        examples.push(parse_line(i + 1, line, schema)?);
    }
    Ok(Dataset {
        schema: schema.clone(),
        examples,
    })
}

pub fn format_example(example: &Example, schema: &Schema) -> String {
    let mut line = example.label.to_string();
    for (i, value) in example.values.iter().enumerate() {
        line.push('|');
        line.push_str(&schema.field(i).name);
        line.push('=');
        match value {
            FieldValue::Scalar(v) => {
                let _ = write!(line, "{v}");
            }
            FieldValue::Sequence(ids) => {
                for (j, id) in ids.iter().enumerate() {
                    if j > 0 {
                        line.push(',');
                    }
                    let _ = write!(line, "{id}");
                }
            }
        }
    }
    line
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for ex in &ds.examples {
        out.push_str(&format_example(ex, &ds.schema));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Marks each test example whose (user_field, item_field) ID pair never
/// occurs in `train` (true = unseen combination).
pub fn unseen_mask(train: &Dataset, test: &Dataset, pair: (&str, &str)) -> Result<Vec<bool>> {
    let (user_field, item_field) = pair;
    let u_idx = train.schema.index_of(user_field)?;
    let i_idx = train.schema.index_of(item_field)?;

    let mut train_pairs: HashSet<(u32, u32)> = HashSet::new();
    for ex in &train.examples {
        for &u in ex.value(u_idx).ids() {
            for &m in ex.value(i_idx).ids() {
                train_pairs.insert((u, m));
            }
        }
    }

    Ok(test
        .examples
        .iter()
        .map(|ex| {
            !ex.value(u_idx).ids().iter().any(|&u| {
                ex.value(i_idx)
                    .ids()
                    .iter()
                    .any(|&m| train_pairs.contains(&(u, m)))
            })
        })
        .collect())
}

/// Partitions `test` by whether each example's (user_field, item_field) ID
/// pair occurs anywhere in `train`. Returns `(seen, unseen)`; the partition
/// is exhaustive and disjoint.
pub fn split_generalization(
    train: &Dataset,
    test: &Dataset,
    pair: (&str, &str),
) -> Result<(Dataset, Dataset)> {
    let mask = unseen_mask(train, test, pair)?;
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (ex, is_unseen) in test.examples.iter().zip(&mask) {
        if *is_unseen {
            unseen.push(ex.clone());
        } else {
            seen.push(ex.clone());
        }
    }
    Ok((
        Dataset {
            schema: test.schema.clone(),
            examples: seen,
        },
        Dataset {
            schema: test.schema.clone(),
            examples: unseen,
        },
    ))
}

/// Truncates every sequence field to its most recent `max_len` elements
/// (tail of the list), preserving order.
pub fn cutoff_sequences(ds: &Dataset, max_len: usize) -> Dataset {
    let examples = ds
        .examples
        .iter()
        .map(|ex| {
            let values = ex
                .values
                .iter()
                .map(|v| match v {
                    FieldValue::Scalar(x) => FieldValue::Scalar(*x),
                    FieldValue::Sequence(ids) => {
                        let start = ids.len().saturating_sub(max_len);
                        FieldValue::Sequence(ids[start..].to_vec())
                    }
                })
                .collect();
            Example {
                label: ex.label,
                values,
            }
        })
        .collect();
    Dataset {
        schema: ds.schema.clone(),
        examples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn demo_schema() -> Schema {
        Schema::new(vec![
            FieldSpec::scalar("u", Side::User, 100),
            FieldSpec::sequence("hist", Side::User, 100, 10),
            FieldSpec::scalar("i", Side::Item, 100),
            FieldSpec::scalar("c", Side::Item, 100),
        ])
        .unwrap()
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_the_record_format() {
        let f = write_temp("1|u=7|hist=3,5,2|i=42|c=9\n");
        let ds = load_dataset(f.path(), &demo_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        let ex = &ds.examples[0];
        assert_eq!(ex.label, 1);
        assert_eq!(ex.value(0), &FieldValue::Scalar(7));
        assert_eq!(ex.value(1), &FieldValue::Sequence(vec![3, 5, 2]));
        assert_eq!(ex.value(2), &FieldValue::Scalar(42));
        assert_eq!(ex.value(3), &FieldValue::Scalar(9));
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let f = write_temp("");
        let ds = load_dataset(f.path(), &demo_schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn id_at_cardinality_is_a_schema_error_naming_the_field() {
        let f = write_temp("0|u=100|hist=|i=1|c=1\n");
        let err = load_dataset(f.path(), &demo_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`u`") && msg.contains("100"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp("1|u=7|hist=|i=1|c=1\nnot a record\n");
        let err = load_dataset(f.path(), &demo_schema()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn round_trip_preserves_records() {
        let f = write_temp("1|u=7|hist=3,5,2|i=42|c=9\n0|u=3|hist=|i=2|c=0\n");
        let ds = load_dataset(f.path(), &demo_schema()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&ds, out.path()).unwrap();
        let reread = load_dataset(out.path(), &demo_schema()).unwrap();
        assert_eq!(ds.examples, reread.examples);
    }

    #[test]
    fn split_generalization_hand_case() {
        let schema = Schema::new(vec![
            FieldSpec::scalar("u", Side::User, 10),
            FieldSpec::scalar("i", Side::Item, 10),
        ])
        .unwrap();
        let mk = |pairs: &[(u32, u32)]| Dataset {
            schema: schema.clone(),
            examples: pairs
                .iter()
                .map(|&(u, m)| Example {
                    label: 0,
                    values: vec![FieldValue::Scalar(u), FieldValue::Scalar(m)],
                })
                .collect(),
        };
        let train = mk(&[(1, 1)]);
        let test = mk(&[(1, 1), (1, 2)]);
        let (seen, unseen) = split_generalization(&train, &test, ("u", "i")).unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(unseen.len(), 1);
        assert_eq!(unseen.examples[0].value(1), &FieldValue::Scalar(2));

        // test == train pairs -> unseen empty
        let (_, unseen2) = split_generalization(&train, &mk(&[(1, 1)]), ("u", "i")).unwrap();
        assert!(unseen2.is_empty());
    }

    #[test]
    fn split_partition_matches_brute_force_membership() {
        // Random pairs; oracle is an exhaustive scan over the train pair set.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let schema = Schema::new(vec![
            FieldSpec::scalar("u", Side::User, 20),
            FieldSpec::scalar("i", Side::Item, 20),
        ])
        .unwrap();
        let mk_random = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| Dataset {
            schema: schema.clone(),
            examples: (0..n)
                .map(|_| Example {
                    label: 0,
                    values: vec![
                        FieldValue::Scalar(rng.gen_range(0..20)),
                        FieldValue::Scalar(rng.gen_range(0..20)),
                    ],
                })
                .collect(),
        };
        let train = mk_random(&mut rng, 120);
        let test = mk_random(&mut rng, 200);
        let (seen, unseen) = split_generalization(&train, &test, ("u", "i")).unwrap();
        assert_eq!(seen.len() + unseen.len(), test.len());
        for ex in &unseen.examples {
            let pair = (ex.value(0).scalar(), ex.value(1).scalar());
            let in_train = train
                .examples
                .iter()
                .any(|t| (t.value(0).scalar(), t.value(1).scalar()) == pair);
            assert!(!in_train, "pair {pair:?} leaked into unseen split");
        }
    }

    #[test]
    fn cutoff_keeps_most_recent() {
        let schema = Schema::new(vec![FieldSpec::sequence("h", Side::User, 10, 8)]).unwrap();
        let ds = Dataset {
            schema,
            examples: vec![Example {
                label: 1,
                values: vec![FieldValue::Sequence(vec![1, 2, 3, 4])],
            }],
        };
        assert_eq!(
            cutoff_sequences(&ds, 2).examples[0].value(0),
            &FieldValue::Sequence(vec![3, 4])
        );
        assert_eq!(
            cutoff_sequences(&ds, 9).examples[0].value(0),
            &FieldValue::Sequence(vec![1, 2, 3, 4])
        );
        assert_eq!(
            cutoff_sequences(&ds, 0).examples[0].value(0),
            &FieldValue::Sequence(vec![])
        );
    }

    #[test]
    fn schema_file_round_trip() {
        let schema = demo_schema();
        let f = tempfile::NamedTempFile::new().unwrap();
        schema.save(f.path()).unwrap();
        let loaded = Schema::load(f.path()).unwrap();
        assert_eq!(loaded.len(), schema.len());
        assert_eq!(loaded.field(1).name, "hist");
        assert_eq!(loaded.field(1).max_len, 10);
    }
}
