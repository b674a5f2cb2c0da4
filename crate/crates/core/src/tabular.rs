//! Encoding of user-relationship features.
//!
//! Categorical columns become one-hot blocks with a trailing slot for
//! unseen or missing values; numeric columns are standardized with the
//! training mean and population standard deviation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DenseVector;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("cannot fit a transform on an empty training set")]
    EmptyTrainingSet,
    #[error("record {record}: column {column:?} is not in the schema")]
    UnknownColumn { record: usize, column: String },
    #[error("record {record}: column {column:?} expects a {expected} value")]
    WrongKind { record: usize, column: String, expected: &'static str },
    #[error("record {record}: column {column:?} is not finite")]
    NonFinite { record: usize, column: String },
    #[error("duplicate column {0:?} in schema")]
    DuplicateColumn(String),
    #[error("invalid schema document: {0}")]
    Parse(String),
    #[error("column order must be a permutation of 0..{0}")]
    BadPermutation(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Declared categories; values seen in training are appended.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Column {
    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Column {
            name: name.to_owned(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|c| (*c).to_owned()).collect(),
        }
    }

    pub fn numeric(name: &str) -> Self {
        Column { name: name.to_owned(), kind: ColumnKind::Numeric, categories: Vec::new() }
    }
}

/// Ordered column list; the order defines the encoded layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, TabularError> {
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TabularError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(FeatureSchema { columns })
    }

    /// Parses the TOML schema file (`[[columns]]` tables with `name`, `kind`
    /// and optional `categories`).
    pub fn from_toml(doc: &str) -> Result<Self, TabularError> {
        let raw: FeatureSchema = toml::from_str(doc).map_err(|e| TabularError::Parse(e.to_string()))?;
        FeatureSchema::new(raw.columns)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Checks that every present key is a schema column of the right kind.
    pub fn validate(&self, record: &TabularRecord, record_index: usize) -> Result<(), TabularError> {
        for (key, value) in &record.values {
            let col = self
                .column(key)
                .ok_or_else(|| TabularError::UnknownColumn { record: record_index, column: key.clone() })?;
            match (col.kind, value) {
                (ColumnKind::Categorical, FeatureValue::Category(_)) => {}
                (ColumnKind::Numeric, FeatureValue::Number(x)) if !x.is_finite() => {
                    return Err(TabularError::NonFinite { record: record_index, column: key.clone() })
                }
                (ColumnKind::Numeric, FeatureValue::Number(_)) => {}
                (kind, _) => {
                    return Err(TabularError::WrongKind {
                        record: record_index,
                        column: key.clone(),
                        expected: match kind {
                            ColumnKind::Categorical => "categorical",
                            ColumnKind::Numeric => "numeric",
                        },
                    })
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Category(String),
}

/// One user's feature values; absent keys are missing values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabularRecord {
    pub values: BTreeMap<String, FeatureValue>,
}

impl TabularRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_category(mut self, column: &str, value: &str) -> Self {
        self.values.insert(column.to_owned(), FeatureValue::Category(value.to_owned()));
        self
    }

    pub fn with_number(mut self, column: &str, value: f64) -> Self {
        self.values.insert(column.to_owned(), FeatureValue::Number(value));
        self
    }

    pub fn get(&self, column: &str) -> Option<&FeatureValue> {
        self.values.get(column)
    }

    /// Reads a JSON object; `null` members are treated as missing.
    pub fn from_json(value: &serde_json::Value) -> Option<Self> {
        let obj = value.as_object()?;
        let mut values = BTreeMap::new();
        for (k, v) in obj {
            let fv = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::Number(n) => FeatureValue::Number(n.as_f64()?),
                serde_json::Value::String(s) => FeatureValue::Category(s.clone()),
                serde_json::Value::Bool(b) => FeatureValue::Category(b.to_string()),
                _ => return None,
            };
            values.insert(k.clone(), fv);
        }
        Some(TabularRecord { values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Categorical { name: String, categories: Vec<String>, offset: usize },
    Numeric { name: String, mean: f64, std: f64, offset: usize },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Categorical { name, .. } | ColumnEncoding::Numeric { name, .. } => name,
        }
    }

    pub fn offset(&self) -> usize {
        match self {
            ColumnEncoding::Categorical { offset, .. } | ColumnEncoding::Numeric { offset, .. } => *offset,
        }
    }

    /// Output slots used by this column (categories plus the unknown slot).
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Categorical { categories, .. } => categories.len() + 1,
            ColumnEncoding::Numeric { .. } => 1,
        }
    }
}

/// Learned encoding parameters; immutable once fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    columns: Vec<ColumnEncoding>,
    dimension: usize,
}

impl FittedTransform {
    pub fn fit(schema: &FeatureSchema, records: &[TabularRecord]) -> Result<Self, TabularError> {
        if records.is_empty() {
            return Err(TabularError::EmptyTrainingSet);
        }
        for (i, r) in records.iter().enumerate() {
            schema.validate(r, i)?;
        }
        let mut columns = Vec::with_capacity(schema.columns.len());
        let mut offset = 0;
        for col in &schema.columns {
            let enc = match col.kind {
                ColumnKind::Categorical => {
                    let mut categories = col.categories.clone();
                    for r in records {
                        if let Some(FeatureValue::Category(v)) = r.get(&col.name) {
                            if !categories.contains(v) {
                                categories.push(v.clone());
                            }
                        }
                    }
                    ColumnEncoding::Categorical { name: col.name.clone(), categories, offset }
                }
                ColumnKind::Numeric => {
                    let xs: Vec<f64> = records
                        .iter()
                        .filter_map(|r| match r.get(&col.name) {
                            Some(FeatureValue::Number(x)) => Some(*x),
                            _ => None,
                        })
                        .collect();
                    let (mean, std) = mean_and_population_std(&xs);
                    ColumnEncoding::Numeric { name: col.name.clone(), mean, std, offset }
                }
            };
            offset += enc.width();
            columns.push(enc);
        }
        Ok(FittedTransform { columns, dimension: offset })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn columns(&self) -> &[ColumnEncoding] {
        &self.columns
    }

    /// Encodes a schema-conforming record. Missing or unseen categories go to
    /// the unknown slot; missing numerics encode as 0 (the training mean).
    /// A value of the wrong kind is treated as missing.
    pub fn transform(&self, record: &TabularRecord) -> DenseVector {
        let mut out = vec![0.0; self.dimension];
        for enc in &self.columns {
            match enc {
                ColumnEncoding::Categorical { name, categories, offset } => {
                    let slot = match record.get(name) {
                        Some(FeatureValue::Category(v)) => {
                            categories.iter().position(|c| c == v).unwrap_or(categories.len())
                        }
                        _ => categories.len(),
                    };
                    out[offset + slot] = 1.0;
                }
                ColumnEncoding::Numeric { name, mean, std, offset } => {
                    if let Some(FeatureValue::Number(x)) = record.get(name) {
                        out[*offset] = (x - mean) / std;
                    }
                }
            }
        }
        out
    }

    /// Reorders columns (`order[i]` is the old position of new column `i`),
    /// returning the new transform and, for every new output slot, the old
    /// output slot it reads from.
    pub fn reorder(&self, order: &[usize]) -> Result<(FittedTransform, Vec<usize>), TabularError> {
        let n = self.columns.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(TabularError::BadPermutation(n));
        }
        let mut columns = Vec::with_capacity(n);
        let mut slot_map = Vec::with_capacity(self.dimension);
        let mut offset = 0;
        for &old in order {
            let mut enc = self.columns[old].clone();
            let old_offset = enc.offset();
            slot_map.extend(old_offset..old_offset + enc.width());
            match &mut enc {
                ColumnEncoding::Categorical { offset: o, .. } | ColumnEncoding::Numeric { offset: o, .. } => {
                    *o = offset
                }
            }
            offset += enc.width();
            columns.push(enc);
        }
        Ok((FittedTransform { columns, dimension: offset }, slot_map))
    }
}

/// Mean and population standard deviation; degenerate or empty columns get std 1.
fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 0.0 && std.is_finite() {
        (mean, std)
    } else {
        (mean, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_schema() -> FeatureSchema {
        FeatureSchema::new(vec![Column::numeric("x")]).unwrap()
    }

    fn nums(xs: &[f64]) -> Vec<TabularRecord> {
        xs.iter().map(|x| TabularRecord::new().with_number("x", *x)).collect()
    }

    #[test]
    fn population_std_is_used() {
        let t = FittedTransform::fit(&numeric_schema(), &nums(&[1.0, 2.0, 3.0])).unwrap();
        match &t.columns()[0] {
            ColumnEncoding::Numeric { mean, std, .. } => {
                assert_eq!(*mean, 2.0);
                assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
                assert!((std - 0.8165).abs() < 1e-4);
            }
            _ => unreachable!(),
        }
        let v = t.transform(&TabularRecord::new().with_number("x", 3.0));
        assert!((v[0] - 1.2247).abs() < 1e-4);
        assert_eq!(t.transform(&TabularRecord::new()), vec![0.0]);
    }

    #[test]
    fn degenerate_column_gets_unit_std() {
        let t = FittedTransform::fit(&numeric_schema(), &nums(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(t.columns()[0], ColumnEncoding::Numeric { name: "x".into(), mean: 5.0, std: 1.0, offset: 0 });
    }

    #[test]
    fn categorical_block_has_unknown_slot() {
        let schema = FeatureSchema::new(vec![Column::categorical("msg", &[])]).unwrap();
        let recs = vec![
            TabularRecord::new().with_category("msg", "visit_reminder"),
            TabularRecord::new().with_category("msg", "contract_sent"),
        ];
        let t = FittedTransform::fit(&schema, &recs).unwrap();
        assert_eq!(t.dimension(), 3);
        assert_eq!(t.transform(&recs[0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.transform(&TabularRecord::new().with_category("msg", "payment_ok")), vec![0.0, 0.0, 1.0]);
        assert_eq!(t.transform(&TabularRecord::new()), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn fit_rejects_bad_records() {
        assert!(matches!(FittedTransform::fit(&numeric_schema(), &[]), Err(TabularError::EmptyTrainingSet)));
        let bad = vec![TabularRecord::new().with_number("y", 1.0)];
        assert!(matches!(FittedTransform::fit(&numeric_schema(), &bad), Err(TabularError::UnknownColumn { .. })));
        let bad = vec![TabularRecord::new().with_category("x", "a")];
        assert!(matches!(FittedTransform::fit(&numeric_schema(), &bad), Err(TabularError::WrongKind { .. })));
        let bad = vec![TabularRecord::new().with_number("x", f64::NAN)];
        assert!(matches!(FittedTransform::fit(&numeric_schema(), &bad), Err(TabularError::NonFinite { .. })));
    }

    #[test]
    fn schema_toml_round_trip() {
        let schema = FeatureSchema::new(vec![Column::categorical("a", &["x", "y"]), Column::numeric("b")]).unwrap();
        assert_eq!(FeatureSchema::from_toml(&schema.to_toml()).unwrap(), schema);
        let dup = "[[columns]]\nname='a'\nkind='numeric'\n[[columns]]\nname='a'\nkind='numeric'\n";
        assert!(matches!(FeatureSchema::from_toml(dup), Err(TabularError::DuplicateColumn(_))));
    }

    #[test]
    fn reorder_permutes_layout() {
        let schema = FeatureSchema::new(vec![Column::categorical("a", &["x"]), Column::numeric("b")]).unwrap();
        let recs = vec![
            TabularRecord::new().with_category("a", "x").with_number("b", 1.0),
            TabularRecord::new().with_number("b", 3.0),
        ];
        let t = FittedTransform::fit(&schema, &recs).unwrap();
        let (t2, slots) = t.reorder(&[1, 0]).unwrap();
        assert_eq!(slots, vec![2, 0, 1]);
        for r in &recs {
            let old = t.transform(r);
            let new = t2.transform(r);
            for (i, s) in slots.iter().enumerate() {
                assert_eq!(new[i], old[*s]);
            }
        }
        assert!(t.reorder(&[0, 0]).is_err());
    }
}
