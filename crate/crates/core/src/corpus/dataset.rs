//! Ticket dataset as CSV.
//!
//! Columns, in order: `id`, `timestamp` (Unix seconds), `reason`,
//! `department`, `message`, then one column per profile feature named
//! `num:<feature>` or `cat:<feature>`. An empty profile cell is a missing
//! value.

use std::io::{Read, Write};

use crate::tabular::{ColumnKind, FeatureSchema, FeatureValue, TabularRecord};

use super::generate::Ticket;
use super::CorpusError;

const FIXED: [&str; 5] = ["id", "timestamp", "reason", "department", "message"];

pub fn write_dataset<W: Write>(tickets: &[Ticket], schema: &FeatureSchema, writer: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED.iter().map(|s| (*s).to_owned()).collect();
    for c in &schema.columns {
        let prefix = match c.kind {
            ColumnKind::Numeric => "num",
            ColumnKind::Categorical => "cat",
        };
        header.push(format!("{prefix}:{}", c.name));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for t in tickets {
        row.clear();
        row.extend([t.id.clone(), t.timestamp.to_string(), t.reason.clone(), t.department.clone(), t.message.clone()]);
        for c in &schema.columns {
            row.push(match t.profile.get(&c.name) {
                Some(FeatureValue::Number(x)) => x.to_string(),
                Some(FeatureValue::Category(s)) => s.clone(),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader; holds one row at a time.
pub struct DatasetReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    profile: Vec<(ColumnKind, String)>,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(reader: R) -> Result<Self, CorpusError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = r.headers()?.clone();
        let malformed = |message: String| CorpusError::Malformed { line: 1, message };
        for (i, want) in FIXED.iter().enumerate() {
            if headers.get(i) != Some(want) {
                return Err(malformed(format!("column {} must be {want:?}", i + 1)));
            }
        }
        let mut profile = Vec::new();
        for h in headers.iter().skip(FIXED.len()) {
            let (kind, name) = match h.split_once(':') {
                Some(("num", n)) => (ColumnKind::Numeric, n),
                Some(("cat", n)) => (ColumnKind::Categorical, n),
                _ => return Err(malformed(format!("profile column {h:?} needs a num: or cat: prefix"))),
            };
            profile.push((kind, name.to_owned()));
        }
        Ok(DatasetReader { records: r.into_records(), profile })
    }

    /// Feature names in file order.
    pub fn profile_columns(&self) -> impl Iterator<Item = &str> {
        self.profile.iter().map(|(_, n)| n.as_str())
    }

    fn parse(&self, rec: &csv::StringRecord) -> Result<Ticket, CorpusError> {
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| CorpusError::Malformed { line, message };
        let timestamp = rec[1].parse().map_err(|_| bad(format!("invalid timestamp {:?}", &rec[1])))?;
        let mut profile = TabularRecord::new();
        for (i, (kind, name)) in self.profile.iter().enumerate() {
            let cell = &rec[FIXED.len() + i];
            if cell.is_empty() {
                continue;
            }
            profile = match kind {
                ColumnKind::Numeric => {
                    let x: f64 = cell.parse().map_err(|_| bad(format!("{name}: invalid number {cell:?}")))?;
                    profile.with_number(name, x)
                }
                ColumnKind::Categorical => profile.with_category(name, cell),
            };
        }
        if rec[0].is_empty() {
            return Err(bad("empty id".into()));
        }
        Ok(Ticket {
            id: rec[0].to_owned(),
            timestamp,
            reason: rec[2].to_owned(),
            department: rec[3].to_owned(),
            message: rec[4].to_owned(),
            profile,
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Ticket, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(rec) => rec,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Some(Err(CorpusError::Malformed { line, message: e.to_string() }));
            }
        };
        Some(self.parse(&rec))
    }
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<Ticket>, CorpusError> {
    DatasetReader::new(reader)?.collect()
}
