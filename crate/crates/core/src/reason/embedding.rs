//! Precomputed embedding tables.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! b"TEMB"            magic
//! u32                format version (1)
//! u64                row count
//! u32                dimension
//! row × count:
//!   u32              id length in bytes
//!   [u8]             id, UTF-8
//!   f32 × dimension  vector
//! ```
//!
//! The text debug format has a `count dimension` header line followed by
//! one `id v1 v2 …` line per row (ids contain no whitespace).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ReasonError;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"TEMB";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    ids: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable { dimension, ids: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, id: &str, vector: &[f32]) -> Result<(), ReasonError> {
        if vector.len() != self.dimension {
            return Err(ReasonError::DimensionMismatch { expected: self.dimension, found: vector.len() });
        }
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(ReasonError::BadEmbeddingFile(format!("invalid id {id:?}")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(ReasonError::BadEmbeddingFile(format!("non-finite value for {id:?}")));
        }
        if self.index.insert(id.to_owned(), self.ids.len()).is_some() {
            return Err(ReasonError::BadEmbeddingFile(format!("duplicate id {id:?}")));
        }
        self.ids.push(id.to_owned());
        self.values.extend_from_slice(vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| &self.values[i * self.dimension..(i + 1) * self.dimension])
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for v in &self.values[i * self.dimension..(i + 1) * self.dimension] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self, ReasonError> {
        let mut r = BufReader::new(r);
        let truncated = |_| ReasonError::BadEmbeddingFile("truncated file".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(ReasonError::BadEmbeddingFile("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(truncated)?;
        let version = u32::from_le_bytes(b4);
        if version != EMBEDDING_VERSION {
            return Err(ReasonError::BadEmbeddingFile(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b8).map_err(truncated)?;
        let count = u64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(truncated)?;
        let dimension = u32::from_le_bytes(b4) as usize;
        let mut table = EmbeddingTable::new(dimension);
        let mut vector = vec![0f32; dimension];
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(truncated)?;
            let len = u32::from_le_bytes(b4) as usize;
            if len > 4096 {
                return Err(ReasonError::BadEmbeddingFile(format!("id length {len} is implausible")));
            }
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(truncated)?;
            let id = String::from_utf8(id).map_err(|_| ReasonError::BadEmbeddingFile("id is not UTF-8".into()))?;
            for v in vector.iter_mut() {
                r.read_exact(&mut b4).map_err(truncated)?;
                *v = f32::from_le_bytes(b4);
            }
            table.insert(&id, &vector)?;
        }
        if r.read(&mut [0u8; 1]).map_err(ReasonError::Io)? != 0 {
            return Err(ReasonError::BadEmbeddingFile("trailing bytes".into()));
        }
        Ok(table)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.ids.len(), self.dimension)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in &self.values[i * self.dimension..(i + 1) * self.dimension] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self, ReasonError> {
        let mut lines = BufReader::new(r).lines();
        let bad = |line: usize, m: &str| ReasonError::BadEmbeddingFile(format!("line {line}: {m}"));
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?.map_err(ReasonError::Io)?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(dimension)), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(1, "expected `count dimension`"));
        };
        let mut table = EmbeddingTable::new(dimension);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(ReasonError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().ok_or_else(|| bad(i + 2, "missing id"))?;
            let vector: Vec<f32> =
                fields.map(str::parse::<f32>).collect::<Result<_, _>>().map_err(|_| bad(i + 2, "invalid number"))?;
            table.insert(id, &vector).map_err(|e| bad(i + 2, &e.to_string()))?;
        }
        if table.len() != count {
            return Err(ReasonError::BadEmbeddingFile(format!("header says {count} rows, found {}", table.len())));
        }
        Ok(table)
    }

    /// Reads either format, chosen by the magic bytes.
    pub fn load(path: &Path) -> Result<Self, ReasonError> {
        let mut f = BufReader::new(File::open(path)?);
        let is_binary = f.fill_buf()?.starts_with(EMBEDDING_MAGIC);
        if is_binary {
            Self::read_binary(f)
        } else {
            Self::read_text(f)
        }
    }

    pub fn save_binary(&self, path: &Path) -> Result<(), ReasonError> {
        Ok(self.write_binary(BufWriter::new(File::create(path)?))?)
    }

    pub fn save_text(&self, path: &Path) -> Result<(), ReasonError> {
        Ok(self.write_text(BufWriter::new(File::create(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(3);
        t.insert("t-1", &[0.1, -2.5, 3.0e-8]).unwrap();
        t.insert("t-2", &[1.0, 0.0, f32::MIN_POSITIVE]).unwrap();
        t
    }

    #[test]
    fn binary_and_text_round_trip() {
        let t = table();
        let mut bin = Vec::new();
        t.write_binary(&mut bin).unwrap();
        assert_eq!(EmbeddingTable::read_binary(bin.as_slice()).unwrap(), t);
        let mut txt = Vec::new();
        t.write_text(&mut txt).unwrap();
        assert_eq!(EmbeddingTable::read_text(txt.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_truncation_duplicates_and_bad_dims() {
        let mut bin = Vec::new();
        table().write_binary(&mut bin).unwrap();
        bin.truncate(bin.len() - 2);
        assert!(matches!(EmbeddingTable::read_binary(bin.as_slice()), Err(ReasonError::BadEmbeddingFile(_))));
        let mut t = table();
        assert!(t.insert("t-1", &[0.0; 3]).is_err());
        assert!(matches!(t.insert("t-3", &[0.0; 2]), Err(ReasonError::DimensionMismatch { .. })));
        assert!(EmbeddingTable::read_text("1 2\na 1\n".as_bytes()).is_err());
        assert!(EmbeddingTable::read_text("2 1\na 1\n".as_bytes()).is_err());
    }
}
