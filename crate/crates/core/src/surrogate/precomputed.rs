//! Externally computed embeddings (e.g. from a pretrained backbone).
//!
//! File layout (CSV, no quoting needed):
//!
//! ```text
//! dim,count
//! 3,2
//! car_0001,0.12,0.5,-1.0
//! car_0002,0.33,0.1,0.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedFeatureTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl PrecomputedFeatureTable {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let mut map = BTreeMap::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "row {id:?} has {} features, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("features of row {id:?}")));
            }
            if map.insert(id.clone(), v).is_some() {
                return Err(Error::invalid(format!("duplicate row id {id:?}")));
            }
        }
        Ok(Self { dim, rows: map })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::data(path, e.to_string()))?;
        let mut records = reader.records();
        let mut next = |what: &str| -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| Error::data(path, format!("missing {what}")))?
                .map_err(|e| Error::data(path, e.to_string()))
        };
        let header = next("header row")?;
        if header.len() != 2 || &header[0] != "dim" || &header[1] != "count" {
            return Err(Error::data(path, "first row must be `dim,count`"));
        }
        let sizes = next("size row")?;
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::data(path, format!("bad size {s:?}")))
        };
        if sizes.len() != 2 {
            return Err(Error::data(path, "second row must hold two integers"));
        }
        let (dim, count) = (parse_usize(&sizes[0])?, parse_usize(&sizes[1])?);
        let mut rows = Vec::with_capacity(count);
        for (line, rec) in records.enumerate() {
            let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
            if rec.len() != dim + 1 {
                return Err(Error::data(
                    path,
                    format!("data row {}: expected {} fields, got {}", line + 1, dim + 1, rec.len()),
                ));
            }
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::data(path, format!("data row {}: bad number {s:?}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((rec[0].to_string(), vals));
        }
        if rows.len() != count {
            return Err(Error::data(
                path,
                format!("header declares {count} rows, found {}", rows.len()),
            ));
        }
        Self::new(dim, rows).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("dim,count\n{},{}\n", self.dim, self.rows.len());
        for (id, v) in &self.rows {
            out.push_str(id);
            for x in v {
                out.push(',');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = PrecomputedFeatureTable::new(2, vec![("a".into(), vec![0.1, -2.5]), ("b".into(), vec![1e-17, 3.0])])
            .unwrap();
        let p = dir.path().join("f.csv");
        t.save(&p).unwrap();
        assert_eq!(PrecomputedFeatureTable::load(&p).unwrap(), t);

        std::fs::write(&p, "dim,count\n2,1\na,1.0\n").unwrap();
        assert!(PrecomputedFeatureTable::load(&p).is_err());
        std::fs::write(&p, "dim,count\n2,2\na,1.0,2.0\n").unwrap();
        assert!(PrecomputedFeatureTable::load(&p).is_err());
        assert!(PrecomputedFeatureTable::new(2, vec![("a".into(), vec![1.0])]).is_err());
        assert!(PrecomputedFeatureTable::new(1, vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]).is_err());
    }
}
