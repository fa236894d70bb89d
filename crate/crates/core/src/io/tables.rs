//! Comma-separated output tables.
//!
//! Every table starts with one comment line
//!
//! ```text
//! # <title>; units: <units>; config: <16 hex digits>
//! ```
//!
//! followed by a header row and one line per record. Floats are written in
//! shortest round-trip form, booleans as `true`/`false`.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::align::MatchRecord;
use crate::error::{Error, FormatError, Result};

pub const MATCH_COLUMNS: [&str; 8] =
    ["latent", "enc_counterpart", "dec_counterpart", "cos_enc", "cos_dec", "max_cos_enc", "max_cos_dec", "shared"];

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub units: String,
    pub config_hash: String,
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(
        title: impl Into<String>,
        columns: &[&str],
        units: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            units: units.into(),
            config_hash: config_hash.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Panics if the row length differs from the column count.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row arity in table {:?}", self.title);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}; units: {}; config: {}\n", self.title, self.units, self.config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.columns).expect("in-memory write");
            for row in &self.rows {
                w.write_record(row.iter().map(|c| c.to_string())).expect("in-memory write");
            }
            w.flush().expect("in-memory write");
        }
        String::from_utf8(out).expect("utf-8 cells")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Header and raw string rows of a table file, comment lines dropped.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let line_err = |e: csv::Error| FormatError::Line {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let header = r.headers().map_err(line_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(line_err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn match_table(records: &[MatchRecord], config_hash: &str) -> Table {
    let mut t = Table::new("match table", &MATCH_COLUMNS, "latent indices; cosine similarity", config_hash);
    for r in records {
        t.push(vec![
            r.latent.into(),
            r.enc_counterpart.into(),
            r.dec_counterpart.into(),
            r.cos_enc.into(),
            r.cos_dec.into(),
            r.max_cos_enc.into(),
            r.max_cos_dec.into(),
            r.shared.into(),
        ]);
    }
    t
}

pub fn parse_match_table(text: &str) -> Result<Vec<MatchRecord>> {
    let (header, rows) = parse_table(text)?;
    if header != MATCH_COLUMNS {
        return Err(FormatError::Layout(format!("match table header {header:?}")).into());
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        // header is line 2 after the comment
        let line = i + 3;
        let bad = |what: &str| Error::from(FormatError::Line { line, message: format!("bad {what}") });
        let idx = |k: usize| row[k].parse::<usize>().map_err(|_| bad(MATCH_COLUMNS[k]));
        let real = |k: usize| row[k].parse::<f64>().map_err(|_| bad(MATCH_COLUMNS[k]));
        let rec = MatchRecord {
            latent: idx(0)?,
            enc_counterpart: idx(1)?,
            dec_counterpart: idx(2)?,
            cos_enc: real(3)?,
            cos_dec: real(4)?,
            max_cos_enc: real(5)?,
            max_cos_dec: real(6)?,
            shared: row[7].parse().map_err(|_| bad("shared"))?,
        };
        if rec.latent != i {
            return Err(bad("latent order"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_match_table(path: impl AsRef<Path>, records: &[MatchRecord], config_hash: &str) -> Result<()> {
    match_table(records, config_hash).write(path)
}

pub fn read_match_table(path: impl AsRef<Path>) -> Result<Vec<MatchRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_match_table(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: usize, c: f64, shared: bool) -> MatchRecord {
        MatchRecord {
            latent: i,
            enc_counterpart: i + 1,
            dec_counterpart: i,
            cos_enc: c,
            cos_dec: -c / 3.0,
            max_cos_enc: 1.0,
            max_cos_dec: 0.1 + 0.2,
            shared,
        }
    }

    #[test]
    fn layout() {
        let t = match_table(&[rec(0, 0.5, true)], "abcd");
        assert_eq!(
            t.to_csv(),
            "# match table; units: latent indices; cosine similarity; config: abcd\n\
             latent,enc_counterpart,dec_counterpart,cos_enc,cos_dec,max_cos_enc,max_cos_dec,shared\n\
             0,1,0,0.5,-0.16666666666666666,1,0.30000000000000004,true\n"
        );
    }

    #[test]
    fn quoting_and_empty_cells() {
        let mut t = Table::new("t", &["a", "b"], "none", "0");
        t.push(vec!["x,y".into(), Cell::from(None::<f64>)]);
        let (h, rows) = parse_table(&t.to_csv()).unwrap();
        assert_eq!(h, ["a", "b"]);
        assert_eq!(rows, vec![vec!["x,y".to_string(), String::new()]]);
    }

    #[test]
    fn config_hash_is_stable() {
        let h = config_hash(&("x", 1));
        assert_eq!(h.len(), 16);
        assert_eq!(h, config_hash(&("x", 1)));
        assert_ne!(h, config_hash(&("x", 2)));
    }

    #[test]
    fn rejects_bad_match_tables() {
        assert!(parse_match_table("a,b\n1,2\n").is_err());
        let good = match_table(&[rec(0, 0.5, false)], "h").to_csv();
        assert!(parse_match_table(&good.replace("false", "maybe")).is_err());
        assert!(parse_match_table(&good.replace("\n0,", "\n4,")).is_err());
    }

    proptest! {
        #[test]
        fn match_table_round_trips_bitwise(cs in proptest::collection::vec((-1.0f64..=1.0, any::<bool>()), 0..20)) {
            let records: Vec<_> = cs.iter().enumerate().map(|(i, &(c, s))| rec(i, c, s)).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            write_match_table(&p, &records, "0123456789abcdef").unwrap();
            prop_assert_eq!(read_match_table(&p).unwrap(), records);
        }
    }
}
