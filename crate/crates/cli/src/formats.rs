//! Plain-text artifact formats.
//!
//! Grid dump (`.grid`):
//!
//! ```text
//! # key = value          header lines (shape, lo, hi, label, config_hash, seed, ...)
//! v v v ... v            values in row-major order, one line per run of the last axis
//! ```
//!
//! Tables are CSV with the same `# key = value` header lines before the column row.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use mftransfer::partition::TensorPartition;
use mftransfer::{Error, Result};

/// Header entries shared by every artifact of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".into(), self.config_hash.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub shape: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub header: Vec<(String, String)>,
    pub values: Vec<f64>,
}

impl GridDump {
    pub fn new(part: &TensorPartition, values: Vec<f64>, header: Vec<(String, String)>) -> Self {
        Self {
            shape: part.shape(),
            lo: part.axes().iter().map(|a| a.lo).collect(),
            hi: part.axes().iter().map(|a| a.hi).collect(),
            header,
            values,
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# shape = {}", join(&self.shape));
        let _ = writeln!(s, "# lo = {}", join(&self.lo));
        let _ = writeln!(s, "# hi = {}", join(&self.hi));
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let row = *self.shape.last().unwrap_or(&1);
        for chunk in self.values.chunks(row.max(1)) {
            s.push_str(&join(chunk));
            s.push('\n');
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        self.write(&mut f)
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("grid dump: {m}"));
        let mut header = Vec::new();
        let mut shape = None;
        let mut lo = None;
        let mut hi = None;
        let mut values = Vec::new();
        let nums = |v: &str| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| bad("header without '='"))?;
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "shape" => {
                        shape = Some(
                            v.split_whitespace()
                                .map(|x| x.parse::<usize>().map_err(|_| bad("bad shape")))
                                .collect::<Result<Vec<_>>>()?,
                        )
                    }
                    "lo" => lo = Some(nums(v)?),
                    "hi" => hi = Some(nums(v)?),
                    _ => header.push((k.to_string(), v.to_string())),
                }
            } else if !line.trim().is_empty() {
                values.extend(nums(&line)?);
            }
        }
        let shape: Vec<usize> = shape.ok_or_else(|| bad("missing shape"))?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(bad("value count does not match shape"));
        }
        Ok(Self {
            lo: lo.ok_or_else(|| bad("missing lo"))?,
            hi: hi.ok_or_else(|| bad("missing hi"))?,
            shape,
            header,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.shape == other.shape && self.lo == other.lo && self.hi == other.hi
    }
}

/// A CSV table with provenance header lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<(String, String)>, columns: &[&str]) -> Self {
        Self {
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::default();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    t.header.push((k.trim().into(), v.trim().into()));
                }
            } else if line.trim().is_empty() {
                continue;
            } else if t.columns.is_empty() {
                t.columns = line.split(',').map(|c| c.trim().to_string()).collect();
            } else {
                t.rows
                    .push(line.split(',').map(|c| c.trim().to_string()).collect());
            }
        }
        if t.columns.is_empty() {
            return Err(Error::Format("table without column row".into()));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))?;
        self.rows
            .iter()
            .map(|r| {
                r.get(j)
                    .map(|s| s.as_str())
                    .ok_or_else(|| Error::Format("short row".into()))
            })
            .collect()
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {s:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mftransfer::model::{Boundary, Interval};

    #[test]
    fn grid_dump_round_trips_exactly() {
        let dom = [
            Interval::new(0.0, 1.0, Boundary::Reflecting),
            Interval::new(-2.0, 2.0, Boundary::Periodic),
        ];
        let part = TensorPartition::from_domain(&dom, &[3, 4]).unwrap();
        let values: Vec<f64> = (0..12).map(|i| (i as f64).sqrt() / 7.0 - 0.1).collect();
        let g = GridDump::new(&part, values, vec![("label".into(), "v2".into())]);
        let mut buf = Vec::new();
        g.write(&mut buf).unwrap();
        let back = GridDump::read(&buf[..]).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.get("label"), Some("v2"));
    }

    #[test]
    fn table_round_trips() {
        let mut t = Table::new(vec![("seed".into(), "3".into())], &["a", "b"]);
        t.push(vec!["1".into(), "0.5".into()]);
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.f64_column("b").unwrap(), vec![0.5]);
    }

    #[test]
    fn truncated_grid_dump_is_a_format_error() {
        let text = "# shape = 2 2\n# lo = 0 0\n# hi = 1 1\n1 2\n3\n";
        assert!(matches!(
            GridDump::read(text.as_bytes()),
            Err(Error::Format(_))
        ));
    }
}
