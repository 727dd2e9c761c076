use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a references file: `talk_id<TAB>segment_id<TAB>text`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub talk: String,
    pub segment: String,
    pub text: String,
}

pub fn read_references(path: &Path) -> Result<Vec<Reference>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(Error::format("references", format!("line {}: expected 3 tab-separated columns", n + 1)));
        }
        out.push(Reference { talk: cols[0].into(), segment: cols[1].into(), text: cols[2].into() });
    }
    Ok(out)
}

pub fn write_references(path: &Path, refs: &[Reference]) -> Result<()> {
    let body: String = refs.iter().map(|r| format!("{}\t{}\t{}\n", r.talk, r.segment, r.text)).collect();
    fs::write(path, body)?;
    Ok(())
}

/// Score table: one row per system, one column per test set, values at
/// two decimals. Rendered as a pipe-delimited text table that parses back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn new(title: &str, corner: &str, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            corner: corner.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "row {name} has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.rows.push((name.into(), values));
        Ok(())
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row)?.1[c]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: &str| Error::format("table", d.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let title = lines.next().ok_or_else(|| bad("empty"))?.trim().to_string();
        let cells = |l: &str| -> Vec<String> {
            let l = l.trim().trim_start_matches('|').trim_end_matches('|');
            l.split('|').map(|c| c.trim().to_string()).collect()
        };
        let header = cells(lines.next().ok_or_else(|| bad("missing header"))?);
        let (corner, columns) = header.split_first().ok_or_else(|| bad("missing header"))?;
        lines.next().ok_or_else(|| bad("missing rule"))?;
        let mut table = Table { title, corner: corner.clone(), columns: columns.to_vec(), rows: Vec::new() };
        for line in lines {
            let c = cells(line);
            let (name, vals) = c.split_first().ok_or_else(|| bad("empty row"))?;
            let vals = vals
                .iter()
                .map(|v| if v == "-" { Ok(None) } else { v.parse().map(Some).map_err(|_| bad(&format!("cell {v:?}"))) })
                .collect::<Result<Vec<_>>>()?;
            table.push_row(name, vals)?;
        }
        Ok(table)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let name_w = self.rows.iter().map(|r| r.0.chars().count()).chain([self.corner.chars().count()]).max().unwrap_or(0);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| self.rows.iter().map(|r| cell(&r.1[i]).len()).chain([c.chars().count()]).max().unwrap_or(0))
            .collect();
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let lpad = |s: &str, w: usize| format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())));
        writeln!(f, "{}", self.title)?;
        write!(f, "| {} |", pad(&self.corner, name_w))?;
        for (c, w) in self.columns.iter().zip(&widths) {
            write!(f, " {} |", lpad(c, *w))?;
        }
        writeln!(f)?;
        write!(f, "|{}|", "-".repeat(name_w + 2))?;
        for w in &widths {
            write!(f, "{}:|", "-".repeat(w + 1))?;
        }
        writeln!(f)?;
        for (name, vals) in &self.rows {
            write!(f, "| {} |", pad(name, name_w))?;
            for (v, w) in vals.iter().zip(&widths) {
                write!(f, " {} |", lpad(&cell(v), *w))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
