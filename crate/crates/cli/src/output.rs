//! CSV tables, SVG plots and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A tabular result with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Column plotted on the x axis and the columns drawn against it.
    pub plot: Option<(usize, Vec<usize>)>,
}

impl Table {
    pub fn new(name: &str, header: Vec<&'static str>) -> Self {
        Self {
            name: name.into(),
            header,
            rows: Vec::new(),
            plot: None,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn with_plot(mut self, x: usize, ys: Vec<usize>) -> Self {
        self.plot = Some((x, ys));
        self
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// Float formatting shared by every table: shortest round-trip form.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn write_csv(table: &Table, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(table.file_name());
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn sha256_str(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Line plot of numeric columns of a CSV file; the file is the only input.
pub fn svg_from_csv(csv_path: &Path, x_col: usize, y_cols: &[usize]) -> Result<String> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); y_cols.len()];
    for rec in reader.records() {
        let rec = rec?;
        let Ok(x) = rec[x_col].parse::<f64>() else { continue };
        for (s, &c) in series.iter_mut().zip(y_cols) {
            if let Ok(y) = rec[c].parse::<f64>() {
                if x.is_finite() && y.is_finite() {
                    s.push((x, y));
                }
            }
        }
    }
    let pts = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h, m) = (640.0, 400.0, 50.0);
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - m,
        r = w - m
    );
    out += &format!(
        "<text x=\"{m}\" y=\"{}\" font-size=\"11\">{}: [{}, {}]</text>\n",
        h - 15.0,
        header[x_col],
        num(x0),
        num(x1)
    );
    out += &format!("<text x=\"5\" y=\"20\" font-size=\"11\">y: [{}, {}]</text>\n", num(y0), num(y1));
    for (k, (s, &c)) in series.iter().zip(y_cols).enumerate() {
        let color = colors[k % colors.len()];
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        );
        out += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            w - m - 100.0,
            m + 14.0 * k as f64,
            header[c]
        );
    }
    out += "</svg>\n";
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub config_sha256: String,
    pub master_seed: u64,
    pub workers: usize,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<OutputEntry>,
    pub summary: Value,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("demo", vec!["x", "y"]).with_plot(0, vec![1]);
        for k in 0..5 {
            t.push(vec![num(f64::from(k)), num(f64::from(k * k))]);
        }
        let p = write_csv(&t, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("x,y"));
        let svg = svg_from_csv(&p, 0, &[1]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        assert_eq!(sha256_str("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
