//! Graph file I/O.
//!
//! Three plain-text formats, designed to be hand-editable:
//!
//! * **Edge list** — one `u v` pair per line, whitespace-separated node ids;
//!   `#` starts a comment (whole-line or trailing); blank lines are ignored.
//! * **Features CSV** — one row per node, one float per column. An optional
//!   header row is detected by its first field failing to parse as a float.
//! * **Labels** — one integer per line (an optional non-numeric header line
//!   is skipped).
//!
//! The feature file defines the node count; edge endpoints outside it are a
//! shape error, as is a label count that disagrees with the feature rows.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Reads a graph from an edge-list file, a feature CSV, and an optional
/// labels file. The class count is `max label + 1`.
pub fn load_graph(
    edges_path: impl AsRef<Path>,
    features_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Graph> {
    let features = read_features(features_path.as_ref())?;
    let edges = read_edges(edges_path.as_ref())?;
    let labels = labels_path.map(read_labels).transpose()?;
    let class_count = labels
        .as_ref()
        .and_then(|ls| ls.iter().max().map(|&m| m as usize + 1))
        .unwrap_or(0);
    if let Some(ls) = &labels {
        if ls.len() != features.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                ls.len(),
                features.nrows()
            )));
        }
    }
    Graph::new(&edges, features, labels, class_count)
}

/// Parses an edge-list file.
pub fn read_edges(path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected two node ids, found {} fields", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("'{s}' is not a node id"),
            })
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

/// Parses a feature CSV (optional header row).
pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: idx + 1,
                            msg: format!("row has {} columns, expected {}", vals.len(), w),
                        });
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(_) if rows.is_empty() && width.is_none() && idx == 0 => {
                // Header row: non-numeric first line.
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("bad float: {e}"),
                });
            }
        }
    }
    let n = rows.len();
    let d = width.unwrap_or(0);
    let mut arr = Array2::zeros((n, d));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            arr[[i, j]] = v;
        }
    }
    Ok(arr)
}

/// Parses a labels file (one integer per line, optional header line).
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_matches(',');
        if line.is_empty() {
            continue;
        }
        match line.parse::<u32>() {
            Ok(v) => labels.push(v),
            Err(_) if idx == 0 && labels.is_empty() => continue, // header
            Err(e) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("bad label: {e}"),
                });
            }
        }
    }
    Ok(labels)
}

/// Writes a graph's edge list in the format [`read_edges`] accepts.
pub fn write_edges(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for u in 0..g.len() as u32 {
        for &v in g.neighbors(u).expect("iterating in range") {
            if v > u {
                out.push_str(&format!("{u} {v}\n"));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a graph's features in the format [`read_features`] accepts.
pub fn write_features(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in g.features().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes a graph's labels in the format [`read_labels`] accepts.
/// Errors when the graph is unlabeled.
pub fn write_labels(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("graph has no labels to write".into()))?;
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes all three files (`<stem>.edges`, `<stem>.features.csv`, and, when
/// labeled, `<stem>.labels.csv`) and returns their paths in that order.
pub fn write_graph_files(
    g: &Graph,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<(std::path::PathBuf, std::path::PathBuf, Option<std::path::PathBuf>)> {
    let dir = dir.as_ref();
    let edges = dir.join(format!("{stem}.edges"));
    let feats = dir.join(format!("{stem}.features.csv"));
    write_edges(g, &edges)?;
    write_features(g, &feats)?;
    let labels = if g.labels().is_some() {
        let p = dir.join(format!("{stem}.labels.csv"));
        write_labels(g, &p)?;
        Some(p)
    } else {
        None
    };
    Ok((edges, feats, labels))
}
