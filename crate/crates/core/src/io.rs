//! Text formats: tab-separated edge lists and attribute tables, plus a TOML
//! manifest naming the files of every view.
//!
//! ```toml
//! [[view]]
//! name = "microbes"
//! edges = "microbes.edges.tsv"
//! attributes = "microbes.attributes.tsv"
//! ```
//!
//! Relative paths in a manifest resolve against the manifest's directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MultiViewDataset, View, ViewGraph};
use crate::tensor::Tensor;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

pub(crate) fn name_index(names: &[String]) -> HashMap<&str, usize> {
    names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
}

/// Reads `name_a<TAB>name_b` lines, resolving names against `node_names`.
pub fn load_edge_list(path: &Path, node_names: &[String]) -> Result<ViewGraph> {
    let text = read(path)?;
    let index = name_index(node_names);
    let mut edges = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 2 tab-separated names, got {}", fields.len()),
            ));
        }
        let resolve = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| parse_err(path, lineno, format!("unknown node name {name:?}")))
        };
        let (a, b) = (resolve(fields[0])?, resolve(fields[1])?);
        if a == b {
            return Err(parse_err(path, lineno, format!("self-loop on {:?}", fields[0])));
        }
        edges.push((a, b));
    }
    ViewGraph::new(node_names.to_vec(), edges)
}

/// Reads a `node<TAB>s1...sD` table. Row order defines node order.
pub fn load_attributes(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let text = read(path)?;
    let mut lines = content_lines(&text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header row"))?;
    let d = header.split('\t').count() - 1;
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in lines {
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default().to_owned();
        if let Some(prev) = seen.insert(name.clone(), lineno) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate node {name:?} (first on line {prev})"),
            ));
        }
        let row: Vec<&str> = fields.collect();
        if row.len() != d {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {d} values, got {}", row.len()),
            ));
        }
        for f in row {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number {f:?}")))?;
            data.push(v);
        }
        names.push(name);
    }
    let t = Tensor::new(vec![names.len(), d], data)?;
    Ok((names, t))
}

pub fn format_edge_list(g: &ViewGraph) -> String {
    let names = g.node_names();
    let mut out = String::new();
    for (a, b) in g.edges() {
        let _ = writeln!(out, "{}\t{}", names[a], names[b]);
    }
    out
}

pub fn format_attributes(names: &[String], attributes: &Tensor) -> String {
    let mut out = String::from("node");
    for j in 0..attributes.cols() {
        let _ = write!(out, "\ts{}", j + 1);
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for v in attributes.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub name: String,
    pub edges: PathBuf,
    pub attributes: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "view")]
    pub views: Vec<ManifestView>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })
}

pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    for mv in &manifest.views {
        let (names, attributes) = load_attributes(&base.join(&mv.attributes))?;
        let graph = load_edge_list(&base.join(&mv.edges), &names)?;
        views.push(View {
            name: mv.name.clone(),
            graph,
            attributes,
        });
    }
    MultiViewDataset::new(views)
}

/// Writes `manifest.toml` plus one edge and attribute file per view into
/// `dir`, returning the manifest path.
pub fn write_dataset(dir: &Path, dataset: &MultiViewDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest { views: Vec::new() };
    for view in dataset.views() {
        let edges = PathBuf::from(format!("{}.edges.tsv", view.name));
        let attributes = PathBuf::from(format!("{}.attributes.tsv", view.name));
        write(&dir.join(&edges), &format_edge_list(&view.graph))?;
        write(
            &dir.join(&attributes),
            &format_attributes(view.graph.node_names(), &view.attributes),
        )?;
        manifest.views.push(ManifestView {
            name: view.name.clone(),
            edges,
            attributes,
        });
    }
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    write(&path, &text)?;
    Ok(path)
}
