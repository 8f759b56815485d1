//! Reader and writer for the TU text layout:
//!
//! ```text
//! NAME_A.txt                one directed edge "u, v" per line, 1-indexed global node ids
//! NAME_graph_indicator.txt  graph id (1-indexed) of every node, one per line
//! NAME_graph_labels.txt     label of every graph, one per line
//! NAME_node_labels.txt      optional, integer label per node
//! NAME_node_attributes.txt  optional, comma-separated floats per node
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::diff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{FeatureLayout, Graph, GraphDataset};

fn file_for(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-empty trimmed lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn read_optional(path: &Path) -> Result<Option<Vec<(usize, String)>>> {
    if path.exists() {
        read_lines(path).map(Some)
    } else {
        Ok(None)
    }
}

fn parse_int(path: &Path, line: usize, token: &str) -> Result<i64> {
    token
        .trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(path, format!("line {line}: expected integer, got `{token}`")))
}

fn parse_float(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v = token
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("line {line}: expected number, got `{token}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, format!("line {line}: non-finite value `{token}`")));
    }
    Ok(v)
}

/// Parses `dir/NAME_*.txt` into a dataset with one-hot node-label features
/// (attributes appended when present, constant 1 when neither file exists)
/// and graph labels remapped to `0..C`.
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    if !dir.is_dir() {
        return Err(Error::parse(dir, "dataset directory not found"));
    }
    let a_path = file_for(dir, name, "A");
    let ind_path = file_for(dir, name, "graph_indicator");
    let lab_path = file_for(dir, name, "graph_labels");
    for p in [&a_path, &ind_path, &lab_path] {
        if !p.exists() {
            return Err(Error::parse(p, "missing mandatory file"));
        }
    }

    let graph_labels: Vec<i64> = read_lines(&lab_path)?
        .iter()
        .map(|(ln, t)| parse_int(&lab_path, *ln, t))
        .collect::<Result<_>>()?;
    let num_graphs = graph_labels.len();
    if num_graphs == 0 {
        return Err(Error::parse(&lab_path, "no graphs"));
    }

    // node -> (graph, local index)
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut sizes = vec![0usize; num_graphs];
    for (ln, t) in read_lines(&ind_path)? {
        let g = parse_int(&ind_path, ln, &t)?;
        if g < 1 || g as usize > num_graphs {
            return Err(Error::parse(
                &ind_path,
                format!("line {ln}: graph id {g} out of range 1..={num_graphs}"),
            ));
        }
        let g = g as usize - 1;
        node_graph.push(g);
        node_local.push(sizes[g]);
        sizes[g] += 1;
    }
    let num_nodes = node_graph.len();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::parse(&ind_path, format!("graph id {} has no nodes", g + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (ln, t) in read_lines(&a_path)? {
        let mut parts = t.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(&a_path, format!("line {ln}: expected `u, v`, got `{t}`")));
        };
        let u = parse_int(&a_path, ln, u)?;
        let v = parse_int(&a_path, ln, v)?;
        for id in [u, v] {
            if id < 1 || id as usize > num_nodes {
                return Err(Error::parse(
                    &a_path,
                    format!("line {ln}: node id {id} out of range 1..={num_nodes}"),
                ));
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if node_graph[u] != node_graph[v] {
            return Err(Error::parse(
                &a_path,
                format!("line {ln}: edge joins graphs {} and {}", node_graph[u] + 1, node_graph[v] + 1),
            ));
        }
        edges[node_graph[u]].push((node_local[u], node_local[v]));
    }

    let nl_path = file_for(dir, name, "node_labels");
    let node_labels: Option<Vec<i64>> = read_optional(&nl_path)?
        .map(|lines| {
            lines
                .iter()
                .map(|(ln, t)| parse_int(&nl_path, *ln, t.split(',').next().unwrap_or("")))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    if let Some(l) = &node_labels {
        if l.len() != num_nodes {
            return Err(Error::parse(&nl_path, format!("{} labels for {num_nodes} nodes", l.len())));
        }
    }

    let at_path = file_for(dir, name, "node_attributes");
    let attributes: Option<Vec<Vec<f64>>> = read_optional(&at_path)?
        .map(|lines| {
            lines
                .iter()
                .map(|(ln, t)| t.split(',').map(|tok| parse_float(&at_path, *ln, tok)).collect())
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let num_attributes = match &attributes {
        Some(rows) => {
            if rows.len() != num_nodes {
                return Err(Error::parse(&at_path, format!("{} rows for {num_nodes} nodes", rows.len())));
            }
            let width = rows.first().map_or(0, Vec::len);
            if let Some(pos) = rows.iter().position(|r| r.len() != width) {
                return Err(Error::parse(&at_path, format!("row {} has inconsistent width", pos + 1)));
            }
            width
        }
        None => 0,
    };

    let node_label_values: Vec<i64> = node_labels
        .as_ref()
        .map(|l| l.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let one_hot_width = node_label_values.len();
    let constant = node_labels.is_none() && attributes.is_none();
    let feature_dim = if constant { 1 } else { one_hot_width + num_attributes };

    let class_values: Vec<i64> = graph_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();

    let mut features: Vec<Matrix> = sizes.iter().map(|&n| Matrix::zeros(n, feature_dim)).collect();
    for node in 0..num_nodes {
        let row = features[node_graph[node]].row_mut(node_local[node]);
        if constant {
            row[0] = 1.0;
            continue;
        }
        if let Some(labels) = &node_labels {
            let col = node_label_values.binary_search(&labels[node]).expect("value collected above");
            row[col] = 1.0;
        }
        if let Some(attrs) = &attributes {
            row[one_hot_width..].copy_from_slice(&attrs[node]);
        }
    }

    let graphs = features
        .into_iter()
        .zip(edges)
        .zip(&graph_labels)
        .enumerate()
        .map(|(g, ((x, e), raw))| {
            let class = class_values.binary_search(raw).expect("value collected above");
            Graph::new(sizes[g], e, x, class).map_err(|err| Error::parse(&ind_path, format!("graph {}: {err}", g + 1)))
        })
        .collect::<Result<Vec<_>>>()?;

    GraphDataset::new(
        name,
        graphs,
        class_values.len(),
        FeatureLayout {
            node_label_values,
            num_attributes,
            class_values,
        },
    )
}

/// Emits `ds` in TU layout under `dir` (created if missing). Each undirected
/// edge is written in both directions.
pub fn write_tu_dataset(ds: &GraphDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = &ds.name;
    let layout = &ds.layout;
    let one_hot = layout.node_label_values.len();

    let mut a = Vec::new();
    let mut ind = Vec::new();
    let mut lab = Vec::new();
    let mut nl = Vec::new();
    let mut at = Vec::new();

    let mut offset = 0usize;
    for (g, graph) in ds.graphs.iter().enumerate() {
        for &(i, j) in graph.edges() {
            writeln!(a, "{}, {}", offset + i + 1, offset + j + 1)?;
            writeln!(a, "{}, {}", offset + j + 1, offset + i + 1)?;
        }
        for node in 0..graph.num_nodes() {
            writeln!(ind, "{}", g + 1)?;
            let row = graph.features().row(node);
            if one_hot > 0 {
                let col = row[..one_hot].iter().position(|&v| v == 1.0).unwrap_or(0);
                writeln!(nl, "{}", layout.node_label_values[col])?;
            }
            if layout.num_attributes > 0 {
                let cells: Vec<String> = row[one_hot..].iter().map(|v| v.to_string()).collect();
                writeln!(at, "{}", cells.join(", "))?;
            }
        }
        let raw = layout
            .class_values
            .get(graph.label())
            .copied()
            .unwrap_or(graph.label() as i64);
        writeln!(lab, "{raw}")?;
        offset += graph.num_nodes();
    }

    fs::write(file_for(dir, name, "A"), a)?;
    fs::write(file_for(dir, name, "graph_indicator"), ind)?;
    fs::write(file_for(dir, name, "graph_labels"), lab)?;
    if one_hot > 0 {
        fs::write(file_for(dir, name, "node_labels"), nl)?;
    }
    if layout.num_attributes > 0 {
        fs::write(file_for(dir, name, "node_attributes"), at)?;
    }
    Ok(())
}
