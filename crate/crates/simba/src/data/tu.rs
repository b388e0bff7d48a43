//! TUDataset text format.
//!
//! Layout of a dataset `NAME` inside `dir`:
//! - `NAME_A.txt`: one edge per line, `i, j`, 1-based global node ids
//!   (both directions listed for undirected graphs)
//! - `NAME_graph_indicator.txt`: per node, the 1-based id of its graph
//! - `NAME_graph_labels.txt`: one integer label per graph
//! - `NAME_node_labels.txt` (optional): one integer per node
//! - `NAME_node_attributes.txt` (optional): comma-separated reals per node
//!
//! Node labels become one-hot columns; when continuous attributes exist
//! they are appended after the one-hot block. With neither file present
//! each node gets `[1, degree/max_degree]`. Graph labels are remapped to a
//! dense `[0, C)` range by sorted value.

use super::{Graph, GraphSet};
use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|_| SimbaError::MissingFile(path.to_path_buf()))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        out.push(line?);
    }
    while matches!(out.last(), Some(l) if l.trim().is_empty()) {
        out.pop();
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(tok: &str, file: &str, line: usize) -> Result<T> {
    tok.trim().parse::<T>().map_err(|_| SimbaError::Format {
        file: file.to_string(),
        line,
        msg: format!("expected a number, got {tok:?}"),
    })
}

/// Parse a TUDataset directory into a [`GraphSet`].
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<GraphSet> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator_name = format!("{name}_graph_indicator.txt");
    let indicator_lines = read_lines(&indicator_path)?;
    let mut node_graph: Vec<usize> = Vec::with_capacity(indicator_lines.len());
    let mut num_graphs = 0usize;
    for (i, line) in indicator_lines.iter().enumerate() {
        let gid: usize = parse_num(line, &indicator_name, i + 1)?;
        if gid == 0 {
            return Err(SimbaError::Format {
                file: indicator_name.clone(),
                line: i + 1,
                msg: "graph ids are 1-based".into(),
            });
        }
        num_graphs = num_graphs.max(gid);
        node_graph.push(gid - 1);
    }
    if node_graph.is_empty() {
        return Err(SimbaError::Consistency(format!(
            "{indicator_name} lists no nodes"
        )));
    }
    let total_nodes = node_graph.len();

    // Global node id -> (graph, local index); nodes are numbered in file order.
    let mut node_counts = vec![0usize; num_graphs];
    let mut local_index: Vec<usize> = Vec::with_capacity(total_nodes);
    for &g in &node_graph {
        local_index.push(node_counts[g]);
        node_counts[g] += 1;
    }
    if node_counts.iter().any(|&c| c == 0) {
        return Err(SimbaError::Consistency(format!(
            "{indicator_name}: some graph ids in 1..={num_graphs} have no nodes"
        )));
    }

    let edges_path = file("A");
    let edges_name = format!("{name}_A.txt");
    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(SimbaError::Format {
                    file: edges_name.clone(),
                    line: i + 1,
                    msg: format!("expected \"i, j\", got {line:?}"),
                })
            }
        };
        let u: usize = parse_num(a, &edges_name, i + 1)?;
        let v: usize = parse_num(b, &edges_name, i + 1)?;
        if u == 0 || v == 0 || u > total_nodes || v > total_nodes {
            return Err(SimbaError::Consistency(format!(
                "{edges_name}:{}: node id outside 1..={total_nodes}",
                i + 1
            )));
        }
        let (u, v) = (u - 1, v - 1);
        if node_graph[u] != node_graph[v] {
            return Err(SimbaError::Consistency(format!(
                "{edges_name}:{}: edge joins graph {} and graph {}",
                i + 1,
                node_graph[u] + 1,
                node_graph[v] + 1
            )));
        }
        per_graph_edges[node_graph[u]].push((local_index[u], local_index[v]));
    }

    let labels_path = file("graph_labels");
    let labels_name = format!("{name}_graph_labels.txt");
    let label_lines = read_lines(&labels_path)?;
    if label_lines.len() != num_graphs {
        return Err(SimbaError::Consistency(format!(
            "{labels_name} has {} labels for {num_graphs} graphs",
            label_lines.len()
        )));
    }
    let mut raw_labels: Vec<i64> = Vec::with_capacity(num_graphs);
    for (i, line) in label_lines.iter().enumerate() {
        raw_labels.push(parse_num(line, &labels_name, i + 1)?);
    }
    // Dense remap by sorted raw value (handles {-1,1} and {1,2} alike).
    let mut label_map: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in &raw_labels {
        let next = label_map.len();
        label_map.entry(l).or_insert(next);
    }
    let num_classes = label_map.len();
    let labels: Vec<usize> = raw_labels.iter().map(|l| label_map[l]).collect();

    // Node features: one-hot labels, continuous attributes, or both.
    let node_labels_path = file("node_labels");
    let node_attrs_path = file("node_attributes");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        let lname = format!("{name}_node_labels.txt");
        let lines = read_lines(&node_labels_path)?;
        if lines.len() != total_nodes {
            return Err(SimbaError::Consistency(format!(
                "{lname} has {} entries for {total_nodes} nodes",
                lines.len()
            )));
        }
        let mut vals = Vec::with_capacity(total_nodes);
        for (i, line) in lines.iter().enumerate() {
            vals.push(parse_num(line, &lname, i + 1)?);
        }
        Some(vals)
    } else {
        None
    };
    let node_attrs: Option<Vec<Vec<f64>>> = if node_attrs_path.exists() {
        let aname = format!("{name}_node_attributes.txt");
        let lines = read_lines(&node_attrs_path)?;
        if lines.len() != total_nodes {
            return Err(SimbaError::Consistency(format!(
                "{aname} has {} rows for {total_nodes} nodes",
                lines.len()
            )));
        }
        let mut rows = Vec::with_capacity(total_nodes);
        let mut width = None;
        for (i, line) in lines.iter().enumerate() {
            let mut row = Vec::new();
            for tok in line.split(',') {
                row.push(parse_num::<f64>(tok, &aname, i + 1)?);
            }
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(SimbaError::Consistency(format!(
                    "{aname}:{}: ragged attribute row",
                    i + 1
                )));
            }
            rows.push(row);
        }
        Some(rows)
    } else {
        None
    };

    let label_vocab: Vec<i64> = match &node_labels {
        Some(vals) => {
            let mut sorted: Vec<i64> = vals.clone();
            sorted.sort_unstable();
            sorted.dedup();
            sorted
        }
        None => Vec::new(),
    };

    // Degree-based fallback features need degrees before Graph construction.
    let mut degrees = vec![0usize; total_nodes];
    if node_labels.is_none() && node_attrs.is_none() {
        for (g, edges) in per_graph_edges.iter().enumerate() {
            let offset: usize = node_counts[..g].iter().sum();
            let mut seen: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            seen.sort_unstable();
            seen.dedup();
            for (u, v) in seen {
                if u == v {
                    degrees[offset + u] += 1;
                } else {
                    degrees[offset + u] += 1;
                    degrees[offset + v] += 1;
                }
            }
        }
    }
    let max_degree = degrees.iter().copied().max().unwrap_or(0).max(1);

    let mut graphs = Vec::with_capacity(num_graphs);
    let mut node_cursor = 0usize;
    for g in 0..num_graphs {
        let n = node_counts[g];
        let feature_row = |global: usize| -> Vec<f64> {
            let mut row = Vec::new();
            if let Some(nl) = &node_labels {
                let mut onehot = vec![0.0; label_vocab.len()];
                let pos = label_vocab.binary_search(&nl[global]).expect("vocab");
                onehot[pos] = 1.0;
                row.extend(onehot);
            }
            if let Some(attrs) = &node_attrs {
                row.extend(&attrs[global]);
            }
            if row.is_empty() {
                row.push(1.0);
                row.push(degrees[global] as f64 / max_degree as f64);
            }
            row
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|v| feature_row(node_cursor + v)).collect();
        let features = Tensor::from_rows(&rows)?;
        graphs.push(Graph::new(
            n,
            std::mem::take(&mut per_graph_edges[g]),
            features,
            labels[g],
        )?);
        node_cursor += n;
    }

    GraphSet::new(graphs, num_classes)
}

/// Serialize a [`GraphSet`] to TUDataset files under `dir`.
///
/// Features are written as continuous attributes with full precision, so
/// parse(write(set)) reproduces the set exactly; edge files list both
/// directions as the format expects.
pub fn write_tu_dataset(dir: &Path, name: &str, set: &GraphSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |suffix: &str| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(
            dir.join(format!("{name}_{suffix}.txt")),
        )?))
    };

    let mut a = open("A")?;
    let mut indicator = open("graph_indicator")?;
    let mut glabels = open("graph_labels")?;
    let mut attrs = open("node_attributes")?;

    let mut offset = 0usize;
    for (gi, g) in set.graphs().iter().enumerate() {
        for v in 0..g.node_count() {
            writeln!(indicator, "{}", gi + 1)?;
            let row: Vec<String> = g.features().row(v).iter().map(|x| x.to_string()).collect();
            writeln!(attrs, "{}", row.join(", "))?;
        }
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", offset + u + 1, offset + v + 1)?;
            if u != v {
                writeln!(a, "{}, {}", offset + v + 1, offset + u + 1)?;
            }
        }
        writeln!(glabels, "{}", g.label())?;
        offset += g.node_count();
    }
    a.flush()?;
    indicator.flush()?;
    glabels.flush()?;
    attrs.flush()?;
    Ok(())
}
