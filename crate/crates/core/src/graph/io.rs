//! CSV ingestion and export.
//!
//! `nodes.csv`: `id,feat_0,...,feat_{n-1},label,split[,sensitive]` with
//! `label`, `sensitive` in `{0,1,""}` and `split` in `{train,val,test}`.
//! `edges.csv`: `src,dst`. Ids are 0-based and contiguous.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn record_line(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_binary(field: &str) -> std::result::Result<Option<u8>, String> {
    match field {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(format!("expected 0, 1 or empty, found {other:?}")),
    }
}

struct NodeColumns {
    features: Vec<usize>,
    label: usize,
    split: usize,
    sensitive: Option<usize>,
}

fn node_columns(path: &Path, header: &StringRecord) -> Result<NodeColumns> {
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"id") {
        return Err(parse_err(path, 1, "first column must be `id`"));
    }
    let find = |name: &str| names.iter().position(|&n| n == name);
    let label = find("label").ok_or_else(|| parse_err(path, 1, "missing `label` column"))?;
    let split = find("split").ok_or_else(|| parse_err(path, 1, "missing `split` column"))?;
    let mut features = Vec::new();
    for (k, name) in names[1..label].iter().enumerate() {
        if *name != format!("feat_{k}") {
            return Err(parse_err(
                path,
                1,
                format!("expected `feat_{k}`, found `{name}`"),
            ));
        }
        features.push(k + 1);
    }
    Ok(NodeColumns {
        features,
        label,
        split,
        sensitive: find("sensitive"),
    })
}

/// Reads a graph from the node and edge CSV files.
pub fn load_graph_csv(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Graph> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();

    let mut rdr = reader(nodes_path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(nodes_path, 1, e.to_string()))?
        .clone();
    let cols = node_columns(nodes_path, &header)?;

    let mut rows: Vec<(usize, Vec<f64>, Option<u8>, Split, Option<u8>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(nodes_path, line, e.to_string())
        })?;
        let line = record_line(&rec);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id: usize = field(0)
            .parse()
            .map_err(|_| parse_err(nodes_path, line, format!("bad node id {:?}", field(0))))?;
        let feats = cols
            .features
            .iter()
            .map(|&c| {
                field(c).parse::<f64>().map_err(|_| {
                    parse_err(
                        nodes_path,
                        line,
                        format!("bad feature value {:?}", field(c)),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = parse_binary(field(cols.label))
            .map_err(|m| parse_err(nodes_path, line, format!("label: {m}")))?;
        let split: Split = field(cols.split).parse().map_err(|m: String| {
            Error::Validation(format!("{}:{line}: {m}", nodes_path.display()))
        })?;
        let sensitive = match cols.sensitive {
            Some(c) => parse_binary(field(c))
                .map_err(|m| parse_err(nodes_path, line, format!("sensitive: {m}")))?,
            None => None,
        };
        rows.push((id, feats, label, split, sensitive));
    }

    let n = rows.len();
    let mut slots: Vec<Option<(Vec<f64>, Option<u8>, Split, Option<u8>)>> = vec![None; n];
    for (id, feats, label, split, sens) in rows {
        if id >= n || slots[id].is_some() {
            return Err(Error::Validation(format!(
                "node ids must be contiguous 0..{n}; offending id {id}"
            )));
        }
        slots[id] = Some((feats, label, split, sens));
    }
    let num_features = cols.features.len();
    let mut features = DenseMatrix::zeros(n, num_features);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        let (feats, label, split, sens) = slot.expect("all ids present");
        features.row_mut(i).copy_from_slice(&feats);
        labels.push(label);
        splits.push(split);
        sensitive.push(sens);
    }

    let mut rdr = reader(edges_path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(edges_path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["src", "dst"] {
        return Err(parse_err(edges_path, 1, "header must be `src,dst`"));
    }
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(edges_path, line, e.to_string())
        })?;
        let line = record_line(&rec);
        let id = |i: usize| -> Result<usize> {
            let f = rec.get(i).unwrap_or("");
            f.parse()
                .map_err(|_| parse_err(edges_path, line, format!("bad node id {f:?}")))
        };
        edges.push((id(0)?, id(1)?));
    }

    Graph::new(
        n,
        edges,
        features,
        labels,
        splits,
        cols.sensitive.map(|_| sensitive),
    )
}

fn binary_field(v: Option<u8>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

/// Writes the graph in the format read by [`load_graph_csv`]. Features are
/// printed with shortest round-trip formatting, so reloading is exact.
pub fn save_graph_csv(
    graph: &Graph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();

    let mut out = String::new();
    out.push_str("id");
    for k in 0..graph.features().cols() {
        out.push_str(&format!(",feat_{k}"));
    }
    out.push_str(",label,split");
    if graph.sensitive_eval().is_some() {
        out.push_str(",sensitive");
    }
    out.push('\n');
    for v in 0..graph.num_nodes() {
        out.push_str(&v.to_string());
        for x in graph.features().row(v) {
            out.push_str(&format!(",{x}"));
        }
        out.push_str(&format!(
            ",{},{}",
            binary_field(graph.labels()[v]),
            graph.split()[v]
        ));
        if let Some(s) = graph.sensitive_eval() {
            out.push_str(&format!(",{}", binary_field(s[v])));
        }
        out.push('\n');
    }
    write_file(nodes_path, out.as_bytes())?;

    let mut out = String::from("src,dst\n");
    for (a, b) in graph.edges() {
        out.push_str(&format!("{a},{b}\n"));
    }
    write_file(edges_path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const NODES: &str =
        "id,feat_0,feat_1,label,split\n0,1.0,2.0,1,train\n1,0.5,-1,0,train\n2,3,4,,test\n";

    #[test]
    fn minimal_graph_loads() {
        let dir = TempDir::new().unwrap();
        let n = write(&dir, "nodes.csv", NODES);
        let e = write(&dir, "edges.csv", "src,dst\n0,1\n");
        let g = load_graph_csv(&n, &e).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.labeled_nodes(), vec![0, 1]);
        assert_eq!(g.labels()[2], None);
        assert!(g.sensitive_eval().is_none());
    }

    #[test]
    fn reversed_duplicate_edge_is_merged() {
        let dir = TempDir::new().unwrap();
        let n = write(&dir, "nodes.csv", NODES);
        let e = write(&dir, "edges.csv", "src,dst\n0,1\n1,0\n");
        assert_eq!(load_graph_csv(&n, &e).unwrap().num_edges(), 1);
    }

    #[test]
    fn unknown_node_in_edges_rejected() {
        let dir = TempDir::new().unwrap();
        let n = write(&dir, "nodes.csv", NODES);
        let e = write(&dir, "edges.csv", "src,dst\n0,5\n");
        assert!(matches!(load_graph_csv(&n, &e), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_names_its_line() {
        let dir = TempDir::new().unwrap();
        let n = write(
            &dir,
            "nodes.csv",
            "id,feat_0,label,split\n0,1.0,1,train\n1,abc,0,train\n",
        );
        let e = write(&dir, "edges.csv", "src,dst\n");
        match load_graph_csv(&n, &e) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_split_is_validation_error() {
        let dir = TempDir::new().unwrap();
        let n = write(
            &dir,
            "nodes.csv",
            "id,feat_0,label,split\n0,1.0,1,holdout\n",
        );
        let e = write(&dir, "edges.csv", "src,dst\n");
        assert!(matches!(load_graph_csv(&n, &e), Err(Error::Validation(_))));
    }

    #[test]
    fn sensitive_column_is_optional_and_parsed() {
        let dir = TempDir::new().unwrap();
        let n = write(
            &dir,
            "nodes.csv",
            "id,feat_0,label,split,sensitive\n0,1,1,train,1\n1,2,0,val,\n",
        );
        let e = write(&dir, "edges.csv", "src,dst\n");
        let g = load_graph_csv(&n, &e).unwrap();
        assert_eq!(g.sensitive_eval().unwrap(), &[Some(1), None]);
    }
}
