//! Directory layout:
//!
//! ```text
//! manifest.json
//! edges/<relation>/<t>.csv     header `src,dst`
//! features/<type>/<t>.csv      one row per node, no header
//! labels/<name>/<t>.csv        header `node,value`
//! ```
//!
//! Snapshot indices `t` are 0-based.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HTGraph, LabelSpec, NodeLabels, NodeType, RelationType, Snapshot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    node_types: Vec<NodeType>,
    relation_types: Vec<RelationType>,
    num_snapshots: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<LabelSpec>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

fn csv_reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, path: &Path, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(|e| Error::dataset(path, e.to_string()))?;
    if got.iter().collect::<Vec<_>>() != want {
        return Err(Error::dataset(path, format!("expected header {:?}, found {:?}", want.join(","), got)));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, field: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::dataset(path, format!("line {line}: cannot parse {field} '{raw}'")))
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv_reader(path, true)?;
    check_header(&mut rdr, path, &["src", "dst"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::dataset(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::dataset(path, format!("line {line}: expected 2 fields")));
        }
        out.push((parse(path, line, "src", &rec[0])?, parse(path, line, "dst", &rec[1])?));
    }
    Ok(out)
}

fn read_features(path: &Path, ty: &NodeType) -> Result<Tensor> {
    let mut rdr = csv_reader(path, false)?;
    let mut data = Vec::with_capacity(ty.count * ty.feature_dim);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::dataset(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ty.feature_dim {
            return Err(Error::dataset(
                path,
                format!("line {line}: {} values, feature_dim of '{}' is {}", rec.len(), ty.name, ty.feature_dim),
            ));
        }
        for raw in rec.iter() {
            data.push(parse(path, line, "feature", raw)?);
        }
        rows += 1;
    }
    if rows != ty.count {
        return Err(Error::dataset(path, format!("{rows} rows, '{}' declares {} nodes", ty.name, ty.count)));
    }
    Tensor::new(vec![ty.count, ty.feature_dim], data)
}

fn read_labels(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv_reader(path, true)?;
    check_header(&mut rdr, path, &["node", "value"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::dataset(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::dataset(path, format!("line {line}: expected 2 fields")));
        }
        out.push((parse(path, line, "node", &rec[0])?, parse(path, line, "value", &rec[1])?));
    }
    Ok(out)
}

/// Loads a dataset from its directory or its `manifest.json`.
pub fn load_dataset(path: &Path) -> Result<HTGraph> {
    let manifest_file = manifest_path(path);
    let root = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::dataset(&manifest_file, e.to_string()))?;
    if manifest.num_snapshots == 0 {
        return Err(Error::dataset(&manifest_file, "num_snapshots must be positive"));
    }
    let mut snapshots = Vec::with_capacity(manifest.num_snapshots);
    for t in 0..manifest.num_snapshots {
        let edges = manifest
            .relation_types
            .iter()
            .map(|r| read_edges(&root.join("edges").join(&r.name).join(format!("{t}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        let features = manifest
            .node_types
            .iter()
            .map(|ty| read_features(&root.join("features").join(&ty.name).join(format!("{t}.csv")), ty))
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(Snapshot { edges, features });
    }
    let labels = manifest
        .labels
        .iter()
        .map(|spec| {
            let values = (0..manifest.num_snapshots)
                .map(|t| read_labels(&root.join("labels").join(&spec.name).join(format!("{t}.csv"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(NodeLabels { spec: spec.clone(), values })
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = HTGraph {
        node_types: manifest.node_types,
        relation_types: manifest.relation_types,
        snapshots,
        labels,
    };
    graph.validate(&manifest_file.display().to_string())?;
    Ok(graph)
}

fn write_csv(path: &Path, header: Option<&[&str]>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::dataset(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::dataset(path, e.to_string());
    if let Some(h) = header {
        w.write_record(h).map_err(wrap)?;
    }
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `graph` under `dir`, creating it if needed. Floats use Rust's
/// shortest round-trip formatting, so loading the result reproduces the graph.
pub fn write_dataset(graph: &HTGraph, dir: &Path) -> Result<()> {
    graph.validate(&dir.display().to_string())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        node_types: graph.node_types.clone(),
        relation_types: graph.relation_types.clone(),
        num_snapshots: graph.num_snapshots(),
        labels: graph.labels.iter().map(|l| l.spec.clone()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    for (t, snap) in graph.snapshots.iter().enumerate() {
        for (rel, edges) in graph.relation_types.iter().zip(&snap.edges) {
            let path = dir.join("edges").join(&rel.name).join(format!("{t}.csv"));
            write_csv(&path, Some(&["src", "dst"]), edges.iter().map(|(s, d)| vec![s.to_string(), d.to_string()]))?;
        }
        for (ty, x) in graph.node_types.iter().zip(&snap.features) {
            let path = dir.join("features").join(&ty.name).join(format!("{t}.csv"));
            write_csv(&path, None, (0..ty.count).map(|i| x.row(i).iter().map(|v| format!("{v}")).collect()))?;
        }
    }
    for l in &graph.labels {
        for (t, vals) in l.values.iter().enumerate() {
            let path = dir.join("labels").join(&l.spec.name).join(format!("{t}.csv"));
            write_csv(&path, Some(&["node", "value"]), vals.iter().map(|(n, y)| vec![n.to_string(), format!("{y}")]))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn minimal(dir: &Path) {
        fs::write(
            dir.join("manifest.json"),
            r#"{"node_types":[{"name":"a","count":3,"feature_dim":2,"description":"A nodes"},
                              {"name":"b","count":2,"feature_dim":1}],
                "relation_types":[{"name":"ab","src":"a","dst":"b"}],
                "num_snapshots":2}"#,
        )
        .unwrap();
        for t in 0..2 {
            let e = dir.join("edges/ab");
            fs::create_dir_all(&e).unwrap();
            fs::write(e.join(format!("{t}.csv")), "src,dst\n0,1\n2,0\n").unwrap();
            let fa = dir.join("features/a");
            fs::create_dir_all(&fa).unwrap();
            fs::write(fa.join(format!("{t}.csv")), "0.5,1\n0,0\n-2.25,3e-3\n").unwrap();
            let fb = dir.join("features/b");
            fs::create_dir_all(&fb).unwrap();
            fs::write(fb.join(format!("{t}.csv")), "1\n2\n").unwrap();
        }
    }

    #[test]
    fn loads_minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.num_snapshots(), 2);
        assert_eq!(g.node_types[0].count, 3);
        assert_eq!(g.node_types[1].count, 2);
        assert_eq!(g.snapshots[1].edges[0], vec![(0, 1), (2, 0)]);
        assert_eq!(g.snapshots[0].features[0].row(2), &[-2.25, 0.003]);
    }

    #[test]
    fn out_of_range_edge_names_snapshot_and_relation() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        fs::write(dir.path().join("edges/ab/1.csv"), "src,dst\n5,0\n").unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("snapshot 1") && msg.contains("'ab'") && msg.contains("index"), "{msg}");
    }

    #[test]
    fn missing_file_and_bad_rows_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        fs::remove_file(dir.path().join("features/b/1.csv")).unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("features/b/1.csv"), "{msg}");

        minimal(dir.path());
        fs::write(dir.path().join("features/a/0.csv"), "1,2\n3\n4,5\n").unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("features/a/0.csv"), "{msg}");

        minimal(dir.path());
        fs::write(dir.path().join("edges/ab/0.csv"), "from,to\n0,0\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn unknown_manifest_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let m = dir.path().join("manifest.json");
        let text = fs::read_to_string(&m).unwrap().replacen('{', "{\"extra\":1,", 1);
        fs::write(&m, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn round_trip_reproduces_generated_graph() {
        let syn = generate_synthetic(&SynthConfig::toy(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&syn.graph, dir.path()).unwrap();
        let back = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, syn.graph);
    }
}
