//! Citation-dataset ingest: plain-text content/cites parsing, deterministic
//! train/val/test splits, and spike encoding of binary node features.
//!
//! The canonical input is the plain-text pair used by the public Cora and
//! Citeseer distributions: a content file with one `<id> <bits...> <label>`
//! row per node and a cites file with one `<citing> <cited>` pair per line.
//! Binary pickle distributions are not read; convert them to this format
//! first (see the repository README for a recipe).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, SparseGraph};
use crate::rng::Rng;
use crate::tensor::SpikeTensor;

/// Node-id sets for the transductive split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SparseGraph,
    /// Strictly binary (node x feature) matrix.
    pub features: Vec<u8>,
    pub feature_dim: usize,
    /// Class index per node, in [0, class_count).
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Class names in index order (sorted lexicographically at ingest).
    pub class_names: Vec<String>,
    /// Original string ids in node-index order.
    pub node_ids: Vec<String>,
    pub split: Split,
    /// Edges in the cites file whose endpoints were unknown; skipped.
    pub skipped_edges: usize,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn feature(&self, node: usize, k: usize) -> u8 {
        self.features[node * self.feature_dim + k]
    }

    /// Fraction of set bits in the feature matrix.
    pub fn feature_density(&self) -> f64 {
        if self.features.is_empty() {
            return 0.0;
        }
        self.features.iter().filter(|&&b| b != 0).count() as f64 / self.features.len() as f64
    }
}

/// Ingest-validation manifest. `expected_*` fields are checked after
/// parsing when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub content: String,
    pub cites: String,
    #[serde(default)]
    pub expected_nodes: Option<usize>,
    #[serde(default)]
    pub expected_features: Option<usize>,
    #[serde(default)]
    pub expected_classes: Option<usize>,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("manifest: {e}"),
        })
    }
}

/// Parse the content/cites pair into a dataset with an empty split.
///
/// String ids map to dense node indices in file order. Citation direction
/// is discarded. Edges naming an unknown id are skipped and counted in
/// `skipped_edges` rather than failing the whole ingest; a non-binary
/// feature value is a hard error.
pub fn load_citation_dataset(content_path: &Path, cites_path: &Path) -> Result<Dataset> {
    let content = fs::read_to_string(content_path).map_err(|source| Error::Io {
        path: content_path.display().to_string(),
        source,
    })?;
    let content_name = content_path.display().to_string();

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut features: Vec<u8> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut feature_dim: Option<usize> = None;

    for (line_no, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: content_name.clone(),
                line: line_no + 1,
                msg: "expected <id> <binary features...> <label>".into(),
            });
        }
        let id = fields[0];
        let label = fields[fields.len() - 1];
        let bits = &fields[1..fields.len() - 1];
        match feature_dim {
            None => feature_dim = Some(bits.len()),
            Some(dim) if dim != bits.len() => {
                return Err(Error::Parse {
                    path: content_name.clone(),
                    line: line_no + 1,
                    msg: format!("expected {dim} feature values, got {}", bits.len()),
                });
            }
            _ => {}
        }
        if index.contains_key(id) {
            return Err(Error::Parse {
                path: content_name.clone(),
                line: line_no + 1,
                msg: format!("duplicate node id {id}"),
            });
        }
        for &bit in bits {
            match bit {
                "0" => features.push(0),
                "1" => features.push(1),
                other => {
                    return Err(Error::Parse {
                        path: content_name.clone(),
                        line: line_no + 1,
                        msg: format!("non-binary feature value {other:?}"),
                    });
                }
            }
        }
        index.insert(id.to_string(), ids.len());
        ids.push(id.to_string());
        label_names.push(label.to_string());
    }
    let feature_dim = feature_dim.unwrap_or(0);
    if ids.is_empty() {
        return Err(Error::Parse {
            path: content_name,
            line: 0,
            msg: "content file has no nodes".into(),
        });
    }

    // class indices from lexicographically sorted label names
    let mut class_names: Vec<String> = label_names.clone();
    class_names.sort();
    class_names.dedup();
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();
    let labels: Vec<usize> = label_names
        .iter()
        .map(|name| class_index[name.as_str()])
        .collect();

    let cites = fs::read_to_string(cites_path).map_err(|source| Error::Io {
        path: cites_path.display().to_string(),
        source,
    })?;
    let cites_name = cites_path.display().to_string();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut skipped = 0usize;
    for (line_no, line) in cites.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (a, b) = match (fields.next(), fields.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Parse {
                    path: cites_name.clone(),
                    line: line_no + 1,
                    msg: "expected <citing-id> <cited-id>".into(),
                });
            }
        };
        match (index.get(a), index.get(b)) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => {
                skipped += 1;
                eprintln!(
                    "warning: {cites_name}:{}: edge ({a}, {b}) references unknown node id, skipped",
                    line_no + 1
                );
            }
        }
    }

    let graph = build_graph(ids.len(), &edges)?;
    Ok(Dataset {
        graph,
        features,
        feature_dim,
        labels,
        class_count: class_names.len(),
        class_names,
        node_ids: ids,
        split: Split::default(),
        skipped_edges: skipped,
    })
}

/// Load via a manifest and validate the expected counts.
pub fn load_from_manifest(manifest: &DatasetManifest, base: &Path) -> Result<Dataset> {
    let content = base.join(&manifest.content);
    let cites = base.join(&manifest.cites);
    let d = load_citation_dataset(&content, &cites)?;
    if let Some(n) = manifest.expected_nodes {
        if d.num_nodes() != n {
            return Err(Error::Config(format!(
                "manifest expects {n} nodes, parsed {}",
                d.num_nodes()
            )));
        }
    }
    if let Some(f) = manifest.expected_features {
        if d.feature_dim != f {
            return Err(Error::Config(format!(
                "manifest expects {f} features, parsed {}",
                d.feature_dim
            )));
        }
    }
    if let Some(c) = manifest.expected_classes {
        if d.class_count != c {
            return Err(Error::Config(format!(
                "manifest expects {c} classes, parsed {}",
                d.class_count
            )));
        }
    }
    Ok(d)
}

/// Node-id lists of a split file (JSON with train/val/test arrays of the
/// original string ids).
#[derive(Debug, Deserialize)]
struct SplitFile {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

/// Load a canonical split from a JSON file of node-id lists, e.g. the
/// fixed benchmark splits the baselines report on. Ids must exist in the
/// dataset and the three sets must be disjoint.
pub fn load_split_file(d: &Dataset, path: &Path) -> Result<Split> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("split file: {e}"),
    })?;
    let index: HashMap<&str, usize> = d
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let resolve = |ids: &[String]| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match index.get(id.as_str()) {
                Some(&node) => out.push(node),
                None => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: 0,
                        msg: format!("split references unknown node id {id}"),
                    });
                }
            }
        }
        Ok(out)
    };
    let split = Split {
        train: resolve(&file.train)?,
        val: resolve(&file.val)?,
        test: resolve(&file.test)?,
    };
    let mut all: Vec<usize> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .copied()
        .collect();
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    if all.len() != total {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "split sets overlap".into(),
        });
    }
    if split.train.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(split)
}

/// Number of training nodes drawn per class under the standard split.
pub const TRAIN_PER_CLASS: usize = 20;
/// Validation pool size under the standard split.
pub const VAL_SIZE: usize = 500;
/// Test pool size under the standard split.
pub const TEST_SIZE: usize = 1000;

/// Planetoid-convention split: 20 nodes per class for training, then 500
/// validation and 1000 test nodes, all drawn deterministically from the
/// seed. Smaller datasets truncate the val/test pools rather than fail.
pub fn standard_split(d: &Dataset, seed: u64) -> Result<Split> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); d.class_count];
    for (node, &label) in d.labels.iter().enumerate() {
        per_class[label].push(node);
    }
    for (class, members) in per_class.iter().enumerate() {
        if members.len() < TRAIN_PER_CLASS {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: TRAIN_PER_CLASS,
            });
        }
    }
    let mut rng = Rng::from_seed(seed).derive(0x5711);
    let mut train = Vec::with_capacity(TRAIN_PER_CLASS * d.class_count);
    let mut rest: Vec<usize> = Vec::new();
    for members in per_class.iter_mut() {
        rng.shuffle(members);
        train.extend_from_slice(&members[..TRAIN_PER_CLASS]);
        rest.extend_from_slice(&members[TRAIN_PER_CLASS..]);
    }
    train.sort_unstable();
    rest.sort_unstable();
    rng.shuffle(&mut rest);
    let val_take = VAL_SIZE.min(rest.len());
    let mut val: Vec<usize> = rest[..val_take].to_vec();
    let test_take = TEST_SIZE.min(rest.len() - val_take);
    let mut test: Vec<usize> = rest[val_take..val_take + test_take].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

/// Deterministic rate-free encoding: every time slice repeats the binary
/// feature matrix unchanged.
pub fn encode_repeat(d: &Dataset, time_window: usize) -> SpikeTensor {
    assert!(time_window >= 1);
    let mut out = SpikeTensor::zeros(time_window, d.num_nodes(), d.feature_dim);
    for t in 0..time_window {
        for node in 0..d.num_nodes() {
            for k in 0..d.feature_dim {
                let v = d.feature(node, k);
                if v != 0 {
                    out.set(t, node, k, 1);
                }
            }
        }
    }
    out
}

/// Probabilistic encoding: each entry spikes independently per step with
/// probability equal to its feature value. Probabilities must be in [0, 1].
pub fn encode_bernoulli(
    probs: &[f64],
    nodes: usize,
    channels: usize,
    time_window: usize,
    seed: u64,
) -> Result<SpikeTensor> {
    assert!(time_window >= 1);
    if probs.len() != nodes * channels {
        return Err(Error::DimMismatch {
            context: "encode_bernoulli",
            expected: format!("{} probabilities", nodes * channels),
            got: format!("{}", probs.len()),
        });
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "bernoulli probability {p} outside [0, 1]"
            )));
        }
    }
    let mut rng = Rng::from_seed(seed).derive(0xbe7);
    let mut out = SpikeTensor::zeros(time_window, nodes, channels);
    for t in 0..time_window {
        for node in 0..nodes {
            for k in 0..channels {
                if rng.bernoulli(probs[node * channels + k]) {
                    out.set(t, node, k, 1);
                }
            }
        }
    }
    Ok(out)
}

/// Bernoulli encoding of a dataset's binary features (each probability is
/// 0 or 1, so this coincides with repeat encoding; provided for parity with
/// real-valued inputs).
pub fn encode_bernoulli_dataset(d: &Dataset, time_window: usize, seed: u64) -> Result<SpikeTensor> {
    let probs: Vec<f64> = d.features.iter().map(|&b| b as f64).collect();
    encode_bernoulli(&probs, d.num_nodes(), d.feature_dim, time_window, seed)
}

/// Training-time spike deletion: each set bit survives independently with
/// probability 1 - p. No rescaling, so the result stays binary; the
/// per-node normalization downstream absorbs the density change.
pub fn dropout_spikes(spikes: &SpikeTensor, p: f64, seed: u64) -> SpikeTensor {
    let mut rng = Rng::from_seed(seed).derive(0x1d70);
    let mut out = spikes.clone();
    for t in 0..out.time_window() {
        for node in 0..out.nodes() {
            for k in 0..out.channels() {
                if out.at(t, node, k) != 0 && rng.bernoulli(p) {
                    out.set(t, node, k, 0);
                }
            }
        }
    }
    out
}

/// Which encoder a run uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    #[default]
    Repeat,
    Bernoulli,
}

pub fn encode(d: &Dataset, encoder: Encoder, time_window: usize, seed: u64) -> Result<SpikeTensor> {
    match encoder {
        Encoder::Repeat => Ok(encode_repeat(d, time_window)),
        Encoder::Bernoulli => encode_bernoulli_dataset(d, time_window, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    struct TempDir(std::path::PathBuf);

    impl TempDir {
        fn new(tag: &str) -> Self {
            let dir = std::env::temp_dir().join(format!(
                "gsnn-data-test-{tag}-{}",
                std::process::id()
            ));
            let _ = fs::remove_dir_all(&dir);
            fs::create_dir_all(&dir).unwrap();
            TempDir(dir)
        }

        fn write(&self, name: &str, body: &str) -> std::path::PathBuf {
            let path = self.0.join(name);
            let mut f = fs::File::create(&path).unwrap();
            f.write_all(body.as_bytes()).unwrap();
            path
        }
    }

    impl Drop for TempDir {
        fn drop(&mut self) {
            let _ = fs::remove_dir_all(&self.0);
        }
    }

    #[test]
    fn toy_content_parses_two_isolated_nodes() {
        let dir = TempDir::new("toy");
        let content = dir.write("toy.content", "n1 1 0 1 alpha\nn2 0 1 0 beta\n");
        let cites = dir.write("toy.cites", "");
        let d = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(d.num_nodes(), 2);
        assert_eq!(d.feature_dim, 3);
        assert_eq!(d.class_count, 2);
        assert_eq!(d.graph.num_edges(), 0);
        assert_eq!(d.labels, vec![0, 1]); // alpha < beta
        assert_eq!(d.feature(0, 0), 1);
        assert_eq!(d.feature(1, 0), 0);
    }

    #[test]
    fn unknown_edge_ids_are_skipped() {
        let dir = TempDir::new("dangling");
        let content = dir.write("d.content", "a 1 x\nb 0 x\n");
        let cites = dir.write("d.cites", "a b\na ghost\nghost b\n");
        let d = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(d.graph.num_edges(), 1);
        assert_eq!(d.skipped_edges, 2);
    }

    #[test]
    fn non_binary_feature_is_hard_error() {
        let dir = TempDir::new("nonbin");
        let content = dir.write("d.content", "a 1 2 x\n");
        let cites = dir.write("d.cites", "");
        let err = load_citation_dataset(&content, &cites).unwrap_err();
        assert!(err.to_string().contains("non-binary"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = TempDir::new("dup");
        let content = dir.write("d.content", "a 1 x\na 0 y\n");
        let cites = dir.write("d.cites", "");
        assert!(load_citation_dataset(&content, &cites).is_err());
    }

    #[test]
    fn manifest_count_validation() {
        let dir = TempDir::new("manifest");
        dir.write("m.content", "a 1 0 x\nb 0 1 y\n");
        dir.write("m.cites", "a b\n");
        let manifest = DatasetManifest {
            content: "m.content".into(),
            cites: "m.cites".into(),
            expected_nodes: Some(2),
            expected_features: Some(2),
            expected_classes: Some(2),
        };
        assert!(load_from_manifest(&manifest, &dir.0).is_ok());
        let bad = DatasetManifest {
            expected_nodes: Some(3),
            ..manifest
        };
        assert!(load_from_manifest(&bad, &dir.0).is_err());
    }

    fn synthetic_dataset(nodes_per_class: usize, classes: usize) -> Dataset {
        let n = nodes_per_class * classes;
        let features: Vec<u8> = (0..n * 2).map(|i| (i % 2) as u8).collect();
        let labels: Vec<usize> = (0..n).map(|i| i / nodes_per_class).collect();
        Dataset {
            graph: build_graph(n, &[]).unwrap(),
            features,
            feature_dim: 2,
            labels,
            class_count: classes,
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            node_ids: (0..n).map(|i| format!("n{i}")).collect(),
            split: Split::default(),
            skipped_edges: 0,
        }
    }

    #[test]
    fn split_file_round_trip_and_validation() {
        let d = synthetic_dataset(25, 1);
        let dir = TempDir::new("split");
        let good = dir.write(
            "s.json",
            r#"{"train": ["n0", "n3"], "val": ["n1"], "test": ["n2", "n4"]}"#,
        );
        let split = load_split_file(&d, &good).unwrap();
        assert_eq!(split.train, vec![0, 3]);
        assert_eq!(split.val, vec![1]);
        assert_eq!(split.test, vec![2, 4]);

        let overlap = dir.write(
            "o.json",
            r#"{"train": ["n0"], "val": ["n0"], "test": []}"#,
        );
        assert!(load_split_file(&d, &overlap).is_err());
        let unknown = dir.write(
            "u.json",
            r#"{"train": ["ghost"], "val": [], "test": []}"#,
        );
        assert!(load_split_file(&d, &unknown).is_err());
    }

    #[test]
    fn standard_split_sizes_and_determinism() {
        let d = synthetic_dataset(250, 7); // 1750 nodes
        let s1 = standard_split(&d, 0).unwrap();
        assert_eq!(s1.train.len(), 140);
        assert_eq!(s1.val.len(), 500);
        assert_eq!(s1.test.len(), 1000);
        let s2 = standard_split(&d, 0).unwrap();
        assert_eq!(s1, s2);
        let s3 = standard_split(&d, 1).unwrap();
        assert_ne!(s1, s3);

        // disjoint
        let mut all: Vec<usize> = s1
            .train
            .iter()
            .chain(&s1.val)
            .chain(&s1.test)
            .cloned()
            .collect();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), len);

        // exactly 20 per class in train
        for class in 0..7 {
            let count = s1.train.iter().filter(|&&n| d.labels[n] == class).count();
            assert_eq!(count, 20);
        }
    }

    #[test]
    fn small_dataset_truncates_pools() {
        let d = synthetic_dataset(25, 1);
        let s = standard_split(&d, 0).unwrap();
        assert_eq!(s.train.len(), 20);
        assert_eq!(s.val.len(), 5);
        assert_eq!(s.test.len(), 0);
    }

    #[test]
    fn class_below_twenty_is_error() {
        let d = synthetic_dataset(10, 2);
        assert!(matches!(
            standard_split(&d, 0),
            Err(Error::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn repeat_encoding_copies_every_slice() {
        let d = synthetic_dataset(25, 1);
        let enc = encode_repeat(&d, 3);
        assert_eq!(enc.time_window(), 3);
        for t in 0..3 {
            for node in 0..d.num_nodes() {
                for k in 0..2 {
                    assert_eq!(enc.at(t, node, k), d.feature(node, k));
                }
            }
        }
        // time-average equals the feature matrix exactly
        let rates = enc.rates();
        for node in 0..d.num_nodes() {
            for k in 0..2 {
                assert_eq!(rates.at(node, k), d.feature(node, k) as f64);
            }
        }
    }

    #[test]
    fn bernoulli_degenerate_probabilities() {
        let probs = vec![1.0, 0.0];
        let enc = encode_bernoulli(&probs, 1, 2, 50, 7).unwrap();
        for t in 0..50 {
            assert_eq!(enc.at(t, 0, 0), 1);
            assert_eq!(enc.at(t, 0, 1), 0);
        }
    }

    #[test]
    fn bernoulli_half_rate_converges() {
        let probs = vec![0.5];
        let t = 10_000;
        let enc = encode_bernoulli(&probs, 1, 1, t, 3).unwrap();
        let rate = (0..t).map(|s| enc.at(s, 0, 0) as usize).sum::<usize>() as f64 / t as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        assert!(encode_bernoulli(&[1.5], 1, 1, 2, 0).is_err());
        assert!(encode_bernoulli(&[-0.1], 1, 1, 2, 0).is_err());
    }

    #[test]
    fn bernoulli_is_seed_deterministic() {
        let probs = vec![0.3, 0.7, 0.5];
        let a = encode_bernoulli(&probs, 1, 3, 64, 9).unwrap();
        let b = encode_bernoulli(&probs, 1, 3, 64, 9).unwrap();
        assert_eq!(a, b);
        let c = encode_bernoulli(&probs, 1, 3, 64, 10).unwrap();
        assert_ne!(a, c);
    }
}
