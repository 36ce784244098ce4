//! Hierarchical fusion of prediction vectors.
//!
//! Leaves are keyed by (architecture, input size, fold). The default tree
//! first averages over folds for each (architecture, size), then over sizes
//! for each architecture, then over architectures.
//!
//! Prediction file: CSV `sample_id,arch,size,fold,p0,p1,p2,p3`.
//! Fused file: CSV `sample_id,p0,p1,p2,p3,label`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{csv_io, ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::network::PredictionVector;

/// Coordinates of one sub-model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafKey {
    pub arch: String,
    pub size: u32,
    pub fold: usize,
}

impl LeafKey {
    pub fn new(arch: impl Into<String>, size: u32, fold: usize) -> Self {
        LeafKey {
            arch: arch.into(),
            size,
            fold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    by_sample: BTreeMap<String, BTreeMap<LeafKey, PredictionVector>>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a leaf, returning the vector it replaced.
    pub fn insert(&mut self, sample_id: impl Into<String>, key: LeafKey, v: PredictionVector) -> Option<PredictionVector> {
        self.by_sample.entry(sample_id.into()).or_default().insert(key, v)
    }

    pub fn extend(&mut self, other: PredictionSet) {
        for (s, leaves) in other.by_sample {
            self.by_sample.entry(s).or_default().extend(leaves);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_sample.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.by_sample.values().map(BTreeMap::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &str> {
        self.by_sample.keys().map(String::as_str)
    }

    pub fn leaves(&self, sample_id: &str) -> Option<&BTreeMap<LeafKey, PredictionVector>> {
        self.by_sample.get(sample_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LeafKey, &PredictionVector)> {
        self.by_sample
            .iter()
            .flat_map(|(s, l)| l.iter().map(move |(k, v)| (s.as_str(), k, v)))
    }

    pub fn architectures(&self) -> BTreeSet<String> {
        self.iter().map(|(_, k, _)| k.arch.clone()).collect()
    }

    pub fn sizes(&self) -> BTreeSet<u32> {
        self.iter().map(|(_, k, _)| k.size).collect()
    }

    /// Leaves matching `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&LeafKey) -> bool) -> PredictionSet {
        let mut out = PredictionSet::new();
        for (s, k, v) in self.iter() {
            if keep(k) {
                out.insert(s, k.clone(), *v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionLevel {
    Fold,
    Size,
    Arch,
}

/// Order in which leaf coordinates are averaged out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionTree {
    pub levels: [FusionLevel; 3],
}

impl Default for FusionTree {
    fn default() -> Self {
        FusionTree {
            levels: [FusionLevel::Fold, FusionLevel::Size, FusionLevel::Arch],
        }
    }
}

impl FusionTree {
    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<_> = self.levels.iter().map(|l| *l as u8).collect();
        if distinct.len() != 3 {
            return Err(Error::Config(format!("fusion levels must be a permutation of fold,size,arch: {:?}", self.levels)));
        }
        Ok(())
    }
}

/// Elementwise arithmetic mean.
pub fn fuse<'a>(vectors: impl IntoIterator<Item = &'a PredictionVector>) -> Result<PredictionVector> {
    let mut sum = [0.0; NUM_CLASSES];
    let mut n = 0usize;
    for v in vectors {
        for (s, p) in sum.iter_mut().zip(v.probs()) {
            *s += p;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyFusion);
    }
    let mean = sum.map(|s| s / n as f64);
    PredictionVector::normalized(mean)
}

pub fn classify(v: &PredictionVector) -> ClassLabel {
    v.argmax()
}

/// Coordinates kept at each stage, as (arch, size, fold) with `None` once averaged out.
type Partial = (Option<String>, Option<u32>, Option<usize>);

fn check_complete(preds: &PredictionSet, sample_id: &str, leaves: &BTreeMap<LeafKey, PredictionVector>) -> Result<()> {
    let archs = preds.architectures();
    let sizes = preds.sizes();
    let folds: BTreeSet<usize> = leaves.keys().map(|k| k.fold).collect();
    for a in &archs {
        for &s in &sizes {
            for &f in &folds {
                if !leaves.contains_key(&LeafKey::new(a.clone(), s, f)) {
                    return Err(Error::MissingLeaf {
                        sample: sample_id.to_string(),
                        arch: a.clone(),
                        size: s,
                        fold: f,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Fuses one sample's leaves level by level.
///
/// A sample's leaves must form the full grid of every architecture and size
/// in the set crossed with the folds that sample appears in (out-of-fold sets
/// have one fold per sample; full test-set ensembles have all folds). With
/// `allow_partial`, missing cells are skipped and present children averaged.
pub fn hierarchical_fuse(preds: &PredictionSet, tree: &FusionTree, sample_id: &str, allow_partial: bool) -> Result<PredictionVector> {
    tree.validate()?;
    let leaves = preds
        .leaves(sample_id)
        .ok_or_else(|| Error::UnknownSample(sample_id.to_string()))?;
    if leaves.is_empty() {
        return Err(Error::EmptyFusion);
    }
    if allow_partial {
        if let Err(e) = check_complete(preds, sample_id, leaves) {
            log::warn!("partial grid, averaging present children: {e}");
        }
    } else {
        check_complete(preds, sample_id, leaves)?;
    }

    let mut current: BTreeMap<Partial, PredictionVector> = leaves
        .iter()
        .map(|(k, v)| ((Some(k.arch.clone()), Some(k.size), Some(k.fold)), *v))
        .collect();
    for level in tree.levels {
        let mut groups: BTreeMap<Partial, Vec<PredictionVector>> = BTreeMap::new();
        for ((a, s, f), v) in current {
            let key = match level {
                FusionLevel::Arch => (None, s, f),
                FusionLevel::Size => (a, None, f),
                FusionLevel::Fold => (a, s, None),
            };
            groups.entry(key).or_default().push(v);
        }
        current = groups
            .into_iter()
            .map(|(k, vs)| fuse(&vs).map(|v| (k, v)))
            .collect::<Result<_>>()?;
    }
    debug_assert_eq!(current.len(), 1);
    current.into_values().next().ok_or(Error::EmptyFusion)
}

/// Fuses every sample in the set.
pub fn fuse_all(preds: &PredictionSet, tree: &FusionTree, allow_partial: bool) -> Result<BTreeMap<String, PredictionVector>> {
    preds
        .samples()
        .map(|s| hierarchical_fuse(preds, tree, s, allow_partial).map(|v| (s.to_string(), v)))
        .collect()
}

/// Rows whose probabilities sum within 1e-3 of one are accepted; those off by
/// more than 1e-6 are renormalised with a warning.
pub fn import_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).has_headers(false).from_reader(file);
    let malformed = |row: usize, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut set = PredictionSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        if line == 1 && rec.get(0) == Some("sample_id") {
            continue;
        }
        if rec.len() != 8 {
            return Err(malformed(line, format!("expected 8 fields, got {}", rec.len())));
        }
        let size: u32 = rec[2].parse().map_err(|_| malformed(line, format!("bad size {:?}", &rec[2])))?;
        let fold: usize = rec[3].parse().map_err(|_| malformed(line, format!("bad fold {:?}", &rec[3])))?;
        let mut p = [0.0; NUM_CLASSES];
        for (c, slot) in p.iter_mut().enumerate() {
            *slot = rec[4 + c]
                .parse()
                .map_err(|_| malformed(line, format!("bad probability {:?}", &rec[4 + c])))?;
        }
        let v = PredictionVector::with_tolerance(p, 1e-3).map_err(|e| malformed(line, e.to_string()))?;
        let sum: f64 = p.iter().sum();
        let v = if (sum - 1.0).abs() > PredictionVector::SUM_TOLERANCE {
            log::warn!("{}: row {line}: probabilities sum to {sum}, renormalising", path.display());
            PredictionVector::normalized(p).map_err(|e| malformed(line, e.to_string()))?
        } else {
            v
        };
        if set.insert(&rec[0], LeafKey::new(&rec[1], size, fold), v).is_some() {
            return Err(malformed(line, format!("duplicate leaf for sample {:?}", &rec[0])));
        }
    }
    Ok(set)
}

fn fmt_prob(p: f64) -> String {
    format!("{p:.10}")
}

pub fn write_predictions(set: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["sample_id", "arch", "size", "fold", "p0", "p1", "p2", "p3"])
        .map_err(|e| csv_io(path, e))?;
    for (s, k, v) in set.iter() {
        let mut row = vec![s.to_string(), k.arch.clone(), k.size.to_string(), k.fold.to_string()];
        row.extend(v.probs().iter().map(|&p| fmt_prob(p)));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_fused(fused: &BTreeMap<String, PredictionVector>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["sample_id", "p0", "p1", "p2", "p3", "label"]).map_err(|e| csv_io(path, e))?;
    for (s, v) in fused {
        let mut row = vec![s.clone()];
        row.extend(v.probs().iter().map(|&p| fmt_prob(p)));
        row.push(classify(v).name().to_string());
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_fused(path: impl AsRef<Path>) -> Result<BTreeMap<String, PredictionVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row: line,
            message,
        };
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() < 5 {
            return Err(malformed("expected sample_id,p0,p1,p2,p3[,label]".into()));
        }
        let mut p = [0.0; NUM_CLASSES];
        for (c, slot) in p.iter_mut().enumerate() {
            *slot = rec[1 + c].parse().map_err(|_| malformed(format!("bad probability {:?}", &rec[1 + c])))?;
        }
        let v = PredictionVector::with_tolerance(p, 1e-3).map_err(|e| malformed(e.to_string()))?;
        out.insert(rec[0].to_string(), v);
    }
    Ok(out)
}
