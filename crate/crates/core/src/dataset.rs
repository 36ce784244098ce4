//! Labelled manifests, class statistics and stratified K-fold assignment.
//!
//! A manifest is a UTF-8 CSV with header `id,image_path,label`. Labels are
//! accepted by name (`normal`, `anomalous`, `alnus`, `debris`) or by integer
//! code `0..=3`. Relative image paths are resolved against the directory
//! holding the manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const NUM_CLASSES: usize = 4;

/// The four categories, with a stable integer encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Normal = 0,
    Anomalous = 1,
    Alnus = 2,
    Debris = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Normal,
        ClassLabel::Anomalous,
        ClassLabel::Alnus,
        ClassLabel::Debris,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Anomalous => "anomalous",
            ClassLabel::Alnus => "alnus",
            ClassLabel::Debris => "debris",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let label = match t.to_ascii_lowercase().as_str() {
            "0" | "normal" | "normal-pollen" | "normal_pollen" => ClassLabel::Normal,
            "1" | "anomalous" | "anomalous-pollen" | "anomalous_pollen" => ClassLabel::Anomalous,
            "2" | "alnus" => ClassLabel::Alnus,
            "3" | "debris" => ClassLabel::Debris,
            _ => return Err(Error::UnknownLabel(t.to_string())),
        };
        Ok(label)
    }
}

/// A dense per-class table indexed by [`ClassLabel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassMap<T>(pub [T; NUM_CLASSES]);

impl<T> Index<ClassLabel> for ClassMap<T> {
    type Output = T;
    fn index(&self, c: ClassLabel) -> &T {
        &self.0[c.index()]
    }
}

impl<T> IndexMut<ClassLabel> for ClassMap<T> {
    fn index_mut(&mut self, c: ClassLabel) -> &mut T {
        &mut self.0[c.index()]
    }
}

impl<T: Copy> ClassMap<T> {
    pub fn iter(&self) -> impl Iterator<Item = (ClassLabel, T)> + '_ {
        ClassLabel::ALL.iter().map(move |&c| (c, self[c]))
    }
}

pub type ClassCounts = ClassMap<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    samples: Vec<Sample>,
    counts: ClassCounts,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate ids and empty paths.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut counts = ClassCounts::default();
        for s in &samples {
            if s.image_path.as_os_str().is_empty() {
                return Err(Error::Config(format!("sample {:?} has an empty image path", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            counts[s.label] += 1;
        }
        Ok(Manifest { samples, counts })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn counts(&self) -> ClassCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn truth(&self) -> BTreeMap<String, ClassLabel> {
        self.samples.iter().map(|s| (s.id.clone(), s.label)).collect()
    }

    /// Keeps only the samples whose ids satisfy `keep`, in manifest order.
    pub fn subset(&self, mut keep: impl FnMut(&Sample) -> bool) -> Manifest {
        let samples: Vec<Sample> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Manifest::new(samples).expect("subset of a valid manifest is valid")
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    image_path: String,
    label: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let headers = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    let expected = ["id", "image_path", "label"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(malformed(path, 1, format!("expected header id,image_path,label, got {:?}", headers)));
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| malformed(path, line, e.to_string()))?;
        if row.id.is_empty() {
            return Err(malformed(path, line, "empty id".into()));
        }
        if row.image_path.is_empty() {
            return Err(malformed(path, line, "empty image_path".into()));
        }
        let label = row
            .label
            .parse::<ClassLabel>()
            .map_err(|e| malformed(path, line, e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(malformed(path, line, Error::DuplicateId(row.id).to_string()));
        }
        let p = PathBuf::from(&row.image_path);
        let image_path = if p.is_relative() { base.join(p) } else { p };
        samples.push(Sample { id: row.id, image_path, label });
    }
    Manifest::new(samples)
}

/// Writes a manifest; image paths are written as stored.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["id", "image_path", "label"]).map_err(|e| csv_io(path, e))?;
    for s in manifest.samples() {
        w.write_record([s.id.as_str(), &s.image_path.to_string_lossy(), s.label.name()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, row: usize, message: String) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        message,
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// `N_total / N_c` for each class.
pub fn compute_class_weights(counts: &ClassCounts) -> Result<ClassMap<f64>> {
    let total: usize = counts.0.iter().sum();
    let mut weights = ClassMap([0.0; NUM_CLASSES]);
    for (c, n) in counts.iter() {
        if n == 0 {
            return Err(Error::ZeroCount(c.to_string()));
        }
        weights[c] = total as f64 / n as f64;
    }
    Ok(weights)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    seed: u64,
    fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn from_map(k: usize, seed: u64, fold_of: BTreeMap<String, usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {k}")));
        }
        if let Some((id, f)) = fold_of.iter().find(|(_, &f)| f >= k) {
            return Err(Error::Config(format!("sample {id:?} assigned to fold {f} >= k={k}")));
        }
        Ok(FoldAssignment { k, seed, fold_of })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.fold_of
    }

    /// Splits `manifest` into (training, held-out) sub-manifests for `fold`.
    pub fn split(&self, manifest: &Manifest, fold: usize) -> Result<(Manifest, Manifest)> {
        if fold >= self.k {
            return Err(Error::Config(format!("fold index {fold} out of range for k={}", self.k)));
        }
        for s in manifest.samples() {
            if !self.fold_of.contains_key(&s.id) {
                return Err(Error::Config(format!("sample {:?} has no fold assignment", s.id)));
            }
        }
        let train = manifest.subset(|s| self.fold_of[&s.id] != fold);
        let test = manifest.subset(|s| self.fold_of[&s.id] == fold);
        Ok((train, test))
    }

    /// `counts[fold][class]`.
    pub fn fold_class_counts(&self, manifest: &Manifest) -> Vec<ClassCounts> {
        let mut out = vec![ClassCounts::default(); self.k];
        for s in manifest.samples() {
            if let Some(f) = self.fold_of(&s.id) {
                out[f][s.label] += 1;
            }
        }
        out
    }
}

/// Per-class seeded shuffle followed by round-robin assignment.
///
/// Each class's round robin starts where the previous class's stopped, so
/// overall fold sizes also differ by at most one.
pub fn stratified_kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let counts = manifest.counts();
    for (c, n) in counts.iter() {
        if n < k {
            return Err(Error::TooFewSamples {
                class: c.to_string(),
                count: n,
                k,
            });
        }
    }

    let mut fold_of = BTreeMap::new();
    let mut cursor = 0usize;
    for class in ClassLabel::ALL {
        let mut members: Vec<&str> = manifest
            .samples()
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.id.as_str())
            .collect();
        let mut rng = seed::rng(seed::mix(seed, class.index() as u64));
        members.shuffle(&mut rng);
        for id in members {
            fold_of.insert(id.to_string(), cursor % k);
            cursor += 1;
        }
    }
    FoldAssignment::from_map(k, seed, fold_of)
}

/// Fold file: CSV `id,fold`, rows in manifest order.
pub fn write_folds(folds: &FoldAssignment, manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["id", "fold"]).map_err(|e| csv_io(path, e))?;
    for s in manifest.samples() {
        let f = folds
            .fold_of(&s.id)
            .ok_or_else(|| Error::Config(format!("sample {:?} has no fold", s.id)))?;
        w.write_record([s.id.as_str(), &f.to_string()]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a fold file; `k` is one more than the largest fold index.
pub fn read_folds(path: impl AsRef<Path>, seed: u64) -> Result<FoldAssignment> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut fold_of = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| malformed(path, line, e.to_string()))?;
        if row.len() != 2 {
            return Err(malformed(path, line, "expected id,fold".into()));
        }
        let fold: usize = row[1]
            .parse()
            .map_err(|_| malformed(path, line, format!("bad fold index {:?}", &row[1])))?;
        if fold_of.insert(row[0].to_string(), fold).is_some() {
            return Err(malformed(path, line, Error::DuplicateId(row[0].to_string()).to_string()));
        }
    }
    let k = fold_of.values().max().map_or(0, |m| m + 1);
    FoldAssignment::from_map(k, seed, fold_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest_with_counts(counts: [usize; 4]) -> Manifest {
        let mut samples = Vec::new();
        for (c, &n) in ClassLabel::ALL.iter().zip(&counts) {
            for i in 0..n {
                samples.push(Sample {
                    id: format!("{}-{i}", c.name()),
                    image_path: PathBuf::from(format!("{}/{i}.png", c.name())),
                    label: *c,
                });
            }
        }
        Manifest::new(samples).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_one_per_class() {
        let f = write_tmp("id,image_path,label\na,a.png,normal\nb,b.png,anomalous\nc,c.png,2\nd,/abs/d.png,debris\n");
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.counts().0, [1, 1, 1, 1]);
        assert_eq!(m.samples()[2].label, ClassLabel::Alnus);
        assert_eq!(m.samples()[3].image_path, PathBuf::from("/abs/d.png"));
        assert!(m.samples()[0].image_path.ends_with("a.png"));
    }

    #[test]
    fn unknown_label_names_the_row() {
        let f = write_tmp("id,image_path,label\na,a.png,normal\nb,b.png,fungus\n");
        let err = load_manifest(f.path()).unwrap_err();
        match err {
            Error::MalformedRow { row, ref message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("fungus"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_rows() {
        let f = write_tmp("id,image_path,label\na,a.png,normal\na,b.png,alnus\n");
        assert!(matches!(load_manifest(f.path()), Err(Error::MalformedRow { row: 3, .. })));
        let f = write_tmp("id,image_path,label\na,a.png\n");
        assert!(matches!(load_manifest(f.path()), Err(Error::MalformedRow { row: 2, .. })));
        let f = write_tmp("name,path,label\na,a.png,normal\n");
        assert!(matches!(load_manifest(f.path()), Err(Error::MalformedRow { row: 1, .. })));
        assert!(matches!(load_manifest("/nonexistent/m.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn challenge_distribution_counts() {
        let m = manifest_with_counts([1566, 773, 8216, 724]);
        assert_eq!(m.counts().0, [1566, 773, 8216, 724]);
        assert_eq!(m.len(), 11279);
    }

    #[test]
    fn class_weights() {
        let w = compute_class_weights(&ClassMap([1566, 773, 8216, 724])).unwrap();
        for (got, want) in w.0.iter().zip([7.20, 14.59, 1.37, 15.58]) {
            assert!((got - want).abs() <= 0.01, "{got} vs {want}");
        }
        let w = compute_class_weights(&ClassMap([10, 10, 10, 10])).unwrap();
        assert_eq!(w.0, [4.0; 4]);
        let w = compute_class_weights(&ClassMap([1, 1, 1, 7])).unwrap();
        assert_eq!(&w.0[..3], &[10.0; 3]);
        assert!((w.0[3] - 10.0 / 7.0).abs() < 1e-15);
        assert!(matches!(compute_class_weights(&ClassMap([1, 0, 1, 1])), Err(Error::ZeroCount(_))));
    }

    #[test]
    fn kfold_perfectly_divisible() {
        let m = manifest_with_counts([5, 5, 5, 5]);
        let folds = stratified_kfold(&m, 5, 3).unwrap();
        for counts in folds.fold_class_counts(&m) {
            assert_eq!(counts.0, [1, 1, 1, 1]);
        }
    }

    #[test]
    fn kfold_challenge_alnus_split() {
        let m = manifest_with_counts([1566, 773, 8216, 724]);
        let folds = stratified_kfold(&m, 5, 11).unwrap();
        for counts in folds.fold_class_counts(&m) {
            assert!((1643..=1644).contains(&counts[ClassLabel::Alnus]));
        }
        assert_eq!(folds, stratified_kfold(&m, 5, 11).unwrap());
    }

    #[test]
    fn kfold_errors() {
        let m = manifest_with_counts([5, 5, 4, 5]);
        match stratified_kfold(&m, 5, 0) {
            Err(Error::TooFewSamples { class, .. }) => assert_eq!(class, "alnus"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(stratified_kfold(&m, 1, 0).is_err());
    }

    #[test]
    fn fold_file_round_trip() {
        let m = manifest_with_counts([6, 7, 8, 9]);
        let folds = stratified_kfold(&m, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("folds.csv");
        write_folds(&folds, &m, &p).unwrap();
        let back = read_folds(&p, 5).unwrap();
        assert_eq!(back, folds);
    }

    #[test]
    fn split_partitions_manifest() {
        let m = manifest_with_counts([10, 10, 10, 10]);
        let folds = stratified_kfold(&m, 5, 1).unwrap();
        let (train, test) = folds.split(&m, 2).unwrap();
        assert_eq!(train.len(), m.len() - test.len());
        assert!(test.samples().iter().all(|s| folds.fold_of(&s.id) == Some(2)));
        assert!(folds.split(&m, 5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kfold_invariants(counts in prop::array::uniform4(3usize..40), k in 2usize..4, seed in any::<u64>()) {
                let m = manifest_with_counts(counts);
                let folds = stratified_kfold(&m, k, seed).unwrap();
                prop_assert_eq!(folds.assignments().len(), m.len());
                let per_fold = folds.fold_class_counts(&m);
                for c in ClassLabel::ALL {
                    let sizes: Vec<usize> = per_fold.iter().map(|f| f[c]).collect();
                    let max = *sizes.iter().max().unwrap();
                    let min = *sizes.iter().min().unwrap();
                    prop_assert!(max - min <= 1);
                }
                let totals: Vec<usize> = per_fold.iter().map(|f| f.0.iter().sum()).collect();
                prop_assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
                prop_assert_eq!(folds, stratified_kfold(&m, k, seed).unwrap());
            }

            #[test]
            fn class_weight_times_count_is_total(counts in prop::array::uniform4(1usize..100_000)) {
                let total: usize = counts.iter().sum();
                let w = compute_class_weights(&ClassMap(counts)).unwrap();
                for (c, n) in ClassMap(counts).iter() {
                    let back = w[c] * n as f64;
                    prop_assert!((back - total as f64).abs() <= 1e-9 * total as f64);
                }
            }
        }
    }
}
