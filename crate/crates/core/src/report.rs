//! Cross-validation result tables: one row per (architecture, size), then
//! per-architecture fusion over sizes and the fusion of all networks.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::ensemble::{classify, hierarchical_fuse, FusionTree, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, ResultsTable, Summary};

/// How per-sample predictions become one set of metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Metrics per held-out fold, then averaged over folds.
    #[default]
    FoldMean,
    /// Metrics over all samples at once.
    Pooled,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fold-mean" => Ok(Aggregation::FoldMean),
            "pooled" => Ok(Aggregation::Pooled),
            other => Err(Error::Config(format!("unknown aggregation {other:?} (fold-mean or pooled)"))),
        }
    }
}

/// Fused class decision per sample of `set`.
pub fn fused_labels(set: &PredictionSet, tree: &FusionTree, allow_partial: bool) -> Result<BTreeMap<String, ClassLabel>> {
    set.samples()
        .map(|s| hierarchical_fuse(set, tree, s, allow_partial).map(|v| (s.to_string(), classify(&v))))
        .collect()
}

fn restrict(truth: &BTreeMap<String, ClassLabel>, ids: impl Iterator<Item = String>) -> Result<BTreeMap<String, ClassLabel>> {
    ids.map(|id| {
        truth
            .get(&id)
            .map(|&c| (id.clone(), c))
            .ok_or_else(|| Error::KeyMismatch(format!("no ground truth for {id:?}")))
    })
    .collect()
}

/// Metrics of the fused predictions in `set`.
///
/// With [`Aggregation::FoldMean`] each sample must come from a single fold;
/// otherwise the pooled metrics are returned.
pub fn summarize(
    set: &PredictionSet,
    truth: &BTreeMap<String, ClassLabel>,
    tree: &FusionTree,
    aggregation: Aggregation,
    allow_partial: bool,
) -> Result<Summary> {
    let labels = fused_labels(set, tree, allow_partial)?;
    let mut by_fold: BTreeMap<usize, BTreeMap<String, ClassLabel>> = BTreeMap::new();
    let mut single_fold = true;
    for (id, &c) in &labels {
        let folds: BTreeSet<usize> = set.leaves(id).into_iter().flat_map(|l| l.keys().map(|k| k.fold)).collect();
        match (folds.len(), folds.first()) {
            (1, Some(&f)) => {
                by_fold.entry(f).or_default().insert(id.clone(), c);
            }
            _ => single_fold = false,
        }
    }
    if aggregation == Aggregation::Pooled || !single_fold {
        let t = restrict(truth, labels.keys().cloned())?;
        return Ok(Summary::of(&MetricsReport::evaluate(&labels, &t)?));
    }
    let reports = by_fold
        .values()
        .map(|preds| MetricsReport::evaluate(preds, &restrict(truth, preds.keys().cloned())?))
        .collect::<Result<Vec<_>>>()?;
    Summary::mean(&reports)
}

pub struct CrossValidationTables {
    pub per_size: ResultsTable,
    pub fused: ResultsTable,
}

impl CrossValidationTables {
    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.per_size.to_text(), self.fused.to_text())
    }
}

pub fn cross_validation_tables(
    set: &PredictionSet,
    truth: &BTreeMap<String, ClassLabel>,
    tree: &FusionTree,
    aggregation: Aggregation,
    allow_partial: bool,
) -> Result<CrossValidationTables> {
    if set.is_empty() {
        return Err(Error::EmptyFusion);
    }
    let archs = set.architectures();
    let mut per_size = ResultsTable::new("Cross-validation results [%] per network and input size");
    let mut fused = ResultsTable::new("Cross-validation results [%] fusing input sizes and networks");
    for (i, arch) in archs.iter().enumerate() {
        if i > 0 {
            per_size.separator();
        }
        let of_arch = set.filter(|k| &k.arch == arch);
        for size in of_arch.sizes() {
            let cell = of_arch.filter(|k| k.size == size);
            per_size.push(arch.clone(), format!("{size}x{size}"), summarize(&cell, truth, tree, aggregation, allow_partial)?);
        }
        fused.push(arch.clone(), "all sizes", summarize(&of_arch, truth, tree, aggregation, allow_partial)?);
    }
    fused.separator();
    fused.push("all networks", "all sizes", summarize(set, truth, tree, aggregation, allow_partial)?);
    Ok(CrossValidationTables { per_size, fused })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::LeafKey;
    use crate::network::PredictionVector;

    fn set_with(correct: impl Fn(&str, &LeafKey) -> bool) -> (PredictionSet, BTreeMap<String, ClassLabel>) {
        let mut set = PredictionSet::new();
        let mut truth = BTreeMap::new();
        for i in 0..20 {
            let id = format!("s{i:02}");
            let label = ClassLabel::ALL[i % 4];
            truth.insert(id.clone(), label);
            for arch in ["a", "b"] {
                for size in [224, 260] {
                    let key = LeafKey::new(arch, size, i % 5);
                    let c = if correct(&id, &key) { label } else { ClassLabel::ALL[(i + 1) % 4] };
                    set.insert(id.clone(), key, PredictionVector::one_hot(c));
                }
            }
        }
        (set, truth)
    }

    #[test]
    fn perfect_predictions_read_100() {
        let (set, truth) = set_with(|_, _| true);
        let tables = cross_validation_tables(&set, &truth, &FusionTree::default(), Aggregation::FoldMean, false).unwrap();
        assert_eq!(tables.per_size.rows.len(), 4);
        assert_eq!(tables.fused.rows.len(), 3);
        assert_eq!(tables.fused.rows[2].network, "all networks");
        let text = tables.to_text();
        assert_eq!(text.matches("100.00").count(), 21);
        assert!(text.contains("224x224"));
    }

    #[test]
    fn pooled_and_fold_mean_agree_on_equal_folds_for_accuracy() {
        let (set, truth) = set_with(|id, k| !(id == "s03" && k.arch == "a"));
        let cell = set.filter(|k| k.arch == "a" && k.size == 224);
        let pooled = summarize(&cell, &truth, &FusionTree::default(), Aggregation::Pooled, false).unwrap();
        let mean = summarize(&cell, &truth, &FusionTree::default(), Aggregation::FoldMean, false).unwrap();
        assert!((pooled.accuracy - 0.95).abs() < 1e-12);
        assert!((mean.accuracy - 0.95).abs() < 1e-12);
    }

    #[test]
    fn missing_truth_is_reported() {
        let (set, mut truth) = set_with(|_, _| true);
        truth.remove("s00");
        assert!(matches!(
            summarize(&set, &truth, &FusionTree::default(), Aggregation::Pooled, false),
            Err(Error::KeyMismatch(_))
        ));
    }

    #[test]
    fn aggregation_parses() {
        assert_eq!("pooled".parse::<Aggregation>().unwrap(), Aggregation::Pooled);
        assert_eq!("fold-mean".parse::<Aggregation>().unwrap(), Aggregation::FoldMean);
        assert!("mean".parse::<Aggregation>().is_err());
    }
}
