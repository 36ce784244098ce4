//! Accuracy, balanced accuracy and weighted F1 on hand-made predictions, and
//! the table layout used for cross-validation reports.

use std::collections::BTreeMap;

use pollenfuse::dataset::ClassLabel::{self, *};
use pollenfuse::metrics::{MetricsReport, ResultsTable, Summary};

fn main() -> pollenfuse::Result<()> {
    let mut pairs: Vec<(ClassLabel, ClassLabel)> = vec![(Normal, Normal); 8];
    pairs.extend([(Normal, Anomalous); 2]);
    pairs.extend([(Anomalous, Anomalous), (Anomalous, Normal)]);
    let truth: BTreeMap<String, ClassLabel> = pairs.iter().enumerate().map(|(i, (t, _))| (format!("s{i}"), *t)).collect();
    let preds: BTreeMap<String, ClassLabel> = pairs.iter().enumerate().map(|(i, (_, p))| (format!("s{i}"), *p)).collect();

    let report = MetricsReport::evaluate(&preds, &truth)?;
    println!("{}", report.detail_text());

    let mut table = ResultsTable::new("Example table [%]");
    table.push("twelve samples", "84x84", Summary::of(&report));
    table.separator();
    let perfect = MetricsReport::evaluate(&truth, &truth)?;
    table.push("oracle", "84x84", Summary::of(&perfect));
    print!("{}", table.to_text());
    Ok(())
}
