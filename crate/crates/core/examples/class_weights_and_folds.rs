//! Class weights from class counts and a stratified five-fold split of a
//! manifest with the challenge's class distribution.

use pollenfuse::dataset::{compute_class_weights, stratified_kfold, ClassLabel, ClassMap};
use pollenfuse::synthetic::{manifest_only, CHALLENGE_COUNTS};

fn main() -> pollenfuse::Result<()> {
    let counts = ClassMap(CHALLENGE_COUNTS);
    let weights = compute_class_weights(&counts)?;
    println!("{:<10} {:>6} {:>8}", "class", "count", "weight");
    for c in ClassLabel::ALL {
        println!("{:<10} {:>6} {:>8.2}", c.name(), counts[c], weights[c]);
    }

    let manifest = manifest_only(counts);
    let folds = stratified_kfold(&manifest, 5, 7)?;
    println!("\nfold  normal  anomalous  alnus  debris");
    for (f, fc) in folds.fold_class_counts(&manifest).iter().enumerate() {
        println!("{f:>4}  {:>6}  {:>9}  {:>5}  {:>6}", fc.0[0], fc.0[1], fc.0[2], fc.0[3]);
    }
    let (train, test) = folds.split(&manifest, 2)?;
    println!("\nfold 2 held out: {} train / {} test", train.len(), test.len());
    Ok(())
}
