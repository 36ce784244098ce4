//! Fusing a 2 architecture x 3 size x 5 fold grid level by level, and what
//! happens when a leaf is missing.

use pollenfuse::ensemble::{fuse, hierarchical_fuse, FusionLevel, FusionTree, LeafKey, PredictionSet};
use pollenfuse::PredictionVector;

fn main() -> pollenfuse::Result<()> {
    let mut set = PredictionSet::new();
    let mut all = Vec::new();
    for (a, arch) in ["compact-a", "compact-b"].iter().enumerate() {
        for (s, size) in [224u32, 240, 260].iter().enumerate() {
            for fold in 0..5 {
                let lean = 0.1 * (a + s + fold) as f64 / 8.0;
                let v = PredictionVector::normalized([0.55 - lean, 0.2 + lean, 0.15, 0.1])?;
                set.insert("grain-17", LeafKey::new(*arch, *size, fold), v);
                all.push(v);
            }
        }
    }
    let tree = FusionTree::default();
    let fused = hierarchical_fuse(&set, &tree, "grain-17", false)?;
    println!("{} leaves, fold -> size -> arch: {:.4?}", set.leaf_count(), fused.probs());
    println!("flat mean of all leaves:        {:.4?}", fuse(&all)?.probs());

    let other = FusionTree {
        levels: [FusionLevel::Arch, FusionLevel::Size, FusionLevel::Fold],
    };
    println!("arch -> size -> fold:           {:.4?}", hierarchical_fuse(&set, &other, "grain-17", false)?.probs());

    let partial = set.filter(|k| !(k.arch == "compact-b" && k.size == 260 && k.fold == 0));
    match hierarchical_fuse(&partial, &tree, "grain-17", false) {
        Ok(_) => println!("unexpectedly fused an incomplete grid"),
        Err(e) => println!("\nwithout one leaf: {e}"),
    }
    println!("allow_partial:                  {:.4?}", hierarchical_fuse(&partial, &tree, "grain-17", true)?.probs());
    Ok(())
}
