//! The weighted focal loss, its gradient, and the step-halving learning rate.

use pollenfuse::dataset::{ClassLabel, ClassMap};
use pollenfuse::optimize::{focal_loss, focal_loss_grad, lr_at_epoch, LossConfig, CHALLENGE_CLASS_WEIGHTS};
use pollenfuse::PredictionVector;

fn main() -> pollenfuse::Result<()> {
    let cfg = LossConfig::new(ClassMap(CHALLENGE_CLASS_WEIGHTS), 2.0)?;
    println!("{:>6}  {:>12}  {:>12}  {:>12}", "p_t", "loss(alnus)", "loss(debris)", "dL/dp(debris)");
    for p in [0.05, 0.25, 0.5, 0.75, 0.95, 1.0] {
        let rest = (1.0 - p) / 3.0;
        let alnus = PredictionVector::new([rest, rest, p, rest])?;
        let debris = PredictionVector::new([rest, rest, rest, p])?;
        let g = focal_loss_grad(&debris, ClassLabel::Debris, &cfg);
        println!(
            "{p:>6.2}  {:>12.5}  {:>12.5}  {:>12.5}",
            focal_loss(&alnus, ClassLabel::Alnus, &cfg),
            focal_loss(&debris, ClassLabel::Debris, &cfg),
            g[3]
        );
    }

    println!("\nepoch  learning rate");
    let mut last = f64::NAN;
    for e in 0..40 {
        let lr = lr_at_epoch(0.001, e);
        if lr != last {
            println!("{e:>5}  {lr:e}");
            last = lr;
        }
    }
    Ok(())
}
