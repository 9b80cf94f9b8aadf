//! Pearson correlation, Welch's t-test and the classification metrics on
//! small hand-made inputs.

use netmae::analysis::{classification_metrics, pearson, roc_auc, welch_t};

fn main() -> netmae::Result<()> {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    println!(
        "pearson(x, [2,1,4,3,5]) = {:.3}",
        pearson(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap_or(f64::NAN)
    );
    let a = [14.1, 14.9, 14.4, 15.0, 14.6, 14.2];
    let b = [15.3, 15.9, 16.4, 15.1, 15.8];
    let w = welch_t(&a, &b)?;
    println!("welch t = {:.3}, dof = {:.2}, two-sided p = {:.2e}", w.t, w.dof, w.p);
    println!(
        "AUC = {:?}",
        roc_auc(&[0.9, 0.8, 0.3, 0.6, 0.2], &[true, true, false, true, false])
    );
    let labels = [0, 0, 1, 1, 2, 2];
    let scores = [
        [0.7, 0.2, 0.1],
        [0.3, 0.6, 0.1],
        [0.2, 0.7, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.2, 0.7],
        [0.2, 0.1, 0.7],
    ];
    let r = classification_metrics(&labels, &scores)?;
    println!(
        "confusion {:?}, BAcc {:.3}, macro-F1 {:.3}, macro-AUC {:?}",
        r.confusion, r.balanced_accuracy, r.macro_f1, r.macro_auc
    );
    Ok(())
}
