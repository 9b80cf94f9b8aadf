use crate::error::{Error, Result};

pub const CLASS_COUNT: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    /// `None` when no class has both positives and negatives.
    pub macro_auc: Option<f64>,
    /// Classes with at least one true example.
    pub present: Vec<usize>,
    /// Set when some class is absent; metrics then cover present classes only.
    pub flagged: bool,
}

impl ClassificationReport {
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n: usize = self.confusion[class].iter().sum();
        (n > 0).then(|| self.confusion[class][class] as f64 / n as f64)
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve of `scores` for the positive set, with tied
/// scores contributing a diagonal segment (trapezoidal rule).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Some(area / (pos * neg) as f64)
}

/// Metrics from true class indices and per-example class probabilities
/// (any scores work for AUC; the prediction is the argmax).
pub fn classification_metrics(labels: &[usize], scores: &[[f64; CLASS_COUNT]]) -> Result<ClassificationReport> {
    if labels.len() != scores.len() || labels.is_empty() {
        return Err(Error::Invalid(format!(
            "{} labels for {} score rows",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= CLASS_COUNT) {
        return Err(Error::Invalid(format!("class index {bad} out of range")));
    }
    let mut confusion = [[0usize; CLASS_COUNT]; CLASS_COUNT];
    for (&l, s) in labels.iter().zip(scores) {
        confusion[l][argmax(s)] += 1;
    }
    let present: Vec<usize> = (0..CLASS_COUNT)
        .filter(|&c| confusion[c].iter().sum::<usize>() > 0)
        .collect();
    let recall = |c: usize| confusion[c][c] as f64 / confusion[c].iter().sum::<usize>() as f64;
    let balanced_accuracy = present.iter().map(|&c| recall(c)).sum::<f64>() / present.len() as f64;
    let f1 = |c: usize| {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..CLASS_COUNT).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let denom = (predicted + actual) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    };
    let macro_f1 = present.iter().map(|&c| f1(c)).sum::<f64>() / present.len() as f64;
    let aucs: Vec<f64> = present
        .iter()
        .filter_map(|&c| {
            let s: Vec<f64> = scores.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_auc(&s, &pos)
        })
        .collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(ClassificationReport {
        confusion,
        balanced_accuracy,
        macro_f1,
        macro_auc,
        flagged: present.len() < CLASS_COUNT,
        present,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(c: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        p[c] = 1.0;
        p
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 0, 1, 2];
        let scores: Vec<_> = labels.iter().map(|&l| one_hot(l)).collect();
        let r = classification_metrics(&labels, &scores).unwrap();
        assert_eq!((r.balanced_accuracy, r.macro_f1, r.macro_auc), (1.0, 1.0, Some(1.0)));
        assert!(!r.flagged);
    }

    #[test]
    fn hand_confusion_gives_point_six() {
        // Recalls 9/10, 6/10, 3/10.
        let rows = [[9, 1, 0], [2, 6, 2], [3, 4, 3]];
        let mut labels = vec![];
        let mut scores = vec![];
        for (t, row) in rows.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    labels.push(t);
                    scores.push(one_hot(p));
                }
            }
        }
        let r = classification_metrics(&labels, &scores).unwrap();
        assert_eq!(r.confusion, rows);
        assert!((r.balanced_accuracy - 0.6).abs() < 1e-12);
        for c in 0..3 {
            assert_eq!(r.confusion[c].iter().sum::<usize>(), 10);
        }
    }

    #[test]
    fn absent_class_is_flagged() {
        let r = classification_metrics(&[0, 1], &[one_hot(0), one_hot(2)]).unwrap();
        assert!(r.flagged);
        assert_eq!(r.present, vec![0, 1]);
        assert!((r.balanced_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.8, 0.9], &[true, true, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        // One inversion out of four pairs.
        assert_eq!(roc_auc(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]), Some(0.75));
        assert_eq!(roc_auc(&[0.5], &[true]), None);
    }
}
