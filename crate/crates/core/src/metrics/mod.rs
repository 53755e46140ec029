//! Evaluation: confusion matrices, Hungarian matching of novel clusters to
//! ground-truth classes, per-class IoU and the Novel/Known/All summary.

mod hungarian;

pub use hungarian::{assignment_value, hungarian_match};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("id {id} out of range (limit {limit})")]
    IdOutOfRange { id: usize, limit: usize },
    #[error("score matrix contains a non-finite value")]
    NonFiniteScore,
    #[error("score matrix is {rows}x{cols}, not square (pad rectangular inputs with zeros)")]
    NotSquare { rows: usize, cols: usize },
    #[error("known and novel id sets overlap (id {0})")]
    OverlappingIdSets(usize),
    #[error("pred and gt lengths differ: {pred} vs {gt}")]
    LengthMismatch { pred: usize, gt: usize },
}

/// `counts[[i, j]]` = number of points predicted `i` with ground truth `j`.
pub fn confusion_matrix(
    pred: &[usize],
    gt: &[usize],
    n_pred: usize,
    n_gt: usize,
) -> Result<Array2<u64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    let mut counts = Array2::<u64>::zeros((n_pred, n_gt));
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if p >= n_pred {
            return Err(MetricsError::IdOutOfRange { id: p, limit: n_pred });
        }
        if g >= n_gt {
            return Err(MetricsError::IdOutOfRange { id: g, limit: n_gt });
        }
        counts[[p, g]] += 1;
    }
    Ok(counts)
}

/// Per-class intersection over union. `0/0` (class absent from both) is
/// reported as 0 with `present = false`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassIou {
    pub class_id: usize,
    pub iou: f64,
    pub present: bool,
}

pub fn per_class_iou(pred: &[usize], gt: &[usize], class_set: &[usize]) -> Vec<ClassIou> {
    class_set
        .iter()
        .map(|&c| {
            let mut inter = 0u64;
            let mut union = 0u64;
            for (&p, &g) in pred.iter().zip(gt.iter()) {
                let in_p = p == c;
                let in_g = g == c;
                if in_p && in_g {
                    inter += 1;
                }
                if in_p || in_g {
                    union += 1;
                }
            }
            if union == 0 {
                ClassIou { class_id: c, iou: 0.0, present: false }
            } else {
                ClassIou { class_id: c, iou: inter as f64 / union as f64, present: true }
            }
        })
        .collect()
}

/// Per-class IoU plus the Novel/Known/All means and the head/medium/tail
/// breakdown of novel classes ranked by ground-truth size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassIou>,
    pub known_mean: f64,
    pub novel_mean: f64,
    pub all_mean: f64,
    pub head_mean: Option<f64>,
    pub medium_mean: Option<f64>,
    pub tail_mean: Option<f64>,
    /// Novel cluster id -> matched ground-truth novel class id.
    pub matching: Vec<usize>,
    pub confusion: Vec<Vec<u64>>,
}

/// Builds the summary from a per-class IoU vector. Absent classes (0/0)
/// are excluded from every mean. `novel_gt_sizes` ranks novel classes for
/// the head/medium/tail split: with four novel classes the two largest
/// form the head; otherwise the largest is the head and the smallest the
/// tail.
pub fn summarize(
    per_class: &[ClassIou],
    known_ids: &[usize],
    novel_ids: &[usize],
    novel_gt_sizes: &[(usize, u64)],
) -> Result<MetricsReport, MetricsError> {
    for k in known_ids {
        if novel_ids.contains(k) {
            return Err(MetricsError::OverlappingIdSets(*k));
        }
    }
    let mean_over = |ids: &[usize]| {
        let vals: Vec<f64> = ids
            .iter()
            .filter_map(|&id| per_class.iter().find(|c| c.class_id == id))
            .filter(|c| c.present)
            .map(|c| c.iou)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };

    let known_mean = mean_over(known_ids);
    let novel_mean = mean_over(novel_ids);
    let all_ids: Vec<usize> = known_ids.iter().chain(novel_ids.iter()).copied().collect();
    let all_mean = mean_over(&all_ids);

    let (head_mean, medium_mean, tail_mean) = if novel_ids.len() >= 3 {
        let mut ranked: Vec<(usize, u64)> = novel_gt_sizes.to_vec();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let head_count = if ranked.len() == 4 { 2 } else { 1 };
        let head: Vec<usize> = ranked[..head_count].iter().map(|r| r.0).collect();
        let tail: Vec<usize> = vec![ranked[ranked.len() - 1].0];
        let medium: Vec<usize> =
            ranked[head_count..ranked.len() - 1].iter().map(|r| r.0).collect();
        (Some(mean_over(&head)), Some(mean_over(&medium)), Some(mean_over(&tail)))
    } else {
        (None, None, None)
    };

    Ok(MetricsReport {
        per_class: per_class.to_vec(),
        known_mean,
        novel_mean,
        all_mean,
        head_mean,
        medium_mean,
        tail_mean,
        matching: Vec::new(),
        confusion: Vec::new(),
    })
}

/// Renders the report as an aligned text table: one column per class, then
/// Novel/Known/All.
pub fn render_table(report: &MetricsReport) -> String {
    let mut header = String::from("class ");
    let mut values = String::from("iou   ");
    for c in &report.per_class {
        header.push_str(&format!("{:>8}", format!("c{}", c.class_id)));
        let cell = if c.present { format!("{:.3}", c.iou) } else { "-".to_string() };
        values.push_str(&format!("{cell:>8}"));
    }
    for (name, v) in [
        ("Novel", report.novel_mean),
        ("Known", report.known_mean),
        ("All", report.all_mean),
    ] {
        header.push_str(&format!("{name:>8}"));
        values.push_str(&format!("{:>8.3}", v));
    }
    format!("{header}\n{values}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn confusion_diagonal_when_pred_equals_gt() {
        let ids = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let m = confusion_matrix(&ids, &ids, 2, 2).unwrap();
        assert_eq!(m[[0, 0]], 5);
        assert_eq!(m[[1, 1]], 5);
        assert_eq!(m[[0, 1]], 0);
        assert_eq!(m[[1, 0]], 0);
    }

    #[test]
    fn confusion_collapsed_predictions() {
        let pred = vec![0usize; 6];
        let gt = vec![0, 1, 0, 1, 0, 1];
        let m = confusion_matrix(&pred, &gt, 2, 2).unwrap();
        assert_eq!(m[[0, 0]], 3);
        assert_eq!(m[[0, 1]], 3);
        assert_eq!(m.row(1).sum(), 0);
    }

    #[test]
    fn confusion_conserves_count_and_checks_range() {
        let pred = vec![0, 2, 1, 2];
        let gt = vec![1, 1, 0, 2];
        let m = confusion_matrix(&pred, &gt, 3, 3).unwrap();
        assert_eq!(m.sum(), 4);
        assert!(matches!(
            confusion_matrix(&[5], &[0], 3, 3),
            Err(MetricsError::IdOutOfRange { id: 5, .. })
        ));
    }

    #[test]
    fn iou_analytic_cases() {
        let perfect = per_class_iou(&[0, 1, 1], &[0, 1, 1], &[0, 1]);
        assert!(perfect.iter().all(|c| c.iou == 1.0 && c.present));

        let disjoint = per_class_iou(&[0, 0], &[1, 1], &[0, 1]);
        assert!(disjoint.iter().all(|c| c.iou == 0.0 && c.present));

        // pred class 0 = {a, b}, gt class 0 = {b, c} -> 1/3.
        let third = per_class_iou(&[0, 0, 9], &[9, 0, 0], &[0]);
        assert_abs_diff_eq!(third[0].iou, 1.0 / 3.0, epsilon = 1e-15);

        let absent = per_class_iou(&[1, 1], &[1, 1], &[0, 1]);
        assert!(!absent[0].present);
        assert_eq!(absent[0].iou, 0.0);
    }

    #[test]
    fn summarize_means() {
        let per_class = vec![
            ClassIou { class_id: 0, iou: 0.4, present: true },
            ClassIou { class_id: 1, iou: 0.6, present: true },
            ClassIou { class_id: 2, iou: 0.2, present: true },
        ];
        let report = summarize(&per_class, &[0, 1], &[2], &[(2, 100)]).unwrap();
        assert_abs_diff_eq!(report.known_mean, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(report.novel_mean, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(report.all_mean, 0.4, epsilon = 1e-15);
        assert!(report.head_mean.is_none());
    }

    #[test]
    fn summarize_all_ones() {
        let per_class: Vec<ClassIou> = (0..4)
            .map(|c| ClassIou { class_id: c, iou: 1.0, present: true })
            .collect();
        let report = summarize(&per_class, &[0, 1], &[2, 3], &[(2, 10), (3, 5)]).unwrap();
        assert_eq!(report.known_mean, 1.0);
        assert_eq!(report.novel_mean, 1.0);
        assert_eq!(report.all_mean, 1.0);
    }

    #[test]
    fn head_medium_tail_singletons() {
        let per_class = vec![
            ClassIou { class_id: 5, iou: 0.9, present: true },
            ClassIou { class_id: 6, iou: 0.5, present: true },
            ClassIou { class_id: 7, iou: 0.1, present: true },
        ];
        // Sizes rank 6 > 5 > 7.
        let report =
            summarize(&per_class, &[], &[5, 6, 7], &[(5, 50), (6, 500), (7, 5)]).unwrap();
        assert_eq!(report.head_mean, Some(0.5));
        assert_eq!(report.medium_mean, Some(0.9));
        assert_eq!(report.tail_mean, Some(0.1));
    }

    #[test]
    fn four_novel_classes_put_two_in_the_head() {
        let per_class: Vec<ClassIou> = (0..4)
            .map(|c| ClassIou { class_id: c, iou: c as f64 / 10.0, present: true })
            .collect();
        let sizes = vec![(0usize, 700u64), (1, 200), (2, 80), (3, 20)];
        let report = summarize(&per_class, &[], &[0, 1, 2, 3], &sizes).unwrap();
        assert_abs_diff_eq!(report.head_mean.unwrap(), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(report.medium_mean.unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(report.tail_mean.unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded_from_means() {
        let per_class = vec![
            ClassIou { class_id: 0, iou: 0.8, present: true },
            ClassIou { class_id: 1, iou: 0.0, present: false },
        ];
        let report = summarize(&per_class, &[0, 1], &[], &[]).unwrap();
        assert_abs_diff_eq!(report.known_mean, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn overlapping_id_sets_rejected() {
        let per_class = vec![ClassIou { class_id: 0, iou: 1.0, present: true }];
        assert!(matches!(
            summarize(&per_class, &[0], &[0], &[(0, 1)]),
            Err(MetricsError::OverlappingIdSets(0))
        ));
    }
}
