//! Model evaluation on raw (unaugmented) scenes: novel-cluster accuracy
//! under Hungarian matching, collapse diagnostics and the full per-class
//! IoU report.

use ndarray::Array2;

use crate::metrics::{
    assignment_value, confusion_matrix, hungarian_match, per_class_iou, summarize, MetricsReport,
};
use crate::model::{classify, classify_columns, Model};

use super::{PipelineError, Scene};

/// Raw-coordinate encoder input for evaluation; the optional noise
/// channel is zeroed (it carries no signal once trained).
fn eval_input(model: &Model, scene: &Scene, rows: &[usize]) -> Array2<f64> {
    let dim = model.encoder.input_dim();
    let mut input = Array2::zeros((rows.len(), dim));
    for (r, &idx) in rows.iter().enumerate() {
        for c in 0..3 {
            input[[r, c]] = scene.points[idx][c];
        }
    }
    input
}

/// Predicted novel cluster (argmax over novel columns) and ground-truth
/// novel index for every novel-masked point that carries a label.
pub fn predict_novel_assignments(
    model: &Model,
    scenes: &[Scene],
) -> Result<(Vec<usize>, Vec<usize>, usize), PipelineError> {
    let novel_label_ids = novel_label_ids(scenes);
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for scene in scenes {
        let unl: Vec<usize> = (0..scene.points.len()).filter(|&i| !scene.known_mask[i]).collect();
        if unl.is_empty() {
            continue;
        }
        let feats = model.encoder.forward(&eval_input(model, scene, &unl))?;
        let (probs, _) = classify_columns(&feats, &model.bank, model.novel_columns())?;
        for (row, &idx) in probs.rows().into_iter().zip(unl.iter()) {
            let cluster = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap();
            if let Some(label) = scene.labels[idx] {
                let gt_idx = novel_label_ids.binary_search(&label).unwrap();
                pred.push(cluster);
                gt.push(gt_idx);
            }
        }
    }
    Ok((pred, gt, novel_label_ids.len()))
}

/// Hungarian-matched accuracy of novel points (count-maximizing matching).
pub fn novel_accuracy(model: &Model, scenes: &[Scene]) -> Result<f64, PipelineError> {
    let (pred, gt, n_gt) = predict_novel_assignments(model, scenes)?;
    if pred.is_empty() {
        return Err(PipelineError::NoNovelPoints);
    }
    let side = model.num_novel.max(n_gt);
    let mut counts = Array2::<f64>::zeros((side, side));
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        counts[[p, g]] += 1.0;
    }
    let matched = assignment_value(&counts, true)?;
    Ok(matched / pred.len() as f64)
}

/// Fraction of novel points assigned to the single most popular cluster
/// (1.0 = full collapse).
pub fn collapse_fraction(model: &Model, scenes: &[Scene]) -> Result<f64, PipelineError> {
    let (pred, _, _) = predict_novel_assignments(model, scenes)?;
    if pred.is_empty() {
        return Err(PipelineError::NoNovelPoints);
    }
    let mut counts = vec![0usize; model.num_novel];
    for &p in &pred {
        counts[p] += 1;
    }
    Ok(*counts.iter().max().unwrap() as f64 / pred.len() as f64)
}

fn novel_label_ids(scenes: &[Scene]) -> Vec<u32> {
    let mut ids: Vec<u32> = scenes
        .iter()
        .flat_map(|s| {
            s.labels
                .iter()
                .zip(s.known_mask.iter())
                .filter(|(l, m)| !**m && l.is_some())
                .map(|(l, _)| l.unwrap())
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Full evaluation: classify every labeled point over all classes, match
/// predicted novel clusters to ground-truth novel classes by pairwise IoU
/// (Hungarian), then report per-class IoU, the Novel/Known/All means and
/// the confusion matrix.
pub fn evaluate(model: &Model, scenes: &[Scene]) -> Result<MetricsReport, PipelineError> {
    let novel_ids = novel_label_ids(scenes);
    let n_known = model.num_known;
    let n_novel = model.num_novel.max(novel_ids.len());
    let n_classes = n_known + n_novel;

    // Gather predictions (full-bank argmax) and ground truth ids.
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for scene in scenes {
        let labeled: Vec<usize> =
            (0..scene.points.len()).filter(|&i| scene.labels[i].is_some()).collect();
        if labeled.is_empty() {
            continue;
        }
        let feats = model.encoder.forward(&eval_input(model, scene, &labeled))?;
        let probs = classify(&feats, &model.bank)?;
        for (row, &idx) in probs.rows().into_iter().zip(labeled.iter()) {
            let p = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap();
            let label = scene.labels[idx].unwrap();
            let g = if scene.known_mask[idx] {
                label as usize
            } else {
                n_known + novel_ids.binary_search(&label).unwrap()
            };
            pred.push(p);
            gt.push(g);
        }
    }

    // Match predicted novel clusters to gt novel classes by pairwise IoU.
    let mut iou_scores = Array2::<f64>::zeros((n_novel, n_novel));
    for c in 0..n_novel {
        for g in 0..n_novel {
            let (mut inter, mut union) = (0u64, 0u64);
            let (pc, gc) = (n_known + c, n_known + g);
            for (&p, &t) in pred.iter().zip(gt.iter()) {
                let in_p = p == pc;
                let in_g = t == gc;
                if in_p && in_g {
                    inter += 1;
                }
                if in_p || in_g {
                    union += 1;
                }
            }
            iou_scores[[c, g]] = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        }
    }
    let matching = hungarian_match(&iou_scores, true)?;

    // Relabel predicted novel clusters through the matching.
    let relabeled: Vec<usize> = pred
        .iter()
        .map(|&p| if p >= n_known { n_known + matching[p - n_known] } else { p })
        .collect();

    let class_set: Vec<usize> = (0..n_classes).collect();
    let per_class = per_class_iou(&relabeled, &gt, &class_set);
    let known_set: Vec<usize> = (0..n_known).collect();
    let novel_set: Vec<usize> = (n_known..n_classes).collect();

    // Rank novel classes by ground-truth size for head/medium/tail.
    let mut sizes = vec![0u64; n_novel];
    for &g in &gt {
        if g >= n_known {
            sizes[g - n_known] += 1;
        }
    }
    let novel_sizes: Vec<(usize, u64)> =
        novel_set.iter().map(|&id| (id, sizes[id - n_known])).collect();

    let mut report = summarize(&per_class, &known_set, &novel_set, &novel_sizes)?;
    report.matching = matching;
    let confusion = confusion_matrix(&relabeled, &gt, n_classes, n_classes)?;
    report.confusion = confusion.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(report)
}
