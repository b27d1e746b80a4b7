//! CLEAR-MOT scoring of predicted tracks against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Distance thresholds (meters) evaluated by default.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: u32,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub timestamp: f64,
    pub entries: Vec<TrackEntry>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth contains no objects; MOTA is undefined")]
    EmptyGroundTruth,
    #[error("ground truth has {gt} frames but prediction has {pred}")]
    FrameCountMismatch { gt: usize, pred: usize },
    #[error("frame {frame}: ground-truth time {gt} does not match predicted time {pred}")]
    TimestampMismatch { frame: usize, gt: f64, pred: f64 },
    #[error("frame at t={timestamp} lists track {id} more than once")]
    DuplicateId { timestamp: f64, id: u32 },
    #[error("distance threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// Counts and scores at a single distance threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub frames: usize,
    pub objects: usize,
    pub predictions: usize,
    pub matches: usize,
    pub switches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub mota: f64,
    /// Mean matched distance; `None` without matches.
    pub motp: Option<f64>,
    pub recall: f64,
    /// `None` without predictions.
    pub precision: Option<f64>,
}

/// `1 - (FP + FN + switches) / objects`.
pub fn mota(objects: usize, false_positives: usize, false_negatives: usize, switches: usize) -> f64 {
    1.0 - (false_positives + false_negatives + switches) as f64 / objects as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub thresholds: Vec<ThresholdMetrics>,
}

impl TrackingReport {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdMetrics> {
        self.thresholds.iter().find(|m| m.threshold == threshold)
    }

    /// One row per threshold, columns in the order of [`Self::CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for m in &self.thresholds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.threshold,
                m.frames,
                m.objects,
                m.predictions,
                m.matches,
                m.switches,
                m.false_positives,
                m.false_negatives,
                m.mota,
                opt(m.motp),
                m.recall,
                opt(m.precision),
            ));
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "threshold,frames,objects,predictions,matches,switches,fp,fn,mota,motp,recall,precision";
}

/// Minimum-cost assignment of rows to columns of a rectangular cost matrix.
/// Entries that are `None` are forbidden. Among assignments using only
/// permitted entries, the result has maximum cardinality and, within that,
/// minimum total cost. Returns `(row, column)` pairs sorted by row.
pub fn assign(costs: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let total: f64 = costs.iter().flatten().flatten().map(|c| c.abs()).sum();
    // Any permitted edge beats any forbidden one, whatever the other edges cost.
    let forbidden = 2.0 * total + 1.0;
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            costs[i][j].unwrap_or(forbidden)
        } else {
            forbidden
        }
    };

    // Shortest augmenting paths with potentials, 1-based with a virtual
    // column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            (i < rows && j < cols && costs[i][j].is_some()).then_some((i, j))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index pairs `(gt, pred)` matched within `threshold` in one frame, keeping
/// previous-frame partners (`carry`, by id) that are still close enough.
pub fn match_frame(
    gt: &[TrackEntry],
    pred: &[TrackEntry],
    threshold: f64,
    carry: &BTreeMap<u32, u32>,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut gt_free = vec![true; gt.len()];
    let mut pred_free = vec![true; pred.len()];
    for (gi, g) in gt.iter().enumerate() {
        let Some(&partner) = carry.get(&g.id) else {
            continue;
        };
        if let Some(pi) = pred.iter().position(|p| p.id == partner) {
            if pred_free[pi] && distance(&g.position, &pred[pi].position) <= threshold {
                pairs.push((gi, pi));
                gt_free[gi] = false;
                pred_free[pi] = false;
            }
        }
    }

    let rest_gt: Vec<usize> = (0..gt.len()).filter(|&i| gt_free[i]).collect();
    let rest_pred: Vec<usize> = (0..pred.len()).filter(|&j| pred_free[j]).collect();
    let costs: Vec<Vec<Option<f64>>> = rest_gt
        .iter()
        .map(|&i| {
            rest_pred
                .iter()
                .map(|&j| {
                    let d = distance(&gt[i].position, &pred[j].position);
                    (d <= threshold).then_some(d)
                })
                .collect()
        })
        .collect();
    pairs.extend(assign(&costs).into_iter().map(|(a, b)| (rest_gt[a], rest_pred[b])));
    pairs.sort_unstable();
    pairs
}

fn sorted_entries(frame: &TrackFrame) -> Result<Vec<TrackEntry>, EvalError> {
    let mut entries = frame.entries.clone();
    entries.sort_by_key(|e| e.id);
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(EvalError::DuplicateId {
            timestamp: frame.timestamp,
            id: w[0].id,
        });
    }
    Ok(entries)
}

/// Per-threshold CLEAR-MOT metrics; frames are paired by index and must
/// carry equal timestamps.
pub fn evaluate(gt: &[TrackFrame], pred: &[TrackFrame], thresholds: &[f64]) -> Result<TrackingReport, EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::FrameCountMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    if let Some(&t) = thresholds.iter().find(|t| t.is_nan() || **t <= 0.0) {
        return Err(EvalError::InvalidThreshold(t));
    }
    let mut frames = Vec::with_capacity(gt.len());
    for (k, (g, p)) in gt.iter().zip(pred).enumerate() {
        if (g.timestamp - p.timestamp).abs() > 1e-9 * g.timestamp.abs().max(1.0) {
            return Err(EvalError::TimestampMismatch {
                frame: k,
                gt: g.timestamp,
                pred: p.timestamp,
            });
        }
        frames.push((sorted_entries(g)?, sorted_entries(p)?));
    }
    let objects: usize = frames.iter().map(|(g, _)| g.len()).sum();
    if objects == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let predictions: usize = frames.iter().map(|(_, p)| p.len()).sum();

    let thresholds = thresholds
        .iter()
        .map(|&threshold| {
            let mut matches = 0;
            let mut switches = 0;
            let mut distance_sum = 0.0;
            let mut carry = BTreeMap::new();
            let mut last_partner: BTreeMap<u32, u32> = BTreeMap::new();
            for (g, p) in &frames {
                let pairs = match_frame(g, p, threshold, &carry);
                carry.clear();
                for &(gi, pi) in &pairs {
                    let (gid, pid) = (g[gi].id, p[pi].id);
                    if last_partner.insert(gid, pid).is_some_and(|prev| prev != pid) {
                        switches += 1;
                    }
                    carry.insert(gid, pid);
                    distance_sum += distance(&g[gi].position, &p[pi].position);
                }
                matches += pairs.len();
            }
            let false_negatives = objects - matches;
            let false_positives = predictions - matches;
            ThresholdMetrics {
                threshold,
                frames: frames.len(),
                objects,
                predictions,
                matches,
                switches,
                false_positives,
                false_negatives,
                mota: mota(objects, false_positives, false_negatives, switches),
                motp: (matches > 0).then(|| distance_sum / matches as f64),
                recall: matches as f64 / objects as f64,
                precision: (predictions > 0).then(|| matches as f64 / predictions as f64),
            }
        })
        .collect();
    Ok(TrackingReport { thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u32, x: f64, y: f64) -> TrackEntry {
        TrackEntry {
            id,
            position: [x, y, 0.0],
        }
    }

    fn frame(t: f64, entries: Vec<TrackEntry>) -> TrackFrame {
        TrackFrame { timestamp: t, entries }
    }

    #[test]
    fn two_by_two_prefers_diagonal() {
        let costs = vec![vec![Some(1.0), Some(2.0)], vec![Some(2.0), Some(1.0)]];
        assert_eq!(assign(&costs), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn forbidden_edges_are_never_used() {
        let gt = [entry(1, 0.0, 0.0)];
        let pred = [entry(7, 0.4, 0.0), entry(8, 5.0, 0.0)];
        assert_eq!(match_frame(&gt, &pred, 0.5, &BTreeMap::new()), vec![(0, 0)]);
        let costs = vec![vec![None, None], vec![None, Some(3.0)]];
        assert_eq!(assign(&costs), vec![(1, 1)]);
    }

    #[test]
    fn cardinality_wins_over_cost() {
        // Matching row 0 to column 0 alone is cheaper but leaves row 1 out.
        let costs = vec![vec![Some(0.1), Some(0.9)], vec![Some(0.9), None]];
        assert_eq!(assign(&costs), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn reference_counts_replay() {
        let m = mota(11793, 5328, 4262, 245);
        assert!((m - 0.17).abs() <= 0.005, "{m}");
    }

    #[test]
    fn perfect_tracking() {
        let frames: Vec<_> = (0..5)
            .map(|k| frame(k as f64 * 0.1, vec![entry(1, k as f64, 0.0), entry(2, 0.0, k as f64)]))
            .collect();
        let report = evaluate(&frames, &frames, &DEFAULT_THRESHOLDS).unwrap();
        for m in &report.thresholds {
            assert_eq!(m.mota, 1.0);
            assert_eq!(m.motp, Some(0.0));
            assert_eq!(m.switches, 0);
            assert_eq!((m.objects, m.matches), (10, 10));
        }
    }

    #[test]
    fn identity_swap_counts_once() {
        let gt: Vec<_> = (0..3)
            .map(|k| frame(k as f64, vec![entry(1, 0.0, 0.0), entry(2, 10.0, 0.0)]))
            .collect();
        let mut pred = gt.clone();
        pred[0].entries = vec![entry(5, 0.0, 0.0), entry(6, 10.0, 0.0)];
        pred[1].entries = vec![entry(5, 0.0, 0.0), entry(6, 10.0, 0.0)];
        pred[2].entries = vec![entry(9, 0.0, 0.0), entry(6, 10.0, 0.0)];
        let report = evaluate(&gt, &pred, &[2.0]).unwrap();
        let m = &report.thresholds[0];
        assert_eq!(m.switches, 1);
        assert!((m.mota - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn previous_partner_is_kept_while_in_range() {
        // At frame 1 the Hungarian optimum would swap partners; continuity
        // keeps the earlier pairing because it is still within range.
        let gt = vec![
            frame(0.0, vec![entry(1, 0.0, 0.0), entry(2, 1.0, 0.0)]),
            frame(1.0, vec![entry(1, 0.0, 0.0), entry(2, 1.0, 0.0)]),
        ];
        let pred = vec![
            frame(0.0, vec![entry(10, 0.0, 0.0), entry(20, 1.0, 0.0)]),
            frame(1.0, vec![entry(10, 0.9, 0.0), entry(20, 0.1, 0.0)]),
        ];
        let report = evaluate(&gt, &pred, &[1.5]).unwrap();
        assert_eq!(report.thresholds[0].switches, 0);
    }

    #[test]
    fn input_errors() {
        let g = vec![frame(0.0, vec![entry(1, 0.0, 0.0)])];
        assert_eq!(
            evaluate(&g, &[], &[1.0]),
            Err(EvalError::FrameCountMismatch { gt: 1, pred: 0 })
        );
        assert!(matches!(
            evaluate(&g, &[frame(0.5, vec![])], &[1.0]),
            Err(EvalError::TimestampMismatch { .. })
        ));
        assert_eq!(
            evaluate(&[frame(0.0, vec![])], &[frame(0.0, vec![])], &[1.0]),
            Err(EvalError::EmptyGroundTruth)
        );
        let dup = vec![frame(0.0, vec![entry(1, 0.0, 0.0), entry(1, 1.0, 0.0)])];
        assert!(matches!(
            evaluate(&dup, &g, &[1.0]),
            Err(EvalError::DuplicateId { id: 1, .. })
        ));
        assert_eq!(evaluate(&g, &g, &[0.0]), Err(EvalError::InvalidThreshold(0.0)));
    }

    #[test]
    fn csv_has_one_row_per_threshold() {
        let g = vec![frame(0.0, vec![entry(1, 0.0, 0.0)])];
        let csv = evaluate(&g, &g, &DEFAULT_THRESHOLDS).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], TrackingReport::CSV_HEADER);
        assert_eq!(lines[3], "2,1,1,1,1,0,0,0,1,0,1,1");
    }
}
