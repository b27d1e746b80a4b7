//! Density-based clustering with deterministic labeling.
//!
//! Neighborhoods are closed balls of radius `eps` and include the query point
//! itself. Clusters are numbered by their lexicographically smallest core
//! point, so labels depend only on the point set, not on its order. A border
//! point reachable from several clusters joins the lowest-numbered one.

use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::spatial::PointIndex;

pub const NOISE: i32 = -1;

pub fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let index = PointIndex::new(points);
    let neighbors: Vec<Vec<usize>> = points.iter().map(|p| index.within(p, eps)).collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    // Connected components of the core points.
    let mut component = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !is_core[start] || component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if is_core[j] && component[j] == usize::MAX {
                    component[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        components.push(members);
    }

    let key = |c: &Vec<usize>| {
        c.iter()
            .map(|&i| points[i])
            .min_by(lex_cmp)
            .expect("components are non-empty")
    };
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&key(&components[a]), &key(&components[b])));
    let mut rank = vec![0i32; components.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r as i32;
    }

    (0..n)
        .map(|i| {
            if is_core[i] {
                rank[component[i]]
            } else {
                neighbors[i]
                    .iter()
                    .filter(|&&j| is_core[j])
                    .map(|&j| rank[component[j]])
                    .min()
                    .unwrap_or(NOISE)
            }
        })
        .collect()
}

fn lex_cmp(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then_with(|| a.y.total_cmp(&b.y))
        .then_with(|| a.z.total_cmp(&b.z))
}

/// Sizes of each cluster, indexed by label.
pub fn cluster_sizes(labels: &[i32]) -> Vec<usize> {
    let k = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut sizes = vec![0; k];
    for &l in labels {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    sizes
}
