//! Exact radius and nearest-neighbor queries over 3D points.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

pub struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = if entries.is_empty() {
            None
        } else {
            Some(ImmutableKdTree::new_from_slice(&entries))
        };
        Self {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of and Euclidean distance to the closest stored point.
    pub fn nearest(&self, p: &Vector3<f64>) -> Option<(usize, f64)> {
        let tree = self.tree.as_ref()?;
        let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
        Some((nn.item as usize, nn.distance.sqrt()))
    }

    /// Whether some stored point lies within `radius` (inclusive).
    pub fn any_within(&self, p: &Vector3<f64>, radius: f64) -> bool {
        self.nearest(p).is_some_and(|(_, d)| d <= radius)
    }

    /// All stored points within `radius` (inclusive), in ascending index order.
    pub fn within(&self, p: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let Some(tree) = self.tree.as_ref() else {
            return Vec::new();
        };
        let mut out: Vec<usize> = tree
            .within_unsorted::<SquaredEuclidean>(&[p.x, p.y, p.z], radius * radius)
            .into_iter()
            .map(|nn| nn.item as usize)
            .collect();
        out.sort_unstable();
        out
    }
}
