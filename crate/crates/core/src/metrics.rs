//! Bidirectional point-set evaluation: mean nearest-neighbor distance from
//! prediction to ground-truth surface samples (shape similarity) and back
//! (surface coverage).
//!
//! Nearest neighbors are exact. The spatial index prunes subtrees by
//! bounding-box distance but never accepts an approximate answer, and every
//! candidate distance is computed by the same expression as the brute-force
//! scan, so results are bit-identical to an O(n*m) scan.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::math::{self, Vec3};
use crate::mesh::SurfaceSamples;
use crate::pool::{chunked_sum, SerialPool, TaskPool};

pub const DEFAULT_LEAF_SIZE: usize = 16;

/// Squared distance, with a fixed evaluation order shared by the index and
/// the brute-force oracle so both produce identical bits.
#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

struct Node {
    lo: Vec3,
    hi: Vec3,
    kind: NodeKind,
}

/// Median-split bounding-box tree over a point set. Construction is
/// deterministic: the split axis is the largest box extent (ties to the
/// lower axis), points sort by (coordinate, original index), and the median
/// slot goes to the right half.
pub struct NnIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

pub fn build_index(cloud: &PointCloud, leaf_size: usize) -> Result<NnIndex> {
    if cloud.is_empty() {
        return Err(Error::Contract(
            "nearest-neighbor index requires at least one point",
        ));
    }
    cloud.validate()?;
    let leaf_size = leaf_size.max(1);
    let points = cloud.points.clone();
    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    let mut nodes = Vec::new();
    let root = build_node(&points, &mut order, 0, points.len(), leaf_size, &mut nodes);
    Ok(NnIndex {
        points,
        order,
        nodes,
        root,
    })
}

fn bounds(points: &[Vec3], order: &[u32], start: usize, end: usize) -> (Vec3, Vec3) {
    let first = points[order[start] as usize];
    let mut lo = first;
    let mut hi = first;
    for &i in &order[start + 1..end] {
        let p = points[i as usize];
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        lo.z = lo.z.min(p.z);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
        hi.z = hi.z.max(p.z);
    }
    (lo, hi)
}

fn build_node(
    points: &[Vec3],
    order: &mut Vec<u32>,
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let (lo, hi) = bounds(points, order, start, end);
    if end - start <= leaf_size {
        nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        return nodes.len() - 1;
    }
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let coord = |p: Vec3| match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    };
    order[start..end].sort_unstable_by(|&a, &b| {
        let ka = (coord(points[a as usize]), a);
        let kb = (coord(points[b as usize]), b);
        ka.partial_cmp(&kb).expect("validated points are never NaN")
    });
    let mid = start + (end - start) / 2;
    let left = build_node(points, order, start, mid, leaf_size, nodes);
    let right = build_node(points, order, mid, end, leaf_size, nodes);
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Split { left, right },
    });
    nodes.len() - 1
}

impl NnIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor: returns (original point index, squared
    /// distance). Equidistant candidates resolve to the lowest index.
    pub fn query(&self, q: Vec3) -> (u32, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        self.visit(self.root, q, &mut best);
        best
    }

    /// Nearest distance in world units.
    pub fn nearest_distance(&self, q: Vec3) -> f64 {
        math::sqrt(self.query(q).1)
    }

    fn visit(&self, node_id: usize, q: Vec3, best: &mut (u32, f64)) {
        let node = &self.nodes[node_id];
        // Squared distance from q to the node's box; equal-distance boxes
        // still descend so index tie-breaking stays exact.
        if box_dist2(node.lo, node.hi, q) > best.1 {
            return;
        }
        match node.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = dist2(q, self.points[i as usize]);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let dl = box_dist2(self.nodes[left].lo, self.nodes[left].hi, q);
                let dr = box_dist2(self.nodes[right].lo, self.nodes[right].hi, q);
                if dl <= dr {
                    self.visit(left, q, best);
                    self.visit(right, q, best);
                } else {
                    self.visit(right, q, best);
                    self.visit(left, q, best);
                }
            }
        }
    }
}

#[inline]
fn box_dist2(lo: Vec3, hi: Vec3, q: Vec3) -> f64 {
    let dx = (lo.x - q.x).max(0.0).max(q.x - hi.x);
    let dy = (lo.y - q.y).max(0.0).max(q.y - hi.y);
    let dz = (lo.z - q.z).max(0.0).max(q.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

/// Brute-force nearest neighbor over a raw slice: the oracle the index is
/// held to, and the `--exact-scan` evaluation path.
pub fn brute_force_nearest(points: &[Vec3], q: Vec3) -> (u32, f64) {
    let mut best = (u32::MAX, f64::INFINITY);
    for (i, &p) in points.iter().enumerate() {
        let d2 = dist2(q, p);
        if d2 < best.1 {
            best = (i as u32, d2);
        }
    }
    best
}

/// Mean exact nearest distance from every source point to the indexed
/// target set. Summation is chunked in fixed order, so the value is
/// independent of worker count.
pub fn mean_nn_distance(source: &PointCloud, target: &NnIndex, pool: &dyn TaskPool) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::Contract(
            "mean nearest distance requires a non-empty source",
        ));
    }
    let total = chunked_sum(pool, source.len(), |i| {
        target.nearest_distance(source.points[i])
    });
    Ok(total / source.len() as f64)
}

/// The bidirectional error pair: prediction-to-ground-truth measures shape
/// similarity, ground-truth-to-prediction measures surface coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeError {
    pub pred_to_gt: f64,
    pub gt_to_pred: f64,
}

pub fn shape_error(
    pred: &PointCloud,
    gt: &SurfaceSamples,
    pool: &dyn TaskPool,
) -> Result<ShapeError> {
    if pred.is_empty() || gt.points.is_empty() {
        return Err(Error::Contract("shape error requires two non-empty clouds"));
    }
    let gt_index = build_index(&gt.points, DEFAULT_LEAF_SIZE)?;
    let pred_index = build_index(pred, DEFAULT_LEAF_SIZE)?;
    Ok(ShapeError {
        pred_to_gt: mean_nn_distance(pred, &gt_index, pool)?,
        gt_to_pred: mean_nn_distance(&gt.points, &pred_index, pool)?,
    })
}

/// [`shape_error`] with the serial pool; convenient for tests and reports.
pub fn shape_error_serial(pred: &PointCloud, gt: &SurfaceSamples) -> Result<ShapeError> {
    shape_error(pred, gt, &SerialPool)
}
