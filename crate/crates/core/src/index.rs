//! Balanced k-d tree for exact nearest-neighbor queries.
//!
//! Exactness contract: for any query, results are identical to a linear scan
//! that compares candidates by `(squared distance, point index)`, so distance
//! ties always resolve to the lowest index. Equality of distances is exact
//! (same `dx*dx + dy*dy + dz*dz` evaluation on both paths), and plane pruning
//! is non-strict, so an equal-distance candidate on the far side is never
//! skipped.

use crate::geometry::{Point3, PointCloud};
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("k out of range: k={k}, index holds {n} points")]
    KOutOfRange { k: usize, n: usize },
}

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug)]
enum Node {
    /// Children are node ids; `axis` splits at `value`. Points with
    /// coordinate strictly below, or equal with lower point index, go left.
    Split {
        axis: usize,
        value: f64,
        left: u32,
        right: u32,
    },
    /// Range into `order`, sorted by point index.
    Leaf { start: u32, end: u32 },
}

/// Immutable nearest-neighbor index over a snapshot of a cloud's points.
/// Later changes to the source cloud do not affect it.
#[derive(Clone, Debug)]
pub struct NearestNeighborIndex {
    points: Vec<Point3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

/// Nodes visited by the last query, for index diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub nodes_visited: usize,
}

/// Max-heap entry ordered worst-first by `(d2, index)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    d2: f64,
    idx: u32,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl NearestNeighborIndex {
    /// Builds a balanced tree: median split on the widest-spread axis, with
    /// `(coordinate, point index)` as the (unique) sort key so duplicate
    /// coordinates still split deterministically.
    pub fn build(cloud: &PointCloud) -> Result<Self, IndexError> {
        if cloud.is_empty() {
            return Err(IndexError::EmptyCloud);
        }
        let points = cloud.points().to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(&points, &mut order, 0, points.len(), &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Index and Euclidean distance of the nearest point; ties go to the
    /// lowest point index.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        self.nearest_with_stats(query).0
    }

    pub fn nearest_with_stats(&self, query: &Point3) -> ((usize, f64), QueryStats) {
        let mut best = Neighbor {
            d2: f64::INFINITY,
            idx: u32::MAX,
        };
        let mut stats = QueryStats::default();
        self.nearest_rec(self.root, query, &mut best, &mut stats);
        ((best.idx as usize, best.d2.sqrt()), stats)
    }

    fn nearest_rec(&self, node: u32, query: &Point3, best: &mut Neighbor, stats: &mut QueryStats) {
        stats.nodes_visited += 1;
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let d2 = squared_distance(query, &self.points[idx as usize]);
                    let candidate = Neighbor { d2, idx };
                    if candidate < *best {
                        *best = candidate;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, query, best, stats);
                // Non-strict: an equal-d2 lower-index point may sit exactly on
                // the splitting plane's far side.
                if delta * delta <= best.d2 {
                    self.nearest_rec(far, query, best, stats);
                }
            }
        }
    }

    /// The `k` nearest points, sorted ascending by `(distance, index)`.
    pub fn k_nearest(&self, query: &Point3, k: usize) -> Result<Vec<(usize, f64)>, IndexError> {
        if k == 0 || k > self.points.len() {
            return Err(IndexError::KOutOfRange {
                k,
                n: self.points.len(),
            });
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        let mut stats = QueryStats::default();
        self.k_nearest_rec(self.root, query, k, &mut heap, &mut stats);
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|n| (n.idx as usize, n.d2.sqrt()))
            .collect())
    }

    fn k_nearest_rec(
        &self,
        node: u32,
        query: &Point3,
        k: usize,
        heap: &mut BinaryHeap<Neighbor>,
        stats: &mut QueryStats,
    ) {
        stats.nodes_visited += 1;
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let d2 = squared_distance(query, &self.points[idx as usize]);
                    let candidate = Neighbor { d2, idx };
                    if heap.len() < k {
                        heap.push(candidate);
                    } else if candidate < *heap.peek().expect("heap holds k > 0 items") {
                        heap.pop();
                        heap.push(candidate);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.k_nearest_rec(near, query, k, heap, stats);
                let prune = heap.len() == k && delta * delta > heap.peek().unwrap().d2;
                if !prune {
                    self.k_nearest_rec(far, query, k, heap, stats);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let count = end - start;
    if count <= LEAF_SIZE {
        order[start..end].sort_unstable();
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }

    let subset = &order[start..end];
    let mut lo = points[subset[0] as usize].coords;
    let mut hi = lo;
    for &idx in &subset[1..] {
        lo = lo.inf(&points[idx as usize].coords);
        hi = hi.sup(&points[idx as usize].coords);
    }
    let spread = hi - lo;
    let axis = if spread.x >= spread.y && spread.x >= spread.z {
        0
    } else if spread.y >= spread.z {
        1
    } else {
        2
    };

    let mid = count / 2;
    let key = |idx: u32| (points[idx as usize][axis], idx);
    order[start..end]
        .select_nth_unstable_by(mid, |&a, &b| key(a).partial_cmp(&key(b)).expect("finite coords"));
    let split_value = points[order[start + mid] as usize][axis];

    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes.push(Node::Split {
        axis,
        value: split_value,
        left,
        right,
    });
    (nodes.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn random_cloud(rng: &mut Xoshiro256StarStar, n: usize) -> PointCloud {
        let points = (0..n)
            .map(|_| {
                Point3::new(
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                )
            })
            .collect();
        PointCloud::new(points).unwrap()
    }

    /// Oracle: linear scan with lexicographic (d2, index) comparison.
    fn linear_nearest(points: &[Point3], query: &Point3) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d2 = squared_distance(query, p);
            if d2 < best.0 || (d2 == best.0 && i < best.1) {
                best = (d2, i);
            }
        }
        (best.1, best.0.sqrt())
    }

    fn linear_k_nearest(points: &[Point3], query: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (squared_distance(query, p), i))
            .collect();
        all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    #[test]
    fn empty_cloud_rejected() {
        let cloud = PointCloud::new(vec![]).unwrap();
        let err = NearestNeighborIndex::build(&cloud).unwrap_err();
        assert_eq!(err.to_string(), "empty cloud");
    }

    #[test]
    fn single_point_cloud() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)]).unwrap();
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        let (i, d) = index.nearest(&Point3::new(1.0, 2.0, 4.0));
        assert_eq!(i, 0);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(101);
        for n in [1usize, 2, 17, 100, 1000] {
            let cloud = random_cloud(&mut rng, n);
            let index = NearestNeighborIndex::build(&cloud).unwrap();
            for _ in 0..200 {
                let q = Point3::new(
                    rng.range_f64(-1.5, 1.5),
                    rng.range_f64(-1.5, 1.5),
                    rng.range_f64(-1.5, 1.5),
                );
                assert_eq!(index.nearest(&q), linear_nearest(cloud.points(), &q));
            }
        }
    }

    #[test]
    fn k_nearest_matches_linear_scan() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(202);
        let cloud = random_cloud(&mut rng, 300);
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        for k in [1usize, 2, 5, 16, 300] {
            for _ in 0..50 {
                let q = Point3::new(
                    rng.range_f64(-1.5, 1.5),
                    rng.range_f64(-1.5, 1.5),
                    rng.range_f64(-1.5, 1.5),
                );
                assert_eq!(
                    index.k_nearest(&q, k).unwrap(),
                    linear_k_nearest(cloud.points(), &q, k)
                );
            }
        }
    }

    #[test]
    fn duplicate_points_tie_break_to_lowest_index() {
        // Many exact duplicates: nearest must report the lowest index.
        let p = Point3::new(0.25, -0.5, 0.75);
        let mut points = vec![Point3::new(9.0, 9.0, 9.0); 3];
        points.extend(vec![p; 40]);
        points.push(Point3::new(-9.0, 9.0, 9.0));
        let cloud = PointCloud::new(points.clone()).unwrap();
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        let (i, d) = index.nearest(&p);
        assert_eq!((i, d), (3, 0.0));
        assert_eq!(index.nearest(&p), linear_nearest(&points, &p));

        let knn = index.k_nearest(&p, 5).unwrap();
        assert_eq!(knn, linear_k_nearest(&points, &p, 5));
        assert_eq!(
            knn.iter().map(|&(i, _)| i).collect::<Vec<_>>(),
            vec![3, 4, 5, 6, 7]
        );
    }

    #[test]
    fn grid_points_query_on_planes() {
        // Queries equidistant from several grid points exercise the tie path.
        let mut points = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    points.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let cloud = PointCloud::new(points.clone()).unwrap();
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        for q in [
            Point3::new(0.5, 0.5, 0.5),
            Point3::new(2.5, 2.0, 2.0),
            Point3::new(2.0, 2.0, 2.0),
            Point3::new(-1.0, 2.5, 4.5),
        ] {
            assert_eq!(index.nearest(&q), linear_nearest(&points, &q));
            assert_eq!(
                index.k_nearest(&q, 8).unwrap(),
                linear_k_nearest(&points, &q, 8)
            );
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let cloud = random_cloud(&mut Xoshiro256StarStar::seed_from_u64(5), 10);
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        for k in [0usize, 11, 1000] {
            let err = index.k_nearest(&Point3::origin(), k).unwrap_err();
            assert!(err.to_string().starts_with("k out of range"));
        }
        assert!(index.k_nearest(&Point3::origin(), 10).is_ok());
    }

    #[test]
    fn index_is_a_snapshot() {
        let cloud = random_cloud(&mut Xoshiro256StarStar::seed_from_u64(6), 50);
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        let before = index.nearest(&Point3::origin());
        drop(cloud);
        assert_eq!(index.nearest(&Point3::origin()), before);
    }

    #[test]
    fn query_visits_fewer_nodes_than_leaf_count_on_average() {
        // Sanity check that pruning works at all: average visited nodes on a
        // large cloud must be far below the total node count.
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 20_000);
        let index = NearestNeighborIndex::build(&cloud).unwrap();
        let total_nodes = index.nodes.len();
        let mut visited_sum = 0usize;
        for _ in 0..100 {
            let q = Point3::new(
                rng.range_f64(-1.0, 1.0),
                rng.range_f64(-1.0, 1.0),
                rng.range_f64(-1.0, 1.0),
            );
            let (_, stats) = index.nearest_with_stats(&q);
            visited_sum += stats.nodes_visited;
        }
        assert!(visited_sum / 100 < total_nodes / 10);
    }
}
