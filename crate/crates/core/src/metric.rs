//! Trimmed asymmetric cloud-to-cloud distance.
//!
//! The directed distance from cloud A to cloud B is the mean of per-point
//! nearest-neighbor distances after discarding outliers: points whose
//! distance exceeds `k` times the median of all per-point distances. The
//! trimming makes the score robust to partial overlap (cropped captures,
//! occlusions), which ordinary mean or Hausdorff distances are not.

use crate::geometry::PointCloud;
use crate::index::{IndexError, NearestNeighborIndex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("trim factor k must be finite and positive, got {0}")]
    InvalidTrimFactor(f64),
    #[error("all points trimmed")]
    AllPointsTrimmed,
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Directed trimmed distance plus the quantities behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimmedDistanceResult {
    /// Mean nearest-neighbor distance over retained points.
    pub distance: f64,
    /// Median of all per-point nearest-neighbor distances.
    pub median: f64,
    /// Points discarded as outliers (distance > k * median).
    pub outlier_count: usize,
    /// Points kept; `outlier_count + retained_count` equals the source size.
    pub retained_count: usize,
    /// Per-point nearest-neighbor distances, in source point order.
    pub per_point_distances: Vec<f64>,
}

/// Euclidean distance from a point to the closest point of an indexed cloud.
pub fn point_to_cloud_distance(p: &crate::geometry::Point3, cloud: &NearestNeighborIndex) -> f64 {
    cloud.nearest(p).1
}

/// Median of a pre-sorted slice: middle element for odd lengths, mean of the
/// two middle elements for even lengths. Callers guarantee non-emptiness.
pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Directed trimmed distance from `source` to the indexed `target`.
///
/// Outliers are points with distance strictly greater than `k` times the
/// median per-point distance. A zero median (at least half the points lie
/// exactly on the target) disables trimming for that evaluation: in that
/// regime the clouds overlap so well that anything far away is signal, not
/// noise, and a zero threshold would reject every point off the surface.
pub fn trimmed_cloud_distance(
    source: &PointCloud,
    target: &NearestNeighborIndex,
    k: f64,
) -> Result<TrimmedDistanceResult, MetricError> {
    if source.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    if !k.is_finite() || k <= 0.0 {
        return Err(MetricError::InvalidTrimFactor(k));
    }

    let per_point_distances: Vec<f64> = source
        .points()
        .iter()
        .map(|p| target.nearest(p).1)
        .collect();

    let mut sorted = per_point_distances.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let median = median_of_sorted(&sorted);

    let mut sum = 0.0;
    let mut retained_count = 0usize;
    if median == 0.0 {
        for &d in &per_point_distances {
            sum += d;
        }
        retained_count = per_point_distances.len();
    } else {
        let threshold = k * median;
        for &d in &per_point_distances {
            if d <= threshold {
                sum += d;
                retained_count += 1;
            }
        }
    }
    let outlier_count = per_point_distances.len() - retained_count;
    if retained_count == 0 {
        return Err(MetricError::AllPointsTrimmed);
    }

    Ok(TrimmedDistanceResult {
        distance: sum / retained_count as f64,
        median,
        outlier_count,
        retained_count,
        per_point_distances,
    })
}

/// Mean of the two directed trimmed distances. Indexes both clouds.
pub fn symmetric_trimmed_distance(a: &PointCloud, b: &PointCloud, k: f64) -> Result<f64, MetricError> {
    let index_a = NearestNeighborIndex::build(a)?;
    let index_b = NearestNeighborIndex::build(b)?;
    let ab = trimmed_cloud_distance(a, &index_b, k)?.distance;
    let ba = trimmed_cloud_distance(b, &index_a, k)?.distance;
    Ok((ab + ba) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, RigidMotion, SimilarityTransform, Vector3};
    use crate::rng::Xoshiro256StarStar;
    use approx::assert_relative_eq;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    fn random_cloud(rng: &mut Xoshiro256StarStar, n: usize, extent: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.range_f64(-extent, extent),
                        rng.range_f64(-extent, extent),
                        rng.range_f64(-extent, extent),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_point_worked_example() {
        // Source {(0,0,0),(1,0,0)} against target {(0,0,0),(2,0,0)}:
        // distances {0, 1}, median 0.5, threshold 2.0, nothing trimmed,
        // mean 0.5.
        let source = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let target = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let index = NearestNeighborIndex::build(&target).unwrap();
        let r = trimmed_cloud_distance(&source, &index, 4.0).unwrap();
        assert_eq!(r.per_point_distances, vec![0.0, 1.0]);
        assert_eq!(r.median, 0.5);
        assert_eq!(r.outlier_count, 0);
        assert_eq!(r.retained_count, 2);
        assert_eq!(r.distance, 0.5);
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let c = random_cloud(&mut rng, 200, 1.0);
        let index = NearestNeighborIndex::build(&c).unwrap();
        let r = trimmed_cloud_distance(&c, &index, 4.0).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.median, 0.0);
        assert_eq!(r.outlier_count, 0);
        assert_eq!(r.retained_count, 200);
    }

    #[test]
    fn outlier_is_trimmed() {
        // Nine coincident-ish points and one far outlier: median small but
        // nonzero, outlier past k * median gets dropped.
        let mut pts: Vec<[f64; 3]> = (0..9)
            .map(|i| [i as f64 * 0.01, 0.0, 0.0])
            .collect();
        pts.push([1000.0, 0.0, 0.0]);
        let source = cloud(&pts);
        let target = cloud(&[[0.005, 0.0, 0.0]]);
        let index = NearestNeighborIndex::build(&target).unwrap();
        let r = trimmed_cloud_distance(&source, &index, 4.0).unwrap();
        assert_eq!(r.outlier_count, 1);
        assert_eq!(r.retained_count, 9);
        assert!(r.distance < 0.1);
    }

    #[test]
    fn zero_median_disables_trimming() {
        // More than half the source lies exactly on the target, so the median
        // is 0; the distant point must be kept, not trimmed.
        let source = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [50.0, 0.0, 0.0]]);
        let target = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let index = NearestNeighborIndex::build(&target).unwrap();
        let r = trimmed_cloud_distance(&source, &index, 4.0).unwrap();
        assert_eq!(r.median, 0.0);
        assert_eq!(r.outlier_count, 0);
        assert_eq!(r.retained_count, 4);
        assert_eq!(r.distance, 48.0 / 4.0);
    }

    #[test]
    fn empty_source_rejected() {
        let target = cloud(&[[0.0, 0.0, 0.0]]);
        let index = NearestNeighborIndex::build(&target).unwrap();
        let err = trimmed_cloud_distance(&PointCloud::new(vec![]).unwrap(), &index, 4.0).unwrap_err();
        assert_eq!(err.to_string(), "empty cloud");
    }

    #[test]
    fn invalid_trim_factor_rejected() {
        let c = cloud(&[[0.0, 0.0, 0.0]]);
        let index = NearestNeighborIndex::build(&c).unwrap();
        for k in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(trimmed_cloud_distance(&c, &index, k).is_err());
        }
    }

    #[test]
    fn rigid_invariance() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        let a = random_cloud(&mut rng, 150, 1.0);
        let b = random_cloud(&mut rng, 170, 1.0);
        let motion = RigidMotion::new(
            crate::geometry::rotation_about_axis(
                &crate::geometry::UnitVector3::new_normalize(Vector3::new(1.0, 2.0, -0.5)),
                1.234,
            ),
            Vector3::new(10.0, -3.0, 0.7),
        )
        .unwrap();
        let t = SimilarityTransform::from_motion(motion);

        let index_b = NearestNeighborIndex::build(&b).unwrap();
        let base = trimmed_cloud_distance(&a, &index_b, 4.0).unwrap();

        let ta = t.apply(&a);
        let tb = t.apply(&b);
        let index_tb = NearestNeighborIndex::build(&tb).unwrap();
        let moved = trimmed_cloud_distance(&ta, &index_tb, 4.0).unwrap();

        assert_relative_eq!(base.distance, moved.distance, epsilon = 1e-9);
        assert_eq!(base.outlier_count, moved.outlier_count);
    }

    #[test]
    fn scale_homogeneity() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let a = random_cloud(&mut rng, 120, 1.0);
        let b = random_cloud(&mut rng, 140, 1.0);
        let s = 3.7;
        let t = SimilarityTransform::new(s, RigidMotion::identity()).unwrap();

        let index_b = NearestNeighborIndex::build(&b).unwrap();
        let base = trimmed_cloud_distance(&a, &index_b, 4.0).unwrap();

        let sb = t.apply(&b);
        let index_sb = NearestNeighborIndex::build(&sb).unwrap();
        let scaled = trimmed_cloud_distance(&t.apply(&a), &index_sb, 4.0).unwrap();

        assert_relative_eq!(scaled.distance, s * base.distance, max_relative = 1e-9);
    }

    #[test]
    fn asymmetry_is_real() {
        // A subset scores 0 against its superset; the superset does not.
        let big = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]]);
        let small = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let index_big = NearestNeighborIndex::build(&big).unwrap();
        let index_small = NearestNeighborIndex::build(&small).unwrap();
        let forward = trimmed_cloud_distance(&small, &index_big, 4.0).unwrap();
        let backward = trimmed_cloud_distance(&big, &index_small, 4.0).unwrap();
        assert_eq!(forward.distance, 0.0);
        assert!(backward.distance > 0.0);
    }

    #[test]
    fn symmetric_is_mean_of_directed() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(4);
        let a = random_cloud(&mut rng, 80, 1.0);
        let b = random_cloud(&mut rng, 90, 1.0);
        let index_a = NearestNeighborIndex::build(&a).unwrap();
        let index_b = NearestNeighborIndex::build(&b).unwrap();
        let ab = trimmed_cloud_distance(&a, &index_b, 4.0).unwrap().distance;
        let ba = trimmed_cloud_distance(&b, &index_a, 4.0).unwrap().distance;
        let sym = symmetric_trimmed_distance(&a, &b, 4.0).unwrap();
        assert_eq!(sym, (ab + ba) / 2.0);
    }

    #[test]
    fn point_to_cloud_distance_rigid_invariance() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let c = random_cloud(&mut rng, 100, 1.0);
        let p = Point3::new(0.3, 0.4, 0.5);
        let index = NearestNeighborIndex::build(&c).unwrap();
        let d0 = point_to_cloud_distance(&p, &index);

        let t = SimilarityTransform::from_motion(
            RigidMotion::new(
                crate::geometry::rotation_about_axis(
                    &crate::geometry::UnitVector3::new_normalize(Vector3::new(-1.0, 0.4, 2.0)),
                    0.9,
                ),
                Vector3::new(1.0, 2.0, 3.0),
            )
            .unwrap(),
        );
        let tc = t.apply(&c);
        let tp = t.transform_point(&p);
        let index_t = NearestNeighborIndex::build(&tc).unwrap();
        assert_relative_eq!(point_to_cloud_distance(&tp, &index_t), d0, epsilon = 1e-9);
    }
}
