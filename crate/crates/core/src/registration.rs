//! Similarity-transform registration: Horn scale recovery plus iterative
//! point-to-plane rigid alignment with median-based outlier rejection.
//!
//! The pipeline: estimate the global scale once from centered second moments,
//! superpose centroids, then iterate (sample, match, trim, solve rigid,
//! apply). Iterations never touch the scale, so the result's scale equals the
//! Horn estimate bitwise.

use crate::geometry::{
    GeometryError, Matrix3, Point3, PointCloud, RigidMotion, SimilarityTransform, UnitVector3,
    Vector3,
};
use crate::index::{IndexError, NearestNeighborIndex};
use crate::metric::median_of_sorted;
use crate::normals::{estimate_normals, DEFAULT_NEIGHBORHOOD};
use crate::rng::{sample_without_replacement, Xoshiro256StarStar};
use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("degenerate source cloud")]
    DegenerateSourceCloud,
    #[error("degenerate correspondence geometry")]
    DegenerateGeometry,
    #[error("insufficient correspondences: {survivors} survived trimming, need {needed}")]
    InsufficientCorrespondences { survivors: usize, needed: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// One matched pair: a source point, its nearest destination point, and the
/// destination normal at that point.
#[derive(Clone, Copy, Debug)]
pub struct Correspondence {
    pub source: Point3,
    pub target: Point3,
    pub target_normal: UnitVector3,
    /// Euclidean distance between source and target.
    pub distance: f64,
}

/// An ordered set of correspondences; `distance` is always derived from the
/// endpoints at construction.
#[derive(Clone, Debug, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point3, Point3, UnitVector3)>) -> Self {
        let pairs = pairs
            .into_iter()
            .map(|(source, target, target_normal)| Correspondence {
                source,
                target,
                target_normal,
                distance: (source - target).norm(),
            })
            .collect();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// ICP configuration. Defaults: 500-point samples, 15 iterations, outliers
/// dropped past 4x the median pair distance, at least 6 surviving pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IcpParams {
    /// Source points sampled per iteration (capped at the source size).
    pub sample_size: usize,
    /// Fixed iteration count; no early exit unless `early_exit_rel_tol` set.
    pub iterations: usize,
    /// Outlier multiplier: pairs farther than this times the median pair
    /// distance are discarded. Must be positive.
    pub outlier_k: f64,
    /// Seed for per-iteration sampling.
    pub rng_seed: u64,
    /// Minimum pairs that must survive trimming in every iteration.
    pub min_correspondences: usize,
    /// If set, stop once the per-iteration error improves by less than this
    /// relative factor. Off by default: fixed-count runs are reproducible
    /// across parameter tweaks.
    pub early_exit_rel_tol: Option<f64>,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            sample_size: 500,
            iterations: 15,
            outlier_k: 4.0,
            rng_seed: 0,
            min_correspondences: 6,
            early_exit_rel_tol: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Maps source coordinates into destination coordinates.
    pub transform: SimilarityTransform,
    /// Point-to-plane error of the final iteration's surviving pairs.
    pub final_error: f64,
    /// One entry per executed iteration: the point-to-plane error after that
    /// iteration's solve, evaluated on its surviving pairs.
    pub per_iteration_error: Vec<f64>,
    /// Pairs surviving trimming, per iteration.
    pub correspondences_used: Vec<usize>,
    /// Iterations whose solve had condition number above 1e6.
    pub condition_warnings: usize,
    /// Iterations where the solved motion failed to improve on identity and
    /// identity was used instead.
    pub identity_fallbacks: usize,
}

/// Detailed output of one point-to-plane solve.
#[derive(Clone, Copy, Debug)]
pub struct PlaneSolve {
    pub motion: RigidMotion,
    /// Condition number (ratio of extreme eigenvalue magnitudes) of the
    /// damped normal-equation matrix.
    pub condition: f64,
    /// Condition number exceeded 1e6: geometry is nearly degenerate and the
    /// under-constrained directions are held near zero by the damping.
    pub condition_warning: bool,
    /// The solved motion did not beat the identity on the input pairs, so the
    /// identity was returned.
    pub identity_fallback: bool,
}

const CONDITION_ERROR_LIMIT: f64 = 1e12;
const CONDITION_WARN_LIMIT: f64 = 1e6;
const TIKHONOV_DAMPING: f64 = 1e-9;
const MAX_STEP_HALVINGS: usize = 12;

/// Sum of squared point-to-plane residuals: for each pair, the component of
/// the moved-source-to-target offset along the target normal.
pub fn point_to_plane_error(motion: &RigidMotion, correspondences: &CorrespondenceSet) -> f64 {
    let mut sum = 0.0;
    for c in correspondences.pairs() {
        let moved = motion.transform_point(&c.source);
        let r = (moved - c.target).dot(c.target_normal.as_ref());
        sum += r * r;
    }
    sum
}

/// Least-squares scale between clouds: the ratio of root-mean-square
/// centered spreads, destination over source. Errors with "degenerate source
/// cloud" when all source points coincide.
pub fn horn_scale(source: &PointCloud, destination: &PointCloud) -> Result<f64, RegistrationError> {
    let cs = source.centroid()?;
    let cd = destination.centroid()?;
    let mut source_spread = 0.0;
    for p in source.points() {
        source_spread += (p - cs).norm_squared();
    }
    let mut destination_spread = 0.0;
    for q in destination.points() {
        destination_spread += (q - cd).norm_squared();
    }
    if source_spread == 0.0 {
        return Err(RegistrationError::DegenerateSourceCloud);
    }
    // Normalize both spreads by their counts so unequal cloud sizes compare
    // mean square radii, not raw sums.
    let ms_source = source_spread / source.len() as f64;
    let ms_destination = destination_spread / destination.len() as f64;
    Ok((ms_destination / ms_source).sqrt())
}

/// Solves for the rigid motion minimizing the linearized point-to-plane
/// error over the given pairs. See [`solve_point_to_plane_detailed`].
pub fn solve_point_to_plane(
    correspondences: &CorrespondenceSet,
) -> Result<RigidMotion, RegistrationError> {
    solve_point_to_plane_detailed(correspondences).map(|s| s.motion)
}

/// Small-angle linearization: each pair contributes a row
/// `[p x n ; n] * [omega; t] = (q - p) . n` to a 6x6 normal system, damped by
/// a tiny Tikhonov term so under-constrained directions (e.g. all normals
/// parallel) settle to zero instead of blowing up. The linearized rotation is
/// projected back to the rotation group, and the result is guaranteed not to
/// increase the true (nonlinear) error: if it would, the identity is
/// returned with `identity_fallback` set.
///
/// Errors with "degenerate correspondence geometry" when the damped system's
/// condition number exceeds 1e12.
pub fn solve_point_to_plane_detailed(
    correspondences: &CorrespondenceSet,
) -> Result<PlaneSolve, RegistrationError> {
    if correspondences.is_empty() {
        return Err(RegistrationError::InsufficientCorrespondences {
            survivors: 0,
            needed: 1,
        });
    }

    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for c in correspondences.pairs() {
        let p = c.source.coords;
        let n = c.target_normal.as_ref();
        let row = Vector6::new(
            p.y * n.z - p.z * n.y,
            p.z * n.x - p.x * n.z,
            p.x * n.y - p.y * n.x,
            n.x,
            n.y,
            n.z,
        );
        let b = (c.target - c.source).dot(n);
        ata += row * row.transpose();
        atb += row * b;
    }
    for i in 0..6 {
        ata[(i, i)] += TIKHONOV_DAMPING;
    }

    let eig = ata.symmetric_eigen();
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = 0.0f64;
    for &l in eig.eigenvalues.iter() {
        let a = l.abs();
        lambda_min = lambda_min.min(a);
        lambda_max = lambda_max.max(a);
    }
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > CONDITION_ERROR_LIMIT {
        return Err(RegistrationError::DegenerateGeometry);
    }

    // x = V diag(1/lambda) V^T (A^T b)
    let mut x = Vector6::<f64>::zeros();
    for i in 0..6 {
        let v = eig.eigenvectors.column(i);
        x += v * (v.dot(&atb) / eig.eigenvalues[i]);
    }

    let omega = Vector3::new(x[0], x[1], x[2]);
    let t = Vector3::new(x[3], x[4], x[5]);

    let identity = RigidMotion::identity();
    let identity_error = point_to_plane_error(&identity, correspondences);

    // The linearization overshoots for large corrections. Take the full
    // Newton step when it already improves on doing nothing; otherwise halve
    // the step until one improves. Never hand back something worse than the
    // identity.
    let mut step = 1.0;
    for _ in 0..MAX_STEP_HALVINGS {
        let rotation = nearest_rotation(&linearized_rotation(&(step * omega)));
        let motion = RigidMotion::new_unchecked(rotation, step * t);
        if point_to_plane_error(&motion, correspondences) <= identity_error + 1e-12 {
            return Ok(PlaneSolve {
                motion,
                condition,
                condition_warning: condition > CONDITION_WARN_LIMIT,
                identity_fallback: false,
            });
        }
        step *= 0.5;
    }
    Ok(PlaneSolve {
        motion: identity,
        condition,
        condition_warning: condition > CONDITION_WARN_LIMIT,
        identity_fallback: true,
    })
}

fn linearized_rotation(omega: &Vector3) -> Matrix3 {
    Matrix3::new(
        1.0, -omega.z, omega.y, //
        omega.z, 1.0, -omega.x, //
        -omega.y, omega.x, 1.0,
    )
}

/// Projects a near-rotation onto the rotation group via SVD, flipping the
/// last singular direction if needed to keep determinant +1.
fn nearest_rotation(m: &Matrix3) -> Matrix3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Registers `source` onto `destination` with a similarity transform.
///
/// Destination normals are taken from the cloud when present, otherwise
/// estimated over 16-point neighborhoods. Each iteration samples
/// `sample_size` source points without replacement (fresh sample every
/// iteration), matches them to nearest destination points, drops pairs
/// farther than `outlier_k` times the median pair distance, and solves a
/// point-to-plane rigid update. Errors with "insufficient correspondences"
/// if fewer than `min_correspondences` pairs survive trimming.
pub fn align(
    source: &PointCloud,
    destination: &PointCloud,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    if params.sample_size == 0 {
        return Err(RegistrationError::InvalidParameter(
            "sample_size must be positive".into(),
        ));
    }
    if !params.outlier_k.is_finite() || params.outlier_k <= 0.0 {
        return Err(RegistrationError::InvalidParameter(format!(
            "outlier_k must be finite and positive, got {}",
            params.outlier_k
        )));
    }
    if params.min_correspondences == 0 {
        return Err(RegistrationError::InvalidParameter(
            "min_correspondences must be positive".into(),
        ));
    }
    if let Some(tol) = params.early_exit_rel_tol {
        if !tol.is_finite() || tol < 0.0 {
            return Err(RegistrationError::InvalidParameter(format!(
                "early_exit_rel_tol must be finite and non-negative, got {tol}"
            )));
        }
    }

    let scale = horn_scale(source, destination)?;
    let cs = source.centroid()?;
    let cd = destination.centroid()?;

    // Initial similarity: scale about the origin, then translate the scaled
    // source centroid onto the destination centroid.
    let t0 = cd.coords - scale * cs.coords;
    let mut transform =
        SimilarityTransform::new(scale, RigidMotion::new_unchecked(Matrix3::identity(), t0))
            .expect("horn scale is finite and positive here");

    let destination_normals: Vec<UnitVector3> = match destination.normals() {
        Some(normals) => normals.to_vec(),
        None => estimate_normals(destination, DEFAULT_NEIGHBORHOOD.min(destination.len()))?
            .cloud
            .normals()
            .expect("estimate_normals always attaches normals")
            .to_vec(),
    };
    let index = NearestNeighborIndex::build(destination)?;

    let mut working: Vec<Point3> = source
        .points()
        .iter()
        .map(|p| transform.transform_point(p))
        .collect();

    let mut rng = Xoshiro256StarStar::seed_from_u64(params.rng_seed);
    let mut per_iteration_error = Vec::with_capacity(params.iterations);
    let mut correspondences_used = Vec::with_capacity(params.iterations);
    let mut condition_warnings = 0usize;
    let mut identity_fallbacks = 0usize;

    for _ in 0..params.iterations {
        let sample = sample_without_replacement(&mut rng, working.len(), params.sample_size);

        let mut matched: Vec<(Point3, usize, f64)> = Vec::with_capacity(sample.len());
        for &i in &sample {
            let (j, d) = index.nearest(&working[i]);
            matched.push((working[i], j, d));
        }

        let mut distances: Vec<f64> = matched.iter().map(|&(_, _, d)| d).collect();
        distances.sort_unstable_by(f64::total_cmp);
        let median = median_of_sorted(&distances);

        // Zero median means at least half the sample already sits exactly on
        // the destination; trimming would reject the rest, so keep all.
        let survivors: Vec<&(Point3, usize, f64)> = if median == 0.0 {
            matched.iter().collect()
        } else {
            let threshold = params.outlier_k * median;
            matched.iter().filter(|&&(_, _, d)| d <= threshold).collect()
        };

        if survivors.len() < params.min_correspondences {
            return Err(RegistrationError::InsufficientCorrespondences {
                survivors: survivors.len(),
                needed: params.min_correspondences,
            });
        }

        let pairs = CorrespondenceSet::from_pairs(survivors.iter().map(|&&(p, j, _)| {
            (p, index.points()[j], destination_normals[j])
        }));

        let solve = solve_point_to_plane_detailed(&pairs)?;
        if solve.condition_warning {
            condition_warnings += 1;
        }
        if solve.identity_fallback {
            identity_fallbacks += 1;
        }

        for p in &mut working {
            *p = solve.motion.transform_point(p);
        }
        transform = SimilarityTransform::from_motion(solve.motion).compose(&transform);

        per_iteration_error.push(point_to_plane_error(&solve.motion, &pairs));
        correspondences_used.push(pairs.len());

        if let Some(tol) = params.early_exit_rel_tol {
            let k = per_iteration_error.len();
            if k >= 2 {
                let prev = per_iteration_error[k - 2];
                let curr = per_iteration_error[k - 1];
                // Stalled (or already at zero): further iterations buy nothing.
                if prev - curr <= tol * prev {
                    break;
                }
            }
        }
    }

    let final_error = per_iteration_error.last().copied().unwrap_or(0.0);
    Ok(IcpResult {
        transform,
        final_error,
        per_iteration_error,
        correspondences_used,
        condition_warnings,
        identity_fallbacks,
    })
}
