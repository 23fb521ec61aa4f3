//! Surface-normal estimation from local neighborhoods.

use crate::geometry::{GeometryError, Matrix3, PointCloud, UnitVector3, Vector3};
use crate::index::NearestNeighborIndex;

pub const DEFAULT_NEIGHBORHOOD: usize = 16;

/// Estimated normals plus a count of degenerate neighborhoods (collinear or
/// coincident points), where the normal direction was chosen arbitrarily.
#[derive(Clone, Debug)]
pub struct NormalEstimation {
    pub cloud: PointCloud,
    pub degenerate_count: usize,
}

/// Estimates one unit normal per point as the principal direction of smallest
/// variance over the point's `neighborhood_size` nearest neighbors (the point
/// itself included). Normals are oriented to point away from the cloud
/// centroid, a serviceable convention for roughly star-shaped surfaces such
/// as faces.
///
/// `neighborhood_size` must be at least 3 and at most the cloud size.
pub fn estimate_normals(
    cloud: &PointCloud,
    neighborhood_size: usize,
) -> Result<NormalEstimation, GeometryError> {
    let n = cloud.len();
    if neighborhood_size < 3 || neighborhood_size > n {
        return Err(GeometryError::BadNeighborhood {
            k: neighborhood_size,
            n,
        });
    }
    let index = NearestNeighborIndex::build(cloud).expect("cloud checked non-empty");
    let centroid = cloud.centroid()?;

    let mut normals = Vec::with_capacity(n);
    let mut degenerate_count = 0usize;
    for p in cloud.points() {
        let neighbors = index
            .k_nearest(p, neighborhood_size)
            .expect("neighborhood size checked against cloud size");

        let mut mean = Vector3::zeros();
        for &(j, _) in &neighbors {
            mean += index.points()[j].coords;
        }
        mean /= neighbors.len() as f64;

        let mut cov = Matrix3::zeros();
        for &(j, _) in &neighbors {
            let d = index.points()[j].coords - mean;
            cov += d * d.transpose();
        }

        let eig = cov.symmetric_eigen();
        // Ascending order of eigenvalues: [smallest, middle, largest].
        let mut idx = [0usize, 1, 2];
        idx.sort_unstable_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lambda_mid = eig.eigenvalues[idx[1]].max(0.0);
        let lambda_max = eig.eigenvalues[idx[2]].max(0.0);

        // A surface patch needs spread in two directions. If the middle
        // eigenvalue vanishes the neighborhood is collinear (or a single
        // repeated point) and the normal is underdetermined.
        let degenerate = lambda_mid <= 1e-12 * lambda_max.max(1e-300);
        let mut normal = if degenerate {
            degenerate_count += 1;
            let line_dir = eig.eigenvectors.column(idx[2]).into_owned();
            arbitrary_orthogonal(&line_dir)
        } else {
            eig.eigenvectors.column(idx[0]).into_owned()
        };

        if normal.dot(&(p - centroid)) < 0.0 {
            normal = -normal;
        }
        normals.push(UnitVector3::new_normalize(normal));
    }

    let cloud = PointCloud::with_normals(cloud.points().to_vec(), normals)?;
    Ok(NormalEstimation {
        cloud,
        degenerate_count,
    })
}

/// Any unit vector orthogonal to `v`; if `v` is (near) zero, an arbitrary
/// fixed axis. Crosses with the coordinate axis least aligned with `v`.
fn arbitrary_orthogonal(v: &Vector3) -> Vector3 {
    if v.norm() < 1e-300 {
        return Vector3::z();
    }
    let abs = v.abs();
    let pick = if abs.x <= abs.y && abs.x <= abs.z {
        Vector3::x()
    } else if abs.y <= abs.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&pick).normalize()
}
