//! Core geometric types: point clouds, rigid motions, similarity transforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type Matrix3 = nalgebra::Matrix3<f64>;
/// Unit-norm direction. Constructed via `nalgebra::Unit`, so the norm-1
/// invariant holds by type; inputs are still checked for finiteness.
pub type UnitVector3 = nalgebra::Unit<Vector3>;

/// Tolerance for orthonormality and unit-norm checks on user-supplied data.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("non-finite coordinate in point {index}")]
    NonFinitePoint { index: usize },
    #[error("normal {index} is not a finite unit vector")]
    InvalidNormal { index: usize },
    #[error("{normals} normals for {points} points; counts must match")]
    NormalCountMismatch { points: usize, normals: usize },
    #[error("rotation matrix is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("scale must be finite and positive, got {0}")]
    InvalidScale(f64),
    #[error("translation has a non-finite component")]
    InvalidTranslation,
    #[error("neighborhood size {k} out of range for cloud of {n} points")]
    BadNeighborhood { k: usize, n: usize },
}

/// An ordered set of 3D points, optionally with one unit normal per point
/// (index-aligned). Point order is part of the value: centroids, metrics, and
/// samplers all iterate in index order, which keeps results reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<UnitVector3>>,
}

impl PointCloud {
    /// A cloud without normals. Every coordinate must be finite.
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        validate_points(&points)?;
        Ok(Self {
            points,
            normals: None,
        })
    }

    /// A cloud with one normal per point.
    pub fn with_normals(
        points: Vec<Point3>,
        normals: Vec<UnitVector3>,
    ) -> Result<Self, GeometryError> {
        validate_points(&points)?;
        if points.len() != normals.len() {
            return Err(GeometryError::NormalCountMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        for (i, n) in normals.iter().enumerate() {
            let v = n.as_ref();
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite())
                || (v.norm() - 1.0).abs() > ORTHONORMAL_TOL
            {
                return Err(GeometryError::InvalidNormal { index: i });
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Point3>,
        normals: Option<Vec<UnitVector3>>,
    ) -> Self {
        debug_assert!(normals.as_ref().is_none_or(|n| n.len() == points.len()));
        Self { points, normals }
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

    pub fn normals(&self) -> Option<&[UnitVector3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Component-wise mean of the points, summed in index order.
    pub fn centroid(&self) -> Result<Point3, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p.coords;
        }
        Ok(Point3::from(sum / self.points.len() as f64))
    }

    /// Diagonal of the axis-aligned bounding box; 0 for clouds of fewer than
    /// two points. Used as the scale proxy for noise magnitudes.
    pub fn bounding_box_diagonal(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let mut lo = self.points[0].coords;
        let mut hi = self.points[0].coords;
        for p in &self.points[1..] {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        (hi - lo).norm()
    }
}

fn validate_points(points: &[Point3]) -> Result<(), GeometryError> {
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(GeometryError::NonFinitePoint { index: i });
        }
    }
    Ok(())
}

/// Rotation + translation. The rotation is guaranteed orthonormal with
/// determinant +1 (within [`ORTHONORMAL_TOL`]) at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3,
    translation: Vector3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3, translation: Vector3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidRotation);
        }
        let gram = rotation.transpose() * rotation;
        let ortho_defect = (gram - Matrix3::identity()).abs().max();
        if ortho_defect > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL
        {
            return Err(GeometryError::InvalidRotation);
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidTranslation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn new_unchecked(rotation: Matrix3, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self` after `inner`: the motion mapping p to self(inner(p)).
    pub fn compose(&self, inner: &RigidMotion) -> RigidMotion {
        RigidMotion {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidMotion {
        let rt = self.rotation.transpose();
        RigidMotion {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let cos = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

/// Uniform scale + rigid motion: p maps to scale * (R * p) + T.
///
/// Normals are direction data, so [`SimilarityTransform::apply`] maps them by
/// the rotation only and re-normalizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    motion: RigidMotion,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            motion: RigidMotion::identity(),
        }
    }

    pub fn new(scale: f64, motion: RigidMotion) -> Result<Self, GeometryError> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(GeometryError::InvalidScale(scale));
        }
        Ok(Self { scale, motion })
    }

    pub fn from_motion(motion: RigidMotion) -> Self {
        Self { scale: 1.0, motion }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn motion(&self) -> &RigidMotion {
        &self.motion
    }

    pub fn rotation(&self) -> &Matrix3 {
        self.motion.rotation()
    }

    pub fn translation(&self) -> &Vector3 {
        self.motion.translation()
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.scale * (self.motion.rotation * p.coords) + self.motion.translation)
    }

    /// Transforms every point; normals are rotated and re-normalized.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points()
            .iter()
            .map(|p| self.transform_point(p))
            .collect();
        let normals = cloud.normals().map(|normals| {
            normals
                .iter()
                // A rotation preserves the unit norm, so no renormalization:
                // the identity transform stays a bitwise no-op.
                .map(|n| UnitVector3::new_unchecked(self.motion.rotation * n.as_ref()))
                .collect()
        });
        PointCloud::from_parts_unchecked(points, normals)
    }

    /// `self` after `inner`. Scales multiply; since ICP iterations carry
    /// scale exactly 1, composing them onto an initial scale never perturbs
    /// it (1.0 * s == s in IEEE 754).
    pub fn compose(&self, inner: &SimilarityTransform) -> SimilarityTransform {
        let rotation = self.motion.rotation * inner.motion.rotation;
        let translation =
            self.scale * (self.motion.rotation * inner.motion.translation) + self.motion.translation;
        SimilarityTransform {
            scale: self.scale * inner.scale,
            motion: RigidMotion::new_unchecked(rotation, translation),
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.motion.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        SimilarityTransform {
            scale: inv_scale,
            motion: RigidMotion::new_unchecked(rt, -(inv_scale * (rt * self.motion.translation))),
        }
    }
}

/// Serializable form of a similarity transform (row-major rotation).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransformParts {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&SimilarityTransform> for TransformParts {
    fn from(t: &SimilarityTransform) -> Self {
        let r = t.rotation();
        TransformParts {
            scale: t.scale(),
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation().x, t.translation().y, t.translation().z],
        }
    }
}

impl TransformParts {
    pub fn to_transform(&self) -> Result<SimilarityTransform, GeometryError> {
        let r = Matrix3::new(
            self.rotation[0][0],
            self.rotation[0][1],
            self.rotation[0][2],
            self.rotation[1][0],
            self.rotation[1][1],
            self.rotation[1][2],
            self.rotation[2][0],
            self.rotation[2][1],
            self.rotation[2][2],
        );
        let t = Vector3::new(self.translation[0], self.translation[1], self.translation[2]);
        SimilarityTransform::new(self.scale, RigidMotion::new(r, t)?)
    }
}

/// Rotation by `angle` radians about `axis`.
pub fn rotation_about_axis(axis: &UnitVector3, angle: f64) -> Matrix3 {
    *nalgebra::Rotation3::from_axis_angle(axis, angle).matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube_corners() -> Vec<Point3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Point3::new(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn centroid_of_unit_cube_corners() {
        let cloud = PointCloud::new(cube_corners()).unwrap();
        let c = cloud.centroid().unwrap();
        assert_eq!(c, Point3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn centroid_of_empty_cloud_errors() {
        let cloud = PointCloud::new(vec![]).unwrap();
        let err = cloud.centroid().unwrap_err();
        assert_eq!(err.to_string(), "empty cloud");
    }

    #[test]
    fn nan_point_rejected() {
        let err = PointCloud::new(vec![Point3::new(0.0, f64::NAN, 0.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::NonFinitePoint { index: 0 }));
    }

    #[test]
    fn normal_count_mismatch_rejected() {
        let err = PointCloud::with_normals(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)],
            vec![UnitVector3::new_normalize(Vector3::z())],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::NormalCountMismatch {
                points: 2,
                normals: 1
            }
        ));
    }

    #[test]
    fn translation_only_transform_moves_centroid() {
        let cloud = PointCloud::new(cube_corners()).unwrap();
        let motion =
            RigidMotion::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let moved = SimilarityTransform::from_motion(motion).apply(&cloud);
        let c = moved.centroid().unwrap();
        assert_relative_eq!(c.coords, Vector3::new(1.5, 2.5, 3.5), epsilon = 1e-15);
    }

    #[test]
    fn apply_preserves_pairwise_distances_up_to_scale() {
        let cloud = PointCloud::new(cube_corners()).unwrap();
        let axis = UnitVector3::new_normalize(Vector3::new(1.0, 1.0, 0.5));
        let motion = RigidMotion::new(
            rotation_about_axis(&axis, 0.83),
            Vector3::new(-2.0, 0.4, 9.0),
        )
        .unwrap();
        let t = SimilarityTransform::new(2.5, motion).unwrap();
        let out = t.apply(&cloud);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = (cloud.points()[i] - cloud.points()[j]).norm();
                let after = (out.points()[i] - out.points()[j]).norm();
                assert_relative_eq!(after, 2.5 * before, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let p = Point3::new(0.3, -1.2, 2.0);
        let a = SimilarityTransform::new(
            1.7,
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::x()), 0.4),
                Vector3::new(1.0, 0.0, -2.0),
            )
            .unwrap(),
        )
        .unwrap();
        let b = SimilarityTransform::new(
            0.6,
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::new(0.0, 1.0, 1.0)), -1.1),
                Vector3::new(0.0, 3.0, 0.5),
            )
            .unwrap(),
        )
        .unwrap();
        let composed = a.compose(&b);
        let sequential = a.transform_point(&b.transform_point(&p));
        assert_relative_eq!(
            composed.transform_point(&p).coords,
            sequential.coords,
            epsilon = 1e-12
        );
        assert_eq!(composed.scale(), 1.7 * 0.6);
    }

    #[test]
    fn compose_with_identity_scale_is_exact() {
        let s = 1.3778890021341;
        let base = SimilarityTransform::new(s, RigidMotion::identity()).unwrap();
        let rigid = SimilarityTransform::from_motion(
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::y()), 0.2),
                Vector3::new(0.1, 0.0, 0.0),
            )
            .unwrap(),
        );
        assert_eq!(rigid.compose(&base).scale(), s);
        assert_eq!(base.compose(&rigid).scale(), s);
    }

    #[test]
    fn inverse_round_trips() {
        let t = SimilarityTransform::new(
            0.43,
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::new(2.0, -1.0, 0.3)), 2.2),
                Vector3::new(5.0, -1.0, 0.0),
            )
            .unwrap(),
        )
        .unwrap();
        let p = Point3::new(-0.4, 0.9, 1.1);
        let back = t.inverse().transform_point(&t.transform_point(&p));
        assert_relative_eq!(back.coords, p.coords, epsilon = 1e-12);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-6;
        assert!(matches!(
            RigidMotion::new(m, Vector3::zeros()),
            Err(GeometryError::InvalidRotation)
        ));
    }

    #[test]
    fn reflection_rejected() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            RigidMotion::new(m, Vector3::zeros()),
            Err(GeometryError::InvalidRotation)
        ));
    }

    #[test]
    fn nonpositive_scale_rejected() {
        for s in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(SimilarityTransform::new(s, RigidMotion::identity()).is_err());
        }
    }

    #[test]
    fn normals_rotate_without_scaling() {
        let cloud = PointCloud::with_normals(
            vec![Point3::origin()],
            vec![UnitVector3::new_normalize(Vector3::z())],
        )
        .unwrap();
        let t = SimilarityTransform::new(
            7.0,
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::x()), std::f64::consts::FRAC_PI_2),
                Vector3::zeros(),
            )
            .unwrap(),
        )
        .unwrap();
        let out = t.apply(&cloud);
        let n = out.normals().unwrap()[0];
        assert_relative_eq!(n.as_ref().norm(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(n.y, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_angle_recovers_input() {
        let axis = UnitVector3::new_normalize(Vector3::new(0.2, 0.5, -1.0));
        for angle in [0.0, 0.3, 1.5, 3.0] {
            let m = RigidMotion::new(rotation_about_axis(&axis, angle), Vector3::zeros()).unwrap();
            assert_relative_eq!(m.rotation_angle(), angle, epsilon = 1e-9);
        }
    }

    #[test]
    fn transform_parts_round_trip() {
        let t = SimilarityTransform::new(
            2.0,
            RigidMotion::new(
                rotation_about_axis(&UnitVector3::new_normalize(Vector3::new(1.0, 2.0, 3.0)), 0.7),
                Vector3::new(0.5, -0.5, 4.0),
            )
            .unwrap(),
        )
        .unwrap();
        let parts = TransformParts::from(&t);
        let back = parts.to_transform().unwrap();
        assert_eq!(back.scale(), t.scale());
        assert_relative_eq!(back.rotation(), t.rotation(), epsilon = 1e-15);
    }

    #[test]
    fn bounding_box_diagonal_of_unit_cube() {
        let cloud = PointCloud::new(cube_corners()).unwrap();
        assert_relative_eq!(cloud.bounding_box_diagonal(), 3f64.sqrt(), epsilon = 1e-15);
        let single = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert_eq!(single.bounding_box_diagonal(), 0.0);
    }
}
