//! Synthetic identity surfaces and capture simulation.
//!
//! An identity is a closed "head" surface: an ellipsoid modulated by a radial
//! field of smooth angular bumps. Distinct identities differ in semi-axes and
//! bump field; captures of one identity differ only by surface resampling,
//! sensor noise, cropping, and pose (a similarity transform), which is
//! exactly the variation the registration and metric stack is supposed to
//! absorb.

use crate::eval::{EvalError, GalleryEntry, Probe};
use crate::geometry::{
    rotation_about_axis, Point3, PointCloud, RigidMotion, SimilarityTransform, UnitVector3,
    Vector3,
};
use crate::rng::{derive_seed, Xoshiro256StarStar};
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("point count must be positive")]
    NoPoints,
    #[error("crop fraction must lie in [0, 1), got {0}")]
    InvalidCropFraction(f64),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    InvalidNoiseSigma(f64),
    /// No points requested, or cropping left nothing.
    #[error("empty capture")]
    EmptyCapture,
    #[error("benchmark needs at least one identity and two captures per identity")]
    BenchmarkTooSmall,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One smooth radial bump: at surface direction `u` it contributes
/// `amplitude * exp(-(1 - u . center) / width)`, a spherical cap falloff
/// that is widest (and equal to `amplitude`) at `center`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 3],
    pub amplitude: f64,
    pub width: f64,
}

/// Ellipsoid semi-axes plus the bump field modulating the radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeParams {
    pub semi_axes: [f64; 3],
    pub bumps: Vec<Bump>,
}

impl ShapeParams {
    /// Radial modulation factor at unit direction `u` (1 = bare ellipsoid).
    fn radial_field(&self, u: &Vector3) -> f64 {
        let mut rho = 1.0;
        for b in &self.bumps {
            let c = Vector3::new(b.center[0], b.center[1], b.center[2]);
            rho += b.amplitude * (-(1.0 - u.dot(&c)) / b.width).exp();
        }
        rho
    }

    /// Tangential gradient of the radial field at `u`: directional
    /// derivatives along the orthonormal tangent pair `(e1, e2)`.
    fn radial_gradient(&self, u: &Vector3, e1: &Vector3, e2: &Vector3) -> (f64, f64) {
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for b in &self.bumps {
            let c = Vector3::new(b.center[0], b.center[1], b.center[2]);
            let weight = b.amplitude * (-(1.0 - u.dot(&c)) / b.width).exp() / b.width;
            g1 += weight * e1.dot(&c);
            g2 += weight * e2.dot(&c);
        }
        (g1, g2)
    }

    /// Surface point for unit direction `u`.
    fn surface_point(&self, u: &Vector3) -> Point3 {
        let rho = self.radial_field(u);
        Point3::new(
            self.semi_axes[0] * rho * u.x,
            self.semi_axes[1] * rho * u.y,
            self.semi_axes[2] * rho * u.z,
        )
    }

    /// Exact outward unit normal at the surface point for direction `u`.
    ///
    /// The surface is S(u) = D (rho(u) u) with D the semi-axis scaling, so a
    /// tangent basis is T_i = D (g_i u + rho e_i) for any orthonormal tangent
    /// pair (e1, e2) at u; the normal is their cross product, oriented
    /// outward.
    fn surface_normal(&self, u: &Vector3) -> UnitVector3 {
        let e1 = arbitrary_tangent(u);
        let e2 = u.cross(&e1);
        let rho = self.radial_field(u);
        let (g1, g2) = self.radial_gradient(u, &e1, &e2);
        let d = Vector3::new(self.semi_axes[0], self.semi_axes[1], self.semi_axes[2]);
        let t1 = (g1 * u + rho * e1).component_mul(&d);
        let t2 = (g2 * u + rho * e2).component_mul(&d);
        let mut n = t1.cross(&t2);
        // Outward: positive component along the position vector D(rho u).
        if n.dot(&(rho * u).component_mul(&d)) < 0.0 {
            n = -n;
        }
        UnitVector3::new_normalize(n)
    }
}

/// Any unit vector orthogonal to `u`.
fn arbitrary_tangent(u: &Vector3) -> Vector3 {
    let candidate = if u.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    (candidate - u * candidate.dot(u)).normalize()
}

/// A synthetic identity: its seed (identity number in a benchmark) and the
/// shape drawn from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticIdentity {
    pub seed: u64,
    pub shape: ShapeParams,
}

/// Fixed bump sites shared by all identities (nose, brows, cheeks, chin,
/// crown, nape); what varies per identity is each site's amplitude and
/// width. Broad low bumps carry most of the identity signal because they
/// survive outlier trimming; the sharp nose mainly locks in orientation.
const BUMP_SITES: [[f64; 3]; 11] = [
    [0.0, 0.0, 1.0],    // nose tip (sharp)
    [0.35, 0.25, 0.9],  // left brow
    [-0.35, 0.25, 0.9], // right brow
    [0.55, -0.2, 0.75], // left cheek
    [-0.55, -0.2, 0.75],// right cheek
    [0.0, -0.85, 0.4],  // chin
    [0.0, 0.6, -0.75],  // back of head
    [0.85, 0.45, 0.2],  // left temple
    [-0.85, 0.45, 0.2], // right temple
    [0.0, 0.9, 0.35],   // forehead
    [0.6, -0.7, 0.1],   // left jaw
];

impl SyntheticIdentity {
    /// Draws an identity's shape deterministically from its seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        // Distinct semi-axes give the registration a global orientation
        // signal, so large initial rotations converge instead of resting on a
        // spherical plateau. Crops stay confined to a cone around the blind
        // side (see `capture`), which keeps the second moment of a cropped
        // capture stable despite the anisotropy.
        // Disjoint per-axis ranges: every pair of semi-axes differs, so
        // rotation about any axis meets a restoring gradient.
        let semi_axes = [
            rng.range_f64(0.98, 1.06),
            rng.range_f64(1.12, 1.28),
            rng.range_f64(0.82, 0.90),
        ];
        let mut bumps = Vec::with_capacity(BUMP_SITES.len());
        for (i, site) in BUMP_SITES.iter().enumerate() {
            let center = Vector3::new(site[0], site[1], site[2]).normalize();
            let (amplitude, width) = if i == 0 {
                // Pronounced nose, always outward: breaks the remaining
                // 180-degree ellipsoid symmetries.
                (rng.range_f64(0.18, 0.28), rng.range_f64(0.04, 0.10))
            } else {
                // Broad, signed. Amplitudes well above the capture noise
                // floor so identity differences dominate impostor scores.
                (rng.range_f64(-0.12, 0.12), rng.range_f64(0.15, 0.45))
            };
            bumps.push(Bump {
                center: [center.x, center.y, center.z],
                amplitude,
                width,
            });
        }
        Self {
            seed,
            shape: ShapeParams { semi_axes, bumps },
        }
    }
}

/// Uniformly samples directions on the unit sphere and evaluates the shape
/// there, attaching the exact surface normals. Separate from the identity
/// seed so captures can resample the same surface independently.
fn sample_surface(shape: &ShapeParams, point_count: usize, sampling_seed: u64) -> PointCloud {
    let mut rng = Xoshiro256StarStar::seed_from_u64(sampling_seed);
    let mut points = Vec::with_capacity(point_count);
    let mut normals = Vec::with_capacity(point_count);
    for _ in 0..point_count {
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let u = Vector3::new(dir[0], dir[1], dir[2]);
        points.push(shape.surface_point(&u));
        normals.push(shape.surface_normal(&u));
    }
    PointCloud::from_parts_unchecked(points, Some(normals))
}

/// The identity's canonical cloud: its surface sampled with its own seed.
pub fn generate_identity_cloud(
    identity: &SyntheticIdentity,
    point_count: usize,
) -> Result<PointCloud, SynthError> {
    if point_count == 0 {
        return Err(SynthError::NoPoints);
    }
    Ok(sample_surface(&identity.shape, point_count, identity.seed))
}

/// One simulated acquisition of an identity.
#[derive(Clone, Debug)]
pub struct CaptureParams {
    pub point_count: usize,
    /// Gaussian point noise, as a fraction of the cropped cloud's
    /// bounding-box diagonal.
    pub noise_sigma: f64,
    /// Fraction of points removed as a half-space cap, in [0, 1). The cap
    /// direction is random within a fixed cone around the canonical blind
    /// side; see `capture`.
    pub crop_fraction: f64,
    /// Pose: applied last, mapping the canonical frame to the capture frame.
    pub true_transform: SimilarityTransform,
    /// Seed for resampling, crop direction, and noise.
    pub capture_seed: u64,
}

/// Samples the surface fresh, crops a cap, perturbs, then applies the pose.
/// Returns the capture and (for oracles) the pose it applied.
///
/// With zero noise, zero crop, and the identity transform, the output equals
/// the identity's surface sampled with `capture_seed`.
pub fn capture(
    identity: &SyntheticIdentity,
    params: &CaptureParams,
) -> Result<(PointCloud, SimilarityTransform), SynthError> {
    if params.point_count == 0 {
        return Err(SynthError::EmptyCapture);
    }
    if !params.crop_fraction.is_finite() || !(0.0..1.0).contains(&params.crop_fraction) {
        return Err(SynthError::InvalidCropFraction(params.crop_fraction));
    }
    if !params.noise_sigma.is_finite() || params.noise_sigma < 0.0 {
        return Err(SynthError::InvalidNoiseSigma(params.noise_sigma));
    }

    let sampled = sample_surface(&identity.shape, params.point_count, params.capture_seed);
    // Continue the same stream for crop and noise so the whole capture is one
    // function of (identity, params).
    let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(params.capture_seed, 1, 0));

    let points = sampled.points();
    let sampled_normals = sampled.normals().expect("sampled surfaces carry normals");
    let kept_count = params.point_count - (params.crop_fraction * params.point_count as f64) as usize;
    if kept_count == 0 {
        return Err(SynthError::EmptyCapture);
    }

    let mut kept_normals: Vec<UnitVector3> = sampled_normals.to_vec();
    let mut kept: Vec<Point3> = if kept_count == params.point_count {
        points.to_vec()
    } else {
        // Crop direction: random within a fixed cone around the blind side
        // (-z in the canonical frame). Captures of one identity then always
        // cover the feature-bearing front and differ in how far around the
        // head they reach, the way scans swept to different maximum angles
        // do, instead of deleting arbitrary caps.
        let cos_cone = CROP_CONE_HALF_ANGLE_DEG.to_radians().cos();
        let cos_psi = rng.range_f64(cos_cone, 1.0);
        let phi = rng.range_f64(0.0, std::f64::consts::TAU);
        let sin_psi = (1.0 - cos_psi * cos_psi).max(0.0).sqrt();
        let crop_dir = Vector3::new(sin_psi * phi.cos(), sin_psi * phi.sin(), -cos_psi);
        // Keep the kept_count points with smallest projection onto the crop
        // direction (drop the far cap), preserving original point order.
        let mut by_projection: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.coords.dot(&crop_dir), i))
            .collect();
        by_projection.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut keep_indices: Vec<usize> =
            by_projection[..kept_count].iter().map(|&(_, i)| i).collect();
        keep_indices.sort_unstable();
        kept_normals = keep_indices.iter().map(|&i| sampled_normals[i]).collect();
        keep_indices.iter().map(|&i| points[i]).collect()
    };

    // Noise invalidates the analytic normals, so noisy captures carry none;
    // noise-free captures keep them (the pose maps them by its rotation).
    let mut normals = Some(kept_normals);
    if params.noise_sigma > 0.0 {
        let diagonal = PointCloud::from_parts_unchecked(kept.clone(), None).bounding_box_diagonal();
        let sigma = params.noise_sigma * diagonal;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma checked finite positive");
            for p in &mut kept {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
                p.z += normal.sample(&mut rng);
            }
            normals = None;
        }
    }

    let cloud = params
        .true_transform
        .apply(&PointCloud::from_parts_unchecked(kept, normals));
    Ok((cloud, params.true_transform))
}

/// Everything a recognition experiment needs: enrolled gallery, probe set,
/// ground truth, and the poses that generated each capture.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub gallery: Vec<GalleryEntry>,
    pub probes: Vec<Probe>,
    /// (probe label, identity label), one row per probe, probe order.
    pub truth: Vec<(String, String)>,
    /// (capture label, pose) for every capture including gallery models.
    pub true_transforms: Vec<(String, SimilarityTransform)>,
}

/// Capture variation for benchmark generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub point_count: usize,
    pub noise_sigma: f64,
    pub crop_fraction: f64,
    /// Pose scale is drawn uniformly from this range.
    pub scale_range: (f64, f64),
    /// Pose rotation angle is drawn uniformly from [0, this] degrees, about
    /// a uniform random axis.
    pub max_rotation_deg: f64,
    /// Pose translation components are drawn uniformly from +/- this.
    pub max_translation: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            point_count: 20_000,
            noise_sigma: 0.0035,
            crop_fraction: 0.10,
            scale_range: (0.85, 1.2),
            max_rotation_deg: 30.0,
            max_translation: 0.5,
        }
    }
}

/// Identity label: "id00", "id01", ...
pub fn identity_label(i: usize) -> String {
    format!("id{i:02}")
}

/// Capture label: "id00_c0" is the gallery capture, "_c1" onward are probes.
pub fn capture_label(identity: usize, capture: usize) -> String {
    format!("{}_c{capture}", identity_label(identity))
}

/// Half-angle of the cone (about -z) that crop directions are drawn from.
const CROP_CONE_HALF_ANGLE_DEG: f64 = 20.0;

// Seed-stream tags for derive_seed; identity shapes, capture sampling, and
// pose draws must never share a stream.
const STREAM_IDENTITY: u64 = 1;
const STREAM_CAPTURE: u64 = 2;
const STREAM_POSE: u64 = 3;

/// Builds a closed-set benchmark: `identities` enrolled heads, one gallery
/// capture each, and `captures_per_identity - 1` probe captures each, all
/// derived deterministically from `master_seed`.
///
/// The gallery capture gets a mild pose (it is the enrolled reference);
/// probe captures get full pose variation.
pub fn build_benchmark(
    identities: usize,
    captures_per_identity: usize,
    params: &BenchmarkParams,
    master_seed: u64,
) -> Result<Benchmark, SynthError> {
    if identities == 0 || captures_per_identity < 2 {
        return Err(SynthError::BenchmarkTooSmall);
    }

    let mut gallery = Vec::with_capacity(identities);
    let mut probes = Vec::new();
    let mut truth = Vec::new();
    let mut true_transforms = Vec::new();

    for i in 0..identities {
        let identity =
            SyntheticIdentity::from_seed(derive_seed(master_seed, STREAM_IDENTITY, i as u64));

        for c in 0..captures_per_identity {
            let capture_seed = derive_seed(master_seed, STREAM_CAPTURE, (i * captures_per_identity + c) as u64);
            let pose_seed = derive_seed(master_seed, STREAM_POSE, (i * captures_per_identity + c) as u64);
            // Enrollment (c == 0) is a controlled scan: canonical pose, no
            // crop. Probe captures get full pose variation and cropping.
            let (pose, crop_fraction) = if c == 0 {
                (SimilarityTransform::identity(), 0.0)
            } else {
                (random_pose(pose_seed, params), params.crop_fraction)
            };
            let (cloud, pose) = capture(
                &identity,
                &CaptureParams {
                    point_count: params.point_count,
                    noise_sigma: params.noise_sigma,
                    crop_fraction,
                    true_transform: pose,
                    capture_seed,
                },
            )?;
            let label = capture_label(i, c);
            true_transforms.push((label.clone(), pose));
            if c == 0 {
                gallery.push(GalleryEntry::new(identity_label(i), cloud)?);
            } else {
                truth.push((label.clone(), identity_label(i)));
                probes.push(Probe {
                    identity: identity_label(i),
                    label,
                    cloud,
                });
            }
        }
    }

    Ok(Benchmark {
        gallery,
        probes,
        truth,
        true_transforms,
    })
}

fn random_pose(seed: u64, params: &BenchmarkParams) -> SimilarityTransform {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let scale = rng.range_f64(params.scale_range.0, params.scale_range.1);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.range_f64(0.0, params.max_rotation_deg.to_radians());
    let rotation = rotation_about_axis(
        &UnitVector3::new_normalize(Vector3::new(axis[0], axis[1], axis[2])),
        angle,
    );
    let translation = Vector3::new(
        rng.range_f64(-params.max_translation, params.max_translation),
        rng.range_f64(-params.max_translation, params.max_translation),
        rng.range_f64(-params.max_translation, params.max_translation),
    );
    SimilarityTransform::new(scale, RigidMotion::new_unchecked(rotation, translation))
        .expect("scale range is positive")
}
