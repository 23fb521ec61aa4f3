//! Point-cloud face matching: similarity-transform ICP alignment, trimmed
//! cloud-to-cloud distance scoring, and closed-set biometric evaluation.
//!
//! The pipeline is deterministic end to end: every randomized step draws from
//! an explicitly seeded [`rng::Xoshiro256StarStar`], and parallelism only ever
//! spans independent work items with independently derived seeds.

pub mod eval;
pub mod geometry;
pub mod index;
pub mod io;
pub mod metric;
pub mod normals;
pub mod registration;
pub mod rng;
pub mod synth;

pub use eval::{cmc_curve, match_probe, score_all, CmcCurve, GalleryEntry, Probe, ScoreMatrix};
pub use eval::{verification_report, EvalError, VerificationReport};
pub use geometry::{
    GeometryError, Matrix3, Point3, PointCloud, RigidMotion, SimilarityTransform, UnitVector3,
    Vector3,
};
pub use index::{IndexError, NearestNeighborIndex};
pub use io::{read_cloud, write_cloud, IoError, TransformRecord};
pub use metric::{
    point_to_cloud_distance, symmetric_trimmed_distance, trimmed_cloud_distance, MetricError,
    TrimmedDistanceResult,
};
pub use normals::{estimate_normals, NormalEstimation};
pub use registration::{
    align, horn_scale, point_to_plane_error, solve_point_to_plane, Correspondence,
    CorrespondenceSet, IcpParams, IcpResult, RegistrationError,
};
pub use synth::{
    build_benchmark, capture, generate_identity_cloud, Benchmark, BenchmarkParams, Bump,
    CaptureParams, ShapeParams, SynthError, SyntheticIdentity,
};
