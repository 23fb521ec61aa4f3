//! Closed-set biometric evaluation: gallery matching, score matrices,
//! verification (FAR/FRR/ROC/EER) and identification (CMC) summaries.

use crate::geometry::PointCloud;
use crate::index::NearestNeighborIndex;
use crate::metric::{trimmed_cloud_distance, MetricError};
use crate::registration::{align, IcpParams, RegistrationError};
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no probes")]
    NoProbes,
    #[error("duplicate gallery identity {0:?}")]
    DuplicateIdentity(String),
    #[error("gallery identity must be non-empty")]
    EmptyIdentity,
    #[error("probe identity {0:?} not present in gallery (evaluation is closed-set)")]
    UnknownIdentity(String),
    #[error("degenerate ground truth")]
    DegenerateGroundTruth,
    #[error("threshold sweep must be non-empty and ascending")]
    InvalidThresholds,
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One enrolled identity: the model cloud plus its prebuilt search index.
#[derive(Clone, Debug)]
pub struct GalleryEntry {
    identity: String,
    model: PointCloud,
    index: NearestNeighborIndex,
}

impl GalleryEntry {
    pub fn new(identity: impl Into<String>, model: PointCloud) -> Result<Self, EvalError> {
        let identity = identity.into();
        if identity.is_empty() {
            return Err(EvalError::EmptyIdentity);
        }
        let index = NearestNeighborIndex::build(&model)
            .map_err(|e| EvalError::Registration(RegistrationError::Index(e)))?;
        Ok(Self {
            identity,
            model,
            index,
        })
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn model(&self) -> &PointCloud {
        &self.model
    }

    pub fn index(&self) -> &NearestNeighborIndex {
        &self.index
    }
}

/// A probe capture: claimed identity, a label distinguishing this capture,
/// and the cloud itself.
#[derive(Clone, Debug)]
pub struct Probe {
    pub identity: String,
    pub label: String,
    pub cloud: PointCloud,
}

/// Dissimilarity score for one probe against one gallery entry: the probe is
/// aligned onto the model, then scored with the directed trimmed distance
/// (probe as source). Lower is more similar.
pub fn match_probe(
    probe: &PointCloud,
    entry: &GalleryEntry,
    icp: &IcpParams,
    trim_k: f64,
) -> Result<f64, EvalError> {
    let result = align(probe, entry.model(), icp)?;
    let aligned = result.transform.apply(probe);
    Ok(trimmed_cloud_distance(&aligned, entry.index(), trim_k)?.distance)
}

/// Full probe-by-gallery score matrix.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    /// (identity, label) per probe, in input order.
    pub probes: Vec<(String, String)>,
    /// Gallery identities, in input order.
    pub gallery: Vec<String>,
    /// `scores[i][j]` scores probe `i` against gallery entry `j`. Always
    /// finite and non-negative; failed alignments hold `f64::MAX`.
    pub scores: Vec<Vec<f64>>,
    /// (probe, gallery) cells whose alignment or scoring failed.
    pub failed_pairs: Vec<(usize, usize)>,
}

impl ScoreMatrix {
    /// Genuine (same identity) and impostor (different identity) pair counts.
    pub fn pair_counts(&self) -> (usize, usize) {
        let mut genuine = 0usize;
        let mut impostor = 0usize;
        for (identity, _) in &self.probes {
            for g in &self.gallery {
                if identity == g {
                    genuine += 1;
                } else {
                    impostor += 1;
                }
            }
        }
        (genuine, impostor)
    }
}

/// Scores every probe against every gallery entry.
///
/// Cells are independent and run in parallel; each gets its own RNG stream
/// seeded by `derive_seed(icp.rng_seed, probe_index, gallery_index)`, so the
/// matrix is identical at any thread count. A cell whose alignment fails
/// scores `f64::MAX` (never a match at any sane threshold) and is recorded in
/// `failed_pairs` rather than failing the whole run.
pub fn score_all(
    probes: &[Probe],
    gallery: &[GalleryEntry],
    icp: &IcpParams,
    trim_k: f64,
) -> Result<ScoreMatrix, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    if probes.is_empty() {
        return Err(EvalError::NoProbes);
    }
    for (i, entry) in gallery.iter().enumerate() {
        for other in &gallery[i + 1..] {
            if entry.identity == other.identity {
                return Err(EvalError::DuplicateIdentity(entry.identity.clone()));
            }
        }
    }

    let cells: Vec<(usize, usize)> = (0..probes.len())
        .flat_map(|i| (0..gallery.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<f64, EvalError>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cell_params = IcpParams {
                rng_seed: derive_seed(icp.rng_seed, i as u64, j as u64),
                ..icp.clone()
            };
            match_probe(&probes[i].cloud, &gallery[j], &cell_params, trim_k)
        })
        .collect();

    let mut scores = vec![vec![0.0f64; gallery.len()]; probes.len()];
    let mut failed_pairs = Vec::new();
    for (&(i, j), result) in cells.iter().zip(results) {
        match result {
            Ok(s) => scores[i][j] = s,
            Err(_) => {
                scores[i][j] = f64::MAX;
                failed_pairs.push((i, j));
            }
        }
    }

    Ok(ScoreMatrix {
        probes: probes
            .iter()
            .map(|p| (p.identity.clone(), p.label.clone()))
            .collect(),
        gallery: gallery.iter().map(|e| e.identity.clone()).collect(),
        scores,
        failed_pairs,
    })
}

/// Verification sweep: FAR and FRR per threshold, plus the interpolated
/// equal-error rate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub thresholds: Vec<f64>,
    /// False accept rate per threshold: impostor pairs with score <= theta.
    pub far: Vec<f64>,
    /// False reject rate per threshold: genuine pairs with score > theta.
    pub frr: Vec<f64>,
    /// Equal error rate, linearly interpolated between the sweep points that
    /// bracket the FAR/FRR crossing.
    pub eer: f64,
    /// Threshold at which the interpolated crossing occurs.
    pub eer_threshold: f64,
}

/// Computes FAR/FRR over the given ascending threshold sweep. A pair is
/// accepted at threshold theta when its score is <= theta. Requires at least
/// one genuine and one impostor pair ("degenerate ground truth" otherwise),
/// and every probe identity to exist in the gallery.
pub fn verification_report(
    matrix: &ScoreMatrix,
    thresholds: &[f64],
) -> Result<VerificationReport, EvalError> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !t.is_finite()) {
        return Err(EvalError::InvalidThresholds);
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::InvalidThresholds);
    }
    check_closed_set(matrix)?;

    let (genuine_total, impostor_total) = matrix.pair_counts();
    if genuine_total == 0 || impostor_total == 0 {
        return Err(EvalError::DegenerateGroundTruth);
    }

    let mut far = Vec::with_capacity(thresholds.len());
    let mut frr = Vec::with_capacity(thresholds.len());
    for &theta in thresholds {
        let mut false_accepts = 0usize;
        let mut false_rejects = 0usize;
        for (i, (identity, _)) in matrix.probes.iter().enumerate() {
            for (j, g) in matrix.gallery.iter().enumerate() {
                let accepted = matrix.scores[i][j] <= theta;
                if identity == g {
                    if !accepted {
                        false_rejects += 1;
                    }
                } else if accepted {
                    false_accepts += 1;
                }
            }
        }
        far.push(false_accepts as f64 / impostor_total as f64);
        frr.push(false_rejects as f64 / genuine_total as f64);
    }

    let (eer, eer_threshold) = interpolate_eer(thresholds, &far, &frr);
    Ok(VerificationReport {
        thresholds: thresholds.to_vec(),
        far,
        frr,
        eer,
        eer_threshold,
    })
}

/// FAR rises and FRR falls with theta, so FAR - FRR crosses zero once. Find
/// the first sweep point where the difference becomes non-negative and
/// interpolate linearly inside the bracketing interval; at the interpolated
/// point the two (piecewise-linear) rates are equal by construction. If the
/// sweep never brackets a crossing, fall back to the sweep point minimizing
/// |FAR - FRR| and average the rates there.
fn interpolate_eer(thresholds: &[f64], far: &[f64], frr: &[f64]) -> (f64, f64) {
    let crossing = (0..thresholds.len()).find(|&t| far[t] - frr[t] >= 0.0);
    match crossing {
        Some(0) => ((far[0] + frr[0]) / 2.0, thresholds[0]),
        Some(t) => {
            let d0 = far[t - 1] - frr[t - 1];
            let d1 = far[t] - frr[t];
            // d0 < 0 <= d1, so the denominator is nonzero.
            let alpha = d0 / (d0 - d1);
            let eer = far[t - 1] + alpha * (far[t] - far[t - 1]);
            let theta = thresholds[t - 1] + alpha * (thresholds[t] - thresholds[t - 1]);
            (eer, theta)
        }
        None => {
            let mut best = 0usize;
            for t in 1..thresholds.len() {
                if (far[t] - frr[t]).abs() < (far[best] - frr[best]).abs() {
                    best = t;
                }
            }
            ((far[best] + frr[best]) / 2.0, thresholds[best])
        }
    }
}

/// Cumulative match characteristic for closed-set identification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `rank_rates[r]` is the fraction of probes whose true identity ranks
    /// within the best `r + 1` scores. Non-decreasing; the last entry is
    /// exactly 1 for a closed set.
    pub rank_rates: Vec<f64>,
}

impl CmcCurve {
    pub fn rank_1(&self) -> f64 {
        self.rank_rates.first().copied().unwrap_or(0.0)
    }
}

/// Ranks each probe's gallery scores ascending, ties broken by gallery
/// insertion order, and accumulates how often the true identity appears
/// within each rank.
pub fn cmc_curve(matrix: &ScoreMatrix) -> Result<CmcCurve, EvalError> {
    check_closed_set(matrix)?;
    let g = matrix.gallery.len();
    let mut counts = vec![0usize; g];
    for (i, (identity, _)) in matrix.probes.iter().enumerate() {
        let true_j = matrix
            .gallery
            .iter()
            .position(|x| x == identity)
            .expect("closed set checked above");
        let true_score = matrix.scores[i][true_j];
        // Rank of the true entry under ascending (score, gallery order).
        let rank = 1 + (0..g)
            .filter(|&j| {
                matrix.scores[i][j] < true_score
                    || (matrix.scores[i][j] == true_score && j < true_j)
            })
            .count();
        counts[rank - 1] += 1;
    }

    let total = matrix.probes.len();
    let mut rank_rates = Vec::with_capacity(g);
    let mut cumulative = 0usize;
    for c in counts {
        cumulative += c;
        rank_rates.push(cumulative as f64 / total as f64);
    }
    Ok(CmcCurve { rank_rates })
}

fn check_closed_set(matrix: &ScoreMatrix) -> Result<(), EvalError> {
    if matrix.gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    if matrix.probes.is_empty() {
        return Err(EvalError::NoProbes);
    }
    for (identity, _) in &matrix.probes {
        if !matrix.gallery.contains(identity) {
            return Err(EvalError::UnknownIdentity(identity.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(
        probe_ids: &[&str],
        gallery_ids: &[&str],
        scores: &[&[f64]],
    ) -> ScoreMatrix {
        ScoreMatrix {
            probes: probe_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), format!("p{i}")))
                .collect(),
            gallery: gallery_ids.iter().map(|s| s.to_string()).collect(),
            scores: scores.iter().map(|r| r.to_vec()).collect(),
            failed_pairs: vec![],
        }
    }

    #[test]
    fn clean_separation_gives_zero_eer() {
        // Genuine scores {0.1, 0.2}, impostor scores {0.3, 0.4}: at 0.25 both
        // rates are zero.
        let m = matrix(
            &["a", "b"],
            &["a", "b"],
            &[&[0.1, 0.3], &[0.4, 0.2]],
        );
        let report = verification_report(&m, &[0.0, 0.25, 0.5]).unwrap();
        assert_eq!(report.far, vec![0.0, 0.0, 1.0]);
        assert_eq!(report.frr, vec![1.0, 0.0, 0.0]);
        assert_eq!(report.eer, 0.0);
        assert_eq!(report.eer_threshold, 0.25);
    }

    #[test]
    fn far_frr_monotone_over_sweep() {
        let m = matrix(
            &["a", "b", "c", "a"],
            &["a", "b", "c"],
            &[
                &[0.12, 0.55, 0.80],
                &[0.66, 0.09, 0.45],
                &[0.50, 0.61, 0.15],
                &[0.22, 0.47, 0.52],
            ],
        );
        let sweep: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let report = verification_report(&m, &sweep).unwrap();
        for w in report.far.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in report.frr.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(*report.far.first().unwrap(), 0.0);
        assert_eq!(*report.frr.last().unwrap(), 0.0);
    }

    #[test]
    fn eer_interpolates_between_sweep_points() {
        // One genuine pair at 0.5, one impostor pair at 0.5: FAR jumps 0->1
        // and FRR 1->0 at the same point between thresholds 0.4 and 0.6.
        let m = matrix(&["a"], &["a", "b"], &[&[0.5, 0.5]]);
        let report = verification_report(&m, &[0.0, 0.4, 0.6, 1.0]).unwrap();
        // diff at 0.4: 0 - 1 = -1; at 0.6: 1 - 0 = 1; alpha = 0.5.
        assert_eq!(report.eer, 0.5);
        assert_eq!(report.eer_threshold, 0.5);
    }

    #[test]
    fn eer_threshold_minimizes_rate_gap() {
        let m = matrix(
            &["a", "b"],
            &["a", "b"],
            &[&[0.30, 0.35], &[0.50, 0.20]],
        );
        let sweep: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let report = verification_report(&m, &sweep).unwrap();
        // Recompute rates at the reported threshold: gap must be the sweep
        // minimum.
        let at = |theta: f64| {
            let mut fa = 0.0f64;
            let mut fr = 0.0f64;
            let pairs = [
                (0.30, true),
                (0.35, false),
                (0.50, false),
                (0.20, true),
            ];
            for (s, genuine) in pairs {
                if genuine && s > theta {
                    fr += 1.0 / 2.0;
                }
                if !genuine && s <= theta {
                    fa += 1.0 / 2.0;
                }
            }
            (fa, fr)
        };
        let min_gap = sweep
            .iter()
            .map(|&t| {
                let (fa, fr) = at(t);
                (fa - fr).abs()
            })
            .fold(f64::INFINITY, f64::min);
        let (fa, fr) = at(report.eer_threshold);
        assert!((fa - fr).abs() <= min_gap);
    }

    #[test]
    fn degenerate_ground_truth_rejected() {
        // All genuine: no impostor pairs.
        let m = matrix(&["a"], &["a"], &[&[0.1]]);
        let err = verification_report(&m, &[0.5]).unwrap_err();
        assert_eq!(err.to_string(), "degenerate ground truth");
    }

    #[test]
    fn open_set_probe_rejected() {
        let m = matrix(&["zed"], &["a", "b"], &[&[0.1, 0.2]]);
        assert!(matches!(
            verification_report(&m, &[0.5]),
            Err(EvalError::UnknownIdentity(_))
        ));
        let m2 = matrix(&["zed"], &["a", "b"], &[&[0.1, 0.2]]);
        assert!(matches!(cmc_curve(&m2), Err(EvalError::UnknownIdentity(_))));
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        let m = matrix(&["a"], &["a", "b"], &[&[0.1, 0.9]]);
        assert!(matches!(
            verification_report(&m, &[0.5, 0.1]),
            Err(EvalError::InvalidThresholds)
        ));
        assert!(matches!(
            verification_report(&m, &[]),
            Err(EvalError::InvalidThresholds)
        ));
    }

    #[test]
    fn cmc_worked_example() {
        // Three identities; probe "b" has its true match ranked second.
        let m = matrix(
            &["a", "b", "c"],
            &["a", "b", "c"],
            &[
                &[0.10, 0.50, 0.60],
                &[0.20, 0.30, 0.70],
                &[0.55, 0.65, 0.05],
            ],
        );
        let cmc = cmc_curve(&m).unwrap();
        assert_eq!(cmc.rank_rates, vec![2.0 / 3.0, 1.0, 1.0]);
        assert_eq!(cmc.rank_1(), 2.0 / 3.0);
    }

    #[test]
    fn cmc_ties_break_by_gallery_order() {
        // Probe "b": scores tie at 0.3 for gallery a (j=0) and b (j=1).
        // Gallery order puts "a" first, so "b" ranks second.
        let m = matrix(&["b"], &["a", "b"], &[&[0.3, 0.3]]);
        let cmc = cmc_curve(&m).unwrap();
        assert_eq!(cmc.rank_rates, vec![0.0, 1.0]);

        // Same scores but gallery order flipped: "b" now ranks first.
        let m2 = matrix(&["b"], &["b", "a"], &[&[0.3, 0.3]]);
        let cmc2 = cmc_curve(&m2).unwrap();
        assert_eq!(cmc2.rank_rates, vec![1.0, 1.0]);
    }

    #[test]
    fn cmc_terminal_rank_is_exactly_one() {
        let m = matrix(
            &["a", "b", "a"],
            &["a", "b", "c"],
            &[
                &[0.9, 0.1, 0.2],
                &[0.3, 0.8, 0.1],
                &[0.5, 0.5, 0.5],
            ],
        );
        let cmc = cmc_curve(&m).unwrap();
        assert_eq!(*cmc.rank_rates.last().unwrap(), 1.0);
        for w in cmc.rank_rates.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn pair_counts_counts_attempts() {
        let m = matrix(
            &["a", "a", "b"],
            &["a", "b"],
            &[&[0.1, 0.2], &[0.1, 0.2], &[0.1, 0.2]],
        );
        assert_eq!(m.pair_counts(), (3, 3));
    }

    #[test]
    fn gallery_entry_rejects_empty_identity() {
        let cloud = PointCloud::new(vec![crate::geometry::Point3::origin()]).unwrap();
        assert!(matches!(
            GalleryEntry::new("", cloud),
            Err(EvalError::EmptyIdentity)
        ));
    }
}
