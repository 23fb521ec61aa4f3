//! Minimal end-to-end recognition run on synthetic data: generate a small
//! benchmark, score every probe against every gallery model, and report the
//! verification and identification summaries.

use cloudmatch_core::eval::{cmc_curve, score_all, verification_report};
use cloudmatch_core::registration::IcpParams;
use cloudmatch_core::synth::{build_benchmark, BenchmarkParams};

fn main() {
    let params = BenchmarkParams {
        point_count: 5000,
        ..BenchmarkParams::default()
    };
    let bench = build_benchmark(6, 3, &params, 42).expect("benchmark generation");
    println!(
        "benchmark: {} gallery models, {} probes",
        bench.gallery.len(),
        bench.probes.len()
    );

    let matrix =
        score_all(&bench.probes, &bench.gallery, &IcpParams::default(), 4.0).expect("scoring");

    let (lo, hi) = matrix
        .scores
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let thresholds: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();

    let report = verification_report(&matrix, &thresholds).expect("verification sweep");
    let cmc = cmc_curve(&matrix).expect("identification ranking");
    println!("eer {:.4} at threshold {:.5}", report.eer, report.eer_threshold);
    println!("rank-1 {:.4}", cmc.rank_1());
}
