//! cloudmatch: align point clouds, score their similarity, and run closed-set
//! recognition experiments, deterministically.
//!
//! Exit codes: 0 success, 1 pipeline failure (I/O, parse, degenerate
//! geometry), 2 usage errors (clap's default).

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cloudmatch_core::eval::{cmc_curve, score_all, verification_report, GalleryEntry, Probe};
use cloudmatch_core::io::{
    read_cloud, read_truth_csv, write_cloud, write_cmc_csv, write_json, write_roc_csv,
    write_truth_csv, RunConfig, SweepSpec, TransformRecord,
};
use cloudmatch_core::registration::{align, IcpParams};
use cloudmatch_core::synth::{build_benchmark, BenchmarkParams};
use cloudmatch_core::metric::{symmetric_trimmed_distance, trimmed_cloud_distance};
use cloudmatch_core::index::NearestNeighborIndex;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "cloudmatch",
    version,
    about = "Point-cloud face matching: alignment, distance scoring, recognition evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// ICP flags shared by every command that aligns clouds.
#[derive(Args, Clone)]
struct IcpArgs {
    /// Source points sampled per ICP iteration
    #[arg(long, default_value_t = 500)]
    sample_size: usize,
    /// ICP iteration count
    #[arg(long, default_value_t = 15)]
    iterations: usize,
    /// Outlier rejection multiplier (pairs past this times the median pair
    /// distance are dropped)
    #[arg(long, default_value_t = 4.0)]
    outlier_k: f64,
}

impl IcpArgs {
    fn params(&self, seed: u64) -> IcpParams {
        IcpParams {
            sample_size: self.sample_size,
            iterations: self.iterations,
            outlier_k: self.outlier_k,
            rng_seed: seed,
            ..IcpParams::default()
        }
    }
}

/// Seed flag: explicit --seed wins over the CLOUDMATCH_SEED environment
/// variable, which wins over the default 0.
#[derive(Args, Clone)]
struct SeedArg {
    /// RNG seed (env: CLOUDMATCH_SEED)
    #[arg(long, env = "CLOUDMATCH_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Align a source cloud onto a destination cloud with a similarity
    /// transform and write the transform as JSON
    Align {
        /// Source cloud (.ply)
        src: PathBuf,
        /// Destination cloud (.ply)
        dst: PathBuf,
        #[command(flatten)]
        icp: IcpArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Output path for the transform record
        #[arg(long, default_value = "transform.json")]
        out: PathBuf,
        /// Also write the transformed source cloud here
        #[arg(long)]
        aligned: Option<PathBuf>,
    },
    /// Trimmed cloud-to-cloud distance between two clouds
    Distance {
        /// First cloud; the directed distance runs from it to the second
        a: PathBuf,
        /// Second cloud
        b: PathBuf,
        /// Trim multiplier: points past k times the median distance are
        /// outliers
        #[arg(long, default_value_t = 4.0)]
        k: f64,
        /// Average the two directed distances instead
        #[arg(long)]
        symmetric: bool,
    },
    /// Score one probe against every model in a gallery directory
    Match {
        /// Probe cloud (.ply)
        probe: PathBuf,
        /// Directory of gallery models (one .ply per identity)
        #[arg(long)]
        gallery: PathBuf,
        /// Trim multiplier for the score metric
        #[arg(long, default_value_t = 4.0)]
        k: f64,
        #[command(flatten)]
        icp: IcpArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Full recognition experiment: score a probe directory against a
    /// gallery, write roc.csv and cmc.csv, print the EER
    Eval {
        /// Directory of gallery models (one .ply per identity)
        #[arg(long)]
        gallery: PathBuf,
        /// Directory of probe clouds (.ply)
        #[arg(long)]
        probes: PathBuf,
        /// Ground-truth CSV mapping probe file stems to identities
        #[arg(long)]
        truth: PathBuf,
        /// Threshold sweep as min,max,count
        #[arg(long, value_parser = parse_sweep)]
        sweep: SweepSpec,
        /// Output directory for roc.csv, cmc.csv, run_config.json
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Trim multiplier for the score metric
        #[arg(long, default_value_t = 4.0)]
        k: f64,
        #[command(flatten)]
        icp: IcpArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate a synthetic benchmark: gallery and probe clouds plus
    /// truth.csv
    Synth {
        /// Number of identities
        #[arg(long)]
        identities: usize,
        /// Captures per identity (first becomes the gallery model)
        #[arg(long)]
        captures: usize,
        /// Points per cloud
        #[arg(long, default_value_t = 20_000)]
        points: usize,
        /// Gaussian noise sigma as a fraction of cloud diameter
        #[arg(long, default_value_t = 0.005)]
        noise: f64,
        /// Fraction of each capture cropped away
        #[arg(long, default_value_t = 0.10)]
        crop: f64,
        /// Output directory (gallery/, probes/, truth.csv)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn parse_sweep(text: &str) -> Result<SweepSpec, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err("expected min,max,count".into());
    }
    let min: f64 = parts[0].trim().parse().map_err(|_| "min is not a number".to_string())?;
    let max: f64 = parts[1].trim().parse().map_err(|_| "max is not a number".to_string())?;
    let count: usize = parts[2].trim().parse().map_err(|_| "count is not an integer".to_string())?;
    if !min.is_finite() || !max.is_finite() || max < min {
        return Err("need finite min <= max".into());
    }
    if count == 0 {
        return Err("count must be positive".into());
    }
    Ok(SweepSpec { min, max, count })
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Align {
            src,
            dst,
            icp,
            seed,
            out,
            aligned,
        } => cmd_align(&src, &dst, &icp, seed.seed, &out, aligned.as_deref()),
        Command::Distance { a, b, k, symmetric } => cmd_distance(&a, &b, k, symmetric),
        Command::Match {
            probe,
            gallery,
            k,
            icp,
            seed,
        } => cmd_match(&probe, &gallery, k, &icp, seed.seed),
        Command::Eval {
            gallery,
            probes,
            truth,
            sweep,
            out,
            k,
            icp,
            seed,
        } => cmd_eval(&gallery, &probes, &truth, sweep, &out, k, &icp, seed.seed),
        Command::Synth {
            identities,
            captures,
            points,
            noise,
            crop,
            out,
            seed,
        } => cmd_synth(identities, captures, points, noise, crop, &out, seed.seed),
    }
}

fn load_cloud(path: &Path) -> Result<cloudmatch_core::geometry::PointCloud> {
    read_cloud(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_align(
    src: &Path,
    dst: &Path,
    icp: &IcpArgs,
    seed: u64,
    out: &Path,
    aligned: Option<&Path>,
) -> Result<()> {
    eprintln!("seed: {seed}");
    let source = load_cloud(src)?;
    let destination = load_cloud(dst)?;
    let result = align(&source, &destination, &icp.params(seed))
        .with_context(|| format!("aligning {} onto {}", src.display(), dst.display()))?;

    let record = TransformRecord::from_result(&result, seed);
    write_json(&record, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(aligned_path) = aligned {
        let moved = result.transform.apply(&source);
        write_cloud(&moved, aligned_path)
            .with_context(|| format!("writing {}", aligned_path.display()))?;
    }

    println!(
        "scale {} rotation_deg {:.6} final_error {:.6e} iterations {}",
        result.transform.scale(),
        result.transform.motion().rotation_angle().to_degrees(),
        result.final_error,
        result.per_iteration_error.len()
    );
    Ok(())
}

fn cmd_distance(a: &Path, b: &Path, k: f64, symmetric: bool) -> Result<()> {
    let cloud_a = load_cloud(a)?;
    let cloud_b = load_cloud(b)?;
    if symmetric {
        let d = symmetric_trimmed_distance(&cloud_a, &cloud_b, k)
            .with_context(|| format!("scoring {} against {}", a.display(), b.display()))?;
        println!("symmetric_distance\n{d}");
    } else {
        let index_b = NearestNeighborIndex::build(&cloud_b)
            .with_context(|| format!("indexing {}", b.display()))?;
        let r = trimmed_cloud_distance(&cloud_a, &index_b, k)
            .with_context(|| format!("scoring {} against {}", a.display(), b.display()))?;
        println!("distance,median,outliers,retained");
        println!(
            "{},{},{},{}",
            r.distance, r.median, r.outlier_count, r.retained_count
        );
    }
    Ok(())
}

/// Gallery directory: every .ply file is one identity, named by file stem,
/// loaded in lexicographic filename order.
fn load_gallery(dir: &Path) -> Result<Vec<GalleryEntry>> {
    let mut paths = ply_files(dir)?;
    if paths.is_empty() {
        bail!("no .ply files in gallery directory {}", dir.display());
    }
    paths.sort();
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let identity = file_stem(&path)?;
        let cloud = load_cloud(&path)?;
        entries.push(
            GalleryEntry::new(identity, cloud)
                .with_context(|| format!("enrolling {}", path.display()))?,
        );
    }
    Ok(entries)
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().is_some_and(|e| e == "ply") {
            paths.push(path);
        }
    }
    Ok(paths)
}

fn file_stem(path: &Path) -> Result<String> {
    Ok(path
        .file_stem()
        .with_context(|| format!("no file stem in {}", path.display()))?
        .to_string_lossy()
        .into_owned())
}

fn cmd_match(probe: &Path, gallery_dir: &Path, k: f64, icp: &IcpArgs, seed: u64) -> Result<()> {
    eprintln!("seed: {seed}");
    let gallery = load_gallery(gallery_dir)?;
    let probe_cloud = load_cloud(probe)?;
    let probes = vec![Probe {
        // Identity is irrelevant for raw ranking output; reuse the stem.
        identity: file_stem(probe)?,
        label: file_stem(probe)?,
        cloud: probe_cloud,
    }];
    let matrix = score_all(&probes, &gallery, &icp.params(seed), k)
        .with_context(|| format!("scoring {}", probe.display()))?;

    let mut ranked: Vec<(usize, f64)> = matrix.scores[0]
        .iter()
        .enumerate()
        .map(|(j, &s)| (j, s))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    println!("rank,identity,score");
    for (rank, (j, score)) in ranked.iter().enumerate() {
        println!("{},{},{}", rank + 1, matrix.gallery[*j], score);
    }
    for &(i, j) in &matrix.failed_pairs {
        eprintln!(
            "warning: scoring failed for probe {} against {}",
            matrix.probes[i].1, matrix.gallery[j]
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    gallery_dir: &Path,
    probes_dir: &Path,
    truth_path: &Path,
    sweep: SweepSpec,
    out_dir: &Path,
    k: f64,
    icp: &IcpArgs,
    seed: u64,
) -> Result<()> {
    eprintln!("seed: {seed}");
    let gallery = load_gallery(gallery_dir)?;
    let truth: HashMap<String, String> = read_truth_csv(truth_path)
        .with_context(|| format!("reading {}", truth_path.display()))?
        .into_iter()
        .collect();

    let mut probe_paths = ply_files(probes_dir)?;
    if probe_paths.is_empty() {
        bail!("no .ply files in probes directory {}", probes_dir.display());
    }
    probe_paths.sort();
    let mut probes = Vec::with_capacity(probe_paths.len());
    for path in probe_paths {
        let label = file_stem(&path)?;
        let identity = truth.get(&label).with_context(|| {
            format!(
                "probe {} has no identity in {}",
                label,
                truth_path.display()
            )
        })?;
        probes.push(Probe {
            identity: identity.clone(),
            label,
            cloud: load_cloud(&path)?,
        });
    }

    let params = icp.params(seed);
    let matrix = score_all(&probes, &gallery, &params, k).context("scoring probes")?;
    for &(i, j) in &matrix.failed_pairs {
        eprintln!(
            "warning: scoring failed for probe {} against {}",
            matrix.probes[i].1, matrix.gallery[j]
        );
    }

    let thresholds = sweep.thresholds();
    let report = verification_report(&matrix, &thresholds).context("verification sweep")?;
    let cmc = cmc_curve(&matrix).context("identification ranking")?;

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let roc_path = out_dir.join("roc.csv");
    let cmc_path = out_dir.join("cmc.csv");
    write_roc_csv(&report, &roc_path)
        .with_context(|| format!("writing {}", roc_path.display()))?;
    write_cmc_csv(&cmc, &cmc_path).with_context(|| format!("writing {}", cmc_path.display()))?;
    let config = RunConfig {
        gallery_dir: gallery_dir.to_path_buf(),
        probes_dir: probes_dir.to_path_buf(),
        truth_path: truth_path.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        icp: params,
        trim_k: k,
        seed,
        sweep,
    };
    let config_path = out_dir.join("run_config.json");
    write_json(&config, &config_path)
        .with_context(|| format!("writing {}", config_path.display()))?;

    println!(
        "eer {} at threshold {} rank1 {}",
        report.eer,
        report.eer_threshold,
        cmc.rank_1()
    );
    Ok(())
}

fn cmd_synth(
    identities: usize,
    captures: usize,
    points: usize,
    noise: f64,
    crop: f64,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    eprintln!("seed: {seed}");
    let params = BenchmarkParams {
        point_count: points,
        noise_sigma: noise,
        crop_fraction: crop,
        ..BenchmarkParams::default()
    };
    let benchmark =
        build_benchmark(identities, captures, &params, seed).context("generating benchmark")?;

    let gallery_dir = out_dir.join("gallery");
    let probes_dir = out_dir.join("probes");
    fs::create_dir_all(&gallery_dir)
        .with_context(|| format!("creating {}", gallery_dir.display()))?;
    fs::create_dir_all(&probes_dir)
        .with_context(|| format!("creating {}", probes_dir.display()))?;

    for entry in &benchmark.gallery {
        let path = gallery_dir.join(format!("{}.ply", entry.identity()));
        write_cloud(entry.model(), &path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    for probe in &benchmark.probes {
        let path = probes_dir.join(format!("{}.ply", probe.label));
        write_cloud(&probe.cloud, &path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let truth_path = out_dir.join("truth.csv");
    write_truth_csv(&benchmark.truth, &truth_path)
        .with_context(|| format!("writing {}", truth_path.display()))?;

    println!(
        "wrote {} gallery models, {} probes, {}",
        benchmark.gallery.len(),
        benchmark.probes.len(),
        truth_path.display()
    );
    Ok(())
}
