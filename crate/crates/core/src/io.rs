//! File formats: ASCII PLY clouds, CSV reports, JSON transform records.

use crate::eval::{CmcCurve, VerificationReport};
use crate::geometry::{
    GeometryError, Point3, PointCloud, SimilarityTransform, TransformParts, UnitVector3, Vector3,
};
use crate::registration::{IcpParams, IcpResult};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum PropertyKind {
    /// float/double scalar.
    Float,
    /// Any other scalar type; parsed past, never interpreted.
    OtherScalar,
    /// List property: a count then that many values.
    List,
}

struct Property {
    name: String,
    kind: PropertyKind,
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads an ASCII PLY 1.0 cloud: requires float/double x, y, z on a vertex
/// element; reads nx, ny, nz as normals when all three are present; skips
/// unknown properties and non-vertex elements. Parse errors cite the
/// 1-based line number.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_error(path))?;
    parse_ply(&text, path)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_ply(text: &str, path: &Path) -> Result<PointCloud, IoError> {
    // (1-based line number, content) with trailing CR tolerated on read.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    let (_, magic) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected \"ply\""))?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, 1, format!("expected \"ply\", found {magic:?}")));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_end_line = 0usize;
    for (line_no, line) in lines.by_ref() {
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let rest: Vec<&str> = tokens.collect();
                if rest != ["ascii", "1.0"] {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("unsupported format {:?}, only \"ascii 1.0\" is supported", rest.join(" ")),
                    ));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(path, line_no, "element without a name"))?;
                let count: usize = tokens
                    .next()
                    .ok_or_else(|| parse_err(path, line_no, "element without a count"))?
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before any element"))?;
                let type_token = tokens
                    .next()
                    .ok_or_else(|| parse_err(path, line_no, "property without a type"))?;
                let (kind, name) = if type_token == "list" {
                    // list <count type> <value type> <name>
                    let _count_type = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, line_no, "list property without a count type"))?;
                    let _value_type = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, line_no, "list property without a value type"))?;
                    (PropertyKind::List, tokens.next())
                } else {
                    let kind = match type_token {
                        "float" | "float32" | "double" | "float64" => PropertyKind::Float,
                        _ => PropertyKind::OtherScalar,
                    };
                    (kind, tokens.next())
                };
                let name =
                    name.ok_or_else(|| parse_err(path, line_no, "property without a name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => {
                header_end_line = line_no;
                break;
            }
            Some(other) => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unrecognized header keyword {other:?}"),
                ));
            }
            None => {}
        }
    }
    if header_end_line == 0 {
        return Err(parse_err(path, 1, "header never terminated with end_header"));
    }
    if !saw_format {
        return Err(parse_err(path, header_end_line, "header has no format line"));
    }

    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(path, header_end_line, "no vertex element in header"))?;
    if vertex.count == 0 {
        return Err(parse_err(path, header_end_line, "vertex element declares zero vertices"));
    }
    let float_position = |name: &str| -> Option<usize> {
        vertex
            .properties
            .iter()
            .position(|p| p.name == name && p.kind == PropertyKind::Float)
    };
    for coord in ["x", "y", "z"] {
        if float_position(coord).is_none() {
            return Err(parse_err(
                path,
                header_end_line,
                format!("vertex element has no float property {coord:?}"),
            ));
        }
    }
    let normal_positions: Option<[usize; 3]> =
        match (float_position("nx"), float_position("ny"), float_position("nz")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };

    let mut points: Vec<Point3> = Vec::new();
    let mut raw_normals: Vec<Vector3> = Vec::new();
    for element in &elements {
        let is_vertex = element.name == "vertex";
        for _ in 0..element.count {
            let (line_no, line) = lines.next().ok_or_else(|| {
                parse_err(
                    path,
                    header_end_line,
                    format!("file ends before all {} rows of element {:?}", element.count, element.name),
                )
            })?;
            if !is_vertex {
                continue;
            }
            let values =
                parse_vertex_row(line, &element.properties, path, line_no)?;
            let coord = |name: &str| values[float_position(name).expect("checked above")];
            let p = Point3::new(coord("x"), coord("y"), coord("z"));
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(parse_err(path, line_no, "non-finite vertex coordinate"));
            }
            points.push(p);
            if let Some([a, b, c]) = normal_positions {
                let n = Vector3::new(values[a], values[b], values[c]);
                if !(n.x.is_finite() && n.y.is_finite() && n.z.is_finite()) {
                    return Err(parse_err(path, line_no, "non-finite normal component"));
                }
                raw_normals.push(n);
            }
        }
    }

    if normal_positions.is_some() {
        // A zero-length normal can't be normalized; rather than leave a hole
        // in the index alignment, drop normals for the whole cloud.
        let mut normals = Vec::with_capacity(raw_normals.len());
        let mut dropped = false;
        for n in &raw_normals {
            match UnitVector3::try_new(*n, 1e-12) {
                Some(unit) => normals.push(unit),
                None => {
                    dropped = true;
                    break;
                }
            }
        }
        if !dropped {
            return Ok(PointCloud::with_normals(points, normals)?);
        }
    }
    Ok(PointCloud::new(points)?)
}

/// Parses one vertex data row into one f64 per scalar property (lists are
/// consumed and yield NaN placeholders; they are never x/y/z/normals because
/// those must be float scalars).
fn parse_vertex_row(
    line: &str,
    properties: &[Property],
    path: &Path,
    line_no: usize,
) -> Result<Vec<f64>, IoError> {
    let mut tokens = line.split_whitespace();
    let mut values = Vec::with_capacity(properties.len());
    for property in properties {
        match property.kind {
            PropertyKind::Float | PropertyKind::OtherScalar => {
                let token = tokens.next().ok_or_else(|| {
                    parse_err(
                        path,
                        line_no,
                        format!("missing value for property {:?}", property.name),
                    )
                })?;
                let value: f64 = token.parse().map_err(|_| {
                    parse_err(
                        path,
                        line_no,
                        format!("property {:?} has non-numeric value {token:?}", property.name),
                    )
                })?;
                values.push(value);
            }
            PropertyKind::List => {
                let count_token = tokens.next().ok_or_else(|| {
                    parse_err(
                        path,
                        line_no,
                        format!("missing count for list property {:?}", property.name),
                    )
                })?;
                let count: usize = count_token.parse().map_err(|_| {
                    parse_err(
                        path,
                        line_no,
                        format!("list property {:?} has non-integer count {count_token:?}", property.name),
                    )
                })?;
                for _ in 0..count {
                    tokens.next().ok_or_else(|| {
                        parse_err(
                            path,
                            line_no,
                            format!("list property {:?} shorter than its count", property.name),
                        )
                    })?;
                }
                values.push(f64::NAN);
            }
        }
    }
    if tokens.next().is_some() {
        return Err(parse_err(path, line_no, "more values than declared properties"));
    }
    Ok(values)
}

/// Writes an ASCII PLY 1.0 cloud with LF line endings and 9-significant-digit
/// scientific notation, enough to round-trip f32-precision data and keep
/// files byte-stable across runs.
pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(file_error(path))?;
    let mut w = BufWriter::new(file);
    let normals = cloud.normals();

    let mut header = String::new();
    header.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(file_error(path))?;

    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = String::new();
        let _ = write!(row, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z);
        if let Some(normals) = normals {
            let n = normals[i].as_ref();
            let _ = write!(row, " {:.8e} {:.8e} {:.8e}", n.x, n.y, n.z);
        }
        row.push('\n');
        w.write_all(row.as_bytes()).map_err(file_error(path))?;
    }
    w.flush().map_err(file_error(path))
}

/// Alignment output: the transform plus the settings that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformRecord {
    #[serde(flatten)]
    pub transform: TransformParts,
    pub final_error: f64,
    pub per_iteration_error: Vec<f64>,
    pub correspondences_used: Vec<usize>,
    pub seed: u64,
}

impl TransformRecord {
    pub fn from_result(result: &IcpResult, seed: u64) -> Self {
        Self {
            transform: TransformParts::from(&result.transform),
            final_error: result.final_error,
            per_iteration_error: result.per_iteration_error.clone(),
            correspondences_used: result.correspondences_used.clone(),
            seed,
        }
    }

    pub fn to_transform(&self) -> Result<SimilarityTransform, GeometryError> {
        self.transform.to_transform()
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(file_error(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_error(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Threshold sweep specification: `count` evenly spaced values over
/// [min, max] inclusive.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl SweepSpec {
    pub fn thresholds(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Everything needed to reproduce an evaluation run; written next to its
/// outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub gallery_dir: PathBuf,
    pub probes_dir: PathBuf,
    pub truth_path: PathBuf,
    pub out_dir: PathBuf,
    pub icp: IcpParams,
    pub trim_k: f64,
    pub seed: u64,
    pub sweep: SweepSpec,
}

/// roc.csv: one row per threshold.
pub fn write_roc_csv(report: &VerificationReport, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = String::from("theta,far,frr\n");
    for i in 0..report.thresholds.len() {
        let _ = writeln!(
            text,
            "{},{},{}",
            report.thresholds[i], report.far[i], report.frr[i]
        );
    }
    fs::write(path, text).map_err(file_error(path))
}

/// cmc.csv: one row per rank.
pub fn write_cmc_csv(cmc: &CmcCurve, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = String::from("rank,rate\n");
    for (i, rate) in cmc.rank_rates.iter().enumerate() {
        let _ = writeln!(text, "{},{}", i + 1, rate);
    }
    fs::write(path, text).map_err(file_error(path))
}

/// truth.csv: probe label to identity, one row per probe.
pub fn write_truth_csv(truth: &[(String, String)], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = String::from("probe_id,identity\n");
    for (probe, identity) in truth {
        let _ = writeln!(text, "{probe},{identity}");
    }
    fs::write(path, text).map_err(file_error(path))
}

/// Reads a truth CSV (with or without the header row).
pub fn read_truth_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_error(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if i == 0 && line == "probe_id,identity" {
            continue;
        }
        let (probe, identity) = line.split_once(',').ok_or_else(|| {
            parse_err(path, i + 1, "expected \"probe_id,identity\"")
        })?;
        if probe.is_empty() || identity.is_empty() {
            return Err(parse_err(path, i + 1, "empty probe id or identity"));
        }
        rows.push((probe.trim().to_string(), identity.trim().to_string()));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "truth file has no rows"));
    }
    Ok(rows)
}
