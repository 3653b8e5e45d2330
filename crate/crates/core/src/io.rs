//! On-disk formats: posterior sets and fingerprints as a JSON manifest plus
//! raw little-endian payloads, label and membership CSVs, matrix and trace
//! CSVs, and JSON reports.
//!
//! The layout is described byte for byte in `FORMATS.md` at the repository root.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelRef, OpticsResult, SimilarityMatrix};
use crate::clustering::{DiscreteSoftClustering, HardClustering};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::posterior::{PosteriorSet, SampleIds, SpaceId};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MEANS_FILE: &str = "means.bin";
pub const STDDEVS_FILE: &str = "stddevs.bin";
pub const BC_FILE: &str = "bc.bin";
pub const KIND_POSTERIOR_SET: &str = "posterior_set";
pub const KIND_FINGERPRINT: &str = "fingerprint";

/// Absolute tolerance for symmetry, diagonal and range checks when reading fingerprints.
pub const FINGERPRINT_TOLERANCE: f64 = 1e-6;

/// Element encoding of a binary payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub kind: String,
    pub n: usize,
    /// Latent dimension; posterior sets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub sample_ids: Vec<String>,
    pub space_id: SpaceId,
    pub dtype: Dtype,
    /// Payload role (`means`, `stddevs`, `bc`) to file name, relative to the manifest.
    pub payload: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    fn payload_path(&self, dir: &Path, role: &str) -> Result<PathBuf> {
        self.payload
            .get(role)
            .map(|f| dir.join(f))
            .ok_or_else(|| Error::InvalidInput(format!("manifest lists no {role:?} payload")))
    }
}

/// Reads and version-checks a manifest. The version is checked before the
/// rest of the schema so that newer layouts report a version mismatch.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = match raw.get("format_version") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => String::new(),
    };
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version });
    }
    Ok(serde_json::from_value(raw)?)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_json(manifest, dir.join(MANIFEST_FILE))
}

fn expect_kind(m: &Manifest, kind: &str) -> Result<()> {
    if m.kind != kind {
        return Err(Error::WrongKind {
            expected: kind.into(),
            found: m.kind.clone(),
        });
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::F32Le => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64Le => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn write_payload(path: &Path, values: &[f64], dtype: Dtype) -> Result<()> {
    fs::write(path, encode(values, dtype)).map_err(|e| Error::io(path, e))
}

fn read_payload(path: &Path, count: usize, dtype: Dtype) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (count * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            file: path.display().to_string(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(match dtype {
        Dtype::F32Le => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::F64Le => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    })
}

fn check_counts(m: &Manifest) -> Result<()> {
    if m.sample_ids.len() != m.n {
        return Err(Error::DimensionMismatch {
            expected: m.n,
            found: m.sample_ids.len(),
        });
    }
    Ok(())
}

/// Writes `manifest.json`, `means.bin` and `stddevs.bin` (f64le) into `dir`.
pub fn write_posterior_set(set: &PosteriorSet, dir: impl AsRef<Path>) -> Result<()> {
    write_posterior_set_with(set, dir, Dtype::F64Le, BTreeMap::new())
}

pub fn write_posterior_set_with(
    set: &PosteriorSet,
    dir: impl AsRef<Path>,
    dtype: Dtype,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        kind: KIND_POSTERIOR_SET.into(),
        n: set.len(),
        d: Some(set.dim()),
        sample_ids: set.sample_ids().as_slice().to_vec(),
        space_id: set.space_id().clone(),
        dtype,
        payload: BTreeMap::from([
            ("means".to_string(), MEANS_FILE.to_string()),
            ("stddevs".to_string(), STDDEVS_FILE.to_string()),
        ]),
        metadata,
    };
    write_payload(&dir.join(MEANS_FILE), set.means().as_slice().expect("standard layout"), dtype)?;
    write_payload(&dir.join(STDDEVS_FILE), set.stddevs().as_slice().expect("standard layout"), dtype)?;
    write_manifest(dir, &manifest)
}

pub fn read_posterior_set(dir: impl AsRef<Path>) -> Result<PosteriorSet> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    expect_kind(&m, KIND_POSTERIOR_SET)?;
    check_counts(&m)?;
    let d = m
        .d
        .ok_or_else(|| Error::InvalidInput("posterior set manifest lacks \"d\"".into()))?;
    let means = read_payload(&m.payload_path(dir, "means")?, m.n * d, m.dtype)?;
    let stddevs = read_payload(&m.payload_path(dir, "stddevs")?, m.n * d, m.dtype)?;
    let shape = (m.n, d);
    PosteriorSet::new(
        Array2::from_shape_vec(shape, means).expect("length checked"),
        Array2::from_shape_vec(shape, stddevs).expect("length checked"),
        SampleIds::new(m.sample_ids)?,
        m.space_id,
    )
}

/// Writes `manifest.json` and `bc.bin` into `dir`.
pub fn write_fingerprint(fp: &Fingerprint, dir: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        kind: KIND_FINGERPRINT.into(),
        n: fp.len(),
        d: None,
        sample_ids: fp.sample_ids().as_slice().to_vec(),
        space_id: fp.space_id().clone(),
        dtype,
        payload: BTreeMap::from([("bc".to_string(), BC_FILE.to_string())]),
        metadata: BTreeMap::new(),
    };
    write_payload(&dir.join(BC_FILE), fp.as_slice(), dtype)?;
    write_manifest(dir, &manifest)
}

/// Reads a fingerprint, checking symmetry, unit diagonal and range within
/// [`FINGERPRINT_TOLERANCE`]. Deviations inside the tolerance are snapped
/// (pairs averaged, diagonal set to 1, range clamped). With `repair`, larger
/// asymmetries and diagonal deviations are corrected the same way instead of
/// failing.
pub fn read_fingerprint(dir: impl AsRef<Path>, repair: bool) -> Result<Fingerprint> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    expect_kind(&m, KIND_FINGERPRINT)?;
    check_counts(&m)?;
    let n = m.n;
    let mut v = read_payload(&m.payload_path(dir, "bc")?, n * n, m.dtype)?;
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "bc".into(),
            index,
        });
    }
    let tol = FINGERPRINT_TOLERANCE;
    for i in 0..n {
        let d = v[i * n + i];
        if (d - 1.0).abs() > tol && !repair {
            return Err(Error::DiagonalDeviation { i, value: d });
        }
        v[i * n + i] = 1.0;
        for j in i + 1..n {
            let (a, b) = (v[i * n + j], v[j * n + i]);
            if (a - b).abs() > tol && !repair {
                return Err(Error::Asymmetric { i, j, a, b });
            }
            let s = if a == b { a } else { 0.5 * (a + b) };
            if !(-tol..=1.0 + tol).contains(&s) {
                return Err(Error::OutOfUnitInterval { i, j, value: s });
            }
            let s = s.clamp(0.0, 1.0);
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
    }
    Fingerprint::new(
        Array2::from_shape_vec((n, n), v).expect("length checked"),
        SampleIds::new(m.sample_ids)?,
        m.space_id,
    )
}

/// Subdirectories of `dir` holding a manifest, sorted by name.
pub fn artifact_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every posterior set under `dir`, in sorted subdirectory order.
pub fn read_posterior_ensemble(dir: impl AsRef<Path>) -> Result<Vec<PosteriorSet>> {
    artifact_dirs(dir)?.iter().map(read_posterior_set).collect()
}

/// Every fingerprint under `dir`, in sorted subdirectory order.
pub fn read_fingerprint_ensemble(dir: impl AsRef<Path>, repair: bool) -> Result<Vec<Fingerprint>> {
    artifact_dirs(dir)?.iter().map(|p| read_fingerprint(p, repair)).collect()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

/// Rows of `(sample_id, values...)`, checked for duplicate ids and, against
/// `reference`, reordered to the reference order with missing ids rejected.
fn keyed_rows(
    rows: Vec<(String, Vec<String>)>,
    reference: Option<&SampleIds>,
) -> Result<(SampleIds, Vec<Vec<String>>)> {
    let mut index = HashMap::with_capacity(rows.len());
    for (k, (id, _)) in rows.iter().enumerate() {
        if index.insert(id.clone(), k).is_some() {
            return Err(Error::DuplicateSampleId(id.clone()));
        }
    }
    match reference {
        None => {
            let ids = SampleIds::new(rows.iter().map(|(id, _)| id.clone()))?;
            Ok((ids, rows.into_iter().map(|(_, v)| v).collect()))
        }
        Some(reference) => {
            let mut slots: Vec<Option<Vec<String>>> = rows.into_iter().map(|(_, v)| Some(v)).collect();
            let mut out = Vec::with_capacity(reference.len());
            for id in reference.iter() {
                let k = *index.get(id).ok_or_else(|| Error::MissingSampleId(id.to_string()))?;
                out.push(slots[k].take().expect("ids are unique"));
            }
            Ok((reference.clone(), out))
        }
    }
}

fn check_header(headers: &csv::StringRecord, path: &Path, first: &[&str]) -> Result<()> {
    let ok = headers.len() >= first.len() && first.iter().zip(headers.iter()).all(|(a, b)| *a == b);
    if !ok {
        return Err(Error::InvalidInput(format!(
            "{}: header must start with {}",
            path.display(),
            first.join(",")
        )));
    }
    Ok(())
}

fn densify(values: impl IntoIterator<Item = String>) -> Result<HardClustering> {
    let mut dense: HashMap<String, usize> = HashMap::new();
    let labels: Vec<usize> = values
        .into_iter()
        .map(|v| {
            let next = dense.len();
            *dense.entry(v).or_insert(next)
        })
        .collect();
    let k = dense.len();
    HardClustering::new(labels, k)
}

fn read_keyed_csv(
    path: &Path,
    first: &[&str],
    reference: Option<&SampleIds>,
) -> Result<(Vec<String>, SampleIds, Vec<Vec<String>>)> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    check_header(&headers, path, first)?;
    if headers.len() < 2 {
        return Err(Error::InvalidInput(format!("{}: no value columns", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((rec[0].to_string(), rec.iter().skip(1).map(str::to_string).collect()));
    }
    let (ids, rows) = keyed_rows(rows, reference)?;
    Ok((headers.iter().skip(1).map(str::to_string).collect(), ids, rows))
}

/// Reads a `sample_id,label` CSV. Labels are arbitrary strings, densified to
/// `0..K` in order of first appearance. With a `reference`, rows are taken in
/// reference order (densification follows that order) and ids absent from the
/// file are an error; ids not in the reference are ignored.
pub fn read_hard_labels(path: impl AsRef<Path>, reference: Option<&SampleIds>) -> Result<(SampleIds, HardClustering)> {
    let (_, ids, rows) = read_keyed_csv(path.as_ref(), &["sample_id", "label"], reference)?;
    let labels = densify(rows.into_iter().map(|mut r| r.swap_remove(0)))?;
    Ok((ids, labels))
}

/// Reads a `sample_id,<factor>,...` CSV with one label column per factor,
/// each densified as in [`read_hard_labels`].
pub fn read_factor_table(
    path: impl AsRef<Path>,
    reference: Option<&SampleIds>,
) -> Result<(SampleIds, Vec<(String, HardClustering)>)> {
    let (names, ids, rows) = read_keyed_csv(path.as_ref(), &["sample_id"], reference)?;
    let factors = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| Ok((name, densify(rows.iter().map(|r| r[c].clone()))?)))
        .collect::<Result<_>>()?;
    Ok((ids, factors))
}

/// Reads the first value column of a `sample_id,<name>` CSV as numbers.
pub fn read_scalar_column(path: impl AsRef<Path>, reference: Option<&SampleIds>) -> Result<(SampleIds, Vec<f64>)> {
    let (_, ids, rows) = read_keyed_csv(path.as_ref(), &["sample_id"], reference)?;
    let values = rows.iter().map(|r| parse_value(&r[0])).collect::<Result<_>>()?;
    Ok((ids, values))
}

/// Writes a `sample_id,<name>` CSV.
pub fn write_scalar_column(ids: &SampleIds, name: &str, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: values.len(),
        });
    }
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", name])?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id, &format_value(*v)])?;
    }
    flush(w, path)
}

/// Reads a `sample_id,<cluster>,...` CSV of membership probabilities.
pub fn read_memberships(
    path: impl AsRef<Path>,
    reference: Option<&SampleIds>,
) -> Result<(SampleIds, DiscreteSoftClustering)> {
    let path = path.as_ref();
    let (names, ids, rows) = read_keyed_csv(path, &["sample_id"], reference)?;
    let k = names.len();
    let mut flat = Vec::with_capacity(rows.len() * k);
    for (r, row) in rows.iter().enumerate() {
        for cell in row {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{}: row {r}: bad number {cell:?}", path.display())))?;
            flat.push(v);
        }
    }
    let m = Array2::from_shape_vec((rows.len(), k), flat).expect("rows have k cells");
    Ok((ids, DiscreteSoftClustering::new(m)?))
}

/// Writes a `sample_id,label` CSV.
pub fn write_hard_labels(ids: &SampleIds, labels: &HardClustering, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: labels.len(),
        });
    }
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "label"])?;
    for (id, l) in ids.iter().zip(labels.labels()) {
        w.write_record([id, &l.to_string()])?;
    }
    flush(w, path)
}

/// Formats a number for CSV and JSON output: `NaN` is `undefined`, infinities
/// are `inf` and `-inf`, finite values use the shortest round-trip form.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "undefined".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Inverse of [`format_value`].
pub fn parse_value(s: &str) -> Result<f64> {
    match s {
        "undefined" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::InvalidInput(format!("bad number {s:?}"))),
    }
}

/// Matrix with a header row `ref,<label>...` and one row per label.
pub fn write_labeled_matrix_csv(labels: &[String], values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if values.dim() != (labels.len(), labels.len()) {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: values.nrows(),
        });
    }
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("ref").chain(labels.iter().map(String::as_str)))?;
    for (label, row) in labels.iter().zip(values.rows()) {
        w.write_record(std::iter::once(label.clone()).chain(row.iter().map(|&v| format_value(v))))?;
    }
    flush(w, path)
}

pub fn export_matrix_csv(matrix: &SimilarityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let labels: Vec<String> = matrix.refs.iter().map(ChannelRef::to_string).collect();
    write_labeled_matrix_csv(&labels, &matrix.values, path)
}

/// Reads a matrix written by [`write_labeled_matrix_csv`].
pub fn read_labeled_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    check_header(&headers, path, &["ref"])?;
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let m = labels.len();
    let mut flat = Vec::with_capacity(m * m);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != m + 1 || rec[0] != labels[rows.min(m.saturating_sub(1))] {
            return Err(Error::InvalidInput(format!("{}: malformed row {rows}", path.display())));
        }
        for cell in rec.iter().skip(1) {
            flat.push(parse_value(cell)?);
        }
        rows += 1;
    }
    if rows != m {
        return Err(Error::DimensionMismatch { expected: m, found: rows });
    }
    Ok((labels, Array2::from_shape_vec((m, m), flat).expect("m rows of m")))
}

/// One row per position of the OPTICS ordering:
/// `position,index,ref,reachability,core_distance,predecessor,group`.
/// Unreached points carry `inf`; noise and missing predecessors are empty.
pub fn write_optics_csv(result: &OpticsResult, refs: &[ChannelRef], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels = result.labels();
    let mut w = csv_writer(path)?;
    w.write_record([
        "position",
        "index",
        "ref",
        "reachability",
        "core_distance",
        "predecessor",
        "group",
    ])?;
    for (pos, &p) in result.ordering.iter().enumerate() {
        w.write_record([
            pos.to_string(),
            p.to_string(),
            refs.get(p).map(ToString::to_string).unwrap_or_default(),
            format_value(result.reachability[p]),
            format_value(result.core_distances[p]),
            result.predecessor[p].map(|q| q.to_string()).unwrap_or_default(),
            labels[p].map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    flush(w, path)
}

/// `step,objective`, one row per trace entry.
pub fn write_trace_csv(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["step", "objective"])?;
    for (s, v) in trace.iter().enumerate() {
        w.write_record([s.to_string(), format_value(*v)])?;
    }
    flush(w, path)
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(rdr.headers()?, path, &["step", "objective"])?;
    rdr.records().map(|r| parse_value(&r?[1])).collect()
}

/// Pretty-printed JSON, creating parent directories as needed.
pub fn write_json<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn export_json<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Serde adapter for `f64` fields that may be undefined or infinite: finite
/// values are JSON numbers, `NaN` is `"undefined"`, infinities are `"inf"`
/// and `"-inf"`.
pub mod sentinel {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_value(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => super::parse_value(&t).map_err(D::Error::custom),
        }
    }

    /// The same encoding for a sequence.
    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(Deserialize)]
        struct Item(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            #[derive(serde::Serialize)]
            struct Ref<'a>(#[serde(with = "super")] &'a f64);
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Ref(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Item>::deserialize(d)?.into_iter().map(|i| i.0).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::fingerprint_gaussian;
    use crate::similarity::Measure;
    use proptest::prelude::*;

    fn set(n: usize, d: usize) -> PosteriorSet {
        let means = Array2::from_shape_fn((n, d), |(i, k)| (i as f64 * 0.37 - k as f64).sin() * 3.0);
        let std = Array2::from_shape_fn((n, d), |(i, k)| 0.1 + ((i * 7 + k) % 5) as f64 * 0.3);
        PosteriorSet::new(
            means,
            std,
            SampleIds::new((0..n).map(|i| format!("img{i}"))).unwrap(),
            SpaceId::new("m").with_channel(1),
        )
        .unwrap()
    }

    #[test]
    fn posterior_set_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(13, 3);
        write_posterior_set(&s, dir.path()).unwrap();
        assert_eq!(read_posterior_set(dir.path()).unwrap(), s);
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!((m.n, m.d, m.dtype), (13, Some(3), Dtype::F64Le));
        assert_eq!(fs::metadata(dir.path().join(MEANS_FILE)).unwrap().len(), 13 * 3 * 8);
    }

    #[test]
    fn posterior_set_f32_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(5, 2);
        write_posterior_set_with(&s, dir.path(), Dtype::F32Le, BTreeMap::new()).unwrap();
        let r = read_posterior_set(dir.path()).unwrap();
        for (a, b) in r.means().iter().zip(s.means()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn truncated_payload_is_a_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_posterior_set(&set(4, 2), dir.path()).unwrap();
        let p = dir.path().join(STDDEVS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let e = read_posterior_set(dir.path()).unwrap_err();
        assert!(matches!(e, Error::SizeMismatch { expected: 64, found: 61, .. }), "{e}");
    }

    #[test]
    fn zero_stddev_names_its_index() {
        let dir = tempfile::tempdir().unwrap();
        write_posterior_set(&set(4, 2), dir.path()).unwrap();
        let p = dir.path().join(STDDEVS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[5 * 8..6 * 8].copy_from_slice(&0.0f64.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let e = read_posterior_set(dir.path()).unwrap_err();
        assert!(matches!(e, Error::NonPositiveStddev { index: 5, row: 2, dim: 1, .. }), "{e}");
        assert!(e.to_string().contains("index 5"));
    }

    #[test]
    fn non_finite_mean_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_posterior_set(&set(4, 2), dir.path()).unwrap();
        let p = dir.path().join(MEANS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[..8].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_posterior_set(dir.path()), Err(Error::NonFinite { index: 0, .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_posterior_set(&set(4, 2), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"format_version\": \"1\"", "\"format_version\": \"2\"");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_posterior_set(dir.path()), Err(Error::VersionMismatch { found }) if found == "2"));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_posterior_set(&set(4, 2), dir.path()).unwrap();
        assert!(matches!(read_fingerprint(dir.path(), false), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn fingerprint_round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let fp = fingerprint_gaussian(&set(20, 2));
        write_fingerprint(&fp, dir.path(), Dtype::F32Le).unwrap();
        let r = read_fingerprint(dir.path(), false).unwrap();
        assert_eq!(r.sample_ids(), fp.sample_ids());
        assert_eq!(r.space_id(), fp.space_id());
        for (a, b) in r.values().iter().zip(fp.values()) {
            assert!((a - b).abs() <= f32::EPSILON as f64 * 0.5 * b.abs().max(f32::MIN_POSITIVE as f64));
        }
        write_fingerprint(&fp, dir.path(), Dtype::F64Le).unwrap();
        assert_eq!(read_fingerprint(dir.path(), false).unwrap().values(), fp.values());
    }

    #[test]
    fn fingerprint_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        write_fingerprint(&Fingerprint::identity(1000), dir.path(), Dtype::F32Le).unwrap();
        assert_eq!(fs::metadata(dir.path().join(BC_FILE)).unwrap().len(), 4_000_000);
    }

    fn corrupt(dir: &Path, n: usize, i: usize, j: usize, v: f32) {
        let p = dir.join(BC_FILE);
        let mut bytes = fs::read(&p).unwrap();
        let k = (i * n + j) * 4;
        bytes[k..k + 4].copy_from_slice(&v.to_le_bytes());
        fs::write(&p, bytes).unwrap();
    }

    #[test]
    fn asymmetric_fingerprint_needs_repair_flag() {
        let dir = tempfile::tempdir().unwrap();
        let fp = fingerprint_gaussian(&set(6, 1));
        write_fingerprint(&fp, dir.path(), Dtype::F32Le).unwrap();
        let orig = fp.get(1, 4) as f32;
        corrupt(dir.path(), 6, 1, 4, orig + 0.01);
        assert!(matches!(read_fingerprint(dir.path(), false), Err(Error::Asymmetric { i: 1, j: 4, .. })));
        let r = read_fingerprint(dir.path(), true).unwrap();
        let want = 0.5 * ((orig + 0.01) as f64 + orig as f64);
        assert_eq!(r.get(1, 4), want);
        assert_eq!(r.get(4, 1), want);
    }

    #[test]
    fn small_asymmetry_is_snapped() {
        let dir = tempfile::tempdir().unwrap();
        let fp = fingerprint_gaussian(&set(6, 1));
        write_fingerprint(&fp, dir.path(), Dtype::F32Le).unwrap();
        corrupt(dir.path(), 6, 2, 3, fp.get(2, 3) as f32 + 4e-7);
        let r = read_fingerprint(dir.path(), false).unwrap();
        assert_eq!(r.get(2, 3), r.get(3, 2));
    }

    #[test]
    fn diagonal_deviation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fingerprint(&Fingerprint::identity(4), dir.path(), Dtype::F32Le).unwrap();
        corrupt(dir.path(), 4, 2, 2, 0.9);
        assert!(matches!(read_fingerprint(dir.path(), false), Err(Error::DiagonalDeviation { i: 2, .. })));
        assert_eq!(read_fingerprint(dir.path(), true).unwrap().get(2, 2), 1.0);
    }

    #[test]
    fn out_of_range_is_rejected_even_with_repair() {
        let dir = tempfile::tempdir().unwrap();
        write_fingerprint(&Fingerprint::identity(3), dir.path(), Dtype::F32Le).unwrap();
        corrupt(dir.path(), 3, 0, 1, 1.5);
        corrupt(dir.path(), 3, 1, 0, 1.5);
        assert!(matches!(read_fingerprint(dir.path(), true), Err(Error::OutOfUnitInterval { .. })));
    }

    fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn hard_labels_densify_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "l.csv", "sample_id,label\ns0,a\ns1,a\ns2,b\ns3,b\n");
        let (ids, h) = read_hard_labels(&p, None).unwrap();
        assert_eq!(h.labels(), &[0, 0, 1, 1]);
        assert_eq!(ids.as_slice(), &["s0", "s1", "s2", "s3"]);
        let p = write_file(dir.path(), "z.csv", "sample_id,label\n0,z\n1,y\n2,z\n");
        assert_eq!(read_hard_labels(&p, None).unwrap().1.labels(), &[0, 1, 0]);
    }

    #[test]
    fn hard_labels_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "d.csv", "sample_id,label\n0,a\n0,b\n");
        assert!(matches!(read_hard_labels(&p, None), Err(Error::DuplicateSampleId(id)) if id == "0"));
        let p = write_file(dir.path(), "m.csv", "sample_id,label\n0,a\n1,b\n");
        let reference = SampleIds::range(3);
        assert!(matches!(read_hard_labels(&p, Some(&reference)), Err(Error::MissingSampleId(id)) if id == "2"));
        let p = write_file(dir.path(), "h.csv", "id,label\n0,a\n");
        assert!(matches!(read_hard_labels(&p, None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn hard_labels_follow_reference_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "l.csv", "sample_id,label\nc,x\nb,y\na,x\nextra,q\n");
        let reference = SampleIds::new(["a", "b", "c"]).unwrap();
        let (ids, h) = read_hard_labels(&p, Some(&reference)).unwrap();
        assert_eq!(ids, reference);
        assert_eq!(h.labels(), &[0, 1, 0]);
        assert_eq!(h.k(), 2);
    }

    #[test]
    fn factor_table_and_scalar_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "f.csv", "sample_id,shape,size\na,sq,1\nb,ci,1\nc,sq,2\n");
        let (_, f) = read_factor_table(&p, None).unwrap();
        assert_eq!(f[0].0, "shape");
        assert_eq!(f[0].1.labels(), &[0, 1, 0]);
        assert_eq!(f[1].1.labels(), &[0, 0, 1]);
        let ids = SampleIds::new(["x", "y"]).unwrap();
        let p = dir.path().join("a.csv");
        write_scalar_column(&ids, "angle", &[0.5, f64::INFINITY], &p).unwrap();
        let (back, v) = read_scalar_column(&p, None).unwrap();
        assert_eq!(back, ids);
        assert_eq!(v, [0.5, f64::INFINITY]);
    }

    #[test]
    fn memberships_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "m.csv", "sample_id,c0,c1\na,0.25,0.75\nb,1,0\n");
        let (ids, m) = read_memberships(&p, None).unwrap();
        assert_eq!(ids.as_slice(), &["a", "b"]);
        assert_eq!(m.memberships()[[0, 1]], 0.75);
        let p = write_file(dir.path(), "bad.csv", "sample_id,c0,c1\na,0.5,0.4\n");
        assert!(read_memberships(&p, None).is_err());
    }

    #[test]
    fn two_by_two_matrix_csv() {
        let dir = tempfile::tempdir().unwrap();
        let matrix = SimilarityMatrix {
            values: ndarray::array![[1.0, f64::NAN], [f64::NAN, 1.0]],
            refs: vec![
                ChannelRef {
                    model_id: "a".into(),
                    dim: 0,
                },
                ChannelRef {
                    model_id: "b".into(),
                    dim: 3,
                },
            ],
            measure: Measure::Nmi,
            is_distance: false,
        };
        let p = dir.path().join("sim.csv");
        export_matrix_csv(&matrix, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "ref,a/ch0,b/ch3\na/ch0,1,undefined\nb/ch3,undefined,1\n");
        let (labels, v) = read_labeled_matrix_csv(&p).unwrap();
        assert_eq!(labels, ["a/ch0", "b/ch3"]);
        assert!(v[[0, 1]].is_nan() && v[[1, 1]] == 1.0);
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Report {
        #[serde(with = "sentinel")]
        value: f64,
        #[serde(with = "sentinel::vec")]
        reach: Vec<f64>,
    }

    #[test]
    fn json_sentinels() {
        let r = Report {
            value: f64::NAN,
            reach: vec![f64::INFINITY, 0.5],
        };
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(text, r#"{"value":"undefined","reach":["inf",0.5]}"#);
        let back: Report = serde_json::from_str(&text).unwrap();
        assert!(back.value.is_nan());
        assert_eq!(back.reach, r.reach);
    }

    #[test]
    fn json_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = Report {
            value: 0.125,
            reach: vec![1.5, f64::INFINITY],
        };
        let p = dir.path().join("r.json");
        export_json(&r, &p).unwrap();
        assert_eq!(read_json::<Report>(&p).unwrap(), r);
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let trace = vec![0.1, 0.2, 1.0 / 3.0];
        write_trace_csv(&trace, &p).unwrap();
        assert_eq!(read_trace_csv(&p).unwrap(), trace);
    }

    #[test]
    fn ensemble_dirs_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b", "a", "c"] {
            let s = set(4, 1).with_space_id(SpaceId::new(name));
            write_posterior_set(&s, dir.path().join(name)).unwrap();
        }
        fs::create_dir(dir.path().join("empty")).unwrap();
        let sets = read_posterior_ensemble(dir.path()).unwrap();
        let names: Vec<_> = sets.iter().map(|s| s.space_id().model.clone()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    proptest! {
        #[test]
        fn value_format_round_trips(v in prop::num::f64::ANY) {
            let back = parse_value(&format_value(v)).unwrap();
            prop_assert!(back == v || (back.is_nan() && v.is_nan()));
        }
    }
}
