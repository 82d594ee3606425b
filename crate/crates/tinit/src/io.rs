//! Binary containers and report writers.
//!
//! Matrix files carry magic "MTRX", a one-byte precision tag (4 or 8), u32
//! rows and cols, then the little-endian row-major payload; a chain file is
//! a sequence of such records (weight, then bias as a 1 x n matrix, per
//! layer) with a JSON sidecar at `<path>.json` recording how the chain was
//! built. Label maps use "SPXL" (u32 h, w, then u32 ids) and logit tensors
//! "LGTS" (u32 n_labels, h, w, then f32 planes). Reports are CSV with
//! schema/version/config comment lines, or JSON with the same fields
//! embedded, and identical inputs produce byte-identical files.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::affine::{AffineTransform, ChainSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::sparse::{LabelMap, LogitTensor};

/// Version stamp embedded in every report.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema version stamped on report files.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const MATRIX_MAGIC: &[u8; 4] = b"MTRX";
const LABEL_MAGIC: &[u8; 4] = b"SPXL";
const LOGIT_MAGIC: &[u8; 4] = b"LGTS";

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad_format(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFormat {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad_format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(bad_format(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn encode_matrix<T: Scalar>(m: &Matrix<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(T::PRECISION_TAG);
    push_u32(out, m.rows() as u32);
    push_u32(out, m.cols() as u32);
    for r in 0..m.rows() {
        for &v in m.row(r) {
            v.write_le(out);
        }
    }
}

fn decode_matrix<T: Scalar>(r: &mut Reader<'_>) -> Result<Matrix<T>> {
    r.magic(MATRIX_MAGIC)?;
    let tag = r.take(1, "precision tag")?[0];
    if tag != T::PRECISION_TAG {
        return Err(bad_format(
            r.path,
            format!("precision tag {tag}, expected {}", T::PRECISION_TAG),
        ));
    }
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let width = T::PRECISION_TAG as usize;
    let payload = r.take(rows * cols * width, "matrix payload")?;
    let data: Vec<T> = payload.chunks_exact(width).map(T::read_le).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Writes one matrix as a standalone MTRX file.
pub fn write_matrix<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let mut out = Vec::new();
    encode_matrix(m, &mut out);
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Reads a standalone MTRX file in the requested precision.
pub fn read_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let m = decode_matrix::<T>(&mut r)?;
    if !r.done() {
        return Err(bad_format(path, "trailing bytes after matrix"));
    }
    Ok(m)
}

/// Metadata stored next to a chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub spec: ChainSpec,
    pub precision: u8,
    /// Stack construction note (scheme and activation) when the records
    /// came from a widened stack rather than a bare chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    std::path::PathBuf::from(name)
}

/// Writes chain layers as consecutive MTRX records (weight then bias per
/// layer) plus the JSON sidecar at `<path>.json`.
pub fn save_chain<T: Scalar>(
    path: &Path,
    layers: &[AffineTransform<T>],
    sidecar: &ChainSidecar,
) -> Result<()> {
    let mut out = Vec::new();
    for layer in layers {
        encode_matrix(layer.weight(), &mut out);
        let bias = Matrix::from_vec(1, layer.bias().len(), layer.bias().to_vec())?;
        encode_matrix(&bias, &mut out);
    }
    fs::write(path, out).map_err(|e| io_error(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side, json).map_err(|e| io_error(&side, e))
}

/// Reads a chain file and its sidecar, validating record shapes pair up.
pub fn load_chain<T: Scalar>(path: &Path) -> Result<(Vec<AffineTransform<T>>, ChainSidecar)> {
    let side = sidecar_path(path);
    let side_bytes = fs::read(&side).map_err(|e| io_error(&side, e))?;
    let sidecar: ChainSidecar = serde_json::from_slice(&side_bytes)
        .map_err(|e| bad_format(&side, format!("sidecar JSON: {e}")))?;
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let mut layers = Vec::new();
    while !r.done() {
        let weight = decode_matrix::<T>(&mut r)?;
        let bias = decode_matrix::<T>(&mut r)?;
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(bad_format(
                path,
                format!(
                    "bias record {}x{} does not match weight cols {}",
                    bias.rows(),
                    bias.cols(),
                    weight.cols()
                ),
            ));
        }
        layers.push(AffineTransform::new(weight.clone(), bias.row(0).to_vec())?);
    }
    if layers.is_empty() {
        return Err(bad_format(path, "chain file holds no layers"));
    }
    Ok((layers, sidecar))
}

/// Writes a label map as an SPXL file.
pub fn write_label_map(path: &Path, m: &LabelMap) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(LABEL_MAGIC);
    push_u32(&mut out, m.h() as u32);
    push_u32(&mut out, m.w() as u32);
    for &id in m.ids() {
        push_u32(&mut out, id);
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Reads an SPXL label map.
pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(LABEL_MAGIC)?;
    let h = r.u32("h")? as usize;
    let w = r.u32("w")? as usize;
    let payload = r.take(h * w * 4, "label ids")?;
    if !r.done() {
        return Err(bad_format(path, "trailing bytes after label map"));
    }
    let ids = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LabelMap::new(h, w, ids)
}

/// Writes a logit tensor as an LGTS file (32-bit payload).
pub fn write_logit_tensor(path: &Path, t: &LogitTensor<f32>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(LOGIT_MAGIC);
    push_u32(&mut out, t.n_labels() as u32);
    push_u32(&mut out, t.h() as u32);
    push_u32(&mut out, t.w() as u32);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Reads an LGTS logit tensor.
pub fn read_logit_tensor(path: &Path) -> Result<LogitTensor<f32>> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(LOGIT_MAGIC)?;
    let n_labels = r.u32("n_labels")? as usize;
    let h = r.u32("h")? as usize;
    let w = r.u32("w")? as usize;
    let payload = r.take(n_labels * h * w * 4, "logit payload")?;
    if !r.done() {
        return Err(bad_format(path, "trailing bytes after logit tensor"));
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(f32::read_le).collect();
    LogitTensor::new(n_labels, h, w, data)
}

fn report_header(config_json: &str) -> String {
    format!(
        "# schema_version: {REPORT_SCHEMA_VERSION}\n# toolkit_version: {TOOLKIT_VERSION}\n# config: {config_json}\n"
    )
}

/// Writes a CSV report: three comment lines (schema version, toolkit
/// version, resolved config as one-line JSON), a header row, data rows.
pub fn write_csv_report<C: Serialize>(
    path: &Path,
    config: &C,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let config_json = serde_json::to_string(config).expect("config serializes");
    let mut text = report_header(&config_json);
    text.push_str(&columns.join(","));
    text.push('\n');
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::InvalidArgument {
                context: format!("CSV row has {} fields, expected {}", row.len(), columns.len()),
            });
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Envelope for JSON reports: schema + version + config + results.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonReport<C, R> {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config: C,
    pub results: R,
}

/// Writes a JSON report embedding the resolved config and version stamps.
pub fn write_json_report<C: Serialize, R: Serialize>(
    path: &Path,
    config: &C,
    results: &R,
) -> Result<()> {
    let report = JsonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config,
        results,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Reads back a JSON report written by `write_json_report`.
pub fn read_json_report<C: DeserializeOwned, R: DeserializeOwned>(
    path: &Path,
) -> Result<JsonReport<C, R>> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| bad_format(path, format!("report JSON: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Distribution, RngSpec};

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn matrix_round_trips_in_both_precisions() {
        let d = dir();
        let spec = RngSpec {
            seed: 11,
            distribution: Distribution::Uniform { lo: -3.0, hi: 3.0 },
        };
        let m64: Matrix<f64> = Matrix::sample(7, 5, &spec);
        let p64 = d.path().join("a.mtrx");
        write_matrix(&p64, &m64).unwrap();
        assert_eq!(read_matrix::<f64>(&p64).unwrap(), m64);

        let m32: Matrix<f32> = m64.cast();
        let p32 = d.path().join("b.mtrx");
        write_matrix(&p32, &m32).unwrap();
        assert_eq!(read_matrix::<f32>(&p32).unwrap(), m32);

        // Tag mismatch is a format error, not a silent cast.
        assert!(matches!(
            read_matrix::<f32>(&p64),
            Err(Error::BadFormat { .. })
        ));
    }

    #[test]
    fn matrix_header_layout_is_exact() {
        let d = dir();
        let m = Matrix::from_vec(1, 2, vec![1.0_f32, -2.0]).unwrap();
        let p = d.path().join("m.mtrx");
        write_matrix(&p, &m).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[0..4], b"MTRX");
        assert_eq!(bytes[4], 4);
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1.0_f32.to_le_bytes());
        assert_eq!(&bytes[17..21], &(-2.0_f32).to_le_bytes());
        assert_eq!(bytes.len(), 21);
    }

    #[test]
    fn corrupt_matrix_files_are_rejected() {
        let d = dir();
        let p = d.path().join("bad.mtrx");
        fs::write(&p, b"MTRX").unwrap();
        assert!(matches!(read_matrix::<f64>(&p), Err(Error::BadFormat { .. })));
        fs::write(&p, b"NOPE\x08\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_matrix::<f64>(&p), Err(Error::BadFormat { .. })));
        let missing = d.path().join("absent.mtrx");
        assert!(matches!(read_matrix::<f64>(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn chain_round_trips_with_sidecar() {
        let d = dir();
        let spec = ChainSpec {
            dims: vec![6, 9, 6],
            seed: 3,
            bias_variance: 1e-4,
        };
        let layers = crate::affine::build_identity_chain::<f64>(&spec).unwrap();
        let sidecar = ChainSidecar {
            spec: spec.clone(),
            precision: 8,
            activation: Some("relu".into()),
            scheme: Some("sign_split".into()),
        };
        let p = d.path().join("chain.mtrx");
        save_chain(&p, &layers, &sidecar).unwrap();
        assert!(d.path().join("chain.mtrx.json").exists());
        let (back, side_back) = load_chain::<f64>(&p).unwrap();
        assert_eq!(side_back, sidecar);
        assert_eq!(back.len(), layers.len());
        for (a, b) in back.iter().zip(&layers) {
            assert_eq!(a.weight(), b.weight());
            assert_eq!(a.bias(), b.bias());
        }
    }

    #[test]
    fn label_map_and_logits_round_trip() {
        let d = dir();
        let m = LabelMap::new(3, 2, vec![0, 1, 1, 2, 0, 2]).unwrap();
        let pm = d.path().join("m.spxl");
        write_label_map(&pm, &m).unwrap();
        assert_eq!(read_label_map(&pm).unwrap(), m);

        let t = LogitTensor::new(2, 2, 2, vec![0.5_f32, -1.0, 2.0, 0.0, 1.0, 1.5, -0.25, 3.0])
            .unwrap();
        let pt = d.path().join("t.lgts");
        write_logit_tensor(&pt, &t).unwrap();
        assert_eq!(read_logit_tensor(&pt).unwrap(), t);

        fs::write(&pm, b"SPXL\x02\x00\x00\x00").unwrap();
        assert!(matches!(read_label_map(&pm), Err(Error::BadFormat { .. })));
    }

    #[test]
    fn csv_report_carries_schema_and_config() {
        let d = dir();
        #[derive(Serialize)]
        struct Cfg {
            seed: u64,
        }
        let p = d.path().join("r.csv");
        write_csv_report(
            &p,
            &Cfg { seed: 5 },
            &["a", "b"],
            &[vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]],
        )
        .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            format!(
                "# schema_version: 1\n# toolkit_version: {TOOLKIT_VERSION}\n# config: {{\"seed\":5}}\na,b\n1,2\n3,4\n"
            )
        );
        // Mismatched row width is rejected.
        assert!(write_csv_report(&p, &Cfg { seed: 5 }, &["a"], &[vec![]]).is_err());
    }

    #[test]
    fn json_report_round_trips() {
        let d = dir();
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Cfg {
            name: String,
        }
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Res {
            value: f64,
        }
        let p = d.path().join("r.json");
        write_json_report(
            &p,
            &Cfg { name: "x".into() },
            &Res { value: 2.5 },
        )
        .unwrap();
        let back: JsonReport<Cfg, Res> = read_json_report(&p).unwrap();
        assert_eq!(back.schema_version, REPORT_SCHEMA_VERSION);
        assert_eq!(back.toolkit_version, TOOLKIT_VERSION);
        assert_eq!(back.config, Cfg { name: "x".into() });
        assert_eq!(back.results, Res { value: 2.5 });
    }

    #[test]
    fn writes_are_byte_deterministic() {
        let d = dir();
        let spec = RngSpec {
            seed: 9,
            distribution: Distribution::Normal {
                mean: 0.0,
                variance: 1.0,
            },
        };
        let m: Matrix<f64> = Matrix::sample(4, 4, &spec);
        let p1 = d.path().join("one.mtrx");
        let p2 = d.path().join("two.mtrx");
        write_matrix(&p1, &m).unwrap();
        write_matrix(&p2, &m).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }
}
