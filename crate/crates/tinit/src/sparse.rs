//! Superpixel logit consistency through a sparse membership encoder.
//!
//! The membership matrix M(s, p) in {0,1}^{Ns x Np} has exactly one entry
//! per pixel column. Encoding gathers each superpixel's mean logit per
//! label; decoding scatters the mean back to every member pixel. Their
//! composition makes all pixels of a superpixel share one logit row using
//! O(Nl Np) work instead of the dense O(Nl Ns Np).

use crate::error::{Error, Result, Warning};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// H x W grid of region or class identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != h * w {
            return Err(Error::DataLength {
                rows: h,
                cols: w,
                got: ids.len(),
            });
        }
        Ok(LabelMap { h, w, ids })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_pixels(&self) -> usize {
        self.h * self.w
    }

    /// Identifier at row-major pixel index p.
    pub fn id_at(&self, p: usize) -> u32 {
        self.ids[p]
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.ids[y * self.w + x]
    }
}

/// Compressed sparse row membership: row s lists the pixels of superpixel s
/// in ascending order; values are implicitly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMembership {
    n_superpixels: usize,
    n_pixels: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
}

impl SparseMembership {
    /// Builds membership rows from a superpixel map; ids must lie below
    /// `n_superpixels`. Rows for unused ids stay empty.
    pub fn from_label_map(map: &LabelMap, n_superpixels: usize) -> Result<Self> {
        if map.n_pixels() == 0 {
            return Err(Error::EmptyInput {
                context: "superpixel map",
            });
        }
        let n_pixels = map.n_pixels();
        let mut counts = vec![0usize; n_superpixels];
        for &id in map.ids() {
            if id as usize >= n_superpixels {
                return Err(Error::IdOutOfRange {
                    id,
                    limit: n_superpixels,
                });
            }
            counts[id as usize] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n_superpixels + 1);
        let mut acc = 0usize;
        row_offsets.push(0);
        for c in &counts {
            acc += c;
            row_offsets.push(acc);
        }
        // Fill in pixel order, so each row's indices come out ascending.
        let mut cursor: Vec<usize> = row_offsets[..n_superpixels].to_vec();
        let mut col_indices = vec![0u32; n_pixels];
        for (p, &id) in map.ids().iter().enumerate() {
            col_indices[cursor[id as usize]] = p as u32;
            cursor[id as usize] += 1;
        }
        Ok(SparseMembership {
            n_superpixels,
            n_pixels,
            row_offsets,
            col_indices,
        })
    }

    /// Convenience: infers the superpixel count as max id + 1.
    pub fn infer_from_label_map(map: &LabelMap) -> Result<Self> {
        let max_id = map.ids().iter().copied().max().ok_or(Error::EmptyInput {
            context: "superpixel map",
        })?;
        Self::from_label_map(map, max_id as usize + 1)
    }

    pub fn n_superpixels(&self) -> usize {
        self.n_superpixels
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    /// Stored entry count; exactly one per pixel.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Member pixels of superpixel s, ascending.
    pub fn row(&self, s: usize) -> &[u32] {
        &self.col_indices[self.row_offsets[s]..self.row_offsets[s + 1]]
    }
}

/// Dense class logits, label-major: entry (l, p) at l * n_pixels + p.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor<T> {
    n_labels: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> LogitTensor<T> {
    pub fn new(n_labels: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_labels * h * w {
            return Err(Error::DataLength {
                rows: n_labels,
                cols: h * w,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "logit tensor",
            });
        }
        Ok(LogitTensor { n_labels, h, w, data })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn n_pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, label: usize, pixel: usize) -> T {
        self.data[label * self.n_pixels() + pixel]
    }

    /// Logit plane of one label.
    pub fn plane(&self, label: usize) -> &[T] {
        let np = self.n_pixels();
        &self.data[label * np..(label + 1) * np]
    }

    /// Entrywise precision conversion.
    pub fn cast<U: Scalar>(&self) -> LogitTensor<U> {
        LogitTensor {
            n_labels: self.n_labels,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &LogitTensor<T>) -> Result<f64> {
        if self.n_labels != other.n_labels || self.h != other.h || self.w != other.w {
            return Err(Error::DimensionMismatch {
                context: "logit max_abs_diff",
                left: format!("{}x{}x{}", self.n_labels, self.h, self.w),
                right: format!("{}x{}x{}", other.n_labels, other.h, other.w),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |acc, (a, b)| {
                acc.max((a.to_f64() - b.to_f64()).abs())
            }))
    }
}

fn check_pair<T: Scalar>(m: &SparseMembership, logits: &LogitTensor<T>) -> Result<()> {
    if m.n_pixels() != logits.n_pixels() {
        return Err(Error::DimensionMismatch {
            context: "membership vs logits",
            left: format!("{} pixels", m.n_pixels()),
            right: format!("{} pixels", logits.n_pixels()),
        });
    }
    Ok(())
}

/// Per-superpixel mean logits, an Ns x Nl matrix. Each mean accumulates in
/// binary64 around the row's first value as pivot, so a row whose members
/// all hold the same value returns exactly that value; that makes
/// enforcement idempotent bit for bit. Empty superpixels yield zero rows
/// plus a warning.
pub fn encode<T: Scalar>(
    m: &SparseMembership,
    logits: &LogitTensor<T>,
) -> Result<(Matrix<T>, Vec<Warning>)> {
    check_pair(m, logits)?;
    let (ns, nl) = (m.n_superpixels(), logits.n_labels());
    let mut out: Matrix<T> = Matrix::zeros(ns, nl);
    let mut warnings = Vec::new();
    for s in 0..ns {
        let pixels = m.row(s);
        if pixels.is_empty() {
            warnings.push(Warning::EmptySuperpixel { id: s as u32 });
            continue;
        }
        let inv_n = 1.0 / pixels.len() as f64;
        let out_row = out.row_mut(s);
        for l in 0..nl {
            let plane = logits.plane(l);
            let pivot = plane[pixels[0] as usize].to_f64();
            let mut acc = 0.0_f64;
            for &p in pixels {
                acc += plane[p as usize].to_f64() - pivot;
            }
            out_row[l] = T::from_f64(pivot + acc * inv_n);
        }
    }
    Ok((out, warnings))
}

/// Broadcasts each superpixel's logit row back to its member pixels.
pub fn decode<T: Scalar>(m: &SparseMembership, sp_logits: &Matrix<T>) -> Result<LogitTensor<T>> {
    if sp_logits.rows() != m.n_superpixels() {
        return Err(Error::DimensionMismatch {
            context: "decode",
            left: format!("{} superpixel rows", sp_logits.rows()),
            right: format!("{} superpixels", m.n_superpixels()),
        });
    }
    let (np, nl) = (m.n_pixels(), sp_logits.cols());
    let mut data = vec![T::ZERO; nl * np];
    for s in 0..m.n_superpixels() {
        let row = sp_logits.row(s);
        for &p in m.row(s) {
            for l in 0..nl {
                data[l * np + p as usize] = row[l];
            }
        }
    }
    // Every pixel belongs to exactly one superpixel, so all entries are set.
    LogitTensor::new(nl, 1, np, data)
}

/// Decode-of-encode: every pixel of a superpixel receives the superpixel's
/// mean logit row. Output keeps the input's H x W shape.
pub fn enforce_consistency<T: Scalar>(
    m: &SparseMembership,
    logits: &LogitTensor<T>,
) -> Result<(LogitTensor<T>, Vec<Warning>)> {
    let (encoded, warnings) = encode(m, logits)?;
    let flat = decode(m, &encoded)?;
    let shaped = LogitTensor {
        n_labels: flat.n_labels,
        h: logits.h,
        w: logits.w,
        data: flat.data,
    };
    Ok((shaped, warnings))
}

/// Per-pixel index of the maximum logit; ties break toward the lowest label.
pub fn argmax_labels<T: Scalar>(logits: &LogitTensor<T>) -> Result<LabelMap> {
    if logits.n_labels() == 0 {
        return Err(Error::EmptyInput {
            context: "argmax over zero labels",
        });
    }
    let np = logits.n_pixels();
    let mut ids = vec![0u32; np];
    for p in 0..np {
        let mut best = logits.get(0, p);
        let mut best_l = 0u32;
        for l in 1..logits.n_labels() {
            let v = logits.get(l, p);
            if v > best {
                best = v;
                best_l = l as u32;
            }
        }
        ids[p] = best_l;
    }
    LabelMap::new(logits.h(), logits.w(), ids)
}
