//! Segmentation-edge quality scores with pixel tolerance: the performance
//! ratio (true edge pixels over false ones) and the boundary F-measure
//! 2RP/(R+P). Tolerance r is applied by Chebyshev-ball dilation of the
//! opposite mask, so a predicted edge counts as true when it lies within r
//! pixels of a ground-truth edge.

use crate::error::{Error, Result, Warning};
use crate::sparse::LabelMap;

/// Finite stand-in for the performance ratio when there are no false edges.
pub const PERFORMANCE_RATIO_CAP: f64 = 1e9;

/// Boolean edge image, row-major, true = edge pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl EdgeMask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::DataLength {
                rows: h,
                cols: w,
                got: bits.len(),
            });
        }
        Ok(EdgeMask { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        EdgeMask {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.w + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of edge pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn same_shape(&self, other: &EdgeMask, context: &'static str) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::DimensionMismatch {
                context,
                left: format!("{}x{}", self.h, self.w),
                right: format!("{}x{}", other.h, other.w),
            });
        }
        Ok(())
    }
}

/// Marks a pixel as edge iff any 4-neighbor carries a different label.
pub fn extract_edges(m: &LabelMap) -> EdgeMask {
    let (h, w) = (m.h(), m.w());
    let mut out = EdgeMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let id = m.get(y, x);
            let differs = (y > 0 && m.get(y - 1, x) != id)
                || (y + 1 < h && m.get(y + 1, x) != id)
                || (x > 0 && m.get(y, x - 1) != id)
                || (x + 1 < w && m.get(y, x + 1) != id);
            out.set(y, x, differs);
        }
    }
    out
}

/// Chebyshev-ball dilation: a pixel is set iff some edge pixel lies within
/// max(|dy|, |dx|) <= r.
pub fn dilate(e: &EdgeMask, r: usize) -> EdgeMask {
    if r == 0 {
        return e.clone();
    }
    let (h, w) = (e.h, e.w);
    let mut out = EdgeMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if !e.get(y, x) {
                continue;
            }
            let y_lo = y.saturating_sub(r);
            let x_lo = x.saturating_sub(r);
            for ny in y_lo..=(y + r).min(h - 1) {
                for nx in x_lo..=(x + r).min(w - 1) {
                    out.set(ny, nx, true);
                }
            }
        }
    }
    out
}

/// True edges over false edges at tolerance r: TP counts predicted edge
/// pixels inside dilate(gt, r), FP the rest. No false edges returns the
/// documented cap; an empty prediction is 0 with a warning.
pub fn performance_ratio(
    pred: &EdgeMask,
    gt: &EdgeMask,
    r: usize,
) -> Result<(f64, Vec<Warning>)> {
    pred.same_shape(gt, "performance ratio masks")?;
    if pred.count() == 0 {
        return Ok((0.0, vec![Warning::EmptyPrediction]));
    }
    let near_gt = dilate(gt, r);
    let tp = pred
        .bits
        .iter()
        .zip(&near_gt.bits)
        .filter(|&(&p, &g)| p && g)
        .count();
    let fp = pred.count() - tp;
    let value = if fp == 0 {
        PERFORMANCE_RATIO_CAP
    } else {
        tp as f64 / fp as f64
    };
    Ok((value, Vec::new()))
}

/// Boundary precision and recall at tolerance r:
/// P = |pred inside dilate(gt,r)| / |pred|, R = |gt inside dilate(pred,r)| / |gt|.
pub fn precision_recall(
    pred: &EdgeMask,
    gt: &EdgeMask,
    r: usize,
) -> Result<((f64, f64), Vec<Warning>)> {
    pred.same_shape(gt, "edge masks")?;
    let mut warnings = Vec::new();
    if gt.count() == 0 {
        return Ok(((0.0, 0.0), vec![Warning::EmptyGroundTruth]));
    }
    let precision = if pred.count() == 0 {
        warnings.push(Warning::EmptyPrediction);
        0.0
    } else {
        let near_gt = dilate(gt, r);
        let tp = pred
            .bits
            .iter()
            .zip(&near_gt.bits)
            .filter(|&(&p, &g)| p && g)
            .count();
        tp as f64 / pred.count() as f64
    };
    let near_pred = dilate(pred, r);
    let matched_gt = gt
        .bits
        .iter()
        .zip(&near_pred.bits)
        .filter(|&(&g, &p)| g && p)
        .count();
    let recall = matched_gt as f64 / gt.count() as f64;
    Ok(((precision, recall), warnings))
}

/// Boundary F-measure 2RP/(R+P) at tolerance r; 0 when R + P = 0 and when
/// the ground truth has no edges (with a warning).
pub fn f_measure(pred: &EdgeMask, gt: &EdgeMask, r: usize) -> Result<(f64, Vec<Warning>)> {
    let ((p, rec), warnings) = precision_recall(pred, gt, r)?;
    let fm = if p + rec == 0.0 {
        0.0
    } else {
        2.0 * rec * p / (rec + p)
    };
    Ok((fm, warnings))
}
