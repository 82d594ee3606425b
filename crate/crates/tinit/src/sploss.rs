//! Superpixel clustering objective: pixels are softly assigned to nearby
//! superpixel cells, cell centroids aggregate pixel properties and
//! coordinates, and the loss scores reconstruction of both.
//!
//! For property vectors f, assignment q, centroids u_s and their
//! reconstructions f', the loss is
//!   L = sum_p E(f(p), f'(p)) + (m/D) ||c(p) - c'(p)||
//! with E either squared-l2 or cross-entropy. Evaluation and the analytic
//! gradient with respect to q run in binary64; summation orders are fixed
//! (ascending pixel, then ascending neighbor), so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SampleStream;

/// Floor applied inside the cross-entropy logarithm.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

/// Property distance in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L2,
    CrossEntropy,
}

/// Loss weights: property-vs-coordinate balance m and the superpixel
/// sampling interval D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub m_weight: f64,
    pub sampling_interval: f64,
    pub distance: DistanceKind,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_interval > 0.0 && self.sampling_interval.is_finite()) {
            return Err(Error::InvalidArgument {
                context: format!("sampling interval must be positive, got {}", self.sampling_interval),
            });
        }
        if !self.m_weight.is_finite() {
            return Err(Error::InvalidArgument {
                context: "m_weight must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Per-pixel property vectors (N_p x K) and coordinates (N_p x 2, as x, y).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField {
    f: Matrix<f64>,
    c: Matrix<f64>,
}

impl PixelField {
    /// Coordinates must lie inside the h x w pixel grid.
    pub fn new(f: Matrix<f64>, c: Matrix<f64>, h: usize, w: usize) -> Result<Self> {
        if f.cols() < 1 {
            return Err(Error::InvalidArgument {
                context: "pixel property needs K >= 1".into(),
            });
        }
        if c.rows() != f.rows() || c.cols() != 2 {
            return Err(Error::DimensionMismatch {
                context: "pixel coordinates",
                left: format!("{}x{}", c.rows(), c.cols()),
                right: format!("{} pixels x 2", f.rows()),
            });
        }
        for p in 0..c.rows() {
            let (x, y) = (c.get(p, 0), c.get(p, 1));
            if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
                return Err(Error::InvalidArgument {
                    context: format!("coordinate ({x}, {y}) outside {w}x{h} image"),
                });
            }
        }
        Ok(PixelField { f, c })
    }

    pub fn n_pixels(&self) -> usize {
        self.f.rows()
    }

    pub fn k(&self) -> usize {
        self.f.cols()
    }

    pub fn properties(&self) -> &Matrix<f64> {
        &self.f
    }

    pub fn coordinates(&self) -> &Matrix<f64> {
        &self.c
    }
}

/// Soft assignment of each pixel to its neighboring superpixels, stored as
/// one compressed row per pixel with strictly ascending superpixel ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMap {
    n_superpixels: usize,
    offsets: Vec<usize>,
    sp_ids: Vec<u32>,
    q: Vec<f64>,
}

impl AssignmentMap {
    /// Validates shape, non-negativity, ascending ids, and per-pixel
    /// normalization (sums within 1e-6 of 1).
    pub fn new(
        n_superpixels: usize,
        offsets: Vec<usize>,
        sp_ids: Vec<u32>,
        q: Vec<f64>,
    ) -> Result<Self> {
        if offsets.is_empty() || *offsets.last().unwrap() != sp_ids.len() || sp_ids.len() != q.len()
        {
            return Err(Error::InvalidArgument {
                context: "assignment storage arrays disagree".into(),
            });
        }
        for w in offsets.windows(2) {
            if w[0] > w[1] {
                return Err(Error::InvalidArgument {
                    context: "assignment offsets must be nondecreasing".into(),
                });
            }
        }
        let n_pixels = offsets.len() - 1;
        for p in 0..n_pixels {
            let ids = &sp_ids[offsets[p]..offsets[p + 1]];
            let probs = &q[offsets[p]..offsets[p + 1]];
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument {
                    context: format!("pixel {p}: neighbor ids must be strictly ascending"),
                });
            }
            if ids.iter().any(|&s| s as usize >= n_superpixels) {
                return Err(Error::IdOutOfRange {
                    id: *ids.iter().find(|&&s| s as usize >= n_superpixels).unwrap(),
                    limit: n_superpixels,
                });
            }
            let mut sum = 0.0;
            for &v in probs {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument {
                        context: format!("pixel {p}: probability {v} invalid"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument {
                    context: format!("pixel {p}: probabilities sum to {sum}, expected 1"),
                });
            }
        }
        Ok(AssignmentMap {
            n_superpixels,
            offsets,
            sp_ids,
            q,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_superpixels(&self) -> usize {
        self.n_superpixels
    }

    /// Stored (superpixel, probability) pairs of one pixel.
    pub fn entries(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[p]..self.offsets[p + 1];
        self.sp_ids[range.clone()]
            .iter()
            .zip(&self.q[range])
            .map(|(&s, &v)| (s as usize, v))
    }

    /// Total stored entries; gradient vectors align with this layout.
    pub fn nnz(&self) -> usize {
        self.q.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    /// Grid cells every d pixels with 3x3 cell neighborhoods and uniform
    /// probabilities over each pixel's neighbor set.
    pub fn uniform_grid(h: usize, w: usize, d: usize) -> Result<Self> {
        Self::grid_with(h, w, d, |_p, ids| vec![1.0 / ids.len() as f64; ids.len()])
    }

    /// Grid neighborhoods with seeded random positive probabilities.
    pub fn random_grid(h: usize, w: usize, d: usize, seed: u64) -> Result<Self> {
        let mut stream = SampleStream::new(seed);
        Self::grid_with(h, w, d, move |_p, ids| {
            let raw: Vec<f64> = (0..ids.len()).map(|_| 0.1 + stream.next_unit()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
    }

    /// Grid neighborhoods where each pixel assigns everything to its own
    /// base cell.
    pub fn one_hot_grid(h: usize, w: usize, d: usize) -> Result<Self> {
        let gw = w.div_ceil(d);
        Self::grid_with(h, w, d, move |p, ids| {
            let (y, x) = (p / w, p % w);
            let own = ((y / d) * gw + x / d) as u32;
            ids.iter().map(|&id| f64::from(u8::from(id == own))).collect()
        })
    }

    fn grid_with<F>(h: usize, w: usize, d: usize, mut fill: F) -> Result<Self>
    where
        F: FnMut(usize, &[u32]) -> Vec<f64>,
    {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::InvalidArgument {
                context: format!("grid needs positive h, w, d; got {h}x{w}, d={d}"),
            });
        }
        let (gh, gw) = (h.div_ceil(d), w.div_ceil(d));
        let mut offsets = Vec::with_capacity(h * w + 1);
        let mut sp_ids = Vec::new();
        let mut q = Vec::new();
        offsets.push(0);
        for y in 0..h {
            for x in 0..w {
                let (cy, cx) = (y / d, x / d);
                let mut ids = Vec::with_capacity(9);
                for dy in -1i64..=1 {
                    let ny = cy as i64 + dy;
                    if ny < 0 || ny >= gh as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        let nx = cx as i64 + dx;
                        if nx < 0 || nx >= gw as i64 {
                            continue;
                        }
                        ids.push((ny as usize * gw + nx as usize) as u32);
                    }
                }
                let probs = fill(y * w + x, &ids);
                sp_ids.extend_from_slice(&ids);
                q.extend_from_slice(&probs);
                offsets.push(sp_ids.len());
            }
        }
        AssignmentMap::new(gh * gw, offsets, sp_ids, q)
    }
}

/// Weighted centroids per superpixel: properties u (N_s x K), coordinates
/// l (N_s x 2), and the total assignment weight behind each.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub u: Matrix<f64>,
    pub l: Matrix<f64>,
    pub weights: Vec<f64>,
}

/// Per-pixel reconstructions from neighboring centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub f_prime: Matrix<f64>,
    pub c_prime: Matrix<f64>,
}

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub property_term: f64,
    pub coordinate_term: f64,
    pub total: f64,
}

fn check_sizes(pf: &PixelField, a: &AssignmentMap) -> Result<()> {
    if pf.n_pixels() != a.n_pixels() {
        return Err(Error::DimensionMismatch {
            context: "pixel field vs assignment",
            left: format!("{} pixels", pf.n_pixels()),
            right: format!("{} pixels", a.n_pixels()),
        });
    }
    Ok(())
}

/// Weighted property and coordinate centroids,
///   u_s = sum_p f(p) q_s(p) / sum_p q_s(p),
/// accumulated in ascending pixel order. Every superpixel must receive
/// positive total weight.
pub fn aggregate(pf: &PixelField, a: &AssignmentMap) -> Result<Aggregates> {
    check_sizes(pf, a)?;
    let (ns, k) = (a.n_superpixels(), pf.k());
    let mut u: Matrix<f64> = Matrix::zeros(ns, k);
    let mut l: Matrix<f64> = Matrix::zeros(ns, 2);
    let mut weights = vec![0.0_f64; ns];
    for p in 0..pf.n_pixels() {
        let fp = pf.f.row(p);
        let cp = pf.c.row(p);
        for (s, qv) in a.entries(p) {
            weights[s] += qv;
            let urow = u.row_mut(s);
            for (uk, fk) in urow.iter_mut().zip(fp) {
                *uk += fk * qv;
            }
            let lrow = l.row_mut(s);
            lrow[0] += cp[0] * qv;
            lrow[1] += cp[1] * qv;
        }
    }
    for s in 0..ns {
        if !(weights[s] > 0.0) {
            return Err(Error::ZeroWeight { id: s });
        }
        let inv = 1.0 / weights[s];
        for v in u.row_mut(s) {
            *v *= inv;
        }
        for v in l.row_mut(s) {
            *v *= inv;
        }
    }
    Ok(Aggregates { u, l, weights })
}

/// Per-pixel centroid mixtures f'(p) = sum_{s in N_p} u_s q_s(p).
pub fn reconstruct(agg: &Aggregates, a: &AssignmentMap) -> Result<Reconstruction> {
    if agg.u.rows() != a.n_superpixels() {
        return Err(Error::DimensionMismatch {
            context: "reconstruct",
            left: format!("{} centroid rows", agg.u.rows()),
            right: format!("{} superpixels", a.n_superpixels()),
        });
    }
    let (np, k) = (a.n_pixels(), agg.u.cols());
    let mut f_prime: Matrix<f64> = Matrix::zeros(np, k);
    let mut c_prime: Matrix<f64> = Matrix::zeros(np, 2);
    for p in 0..np {
        let frow = f_prime.row_mut(p);
        for (s, qv) in a.entries(p) {
            for (fk, uk) in frow.iter_mut().zip(agg.u.row(s)) {
                *fk += uk * qv;
            }
        }
        let crow = c_prime.row_mut(p);
        for (s, qv) in a.entries(p) {
            crow[0] += agg.l.get(s, 0) * qv;
            crow[1] += agg.l.get(s, 1) * qv;
        }
    }
    Ok(Reconstruction { f_prime, c_prime })
}

fn property_error(distance: DistanceKind, f: &[f64], f_prime: &[f64]) -> Result<f64> {
    match distance {
        DistanceKind::L2 => Ok(f
            .iter()
            .zip(f_prime)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()),
        DistanceKind::CrossEntropy => {
            let mut e = 0.0;
            for (&fk, &fpk) in f.iter().zip(f_prime) {
                if fk < 0.0 {
                    return Err(Error::NotADistribution {
                        context: format!("pixel property {fk} is negative"),
                    });
                }
                if fpk < -1e-9 {
                    return Err(Error::NotADistribution {
                        context: format!("reconstructed property {fpk} is negative"),
                    });
                }
                e -= fk * fpk.max(CROSS_ENTROPY_CLAMP).ln();
            }
            Ok(e)
        }
    }
}

/// Full loss with its property/coordinate split.
pub fn loss(pf: &PixelField, a: &AssignmentMap, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let agg = aggregate(pf, a)?;
    let recon = reconstruct(&agg, a)?;
    loss_from_parts(pf, cfg, &recon)
}

fn loss_from_parts(
    pf: &PixelField,
    cfg: &LossConfig,
    recon: &Reconstruction,
) -> Result<LossBreakdown> {
    let mut property_term = 0.0;
    let mut coord_sum = 0.0;
    for p in 0..pf.n_pixels() {
        property_term += property_error(cfg.distance, pf.f.row(p), recon.f_prime.row(p))?;
        let dx = recon.c_prime.get(p, 0) - pf.c.get(p, 0);
        let dy = recon.c_prime.get(p, 1) - pf.c.get(p, 1);
        coord_sum += (dx * dx + dy * dy).sqrt();
    }
    let coordinate_term = cfg.m_weight / cfg.sampling_interval * coord_sum;
    Ok(LossBreakdown {
        property_term,
        coordinate_term,
        total: property_term + coordinate_term,
    })
}

/// Loss plus its analytic gradient with respect to every stored assignment
/// probability, aligned with the assignment's entry layout.
pub fn loss_gradient(
    pf: &PixelField,
    a: &AssignmentMap,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    cfg.validate()?;
    let agg = aggregate(pf, a)?;
    let recon = reconstruct(&agg, a)?;
    let breakdown = loss_from_parts(pf, cfg, &recon)?;

    let (np, k, ns) = (pf.n_pixels(), pf.k(), a.n_superpixels());
    let coord_scale = cfg.m_weight / cfg.sampling_interval;

    // Per-pixel dE/df' rows and scaled unit coordinate residuals.
    let mut g: Matrix<f64> = Matrix::zeros(np, k);
    let mut dcoord: Matrix<f64> = Matrix::zeros(np, 2);
    for p in 0..np {
        let fp = pf.f.row(p);
        let fpr = recon.f_prime.row(p);
        let grow = g.row_mut(p);
        match cfg.distance {
            DistanceKind::L2 => {
                for i in 0..k {
                    grow[i] = 2.0 * (fpr[i] - fp[i]);
                }
            }
            DistanceKind::CrossEntropy => {
                for i in 0..k {
                    grow[i] = if fpr[i] > CROSS_ENTROPY_CLAMP {
                        -fp[i] / fpr[i]
                    } else {
                        0.0
                    };
                }
            }
        }
        let dx = recon.c_prime.get(p, 0) - pf.c.get(p, 0);
        let dy = recon.c_prime.get(p, 1) - pf.c.get(p, 1);
        let rho = (dx * dx + dy * dy).sqrt();
        if rho > 0.0 {
            dcoord.set(p, 0, coord_scale * dx / rho);
            dcoord.set(p, 1, coord_scale * dy / rho);
        }
    }

    // Per-superpixel backpropagated sums h_s = sum_p q_s(p) g_p (and the
    // coordinate analog), needed for the centroid dependence on q.
    let mut hsum: Matrix<f64> = Matrix::zeros(ns, k);
    let mut esum: Matrix<f64> = Matrix::zeros(ns, 2);
    for p in 0..np {
        for (s, qv) in a.entries(p) {
            let hrow = hsum.row_mut(s);
            for (hk, gk) in hrow.iter_mut().zip(g.row(p)) {
                *hk += qv * gk;
            }
            let erow = esum.row_mut(s);
            erow[0] += qv * dcoord.get(p, 0);
            erow[1] += qv * dcoord.get(p, 1);
        }
    }

    // dL/dq_s(r) = g_r . u_s + (f(r) - u_s) . h_s / W_s
    //           + d_r . l_s + (c(r) - l_s) . e_s / W_s.
    let mut grad = vec![0.0_f64; a.nnz()];
    let mut idx = 0;
    for r in 0..np {
        let fr = pf.f.row(r);
        let gr = g.row(r);
        let cr = pf.c.row(r);
        let dr = dcoord.row(r);
        for (s, _qv) in a.entries(r) {
            let us = agg.u.row(s);
            let ls = agg.l.row(s);
            let inv_w = 1.0 / agg.weights[s];
            let mut v = 0.0;
            for i in 0..k {
                v += gr[i] * us[i];
                v += (fr[i] - us[i]) * hsum.get(s, i) * inv_w;
            }
            v += dr[0] * ls[0] + dr[1] * ls[1];
            v += ((cr[0] - ls[0]) * esum.get(s, 0) + (cr[1] - ls[1]) * esum.get(s, 1)) * inv_w;
            grad[idx] = v;
            idx += 1;
        }
    }
    Ok((breakdown, grad))
}

/// Central-difference verification of the analytic gradient: returns the
/// maximum over stored entries of |analytic - numeric| / max(1, |numeric|).
pub fn fd_gradient_check(
    pf: &PixelField,
    a: &AssignmentMap,
    cfg: &LossConfig,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument {
            context: format!("step must be positive, got {h}"),
        });
    }
    let (_, analytic) = loss_gradient(pf, a, cfg)?;
    let mut worst = 0.0_f64;
    let mut perturbed = a.clone();
    for i in 0..a.nnz() {
        let base = a.q[i];
        perturbed.q[i] = base + h;
        let up = loss(pf, &perturbed, cfg)?.total;
        perturbed.q[i] = base - h;
        let down = loss(pf, &perturbed, cfg)?.total;
        perturbed.q[i] = base;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}
