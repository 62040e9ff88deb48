//! SVD precoding, per-subcarrier equalization, and waterfilling.
//!
//! Transmission along the right-singular vectors of the *sampled* channel
//! with equalization by the left-singular vectors and inverse singular
//! values diagonalizes the channel exactly when the sampled CSI matches
//! the true per-subcarrier channel; group-representative sampling leaves a
//! residual that grows with the group size.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::{CMatrix, CVector, Cplx};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Singular values below RANK_EPS * s_max deactivate a stream.
pub const RANK_EPS: f64 = 1e-8;

/// SVD of a channel matrix with fixed phase convention: the
/// largest-magnitude entry of each column of `v` is real-positive.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    /// Left singular vectors, N_r x N_r unitary.
    pub u: CMatrix,
    /// Singular values, descending, length min(N_r, N_t).
    pub s: Vec<f64>,
    /// Right singular vectors, N_t x N_t unitary.
    pub v: CMatrix,
}

/// Complex Gaussian receiver-noise model.
#[derive(Debug, Clone, Copy)]
pub struct NoiseConfig {
    pub snr_db: f64,
    /// Per-complex-dimension noise variance for unit signal power.
    pub sigma2: f64,
}

impl NoiseConfig {
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self {
            snr_db,
            sigma2: 10f64.powf(-snr_db / 10.0),
        }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            sigma2: 0.0,
        }
    }
}

/// Extend `cols` orthonormal columns to a full m x m unitary basis with
/// deterministic Gram-Schmidt against the canonical basis.
fn complete_unitary(thin: &CMatrix) -> CMatrix {
    let m = thin.nrows();
    let r = thin.ncols();
    let mut full = CMatrix::zeros(m, m);
    full.view_mut((0, 0), (m, r)).copy_from(thin);
    let mut filled = r;
    let mut candidate = 0;
    while filled < m && candidate < m {
        let mut col = CVector::zeros(m);
        col[candidate] = Cplx::new(1.0, 0.0);
        // Two rounds of classical Gram-Schmidt for stability.
        for _ in 0..2 {
            for k in 0..filled {
                let basis = full.column(k);
                let proj: Cplx = basis.iter().zip(col.iter()).map(|(b, c)| b.conj() * c).sum();
                for i in 0..m {
                    col[i] -= proj * full[(i, k)];
                }
            }
        }
        let norm = col.norm();
        if norm > 1e-6 {
            for i in 0..m {
                full[(i, filled)] = col[i] / Cplx::new(norm, 0.0);
            }
            filled += 1;
        }
        candidate += 1;
    }
    full
}

fn fix_column_phases(u: &mut CMatrix, v: &mut CMatrix, rank: usize) {
    // Pair-rotate the first `rank` columns so v's pivot entry is
    // real-positive; extra completion columns are rotated independently.
    for k in 0..v.ncols() {
        let col = v.column(k);
        let (pivot, _) = col
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bm), (i, z)| {
                if z.norm() > bm {
                    (i, z.norm())
                } else {
                    (bi, bm)
                }
            });
        let z = v[(pivot, k)];
        if z.norm() > 0.0 {
            let rot = (z / Cplx::new(z.norm(), 0.0)).conj();
            for i in 0..v.nrows() {
                v[(i, k)] *= rot;
            }
            if k < rank {
                for i in 0..u.nrows() {
                    u[(i, k)] *= rot;
                }
            }
        }
    }
    for k in rank..u.ncols() {
        let col = u.column(k);
        let (pivot, _) = col
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bm), (i, z)| {
                if z.norm() > bm {
                    (i, z.norm())
                } else {
                    (bi, bm)
                }
            });
        let z = u[(pivot, k)];
        if z.norm() > 0.0 {
            let rot = (z / Cplx::new(z.norm(), 0.0)).conj();
            for i in 0..u.nrows() {
                u[(i, k)] *= rot;
            }
        }
    }
}

/// Decompose h = U diag(s) V^H with descending singular values and the
/// documented phase convention.
pub fn svd_decompose(h: &CMatrix) -> Result<SvdTriple> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite channel entries".into()));
    }
    let svd = h.clone().svd(true, true);
    let u_thin = svd.u.ok_or_else(|| Error::Internal("svd missing u".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Internal("svd missing v_t".into()))?;
    let rank = svd.singular_values.len();
    // Sort descending.
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u_sorted = CMatrix::zeros(u_thin.nrows(), rank);
    let mut v_sorted = CMatrix::zeros(v_t.ncols(), rank);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u_thin.column(src));
        // v = v_t^H, so column k of v is the conjugate of row k of v_t.
        for i in 0..v_t.ncols() {
            v_sorted[(i, dst)] = v_t[(src, i)].conj();
        }
    }
    let mut u = complete_unitary(&u_sorted);
    let mut v = complete_unitary(&v_sorted);
    fix_column_phases(&mut u, &mut v, rank);
    Ok(SvdTriple { u, s, v })
}

impl SvdTriple {
    pub fn rank_threshold(&self) -> f64 {
        RANK_EPS * self.s.first().copied().unwrap_or(0.0)
    }

    /// Reconstruct U diag(s) V^H.
    pub fn reconstruct(&self) -> CMatrix {
        let m = self.u.nrows();
        let n = self.v.nrows();
        let mut out = CMatrix::zeros(m, n);
        for (k, &sv) in self.s.iter().enumerate() {
            let uk = self.u.column(k);
            let vk = self.v.column(k);
            for i in 0..m {
                for j in 0..n {
                    out[(i, j)] += uk[i] * vk[j].conj() * Cplx::new(sv, 0.0);
                }
            }
        }
        out
    }
}

/// Precode `x` with the sampled-CSI right singular vectors, pass it
/// through the true channel plus receiver noise, and equalize:
/// y = Lambda_s^-1 U_s^H (h_true V_s x + n).
pub fn transmit_equalize<R: Rng>(
    x: &CVector,
    h_true: &CMatrix,
    svd_sampled: &SvdTriple,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<CVector> {
    let r = x.len();
    let max_streams = svd_sampled.s.len();
    if r > max_streams {
        return Err(Error::InvalidInput(format!(
            "{r} streams exceed min(N_r, N_t) = {max_streams}"
        )));
    }
    let threshold = svd_sampled.rank_threshold();
    for (k, &sv) in svd_sampled.s[..r].iter().enumerate() {
        if sv <= threshold {
            return Err(Error::RankDeficient {
                stream: k,
                value: sv,
                threshold,
            });
        }
    }
    // Precode: V_s x.
    let n_tx = svd_sampled.v.nrows();
    let mut tx = CVector::zeros(n_tx);
    for k in 0..r {
        for i in 0..n_tx {
            tx[i] += svd_sampled.v[(i, k)] * x[k];
        }
    }
    // True channel plus receive-antenna noise.
    let mut rx = h_true * tx;
    if noise.sigma2 > 0.0 {
        let sigma = (noise.sigma2 / 2.0).sqrt();
        for i in 0..rx.len() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            rx[i] += Cplx::new(re * sigma, im * sigma);
        }
    }
    // Equalize: per-stream U_s^H then 1/s_k.
    let mut y = CVector::zeros(r);
    for k in 0..r {
        let mut acc = Cplx::new(0.0, 0.0);
        for i in 0..rx.len() {
            acc += svd_sampled.u[(i, k)].conj() * rx[i];
        }
        y[k] = acc / Cplx::new(svd_sampled.s[k], 0.0);
    }
    Ok(y)
}

/// Waterfilling power allocation: p_k = max(0, mu - sigma2 / g_k) with the
/// water level mu chosen so the powers sum to `total_power`.
///
/// Closed form over the streams sorted by inverse gain; the paired test
/// checks it against a bisection oracle.
pub fn waterfilling<F: Real>(gains: &[F], total_power: F, sigma2: F) -> Result<Vec<F>> {
    if total_power <= F::zero() || sigma2 <= F::zero() {
        return Err(Error::InvalidInput(
            "total_power and sigma2 must be positive".into(),
        ));
    }
    if !gains.iter().any(|&g| g > F::zero()) {
        return Err(Error::InvalidInput("all gains non-positive".into()));
    }
    // Inverse noise-to-gain levels for usable streams.
    let mut inv: Vec<(usize, F)> = gains
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > F::zero())
        .map(|(k, &g)| (k, sigma2 / g))
        .collect();
    inv.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    // Find the largest active set: with m streams active,
    // mu = (P + sum inv) / m must exceed the m-th inverse level.
    let mut active = inv.len();
    let mut mu = F::zero();
    while active > 0 {
        let sum: F = inv[..active]
            .iter()
            .fold(F::zero(), |acc, &(_, v)| acc + v);
        mu = (total_power + sum) / F::from_usize(active).unwrap();
        if mu > inv[active - 1].1 {
            break;
        }
        active -= 1;
    }
    let mut p = vec![F::zero(); gains.len()];
    for &(k, level) in &inv[..active] {
        p[k] = mu - level;
    }
    Ok(p)
}
