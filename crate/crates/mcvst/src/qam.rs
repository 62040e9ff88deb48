//! Gray-mapped square QAM with unit average symbol energy.
//!
//! Supported orders: 4, 16, 64. Bits split evenly between the I and Q
//! axes, I bits first. Per axis, bits are read MSB-first as a Gray code g;
//! with n = gray_decode(g) the amplitude level is (m - 1) - 2n for m
//! levels, then the constellation is scaled to unit average energy.
//! Under this table QPSK bits 00 map to (1 + j) / sqrt(2).

use crate::error::{Error, Result};
use crate::num::Real;
use num_complex::Complex;

pub fn bits_per_symbol(order: usize) -> Result<usize> {
    match order {
        4 => Ok(2),
        16 => Ok(4),
        64 => Ok(6),
        _ => Err(Error::InvalidConfig(format!(
            "unsupported QAM order {order} (expected 4, 16, or 64)"
        ))),
    }
}

fn gray_decode(mut g: u32) -> u32 {
    let mut n = g;
    while g > 1 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Unit-energy amplitude scale for m levels per axis: the raw levels
/// +/-1, +/-3, ... have per-axis mean square (m^2 - 1) / 3, and two axes
/// contribute equally.
fn axis_scale<F: Real>(m: usize) -> F {
    let ms = (m * m - 1) as f64 / 3.0;
    F::from_f64(1.0 / (2.0 * ms).sqrt()).unwrap()
}

fn axis_level<F: Real>(bits: &[u8], m_bits: usize) -> F {
    let mut g = 0u32;
    for &b in &bits[..m_bits] {
        g = (g << 1) | (b as u32 & 1);
    }
    let n = gray_decode(g);
    let m = 1usize << m_bits;
    F::from_i64((m as i64 - 1) - 2 * n as i64).unwrap()
}

/// Map a bit sequence (0/1 values) to Gray-coded QAM symbols.
pub fn qam_map<F: Real>(bits: &[u8], order: usize) -> Result<Vec<Complex<F>>> {
    let bps = bits_per_symbol(order)?;
    if bits.len() % bps != 0 {
        return Err(Error::InvalidInput(format!(
            "bit length {} not divisible by log2(order) = {}",
            bits.len(),
            bps
        )));
    }
    let m_bits = bps / 2;
    let scale = axis_scale::<F>(1 << m_bits);
    Ok(bits
        .chunks(bps)
        .map(|chunk| {
            let i = axis_level::<F>(&chunk[..m_bits], m_bits) * scale;
            let q = axis_level::<F>(&chunk[m_bits..], m_bits) * scale;
            Complex::new(i, q)
        })
        .collect())
}

fn demap_axis<F: Real>(v: F, m_bits: usize, scale: F) -> u32 {
    let m = 1i64 << m_bits;
    // Nearest odd level in [-(m-1), m-1].
    let raw = v / scale;
    let idx = ((F::from_i64(m - 1).unwrap() - raw) / F::from_f64(2.0).unwrap())
        .round()
        .to_i64()
        .unwrap_or(0)
        .clamp(0, m - 1) as u32;
    // Gray encode the level index.
    idx ^ (idx >> 1)
}

/// Hard nearest-neighbor demapping back to bits.
pub fn qam_demap<F: Real>(symbols: &[Complex<F>], order: usize) -> Result<Vec<u8>> {
    let bps = bits_per_symbol(order)?;
    let m_bits = bps / 2;
    let scale = axis_scale::<F>(1 << m_bits);
    let mut bits = Vec::with_capacity(symbols.len() * bps);
    for s in symbols {
        for g in [demap_axis(s.re, m_bits, scale), demap_axis(s.im, m_bits, scale)] {
            for k in (0..m_bits).rev() {
                bits.push(((g >> k) & 1) as u8);
            }
        }
    }
    Ok(bits)
}
