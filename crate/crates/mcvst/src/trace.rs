//! Channel trace file format.
//!
//! Layout: magic bytes `"MCVST01\0"`, little-endian u32 fields
//! [N_r, N_t, N_s, T_symbols], then T * N_s * N_r * N_t complex entries as
//! interleaved little-endian f64 (re, im), symbol-major, subcarrier next,
//! row-major within each matrix.

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::{CMatrix, Cplx};
use std::io::{Read, Write};

pub const TRACE_MAGIC: &[u8; 8] = b"MCVST01\0";

pub fn write_trace<W: Write>(w: &mut W, realizations: &[ChannelRealization]) -> Result<()> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let n_s = first.freq_response.len();
    let (n_r, n_t) = (first.freq_response[0].nrows(), first.freq_response[0].ncols());
    w.write_all(TRACE_MAGIC)?;
    for v in [n_r, n_t, n_s, realizations.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for r in realizations {
        if r.freq_response.len() != n_s {
            return Err(Error::InvalidInput("inconsistent subcarrier count".into()));
        }
        for h in &r.freq_response {
            if h.nrows() != n_r || h.ncols() != n_t {
                return Err(Error::InvalidInput("inconsistent matrix shape".into()));
            }
            for row in 0..n_r {
                for col in 0..n_t {
                    let z = h[(row, col)];
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_trace<R: Read>(r: &mut R) -> Result<Vec<ChannelRealization>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_MAGIC {
        return Err(Error::InvalidInput("bad trace magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [n_r, n_t, n_s, t_symbols] = dims;
    if n_r == 0 || n_t == 0 || n_s == 0 {
        return Err(Error::InvalidInput("zero trace dimension".into()));
    }
    let mut out = Vec::with_capacity(t_symbols);
    let mut b = [0u8; 8];
    for t in 0..t_symbols {
        let mut freq = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            let mut h = CMatrix::zeros(n_r, n_t);
            for row in 0..n_r {
                for col in 0..n_t {
                    r.read_exact(&mut b)?;
                    let re = f64::from_le_bytes(b);
                    r.read_exact(&mut b)?;
                    let im = f64::from_le_bytes(b);
                    h[(row, col)] = Cplx::new(re, im);
                }
            }
            freq.push(h);
        }
        out.push(ChannelRealization {
            t: t as u64,
            freq_response: freq,
        });
    }
    Ok(out)
}
