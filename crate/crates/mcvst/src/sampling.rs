//! Recursive subcarrier sampling and the CSI history it feeds.
//!
//! Subcarriers are partitioned into N_s / m_h contiguous groups of m_h.
//! At symbol t the same relative offset (t mod m_h) is sampled in every
//! group, so m_h consecutive symbols visit every subcarrier exactly once.

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::CMatrix;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct SamplingSchedule {
    pub n_subcarriers: usize,
    pub group_size: usize,
}

impl SamplingSchedule {
    pub fn new(n_subcarriers: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || n_subcarriers == 0 || n_subcarriers % group_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "group size {group_size} must divide subcarrier count {n_subcarriers}"
            )));
        }
        Ok(Self {
            n_subcarriers,
            group_size,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_subcarriers / self.group_size
    }

    /// Group index covering subcarrier `i`.
    pub fn group_of(&self, i: usize) -> usize {
        i / self.group_size
    }

    /// Absolute indices sampled at symbol t: g * m_h + (t mod m_h) for
    /// every group g.
    pub fn sampled_indices(&self, t: u64) -> Vec<usize> {
        let offset = (t % self.group_size as u64) as usize;
        (0..self.n_groups())
            .map(|g| g * self.group_size + offset)
            .collect()
    }
}

/// Fed-back CSI subset: one representative channel matrix per group.
#[derive(Debug, Clone)]
pub struct SampledCsi {
    pub t: u64,
    pub entries: Vec<CMatrix>,
    pub positions: Vec<usize>,
}

/// Sample the scheduled representative of each group from a realization.
pub fn sample(
    realization: &ChannelRealization,
    schedule: &SamplingSchedule,
    t: u64,
) -> Result<SampledCsi> {
    if realization.freq_response.len() != schedule.n_subcarriers {
        return Err(Error::InvalidInput(format!(
            "realization has {} bins, schedule expects {}",
            realization.freq_response.len(),
            schedule.n_subcarriers
        )));
    }
    let positions = schedule.sampled_indices(t);
    let entries = positions
        .iter()
        .map(|&i| realization.freq_response[i].clone())
        .collect();
    Ok(SampledCsi {
        t,
        entries,
        positions,
    })
}

/// The most recent sample observed at one offset: for each group, the
/// channel matrix of subcarrier g * m_h + offset as of symbol `t`.
#[derive(Debug, Clone)]
pub struct OffsetView {
    pub offset: usize,
    pub t: u64,
    /// Per-group matrices at this offset.
    pub entries: Vec<CMatrix>,
}

/// Ring of the last m_h sampled-CSI records.
#[derive(Debug, Clone, Default)]
pub struct CsiHistory {
    group_size: usize,
    ring: VecDeque<SampledCsi>,
    last_t: Option<u64>,
}

impl CsiHistory {
    pub fn new(group_size: usize) -> Self {
        Self {
            group_size,
            ring: VecDeque::with_capacity(group_size),
            last_t: None,
        }
    }

    /// Push a record and return, per offset 0..m_h, the most recent sample
    /// covering that offset (None during warm-up).
    pub fn push_and_assemble(&mut self, sampled: SampledCsi) -> Result<Vec<Option<OffsetView>>> {
        if let Some(last) = self.last_t {
            if sampled.t <= last {
                return Err(Error::OrderingError {
                    t: sampled.t,
                    last,
                });
            }
        }
        self.last_t = Some(sampled.t);
        if self.ring.len() == self.group_size {
            self.ring.pop_front();
        }
        self.ring.push_back(sampled);

        let mut views: Vec<Option<OffsetView>> = vec![None; self.group_size];
        // Newest record wins per offset.
        for rec in self.ring.iter() {
            let offset = (rec.t % self.group_size as u64) as usize;
            let newer = match &views[offset] {
                Some(v) => rec.t > v.t,
                None => true,
            };
            if newer {
                views[offset] = Some(OffsetView {
                    offset,
                    t: rec.t,
                    entries: rec.entries.clone(),
                });
            }
        }
        Ok(views)
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }
}
