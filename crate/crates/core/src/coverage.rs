//! Edge coverage maps under the AFL-style XOR-hash scheme and the
//! collision-free uniform scheme.

use std::fmt;

use crate::error::{Error, Result};
use crate::target_runtime::rt;

pub use rt::MAP_SIZE;

/// Magic prefix of a serialized map.
pub const MAP_MAGIC: &[u8; 8] = rt::COV_MAGIC;
/// Size of the serialized header: magic, scheme tag, little-endian length.
pub const MAP_HEADER_LEN: usize = rt::COV_HEADER_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// `cur ^ (prev >> 1)` over random block labels; collisions possible.
    XorHash,
    /// One id per (prev, cur) block pair; no collisions.
    CollisionFree,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::XorHash => rt::SCHEME_TAG_XOR,
            Scheme::CollisionFree => rt::SCHEME_TAG_UNIFORM,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Scheme> {
        match tag {
            rt::SCHEME_TAG_XOR => Some(Scheme::XorHash),
            rt::SCHEME_TAG_UNIFORM => Some(Scheme::CollisionFree),
            _ => None,
        }
    }

    /// Value of `FF_COV_SCHEME` that selects this scheme in a target.
    pub fn env_value(self) -> &'static str {
        match self {
            Scheme::XorHash => "xor",
            Scheme::CollisionFree => "uniform",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.env_value())
    }
}

/// An instrumented basic block of a toy target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeSite {
    pub block_id: u32,
}

/// AFL edge index of the transition between two block labels.
#[inline]
pub fn xor_hash_index(prev: u32, cur: u32) -> usize {
    (cur ^ (prev >> 1)) as usize & (MAP_SIZE - 1)
}

/// Fixed-size array of saturating 8-bit hit counters.
#[derive(Clone, PartialEq, Eq)]
pub struct CoverageMap {
    cells: Box<[u8]>,
    scheme: Scheme,
}

impl fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoverageMap")
            .field("scheme", &self.scheme)
            .field("covered", &self.count_covered())
            .finish()
    }
}

impl CoverageMap {
    pub fn new(scheme: Scheme) -> CoverageMap {
        CoverageMap { cells: vec![0u8; MAP_SIZE].into_boxed_slice(), scheme }
    }

    /// Copies raw cells, e.g. a snapshot read out of a channel.
    pub fn from_cells(scheme: Scheme, cells: &[u8]) -> Result<CoverageMap> {
        if cells.len() != MAP_SIZE {
            return Err(Error::Format(format!("map has {} cells, expected {}", cells.len(), MAP_SIZE)));
        }
        Ok(CoverageMap { cells: cells.into(), scheme })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    fn require(&self, scheme: Scheme) -> Result<()> {
        if self.scheme != scheme {
            return Err(Error::Usage(format!("operation needs a {} map, got {}", scheme, self.scheme)));
        }
        Ok(())
    }

    #[inline]
    fn bump(&mut self, idx: usize) {
        let c = &mut self.cells[idx];
        *c = c.saturating_add(1);
    }

    /// Records `prev -> cur` on an XOR-hash map.
    pub fn record_edge(&mut self, prev: u32, cur: u32) -> Result<()> {
        self.require(Scheme::XorHash)?;
        self.bump(xor_hash_index(prev, cur));
        Ok(())
    }

    /// Records a collision-free edge id.
    pub fn record_edge_uniform(&mut self, edge_id: usize) -> Result<()> {
        self.require(Scheme::CollisionFree)?;
        if edge_id >= MAP_SIZE {
            return Err(Error::Bounds { index: edge_id, limit: MAP_SIZE });
        }
        self.bump(edge_id);
        Ok(())
    }

    pub fn count_covered(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Indices of all nonzero cells, ascending.
    pub fn covered_edges(&self) -> Vec<u32> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Cell-wise maximum into `self`.
    pub fn merge_from(&mut self, other: &CoverageMap) -> Result<()> {
        if self.scheme != other.scheme {
            return Err(Error::Usage(format!("cannot merge a {} map into a {} map", other.scheme, self.scheme)));
        }
        for (a, &b) in self.cells.iter_mut().zip(other.cells.iter()) {
            *a = (*a).max(b);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAP_HEADER_LEN + MAP_SIZE);
        out.extend_from_slice(MAP_MAGIC);
        out.push(self.scheme.tag());
        out.extend_from_slice(&(MAP_SIZE as u32).to_le_bytes());
        out.extend_from_slice(&self.cells);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CoverageMap> {
        if bytes.len() < MAP_HEADER_LEN || &bytes[..8] != MAP_MAGIC {
            return Err(Error::Format("missing FFCOVMAP header".into()));
        }
        let scheme = Scheme::from_tag(bytes[8]).ok_or_else(|| Error::Format(format!("unknown scheme tag {}", bytes[8])))?;
        let len = u32::from_le_bytes([bytes[9], bytes[10], bytes[11], bytes[12]]) as usize;
        if len != MAP_SIZE || bytes.len() != MAP_HEADER_LEN + len {
            return Err(Error::Format(format!("map length {} / {} bytes does not match MAP_SIZE", len, bytes.len())));
        }
        CoverageMap::from_cells(scheme, &bytes[MAP_HEADER_LEN..])
    }
}

/// Set-union of two maps of the same scheme (cell-wise maximum).
pub fn merge(a: &CoverageMap, b: &CoverageMap) -> Result<CoverageMap> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}
