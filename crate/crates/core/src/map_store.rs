//! Place map: descriptors indexed by an exact KD-tree, with poses and the
//! grid-sampled feature spheres needed for voting, plus the `SMAP` file.

use std::path::Path;
use std::sync::Arc;

use crate::binio::{checked_u16, checked_u32, PutLe, Reader};
use crate::descriptor::DESCRIPTOR_DIM;
use crate::error::{Error, Result};
use crate::grid::Channel;
use crate::kdtree::{KdTree, Neighbor};
use crate::pose::Pose;
use crate::projection::FeatureSphere;

pub const MAP_MAGIC: &[u8; 4] = b"SMAP";
pub const MAP_VERSION: u16 = 1;

const CODEC_RAW: u8 = 0;
const CODEC_ZERO_RUNS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceEntry {
    pub id: u32,
    pub pose: Pose,
    pub descriptor: Vec<f32>,
    /// Shared so that entries may reuse one payload.
    pub sphere: Arc<FeatureSphere>,
}

#[derive(Debug, Clone)]
pub struct PlaceMap {
    entries: Vec<PlaceEntry>,
    bandwidth: usize,
    index: KdTree,
}

impl PlaceMap {
    /// Validates the entries, rounds their channels to f32 (the stored
    /// precision) and builds the index. Ids must equal positions.
    pub fn build(mut entries: Vec<PlaceEntry>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::invalid("a map needs at least one entry"))?;
        let bandwidth = first.sphere.bandwidth();
        for (i, e) in entries.iter_mut().enumerate() {
            if e.id as usize != i {
                return Err(Error::invalid(format!("entry {i} has id {}, ids must be dense", e.id)));
            }
            if e.descriptor.len() != DESCRIPTOR_DIM {
                return Err(Error::shape(format!(
                    "entry {i}: descriptor length {}, expected {DESCRIPTOR_DIM}",
                    e.descriptor.len()
                )));
            }
            if e.sphere.bandwidth() != bandwidth {
                return Err(Error::shape(format!("entry {i}: feature sphere bandwidth differs")));
            }
            if !e.sphere.is_quantized() {
                e.sphere = Arc::new(e.sphere.quantized());
            }
        }
        let points = entries
            .iter()
            .flat_map(|e| e.descriptor.iter().map(|v| f64::from(*v)))
            .collect();
        Ok(Self {
            index: KdTree::new(points, DESCRIPTOR_DIM)?,
            entries,
            bandwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn entries(&self) -> &[PlaceEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &PlaceEntry {
        &self.entries[id]
    }

    /// Exact `k` nearest entries by L2, ascending; ties go to the lower id.
    pub fn knn_query(&self, descriptor: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        Ok(self.knn_query_with_stats(descriptor, k)?.0)
    }

    /// Also returns the number of descriptors compared.
    pub fn knn_query_with_stats(&self, descriptor: &[f64], k: usize) -> Result<(Vec<Neighbor>, usize)> {
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!("k = {k} outside [1, {}]", self.len())));
        }
        if descriptor.len() != DESCRIPTOR_DIM {
            return Err(Error::shape(format!(
                "query descriptor length {}, expected {DESCRIPTOR_DIM}",
                descriptor.len()
            )));
        }
        Ok(self.index.knn_with_stats(descriptor, k))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAP_MAGIC);
        out.put_u16(MAP_VERSION);
        out.put_u32(checked_u32(self.len(), "entry count")?);
        out.put_u16(DESCRIPTOR_DIM as u16);
        out.put_u16(checked_u16(self.bandwidth, "bandwidth")?);
        for e in &self.entries {
            out.put_u32(e.id);
            e.pose.to_array().iter().for_each(|v| out.put_f64(*v));
            e.descriptor.iter().for_each(|v| out.put_f32(*v));
            for c in e.sphere.channels() {
                let block = encode_channel(c);
                out.put_u32(checked_u32(block.len(), "channel block")?);
                out.extend_from_slice(&block);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAP_MAGIC)?;
        let version = r.u16("version")?;
        if version != MAP_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "map file",
                found: version.into(),
                expected: MAP_VERSION.into(),
            });
        }
        let count = r.u32("entry count")? as usize;
        let at = r.offset();
        let dim = r.u16("descriptor dim")? as usize;
        if dim != DESCRIPTOR_DIM {
            return Err(Error::format(at, format!("descriptor dim {dim}, expected {DESCRIPTOR_DIM}")));
        }
        let at = r.offset();
        let bandwidth = r.u16("bandwidth")? as usize;
        if bandwidth == 0 {
            return Err(Error::format(at, "zero bandwidth"));
        }
        let cells = 4 * bandwidth * bandwidth;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let at = r.offset();
            let id = r.u32("entry id")?;
            if id as usize != i {
                return Err(Error::format(at, format!("entry {i} has id {id}")));
            }
            let at = r.offset();
            let raw: [f64; 7] = r.f64_vec(7, "pose")?.try_into().expect("7 values");
            let pose = Pose::from_array(raw).map_err(|e| Error::format(at, e.to_string()))?;
            let descriptor = r.f32_vec(dim, "descriptor")?;
            let mut sphere = FeatureSphere::zeros(bandwidth);
            for ch in sphere.channels_mut() {
                let len = r.u32("channel block length")? as usize;
                let start = r.offset();
                let block = r.take(len, "channel block")?;
                let data = decode_channel(block, cells, start)?;
                *ch = Channel::from_vec(bandwidth, data)?;
            }
            entries.push(PlaceEntry {
                id,
                pose,
                descriptor,
                sphere: Arc::new(sphere),
            });
        }
        r.finish()?;
        if entries.is_empty() {
            return Err(Error::format(8, "map holds no entries"));
        }
        Self::build(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Codec byte, then either raw f32 cells or zero-run tokens
/// `(u32 zeros, u32 literals, literals × f32)`; whichever is shorter.
fn encode_channel(channel: &Channel) -> Vec<u8> {
    let cells: Vec<f32> = channel.as_slice().iter().map(|v| *v as f32).collect();
    let mut runs = vec![CODEC_ZERO_RUNS];
    let mut i = 0;
    while i < cells.len() {
        let z0 = i;
        while i < cells.len() && cells[i].to_bits() == 0 {
            i += 1;
        }
        let l0 = i;
        while i < cells.len() && cells[i].to_bits() != 0 {
            i += 1;
        }
        runs.put_u32((l0 - z0) as u32);
        runs.put_u32((i - l0) as u32);
        cells[l0..i].iter().for_each(|v| runs.put_f32(*v));
    }
    if runs.len() < 1 + 4 * cells.len() {
        return runs;
    }
    let mut raw = Vec::with_capacity(1 + 4 * cells.len());
    raw.put_u8(CODEC_RAW);
    cells.iter().for_each(|v| raw.put_f32(*v));
    raw
}

fn decode_channel(block: &[u8], cells: usize, base: u64) -> Result<Vec<f64>> {
    let mut r = Reader::new(block);
    let relocate = |e: Error| match e {
        Error::Format { offset, message } => Error::format(base + offset, message),
        other => other,
    };
    let codec = r.u8("codec").map_err(relocate)?;
    let out = match codec {
        CODEC_RAW => r.f32_vec(cells, "raw channel").map_err(relocate)?,
        CODEC_ZERO_RUNS => {
            let mut out = Vec::with_capacity(cells);
            while r.remaining() > 0 {
                let zeros = r.u32("zero run").map_err(relocate)? as usize;
                let lits = r.u32("literal run").map_err(relocate)? as usize;
                if out.len() + zeros + lits > cells {
                    return Err(Error::format(base + r.offset(), "zero-run block overflows the grid"));
                }
                out.resize(out.len() + zeros, 0.0);
                out.extend(r.f32_vec(lits, "literals").map_err(relocate)?);
            }
            out
        }
        other => return Err(Error::format(base, format!("unknown channel codec {other}"))),
    };
    r.finish().map_err(relocate)?;
    if out.len() != cells {
        return Err(Error::format(base, format!("channel holds {} cells, expected {cells}", out.len())));
    }
    Ok(out.into_iter().map(f64::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(n: usize, bandwidth: usize, seed: u64) -> PlaceMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| {
                let mut sphere = FeatureSphere::zeros(bandwidth);
                for ch in sphere.channels_mut() {
                    for v in ch.as_mut_slice() {
                        if rng.gen_bool(0.3) {
                            *v = rng.gen_range(-2.0..2.0);
                        }
                    }
                }
                PlaceEntry {
                    id: i as u32,
                    pose: Pose::from_position_yaw(
                        Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.0),
                        rng.gen_range(-3.0..3.0),
                    ),
                    descriptor: (0..DESCRIPTOR_DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                    sphere: Arc::new(sphere),
                }
            })
            .collect();
        PlaceMap::build(entries).unwrap()
    }

    #[test]
    fn query_returns_stored_descriptor() {
        let map = random_map(50, 4, 1);
        let q: Vec<f64> = map.entry(17).descriptor.iter().map(|v| f64::from(*v)).collect();
        let hit = map.knn_query(&q, 1).unwrap();
        assert_eq!((hit[0].index, hit[0].sq_dist), (17, 0.0));
        let all = map.knn_query(&q, 50).unwrap();
        assert_eq!(all.len(), 50);
        assert!(all.windows(2).all(|w| w[0].sq_dist <= w[1].sq_dist));
        assert!(map.knn_query(&q, 0).is_err());
        assert!(map.knn_query(&q, 51).is_err());
        assert!(matches!(map.knn_query(&q[..10], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn duplicates_and_single_entry() {
        let mut map = random_map(3, 2, 2);
        let mut entries = map.entries().to_vec();
        entries[2].descriptor = entries[0].descriptor.clone();
        map = PlaceMap::build(entries).unwrap();
        let q: Vec<f64> = map.entry(0).descriptor.iter().map(|v| f64::from(*v)).collect();
        let ids: Vec<usize> = map.knn_query(&q, 2).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(ids, vec![0, 2]);
        assert_eq!(random_map(1, 2, 3).len(), 1);
        assert!(PlaceMap::build(vec![]).is_err());
    }

    #[test]
    fn save_load_bit_exact() {
        let map = random_map(100, 6, 4);
        let bytes = map.to_bytes().unwrap();
        let back = PlaceMap::from_bytes(&bytes).unwrap();
        assert_eq!(back.entries(), map.entries());
        for (a, b) in back.entries().iter().zip(map.entries()) {
            assert_eq!(a.pose.to_array().map(f64::to_bits), b.pose.to_array().map(f64::to_bits));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn format_errors() {
        let bytes = random_map(5, 4, 5).to_bytes().unwrap();
        for cut in [3, 10, 40, bytes.len() - 1] {
            assert!(matches!(PlaceMap::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            PlaceMap::from_bytes(&v),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(PlaceMap::from_bytes(&m), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn channel_codec_round_trip() {
        let mut c = Channel::zeros(4);
        c.as_mut_slice()[5] = 1.5;
        c.as_mut_slice()[6] = -0.0;
        c.as_mut_slice()[63] = 2.0;
        let enc = encode_channel(&c);
        assert_eq!(enc[0], CODEC_ZERO_RUNS);
        let dec = decode_channel(&enc, 64, 0).unwrap();
        assert_eq!(dec.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let dense = Channel::from_vec(2, (1..=16).map(f64::from).collect()).unwrap();
        let enc = encode_channel(&dense);
        assert_eq!(enc[0], CODEC_RAW);
        assert_eq!(decode_channel(&enc, 16, 0).unwrap(), dense.as_slice());
    }
}
