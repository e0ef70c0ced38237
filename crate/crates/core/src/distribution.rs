//! HPF-style array distributions.
//!
//! A [`RuntimeDescriptor`] describes how a column-major array is spread over
//! a processor grid: each dimension is undistributed, BLOCK(n) or CYCLIC(n).
//! [`build_process_view`] turns it into the access descriptor of one process.
//!
//! Dimension 1 is stored first and varies fastest, so it becomes the leaf
//! level of the descriptor (counts in bytes); the last dimension is the outer
//! level. Processes are numbered from 0 and their grid coordinates vary
//! fastest in the first grid dimension.
//!
//! The flat integer layout is
//! `[a, b_1..b_a, c, d, e, (f_1, f_2, f_3, f_4) per dimension]` with `a` the
//! grid rank, `b_i` the grid extents, `c` the element type code, `d` the
//! element size in bytes, `e` the array rank and per dimension the global
//! length, the local length, the distribution code and its argument.

use alloc::vec;
use alloc::vec::Vec;

use crate::viewdesc::{AccessDesc, BasicBlock};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DistributionError {
    #[error("malformed runtime descriptor: {0}")]
    MalformedDescriptor(&'static str),
    #[error("rank {rank} out of range for {size} processes")]
    RankOutOfRange { rank: u64, size: u64 },
    #[error("distribution {0:?} is not supported")]
    UnsupportedDistribution(DistKind),
    #[error(
        "dimension {dim}: stated local length {stated} but the distribution assigns {derived}"
    )]
    LocalLengthMismatch {
        dim: usize,
        stated: u64,
        derived: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    None,
    Block,
    Cyclic,
    GenBlock,
    Indirect,
}

impl DistKind {
    pub const fn code(self) -> i64 {
        match self {
            DistKind::None => 0,
            DistKind::Block => 1,
            DistKind::Cyclic => 2,
            DistKind::GenBlock => 3,
            DistKind::Indirect => 4,
        }
    }

    pub fn from_code(c: i64) -> Option<DistKind> {
        Some(match c {
            0 => DistKind::None,
            1 => DistKind::Block,
            2 => DistKind::Cyclic,
            3 => DistKind::GenBlock,
            4 => DistKind::Indirect,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimSpec {
    pub global_len: u64,
    /// Elements of this dimension held by the describing process. `None`
    /// lets every rank derive its own.
    pub local_len: Option<u64>,
    pub dist: DistKind,
    pub arg: u64,
}

impl DimSpec {
    pub fn none(global_len: u64) -> Self {
        DimSpec {
            global_len,
            local_len: None,
            dist: DistKind::None,
            arg: global_len,
        }
    }

    pub fn block(global_len: u64, arg: u64) -> Self {
        DimSpec {
            global_len,
            local_len: None,
            dist: DistKind::Block,
            arg,
        }
    }

    pub fn cyclic(global_len: u64, arg: u64) -> Self {
        DimSpec {
            global_len,
            local_len: None,
            dist: DistKind::Cyclic,
            arg,
        }
    }

    pub fn with_local(mut self, local: u64) -> Self {
        self.local_len = Some(local);
        self
    }

    fn distributed(&self) -> bool {
        !matches!(self.dist, DistKind::None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeDescriptor {
    pub grid: Vec<u64>,
    pub elem_type_code: u32,
    pub elem_size: u64,
    pub dims: Vec<DimSpec>,
}

impl RuntimeDescriptor {
    pub fn num_procs(&self) -> u64 {
        self.grid.iter().product()
    }

    pub fn global_elements(&self) -> u64 {
        self.dims.iter().map(|d| d.global_len).product()
    }

    pub fn global_bytes(&self) -> u64 {
        self.global_elements() * self.elem_size
    }

    /// The flat integer layout.
    pub fn to_ints(&self) -> Vec<i64> {
        let mut v = vec![self.grid.len() as i64];
        v.extend(self.grid.iter().map(|&g| g as i64));
        v.push(i64::from(self.elem_type_code));
        v.push(self.elem_size as i64);
        v.push(self.dims.len() as i64);
        for d in &self.dims {
            v.push(d.global_len as i64);
            v.push(d.local_len.map_or(-1, |l| l as i64));
            v.push(d.dist.code());
            v.push(d.arg as i64);
        }
        v
    }

    /// Grid dimension driving each data dimension, `None` for undistributed ones.
    fn grid_dims(&self) -> Result<Vec<Option<usize>>, DistributionError> {
        let n_dist = self.dims.iter().filter(|d| d.distributed()).count();
        if self.grid.len() == self.dims.len() {
            for (d, g) in self.dims.iter().zip(&self.grid) {
                if !d.distributed() && *g != 1 {
                    return Err(DistributionError::MalformedDescriptor(
                        "undistributed dimension mapped onto several processes",
                    ));
                }
            }
            Ok((0..self.dims.len()).map(Some).collect())
        } else if self.grid.len() == n_dist {
            let mut next = 0;
            Ok(self
                .dims
                .iter()
                .map(|d| {
                    d.distributed().then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect())
        } else {
            Err(DistributionError::MalformedDescriptor(
                "grid rank matches neither the array rank nor the distributed dimensions",
            ))
        }
    }

    fn validate(&self) -> Result<(), DistributionError> {
        use DistributionError::MalformedDescriptor as M;
        if self.grid.is_empty() || self.grid.contains(&0) {
            return Err(M("grid extents must be positive"));
        }
        if self.dims.is_empty() || self.elem_size == 0 {
            return Err(M("array rank and element size must be positive"));
        }
        for d in &self.dims {
            if d.global_len == 0 {
                return Err(M("global length must be positive"));
            }
            if matches!(d.dist, DistKind::Block | DistKind::Cyclic) && d.arg == 0 {
                return Err(M("distribution argument must be positive"));
            }
            if d.local_len.is_some_and(|l| l > d.global_len) {
                return Err(M("local length exceeds global length"));
            }
        }
        self.grid_dims().map(|_| ())
    }

    /// Grid coordinates of `rank`; the first grid dimension varies fastest.
    pub fn coords(&self, rank: u64) -> Result<Vec<u64>, DistributionError> {
        let size = self.num_procs();
        if rank >= size {
            return Err(DistributionError::RankOutOfRange { rank, size });
        }
        let mut r = rank;
        Ok(self
            .grid
            .iter()
            .map(|g| {
                let c = r % g;
                r /= g;
                c
            })
            .collect())
    }
}

/// Parses the flat integer layout.
pub fn parse_runtime_descriptor(ints: &[i64]) -> Result<RuntimeDescriptor, DistributionError> {
    use DistributionError::MalformedDescriptor as M;
    let get = |i: usize| ints.get(i).copied().ok_or(M("sequence too short"));
    let nonneg = |v: i64| u64::try_from(v).map_err(|_| M("negative field"));
    let a = nonneg(get(0)?)? as usize;
    if a == 0 || a > 64 {
        return Err(M("grid rank out of range"));
    }
    let mut grid = Vec::with_capacity(a);
    for i in 0..a {
        grid.push(nonneg(get(1 + i)?)?);
    }
    let distance = a + 4;
    let c = u32::try_from(get(a + 1)?).map_err(|_| M("bad element type code"))?;
    let d = nonneg(get(a + 2)?)?;
    let e = nonneg(get(a + 3)?)? as usize;
    if e == 0 || e > 64 {
        return Err(M("array rank out of range"));
    }
    if ints.len() != distance + 4 * e {
        return Err(M("length disagrees with the header"));
    }
    let mut dims = Vec::with_capacity(e);
    for k in 0..e {
        let base = distance + 4 * k;
        let global_len = nonneg(ints[base])?;
        let local_len = match ints[base + 1] {
            -1 => None,
            v => Some(nonneg(v)?),
        };
        let dist = DistKind::from_code(ints[base + 2]).ok_or(M("unknown distribution code"))?;
        let arg = nonneg(ints[base + 3])?;
        dims.push(DimSpec {
            global_len,
            local_len,
            dist,
            arg,
        });
    }
    let rd = RuntimeDescriptor {
        grid,
        elem_type_code: c,
        elem_size: d,
        dims,
    };
    rd.validate()?;
    Ok(rd)
}

/// One process's share of a distributed array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessView {
    pub rank: u64,
    pub coords: Vec<u64>,
    pub descriptor: AccessDesc,
    pub total_bytes: u64,
}

/// Elements of a dimension owned by the process at grid coordinate `coord`.
pub fn local_len(dim: &DimSpec, procs: u64, coord: u64) -> Result<u64, DistributionError> {
    let g = dim.global_len;
    match dim.dist {
        DistKind::None => Ok(g),
        DistKind::Block => Ok(g.saturating_sub(dim.arg * coord).min(dim.arg)),
        DistKind::Cyclic => {
            let b = dim.arg;
            let nblocks = g.div_ceil(b);
            if coord >= nblocks {
                return Ok(0);
            }
            let owned = (nblocks - 1 - coord) / procs + 1;
            let last_owner = (nblocks - 1) % procs;
            if coord == last_owner && !g.is_multiple_of(b) {
                Ok((owned - 1) * b + g % b)
            } else {
                Ok(owned * b)
            }
        }
        other => Err(DistributionError::UnsupportedDistribution(other)),
    }
}

/// The access descriptor of `rank`. Stated local lengths must agree with
/// the distribution.
pub fn build_process_view(
    rd: &RuntimeDescriptor,
    rank: u64,
) -> Result<ProcessView, DistributionError> {
    build(rd, rank, true)
}

fn build(
    rd: &RuntimeDescriptor,
    rank: u64,
    strict: bool,
) -> Result<ProcessView, DistributionError> {
    rd.validate()?;
    let coords = rd.coords(rank)?;
    let gdims = rd.grid_dims()?;
    let mut desc: Option<AccessDesc> = None;
    let mut unit = rd.elem_size;
    for (k, dim) in rd.dims.iter().enumerate() {
        let (procs, coord) = match gdims[k] {
            Some(g) => (rd.grid[g], coords[g]),
            None => (1, 0),
        };
        let derived = local_len(dim, procs, coord)?;
        let local = match dim.local_len {
            Some(l) if strict && l != derived => {
                return Err(DistributionError::LocalLengthMismatch {
                    dim: k,
                    stated: l,
                    derived,
                })
            }
            Some(l) => l,
            None => derived,
        };
        desc = Some(dimension_desc(dim, procs, coord, local, unit, desc));
        unit *= dim.global_len;
    }
    let descriptor = desc.expect("at least one dimension");
    let total_bytes = descriptor.total_actual();
    Ok(ProcessView {
        rank,
        coords,
        descriptor,
        total_bytes,
    })
}

/// Descriptor level for one dimension. `unit` is the byte size of one index
/// step; `inner` is the level below (absent for dimension 1).
fn dimension_desc(
    dim: &DimSpec,
    procs: u64,
    coord: u64,
    local: u64,
    unit: u64,
    inner: Option<AccessDesc>,
) -> AccessDesc {
    let g = dim.global_len;
    // A block of `n` indices; leaf counts are bytes, nested counts instances.
    let block = |offset: u64, repeat: u64, n: u64, stride: u64| match &inner {
        None => BasicBlock::leaf(offset * unit, repeat, n * unit, stride * unit),
        Some(sub) => BasicBlock::nested(offset * unit, repeat, n, stride * unit, sub.clone()),
    };
    if local == 0 {
        return AccessDesc::new(vec![block(0, 1, 0, 0)], g * unit);
    }
    match dim.dist {
        DistKind::None => AccessDesc::new(vec![block(0, g, 1, 0)], 0),
        DistKind::Block => {
            let start = dim.arg * coord;
            let skip = g.saturating_sub(start + local);
            AccessDesc::new(vec![block(start, 1, local, 0)], skip * unit)
        }
        _ => {
            let b = dim.arg;
            let regular = local / b;
            let irregular = local % b;
            let start = coord * b;
            let gap = (procs - 1) * b;
            let mut blocks = Vec::with_capacity(2);
            let mut end = 0;
            if regular > 0 {
                blocks.push(block(start, regular, b, gap));
                end = start + regular * procs * b - gap;
            }
            if irregular > 0 {
                let at = start + regular * procs * b;
                blocks.push(block(at - end, 1, irregular, 0));
                end = at + irregular;
            }
            AccessDesc::new(blocks, g.saturating_sub(end) * unit)
        }
    }
}

/// Result of checking that the process views partition the array.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverReport {
    pub ranks: u64,
    pub file_bytes: u64,
    /// Bytes claimed by more than one rank.
    pub overlap_bytes: u64,
    /// Bytes of the array claimed by no rank.
    pub gap_bytes: u64,
    /// Bytes claimed beyond the end of the array.
    pub out_of_range_bytes: u64,
    /// Ranks whose view could not be built, with the reason.
    pub failures: Vec<(u64, DistributionError)>,
}

impl CoverReport {
    pub fn is_partition(&self) -> bool {
        self.overlap_bytes == 0
            && self.gap_bytes == 0
            && self.out_of_range_bytes == 0
            && self.failures.is_empty()
    }
}

/// Expands every rank's view and checks that they partition the array.
/// Stated local lengths are applied to every rank as given, so a wrong one
/// shows up as overlap, gap or out-of-range bytes.
pub fn cover_check(rd: &RuntimeDescriptor) -> CoverReport {
    let file_bytes = rd.global_bytes();
    let mut report = CoverReport {
        ranks: rd.num_procs(),
        file_bytes,
        ..Default::default()
    };
    let mut runs = Vec::new();
    for rank in 0..rd.num_procs() {
        match build(rd, rank, false) {
            Ok(v) => {
                let total = v.descriptor.total_actual();
                runs.extend(
                    v.descriptor
                        .enumerate_runs(0, 0, total)
                        .into_iter()
                        .map(|r| (r.file_offset, r.end())),
                );
            }
            Err(e) => report.failures.push((rank, e)),
        }
    }
    runs.sort_unstable();
    let mut covered_to = 0u64;
    for (start, end) in runs {
        let end_in = end.min(file_bytes);
        if end > file_bytes {
            report.out_of_range_bytes += end - start.max(file_bytes);
        }
        if start >= file_bytes {
            continue;
        }
        if start > covered_to {
            report.gap_bytes += start - covered_to;
        }
        if start < covered_to {
            report.overlap_bytes += covered_to.min(end_in) - start;
        }
        covered_to = covered_to.max(end_in);
    }
    if covered_to < file_bytes {
        report.gap_bytes += file_bytes - covered_to;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The 14x17 integer array on a 3x4 grid, distributed CYCLIC(3) x BLOCK,
    /// as seen by the process with the given local lengths.
    fn example(local1: i64, local2: i64) -> Vec<i64> {
        vec![2, 3, 4, 4, 4, 2, 14, local1, 2, 3, 17, local2, 1, 5]
    }

    #[test]
    fn parses_example() {
        let rd = parse_runtime_descriptor(&example(3, 5)).unwrap();
        assert_eq!(rd.grid, vec![3, 4]);
        assert_eq!(rd.dims[0].global_len, 14);
        assert_eq!(rd.dims[1].global_len, 17);
        assert_eq!(rd.dims[0].dist, DistKind::Cyclic);
        assert_eq!(rd.to_ints(), example(3, 5));
    }

    #[test]
    fn parses_trivial_and_rejects_truncated() {
        let rd = parse_runtime_descriptor(&[1, 1, 4, 4, 1, 8, 8, 0, 8]).unwrap();
        let v = build_process_view(&rd, 0).unwrap();
        assert_eq!(v.total_bytes, 32);
        assert!(parse_runtime_descriptor(&example(3, 5)[..13]).is_err());
        assert!(parse_runtime_descriptor(&[]).is_err());
    }

    #[test]
    fn third_processor_skips() {
        let rd = parse_runtime_descriptor(&example(3, 5)).unwrap();
        let v = build_process_view(&rd, 2).unwrap();
        assert_eq!(v.coords, vec![2, 0]);
        let d2 = &v.descriptor;
        assert_eq!(d2.skip, 672);
        assert_eq!((d2.blocks[0].repeat, d2.blocks[0].count), (1, 5));
        let d1 = d2.blocks[0].subtype.as_ref().unwrap();
        assert_eq!(d1.skip, 20);
        assert_eq!((d1.blocks[0].offset, d1.blocks[0].count), (24, 12));
        assert_eq!(v.total_bytes, 3 * 5 * 4);
    }

    #[test]
    fn fifth_processor_has_irregular_block() {
        let rd = parse_runtime_descriptor(&example(5, 5)).unwrap();
        let v = build_process_view(&rd, 4).unwrap();
        assert_eq!(v.coords, vec![1, 1]);
        let d1 = v.descriptor.blocks[0].subtype.as_ref().unwrap();
        assert_eq!(d1.no_blocks(), 2);
        assert_eq!((d1.blocks[0].offset, d1.blocks[0].count), (12, 12));
        assert_eq!((d1.blocks[1].offset, d1.blocks[1].count), (24, 8));
        assert_eq!(d1.skip, 0);
    }

    #[test]
    fn block_tail_skip_is_zero() {
        let dim = DimSpec::block(17, 5).with_local(2);
        let d = dimension_desc(&dim, 4, 3, 2, 1, None);
        assert_eq!(d.skip, 0);
        assert_eq!(d.blocks[0].offset, 15);
    }

    #[test]
    fn stated_local_length_is_checked() {
        let rd = parse_runtime_descriptor(&example(3, 5)).unwrap();
        assert!(matches!(
            build_process_view(&rd, 4),
            Err(DistributionError::LocalLengthMismatch { dim: 0, .. })
        ));
        assert!(matches!(
            build_process_view(&rd, 12),
            Err(DistributionError::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn unsupported_kinds() {
        let rd = RuntimeDescriptor {
            grid: vec![2],
            elem_type_code: 4,
            elem_size: 4,
            dims: vec![DimSpec {
                global_len: 8,
                local_len: None,
                dist: DistKind::GenBlock,
                arg: 1,
            }],
        };
        assert!(matches!(
            build_process_view(&rd, 0),
            Err(DistributionError::UnsupportedDistribution(
                DistKind::GenBlock
            ))
        ));
    }

    #[test]
    fn quarters() {
        let rd = RuntimeDescriptor {
            grid: vec![4],
            elem_type_code: 4,
            elem_size: 4,
            dims: vec![DimSpec::block(16, 4)],
        };
        let r = cover_check(&rd);
        assert!(r.is_partition(), "{r:?}");
        for rank in 0..4 {
            let v = build_process_view(&rd, rank).unwrap();
            let runs = v.descriptor.enumerate_runs(0, 0, v.total_bytes);
            assert_eq!(runs.len(), 1);
            assert_eq!(runs[0].file_offset, rank * 16);
            assert_eq!(runs[0].length, 16);
        }
    }

    #[test]
    fn example_partitions() {
        let mut rd = parse_runtime_descriptor(&example(3, 5)).unwrap();
        for d in &mut rd.dims {
            d.local_len = None;
        }
        let r = cover_check(&rd);
        assert_eq!(r.ranks, 12);
        assert!(r.is_partition(), "{r:?}");
    }

    #[test]
    fn wrong_local_length_is_reported() {
        let rd = RuntimeDescriptor {
            grid: vec![4],
            elem_type_code: 4,
            elem_size: 4,
            dims: vec![DimSpec::block(16, 4).with_local(3)],
        };
        let r = cover_check(&rd);
        assert!(!r.is_partition());
        assert_eq!(r.gap_bytes, 16);
        let rd = RuntimeDescriptor {
            grid: vec![4],
            elem_type_code: 4,
            elem_size: 1,
            dims: vec![DimSpec::block(17, 5).with_local(5)],
        };
        let r = cover_check(&rd);
        assert!(r.out_of_range_bytes > 0);
    }
}
