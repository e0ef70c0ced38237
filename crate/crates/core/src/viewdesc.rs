//! Recursive access descriptors.
//!
//! An [`AccessDesc`] is a list of [`BasicBlock`]s followed by a `skip`. Each
//! block skips `offset` bytes, then repeats `repeat` times a pattern of
//! `count` units followed by a gap of `stride` bytes (the gap after the last
//! repetition is not part of the block). A unit is a byte for leaf blocks and
//! one instance of `subtype` otherwise; instances of a subtype are laid out
//! back to back, each taking the subtype's extent.
//!
//! A view tiles its descriptor over the file starting at a displacement, so
//! a view offset past the accessible bytes of one period wraps into the next.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::datatypes::{BaseType, DatatypeError, DatatypeTree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ViewError {
    #[error("etype {etype} does not match the filetype's element type")]
    EtypeMismatch { etype: BaseType },
    #[error("{bytes} bytes is not a multiple of the {etype} extent")]
    NotAligned { bytes: u64, etype: BaseType },
    #[error("malformed descriptor encoding: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Datatype(#[from] DatatypeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub offset: u64,
    pub repeat: u64,
    pub count: u64,
    pub stride: u64,
    pub subtype: Option<Box<AccessDesc>>,
    /// Extent of one subtype instance; 1 for leaf blocks.
    pub sub_count: u64,
    /// Accessible bytes of one subtype instance; 1 for leaf blocks.
    pub sub_actual: u64,
}

impl BasicBlock {
    /// A block of `count` bytes repeated `repeat` times with `stride` gaps.
    pub fn leaf(offset: u64, repeat: u64, count: u64, stride: u64) -> Self {
        BasicBlock {
            offset,
            repeat,
            count,
            stride: if repeat == 1 { 0 } else { stride },
            subtype: None,
            sub_count: 1,
            sub_actual: 1,
        }
    }

    /// A block of `count` instances of `sub`.
    pub fn nested(offset: u64, repeat: u64, count: u64, stride: u64, sub: AccessDesc) -> Self {
        BasicBlock {
            offset,
            repeat,
            count,
            stride: if repeat == 1 { 0 } else { stride },
            subtype: Some(Box::new(sub)),
            sub_count: 0,
            sub_actual: 0,
        }
    }

    fn span(&self) -> u64 {
        self.count * self.sub_count + self.stride
    }

    fn rep_actual(&self) -> u64 {
        self.count * self.sub_actual
    }

    fn actual(&self) -> u64 {
        self.repeat * self.rep_actual()
    }

    /// Bytes from the end of the previous block to the end of this one.
    fn extent(&self) -> u64 {
        self.offset + self.repeat * self.span() - self.stride
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessDesc {
    pub skip: u64,
    pub blocks: Vec<BasicBlock>,
    total_extent: u64,
    total_actual: u64,
}

impl AccessDesc {
    /// Builds a descriptor and fills its counts.
    pub fn new(blocks: Vec<BasicBlock>, skip: u64) -> Self {
        let mut d = AccessDesc {
            skip,
            blocks,
            total_extent: 0,
            total_actual: 0,
        };
        d.fill_counts();
        d
    }

    pub fn no_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Populates `sub_count`/`sub_actual` bottom-up and returns
    /// `(total_extent, total_actual)` of one period.
    pub fn fill_counts(&mut self) -> (u64, u64) {
        let mut extent = 0;
        let mut actual = 0;
        for b in &mut self.blocks {
            match &mut b.subtype {
                Some(sub) => {
                    let (e, a) = sub.fill_counts();
                    b.sub_count = e;
                    b.sub_actual = a;
                }
                None => {
                    b.sub_count = 1;
                    b.sub_actual = 1;
                }
            }
            extent += b.extent();
            actual += b.actual();
        }
        extent += self.skip;
        self.total_extent = extent;
        self.total_actual = actual;
        (extent, actual)
    }

    pub fn total_extent(&self) -> u64 {
        self.total_extent
    }

    pub fn total_actual(&self) -> u64 {
        self.total_actual
    }

    /// True when one period has no holes.
    pub fn is_contiguous(&self) -> bool {
        self.total_actual == self.total_extent
    }

    /// Absolute byte position (relative to the view displacement) of view
    /// byte `view_offset`. Returns `None` for a view with no accessible bytes.
    pub fn absolute_offset(&self, view_offset: u64) -> Option<u64> {
        if self.total_actual == 0 {
            return None;
        }
        let wraps = view_offset / self.total_actual;
        Some(wraps * self.total_extent + self.locate(view_offset % self.total_actual))
    }

    fn locate(&self, mut k: u64) -> u64 {
        let mut pos = 0;
        for b in &self.blocks {
            pos += b.offset;
            let actual = b.actual();
            if k < actual {
                let rep = k / b.rep_actual();
                k -= rep * b.rep_actual();
                pos += rep * b.span();
                return match &b.subtype {
                    None => pos + k,
                    Some(sub) => {
                        let inst = k / b.sub_actual;
                        pos + inst * b.sub_count + sub.locate(k % b.sub_actual)
                    }
                };
            }
            k -= actual;
            pos += b.repeat * b.span() - b.stride;
        }
        pos
    }

    /// Byte runs covering `length` accessible bytes starting at view byte
    /// `view_start`, shifted by `disp`. Adjacent runs are merged. A view with
    /// no accessible bytes yields no runs.
    pub fn enumerate_runs(&self, disp: u64, view_start: u64, length: u64) -> Vec<ByteRun> {
        let mut out = RunSink::default();
        if length == 0 || self.total_actual == 0 {
            return out.runs;
        }
        if self.is_contiguous() {
            out.push(disp + view_start, length);
            return out.runs;
        }
        let mut period = view_start / self.total_actual;
        let mut skip = view_start % self.total_actual;
        let mut left = length;
        while left > 0 {
            self.walk(
                disp + period * self.total_extent,
                &mut skip,
                &mut left,
                &mut out,
            );
            period += 1;
        }
        out.runs
    }

    fn walk(&self, base: u64, skip: &mut u64, left: &mut u64, out: &mut RunSink) {
        let mut pos = base;
        for b in &self.blocks {
            if *left == 0 {
                return;
            }
            pos += b.offset;
            let actual = b.actual();
            if *skip >= actual {
                *skip -= actual;
                pos += b.repeat * b.span() - b.stride;
                continue;
            }
            let first = *skip / b.rep_actual();
            *skip -= first * b.rep_actual();
            for r in first..b.repeat {
                if *left == 0 {
                    break;
                }
                let rep_base = pos + r * b.span();
                match &b.subtype {
                    None => {
                        let take = (b.count - *skip).min(*left);
                        out.push(rep_base + *skip, take);
                        *left -= take;
                        *skip = 0;
                    }
                    Some(sub) => {
                        let i0 = *skip / b.sub_actual;
                        *skip -= i0 * b.sub_actual;
                        for i in i0..b.count {
                            if *left == 0 {
                                break;
                            }
                            sub.walk(rep_base + i * b.sub_count, skip, left, out);
                        }
                    }
                }
            }
            pos += b.repeat * b.span() - b.stride;
        }
    }

    /// Number of accessible bytes whose position (relative to the
    /// displacement) is below `limit`.
    pub fn count_below(&self, limit: u64) -> u64 {
        if self.total_extent == 0 {
            return 0;
        }
        let full = limit / self.total_extent;
        full * self.total_actual + self.partial_below(limit - full * self.total_extent)
    }

    fn partial_below(&self, lim: u64) -> u64 {
        let mut pos = 0;
        let mut acc = 0;
        for b in &self.blocks {
            pos += b.offset;
            if lim <= pos {
                return acc;
            }
            let end = pos + b.repeat * b.span() - b.stride;
            if lim >= end || b.rep_actual() == 0 {
                acc += if lim >= end { b.actual() } else { 0 };
                if lim < end {
                    return acc;
                }
                pos = end;
                continue;
            }
            let r = ((lim - pos) / b.span()).min(b.repeat - 1);
            acc += r * b.rep_actual();
            let rb = pos + r * b.span();
            let within = lim - rb;
            match &b.subtype {
                None => acc += b.count.min(within),
                Some(sub) => {
                    let i = (within / b.sub_count).min(b.count);
                    acc += i * b.sub_actual;
                    if i < b.count {
                        acc += sub.partial_below(within - i * b.sub_count);
                    }
                }
            }
            return acc;
        }
        acc
    }

    /// Canonical binary form: depth-first; per node `no_blocks` (u32) and
    /// `skip` (u64); per block `offset`, `repeat`, `count`, `stride`,
    /// `sub_count` (u64 each) and a subtype presence byte, followed by the
    /// subtype node when present. All little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.skip.to_le_bytes());
        for b in &self.blocks {
            for v in [b.offset, b.repeat, b.count, b.stride, b.sub_count] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            match &b.subtype {
                Some(sub) => {
                    out.push(1);
                    sub.encode_into(out);
                }
                None => out.push(0),
            }
        }
    }

    /// Decodes the canonical binary form, returning the descriptor and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(AccessDesc, usize), ViewError> {
        let mut pos = 0;
        let d = Self::decode_node(buf, &mut pos, 0)?;
        Ok((d, pos))
    }

    fn decode_node(buf: &[u8], pos: &mut usize, depth: usize) -> Result<AccessDesc, ViewError> {
        const MAX_DEPTH: usize = 64;
        const BLOCK_BYTES: usize = 41;
        if depth > MAX_DEPTH {
            return Err(ViewError::Malformed("nesting too deep"));
        }
        let n = read_u32(buf, pos)? as usize;
        let skip = read_u64(buf, pos)?;
        if n == 0 {
            return Err(ViewError::Malformed("node without blocks"));
        }
        if n > (buf.len() - *pos) / BLOCK_BYTES {
            return Err(ViewError::Malformed("block count exceeds input"));
        }
        let mut blocks = Vec::with_capacity(n);
        let mut expected = Vec::with_capacity(n);
        for _ in 0..n {
            let offset = read_u64(buf, pos)?;
            let repeat = read_u64(buf, pos)?;
            let count = read_u64(buf, pos)?;
            let stride = read_u64(buf, pos)?;
            let sub_count = read_u64(buf, pos)?;
            let flag = *buf.get(*pos).ok_or(ViewError::Malformed("truncated"))?;
            *pos += 1;
            if repeat == 0 {
                return Err(ViewError::Malformed("repeat must be at least 1"));
            }
            if repeat == 1 && stride != 0 {
                return Err(ViewError::Malformed("stride without repetition"));
            }
            let subtype = match flag {
                0 => None,
                1 => Some(Box::new(Self::decode_node(buf, pos, depth + 1)?)),
                _ => return Err(ViewError::Malformed("bad subtype flag")),
            };
            expected.push(sub_count);
            blocks.push(BasicBlock {
                offset,
                repeat,
                count,
                stride,
                subtype,
                sub_count: 0,
                sub_actual: 0,
            });
        }
        let d = AccessDesc::checked(blocks, skip)?;
        if d.blocks
            .iter()
            .zip(&expected)
            .any(|(b, e)| b.sub_count != *e)
        {
            return Err(ViewError::Malformed("sub_count disagrees with subtype"));
        }
        Ok(d)
    }

    /// Like [`new`](Self::new) but rejects sizes that overflow 64 bits.
    fn checked(blocks: Vec<BasicBlock>, skip: u64) -> Result<AccessDesc, ViewError> {
        let mut extent: u64 = skip;
        let mut actual: u64 = 0;
        let overflow = ViewError::Malformed("sizes overflow");
        let mut blocks = blocks;
        for b in &mut blocks {
            let (sc, sa) = match &b.subtype {
                Some(s) => (s.total_extent, s.total_actual),
                None => (1, 1),
            };
            b.sub_count = sc;
            b.sub_actual = sa;
            let span = b
                .count
                .checked_mul(sc)
                .and_then(|x| x.checked_add(b.stride))
                .ok_or(overflow.clone())?;
            let ext = span
                .checked_mul(b.repeat)
                .and_then(|x| x.checked_add(b.offset))
                .ok_or(overflow.clone())?
                - b.stride;
            let act = b
                .count
                .checked_mul(sa)
                .and_then(|x| x.checked_mul(b.repeat))
                .ok_or(overflow.clone())?;
            extent = extent.checked_add(ext).ok_or(overflow.clone())?;
            actual = actual.checked_add(act).ok_or(overflow.clone())?;
        }
        Ok(AccessDesc {
            skip,
            blocks,
            total_extent: extent,
            total_actual: actual,
        })
    }
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, ViewError> {
    let b = buf
        .get(*pos..*pos + 4)
        .ok_or(ViewError::Malformed("truncated"))?;
    *pos += 4;
    Ok(u32::from_le_bytes(b.try_into().unwrap_or([0; 4])))
}

fn read_u64(buf: &[u8], pos: &mut usize) -> Result<u64, ViewError> {
    let b = buf
        .get(*pos..*pos + 8)
        .ok_or(ViewError::Malformed("truncated"))?;
    *pos += 8;
    Ok(u64::from_le_bytes(b.try_into().unwrap_or([0; 8])))
}

/// A contiguous stretch of file bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ByteRun {
    pub file_offset: u64,
    pub length: u64,
}

impl ByteRun {
    pub fn new(file_offset: u64, length: u64) -> Self {
        ByteRun {
            file_offset,
            length,
        }
    }

    pub fn end(&self) -> u64 {
        self.file_offset + self.length
    }
}

#[derive(Default)]
struct RunSink {
    runs: Vec<ByteRun>,
}

impl RunSink {
    fn push(&mut self, off: u64, len: u64) {
        if len == 0 {
            return;
        }
        if let Some(last) = self.runs.last_mut() {
            if last.end() == off {
                last.length += len;
                return;
            }
        }
        self.runs.push(ByteRun::new(off, len));
    }
}

/// Builds the descriptor of a datatype and reports whether it has holes.
pub fn build_descriptor(t: &DatatypeTree) -> Result<(AccessDesc, bool), DatatypeError> {
    let n = t.normalize()?;
    let d = describe(&n);
    let contiguous = d.is_contiguous();
    Ok((d, contiguous))
}

/// Descriptor of a normalized tree.
fn describe(t: &DatatypeTree) -> AccessDesc {
    use DatatypeTree as T;
    // One block of `n` units of `child`; units are bytes when the child is basic.
    fn unit_block(
        offset: u64,
        repeat: u64,
        n: u64,
        stride: u64,
        child: &DatatypeTree,
    ) -> BasicBlock {
        match child {
            T::Base(b) => BasicBlock::leaf(offset, repeat, n * b.extent(), stride),
            other => BasicBlock::nested(offset, repeat, n, stride, describe(other)),
        }
    }
    match t {
        T::Base(b) => AccessDesc::new(vec![BasicBlock::leaf(0, 1, b.extent(), 0)], 0),
        T::Contiguous { count, child } => {
            AccessDesc::new(vec![unit_block(0, 1, *count, 0, child)], 0)
        }
        T::HVector {
            count,
            blocklen,
            stride,
            child,
        } => {
            let gap = if *count > 1 {
                stride - blocklen * child.extent()
            } else {
                0
            };
            AccessDesc::new(vec![unit_block(0, *count, *blocklen, gap, child)], 0)
        }
        T::HIndexed {
            blocklens,
            displs,
            child,
        } => {
            let e = child.extent();
            let blocks = (0..blocklens.len())
                .map(|i| {
                    let off = if i == 0 {
                        displs[0]
                    } else {
                        displs[i] - blocklens[i - 1] * e - displs[i - 1]
                    };
                    unit_block(off, 1, blocklens[i], 0, child)
                })
                .collect();
            AccessDesc::new(blocks, 0)
        }
        T::Struct {
            blocklens,
            displs,
            children,
        } => {
            let blocks = (0..blocklens.len())
                .map(|i| {
                    let off = if i == 0 {
                        displs[0]
                    } else {
                        displs[i] - blocklens[i - 1] * children[i - 1].extent() - displs[i - 1]
                    };
                    unit_block(off, 1, blocklens[i], 0, &children[i])
                })
                .collect();
            AccessDesc::new(blocks, 0)
        }
        T::Bounded {
            disp,
            extent,
            child,
        } => match child {
            Some(c) => {
                let skip = extent - disp - c.extent();
                AccessDesc::new(vec![unit_block(*disp, 1, 1, 0, c)], skip)
            }
            None => AccessDesc::new(vec![BasicBlock::leaf(0, 1, 0, 0)], *extent),
        },
        T::Vector { .. } | T::Indexed { .. } | T::Subarray { .. } | T::Darray { .. } => {
            describe(&t.normalize().expect("normalized tree"))
        }
    }
}

pub fn byte_to_etype(n: u64, et: BaseType) -> Result<u64, ViewError> {
    if !n.is_multiple_of(et.extent()) {
        return Err(ViewError::NotAligned {
            bytes: n,
            etype: et,
        });
    }
    Ok(n / et.extent())
}

pub fn etype_to_byte(n: u64, et: BaseType) -> u64 {
    n * et.extent()
}

/// A file view: a descriptor tiled from byte `disp`, counted in `etype` units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    pub disp: u64,
    pub etype: BaseType,
    pub desc: AccessDesc,
    pub contiguous: bool,
}

impl View {
    /// The default view: every byte from `disp` on.
    pub fn bytes(disp: u64) -> View {
        View {
            disp,
            etype: BaseType::Byte,
            desc: describe(&DatatypeTree::Base(BaseType::Byte)),
            contiguous: true,
        }
    }

    pub fn new(disp: u64, etype: BaseType, filetype: &DatatypeTree) -> Result<View, ViewError> {
        match filetype.uniform_element_type() {
            Ok(et) if et == etype => {}
            Ok(_) | Err(DatatypeError::HeterogeneousLeaves) => {
                return Err(ViewError::EtypeMismatch { etype })
            }
            Err(e) => return Err(e.into()),
        }
        let (desc, contiguous) = build_descriptor(filetype)?;
        Ok(View {
            disp,
            etype,
            desc,
            contiguous,
        })
    }

    pub fn from_desc(disp: u64, etype: BaseType, desc: AccessDesc) -> View {
        let contiguous = desc.is_contiguous();
        View {
            disp,
            etype,
            desc,
            contiguous,
        }
    }

    pub fn runs(&self, view_start: u64, length: u64) -> Vec<ByteRun> {
        if self.contiguous {
            if length == 0 {
                return Vec::new();
            }
            return vec![ByteRun::new(self.disp + view_start, length)];
        }
        self.desc.enumerate_runs(self.disp, view_start, length)
    }

    /// Absolute file offset of view byte `view_offset`.
    pub fn byte_offset(&self, view_offset: u64) -> Option<u64> {
        if self.contiguous {
            return Some(self.disp + view_offset);
        }
        self.desc
            .absolute_offset(view_offset)
            .map(|o| o + self.disp)
    }

    /// Number of view bytes that lie in a file of `file_size` bytes.
    pub fn len_within(&self, file_size: u64) -> u64 {
        if file_size <= self.disp {
            return 0;
        }
        if self.contiguous {
            return file_size - self.disp;
        }
        self.desc.count_below(file_size - self.disp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datatypes::DatatypeTree as T;

    fn worked() -> AccessDesc {
        let inner = AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0);
        AccessDesc::new(vec![BasicBlock::nested(0, 3, 2, 20, inner)], 0)
    }

    #[test]
    fn worked_counts() {
        let mut inner = AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0);
        assert_eq!(inner.fill_counts(), (15, 10));
        let mut d = worked();
        assert_eq!(d.fill_counts(), (130, 60));
        let mut leaf = AccessDesc::new(vec![BasicBlock::leaf(0, 1, 7, 0)], 0);
        assert_eq!(leaf.fill_counts(), (7, 7));
    }

    #[test]
    fn worked_absolute_offsets() {
        let d = worked();
        assert_eq!(d.absolute_offset(23), Some(53));
        assert_eq!(d.absolute_offset(0), Some(0));
        assert_eq!(d.absolute_offset(60), Some(130));
    }

    #[test]
    fn leading_offset_at_zero() {
        let d = AccessDesc::new(vec![BasicBlock::leaf(7, 1, 3, 0)], 2);
        assert_eq!(d.absolute_offset(0), Some(7));
        assert_eq!(d.total_extent(), 12);
    }

    #[test]
    fn hvector_stride_gap() {
        let (d, c) = build_descriptor(&T::hvector(2, 5, 40, T::Base(BaseType::Int))).unwrap();
        assert!(!c);
        assert_eq!(d.blocks.len(), 1);
        let b = &d.blocks[0];
        assert_eq!((b.repeat, b.count, b.stride), (2, 20, 20));
    }

    #[test]
    fn hindexed_gap() {
        let t = T::hindexed(vec![1, 2, 3], vec![0, 20, 40], T::Base(BaseType::Int));
        let (d, _) = build_descriptor(&t).unwrap();
        let offs: Vec<u64> = d.blocks.iter().map(|b| b.offset).collect();
        assert_eq!(offs, vec![0, 16, 12]);
    }

    #[test]
    fn struct_offsets() {
        let t = T::structure(
            vec![3, 2, 16],
            vec![0, 20, 60],
            vec![
                T::Base(BaseType::Int),
                T::Base(BaseType::Double),
                T::Base(BaseType::Char),
            ],
        );
        let (d, _) = build_descriptor(&t).unwrap();
        let offs: Vec<u64> = d.blocks.iter().map(|b| b.offset).collect();
        assert_eq!(offs, vec![0, 8, 24]);
        let counts: Vec<u64> = d.blocks.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![12, 16, 16]);
    }

    #[test]
    fn vector_runs() {
        let (d, _) = build_descriptor(&T::vector(3, 2, 3, T::Base(BaseType::Byte))).unwrap();
        assert_eq!(
            d.enumerate_runs(0, 0, 6),
            vec![ByteRun::new(0, 2), ByteRun::new(3, 2), ByteRun::new(6, 2)]
        );
        assert_eq!(
            d.enumerate_runs(0, 1, 3),
            vec![ByteRun::new(1, 1), ByteRun::new(3, 2)]
        );
        // the second period starts at the extent, 8, so bytes 7..10 of the view abut
        assert_eq!(d.enumerate_runs(10, 5, 3), vec![ByteRun::new(17, 3)]);
    }

    #[test]
    fn contiguous_runs() {
        let (d, c) = build_descriptor(&T::contiguous(4, T::Base(BaseType::Int))).unwrap();
        assert!(c);
        assert_eq!(d.enumerate_runs(0, 0, 100), vec![ByteRun::new(0, 100)]);
    }

    #[test]
    fn empty_bounded_node() {
        let t = T::Bounded {
            disp: 0,
            extent: 16,
            child: None,
        };
        let (d, c) = build_descriptor(&t).unwrap();
        assert!(!c);
        assert_eq!((d.total_extent(), d.total_actual()), (16, 0));
        assert_eq!(d.absolute_offset(3), None);
        assert!(d.enumerate_runs(0, 0, 10).is_empty());
        assert_eq!(d.count_below(100), 0);
    }

    #[test]
    fn count_below_matches_worked_layout() {
        let d = worked();
        // accessible: 0-4, 10-19, 25-29 | 50-54, 60-69, 75-79 | 100-...
        assert_eq!(d.count_below(5), 5);
        assert_eq!(d.count_below(12), 7);
        assert_eq!(d.count_below(50), 20);
        assert_eq!(d.count_below(130), 60);
        assert_eq!(d.count_below(133), 63);
    }

    #[test]
    fn etype_conversion() {
        assert_eq!(byte_to_etype(80, BaseType::Double), Ok(10));
        assert_eq!(byte_to_etype(0, BaseType::Int), Ok(0));
        assert!(byte_to_etype(10, BaseType::Int).is_err());
        assert_eq!(etype_to_byte(3, BaseType::Long), 24);
    }

    #[test]
    fn binary_round_trip() {
        let d = worked();
        let bytes = d.encode();
        let (back, used) = AccessDesc::decode(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(used, bytes.len());
        assert!(AccessDesc::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[12 + 32] = 9; // sub_count of the outer block
        assert!(AccessDesc::decode(&bad).is_err());
    }

    #[test]
    fn view_etype_check() {
        let ft = T::vector(10, 2, 10, T::Base(BaseType::Int));
        let v = View::new(0, BaseType::Int, &ft).unwrap();
        assert!(!v.contiguous);
        assert!(matches!(
            View::new(0, BaseType::Double, &ft),
            Err(ViewError::EtypeMismatch { .. })
        ));
        let c = View::new(4, BaseType::Int, &T::contiguous(5, T::Base(BaseType::Int))).unwrap();
        assert!(c.contiguous);
        assert_eq!(c.runs(8, 4), vec![ByteRun::new(12, 4)]);
        assert_eq!(c.len_within(10), 6);
    }
}
