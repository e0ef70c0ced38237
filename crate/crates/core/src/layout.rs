//! Physical placement of logical files and request fragmentation.
//!
//! A [`Layout`] maps every logical byte of a file to a server, a disk and a
//! physical offset in that disk's portion file. It is made of explicit
//! extents covering `[0, fitted)` (static fit from hints) followed by
//! round-robin striping of everything beyond.
//!
//! Servers keep only their own share, a [`LocalPortions`]. The full layout is
//! known to a server only when the file was created from a hint.

use alloc::vec;
use alloc::vec::Vec;

use crate::viewdesc::ByteRun;

pub type ServerId = u32;
pub type DiskId = u32;

/// Placeholder disk id meaning "the owning server's best disk".
pub const BEST_DISK: DiskId = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("assigned byte sets do not partition the file: {0}")]
    NotAPartition(&'static str),
    #[error("striping needs a positive stripe size and at least one target")]
    BadStriping,
    #[error("malformed layout encoding")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extent {
    pub logical: u64,
    pub len: u64,
    pub server: ServerId,
    pub disk: DiskId,
    pub physical: u64,
}

/// A piece of a logical range resolved to its storage location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Piece {
    pub server: ServerId,
    pub disk: DiskId,
    pub logical: u64,
    pub len: u64,
    pub physical: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Sorted, disjoint and covering `[0, fitted)`.
    pub extents: Vec<Extent>,
    pub fitted: u64,
    pub stripe: u64,
    pub targets: Vec<(ServerId, DiskId)>,
    /// Physical offset where each target's striped tail starts.
    pub tail_base: Vec<u64>,
}

impl Layout {
    /// Round-robin striping of the whole file.
    pub fn striped(stripe: u64, targets: Vec<(ServerId, DiskId)>) -> Result<Layout, LayoutError> {
        if stripe == 0 || targets.is_empty() {
            return Err(LayoutError::BadStriping);
        }
        let n = targets.len();
        Ok(Layout {
            extents: Vec::new(),
            fitted: 0,
            stripe,
            targets,
            tail_base: vec![0; n],
        })
    }

    /// Static fit: every `(server, disk, runs)` set is stored contiguously,
    /// in the given order, on its disk. The sets must partition
    /// `[0, file_size)`. Bytes past `file_size` are striped over `targets`.
    pub fn static_fit(
        sets: &[(ServerId, DiskId, Vec<ByteRun>)],
        file_size: u64,
        stripe: u64,
        targets: Vec<(ServerId, DiskId)>,
    ) -> Result<Layout, LayoutError> {
        let mut tail = Layout::striped(stripe, targets)?;
        let mut used: Vec<((ServerId, DiskId), u64)> = Vec::new();
        let mut extents = Vec::new();
        for (server, disk, runs) in sets {
            let key = (*server, *disk);
            let slot = match used.iter().position(|(k, _)| *k == key) {
                Some(i) => i,
                None => {
                    used.push((key, 0));
                    used.len() - 1
                }
            };
            for r in runs.iter().filter(|r| r.length > 0) {
                extents.push(Extent {
                    logical: r.file_offset,
                    len: r.length,
                    server: *server,
                    disk: *disk,
                    physical: used[slot].1,
                });
                used[slot].1 += r.length;
            }
        }
        extents.sort_unstable_by_key(|e| e.logical);
        let mut at = 0;
        for e in &extents {
            if e.logical < at {
                return Err(LayoutError::NotAPartition("overlapping sets"));
            }
            if e.logical > at {
                return Err(LayoutError::NotAPartition("uncovered bytes"));
            }
            at = e.logical + e.len;
        }
        if at != file_size {
            return Err(LayoutError::NotAPartition(
                "sets do not end at the file size",
            ));
        }
        let extents = merge_extents(extents);
        for (i, t) in tail.targets.iter().enumerate() {
            tail.tail_base[i] = used.iter().find(|(k, _)| k == t).map_or(0, |(_, u)| *u);
        }
        tail.extents = extents;
        tail.fitted = file_size;
        Ok(tail)
    }

    /// Resolves a logical range to storage pieces in logical order.
    pub fn pieces(&self, off: u64, len: u64) -> Vec<Piece> {
        let mut out = Vec::new();
        let end = off + len;
        let mut at = off;
        if at < self.fitted {
            let mut i = self.extents.partition_point(|e| e.logical + e.len <= at);
            while at < end.min(self.fitted) && i < self.extents.len() {
                let e = &self.extents[i];
                let stop = end.min(e.logical + e.len);
                out.push(Piece {
                    server: e.server,
                    disk: e.disk,
                    logical: at,
                    len: stop - at,
                    physical: e.physical + (at - e.logical),
                });
                at = stop;
                i += 1;
            }
        }
        let n = self.targets.len() as u64;
        while at < end {
            let y = at - self.fitted;
            let k = y / self.stripe;
            let within = y % self.stripe;
            let t = (k % n) as usize;
            let stop = end.min(at + self.stripe - within);
            let (server, disk) = self.targets[t];
            out.push(Piece {
                server,
                disk,
                logical: at,
                len: stop - at,
                physical: self.tail_base[t] + (k / n) * self.stripe + within,
            });
            at = stop;
        }
        out
    }

    /// The share of `server`.
    pub fn local_view(&self, server: ServerId) -> LocalPortions {
        let extents = self
            .extents
            .iter()
            .filter(|e| e.server == server)
            .copied()
            .collect();
        let stripe_class = self
            .targets
            .iter()
            .position(|t| t.0 == server)
            .map(|i| StripeClass {
                stripe: self.stripe,
                modulus: self.targets.len() as u64,
                residue: i as u64,
                disk: self.targets[i].1,
                phys_base: self.tail_base[i],
            });
        LocalPortions {
            server,
            extents,
            fitted: self.fitted,
            stripe_class,
        }
    }

    pub fn servers(&self) -> Vec<ServerId> {
        let mut s: Vec<ServerId> = self
            .extents
            .iter()
            .map(|e| e.server)
            .chain(self.targets.iter().map(|t| t.0))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_u64(out, self.fitted);
        put_u64(out, self.stripe);
        put_u32(out, self.extents.len() as u32);
        for e in &self.extents {
            put_extent(out, e);
        }
        put_u32(out, self.targets.len() as u32);
        for (i, t) in self.targets.iter().enumerate() {
            put_u32(out, t.0);
            put_u32(out, t.1);
            put_u64(out, self.tail_base[i]);
        }
    }

    pub fn decode(buf: &[u8], pos: &mut usize) -> Result<Layout, LayoutError> {
        let fitted = get_u64(buf, pos)?;
        let stripe = get_u64(buf, pos)?;
        let n = get_count(buf, pos, 32)?;
        let mut extents = Vec::with_capacity(n);
        for _ in 0..n {
            extents.push(get_extent(buf, pos)?);
        }
        let m = get_count(buf, pos, 16)?;
        let mut targets = Vec::with_capacity(m);
        let mut tail_base = Vec::with_capacity(m);
        for _ in 0..m {
            targets.push((get_u32(buf, pos)?, get_u32(buf, pos)?));
            tail_base.push(get_u64(buf, pos)?);
        }
        if stripe == 0 || targets.is_empty() {
            return Err(LayoutError::Malformed);
        }
        Ok(Layout {
            extents,
            fitted,
            stripe,
            targets,
            tail_base,
        })
    }
}

fn merge_extents(extents: Vec<Extent>) -> Vec<Extent> {
    let mut out: Vec<Extent> = Vec::with_capacity(extents.len());
    for e in extents {
        if let Some(last) = out.last_mut() {
            if last.server == e.server
                && last.disk == e.disk
                && last.logical + last.len == e.logical
                && last.physical + last.len == e.physical
            {
                last.len += e.len;
                continue;
            }
        }
        out.push(e);
    }
    out
}

/// The striped tail owned by one server: stripes `k` with `k % modulus == residue`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeClass {
    pub stripe: u64,
    pub modulus: u64,
    pub residue: u64,
    pub disk: DiskId,
    pub phys_base: u64,
}

/// What one server knows about its own portions of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalPortions {
    pub server: ServerId,
    pub extents: Vec<Extent>,
    pub fitted: u64,
    pub stripe_class: Option<StripeClass>,
}

impl LocalPortions {
    /// Splits a logical range into pieces stored here and ranges stored elsewhere.
    pub fn split(&self, off: u64, len: u64) -> (Vec<Piece>, Vec<(u64, u64)>) {
        let mut owned = Vec::new();
        let mut foreign: Vec<(u64, u64)> = Vec::new();
        let mut push_foreign = |a: u64, b: u64| {
            if b > a {
                match foreign.last_mut() {
                    Some(last) if last.0 + last.1 == a => last.1 += b - a,
                    _ => foreign.push((a, b - a)),
                }
            }
        };
        let end = off + len;
        let mut at = off;
        if at < self.fitted {
            let stop_fit = end.min(self.fitted);
            let mut i = self.extents.partition_point(|e| e.logical + e.len <= at);
            while at < stop_fit {
                match self.extents.get(i) {
                    Some(e) if e.logical < stop_fit => {
                        if e.logical > at {
                            push_foreign(at, e.logical);
                            at = e.logical;
                        }
                        let stop = stop_fit.min(e.logical + e.len);
                        owned.push(Piece {
                            server: self.server,
                            disk: e.disk,
                            logical: at,
                            len: stop - at,
                            physical: e.physical + (at - e.logical),
                        });
                        at = stop;
                        i += 1;
                    }
                    _ => {
                        push_foreign(at, stop_fit);
                        at = stop_fit;
                    }
                }
            }
        }
        while at < end {
            let y = at - self.fitted;
            match &self.stripe_class {
                None => {
                    push_foreign(at, end);
                    at = end;
                }
                Some(sc) => {
                    let k = y / sc.stripe;
                    let within = y % sc.stripe;
                    let stop = end.min(at + sc.stripe - within);
                    if k % sc.modulus == sc.residue {
                        owned.push(Piece {
                            server: self.server,
                            disk: sc.disk,
                            logical: at,
                            len: stop - at,
                            physical: sc.phys_base + (k / sc.modulus) * sc.stripe + within,
                        });
                    } else {
                        push_foreign(at, stop);
                    }
                    at = stop;
                }
            }
        }
        (owned, foreign)
    }

    /// Lowest physical offset holding a logical byte at or past `size` on
    /// `disk`, for truncation. `None` when no such byte is stored there.
    pub fn physical_cut(&self, disk: DiskId, size: u64) -> Option<u64> {
        let mut cut: Option<u64> = None;
        let mut take = |p: u64| cut = Some(cut.map_or(p, |c: u64| c.min(p)));
        for e in self.extents.iter().filter(|e| e.disk == disk) {
            if e.logical + e.len > size {
                take(e.physical + size.saturating_sub(e.logical));
            }
        }
        if let Some(sc) = &self.stripe_class {
            if sc.disk == disk {
                let y = size.saturating_sub(self.fitted);
                let k = y / sc.stripe;
                let within = y % sc.stripe;
                let cycle = k / sc.modulus;
                let pos = k % sc.modulus;
                let p = if pos == sc.residue {
                    cycle * sc.stripe + within
                } else if pos < sc.residue {
                    cycle * sc.stripe
                } else {
                    (cycle + 1) * sc.stripe
                };
                take(sc.phys_base + p);
            }
        }
        cut
    }

    pub fn disks(&self) -> Vec<DiskId> {
        let mut d: Vec<DiskId> = self
            .extents
            .iter()
            .map(|e| e.disk)
            .chain(self.stripe_class.iter().map(|s| s.disk))
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Replaces the [`BEST_DISK`] placeholder.
    pub fn resolve_disk(&mut self, best: DiskId) {
        for e in &mut self.extents {
            if e.disk == BEST_DISK {
                e.disk = best;
            }
        }
        if let Some(sc) = &mut self.stripe_class {
            if sc.disk == BEST_DISK {
                sc.disk = best;
            }
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, self.server);
        put_u64(out, self.fitted);
        put_u32(out, self.extents.len() as u32);
        for e in &self.extents {
            put_extent(out, e);
        }
        match &self.stripe_class {
            None => out.push(0),
            Some(sc) => {
                out.push(1);
                put_u64(out, sc.stripe);
                put_u64(out, sc.modulus);
                put_u64(out, sc.residue);
                put_u32(out, sc.disk);
                put_u64(out, sc.phys_base);
            }
        }
    }

    pub fn decode(buf: &[u8], pos: &mut usize) -> Result<LocalPortions, LayoutError> {
        let server = get_u32(buf, pos)?;
        let fitted = get_u64(buf, pos)?;
        let n = get_count(buf, pos, 32)?;
        let mut extents = Vec::with_capacity(n);
        for _ in 0..n {
            extents.push(get_extent(buf, pos)?);
        }
        let flag = *buf.get(*pos).ok_or(LayoutError::Malformed)?;
        *pos += 1;
        let stripe_class = match flag {
            0 => None,
            1 => {
                let sc = StripeClass {
                    stripe: get_u64(buf, pos)?,
                    modulus: get_u64(buf, pos)?,
                    residue: get_u64(buf, pos)?,
                    disk: get_u32(buf, pos)?,
                    phys_base: get_u64(buf, pos)?,
                };
                if sc.stripe == 0 || sc.modulus == 0 || sc.residue >= sc.modulus {
                    return Err(LayoutError::Malformed);
                }
                Some(sc)
            }
            _ => return Err(LayoutError::Malformed),
        };
        Ok(LocalPortions {
            server,
            extents,
            fitted,
            stripe_class,
        })
    }
}

/// A stretch of a request: `len` bytes at `file_offset`, landing at
/// `stream_offset` in the request's packed data stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub file_offset: u64,
    pub len: u64,
    pub stream_offset: u64,
}

/// Assigns stream offsets to consecutive runs.
pub fn segments_of(runs: &[ByteRun]) -> Vec<Segment> {
    let mut at = 0;
    runs.iter()
        .map(|r| {
            let s = Segment {
                file_offset: r.file_offset,
                len: r.length,
                stream_offset: at,
            };
            at += r.length;
            s
        })
        .collect()
}

/// Outcome of splitting a request at one server.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fragment {
    pub local: Vec<Segment>,
    /// Sub-requests for servers known to own the bytes, by server.
    pub directed: Vec<(ServerId, Vec<Segment>)>,
    /// Bytes of unknown ownership, to be sent to every other server.
    pub broadcast: Vec<Segment>,
}

impl Fragment {
    pub fn remote_bytes(&self) -> u64 {
        let d: u64 = self
            .directed
            .iter()
            .flat_map(|(_, s)| s)
            .map(|s| s.len)
            .sum();
        d + self.broadcast.iter().map(|s| s.len).sum::<u64>()
    }

    pub fn local_bytes(&self) -> u64 {
        self.local.iter().map(|s| s.len).sum()
    }
}

/// Splits a request into the locally stored part and sub-requests.
pub fn fragment(segments: &[Segment], local: &LocalPortions, known: Option<&Layout>) -> Fragment {
    let mut f = Fragment::default();
    for seg in segments {
        let (owned, foreign) = local.split(seg.file_offset, seg.len);
        for p in owned {
            push_segment(&mut f.local, at(seg, p.logical, p.len));
        }
        for (off, len) in foreign {
            match known {
                Some(layout) => {
                    for p in layout.pieces(off, len) {
                        let s = at(seg, p.logical, p.len);
                        match f.directed.iter_mut().find(|(srv, _)| *srv == p.server) {
                            Some((_, v)) => push_segment(v, s),
                            None => f.directed.push((p.server, vec![s])),
                        }
                    }
                }
                None => push_segment(&mut f.broadcast, at(seg, off, len)),
            }
        }
    }
    f.directed.sort_unstable_by_key(|(s, _)| *s);
    f
}

fn at(seg: &Segment, off: u64, len: u64) -> Segment {
    Segment {
        file_offset: off,
        len,
        stream_offset: seg.stream_offset + (off - seg.file_offset),
    }
}

fn push_segment(v: &mut Vec<Segment>, s: Segment) {
    if let Some(last) = v.last_mut() {
        if last.file_offset + last.len == s.file_offset
            && last.stream_offset + last.len == s.stream_offset
        {
            last.len += s.len;
            return;
        }
    }
    v.push(s);
}

pub fn encode_segments(segs: &[Segment], out: &mut Vec<u8>) {
    put_u32(out, segs.len() as u32);
    for s in segs {
        put_u64(out, s.file_offset);
        put_u64(out, s.len);
        put_u64(out, s.stream_offset);
    }
}

pub fn decode_segments(buf: &[u8], pos: &mut usize) -> Result<Vec<Segment>, LayoutError> {
    let n = get_count(buf, pos, 24)?;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let file_offset = get_u64(buf, pos)?;
        let len = get_u64(buf, pos)?;
        let stream_offset = get_u64(buf, pos)?;
        if file_offset.checked_add(len).is_none() || stream_offset.checked_add(len).is_none() {
            return Err(LayoutError::Malformed);
        }
        v.push(Segment {
            file_offset,
            len,
            stream_offset,
        });
    }
    Ok(v)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_extent(out: &mut Vec<u8>, e: &Extent) {
    put_u64(out, e.logical);
    put_u64(out, e.len);
    put_u32(out, e.server);
    put_u32(out, e.disk);
    put_u64(out, e.physical);
}

fn get_u32(buf: &[u8], pos: &mut usize) -> Result<u32, LayoutError> {
    let b = buf.get(*pos..*pos + 4).ok_or(LayoutError::Malformed)?;
    *pos += 4;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn get_u64(buf: &[u8], pos: &mut usize) -> Result<u64, LayoutError> {
    let b = buf.get(*pos..*pos + 8).ok_or(LayoutError::Malformed)?;
    *pos += 8;
    let mut a = [0u8; 8];
    a.copy_from_slice(b);
    Ok(u64::from_le_bytes(a))
}

/// Reads an element count and checks that the input can hold that many
/// items of `item` bytes.
fn get_count(buf: &[u8], pos: &mut usize, item: usize) -> Result<usize, LayoutError> {
    let n = get_u32(buf, pos)? as usize;
    if n > (buf.len() - *pos) / item {
        return Err(LayoutError::Malformed);
    }
    Ok(n)
}

fn get_extent(buf: &[u8], pos: &mut usize) -> Result<Extent, LayoutError> {
    Ok(Extent {
        logical: get_u64(buf, pos)?,
        len: get_u64(buf, pos)?,
        server: get_u32(buf, pos)?,
        disk: get_u32(buf, pos)?,
        physical: get_u64(buf, pos)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> Layout {
        Layout::striped(100, (0..4).map(|s| (s, 0)).collect()).unwrap()
    }

    #[test]
    fn striping_pieces() {
        let l = four();
        let p = l.pieces(150, 300);
        let servers: Vec<u32> = p.iter().map(|p| p.server).collect();
        assert_eq!(servers, vec![1, 2, 3, 0]);
        assert_eq!(p[0].physical, 50);
        assert_eq!(p[3].physical, 100);
        assert_eq!(p.iter().map(|p| p.len).sum::<u64>(), 300);
    }

    #[test]
    fn local_split_matches_global_pieces() {
        let l = four();
        for s in 0..4 {
            let lv = l.local_view(s);
            let (owned, _) = lv.split(0, 1000);
            let expect: Vec<Piece> = l
                .pieces(0, 1000)
                .into_iter()
                .filter(|p| p.server == s)
                .collect();
            assert_eq!(owned, expect);
        }
    }

    #[test]
    fn fully_local_file() {
        let l = Layout::striped(64, vec![(0, 0)]).unwrap();
        let segs = segments_of(&[ByteRun::new(0, 1000)]);
        let f = fragment(&segs, &l.local_view(0), None);
        assert_eq!(f.local_bytes(), 1000);
        assert!(f.directed.is_empty() && f.broadcast.is_empty());
    }

    #[test]
    fn known_layout_gives_directed_requests() {
        let l = four();
        let segs = segments_of(&[ByteRun::new(0, 800)]);
        let f = fragment(&segs, &l.local_view(0), Some(&l));
        assert_eq!(f.directed.len(), 3);
        assert!(f.broadcast.is_empty());
        assert_eq!(f.local_bytes() + f.remote_bytes(), 800);
        let unknown = fragment(&segs, &l.local_view(0), None);
        assert!(unknown.directed.is_empty());
        assert_eq!(unknown.broadcast.len(), 2);
        assert_eq!(unknown.remote_bytes(), 600);
    }

    #[test]
    fn static_fit_is_contiguous_per_set() {
        let sets = vec![
            (0, 0, vec![ByteRun::new(0, 4), ByteRun::new(8, 4)]),
            (1, 0, vec![ByteRun::new(4, 4), ByteRun::new(12, 4)]),
        ];
        let l = Layout::static_fit(&sets, 16, 8, vec![(0, 0), (1, 0)]).unwrap();
        let p = l.pieces(0, 16);
        assert_eq!(
            p.iter().map(|p| (p.server, p.physical)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 0), (0, 4), (1, 4)]
        );
        // the striped tail starts after the fitted bytes
        let t = l.pieces(16, 8);
        assert_eq!((t[0].server, t[0].physical), (0, 8));
        let bad = vec![(0, 0, vec![ByteRun::new(0, 4)])];
        assert!(Layout::static_fit(&bad, 8, 8, vec![(0, 0)]).is_err());
    }

    #[test]
    fn physical_cut_for_truncation() {
        let l = four();
        let lv = l.local_view(1);
        // logical 250 lies in stripe 2 (server 2); server 1's next byte is stripe 5
        assert_eq!(lv.physical_cut(0, 250), Some(100));
        assert_eq!(lv.physical_cut(0, 120), Some(20));
        assert_eq!(lv.physical_cut(0, 50), Some(0));
    }

    #[test]
    fn encodings_round_trip() {
        let sets = vec![(2, 1, vec![ByteRun::new(0, 10)])];
        let l = Layout::static_fit(&sets, 10, 8, vec![(0, 0), (2, 1)]).unwrap();
        let mut buf = Vec::new();
        l.encode_into(&mut buf);
        let mut pos = 0;
        assert_eq!(Layout::decode(&buf, &mut pos).unwrap(), l);
        let lv = l.local_view(2);
        let mut buf = Vec::new();
        lv.encode_into(&mut buf);
        let mut pos = 0;
        assert_eq!(LocalPortions::decode(&buf, &mut pos).unwrap(), lv);
        assert_eq!(pos, buf.len());
        let segs = segments_of(&[ByteRun::new(5, 3), ByteRun::new(20, 2)]);
        let mut buf = Vec::new();
        encode_segments(&segs, &mut buf);
        let mut pos = 0;
        assert_eq!(decode_segments(&buf, &mut pos).unwrap(), segs);
        assert!(decode_segments(&buf[..buf.len() - 1], &mut 0).is_err());
    }
}
