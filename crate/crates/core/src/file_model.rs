//! Sequential record files with mapping functions.
//!
//! This is the formal model every byte path is checked against. Record
//! indices are 1-based here; everything outside this module speaks 0-based
//! byte offsets.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("seek target lies beyond the end of the view")]
    OutOfView,
    #[error("handle is not open for reading")]
    NotReadable,
    #[error("handle is not open for writing")]
    NotWritable,
    #[error("no records can be read")]
    Exhausted,
    #[error("buffer holds fewer records than requested")]
    BufferTooShort,
    #[error("record sizes differ")]
    RecordSizeMismatch,
    #[error("mapping index {0} lies beyond the file")]
    IndexBeyondFile(usize),
    #[error("record count must be at least one")]
    ZeroCount,
}

/// A record; the empty record is `nil`.
pub type Record = Vec<u8>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelFile {
    records: Vec<Record>,
}

impl ModelFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a file from records. All records must share one non-zero size.
    pub fn from_records(records: Vec<Record>) -> Result<Self, ModelError> {
        check_homogeneous(&records, None)?;
        Ok(Self { records })
    }

    /// Splits `bytes` into records of `record_size` bytes. A trailing partial
    /// record is rejected.
    pub fn from_bytes(bytes: &[u8], record_size: usize) -> Result<Self, ModelError> {
        if record_size == 0 || !bytes.len().is_multiple_of(record_size) {
            return Err(ModelError::RecordSizeMismatch);
        }
        Ok(Self {
            records: bytes.chunks(record_size).map(|c| c.to_vec()).collect(),
        })
    }

    pub fn flen(&self) -> usize {
        self.records.len()
    }

    pub fn record_size(&self) -> Option<usize> {
        self.records.first().map(|r| r.len())
    }

    /// `frec(f, i)` with a 1-based index; `None` stands for `nil`.
    pub fn frec(&self, i: usize) -> Option<&Record> {
        if i == 0 {
            return None;
        }
        self.records.get(i - 1)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.records.concat()
    }
}

/// A sequence of 1-based record indices; need not be a permutation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingFunction {
    indices: Vec<usize>,
}

impl MappingFunction {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    /// The identity mapping over the first `n` records.
    pub fn identity(n: usize) -> Self {
        Self {
            indices: (1..=n).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Mapping that leaves every file unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Mapping {
    #[default]
    Fixpoint,
    Explicit(MappingFunction),
}

impl Mapping {
    fn view_len(&self, f: &ModelFile) -> usize {
        match self {
            Mapping::Fixpoint => f.flen(),
            Mapping::Explicit(t) => t.indices.len(),
        }
    }

    fn record_at<'a>(&self, f: &'a ModelFile, pos: usize) -> Option<&'a Record> {
        match self {
            Mapping::Fixpoint => f.frec(pos),
            Mapping::Explicit(t) => t.indices.get(pos - 1).and_then(|&i| f.frec(i)),
        }
    }
}

/// `ψ_t(f)`. Indices beyond the file are an error rather than `nil`.
pub fn apply_mapping(t: &MappingFunction, f: &ModelFile) -> Result<ModelFile, ModelError> {
    let mut out = Vec::with_capacity(t.indices.len());
    for &i in &t.indices {
        match f.frec(i) {
            Some(r) => out.push(r.clone()),
            None => return Err(ModelError::IndexBeyondFile(i)),
        }
    }
    Ok(ModelFile { records: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modes {
    pub read: bool,
    pub write: bool,
}

impl Modes {
    pub const READ: Modes = Modes {
        read: true,
        write: false,
    };
    pub const WRITE: Modes = Modes {
        read: false,
        write: true,
    };
    pub const READ_WRITE: Modes = Modes {
        read: true,
        write: true,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelHandle {
    pub file: ModelFile,
    pub modes: Modes,
    pub position: usize,
    pub mapping: Mapping,
}

impl ModelHandle {
    pub fn view_len(&self) -> usize {
        self.mapping.view_len(&self.file)
    }

    /// The visible file `ψ(f)`.
    pub fn view(&self) -> Result<ModelFile, ModelError> {
        match &self.mapping {
            Mapping::Fixpoint => Ok(self.file.clone()),
            Mapping::Explicit(t) => apply_mapping(t, &self.file),
        }
    }
}

/// `OPEN`: always succeeds with position 0.
pub fn model_open(file: ModelFile, modes: Modes, mapping: Mapping) -> ModelHandle {
    ModelHandle {
        file,
        modes,
        position: 0,
        mapping,
    }
}

/// `CLOSE`: the handle now refers to the empty file through the empty mapping.
pub fn model_close(_handle: ModelHandle) -> ModelHandle {
    ModelHandle {
        file: ModelFile::new(),
        modes: Modes::READ,
        position: 0,
        mapping: Mapping::Explicit(MappingFunction::default()),
    }
}

pub fn model_seek(handle: &mut ModelHandle, n: usize) -> Result<(), ModelError> {
    if n > handle.view_len() {
        return Err(ModelError::OutOfView);
    }
    handle.position = n;
    Ok(())
}

/// `READ`: copies `i = min(n, ⌊dsize/recsize⌋, viewlen − p)` records into `buf`.
///
/// `buf_bytes` is the capacity of the caller's buffer in bytes.
pub fn model_read(
    handle: &mut ModelHandle,
    n: usize,
    buf_bytes: usize,
    buf: &mut Vec<Record>,
) -> Result<usize, ModelError> {
    if !handle.modes.read {
        return Err(ModelError::NotReadable);
    }
    if n == 0 {
        return Err(ModelError::ZeroCount);
    }
    let fit = match handle.file.record_size() {
        Some(rs) => buf_bytes / rs,
        None => 0,
    };
    let left = handle.view_len().saturating_sub(handle.position);
    let i = n.min(fit).min(left);
    if i == 0 {
        return Err(ModelError::Exhausted);
    }
    buf.clear();
    for k in 1..=i {
        let rec = handle
            .mapping
            .record_at(&handle.file, handle.position + k)
            .ok_or(ModelError::IndexBeyondFile(handle.position + k))?;
        buf.push(rec.clone());
    }
    handle.position += i;
    Ok(i)
}

/// `WRITE`: overwrites or appends records `p+1..p+n` of the raw file.
pub fn model_write(handle: &mut ModelHandle, n: usize, buf: &[Record]) -> Result<(), ModelError> {
    let p = handle.position;
    check_update(handle, n, buf)?;
    let recs = &mut handle.file.records;
    for (k, rec) in buf[..n].iter().enumerate() {
        let idx = p + k;
        if idx < recs.len() {
            recs[idx] = rec.clone();
        } else {
            // Positions past the end would leave nil holes; the handle
            // invariant keeps p within the view so this only appends.
            recs.push(rec.clone());
        }
    }
    handle.position = p + n;
    Ok(())
}

/// `INSERT`: inserts `n` records after position `p`; flen grows by exactly `n`.
pub fn model_insert(handle: &mut ModelHandle, n: usize, buf: &[Record]) -> Result<(), ModelError> {
    let p = handle.position;
    check_update(handle, n, buf)?;
    let at = p.min(handle.file.records.len());
    let tail = handle.file.records.split_off(at);
    handle.file.records.extend(buf[..n].iter().cloned());
    handle.file.records.extend(tail);
    handle.position = p + n;
    Ok(())
}

fn check_update(handle: &ModelHandle, n: usize, buf: &[Record]) -> Result<(), ModelError> {
    if !handle.modes.write {
        return Err(ModelError::NotWritable);
    }
    if n == 0 {
        return Err(ModelError::ZeroCount);
    }
    if buf.len() < n {
        return Err(ModelError::BufferTooShort);
    }
    check_homogeneous(&buf[..n], handle.file.record_size())
}

fn check_homogeneous(recs: &[Record], size: Option<usize>) -> Result<(), ModelError> {
    let want = match size.or_else(|| recs.first().map(|r| r.len())) {
        Some(s) => s,
        None => return Ok(()),
    };
    if want == 0 || recs.iter().any(|r| r.len() != want) {
        return Err(ModelError::RecordSizeMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn file(n: u8) -> ModelFile {
        ModelFile::from_records((1..=n).map(|i| vec![i]).collect()).unwrap()
    }

    fn recs(bytes: &[u8]) -> Vec<Record> {
        bytes.iter().map(|&b| vec![b]).collect()
    }

    #[test]
    fn open_reports_mapped_length() {
        let h = model_open(
            file(3),
            Modes::READ,
            Mapping::Explicit(MappingFunction::new(vec![2, 1])),
        );
        assert_eq!(h.position, 0);
        assert_eq!(h.view_len(), 2);
    }

    #[test]
    fn open_empty_file_with_empty_mapping() {
        let h = model_open(
            ModelFile::new(),
            Modes::WRITE,
            Mapping::Explicit(MappingFunction::default()),
        );
        assert_eq!(h.position, 0);
        assert_eq!(h.view_len(), 0);
    }

    #[test]
    fn fixpoint_mapping_views_the_file_itself() {
        let f = file(4);
        let h = model_open(f.clone(), Modes::READ_WRITE, Mapping::Fixpoint);
        assert_eq!(h.view().unwrap(), f);
    }

    #[test]
    fn reads_fail_after_close_but_seek_zero_succeeds() {
        let h = model_open(file(3), Modes::READ, Mapping::Fixpoint);
        let mut h = model_close(h);
        assert_eq!(h.view_len(), 0);
        let mut buf = Vec::new();
        assert_eq!(
            model_read(&mut h, 1, 10, &mut buf),
            Err(ModelError::Exhausted)
        );
        assert_eq!(model_seek(&mut h, 0), Ok(()));
    }

    #[test]
    fn seek_boundary() {
        let mut h = model_open(file(6), Modes::READ, Mapping::Fixpoint);
        assert_eq!(model_seek(&mut h, 6), Ok(()));
        assert_eq!(h.position, 6);
        assert_eq!(model_seek(&mut h, 7), Err(ModelError::OutOfView));
        assert_eq!(h.position, 6);
    }

    #[test]
    fn seek_into_replicated_mapping() {
        let f = file(6);
        let mut h = model_open(
            f,
            Modes::READ,
            Mapping::Explicit(MappingFunction::new(vec![2, 4, 2, 6])),
        );
        model_seek(&mut h, 2).unwrap();
        let mut buf = Vec::new();
        assert_eq!(model_read(&mut h, 1, 1, &mut buf), Ok(1));
        assert_eq!(buf, recs(&[2]));
    }

    #[test]
    fn read_count_is_min_of_three_limits() {
        let mut h = model_open(file(10), Modes::READ, Mapping::Fixpoint);
        model_seek(&mut h, 8).unwrap();
        let mut buf = Vec::new();
        assert_eq!(model_read(&mut h, 5, 5, &mut buf), Ok(2));
        assert_eq!(buf, recs(&[9, 10]));
        assert_eq!(
            model_read(&mut h, 1, 5, &mut buf),
            Err(ModelError::Exhausted)
        );
    }

    #[test]
    fn read_on_write_only_handle() {
        let mut h = model_open(file(2), Modes::WRITE, Mapping::Fixpoint);
        let mut buf = Vec::new();
        assert_eq!(
            model_read(&mut h, 1, 1, &mut buf),
            Err(ModelError::NotReadable)
        );
    }

    #[test]
    fn write_overwrites_in_the_middle() {
        let f = ModelFile::from_records(recs(b"abc")).unwrap();
        let mut h = model_open(f, Modes::READ_WRITE, Mapping::Fixpoint);
        model_seek(&mut h, 1).unwrap();
        model_write(&mut h, 2, &recs(b"xy")).unwrap();
        assert_eq!(h.file.to_bytes(), b"axy");
        assert_eq!(h.position, 3);
    }

    #[test]
    fn write_into_empty_file_adopts_record_size() {
        let mut h = model_open(ModelFile::new(), Modes::WRITE, Mapping::Fixpoint);
        model_write(&mut h, 3, &[vec![1, 1], vec![2, 2], vec![3, 3]]).unwrap();
        assert_eq!(h.file.flen(), 3);
        assert_eq!(h.file.record_size(), Some(2));
    }

    #[test]
    fn write_rejects_mixed_record_sizes() {
        let mut h = model_open(ModelFile::new(), Modes::WRITE, Mapping::Fixpoint);
        assert_eq!(
            model_write(&mut h, 2, &[vec![1], vec![2, 2]]),
            Err(ModelError::RecordSizeMismatch)
        );
        let mut h = model_open(file(2), Modes::WRITE, Mapping::Fixpoint);
        assert_eq!(
            model_write(&mut h, 1, &[vec![1, 2]]),
            Err(ModelError::RecordSizeMismatch)
        );
        assert_eq!(
            model_write(&mut h, 2, &[vec![1]]),
            Err(ModelError::BufferTooShort)
        );
    }

    #[test]
    fn insert_grows_by_n() {
        let f = ModelFile::from_records(recs(b"ab")).unwrap();
        let mut h = model_open(f, Modes::READ_WRITE, Mapping::Fixpoint);
        model_seek(&mut h, 1).unwrap();
        model_insert(&mut h, 1, &recs(b"x")).unwrap();
        assert_eq!(h.file.to_bytes(), b"axb");
        assert_eq!(h.file.flen(), 3);
    }

    #[test]
    fn insert_at_end_equals_write() {
        let f = ModelFile::from_records(recs(b"ab")).unwrap();
        let mut a = model_open(f.clone(), Modes::READ_WRITE, Mapping::Fixpoint);
        let mut b = model_open(f, Modes::READ_WRITE, Mapping::Fixpoint);
        model_seek(&mut a, 2).unwrap();
        model_seek(&mut b, 2).unwrap();
        model_insert(&mut a, 2, &recs(b"xy")).unwrap();
        model_write(&mut b, 2, &recs(b"xy")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insert_on_read_only_handle() {
        let mut h = model_open(file(2), Modes::READ, Mapping::Fixpoint);
        assert_eq!(
            model_insert(&mut h, 1, &recs(b"x")),
            Err(ModelError::NotWritable)
        );
    }

    #[test]
    fn apply_mapping_cases() {
        let f = file(6);
        let m = apply_mapping(&MappingFunction::new(vec![2, 4, 2, 6]), &f).unwrap();
        assert_eq!(m.to_bytes(), vec![2, 4, 2, 6]);
        assert_eq!(
            apply_mapping(&MappingFunction::default(), &f)
                .unwrap()
                .flen(),
            0
        );
        assert_eq!(apply_mapping(&MappingFunction::identity(6), &f).unwrap(), f);
        assert_eq!(
            apply_mapping(&MappingFunction::new(vec![7]), &f),
            Err(ModelError::IndexBeyondFile(7))
        );
    }
}
