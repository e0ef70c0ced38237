//! Derived datatype trees.
//!
//! A [`DatatypeTree`] describes which bytes of a region are accessed, in the
//! manner of MPI derived datatypes. [`DatatypeTree::normalize`] rewrites every
//! tree into the four constructors the descriptor engine understands
//! (contiguous, hvector, hindexed, struct) plus an internal bounds node used
//! for subarray and darray lowering.
//!
//! Displacements and strides are non-negative and blocks never overlap or go
//! backwards, so every type enumerates its bytes in increasing order and its
//! lower bound is always 0. The extent of a type is its upper bound.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatatypeError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("rank {rank} out of range for {size} processes")]
    RankOutOfRange { rank: u64, size: u64 },
    #[error("struct blocks have different element types")]
    HeterogeneousLeaves,
    #[error("type has no elements")]
    Empty,
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, DatatypeError> {
    Err(DatatypeError::InvalidArguments(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseType {
    Byte,
    Char,
    Short,
    Int,
    Long,
    UShort,
    UInt,
    ULong,
    Float,
    Double,
}

impl BaseType {
    pub const ALL: [BaseType; 10] = [
        BaseType::Byte,
        BaseType::Char,
        BaseType::Short,
        BaseType::Int,
        BaseType::Long,
        BaseType::UShort,
        BaseType::UInt,
        BaseType::ULong,
        BaseType::Float,
        BaseType::Double,
    ];

    pub const fn extent(self) -> u64 {
        match self {
            BaseType::Byte | BaseType::Char => 1,
            BaseType::Short | BaseType::UShort => 2,
            BaseType::Int | BaseType::UInt | BaseType::Float => 4,
            BaseType::Long | BaseType::ULong | BaseType::Double => 8,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            BaseType::Byte => "byte",
            BaseType::Char => "char",
            BaseType::Short => "short",
            BaseType::Int => "int",
            BaseType::Long => "long",
            BaseType::UShort => "ushort",
            BaseType::UInt => "uint",
            BaseType::ULong => "ulong",
            BaseType::Float => "float",
            BaseType::Double => "double",
        }
    }

    pub fn from_name(s: &str) -> Option<BaseType> {
        BaseType::ALL.iter().copied().find(|b| b.name() == s)
    }

    /// Stable numeric code used on the wire and in runtime descriptors.
    pub const fn code(self) -> u32 {
        match self {
            BaseType::Byte => 1,
            BaseType::Char => 2,
            BaseType::Short => 3,
            BaseType::Int => 4,
            BaseType::Long => 5,
            BaseType::UShort => 6,
            BaseType::UInt => 7,
            BaseType::ULong => 8,
            BaseType::Float => 9,
            BaseType::Double => 10,
        }
    }

    pub fn from_code(code: u32) -> Option<BaseType> {
        BaseType::ALL.iter().copied().find(|b| b.code() == code)
    }
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Storage order of multi-dimensional arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    /// Row-major: the last dimension varies fastest.
    C,
    /// Column-major: the first dimension varies fastest.
    Fortran,
}

/// Distribution argument of a darray dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DArg {
    /// Let the constructor choose the block size.
    Default,
    Size(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distrib {
    None,
    Block(DArg),
    Cyclic(DArg),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DatatypeTree {
    Base(BaseType),
    Contiguous {
        count: u64,
        child: Box<DatatypeTree>,
    },
    /// Stride counted in child extents.
    Vector {
        count: u64,
        blocklen: u64,
        stride: u64,
        child: Box<DatatypeTree>,
    },
    /// Stride counted in bytes.
    HVector {
        count: u64,
        blocklen: u64,
        stride: u64,
        child: Box<DatatypeTree>,
    },
    /// Displacements counted in child extents.
    Indexed {
        blocklens: Vec<u64>,
        displs: Vec<u64>,
        child: Box<DatatypeTree>,
    },
    /// Displacements counted in bytes.
    HIndexed {
        blocklens: Vec<u64>,
        displs: Vec<u64>,
        child: Box<DatatypeTree>,
    },
    Struct {
        blocklens: Vec<u64>,
        displs: Vec<u64>,
        children: Vec<DatatypeTree>,
    },
    Subarray {
        sizes: Vec<u64>,
        subsizes: Vec<u64>,
        starts: Vec<u64>,
        order: Order,
        child: Box<DatatypeTree>,
    },
    Darray {
        size: u64,
        rank: u64,
        gsizes: Vec<u64>,
        distribs: Vec<Distrib>,
        psizes: Vec<u64>,
        order: Order,
        child: Box<DatatypeTree>,
    },
    /// Internal node produced by lowering: `child` placed at byte `disp`
    /// inside a region of `extent` bytes. `None` is a region with no
    /// accessible bytes. It has no text form.
    Bounded {
        disp: u64,
        extent: u64,
        child: Option<Box<DatatypeTree>>,
    },
}

use DatatypeTree as T;

impl From<BaseType> for DatatypeTree {
    fn from(b: BaseType) -> Self {
        T::Base(b)
    }
}

impl DatatypeTree {
    pub fn base(b: BaseType) -> Self {
        T::Base(b)
    }

    pub fn contiguous(count: u64, child: DatatypeTree) -> Self {
        T::Contiguous {
            count,
            child: Box::new(child),
        }
    }

    pub fn vector(count: u64, blocklen: u64, stride: u64, child: DatatypeTree) -> Self {
        T::Vector {
            count,
            blocklen,
            stride,
            child: Box::new(child),
        }
    }

    pub fn hvector(count: u64, blocklen: u64, stride: u64, child: DatatypeTree) -> Self {
        T::HVector {
            count,
            blocklen,
            stride,
            child: Box::new(child),
        }
    }

    pub fn indexed(blocklens: Vec<u64>, displs: Vec<u64>, child: DatatypeTree) -> Self {
        T::Indexed {
            blocklens,
            displs,
            child: Box::new(child),
        }
    }

    pub fn hindexed(blocklens: Vec<u64>, displs: Vec<u64>, child: DatatypeTree) -> Self {
        T::HIndexed {
            blocklens,
            displs,
            child: Box::new(child),
        }
    }

    pub fn structure(blocklens: Vec<u64>, displs: Vec<u64>, children: Vec<DatatypeTree>) -> Self {
        T::Struct {
            blocklens,
            displs,
            children,
        }
    }

    pub fn subarray(
        sizes: Vec<u64>,
        subsizes: Vec<u64>,
        starts: Vec<u64>,
        order: Order,
        child: DatatypeTree,
    ) -> Self {
        T::Subarray {
            sizes,
            subsizes,
            starts,
            order,
            child: Box::new(child),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn darray(
        size: u64,
        rank: u64,
        gsizes: Vec<u64>,
        distribs: Vec<Distrib>,
        psizes: Vec<u64>,
        order: Order,
        child: DatatypeTree,
    ) -> Self {
        T::Darray {
            size,
            rank,
            gsizes,
            distribs,
            psizes,
            order,
            child: Box::new(child),
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, T::Base(_))
    }

    /// Checks the argument constraints of every node.
    pub fn validate(&self) -> Result<(), DatatypeError> {
        match self {
            T::Base(_) => Ok(()),
            T::Contiguous { count, child } => {
                if *count == 0 {
                    return invalid("contiguous count must be at least 1");
                }
                child.validate()
            }
            T::Vector {
                count,
                blocklen,
                stride,
                child,
            } => {
                child.validate()?;
                if *count == 0 || *blocklen == 0 {
                    return invalid("vector count and blocklen must be at least 1");
                }
                if *count > 1 && stride < blocklen {
                    return invalid("vector stride smaller than blocklen");
                }
                Ok(())
            }
            T::HVector {
                count,
                blocklen,
                stride,
                child,
            } => {
                child.validate()?;
                if *count == 0 || *blocklen == 0 {
                    return invalid("hvector count and blocklen must be at least 1");
                }
                if *count > 1 && *stride < blocklen * child.extent() {
                    return invalid("hvector stride smaller than one block");
                }
                Ok(())
            }
            T::Indexed {
                blocklens,
                displs,
                child,
            } => {
                child.validate()?;
                check_blocks(blocklens, displs, |i| blocklens[i], 1)
            }
            T::HIndexed {
                blocklens,
                displs,
                child,
            } => {
                child.validate()?;
                let e = child.extent();
                check_blocks(blocklens, displs, |i| blocklens[i] * e, 1)
            }
            T::Struct {
                blocklens,
                displs,
                children,
            } => {
                if children.len() != blocklens.len() {
                    return invalid("struct needs one child per block");
                }
                for c in children {
                    c.validate()?;
                }
                check_blocks(
                    blocklens,
                    displs,
                    |i| blocklens[i] * children[i].extent(),
                    1,
                )
            }
            T::Subarray {
                sizes,
                subsizes,
                starts,
                child,
                ..
            } => {
                child.validate()?;
                if sizes.is_empty() || subsizes.len() != sizes.len() || starts.len() != sizes.len()
                {
                    return invalid("subarray dimension lists differ in length");
                }
                for i in 0..sizes.len() {
                    if sizes[i] == 0 || subsizes[i] == 0 {
                        return invalid("subarray sizes must be at least 1");
                    }
                    if subsizes[i] > sizes[i] || starts[i] > sizes[i] - subsizes[i] {
                        return invalid("subarray exceeds array bounds");
                    }
                }
                Ok(())
            }
            T::Darray {
                size,
                rank,
                gsizes,
                distribs,
                psizes,
                child,
                ..
            } => {
                child.validate()?;
                if gsizes.is_empty()
                    || distribs.len() != gsizes.len()
                    || psizes.len() != gsizes.len()
                {
                    return invalid("darray dimension lists differ in length");
                }
                if psizes.iter().product::<u64>() != *size {
                    return invalid("product of process grid differs from size");
                }
                if rank >= size {
                    return Err(DatatypeError::RankOutOfRange {
                        rank: *rank,
                        size: *size,
                    });
                }
                for i in 0..gsizes.len() {
                    if gsizes[i] == 0 || psizes[i] == 0 {
                        return invalid("darray sizes must be at least 1");
                    }
                    match distribs[i] {
                        Distrib::None => {
                            if psizes[i] != 1 {
                                return invalid("undistributed dimension needs one process");
                            }
                        }
                        Distrib::Block(DArg::Size(b)) => {
                            if b == 0 || b * psizes[i] < gsizes[i] {
                                return invalid("block size too small to cover dimension");
                            }
                        }
                        Distrib::Cyclic(DArg::Size(b)) => {
                            if b == 0 {
                                return invalid("cyclic block size must be at least 1");
                            }
                        }
                        Distrib::Block(DArg::Default) | Distrib::Cyclic(DArg::Default) => {}
                    }
                }
                Ok(())
            }
            T::Bounded {
                disp,
                extent,
                child,
            } => {
                if let Some(c) = child {
                    c.validate()?;
                    if disp + c.extent() > *extent {
                        return invalid("bounded child exceeds upper bound");
                    }
                }
                Ok(())
            }
        }
    }

    /// Upper bound of the type in bytes.
    pub fn extent(&self) -> u64 {
        match self {
            T::Base(b) => b.extent(),
            T::Contiguous { count, child } => count * child.extent(),
            T::Vector {
                count,
                blocklen,
                stride,
                child,
            } => ((count - 1) * stride + blocklen) * child.extent(),
            T::HVector {
                count,
                blocklen,
                stride,
                child,
            } => (count - 1) * stride + blocklen * child.extent(),
            T::Indexed {
                blocklens,
                displs,
                child,
            } => last_end(blocklens, displs) * child.extent(),
            T::HIndexed {
                blocklens,
                displs,
                child,
            } => match (blocklens.last(), displs.last()) {
                (Some(b), Some(d)) => d + b * child.extent(),
                _ => 0,
            },
            T::Struct {
                blocklens,
                displs,
                children,
            } => match (blocklens.last(), displs.last(), children.last()) {
                (Some(b), Some(d), Some(c)) => d + b * c.extent(),
                _ => 0,
            },
            T::Subarray { sizes, child, .. } => sizes.iter().product::<u64>() * child.extent(),
            T::Darray { gsizes, child, .. } => gsizes.iter().product::<u64>() * child.extent(),
            T::Bounded { extent, .. } => *extent,
        }
    }

    /// Number of accessible bytes in one instance.
    pub fn size(&self) -> u64 {
        match self {
            T::Base(b) => b.extent(),
            T::Contiguous { count, child } => count * child.size(),
            T::Vector {
                count,
                blocklen,
                child,
                ..
            }
            | T::HVector {
                count,
                blocklen,
                child,
                ..
            } => count * blocklen * child.size(),
            T::Indexed {
                blocklens, child, ..
            }
            | T::HIndexed {
                blocklens, child, ..
            } => blocklens.iter().sum::<u64>() * child.size(),
            T::Struct {
                blocklens,
                children,
                ..
            } => blocklens
                .iter()
                .zip(children)
                .map(|(b, c)| b * c.size())
                .sum(),
            T::Subarray {
                subsizes, child, ..
            } => subsizes.iter().product::<u64>() * child.size(),
            T::Darray { .. } => match self.normalize() {
                Ok(t) => t.size(),
                Err(_) => 0,
            },
            T::Bounded { child, .. } => child.as_ref().map_or(0, |c| c.size()),
        }
    }

    /// The base type at the leaves. For a struct this is the first block's.
    pub fn element_type(&self) -> Option<BaseType> {
        match self {
            T::Base(b) => Some(*b),
            T::Contiguous { child, .. }
            | T::Vector { child, .. }
            | T::HVector { child, .. }
            | T::Indexed { child, .. }
            | T::HIndexed { child, .. }
            | T::Subarray { child, .. }
            | T::Darray { child, .. } => child.element_type(),
            T::Struct { children, .. } => children.first().and_then(|c| c.element_type()),
            T::Bounded { child, .. } => child.as_ref().and_then(|c| c.element_type()),
        }
    }

    /// Like [`element_type`](Self::element_type) but requires every leaf to agree.
    pub fn uniform_element_type(&self) -> Result<BaseType, DatatypeError> {
        let mut found = None;
        self.visit_leaves(&mut |b| match found {
            None => {
                found = Some(b);
                true
            }
            Some(prev) => prev == b,
        })
        .then_some(())
        .ok_or(DatatypeError::HeterogeneousLeaves)?;
        found.ok_or(DatatypeError::Empty)
    }

    fn visit_leaves(&self, f: &mut impl FnMut(BaseType) -> bool) -> bool {
        match self {
            T::Base(b) => f(*b),
            T::Contiguous { child, .. }
            | T::Vector { child, .. }
            | T::HVector { child, .. }
            | T::Indexed { child, .. }
            | T::HIndexed { child, .. }
            | T::Subarray { child, .. }
            | T::Darray { child, .. } => child.visit_leaves(f),
            T::Struct { children, .. } => children.iter().all(|c| c.visit_leaves(f)),
            T::Bounded { child, .. } => child.as_ref().is_none_or(|c| c.visit_leaves(f)),
        }
    }

    /// Rewrites the tree into contiguous/hvector/hindexed/struct nodes,
    /// lowering subarray and darray constructors.
    pub fn normalize(&self) -> Result<DatatypeTree, DatatypeError> {
        self.validate()?;
        Ok(self.normalize_valid())
    }

    fn normalize_valid(&self) -> DatatypeTree {
        match self {
            T::Base(b) => T::Base(*b),
            T::Contiguous { count, child } => T::contiguous(*count, child.normalize_valid()),
            T::Vector {
                count,
                blocklen,
                stride,
                child,
            } => {
                let c = child.normalize_valid();
                let bytes = stride * c.extent();
                hvector(*count, *blocklen, bytes, c)
            }
            T::HVector {
                count,
                blocklen,
                stride,
                child,
            } => hvector(*count, *blocklen, *stride, child.normalize_valid()),
            T::Indexed {
                blocklens,
                displs,
                child,
            } => {
                let c = child.normalize_valid();
                let e = c.extent();
                T::hindexed(blocklens.clone(), displs.iter().map(|d| d * e).collect(), c)
            }
            T::HIndexed {
                blocklens,
                displs,
                child,
            } => T::hindexed(blocklens.clone(), displs.clone(), child.normalize_valid()),
            T::Struct {
                blocklens,
                displs,
                children,
            } => T::structure(
                blocklens.clone(),
                displs.clone(),
                children.iter().map(|c| c.normalize_valid()).collect(),
            ),
            T::Subarray {
                sizes,
                subsizes,
                starts,
                order,
                child,
            } => {
                let c = child.normalize_valid();
                match order {
                    Order::C => lower_subarray(sizes, subsizes, starts, c),
                    Order::Fortran => lower_subarray(&rev(sizes), &rev(subsizes), &rev(starts), c),
                }
            }
            T::Darray {
                rank,
                gsizes,
                distribs,
                psizes,
                order,
                child,
                ..
            } => {
                let c = child.normalize_valid();
                let coords = grid_coords(*rank, psizes).expect("validated rank");
                match order {
                    Order::C => lower_darray(gsizes, distribs, psizes, &coords, c),
                    Order::Fortran => {
                        lower_darray(&rev(gsizes), &rev(distribs), &rev(psizes), &rev(&coords), c)
                    }
                }
            }
            T::Bounded {
                disp,
                extent,
                child,
            } => T::Bounded {
                disp: *disp,
                extent: *extent,
                child: child.as_ref().map(|c| Box::new(c.normalize_valid())),
            },
        }
    }
}

fn rev<X: Clone>(v: &[X]) -> Vec<X> {
    v.iter().rev().cloned().collect()
}

fn last_end(blocklens: &[u64], displs: &[u64]) -> u64 {
    match (blocklens.last(), displs.last()) {
        (Some(b), Some(d)) => d + b,
        _ => 0,
    }
}

fn check_blocks(
    blocklens: &[u64],
    displs: &[u64],
    span: impl Fn(usize) -> u64,
    min_len: usize,
) -> Result<(), DatatypeError> {
    if blocklens.len() != displs.len() || blocklens.len() < min_len {
        return invalid("block and displacement lists differ in length or are empty");
    }
    if blocklens.contains(&0) {
        return invalid("blocklens must be at least 1");
    }
    for i in 1..displs.len() {
        if displs[i] < displs[i - 1] + span(i - 1) {
            return invalid("blocks overlap or are not ascending");
        }
    }
    Ok(())
}

/// HVector with the reduction to Contiguous when the blocks abut.
fn hvector(count: u64, blocklen: u64, stride: u64, child: DatatypeTree) -> DatatypeTree {
    if count == 1 || stride == blocklen * child.extent() {
        T::contiguous(count * blocklen, child)
    } else {
        T::hvector(count, blocklen, stride, child)
    }
}

fn lower_subarray(
    sizes: &[u64],
    subsizes: &[u64],
    starts: &[u64],
    old: DatatypeTree,
) -> DatatypeTree {
    let n = sizes.len();
    let ext = old.extent();
    let ty = if n == 1 {
        T::contiguous(subsizes[0], old)
    } else {
        let mut t = hvector(subsizes[n - 2], subsizes[n - 1], sizes[n - 1] * ext, old);
        let mut size = sizes[n - 1] * ext;
        for i in (0..n - 2).rev() {
            size *= sizes[i + 1];
            t = hvector(subsizes[i], 1, size, t);
        }
        t
    };
    let mut disp = 0;
    let mut stride = ext;
    for i in (0..n).rev() {
        disp += starts[i] * stride;
        stride *= sizes[i];
    }
    T::Bounded {
        disp,
        extent: stride,
        child: Some(Box::new(ty)),
    }
}

/// Per-dimension share of one process in a darray.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    /// Regular blocks owned (0 or 1 for block distributions).
    pub count: u64,
    /// Size of the trailing partial block, 0 when there is none.
    pub last_blksize: u64,
    /// Elements owned along this dimension.
    pub my_size: u64,
    /// First owned element index.
    pub start_offset: u64,
    /// Block size used.
    pub blksize: u64,
}

/// Process grid coordinates of `rank`, first dimension slowest.
pub fn grid_coords(rank: u64, psizes: &[u64]) -> Result<Vec<u64>, DatatypeError> {
    let mut procs: u64 = psizes.iter().product();
    if rank >= procs || psizes.contains(&0) {
        return Err(DatatypeError::RankOutOfRange { rank, size: procs });
    }
    let mut tmp = rank;
    let mut coords = vec![0; psizes.len()];
    for (i, p) in psizes.iter().enumerate() {
        procs /= p;
        coords[i] = tmp / procs;
        tmp %= procs;
    }
    Ok(coords)
}

/// Block/cyclic parameters of one darray dimension for the process at `coord`.
pub fn darray_block_params(
    dist: Distrib,
    gsize: u64,
    nprocs: u64,
    coord: u64,
) -> Result<BlockParams, DatatypeError> {
    if gsize == 0 || nprocs == 0 || coord >= nprocs {
        return invalid("dimension sizes must be positive and coord inside the grid");
    }
    match dist {
        Distrib::None => {
            if nprocs != 1 {
                return invalid("undistributed dimension needs one process");
            }
            Ok(BlockParams {
                count: 1,
                last_blksize: 0,
                my_size: gsize,
                start_offset: 0,
                blksize: gsize,
            })
        }
        Distrib::Block(arg) => {
            let blksize = match arg {
                DArg::Default => gsize.div_ceil(nprocs),
                DArg::Size(b) => b,
            };
            if blksize == 0 || blksize * nprocs < gsize {
                return invalid("block size too small to cover dimension");
            }
            let start = blksize * coord;
            let my_size = gsize.saturating_sub(start).min(blksize);
            Ok(BlockParams {
                count: u64::from(my_size > 0),
                last_blksize: 0,
                my_size,
                start_offset: start,
                blksize,
            })
        }
        Distrib::Cyclic(arg) => {
            let blksize = match arg {
                DArg::Default => 1,
                DArg::Size(b) => b,
            };
            if blksize == 0 {
                return invalid("cyclic block size must be at least 1");
            }
            let nblocks = gsize.div_ceil(blksize);
            let mut count = nblocks / nprocs;
            let left_over = nblocks - count * nprocs;
            if coord < left_over {
                count += 1;
            }
            let mut last_blksize = 0;
            let rem = gsize % (nprocs * blksize);
            if rem != 0 {
                let last = rem as i128 - (blksize as i128) * (coord as i128);
                if last > 0 && last < blksize as i128 {
                    count -= 1;
                    last_blksize = last as u64;
                }
            }
            Ok(BlockParams {
                count,
                last_blksize,
                my_size: count * blksize + last_blksize,
                start_offset: coord * blksize,
                blksize,
            })
        }
    }
}

fn lower_darray(
    gsizes: &[u64],
    distribs: &[Distrib],
    psizes: &[u64],
    coords: &[u64],
    old: DatatypeTree,
) -> DatatypeTree {
    let n = gsizes.len();
    let ext = old.extent();
    let total = gsizes.iter().product::<u64>() * ext;
    let mut ty = Some(old);
    let mut disp = 0;
    let mut elem_stride = ext;
    for i in (0..n).rev() {
        let p = darray_block_params(distribs[i], gsizes[i], psizes[i], coords[i])
            .expect("validated darray");
        disp += p.start_offset * elem_stride;
        ty = match ty {
            None => None,
            Some(inner) => darray_dim(i == n - 1, distribs[i], &p, psizes[i], elem_stride, inner),
        };
        elem_stride *= gsizes[i];
    }
    match ty {
        Some(t) => T::Bounded {
            disp,
            extent: total,
            child: Some(Box::new(t)),
        },
        None => T::Bounded {
            disp: 0,
            extent: total,
            child: None,
        },
    }
}

/// Wraps `inner` for one dimension. `stride` is the byte distance between
/// consecutive indices of this dimension.
fn darray_dim(
    last: bool,
    dist: Distrib,
    p: &BlockParams,
    nprocs: u64,
    stride: u64,
    inner: DatatypeTree,
) -> Option<DatatypeTree> {
    if p.my_size == 0 {
        return None;
    }
    let run = |len: u64, inner: DatatypeTree| {
        if last {
            T::contiguous(len, inner)
        } else {
            hvector(len, 1, stride, inner)
        }
    };
    match dist {
        Distrib::None | Distrib::Block(_) => Some(run(p.my_size, inner)),
        Distrib::Cyclic(_) => {
            let b = p.blksize;
            let cycle = nprocs * b * stride;
            let regular = if p.count == 0 {
                None
            } else if last {
                Some(hvector(p.count, b, cycle, inner.clone()))
            } else {
                let sub = hvector(b, 1, stride, inner.clone());
                Some(hvector(p.count, 1, cycle, sub))
            };
            let irregular = (p.last_blksize > 0).then(|| run(p.last_blksize, inner));
            match (regular, irregular) {
                (Some(r), None) => Some(r),
                (None, Some(i)) => Some(i),
                (Some(r), Some(i)) => Some(T::structure(
                    vec![1, 1],
                    vec![0, p.count * cycle],
                    vec![r, i],
                )),
                (None, None) => None,
            }
        }
    }
}

/// Text form, e.g. `vector(3,2,3;int)`.
impl fmt::Display for DatatypeTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(v: &[u64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("[{}]", items.join(","))
        }
        fn order(o: Order) -> &'static str {
            match o {
                Order::C => "C",
                Order::Fortran => "F",
            }
        }
        match self {
            T::Base(b) => write!(f, "{b}"),
            T::Contiguous { count, child } => write!(f, "contiguous({count};{child})"),
            T::Vector {
                count,
                blocklen,
                stride,
                child,
            } => write!(f, "vector({count},{blocklen},{stride};{child})"),
            T::HVector {
                count,
                blocklen,
                stride,
                child,
            } => write!(f, "hvector({count},{blocklen},{stride};{child})"),
            T::Indexed {
                blocklens,
                displs,
                child,
            } => write!(f, "indexed({},{};{child})", list(blocklens), list(displs)),
            T::HIndexed {
                blocklens,
                displs,
                child,
            } => write!(f, "hindexed({},{};{child})", list(blocklens), list(displs)),
            T::Struct {
                blocklens,
                displs,
                children,
            } => {
                write!(f, "struct({},{};", list(blocklens), list(displs))?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
            T::Subarray {
                sizes,
                subsizes,
                starts,
                order: o,
                child,
            } => write!(
                f,
                "subarray({},{},{},{};{child})",
                list(sizes),
                list(subsizes),
                list(starts),
                order(*o)
            ),
            T::Darray {
                size,
                rank,
                gsizes,
                distribs,
                psizes,
                order: o,
                child,
            } => {
                let ds: Vec<String> = distribs
                    .iter()
                    .map(|d| match d {
                        Distrib::None => String::from("none"),
                        Distrib::Block(DArg::Default) => String::from("block"),
                        Distrib::Block(DArg::Size(b)) => format!("block({b})"),
                        Distrib::Cyclic(DArg::Default) => String::from("cyclic"),
                        Distrib::Cyclic(DArg::Size(b)) => format!("cyclic({b})"),
                    })
                    .collect();
                write!(
                    f,
                    "darray(size={size},rank={rank},{},[{}],{},{};{child})",
                    list(gsizes),
                    ds.join(","),
                    list(psizes),
                    order(*o)
                )
            }
            T::Bounded {
                disp,
                extent,
                child,
            } => match child {
                Some(c) => write!(f, "<bounded {disp}/{extent};{c}>"),
                None => write!(f, "<bounded {disp}/{extent}>"),
            },
        }
    }
}

impl core::str::FromStr for DatatypeTree {
    type Err = DatatypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            src: s.as_bytes(),
            pos: 0,
        };
        let t = p.tree()?;
        p.ws();
        if p.pos != p.src.len() {
            return p.err("trailing input");
        }
        Ok(t)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<X>(&self, msg: &str) -> Result<X, DatatypeError> {
        Err(DatatypeError::Parse {
            pos: self.pos,
            msg: String::from(msg),
        })
    }

    fn ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), DatatypeError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected '{}'", c as char))
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> Result<&str, DatatypeError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a name");
        }
        Ok(core::str::from_utf8(&self.src[start..self.pos]).unwrap_or(""))
    }

    fn number(&mut self) -> Result<u64, DatatypeError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let s = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match s.parse() {
            Ok(n) => Ok(n),
            Err(_) => {
                self.pos = start;
                self.err("expected a number")
            }
        }
    }

    fn list(&mut self) -> Result<Vec<u64>, DatatypeError> {
        self.expect(b'[')?;
        let mut v = Vec::new();
        if self.eat(b']') {
            return Ok(v);
        }
        loop {
            v.push(self.number()?);
            if self.eat(b']') {
                return Ok(v);
            }
            self.expect(b',')?;
        }
    }

    fn order(&mut self) -> Result<Order, DatatypeError> {
        match self.word()? {
            "C" | "c" => Ok(Order::C),
            "F" | "f" | "Fortran" | "fortran" => Ok(Order::Fortran),
            _ => self.err("expected C or F"),
        }
    }

    fn key(&mut self, name: &str) -> Result<u64, DatatypeError> {
        if self.word()? != name {
            return self.err(&format!("expected {name}="));
        }
        self.expect(b'=')?;
        self.number()
    }

    fn distrib(&mut self) -> Result<Distrib, DatatypeError> {
        let w = self.word()?;
        let kind = match w {
            "none" => return Ok(Distrib::None),
            "block" => 0,
            "cyclic" => 1,
            _ => return self.err("expected none, block or cyclic"),
        };
        let arg = if self.eat(b'(') {
            let n = self.number()?;
            self.expect(b')')?;
            DArg::Size(n)
        } else {
            DArg::Default
        };
        Ok(if kind == 0 {
            Distrib::Block(arg)
        } else {
            Distrib::Cyclic(arg)
        })
    }

    fn tree(&mut self) -> Result<DatatypeTree, DatatypeError> {
        let start = self.pos;
        let name = String::from(self.word()?);
        if let Some(b) = BaseType::from_name(&name) {
            return Ok(T::Base(b));
        }
        self.expect(b'(')?;
        let t = match name.as_str() {
            "contiguous" => {
                let n = self.number()?;
                self.expect(b';')?;
                T::contiguous(n, self.tree()?)
            }
            "vector" | "hvector" => {
                let c = self.number()?;
                self.expect(b',')?;
                let b = self.number()?;
                self.expect(b',')?;
                let s = self.number()?;
                self.expect(b';')?;
                let child = self.tree()?;
                if name == "vector" {
                    T::vector(c, b, s, child)
                } else {
                    T::hvector(c, b, s, child)
                }
            }
            "indexed" | "hindexed" => {
                let b = self.list()?;
                self.expect(b',')?;
                let d = self.list()?;
                self.expect(b';')?;
                let child = self.tree()?;
                if name == "indexed" {
                    T::indexed(b, d, child)
                } else {
                    T::hindexed(b, d, child)
                }
            }
            "struct" => {
                let b = self.list()?;
                self.expect(b',')?;
                let d = self.list()?;
                self.expect(b';')?;
                let mut children = vec![self.tree()?];
                while self.eat(b',') {
                    children.push(self.tree()?);
                }
                T::structure(b, d, children)
            }
            "subarray" => {
                let sizes = self.list()?;
                self.expect(b',')?;
                let subsizes = self.list()?;
                self.expect(b',')?;
                let starts = self.list()?;
                self.expect(b',')?;
                let order = self.order()?;
                self.expect(b';')?;
                T::subarray(sizes, subsizes, starts, order, self.tree()?)
            }
            "darray" => {
                let size = self.key("size")?;
                self.expect(b',')?;
                let rank = self.key("rank")?;
                self.expect(b',')?;
                let gsizes = self.list()?;
                self.expect(b',')?;
                self.expect(b'[')?;
                let mut distribs = vec![self.distrib()?];
                while self.eat(b',') {
                    distribs.push(self.distrib()?);
                }
                self.expect(b']')?;
                self.expect(b',')?;
                let psizes = self.list()?;
                self.expect(b',')?;
                let order = self.order()?;
                self.expect(b';')?;
                T::darray(size, rank, gsizes, distribs, psizes, order, self.tree()?)
            }
            _ => {
                self.pos = start;
                return self.err("unknown type constructor");
            }
        };
        self.expect(b')')?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn int() -> DatatypeTree {
        T::Base(BaseType::Int)
    }

    #[test]
    fn base_extents() {
        assert_eq!(BaseType::Char.extent(), 1);
        assert_eq!(BaseType::UShort.extent(), 2);
        assert_eq!(BaseType::Float.extent(), 4);
        assert_eq!(BaseType::Double.extent(), 8);
        for b in BaseType::ALL {
            assert_eq!(BaseType::from_code(b.code()), Some(b));
            assert_eq!(BaseType::from_name(b.name()), Some(b));
        }
    }

    #[test]
    fn element_types() {
        assert_eq!(
            T::vector(10, 5, 20, int()).element_type(),
            Some(BaseType::Int)
        );
        assert_eq!(
            T::Base(BaseType::Double).element_type(),
            Some(BaseType::Double)
        );
        let t = T::contiguous(3, T::vector(2, 1, 4, T::Base(BaseType::Char)));
        assert_eq!(t.element_type(), Some(BaseType::Char));
        let s = T::structure(
            vec![1, 1],
            vec![0, 8],
            vec![int(), T::Base(BaseType::Double)],
        );
        assert_eq!(s.element_type(), Some(BaseType::Int));
        assert_eq!(
            s.uniform_element_type(),
            Err(DatatypeError::HeterogeneousLeaves)
        );
    }

    #[test]
    fn vector_reductions() {
        assert_eq!(
            T::vector(3, 2, 2, int()).normalize().unwrap(),
            T::contiguous(6, int())
        );
        assert_eq!(
            T::vector(1, 4, 9, int()).normalize().unwrap(),
            T::contiguous(4, int())
        );
        assert_eq!(
            T::vector(2, 5, 10, int()).normalize().unwrap(),
            T::hvector(2, 5, 40, int())
        );
    }

    #[test]
    fn subarray_column_block_lowers_to_displaced_vector() {
        let t = T::subarray(vec![12, 12], vec![12, 3], vec![0, 3], Order::C, int());
        let n = t.normalize().unwrap();
        assert_eq!(
            n,
            T::Bounded {
                disp: 12,
                extent: 576,
                child: Some(Box::new(T::hvector(12, 3, 48, int()))),
            }
        );
        assert_eq!(n.extent(), t.extent());
        assert_eq!(n.size(), 36 * 4);
    }

    #[test]
    fn grid_coordinates() {
        assert_eq!(grid_coords(0, &[2, 2]).unwrap(), vec![0, 0]);
        assert_eq!(grid_coords(2, &[2, 2]).unwrap(), vec![1, 0]);
        assert!(grid_coords(4, &[2, 2]).is_err());
        let mut seen: Vec<Vec<u64>> = (0..6).map(|r| grid_coords(r, &[2, 3]).unwrap()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn block_params() {
        let p = darray_block_params(Distrib::Block(DArg::Size(4)), 6, 2, 1).unwrap();
        assert_eq!(p.my_size, 2);
        assert_eq!(p.start_offset, 4);
        let p = darray_block_params(Distrib::Block(DArg::Default), 17, 4, 3).unwrap();
        assert_eq!((p.blksize, p.my_size), (5, 2));
        assert!(darray_block_params(Distrib::Block(DArg::Size(2)), 6, 2, 0).is_err());
    }

    #[test]
    fn cyclic_params() {
        let c0 = darray_block_params(Distrib::Cyclic(DArg::Size(4)), 12, 2, 0).unwrap();
        let c1 = darray_block_params(Distrib::Cyclic(DArg::Size(4)), 12, 2, 1).unwrap();
        assert_eq!((c0.count, c1.count), (2, 1));
        let c1 = darray_block_params(Distrib::Cyclic(DArg::Size(4)), 14, 2, 1).unwrap();
        assert_eq!((c1.count, c1.last_blksize, c1.my_size), (1, 2, 6));
        let c0 = darray_block_params(Distrib::Cyclic(DArg::Size(4)), 14, 2, 0).unwrap();
        assert_eq!((c0.count, c0.last_blksize, c0.my_size), (2, 0, 8));
    }

    #[test]
    fn validation_rejects_bad_arguments() {
        assert!(T::contiguous(0, int()).validate().is_err());
        assert!(T::vector(2, 3, 2, int()).validate().is_err());
        assert!(T::hindexed(vec![2, 1], vec![0, 4], int())
            .validate()
            .is_err());
        assert!(T::subarray(vec![4], vec![3], vec![2], Order::C, int())
            .validate()
            .is_err());
        let bad = T::darray(
            4,
            0,
            vec![9],
            vec![Distrib::Block(DArg::Size(2))],
            vec![4],
            Order::C,
            int(),
        );
        assert!(bad.validate().is_err());
        let bad = T::darray(
            3,
            0,
            vec![9],
            vec![Distrib::Block(DArg::Default)],
            vec![4],
            Order::C,
            int(),
        );
        assert!(bad.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        for s in [
            "vector(3,2,3;int)",
            "darray(size=4,rank=2,[9,10],[cyclic(2),cyclic(2)],[2,2],C;int)",
            "struct([3,2,16],[0,20,60];int,double,char)",
            "subarray([12,12],[12,3],[0,3],F;contiguous(2;short))",
            "hindexed([1,2],[0,20];hvector(2,1,9;byte))",
            "darray(size=2,rank=1,[5,3],[block,none],[2,1],F;double)",
        ] {
            let t: DatatypeTree = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("vector(3,2;int)".parse::<DatatypeTree>().is_err());
        assert!("blob".parse::<DatatypeTree>().is_err());
        assert_eq!(
            " vector( 3 , 2 ,3 ; int ) "
                .parse::<DatatypeTree>()
                .unwrap(),
            T::vector(3, 2, 3, int())
        );
    }
}
