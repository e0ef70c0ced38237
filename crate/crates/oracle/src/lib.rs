//! Brute-force reference implementations used by the test suites.
//!
//! Nothing here shares code with the engine: datatypes are expanded by their
//! defining semantics, distributions by assigning every array element to its
//! owner directly.

use proptest::prelude::*;
use vipios_core::datatypes::{DArg, DatatypeTree, Distrib, Order};
use vipios_core::distribution::{DimSpec, DistKind, RuntimeDescriptor};
use vipios_core::viewdesc::AccessDesc;
use vipios_core::BaseType;

/// Byte offsets of every accessible byte of one instance of `t`, in type
/// map order.
pub fn expand_offsets(t: &DatatypeTree) -> Vec<u64> {
    let mut out = Vec::new();
    expand_into(t, 0, &mut out);
    out
}

fn expand_into(t: &DatatypeTree, base: u64, out: &mut Vec<u64>) {
    use DatatypeTree as T;
    match t {
        T::Base(b) => out.extend((0..b.extent()).map(|i| base + i)),
        T::Contiguous { count, child } => {
            let e = extent_of(child);
            for k in 0..*count {
                expand_into(child, base + k * e, out);
            }
        }
        T::Vector {
            count,
            blocklen,
            stride,
            child,
        } => {
            let e = extent_of(child);
            for i in 0..*count {
                for j in 0..*blocklen {
                    expand_into(child, base + (i * stride + j) * e, out);
                }
            }
        }
        T::HVector {
            count,
            blocklen,
            stride,
            child,
        } => {
            let e = extent_of(child);
            for i in 0..*count {
                for j in 0..*blocklen {
                    expand_into(child, base + i * stride + j * e, out);
                }
            }
        }
        T::Indexed {
            blocklens,
            displs,
            child,
        } => {
            let e = extent_of(child);
            for (b, d) in blocklens.iter().zip(displs) {
                for j in 0..*b {
                    expand_into(child, base + (d + j) * e, out);
                }
            }
        }
        T::HIndexed {
            blocklens,
            displs,
            child,
        } => {
            let e = extent_of(child);
            for (b, d) in blocklens.iter().zip(displs) {
                for j in 0..*b {
                    expand_into(child, base + d + j * e, out);
                }
            }
        }
        T::Struct {
            blocklens,
            displs,
            children,
        } => {
            for ((b, d), c) in blocklens.iter().zip(displs).zip(children) {
                let e = extent_of(c);
                for j in 0..*b {
                    expand_into(c, base + d + j * e, out);
                }
            }
        }
        T::Subarray {
            sizes,
            subsizes,
            starts,
            order,
            child,
        } => {
            let e = extent_of(child);
            for idx in index_space(subsizes, *order) {
                let global: Vec<u64> = idx.iter().zip(starts).map(|(i, s)| i + s).collect();
                expand_into(child, base + linear(&global, sizes, *order) * e, out);
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
            let e = extent_of(child);
            let me = row_major_coords(*rank, psizes);
            for idx in index_space(gsizes, *order) {
                let owner: Vec<u64> = (0..gsizes.len())
                    .map(|d| darray_owner(distribs[d], gsizes[d], psizes[d], idx[d]))
                    .collect();
                if owner == me {
                    expand_into(child, base + linear(&idx, gsizes, *order) * e, out);
                }
            }
        }
        T::Bounded { disp, child, .. } => {
            if let Some(c) = child {
                expand_into(c, base + disp, out);
            }
        }
    }
}

/// Accessible byte offsets of one period of a descriptor and the period
/// length, by walking blocks, repetitions and instances one at a time.
pub fn expand_desc(d: &AccessDesc) -> (Vec<u64>, u64) {
    let mut out = Vec::new();
    let end = walk_desc(d, 0, &mut out);
    (out, end)
}

fn walk_desc(d: &AccessDesc, start: u64, out: &mut Vec<u64>) -> u64 {
    let mut pos = start;
    for b in &d.blocks {
        pos += b.offset;
        for r in 0..b.repeat {
            if r > 0 {
                pos += b.stride;
            }
            for _ in 0..b.count {
                match &b.subtype {
                    None => {
                        out.push(pos);
                        pos += 1;
                    }
                    Some(sub) => pos = walk_desc(sub, pos, out),
                }
            }
        }
    }
    pos + d.skip
}

/// Upper bound of one instance, from the constructor definitions.
pub fn extent_of(t: &DatatypeTree) -> u64 {
    use DatatypeTree as T;
    match t {
        T::Base(b) => b.extent(),
        T::Contiguous { count, child } => count * extent_of(child),
        T::Vector {
            count,
            blocklen,
            stride,
            child,
        } => ((count - 1) * stride + blocklen) * extent_of(child),
        T::HVector {
            count,
            blocklen,
            stride,
            child,
        } => (count - 1) * stride + blocklen * extent_of(child),
        T::Indexed {
            blocklens,
            displs,
            child,
        } => {
            blocklens
                .iter()
                .zip(displs)
                .map(|(b, d)| b + d)
                .max()
                .unwrap_or(0)
                * extent_of(child)
        }
        T::HIndexed {
            blocklens,
            displs,
            child,
        } => {
            let e = extent_of(child);
            blocklens
                .iter()
                .zip(displs)
                .map(|(b, d)| d + b * e)
                .max()
                .unwrap_or(0)
        }
        T::Struct {
            blocklens,
            displs,
            children,
        } => blocklens
            .iter()
            .zip(displs)
            .zip(children)
            .map(|((b, d), c)| d + b * extent_of(c))
            .max()
            .unwrap_or(0),
        T::Subarray { sizes, child, .. } => sizes.iter().product::<u64>() * extent_of(child),
        T::Darray { gsizes, child, .. } => gsizes.iter().product::<u64>() * extent_of(child),
        T::Bounded { extent, .. } => *extent,
    }
}

/// All index tuples of an array of shape `dims`, in memory order.
fn index_space(dims: &[u64], order: Order) -> Vec<Vec<u64>> {
    let n = dims.len();
    let total: u64 = dims.iter().product();
    (0..total)
        .map(|mut lin| {
            let mut idx = vec![0; n];
            let dims_fast_first: Vec<usize> = match order {
                Order::C => (0..n).rev().collect(),
                Order::Fortran => (0..n).collect(),
            };
            for d in dims_fast_first {
                idx[d] = lin % dims[d];
                lin /= dims[d];
            }
            idx
        })
        .collect()
}

fn linear(idx: &[u64], dims: &[u64], order: Order) -> u64 {
    let n = dims.len();
    let mut lin = 0;
    let slow_first: Vec<usize> = match order {
        Order::C => (0..n).collect(),
        Order::Fortran => (0..n).rev().collect(),
    };
    for d in slow_first {
        lin = lin * dims[d] + idx[d];
    }
    lin
}

fn row_major_coords(rank: u64, psizes: &[u64]) -> Vec<u64> {
    let mut coords = vec![0; psizes.len()];
    let mut r = rank;
    for d in (0..psizes.len()).rev() {
        coords[d] = r % psizes[d];
        r /= psizes[d];
    }
    coords
}

/// Process coordinate owning global index `i` of a darray dimension.
pub fn darray_owner(dist: Distrib, gsize: u64, nprocs: u64, i: u64) -> u64 {
    match dist {
        Distrib::None => 0,
        Distrib::Block(arg) => {
            let b = match arg {
                DArg::Default => gsize.div_ceil(nprocs),
                DArg::Size(b) => b,
            };
            i / b
        }
        Distrib::Cyclic(arg) => {
            let b = match arg {
                DArg::Default => 1,
                DArg::Size(b) => b,
            };
            (i / b) % nprocs
        }
    }
}

/// Owning rank of every array element, elements in storage order (first
/// dimension fastest). Ranks number the grid with its first dimension fastest.
pub fn hpf_owners(rd: &RuntimeDescriptor) -> Vec<u64> {
    let dims: Vec<u64> = rd.dims.iter().map(|d| d.global_len).collect();
    let distributed: Vec<usize> = (0..dims.len())
        .filter(|&k| !matches!(rd.dims[k].dist, DistKind::None))
        .collect();
    let grid_of = |k: usize| -> Option<usize> {
        if rd.grid.len() == rd.dims.len() {
            Some(k)
        } else {
            distributed.iter().position(|&d| d == k)
        }
    };
    index_space(&dims, Order::Fortran)
        .into_iter()
        .map(|idx| {
            let mut coords = vec![0; rd.grid.len()];
            for (k, spec) in rd.dims.iter().enumerate() {
                if let Some(g) = grid_of(k) {
                    coords[g] = hpf_owner(spec, rd.grid[g], idx[k]);
                }
            }
            let mut rank = 0;
            for g in (0..rd.grid.len()).rev() {
                rank = rank * rd.grid[g] + coords[g];
            }
            rank
        })
        .collect()
}

fn hpf_owner(spec: &DimSpec, procs: u64, i: u64) -> u64 {
    match spec.dist {
        DistKind::Block => i / spec.arg,
        DistKind::Cyclic => (i / spec.arg) % procs,
        _ => 0,
    }
}

/// Byte offsets owned by `rank` under the HPF rules.
pub fn hpf_rank_bytes(rd: &RuntimeDescriptor, rank: u64) -> Vec<u64> {
    let es = rd.elem_size;
    hpf_owners(rd)
        .into_iter()
        .enumerate()
        .filter(|(_, r)| *r == rank)
        .flat_map(|(e, _)| (e as u64 * es)..(e as u64 + 1) * es)
        .collect()
}

/// Absolute byte offset of view byte `k` for a view with displacement
/// `disp` tiling `offsets` (one period, ascending) every `extent` bytes.
pub fn view_byte(disp: u64, offsets: &[u64], extent: u64, k: u64) -> u64 {
    let n = offsets.len() as u64;
    disp + (k / n) * extent + offsets[(k % n) as usize]
}

/// The mapping function of a view over a file of one-byte records: the
/// 1-based record indices of view bytes `start..start + len`.
pub fn psi_indices(disp: u64, offsets: &[u64], extent: u64, start: u64, len: u64) -> Vec<usize> {
    (start..start + len)
        .map(|k| view_byte(disp, offsets, extent, k) as usize + 1)
        .collect()
}

/// Number of view bytes that lie entirely below `file_size`.
pub fn view_len_within(disp: u64, offsets: &[u64], extent: u64, file_size: u64) -> u64 {
    if offsets.is_empty() {
        return 0;
    }
    let mut k = 0;
    while view_byte(disp, offsets, extent, k) < file_size {
        k += 1;
    }
    k
}

pub fn arb_base() -> impl Strategy<Value = BaseType> {
    prop::sample::select(BaseType::ALL.to_vec())
}

/// Ascending, non-overlapping block displacements given block lengths in
/// units of `unit` and gaps drawn from `gaps`.
fn layout_blocks(lens: &[u64], gaps: &[u64], unit: u64) -> Vec<u64> {
    let mut at = 0;
    lens.iter()
        .zip(gaps)
        .map(|(l, g)| {
            let d = at + g;
            at = d + l * unit;
            d
        })
        .collect()
}

fn arb_leaf() -> BoxedStrategy<DatatypeTree> {
    arb_base().prop_map(DatatypeTree::Base).boxed()
}

fn arb_node(child: BoxedStrategy<DatatypeTree>) -> BoxedStrategy<DatatypeTree> {
    let c = child.clone();
    let contiguous = (1u64..=6, c).prop_map(|(n, c)| DatatypeTree::contiguous(n, c));
    let c = child.clone();
    let vector = (1u64..=6, 1u64..=6, 0u64..=6, c)
        .prop_map(|(n, b, extra, c)| DatatypeTree::vector(n, b, b + extra, c));
    let c = child.clone();
    let hvector = (1u64..=6, 1u64..=6, 0u64..=64, c).prop_map(|(n, b, extra, c)| {
        let s = b * c.extent() + extra;
        DatatypeTree::hvector(n, b, s, c)
    });
    let c = child.clone();
    let indexed = (prop::collection::vec((1u64..=6, 0u64..=8), 1..=4), c).prop_map(|(bl, c)| {
        let lens: Vec<u64> = bl.iter().map(|x| x.0).collect();
        let gaps: Vec<u64> = bl.iter().map(|x| x.1).collect();
        DatatypeTree::indexed(lens.clone(), layout_blocks(&lens, &gaps, 1), c)
    });
    let c = child.clone();
    let hindexed = (prop::collection::vec((1u64..=6, 0u64..=64), 1..=4), c).prop_map(|(bl, c)| {
        let lens: Vec<u64> = bl.iter().map(|x| x.0).collect();
        let gaps: Vec<u64> = bl.iter().map(|x| x.1).collect();
        let e = c.extent();
        DatatypeTree::hindexed(lens.clone(), layout_blocks(&lens, &gaps, e), c)
    });
    let structure =
        prop::collection::vec((1u64..=6, 0u64..=64, child.clone()), 1..=3).prop_map(|bl| {
            let mut at = 0;
            let mut lens = Vec::new();
            let mut displs = Vec::new();
            let mut children = Vec::new();
            for (l, g, c) in bl {
                let d = at + g;
                at = d + l * c.extent();
                lens.push(l);
                displs.push(d);
                children.push(c);
            }
            DatatypeTree::structure(lens, displs, children)
        });
    let subarray = (
        prop::collection::vec(
            (
                1u64..=5,
                any::<prop::sample::Index>(),
                any::<prop::sample::Index>(),
            ),
            1..=3,
        ),
        prop_oneof![Just(Order::C), Just(Order::Fortran)],
        child,
    )
        .prop_map(|(dims, order, c)| {
            let sizes: Vec<u64> = dims.iter().map(|d| d.0).collect();
            let subsizes: Vec<u64> = dims
                .iter()
                .map(|d| 1 + d.1.index(d.0 as usize) as u64)
                .collect();
            let starts: Vec<u64> = dims
                .iter()
                .zip(&subsizes)
                .map(|(d, s)| d.2.index((d.0 - s + 1) as usize) as u64)
                .collect();
            DatatypeTree::subarray(sizes, subsizes, starts, order, c)
        });
    prop_oneof![
        contiguous,
        vector,
        hvector,
        indexed,
        hindexed,
        structure,
        subarray,
        arb_darray(arb_leaf()),
    ]
    .boxed()
}

/// Random valid darray over a random grid of at most 2x2 processes.
pub fn arb_darray(child: BoxedStrategy<DatatypeTree>) -> BoxedStrategy<DatatypeTree> {
    let dim = (1u64..=10, 1u64..=2, 0u8..3, 0u64..=4, any::<bool>());
    (
        prop::collection::vec(dim, 1..=2),
        prop_oneof![Just(Order::C), Just(Order::Fortran)],
        any::<prop::sample::Index>(),
        child,
    )
        .prop_map(|(dims, order, r, c)| {
            let gsizes: Vec<u64> = dims.iter().map(|d| d.0).collect();
            let mut psizes = Vec::new();
            let mut distribs = Vec::new();
            for &(g, p, kind, arg, default) in &dims {
                let (p, dist) = match kind {
                    0 => (1, Distrib::None),
                    1 => {
                        let min = g.div_ceil(p);
                        let a = if default {
                            DArg::Default
                        } else {
                            DArg::Size(min + arg % 2)
                        };
                        (p, Distrib::Block(a))
                    }
                    _ => {
                        let a = if default {
                            DArg::Default
                        } else {
                            DArg::Size(1 + arg)
                        };
                        (p, Distrib::Cyclic(a))
                    }
                };
                psizes.push(p);
                distribs.push(dist);
            }
            let size: u64 = psizes.iter().product();
            let rank = r.index(size as usize) as u64;
            DatatypeTree::darray(size, rank, gsizes, distribs, psizes, order, c)
        })
        .boxed()
}

/// Random valid datatype trees of depth at most `depth` whose extent stays
/// below `max_extent` bytes.
pub fn arb_tree(depth: u32, max_extent: u64) -> BoxedStrategy<DatatypeTree> {
    arb_leaf()
        .prop_recursive(depth, 64, 6, arb_node)
        .prop_filter("extent too large", move |t| {
            t.extent() <= max_extent && t.size() > 0
        })
        .boxed()
}

/// Random supported runtime descriptors: up to 3 dimensions, global lengths
/// up to 24, grids of at most 3x4 processes.
pub fn arb_runtime_descriptor() -> BoxedStrategy<RuntimeDescriptor> {
    let dim = (1u64..=24, 1u64..=4, 0u8..3, 0u64..=24);
    (
        prop::collection::vec(dim, 1..=3),
        any::<bool>(),
        prop::sample::select(vec![(1u32, 1u64), (4, 4), (8, 8), (2, 2)]),
    )
        .prop_map(|(dims, full_grid, (code, es))| {
            let mut grid = Vec::new();
            let mut specs = Vec::new();
            let mut procs_total = 1;
            for (g, p, kind, arg) in dims {
                let p = if procs_total * p > 12 { 1 } else { p };
                let spec = match kind {
                    0 => DimSpec::none(g),
                    1 => DimSpec::block(g, g.div_ceil(p) + arg % 3),
                    _ => DimSpec::cyclic(g, 1 + arg % g),
                };
                let distributed = kind != 0;
                if distributed {
                    procs_total *= p;
                    grid.push(p);
                } else if full_grid {
                    grid.push(1);
                }
                specs.push((spec, distributed));
            }
            // A grid listing only distributed dimensions needs at least one.
            if grid.is_empty() {
                grid = vec![1; specs.len()];
            }
            RuntimeDescriptor {
                grid,
                elem_type_code: code,
                elem_size: es,
                dims: specs.into_iter().map(|(s, _)| s).collect(),
            }
        })
        .boxed()
}
