//! Core algorithms of the vipios parallel I/O system.
//!
//! Everything here is pure and allocation-only: the sequential file model used
//! as a test oracle, derived datatype trees, the recursive access descriptor
//! engine, HPF-style block/cyclic distributions, the file layout and request
//! fragmenter, and the binary wire codec. IO, threads and the CLI live in the
//! `vipios` crate.
#![no_std]

extern crate alloc;

pub mod datatypes;
pub mod distribution;
pub mod file_model;
pub mod layout;
pub mod protocol;
pub mod viewdesc;

pub use datatypes::{BaseType, DatatypeTree, Distrib, Order};
pub use viewdesc::{AccessDesc, BasicBlock, ByteRun, View};
