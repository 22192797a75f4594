//! Packet-level datacenter trace synthesis and fidelity evaluation.
//!
//! A trace is an ordered sequence of `(src, dst)` requests over a network of
//! `n` nodes. This crate trains a small decoder-only transformer on such
//! traces (with a combined field/segment/trace-ID meta-data embedding),
//! generates novel traces under temperature and scale-mask control, and
//! scores generated traces against their originals with four measures:
//! traffic matrices, trace complexity, burst statistics, and n-gram novelty.
//!
//! The `examples/` directory has one runnable example per major capability;
//! the `tracegen` binary wires the same pieces into a config-driven
//! preprocess/train/generate/eval pipeline.

pub mod cli;
pub mod fidelity;
pub mod generator;
pub mod model;
pub mod tokenizer;
pub mod trace;

pub mod util;

pub use trace::{Request, Trace, TraceMeta, TrafficMatrix};
