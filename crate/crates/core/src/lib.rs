//! Binary-only hardening and coverage instrumentation for WebAssembly.
//!
//! [`ir`] decodes, edits, validates and re-encodes MVP modules. [`passes`]
//! rewrites them with stack canaries, heap canaries and AFL-style edge
//! coverage, recording every inserted oracle in a [`SiteTable`].

pub mod ir;
pub mod passes;

pub use passes::sites::{Site, SiteKind, SiteTable};
