//! Stencil-to-dataflow HLS lowering toolkit.
//!
//! The pipeline: parse textual stencil-dialect IR, lower it through the
//! nine-step dataflow transformation into the HLS dialect (shift buffers,
//! streams, per-field compute splitting, 512-bit interface packing, port
//! bundle planning), emit annotated low-level IR for an HLS backend, and
//! validate the whole path with a reference interpreter plus a
//! cycle-approximate dataflow simulator.

pub mod backend;
pub mod config;
pub mod geom;
pub mod grid;
pub mod hls;
pub mod ir;
pub mod lower;
pub mod progen;
pub mod report;
pub mod schema;
pub mod sim;
pub mod stencil;

pub use config::Config;
