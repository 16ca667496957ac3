//! Registry of known dialects and operations.
//!
//! Unknown dialects and unknown op names are parse errors, which keeps every
//! downstream verifier total over parsed modules.

pub const DIALECTS: &[&str] = &["func", "arith", "scf", "memref", "stencil", "hls"];

pub const OPS: &[&str] = &[
    // func
    "func.func",
    "func.call",
    "func.return",
    // arith
    "arith.constant",
    "arith.addf",
    "arith.subf",
    "arith.mulf",
    "arith.divf",
    "arith.negf",
    // scf
    "scf.for",
    "scf.yield",
    // memref
    "memref.alloca",
    "memref.load",
    "memref.store",
    // stencil
    "stencil.external_load",
    "stencil.load",
    "stencil.apply",
    "stencil.access",
    "stencil.return",
    "stencil.store",
    "stencil.external_store",
    // hls
    "hls.interface",
    "hls.pipeline",
    "hls.unroll",
    "hls.array_partition",
    "hls.dataflow",
    "hls.create_stream",
    "hls.read",
    "hls.write",
    "hls.empty",
    "hls.full",
];

pub fn is_known_op(name: &str) -> bool {
    OPS.contains(&name)
}

pub fn is_known_dialect(d: &str) -> bool {
    DIALECTS.contains(&d)
}

/// Ops that must appear last in their region.
pub fn is_terminator(name: &str) -> bool {
    matches!(name, "func.return" | "scf.yield" | "stencil.return")
}

/// Required terminator for the region(s) of an op, if any.
pub fn required_terminator(parent_op: &str) -> Option<&'static str> {
    match parent_op {
        "scf.for" => Some("scf.yield"),
        "stencil.apply" => Some("stencil.return"),
        _ => None,
    }
}
