//! HLS dialect: stream-typed operations, directive markers and verifiers.
//!
//! Ten operations: interface, pipeline, unroll, array_partition, dataflow,
//! create_stream, read, write, empty, full. Directive parameters (II, unroll
//! factor, protocol, bundle, bank, stream element/depth) are attributes;
//! `hls.dataflow` carries a region so the stage structure is explicit.

pub mod graph;

pub use graph::{build_dataflow_graph, DataflowGraph, GraphError, StageKind};

use crate::ir::verify::OpCheckCtx;
use crate::ir::{Attribute, Operation, Type};

pub const PROTOCOL_M_AXI: i64 = 0;
pub const PROTOCOL_S_AXILITE: i64 = 1;
pub const PROTOCOL_AXIS: i64 = 2;

pub fn dialect_verify(op: &Operation, ctx: &OpCheckCtx) -> Vec<String> {
    let mut out = Vec::new();
    match op.name.as_str() {
        "hls.interface" => {
            if op.operands.len() != 1 {
                out.push("hls.interface takes the interfaced argument".into());
            } else if !ctx.func_args.contains(&op.operands[0]) {
                out.push("hls.interface operand must be a kernel argument".into());
            }
            match op.attr_int("protocol") {
                Some(p) if (0..=2).contains(&p) => {}
                Some(p) => out.push(format!("protocol {p} is not one of m_axi=0, s_axilite=1, axis=2")),
                None => out.push("hls.interface requires a `protocol` attribute".into()),
            }
            match op.attr("bundle") {
                Some(Attribute::Str(s)) if !s.is_empty() => {}
                Some(_) => out.push("bundle must be a non-empty string".into()),
                None => out.push("hls.interface requires a `bundle` attribute".into()),
            }
        }
        "hls.pipeline" => match op.attr_int("ii") {
            Some(ii) if ii >= 1 => {}
            Some(ii) => out.push(format!("initiation interval must be >= 1, got {ii}")),
            None => out.push("hls.pipeline requires an `ii` attribute".into()),
        },
        "hls.unroll" => match op.attr_int("factor") {
            Some(f) if f >= 1 => {}
            Some(f) => out.push(format!("unroll factor must be >= 1, got {f}")),
            None => out.push("hls.unroll requires a `factor` attribute".into()),
        },
        "hls.array_partition" => {
            if let Some(Attribute::Str(kind)) = op.attr("kind") {
                if !matches!(kind.as_str(), "cyclic" | "block" | "complete") {
                    out.push(format!("unknown partition kind `{kind}`"));
                }
            }
            if let Some(f) = op.attr_int("factor") {
                if f < 1 {
                    out.push("partition factor must be >= 1".into());
                }
            }
        }
        "hls.dataflow" => {
            if !op.operands.is_empty() || !op.results.is_empty() {
                out.push("hls.dataflow takes no operands and yields nothing".into());
            }
            match op.regions.as_slice() {
                [r] => {
                    for child in &r.ops {
                        if !matches!(
                            child.name.as_str(),
                            "func.call" | "scf.for" | "arith.constant" | "hls.dataflow"
                        ) {
                            out.push(format!(
                                "`{}` is not a stage-shaped child of hls.dataflow",
                                child.name
                            ));
                        }
                    }
                }
                _ => out.push("hls.dataflow requires exactly one region".into()),
            }
        }
        "hls.create_stream" => {
            if !op.operands.is_empty() || op.results.len() != 1 {
                out.push("hls.create_stream defines exactly one stream".into());
                return out;
            }
            let (elem_attr, depth_attr) = (op.attr("element"), op.attr_int("depth"));
            match &op.results[0].ty {
                Type::Stream { element, depth } => {
                    match elem_attr.and_then(|a| a.as_type()) {
                        Some(t) if t == element.as_ref() => {}
                        Some(t) => out.push(format!(
                            "stream element attribute {t} does not match result type {element}"
                        )),
                        None => out.push("hls.create_stream requires an `element` type attribute".into()),
                    }
                    match depth_attr {
                        Some(d) if d >= 1 && d == *depth as i64 => {}
                        Some(d) if d < 1 => out.push(format!("stream depth must be >= 1, got {d}")),
                        Some(d) => out.push(format!(
                            "depth attribute {d} does not match stream type depth {depth}"
                        )),
                        None => out.push("hls.create_stream requires a `depth` attribute".into()),
                    }
                    if !stream_element_ok(element) {
                        out.push(format!(
                            "stream element must be scalar, struct or array, got {element}"
                        ));
                    }
                }
                other => out.push(format!("hls.create_stream result must be a stream, got {other}")),
            }
        }
        "hls.read" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                out.push("hls.read pops one element from one stream".into());
                return out;
            }
            match ctx.operand_type(op, 0) {
                Some(Type::Stream { element, .. }) => {
                    if op.results[0].ty != **element {
                        out.push(format!(
                            "hls.read yields {}, stream carries {element}",
                            op.results[0].ty
                        ));
                    }
                }
                Some(other) => out.push(format!("hls.read operand must be a stream, got {other}")),
                None => {}
            }
        }
        "hls.write" => {
            if op.operands.len() != 2 || !op.results.is_empty() {
                out.push("hls.write pushes one element into one stream".into());
                return out;
            }
            match (ctx.operand_type(op, 0), ctx.operand_type(op, 1)) {
                (Some(v), Some(Type::Stream { element, .. })) => {
                    if v != element.as_ref() {
                        out.push(format!("hls.write of {v} into a stream of {element}"));
                    }
                }
                (_, Some(other)) => {
                    out.push(format!("hls.write target must be a stream, got {other}"))
                }
                _ => {}
            }
        }
        "hls.empty" | "hls.full" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                out.push(format!("{} probes one stream", op.name));
                return out;
            }
            if !matches!(ctx.operand_type(op, 0), Some(Type::Stream { .. }) | None) {
                out.push(format!("{} operand must be a stream", op.name));
            }
            if op.results[0].ty != Type::I1 {
                out.push(format!("{} yields i1", op.name));
            }
        }
        other => out.push(format!("unknown hls op `{other}`")),
    }
    out
}

fn stream_element_ok(t: &Type) -> bool {
    matches!(t, Type::Scalar(_) | Type::Struct(_) | Type::Array { .. })
}

#[cfg(test)]
mod tests {
    use crate::ir::{parse, verify};

    #[test]
    fn read_of_matching_type_is_ok() {
        let src = r#"
module {
  func.func @k() {
    %s = hls.create_stream() {depth = 2 : i32, element = f64} : () -> (!stream<f64, 2>)
    hls.dataflow() {
      %c0 = arith.constant() {value = 0 : index} : () -> (index)
      %c4 = arith.constant() {value = 4 : index} : () -> (index)
      %c1 = arith.constant() {value = 1 : index} : () -> (index)
      scf.for(%c0, %c4, %c1) {
      ^bb0(%i: index):
        %v = hls.read(%s) : (!stream<f64, 2>) -> (f64)
        hls.write(%v, %s) : (f64, !stream<f64, 2>) -> ()
        scf.yield() : () -> ()
      } : (index, index, index) -> ()
    } : () -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn write_type_mismatch_is_one_diagnostic() {
        let src = r#"
module {
  func.func @k(%x: f32) {
    %s = hls.create_stream() {depth = 2 : i32, element = f64} : () -> (!stream<f64, 2>)
    hls.write(%x, %s) : (f32, !stream<f64, 2>) -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert_eq!(
            diags
                .iter()
                .filter(|d| d.message.contains("into a stream of"))
                .count(),
            1,
            "{diags:?}"
        );
    }

    #[test]
    fn pipeline_ii_zero_is_one_diagnostic() {
        let src = r#"
module {
  func.func @k() {
    hls.pipeline() {ii = 0 : i32} : () -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert_eq!(
            diags
                .iter()
                .filter(|d| d.message.contains("initiation interval"))
                .count(),
            1,
            "{diags:?}"
        );
    }
}
