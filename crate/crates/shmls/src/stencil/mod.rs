//! Stencil dialect: operation verifiers, program extraction and the
//! scalar reference interpreter.

pub mod interp;
pub mod program;

pub use interp::{interpret, ArgValue, InterpError, InterpOutput};
pub use program::{extract_program, ApplySpec, ArgKind, BodyExpr, ExtractError, OperandBinding, SourceRef, StencilProgram};

use crate::ir::verify::OpCheckCtx;
use crate::ir::{Attribute, DimBound, Operation, Type};

/// Per-op structural rules for the stencil dialect. Returns messages; the
/// caller attaches paths.
pub fn dialect_verify(op: &Operation, ctx: &OpCheckCtx) -> Vec<String> {
    let mut out = Vec::new();
    match op.name.as_str() {
        "stencil.external_load" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                out.push("stencil.external_load binds one buffer to one field".into());
                return out;
            }
            let field = &op.results[0].ty;
            let (bounds, felem) = match field {
                Type::Field { bounds, element } => (bounds, *element),
                other => {
                    out.push(format!("result must be a field type, got {other}"));
                    return out;
                }
            };
            match ctx.operand_type(op, 0) {
                Some(Type::MemRef { shape, element }) => {
                    if *element != felem {
                        out.push("buffer element type does not match field".into());
                    }
                    if shape.len() != bounds.len() {
                        out.push("buffer rank does not match field rank".into());
                    } else {
                        for (s, b) in shape.iter().zip(bounds) {
                            if let DimBound::Known(l, h) = b {
                                if h - l != *s {
                                    out.push(format!(
                                        "field bounds [{l},{h}] do not cover buffer extent {s}"
                                    ));
                                }
                            }
                        }
                    }
                }
                Some(Type::Ptr(_)) => {} // packed interface, post-lowering
                Some(other) => out.push(format!("operand must be a buffer, got {other}")),
                None => {}
            }
        }
        "stencil.load" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                out.push("stencil.load reads one field into one temp".into());
                return out;
            }
            match (ctx.operand_type(op, 0), &op.results[0].ty) {
                (Some(Type::Field { bounds, element }), Type::Temp { extents, element: te }) => {
                    if *element != *te {
                        out.push("temp element type does not match field".into());
                    }
                    if bounds.len() != extents.len() {
                        out.push("temp rank does not match field rank".into());
                    }
                }
                (Some(other), _) => out.push(format!("operand must be a field, got {other}")),
                _ => {}
            }
        }
        "stencil.apply" => verify_apply(op, ctx, &mut out),
        "stencil.access" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                out.push("stencil.access takes one temp and yields one element".into());
                return out;
            }
            if ctx.innermost_parent() != Some("stencil.apply") {
                out.push("stencil.access outside a stencil.apply region".into());
            } else if let Some(args) = ctx.enclosing_region_args.last() {
                if !args.iter().any(|p| p.value == op.operands[0]) {
                    out.push("access must name an argument of its apply region".into());
                }
            }
            let rank = match ctx.operand_type(op, 0) {
                Some(Type::Temp { extents, element }) => {
                    if op.results[0].ty != Type::Scalar(*element) {
                        out.push("access result must be the temp element type".into());
                    }
                    Some(extents.len())
                }
                Some(other) => {
                    out.push(format!("access operand must be a temp, got {other}"));
                    None
                }
                None => None,
            };
            match op.attr("offset") {
                Some(Attribute::DenseInts(offs)) => {
                    if let Some(r) = rank {
                        if offs.len() != r {
                            out.push(format!(
                                "offset rank {} does not match temp rank {r}",
                                offs.len()
                            ));
                        }
                    }
                    for c in offs {
                        if c.abs() > 1 {
                            out.push(format!(
                                "offset component {c} exceeds the supported radius of 1"
                            ));
                        }
                    }
                }
                _ => out.push("access requires a dense integer `offset` attribute".into()),
            }
        }
        "stencil.return" => {
            if ctx.innermost_parent() != Some("stencil.apply") {
                out.push("stencil.return outside a stencil.apply region".into());
            }
        }
        "stencil.store" => {
            if op.operands.len() != 2 {
                out.push("stencil.store takes (temp, field)".into());
                return out;
            }
            match (ctx.operand_type(op, 0), ctx.operand_type(op, 1)) {
                (
                    Some(Type::Temp { extents, element }),
                    Some(Type::Field { bounds, element: fe }),
                ) => {
                    if element != fe {
                        out.push("stored temp element type does not match field".into());
                    }
                    if extents.len() != bounds.len() {
                        out.push("stored temp rank does not match field rank".into());
                    }
                    if bounds.iter().any(|b| matches!(b, DimBound::Unknown)) {
                        out.push("store target bounds must be known".into());
                    } else {
                        for b in bounds {
                            if let DimBound::Known(l, h) = b {
                                if l >= h {
                                    out.push(format!("degenerate store bounds [{l},{h}]"));
                                }
                            }
                        }
                    }
                }
                (Some(a), Some(b)) => {
                    out.push(format!("stencil.store expects (temp, field), got ({a}, {b})"))
                }
                _ => {}
            }
        }
        "stencil.external_store" => {
            if op.operands.len() != 2 {
                out.push("stencil.external_store takes (field, buffer)".into());
                return out;
            }
            match (ctx.operand_type(op, 0), ctx.operand_type(op, 1)) {
                (Some(Type::Field { .. }), Some(Type::MemRef { .. }))
                | (Some(Type::Field { .. }), Some(Type::Ptr(_))) => {}
                (Some(a), Some(b)) => out.push(format!(
                    "stencil.external_store expects (field, buffer), got ({a}, {b})"
                )),
                _ => {}
            }
        }
        other => out.push(format!("unknown stencil op `{other}`")),
    }
    out
}

fn verify_apply(op: &Operation, ctx: &OpCheckCtx, out: &mut Vec<String>) {
    let region = match op.regions.as_slice() {
        [r] => r,
        _ => {
            out.push("stencil.apply requires exactly one region".into());
            return;
        }
    };
    if region.args.len() != op.operands.len() {
        out.push(format!(
            "apply region has {} arguments for {} operands",
            region.args.len(),
            op.operands.len()
        ));
    }
    for (i, p) in region.args.iter().enumerate() {
        if let Some(t) = ctx.operand_type(op, i) {
            if !p.ty.compatible(t) {
                out.push(format!(
                    "region argument {i} type {} does not match operand type {t}",
                    p.ty
                ));
            }
        }
    }
    let mut rank: Option<usize> = None;
    let mut temp_count = 0usize;
    for i in 0..op.operands.len() {
        match ctx.operand_type(op, i) {
            Some(Type::Temp { extents, .. }) => {
                temp_count += 1;
                match rank {
                    None => rank = Some(extents.len()),
                    Some(r) if r != extents.len() => {
                        out.push("apply operands have mixed ranks".into())
                    }
                    _ => {}
                }
            }
            Some(Type::MemRef { .. }) | Some(Type::Scalar(_)) | None => {}
            Some(other) => out.push(format!("unsupported apply operand type {other}")),
        }
    }
    if temp_count == 0 {
        out.push("apply must read at least one temp".into());
    }
    match region.ops.last() {
        Some(ret) if ret.name == "stencil.return" => {
            if ret.operands.len() != op.results.len() {
                out.push(format!(
                    "stencil.return yields {} values but apply declares {} results",
                    ret.operands.len(),
                    op.results.len()
                ));
            }
        }
        _ => {} // terminator rule reported by the region checker
    }
    for p in &op.results {
        match &p.ty {
            Type::Temp { extents, .. } => {
                if let Some(r) = rank {
                    if extents.len() != r {
                        out.push("apply result rank does not match operand rank".into());
                    }
                }
            }
            other => out.push(format!("apply results must be temps, got {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::{parse, verify};

    #[test]
    fn rank_mismatch_in_access_is_reported() {
        let src = r#"
module {
  func.func @kernel(%arg0: memref<16xf64>, %arg1: memref<16xf64>) {
    %0 = stencil.external_load(%arg0) : (memref<16xf64>) -> (!field<[0,16]xf64>)
    %1 = stencil.external_load(%arg1) : (memref<16xf64>) -> (!field<[0,16]xf64>)
    %2 = stencil.load(%0) : (!field<[0,16]xf64>) -> (!temp<?xf64>)
    %3 = stencil.apply(%2) {
    ^bb0(%4: !temp<?xf64>):
      %5 = stencil.access(%4) {offset = <0,1>} : (!temp<?xf64>) -> (f64)
      stencil.return(%5) : (f64) -> ()
    } : (!temp<?xf64>) -> (!temp<?xf64>)
    stencil.store(%3, %1) : (!temp<?xf64>, !field<[0,16]xf64>) -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert_eq!(
            diags
                .iter()
                .filter(|d| d.message.contains("offset rank"))
                .count(),
            1,
            "{diags:?}"
        );
    }

    #[test]
    fn radius_two_offset_is_rejected() {
        let src = r#"
module {
  func.func @kernel(%arg0: memref<16xf64>, %arg1: memref<16xf64>) {
    %0 = stencil.external_load(%arg0) : (memref<16xf64>) -> (!field<[0,16]xf64>)
    %1 = stencil.external_load(%arg1) : (memref<16xf64>) -> (!field<[0,16]xf64>)
    %2 = stencil.load(%0) : (!field<[0,16]xf64>) -> (!temp<?xf64>)
    %3 = stencil.apply(%2) {
    ^bb0(%4: !temp<?xf64>):
      %5 = stencil.access(%4) {offset = <2>} : (!temp<?xf64>) -> (f64)
      stencil.return(%5) : (f64) -> ()
    } : (!temp<?xf64>) -> (!temp<?xf64>)
    stencil.store(%3, %1) : (!temp<?xf64>, !field<[0,16]xf64>) -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert_eq!(
            diags
                .iter()
                .filter(|d| d.message.contains("radius"))
                .count(),
            1,
            "{diags:?}"
        );
    }
}
