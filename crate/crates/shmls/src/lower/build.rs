//! Small helpers for constructing well-typed operations in passes.

use crate::ir::{Attribute, Operation, Param, Region, ScalarType, Type, ValueId, ValueNamer};

pub fn index_const(namer: &mut ValueNamer, value: i64) -> (Operation, ValueId) {
    let mut op = Operation::new("arith.constant");
    let v = namer.fresh("c");
    op.attributes
        .insert("value".into(), Attribute::Int(value, ScalarType::Index));
    op.results = vec![Param {
        value: v.clone(),
        ty: Type::INDEX,
    }];
    (op, v)
}

pub fn float_const(namer: &mut ValueNamer, value: f64, elem: ScalarType) -> (Operation, ValueId) {
    let mut op = Operation::new("arith.constant");
    let v = namer.fresh("k");
    op.attributes
        .insert("value".into(), Attribute::float(value, elem));
    op.results = vec![Param {
        value: v.clone(),
        ty: Type::Scalar(elem),
    }];
    (op, v)
}

pub fn create_stream(namer: &mut ValueNamer, element: Type, depth: u32) -> (Operation, ValueId, Type) {
    let ty = Type::Stream {
        element: Box::new(element.clone()),
        depth,
    };
    let mut op = Operation::new("hls.create_stream");
    let v = namer.fresh("s");
    op.attributes
        .insert("element".into(), Attribute::TypeAttr(element));
    op.attributes
        .insert("depth".into(), Attribute::i32(depth as i64));
    op.results = vec![Param {
        value: v.clone(),
        ty: ty.clone(),
    }];
    (op, v, ty)
}

pub fn hls_read(namer: &mut ValueNamer, stream: &ValueId, stream_ty: &Type) -> (Operation, ValueId) {
    let elem = match stream_ty {
        Type::Stream { element, .. } => element.as_ref().clone(),
        _ => panic!("hls_read on non-stream type"),
    };
    let mut op = Operation::new("hls.read");
    let v = namer.fresh("r");
    op.operands = vec![stream.clone()];
    op.operand_types = vec![stream_ty.clone()];
    op.results = vec![Param {
        value: v.clone(),
        ty: elem,
    }];
    (op, v)
}

pub fn hls_write(value: &ValueId, value_ty: &Type, stream: &ValueId, stream_ty: &Type) -> Operation {
    let mut op = Operation::new("hls.write");
    op.operands = vec![value.clone(), stream.clone()];
    op.operand_types = vec![value_ty.clone(), stream_ty.clone()];
    op
}

pub fn pipeline_marker(ii: i64) -> Operation {
    let mut op = Operation::new("hls.pipeline");
    op.attributes.insert("ii".into(), Attribute::i32(ii));
    op
}

pub fn scf_yield() -> Operation {
    Operation::new("scf.yield")
}

/// `scf.for(lb, ub, step)` with a fresh induction variable; the caller fills
/// the body after the returned op is constructed.
pub fn scf_for(
    namer: &mut ValueNamer,
    lb: ValueId,
    ub: ValueId,
    step: ValueId,
    body_ops: Vec<Operation>,
    iv: ValueId,
) -> Operation {
    let mut op = Operation::new("scf.for");
    op.operands = vec![lb, ub, step];
    op.operand_types = vec![Type::INDEX, Type::INDEX, Type::INDEX];
    op.regions = vec![Region::new(
        vec![Param {
            value: iv,
            ty: Type::INDEX,
        }],
        body_ops,
    )];
    let _ = namer;
    op
}

/// A counted loop `for i in [0, n)` wrapping `body`, with constants emitted
/// in front. Returns the ops to splice into the enclosing region.
pub fn counted_loop(
    namer: &mut ValueNamer,
    n: i64,
    pipeline_ii: Option<i64>,
    body: impl FnOnce(&mut ValueNamer, &ValueId) -> Vec<Operation>,
) -> Vec<Operation> {
    let (c0, v0) = index_const(namer, 0);
    let (cn, vn) = index_const(namer, n);
    let (c1, v1) = index_const(namer, 1);
    let iv = namer.fresh("i");
    let mut inner = Vec::new();
    if let Some(ii) = pipeline_ii {
        inner.push(pipeline_marker(ii));
    }
    inner.extend(body(namer, &iv));
    inner.push(scf_yield());
    let for_op = scf_for(namer, v0, vn, v1, inner, iv);
    vec![c0, cn, c1, for_op]
}

pub fn dataflow_region(stage: &str, ops: Vec<Operation>) -> Operation {
    let mut op = Operation::new("hls.dataflow");
    op.attributes
        .insert("stage".into(), Attribute::Str(stage.to_string()));
    op.regions = vec![Region::new(vec![], ops)];
    op
}

pub fn call(callee: &str, args: Vec<(ValueId, Type)>) -> Operation {
    let mut op = Operation::new("func.call");
    op.symbol = Some(callee.to_string());
    for (v, t) in args {
        op.operands.push(v);
        op.operand_types.push(t);
    }
    op
}

/// 512-bit packed interface type for an element scalar.
pub fn packed_ptr(elem: ScalarType, lanes: u32) -> Type {
    Type::Ptr(Box::new(Type::Struct(vec![Type::Array {
        size: lanes as u64,
        element: Box::new(Type::Scalar(elem)),
    }])))
}
