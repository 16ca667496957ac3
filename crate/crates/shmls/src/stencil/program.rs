//! Bridge from verified stencil-dialect IR to an executable program shape.

use std::collections::HashMap;
use std::fmt;

use crate::geom::IBox;
use crate::ir::{Attribute, DimBound, FunctionDef, IRModule, Operation, ScalarType, Type, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub enum ArgKind {
    InputField(IBox),
    OutputField(IBox),
    /// Both loaded and stored; rejected for lowering but recorded here.
    InOutField(IBox),
    ConstArray(usize),
    Scalar,
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceRef {
    /// External input field, by kernel argument index.
    Field(usize),
    /// Result of an earlier apply: (apply index, result index).
    Temp(usize, usize),
}

/// Binding of one apply operand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperandBinding {
    Source(SourceRef),
    ConstArray(usize),
    Scalar(usize),
}

/// One SSA expression inside an apply body. Values are slot indices.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyExpr {
    /// Window read of operand `operand` at a radius-1 offset.
    Access { operand: usize, offset: Vec<i64> },
    Const(f64),
    /// `memref.load` of a constant-array operand at a fixed index.
    LoadConst { operand: usize, index: usize },
    /// Scalar kernel argument passed through the apply.
    ScalarArg { operand: usize },
    Bin { op: BinOp, lhs: usize, rhs: usize },
    Neg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn from_op_name(name: &str) -> Option<BinOp> {
        match name {
            "arith.addf" => Some(BinOp::Add),
            "arith.subf" => Some(BinOp::Sub),
            "arith.mulf" => Some(BinOp::Mul),
            "arith.divf" => Some(BinOp::Div),
            _ => None,
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            BinOp::Add => "arith.addf",
            BinOp::Sub => "arith.subf",
            BinOp::Mul => "arith.mulf",
            BinOp::Div => "arith.divf",
        }
    }

    pub fn eval(&self, a: f64, b: f64, elem: ScalarType) -> f64 {
        match elem {
            ScalarType::F32 => {
                let (a, b) = (a as f32, b as f32);
                (match self {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }) as f64
            }
            _ => match self {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApplySpec {
    /// One binding per apply operand, in operand order.
    pub operands: Vec<OperandBinding>,
    pub body: Vec<BodyExpr>,
    /// Body slots returned by `stencil.return`, one per result.
    pub returns: Vec<usize>,
    /// Output-field argument index per result, when stored.
    pub stores: Vec<Option<usize>>,
}

impl ApplySpec {
    /// Distinct window offsets used on a given operand slot.
    pub fn offsets_of(&self, operand: usize) -> Vec<Vec<i64>> {
        let mut seen = Vec::new();
        for e in &self.body {
            if let BodyExpr::Access { operand: o, offset } = e {
                if *o == operand && !seen.contains(offset) {
                    seen.push(offset.clone());
                }
            }
        }
        seen
    }

    pub fn sources(&self) -> Vec<SourceRef> {
        self.operands
            .iter()
            .filter_map(|b| match b {
                OperandBinding::Source(s) => Some(*s),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StencilProgram {
    pub rank: usize,
    pub element: ScalarType,
    pub args: Vec<ArgKind>,
    pub applies: Vec<ApplySpec>,
}

#[derive(Debug, Clone)]
pub struct ExtractError(pub String);

impl fmt::Display for ExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "program extraction: {}", self.0)
    }
}

impl std::error::Error for ExtractError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ExtractError> {
    Err(ExtractError(msg.into()))
}

fn field_box(ty: &Type) -> Result<IBox, ExtractError> {
    match ty {
        Type::Field { bounds, .. } => {
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for b in bounds {
                match b {
                    DimBound::Known(l, h) => {
                        lo.push(*l);
                        hi.push(*h);
                    }
                    DimBound::Unknown => return err("field with unknown bounds cannot execute"),
                }
            }
            Ok(IBox::new(lo, hi))
        }
        other => err(format!("expected a field type, got {other}")),
    }
}

/// Extract the executable program from a verified module containing exactly
/// one kernel function.
pub fn extract_program(m: &IRModule) -> Result<StencilProgram, ExtractError> {
    let mut kernels = m.functions.iter().filter(|f| f.body.is_some());
    let kernel = match (kernels.next(), kernels.next()) {
        (Some(k), None) => k,
        (None, _) => return err("module has no kernel function"),
        (Some(_), Some(_)) => return err("module has multiple kernel functions"),
    };
    extract_from_kernel(kernel)
}

fn extract_from_kernel(kernel: &FunctionDef) -> Result<StencilProgram, ExtractError> {
    let body = kernel.body.as_ref().unwrap();
    let arg_index: HashMap<&ValueId, usize> = kernel
        .args
        .iter()
        .enumerate()
        .map(|(i, p)| (&p.value, i))
        .collect();

    // Value maps built in program order.
    let mut field_of_value: HashMap<&ValueId, usize> = HashMap::new(); // field value -> arg idx
    let mut temp_of_value: HashMap<&ValueId, SourceRef> = HashMap::new();
    let mut loaded: Vec<usize> = Vec::new();
    let mut stored: Vec<usize> = Vec::new();
    let mut applies: Vec<ApplySpec> = Vec::new();
    let mut rank: Option<usize> = None;
    let mut element: Option<ScalarType> = None;
    let mut field_boxes: HashMap<usize, IBox> = HashMap::new();

    for op in &body.ops {
        match op.name.as_str() {
            "stencil.external_load" => {
                let arg = *arg_index
                    .get(&op.operands[0])
                    .ok_or_else(|| ExtractError("external_load source must be a kernel argument".into()))?;
                let bx = field_box(&op.results[0].ty)?;
                match rank {
                    None => rank = Some(bx.rank()),
                    Some(r) if r != bx.rank() => return err("mixed field ranks in one kernel"),
                    _ => {}
                }
                if let Type::Field { element: e, .. } = &op.results[0].ty {
                    match element {
                        None => element = Some(*e),
                        Some(cur) if cur != *e => return err("mixed element types in one kernel"),
                        _ => {}
                    }
                }
                if field_boxes.insert(arg, bx).is_some() {
                    return err(format!("argument {arg} bound by external_load twice"));
                }
                field_of_value.insert(&op.results[0].value, arg);
            }
            "stencil.load" => {
                let arg = *field_of_value
                    .get(&op.operands[0])
                    .ok_or_else(|| ExtractError("load of a value that is not a field".into()))?;
                loaded.push(arg);
                temp_of_value.insert(&op.results[0].value, SourceRef::Field(arg));
            }
            "stencil.apply" => {
                let spec = extract_apply(op, &arg_index, &temp_of_value)?;
                let apply_idx = applies.len();
                for (ri, p) in op.results.iter().enumerate() {
                    temp_of_value.insert(&p.value, SourceRef::Temp(apply_idx, ri));
                }
                applies.push(spec);
            }
            "stencil.store" => {
                let src = *temp_of_value
                    .get(&op.operands[0])
                    .ok_or_else(|| ExtractError("store of a value that is not a temp".into()))?;
                let arg = *field_of_value
                    .get(&op.operands[1])
                    .ok_or_else(|| ExtractError("store target must be a field".into()))?;
                let (ai, ri) = match src {
                    SourceRef::Temp(a, r) => (a, r),
                    SourceRef::Field(_) => {
                        return err("storing a loaded temp directly is not supported")
                    }
                };
                if applies[ai].stores[ri].is_some() {
                    return err("apply result stored more than once");
                }
                if stored.contains(&arg) {
                    return err(format!("output argument {arg} stored more than once"));
                }
                applies[ai].stores[ri] = Some(arg);
                stored.push(arg);
            }
            "stencil.external_store" => {
                // Write-back marker; classification comes from stencil.store.
            }
            "func.return" => {}
            other => {
                return err(format!(
                    "unsupported op `{other}` at kernel level (non-stencil side effect)"
                ))
            }
        }
    }

    if applies.is_empty() {
        return err("kernel contains no stencil.apply");
    }
    let rank = rank.ok_or_else(|| ExtractError("kernel binds no fields".into()))?;
    let element = element.unwrap_or(ScalarType::F64);

    let mut args = Vec::with_capacity(kernel.args.len());
    for (i, p) in kernel.args.iter().enumerate() {
        // Field roles come from load/store use, not the argument type, so
        // packed (pointer-typed) interfaces classify the same way.
        let kind = match (&p.ty, loaded.contains(&i), stored.contains(&i)) {
            (_, true, true) => {
                let bx = field_boxes.get(&i).cloned().unwrap();
                ArgKind::InOutField(bx)
            }
            (_, true, false) => ArgKind::InputField(field_boxes.get(&i).cloned().unwrap()),
            (_, false, true) => ArgKind::OutputField(field_boxes.get(&i).cloned().unwrap()),
            (Type::MemRef { shape, .. }, false, false) => {
                let used = applies.iter().any(|a| {
                    a.operands
                        .iter()
                        .any(|b| matches!(b, OperandBinding::ConstArray(k) if *k == i))
                });
                if used {
                    ArgKind::ConstArray(shape.iter().product::<i64>() as usize)
                } else {
                    ArgKind::Unused
                }
            }
            (Type::Scalar(s), _, _) if s.is_float() => {
                let used = applies.iter().any(|a| {
                    a.operands
                        .iter()
                        .any(|b| matches!(b, OperandBinding::Scalar(k) if *k == i))
                });
                if used {
                    ArgKind::Scalar
                } else {
                    ArgKind::Unused
                }
            }
            _ => ArgKind::Unused,
        };
        if matches!(kind, ArgKind::InOutField(_)) {
            return err(format!(
                "argument {i} is both loaded and stored; in-place stencils are rejected"
            ));
        }
        args.push(kind);
    }

    Ok(StencilProgram {
        rank,
        element,
        args,
        applies,
    })
}

fn extract_apply(
    op: &Operation,
    arg_index: &HashMap<&ValueId, usize>,
    temp_of_value: &HashMap<&ValueId, SourceRef>,
) -> Result<ApplySpec, ExtractError> {
    let region = &op.regions[0];
    let mut operands = Vec::new();
    for (i, v) in op.operands.iter().enumerate() {
        let binding = if let Some(src) = temp_of_value.get(v) {
            OperandBinding::Source(*src)
        } else if let Some(arg) = arg_index.get(v) {
            match &op.operand_types.get(i) {
                Some(Type::MemRef { .. }) => OperandBinding::ConstArray(*arg),
                Some(Type::Scalar(_)) => OperandBinding::Scalar(*arg),
                _ => return err("apply operand must be a temp, constant array or scalar"),
            }
        } else {
            return err(format!("apply operand {v} has no known binding"));
        };
        operands.push(binding);
    }

    // Region-arg slot per operand.
    let slot_of_arg: HashMap<&ValueId, usize> = region
        .args
        .iter()
        .enumerate()
        .map(|(i, p)| (&p.value, i))
        .collect();

    let mut body: Vec<BodyExpr> = Vec::new();
    let mut slot_of_value: HashMap<&ValueId, usize> = HashMap::new();
    // Scalar operands are readable anywhere in the body; materialise them
    // as leading slots.
    for (i, p) in region.args.iter().enumerate() {
        if matches!(&p.ty, Type::Scalar(s) if s.is_float()) {
            slot_of_value.insert(&p.value, body.len());
            body.push(BodyExpr::ScalarArg { operand: i });
        }
    }
    let mut returns = Vec::new();
    for bop in &region.ops {
        match bop.name.as_str() {
            "stencil.access" => {
                let operand = *slot_of_arg
                    .get(&bop.operands[0])
                    .ok_or_else(|| ExtractError("access of a non region argument".into()))?;
                let offset = bop
                    .attr("offset")
                    .and_then(|a| a.as_dense_ints())
                    .ok_or_else(|| ExtractError("access without offset".into()))?
                    .to_vec();
                slot_of_value.insert(&bop.results[0].value, body.len());
                body.push(BodyExpr::Access { operand, offset });
            }
            "arith.constant" => {
                let v = match bop.attr("value") {
                    Some(Attribute::Float(v, _)) => *v,
                    Some(Attribute::Int(v, _)) => *v as f64,
                    _ => return err("constant without value"),
                };
                slot_of_value.insert(&bop.results[0].value, body.len());
                body.push(BodyExpr::Const(v));
            }
            "memref.load" => {
                let operand = *slot_of_arg
                    .get(&bop.operands[0])
                    .ok_or_else(|| ExtractError("memref.load base must be an apply operand".into()))?;
                // The index must be a constant already in the body.
                let idx_slot = *slot_of_value
                    .get(&bop.operands[1])
                    .ok_or_else(|| ExtractError("memref.load index is not defined".into()))?;
                let index = match &body[idx_slot] {
                    BodyExpr::Const(v) => *v as usize,
                    _ => return err("memref.load index must be a constant"),
                };
                slot_of_value.insert(&bop.results[0].value, body.len());
                body.push(BodyExpr::LoadConst { operand, index });
            }
            "arith.negf" => {
                let x = *slot_of_value
                    .get(&bop.operands[0])
                    .ok_or_else(|| ExtractError("negf of undefined value".into()))?;
                slot_of_value.insert(&bop.results[0].value, body.len());
                body.push(BodyExpr::Neg(x));
            }
            name if BinOp::from_op_name(name).is_some() => {
                let lhs = *slot_of_value
                    .get(&bop.operands[0])
                    .ok_or_else(|| ExtractError("binary op on undefined value".into()))?;
                let rhs = *slot_of_value
                    .get(&bop.operands[1])
                    .ok_or_else(|| ExtractError("binary op on undefined value".into()))?;
                slot_of_value.insert(&bop.results[0].value, body.len());
                body.push(BodyExpr::Bin {
                    op: BinOp::from_op_name(name).unwrap(),
                    lhs,
                    rhs,
                });
            }
            "stencil.return" => {
                for v in &bop.operands {
                    let slot = *slot_of_value
                        .get(v)
                        .ok_or_else(|| ExtractError("returned value is not defined in the apply body".into()))?;
                    returns.push(slot);
                }
            }
            other => return err(format!("unsupported op `{other}` inside apply body")),
        }
    }

    let stores = vec![None; op.results.len()];
    Ok(ApplySpec {
        operands,
        body,
        returns,
        stores,
    })
}
