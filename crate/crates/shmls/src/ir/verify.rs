//! Structural verification: SSA dominance, terminators, symbol resolution,
//! declared operand types, and per-dialect operation rules.
//!
//! Verification never fails hard — problems are returned as diagnostics
//! carrying the path of the offending operation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::registry;
use super::types::Type;
use super::{FunctionDef, IRModule, Operation, Param, Region, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Callee signature table entry.
pub struct Signature {
    pub args: Vec<Type>,
    pub results: Vec<Type>,
}

/// Context handed to per-op checks.
pub struct OpCheckCtx<'a> {
    /// Types of every value defined in the enclosing function.
    pub types: &'a HashMap<ValueId, Type>,
    /// Values that are arguments of the enclosing function.
    pub func_args: &'a HashSet<ValueId>,
    pub funcs: &'a HashMap<String, Signature>,
    /// Names of enclosing ops, innermost last.
    pub parents: &'a [String],
    /// Region argument lists of enclosing regions, innermost last.
    pub enclosing_region_args: &'a [Vec<Param>],
    pub func_results: &'a [Type],
}

impl OpCheckCtx<'_> {
    pub fn operand_type(&self, op: &Operation, idx: usize) -> Option<&Type> {
        op.operands.get(idx).and_then(|v| self.types.get(v))
    }

    pub fn innermost_parent(&self) -> Option<&str> {
        self.parents.last().map(|s| s.as_str())
    }
}

pub fn verify(m: &IRModule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut funcs: HashMap<String, Signature> = HashMap::new();
    for f in &m.functions {
        if funcs
            .insert(
                f.name.clone(),
                Signature {
                    args: f.args.iter().map(|p| p.ty.clone()).collect(),
                    results: f.results.clone(),
                },
            )
            .is_some()
        {
            diags.push(Diagnostic::new(
                format!("@{}", f.name),
                "duplicate function name",
            ));
        }
    }

    for f in &m.functions {
        verify_function(f, &funcs, &mut diags);
    }
    diags
}

fn verify_function(
    f: &FunctionDef,
    funcs: &HashMap<String, Signature>,
    diags: &mut Vec<Diagnostic>,
) {
    let body = match &f.body {
        Some(b) => b,
        None => return,
    };
    let path = format!("@{}", f.name);

    // Collect all definitions, checking single-assignment as we go.
    let mut types: HashMap<ValueId, Type> = HashMap::new();
    let mut func_args: HashSet<ValueId> = HashSet::new();
    for p in &f.args {
        if types.insert(p.value.clone(), p.ty.clone()).is_some() {
            diags.push(Diagnostic::new(&path, format!("value {} defined twice", p.value)));
        }
        func_args.insert(p.value.clone());
    }
    collect_defs(body, &path, &mut types, diags);

    // Entry scope: function arguments.
    let mut visible: HashSet<ValueId> = func_args.clone();
    let ctx_types = types;
    let mut parents: Vec<String> = Vec::new();
    let mut region_args: Vec<Vec<Param>> = Vec::new();
    verify_region(
        body,
        &path,
        &mut visible,
        &ctx_types,
        &func_args,
        funcs,
        &mut parents,
        &mut region_args,
        &f.results,
        RegionKind::FuncBody,
        diags,
    );
}

fn collect_defs(
    r: &Region,
    path: &str,
    types: &mut HashMap<ValueId, Type>,
    diags: &mut Vec<Diagnostic>,
) {
    for p in &r.args {
        if types.insert(p.value.clone(), p.ty.clone()).is_some() {
            diags.push(Diagnostic::new(path, format!("value {} defined twice", p.value)));
        }
    }
    for op in &r.ops {
        for p in &op.results {
            if types.insert(p.value.clone(), p.ty.clone()).is_some() {
                diags.push(Diagnostic::new(path, format!("value {} defined twice", p.value)));
            }
        }
        for nested in &op.regions {
            collect_defs(nested, path, types, diags);
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum RegionKind {
    FuncBody,
    Op(&'static str),
}

#[allow(clippy::too_many_arguments)]
fn verify_region(
    r: &Region,
    path: &str,
    visible: &mut HashSet<ValueId>,
    types: &HashMap<ValueId, Type>,
    func_args: &HashSet<ValueId>,
    funcs: &HashMap<String, Signature>,
    parents: &mut Vec<String>,
    region_args: &mut Vec<Vec<Param>>,
    func_results: &[Type],
    kind: RegionKind,
    diags: &mut Vec<Diagnostic>,
) {
    let added_args: Vec<ValueId> = r.args.iter().map(|p| p.value.clone()).collect();
    for v in &added_args {
        visible.insert(v.clone());
    }
    region_args.push(r.args.clone());

    // Terminator placement.
    let required = match kind {
        RegionKind::FuncBody => Some("func.return"),
        RegionKind::Op(parent) => registry::required_terminator(parent),
    };
    if let Some(term) = required {
        match r.ops.last() {
            Some(last) if last.name == term => {}
            Some(last) => diags.push(Diagnostic::new(
                format!("{path}/{}", last.name),
                format!("region must end with `{term}`"),
            )),
            None => diags.push(Diagnostic::new(path, format!("empty region requires `{term}`"))),
        }
    }
    for (i, op) in r.ops.iter().enumerate() {
        if registry::is_terminator(&op.name) && i + 1 != r.ops.len() {
            diags.push(Diagnostic::new(
                format!("{path}/{}", op.name),
                "terminator is not the last operation in its region",
            ));
        }
    }

    let mut defined_here: Vec<ValueId> = Vec::new();
    for (i, op) in r.ops.iter().enumerate() {
        let op_path = format!("{path}/ops[{i}]:{}", op.name);

        // Dominance: all operands visible at this point. One diagnostic per
        // distinct value even when an op uses it several times.
        let mut reported: Vec<&ValueId> = Vec::new();
        for v in &op.operands {
            if !visible.contains(v) && !reported.contains(&v) {
                reported.push(v);
                let msg = if types.contains_key(v) {
                    format!("value {v} used before definition")
                } else {
                    format!("value {v} is not defined")
                };
                diags.push(Diagnostic::new(&op_path, msg));
            }
        }
        // Declared operand types match defining sites.
        for (k, v) in op.operands.iter().enumerate() {
            if let (Some(declared), Some(actual)) = (op.operand_types.get(k), types.get(v)) {
                if !declared.compatible(actual) {
                    diags.push(Diagnostic::new(
                        &op_path,
                        format!(
                            "operand {k} declared as {declared} but {v} has type {actual}"
                        ),
                    ));
                }
            }
        }
        if op.operand_types.len() != op.operands.len() {
            diags.push(Diagnostic::new(
                &op_path,
                format!(
                    "{} operands but {} declared operand types",
                    op.operands.len(),
                    op.operand_types.len()
                ),
            ));
        }

        // Per-dialect rules.
        let ctx = OpCheckCtx {
            types,
            func_args,
            funcs,
            parents,
            enclosing_region_args: region_args,
            func_results,
        };
        check_op(op, &ctx, &op_path, diags);

        // Results become visible after the op itself; nested regions see
        // everything defined so far but not the op's own results.
        for nested in op.regions.iter() {
            let kind = RegionKind::Op(leak_op_name(&op.name));
            parents.push(op.name.clone());
            verify_region(
                nested,
                &op_path,
                visible,
                types,
                func_args,
                funcs,
                parents,
                region_args,
                func_results,
                kind,
                diags,
            );
            parents.pop();
        }
        for p in &op.results {
            visible.insert(p.value.clone());
            defined_here.push(p.value.clone());
        }
    }

    // Leave scope.
    for v in defined_here {
        visible.remove(&v);
    }
    for v in &added_args {
        visible.remove(v);
    }
    region_args.pop();
}

fn leak_op_name(name: &str) -> &'static str {
    // Region-kind dispatch only needs the few region-carrying ops.
    match name {
        "scf.for" => "scf.for",
        "stencil.apply" => "stencil.apply",
        "hls.dataflow" => "hls.dataflow",
        _ => "other",
    }
}

fn check_op(op: &Operation, ctx: &OpCheckCtx, path: &str, diags: &mut Vec<Diagnostic>) {
    let mut push = |msg: String| diags.push(Diagnostic::new(path, msg));

    // Region-carrying shape.
    let region_ok = matches!(
        op.name.as_str(),
        "scf.for" | "stencil.apply" | "hls.dataflow"
    );
    if !op.regions.is_empty() && !region_ok {
        push(format!("op `{}` cannot carry regions", op.name));
    }
    if op.symbol.is_some() && op.name != "func.call" {
        push(format!("op `{}` cannot reference a symbol", op.name));
    }

    match op.name.as_str() {
        "func.call" => {
            let callee = match &op.symbol {
                Some(s) => s,
                None => {
                    push("func.call requires a callee symbol".into());
                    return;
                }
            };
            match ctx.funcs.get(callee) {
                None => push(format!("callee @{callee} is not defined")),
                Some(sig) => {
                    if sig.args.len() != op.operands.len() {
                        push(format!(
                            "@{callee} expects {} arguments, got {}",
                            sig.args.len(),
                            op.operands.len()
                        ));
                    } else {
                        for (k, want) in sig.args.iter().enumerate() {
                            if let Some(got) = ctx.operand_type(op, k) {
                                if !want.compatible(got) {
                                    push(format!(
                                        "argument {k} of @{callee}: expected {want}, got {got}"
                                    ));
                                }
                            }
                        }
                    }
                    if sig.results.len() != op.results.len() {
                        push(format!(
                            "@{callee} returns {} values, op binds {}",
                            sig.results.len(),
                            op.results.len()
                        ));
                    }
                }
            }
        }
        "func.return" => {
            if op.operands.len() != ctx.func_results.len() {
                push(format!(
                    "func.return has {} operands but function declares {} results",
                    op.operands.len(),
                    ctx.func_results.len()
                ));
            }
        }
        "arith.constant" => {
            if !op.operands.is_empty() || op.results.len() != 1 {
                push("arith.constant takes no operands and defines one result".into());
                return;
            }
            match (op.attr("value"), &op.results[0].ty) {
                (Some(super::Attribute::Int(_, ty)), Type::Scalar(rt)) if ty == rt => {}
                (Some(super::Attribute::Float(_, ty)), Type::Scalar(rt)) if ty == rt => {}
                (Some(_), _) => push("constant value attribute does not match result type".into()),
                (None, _) => push("arith.constant requires a `value` attribute".into()),
            }
        }
        "arith.addf" | "arith.subf" | "arith.mulf" | "arith.divf" => {
            if op.operands.len() != 2 || op.results.len() != 1 {
                push(format!("{} is binary with one result", op.name));
                return;
            }
            let rt = &op.results[0].ty;
            if !rt.is_float() {
                push(format!("{} requires a float type", op.name));
            }
            for k in 0..2 {
                if let Some(t) = ctx.operand_type(op, k) {
                    if t != rt {
                        push(format!("operand {k} type {t} does not match result {rt}"));
                    }
                }
            }
        }
        "arith.negf" => {
            if op.operands.len() != 1 || op.results.len() != 1 {
                push("arith.negf is unary with one result".into());
            } else if !op.results[0].ty.is_float() {
                push("arith.negf requires a float type".into());
            }
        }
        "scf.for" => {
            if op.operands.len() != 3 {
                push("scf.for takes (lower, upper, step) operands".into());
            }
            for k in 0..op.operands.len().min(3) {
                if let Some(t) = ctx.operand_type(op, k) {
                    if *t != Type::INDEX {
                        push(format!("scf.for bound {k} must be index, got {t}"));
                    }
                }
            }
            if !op.results.is_empty() {
                push("scf.for carries no results".into());
            }
            match op.regions.as_slice() {
                [r] => {
                    if r.args.len() != 1 || r.args[0].ty != Type::INDEX {
                        push("scf.for region takes a single index argument".into());
                    }
                }
                _ => push("scf.for requires exactly one region".into()),
            }
        }
        "scf.yield" => {
            if ctx.innermost_parent() != Some("scf.for") {
                push("scf.yield outside scf.for".into());
            }
            if !op.operands.is_empty() {
                push("scf.yield takes no operands".into());
            }
        }
        "memref.alloca" => {
            if !op.operands.is_empty() || op.results.len() != 1 {
                push("memref.alloca takes no operands and defines one result".into());
            } else if !matches!(op.results[0].ty, Type::MemRef { .. }) {
                push("memref.alloca result must be a memref".into());
            }
        }
        "memref.load" => {
            let (shape, element) = match ctx.operand_type(op, 0) {
                Some(Type::MemRef { shape, element }) => (shape.clone(), *element),
                Some(t) => {
                    push(format!("memref.load base must be a memref, got {t}"));
                    return;
                }
                None => return,
            };
            if op.operands.len() != 1 + shape.len() {
                push(format!(
                    "memref.load on rank-{} memref needs {} indices",
                    shape.len(),
                    shape.len()
                ));
            }
            if op.results.len() != 1 || op.results[0].ty != Type::Scalar(element) {
                push("memref.load result must be the element type".into());
            }
        }
        "memref.store" => {
            let (shape, element) = match ctx.operand_type(op, 1) {
                Some(Type::MemRef { shape, element }) => (shape.clone(), *element),
                Some(t) => {
                    push(format!("memref.store base must be a memref, got {t}"));
                    return;
                }
                None => return,
            };
            if op.operands.len() != 2 + shape.len() {
                push(format!(
                    "memref.store on rank-{} memref needs {} indices",
                    shape.len(),
                    shape.len()
                ));
            }
            if let Some(t) = ctx.operand_type(op, 0) {
                if *t != Type::Scalar(element) {
                    push(format!("stored value type {t} does not match element {element}"));
                }
            }
        }
        name if name.starts_with("stencil.") => {
            diags.extend(
                crate::stencil::dialect_verify(op, ctx)
                    .into_iter()
                    .map(|msg| Diagnostic::new(path, msg)),
            );
        }
        name if name.starts_with("hls.") => {
            diags.extend(
                crate::hls::dialect_verify(op, ctx)
                    .into_iter()
                    .map(|msg| Diagnostic::new(path, msg)),
            );
        }
        _ => {}
    }

    // Index attrs that must be non-negative where present.
    if let Some(super::Attribute::Int(v, _)) = op.attr("bank") {
        if *v < 0 {
            diags.push(Diagnostic::new(path, "bank must be non-negative"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    #[test]
    fn use_before_definition_is_one_dominance_diagnostic() {
        let src = r#"
module {
  func.func @f() {
    %a = arith.addf(%b, %b) : (f64, f64) -> (f64)
    %b = arith.constant() {value = 1.0 : f64} : () -> (f64)
    func.return() : () -> ()
  }
}
"#;
        let m = parse(src).unwrap();
        let diags = verify(&m);
        let dom: Vec<_> = diags
            .iter()
            .filter(|d| d.message.contains("before definition"))
            .collect();
        assert_eq!(dom.len(), 1, "{diags:?}");
    }

    #[test]
    fn missing_terminator_reported() {
        let src = r#"
module {
  func.func @f() {
    %c = arith.constant() {value = 1.0 : f64} : () -> (f64)
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert!(diags.iter().any(|d| d.message.contains("func.return")));
    }

    #[test]
    fn unresolved_callee_reported() {
        let src = r#"
module {
  func.func @f() {
    func.call @missing() : () -> ()
    func.return() : () -> ()
  }
}
"#;
        let diags = verify(&parse(src).unwrap());
        assert!(diags.iter().any(|d| d.message.contains("@missing")));
    }
}
