//! Generic SSA IR: in-memory representation, textual parser/printer,
//! structural verification and a rewrite driver.
//!
//! The representation is a plain tree — modules own functions, functions own
//! a body region, regions own operations in program order, operations own
//! nested regions. Values are referenced by name; the printer renumbers them
//! canonically so printed output is deterministic.

pub mod attr;
mod lexer;
mod parser;
mod printer;
pub mod registry;
pub mod types;
pub mod verify;
mod walk;

use std::collections::BTreeMap;

pub use attr::Attribute;
pub use parser::{parse, ParseError};
pub use printer::print;
pub use types::{DimBound, ScalarType, Type};
pub use verify::{verify, Diagnostic};
pub use walk::{walk, RewriteFn, RewriteResult, WalkError};

pub type AttrMap = BTreeMap<String, Attribute>;

/// SSA value reference. Names are unique within their enclosing function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub String);

impl ValueId {
    pub fn new(name: impl Into<String>) -> Self {
        ValueId(name.into())
    }
}

impl std::fmt::Display for ValueId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// A typed value binding: block argument, function argument or op result.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ValueId,
    pub ty: Type,
}

impl Param {
    pub fn new(value: impl Into<String>, ty: Type) -> Self {
        Param {
            value: ValueId::new(value),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    /// Dialect-qualified name, e.g. `stencil.apply`.
    pub name: String,
    pub operands: Vec<ValueId>,
    /// Declared operand types (the input half of the functional type).
    /// Verification cross-checks these against the defining sites.
    pub operand_types: Vec<Type>,
    pub results: Vec<Param>,
    pub attributes: AttrMap,
    pub regions: Vec<Region>,
    /// Callee for `func.call`, printed as `@symbol`.
    pub symbol: Option<String>,
}

impl Operation {
    pub fn new(name: impl Into<String>) -> Self {
        Operation {
            name: name.into(),
            operands: Vec::new(),
            operand_types: Vec::new(),
            results: Vec::new(),
            attributes: BTreeMap::new(),
            regions: Vec::new(),
            symbol: None,
        }
    }

    pub fn dialect(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attributes.get(name)
    }

    pub fn attr_int(&self, name: &str) -> Option<i64> {
        self.attr(name).and_then(|a| a.as_int())
    }
}

/// Single-block region: optional block arguments plus ops in program order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub args: Vec<Param>,
    pub ops: Vec<Operation>,
}

impl Region {
    pub fn new(args: Vec<Param>, ops: Vec<Operation>) -> Self {
        Region { args, ops }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub visibility: Visibility,
    pub args: Vec<Param>,
    pub results: Vec<Type>,
    pub attributes: AttrMap,
    /// `None` for declarations (runtime symbols).
    pub body: Option<Region>,
}

impl FunctionDef {
    /// Declaration without a body; argument names are placeholders.
    pub fn declaration(name: impl Into<String>, arg_types: Vec<Type>) -> Self {
        FunctionDef {
            name: name.into(),
            visibility: Visibility::Private,
            args: arg_types
                .into_iter()
                .enumerate()
                .map(|(i, ty)| Param::new(format!("arg{i}"), ty))
                .collect(),
            results: Vec::new(),
            attributes: BTreeMap::new(),
            body: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IRModule {
    pub attributes: AttrMap,
    pub functions: Vec<FunctionDef>,
}

impl IRModule {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut FunctionDef> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    /// The unique function with a body, when exactly one exists.
    pub fn single_kernel(&self) -> Option<&FunctionDef> {
        let mut defs = self.functions.iter().filter(|f| f.body.is_some());
        let first = defs.next()?;
        if defs.next().is_some() {
            None
        } else {
            Some(first)
        }
    }

    /// Count ops with the given name across all functions and regions.
    pub fn count_ops(&self, name: &str) -> usize {
        fn count_region(r: &Region, name: &str) -> usize {
            r.ops
                .iter()
                .map(|op| {
                    let own = usize::from(op.name == name);
                    own + op
                        .regions
                        .iter()
                        .map(|nested| count_region(nested, name))
                        .sum::<usize>()
                })
                .sum()
        }
        self.functions
            .iter()
            .filter_map(|f| f.body.as_ref())
            .map(|r| count_region(r, name))
            .sum()
    }
}

/// Visit every operation in the module in pre-order.
pub fn for_each_op<'a>(m: &'a IRModule, f: &mut impl FnMut(&'a Operation)) {
    fn visit<'a>(r: &'a Region, f: &mut impl FnMut(&'a Operation)) {
        for op in &r.ops {
            f(op);
            for nested in &op.regions {
                visit(nested, f);
            }
        }
    }
    for func in &m.functions {
        if let Some(body) = &func.body {
            visit(body, f);
        }
    }
}

/// Fresh value-name generator for pass-constructed IR.
#[derive(Debug, Default)]
pub struct ValueNamer {
    next: usize,
}

impl ValueNamer {
    pub fn new() -> Self {
        ValueNamer { next: 0 }
    }

    pub fn fresh(&mut self, hint: &str) -> ValueId {
        let id = ValueId::new(format!("{hint}{}", self.next));
        self.next += 1;
        id
    }
}
