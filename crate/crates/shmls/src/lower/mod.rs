//! The stencil-to-HLS transformation: nine steps from verified stencil
//! dialect IR to a dataflow HLS-dialect module with shift buffers, streams,
//! per-field compute stages, 512-bit packed interfaces and port bundles.

mod build;
mod dataflow;

pub use dataflow::DataflowLowering;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::ir::{Attribute, IRModule, Operation, Type, Visibility};
use crate::stencil::program::{ArgKind, StencilProgram};

#[derive(Debug, Clone)]
pub struct LowerError {
    /// Transformation step (1..=9) the error surfaced in; 0 for pre-checks.
    pub step: u32,
    pub message: String,
}

impl LowerError {
    pub fn new(step: u32, message: impl Into<String>) -> Self {
        LowerError {
            step,
            message: message.into(),
        }
    }
}

impl fmt::Display for LowerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lowering step {}: {}", self.step, self.message)
    }
}

impl std::error::Error for LowerError {}

/// Step 1 result: the role of each kernel argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgClass {
    InputField,
    OutputField,
    Constant,
}

#[derive(Debug, Clone)]
pub struct ArgClasses {
    pub classes: Vec<ArgClass>,
    pub warnings: Vec<String>,
}

/// Step 9 output: port/bundle assignment and the CU budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortPlan {
    pub ports_per_cu: u32,
    pub port_limit: u32,
    pub max_cus: u32,
    pub bundles: Vec<BundleInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleInfo {
    pub name: String,
    pub protocol: String,
    pub args: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<u32>,
}

/// Step 8 output: which constants were copied to local memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallDataPlan {
    pub threshold: usize,
    pub entries: Vec<SmallDataEntry>,
    pub total_local_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallDataEntry {
    pub arg: usize,
    pub elements: usize,
    pub localized: bool,
    pub copies: u32,
}

/// Full-pipeline output.
#[derive(Debug, Clone)]
pub struct Lowered {
    pub module: IRModule,
    pub port_plan: PortPlan,
    pub small_data_plan: SmallDataPlan,
}

/// Step 1: classify kernel arguments as stencil field inputs, field outputs
/// or constants. Arguments that are both loaded and stored are rejected.
pub fn classify_arguments(m: &IRModule) -> Result<ArgClasses, LowerError> {
    let program = crate::stencil::extract_program(m)
        .map_err(|e| LowerError::new(1, e.to_string()))?;
    classify_program(&program)
}

pub(crate) fn classify_program(program: &StencilProgram) -> Result<ArgClasses, LowerError> {
    let mut classes = Vec::with_capacity(program.args.len());
    let mut warnings = Vec::new();
    for (i, kind) in program.args.iter().enumerate() {
        classes.push(match kind {
            ArgKind::InputField(_) => ArgClass::InputField,
            ArgKind::OutputField(_) => ArgClass::OutputField,
            ArgKind::InOutField(_) => {
                return Err(LowerError::new(
                    1,
                    format!("argument {i} is both a stencil input and output (in-place)"),
                ))
            }
            ArgKind::ConstArray(_) | ArgKind::Scalar => ArgClass::Constant,
            ArgKind::Unused => {
                warnings.push(format!("argument {i} is never used"));
                ArgClass::Constant
            }
        });
    }
    Ok(ArgClasses { classes, warnings })
}

/// Step 2: replace field argument types with their 512-bit packed pointer
/// form and propagate the new type to dependent operations.
pub fn pack_interfaces(
    m: &IRModule,
    classes: &ArgClasses,
    config: &Config,
) -> Result<IRModule, LowerError> {
    let mut out = m.clone();
    let kernel = out
        .functions
        .iter_mut()
        .find(|f| f.body.is_some())
        .ok_or_else(|| LowerError::new(2, "no kernel function"))?;

    let mut packed: Vec<Option<Type>> = vec![None; kernel.args.len()];
    for (i, class) in classes.classes.iter().enumerate() {
        if !matches!(class, ArgClass::InputField | ArgClass::OutputField) {
            continue;
        }
        let elem = match kernel.args[i].ty.element_scalar() {
            Some(e) => e,
            None => {
                return Err(LowerError::new(
                    2,
                    format!("field argument {i} has no element type"),
                ))
            }
        };
        let lanes = config
            .lanes_for(elem.bit_width())
            .map_err(|e| LowerError::new(2, e))?;
        let ty = build::packed_ptr(elem, lanes);
        kernel.args[i].ty = ty.clone();
        packed[i] = Some(ty);
    }

    // Propagate into the operations that use the retyped arguments.
    let arg_values: Vec<_> = kernel.args.iter().map(|p| p.value.clone()).collect();
    if let Some(body) = &mut kernel.body {
        propagate_types(&mut body.ops, &arg_values, &packed);
    }
    Ok(out)
}

fn propagate_types(
    ops: &mut [Operation],
    arg_values: &[crate::ir::ValueId],
    packed: &[Option<Type>],
) {
    for op in ops {
        for (k, operand) in op.operands.iter().enumerate() {
            if let Some(idx) = arg_values.iter().position(|v| v == operand) {
                if let Some(ty) = &packed[idx] {
                    if let Some(slot) = op.operand_types.get_mut(k) {
                        *slot = ty.clone();
                    }
                }
            }
        }
        for region in &mut op.regions {
            propagate_types(&mut region.ops, arg_values, packed);
        }
    }
}

/// Step 8: copy small constant arrays into local memory, one copy per
/// consuming compute stage, populated by an init loop ahead of the dataflow
/// regions.
pub fn localize_small_data(
    m: &IRModule,
    classes: &ArgClasses,
    config: &Config,
) -> Result<(IRModule, SmallDataPlan), LowerError> {
    dataflow::localize_small_data_impl(m, classes, config)
}

/// Step 9: assign every external-memory argument to its own AXI4 bundle and
/// bank; localized small data shares a single bundle. Idempotent: a module
/// that already carries interfaces is returned unchanged.
pub fn assign_bundles(
    m: &IRModule,
    classes: &ArgClasses,
    small_data: &SmallDataPlan,
    config: &Config,
) -> Result<(IRModule, PortPlan), LowerError> {
    let mut out = m.clone();
    let kernel = out
        .functions
        .iter_mut()
        .find(|f| f.body.is_some())
        .ok_or_else(|| LowerError::new(9, "no kernel function"))?;

    let existing: Vec<Operation> = kernel
        .body
        .as_ref()
        .unwrap()
        .ops
        .iter()
        .filter(|op| op.name == "hls.interface")
        .cloned()
        .collect();

    let mut bundles: Vec<BundleInfo> = Vec::new();
    let mut interface_ops: Vec<Operation> = Vec::new();
    let mut next_bank = 0u32;
    let mut smalldata_bank: Option<u32> = None;

    for (i, class) in classes.classes.iter().enumerate() {
        let arg = &kernel.args[i];
        match class {
            ArgClass::InputField | ArgClass::OutputField => {
                let name = format!("gmem{}", bundles.iter().filter(|b| b.protocol == "m_axi").count());
                let bank = next_bank;
                next_bank += 1;
                bundles.push(BundleInfo {
                    name: name.clone(),
                    protocol: "m_axi".into(),
                    args: vec![i],
                    bank: Some(bank),
                });
                interface_ops.push(interface_op(arg, 0, &name, Some(bank)));
            }
            ArgClass::Constant => {
                let entry = small_data.entries.iter().find(|e| e.arg == i);
                match (&arg.ty, entry) {
                    (Type::MemRef { .. }, Some(e)) if e.localized => {
                        let bank = *smalldata_bank.get_or_insert_with(|| {
                            let b = next_bank;
                            next_bank += 1;
                            b
                        });
                        if let Some(b) = bundles.iter_mut().find(|b| b.name == "smalldata") {
                            b.args.push(i);
                        } else {
                            bundles.push(BundleInfo {
                                name: "smalldata".into(),
                                protocol: "m_axi".into(),
                                args: vec![i],
                                bank: Some(bank),
                            });
                        }
                        interface_ops.push(interface_op(arg, 0, "smalldata", Some(bank)));
                    }
                    (Type::MemRef { .. }, _) => {
                        // Above threshold (or unused array): its own port.
                        let name = format!(
                            "gmem{}",
                            bundles.iter().filter(|b| b.protocol == "m_axi").count()
                        );
                        let bank = next_bank;
                        next_bank += 1;
                        bundles.push(BundleInfo {
                            name: name.clone(),
                            protocol: "m_axi".into(),
                            args: vec![i],
                            bank: Some(bank),
                        });
                        interface_ops.push(interface_op(arg, 0, &name, Some(bank)));
                    }
                    _ => {
                        // Scalars ride the control interface; no memory port.
                        if let Some(b) = bundles.iter_mut().find(|b| b.name == "control") {
                            b.args.push(i);
                        } else {
                            bundles.push(BundleInfo {
                                name: "control".into(),
                                protocol: "s_axilite".into(),
                                args: vec![i],
                                bank: None,
                            });
                        }
                        interface_ops.push(interface_op(arg, 1, "control", None));
                    }
                }
            }
        }
    }

    let ports_per_cu = bundles.iter().filter(|b| b.protocol == "m_axi").count() as u32;
    let max_cus = if ports_per_cu == 0 {
        1
    } else {
        (config.port_limit / ports_per_cu).max(1)
    };
    let advisory = if ports_per_cu > config.port_limit {
        Some(format!(
            "ports per CU ({ports_per_cu}) exceed the shell limit ({}); bundle merging \
             heuristics are not implemented, falling back to a single CU",
            config.port_limit
        ))
    } else {
        None
    };
    if next_bank > config.hbm_banks {
        return Err(LowerError::new(
            9,
            format!(
                "bundle assignment needs {next_bank} banks but only {} exist",
                config.hbm_banks
            ),
        ));
    }

    let plan = PortPlan {
        ports_per_cu,
        port_limit: config.port_limit,
        max_cus,
        bundles,
        advisory,
    };

    if !existing.is_empty() {
        // Already assigned; keep the module as-is.
        return Ok((m.clone(), plan));
    }

    let body = kernel.body.as_mut().unwrap();
    let mut ops = interface_ops;
    ops.append(&mut body.ops);
    body.ops = ops;
    Ok((out, plan))
}

fn interface_op(
    arg: &crate::ir::Param,
    protocol: i64,
    bundle: &str,
    bank: Option<u32>,
) -> Operation {
    let mut op = Operation::new("hls.interface");
    op.operands = vec![arg.value.clone()];
    op.operand_types = vec![arg.ty.clone()];
    op.attributes
        .insert("protocol".into(), Attribute::i32(protocol));
    op.attributes
        .insert("bundle".into(), Attribute::Str(bundle.into()));
    if let Some(b) = bank {
        op.attributes.insert("bank".into(), Attribute::i32(b as i64));
    }
    op
}

/// The composed nine-step pipeline.
pub fn lower_stencil_to_hls(m: &IRModule, config: &Config) -> Result<Lowered, LowerError> {
    let diags = crate::ir::verify(m);
    if !diags.is_empty() {
        return Err(LowerError::new(
            0,
            format!("input does not verify: {}", diags[0]),
        ));
    }

    // Step 1.
    let classes = classify_arguments(m)?;
    // Step 2.
    let packed = pack_interfaces(m, &classes, config)?;

    // Steps 3..=7 share the dataflow builder.
    let mut df = DataflowLowering::new(packed, config.clone()).map_err(|e| e.at_step(3))?;
    df.streamify().map_err(|e| e.at_step(3))?;
    df.split_applies().map_err(|e| e.at_step(4))?;
    df.map_accesses().map_err(|e| e.at_step(5))?;
    df.lower_stores().map_err(|e| e.at_step(6))?;
    df.finalize_loads().map_err(|e| e.at_step(7))?;
    let module = df.finish();

    // Step 8.
    let (module, small_data_plan) = localize_small_data(&module, &classes, config)?;
    // Step 9.
    let (module, port_plan) = assign_bundles(&module, &classes, &small_data_plan, config)?;

    // Postconditions: verified, stencil-free, well-formed dataflow graph.
    let diags = crate::ir::verify(&module);
    if !diags.is_empty() {
        return Err(LowerError::new(
            9,
            format!("lowered module does not verify: {}", diags[0]),
        ));
    }
    for op_name in [
        "stencil.external_load",
        "stencil.load",
        "stencil.apply",
        "stencil.access",
        "stencil.return",
        "stencil.store",
        "stencil.external_store",
    ] {
        if module.count_ops(op_name) != 0 {
            return Err(LowerError::new(
                9,
                format!("`{op_name}` survived the lowering"),
            ));
        }
    }
    crate::hls::build_dataflow_graph(&module)
        .map_err(|e| LowerError::new(9, e.to_string()))?;

    Ok(Lowered {
        module,
        port_plan,
        small_data_plan,
    })
}

/// Runtime helper declarations referenced by the lowered module.
pub(crate) fn declaration(name: &str, arg_types: Vec<Type>) -> crate::ir::FunctionDef {
    let mut f = crate::ir::FunctionDef::declaration(name, arg_types);
    f.visibility = Visibility::Private;
    f
}

