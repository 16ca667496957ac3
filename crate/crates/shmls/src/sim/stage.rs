//! Stage extraction: compile the kernel's dataflow regions into executable
//! simulator stages.

use std::collections::HashMap;

use crate::geom::IBox;
use crate::ir::{FunctionDef, Operation, ScalarType, Type, ValueId};
use crate::stencil::interp::ArgValue;
use crate::stencil::program::BinOp;

use super::SimError;

pub(crate) type Slot = usize;

#[derive(Debug, Clone)]
pub(crate) enum Instr {
    /// Pop one token into a slot.
    ReadStream { fifo: usize, dst: Slot },
    WriteStream { fifo: usize, src: Slot },
    Const { value: f64, dst: Slot },
    Bin { op: BinOp, elem: ScalarType, a: Slot, b: Slot, dst: Slot },
    Neg { elem: ScalarType, a: Slot, dst: Slot },
    LoadLocal { array: usize, index: Slot, dst: Slot },
    StoreLocal { array: usize, index: Slot, src: Slot },
    /// Read from an external constant-array argument.
    LoadExtern { arg: usize, index: Slot, dst: Slot },
    Empty { fifo: usize, dst: Slot },
    Full { fifo: usize, dst: Slot },
}

#[derive(Debug, Clone)]
pub(crate) struct LoopProgram {
    pub instrs: Vec<Instr>,
    pub slots: usize,
    /// Slot receiving the firing index.
    pub iv_slot: Slot,
    /// Tokens consumed per firing, per fifo.
    pub reads: Vec<(usize, u32)>,
    /// Tokens produced per firing, per fifo.
    pub writes: Vec<(usize, u32)>,
    /// Executable body length for the unpipelined II model.
    pub body_len: u32,
}

#[derive(Debug)]
pub(crate) enum StageBehavior {
    Load {
        /// (input data, out fifo); data is the flattened field.
        fields: Vec<(Vec<f64>, usize)>,
        lanes: u32,
    },
    Shift {
        in_fifo: usize,
        out_fifo: usize,
        src_box: IBox,
        emit_box: IBox,
        window: usize,
    },
    Write {
        in_fifo: usize,
        out_arg: usize,
        dom_box: IBox,
        out_box: IBox,
        write_box: IBox,
        lanes: u32,
        elem: ScalarType,
    },
    Loop {
        program: LoopProgram,
        trip: u64,
    },
}

#[derive(Debug)]
pub(crate) struct StageSpec {
    pub name: String,
    pub ii: u64,
    pub behavior: StageBehavior,
}

#[derive(Debug)]
pub(crate) struct CompiledKernel {
    pub fifo_caps: Vec<u32>,
    pub fifo_names: Vec<String>,
    pub stages: Vec<StageSpec>,
    pub locals: Vec<Vec<f64>>,
    pub prologue_cycles: u64,
    /// (arg index, extents, element) per output buffer.
    pub outputs: Vec<(usize, IBox, ScalarType)>,
}

struct BuildCtx<'a> {
    args: &'a [ArgValue],
    arg_of_value: HashMap<&'a ValueId, usize>,
    fifo_of_value: HashMap<&'a ValueId, usize>,
    fifo_caps: Vec<u32>,
    fifo_names: Vec<String>,
    local_of_value: HashMap<&'a ValueId, usize>,
    locals: Vec<Vec<f64>>,
    consts: HashMap<&'a ValueId, f64>,
    lanes: u32,
}

pub(crate) fn compile_kernel(
    kernel: &FunctionDef,
    args: &[ArgValue],
    lanes: u32,
) -> Result<CompiledKernel, SimError> {
    let body = kernel
        .body
        .as_ref()
        .ok_or_else(|| SimError::Setup("kernel has no body".into()))?;
    if args.len() != kernel.args.len() {
        return Err(SimError::Setup(format!(
            "kernel takes {} arguments, {} provided",
            kernel.args.len(),
            args.len()
        )));
    }
    let mut ctx = BuildCtx {
        args,
        arg_of_value: kernel
            .args
            .iter()
            .enumerate()
            .map(|(i, p)| (&p.value, i))
            .collect(),
        fifo_of_value: HashMap::new(),
        fifo_caps: Vec::new(),
        fifo_names: Vec::new(),
        local_of_value: HashMap::new(),
        locals: Vec::new(),
        consts: HashMap::new(),
        lanes,
    };

    let mut stages = Vec::new();
    let mut prologue_cycles = 0u64;
    let mut outputs = Vec::new();

    for op in &body.ops {
        match op.name.as_str() {
            "hls.create_stream" => {
                let depth = match &op.results[0].ty {
                    Type::Stream { depth, .. } => *depth,
                    _ => return Err(SimError::Setup("create_stream without stream type".into())),
                };
                let idx = ctx.fifo_caps.len();
                ctx.fifo_caps.push(depth);
                ctx.fifo_names.push(format!("s{idx}"));
                ctx.fifo_of_value.insert(&op.results[0].value, idx);
            }
            "memref.alloca" => {
                let n = match &op.results[0].ty {
                    Type::MemRef { shape, .. } => shape.iter().product::<i64>() as usize,
                    _ => return Err(SimError::Setup("alloca without memref type".into())),
                };
                let idx = ctx.locals.len();
                ctx.locals.push(vec![0.0; n]);
                ctx.local_of_value.insert(&op.results[0].value, idx);
            }
            "arith.constant" => {
                let v = const_value(op)?;
                ctx.consts.insert(&op.results[0].value, v);
            }
            "scf.for" => {
                // Kernel-top init loop: run it now, charge its trip count.
                let (program, trip) = compile_loop(op, &ctx)?;
                prologue_cycles += trip;
                run_init_loop(&program, trip, &mut ctx.locals, args)?;
            }
            "hls.dataflow" => {
                let name = op
                    .attr("stage")
                    .and_then(|a| a.as_str())
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("stage_{}", stages.len()));
                let stage = compile_dataflow(op, &name, &ctx, &mut outputs)?;
                stages.push(stage);
            }
            "hls.interface" | "hls.array_partition" | "hls.pipeline" | "hls.unroll"
            | "func.return" => {}
            other => {
                return Err(SimError::Setup(format!(
                    "unsupported kernel-top op `{other}`"
                )))
            }
        }
    }

    Ok(CompiledKernel {
        fifo_caps: ctx.fifo_caps,
        fifo_names: ctx.fifo_names,
        stages,
        locals: ctx.locals,
        prologue_cycles,
        outputs,
    })
}

fn const_value(op: &Operation) -> Result<f64, SimError> {
    match op.attr("value") {
        Some(crate::ir::Attribute::Int(v, _)) => Ok(*v as f64),
        Some(crate::ir::Attribute::Float(v, ty)) => Ok(if *ty == ScalarType::F32 {
            *v as f32 as f64
        } else {
            *v
        }),
        _ => Err(SimError::Setup("constant without value".into())),
    }
}

fn compile_dataflow(
    op: &Operation,
    name: &str,
    ctx: &BuildCtx,
    outputs: &mut Vec<(usize, IBox, ScalarType)>,
) -> Result<StageSpec, SimError> {
    let region = &op.regions[0];
    // Region-local constants feed calls and loop bounds.
    let mut local_consts: HashMap<&ValueId, f64> = ctx.consts.clone();
    for child in &region.ops {
        if child.name == "arith.constant" {
            local_consts.insert(&child.results[0].value, const_value(child)?);
        }
    }

    for child in &region.ops {
        match child.name.as_str() {
            "func.call" => {
                let callee = child.symbol.as_deref().unwrap_or("");
                if callee == "dummy_load_data" {
                    return Err(SimError::Setup(
                        "module still contains load placeholders; run the full lowering".into(),
                    ));
                }
                if let Some(n) = callee.strip_prefix("load_data_") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| SimError::Setup(format!("bad load arity in @{callee}")))?;
                    return compile_load(child, n, name, ctx, &local_consts);
                }
                if callee.starts_with("shift_buffer_") {
                    return compile_shift(child, name, ctx, &local_consts);
                }
                if callee == "write_data" {
                    return compile_write(child, name, ctx, &local_consts, outputs);
                }
                return Err(SimError::Setup(format!("unknown stage callee @{callee}")));
            }
            "scf.for" => {
                let (program, trip) = compile_loop_with_streams(child, ctx, &local_consts)?;
                let ii = pipeline_ii_of(child).unwrap_or_else(|| program.body_len.max(1) as u64);
                return Ok(StageSpec {
                    name: name.to_string(),
                    ii,
                    behavior: StageBehavior::Loop { program, trip },
                });
            }
            "arith.constant" => {}
            other => {
                return Err(SimError::Setup(format!(
                    "unsupported op `{other}` in dataflow region"
                )))
            }
        }
    }
    Err(SimError::Setup(format!("dataflow region `{name}` has no stage body")))
}

fn operand_const(
    op: &Operation,
    idx: usize,
    consts: &HashMap<&ValueId, f64>,
) -> Result<i64, SimError> {
    let v = op
        .operands
        .get(idx)
        .and_then(|v| consts.get(v))
        .ok_or_else(|| SimError::Setup(format!("operand {idx} of {} is not a constant", op.name)))?;
    Ok(*v as i64)
}

fn fifo_operand(op: &Operation, idx: usize, ctx: &BuildCtx) -> Result<usize, SimError> {
    ctx.fifo_of_value
        .get(&op.operands[idx])
        .copied()
        .ok_or_else(|| SimError::Setup(format!("operand {idx} of {} is not a stream", op.name)))
}

fn compile_load(
    call: &Operation,
    n: usize,
    name: &str,
    ctx: &BuildCtx,
    consts: &HashMap<&ValueId, f64>,
) -> Result<StageSpec, SimError> {
    if call.operands.len() != 3 * n {
        return Err(SimError::Setup(format!(
            "@load_data_{n} takes {} operands, got {}",
            3 * n,
            call.operands.len()
        )));
    }
    let mut fields = Vec::new();
    for k in 0..n {
        let arg = *ctx
            .arg_of_value
            .get(&call.operands[k])
            .ok_or_else(|| SimError::Setup("load pointer is not a kernel argument".into()))?;
        let fifo = fifo_operand(call, n + k, ctx)?;
        let count = operand_const(call, 2 * n + k, consts)? as usize;
        let data = match &ctx.args[arg] {
            ArgValue::Grid(g) => {
                if g.len() != count {
                    return Err(SimError::Setup(format!(
                        "argument {arg}: grid holds {} elements, kernel expects {count}",
                        g.len()
                    )));
                }
                g.data.clone()
            }
            _ => {
                return Err(SimError::Setup(format!(
                    "argument {arg}: input grid missing"
                )))
            }
        };
        fields.push((data, fifo));
    }
    Ok(StageSpec {
        name: name.to_string(),
        ii: 1,
        behavior: StageBehavior::Load {
            fields,
            lanes: ctx.lanes,
        },
    })
}

fn box_from_consts(
    call: &Operation,
    start: usize,
    rank: usize,
    consts: &HashMap<&ValueId, f64>,
) -> Result<IBox, SimError> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for d in 0..rank {
        lo.push(operand_const(call, start + 2 * d, consts)?);
        hi.push(operand_const(call, start + 2 * d + 1, consts)?);
    }
    Ok(IBox::new(lo, hi))
}

fn compile_shift(
    call: &Operation,
    name: &str,
    ctx: &BuildCtx,
    consts: &HashMap<&ValueId, f64>,
) -> Result<StageSpec, SimError> {
    let rank: usize = call
        .symbol
        .as_deref()
        .unwrap_or("")
        .strip_prefix("shift_buffer_")
        .and_then(|s| s.strip_suffix('d'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SimError::Setup("bad shift_buffer symbol".into()))?;
    let in_fifo = fifo_operand(call, 0, ctx)?;
    let out_fifo = fifo_operand(call, 1, ctx)?;
    let src_box = box_from_consts(call, 2, rank, consts)?;
    let emit_box = box_from_consts(call, 2 + 2 * rank, rank, consts)?;
    Ok(StageSpec {
        name: name.to_string(),
        ii: 1,
        behavior: StageBehavior::Shift {
            in_fifo,
            out_fifo,
            window: crate::geom::window_size(rank),
            src_box,
            emit_box,
        },
    })
}

fn compile_write(
    call: &Operation,
    name: &str,
    ctx: &BuildCtx,
    consts: &HashMap<&ValueId, f64>,
    outputs: &mut Vec<(usize, IBox, ScalarType)>,
) -> Result<StageSpec, SimError> {
    let in_fifo = fifo_operand(call, 0, ctx)?;
    let out_arg = *ctx
        .arg_of_value
        .get(&call.operands[1])
        .ok_or_else(|| SimError::Setup("write pointer is not a kernel argument".into()))?;
    let rank = operand_const(call, 2, consts)? as usize;
    let full_dom = box_from_consts(call, 3, 3, consts)?;
    let full_out = box_from_consts(call, 9, 3, consts)?;
    let full_write = box_from_consts(call, 15, 3, consts)?;
    let cut = |b: &IBox| IBox::new(b.lo[..rank].to_vec(), b.hi[..rank].to_vec());
    let elem = match &call.operand_types[0] {
        Type::Stream { element, .. } => element
            .as_scalar()
            .ok_or_else(|| SimError::Setup("write stream must carry scalars".into()))?,
        _ => return Err(SimError::Setup("write operand 0 must be a stream".into())),
    };
    let out_box = cut(&full_out);
    outputs.push((out_arg, out_box.clone(), elem));
    Ok(StageSpec {
        name: name.to_string(),
        ii: 1,
        behavior: StageBehavior::Write {
            in_fifo,
            out_arg,
            dom_box: cut(&full_dom),
            out_box,
            write_box: cut(&full_write),
            lanes: ctx.lanes,
            elem,
        },
    })
}

fn pipeline_ii_of(for_op: &Operation) -> Option<u64> {
    for_op.regions[0]
        .ops
        .iter()
        .find(|op| op.name == "hls.pipeline")
        .and_then(|op| op.attr_int("ii"))
        .map(|ii| ii.max(1) as u64)
}

/// Compile an `scf.for` whose body may touch streams.
fn compile_loop_with_streams(
    for_op: &Operation,
    ctx: &BuildCtx,
    consts: &HashMap<&ValueId, f64>,
) -> Result<(LoopProgram, u64), SimError> {
    let lb = operand_const(for_op, 0, consts)?;
    let ub = operand_const(for_op, 1, consts)?;
    let step = operand_const(for_op, 2, consts)?;
    if step != 1 {
        return Err(SimError::Setup("loop step must be 1".into()));
    }
    let trip = (ub - lb).max(0) as u64;
    let region = &for_op.regions[0];

    let mut slots: HashMap<&ValueId, Slot> = HashMap::new();
    let mut next_slot = 0usize;
    let iv_slot = next_slot;
    next_slot += 1;
    let iv_value = &region.args[0].value;

    let mut instrs: Vec<Instr> = Vec::new();
    let mut reads: HashMap<usize, u32> = HashMap::new();
    let mut writes: HashMap<usize, u32> = HashMap::new();

    // Slot resolution: loop-local values, the induction variable, enclosing
    // constants, or kernel scalar arguments (materialised as constants).
    let resolve = |v: &ValueId,
                       slots: &HashMap<&ValueId, Slot>,
                       instrs: &mut Vec<Instr>,
                       next_slot: &mut usize|
     -> Result<Slot, SimError> {
        if v == iv_value {
            return Ok(iv_slot);
        }
        if let Some(s) = slots.get(v) {
            return Ok(*s);
        }
        if let Some(c) = consts.get(v) {
            let dst = *next_slot;
            *next_slot += 1;
            instrs.push(Instr::Const { value: *c, dst });
            return Ok(dst);
        }
        if let Some(arg) = ctx.arg_of_value.get(v) {
            if let ArgValue::Scalar(x) = &ctx.args[*arg] {
                let dst = *next_slot;
                *next_slot += 1;
                instrs.push(Instr::Const { value: *x, dst });
                return Ok(dst);
            }
        }
        Err(SimError::Setup(format!("value {v} is not available in the loop body")))
    };

    let mut body_len = 0u32;
    for op in &region.ops {
        match op.name.as_str() {
            "hls.pipeline" | "scf.yield" => continue,
            _ => body_len += 1,
        }
        match op.name.as_str() {
            "hls.read" => {
                let fifo = fifo_operand(op, 0, ctx)?;
                *reads.entry(fifo).or_default() += 1;
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                instrs.push(Instr::ReadStream { fifo, dst });
            }
            "hls.write" => {
                let src = resolve(&op.operands[0], &slots, &mut instrs, &mut next_slot)?;
                let fifo = fifo_operand(op, 1, ctx)?;
                *writes.entry(fifo).or_default() += 1;
                instrs.push(Instr::WriteStream { fifo, src });
            }
            "arith.constant" => {
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                instrs.push(Instr::Const {
                    value: const_value(op)?,
                    dst,
                });
            }
            "arith.negf" => {
                let a = resolve(&op.operands[0], &slots, &mut instrs, &mut next_slot)?;
                let elem = op.results[0].ty.as_scalar().unwrap_or(ScalarType::F64);
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                instrs.push(Instr::Neg { elem, a, dst });
            }
            name if BinOp::from_op_name(name).is_some() => {
                let a = resolve(&op.operands[0], &slots, &mut instrs, &mut next_slot)?;
                let b = resolve(&op.operands[1], &slots, &mut instrs, &mut next_slot)?;
                let elem = op.results[0].ty.as_scalar().unwrap_or(ScalarType::F64);
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                instrs.push(Instr::Bin {
                    op: BinOp::from_op_name(name).unwrap(),
                    elem,
                    a,
                    b,
                    dst,
                });
            }
            "memref.load" => {
                let index = resolve(&op.operands[1], &slots, &mut instrs, &mut next_slot)?;
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                if let Some(local) = ctx.local_of_value.get(&op.operands[0]) {
                    instrs.push(Instr::LoadLocal {
                        array: *local,
                        index,
                        dst,
                    });
                } else if let Some(arg) = ctx.arg_of_value.get(&op.operands[0]) {
                    instrs.push(Instr::LoadExtern {
                        arg: *arg,
                        index,
                        dst,
                    });
                } else {
                    return Err(SimError::Setup("memref.load base unavailable".into()));
                }
            }
            "memref.store" => {
                let src = resolve(&op.operands[0], &slots, &mut instrs, &mut next_slot)?;
                let index = resolve(&op.operands[2], &slots, &mut instrs, &mut next_slot)?;
                let local = ctx
                    .local_of_value
                    .get(&op.operands[1])
                    .ok_or_else(|| SimError::Setup("memref.store target must be local".into()))?;
                instrs.push(Instr::StoreLocal {
                    array: *local,
                    index,
                    src,
                });
            }
            "hls.empty" | "hls.full" => {
                let fifo = fifo_operand(op, 0, ctx)?;
                let dst = next_slot;
                next_slot += 1;
                slots.insert(&op.results[0].value, dst);
                instrs.push(if op.name == "hls.empty" {
                    Instr::Empty { fifo, dst }
                } else {
                    Instr::Full { fifo, dst }
                });
            }
            other => {
                return Err(SimError::Setup(format!(
                    "unsupported op `{other}` in a loop stage body"
                )))
            }
        }
    }

    let mut reads: Vec<(usize, u32)> = reads.into_iter().collect();
    reads.sort_unstable();
    let mut writes: Vec<(usize, u32)> = writes.into_iter().collect();
    writes.sort_unstable();
    Ok((
        LoopProgram {
            instrs,
            slots: next_slot,
            iv_slot,
            reads,
            writes,
            body_len,
        },
        trip,
    ))
}

/// Kernel-top init loops: no streams allowed.
fn compile_loop(op: &Operation, ctx: &BuildCtx) -> Result<(LoopProgram, u64), SimError> {
    let consts = ctx.consts.clone();
    let (program, trip) = compile_loop_with_streams(op, ctx, &consts)?;
    if !program.reads.is_empty() || !program.writes.is_empty() {
        return Err(SimError::Setup("init loop must not touch streams".into()));
    }
    Ok((program, trip))
}

fn run_init_loop(
    program: &LoopProgram,
    trip: u64,
    locals: &mut [Vec<f64>],
    args: &[ArgValue],
) -> Result<(), SimError> {
    let mut env = vec![0.0f64; program.slots];
    for i in 0..trip {
        env[program.iv_slot] = i as f64;
        for instr in &program.instrs {
            match instr {
                Instr::Const { value, dst } => env[*dst] = *value,
                Instr::Bin { op, elem, a, b, dst } => env[*dst] = op.eval(env[*a], env[*b], *elem),
                Instr::Neg { elem, a, dst } => {
                    env[*dst] = match elem {
                        ScalarType::F32 => (-(env[*a] as f32)) as f64,
                        _ => -env[*a],
                    }
                }
                Instr::LoadLocal { array, index, dst } => {
                    env[*dst] = locals[*array][env[*index] as usize]
                }
                Instr::StoreLocal { array, index, src } => {
                    locals[*array][env[*index] as usize] = env[*src]
                }
                Instr::LoadExtern { arg, index, dst } => match &args[*arg] {
                    ArgValue::Grid(g) => env[*dst] = g.data[env[*index] as usize],
                    _ => return Err(SimError::Setup(format!("argument {arg}: data missing"))),
                },
                _ => return Err(SimError::Setup("stream op in init loop".into())),
            }
        }
    }
    Ok(())
}
