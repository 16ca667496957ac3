//! Steps 3..=7: stream plumbing, compute splitting, window-access mapping,
//! store lowering and load finalisation.
//!
//! The builder plans the whole stage topology up front from the extracted
//! program: per streamed source (input field or intermediate temp) it emits
//! a shift buffer per distinct consumer domain, duplicate stages wherever a
//! stream fans out, an extraction stage per (source, compute stage) pair
//! writing only the taps that stage uses, and one compute loop per result
//! field (or per fusable group when pipelining is disabled).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::config::Config;
use crate::geom::{window_index, window_size, IBox};
use crate::ir::{
    Attribute, IRModule, Operation, Param, ScalarType, Type, ValueId, ValueNamer,
};
use crate::stencil::program::{ArgKind, BodyExpr, OperandBinding, SourceRef, StencilProgram};

use super::build;
use super::{declaration, ArgClass, ArgClasses, LowerError, SmallDataEntry, SmallDataPlan};

#[derive(Debug, Clone)]
pub struct DfError(pub String);

impl DfError {
    pub fn at_step(self, step: u32) -> LowerError {
        LowerError::new(step, self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, DfError> {
    Err(DfError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Src {
    Field(usize),
    Temp(usize, usize),
}

impl Src {
    fn tag(&self) -> String {
        match self {
            Src::Field(a) => format!("f{a}"),
            Src::Temp(a, r) => format!("t{a}_{r}"),
        }
    }

    fn from_ref(s: SourceRef) -> Src {
        match s {
            SourceRef::Field(a) => Src::Field(a),
            SourceRef::Temp(a, r) => Src::Temp(a, r),
        }
    }
}

#[derive(Debug, Clone)]
struct StagePart {
    apply: usize,
    results: Vec<usize>,
}

#[derive(Debug, Clone)]
struct StagePlan {
    name: String,
    domain: IBox,
    parts: Vec<StagePart>,
    /// Window indices used per source, union over the stage's slices.
    used: BTreeMap<Src, BTreeSet<usize>>,
}

type StreamRef = (ValueId, Type);

pub struct DataflowLowering {
    module: IRModule,
    config: Config,
    program: StencilProgram,
    domains: Vec<IBox>,
    rank: usize,
    elem: ScalarType,
    lanes: u32,
    namer: ValueNamer,
    stages: Vec<StagePlan>,
    /// Raw element stream per source (written by load_data or a compute).
    elem_stream: BTreeMap<Src, StreamRef>,
    /// Stream each store's write_data stage consumes, per (apply, result).
    write_stream: BTreeMap<(usize, usize), StreamRef>,
    /// Tap stream per (stage, source, window index).
    tap_stream: BTreeMap<(usize, Src, usize), StreamRef>,
    /// Tap read value inside each compute body (filled by split_applies).
    tap_read: HashMap<(usize, Src, usize), ValueId>,
    /// Output-field argument index per output external_load value.
    out_field_of_value: HashMap<ValueId, usize>,
    decls: BTreeMap<String, Vec<Type>>,
    kernel_idx: usize,
}

impl DataflowLowering {
    pub fn new(module: IRModule, config: Config) -> Result<Self, DfError> {
        let program =
            crate::stencil::extract_program(&module).map_err(|e| DfError(e.to_string()))?;
        let kernel_idx = module
            .functions
            .iter()
            .position(|f| f.body.is_some())
            .ok_or_else(|| DfError("no kernel function".into()))?;
        let rank = program.rank;
        let elem = program.element;
        let lanes = config
            .lanes_for(elem.bit_width())
            .map_err(DfError)?;

        // Box per source; apply domains by intersection of shrunk sources.
        let mut domains: Vec<IBox> = Vec::with_capacity(program.applies.len());
        for (ai, apply) in program.applies.iter().enumerate() {
            let mut dom: Option<IBox> = None;
            for src in apply.sources() {
                let bx = match src {
                    SourceRef::Field(arg) => match &program.args[arg] {
                        ArgKind::InputField(b) => b.clone(),
                        _ => return err(format!("apply {ai} reads non-input argument {arg}")),
                    },
                    SourceRef::Temp(a, _) => domains[a].clone(),
                };
                let shrunk = bx.shrink1();
                dom = Some(match dom {
                    None => shrunk,
                    Some(d) => d.intersect(&shrunk),
                });
            }
            let dom = dom.ok_or_else(|| DfError(format!("apply {ai} has no sources")))?;
            if dom.is_empty() {
                return err(format!(
                    "apply {ai} has an empty iteration domain after the interior shrink"
                ));
            }
            domains.push(dom);
        }

        // Every result must be stored or consumed downstream.
        for (ai, apply) in program.applies.iter().enumerate() {
            for ri in 0..apply.stores.len() {
                let chained = program.applies.iter().any(|a| {
                    a.sources()
                        .iter()
                        .any(|s| matches!(s, SourceRef::Temp(x, y) if *x == ai && *y == ri))
                });
                if apply.stores[ri].is_none() && !chained {
                    return err(format!("result {ri} of apply {ai} is never stored or consumed"));
                }
            }
        }

        // Output external_load binding for lower_stores.
        let mut out_field_of_value = HashMap::new();
        {
            let body = module.functions[kernel_idx].body.as_ref().unwrap();
            let arg_of_value: HashMap<&ValueId, usize> = module.functions[kernel_idx]
                .args
                .iter()
                .enumerate()
                .map(|(i, p)| (&p.value, i))
                .collect();
            for op in &body.ops {
                if op.name == "stencil.external_load" {
                    if let Some(arg) = arg_of_value.get(&op.operands[0]) {
                        if matches!(program.args[*arg], ArgKind::OutputField(_)) {
                            out_field_of_value.insert(op.results[0].value.clone(), *arg);
                        }
                    }
                }
            }
        }

        let stages = plan_stages(&program, &domains, config.pipeline)?;

        Ok(DataflowLowering {
            module,
            config,
            program,
            domains,
            rank,
            elem,
            lanes,
            namer: ValueNamer::new(),
            stages,
            elem_stream: BTreeMap::new(),
            write_stream: BTreeMap::new(),
            tap_stream: BTreeMap::new(),
            tap_read: HashMap::new(),
            out_field_of_value,
            decls: BTreeMap::new(),
            kernel_idx,
        })
    }

    fn source_box(&self, s: Src) -> IBox {
        match s {
            Src::Field(arg) => match &self.program.args[arg] {
                ArgKind::InputField(b) => b.clone(),
                _ => unreachable!(),
            },
            Src::Temp(a, _) => self.domains[a].clone(),
        }
    }

    fn pipeline_ii(&self) -> Option<i64> {
        self.config.pipeline.then_some(1)
    }

    fn elem_ty(&self) -> Type {
        Type::Scalar(self.elem)
    }

    fn new_stream(&mut self, depth: u32, ops: &mut Vec<Operation>) -> StreamRef {
        let elem_ty = self.elem_ty();
        let (op, v, ty) = build::create_stream(&mut self.namer, elem_ty, depth);
        ops.push(op);
        (v, ty)
    }

    /// Step 3: replace direct memory access with streams; emit placeholder
    /// load stages, shift buffers, duplicate and extraction stages.
    pub fn streamify(&mut self) -> Result<(), DfError> {
        let win = window_size(self.rank);
        let win_depth = 2 * win as u32;
        let mem_depth = 2 * self.lanes;
        let cfg_depth = self.config.stream_depth;
        let mut stream_ops: Vec<Operation> = Vec::new();
        let mut regions: Vec<Operation> = Vec::new();

        // Sources in canonical order: fields by argument, then temps.
        let mut sources: Vec<Src> = Vec::new();
        for (i, kind) in self.program.args.iter().enumerate() {
            if matches!(kind, ArgKind::InputField(_)) {
                sources.push(Src::Field(i));
            }
        }
        for (ai, apply) in self.program.applies.iter().enumerate() {
            for ri in 0..apply.stores.len() {
                sources.push(Src::Temp(ai, ri));
            }
        }

        // Consumer stages per source.
        let mut consumers: BTreeMap<Src, Vec<usize>> = BTreeMap::new();
        for (si, stage) in self.stages.iter().enumerate() {
            for src in stage.used.keys() {
                consumers.entry(*src).or_default().push(si);
            }
        }

        let kernel = &self.module.functions[self.kernel_idx];
        let arg_value: Vec<(ValueId, Type)> = kernel
            .args
            .iter()
            .map(|p| (p.value.clone(), p.ty.clone()))
            .collect();

        // Element streams first: loads write them, computes write them.
        for src in &sources {
            let stored = match src {
                Src::Temp(a, r) => self.program.applies[*a].stores[*r].is_some(),
                Src::Field(_) => false,
            };
            let has_consumers = consumers.contains_key(src);
            if !has_consumers && !stored {
                // Field loaded but never accessed: only its domain shrink
                // matters, no data needs to move.
                continue;
            }
            let depth = if matches!(src, Src::Field(_)) {
                mem_depth
            } else if stored && !has_consumers {
                mem_depth
            } else {
                cfg_depth
            };
            let s = self.new_stream(depth, &mut stream_ops);
            self.elem_stream.insert(*src, s);
        }

        // Placeholder load stage per accessed input field.
        for src in &sources {
            let arg = match src {
                Src::Field(a) => *a,
                _ => continue,
            };
            let stream = match self.elem_stream.get(src) {
                Some(s) => s.clone(),
                None => continue,
            };
            let count = self.source_box(*src).len() as i64;
            let (ptr_v, ptr_t) = arg_value[arg].clone();
            let mut ops = Vec::new();
            let (cop, cv) = build::index_const(&mut self.namer, count);
            ops.push(cop);
            ops.push(build::call(
                "dummy_load_data",
                vec![
                    (ptr_v, ptr_t.clone()),
                    (stream.0.clone(), stream.1.clone()),
                    (cv, Type::INDEX),
                ],
            ));
            self.decls
                .entry("dummy_load_data".into())
                .or_insert_with(|| vec![ptr_t, stream.1.clone(), Type::INDEX]);
            regions.push(build::dataflow_region(&format!("load_{}", src.tag()), ops));
        }

        // Per-source plumbing.
        for src in &sources {
            let src_consumers = consumers.get(src).cloned().unwrap_or_default();
            let stored = match src {
                Src::Temp(a, r) => Some((*a, *r)),
                Src::Field(_) => None,
            }
            .filter(|(a, r)| self.program.applies[*a].stores[*r].is_some());
            let elem = match self.elem_stream.get(src) {
                Some(s) => s.clone(),
                None => continue,
            };

            // Distinct shift-buffer domains in first-consumer order.
            let mut sb_domains: Vec<IBox> = Vec::new();
            for si in &src_consumers {
                let d = self.stages[*si].domain.clone();
                if !sb_domains.contains(&d) {
                    sb_domains.push(d);
                }
            }

            // Fan out the element stream when shift buffers and/or the
            // writer both consume it.
            let elem_consumer_count = sb_domains.len() + usize::from(stored.is_some());
            let mut sb_inputs: Vec<StreamRef> = Vec::new();
            let mut writer_input: Option<StreamRef> = None;
            if elem_consumer_count > 1 {
                let mut dup_outs = Vec::new();
                let mut dup_ops: Vec<Operation> = Vec::new();
                for _ in 0..sb_domains.len() {
                    let s = self.new_stream(cfg_depth, &mut stream_ops);
                    sb_inputs.push(s.clone());
                    dup_outs.push(s);
                }
                if stored.is_some() {
                    let s = self.new_stream(mem_depth, &mut stream_ops);
                    writer_input = Some(s.clone());
                    dup_outs.push(s);
                }
                let trip = self.source_box(*src).len() as i64;
                let elem_in = elem.clone();
                let elem_ty = self.elem_ty();
                // Plumbing stages always stream one element per cycle; only
                // compute loops model the unpipelined baseline.
                let loop_ops = build::counted_loop(&mut self.namer, trip, Some(1), |namer, _| {
                    let (read, v) = build::hls_read(namer, &elem_in.0, &elem_in.1);
                    let mut ops = vec![read];
                    for (ov, ot) in &dup_outs {
                        ops.push(build::hls_write(&v, &elem_ty, ov, ot));
                    }
                    ops
                });
                dup_ops.extend(loop_ops);
                regions.push(build::dataflow_region(&format!("dup_{}", src.tag()), dup_ops));
            } else if stored.is_some() && sb_domains.is_empty() {
                writer_input = Some(elem.clone());
            } else {
                sb_inputs.push(elem.clone());
            }
            if let (Some((a, r)), Some(ws)) = (stored, writer_input) {
                self.write_stream.insert((a, r), ws);
            }

            // One shift buffer per distinct consumer domain.
            let src_box = self.source_box(*src);
            for (k, dom) in sb_domains.iter().enumerate() {
                let sb_in = sb_inputs[k].clone();
                let win_stream = self.new_stream(win_depth, &mut stream_ops);

                let mut ops = Vec::new();
                let mut call_args = vec![
                    (sb_in.0.clone(), sb_in.1.clone()),
                    (win_stream.0.clone(), win_stream.1.clone()),
                ];
                for d in 0..self.rank {
                    for v in [src_box.lo[d], src_box.hi[d]] {
                        let (c, cv) = build::index_const(&mut self.namer, v);
                        ops.push(c);
                        call_args.push((cv, Type::INDEX));
                    }
                }
                for d in 0..self.rank {
                    for v in [dom.lo[d], dom.hi[d]] {
                        let (c, cv) = build::index_const(&mut self.namer, v);
                        ops.push(c);
                        call_args.push((cv, Type::INDEX));
                    }
                }
                let callee = format!("shift_buffer_{}d", self.rank);
                self.decls
                    .entry(callee.clone())
                    .or_insert_with(|| call_args.iter().map(|(_, t)| t.clone()).collect());
                ops.push(build::call(&callee, call_args));
                regions.push(build::dataflow_region(
                    &format!("shift_{}_{}", src.tag(), k),
                    ops,
                ));

                // Stages consuming this shift buffer's windows.
                let stage_ids: Vec<usize> = src_consumers
                    .iter()
                    .copied()
                    .filter(|si| self.stages[*si].domain == *dom)
                    .collect();

                // Window stream per consumer, via a duplicate stage when
                // more than one.
                let mut per_stage_windows: Vec<StreamRef> = Vec::new();
                if stage_ids.len() > 1 {
                    let mut dup_outs = Vec::new();
                    for _ in &stage_ids {
                        let s = self.new_stream(win_depth, &mut stream_ops);
                        per_stage_windows.push(s.clone());
                        dup_outs.push(s);
                    }
                    let trip = (dom.len() * win) as i64;
                    let win_in = win_stream.clone();
                    let ii = self.pipeline_ii();
                    let elem_ty = self.elem_ty();
                    let loop_ops =
                        build::counted_loop(&mut self.namer, trip, ii, |namer, _| {
                            let (read, v) = build::hls_read(namer, &win_in.0, &win_in.1);
                            let mut ops = vec![read];
                            for (ov, ot) in &dup_outs {
                                ops.push(build::hls_write(&v, &elem_ty, ov, ot));
                            }
                            ops
                        });
                    regions.push(build::dataflow_region(
                        &format!("dup_w_{}_{}", src.tag(), k),
                        loop_ops,
                    ));
                } else {
                    per_stage_windows.push(win_stream.clone());
                }

                // Extraction stage per consumer: pop the full window, stream
                // out only the taps the stage uses.
                for (ci, si) in stage_ids.iter().enumerate() {
                    let used: Vec<usize> =
                        self.stages[*si].used[src].iter().copied().collect();
                    let mut taps = Vec::new();
                    for w in &used {
                        let t = self.new_stream(cfg_depth, &mut stream_ops);
                        self.tap_stream.insert((*si, *src, *w), t.clone());
                        taps.push((*w, t));
                    }
                    let win_in = per_stage_windows[ci].clone();
                    let trip = dom.len() as i64;
                    let ii = self.pipeline_ii();
                    let elem_ty = self.elem_ty();
                    let win_n = win;
                    let loop_ops =
                        build::counted_loop(&mut self.namer, trip, ii, |namer, _| {
                            let mut ops = Vec::new();
                            let mut vals = Vec::new();
                            for _ in 0..win_n {
                                let (read, v) = build::hls_read(namer, &win_in.0, &win_in.1);
                                ops.push(read);
                                vals.push(v);
                            }
                            for (w, (tv, tt)) in &taps {
                                ops.push(build::hls_write(&vals[*w], &elem_ty, tv, tt));
                            }
                            ops
                        });
                    let stage_name = &self.stages[*si].name;
                    regions.push(build::dataflow_region(
                        &format!("extract_{}_{}", src.tag(), stage_name),
                        loop_ops,
                    ));
                }
            }
        }

        // Splice: streams and plumbing up front, stencil.load and input
        // external_load ops dropped, the rest (applies, stores, return)
        // retained in order.
        let kernel = &mut self.module.functions[self.kernel_idx];
        let body = kernel.body.as_mut().unwrap();
        let input_args: BTreeSet<usize> = self
            .program
            .args
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, ArgKind::InputField(_)))
            .map(|(i, _)| i)
            .collect();
        let arg_idx: HashMap<ValueId, usize> = kernel
            .args
            .iter()
            .enumerate()
            .map(|(i, p)| (p.value.clone(), i))
            .collect();
        let mut rest = Vec::new();
        for op in std::mem::take(&mut body.ops) {
            match op.name.as_str() {
                "stencil.load" => {}
                "stencil.external_load" => {
                    let is_input = arg_idx
                        .get(&op.operands[0])
                        .is_some_and(|i| input_args.contains(i));
                    if !is_input {
                        rest.push(op);
                    }
                }
                _ => rest.push(op),
            }
        }
        let mut ops = stream_ops;
        ops.extend(regions);
        ops.extend(rest);
        body.ops = ops;
        Ok(())
    }

    /// Step 4: one compute dataflow loop per result field (per fusable group
    /// when pipelining is disabled), reading the taps it uses and writing
    /// its result stream. `stencil.access` survives as a marker op resolved
    /// by `map_accesses`.
    pub fn split_applies(&mut self) -> Result<(), DfError> {
        // Stage regions are emitted at the position of their first apply.
        let mut emitted: Vec<Vec<Operation>> = vec![Vec::new(); self.program.applies.len()];
        let stages = self.stages.clone();
        for (si, stage) in stages.iter().enumerate() {
            let region = self.build_compute_stage(si, stage)?;
            let first_apply = stage.parts[0].apply;
            emitted[first_apply].push(region);
        }

        let write_stream = self.write_stream.clone();
        let kernel = &mut self.module.functions[self.kernel_idx];
        let body = kernel.body.as_mut().unwrap();
        let mut apply_idx = 0usize;
        let mut result_stream_of: HashMap<ValueId, (usize, usize)> = HashMap::new();
        let mut new_ops = Vec::new();
        for op in std::mem::take(&mut body.ops) {
            if op.name == "stencil.apply" {
                for (ri, p) in op.results.iter().enumerate() {
                    result_stream_of.insert(p.value.clone(), (apply_idx, ri));
                }
                new_ops.extend(emitted[apply_idx].drain(..));
                apply_idx += 1;
            } else if op.name == "stencil.store" {
                let mut op = op;
                if let Some((a, r)) = result_stream_of.get(&op.operands[0]) {
                    let (sv, st) = write_stream
                        .get(&(*a, *r))
                        .ok_or_else(|| DfError(format!("no write stream for apply {a} result {r}")))?;
                    op.operands[0] = sv.clone();
                    op.operand_types[0] = st.clone();
                    op.attributes
                        .insert("apply".into(), Attribute::Int(*a as i64, ScalarType::I64));
                    op.attributes
                        .insert("result".into(), Attribute::Int(*r as i64, ScalarType::I64));
                }
                new_ops.push(op);
            } else {
                new_ops.push(op);
            }
        }
        body.ops = new_ops;
        Ok(())
    }

    fn build_compute_stage(&mut self, si: usize, stage: &StagePlan) -> Result<Operation, DfError> {
        let trip = stage.domain.len() as i64;
        let elem_ty = self.elem_ty();
        let kernel_args: Vec<(ValueId, Type)> = self.module.functions[self.kernel_idx]
            .args
            .iter()
            .map(|p| (p.value.clone(), p.ty.clone()))
            .collect();

        // Tap reads in canonical order.
        let mut read_ops = Vec::new();
        for (src, ws) in &stage.used {
            for w in ws {
                let (sv, st) = self.tap_stream[&(si, *src, *w)].clone();
                let (op, v) = build::hls_read(&mut self.namer, &sv, &st);
                read_ops.push(op);
                self.tap_read.insert((si, *src, *w), v);
            }
        }

        // Body slices per part, then result writes.
        let mut body_ops = Vec::new();
        let mut writes = Vec::new();
        for part in &stage.parts {
            let apply = &self.program.applies[part.apply];
            let needed = needed_slots(&apply.body, &part.results.iter().map(|r| apply.returns[*r]).collect::<Vec<_>>());
            let mut slot_val: HashMap<usize, ValueId> = HashMap::new();
            for (slot, expr) in apply.body.iter().enumerate() {
                if !needed.contains(&slot) {
                    continue;
                }
                match expr {
                    BodyExpr::Access { operand, offset } => {
                        let src = match apply.operands[*operand] {
                            OperandBinding::Source(s) => Src::from_ref(s),
                            _ => return err("access on a non-source operand"),
                        };
                        let w = window_index(offset);
                        let tap = self.tap_read[&(si, src, w)].clone();
                        let mut marker = Operation::new("stencil.access");
                        marker.operands = vec![tap];
                        marker.operand_types = vec![elem_ty.clone()];
                        marker
                            .attributes
                            .insert("offset".into(), Attribute::DenseInts(offset.clone()));
                        marker.attributes.insert(
                            "arg".into(),
                            Attribute::Int(*operand as i64, ScalarType::I64),
                        );
                        marker.attributes.insert(
                            "apply".into(),
                            Attribute::Int(part.apply as i64, ScalarType::I64),
                        );
                        let v = self.namer.fresh("a");
                        marker.results = vec![Param {
                            value: v.clone(),
                            ty: elem_ty.clone(),
                        }];
                        body_ops.push(marker);
                        slot_val.insert(slot, v);
                    }
                    BodyExpr::Const(c) => {
                        let (op, v) = build::float_const(&mut self.namer, *c, self.elem);
                        body_ops.push(op);
                        slot_val.insert(slot, v);
                    }
                    BodyExpr::LoadConst { operand, index } => {
                        let arg = match apply.operands[*operand] {
                            OperandBinding::ConstArray(a) => a,
                            _ => return err("memref load on a non const-array operand"),
                        };
                        let (iv_op, iv) = build::index_const(&mut self.namer, *index as i64);
                        body_ops.push(iv_op);
                        let (av, at) = kernel_args[arg].clone();
                        let mut load = Operation::new("memref.load");
                        load.operands = vec![av, iv];
                        load.operand_types = vec![at, Type::INDEX];
                        let v = self.namer.fresh("m");
                        load.results = vec![Param {
                            value: v.clone(),
                            ty: elem_ty.clone(),
                        }];
                        body_ops.push(load);
                        slot_val.insert(slot, v);
                    }
                    BodyExpr::ScalarArg { operand } => {
                        let arg = match apply.operands[*operand] {
                            OperandBinding::Scalar(a) => a,
                            _ => return err("scalar read of a non-scalar operand"),
                        };
                        slot_val.insert(slot, kernel_args[arg].0.clone());
                    }
                    BodyExpr::Bin { op, lhs, rhs } => {
                        let mut bop = Operation::new(op.op_name());
                        bop.operands = vec![slot_val[lhs].clone(), slot_val[rhs].clone()];
                        bop.operand_types = vec![elem_ty.clone(), elem_ty.clone()];
                        let v = self.namer.fresh("v");
                        bop.results = vec![Param {
                            value: v.clone(),
                            ty: elem_ty.clone(),
                        }];
                        body_ops.push(bop);
                        slot_val.insert(slot, v);
                    }
                    BodyExpr::Neg(x) => {
                        let mut nop = Operation::new("arith.negf");
                        nop.operands = vec![slot_val[x].clone()];
                        nop.operand_types = vec![elem_ty.clone()];
                        let v = self.namer.fresh("v");
                        nop.results = vec![Param {
                            value: v.clone(),
                            ty: elem_ty.clone(),
                        }];
                        body_ops.push(nop);
                        slot_val.insert(slot, v);
                    }
                }
            }
            for r in &part.results {
                let (sv, st) = self
                    .elem_stream
                    .get(&Src::Temp(part.apply, *r))
                    .cloned()
                    .ok_or_else(|| {
                        DfError(format!(
                            "no element stream for apply {} result {r}",
                            part.apply
                        ))
                    })?;
                let rv = slot_val[&apply.returns[*r]].clone();
                writes.push(build::hls_write(&rv, &elem_ty, &sv, &st));
            }
        }

        let ii = self.pipeline_ii();
        let loop_ops = build::counted_loop(&mut self.namer, trip, ii, |_, _| {
            let mut ops = read_ops;
            ops.extend(body_ops);
            ops.extend(writes);
            ops
        });
        Ok(build::dataflow_region(&stage.name, loop_ops))
    }

    /// Step 5: resolve every `stencil.access` marker to its window element,
    /// recomputing the offset-to-index map independently and checking it
    /// against the tap the marker carries.
    pub fn map_accesses(&mut self) -> Result<(), DfError> {
        let stage_names: HashMap<String, usize> = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        let program = &self.program;
        let tap_read = &self.tap_read;
        let kernel = &mut self.module.functions[self.kernel_idx];
        let body = kernel.body.as_mut().unwrap();
        for op in &mut body.ops {
            if op.name != "hls.dataflow" {
                continue;
            }
            let si = match op
                .attr("stage")
                .and_then(|a| a.as_str())
                .and_then(|s| stage_names.get(s))
            {
                Some(si) => *si,
                None => continue,
            };
            let region = &mut op.regions[0];
            resolve_markers_in(region, si, program, tap_read)?;
        }
        // Postcondition: no access markers anywhere.
        if self.module.count_ops("stencil.access") != 0 {
            return err("stencil.access markers survived mapping");
        }
        Ok(())
    }

    /// Step 6: replace each store with a `write_data` stage consuming the
    /// result stream and scattering packed words into the output buffer.
    pub fn lower_stores(&mut self) -> Result<(), DfError> {
        let kernel_args: Vec<(ValueId, Type)> = self.module.functions[self.kernel_idx]
            .args
            .iter()
            .map(|p| (p.value.clone(), p.ty.clone()))
            .collect();
        let out_field_of_value = self.out_field_of_value.clone();
        let domains = self.domains.clone();
        let rank = self.rank;

        let mut new_ops = Vec::new();
        let mut write_decl: Option<Vec<Type>> = None;
        let body_ops = std::mem::take(
            &mut self.module.functions[self.kernel_idx]
                .body
                .as_mut()
                .unwrap()
                .ops,
        );
        for op in body_ops {
            match op.name.as_str() {
                "stencil.store" => {
                    let apply = op
                        .attr_int("apply")
                        .ok_or_else(|| DfError("store not linked to a compute stage".into()))?
                        as usize;
                    let result = op.attr_int("result").unwrap_or(0) as usize;
                    let stream_v = op.operands[0].clone();
                    let stream_t = op.operand_types[0].clone();
                    let out_arg = *out_field_of_value.get(&op.operands[1]).ok_or_else(|| {
                        DfError("store target is not an output field".into())
                    })?;
                    let out_box = match &self.program.args[out_arg] {
                        ArgKind::OutputField(b) => b.clone(),
                        _ => return err("store target is not an output field"),
                    };
                    let dom = domains[apply].clone();
                    let write_box = dom.intersect(&out_box);

                    let mut ops = Vec::new();
                    let mut args = vec![
                        (stream_v, stream_t),
                        kernel_args[out_arg].clone(),
                    ];
                    let (c, cv) = build::index_const(&mut self.namer, rank as i64);
                    ops.push(c);
                    args.push((cv, Type::INDEX));
                    for bx in [&dom, &out_box, &write_box] {
                        for d in 0..3 {
                            let (lo, hi) = if d < rank {
                                (bx.lo[d], bx.hi[d])
                            } else {
                                (0, 1)
                            };
                            for v in [lo, hi] {
                                let (c, cv) = build::index_const(&mut self.namer, v);
                                ops.push(c);
                                args.push((cv, Type::INDEX));
                            }
                        }
                    }
                    if write_decl.is_none() {
                        write_decl = Some(args.iter().map(|(_, t)| t.clone()).collect());
                    }
                    ops.push(build::call("write_data", args));
                    new_ops.push(build::dataflow_region(
                        &format!("write_t{apply}_{result}"),
                        ops,
                    ));
                }
                "stencil.external_store" => {}
                "stencil.external_load" => {}
                _ => new_ops.push(op),
            }
        }
        self.module.functions[self.kernel_idx]
            .body
            .as_mut()
            .unwrap()
            .ops = new_ops;
        if let Some(tys) = write_decl {
            self.decls.entry("write_data".into()).or_insert(tys);
        }
        Ok(())
    }

    /// Step 7: replace the first placeholder with the arity-specialised
    /// `load_data` call gathering every input, and drop the remaining
    /// placeholders.
    pub fn finalize_loads(&mut self) -> Result<(), DfError> {
        let kernel = &mut self.module.functions[self.kernel_idx];
        let body = kernel.body.as_mut().unwrap();

        // Gather (ptr, stream, count) triples from the placeholder calls.
        let mut triples: Vec<(Vec<(ValueId, Type)>, i64)> = Vec::new();
        for op in &body.ops {
            if op.name != "hls.dataflow" {
                continue;
            }
            let region = &op.regions[0];
            for child in &region.ops {
                if child.name == "func.call" && child.symbol.as_deref() == Some("dummy_load_data")
                {
                    let count = region
                        .ops
                        .iter()
                        .find_map(|c| {
                            (c.name == "arith.constant"
                                && c.results.first().map(|p| &p.value) == child.operands.get(2))
                            .then(|| c.attr_int("value"))
                            .flatten()
                        })
                        .ok_or_else(|| DfError("placeholder without an element count".into()))?;
                    triples.push((
                        vec![
                            (child.operands[0].clone(), child.operand_types[0].clone()),
                            (child.operands[1].clone(), child.operand_types[1].clone()),
                        ],
                        count,
                    ));
                }
            }
        }
        if triples.is_empty() {
            return err("no dummy_load_data placeholder found");
        }
        let n = triples.len();

        // Specialised load stage: all pointers, all streams, all counts.
        let mut ops = Vec::new();
        let mut args = Vec::new();
        for (ptr_stream, _) in &triples {
            args.push(ptr_stream[0].clone());
        }
        for (ptr_stream, _) in &triples {
            args.push(ptr_stream[1].clone());
        }
        for (_, count) in &triples {
            let (c, cv) = build::index_const(&mut self.namer, *count);
            ops.push(c);
            args.push((cv, Type::INDEX));
        }
        let callee = format!("load_data_{n}");
        self.decls
            .insert(callee.clone(), args.iter().map(|(_, t)| t.clone()).collect());
        self.decls.remove("dummy_load_data");
        ops.push(build::call(&callee, args));
        let load_region = build::dataflow_region("load", ops);

        // First placeholder replaced, the rest removed.
        let mut replaced = false;
        let mut new_ops = Vec::new();
        for op in std::mem::take(&mut body.ops) {
            let is_placeholder = op.name == "hls.dataflow"
                && op.regions[0]
                    .ops
                    .iter()
                    .any(|c| c.symbol.as_deref() == Some("dummy_load_data"));
            if is_placeholder {
                if !replaced {
                    new_ops.push(load_region.clone());
                    replaced = true;
                }
            } else {
                new_ops.push(op);
            }
        }
        body.ops = new_ops;
        Ok(())
    }

    /// Assemble the final module: sorted runtime declarations, then the
    /// kernel.
    pub fn finish(mut self) -> IRModule {
        let kernel = self.module.functions.remove(self.kernel_idx);
        let mut functions: Vec<crate::ir::FunctionDef> = self
            .decls
            .iter()
            .map(|(name, tys)| declaration(name, tys.clone()))
            .collect();
        functions.push(kernel);
        self.module.functions = functions;
        self.module
    }

    pub fn module(&self) -> &IRModule {
        &self.module
    }
}

fn resolve_markers_in(
    region: &mut crate::ir::Region,
    si: usize,
    program: &StencilProgram,
    tap_read: &HashMap<(usize, Src, usize), ValueId>,
) -> Result<(), DfError> {
    let mut renames: HashMap<ValueId, ValueId> = HashMap::new();
    for op in &mut region.ops {
        let mut kept = Vec::new();
        for inner in std::mem::take(&mut op.regions) {
            let mut inner = inner;
            resolve_markers_region(&mut inner, si, program, tap_read, &mut renames)?;
            kept.push(inner);
        }
        op.regions = kept;
    }
    Ok(())
}

fn resolve_markers_region(
    region: &mut crate::ir::Region,
    si: usize,
    program: &StencilProgram,
    tap_read: &HashMap<(usize, Src, usize), ValueId>,
    renames: &mut HashMap<ValueId, ValueId>,
) -> Result<(), DfError> {
    let mut new_ops = Vec::new();
    for mut op in std::mem::take(&mut region.ops) {
        for v in &mut op.operands {
            if let Some(n) = renames.get(v) {
                *v = n.clone();
            }
        }
        for nested in &mut op.regions {
            resolve_markers_region(nested, si, program, tap_read, renames)?;
        }
        if op.name == "stencil.access" {
            let offset = op
                .attr("offset")
                .and_then(|a| a.as_dense_ints())
                .ok_or_else(|| DfError("marker without offset".into()))?
                .to_vec();
            let apply = op.attr_int("apply").ok_or_else(|| DfError("marker without apply".into()))?
                as usize;
            let slot = op.attr_int("arg").ok_or_else(|| DfError("marker without arg".into()))?
                as usize;
            let src = match program.applies[apply].operands[slot] {
                OperandBinding::Source(s) => Src::from_ref(s),
                _ => return err("marker on a non-source operand"),
            };
            let w = window_index(&offset);
            let expected = tap_read
                .get(&(si, src, w))
                .ok_or_else(|| DfError(format!("no tap read for window index {w}")))?;
            if *expected != op.operands[0] {
                return err(format!(
                    "marker for offset {offset:?} carries {} but window index {w} reads {expected}",
                    op.operands[0]
                ));
            }
            renames.insert(op.results[0].value.clone(), expected.clone());
        } else {
            new_ops.push(op);
        }
    }
    region.ops = new_ops;
    Ok(())
}

fn needed_slots(body: &[BodyExpr], roots: &[usize]) -> BTreeSet<usize> {
    let mut needed: BTreeSet<usize> = BTreeSet::new();
    let mut work: Vec<usize> = roots.to_vec();
    while let Some(s) = work.pop() {
        if !needed.insert(s) {
            continue;
        }
        match &body[s] {
            BodyExpr::Bin { lhs, rhs, .. } => {
                work.push(*lhs);
                work.push(*rhs);
            }
            BodyExpr::Neg(x) => work.push(*x),
            _ => {}
        }
    }
    needed
}

fn plan_stages(
    program: &StencilProgram,
    domains: &[IBox],
    pipeline: bool,
) -> Result<Vec<StagePlan>, DfError> {
    let mut stages = Vec::new();
    if pipeline {
        for (ai, apply) in program.applies.iter().enumerate() {
            for ri in 0..apply.stores.len() {
                let part = StagePart {
                    apply: ai,
                    results: vec![ri],
                };
                let used = used_windows(program, &[part.clone()])?;
                stages.push(StagePlan {
                    name: format!("compute_{}", stages.len()),
                    domain: domains[ai].clone(),
                    parts: vec![part],
                    used,
                });
            }
        }
    } else {
        // Fuse applies with equal domains and no dependencies inside the
        // group; chains stay split, matching what a fused baseline can do.
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (ai, apply) in program.applies.iter().enumerate() {
            let deps: BTreeSet<usize> = apply
                .sources()
                .iter()
                .filter_map(|s| match s {
                    SourceRef::Temp(a, _) => Some(*a),
                    _ => None,
                })
                .collect();
            let joinable = groups.last().is_some_and(|g| {
                g.iter().all(|m| {
                    domains[*m] == domains[ai] && !deps.contains(m)
                })
            });
            if joinable {
                groups.last_mut().unwrap().push(ai);
            } else {
                groups.push(vec![ai]);
            }
        }
        for g in groups {
            let parts: Vec<StagePart> = g
                .iter()
                .map(|a| StagePart {
                    apply: *a,
                    results: (0..program.applies[*a].stores.len()).collect(),
                })
                .collect();
            let used = used_windows(program, &parts)?;
            stages.push(StagePlan {
                name: format!("compute_{}", stages.len()),
                domain: domains[g[0]].clone(),
                parts,
                used,
            });
        }
    }
    Ok(stages)
}

fn used_windows(
    program: &StencilProgram,
    parts: &[StagePart],
) -> Result<BTreeMap<Src, BTreeSet<usize>>, DfError> {
    let mut used: BTreeMap<Src, BTreeSet<usize>> = BTreeMap::new();
    for part in parts {
        let apply = &program.applies[part.apply];
        let roots: Vec<usize> = part.results.iter().map(|r| apply.returns[*r]).collect();
        let needed = needed_slots(&apply.body, &roots);
        for slot in needed {
            if let BodyExpr::Access { operand, offset } = &apply.body[slot] {
                let src = match apply.operands[*operand] {
                    OperandBinding::Source(s) => Src::from_ref(s),
                    _ => return err("access on a non-source operand"),
                };
                used.entry(src).or_default().insert(window_index(offset));
            }
        }
    }
    Ok(used)
}

/// Step 8 implementation. Local copies are allocated per consuming compute
/// stage, each populated by a pipelined init loop ahead of the dataflow
/// regions.
pub(crate) fn localize_small_data_impl(
    m: &IRModule,
    classes: &ArgClasses,
    config: &Config,
) -> Result<(IRModule, SmallDataPlan), LowerError> {
    let mut out = m.clone();
    let kernel = out
        .functions
        .iter_mut()
        .find(|f| f.body.is_some())
        .ok_or_else(|| LowerError::new(8, "no kernel function"))?;
    let mut namer = ValueNamer::new();
    let mut entries = Vec::new();
    let mut total_local_bytes = 0u64;
    let mut init_ops: Vec<Operation> = Vec::new();

    for (i, class) in classes.classes.iter().enumerate() {
        if *class != ArgClass::Constant {
            continue;
        }
        let (shape, elem) = match &kernel.args[i].ty {
            Type::MemRef { shape, element } => (shape.clone(), *element),
            _ => continue,
        };
        let elements = shape.iter().product::<i64>() as usize;
        let arg_value = kernel.args[i].value.clone();
        let arg_ty = kernel.args[i].ty.clone();

        // Consuming compute stages: dataflow regions loading this argument.
        let body = kernel.body.as_mut().unwrap();
        let mut consumer_idx: Vec<usize> = Vec::new();
        for (oi, op) in body.ops.iter().enumerate() {
            if op.name == "hls.dataflow" && region_loads_arg(&op.regions[0], &arg_value) {
                consumer_idx.push(oi);
            }
        }
        let localized = elements <= config.small_data_threshold && !consumer_idx.is_empty();
        entries.push(SmallDataEntry {
            arg: i,
            elements,
            localized,
            copies: if localized { consumer_idx.len() as u32 } else { 0 },
        });
        if !localized {
            continue;
        }
        total_local_bytes +=
            (elements as u64) * (elem.bit_width() as u64 / 8) * consumer_idx.len() as u64;

        for oi in consumer_idx {
            // Local copy + init loop.
            let mut alloca = Operation::new("memref.alloca");
            let local = namer.fresh("loc");
            alloca.results = vec![Param {
                value: local.clone(),
                ty: arg_ty.clone(),
            }];
            init_ops.push(alloca);
            let mut part = Operation::new("hls.array_partition");
            part.operands = vec![local.clone()];
            part.operand_types = vec![arg_ty.clone()];
            part.attributes
                .insert("kind".into(), Attribute::Str("complete".into()));
            init_ops.push(part);

            let arg_v = arg_value.clone();
            let arg_t = arg_ty.clone();
            let local_v = local.clone();
            let local_t = arg_ty.clone();
            let loop_ops =
                build::counted_loop(&mut namer, elements as i64, Some(1), |namer, iv| {
                    let mut load = Operation::new("memref.load");
                    load.operands = vec![arg_v.clone(), iv.clone()];
                    load.operand_types = vec![arg_t.clone(), Type::INDEX];
                    let v = namer.fresh("lv");
                    load.results = vec![Param {
                        value: v.clone(),
                        ty: Type::Scalar(elem),
                    }];
                    let mut store = Operation::new("memref.store");
                    store.operands = vec![v.clone(), local_v.clone(), iv.clone()];
                    store.operand_types =
                        vec![Type::Scalar(elem), local_t.clone(), Type::INDEX];
                    vec![load, store]
                });
            init_ops.extend(loop_ops);

            // Point this stage's loads at the local copy.
            let body = kernel.body.as_mut().unwrap();
            redirect_loads(&mut body.ops[oi].regions[0], &arg_value, &local);
        }
    }

    // Init code goes right before the first dataflow region.
    let body = kernel.body.as_mut().unwrap();
    let insert_at = body
        .ops
        .iter()
        .position(|op| op.name == "hls.dataflow")
        .unwrap_or(0);
    let tail = body.ops.split_off(insert_at);
    body.ops.extend(init_ops);
    body.ops.extend(tail);

    Ok((
        out,
        SmallDataPlan {
            threshold: config.small_data_threshold,
            entries,
            total_local_bytes,
        },
    ))
}

fn region_loads_arg(region: &crate::ir::Region, arg: &ValueId) -> bool {
    region.ops.iter().any(|op| {
        (op.name == "memref.load" && op.operands.first() == Some(arg))
            || op.regions.iter().any(|r| region_loads_arg(r, arg))
    })
}

fn redirect_loads(region: &mut crate::ir::Region, from: &ValueId, to: &ValueId) {
    for op in &mut region.ops {
        if op.name == "memref.load" && op.operands.first() == Some(from) {
            op.operands[0] = to.clone();
        }
        for nested in &mut op.regions {
            redirect_loads(nested, from, to);
        }
    }
}
