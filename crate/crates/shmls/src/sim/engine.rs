//! The cycle engine.
//!
//! Concurrent mode: synchronous global cycles; every eligible stage fires at
//! most once per cycle, a firing needs all its input tokens and room for all
//! its outputs, and pushed tokens become visible to consumers on the next
//! cycle. Sequential mode (the no-pipeline baseline) runs each stage to
//! completion in topological order with unbounded FIFOs, modelling a
//! Von-Neumann schedule.

use std::collections::VecDeque;

use crate::grid::Grid;
use crate::ir::ScalarType;
use crate::stencil::interp::ArgValue;

use super::stage::{CompiledKernel, Instr, LoopProgram, StageBehavior};
use super::trace::{FifoTrace, SimTrace, StageTrace};
use super::SimError;

struct Fifo {
    cap: usize,
    queue: VecDeque<f64>,
    pending: Vec<f64>,
    pushed: u64,
    popped: u64,
    max_occupancy: usize,
}

impl Fifo {
    fn visible(&self) -> usize {
        self.queue.len()
    }

    fn room_for(&self, n: usize, bounded: bool) -> bool {
        !bounded || self.queue.len() + self.pending.len() + n <= self.cap
    }

    fn push(&mut self, v: f64) {
        self.pending.push(v);
        self.pushed += 1;
    }

    fn pop(&mut self) -> f64 {
        self.popped += 1;
        self.queue.pop_front().expect("pop on empty fifo")
    }

    fn flush(&mut self) -> bool {
        let moved = !self.pending.is_empty();
        self.queue.extend(self.pending.drain(..));
        self.max_occupancy = self.max_occupancy.max(self.queue.len());
        moved
    }
}

struct StageState {
    /// Progress counter: elements consumed (shift), firings (loop), words
    /// moved (load/write).
    progress: u64,
    target: u64,
    next_allowed: u64,
    firings: u64,
    stalls: u64,
    first_firing: Option<u64>,
    last_firing: u64,
    gaps: Vec<u32>,
    /// Shift-register contents, ring-indexed by linear position.
    shift_reg: Vec<f64>,
    /// Loop-stage slot environment (reused across firings).
    env: Vec<f64>,
    /// Write-stage output values placed so far.
    written: u64,
}

pub(crate) struct Engine<'a> {
    kernel: CompiledKernel,
    args: &'a [ArgValue],
    fifos: Vec<Fifo>,
    states: Vec<StageState>,
    locals: Vec<Vec<f64>>,
    out_grids: Vec<(usize, Grid)>,
    bounded: bool,
}

impl<'a> Engine<'a> {
    pub fn new(kernel: CompiledKernel, args: &'a [ArgValue], bounded: bool) -> Engine<'a> {
        let fifos = kernel
            .fifo_caps
            .iter()
            .map(|cap| Fifo {
                cap: *cap as usize,
                queue: VecDeque::new(),
                pending: Vec::new(),
                pushed: 0,
                popped: 0,
                max_occupancy: 0,
            })
            .collect();
        let states = kernel
            .stages
            .iter()
            .map(|s| {
                let target = match &s.behavior {
                    StageBehavior::Load { fields, lanes } => fields
                        .iter()
                        .map(|(d, _)| (d.len() as u64).div_ceil(*lanes as u64))
                        .max()
                        .unwrap_or(0),
                    StageBehavior::Shift { src_box, .. } => src_box.len() as u64,
                    StageBehavior::Write { dom_box, lanes, .. } => {
                        (dom_box.len() as u64).div_ceil(*lanes as u64)
                    }
                    StageBehavior::Loop { trip, .. } => *trip,
                };
                let (shift_len, env_len) = match &s.behavior {
                    StageBehavior::Shift { src_box, .. } => {
                        (crate::geom::shift_register_len(&src_box.extents()), 0)
                    }
                    StageBehavior::Loop { program, .. } => (0, program.slots),
                    _ => (0, 0),
                };
                StageState {
                    progress: 0,
                    target,
                    next_allowed: 0,
                    firings: 0,
                    stalls: 0,
                    first_firing: None,
                    last_firing: 0,
                    gaps: Vec::new(),
                    shift_reg: vec![0.0; shift_len],
                    env: vec![0.0; env_len],
                    written: 0,
                }
            })
            .collect();
        let out_grids = kernel
            .outputs
            .iter()
            .map(|(arg, bx, elem)| (*arg, Grid::zeros(bx.extents(), *elem)))
            .collect();
        let locals = kernel.locals.clone();
        Engine {
            kernel,
            args,
            fifos,
            states,
            locals,
            out_grids,
            bounded,
        }
    }

    fn stage_done(&self, i: usize) -> bool {
        self.states[i].progress >= self.states[i].target
    }

    /// Concurrent execution until all stages drain.
    pub fn run(mut self, max_cycles: u64) -> Result<(Vec<(usize, Grid)>, SimTrace), SimError> {
        let n = self.kernel.stages.len();
        let mut cycle = self.kernel.prologue_cycles;
        loop {
            if (0..n).all(|i| self.stage_done(i)) {
                break;
            }
            if cycle >= max_cycles {
                return Err(SimError::Budget(max_cycles));
            }
            let mut fired_any = false;
            let mut cooling = false;
            for i in 0..n {
                if self.stage_done(i) {
                    continue;
                }
                if self.states[i].next_allowed > cycle {
                    cooling = true;
                    continue;
                }
                if self.try_fire(i, cycle)? {
                    fired_any = true;
                } else {
                    self.states[i].stalls += 1;
                }
            }
            let mut flushed = false;
            for f in &mut self.fifos {
                flushed |= f.flush();
            }
            if !fired_any && !flushed && !cooling {
                let blocked = self.blocked_report();
                return Err(SimError::Deadlock { cycle, blocked });
            }
            cycle += 1;
        }
        let trace = self.make_trace(cycle, "concurrent");
        Ok((self.out_grids, trace))
    }

    /// Sequential (baseline) execution: stages run to completion one at a
    /// time in topological order; FIFOs are unbounded.
    pub fn run_sequential(
        mut self,
        order: &[usize],
        max_cycles: u64,
    ) -> Result<(Vec<(usize, Grid)>, SimTrace), SimError> {
        self.bounded = false;
        let mut cycle = self.kernel.prologue_cycles;
        for &i in order {
            while !self.stage_done(i) {
                if cycle >= max_cycles {
                    return Err(SimError::Budget(max_cycles));
                }
                let fired = self.try_fire(i, cycle)?;
                for f in &mut self.fifos {
                    f.flush();
                }
                if !fired {
                    let blocked = self.blocked_report();
                    return Err(SimError::Deadlock { cycle, blocked });
                }
                cycle += self.kernel.stages[i].ii.max(1);
            }
        }
        let trace = self.make_trace(cycle, "sequential");
        Ok((self.out_grids, trace))
    }


    fn try_fire(&mut self, i: usize, cycle: u64) -> Result<bool, SimError> {
        let bounded = self.bounded;
        let ii = self.kernel.stages[i].ii.max(1);
        // Split borrows: behavior is read-only, state and fifos mutate.
        let behavior = &self.kernel.stages[i].behavior;
        match behavior {
            StageBehavior::Load { fields, lanes } => {
                let lanes = *lanes as usize;
                let st_progress = self.states[i].progress;
                // One word per unfinished field per firing.
                let mut chunks = Vec::new();
                for (data, fifo) in fields {
                    let start = (st_progress as usize) * lanes;
                    if start >= data.len() {
                        continue;
                    }
                    let n = lanes.min(data.len() - start);
                    chunks.push((*fifo, start, n));
                }
                if chunks
                    .iter()
                    .any(|(fifo, _, n)| !self.fifos[*fifo].room_for(*n, bounded))
                {
                    return Ok(false);
                }
                for (fifo, start, n) in chunks {
                    let (data, _) = fields
                        .iter()
                        .find(|(_, f)| *f == fifo)
                        .expect("fifo belongs to a field");
                    for k in 0..n {
                        self.fifos[fifo].push(data[start + k]);
                    }
                }
                self.states[i].progress += 1;
                record_firing(&mut self.states[i], ii, cycle);
                Ok(true)
            }
            StageBehavior::Shift {
                in_fifo,
                out_fifo,
                src_box,
                emit_box,
                window,
            } => {
                if self.fifos[*in_fifo].visible() < 1 {
                    return Ok(false);
                }
                let idx = self.states[i].progress as usize;
                let q = src_box.delinearize(idx);
                let center: Vec<i64> = q.iter().map(|x| x - 1).collect();
                let emits = emit_box.contains(&center);
                if emits && !self.fifos[*out_fifo].room_for(*window, bounded) {
                    return Ok(false);
                }
                let v = self.fifos[*in_fifo].pop();
                let ring = self.states[i].shift_reg.len();
                self.states[i].shift_reg[idx % ring] = v;
                if emits {
                    let strides = src_box.strides();
                    let rank = src_box.rank();
                    let base = src_box.linear(&center);
                    for w in 0..*window {
                        let off = crate::geom::window_offset(rank, w);
                        let lin = (base as i64
                            + off.iter().zip(&strides).map(|(o, s)| o * s).sum::<i64>())
                            as usize;
                        let tap = self.states[i].shift_reg[lin % ring];
                        self.fifos[*out_fifo].push(tap);
                    }
                }
                self.states[i].progress += 1;
                record_firing(&mut self.states[i], ii, cycle);
                Ok(true)
            }
            StageBehavior::Write {
                in_fifo,
                out_arg,
                dom_box,
                out_box,
                write_box,
                lanes,
                elem,
            } => {
                let lanes = *lanes as usize;
                let total = dom_box.len();
                let done = self.states[i].written as usize;
                let n = lanes.min(total - done);
                if self.fifos[*in_fifo].visible() < n {
                    return Ok(false);
                }
                let grid_idx = self
                    .out_grids
                    .iter()
                    .position(|(arg, _)| arg == out_arg)
                    .expect("output grid exists");
                for k in 0..n {
                    let v = self.fifos[*in_fifo].pop();
                    let p = dom_box.delinearize(done + k);
                    if write_box.contains(&p) {
                        let gi = out_box.linear(&p);
                        self.out_grids[grid_idx].1.data[gi] = match elem {
                            ScalarType::F32 => v as f32 as f64,
                            _ => v,
                        };
                    }
                }
                self.states[i].written += n as u64;
                self.states[i].progress += 1;
                record_firing(&mut self.states[i], ii, cycle);
                Ok(true)
            }
            StageBehavior::Loop { program, .. } => {
                for (fifo, count) in &program.reads {
                    if self.fifos[*fifo].visible() < *count as usize {
                        return Ok(false);
                    }
                }
                for (fifo, count) in &program.writes {
                    if !self.fifos[*fifo].room_for(*count as usize, bounded) {
                        return Ok(false);
                    }
                }
                let firing = self.states[i].firings;
                let program: &LoopProgram = program;
                // Execute the body.
                let mut env = std::mem::take(&mut self.states[i].env);
                env[program.iv_slot] = firing as f64;
                for instr in &program.instrs {
                    match instr {
                        Instr::ReadStream { fifo, dst } => env[*dst] = self.fifos[*fifo].pop(),
                        Instr::WriteStream { fifo, src } => self.fifos[*fifo].push(env[*src]),
                        Instr::Const { value, dst } => env[*dst] = *value,
                        Instr::Bin { op, elem, a, b, dst } => {
                            env[*dst] = op.eval(env[*a], env[*b], *elem)
                        }
                        Instr::Neg { elem, a, dst } => {
                            env[*dst] = match elem {
                                ScalarType::F32 => (-(env[*a] as f32)) as f64,
                                _ => -env[*a],
                            }
                        }
                        Instr::LoadLocal { array, index, dst } => {
                            env[*dst] = self.locals[*array][env[*index] as usize]
                        }
                        Instr::StoreLocal { array, index, src } => {
                            self.locals[*array][env[*index] as usize] = env[*src]
                        }
                        Instr::LoadExtern { arg, index, dst } => match &self.args[*arg] {
                            ArgValue::Grid(g) => env[*dst] = g.data[env[*index] as usize],
                            _ => {
                                return Err(SimError::Setup(format!(
                                    "argument {arg}: data missing"
                                )))
                            }
                        },
                        Instr::Empty { fifo, dst } => {
                            env[*dst] = f64::from(self.fifos[*fifo].visible() == 0)
                        }
                        Instr::Full { fifo, dst } => {
                            env[*dst] = f64::from(
                                self.fifos[*fifo].visible() + self.fifos[*fifo].pending.len()
                                    >= self.fifos[*fifo].cap,
                            )
                        }
                    }
                }
                self.states[i].env = env;
                self.states[i].progress += 1;
                record_firing(&mut self.states[i], ii, cycle);
                Ok(true)
            }
        }
    }

    fn blocked_report(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, spec) in self.kernel.stages.iter().enumerate() {
            if self.stage_done(i) {
                continue;
            }
            let reason = match &spec.behavior {
                StageBehavior::Load { fields, .. } => {
                    let full: Vec<String> = fields
                        .iter()
                        .filter(|(_, f)| {
                            self.fifos[*f].visible() + self.fifos[*f].pending.len()
                                >= self.fifos[*f].cap
                        })
                        .map(|(_, f)| self.kernel.fifo_names[*f].clone())
                        .collect();
                    format!("output full: {}", full.join(", "))
                }
                StageBehavior::Shift { in_fifo, out_fifo, .. } => {
                    if self.fifos[*in_fifo].visible() == 0 {
                        format!("waiting on {}", self.kernel.fifo_names[*in_fifo])
                    } else {
                        format!("output {} full", self.kernel.fifo_names[*out_fifo])
                    }
                }
                StageBehavior::Write { in_fifo, .. } => {
                    format!("waiting on {}", self.kernel.fifo_names[*in_fifo])
                }
                StageBehavior::Loop { program, .. } => {
                    let mut parts = Vec::new();
                    for (fifo, count) in &program.reads {
                        if self.fifos[*fifo].visible() < *count as usize {
                            parts.push(format!(
                                "needs {count} from {}",
                                self.kernel.fifo_names[*fifo]
                            ));
                        }
                    }
                    for (fifo, count) in &program.writes {
                        if self.fifos[*fifo].visible() + self.fifos[*fifo].pending.len()
                            + *count as usize
                            > self.fifos[*fifo].cap
                        {
                            parts.push(format!(
                                "no room for {count} in {}",
                                self.kernel.fifo_names[*fifo]
                            ));
                        }
                    }
                    parts.join("; ")
                }
            };
            out.push(format!("{}: {}", spec.name, reason));
        }
        out
    }

    fn make_trace(&self, total_cycles: u64, mode: &str) -> SimTrace {
        let stages = self
            .kernel
            .stages
            .iter()
            .zip(&self.states)
            .map(|(spec, st)| StageTrace {
                name: spec.name.clone(),
                declared_ii: spec.ii,
                firings: st.firings,
                stalls: st.stalls,
                first_firing: st.first_firing,
                last_firing: st.last_firing,
                gaps: st.gaps.clone(),
                steady_ii: None,
            })
            .collect();
        let fifos = self
            .kernel
            .fifo_names
            .iter()
            .zip(&self.fifos)
            .map(|(name, f)| FifoTrace {
                name: name.clone(),
                capacity: f.cap as u32,
                pushed: f.pushed,
                popped: f.popped,
                max_occupancy: f.max_occupancy as u32,
                final_occupancy: (f.queue.len() + f.pending.len()) as u32,
            })
            .collect();
        let output_values: u64 = self.states.iter().map(|s| s.written).sum();
        let mut trace = SimTrace {
            mode: mode.to_string(),
            total_cycles,
            prologue_cycles: self.kernel.prologue_cycles,
            output_values,
            points_per_cycle: if total_cycles > 0 {
                output_values as f64 / total_cycles as f64
            } else {
                0.0
            },
            stages,
            fifos,
        };
        trace.fill_steady_ii();
        trace
    }
}

fn record_firing(st: &mut StageState, ii: u64, cycle: u64) {
    if st.first_firing.is_some() {
        st.gaps.push((cycle - st.last_firing) as u32);
    } else {
        st.first_firing = Some(cycle);
    }
    st.last_firing = cycle;
    st.firings += 1;
    st.next_allowed = cycle + ii;
}
