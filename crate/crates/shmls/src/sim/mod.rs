//! Cycle-approximate dataflow simulator: the desk-scale stand-in for FPGA
//! execution. Validates lowering output by bit-exact comparison with the
//! reference interpreter and measures per-stage initiation intervals.

mod engine;
mod stage;
pub mod trace;

pub use trace::{measure_ii, FifoTrace, MeasureError, SimTrace, StageTrace};

use std::fmt;

use crate::config::Config;
use crate::grid::Grid;
use crate::ir::IRModule;
use crate::stencil::interp::ArgValue;

#[derive(Debug, Clone)]
pub enum SimError {
    Setup(String),
    Deadlock { cycle: u64, blocked: Vec<String> },
    Budget(u64),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Setup(m) => write!(f, "simulator setup: {m}"),
            SimError::Deadlock { cycle, blocked } => {
                writeln!(f, "deadlock at cycle {cycle}; blocked stages:")?;
                for b in blocked {
                    writeln!(f, "  {b}")?;
                }
                Ok(())
            }
            SimError::Budget(n) => write!(f, "cycle budget of {n} exhausted"),
        }
    }
}

impl std::error::Error for SimError {}

/// Execute a lowered HLS-dialect module on the given inputs.
///
/// `config.pipeline` selects the schedule: the concurrent cycle model, or
/// the stage-sequential baseline when pipelining was disabled.
pub fn simulate(
    m: &IRModule,
    args: &[ArgValue],
    config: &Config,
) -> Result<(Vec<(usize, Grid)>, SimTrace), SimError> {
    let kernel = m
        .functions
        .iter()
        .find(|f| f.body.is_some())
        .ok_or_else(|| SimError::Setup("module has no kernel".into()))?;

    // Element width for the packed-port model: taken from any stream type.
    let lanes = infer_lanes(m, config)?;
    let compiled = stage::compile_kernel(kernel, args, lanes)?;

    if config.pipeline {
        let engine = engine::Engine::new(compiled, args, true);
        engine.run(config.max_cycles)
    } else {
        let graph = crate::hls::build_dataflow_graph(m)
            .map_err(|e| SimError::Setup(e.to_string()))?;
        let order = graph
            .topo_order()
            .ok_or_else(|| SimError::Setup("cyclic dataflow graph".into()))?;
        let engine = engine::Engine::new(compiled, args, false);
        engine.run_sequential(&order, config.max_cycles)
    }
}

fn infer_lanes(m: &IRModule, config: &Config) -> Result<u32, SimError> {
    let mut width = None;
    crate::ir::for_each_op(m, &mut |op| {
        if op.name == "hls.create_stream" {
            if let crate::ir::Type::Stream { element, .. } = &op.results[0].ty {
                if let Some(s) = element.as_scalar() {
                    width.get_or_insert(s.bit_width());
                }
            }
        }
    });
    let width = width.unwrap_or(64);
    config.lanes_for(width).map_err(SimError::Setup)
}
