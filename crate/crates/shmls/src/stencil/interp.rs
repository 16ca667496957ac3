//! Scalar reference interpreter.
//!
//! Semantics are defined pointwise: a point is computed by an apply exactly
//! when every source holds valid values across the point's full radius-1
//! window. For external fields validity means in-bounds; for temps produced
//! by earlier applies it means the producer computed that point. Output
//! grids are zero-initialised and filled only over computed points that fall
//! inside the store target's bounds.

use std::fmt;

use crate::geom::IBox;
use crate::grid::Grid;
use crate::ir::ScalarType;

use super::program::{ApplySpec, ArgKind, BodyExpr, OperandBinding, SourceRef, StencilProgram};

#[derive(Debug, Clone)]
pub enum ArgValue {
    Grid(Grid),
    Scalar(f64),
    None,
}

#[derive(Debug, Clone)]
pub struct InterpOutput {
    /// Output grids keyed by kernel argument index, extents matching the
    /// output field bounds.
    pub outputs: Vec<(usize, Grid)>,
    /// Count of non-finite values produced; reported, not fatal.
    pub nonfinite: usize,
}

#[derive(Debug, Clone)]
pub struct InterpError(pub String);

impl fmt::Display for InterpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "interpreter: {}", self.0)
    }
}

impl std::error::Error for InterpError {}

struct Plane {
    /// Values over the universe box, row-major.
    data: Vec<f64>,
    /// Which universe points hold a computed value.
    valid: Vec<bool>,
}

pub fn interpret(p: &StencilProgram, inputs: &[ArgValue]) -> Result<InterpOutput, InterpError> {
    if inputs.len() != p.args.len() {
        return Err(InterpError(format!(
            "kernel takes {} arguments, {} provided",
            p.args.len(),
            inputs.len()
        )));
    }

    // Universe: bounding box of every field; temps live on it too.
    let mut lo = vec![i64::MAX; p.rank];
    let mut hi = vec![i64::MIN; p.rank];
    let mut any_field = false;
    for kind in &p.args {
        let bx = match kind {
            ArgKind::InputField(b) | ArgKind::OutputField(b) | ArgKind::InOutField(b) => b,
            _ => continue,
        };
        any_field = true;
        for d in 0..p.rank {
            lo[d] = lo[d].min(bx.lo[d]);
            hi[d] = hi[d].max(bx.hi[d]);
        }
    }
    if !any_field {
        return Err(InterpError("program binds no fields".into()));
    }
    let universe = IBox::new(lo, hi);

    // Check input shapes and bind them.
    for (i, kind) in p.args.iter().enumerate() {
        match kind {
            ArgKind::InputField(bx) => match &inputs[i] {
                ArgValue::Grid(g) if g.extents == bx.extents() => {}
                ArgValue::Grid(g) => {
                    return Err(InterpError(format!(
                        "argument {i}: grid extents {:?} do not match field bounds {:?}",
                        g.extents,
                        bx.extents()
                    )))
                }
                _ => return Err(InterpError(format!("argument {i}: input grid missing"))),
            },
            ArgKind::ConstArray(n) => match &inputs[i] {
                ArgValue::Grid(g) if g.len() == *n => {}
                ArgValue::Grid(g) => {
                    return Err(InterpError(format!(
                        "argument {i}: constant array holds {} elements, expected {n}",
                        g.len()
                    )))
                }
                _ => return Err(InterpError(format!("argument {i}: constant array missing"))),
            },
            ArgKind::Scalar => {
                if !matches!(&inputs[i], ArgValue::Scalar(_)) {
                    return Err(InterpError(format!("argument {i}: scalar value missing")));
                }
            }
            _ => {}
        }
    }

    let mut planes: Vec<Vec<Plane>> = Vec::with_capacity(p.applies.len());
    let mut nonfinite = 0usize;

    let full_window: Vec<Vec<i64>> = window_offsets(p.rank);

    for apply in &p.applies {
        let sources = apply.sources();
        let result_count = apply.stores.len();
        let mut result_planes: Vec<Plane> = (0..result_count)
            .map(|_| Plane {
                data: vec![0.0; universe.len()],
                valid: vec![false; universe.len()],
            })
            .collect();

        let mut slots = vec![0.0f64; apply.body.len()];
        for point in universe.points() {
            // A point is computed when every source covers its full window.
            let mut ok = true;
            'srcs: for src in &sources {
                for off in &full_window {
                    let q: Vec<i64> = point.iter().zip(off).map(|(a, b)| a + b).collect();
                    if !source_valid(p, &planes, &universe, *src, &q) {
                        ok = false;
                        break 'srcs;
                    }
                }
            }
            if !ok {
                continue;
            }
            let idx = universe.linear(&point);
            eval_body(
                p,
                inputs,
                &planes,
                &universe,
                apply,
                &point,
                &mut slots,
            );
            for (ri, ret_slot) in apply.returns.iter().enumerate() {
                let v = slots[*ret_slot];
                if !v.is_finite() {
                    nonfinite += 1;
                }
                result_planes[ri].data[idx] = v;
                result_planes[ri].valid[idx] = true;
            }
        }
        planes.push(result_planes);
    }

    // Materialise stored outputs, clipped to the target field bounds.
    let mut outputs = Vec::new();
    for (ai, apply) in p.applies.iter().enumerate() {
        for (ri, target) in apply.stores.iter().enumerate() {
            let arg = match target {
                Some(a) => *a,
                None => continue,
            };
            let bx = match &p.args[arg] {
                ArgKind::OutputField(b) => b.clone(),
                _ => return Err(InterpError(format!("store target {arg} is not an output"))),
            };
            let mut g = Grid::zeros(bx.extents(), p.element);
            let plane = &planes[ai][ri];
            for point in bx.points() {
                if universe.contains(&point) {
                    let ui = universe.linear(&point);
                    if plane.valid[ui] {
                        let gi = bx.linear(&point);
                        g.data[gi] = plane.data[ui];
                    }
                }
            }
            outputs.push((arg, g));
        }
    }
    outputs.sort_by_key(|(a, _)| *a);

    Ok(InterpOutput { outputs, nonfinite })
}

fn window_offsets(rank: usize) -> Vec<Vec<i64>> {
    let mut offs = vec![vec![]];
    for _ in 0..rank {
        offs = offs
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                (-1..=1).map(move |o| {
                    let mut q = p.clone();
                    q.push(o);
                    q
                })
            })
            .collect();
    }
    offs
}

fn source_valid(
    p: &StencilProgram,
    planes: &[Vec<Plane>],
    universe: &IBox,
    src: SourceRef,
    q: &[i64],
) -> bool {
    match src {
        SourceRef::Field(arg) => match &p.args[arg] {
            ArgKind::InputField(bx) => bx.contains(q),
            _ => false,
        },
        SourceRef::Temp(ai, ri) => {
            universe.contains(q) && planes[ai][ri].valid[universe.linear(q)]
        }
    }
}

fn read_source(
    p: &StencilProgram,
    inputs: &[ArgValue],
    planes: &[Vec<Plane>],
    universe: &IBox,
    src: SourceRef,
    q: &[i64],
) -> f64 {
    match src {
        SourceRef::Field(arg) => {
            let bx = match &p.args[arg] {
                ArgKind::InputField(b) => b,
                _ => unreachable!(),
            };
            match &inputs[arg] {
                ArgValue::Grid(g) => g.data[bx.linear(q)],
                _ => unreachable!(),
            }
        }
        SourceRef::Temp(ai, ri) => planes[ai][ri].data[universe.linear(q)],
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_body(
    p: &StencilProgram,
    inputs: &[ArgValue],
    planes: &[Vec<Plane>],
    universe: &IBox,
    apply: &ApplySpec,
    point: &[i64],
    slots: &mut [f64],
) {
    let elem = p.element;
    for (i, expr) in apply.body.iter().enumerate() {
        slots[i] = match expr {
            BodyExpr::Access { operand, offset } => {
                let src = match apply.operands[*operand] {
                    OperandBinding::Source(s) => s,
                    _ => unreachable!("access on non-source operand"),
                };
                let q: Vec<i64> = point.iter().zip(offset).map(|(a, b)| a + b).collect();
                read_source(p, inputs, planes, universe, src, &q)
            }
            BodyExpr::Const(v) => quant(*v, elem),
            BodyExpr::LoadConst { operand, index } => {
                let arg = match apply.operands[*operand] {
                    OperandBinding::ConstArray(a) => a,
                    _ => unreachable!("load on non const-array operand"),
                };
                match &inputs[arg] {
                    ArgValue::Grid(g) => g.data[*index],
                    _ => unreachable!(),
                }
            }
            BodyExpr::ScalarArg { operand } => {
                let arg = match apply.operands[*operand] {
                    OperandBinding::Scalar(a) => a,
                    _ => unreachable!("scalar read of non-scalar operand"),
                };
                match &inputs[arg] {
                    ArgValue::Scalar(v) => quant(*v, elem),
                    _ => unreachable!(),
                }
            }
            BodyExpr::Bin { op, lhs, rhs } => op.eval(slots[*lhs], slots[*rhs], elem),
            BodyExpr::Neg(x) => match elem {
                ScalarType::F32 => (-(slots[*x] as f32)) as f64,
                _ => -slots[*x],
            },
        };
    }
}

fn quant(v: f64, elem: ScalarType) -> f64 {
    match elem {
        ScalarType::F32 => v as f32 as f64,
        _ => v,
    }
}
