//! Post-order rewrite driver used by the lowering passes and tests.

use std::collections::HashMap;
use std::fmt;

use super::{IRModule, Operation, Region, ValueId};

/// Replacement for one matched operation: new ops spliced in place, plus
/// the values that take over each of the old op's results.
pub struct RewriteResult {
    pub ops: Vec<Operation>,
    pub result_map: Vec<ValueId>,
}

pub type RewriteFn<'a> = dyn Fn(&Operation) -> Option<RewriteResult> + 'a;

#[derive(Debug, Clone)]
pub struct WalkError {
    pub op: String,
    pub message: String,
}

impl fmt::Display for WalkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rewrite of `{}`: {}", self.op, self.message)
    }
}

impl std::error::Error for WalkError {}

/// Walk every operation post-order (children before parents); where
/// `pattern` matches the op name, apply `rewrite` and remap all uses of the
/// replaced results.
pub fn walk(
    m: &IRModule,
    pattern: &dyn Fn(&str) -> bool,
    rewrite: &RewriteFn<'_>,
) -> Result<IRModule, WalkError> {
    let mut out = m.clone();
    for f in &mut out.functions {
        if let Some(body) = &mut f.body {
            let mut renames: HashMap<ValueId, ValueId> = HashMap::new();
            walk_region(body, pattern, rewrite, &mut renames)?;
            if !renames.is_empty() {
                apply_renames(body, &renames);
            }
        }
    }
    Ok(out)
}

fn walk_region(
    r: &mut Region,
    pattern: &dyn Fn(&str) -> bool,
    rewrite: &RewriteFn<'_>,
    renames: &mut HashMap<ValueId, ValueId>,
) -> Result<(), WalkError> {
    let mut new_ops: Vec<Operation> = Vec::with_capacity(r.ops.len());
    for mut op in std::mem::take(&mut r.ops) {
        for nested in &mut op.regions {
            walk_region(nested, pattern, rewrite, renames)?;
        }
        if pattern(&op.name) {
            if let Some(rr) = rewrite(&op) {
                if rr.result_map.len() != op.results.len() {
                    return Err(WalkError {
                        op: op.name.clone(),
                        message: format!(
                            "result count mismatch: op has {}, rewrite mapped {}",
                            op.results.len(),
                            rr.result_map.len()
                        ),
                    });
                }
                for (old, new) in op.results.iter().zip(&rr.result_map) {
                    if old.value != *new {
                        renames.insert(old.value.clone(), new.clone());
                    }
                }
                new_ops.extend(rr.ops);
                continue;
            }
        }
        new_ops.push(op);
    }
    r.ops = new_ops;
    Ok(())
}

fn apply_renames(r: &mut Region, renames: &HashMap<ValueId, ValueId>) {
    // Renames can chain when a rewrite maps onto a value that a later
    // rewrite replaced as well.
    fn resolve(renames: &HashMap<ValueId, ValueId>, v: &ValueId) -> Option<ValueId> {
        let mut cur = renames.get(v)?;
        let mut hops = 0;
        while let Some(next) = renames.get(cur) {
            cur = next;
            hops += 1;
            if hops > renames.len() {
                break;
            }
        }
        Some(cur.clone())
    }
    for op in &mut r.ops {
        for v in &mut op.operands {
            if let Some(n) = resolve(renames, v) {
                *v = n;
            }
        }
        for nested in &mut op.regions {
            apply_renames(nested, renames);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse, print};

    const SRC: &str = r#"
module {
  func.func @f(%x: f64) {
    %a = arith.addf(%x, %x) : (f64, f64) -> (f64)
    %b = arith.mulf(%a, %x) : (f64, f64) -> (f64)
    func.return() : () -> ()
  }
}
"#;

    #[test]
    fn identity_rewrite_preserves_canonical_print() {
        let m = parse(SRC).unwrap();
        let out = walk(&m, &|_| true, &|_| None).unwrap();
        assert_eq!(print(&m), print(&out));
    }

    #[test]
    fn rename_op_in_place() {
        let m = parse(SRC).unwrap();
        let out = walk(&m, &|name| name == "arith.addf", &|op| {
            let mut repl = op.clone();
            repl.name = "arith.mulf".into();
            Some(RewriteResult {
                result_map: repl.results.iter().map(|p| p.value.clone()).collect(),
                ops: vec![repl],
            })
        })
        .unwrap();
        assert_eq!(out.count_ops("arith.addf"), 0);
        assert_eq!(out.count_ops("arith.mulf"), 2);
        assert!(crate::ir::verify(&out).is_empty());
    }

    #[test]
    fn result_count_mismatch_is_an_error() {
        let m = parse(SRC).unwrap();
        let err = walk(&m, &|name| name == "arith.addf", &|_| {
            Some(RewriteResult {
                ops: vec![],
                result_map: vec![],
            })
        })
        .unwrap_err();
        assert!(err.message.contains("result count mismatch"));
    }
}
