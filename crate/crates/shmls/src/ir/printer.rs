//! Canonical printer.
//!
//! Output is deterministic: values are renumbered per function (`%arg0`
//! for function arguments, then `%0`, `%1`, ... in definition order across
//! the whole function including nested regions), attributes print in sorted
//! order, and whitespace is fixed. `parse . print` is the identity on
//! canonical text.

use std::collections::HashMap;
use std::fmt::Write;

use super::{FunctionDef, IRModule, Operation, Region, ValueId, Visibility};

pub fn print(m: &IRModule) -> String {
    let mut out = String::new();
    if m.attributes.is_empty() {
        out.push_str("module {\n");
    } else {
        out.push_str("module {");
        let attrs: Vec<String> = m
            .attributes
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        out.push_str(&attrs.join(", "));
        out.push_str("} {\n");
    }
    for f in &m.functions {
        print_function(&mut out, f);
    }
    out.push_str("}\n");
    out
}

fn print_function(out: &mut String, f: &FunctionDef) {
    let names = rename_map(f);
    out.push_str("  func.func ");
    if f.visibility == Visibility::Private {
        out.push_str("private ");
    }
    let _ = write!(out, "@{}(", f.name);
    if f.body.is_some() {
        for (i, p) in f.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "%{}: {}", resolve(&names, &p.value), p.ty);
        }
    } else {
        for (i, p) in f.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{}", p.ty);
        }
    }
    out.push(')');
    if !f.results.is_empty() {
        out.push_str(" -> (");
        for (i, t) in f.results.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{t}");
        }
        out.push(')');
    }
    if !f.attributes.is_empty() {
        out.push_str(" {");
        let attrs: Vec<String> = f
            .attributes
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        out.push_str(&attrs.join(", "));
        out.push('}');
    }
    match &f.body {
        None => out.push('\n'),
        Some(body) => {
            out.push_str(" {\n");
            for op in &body.ops {
                print_op(out, op, &names, 4);
            }
            out.push_str("  }\n");
        }
    }
}

fn print_op(out: &mut String, op: &Operation, names: &HashMap<ValueId, String>, indent: usize) {
    let pad = " ".repeat(indent);
    out.push_str(&pad);
    if !op.results.is_empty() {
        let rs: Vec<String> = op
            .results
            .iter()
            .map(|p| format!("%{}", resolve(names, &p.value)))
            .collect();
        let _ = write!(out, "{} = ", rs.join(", "));
    }
    out.push_str(&op.name);
    if let Some(sym) = &op.symbol {
        let _ = write!(out, " @{sym}");
    }
    out.push('(');
    for (i, v) in op.operands.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}", resolve(names, v));
    }
    out.push(')');
    if !op.attributes.is_empty() {
        out.push_str(" {");
        let attrs: Vec<String> = op
            .attributes
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        out.push_str(&attrs.join(", "));
        out.push('}');
    }
    for region in &op.regions {
        out.push_str(" {\n");
        if !region.args.is_empty() {
            out.push_str(&pad);
            out.push_str("^bb0(");
            for (i, p) in region.args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "%{}: {}", resolve(names, &p.value), p.ty);
            }
            out.push_str("):\n");
        }
        for nested in &region.ops {
            print_op(out, nested, names, indent + 2);
        }
        out.push_str(&pad);
        out.push('}');
    }
    out.push_str(" : (");
    for (i, t) in op.operand_types.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{t}");
    }
    out.push_str(") -> (");
    for (i, p) in op.results.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}", p.ty);
    }
    out.push_str(")\n");
}

fn resolve(names: &HashMap<ValueId, String>, v: &ValueId) -> String {
    names.get(v).cloned().unwrap_or_else(|| v.0.clone())
}

/// Stable renumbering: `argN` for function arguments, then sequential
/// numbers in definition order (op results first, then each nested
/// region's block arguments and its ops).
fn rename_map(f: &FunctionDef) -> HashMap<ValueId, String> {
    let mut map = HashMap::new();
    for (i, p) in f.args.iter().enumerate() {
        map.insert(p.value.clone(), format!("arg{i}"));
    }
    let mut counter = 0usize;
    if let Some(body) = &f.body {
        number_region(body, &mut map, &mut counter);
    }
    map
}

fn number_region(r: &Region, map: &mut HashMap<ValueId, String>, counter: &mut usize) {
    for p in &r.args {
        map.insert(p.value.clone(), counter.to_string());
        *counter += 1;
    }
    for op in &r.ops {
        for p in &op.results {
            map.insert(p.value.clone(), counter.to_string());
            *counter += 1;
        }
        for nested in &op.regions {
            number_region(nested, map, counter);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    #[test]
    fn canonical_fixpoint_on_simple_module() {
        let src = r#"
module {
  func.func @f(%x: f64) {
    %y = arith.addf(%x, %x) : (f64, f64) -> (f64)
    func.return() : () -> ()
  }
}
"#;
        let once = print(&parse(src).unwrap());
        let twice = print(&parse(&once).unwrap());
        assert_eq!(once, twice);
        assert!(once.contains("%0 = arith.addf(%arg0, %arg0)"));
    }

    #[test]
    fn empty_function_prints_two_body_lines() {
        let src = "module { func.func @f() { func.return() : () -> () } }";
        let text = print(&parse(src).unwrap());
        assert_eq!(
            text,
            "module {\n  func.func @f() {\n    func.return() : () -> ()\n  }\n}\n"
        );
    }
}
