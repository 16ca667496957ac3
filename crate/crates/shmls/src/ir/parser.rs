//! Recursive-descent parser for the textual IR.
//!
//! The grammar is a uniform generic form: every operation prints as
//! `results = op.name(operands) {attrs} {regions} : (in-types) -> (out-types)`
//! with `module` and `func.func` as the only structural special cases.

use std::fmt;

use super::attr::Attribute;
use super::lexer::{lex, Pos, Spanned, Tok};
use super::registry;
use super::types::{DimBound, ScalarType, Type};
use super::{AttrMap, FunctionDef, IRModule, Operation, Param, Region, ValueId, Visibility};

#[derive(Debug, Clone)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

pub fn parse(input: &str) -> Result<IRModule, ParseError> {
    let toks = lex(input).map_err(|e| ParseError {
        line: e.pos.line,
        col: e.pos.col,
        message: e.message,
    })?;
    let mut p = Parser { toks, i: 0 };
    let m = p.parse_module()?;
    p.expect_eof()?;
    Ok(m)
}

struct Parser {
    toks: Vec<Spanned>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.i + k).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let pos = self.pos();
        Err(ParseError {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {want}, found {}", self.peek()))
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.err(format!("expected end of input, found {}", self.peek()))
        }
    }

    fn expect_ident(&mut self, want: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == want => {
                self.bump();
                Ok(())
            }
            other => self.err(format!("expected `{want}`, found {other}")),
        }
    }

    fn parse_module(&mut self) -> Result<IRModule, ParseError> {
        self.expect_ident("module")?;
        let attributes = if matches!(self.peek(), Tok::LBrace) && self.looks_like_attr_dict() {
            self.parse_attr_dict()?
        } else {
            AttrMap::new()
        };
        self.expect(Tok::LBrace)?;
        let mut functions = Vec::new();
        while !matches!(self.peek(), Tok::RBrace) {
            functions.push(self.parse_function()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(IRModule {
            attributes,
            functions,
        })
    }

    fn parse_function(&mut self) -> Result<FunctionDef, ParseError> {
        self.expect_ident("func.func")?;
        let visibility = if matches!(self.peek(), Tok::Ident(s) if s == "private") {
            self.bump();
            Visibility::Private
        } else {
            Visibility::Public
        };
        let name = match self.bump() {
            Tok::At(s) => s,
            other => return self.err(format!("expected function symbol, found {other}")),
        };
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        let mut declaration_style = false;
        let mut arg_idx = 0usize;
        while !matches!(self.peek(), Tok::RParen) {
            if arg_idx > 0 {
                self.expect(Tok::Comma)?;
            }
            match self.peek() {
                Tok::Percent(_) => {
                    let v = match self.bump() {
                        Tok::Percent(s) => s,
                        _ => unreachable!(),
                    };
                    self.expect(Tok::Colon)?;
                    let ty = self.parse_type()?;
                    args.push(Param::new(v, ty));
                }
                _ => {
                    declaration_style = true;
                    let ty = self.parse_type()?;
                    args.push(Param::new(format!("arg{arg_idx}"), ty));
                }
            }
            arg_idx += 1;
        }
        self.expect(Tok::RParen)?;
        let mut results = Vec::new();
        if matches!(self.peek(), Tok::Arrow) {
            self.bump();
            self.expect(Tok::LParen)?;
            while !matches!(self.peek(), Tok::RParen) {
                if !results.is_empty() {
                    self.expect(Tok::Comma)?;
                }
                results.push(self.parse_type()?);
            }
            self.expect(Tok::RParen)?;
        }
        let attributes = if matches!(self.peek(), Tok::LBrace) && self.looks_like_attr_dict() {
            self.parse_attr_dict()?
        } else {
            AttrMap::new()
        };
        let body = if matches!(self.peek(), Tok::LBrace) {
            if declaration_style {
                return self.err("declaration-style arguments on a function with a body");
            }
            Some(self.parse_region_body()?)
        } else {
            None
        };
        Ok(FunctionDef {
            name,
            visibility,
            args,
            results,
            attributes,
            body,
        })
    }

    /// True when the upcoming `{` opens an attribute dictionary rather than
    /// a region: `{ident =` with an undotted identifier.
    fn looks_like_attr_dict(&self) -> bool {
        matches!(self.peek(), Tok::LBrace)
            && matches!(self.peek_at(1), Tok::Ident(s) if !s.contains('.'))
            && matches!(self.peek_at(2), Tok::Equal)
    }

    fn parse_attr_dict(&mut self) -> Result<AttrMap, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut map = AttrMap::new();
        let mut first = true;
        while !matches!(self.peek(), Tok::RBrace) {
            if !first {
                self.expect(Tok::Comma)?;
            }
            first = false;
            let key = match self.bump() {
                Tok::Ident(s) => s,
                other => return self.err(format!("expected attribute name, found {other}")),
            };
            self.expect(Tok::Equal)?;
            let value = self.parse_attr_value()?;
            if map.insert(key.clone(), value).is_some() {
                return self.err(format!("duplicate attribute `{key}`"));
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(map)
    }

    fn parse_attr_value(&mut self) -> Result<Attribute, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                let ty = if matches!(self.peek(), Tok::Colon) {
                    self.bump();
                    self.parse_scalar_type()?
                } else {
                    ScalarType::I64
                };
                Ok(Attribute::Int(v, ty))
            }
            Tok::Float(v) => {
                self.bump();
                let ty = if matches!(self.peek(), Tok::Colon) {
                    self.bump();
                    self.parse_scalar_type()?
                } else {
                    ScalarType::F64
                };
                Ok(Attribute::Float(v, ty))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Attribute::Str(s))
            }
            Tok::Less => {
                self.bump();
                let mut vs = Vec::new();
                while !matches!(self.peek(), Tok::Greater) {
                    if !vs.is_empty() {
                        self.expect(Tok::Comma)?;
                    }
                    match self.bump() {
                        Tok::Int(v) => vs.push(v),
                        other => {
                            return self.err(format!("expected integer in dense array, found {other}"))
                        }
                    }
                }
                self.expect(Tok::Greater)?;
                Ok(Attribute::DenseInts(vs))
            }
            Tok::Bang | Tok::Ident(_) => Ok(Attribute::TypeAttr(self.parse_type()?)),
            other => self.err(format!("expected attribute value, found {other}")),
        }
    }

    fn parse_scalar_type(&mut self) -> Result<ScalarType, ParseError> {
        match self.bump() {
            Tok::Ident(s) => scalar_from_name(&s)
                .ok_or(())
                .or_else(|_| self.err(format!("unknown scalar type `{s}`"))),
            other => self.err(format!("expected scalar type, found {other}")),
        }
    }

    fn parse_type(&mut self) -> Result<Type, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "memref" => {
                self.bump();
                self.expect(Tok::Less)?;
                let (dims, element) = self.parse_shape_list()?;
                self.expect(Tok::Greater)?;
                let shape = dims
                    .into_iter()
                    .map(|d| match d {
                        ShapeDim::Known(n) => Ok(n),
                        _ => Err(()),
                    })
                    .collect::<Result<Vec<_>, _>>();
                match shape {
                    Ok(shape) if !shape.is_empty() => Ok(Type::MemRef { shape, element }),
                    _ => self.err("memref requires a static shape"),
                }
            }
            Tok::Ident(s) => {
                if let Some(sc) = scalar_from_name(&s) {
                    self.bump();
                    Ok(Type::Scalar(sc))
                } else {
                    self.err(format!("unknown type `{s}`"))
                }
            }
            Tok::Bang => {
                self.bump();
                let kind = match self.bump() {
                    Tok::Ident(s) => s,
                    other => return self.err(format!("expected type name after `!`, found {other}")),
                };
                match kind.as_str() {
                    "field" => {
                        self.expect(Tok::Less)?;
                        let (dims, element) = self.parse_shape_list()?;
                        self.expect(Tok::Greater)?;
                        let bounds = dims
                            .into_iter()
                            .map(|d| match d {
                                ShapeDim::Bounds(l, h) => Ok(DimBound::Known(l, h)),
                                ShapeDim::Unknown => Ok(DimBound::Unknown),
                                ShapeDim::Known(_) => Err(()),
                            })
                            .collect::<Result<Vec<_>, _>>();
                        match bounds {
                            Ok(bounds) if !bounds.is_empty() => {
                                Ok(Type::Field { bounds, element })
                            }
                            _ => self.err("field dims must be `[lo,hi]` or `?`"),
                        }
                    }
                    "temp" => {
                        self.expect(Tok::Less)?;
                        let (dims, element) = self.parse_shape_list()?;
                        self.expect(Tok::Greater)?;
                        let extents = dims
                            .into_iter()
                            .map(|d| match d {
                                ShapeDim::Known(n) => Ok(Some(n)),
                                ShapeDim::Unknown => Ok(None),
                                ShapeDim::Bounds(..) => Err(()),
                            })
                            .collect::<Result<Vec<_>, _>>();
                        match extents {
                            Ok(extents) if !extents.is_empty() => {
                                Ok(Type::Temp { extents, element })
                            }
                            _ => self.err("temp dims must be sizes or `?`"),
                        }
                    }
                    "stream" => {
                        self.expect(Tok::Less)?;
                        let element = Box::new(self.parse_type()?);
                        self.expect(Tok::Comma)?;
                        let depth = match self.bump() {
                            Tok::Int(v) if v >= 1 => v as u32,
                            other => {
                                return self.err(format!("expected stream depth >= 1, found {other}"))
                            }
                        };
                        self.expect(Tok::Greater)?;
                        Ok(Type::Stream { element, depth })
                    }
                    "struct" => {
                        self.expect(Tok::Less)?;
                        self.expect(Tok::LParen)?;
                        let mut members = Vec::new();
                        while !matches!(self.peek(), Tok::RParen) {
                            if !members.is_empty() {
                                self.expect(Tok::Comma)?;
                            }
                            members.push(self.parse_type()?);
                        }
                        self.expect(Tok::RParen)?;
                        self.expect(Tok::Greater)?;
                        Ok(Type::Struct(members))
                    }
                    "array" => {
                        self.expect(Tok::Less)?;
                        let size = match self.bump() {
                            Tok::Int(v) if v >= 1 => v as u64,
                            other => return self.err(format!("expected array size, found {other}")),
                        };
                        self.expect_ident("x")?;
                        let element = Box::new(self.parse_type()?);
                        self.expect(Tok::Greater)?;
                        Ok(Type::Array { size, element })
                    }
                    "ptr" => {
                        self.expect(Tok::Less)?;
                        let inner = Box::new(self.parse_type()?);
                        self.expect(Tok::Greater)?;
                        Ok(Type::Ptr(inner))
                    }
                    other => self.err(format!("unknown type `!{other}`")),
                }
            }
            other => self.err(format!("expected type, found {other}")),
        }
    }

    /// Parse an `x`-separated shape list up to (not consuming) `>`.
    /// Handles the lexer gluing `x` onto following digits/idents, e.g.
    /// `[0,128]xf64` arrives as `[0,128]` + ident `xf64`.
    fn parse_shape_list(&mut self) -> Result<(Vec<ShapeDim>, ScalarType), ParseError> {
        let mut dims = Vec::new();
        // Pending text produced by splitting an x-glued identifier.
        let mut pending = String::new();
        loop {
            if pending.is_empty() {
                match self.peek().clone() {
                    Tok::LBracket => {
                        self.bump();
                        let lo = match self.bump() {
                            Tok::Int(v) => v,
                            other => return self.err(format!("expected bound, found {other}")),
                        };
                        self.expect(Tok::Comma)?;
                        let hi = match self.bump() {
                            Tok::Int(v) => v,
                            other => return self.err(format!("expected bound, found {other}")),
                        };
                        self.expect(Tok::RBracket)?;
                        dims.push(ShapeDim::Bounds(lo, hi));
                        // separator `x...` follows as a glued ident
                        match self.bump() {
                            Tok::Ident(s) if s.starts_with('x') => {
                                pending = s[1..].to_string();
                            }
                            other => {
                                return self.err(format!("expected `x` separator, found {other}"))
                            }
                        }
                    }
                    Tok::Question => {
                        self.bump();
                        dims.push(ShapeDim::Unknown);
                        match self.bump() {
                            Tok::Ident(s) if s.starts_with('x') => {
                                pending = s[1..].to_string();
                            }
                            other => {
                                return self.err(format!("expected `x` separator, found {other}"))
                            }
                        }
                    }
                    Tok::Int(v) => {
                        self.bump();
                        dims.push(ShapeDim::Known(v));
                        match self.bump() {
                            Tok::Ident(s) if s.starts_with('x') => {
                                pending = s[1..].to_string();
                            }
                            other => {
                                return self.err(format!("expected `x` separator, found {other}"))
                            }
                        }
                    }
                    other => return self.err(format!("expected shape dimension, found {other}")),
                }
            }
            // Consume from pending: leading digits are a dim, `?` unknown,
            // otherwise the element scalar type terminates the list.
            if pending.is_empty() {
                continue;
            }
            if pending.starts_with('?') {
                dims.push(ShapeDim::Unknown);
                if let Some(rest) = pending[1..].strip_prefix('x') {
                    pending = rest.to_string();
                    continue;
                }
                return self.err("expected `x` after `?` in shape");
            }
            if pending.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                let digits: String = pending.chars().take_while(|c| c.is_ascii_digit()).collect();
                let rest = &pending[digits.len()..];
                let n: i64 = digits
                    .parse()
                    .map_err(|_| ())
                    .or_else(|_| self.err("bad shape dimension"))?;
                dims.push(ShapeDim::Known(n));
                if let Some(r) = rest.strip_prefix('x') {
                    pending = r.to_string();
                    continue;
                }
                return self.err("expected `x` after shape dimension");
            }
            return match scalar_from_name(&pending) {
                Some(sc) => Ok((dims, sc)),
                None => self.err(format!("unknown element type `{pending}`")),
            };
        }
    }

    fn parse_region_body(&mut self) -> Result<Region, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut args = Vec::new();
        if matches!(self.peek(), Tok::Caret(_)) {
            self.bump();
            self.expect(Tok::LParen)?;
            while !matches!(self.peek(), Tok::RParen) {
                if !args.is_empty() {
                    self.expect(Tok::Comma)?;
                }
                let v = match self.bump() {
                    Tok::Percent(s) => s,
                    other => return self.err(format!("expected block argument, found {other}")),
                };
                self.expect(Tok::Colon)?;
                let ty = self.parse_type()?;
                args.push(Param::new(v, ty));
            }
            self.expect(Tok::RParen)?;
            self.expect(Tok::Colon)?;
        }
        let mut ops = Vec::new();
        while !matches!(self.peek(), Tok::RBrace) {
            ops.push(self.parse_op()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(Region { args, ops })
    }

    fn parse_op(&mut self) -> Result<Operation, ParseError> {
        // results
        let mut result_ids = Vec::new();
        if matches!(self.peek(), Tok::Percent(_)) {
            loop {
                match self.bump() {
                    Tok::Percent(s) => result_ids.push(s),
                    _ => unreachable!(),
                }
                if matches!(self.peek(), Tok::Comma) {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::Equal)?;
        }
        let name_pos = self.pos();
        let name = match self.bump() {
            Tok::Ident(s) => s,
            other => return self.err(format!("expected operation name, found {other}")),
        };
        if !name.contains('.') {
            return Err(ParseError {
                line: name_pos.line,
                col: name_pos.col,
                message: format!("expected dialect-qualified op name, found `{name}`"),
            });
        }
        let dialect = name.split('.').next().unwrap();
        if !registry::is_known_dialect(dialect) {
            return Err(ParseError {
                line: name_pos.line,
                col: name_pos.col,
                message: format!("unknown dialect `{dialect}` in op `{name}`"),
            });
        }
        if !registry::is_known_op(&name) {
            return Err(ParseError {
                line: name_pos.line,
                col: name_pos.col,
                message: format!("unknown operation `{name}`"),
            });
        }

        let mut op = Operation::new(name);
        op.results = result_ids
            .into_iter()
            .map(|s| Param::new(s, Type::F64)) // placeholder; fixed from functional type
            .collect();

        if matches!(self.peek(), Tok::At(_)) {
            if let Tok::At(sym) = self.bump() {
                op.symbol = Some(sym);
            }
        }

        self.expect(Tok::LParen)?;
        while !matches!(self.peek(), Tok::RParen) {
            if !op.operands.is_empty() {
                self.expect(Tok::Comma)?;
            }
            match self.bump() {
                Tok::Percent(s) => op.operands.push(ValueId::new(s)),
                other => return self.err(format!("expected operand, found {other}")),
            }
        }
        self.expect(Tok::RParen)?;

        if self.looks_like_attr_dict() {
            op.attributes = self.parse_attr_dict()?;
        }
        while matches!(self.peek(), Tok::LBrace) {
            op.regions.push(self.parse_region_body()?);
        }

        self.expect(Tok::Colon)?;
        self.expect(Tok::LParen)?;
        while !matches!(self.peek(), Tok::RParen) {
            if !op.operand_types.is_empty() {
                self.expect(Tok::Comma)?;
            }
            op.operand_types.push(self.parse_type()?);
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Arrow)?;
        self.expect(Tok::LParen)?;
        let mut result_types = Vec::new();
        while !matches!(self.peek(), Tok::RParen) {
            if !result_types.is_empty() {
                self.expect(Tok::Comma)?;
            }
            result_types.push(self.parse_type()?);
        }
        self.expect(Tok::RParen)?;

        if op.operand_types.len() != op.operands.len() {
            return self.err(format!(
                "op `{}` has {} operands but {} operand types",
                op.name,
                op.operands.len(),
                op.operand_types.len()
            ));
        }
        if result_types.len() != op.results.len() {
            return self.err(format!(
                "op `{}` binds {} results but declares {} result types",
                op.name,
                op.results.len(),
                result_types.len()
            ));
        }
        for (param, ty) in op.results.iter_mut().zip(result_types) {
            param.ty = ty;
        }
        Ok(op)
    }
}

#[derive(Debug)]
enum ShapeDim {
    Known(i64),
    Bounds(i64, i64),
    Unknown,
}

fn scalar_from_name(s: &str) -> Option<ScalarType> {
    match s {
        "f32" => Some(ScalarType::F32),
        "f64" => Some(ScalarType::F64),
        "i1" => Some(ScalarType::I1),
        "i32" => Some(ScalarType::I32),
        "i64" => Some(ScalarType::I64),
        "index" => Some(ScalarType::Index),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_empty_module() {
        let m = parse("module {}").unwrap();
        assert_eq!(m.functions.len(), 0);
    }

    #[test]
    fn parses_types() {
        let src = r#"
module {
  func.func private @f(!field<[0,128]xf64>, !temp<?x?xf32>, memref<4x8xf64>, !stream<!struct<(!array<8 x f64>)>, 2>)
}
"#;
        let m = parse(src).unwrap();
        let f = &m.functions[0];
        assert_eq!(
            f.args[0].ty,
            Type::Field {
                bounds: vec![DimBound::Known(0, 128)],
                element: ScalarType::F64
            }
        );
        assert_eq!(
            f.args[1].ty,
            Type::Temp {
                extents: vec![None, None],
                element: ScalarType::F32
            }
        );
        assert_eq!(
            f.args[2].ty,
            Type::MemRef {
                shape: vec![4, 8],
                element: ScalarType::F64
            }
        );
    }

    #[test]
    fn unknown_dialect_is_an_error() {
        let src = "module { func.func @f() { foo.bar() : () -> () } }";
        let e = parse(src).unwrap_err();
        assert!(e.message.contains("unknown dialect `foo`"), "{e}");
    }

    #[test]
    fn unknown_op_is_an_error() {
        let src = "module { func.func @f() { arith.banana() : () -> () } }";
        let e = parse(src).unwrap_err();
        assert!(e.message.contains("unknown operation"), "{e}");
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse("module {\n  func.func @f( }\n}").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.col > 0);
    }
}
