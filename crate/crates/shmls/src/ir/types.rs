//! Type system for the textual IR.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    F32,
    F64,
    I1,
    I32,
    I64,
    Index,
}

impl ScalarType {
    pub fn bit_width(&self) -> u32 {
        match self {
            ScalarType::F32 | ScalarType::I32 => 32,
            ScalarType::F64 | ScalarType::I64 | ScalarType::Index => 64,
            ScalarType::I1 => 1,
        }
    }

    pub fn is_float(&self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
            ScalarType::I1 => "i1",
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
            ScalarType::Index => "index",
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-dimension bounds of a field type: `[lo,hi)` or unknown (`?`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DimBound {
    Known(i64, i64),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Type {
    Scalar(ScalarType),
    /// `memref<4x8xf64>` — static shape buffer.
    MemRef {
        shape: Vec<i64>,
        element: ScalarType,
    },
    /// `!field<[0,128]x[0,64]xf64>` — bounded stencil field.
    Field {
        bounds: Vec<DimBound>,
        element: ScalarType,
    },
    /// `!temp<?xf64>` / `!temp<126xf64>` — stencil value plane.
    Temp {
        extents: Vec<Option<i64>>,
        element: ScalarType,
    },
    /// `!stream<f64, 2>` — FIFO channel with element type and depth.
    Stream { element: Box<Type>, depth: u32 },
    /// `!struct<(f64, i32)>` — packed structure.
    Struct(Vec<Type>),
    /// `!array<8 x f64>`.
    Array { size: u64, element: Box<Type> },
    /// `!ptr<T>`.
    Ptr(Box<Type>),
}

impl Type {
    pub const F32: Type = Type::Scalar(ScalarType::F32);
    pub const F64: Type = Type::Scalar(ScalarType::F64);
    pub const I1: Type = Type::Scalar(ScalarType::I1);
    pub const I32: Type = Type::Scalar(ScalarType::I32);
    pub const I64: Type = Type::Scalar(ScalarType::I64);
    pub const INDEX: Type = Type::Scalar(ScalarType::Index);

    pub fn as_scalar(&self) -> Option<ScalarType> {
        match self {
            Type::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn is_float(&self) -> bool {
        matches!(self, Type::Scalar(s) if s.is_float())
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            Type::Field { bounds, .. } => Some(bounds.len()),
            Type::Temp { extents, .. } => Some(extents.len()),
            Type::MemRef { shape, .. } => Some(shape.len()),
            _ => None,
        }
    }

    pub fn element_scalar(&self) -> Option<ScalarType> {
        match self {
            Type::Scalar(s) => Some(*s),
            Type::MemRef { element, .. }
            | Type::Field { element, .. }
            | Type::Temp { element, .. } => Some(*element),
            _ => None,
        }
    }

    /// Structural equality that ignores stream depths. Runtime helpers are
    /// declared per kernel but FIFO depth is a configuration detail, not part
    /// of the call interface.
    pub fn compatible(&self, other: &Type) -> bool {
        match (self, other) {
            (Type::Stream { element: a, .. }, Type::Stream { element: b, .. }) => {
                a.compatible(b)
            }
            (Type::Ptr(a), Type::Ptr(b)) => a.compatible(b),
            (Type::Array { size: n, element: a }, Type::Array { size: m, element: b }) => {
                n == m && a.compatible(b)
            }
            (Type::Struct(a), Type::Struct(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.compatible(y))
            }
            _ => self == other,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(s) => write!(f, "{s}"),
            Type::MemRef { shape, element } => {
                write!(f, "memref<")?;
                for d in shape {
                    write!(f, "{d}x")?;
                }
                write!(f, "{element}>")
            }
            Type::Field { bounds, element } => {
                write!(f, "!field<")?;
                for b in bounds {
                    match b {
                        DimBound::Known(l, h) => write!(f, "[{l},{h}]x")?,
                        DimBound::Unknown => write!(f, "?x")?,
                    }
                }
                write!(f, "{element}>")
            }
            Type::Temp { extents, element } => {
                write!(f, "!temp<")?;
                for e in extents {
                    match e {
                        Some(n) => write!(f, "{n}x")?,
                        None => write!(f, "?x")?,
                    }
                }
                write!(f, "{element}>")
            }
            Type::Stream { element, depth } => write!(f, "!stream<{element}, {depth}>"),
            Type::Struct(members) => {
                write!(f, "!struct<(")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{m}")?;
                }
                write!(f, ")>")
            }
            Type::Array { size, element } => write!(f, "!array<{size} x {element}>"),
            Type::Ptr(inner) => write!(f, "!ptr<{inner}>"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_matches_expected_forms() {
        let field = Type::Field {
            bounds: vec![DimBound::Known(0, 128)],
            element: ScalarType::F64,
        };
        assert_eq!(field.to_string(), "!field<[0,128]xf64>");
        let temp = Type::Temp {
            extents: vec![None],
            element: ScalarType::F64,
        };
        assert_eq!(temp.to_string(), "!temp<?xf64>");
        let packed = Type::Ptr(Box::new(Type::Struct(vec![Type::Array {
            size: 8,
            element: Box::new(Type::F64),
        }])));
        assert_eq!(packed.to_string(), "!ptr<!struct<(!array<8 x f64>)>>");
    }

    #[test]
    fn stream_compat_ignores_depth() {
        let a = Type::Stream {
            element: Box::new(Type::F64),
            depth: 2,
        };
        let b = Type::Stream {
            element: Box::new(Type::F64),
            depth: 16,
        };
        assert!(a.compatible(&b));
        assert_ne!(a, b);
    }
}
