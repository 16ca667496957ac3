//! Attribute values attachable to operations and functions.

use std::fmt;

use super::types::{ScalarType, Type};

#[derive(Debug, Clone, PartialEq)]
pub enum Attribute {
    /// Typed integer, printed `5 : i32`. Width is one of i1/i32/i64/index.
    Int(i64, ScalarType),
    /// Typed float, printed `1.5 : f64`. f32 values are stored pre-rounded.
    Float(f64, ScalarType),
    Str(String),
    TypeAttr(Type),
    /// Dense integer array, printed `<-1,0,1>`. Used for stencil offsets.
    DenseInts(Vec<i64>),
}

impl Attribute {
    pub fn int(v: i64, ty: ScalarType) -> Self {
        Attribute::Int(v, ty)
    }

    pub fn index(v: i64) -> Self {
        Attribute::Int(v, ScalarType::Index)
    }

    pub fn i32(v: i64) -> Self {
        Attribute::Int(v, ScalarType::I32)
    }

    pub fn float(v: f64, ty: ScalarType) -> Self {
        let v = if ty == ScalarType::F32 { v as f32 as f64 } else { v };
        Attribute::Float(v, ty)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Attribute::Int(v, _) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Attribute::Float(v, _) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Attribute::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_type(&self) -> Option<&Type> {
        match self {
            Attribute::TypeAttr(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_dense_ints(&self) -> Option<&[i64]> {
        match self {
            Attribute::DenseInts(v) => Some(v),
            _ => None,
        }
    }
}

/// Prints a float so that parsing recovers the identical bits: Rust's
/// shortest round-trip repr, which always carries a '.' or exponent.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        let s = format!("{v:?}");
        debug_assert!(s.contains('.') || s.contains('e') || s.contains('E'));
        s
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::Int(v, ty) => write!(f, "{v} : {ty}"),
            Attribute::Float(v, ty) => write!(f, "{} : {ty}", format_float(*v)),
            Attribute::Str(s) => write!(f, "{s:?}"),
            Attribute::TypeAttr(t) => write!(f, "{t}"),
            Attribute::DenseInts(vs) => {
                write!(f, "<")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ">")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_repr_round_trips() {
        for v in [0.5, 1.0, -3.25, 1e300, 1.0000000000000002, f64::MIN_POSITIVE] {
            let s = format_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn dense_ints_render_compact() {
        assert_eq!(Attribute::DenseInts(vec![-1, 0, 1]).to_string(), "<-1,0,1>");
    }
}
