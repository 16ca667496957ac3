//! Hand-rolled lexer with line/column tracking for diagnostics.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare identifier, possibly dotted: `module`, `stencil.apply`, `f64`.
    Ident(String),
    /// `%name` value reference.
    Percent(String),
    /// `@name` symbol reference (dots allowed: `@llvm.fpga.set.stream.depth`).
    At(String),
    /// `^name` block label.
    Caret(String),
    /// Integer literal (sign folded in).
    Int(i64),
    /// Float literal (has '.', exponent, or is inf/NaN).
    Float(f64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Less,
    Greater,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Equal,
    Arrow,
    Bang,
    Question,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Percent(s) => write!(f, "`%{s}`"),
            Tok::At(s) => write!(f, "`@{s}`"),
            Tok::Caret(s) => write!(f, "`^{s}`"),
            Tok::Int(v) => write!(f, "integer `{v}`"),
            Tok::Float(v) => write!(f, "float `{v}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::Less => write!(f, "`<`"),
            Tok::Greater => write!(f, "`>`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Equal => write!(f, "`=`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Question => write!(f, "`?`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub struct LexError {
    pub pos: Pos,
    pub message: String,
}

pub fn lex(input: &str) -> Result<Vec<Spanned>, LexError> {
    let mut out = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! bump {
        () => {{
            if bytes[i] == b'\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = Pos { line, col };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    bump!();
                }
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, pos });
                bump!();
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, pos });
                bump!();
            }
            '{' => {
                out.push(Spanned { tok: Tok::LBrace, pos });
                bump!();
            }
            '}' => {
                out.push(Spanned { tok: Tok::RBrace, pos });
                bump!();
            }
            '<' => {
                out.push(Spanned { tok: Tok::Less, pos });
                bump!();
            }
            '>' => {
                out.push(Spanned { tok: Tok::Greater, pos });
                bump!();
            }
            '[' => {
                out.push(Spanned { tok: Tok::LBracket, pos });
                bump!();
            }
            ']' => {
                out.push(Spanned { tok: Tok::RBracket, pos });
                bump!();
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, pos });
                bump!();
            }
            ':' => {
                out.push(Spanned { tok: Tok::Colon, pos });
                bump!();
            }
            '=' => {
                out.push(Spanned { tok: Tok::Equal, pos });
                bump!();
            }
            '?' => {
                out.push(Spanned { tok: Tok::Question, pos });
                bump!();
            }
            '!' => {
                out.push(Spanned { tok: Tok::Bang, pos });
                bump!();
            }
            '%' | '@' | '^' => {
                bump!();
                let start = i;
                while i < bytes.len() {
                    let b = bytes[i] as char;
                    let dotted = c == '@';
                    if b.is_ascii_alphanumeric() || b == '_' || (dotted && b == '.') {
                        bump!();
                    } else {
                        break;
                    }
                }
                if start == i {
                    return Err(LexError {
                        pos,
                        message: format!("expected identifier after `{c}`"),
                    });
                }
                let name = input[start..i].to_string();
                let tok = match c {
                    '%' => Tok::Percent(name),
                    '@' => Tok::At(name),
                    _ => Tok::Caret(name),
                };
                out.push(Spanned { tok, pos });
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    if i >= bytes.len() {
                        return Err(LexError {
                            pos,
                            message: "unterminated string".to_string(),
                        });
                    }
                    let b = bytes[i] as char;
                    if b == '"' {
                        bump!();
                        break;
                    }
                    if b == '\\' {
                        bump!();
                        if i >= bytes.len() {
                            return Err(LexError {
                                pos,
                                message: "unterminated escape".to_string(),
                            });
                        }
                        let e = bytes[i] as char;
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            '\\' => '\\',
                            '"' => '"',
                            other => {
                                return Err(LexError {
                                    pos,
                                    message: format!("unknown escape `\\{other}`"),
                                })
                            }
                        });
                        bump!();
                    } else {
                        s.push(b);
                        bump!();
                    }
                }
                out.push(Spanned { tok: Tok::Str(s), pos });
            }
            '-' => {
                // `->` or negative numeric literal
                if i + 1 < bytes.len() && bytes[i + 1] == b'>' {
                    bump!();
                    bump!();
                    out.push(Spanned { tok: Tok::Arrow, pos });
                } else if i + 1 < bytes.len()
                    && ((bytes[i + 1] as char).is_ascii_digit()
                        || bytes[i + 1] == b'i' && input[i + 1..].starts_with("inf"))
                {
                    bump!();
                    let (tok, consumed) = lex_number(&input[i..], true).map_err(|m| LexError {
                        pos,
                        message: m,
                    })?;
                    for _ in 0..consumed {
                        bump!();
                    }
                    out.push(Spanned { tok, pos });
                } else {
                    return Err(LexError {
                        pos,
                        message: "stray `-`".to_string(),
                    });
                }
            }
            c if c.is_ascii_digit() => {
                let (tok, consumed) = lex_number(&input[i..], false).map_err(|m| LexError {
                    pos,
                    message: m,
                })?;
                for _ in 0..consumed {
                    bump!();
                }
                out.push(Spanned { tok, pos });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let b = bytes[i] as char;
                    if b.is_ascii_alphanumeric() || b == '_' || b == '.' {
                        bump!();
                    } else {
                        break;
                    }
                }
                let word = &input[start..i];
                let tok = match word {
                    "NaN" => Tok::Float(f64::NAN),
                    "inf" => Tok::Float(f64::INFINITY),
                    _ => Tok::Ident(word.to_string()),
                };
                out.push(Spanned { tok, pos });
            }
            other => {
                return Err(LexError {
                    pos,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

/// Lex a number starting at the first digit (sign already consumed).
/// Returns the token and the byte count consumed, excluding the sign.
fn lex_number(s: &str, negative: bool) -> Result<(Tok, usize), String> {
    if s.starts_with("inf") {
        return Ok((
            Tok::Float(if negative { f64::NEG_INFINITY } else { f64::INFINITY }),
            3,
        ));
    }
    let bytes = s.as_bytes();
    let mut j = 0usize;
    while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
        j += 1;
    }
    let mut is_float = false;
    if j < bytes.len() && bytes[j] == b'.' {
        is_float = true;
        j += 1;
        while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
            j += 1;
        }
    }
    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
        let mut k = j + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
            is_float = true;
            j = k;
            while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                j += 1;
            }
        }
    }
    let text = &s[..j];
    if is_float {
        let v: f64 = text.parse().map_err(|_| format!("bad float `{text}`"))?;
        Ok((Tok::Float(if negative { -v } else { v }), j))
    } else {
        let v: i64 = text.parse().map_err(|_| format!("bad integer `{text}`"))?;
        Ok((Tok::Int(if negative { -v } else { v }), j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_op_line() {
        let toks = lex("%0 = stencil.access(%4) {offset = <-1,0,1>} : (!temp<?xf64>) -> (f64)")
            .unwrap();
        assert!(matches!(toks[0].tok, Tok::Percent(ref s) if s == "0"));
        assert!(toks.iter().any(|t| matches!(t.tok, Tok::Int(-1))));
        assert!(toks.iter().any(|t| matches!(t.tok, Tok::Arrow)));
    }

    #[test]
    fn comments_are_skipped() {
        let toks = lex("// Duplicate streams: 1 copy per field\nmodule").unwrap();
        assert!(matches!(toks[0].tok, Tok::Ident(ref s) if s == "module"));
    }

    #[test]
    fn tracks_positions() {
        let toks = lex("a\n  b").unwrap();
        assert_eq!(toks[1].pos, Pos { line: 2, col: 3 });
    }
}
