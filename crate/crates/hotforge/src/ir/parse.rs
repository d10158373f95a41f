//! Recursive-descent parser for the textual IR.
//!
//! The grammar is token-based; `#` starts a comment that runs to end of line.
//! The only line-sensitive rule is `ret`: its optional operand must sit on
//! the same line, so a following block label is never swallowed.

use std::fmt;

use super::{BinOp, Block, CmpPred, Function, Instr, InstrKind, Module, Operand, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parse error at {}:{}: {}",
            self.line, self.col, self.message
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Percent, // '%'
    Int(i64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Eq,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;
    let mut col = 1usize;
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let bump = |chars: &mut std::iter::Peekable<std::str::Chars>,
                    line: &mut usize,
                    col: &mut usize| {
            let c = chars.next().unwrap();
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            c
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump(&mut chars, &mut line, &mut col);
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars, &mut line, &mut col);
                }
            }
            '(' | ')' | '{' | '}' | ',' | ':' | '=' | '%' => {
                bump(&mut chars, &mut line, &mut col);
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    '=' => Tok::Eq,
                    _ => Tok::Percent,
                };
                toks.push(Token {
                    tok,
                    line: tline,
                    col: tcol,
                });
            }
            '-' | '0'..='9' => {
                let mut s = String::new();
                s.push(bump(&mut chars, &mut line, &mut col));
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(bump(&mut chars, &mut line, &mut col));
                    } else {
                        break;
                    }
                }
                let v: i64 = s.parse().map_err(|_| ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("invalid integer literal `{s}`"),
                })?;
                toks.push(Token {
                    tok: Tok::Int(v),
                    line: tline,
                    col: tcol,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(bump(&mut chars, &mut line, &mut col));
                    } else {
                        break;
                    }
                }
                toks.push(Token {
                    tok: Tok::Ident(s),
                    line: tline,
                    col: tcol,
                });
            }
            other => {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.peek().map(|t| (t.line, t.col)).unwrap_or_else(|| {
            self.toks
                .last()
                .map(|t| (t.line, t.col + 1))
                .unwrap_or((1, 1))
        });
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<Token, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.err_here(format!("expected {what}, found end of input")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.next(what)?;
        if t.tok != tok {
            return Err(ParseError {
                line: t.line,
                col: t.col,
                message: format!("expected {what}"),
            });
        }
        Ok(t)
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        let t = self.next(what)?;
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t)),
            _ => Err(ParseError {
                line: t.line,
                col: t.col,
                message: format!("expected {what}"),
            }),
        }
    }

    fn int(&mut self, what: &str) -> Result<i64, ParseError> {
        let t = self.next(what)?;
        match t.tok {
            Tok::Int(v) => Ok(v),
            _ => Err(ParseError {
                line: t.line,
                col: t.col,
                message: format!("expected {what}"),
            }),
        }
    }

    fn value_name(&mut self) -> Result<String, ParseError> {
        self.expect(Tok::Percent, "`%`")?;
        Ok(self.ident("value name")?.0)
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Percent) => Ok(Operand::Value(self.value_name()?)),
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Operand::Literal(v))
            }
            _ => Err(self.err_here("expected operand (`%name` or integer)")),
        }
    }

    fn ty(&mut self) -> Result<Ty, ParseError> {
        let (s, t) = self.ident("type")?;
        Ty::parse(&s).ok_or(ParseError {
            line: t.line,
            col: t.col,
            message: format!("unknown type `{s}`"),
        })
    }

    fn call_args(&mut self) -> Result<Vec<Operand>, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::RParen)) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.operand()?);
            let t = self.next("`,` or `)`")?;
            match t.tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                _ => {
                    return Err(ParseError {
                        line: t.line,
                        col: t.col,
                        message: "expected `,` or `)`".into(),
                    })
                }
            }
        }
        Ok(args)
    }

    /// RHS of a `%name = ...` assignment.
    fn rhs(&mut self) -> Result<InstrKind, ParseError> {
        let (kw, t) = self.ident("instruction")?;
        if let Some(op) = BinOp::parse(&kw) {
            let ty = self.ty()?;
            let lhs = self.operand()?;
            self.expect(Tok::Comma, "`,`")?;
            let rhs = self.operand()?;
            return Ok(InstrKind::Bin { op, ty, lhs, rhs });
        }
        match kw.as_str() {
            "const" => {
                let ty = self.ty()?;
                let value = self.int("integer constant")?;
                Ok(InstrKind::Const { ty, value })
            }
            "cmp" => {
                let (p, pt) = self.ident("comparison predicate")?;
                let pred = CmpPred::parse(&p).ok_or(ParseError {
                    line: pt.line,
                    col: pt.col,
                    message: format!("unknown predicate `{p}`"),
                })?;
                let ty = self.ty()?;
                let lhs = self.operand()?;
                self.expect(Tok::Comma, "`,`")?;
                let rhs = self.operand()?;
                Ok(InstrKind::Cmp { pred, ty, lhs, rhs })
            }
            "alloca" => Ok(InstrKind::Alloca { ty: self.ty()? }),
            "load" => {
                let ty = self.ty()?;
                let ptr = self.operand()?;
                Ok(InstrKind::Load { ty, ptr })
            }
            "getfield" => {
                let base = self.operand()?;
                self.expect(Tok::Comma, "`,`")?;
                let index = self.int("field index")?;
                if index < 0 {
                    return Err(ParseError {
                        line: t.line,
                        col: t.col,
                        message: "field index must be nonnegative".into(),
                    });
                }
                Ok(InstrKind::GetField {
                    base,
                    index: index as u32,
                })
            }
            "call" => {
                let (callee, _) = self.ident("callee")?;
                Ok(InstrKind::Call {
                    callee,
                    args: self.call_args()?,
                })
            }
            other => Err(ParseError {
                line: t.line,
                col: t.col,
                message: format!("unknown instruction `{other}`"),
            }),
        }
    }

    /// One instruction or terminator. Returns `None` at a block label or `}`.
    fn instr(&mut self) -> Result<Option<Instr>, ParseError> {
        let t = match self.peek() {
            Some(t) => t.clone(),
            None => return Err(self.err_here("expected instruction or `}`")),
        };
        match &t.tok {
            Tok::RBrace => Ok(None),
            Tok::Ident(kw) => {
                // Lookahead: `ident :` starts the next block.
                if matches!(
                    self.toks.get(self.pos + 1).map(|t| &t.tok),
                    Some(Tok::Colon)
                ) {
                    return Ok(None);
                }
                self.pos += 1;
                let kind = match kw.as_str() {
                    "store" => {
                        let ptr = self.operand()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let value = self.operand()?;
                        InstrKind::Store { ptr, value }
                    }
                    "trampoline" => {
                        let site = self.int("trampoline site id")?;
                        if site < 0 {
                            return Err(ParseError {
                                line: t.line,
                                col: t.col,
                                message: "trampoline site id must be nonnegative".into(),
                            });
                        }
                        InstrKind::Trampoline { site: site as u32 }
                    }
                    "call" => {
                        let (callee, _) = self.ident("callee")?;
                        InstrKind::Call {
                            callee,
                            args: self.call_args()?,
                        }
                    }
                    "ret" => {
                        // Operand only if it sits on the same source line.
                        let value = match self.peek() {
                            Some(n) if n.line == t.line => match n.tok {
                                Tok::Percent | Tok::Int(_) => Some(self.operand()?),
                                _ => None,
                            },
                            _ => None,
                        };
                        InstrKind::Ret { value }
                    }
                    "br" => InstrKind::Br {
                        target: self.ident("branch target label")?.0,
                    },
                    "cond_br" => {
                        let cond = self.operand()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let then_label = self.ident("branch target label")?.0;
                        self.expect(Tok::Comma, "`,`")?;
                        let else_label = self.ident("branch target label")?.0;
                        InstrKind::CondBr {
                            cond,
                            then_label,
                            else_label,
                        }
                    }
                    other => {
                        return Err(ParseError {
                            line: t.line,
                            col: t.col,
                            message: format!("unknown instruction `{other}`"),
                        })
                    }
                };
                Ok(Some(Instr::new(None, kind)))
            }
            Tok::Percent => {
                let dest = self.value_name()?;
                self.expect(Tok::Eq, "`=`")?;
                Ok(Some(Instr::new(Some(dest), self.rhs()?)))
            }
            _ => Err(ParseError {
                line: t.line,
                col: t.col,
                message: "expected instruction, block label, or `}`".into(),
            }),
        }
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        let (label, lt) = self.ident("block label")?;
        self.expect(Tok::Colon, "`:`")?;
        let mut instrs = Vec::new();
        loop {
            match self.instr()? {
                Some(instr) => {
                    let done = instr.kind.is_terminator();
                    instrs.push(instr);
                    if done {
                        break;
                    }
                }
                None => {
                    return Err(ParseError {
                        line: lt.line,
                        col: lt.col,
                        message: format!("unterminated block `{label}`"),
                    })
                }
            }
        }
        Ok(Block { label, instrs })
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let (name, _) = self.ident("function name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if !matches!(self.peek().map(|t| &t.tok), Some(Tok::RParen)) {
            loop {
                let pname = self.value_name()?;
                self.expect(Tok::Colon, "`:`")?;
                let ty = self.ty()?;
                params.push((pname, ty));
                let t = self.next("`,` or `)`")?;
                match t.tok {
                    Tok::Comma => continue,
                    Tok::RParen => break,
                    _ => {
                        return Err(ParseError {
                            line: t.line,
                            col: t.col,
                            message: "expected `,` or `)`".into(),
                        })
                    }
                }
            }
        } else {
            self.pos += 1;
        }
        self.expect(Tok::LBrace, "`{`")?;
        let mut blocks = Vec::new();
        while !matches!(self.peek().map(|t| &t.tok), Some(Tok::RBrace)) {
            blocks.push(self.block()?);
        }
        self.pos += 1; // consume `}`
        if blocks.is_empty() {
            return Err(self.err_here(format!("function `{name}` has no blocks")));
        }
        Ok(Function {
            name,
            params,
            blocks,
        })
    }

    fn module(&mut self) -> Result<Module, ParseError> {
        let mut module = Module {
            name: "module".to_string(),
            externs: Vec::new(),
            functions: Vec::new(),
        };
        while let Some(t) = self.peek().cloned() {
            match &t.tok {
                Tok::Ident(kw) if kw == "extern" => {
                    self.pos += 1;
                    module.externs.push(self.ident("extern name")?.0);
                }
                Tok::Ident(kw) if kw == "fn" => {
                    self.pos += 1;
                    let f = self.function()?;
                    if module.function(&f.name).is_some() {
                        return Err(ParseError {
                            line: t.line,
                            col: t.col,
                            message: format!("duplicate function `{}`", f.name),
                        });
                    }
                    module.functions.push(f);
                }
                _ => {
                    return Err(ParseError {
                        line: t.line,
                        col: t.col,
                        message: "expected `fn` or `extern`".into(),
                    })
                }
            }
        }
        Ok(module)
    }
}

/// Parses IR source text into a module. Syntax-level duplicate labels and
/// value names are rejected here; semantic checks live in [`validate`].
///
/// [`validate`]: super::validate
pub fn parse_module(text: &str) -> Result<Module, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let module = parser.module()?;
    // Duplicate label / duplicate value-name detection is part of the parse
    // contract so that malformed text never produces a Module.
    for f in &module.functions {
        let mut labels = std::collections::HashSet::new();
        let mut values: std::collections::HashSet<&str> =
            f.params.iter().map(|(n, _)| n.as_str()).collect();
        if values.len() != f.params.len() {
            return Err(ParseError {
                line: 1,
                col: 1,
                message: format!("duplicate parameter name in function `{}`", f.name),
            });
        }
        for b in &f.blocks {
            if !labels.insert(b.label.as_str()) {
                return Err(ParseError {
                    line: 1,
                    col: 1,
                    message: format!("duplicate label `{}` in function `{}`", b.label, f.name),
                });
            }
            for i in &b.instrs {
                if let Some(dest) = &i.dest {
                    if !values.insert(dest.as_str()) {
                        return Err(ParseError {
                            line: 1,
                            col: 1,
                            message: format!(
                                "duplicate value name `%{dest}` in function `{}`",
                                f.name
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(module)
}
