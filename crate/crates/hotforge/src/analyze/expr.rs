//! Patch guard expressions: the working form of a patch condition during
//! backward substitution, with a canonical text rendering.
//!
//! Named constants keep their symbol for display and structural comparison
//! but fold to their literal value when a hotpatch body is emitted.

use std::fmt;

use crate::ir::{BinOp, CmpPred, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    /// A value left free: a parameter or a local live at the trampoline.
    Var(String),
    Const {
        ty: Ty,
        value: i64,
        symbol: Option<String>,
    },
    Bin {
        op: BinOp,
        ty: Ty,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Cmp {
        pred: CmpPred,
        ty: Ty,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    /// Logical negation of an i1; folded into the predicate when possible.
    Not(Box<Expr>),
    /// Memory read, stable between the trampoline and the patch location.
    Load { ty: Ty, ptr: Box<Expr> },
    /// Opaque indexed field read.
    Field { base: Box<Expr>, index: u32 },
    /// Value merge absorbed from a simple branch: `cond ? then : else`.
    Select {
        ty: Ty,
        cond: Box<Expr>,
        then_val: Box<Expr>,
        else_val: Box<Expr>,
    },
}

impl Expr {
    pub fn lit(ty: Ty, value: i64) -> Expr {
        Expr::Const {
            ty,
            value,
            symbol: None,
        }
    }

    /// Negation with the obvious simplifications: a compare flips its
    /// predicate (unsigned ones swap operands), a double negation cancels.
    pub fn negated(self) -> Expr {
        match self {
            Expr::Not(inner) => *inner,
            Expr::Cmp { pred, ty, lhs, rhs } => match pred {
                CmpPred::Eq => Expr::Cmp {
                    pred: CmpPred::Ne,
                    ty,
                    lhs,
                    rhs,
                },
                CmpPred::Ne => Expr::Cmp {
                    pred: CmpPred::Eq,
                    ty,
                    lhs,
                    rhs,
                },
                CmpPred::Lt => Expr::Cmp {
                    pred: CmpPred::Ge,
                    ty,
                    lhs,
                    rhs,
                },
                CmpPred::Le => Expr::Cmp {
                    pred: CmpPred::Gt,
                    ty,
                    lhs,
                    rhs,
                },
                CmpPred::Gt => Expr::Cmp {
                    pred: CmpPred::Le,
                    ty,
                    lhs,
                    rhs,
                },
                CmpPred::Ge => Expr::Cmp {
                    pred: CmpPred::Lt,
                    ty,
                    lhs,
                    rhs,
                },
                // !(a u< b) == b u<= a, !(a u<= b) == b u< a
                CmpPred::Ult => Expr::Cmp {
                    pred: CmpPred::Ule,
                    ty,
                    lhs: rhs,
                    rhs: lhs,
                },
                CmpPred::Ule => Expr::Cmp {
                    pred: CmpPred::Ult,
                    ty,
                    lhs: rhs,
                    rhs: lhs,
                },
            },
            other => Expr::Not(Box::new(other)),
        }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin {
            op: BinOp::And,
            ty: Ty::I1,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Whether `name` occurs as a free variable.
    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Var(v) => v == name,
            Expr::Const { .. } => false,
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.mentions(name) || rhs.mentions(name)
            }
            Expr::Not(e) => e.mentions(name),
            Expr::Load { ptr, .. } => ptr.mentions(name),
            Expr::Field { base, .. } => base.mentions(name),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => cond.mentions(name) || then_val.mentions(name) || else_val.mentions(name),
        }
    }

    /// Replaces every free occurrence of `name` with `value`.
    pub fn substitute(&mut self, name: &str, value: &Expr) {
        match self {
            Expr::Var(v) if v == name => *self = value.clone(),
            Expr::Var(_) | Expr::Const { .. } => {}
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.substitute(name, value);
                rhs.substitute(name, value);
            }
            Expr::Not(e) => e.substitute(name, value),
            Expr::Load { ptr, .. } => ptr.substitute(name, value),
            Expr::Field { base, .. } => base.substitute(name, value),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => {
                cond.substitute(name, value);
                then_val.substitute(name, value);
                else_val.substitute(name, value);
            }
        }
    }

    /// Free variables in first-occurrence order (depth-first, left to right).
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(v) => {
                if !out.iter().any(|x| x == v) {
                    out.push(v.clone());
                }
            }
            Expr::Const { .. } => {}
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Not(e) => e.collect_vars(out),
            Expr::Load { ptr, .. } => ptr.collect_vars(out),
            Expr::Field { base, .. } => base.collect_vars(out),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => {
                cond.collect_vars(out);
                then_val.collect_vars(out);
                else_val.collect_vars(out);
            }
        }
    }

    /// Load subexpressions currently present, for reaching-store resolution.
    pub fn has_load(&self) -> bool {
        match self {
            Expr::Var(_) | Expr::Const { .. } => false,
            Expr::Load { .. } => true,
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.has_load() || rhs.has_load()
            }
            Expr::Not(e) => e.has_load(),
            Expr::Field { base, .. } => base.has_load(),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => cond.has_load() || then_val.has_load() || else_val.has_load(),
        }
    }

    /// Rewrites every load-through-`name` leaf via `f`, which receives the
    /// load type and returns the replacement expression.
    pub fn rewrite_loads_of(&mut self, name: &str, f: &mut dyn FnMut(Ty) -> Expr) {
        match self {
            Expr::Load { ty, ptr } => {
                if matches!(ptr.as_ref(), Expr::Var(v) if v == name) {
                    *self = f(*ty);
                } else {
                    ptr.rewrite_loads_of(name, f);
                }
            }
            Expr::Var(_) | Expr::Const { .. } => {}
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.rewrite_loads_of(name, f);
                rhs.rewrite_loads_of(name, f);
            }
            Expr::Not(e) => e.rewrite_loads_of(name, f),
            Expr::Field { base, .. } => base.rewrite_loads_of(name, f),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => {
                cond.rewrite_loads_of(name, f);
                then_val.rewrite_loads_of(name, f);
                else_val.rewrite_loads_of(name, f);
            }
        }
    }

    /// Pointer names of all load leaves whose pointer is a plain variable.
    pub fn load_pointer_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_load_ptrs(&mut out);
        out
    }

    fn collect_load_ptrs(&self, out: &mut Vec<String>) {
        match self {
            Expr::Load { ptr, .. } => {
                if let Expr::Var(v) = ptr.as_ref() {
                    if !out.iter().any(|x| x == v) {
                        out.push(v.clone());
                    }
                } else {
                    ptr.collect_load_ptrs(out);
                }
            }
            Expr::Var(_) | Expr::Const { .. } => {}
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.collect_load_ptrs(out);
                rhs.collect_load_ptrs(out);
            }
            Expr::Not(e) => e.collect_load_ptrs(out),
            Expr::Field { base, .. } => base.collect_load_ptrs(out),
            Expr::Select {
                cond,
                then_val,
                else_val,
                ..
            } => {
                cond.collect_load_ptrs(out);
                then_val.collect_load_ptrs(out);
                else_val.collect_load_ptrs(out);
            }
        }
    }

    /// Structural equality that treats a named constant and a bare literal
    /// of the same value as equal, mirroring emit-time constant folding.
    pub fn eq_modulo_symbols(&self, other: &Expr) -> bool {
        match (self, other) {
            (Expr::Var(a), Expr::Var(b)) => a == b,
            (
                Expr::Const {
                    value: a, ty: ta, ..
                },
                Expr::Const {
                    value: b, ty: tb, ..
                },
            ) => a == b && ta == tb,
            (
                Expr::Bin {
                    op: o1,
                    ty: t1,
                    lhs: l1,
                    rhs: r1,
                },
                Expr::Bin {
                    op: o2,
                    ty: t2,
                    lhs: l2,
                    rhs: r2,
                },
            ) => o1 == o2 && t1 == t2 && l1.eq_modulo_symbols(l2) && r1.eq_modulo_symbols(r2),
            (
                Expr::Cmp {
                    pred: p1,
                    ty: t1,
                    lhs: l1,
                    rhs: r1,
                },
                Expr::Cmp {
                    pred: p2,
                    ty: t2,
                    lhs: l2,
                    rhs: r2,
                },
            ) => p1 == p2 && t1 == t2 && l1.eq_modulo_symbols(l2) && r1.eq_modulo_symbols(r2),
            (Expr::Not(a), Expr::Not(b)) => a.eq_modulo_symbols(b),
            (Expr::Load { ty: t1, ptr: p1 }, Expr::Load { ty: t2, ptr: p2 }) => {
                t1 == t2 && p1.eq_modulo_symbols(p2)
            }
            (
                Expr::Field {
                    base: b1,
                    index: i1,
                },
                Expr::Field {
                    base: b2,
                    index: i2,
                },
            ) => i1 == i2 && b1.eq_modulo_symbols(b2),
            (
                Expr::Select {
                    cond: c1,
                    then_val: t1,
                    else_val: e1,
                    ..
                },
                Expr::Select {
                    cond: c2,
                    then_val: t2,
                    else_val: e2,
                    ..
                },
            ) => c1.eq_modulo_symbols(c2) && t1.eq_modulo_symbols(t2) && e1.eq_modulo_symbols(e2),
            _ => false,
        }
    }
}

fn bin_token(op: BinOp) -> (&'static str, bool) {
    // (token, spaced)
    match op {
        BinOp::Add => ("+", true),
        BinOp::Sub => ("-", true),
        BinOp::Mul => ("*", true),
        BinOp::Shl => ("<<", false),
        BinOp::Shr => (">>", false),
        BinOp::Or => ("|", false),
        BinOp::And => ("&", false),
        BinOp::Xor => ("^", false),
    }
}

fn cmp_token(pred: CmpPred) -> &'static str {
    match pred {
        CmpPred::Eq => "==",
        CmpPred::Ne => "!=",
        CmpPred::Lt => "<",
        CmpPred::Le => "<=",
        CmpPred::Gt => ">",
        CmpPred::Ge => ">=",
        CmpPred::Ult => "u<",
        CmpPred::Ule => "u<=",
    }
}

/// Associative-commutative operators whose same-op chains print unwrapped.
fn flattens(op: BinOp) -> bool {
    matches!(
        op,
        BinOp::Or | BinOp::And | BinOp::Xor | BinOp::Add | BinOp::Mul
    )
}

fn render(e: &Expr, out: &mut String) {
    let wrap = |e: &Expr| -> bool { matches!(e, Expr::Bin { .. } | Expr::Cmp { .. }) };
    let child = |e: &Expr, out: &mut String, parent: Option<BinOp>| {
        let same_chain = match (parent, e) {
            (Some(p), Expr::Bin { op, .. }) => *op == p && flattens(p),
            _ => false,
        };
        if wrap(e) && !same_chain {
            out.push('(');
            render(e, out);
            out.push(')');
        } else {
            render(e, out);
        }
    };
    match e {
        Expr::Var(name) => out.push_str(name),
        Expr::Const { value, symbol, .. } => match symbol {
            Some(s) => out.push_str(s),
            None => out.push_str(&value.to_string()),
        },
        Expr::Bin { op, lhs, rhs, .. } => {
            let (tok, spaced) = bin_token(*op);
            child(lhs, out, Some(*op));
            if spaced {
                out.push(' ');
                out.push_str(tok);
                out.push(' ');
            } else {
                out.push_str(tok);
            }
            child(rhs, out, Some(*op));
        }
        Expr::Cmp { pred, lhs, rhs, .. } => {
            child(lhs, out, None);
            out.push(' ');
            out.push_str(cmp_token(*pred));
            out.push(' ');
            child(rhs, out, None);
        }
        Expr::Not(inner) => {
            out.push('!');
            child(inner, out, None);
        }
        Expr::Load { ptr, .. } => {
            out.push('*');
            child(ptr, out, None);
        }
        Expr::Field { base, index } => {
            child(base, out, None);
            out.push('[');
            out.push_str(&index.to_string());
            out.push(']');
        }
        Expr::Select {
            cond,
            then_val,
            else_val,
            ..
        } => {
            out.push('(');
            child(cond, out, None);
            out.push_str(" ? ");
            child(then_val, out, None);
            out.push_str(" : ");
            child(else_val, out, None);
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        render(self, &mut s);
        f.write_str(&s)
    }
}
