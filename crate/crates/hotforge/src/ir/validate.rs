//! Structural validation. Violations are data, not errors: callers decide
//! whether to fail. `validate_ok` is the common all-or-nothing wrapper.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{analyze_cfg, Function, InstrKind, Module, Operand, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub function: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(name) => write!(f, "in function `{name}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn check_function(f: &Function, m: &Module, out: &mut Vec<Violation>) {
    let mut push = |message: String| {
        out.push(Violation {
            function: Some(f.name.clone()),
            message,
        })
    };

    // Definition sites: parameters plus instruction destinations.
    let mut defs: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut param_names: HashSet<&str> = HashSet::new();
    for (p, _) in &f.params {
        param_names.insert(p);
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, i) in b.instrs.iter().enumerate() {
            if let Some(d) = &i.dest {
                if param_names.contains(d.as_str()) || defs.insert(d, (bi, ii)).is_some() {
                    push(format!("value `%{d}` assigned more than once"));
                }
            }
        }
    }

    // Block structure: non-empty, exactly one terminator, at the end.
    for b in &f.blocks {
        if b.instrs.is_empty() {
            push(format!("block `{}` is empty", b.label));
            continue;
        }
        if !b.terminator().kind.is_terminator() {
            push(format!("block `{}` does not end in a terminator", b.label));
        }
        for i in &b.instrs[..b.instrs.len() - 1] {
            if i.kind.is_terminator() {
                push(format!(
                    "block `{}` has a terminator before its end",
                    b.label
                ));
            }
        }
    }

    // Per-instruction checks that need no CFG.
    let mut tramp_sites: HashSet<u32> = HashSet::new();
    for b in &f.blocks {
        for i in &b.instrs {
            match &i.kind {
                InstrKind::Trampoline { site } => {
                    if i.dest.is_some() {
                        push("trampoline must not produce a value".into());
                    }
                    if !tramp_sites.insert(*site) {
                        push(format!("duplicate trampoline site id {site}"));
                    }
                }
                InstrKind::Store { ptr, .. } => {
                    if let Some(v) = ptr.value_name() {
                        if f.value_ty(v).is_some() && f.value_ty(v) != Some(Ty::Ptr) {
                            push(format!("store through non-ptr value `%{v}`"));
                        }
                    }
                }
                InstrKind::Load { ptr, .. } => {
                    if let Some(v) = ptr.value_name() {
                        if f.value_ty(v).is_some() && f.value_ty(v) != Some(Ty::Ptr) {
                            push(format!("load through non-ptr value `%{v}`"));
                        }
                    }
                }
                InstrKind::GetField { base, .. } => {
                    if let Some(v) = base.value_name() {
                        if f.value_ty(v).is_some() && f.value_ty(v) != Some(Ty::Ptr) {
                            push(format!("getfield of non-ptr value `%{v}`"));
                        }
                    }
                    if base.value_name().is_none() {
                        push("getfield base must be a value, not a literal".into());
                    }
                }
                InstrKind::CondBr { cond, .. } => match cond {
                    Operand::Value(v) => {
                        if f.value_ty(v).is_some() && f.value_ty(v) != Some(Ty::I1) {
                            push(format!("cond_br condition `%{v}` is not i1"));
                        }
                    }
                    Operand::Literal(_) => push("cond_br condition must be an i1 value".into()),
                },
                InstrKind::Call { callee, .. } => {
                    if m.function(callee).is_none() && !m.is_extern(callee) {
                        push(format!("call to unknown function `{callee}`"));
                    }
                }
                InstrKind::Bin { lhs, rhs, .. } => {
                    for op in [lhs, rhs] {
                        if let Some(v) = op.value_name() {
                            if f.value_ty(v) == Some(Ty::Ptr) {
                                push(format!("arithmetic on ptr value `%{v}`"));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    // Return arity must be uniform across the function.
    let mut ret_kinds: HashSet<bool> = HashSet::new();
    for b in &f.blocks {
        if let InstrKind::Ret { value } = &b.terminator().kind {
            ret_kinds.insert(value.is_some());
        }
    }
    if ret_kinds.len() > 1 {
        push("mixed value and void returns".into());
    }

    // CFG checks: reachability, dominance of uses.
    let cfg = match analyze_cfg(f) {
        Ok(cfg) => cfg,
        Err(e) => {
            push(e.to_string());
            return;
        }
    };
    for bi in 0..f.blocks.len() {
        if bi != 0 && cfg.idom[bi].is_none() {
            push(format!("block `{}` is unreachable", f.blocks[bi].label));
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, i) in b.instrs.iter().enumerate() {
            for op in i.kind.operands() {
                let Some(name) = op.value_name() else {
                    continue;
                };
                if param_names.contains(name) {
                    continue;
                }
                match defs.get(name) {
                    None => push(format!("use of undefined value `%{name}`")),
                    Some(&(dbi, dii)) => {
                        let ok = if dbi == bi {
                            dii < ii
                        } else {
                            cfg.dominates(dbi, bi)
                        };
                        if !ok {
                            push(format!(
                                "use of `%{name}` in block `{}` is not dominated by its definition",
                                b.label
                            ));
                        }
                    }
                }
            }
        }
    }
}

/// Checks every module and function invariant; returns all violations found.
pub fn validate(m: &Module) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names: HashSet<&str> = HashSet::new();
    for f in &m.functions {
        if !names.insert(&f.name) {
            out.push(Violation {
                function: None,
                message: format!("duplicate function `{}`", f.name),
            });
        }
    }
    for f in &m.functions {
        check_function(f, m, &mut out);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ValidateError(pub Vec<Violation>);

impl fmt::Display for ValidateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid module: ")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidateError {}

pub fn validate_ok(m: &Module) -> Result<(), ValidateError> {
    let v = validate(m);
    if v.is_empty() {
        Ok(())
    } else {
        Err(ValidateError(v))
    }
}
