//! Canonical printer. Output is deterministic: one instruction per line,
//! two-space indent, single spaces between tokens. `parse(print(m)) == m`
//! and printing a parsed canonical file reproduces it byte for byte.

use super::{Function, Instr, InstrKind, Module, Operand};

fn operands(list: &[&Operand]) -> String {
    list.iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_instr(instr: &Instr) -> String {
    let rhs = match &instr.kind {
        InstrKind::Const { ty, value } => format!("const {ty} {value}"),
        InstrKind::Bin { op, ty, lhs, rhs } => {
            format!("{} {ty} {}", op.as_str(), operands(&[lhs, rhs]))
        }
        InstrKind::Cmp { pred, ty, lhs, rhs } => {
            format!("cmp {} {ty} {}", pred.as_str(), operands(&[lhs, rhs]))
        }
        InstrKind::Alloca { ty } => format!("alloca {ty}"),
        InstrKind::Load { ty, ptr } => format!("load {ty} {ptr}"),
        InstrKind::Store { ptr, value } => format!("store {ptr}, {value}"),
        InstrKind::GetField { base, index } => format!("getfield {base}, {index}"),
        InstrKind::Call { callee, args } => {
            format!(
                "call {callee}({})",
                operands(&args.iter().collect::<Vec<_>>())
            )
        }
        InstrKind::Trampoline { site } => format!("trampoline {site}"),
        InstrKind::Br { target } => format!("br {target}"),
        InstrKind::CondBr {
            cond,
            then_label,
            else_label,
        } => {
            format!("cond_br {cond}, {then_label}, {else_label}")
        }
        InstrKind::Ret { value } => match value {
            Some(v) => format!("ret {v}"),
            None => "ret".to_string(),
        },
    };
    match &instr.dest {
        Some(dest) => format!("%{dest} = {rhs}"),
        None => rhs,
    }
}

pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    let params = f
        .params
        .iter()
        .map(|(name, ty)| format!("%{name}: {ty}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.push_str(&format!("fn {}({}) {{\n", f.name, params));
    for block in &f.blocks {
        out.push_str(&block.label);
        out.push_str(":\n");
        for instr in &block.instrs {
            out.push_str("  ");
            out.push_str(&print_instr(instr));
            out.push('\n');
        }
    }
    out.push_str("}\n");
    out
}

pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    for e in &m.externs {
        out.push_str("extern ");
        out.push_str(e);
        out.push('\n');
    }
    for (i, f) in m.functions.iter().enumerate() {
        if i > 0 || !m.externs.is_empty() {
            out.push('\n');
        }
        out.push_str(&print_function(f));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let text = "fn main() { entry: ret 0 }";
        let m = parse_module(text).unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].blocks.len(), 1);
        let printed = print_module(&m);
        let reparsed = parse_module(&printed).unwrap();
        assert_eq!(m, reparsed);
        // Printing is a fixpoint on canonical text.
        assert_eq!(printed, print_module(&reparsed));
    }

    #[test]
    fn print_is_deterministic() {
        let text = "extern helper\nfn f(%a: i32, %p: ptr) {\nentry:\n  %x = add i32 %a, 1\n  %c = cmp lt i32 %x, 10\n  cond_br %c, yes, no\nyes:\n  store %p, %x\n  br no\nno:\n  %r = call helper(%x, 3)\n  ret %r\n}\n";
        let m = parse_module(text).unwrap();
        assert_eq!(print_module(&m), print_module(&m));
        assert_eq!(parse_module(&print_module(&m)).unwrap(), m);
    }

    #[test]
    fn ret_value_must_share_line() {
        // `ret` followed by a label on the next line is a void return.
        let text = "fn f() {\nentry:\n  ret\n}\n";
        let m = parse_module(text).unwrap();
        assert_eq!(
            m.functions[0].blocks[0].terminator().kind,
            super::super::InstrKind::Ret { value: None }
        );
    }

    #[test]
    fn duplicate_function_rejected() {
        let text = "fn f() { entry: ret }\nfn f() { entry: ret }";
        let err = parse_module(text).unwrap_err();
        assert!(err.message.contains("duplicate function"), "{err}");
    }

    #[test]
    fn duplicate_value_rejected() {
        let text = "fn f() {\nentry:\n  %x = const i32 1\n  %x = const i32 2\n  ret %x\n}";
        let err = parse_module(text).unwrap_err();
        assert!(err.message.contains("duplicate value name"), "{err}");
    }

    #[test]
    fn unterminated_block_rejected() {
        let text = "fn f() {\nentry:\n  %x = const i32 1\n}";
        let err = parse_module(text).unwrap_err();
        assert!(err.message.contains("unterminated block"), "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_module("fn f() {\nentry:\n  %x = bogus i32 1\n  ret\n}").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("bogus"));
    }
}
