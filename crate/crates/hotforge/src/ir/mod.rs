//! The textual SSA intermediate representation.
//!
//! A module is a list of functions plus `extern` declarations. Functions are
//! lists of labeled basic blocks; every block ends in exactly one terminator
//! (`ret`, `br`, `cond_br`). Values are immutable single-assignment names;
//! mutable state lives in `alloca` cells accessed through `load`/`store`.
//! `getfield` is an opaque indexed read of a pointed-to object, and
//! `trampoline N` is the dispatcher hook inserted by instrumentation.

mod cfg;
mod parse;
mod print;
mod validate;

pub use cfg::{
    analyze_cfg, condition_closure, is_complex, BranchRegion, CfgError, CfgInfo, LoopInfo, Region,
};
pub use parse::{parse_module, ParseError};
pub use print::{print_function, print_instr, print_module};
pub use validate::{validate, validate_ok, Violation};

use std::fmt;

/// Scalar value types. `ptr` values are opaque cell handles at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    I32,
    I64,
    I1,
    Ptr,
}

impl Ty {
    pub fn as_str(self) -> &'static str {
        match self {
            Ty::I32 => "i32",
            Ty::I64 => "i64",
            Ty::I1 => "i1",
            Ty::Ptr => "ptr",
        }
    }

    pub fn parse(s: &str) -> Option<Ty> {
        match s {
            "i32" => Some(Ty::I32),
            "i64" => Some(Ty::I64),
            "i1" => Some(Ty::I1),
            "ptr" => Some(Ty::Ptr),
            _ => None,
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Shl,
    Shr,
    Or,
    And,
    Xor,
}

impl BinOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Xor => "xor",
        }
    }

    pub fn parse(s: &str) -> Option<BinOp> {
        match s {
            "add" => Some(BinOp::Add),
            "sub" => Some(BinOp::Sub),
            "mul" => Some(BinOp::Mul),
            "shl" => Some(BinOp::Shl),
            "shr" => Some(BinOp::Shr),
            "or" => Some(BinOp::Or),
            "and" => Some(BinOp::And),
            "xor" => Some(BinOp::Xor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Ult,
    Ule,
}

impl CmpPred {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Gt => "gt",
            CmpPred::Ge => "ge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
        }
    }

    pub fn parse(s: &str) -> Option<CmpPred> {
        match s {
            "eq" => Some(CmpPred::Eq),
            "ne" => Some(CmpPred::Ne),
            "lt" => Some(CmpPred::Lt),
            "le" => Some(CmpPred::Le),
            "gt" => Some(CmpPred::Gt),
            "ge" => Some(CmpPred::Ge),
            "ult" => Some(CmpPred::Ult),
            "ule" => Some(CmpPred::Ule),
            _ => None,
        }
    }
}

/// An instruction operand: an SSA value reference or an integer literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(String),
    Literal(i64),
}

impl Operand {
    pub fn value_name(&self) -> Option<&str> {
        match self {
            Operand::Value(name) => Some(name),
            Operand::Literal(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(name) => write!(f, "%{name}"),
            Operand::Literal(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrKind {
    Const {
        ty: Ty,
        value: i64,
    },
    Bin {
        op: BinOp,
        ty: Ty,
        lhs: Operand,
        rhs: Operand,
    },
    Cmp {
        pred: CmpPred,
        ty: Ty,
        lhs: Operand,
        rhs: Operand,
    },
    Alloca {
        ty: Ty,
    },
    Load {
        ty: Ty,
        ptr: Operand,
    },
    Store {
        ptr: Operand,
        value: Operand,
    },
    GetField {
        base: Operand,
        index: u32,
    },
    Call {
        callee: String,
        args: Vec<Operand>,
    },
    Trampoline {
        site: u32,
    },
    Br {
        target: String,
    },
    CondBr {
        cond: Operand,
        then_label: String,
        else_label: String,
    },
    Ret {
        value: Option<Operand>,
    },
}

impl InstrKind {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            InstrKind::Br { .. } | InstrKind::CondBr { .. } | InstrKind::Ret { .. }
        )
    }

    /// RHS kinds with no side effects: safe to inline during substitution.
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            InstrKind::Const { .. }
                | InstrKind::Bin { .. }
                | InstrKind::Cmp { .. }
                | InstrKind::GetField { .. }
        )
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            InstrKind::Const { .. } | InstrKind::Alloca { .. } | InstrKind::Trampoline { .. } => {
                vec![]
            }
            InstrKind::Bin { lhs, rhs, .. } | InstrKind::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            InstrKind::Load { ptr, .. } => vec![ptr],
            InstrKind::Store { ptr, value } => vec![ptr, value],
            InstrKind::GetField { base, .. } => vec![base],
            InstrKind::Call { args, .. } => args.iter().collect(),
            InstrKind::Br { .. } => vec![],
            InstrKind::CondBr { cond, .. } => vec![cond],
            InstrKind::Ret { value } => value.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instr {
    pub dest: Option<String>,
    pub kind: InstrKind,
}

impl Instr {
    pub fn new(dest: Option<String>, kind: InstrKind) -> Self {
        Instr { dest, kind }
    }
}

/// A labeled basic block. The last instruction is always the terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub instrs: Vec<Instr>,
}

impl Block {
    pub fn terminator(&self) -> &Instr {
        self.instrs.last().expect("block must be terminated")
    }

    /// Labels this block transfers control to.
    pub fn successor_labels(&self) -> Vec<&str> {
        match &self.terminator().kind {
            InstrKind::Br { target } => vec![target.as_str()],
            InstrKind::CondBr {
                then_label,
                else_label,
                ..
            } => {
                vec![then_label.as_str(), else_label.as_str()]
            }
            _ => vec![],
        }
    }
}

/// A function. `blocks[0]` is the entry block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<(String, Ty)>,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn entry_label(&self) -> &str {
        &self.blocks[0].label
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn param_ty(&self, name: &str) -> Option<Ty> {
        self.params
            .iter()
            .find(|(p, _)| p == name)
            .map(|&(_, ty)| ty)
    }

    /// The defining instruction of an SSA value, as (block index, instr index).
    pub fn def_site(&self, name: &str) -> Option<(usize, usize)> {
        for (bi, block) in self.blocks.iter().enumerate() {
            for (ii, instr) in block.instrs.iter().enumerate() {
                if instr.dest.as_deref() == Some(name) {
                    return Some((bi, ii));
                }
            }
        }
        None
    }

    /// Static type of a value name (parameter or instruction result).
    pub fn value_ty(&self, name: &str) -> Option<Ty> {
        if let Some(ty) = self.param_ty(name) {
            return Some(ty);
        }
        let (bi, ii) = self.def_site(name)?;
        Some(match &self.blocks[bi].instrs[ii].kind {
            InstrKind::Const { ty, .. } => *ty,
            InstrKind::Bin { ty, .. } => *ty,
            InstrKind::Cmp { .. } => Ty::I1,
            InstrKind::Alloca { .. } => Ty::Ptr,
            InstrKind::Load { ty, .. } => *ty,
            // Field reads and call results are untyped in the grammar: raw
            // 64-bit scalars that may carry pointers.
            InstrKind::GetField { .. } | InstrKind::Call { .. } => return None,
            _ => return None,
        })
    }

    pub fn count_instrs(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len()).sum()
    }

    pub fn has_trampolines(&self) -> bool {
        self.blocks.iter().any(|b| {
            b.instrs
                .iter()
                .any(|i| matches!(i.kind, InstrKind::Trampoline { .. }))
        })
    }

    /// Number of consecutive `alloca` instructions at the top of the entry
    /// block; the entrance trampoline goes right after them.
    pub fn leading_alloca_count(&self) -> usize {
        self.blocks[0]
            .instrs
            .iter()
            .take_while(|i| matches!(i.kind, InstrKind::Alloca { .. }))
            .count()
    }
}

/// A compilation unit: ordered functions plus extern declarations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Module {
    pub name: String,
    pub externs: Vec<String>,
    pub functions: Vec<Function>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn is_extern(&self, name: &str) -> bool {
        self.externs.iter().any(|e| e == name)
    }

    pub fn has_trampolines(&self) -> bool {
        self.functions.iter().any(Function::has_trampolines)
    }
}
