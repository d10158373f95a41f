//! Dispatcher actions and their packed encoding.
//!
//! A hotpatch body returns a single scalar the dispatcher decodes:
//!
//! ```text
//! bits 0..2   op (0 = PASS, 1 = DROP, 2 = REDIRECT)
//! bits 2..18  redirect target (block index in the patched function)
//! bits 32..64 return code as i32
//! ```
//!
//! PASS is all zeros, so a fall-through `ret 0` means "do nothing".

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Pass,
    Drop,
    Redirect,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Pass => "PASS",
            Op::Drop => "DROP",
            Op::Redirect => "REDIRECT",
        })
    }
}

/// A decoded dispatcher action. `target` is present iff `op` is REDIRECT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchAction {
    pub op: Op,
    pub ret_code: i64,
    pub target: Option<usize>,
}

impl PatchAction {
    pub const PASS: PatchAction = PatchAction {
        op: Op::Pass,
        ret_code: 0,
        target: None,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionError {
    RetCodeRange(i64),
    TargetRange(usize),
    BadOpBits(i64),
}

impl fmt::Display for ActionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionError::RetCodeRange(v) => write!(f, "return code {v} does not fit in i32"),
            ActionError::TargetRange(t) => {
                write!(f, "redirect target index {t} does not fit in 16 bits")
            }
            ActionError::BadOpBits(v) => write!(f, "hotpatch returned invalid action word {v}"),
        }
    }
}

impl std::error::Error for ActionError {}

pub fn encode_action(op: Op, ret_code: i64, target: usize) -> Result<i64, ActionError> {
    if i32::try_from(ret_code).is_err() {
        return Err(ActionError::RetCodeRange(ret_code));
    }
    if target > u16::MAX as usize {
        return Err(ActionError::TargetRange(target));
    }
    let op_bits = match op {
        Op::Pass => 0u64,
        Op::Drop => 1,
        Op::Redirect => 2,
    };
    let word = op_bits | ((target as u64) << 2) | (((ret_code as i32 as u32) as u64) << 32);
    Ok(word as i64)
}

pub fn decode_action(word: i64) -> Result<PatchAction, ActionError> {
    let w = word as u64;
    let op = match w & 0b11 {
        0 => Op::Pass,
        1 => Op::Drop,
        2 => Op::Redirect,
        _ => return Err(ActionError::BadOpBits(word)),
    };
    let target = ((w >> 2) & 0xffff) as usize;
    let ret_code = ((w >> 32) as u32) as i32 as i64;
    Ok(PatchAction {
        op,
        ret_code,
        target: if op == Op::Redirect {
            Some(target)
        } else {
            None
        },
    })
}
