//! Big-step interpreter with an explicit call stack, plus the trampoline
//! dispatcher. Hotpatch bodies run against a copy of program memory, so a
//! patch can read program state but never mutate it.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::analyze::Hotpatch;
use crate::ir::{BinOp, CmpPred, Function, Instr, InstrKind, Module, Operand, Ty};
use crate::runtime::action::{decode_action, Op, PatchAction};
use crate::runtime::registry::PatchRegistry;

const MAX_CALL_DEPTH: usize = 256;
const HOTPATCH_STEP_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Limits {
    pub max_steps: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_steps: 1_000_000,
        }
    }
}

/// An argument for a function invocation. Pointer parameters receive either
/// a flat object cell (`[a b c]`) or a chain of two-slot `[value, next]`
/// nodes, which is how byte streams are modeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgValue {
    Scalar(i64),
    Object(Vec<i64>),
    Chain(Vec<i64>),
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[i64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        match self {
            ArgValue::Scalar(v) => write!(f, "{v}"),
            ArgValue::Object(v) => write!(f, "[{}]", join(v)),
            ArgValue::Chain(v) => write!(f, "chain[{}]", join(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    UnknownFunction(String),
    ArgMismatch { function: String, detail: String },
    StepLimit { limit: u64 },
    CallDepth,
    UnboundValue(String),
    InvalidPointer(i64),
    UninitializedLoad { cell: i64, slot: usize },
    FieldOutOfBounds { cell: i64, index: u32 },
    ExternCall(String),
    VoidValue { callee: String },
    FrameMarshal { variable: String, patch: String },
    HotpatchViolation { patch: String, detail: String },
    RedirectTarget { function: String, index: usize },
    BadAction { patch: String, detail: String },
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeError::UnknownFunction(name) => write!(f, "unknown function `{name}`"),
            RuntimeError::ArgMismatch { function, detail } => {
                write!(f, "bad arguments for `{function}`: {detail}")
            }
            RuntimeError::StepLimit { limit } => {
                write!(f, "step limit {limit} exceeded, possible nontermination")
            }
            RuntimeError::CallDepth => write!(f, "call depth exceeded"),
            RuntimeError::UnboundValue(name) => write!(f, "use of unbound value `%{name}`"),
            RuntimeError::InvalidPointer(v) => write!(f, "invalid pointer {v}"),
            RuntimeError::UninitializedLoad { cell, slot } => {
                write!(f, "load of uninitialized cell {cell} slot {slot}")
            }
            RuntimeError::FieldOutOfBounds { cell, index } => {
                write!(f, "field index {index} out of bounds for cell {cell}")
            }
            RuntimeError::ExternCall(name) => {
                write!(f, "call to extern `{name}` has no runtime definition")
            }
            RuntimeError::VoidValue { callee } => {
                write!(f, "callee `{callee}` returned no value")
            }
            RuntimeError::FrameMarshal { variable, patch } => {
                write!(
                    f,
                    "frame marshal failure: `%{variable}` unbound for patch `{patch}`"
                )
            }
            RuntimeError::HotpatchViolation { patch, detail } => {
                write!(f, "hotpatch `{patch}` violated isolation: {detail}")
            }
            RuntimeError::RedirectTarget { function, index } => {
                write!(
                    f,
                    "redirect target {index} is not a label of function `{function}`"
                )
            }
            RuntimeError::BadAction { patch, detail } => {
                write!(f, "hotpatch `{patch}` returned a bad action: {detail}")
            }
        }
    }
}

impl std::error::Error for RuntimeError {}

#[derive(Debug, Clone, Default)]
struct Cell {
    slots: Vec<Option<i64>>,
    harness: bool,
}

/// Cell-id addressed store. Id 0 is the null pointer.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    cells: Vec<Cell>,
}

impl Memory {
    fn alloc(&mut self, slots: Vec<Option<i64>>, harness: bool) -> i64 {
        self.cells.push(Cell { slots, harness });
        self.cells.len() as i64
    }

    fn cell(&self, id: i64) -> Result<&Cell, RuntimeError> {
        if id <= 0 || id as usize > self.cells.len() {
            return Err(RuntimeError::InvalidPointer(id));
        }
        Ok(&self.cells[id as usize - 1])
    }

    fn cell_mut(&mut self, id: i64) -> Result<&mut Cell, RuntimeError> {
        if id <= 0 || id as usize > self.cells.len() {
            return Err(RuntimeError::InvalidPointer(id));
        }
        Ok(&mut self.cells[id as usize - 1])
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_harness_cell(&self, id: i64) -> bool {
        self.cell(id).map(|c| c.harness).unwrap_or(false)
    }

    /// Current slot values of a cell, for result inspection.
    pub fn snapshot(&self, id: i64) -> Option<Vec<Option<i64>>> {
        self.cell(id).ok().map(|c| c.slots.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreEvent {
    pub cell: i64,
    pub value: i64,
    /// Stores to harness-provided cells are visible to the caller; stores to
    /// cells allocated during execution are not.
    pub observable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DispatchRecord {
    pub site: u32,
    pub comparisons: u32,
    /// Hotpatch bodies executed before an action was chosen.
    pub executed: u32,
    pub op: Op,
    pub ret_code: i64,
}

/// Observable machine state after a run: memory, the ordered store trace,
/// and the instrumentation counters the bench harness asserts on.
#[derive(Debug, Clone, Default)]
pub struct ExecEnv {
    pub memory: Memory,
    pub trace: Vec<StoreEvent>,
    pub steps: u64,
    pub trampoline_hits: u64,
    pub dispatches: Vec<DispatchRecord>,
}

impl ExecEnv {
    pub fn observable_trace(&self) -> Vec<StoreEvent> {
        self.trace
            .iter()
            .copied()
            .filter(|e| e.observable)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ret: Option<i64>,
    pub env: ExecEnv,
}

fn norm(ty: Ty, v: i64) -> i64 {
    match ty {
        Ty::I32 => v as i32 as i64,
        Ty::I64 | Ty::Ptr => v,
        Ty::I1 => v & 1,
    }
}

fn apply_bin(op: BinOp, ty: Ty, a: i64, b: i64) -> i64 {
    match ty {
        Ty::I32 => {
            let (x, y) = (a as i32, b as i32);
            let r = match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Shl => x.wrapping_shl((y & 31) as u32),
                BinOp::Shr => ((x as u32) >> (y & 31)) as i32,
                BinOp::Or => x | y,
                BinOp::And => x & y,
                BinOp::Xor => x ^ y,
            };
            r as i64
        }
        Ty::I64 | Ty::Ptr => match op {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Shl => a.wrapping_shl((b & 63) as u32),
            BinOp::Shr => ((a as u64) >> (b & 63)) as i64,
            BinOp::Or => a | b,
            BinOp::And => a & b,
            BinOp::Xor => a ^ b,
        },
        Ty::I1 => {
            let (x, y) = (a & 1, b & 1);
            let r = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Shl | BinOp::Shr => x,
                BinOp::Or => x | y,
                BinOp::And => x & y,
                BinOp::Xor => x ^ y,
            };
            r & 1
        }
    }
}

fn apply_cmp(pred: CmpPred, ty: Ty, a: i64, b: i64) -> i64 {
    let signed = |a: i64, b: i64| -> (i64, i64) {
        match ty {
            Ty::I32 => (a as i32 as i64, b as i32 as i64),
            Ty::I64 | Ty::Ptr => (a, b),
            Ty::I1 => (a & 1, b & 1),
        }
    };
    let unsigned = |a: i64, b: i64| -> (u64, u64) {
        match ty {
            Ty::I32 => (a as u32 as u64, b as u32 as u64),
            Ty::I64 | Ty::Ptr => (a as u64, b as u64),
            Ty::I1 => ((a & 1) as u64, (b & 1) as u64),
        }
    };
    let r = match pred {
        CmpPred::Eq => signed(a, b).0 == signed(a, b).1,
        CmpPred::Ne => signed(a, b).0 != signed(a, b).1,
        CmpPred::Lt => signed(a, b).0 < signed(a, b).1,
        CmpPred::Le => signed(a, b).0 <= signed(a, b).1,
        CmpPred::Gt => signed(a, b).0 > signed(a, b).1,
        CmpPred::Ge => signed(a, b).0 >= signed(a, b).1,
        CmpPred::Ult => unsigned(a, b).0 < unsigned(a, b).1,
        CmpPred::Ule => unsigned(a, b).0 <= unsigned(a, b).1,
    };
    r as i64
}

struct Frame {
    fn_idx: usize,
    block: usize,
    instr: usize,
    bindings: HashMap<String, i64>,
    pending_dest: Option<String>,
}

/// Builds harness cells for entry arguments and binds parameters.
fn bind_args(
    f: &Function,
    args: &[ArgValue],
    memory: &mut Memory,
) -> Result<HashMap<String, i64>, RuntimeError> {
    if f.params.len() != args.len() {
        return Err(RuntimeError::ArgMismatch {
            function: f.name.clone(),
            detail: format!("expected {} arguments, got {}", f.params.len(), args.len()),
        });
    }
    let mut bindings = HashMap::new();
    for ((name, ty), arg) in f.params.iter().zip(args) {
        let value = match (ty, arg) {
            (Ty::Ptr, ArgValue::Object(slots)) => {
                memory.alloc(slots.iter().map(|&v| Some(v)).collect(), true)
            }
            (Ty::Ptr, ArgValue::Chain(items)) => {
                let mut next = 0i64;
                for &v in items.iter().rev() {
                    next = memory.alloc(vec![Some(v), Some(next)], true);
                }
                next
            }
            (Ty::Ptr, ArgValue::Scalar(_)) => {
                return Err(RuntimeError::ArgMismatch {
                    function: f.name.clone(),
                    detail: format!("parameter `%{name}` is ptr, pass [..] or chain[..]"),
                })
            }
            (_, ArgValue::Scalar(v)) => norm(*ty, *v),
            (_, other) => {
                return Err(RuntimeError::ArgMismatch {
                    function: f.name.clone(),
                    detail: format!("parameter `%{name}` is {ty}, got {other}"),
                })
            }
        };
        bindings.insert(name.clone(), value);
    }
    Ok(bindings)
}

/// Executes a hotpatch body against `frame_values` and a copy of program
/// memory. Returns the raw action word.
fn run_hotpatch_body(
    patch: &Hotpatch,
    frame_values: &[i64],
    memory: &Memory,
) -> Result<i64, RuntimeError> {
    let body = &patch.body;
    let mut scratch = memory.clone();
    let frame_cell = scratch.alloc(frame_values.iter().map(|&v| Some(v)).collect(), false);
    let own_base = scratch.len(); // cells above this index belong to the patch
    let mut bindings: HashMap<String, i64> = HashMap::new();
    match body.params.as_slice() {
        [(name, Ty::Ptr)] => bindings.insert(name.clone(), frame_cell),
        _ => {
            return Err(RuntimeError::HotpatchViolation {
                patch: patch.name.clone(),
                detail: "body must take a single ptr frame parameter".into(),
            })
        }
    };
    let violation = |detail: &str| RuntimeError::HotpatchViolation {
        patch: patch.name.clone(),
        detail: detail.to_string(),
    };
    let eval = |bindings: &HashMap<String, i64>, op: &Operand| -> Result<i64, RuntimeError> {
        match op {
            Operand::Literal(v) => Ok(*v),
            Operand::Value(name) => bindings
                .get(name)
                .copied()
                .ok_or_else(|| RuntimeError::UnboundValue(name.clone())),
        }
    };
    let mut block = 0usize;
    let mut idx = 0usize;
    let mut steps = 0u64;
    loop {
        steps += 1;
        if steps > HOTPATCH_STEP_BUDGET {
            return Err(RuntimeError::StepLimit {
                limit: HOTPATCH_STEP_BUDGET,
            });
        }
        let instr: &Instr = &body.blocks[block].instrs[idx];
        idx += 1;
        let bind = |bindings: &mut HashMap<String, i64>, v: i64| {
            if let Some(dest) = &instr.dest {
                bindings.insert(dest.clone(), v);
            }
        };
        match &instr.kind {
            InstrKind::Const { ty, value } => bind(&mut bindings, norm(*ty, *value)),
            InstrKind::Bin { op, ty, lhs, rhs } => {
                let v = apply_bin(*op, *ty, eval(&bindings, lhs)?, eval(&bindings, rhs)?);
                bind(&mut bindings, v);
            }
            InstrKind::Cmp { pred, ty, lhs, rhs } => {
                let v = apply_cmp(*pred, *ty, eval(&bindings, lhs)?, eval(&bindings, rhs)?);
                bind(&mut bindings, v);
            }
            InstrKind::Alloca { .. } => {
                let id = scratch.alloc(vec![None], false);
                bind(&mut bindings, id);
            }
            InstrKind::Load { ty, ptr } => {
                let id = eval(&bindings, ptr)?;
                let cell = scratch.cell(id)?;
                let v = cell
                    .slots
                    .first()
                    .copied()
                    .flatten()
                    .ok_or(RuntimeError::UninitializedLoad { cell: id, slot: 0 })?;
                bind(&mut bindings, norm(*ty, v));
            }
            InstrKind::Store { ptr, value } => {
                let id = eval(&bindings, ptr)?;
                if id <= own_base as i64 {
                    return Err(violation("store outside the patch's own allocas"));
                }
                let v = eval(&bindings, value)?;
                let cell = scratch.cell_mut(id)?;
                if cell.slots.is_empty() {
                    cell.slots.push(Some(v));
                } else {
                    cell.slots[0] = Some(v);
                }
            }
            InstrKind::GetField { base, index } => {
                let id = eval(&bindings, base)?;
                let cell = scratch.cell(id)?;
                let v = cell.slots.get(*index as usize).copied().flatten().ok_or(
                    RuntimeError::FieldOutOfBounds {
                        cell: id,
                        index: *index,
                    },
                )?;
                bind(&mut bindings, v);
            }
            InstrKind::Call { callee, args } if callee == "frame_get" => {
                let [frame_op, slot_op] = args.as_slice() else {
                    return Err(violation("frame_get takes (frame, slot)"));
                };
                let id = eval(&bindings, frame_op)?;
                let slot = eval(&bindings, slot_op)?;
                let cell = scratch.cell(id)?;
                let v = cell.slots.get(slot as usize).copied().flatten().ok_or(
                    RuntimeError::FieldOutOfBounds {
                        cell: id,
                        index: slot as u32,
                    },
                )?;
                bind(&mut bindings, v);
            }
            InstrKind::Call { callee, .. } => {
                return Err(violation(&format!(
                    "call to `{callee}` (only frame_get is allowed)"
                )));
            }
            InstrKind::Trampoline { .. } => return Err(violation("trampoline inside a hotpatch")),
            InstrKind::Br { target } => {
                block = body
                    .block_index(target)
                    .ok_or_else(|| violation(&format!("branch to unknown label `{target}`")))?;
                idx = 0;
            }
            InstrKind::CondBr {
                cond,
                then_label,
                else_label,
            } => {
                let label = if eval(&bindings, cond)? != 0 {
                    then_label
                } else {
                    else_label
                };
                block = body
                    .block_index(label)
                    .ok_or_else(|| violation(&format!("branch to unknown label `{label}`")))?;
                idx = 0;
            }
            InstrKind::Ret { value } => {
                return match value {
                    Some(v) => eval(&bindings, v),
                    None => Err(violation("body must return an action word")),
                };
            }
        }
    }
}

/// Looks up `site` in the registry and runs matching enabled hotpatches in
/// installation order, returning the first non-PASS action.
pub fn dispatch(
    site: u32,
    bindings: &HashMap<String, i64>,
    memory: &Memory,
    registry: &PatchRegistry,
) -> Result<(PatchAction, DispatchRecord), RuntimeError> {
    let (range, comparisons) = registry.lookup(site);
    let mut executed = 0u32;
    let mut action = PatchAction::PASS;
    for entry in &registry.entries()[range] {
        if !entry.enabled {
            continue;
        }
        let patch = &entry.hotpatch;
        let mut frame_values = Vec::with_capacity(patch.required_vars.len());
        for var in &patch.required_vars {
            let v = bindings
                .get(var)
                .copied()
                .ok_or_else(|| RuntimeError::FrameMarshal {
                    variable: var.clone(),
                    patch: patch.name.clone(),
                })?;
            frame_values.push(v);
        }
        let word = run_hotpatch_body(patch, &frame_values, memory)?;
        executed += 1;
        let decoded = decode_action(word).map_err(|e| RuntimeError::BadAction {
            patch: patch.name.clone(),
            detail: e.to_string(),
        })?;
        if decoded.op != Op::Pass {
            action = decoded;
            break;
        }
    }
    let record = DispatchRecord {
        site,
        comparisons,
        executed,
        op: action.op,
        ret_code: action.ret_code,
    };
    Ok((action, record))
}

/// Runs `entry` with `args` under `registry`. Deterministic: identical
/// inputs produce identical results, traces, and dispatch records.
pub fn interpret(
    module: &Module,
    entry: &str,
    args: &[ArgValue],
    registry: &PatchRegistry,
    limits: &Limits,
) -> Result<RunOutcome, RuntimeError> {
    let entry_idx = module
        .functions
        .iter()
        .position(|f| f.name == entry)
        .ok_or_else(|| RuntimeError::UnknownFunction(entry.to_string()))?;
    let mut env = ExecEnv::default();
    let bindings = bind_args(&module.functions[entry_idx], args, &mut env.memory)?;
    let mut frames = vec![Frame {
        fn_idx: entry_idx,
        block: 0,
        instr: 0,
        bindings,
        pending_dest: None,
    }];

    loop {
        env.steps += 1;
        if env.steps > limits.max_steps {
            return Err(RuntimeError::StepLimit {
                limit: limits.max_steps,
            });
        }
        let depth = frames.len();
        let frame = frames.last_mut().expect("frame stack never empty");
        let func = &module.functions[frame.fn_idx];
        let instr = &func.blocks[frame.block].instrs[frame.instr];
        frame.instr += 1;

        let eval = |bindings: &HashMap<String, i64>, op: &Operand| -> Result<i64, RuntimeError> {
            match op {
                Operand::Literal(v) => Ok(*v),
                Operand::Value(name) => bindings
                    .get(name)
                    .copied()
                    .ok_or_else(|| RuntimeError::UnboundValue(name.clone())),
            }
        };

        // Return (or DROP) with a value: pop the frame, deliver to caller.
        // Yields `Some(final)` when the entry frame itself returns.
        fn do_return(frames: &mut Vec<Frame>, value: Option<i64>) -> Option<Option<i64>> {
            frames.pop().expect("frame stack never empty");
            match frames.last_mut() {
                None => Some(value),
                Some(caller) => {
                    if let Some(dest) = caller.pending_dest.take() {
                        let v = value.expect("value presence checked before do_return");
                        caller.bindings.insert(dest, v);
                    }
                    None
                }
            }
        }

        match &instr.kind {
            InstrKind::Const { ty, value } => {
                let v = norm(*ty, *value);
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), v);
            }
            InstrKind::Bin { op, ty, lhs, rhs } => {
                let v = apply_bin(
                    *op,
                    *ty,
                    eval(&frame.bindings, lhs)?,
                    eval(&frame.bindings, rhs)?,
                );
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), v);
            }
            InstrKind::Cmp { pred, ty, lhs, rhs } => {
                let v = apply_cmp(
                    *pred,
                    *ty,
                    eval(&frame.bindings, lhs)?,
                    eval(&frame.bindings, rhs)?,
                );
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), v);
            }
            InstrKind::Alloca { .. } => {
                let id = env.memory.alloc(vec![None], false);
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), id);
            }
            InstrKind::Load { ty, ptr } => {
                let id = eval(&frame.bindings, ptr)?;
                let cell = env.memory.cell(id)?;
                let v = cell
                    .slots
                    .first()
                    .copied()
                    .flatten()
                    .ok_or(RuntimeError::UninitializedLoad { cell: id, slot: 0 })?;
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), norm(*ty, v));
            }
            InstrKind::Store { ptr, value } => {
                let id = eval(&frame.bindings, ptr)?;
                let v = eval(&frame.bindings, value)?;
                let observable = env.memory.cell(id)?.harness;
                let cell = env.memory.cell_mut(id)?;
                if cell.slots.is_empty() {
                    cell.slots.push(Some(v));
                } else {
                    cell.slots[0] = Some(v);
                }
                env.trace.push(StoreEvent {
                    cell: id,
                    value: v,
                    observable,
                });
            }
            InstrKind::GetField { base, index } => {
                let id = eval(&frame.bindings, base)?;
                let cell = env.memory.cell(id)?;
                let v = cell.slots.get(*index as usize).copied().flatten().ok_or(
                    RuntimeError::FieldOutOfBounds {
                        cell: id,
                        index: *index,
                    },
                )?;
                frame
                    .bindings
                    .insert(instr.dest.clone().unwrap_or_default(), v);
            }
            InstrKind::Call { callee, args } => {
                let Some(target_idx) = module.functions.iter().position(|f| f.name == *callee)
                else {
                    return Err(RuntimeError::ExternCall(callee.clone()));
                };
                if depth >= MAX_CALL_DEPTH {
                    return Err(RuntimeError::CallDepth);
                }
                let target = &module.functions[target_idx];
                if target.params.len() != args.len() {
                    return Err(RuntimeError::ArgMismatch {
                        function: callee.clone(),
                        detail: format!(
                            "expected {} arguments, got {}",
                            target.params.len(),
                            args.len()
                        ),
                    });
                }
                let mut callee_bindings = HashMap::new();
                for ((pname, pty), arg) in target.params.iter().zip(args) {
                    callee_bindings.insert(pname.clone(), norm(*pty, eval(&frame.bindings, arg)?));
                }
                frame.pending_dest = instr.dest.clone();
                frames.push(Frame {
                    fn_idx: target_idx,
                    block: 0,
                    instr: 0,
                    bindings: callee_bindings,
                    pending_dest: None,
                });
            }
            InstrKind::Trampoline { site } => {
                env.trampoline_hits += 1;
                let (action, record) = dispatch(*site, &frame.bindings, &env.memory, registry)?;
                env.dispatches.push(record);
                match action.op {
                    Op::Pass => {}
                    Op::Drop => {
                        if let Some(ret) = do_return(&mut frames, Some(action.ret_code)) {
                            return Ok(RunOutcome { ret, env });
                        }
                    }
                    Op::Redirect => {
                        let target = action.target.expect("redirect carries a target");
                        if target >= func.blocks.len() {
                            return Err(RuntimeError::RedirectTarget {
                                function: func.name.clone(),
                                index: target,
                            });
                        }
                        let frame = frames.last_mut().unwrap();
                        frame.block = target;
                        frame.instr = 0;
                    }
                }
            }
            InstrKind::Br { target } => {
                let b = func.block_index(target).ok_or_else(|| {
                    RuntimeError::UnknownFunction(format!("{}:{target}", func.name))
                })?;
                frame.block = b;
                frame.instr = 0;
            }
            InstrKind::CondBr {
                cond,
                then_label,
                else_label,
            } => {
                let label = if eval(&frame.bindings, cond)? != 0 {
                    then_label
                } else {
                    else_label
                };
                let b = func.block_index(label).ok_or_else(|| {
                    RuntimeError::UnknownFunction(format!("{}:{label}", func.name))
                })?;
                frame.block = b;
                frame.instr = 0;
            }
            InstrKind::Ret { value } => {
                let v = value
                    .as_ref()
                    .map(|op| eval(&frame.bindings, op))
                    .transpose()?;
                let callee_name = func.name.clone();
                let expects_value =
                    frames.len() > 1 && frames[frames.len() - 2].pending_dest.is_some();
                if expects_value && v.is_none() {
                    return Err(RuntimeError::VoidValue {
                        callee: callee_name,
                    });
                }
                if let Some(ret) = do_return(&mut frames, v) {
                    return Ok(RunOutcome { ret, env });
                }
            }
        }
    }
}
