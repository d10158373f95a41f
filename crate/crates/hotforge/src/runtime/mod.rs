//! Execution: the IR interpreter, the patch registry, and the dispatcher
//! that runs hotpatches when a trampoline fires.
//!
//! Interpreter cost model: every executed instruction is one step. A
//! trampoline with no matching active patch costs exactly
//! [`TRAMPOLINE_MISS_STEPS`] steps (the trampoline instruction itself), so an
//! instrumented run exceeds the original by `trampolines executed ×
//! TRAMPOLINE_MISS_STEPS` steps.

mod action;
mod interp;
mod registry;

pub use action::{decode_action, encode_action, ActionError, Op, PatchAction};
pub use interp::{
    interpret, ArgValue, DispatchRecord, ExecEnv, Limits, RunOutcome, RuntimeError, StoreEvent,
};
pub use registry::{PatchKey, PatchRegistry, RegistryEntry, RegistryError, MAX_PATCHES};

/// Dispatcher steps charged per trampoline miss (the trampoline instruction
/// itself; a registry miss adds nothing).
pub const TRAMPOLINE_MISS_STEPS: u64 = 1;
