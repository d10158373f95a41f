//! hotforge: a hotpatch synthesis toolchain for a small SSA IR.
//!
//! The pipeline has two offline passes and a runtime:
//!
//! * [`instrument`] inserts trampoline instructions at function entrances,
//!   after calls, and around loops and branches whose conditions static
//!   analysis cannot resolve.
//! * [`analyze`] takes an official patch (the patched function plus the
//!   location of the inserted guard), hoists its condition to the best
//!   trampoline by backward substitution, and emits a hotpatch function.
//! * [`runtime`] interprets modules; each trampoline asks the dispatcher
//!   whether an installed hotpatch wants to PASS, DROP, or REDIRECT.
//!
//! [`bundle`] packages hotpatches for transport with an integrity checksum,
//! and [`harness`] holds the fixture corpus driver: differential
//! verification, patch diffing, and the bench suite.

pub mod analyze;
pub mod bundle;
pub mod cli;
pub mod harness;
pub mod instrument;
pub mod ir;
pub mod runtime;
