//! The instrumentation pass: inserts `trampoline` instructions at the four
//! site classes (function entrance, after calls, around complex loops,
//! around complex branch arms) and assigns stable site ids.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{analyze_cfg, is_complex, CfgError, Function, Instr, InstrKind, Module, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Entrance,
    AfterCall,
    LoopHeader,
    LoopExit,
    BranchHeader,
    BranchExit,
}

impl SiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::Entrance => "entrance",
            SiteKind::AfterCall => "after_call",
            SiteKind::LoopHeader => "loop_header",
            SiteKind::LoopExit => "loop_exit",
            SiteKind::BranchHeader => "branch_header",
            SiteKind::BranchExit => "branch_exit",
        }
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An inserted trampoline: identity, position, and the dominance bit the
/// analysis component needs for site selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrampolineSite {
    pub id: u32,
    #[serde(rename = "fn")]
    pub function: String,
    pub block: String,
    /// Instruction index of the trampoline within the instrumented block.
    pub index: usize,
    pub kind: SiteKind,
    /// Whether the site's block dominates every `ret` block of the function.
    pub dominates_exit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstrumentReport {
    pub sites: Vec<TrampolineSite>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrumentError {
    AlreadyInstrumented { function: String },
    Cfg(CfgError),
    MismatchedPair { detail: String },
    NonstandardInstrumentation { function: String, detail: String },
}

impl fmt::Display for InstrumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstrumentError::AlreadyInstrumented { function } => {
                write!(f, "function `{function}` is already instrumented")
            }
            InstrumentError::Cfg(e) => e.fmt(f),
            InstrumentError::MismatchedPair { detail } => {
                write!(f, "mismatched function pair: {detail}")
            }
            InstrumentError::NonstandardInstrumentation { function, detail } => {
                write!(f, "nonstandard instrumentation in `{function}`: {detail}")
            }
        }
    }
}

impl std::error::Error for InstrumentError {}

impl From<CfgError> for InstrumentError {
    fn from(e: CfgError) -> Self {
        InstrumentError::Cfg(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Insertion {
    block: usize,
    /// Index in the uninstrumented block before which the trampoline goes.
    at: usize,
    /// Tie-break priority when several classes pick the same position.
    kind_rank: u8,
    kind: SiteKind,
}

fn kind_rank(kind: SiteKind) -> u8 {
    match kind {
        SiteKind::Entrance => 0,
        SiteKind::AfterCall => 1,
        SiteKind::LoopHeader => 2,
        SiteKind::LoopExit => 3,
        SiteKind::BranchHeader => 4,
        SiteKind::BranchExit => 5,
    }
}

fn insertion_plan(f: &Function) -> Result<Vec<Insertion>, InstrumentError> {
    let cfg = analyze_cfg(f)?;
    let mut plan = Vec::new();
    let mut add = |block: usize, at: usize, kind: SiteKind| {
        plan.push(Insertion {
            block,
            at,
            kind_rank: kind_rank(kind),
            kind,
        });
    };

    add(0, f.leading_alloca_count(), SiteKind::Entrance);

    for (bi, block) in f.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            if matches!(instr.kind, InstrKind::Call { .. }) {
                add(bi, ii + 1, SiteKind::AfterCall);
            }
        }
    }

    for l in &cfg.loops {
        if is_complex(Region::Loop(l), f) {
            add(l.header, 0, SiteKind::LoopHeader);
            for &e in &l.exits {
                add(e, 0, SiteKind::LoopExit);
            }
        }
    }

    for r in &cfg.branch_regions {
        if is_complex(Region::Branch(r), f) {
            add(r.header, 0, SiteKind::BranchHeader);
            for &e in &r.exits {
                add(e, 0, SiteKind::BranchExit);
            }
        }
    }

    // One trampoline per position: lower-ranked class wins, so a block that
    // is both a loop exit and a branch exit gets a single loop_exit site.
    plan.sort();
    plan.dedup_by_key(|ins| (ins.block, ins.at));
    Ok(plan)
}

/// Instruments one function. Site ids are drawn from `next_id` in
/// (block order, instruction order), so ids increase in traversal order.
pub fn instrument_function(
    f: &Function,
    next_id: &mut u32,
) -> Result<(Function, Vec<TrampolineSite>), InstrumentError> {
    if f.has_trampolines() {
        return Err(InstrumentError::AlreadyInstrumented {
            function: f.name.clone(),
        });
    }
    let cfg = analyze_cfg(f)?;
    let plan = insertion_plan(f)?;

    let mut out = f.clone();
    let mut sites = Vec::new();
    // Walk the plan backward so earlier insertion indices stay valid, but
    // assign ids in forward plan order.
    let ids: Vec<u32> = plan
        .iter()
        .map(|_| {
            let id = *next_id;
            *next_id += 1;
            id
        })
        .collect();
    for (ins, &id) in plan.iter().zip(&ids).rev() {
        out.blocks[ins.block]
            .instrs
            .insert(ins.at, Instr::new(None, InstrKind::Trampoline { site: id }));
    }
    for (ins, &id) in plan.iter().zip(&ids) {
        let earlier = plan
            .iter()
            .filter(|o| o.block == ins.block && o.at < ins.at)
            .count();
        sites.push(TrampolineSite {
            id,
            function: f.name.clone(),
            block: f.blocks[ins.block].label.clone(),
            index: ins.at + earlier,
            kind: ins.kind,
            dominates_exit: cfg.dominates_all_exits(ins.block),
        });
    }
    Ok((out, sites))
}

/// Instruments every function in the module with globally unique site ids.
pub fn instrument_module(m: &Module) -> Result<(Module, InstrumentReport), InstrumentError> {
    let mut out = m.clone();
    let mut next_id = 0u32;
    let mut sites = Vec::new();
    for f in &mut out.functions {
        let (inst, fn_sites) = instrument_function(f, &mut next_id)?;
        *f = inst;
        sites.extend(fn_sites);
    }
    let mut counts = BTreeMap::new();
    for s in &sites {
        *counts.entry(s.kind.as_str().to_string()).or_insert(0) += 1;
    }
    Ok((out, InstrumentReport { sites, counts }))
}

/// Removes every trampoline instruction.
pub fn strip_trampolines(f: &Function) -> Function {
    let mut out = f.clone();
    for b in &mut out.blocks {
        b.instrs
            .retain(|i| !matches!(i.kind, InstrKind::Trampoline { .. }));
    }
    out
}

/// Per-function instruction delta between an original and its instrumented
/// counterpart. Each trampoline is exactly one instruction, so the delta
/// equals the site count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverheadReport {
    pub function: String,
    pub instructions_added: usize,
}

pub fn trampoline_static_overhead(
    f_orig: &Function,
    f_inst: &Function,
) -> Result<OverheadReport, InstrumentError> {
    if f_orig.name != f_inst.name {
        return Err(InstrumentError::MismatchedPair {
            detail: format!(
                "function names differ: `{}` vs `{}`",
                f_orig.name, f_inst.name
            ),
        });
    }
    if strip_trampolines(f_inst) != *f_orig {
        return Err(InstrumentError::MismatchedPair {
            detail: format!(
                "`{}` is not an instrumented copy of the original",
                f_inst.name
            ),
        });
    }
    Ok(OverheadReport {
        function: f_orig.name.clone(),
        instructions_added: f_inst.count_instrs() - f_orig.count_instrs(),
    })
}

/// Rebuilds the site list of an already-instrumented function by stripping
/// it and replaying the canonical insertion plan. Rejects instrumentation
/// this pass would not have produced.
pub fn recover_sites(f: &Function) -> Result<Vec<TrampolineSite>, InstrumentError> {
    let stripped = strip_trampolines(f);
    let cfg = analyze_cfg(&stripped)?;
    let plan = insertion_plan(&stripped)?;

    // Actual trampoline positions, in block order.
    let mut actual: Vec<(usize, usize, u32)> = Vec::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        let mut seen_tramps = 0usize;
        for (ii, i) in b.instrs.iter().enumerate() {
            if let InstrKind::Trampoline { site } = i.kind {
                actual.push((bi, ii - seen_tramps, site));
                seen_tramps += 1;
            }
        }
    }
    if actual.len() != plan.len() {
        return Err(InstrumentError::NonstandardInstrumentation {
            function: f.name.clone(),
            detail: format!(
                "{} trampolines where the pass would insert {}",
                actual.len(),
                plan.len()
            ),
        });
    }
    let mut sites = Vec::new();
    for (ins, &(abi, aat, id)) in plan.iter().zip(&actual) {
        if ins.block != abi || ins.at != aat {
            return Err(InstrumentError::NonstandardInstrumentation {
                function: f.name.clone(),
                detail: format!(
                    "trampoline {id} at `{}`:{aat} does not match the canonical site `{}`:{}",
                    f.blocks[abi].label, stripped.blocks[ins.block].label, ins.at
                ),
            });
        }
        let earlier = plan
            .iter()
            .filter(|o| o.block == ins.block && o.at < ins.at)
            .count();
        sites.push(TrampolineSite {
            id,
            function: f.name.clone(),
            block: stripped.blocks[ins.block].label.clone(),
            index: ins.at + earlier,
            kind: ins.kind,
            dominates_exit: cfg.dominates_all_exits(ins.block),
        });
    }
    Ok(sites)
}

pub fn recover_module_sites(m: &Module) -> Result<Vec<TrampolineSite>, InstrumentError> {
    let mut sites = Vec::new();
    for f in &m.functions {
        sites.extend(recover_sites(f)?);
    }
    sites.sort_by_key(|s| s.id);
    Ok(sites)
}
