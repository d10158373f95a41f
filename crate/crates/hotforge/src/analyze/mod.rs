//! The analysis component: classifies where an official patch sits, picks
//! the best trampoline, hoists the patch condition to it by backward
//! substitution, and emits the frame-taking hotpatch function.

mod emit;
mod expr;
mod site;
mod substitute;

pub use expr::Expr;
pub use site::Scenario;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::instrument::{SiteKind, TrampolineSite};
use crate::ir::{Function, InstrKind, Operand, Ty};
use crate::runtime::Op;

/// A contiguous span of inserted instructions inside one block of the
/// patched function, `start..=end` inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRange {
    pub block: String,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for PatchRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}..{}:{}",
            self.block, self.start, self.block, self.end
        )
    }
}

impl PatchRange {
    /// Parses `BLOCK:IDX..BLOCK:IDX`. Both endpoints must name one block.
    pub fn parse(s: &str) -> Result<PatchRange, String> {
        let (a, b) = s.split_once("..").ok_or("expected BLOCK:IDX..BLOCK:IDX")?;
        let parse_pos = |p: &str| -> Result<(String, usize), String> {
            let (block, idx) = p.split_once(':').ok_or("expected BLOCK:IDX")?;
            Ok((block.to_string(), idx.parse().map_err(|_| "bad index")?))
        };
        let (b1, start) = parse_pos(a)?;
        let (b2, end) = parse_pos(b)?;
        if b1 != b2 {
            return Err("patch range endpoints must share one block".into());
        }
        if end < start {
            return Err("patch range end precedes start".into());
        }
        Ok(PatchRange {
            block: b1,
            start,
            end,
        })
    }
}

/// What the official patch does when its condition fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpec {
    Drop { code: i64 },
    Redirect { label: String },
}

impl ActionSpec {
    /// Parses `drop:CODE` or `redirect:LABEL`.
    pub fn parse(s: &str) -> Result<ActionSpec, String> {
        match s.split_once(':') {
            Some(("drop", code)) => Ok(ActionSpec::Drop {
                code: code.parse().map_err(|_| "bad drop code")?,
            }),
            Some(("redirect", label)) => Ok(ActionSpec::Redirect {
                label: label.to_string(),
            }),
            _ => Err("expected drop:CODE or redirect:LABEL".into()),
        }
    }
}

impl fmt::Display for ActionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSpec::Drop { code } => write!(f, "drop:{code}"),
            ActionSpec::Redirect { label } => write!(f, "redirect:{label}"),
        }
    }
}

/// The official patch: where it was inserted in the patched function and
/// what its taken path does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub function: String,
    pub range: PatchRange,
    pub action: ActionSpec,
    pub cve_id: String,
}

/// Decoded action bound to a hotpatch, kept alongside the packed word the
/// body returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDesc {
    pub op: Op,
    pub ret_code: i64,
    pub target_label: Option<String>,
    /// Block index of `target_label` in the instrumented target function.
    pub target_index: Option<usize>,
}

/// The synthesized patch: a pure function of a marshaled data frame, bound
/// to one trampoline of one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hotpatch {
    pub name: String,
    pub body: Function,
    pub target_fn: String,
    pub site_id: u32,
    pub site_kind: SiteKind,
    /// Values the dispatcher marshals into the frame, in frame-slot order.
    pub required_vars: Vec<String>,
    pub action: ActionDesc,
    pub cve_id: String,
}

impl Hotpatch {
    pub fn site_id(&self) -> u32 {
        self.site_id
    }

    /// A do-nothing hotpatch, used by registry and dispatcher benchmarks.
    pub fn trivial_pass(name: &str, target_fn: &str, site_id: u32) -> Hotpatch {
        let body = Function {
            name: name.to_string(),
            params: vec![("frame".to_string(), Ty::Ptr)],
            blocks: vec![crate::ir::Block {
                label: "entry".to_string(),
                instrs: vec![crate::ir::Instr::new(
                    None,
                    InstrKind::Ret {
                        value: Some(Operand::Literal(0)),
                    },
                )],
            }],
        };
        Hotpatch {
            name: name.to_string(),
            body,
            target_fn: target_fn.to_string(),
            site_id,
            site_kind: SiteKind::Entrance,
            required_vars: vec![],
            action: ActionDesc {
                op: Op::Pass,
                ret_code: 0,
                target_label: None,
                target_index: None,
            },
            cve_id: String::new(),
        }
    }
}

/// One backward-substitution event: the walked instruction, the patch
/// variable it defined, and the expression inlined for it.
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub instruction: String,
    pub variable: String,
    pub inlined: String,
    #[serde(skip)]
    pub inlined_expr: Expr,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SubstitutionTrace {
    pub steps: Vec<TraceStep>,
    pub skipped: u32,
    /// Control-flow absorbed into the guard (path conditions, value merges).
    pub absorbed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalyzeError {
    UnsupportedPatchClass(String),
    UnsupportedPatchShape(String),
    UnsupportedDef(String),
    NoReachableTrampoline(String),
    VariableNotLive(String),
    InvalidSpec(String),
    Cfg(crate::ir::CfgError),
}

impl AnalyzeError {
    /// Stable error class, the part harnesses match on.
    pub fn class(&self) -> &'static str {
        match self {
            AnalyzeError::UnsupportedPatchClass(_) => "unsupported patch class",
            AnalyzeError::UnsupportedPatchShape(_) => "unsupported patch shape",
            AnalyzeError::UnsupportedDef(_) => "unsupported def",
            AnalyzeError::NoReachableTrampoline(_) => "no reachable trampoline",
            AnalyzeError::VariableNotLive(_) => "variable not live at trampoline",
            AnalyzeError::InvalidSpec(_) => "invalid patch spec",
            AnalyzeError::Cfg(_) => "control flow error",
        }
    }
}

impl fmt::Display for AnalyzeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyzeError::Cfg(e) => write!(f, "{}: {e}", self.class()),
            AnalyzeError::UnsupportedPatchClass(d)
            | AnalyzeError::UnsupportedPatchShape(d)
            | AnalyzeError::UnsupportedDef(d)
            | AnalyzeError::NoReachableTrampoline(d)
            | AnalyzeError::VariableNotLive(d)
            | AnalyzeError::InvalidSpec(d) => write!(f, "{}: {d}", self.class()),
        }
    }
}

impl std::error::Error for AnalyzeError {}

impl From<crate::ir::CfgError> for AnalyzeError {
    fn from(e: crate::ir::CfgError) -> Self {
        AnalyzeError::Cfg(e)
    }
}

/// Everything produced for one patch fragment.
#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub hotpatch: Hotpatch,
    pub scenario: Scenario,
    pub site: TrampolineSite,
    pub expr: Expr,
    pub trace: SubstitutionTrace,
}

/// Runs the full pipeline for every fragment of one patched function:
/// classify, select the best trampoline, substitute backward, emit.
///
/// `f_inst` is the instrumented vulnerable function, `f_patched` the
/// un-instrumented patched function, `sites` the module's trampoline list.
pub fn analyze_patches(
    f_inst: &Function,
    f_patched: &Function,
    specs: &[PatchSpec],
    sites: &[TrampolineSite],
) -> Result<Vec<AnalyzeOutcome>, AnalyzeError> {
    let ctx = site::AnalysisContext::build(f_inst, f_patched, specs, sites)?;
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let scenario = ctx.classify(i);
        let best = ctx.find_best_trampoline(i, &scenario)?;
        let (expr, trace) = substitute::backward_substitute(&ctx, i, &best)?;
        let hotpatch = emit::emit_hotpatch(&ctx, spec, &best, &expr, i + 1)?;
        out.push(AnalyzeOutcome {
            hotpatch,
            scenario,
            site: best,
            expr,
            trace,
        });
    }
    Ok(out)
}

/// The official patch fragment's guard expression, polarized so that true
/// means the action fires. This is the pre-substitution form analysis
/// starts from, exposed for equivalence checks against emitted bodies.
pub fn official_guard(
    f_vuln: &Function,
    f_patched: &Function,
    spec: &PatchSpec,
) -> Result<Expr, AnalyzeError> {
    let (_, _, guard, _) = site::build_fragment(f_patched, f_vuln, spec)?;
    Ok(guard)
}

/// Recovers the guard expression and packed action word from a straight-line
/// hotpatch body (frame reads, guard evaluation, apply/pass returns). Bodies
/// with absorbed branch code return `None`.
pub fn decompile_guard(h: &Hotpatch) -> Option<(Expr, i64)> {
    use std::collections::HashMap;
    let entry = h.body.blocks.first()?;
    let mut locals: HashMap<String, Expr> = HashMap::new();
    let mut guard: Option<Expr> = None;
    let mut arm_labels: Option<(String, String)> = None;
    for instr in &entry.instrs {
        match (&instr.dest, &instr.kind) {
            (Some(dest), InstrKind::Call { callee, args }) if callee == "frame_get" => {
                let slot = match args.as_slice() {
                    [_, Operand::Literal(slot)] => *slot as usize,
                    _ => return None,
                };
                locals.insert(dest.clone(), Expr::Var(h.required_vars.get(slot)?.clone()));
            }
            (Some(dest), kind) if kind.is_pure() || matches!(kind, InstrKind::Load { .. }) => {
                let locals_ref = &locals;
                let e = rhs_to_expr(None, kind, &|n| locals_ref.get(n).cloned()).ok()?;
                locals.insert(dest.clone(), e);
            }
            (
                None,
                InstrKind::CondBr {
                    cond,
                    then_label,
                    else_label,
                },
            ) => {
                guard = Some(match cond {
                    Operand::Value(v) => locals.get(v)?.clone(),
                    Operand::Literal(_) => return None,
                });
                arm_labels = Some((then_label.clone(), else_label.clone()));
            }
            _ => return None,
        }
    }
    let (apply_label, _) = arm_labels?;
    let apply = h.body.blocks.iter().find(|b| b.label == apply_label)?;
    let word = match &apply.instrs.first()?.kind {
        InstrKind::Ret {
            value: Some(Operand::Literal(w)),
        } => *w,
        _ => return None,
    };
    Some((guard?, word))
}

/// Classifies where one patch fragment sits relative to the vulnerable
/// function's loop and branch regions.
pub fn classify_scenario(
    f_inst: &Function,
    f_patched: &Function,
    spec: &PatchSpec,
    sites: &[TrampolineSite],
) -> Result<Scenario, AnalyzeError> {
    let ctx = site::AnalysisContext::build(f_inst, f_patched, std::slice::from_ref(spec), sites)?;
    Ok(ctx.classify(0))
}

/// Selects the best trampoline for one patch fragment: the closest
/// admissible site per the scenario's selection rule.
pub fn find_best_trampoline(
    f_inst: &Function,
    f_patched: &Function,
    spec: &PatchSpec,
    sites: &[TrampolineSite],
) -> Result<TrampolineSite, AnalyzeError> {
    let ctx = site::AnalysisContext::build(f_inst, f_patched, std::slice::from_ref(spec), sites)?;
    let scenario = ctx.classify(0);
    ctx.find_best_trampoline(0, &scenario)
}

/// Hoists one patch fragment's guard to its best trampoline, returning the
/// substituted expression and the substitution trace.
pub fn backward_substitute(
    f_inst: &Function,
    f_patched: &Function,
    spec: &PatchSpec,
    sites: &[TrampolineSite],
) -> Result<(Expr, SubstitutionTrace), AnalyzeError> {
    let ctx = site::AnalysisContext::build(f_inst, f_patched, std::slice::from_ref(spec), sites)?;
    let scenario = ctx.classify(0);
    let best = ctx.find_best_trampoline(0, &scenario)?;
    substitute::backward_substitute(&ctx, 0, &best)
}

/// Single-fragment entry point matching the component's contract.
pub fn analyze(
    f_inst: &Function,
    f_patched: &Function,
    spec: &PatchSpec,
    sites: &[TrampolineSite],
) -> Result<AnalyzeOutcome, AnalyzeError> {
    let mut v = analyze_patches(f_inst, f_patched, std::slice::from_ref(spec), sites)?;
    Ok(v.remove(0))
}

/// Turns an instruction RHS into an expression. `local` resolves names to
/// already-built subexpressions; unresolved names stay free variables.
pub(crate) fn rhs_to_expr(
    dest: Option<&str>,
    kind: &InstrKind,
    local: &dyn Fn(&str) -> Option<Expr>,
) -> Result<Expr, AnalyzeError> {
    let operand = |op: &Operand, ty: Ty| -> Expr {
        match op {
            Operand::Literal(v) => Expr::lit(ty, *v),
            Operand::Value(name) => local(name).unwrap_or_else(|| Expr::Var(name.clone())),
        }
    };
    Ok(match kind {
        InstrKind::Const { ty, value } => Expr::Const {
            ty: *ty,
            value: *value,
            symbol: dest.map(|d| d.to_string()),
        },
        InstrKind::Bin { op, ty, lhs, rhs } => Expr::Bin {
            op: *op,
            ty: *ty,
            lhs: Box::new(operand(lhs, *ty)),
            rhs: Box::new(operand(rhs, *ty)),
        },
        InstrKind::Cmp { pred, ty, lhs, rhs } => Expr::Cmp {
            pred: *pred,
            ty: *ty,
            lhs: Box::new(operand(lhs, *ty)),
            rhs: Box::new(operand(rhs, *ty)),
        },
        InstrKind::GetField { base, index } => Expr::Field {
            base: Box::new(operand(base, Ty::Ptr)),
            index: *index,
        },
        InstrKind::Load { ty, ptr } => Expr::Load {
            ty: *ty,
            ptr: Box::new(operand(ptr, Ty::Ptr)),
        },
        other => {
            return Err(AnalyzeError::UnsupportedDef(format!(
                "cannot express `{}` as a patch expression",
                crate::ir::print_instr(&crate::ir::Instr::new(
                    dest.map(|d| d.to_string()),
                    other.clone()
                ))
            )))
        }
    })
}
