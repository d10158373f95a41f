//! Fragment resolution and best-trampoline selection.
//!
//! Patch coordinates are given against the patched function; trampolines
//! live in the instrumented vulnerable function. Both are mapped to the
//! vulnerable function's original coordinates: an inserted fragment always
//! ends in the guard's `cond_br`, so it is a suffix of its block and the
//! continuation block it creates inherits the split point as its origin.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::instrument::TrampolineSite;
use crate::ir::{analyze_cfg, is_complex, CfgInfo, Function, InstrKind, Operand, Region};

use super::expr::Expr;
use super::{ActionSpec, AnalyzeError, PatchSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Loop,
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegionDesc {
    pub kind: RegionKind,
    pub header: String,
}

/// Where the patch sits relative to loop/branch regions, which decides the
/// admissible trampolines: outside any region (closest dominating site),
/// inside a complex region (closest site in the same block), or inside a
/// simple region (dominating site; the region is absorbed into the guard).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Scenario {
    Outside,
    InsideComplex { region: RegionDesc },
    InsideSimple { region: RegionDesc },
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Outside => write!(f, "outside any region"),
            Scenario::InsideComplex { region } => {
                write!(
                    f,
                    "inside complex {:?} region at `{}`",
                    region.kind, region.header
                )
            }
            Scenario::InsideSimple { region } => {
                write!(
                    f,
                    "inside simple {:?} region at `{}`",
                    region.kind, region.header
                )
            }
        }
    }
}

/// One resolved patch fragment.
#[derive(Debug, Clone)]
pub(crate) struct Fragment {
    /// Patched-function block holding the fragment (always as a suffix).
    pub block: String,
    pub start: usize,
    /// Polarized guard: true means the action fires.
    pub guard: Expr,
    /// Original (vulnerable-function) block and insertion boundary.
    pub orig_block: String,
    pub orig_boundary: usize,
}

pub(crate) struct AnalysisContext<'a> {
    pub f_inst: &'a Function,
    pub cfg_inst: CfgInfo,
    pub f_pat: &'a Function,
    pub cfg_pat: CfgInfo,
    pub sites: Vec<TrampolineSite>,
    pub fragments: Vec<Fragment>,
    /// Patched block label -> (original block label, original offset).
    pub origin: HashMap<String, (String, usize)>,
}

/// Builds the guard expression for a fragment range and infers which
/// `cond_br` arm realizes the declared action.
pub(crate) fn build_fragment(
    f_pat: &Function,
    f_inst: &Function,
    spec: &PatchSpec,
) -> Result<(String, usize, Expr, String), AnalyzeError> {
    let range = &spec.range;
    let bi = f_pat.block_index(&range.block).ok_or_else(|| {
        AnalyzeError::InvalidSpec(format!("block `{}` not in patched function", range.block))
    })?;
    let block = &f_pat.blocks[bi];
    if range.end >= block.instrs.len() || range.start > range.end {
        return Err(AnalyzeError::InvalidSpec(format!(
            "range {} out of bounds for block of {} instructions",
            range,
            block.instrs.len()
        )));
    }
    if range.end != block.instrs.len() - 1 {
        return Err(AnalyzeError::UnsupportedPatchShape(
            "patch range must end at its block's guard branch".into(),
        ));
    }

    // Symbols referenced by the patch but defined neither inside it nor in
    // the vulnerable function mean the patch changed declarations the
    // runtime cannot reproduce (grown structs, new parameters).
    let defined_in_vuln =
        |name: &str| -> bool { f_inst.param_ty(name).is_some() || f_inst.def_site(name).is_some() };
    let mut range_defs: Vec<&str> = Vec::new();
    for i in &block.instrs[range.start..=range.end] {
        for op in i.kind.operands() {
            if let Some(name) = op.value_name() {
                if !range_defs.contains(&name) && !defined_in_vuln(name) {
                    return Err(AnalyzeError::UnsupportedPatchClass(format!(
                        "patch references `%{name}`, which does not exist in the vulnerable function"
                    )));
                }
            }
        }
        if let Some(d) = &i.dest {
            range_defs.push(d);
        }
    }

    // Guard expression from the range body.
    let mut locals: HashMap<String, Expr> = HashMap::new();
    for instr in &block.instrs[range.start..range.end] {
        match &instr.kind {
            k if k.is_pure() || matches!(k, InstrKind::Load { .. }) => {
                let Some(dest) = instr.dest.clone() else {
                    return Err(AnalyzeError::UnsupportedPatchShape(
                        "patch instruction produces no value".into(),
                    ));
                };
                let locals_ref = &locals;
                let e = super::rhs_to_expr(Some(&dest), k, &|n| locals_ref.get(n).cloned())?;
                locals.insert(dest, e);
            }
            InstrKind::Call { callee, .. } => {
                return Err(AnalyzeError::UnsupportedDef(format!(
                    "patch variable defined by call to `{callee}`"
                )))
            }
            InstrKind::Store { .. } => {
                return Err(AnalyzeError::UnsupportedPatchShape(
                    "patch writes program state before its guard".into(),
                ))
            }
            other => {
                return Err(AnalyzeError::UnsupportedPatchShape(format!(
                    "unsupported instruction inside patch range: {}",
                    crate::ir::print_instr(&crate::ir::Instr::new(
                        instr.dest.clone(),
                        other.clone()
                    ))
                )))
            }
        }
    }
    let InstrKind::CondBr {
        cond,
        then_label,
        else_label,
    } = &block.instrs[range.end].kind
    else {
        return Err(AnalyzeError::UnsupportedPatchShape(
            "patch range must end in a conditional guard".into(),
        ));
    };
    let cond_expr = match cond {
        Operand::Value(name) => locals
            .get(name)
            .cloned()
            .unwrap_or_else(|| Expr::Var(name.clone())),
        Operand::Literal(_) => {
            return Err(AnalyzeError::UnsupportedPatchShape(
                "guard condition is a literal".into(),
            ))
        }
    };

    // Which arm is the action arm?
    let matches_action = |label: &str| -> bool {
        match &spec.action {
            ActionSpec::Redirect { label: target } => {
                if label == target {
                    return true;
                }
                match f_pat.block(label) {
                    Some(b) => {
                        b.instrs.len() == 1
                            && matches!(&b.instrs[0].kind, InstrKind::Br { target: t } if t == target)
                    }
                    None => false,
                }
            }
            ActionSpec::Drop { code } => {
                let Some(b) = f_pat.block(label) else {
                    return false;
                };
                if f_inst.block(label).is_some() {
                    return false; // drop arms are new blocks, not shared code
                }
                match b.instrs.as_slice() {
                    [one] => {
                        matches!(&one.kind, InstrKind::Ret { value: Some(Operand::Literal(v)) } if v == code)
                    }
                    [c, r] => {
                        let const_val = match (&c.dest, &c.kind) {
                            (Some(d), InstrKind::Const { value, .. }) => Some((d.clone(), *value)),
                            _ => None,
                        };
                        match (&r.kind, const_val) {
                            (
                                InstrKind::Ret {
                                    value: Some(Operand::Value(v)),
                                },
                                Some((d, val)),
                            ) => *v == d && val == *code,
                            (
                                InstrKind::Ret {
                                    value: Some(Operand::Literal(v)),
                                },
                                _,
                            ) => v == code,
                            _ => false,
                        }
                    }
                    _ => false,
                }
            }
        }
    };
    let then_is_action = matches_action(then_label);
    let else_is_action = matches_action(else_label);
    let (guard, cont_label) = match (then_is_action, else_is_action) {
        (true, false) => (cond_expr, else_label.clone()),
        (false, true) => (cond_expr.negated(), then_label.clone()),
        _ => {
            return Err(AnalyzeError::UnsupportedPatchShape(format!(
                "declared action `{}` does not match either guard arm",
                spec.action
            )))
        }
    };
    Ok((range.block.clone(), range.start, guard, cont_label))
}

impl<'a> AnalysisContext<'a> {
    pub fn build(
        f_inst: &'a Function,
        f_pat: &'a Function,
        specs: &[PatchSpec],
        all_sites: &[TrampolineSite],
    ) -> Result<Self, AnalyzeError> {
        for spec in specs {
            if spec.function != f_pat.name || spec.function != f_inst.name {
                return Err(AnalyzeError::InvalidSpec(format!(
                    "patch targets `{}` but functions are `{}`/`{}`",
                    spec.function, f_inst.name, f_pat.name
                )));
            }
        }
        let sites: Vec<TrampolineSite> = all_sites
            .iter()
            .filter(|s| s.function == f_inst.name)
            .cloned()
            .collect();
        if sites.is_empty() {
            return Err(AnalyzeError::NoReachableTrampoline(format!(
                "function `{}` carries no trampolines; instrument it first",
                f_inst.name
            )));
        }
        let cfg_inst = analyze_cfg(f_inst)?;
        let cfg_pat = analyze_cfg(f_pat)?;

        // Fragment construction, then origin-map fixpoint.
        let mut raw = Vec::new();
        for spec in specs {
            raw.push(build_fragment(f_pat, f_inst, spec)?);
        }
        let mut origin: HashMap<String, (String, usize)> = f_pat
            .blocks
            .iter()
            .filter(|b| f_inst.block(&b.label).is_some())
            .map(|b| (b.label.clone(), (b.label.clone(), 0)))
            .collect();
        let mut resolved: Vec<Option<(String, usize)>> = vec![None; raw.len()];
        loop {
            let mut progressed = false;
            for (i, (block, start, _, cont)) in raw.iter().enumerate() {
                if resolved[i].is_some() {
                    continue;
                }
                if let Some((orig, off)) = origin.get(block).cloned() {
                    let boundary = off + start;
                    resolved[i] = Some((orig.clone(), boundary));
                    origin.entry(cont.clone()).or_insert((orig, boundary));
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        let mut fragments = Vec::new();
        for ((block, start, guard, cont), origin_pos) in raw.into_iter().zip(resolved) {
            let Some((orig_block, orig_boundary)) = origin_pos else {
                return Err(AnalyzeError::InvalidSpec(format!(
                    "patch block `{block}` has no counterpart in the vulnerable function"
                )));
            };
            let _ = cont;
            fragments.push(Fragment {
                block,
                start,
                guard,
                orig_block,
                orig_boundary,
            });
        }
        Ok(AnalysisContext {
            f_inst,
            cfg_inst,
            f_pat,
            cfg_pat,
            sites,
            fragments,
            origin,
        })
    }

    /// Number of original instructions a patched block holds: everything
    /// before its fragment, or the whole block if it has none.
    fn segment_len(&self, pat_label: &str) -> usize {
        self.fragments
            .iter()
            .find(|f| f.block == pat_label)
            .map(|f| f.start)
            .unwrap_or_else(|| {
                self.f_pat
                    .block(pat_label)
                    .map(|b| b.instrs.len())
                    .unwrap_or(0)
            })
    }

    /// Maps an original insertion boundary to patched-function coordinates:
    /// (block index in `f_pat`, instruction index). A boundary on a split
    /// point belongs to the earlier segment, matching the convention that a
    /// trampoline precedes a patch inserted at the same spot.
    pub fn orig_to_patched(&self, block: &str, idx: usize) -> Result<(usize, usize), AnalyzeError> {
        let mut best: Option<(usize, usize)> = None; // (block index, offset)
        for (pat_label, (orig_label, off)) in &self.origin {
            if orig_label != block || *off > idx || idx > *off + self.segment_len(pat_label) {
                continue;
            }
            let bi = self
                .f_pat
                .block_index(pat_label)
                .expect("origin keys are patched labels");
            let better = match best {
                None => true,
                Some((bbi, boff)) => *off < boff || (*off == boff && bi < bbi),
            };
            if better {
                best = Some((bi, *off));
            }
        }
        let (bi, off) = best.ok_or_else(|| {
            AnalyzeError::InvalidSpec(format!("no patched block covers `{block}`:{idx}"))
        })?;
        Ok((bi, idx - off))
    }

    /// Insertion boundary of a site in original coordinates: its index minus
    /// the trampolines that precede it in the same block.
    pub fn site_boundary(&self, site: &TrampolineSite) -> usize {
        let before = self
            .sites
            .iter()
            .filter(|s| s.block == site.block && s.index < site.index)
            .count();
        site.index - before
    }

    /// Position the patch boundary occupies in instrumented coordinates.
    fn boundary_in_inst(&self, block: &str, boundary: usize) -> usize {
        let tramps_before = self
            .sites
            .iter()
            .filter(|s| s.block == block && self.site_boundary(s) <= boundary)
            .count();
        boundary + tramps_before
    }

    /// Scenario classification for fragment `i`. Regions are read off the
    /// vulnerable function: the patch's own fail arm would otherwise break
    /// the very rejoin that forms the region around it.
    pub fn classify(&self, i: usize) -> Scenario {
        let frag = &self.fragments[i];
        let bi = self
            .cfg_inst
            .index
            .get(frag.orig_block.as_str())
            .copied()
            .expect("fragment origin block exists");
        match self.cfg_inst.innermost_region_containing(bi) {
            None => Scenario::Outside,
            Some(region) => {
                let desc = match region {
                    Region::Loop(l) => RegionDesc {
                        kind: RegionKind::Loop,
                        header: self.cfg_inst.labels[l.header].clone(),
                    },
                    Region::Branch(b) => RegionDesc {
                        kind: RegionKind::Branch,
                        header: self.cfg_inst.labels[b.header].clone(),
                    },
                };
                if is_complex(region, self.f_inst) {
                    Scenario::InsideComplex { region: desc }
                } else {
                    Scenario::InsideSimple { region: desc }
                }
            }
        }
    }

    /// Instruction distance from a site to the patch boundary along the
    /// dominator chain, in instrumented coordinates. `None` when the site's
    /// block neither matches nor dominates the patch block.
    fn distance(&self, site: &TrampolineSite, frag: &Fragment) -> Option<u64> {
        let site_block = self.cfg_inst.index.get(&site.block).copied()?;
        let patch_block = self.cfg_inst.index.get(&frag.orig_block).copied()?;
        let patch_pos = self.boundary_in_inst(&frag.orig_block, frag.orig_boundary);
        if site_block == patch_block {
            if site.index >= patch_pos {
                return None;
            }
            return Some((patch_pos - site.index - 1) as u64);
        }
        if !self.cfg_inst.dominates(site_block, patch_block) {
            return None;
        }
        // Chain from the patch block up the dominator tree to the site block.
        let mut between = patch_pos as u64;
        let mut cur = patch_block;
        loop {
            let parent = self.cfg_inst.idom[cur]?;
            if parent == site_block {
                let len = self.f_inst.blocks[site_block].instrs.len() as u64;
                return Some(between + (len - site.index as u64 - 1));
            }
            between += self.f_inst.blocks[parent].instrs.len() as u64;
            cur = parent;
        }
    }

    /// The best trampoline for fragment `i`: the closest admissible site,
    /// ties broken toward the higher site id (later in layout).
    pub fn find_best_trampoline(
        &self,
        i: usize,
        scenario: &Scenario,
    ) -> Result<TrampolineSite, AnalyzeError> {
        let frag = &self.fragments[i];
        let same_block_only = matches!(scenario, Scenario::InsideComplex { .. });
        let mut best: Option<(u64, &TrampolineSite)> = None;
        for site in &self.sites {
            let admissible = if same_block_only {
                site.block == frag.orig_block && self.site_boundary(site) <= frag.orig_boundary
            } else {
                site.dominates_exit
                    && self
                        .cfg_inst
                        .index
                        .get(&site.block)
                        .zip(self.cfg_inst.index.get(&frag.orig_block))
                        .map(|(&s, &p)| self.cfg_inst.dominates(s, p))
                        .unwrap_or(false)
            };
            if !admissible {
                continue;
            }
            let Some(d) = self.distance(site, frag) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bd, bs)) => d < bd || (d == bd && site.id > bs.id),
            };
            if better {
                best = Some((d, site));
            }
        }
        let (_, site) = best.ok_or_else(|| {
            AnalyzeError::NoReachableTrampoline(format!(
                "no admissible site before `{}`:{} in `{}`",
                frag.orig_block, frag.orig_boundary, self.f_inst.name
            ))
        })?;
        // Selection table invariant: dominate the patch block, or share it.
        let sb = self.cfg_inst.index[&site.block];
        let pb = self.cfg_inst.index[&frag.orig_block];
        debug_assert!(if same_block_only {
            sb == pb
        } else {
            self.cfg_inst.dominates(sb, pb)
        });
        Ok(site.clone())
    }
}
