//! Backward substitution: hoists the patch guard from the patch location to
//! the selected trampoline.
//!
//! The walk moves instruction by instruction from just before the patch back
//! to the site. A definition of a patch variable is inlined; anything else
//! is skipped and counted. Crossing upward out of a block follows the
//! dominator chain: a conditional predecessor contributes a path condition,
//! a rejoining diamond turns memory merges into select expressions, and
//! anything else (notably loop boundaries) is rejected — a complex region
//! always has a closer trampoline, so an admissible walk never crosses one.

use crate::instrument::TrampolineSite;
use crate::ir::{print_instr, Function, Instr, InstrKind, Operand, Ty};

use super::expr::Expr;
use super::site::AnalysisContext;
use super::{rhs_to_expr, AnalyzeError, SubstitutionTrace};

/// Alloca names whose cell address escapes: used as a stored value, call
/// argument, or return value. Stores through unrelated pointers can alias
/// an escaped cell, so loads from one cannot be resolved syntactically.
fn escaped_allocas(f: &Function) -> Vec<String> {
    let mut escaped = Vec::new();
    let allocas: Vec<&str> = f
        .blocks
        .iter()
        .flat_map(|b| &b.instrs)
        .filter(|i| matches!(i.kind, InstrKind::Alloca { .. }))
        .filter_map(|i| i.dest.as_deref())
        .collect();
    for b in &f.blocks {
        for i in &b.instrs {
            let escaping: Vec<&Operand> = match &i.kind {
                InstrKind::Store { value, .. } => vec![value],
                InstrKind::Call { args, .. } => args.iter().collect(),
                InstrKind::Ret { value } => value.iter().collect(),
                _ => vec![],
            };
            for op in escaping {
                if let Some(name) = op.value_name() {
                    if allocas.contains(&name) && !escaped.iter().any(|e| e == name) {
                        escaped.push(name.to_string());
                    }
                }
            }
        }
    }
    escaped
}

struct Walker<'a, 'b> {
    ctx: &'a AnalysisContext<'b>,
    escaped: Vec<String>,
    expr: Expr,
    trace: SubstitutionTrace,
}

impl<'a, 'b> Walker<'a, 'b> {
    /// Whether a pointer-valued name can alias cells other than its own:
    /// true for parameters, escaped allocas, and anything not an alloca.
    fn aliasable(&self, name: &str) -> bool {
        if self.ctx.f_pat.param_ty(name).is_some() {
            return true;
        }
        match self.ctx.f_pat.def_site(name) {
            Some((bi, ii)) => {
                !matches!(
                    self.ctx.f_pat.blocks[bi].instrs[ii].kind,
                    InstrKind::Alloca { .. }
                ) || self.escaped.iter().any(|e| e == name)
            }
            None => true,
        }
    }

    fn process_instr(&mut self, instr: &Instr) -> Result<(), AnalyzeError> {
        match &instr.kind {
            k if k.is_pure() || matches!(k, InstrKind::Load { .. }) => {
                let dest = instr.dest.as_deref().unwrap_or("");
                if !dest.is_empty() && self.expr.mentions(dest) {
                    let rhs = rhs_to_expr(Some(dest), k, &|_| None)?;
                    self.expr.substitute(dest, &rhs);
                    self.trace.steps.push(super::TraceStep {
                        instruction: print_instr(instr),
                        variable: dest.to_string(),
                        inlined: rhs.to_string(),
                        inlined_expr: rhs,
                    });
                } else {
                    self.trace.skipped += 1;
                }
            }
            InstrKind::Alloca { .. } => {
                let dest = instr.dest.as_deref().unwrap_or("");
                if !dest.is_empty() && self.expr.mentions(dest) {
                    return Err(AnalyzeError::UnsupportedDef(format!(
                        "patch depends on `%{dest}`, allocated after the trampoline"
                    )));
                }
                self.trace.skipped += 1;
            }
            InstrKind::Call { callee, args } => {
                if let Some(dest) = &instr.dest {
                    if self.expr.mentions(dest) {
                        return Err(AnalyzeError::UnsupportedDef(format!(
                            "patch variable `%{dest}` defined by call to `{callee}`"
                        )));
                    }
                }
                // A callee can write through pointer arguments; reject when
                // unresolved loads could observe that.
                let passes_ptr = args.iter().any(|a| {
                    a.value_name()
                        .map(|n| self.ctx.f_pat.value_ty(n) == Some(Ty::Ptr))
                        .unwrap_or(false)
                });
                if passes_ptr && self.expr.has_load() {
                    return Err(AnalyzeError::UnsupportedDef(format!(
                        "call to `{callee}` may clobber memory the patch reads"
                    )));
                }
                self.trace.skipped += 1;
            }
            InstrKind::Store { ptr, value } => self.handle_store(instr, ptr, value)?,
            // Terminators and trampolines are handled by block crossings.
            _ => {}
        }
        Ok(())
    }

    fn handle_store(
        &mut self,
        instr: &Instr,
        ptr: &Operand,
        value: &Operand,
    ) -> Result<(), AnalyzeError> {
        let Some(p) = ptr.value_name() else {
            return Err(AnalyzeError::UnsupportedDef(
                "store through a literal pointer".into(),
            ));
        };
        let load_vars = self.expr.load_pointer_vars();
        if load_vars.iter().any(|q| q == p) {
            // The reaching store for later loads of `p`: inline its value.
            let val = match value {
                Operand::Literal(v) => Expr::lit(Ty::I64, *v),
                Operand::Value(name) => Expr::Var(name.clone()),
            };
            let mut changed = false;
            self.expr.rewrite_loads_of(p, &mut |ty| {
                changed = true;
                match &val {
                    Expr::Const { value, .. } => Expr::lit(ty, *value),
                    other => other.clone(),
                }
            });
            debug_assert!(changed);
            self.trace.steps.push(super::TraceStep {
                instruction: print_instr(instr),
                variable: format!("*{p}"),
                inlined: val.to_string(),
                inlined_expr: val,
            });
            return Ok(());
        }
        // A store to something else: harmless unless it could alias a cell
        // the expression still reads.
        if self.expr.has_load() && self.aliasable(p) {
            let any_aliasable_load =
                load_vars.iter().any(|q| self.aliasable(q)) || self.has_computed_ptr_load();
            if any_aliasable_load {
                return Err(AnalyzeError::UnsupportedDef(format!(
                    "store through `%{p}` may clobber memory the patch reads"
                )));
            }
        }
        self.trace.skipped += 1;
        Ok(())
    }

    /// Whether any load leaf reads through a computed (non-variable) pointer.
    fn has_computed_ptr_load(&self) -> bool {
        fn walk(e: &Expr, found: &mut bool) {
            match e {
                Expr::Load { ptr, .. } => {
                    if !matches!(ptr.as_ref(), Expr::Var(_)) {
                        *found = true;
                    }
                    walk(ptr, found);
                }
                Expr::Var(_) | Expr::Const { .. } => {}
                Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                    walk(lhs, found);
                    walk(rhs, found);
                }
                Expr::Not(e) => walk(e, found),
                Expr::Field { base, .. } => walk(base, found),
                Expr::Select {
                    cond,
                    then_val,
                    else_val,
                    ..
                } => {
                    walk(cond, found);
                    walk(then_val, found);
                    walk(else_val, found);
                }
            }
        }
        let mut found = false;
        walk(&self.expr, &mut found);
        found
    }

    /// Resolves what a load of `q` would produce at the end of arm `arm`
    /// (entered from the diamond head): the last store's value with
    /// arm-local definitions inlined, or `None` when the arm leaves the
    /// cell untouched.
    fn resolve_arm_value(
        &self,
        arm: Option<usize>,
        q: &str,
        ty: Ty,
    ) -> Result<Option<Expr>, AnalyzeError> {
        let Some(arm_idx) = arm else { return Ok(None) };
        let block = &self.ctx.f_pat.blocks[arm_idx];
        // Arms must be simple: pure definitions and stores only.
        for i in &block.instrs {
            match &i.kind {
                k if k.is_pure() || matches!(k, InstrKind::Load { .. }) => {}
                InstrKind::Store { ptr, .. } => {
                    let known = ptr
                        .value_name()
                        .map(|p| !self.aliasable(p))
                        .unwrap_or(false);
                    if !known {
                        return Err(AnalyzeError::UnsupportedDef(format!(
                            "branch arm `{}` stores through a pointer that may alias patch memory",
                            block.label
                        )));
                    }
                }
                InstrKind::Br { .. } => {}
                other => {
                    return Err(AnalyzeError::UnsupportedPatchShape(format!(
                        "cannot absorb branch arm `{}`: {}",
                        block.label,
                        print_instr(&Instr::new(i.dest.clone(), other.clone()))
                    )))
                }
            }
        }
        let store_pos = block.instrs.iter().rposition(
            |i| matches!(&i.kind, InstrKind::Store { ptr, .. } if ptr.value_name() == Some(q)),
        );
        let Some(pos) = store_pos else {
            return Ok(None);
        };
        let InstrKind::Store { value, .. } = &block.instrs[pos].kind else {
            unreachable!()
        };
        let mut val = match value {
            Operand::Literal(v) => Expr::lit(ty, *v),
            Operand::Value(name) => Expr::Var(name.clone()),
        };
        // Inline arm-local definitions feeding the stored value.
        for i in block.instrs[..pos].iter().rev() {
            if let Some(dest) = &i.dest {
                if val.mentions(dest) {
                    let rhs = rhs_to_expr(Some(dest), &i.kind, &|_| None)?;
                    val.substitute(dest, &rhs);
                }
            }
        }
        Ok(Some(val))
    }

    /// Crossing upward out of `block`. Returns the predecessor block to
    /// continue in; its terminator has been accounted for.
    fn cross(&mut self, block: usize) -> Result<usize, AnalyzeError> {
        let cfg = &self.ctx.cfg_pat;
        let preds = &cfg.preds[block];
        let label = &cfg.labels[block];
        if preds.is_empty() {
            return Err(AnalyzeError::UnsupportedPatchShape(format!(
                "walk reached the entry of `{}` without meeting the trampoline",
                self.ctx.f_pat.name
            )));
        }
        let mut uniq: Vec<usize> = preds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if let [p] = uniq.as_slice() {
            let p = *p;
            if !cfg.dominates(p, block) {
                return Err(AnalyzeError::UnsupportedPatchShape(format!(
                    "patch in `{label}` is separated from the trampoline by a loop boundary"
                )));
            }
            match &self.ctx.f_pat.blocks[p].terminator().kind {
                InstrKind::Br { .. } => {}
                InstrKind::CondBr {
                    cond,
                    then_label,
                    else_label,
                } => {
                    if then_label != else_label {
                        let Some(cname) = cond.value_name() else {
                            return Err(AnalyzeError::UnsupportedPatchShape(
                                "path condition is a literal".into(),
                            ));
                        };
                        let positive = cfg.index[then_label.as_str()] == block;
                        let cond_expr = if positive {
                            Expr::Var(cname.to_string())
                        } else {
                            Expr::Var(cname.to_string()).negated()
                        };
                        self.trace.absorbed.push(format!(
                            "path condition {}%{cname} entering `{label}`",
                            if positive { "" } else { "!" }
                        ));
                        self.expr = Expr::and(
                            cond_expr,
                            std::mem::replace(&mut self.expr, Expr::lit(Ty::I1, 0)),
                        );
                    }
                }
                _ => {
                    return Err(AnalyzeError::UnsupportedPatchShape(format!(
                        "predecessor of `{label}` falls through unexpectedly"
                    )))
                }
            }
            return Ok(p);
        }
        // Rejoin block of a diamond: resolve memory merges per arm.
        let head = cfg.idom[block].ok_or_else(|| {
            AnalyzeError::UnsupportedPatchShape(format!("rejoin `{label}` has no dominator"))
        })?;
        for &p in &uniq {
            let direct = p == head;
            let single_block_arm = cfg.preds[p] == [head]
                && cfg.succs[p] == [block]
                && !matches!(
                    self.ctx.f_pat.blocks[p].terminator().kind,
                    InstrKind::CondBr { .. }
                );
            if !direct && !single_block_arm {
                return Err(AnalyzeError::UnsupportedPatchShape(format!(
                    "rejoin `{label}` merges more than one simple branch level"
                )));
            }
        }
        let InstrKind::CondBr {
            cond,
            then_label,
            else_label,
        } = &self.ctx.f_pat.blocks[head].terminator().kind
        else {
            return Err(AnalyzeError::UnsupportedPatchShape(format!(
                "dominator of rejoin `{label}` is not a conditional"
            )));
        };
        let Some(cname) = cond.value_name() else {
            return Err(AnalyzeError::UnsupportedPatchShape(
                "merge condition is a literal".into(),
            ));
        };
        let arm_of = |target: &str| -> Option<usize> {
            let t = cfg.index[target];
            if t == block {
                None
            } else {
                Some(t)
            }
        };
        let then_arm = arm_of(then_label);
        let else_arm = arm_of(else_label);
        for q in self.expr.load_pointer_vars() {
            let ty_probe = Ty::I64; // replaced per-leaf below
            let then_val = self.resolve_arm_value(then_arm, &q, ty_probe)?;
            let else_val = self.resolve_arm_value(else_arm, &q, ty_probe)?;
            if then_val.is_none() && else_val.is_none() {
                continue;
            }
            if self.aliasable(&q) {
                return Err(AnalyzeError::UnsupportedDef(format!(
                    "merge of stores through aliasable pointer `%{q}`"
                )));
            }
            let cname = cname.to_string();
            let q_owned = q.clone();
            let (tv, ev) = (then_val.clone(), else_val.clone());
            self.expr
                .rewrite_loads_of(&q_owned, &mut |ty| Expr::Select {
                    ty,
                    cond: Box::new(Expr::Var(cname.clone())),
                    then_val: Box::new(tv.clone().map(|e| retype_lit(e, ty)).unwrap_or(
                        Expr::Load {
                            ty,
                            ptr: Box::new(Expr::Var(q_owned.clone())),
                        },
                    )),
                    else_val: Box::new(ev.clone().map(|e| retype_lit(e, ty)).unwrap_or(
                        Expr::Load {
                            ty,
                            ptr: Box::new(Expr::Var(q_owned.clone())),
                        },
                    )),
                });
            self.trace.absorbed.push(format!(
                "merge of `%{q}` over `{}` absorbed as a select",
                cfg.labels[head]
            ));
        }
        Ok(head)
    }
}

/// A bare literal re-typed to the context it is used in; other expressions
/// pass through unchanged.
fn retype_lit(e: Expr, ty: Ty) -> Expr {
    match e {
        Expr::Const {
            value,
            symbol: None,
            ..
        } => Expr::Const {
            ty,
            value,
            symbol: None,
        },
        other => other,
    }
}

pub(crate) fn backward_substitute(
    ctx: &AnalysisContext<'_>,
    frag_idx: usize,
    site: &TrampolineSite,
) -> Result<(Expr, SubstitutionTrace), AnalyzeError> {
    let frag = &ctx.fragments[frag_idx];
    let (site_block, site_local) = ctx.orig_to_patched(&site.block, ctx.site_boundary(site))?;
    let mut walker = Walker {
        ctx,
        escaped: escaped_allocas(ctx.f_pat),
        expr: frag.guard.clone(),
        trace: SubstitutionTrace::default(),
    };
    let mut block = ctx
        .f_pat
        .block_index(&frag.block)
        .expect("fragment block exists");
    let mut upto = frag.start;
    loop {
        let lower = if block == site_block { site_local } else { 0 };
        for ii in (lower..upto).rev() {
            let instr = &ctx.f_pat.blocks[block].instrs[ii];
            walker.process_instr(instr)?;
        }
        if block == site_block {
            break;
        }
        block = walker.cross(block)?;
        // The predecessor's terminator was consumed by the crossing.
        upto = ctx.f_pat.blocks[block].instrs.len() - 1;
    }
    let expr = simplify_nots(walker.expr);
    Ok((expr, walker.trace))
}

/// Pushes negations into comparisons after substitution has exposed them.
fn simplify_nots(e: Expr) -> Expr {
    match e {
        Expr::Not(inner) => simplify_nots(*inner).negated(),
        Expr::Bin { op, ty, lhs, rhs } => Expr::Bin {
            op,
            ty,
            lhs: Box::new(simplify_nots(*lhs)),
            rhs: Box::new(simplify_nots(*rhs)),
        },
        Expr::Cmp { pred, ty, lhs, rhs } => Expr::Cmp {
            pred,
            ty,
            lhs: Box::new(simplify_nots(*lhs)),
            rhs: Box::new(simplify_nots(*rhs)),
        },
        Expr::Load { ty, ptr } => Expr::Load {
            ty,
            ptr: Box::new(simplify_nots(*ptr)),
        },
        Expr::Field { base, index } => Expr::Field {
            base: Box::new(simplify_nots(*base)),
            index,
        },
        Expr::Select {
            ty,
            cond,
            then_val,
            else_val,
        } => Expr::Select {
            ty,
            cond: Box::new(simplify_nots(*cond)),
            then_val: Box::new(simplify_nots(*then_val)),
            else_val: Box::new(simplify_nots(*else_val)),
        },
        leaf => leaf,
    }
}
