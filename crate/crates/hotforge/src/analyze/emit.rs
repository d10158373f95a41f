//! Hotpatch emission: turns a substituted guard expression into a frame-
//! taking IR function. The body reads its required variables from the frame,
//! evaluates the guard, and returns either the packed action word or PASS.
//! Named constants fold to their literal values here.

use crate::instrument::TrampolineSite;
use crate::ir::{Block, Function, Instr, InstrKind, Operand, Ty};
use crate::runtime::{encode_action, Op};

use super::expr::Expr;
use super::site::AnalysisContext;
use super::{ActionDesc, ActionSpec, AnalyzeError, Hotpatch, PatchSpec};

fn sanitize(tag: &str) -> String {
    let mut out = String::new();
    for c in tag.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

struct BodyBuilder {
    blocks: Vec<Block>,
    current: usize,
    next_tmp: u32,
    next_sel: u32,
    reserved: Vec<String>,
}

impl BodyBuilder {
    fn new(reserved: Vec<String>) -> Self {
        BodyBuilder {
            blocks: vec![Block {
                label: "entry".into(),
                instrs: vec![],
            }],
            current: 0,
            next_tmp: 0,
            next_sel: 0,
            reserved,
        }
    }

    fn push(&mut self, instr: Instr) {
        self.blocks[self.current].instrs.push(instr);
    }

    fn fresh(&mut self) -> String {
        loop {
            let name = format!("t{}", self.next_tmp);
            self.next_tmp += 1;
            if !self.reserved.contains(&name) {
                return name;
            }
        }
    }

    fn add_block(&mut self, label: String) -> usize {
        self.blocks.push(Block {
            label,
            instrs: vec![],
        });
        self.blocks.len() - 1
    }

    fn emit(&mut self, e: &Expr) -> Operand {
        match e {
            Expr::Var(name) => Operand::Value(name.clone()),
            Expr::Const { value, .. } => Operand::Literal(*value),
            Expr::Bin { op, ty, lhs, rhs } => {
                let l = self.emit(lhs);
                let r = self.emit(rhs);
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::Bin {
                        op: *op,
                        ty: *ty,
                        lhs: l,
                        rhs: r,
                    },
                ));
                Operand::Value(dest)
            }
            Expr::Cmp { pred, ty, lhs, rhs } => {
                let l = self.emit(lhs);
                let r = self.emit(rhs);
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::Cmp {
                        pred: *pred,
                        ty: *ty,
                        lhs: l,
                        rhs: r,
                    },
                ));
                Operand::Value(dest)
            }
            Expr::Not(inner) => {
                let v = self.emit(inner);
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::Bin {
                        op: crate::ir::BinOp::Xor,
                        ty: Ty::I1,
                        lhs: v,
                        rhs: Operand::Literal(1),
                    },
                ));
                Operand::Value(dest)
            }
            Expr::Load { ty, ptr } => {
                let p = self.emit(ptr);
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::Load { ty: *ty, ptr: p },
                ));
                Operand::Value(dest)
            }
            Expr::Field { base, index } => {
                let b = self.emit(base);
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::GetField {
                        base: b,
                        index: *index,
                    },
                ));
                Operand::Value(dest)
            }
            Expr::Select {
                ty,
                cond,
                then_val,
                else_val,
            } => {
                // Branch code absorbed from the source: materialize the merge
                // through a scratch cell.
                let sel = self.next_sel;
                self.next_sel += 1;
                let cell = self.fresh();
                self.push(Instr::new(
                    Some(cell.clone()),
                    InstrKind::Alloca { ty: *ty },
                ));
                let ev = self.emit(else_val);
                self.push(Instr::new(
                    None,
                    InstrKind::Store {
                        ptr: Operand::Value(cell.clone()),
                        value: ev,
                    },
                ));
                let c = self.emit(cond);
                let then_label = format!("sel{sel}_then");
                let join_label = format!("sel{sel}_join");
                self.push(Instr::new(
                    None,
                    InstrKind::CondBr {
                        cond: c,
                        then_label: then_label.clone(),
                        else_label: join_label.clone(),
                    },
                ));
                let then_block = self.add_block(then_label);
                self.current = then_block;
                let tv = self.emit(then_val);
                self.push(Instr::new(
                    None,
                    InstrKind::Store {
                        ptr: Operand::Value(cell.clone()),
                        value: tv,
                    },
                ));
                self.push(Instr::new(
                    None,
                    InstrKind::Br {
                        target: join_label.clone(),
                    },
                ));
                let join_block = self.add_block(join_label);
                self.current = join_block;
                let dest = self.fresh();
                self.push(Instr::new(
                    Some(dest.clone()),
                    InstrKind::Load {
                        ty: *ty,
                        ptr: Operand::Value(cell),
                    },
                ));
                Operand::Value(dest)
            }
        }
    }
}

/// Emits the hotpatch for one fragment: frame reads, guard evaluation, and
/// the action/PASS returns. `ordinal` numbers the fragment within its CVE.
pub(crate) fn emit_hotpatch(
    ctx: &AnalysisContext<'_>,
    spec: &PatchSpec,
    site: &TrampolineSite,
    expr: &Expr,
    ordinal: usize,
) -> Result<Hotpatch, AnalyzeError> {
    let required_vars = expr.free_vars();

    // Every free variable must be bound when the trampoline fires: defined
    // at a position that dominates the site in code both functions share.
    let (site_block_pat, site_local) = ctx.orig_to_patched(&site.block, ctx.site_boundary(site))?;
    for var in &required_vars {
        if ctx.f_pat.param_ty(var).is_some() {
            continue;
        }
        let live_in_patched = match ctx.f_pat.def_site(var) {
            Some((bi, ii)) => {
                if bi == site_block_pat {
                    ii < site_local
                } else {
                    ctx.cfg_pat.dominates(bi, site_block_pat)
                }
            }
            None => false,
        };
        // The binding is marshaled from the vulnerable function, so the
        // definition must exist there too (not inside another fragment).
        let exists_in_vuln =
            ctx.f_inst.param_ty(var).is_some() || ctx.f_inst.def_site(var).is_some();
        if !live_in_patched || !exists_in_vuln {
            return Err(AnalyzeError::VariableNotLive(format!(
                "`%{var}` is not live at trampoline {}",
                site.id
            )));
        }
    }

    // Action encoding. Redirect targets resolve to a block index of the
    // instrumented function, which is what the dispatcher jumps in.
    let action = match &spec.action {
        ActionSpec::Drop { code } => ActionDesc {
            op: Op::Drop,
            ret_code: *code,
            target_label: None,
            target_index: None,
        },
        ActionSpec::Redirect { label } => {
            let idx = ctx.f_inst.block_index(label).ok_or_else(|| {
                AnalyzeError::UnsupportedPatchClass(format!(
                    "redirect target `{label}` does not exist in the vulnerable function"
                ))
            })?;
            ActionDesc {
                op: Op::Redirect,
                ret_code: 0,
                target_label: Some(label.clone()),
                target_index: Some(idx),
            }
        }
    };
    let word = encode_action(action.op, action.ret_code, action.target_index.unwrap_or(0))
        .map_err(|e| AnalyzeError::InvalidSpec(e.to_string()))?;

    let name = format!("filter_{}_{ordinal}", sanitize(&spec.cve_id));
    let mut b = BodyBuilder::new(required_vars.clone());

    // Frame parameter: avoid colliding with a marshaled variable name.
    let mut frame = "frame".to_string();
    while required_vars.contains(&frame) {
        frame.insert(0, '_');
    }
    for (slot, var) in required_vars.iter().enumerate() {
        b.push(Instr::new(
            Some(var.clone()),
            InstrKind::Call {
                callee: "frame_get".into(),
                args: vec![Operand::Value(frame.clone()), Operand::Literal(slot as i64)],
            },
        ));
    }
    let guard = b.emit(expr);
    let guard = match guard {
        Operand::Value(_) => guard,
        // A constant guard still needs an i1 value for cond_br.
        Operand::Literal(v) => {
            let dest = b.fresh();
            b.push(Instr::new(
                Some(dest.clone()),
                InstrKind::Cmp {
                    pred: crate::ir::CmpPred::Ne,
                    ty: Ty::I64,
                    lhs: Operand::Literal(v),
                    rhs: Operand::Literal(0),
                },
            ));
            Operand::Value(dest)
        }
    };
    b.push(Instr::new(
        None,
        InstrKind::CondBr {
            cond: guard,
            then_label: "apply".into(),
            else_label: "pass".into(),
        },
    ));
    let apply = b.add_block("apply".into());
    b.current = apply;
    b.push(Instr::new(
        None,
        InstrKind::Ret {
            value: Some(Operand::Literal(word)),
        },
    ));
    let pass = b.add_block("pass".into());
    b.current = pass;
    b.push(Instr::new(
        None,
        InstrKind::Ret {
            value: Some(Operand::Literal(0)),
        },
    ));

    let body = Function {
        name: name.clone(),
        params: vec![(frame, Ty::Ptr)],
        blocks: b.blocks,
    };
    Ok(Hotpatch {
        name,
        body,
        target_fn: ctx.f_inst.name.clone(),
        site_id: site.id,
        site_kind: site.kind,
        required_vars,
        action,
        cve_id: spec.cve_id.clone(),
    })
}
