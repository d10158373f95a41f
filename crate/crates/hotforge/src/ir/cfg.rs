//! Control-flow analyses: dominators, postdominators, natural loops, and
//! branch regions, plus the complexity classification that decides where
//! trampolines are required.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use super::{Function, InstrKind, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CfgError {
    IrreducibleControlFlow { function: String },
    UnknownLabel { function: String, label: String },
}

impl fmt::Display for CfgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CfgError::IrreducibleControlFlow { function } => {
                write!(f, "irreducible control flow in function `{function}`")
            }
            CfgError::UnknownLabel { function, label } => {
                write!(
                    f,
                    "branch to unknown label `{label}` in function `{function}`"
                )
            }
        }
    }
}

impl std::error::Error for CfgError {}

/// A natural loop: unique header, body blocks, exit blocks outside the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopInfo {
    pub header: usize,
    pub body: BTreeSet<usize>,
    pub exits: Vec<usize>,
    /// Same-kind nesting depth: 1 + number of enclosing loops.
    pub depth: u32,
    /// Transitive closure of values feeding the loop-exiting conditions.
    pub condition_values: Vec<String>,
}

/// One arm of a conditional whose paths rejoin. An `if`/`else` contributes
/// one region per non-empty arm; both share the rejoin block as their exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchRegion {
    /// Block whose `cond_br` opens the region.
    pub cond_block: usize,
    /// First block of the arm body.
    pub header: usize,
    pub body: BTreeSet<usize>,
    pub exits: Vec<usize>,
    /// Same-kind nesting depth: 1 + number of enclosing branch regions.
    pub depth: u32,
    pub condition_values: Vec<String>,
    /// Whether this arm is the `cond_br` taken (first) target.
    pub taken_arm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region<'a> {
    Loop(&'a LoopInfo),
    Branch(&'a BranchRegion),
}

impl<'a> Region<'a> {
    pub fn depth(&self) -> u32 {
        match self {
            Region::Loop(l) => l.depth,
            Region::Branch(b) => b.depth,
        }
    }

    pub fn body(&self) -> &'a BTreeSet<usize> {
        match self {
            Region::Loop(l) => &l.body,
            Region::Branch(b) => &b.body,
        }
    }

    pub fn condition_values(&self) -> &'a [String] {
        match self {
            Region::Loop(l) => &l.condition_values,
            Region::Branch(b) => &b.condition_values,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CfgInfo {
    pub labels: Vec<String>,
    pub index: HashMap<String, usize>,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    /// Immediate dominator per block; `None` for the entry.
    pub idom: Vec<Option<usize>>,
    /// Immediate postdominator per block; `None` when paths only meet at exit.
    pub ipdom: Vec<Option<usize>>,
    pub loops: Vec<LoopInfo>,
    pub branch_regions: Vec<BranchRegion>,
    /// Blocks whose terminator is `ret`.
    pub exit_blocks: Vec<usize>,
}

impl CfgInfo {
    pub fn block_count(&self) -> usize {
        self.labels.len()
    }

    /// Whether block `a` dominates block `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur] {
                Some(next) => cur = next,
                None => return false,
            }
        }
    }

    /// Whether there is a CFG path from `a` to `b` (reflexive).
    pub fn reaches(&self, a: usize, b: usize) -> bool {
        let mut seen = vec![false; self.block_count()];
        let mut stack = vec![a];
        while let Some(n) = stack.pop() {
            if n == b {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.succs[n].iter().copied());
        }
        false
    }

    /// Whether `block` dominates every `ret` block of the function.
    pub fn dominates_all_exits(&self, block: usize) -> bool {
        self.exit_blocks.iter().all(|&e| self.dominates(block, e))
    }

    /// Innermost loop or branch region whose body contains `block`, if any.
    /// Ties between a loop and a branch region are broken toward the smaller
    /// body, then toward the branch region.
    pub fn innermost_region_containing(&self, block: usize) -> Option<Region<'_>> {
        let mut best: Option<Region> = None;
        let mut best_size = usize::MAX;
        for l in &self.loops {
            if l.body.contains(&block) && l.body.len() < best_size {
                best = Some(Region::Loop(l));
                best_size = l.body.len();
            }
        }
        for b in &self.branch_regions {
            if b.body.contains(&block) && b.body.len() <= best_size {
                best = Some(Region::Branch(b));
                best_size = b.body.len();
            }
        }
        best
    }
}

type BlockGraph = (HashMap<String, usize>, Vec<Vec<usize>>, Vec<Vec<usize>>);

fn block_graph(f: &Function) -> Result<BlockGraph, CfgError> {
    let index: HashMap<String, usize> = f
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.clone(), i))
        .collect();
    let mut succs = vec![Vec::new(); f.blocks.len()];
    let mut preds = vec![Vec::new(); f.blocks.len()];
    for (i, b) in f.blocks.iter().enumerate() {
        for label in b.successor_labels() {
            let j = *index.get(label).ok_or_else(|| CfgError::UnknownLabel {
                function: f.name.clone(),
                label: label.to_string(),
            })?;
            succs[i].push(j);
            preds[j].push(i);
        }
    }
    Ok((index, succs, preds))
}

fn postorder(succs: &[Vec<usize>], entry: usize) -> Vec<usize> {
    let mut order = Vec::new();
    let mut state = vec![0u8; succs.len()]; // 0 unvisited, 1 on stack, 2 done
    let mut stack = vec![(entry, 0usize)];
    state[entry] = 1;
    while let Some(&mut (n, ref mut i)) = stack.last_mut() {
        if *i < succs[n].len() {
            let s = succs[n][*i];
            *i += 1;
            if state[s] == 0 {
                state[s] = 1;
                stack.push((s, 0));
            }
        } else {
            order.push(n);
            state[n] = 2;
            stack.pop();
        }
    }
    order
}

/// Iterative dominator computation (Cooper-Harvey-Kennedy) over the given
/// edges. Returns `idom` with `None` for `entry` and unreachable nodes.
fn compute_idom(
    n: usize,
    entry: usize,
    succs: &[Vec<usize>],
    preds: &[Vec<usize>],
) -> Vec<Option<usize>> {
    let post = postorder(succs, entry);
    let mut post_idx = vec![usize::MAX; n];
    for (i, &b) in post.iter().enumerate() {
        post_idx[b] = i;
    }
    let rpo: Vec<usize> = post.iter().rev().copied().collect();
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[entry] = Some(entry);
    let intersect = |idom: &[Option<usize>], post_idx: &[usize], mut a: usize, mut b: usize| {
        while a != b {
            while post_idx[a] < post_idx[b] {
                a = idom[a].unwrap();
            }
            while post_idx[b] < post_idx[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &rpo {
            if b == entry {
                continue;
            }
            let mut new_idom = None;
            for &p in &preds[b] {
                if post_idx[p] == usize::MAX || idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, &post_idx, p, cur),
                });
            }
            if let Some(ni) = new_idom {
                if idom[b] != Some(ni) {
                    idom[b] = Some(ni);
                    changed = true;
                }
            }
        }
    }
    idom[entry] = None;
    idom
}

/// Postdominators via dominators of the reversed CFG with a virtual exit
/// fed by every `ret` block. `None` means the virtual exit is the ipdom.
fn compute_ipdom(n: usize, succs: &[Vec<usize>], exit_blocks: &[usize]) -> Vec<Option<usize>> {
    // Node n is the virtual exit.
    let total = n + 1;
    let mut rsuccs = vec![Vec::new(); total];
    let mut rpreds = vec![Vec::new(); total];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            rsuccs[s].push(b);
            rpreds[b].push(s);
        }
    }
    for &e in exit_blocks {
        rsuccs[n].push(e);
        rpreds[e].push(n);
    }
    let idom = compute_idom(total, n, &rsuccs, &rpreds);
    (0..n)
        .map(|b| match idom[b] {
            Some(p) if p < n => Some(p),
            _ => None,
        })
        .collect()
}

/// Transitive closure of value names feeding `seeds`, walked backward through
/// pure instructions only. Loads, calls, allocas, and parameters end a chain
/// but are themselves included, so a `load ptr` result stays visible to the
/// complexity test.
pub fn condition_closure(f: &Function, seeds: &[String]) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = BTreeSet::new();
    let mut work: Vec<String> = seeds.to_vec();
    while let Some(name) = work.pop() {
        if !out.insert(name.clone()) {
            continue;
        }
        if let Some((bi, ii)) = f.def_site(&name) {
            let kind = &f.blocks[bi].instrs[ii].kind;
            if kind.is_pure() {
                for op in kind.operands() {
                    if let Some(v) = op.value_name() {
                        work.push(v.to_string());
                    }
                }
            }
        }
    }
    out
}

/// A region is complex when its same-kind nesting depth exceeds 1 or its
/// controlling condition depends on pointers, pointer loads, or call results,
/// i.e. values static analysis cannot resolve.
pub fn is_complex(region: Region<'_>, f: &Function) -> bool {
    if region.depth() > 1 {
        return true;
    }
    let closure = condition_closure(f, region.condition_values());
    closure.iter().any(|name| {
        if f.value_ty(name) == Some(Ty::Ptr) {
            return true;
        }
        match f.def_site(name) {
            Some((bi, ii)) => match &f.blocks[bi].instrs[ii].kind {
                InstrKind::Call { .. } => true,
                InstrKind::Load { ty, .. } => *ty == Ty::Ptr,
                _ => false,
            },
            None => false,
        }
    })
}

/// Direct condition operands of every `cond_br` in `blocks` that can leave
/// `body` (or of all `cond_br`s when `body` is `None`).
fn exiting_conditions(f: &Function, blocks: &BTreeSet<usize>) -> Vec<String> {
    let mut out = Vec::new();
    for &bi in blocks {
        if let InstrKind::CondBr {
            cond,
            then_label,
            else_label,
        } = &f.blocks[bi].terminator().kind
        {
            let t = f.block_index(then_label);
            let e = f.block_index(else_label);
            let leaves = [t, e]
                .iter()
                .any(|x| x.map(|i| !blocks.contains(&i)).unwrap_or(false));
            if leaves {
                if let Some(v) = cond.value_name() {
                    out.push(v.to_string());
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Computes dominators, loops, and branch regions for a function.
///
/// Loops are natural loops found through back edges (`u -> h` where `h`
/// dominates `u`); any cycle left over after removing back edges means the
/// CFG is irreducible and is rejected.
pub fn analyze_cfg(f: &Function) -> Result<CfgInfo, CfgError> {
    let (index, succs, preds) = block_graph(f)?;
    let n = f.blocks.len();
    let idom = compute_idom(n, 0, &succs, &preds);
    let exit_blocks: Vec<usize> = f
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.terminator().kind, InstrKind::Ret { .. }))
        .map(|(i, _)| i)
        .collect();
    let ipdom = compute_ipdom(n, &succs, &exit_blocks);

    // Natural loops from back edges, grouped by header.
    let dominates = |a: usize, b: usize| {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match idom[cur] {
                Some(next) => cur = next,
                None => return false,
            }
        }
    };
    let mut back_edges: Vec<(usize, usize)> = Vec::new();
    for (u, ss) in succs.iter().enumerate() {
        for &h in ss {
            if dominates(h, u) {
                back_edges.push((u, h));
            }
        }
    }
    let mut loops_by_header: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for &(u, h) in &back_edges {
        let body = loops_by_header
            .entry(h)
            .or_insert_with(|| BTreeSet::from([h]));
        // Reverse flood from the latch, stopping at the header.
        let mut stack = vec![u];
        while let Some(b) = stack.pop() {
            if body.insert(b) {
                stack.extend(preds[b].iter().copied());
            }
        }
    }

    // Reducibility: removing back edges must leave a DAG.
    {
        let back: HashSet<(usize, usize)> = back_edges.iter().copied().collect();
        let mut indeg = vec![0usize; n];
        for (u, ss) in succs.iter().enumerate() {
            for &v in ss {
                if !back.contains(&(u, v)) {
                    indeg[v] += 1;
                }
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&b| indeg[b] == 0).collect();
        let mut seen = 0;
        while let Some(b) = queue.pop() {
            seen += 1;
            for &v in &succs[b] {
                if !back.contains(&(b, v)) {
                    indeg[v] -= 1;
                    if indeg[v] == 0 {
                        queue.push(v);
                    }
                }
            }
        }
        if seen != n {
            return Err(CfgError::IrreducibleControlFlow {
                function: f.name.clone(),
            });
        }
    }

    let mut headers: Vec<usize> = loops_by_header.keys().copied().collect();
    headers.sort();
    let mut loops: Vec<LoopInfo> = headers
        .iter()
        .map(|&h| {
            let body = loops_by_header[&h].clone();
            let mut exits: Vec<usize> = body
                .iter()
                .flat_map(|&b| succs[b].iter().copied())
                .filter(|s| !body.contains(s))
                .collect();
            exits.sort();
            exits.dedup();
            LoopInfo {
                header: h,
                condition_values: exiting_conditions(f, &body),
                body,
                exits,
                depth: 1,
            }
        })
        .collect();
    // Depth by body containment among loops.
    let bodies: Vec<BTreeSet<usize>> = loops.iter().map(|l| l.body.clone()).collect();
    for (i, l) in loops.iter_mut().enumerate() {
        l.depth = 1 + bodies
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != i && b.contains(&l.header) && !bodies[i].is_superset(b))
            .count() as u32;
    }

    // Branch regions: one per non-empty arm of a cond_br whose paths rejoin.
    let mut branch_regions: Vec<BranchRegion> = Vec::new();
    for (d, block) in f.blocks.iter().enumerate() {
        let InstrKind::CondBr {
            cond,
            then_label,
            else_label,
        } = &block.terminator().kind
        else {
            continue;
        };
        let Some(rejoin) = ipdom[d] else { continue };
        let arms = [
            (index[then_label.as_str()], true),
            (index[else_label.as_str()], false),
        ];
        for (arm, taken_arm) in arms {
            if arm == rejoin {
                continue; // empty arm: edge straight to the rejoin block
            }
            // The arm forms a forward region only when the conditional truly
            // opens it; a back edge target (loop header) is not a branch arm.
            if dominates(arm, d) {
                continue;
            }
            let mut body = BTreeSet::new();
            let mut stack = vec![arm];
            while let Some(b) = stack.pop() {
                if b == rejoin || !body.insert(b) {
                    continue;
                }
                stack.extend(succs[b].iter().copied());
            }
            if body.contains(&d) {
                continue; // wrapped around: loop shape, not a branch region
            }
            let mut exits: Vec<usize> = body
                .iter()
                .flat_map(|&b| succs[b].iter().copied())
                .filter(|s| !body.contains(s))
                .collect();
            exits.sort();
            exits.dedup();
            branch_regions.push(BranchRegion {
                cond_block: d,
                header: arm,
                body,
                exits,
                depth: 1,
                condition_values: cond
                    .value_name()
                    .map(|v| vec![v.to_string()])
                    .unwrap_or_default(),
                taken_arm,
            });
        }
    }
    let bbodies: Vec<BTreeSet<usize>> = branch_regions.iter().map(|r| r.body.clone()).collect();
    for (i, r) in branch_regions.iter_mut().enumerate() {
        r.depth = 1 + bbodies
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != i && b.contains(&r.header) && !bbodies[i].is_superset(b))
            .count() as u32;
    }

    Ok(CfgInfo {
        labels: f.blocks.iter().map(|b| b.label.clone()).collect(),
        index,
        succs,
        preds,
        idom,
        ipdom,
        loops,
        branch_regions,
        exit_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    fn cfg_of(text: &str) -> (crate::ir::Function, CfgInfo) {
        let m = parse_module(text).unwrap();
        let f = m.functions[0].clone();
        let cfg = analyze_cfg(&f).unwrap();
        (f, cfg)
    }

    /// Brute-force dominance oracle: `a` dominates `b` iff `b` is unreachable
    /// from the entry once `a` is removed from the graph.
    fn dominates_brute(cfg: &CfgInfo, a: usize, b: usize) -> bool {
        if a == b {
            return true;
        }
        let mut seen = vec![false; cfg.block_count()];
        seen[a] = true;
        let mut stack = vec![0usize];
        while let Some(x) = stack.pop() {
            if x == b {
                return false;
            }
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend(cfg.succs[x].iter().copied());
        }
        true
    }

    /// Brute-force cycle membership: block set of every simple cycle.
    fn cyclic_blocks_brute(cfg: &CfgInfo) -> BTreeSet<usize> {
        let n = cfg.block_count();
        let mut out = BTreeSet::new();
        for start in 0..n {
            // start is on a cycle iff start reaches itself through >= 1 edge
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = cfg.succs[start].clone();
            while let Some(x) = stack.pop() {
                if x == start {
                    out.insert(start);
                    break;
                }
                if std::mem::replace(&mut seen[x], true) {
                    continue;
                }
                stack.extend(cfg.succs[x].iter().copied());
            }
        }
        out
    }

    const DIAMOND: &str = "fn f(%a: i32) {
entry:
  %c = cmp lt i32 %a, 3
  cond_br %c, yes, no
yes:
  %x = add i32 %a, 1
  br done
no:
  %y = add i32 %a, 2
  br done
done:
  ret %a
}
";

    const LOOP2: &str = "fn f(%p: ptr) {
entry:
  %cur = alloca ptr
  store %cur, %p
  br body
body:
  %node = load ptr %cur
  %next = getfield %node, 1
  store %cur, %next
  br latch
latch:
  %flag = getfield %node, 0
  %more = cmp ne i64 %flag, 0
  cond_br %more, body, after
after:
  ret 0
}
";

    const NESTED_LOOPS: &str = "fn f() {
entry:
  %i = alloca i32
  %j = alloca i32
  store %i, 0
  br outer
outer:
  store %j, 0
  br inner
inner:
  %jv = load i32 %j
  %jn = add i32 %jv, 1
  store %j, %jn
  %jc = cmp lt i32 %jn, 3
  cond_br %jc, inner, outer_latch
outer_latch:
  %iv = load i32 %i
  %in = add i32 %iv, 1
  store %i, %in
  %ic = cmp lt i32 %in, 3
  cond_br %ic, outer, done
done:
  ret 0
}
";

    #[test]
    fn straight_line_idoms_follow_block_order() {
        let (_, cfg) = cfg_of("fn f() {\na:\n  br b\nb:\n  br c\nc:\n  ret 0\n}\n");
        assert!(cfg.loops.is_empty());
        assert_eq!(cfg.idom, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn idom_matches_brute_force_dominance() {
        for text in [DIAMOND, LOOP2, NESTED_LOOPS] {
            let (_, cfg) = cfg_of(text);
            for a in 0..cfg.block_count() {
                for b in 0..cfg.block_count() {
                    assert_eq!(
                        cfg.dominates(a, b),
                        dominates_brute(&cfg, a, b),
                        "dominates({a},{b}) mismatch in {text}"
                    );
                }
            }
        }
    }

    #[test]
    fn loop_detection_matches_brute_force_cycles() {
        for text in [DIAMOND, LOOP2, NESTED_LOOPS] {
            let (_, cfg) = cfg_of(text);
            let in_loops: BTreeSet<usize> = cfg
                .loops
                .iter()
                .flat_map(|l| l.body.iter().copied())
                .collect();
            assert_eq!(
                in_loops,
                cyclic_blocks_brute(&cfg),
                "cycle set mismatch in {text}"
            );
        }
    }

    #[test]
    fn pointer_loop_is_complex() {
        let (f, cfg) = cfg_of(LOOP2);
        assert_eq!(cfg.loops.len(), 1);
        let l = &cfg.loops[0];
        assert_eq!(l.depth, 1);
        let closure = condition_closure(&f, &l.condition_values);
        assert!(
            closure.contains("node"),
            "ptr load result must be in the closure"
        );
        assert!(is_complex(Region::Loop(l), &f));
    }

    #[test]
    fn constant_bound_loop_is_simple_and_nesting_is_complex() {
        let (f, cfg) = cfg_of(NESTED_LOOPS);
        assert_eq!(cfg.loops.len(), 2);
        let outer = cfg.loops.iter().find(|l| l.depth == 1).unwrap();
        let inner = cfg.loops.iter().find(|l| l.depth == 2).unwrap();
        assert!(inner.body.len() < outer.body.len());
        // Constant-bound outer loop: simple. Inner loop: complex by depth.
        assert!(!is_complex(Region::Loop(outer), &f));
        assert!(is_complex(Region::Loop(inner), &f));
    }

    #[test]
    fn complexity_is_monotone_in_depth() {
        // Wrapping the same simple counted loop in an outer loop makes the
        // inner one complex while leaving its condition untouched.
        let (f, cfg) = cfg_of(NESTED_LOOPS);
        let inner = cfg.loops.iter().find(|l| l.depth == 2).unwrap();
        let single = "fn f() {
entry:
  %j = alloca i32
  store %j, 0
  br inner
inner:
  %jv = load i32 %j
  %jn = add i32 %jv, 1
  store %j, %jn
  %jc = cmp lt i32 %jn, 3
  cond_br %jc, inner, done
done:
  ret 0
}
";
        let (sf, scfg) = cfg_of(single);
        assert!(!is_complex(Region::Loop(&scfg.loops[0]), &sf));
        assert!(is_complex(Region::Loop(inner), &f));
    }

    #[test]
    fn rejoining_branch_forms_two_arm_regions() {
        let (f, cfg) = cfg_of(DIAMOND);
        assert_eq!(cfg.branch_regions.len(), 2);
        for r in &cfg.branch_regions {
            assert_eq!(r.exits, vec![cfg.index["done"]]);
            assert_eq!(r.depth, 1);
            assert!(!is_complex(Region::Branch(r), &f));
        }
    }

    #[test]
    fn non_rejoining_branch_forms_no_region() {
        let (_, cfg) = cfg_of(
            "fn f(%a: i32) {
entry:
  %c = cmp lt i32 %a, 0
  cond_br %c, bad, ok
bad:
  ret -1
ok:
  ret %a
}
",
        );
        assert!(cfg.branch_regions.is_empty());
        assert_eq!(cfg.ipdom[0], None);
    }

    #[test]
    fn irreducible_cfg_rejected() {
        // Two-entry cycle between b and c.
        let err = analyze_cfg(
            &parse_module(
                "fn f(%a: i32) {
entry:
  %c = cmp lt i32 %a, 0
  cond_br %c, b, c
b:
  br c
c:
  br b
}
",
            )
            .unwrap()
            .functions[0],
        )
        .unwrap_err();
        assert!(matches!(err, CfgError::IrreducibleControlFlow { .. }));
    }

    #[test]
    fn ptr_param_condition_is_complex() {
        let (f, cfg) = cfg_of(
            "fn f(%pkt: ptr) {
entry:
  %flags = getfield %pkt, 0
  %c = cmp ne i64 %flags, 0
  cond_br %c, ctl, data
ctl:
  %x = const i32 1
  br done
data:
  %y = const i32 2
  br done
done:
  ret 0
}
",
        );
        for r in &cfg.branch_regions {
            assert!(is_complex(Region::Branch(r), &f));
        }
    }
}
