//! End-to-end pipeline tests over the fixture corpus plus targeted checks
//! for dispatch behavior, substitution bookkeeping, and the CLI binary.

use std::path::PathBuf;

use hotforge::analyze::{analyze_patches, ActionSpec, PatchRange, PatchSpec};
use hotforge::harness::{diff_function, prepare_fixture, Fixture};
use hotforge::instrument::{
    instrument_module, strip_trampolines, trampoline_static_overhead, SiteKind,
};
use hotforge::ir::{analyze_cfg, parse_module, print_module, validate, Ty};
use hotforge::runtime::{interpret, ArgValue, Limits, Op, PatchRegistry};

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(tag: &str) -> Fixture {
    Fixture::load(&fixtures_dir().join(format!("{tag}.toml"))).expect("fixture loads")
}

/// Every shipped IR file is in canonical form: parse-then-print reproduces
/// the file byte for byte (comments aside, the printer never emits them, so
/// files with comments are checked via a parse/print/parse fixpoint).
#[test]
fn fixture_ir_files_are_canonical() {
    let dir = fixtures_dir();
    let mut checked = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e != "ir").unwrap_or(true) {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let module = parse_module(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(
            validate(&module),
            vec![],
            "{} must validate",
            path.display()
        );
        let printed = print_module(&module);
        let reparsed = parse_module(&printed).unwrap();
        assert_eq!(module, reparsed, "{} round-trips", path.display());
        assert_eq!(printed, print_module(&reparsed), "printing is a fixpoint");
        // The body below any leading comment block must already be canonical.
        let body: String = text
            .lines()
            .skip_while(|l| l.starts_with('#') || l.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        assert_eq!(printed, body, "{} is not canonical", path.display());
        checked += 1;
    }
    assert!(
        checked >= 18,
        "expected the full corpus, found {checked} files"
    );
}

/// Independent oracle for the varint decoder fixture.
fn varint_oracle(bytes: &[i64]) -> i64 {
    let mut length: i32 = 0;
    let mut shift = 0;
    for &b in bytes {
        length = length.wrapping_add(((b as i32) & 127).wrapping_shl(shift));
        shift += 7;
        if b & 128 == 0 {
            break;
        }
    }
    length as i64
}

#[test]
fn varint_fixture_structure_and_documented_decode() {
    let fx = load("cve_2020_10062");
    let f = fx.vulnerable.function("packet_length_decode").unwrap();
    assert_eq!(fx.vulnerable.functions.len(), 1);
    let cfg = analyze_cfg(f).unwrap();
    assert_eq!(cfg.loops.len(), 1);
    assert_eq!(cfg.loops[0].body.len(), 2, "decode loop spans body+latch");
    assert_eq!(cfg.loops[0].depth, 1);
    // The loop condition hangs off a pointer load, which is what forces
    // the in-loop trampolines.
    let closure = hotforge::ir::condition_closure(f, &cfg.loops[0].condition_values);
    assert!(closure.iter().any(|v| f.value_ty(v) == Some(Ty::Ptr)));

    // Documented sample: 0x85 0x03 decodes to 389.
    let sample = vec![0x85, 0x03];
    assert_eq!(varint_oracle(&sample), 389);
    let out = interpret(
        &fx.vulnerable,
        "packet_length_decode",
        &[ArgValue::Chain(sample), ArgValue::Object(vec![0])],
        &PatchRegistry::new(),
        &Limits::default(),
    )
    .unwrap();
    assert_eq!(out.ret, Some(0));
    let length_cell = out.env.observable_trace().last().unwrap().cell;
    assert_eq!(out.env.memory.snapshot(length_cell).unwrap()[0], Some(389));

    // A one-iteration decode passes each of the three trampolines once, so
    // the empty-registry overhead is exactly 3 x k steps.
    let (inst, _) = instrument_module(&fx.vulnerable).unwrap();
    let one_byte = vec![ArgValue::Chain(vec![0x02]), ArgValue::Object(vec![0])];
    let empty = PatchRegistry::new();
    let a = interpret(
        &fx.vulnerable,
        &fx.function,
        &one_byte,
        &empty,
        &Limits::default(),
    )
    .unwrap();
    let b = interpret(&inst, &fx.function, &one_byte, &empty, &Limits::default()).unwrap();
    assert_eq!(b.env.trampoline_hits, 3);
    assert_eq!(
        b.env.steps - a.env.steps,
        3 * hotforge::runtime::TRAMPOLINE_MISS_STEPS
    );
}

#[test]
fn module_site_counts_add_up_across_functions() {
    // The varint fixture plus a helper with one call: 3 + 2 sites.
    let mut text = std::fs::read_to_string(fixtures_dir().join("cve_2020_10062_vuln.ir")).unwrap();
    text.push_str(
        "\nfn helper(%x: i32) {\nentry:\n  %h = call twice(%x)\n  ret %h\n}\n\nfn twice(%x: i32) {\nentry:\n  %t = mul i32 %x, 2\n  ret %t\n}\n",
    );
    let m = parse_module(&text).unwrap();
    let (_, report) = instrument_module(&m).unwrap();
    let per_fn = |name: &str| report.sites.iter().filter(|s| s.function == name).count();
    assert_eq!(per_fn("packet_length_decode"), 3);
    assert_eq!(per_fn("helper"), 2);
    assert_eq!(per_fn("twice"), 1);
    let ids: Vec<u32> = report.sites.iter().map(|s| s.id).collect();
    assert_eq!(ids, (0..6).collect::<Vec<u32>>());
}

#[test]
fn static_overhead_for_varint_fixture_is_three() {
    let fx = load("cve_2020_10062");
    let (inst, _) = instrument_module(&fx.vulnerable).unwrap();
    let o = trampoline_static_overhead(
        fx.vulnerable.function("packet_length_decode").unwrap(),
        inst.function("packet_length_decode").unwrap(),
    )
    .unwrap();
    assert_eq!(o.instructions_added, 3);
    assert_eq!(
        strip_trampolines(inst.function("packet_length_decode").unwrap()),
        *fx.vulnerable.function("packet_length_decode").unwrap()
    );
}

/// Length-byte cap fires at the loop-header site; short inputs pass.
#[test]
fn varint_hotpatch_drops_overlong_and_passes_short() {
    let fx = load("cve_2020_10062");
    let (inst, _, registry) = prepare_fixture(&fx).unwrap();
    let limits = Limits::default();
    // Five continuation bytes: the bytes counter reaches the cap.
    let overlong = vec![
        ArgValue::Chain(vec![0x81, 0x81, 0x81, 0x81, 0x01]),
        ArgValue::Object(vec![0]),
    ];
    let out = interpret(&inst, &fx.function, &overlong, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(-22));
    let drop = out
        .env
        .dispatches
        .iter()
        .find(|d| d.op == Op::Drop)
        .unwrap();
    assert_eq!(
        drop.site, 1,
        "the loop-header site hosts the first fragment"
    );
    // A short packet decodes normally through the same trampolines.
    let short = vec![ArgValue::Chain(vec![0x02]), ArgValue::Object(vec![0])];
    let out = interpret(&inst, &fx.function, &short, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(0));
    assert!(out.env.dispatches.iter().all(|d| d.op == Op::Pass));
}

/// DROP returns the code from the patched callee; the caller keeps running.
#[test]
fn drop_in_callee_returns_code_to_caller() {
    let text = "fn main_entry(%pkt: ptr) {
entry:
  %r = call parse_header(%pkt)
  %shifted = add i64 %r, 1000
  ret %shifted
}

fn parse_header(%pkt: ptr) {
entry:
  %hl = alloca i64
  %vh = getfield %pkt, 0
  %masked = and i64 %vh, 15
  %words = call expand(%masked)
  store %hl, %words
  %r = load i64 %hl
  ret %r
}

fn expand(%x: i64) {
entry:
  %w = mul i64 %x, 4
  ret %w
}
";
    let vuln = parse_module(text).unwrap();
    let patched = parse_module(
        &std::fs::read_to_string(fixtures_dir().join("after_call_guard_patched.ir")).unwrap(),
    )
    .unwrap();
    let (inst, report) = instrument_module(&vuln).unwrap();
    let spec = PatchSpec {
        function: "parse_header".into(),
        range: PatchRange::parse("entry:5..entry:8").unwrap(),
        action: ActionSpec::parse("drop:-22").unwrap(),
        cve_id: "SYN-AFTER-CALL".into(),
    };
    let outcomes = analyze_patches(
        inst.function("parse_header").unwrap(),
        patched.function("parse_header").unwrap(),
        std::slice::from_ref(&spec),
        &report.sites,
    )
    .unwrap();
    assert_eq!(outcomes[0].site.kind, SiteKind::AfterCall);
    let mut registry = PatchRegistry::new();
    registry.install(outcomes[0].hotpatch.clone()).unwrap();
    // Header byte 3 expands to 12 < 20: dropped inside parse_header with
    // -22, and the caller sees that value.
    let out = interpret(
        &inst,
        "main_entry",
        &[ArgValue::Object(vec![3])],
        &registry,
        &Limits::default(),
    )
    .unwrap();
    assert_eq!(out.ret, Some(978));
}

/// REDIRECT jumps to the existing reject label: its cleanup store runs.
#[test]
fn redirect_runs_the_existing_reject_path() {
    let fx = load("int_overflow_redirect");
    let (inst, outcomes, registry) = prepare_fixture(&fx).unwrap();
    assert_eq!(outcomes[0].hotpatch.action.op, Op::Redirect);
    assert_eq!(
        outcomes[0].hotpatch.action.target_label.as_deref(),
        Some("reject")
    );
    let input = vec![
        ArgValue::Scalar(30000),
        ArgValue::Scalar(7),
        ArgValue::Object(vec![0]),
    ];
    let out = interpret(&inst, &fx.function, &input, &registry, &Limits::default()).unwrap();
    assert_eq!(out.ret, Some(-34));
    let obs = out.env.observable_trace();
    assert_eq!(obs.len(), 1);
    assert_eq!(obs[0].value, 0, "the reject path clears the output cell");
}

/// Both fragments share the after-call site; a PASS from the first lets the
/// second run, and disabling entries skips them.
#[test]
fn multi_fragment_patches_share_a_site() {
    let fx = load("multi_fragment_session");
    let (inst, outcomes, mut registry) = prepare_fixture(&fx).unwrap();
    assert_eq!(outcomes[0].hotpatch.site_id, outcomes[1].hotpatch.site_id);
    let limits = Limits::default();

    // Invalid kind: fragment 1 fires first, fragment 2 never runs.
    let bad_kind = vec![ArgValue::Object(vec![4, 501]), ArgValue::Object(vec![900])];
    let out = interpret(&inst, &fx.function, &bad_kind, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(-71));
    assert_eq!(out.env.dispatches.last().unwrap().executed, 1);

    // Valid kind over quota: fragment 1 passes, fragment 2 fires second.
    let over_quota = vec![ArgValue::Object(vec![1, 501]), ArgValue::Object(vec![900])];
    let out = interpret(&inst, &fx.function, &over_quota, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(-90));
    assert_eq!(out.env.dispatches.last().unwrap().executed, 2);

    // Fragment 2 carries the path condition it sits under in the patched
    // function (`ok != 0`), so with fragment 1 disabled an invalid kind
    // slips through both guards, exactly like the vulnerable flow.
    let first_key = registry.entries()[0].key;
    registry.disable(first_key).unwrap();
    let out = interpret(&inst, &fx.function, &bad_kind, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(0));

    let second_key = registry.entries()[1].key;
    registry.disable(second_key).unwrap();
    let out = interpret(&inst, &fx.function, &over_quota, &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(10), "both disabled: vulnerable behavior");
    assert!(out.env.dispatches.iter().all(|d| d.executed == 0));
}

/// Dispatch order among same-site patches is installation order, and the
/// first non-PASS action wins.
#[test]
fn dispatch_first_non_pass_wins_in_install_order() {
    let m = parse_module("fn f() {\nentry:\n  trampoline 0\n  ret 7\n}\n").unwrap();
    let firing = |name: &str, code: i64| {
        let word = hotforge::runtime::encode_action(Op::Drop, code, 0).unwrap();
        let body = parse_module(&format!(
            "fn {name}(%frame: ptr) {{\nentry:\n  ret {word}\n}}\n"
        ))
        .unwrap();
        let mut h = hotforge::analyze::Hotpatch::trivial_pass(name, "f", 0);
        h.body = body.functions[0].clone();
        h
    };
    let mut registry = PatchRegistry::new();
    let k1 = registry.install(firing("first", -1)).unwrap();
    let k2 = registry.install(firing("second", -2)).unwrap();
    let limits = Limits::default();
    let out = interpret(&m, "f", &[], &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(-1));
    assert_eq!(out.env.dispatches[0].executed, 1, "second body never ran");

    registry.disable(k1).unwrap();
    let out = interpret(&m, "f", &[], &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(-2));

    registry.disable(k2).unwrap();
    let out = interpret(&m, "f", &[], &registry, &limits).unwrap();
    assert_eq!(out.ret, Some(7));
}

/// Mutating a hotpatch constant must surface as an oracle counterexample:
/// the harness itself can tell a wrong patch from a right one.
#[test]
fn sabotaged_hotpatch_produces_a_counterexample() {
    let fx = load("cve_2020_10021");
    let (inst, outcomes, _) = prepare_fixture(&fx).unwrap();
    let mut bad = outcomes[0].hotpatch.clone();
    let mut mutated = false;
    for b in &mut bad.body.blocks {
        for i in &mut b.instrs {
            if let hotforge::ir::InstrKind::Bin {
                op: hotforge::ir::BinOp::Mul,
                rhs,
                ..
            } = &mut i.kind
            {
                *rhs = hotforge::ir::Operand::Literal(1); // was BLOCK_SIZE = 512
                mutated = true;
            }
        }
    }
    assert!(
        mutated,
        "expected a mul by the folded block size in the body"
    );
    let mut registry = PatchRegistry::new();
    registry.install(bad).unwrap();
    let limits = Limits::default();
    let empty = PatchRegistry::new();
    let mut counterexample = None;
    for input in fx.exhaustive_inputs() {
        let oracle = interpret(&fx.patched, &fx.function, &input, &empty, &limits).unwrap();
        let subject = interpret(&inst, &fx.function, &input, &registry, &limits).unwrap();
        if oracle.ret != subject.ret {
            counterexample = Some(input);
            break;
        }
    }
    assert!(counterexample.is_some(), "sabotage went undetected");
}

/// Replaying the recorded substitution steps reproduces the final guard.
#[test]
fn substitution_trace_replays_to_the_final_expression() {
    let fx = load("cve_2020_10021");
    let (_, outcomes, _) = prepare_fixture(&fx).unwrap();
    let outcome = &outcomes[0];
    assert_eq!(outcome.trace.skipped, 1, "the debug-xor line is skipped");
    assert_eq!(outcome.trace.steps.len(), 8);
    let mut replayed = hotforge::analyze::official_guard(
        fx.vulnerable.function(&fx.function).unwrap(),
        fx.patched.function(&fx.function).unwrap(),
        &fx.specs[0],
    )
    .unwrap();
    for step in &outcome.trace.steps {
        replayed.substitute(&step.variable, &step.inlined_expr);
    }
    assert!(
        replayed.eq_modulo_symbols(&outcome.expr),
        "replayed `{replayed}` != final `{}`",
        outcome.expr
    );
}

/// Scenario classification over the corpus matches the region table.
#[test]
fn scenario_classification_matches_fixture_shapes() {
    use hotforge::analyze::Scenario;
    let expect = [
        ("cve_2020_10021", vec!["outside"]),
        ("cve_2020_10062", vec!["inside_complex", "outside"]),
        ("after_call_guard", vec!["outside"]),
        ("complex_branch_guard", vec!["inside_complex"]),
        ("simple_if_absorb", vec!["inside_simple"]),
        ("int_overflow_redirect", vec!["outside"]),
        ("select_merge", vec!["outside"]),
    ];
    for (tag, scenarios) in expect {
        let fx = load(tag);
        let (_, outcomes, _) = prepare_fixture(&fx).unwrap();
        let got: Vec<&str> = outcomes
            .iter()
            .map(|o| match &o.scenario {
                Scenario::Outside => "outside",
                Scenario::InsideComplex { .. } => "inside_complex",
                Scenario::InsideSimple { .. } => "inside_simple",
            })
            .collect();
        assert_eq!(got, scenarios, "{tag}");
    }
}

/// A patch adjacent to the entrance trampoline: distance zero, empty trace.
#[test]
fn patch_adjacent_to_entrance_selects_it_with_empty_trace() {
    let vuln =
        parse_module("fn f(%a: i32) {\nentry:\n  %r = mul i32 %a, 2\n  ret %r\n}\n").unwrap();
    let patched = parse_module(
        "fn f(%a: i32) {
entry:
  %g = cmp lt i32 %a, 0
  cond_br %g, neg_fail, go
neg_fail:
  %e = const i32 -1
  ret %e
go:
  %r = mul i32 %a, 2
  ret %r
}
",
    )
    .unwrap();
    let (inst, report) = instrument_module(&vuln).unwrap();
    let spec = PatchSpec {
        function: "f".into(),
        range: PatchRange::parse("entry:0..entry:1").unwrap(),
        action: ActionSpec::parse("drop:-1").unwrap(),
        cve_id: "SYN-ADJACENT".into(),
    };
    let outcomes = analyze_patches(
        inst.function("f").unwrap(),
        patched.function("f").unwrap(),
        std::slice::from_ref(&spec),
        &report.sites,
    )
    .unwrap();
    assert_eq!(outcomes[0].site.kind, SiteKind::Entrance);
    assert!(outcomes[0].trace.steps.is_empty());
    assert_eq!(outcomes[0].expr.to_string(), "a < 0");

    // The single-operation entry points agree with the pipeline.
    let f_inst = inst.function("f").unwrap();
    let f_pat = patched.function("f").unwrap();
    let scenario =
        hotforge::analyze::classify_scenario(f_inst, f_pat, &spec, &report.sites).unwrap();
    assert!(matches!(scenario, hotforge::analyze::Scenario::Outside));
    let best =
        hotforge::analyze::find_best_trampoline(f_inst, f_pat, &spec, &report.sites).unwrap();
    assert_eq!(best, outcomes[0].site);
    let (expr, _) =
        hotforge::analyze::backward_substitute(f_inst, f_pat, &spec, &report.sites).unwrap();
    assert!(expr.eq_modulo_symbols(&outcomes[0].expr));
}

/// Of two definitions between site and patch, only the one feeding the
/// guard is inlined; the other is counted as skipped.
#[test]
fn interleaved_defs_yield_one_step_one_skip() {
    let vuln = parse_module(
        "fn f(%a: i32, %b: i32, %out: ptr) {
entry:
  %x = add i32 %a, 1
  %y = mul i32 %b, 3
  %s = add i32 %x, %y
  store %out, %s
  ret %s
}
",
    )
    .unwrap();
    let patched = parse_module(
        "fn f(%a: i32, %b: i32, %out: ptr) {
entry:
  %x = add i32 %a, 1
  %y = mul i32 %b, 3
  %g = cmp gt i32 %x, 10
  cond_br %g, too_big, go
too_big:
  %e = const i32 -9
  ret %e
go:
  %s = add i32 %x, %y
  store %out, %s
  ret %s
}
",
    )
    .unwrap();
    let (inst, report) = instrument_module(&vuln).unwrap();
    let spec = PatchSpec {
        function: "f".into(),
        range: PatchRange::parse("entry:2..entry:3").unwrap(),
        action: ActionSpec::parse("drop:-9").unwrap(),
        cve_id: "SYN-SKIP".into(),
    };
    let outcomes = analyze_patches(
        inst.function("f").unwrap(),
        patched.function("f").unwrap(),
        std::slice::from_ref(&spec),
        &report.sites,
    )
    .unwrap();
    let trace = &outcomes[0].trace;
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].variable, "x");
    assert_eq!(trace.skipped, 1);
    assert_eq!(outcomes[0].expr.to_string(), "(a + 1) > 10");
}

/// An always-false guard produces a hotpatch that always passes.
#[test]
fn always_false_guard_always_passes() {
    let vuln =
        parse_module("fn f(%a: i32) {\nentry:\n  %r = add i32 %a, 5\n  ret %r\n}\n").unwrap();
    let patched = parse_module(
        "fn f(%a: i32) {
entry:
  %z = const i32 0
  %g = cmp ne i32 %z, 0
  cond_br %g, dead, go
dead:
  %e = const i32 -1
  ret %e
go:
  %r = add i32 %a, 5
  ret %r
}
",
    )
    .unwrap();
    let (inst, report) = instrument_module(&vuln).unwrap();
    let spec = PatchSpec {
        function: "f".into(),
        range: PatchRange::parse("entry:0..entry:2").unwrap(),
        action: ActionSpec::parse("drop:-1").unwrap(),
        cve_id: "SYN-DEAD".into(),
    };
    let outcomes = analyze_patches(
        inst.function("f").unwrap(),
        patched.function("f").unwrap(),
        std::slice::from_ref(&spec),
        &report.sites,
    )
    .unwrap();
    let mut registry = PatchRegistry::new();
    registry.install(outcomes[0].hotpatch.clone()).unwrap();
    for a in -3..=3 {
        let out = interpret(
            &inst,
            "f",
            &[ArgValue::Scalar(a)],
            &registry,
            &Limits::default(),
        )
        .unwrap();
        assert_eq!(out.ret, Some(a + 5));
        assert!(out
            .env
            .dispatches
            .iter()
            .all(|d| d.op == Op::Pass && d.executed == 1));
    }
}

/// The differ reports both guard fragments of the two-fragment fixture and
/// flags them as non-contiguous.
#[test]
fn diff_reports_both_fragments_of_the_varint_patch() {
    let fx = load("cve_2020_10062");
    let report = diff_function(
        fx.vulnerable.function(&fx.function).unwrap(),
        fx.patched.function(&fx.function).unwrap(),
    );
    assert!(!report.contiguous);
    assert!(report.suggestion.is_none());
    let spans: Vec<String> = report
        .spans
        .iter()
        .map(|s| format!("{}:{}..{}", s.block, s.start, s.end))
        .collect();
    assert!(spans.contains(&"body:0..3".to_string()), "{spans:?}");
    assert!(spans.contains(&"after:0..3".to_string()), "{spans:?}");
}

/// Guard evaluation at the trampoline agrees with the patched oracle's
/// guard decision on every input (substitution correctness, checked with a
/// test-local evaluator independent of the runtime).
#[test]
fn hoisted_guard_agrees_with_patched_decision() {
    use hotforge::analyze::Expr;
    fn eval(e: &Expr, env: &dyn Fn(&str) -> i64) -> i64 {
        match e {
            Expr::Var(v) => env(v),
            Expr::Const { value, .. } => *value,
            Expr::Bin { op, lhs, rhs, .. } => {
                let (a, b) = (eval(lhs, env) as i32, eval(rhs, env) as i32);
                (match op {
                    hotforge::ir::BinOp::Shl => a.wrapping_shl((b & 31) as u32),
                    hotforge::ir::BinOp::Or => a | b,
                    hotforge::ir::BinOp::Mul => a.wrapping_mul(b),
                    other => panic!("unexpected op {other:?}"),
                }) as i64
            }
            Expr::Cmp {
                pred: hotforge::ir::CmpPred::Ge,
                lhs,
                rhs,
                ..
            } => ((eval(lhs, env) as i32) >= (eval(rhs, env) as i32)) as i64,
            other => panic!("unexpected node {other}"),
        }
    }
    let fx = load("cve_2020_10021");
    let (_, outcomes, _) = prepare_fixture(&fx).unwrap();
    let guard = &outcomes[0].expr;
    let empty = PatchRegistry::new();
    for input in fx.exhaustive_inputs() {
        let scalars: Vec<i64> = input
            .iter()
            .map(|a| match a {
                ArgValue::Scalar(v) => *v,
                _ => unreachable!(),
            })
            .collect();
        let names = ["CB2", "CB3", "CB4", "CB5", "memory_size"];
        let lookup = |v: &str| scalars[names.iter().position(|n| *n == v).unwrap()];
        let fired = eval(guard, &lookup) != 0;
        let oracle = interpret(
            &fx.patched,
            &fx.function,
            &input,
            &empty,
            &Limits::default(),
        )
        .unwrap();
        assert_eq!(fired, oracle.ret == Some(-22), "input {scalars:?}");
    }
}

/// Full CLI round trip through the installed binary: instrument, analyze,
/// run the exploit with and without the bundle.
#[test]
fn cli_binary_end_to_end() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_hotforge");
    let dir = tempdir();
    let fw = dir.join("fw.ir");
    let bundle_path = dir.join("p.bundle");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("binary runs");
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stdout).to_string(),
        )
    };
    let vuln = fixtures_dir().join("cve_2020_10021_vuln.ir");
    let patched = fixtures_dir().join("cve_2020_10021_patched.ir");
    let (code, _) = run(&[
        "instrument",
        vuln.to_str().unwrap(),
        "-o",
        fw.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (code, _) = run(&[
        "analyze",
        "--vulnerable",
        vuln.to_str().unwrap(),
        "--patched",
        patched.to_str().unwrap(),
        "--fn",
        "info_transfer",
        "--patch-at",
        "entry:11..entry:13",
        "--action",
        "drop:-22",
        "--cve",
        "CVE-2020-10021",
        "-o",
        bundle_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    // Exploit input: block address 1 scales to 512 >= 256.
    let (code, stdout) = run(&[
        "run",
        fw.to_str().unwrap(),
        "--entry",
        "info_transfer",
        "--args",
        "0,0,0,1,256",
        "--install",
        bundle_path.to_str().unwrap(),
    ]);
    assert_eq!(stdout.trim(), "-22");
    assert_eq!(code, (-22i64 & 0xff) as i32);
    let (code, stdout) = run(&[
        "run",
        fw.to_str().unwrap(),
        "--entry",
        "info_transfer",
        "--args",
        "0,0,0,1,256",
    ]);
    assert_eq!(stdout.trim(), "513");
    assert_eq!(code, 513 & 0xff);
    std::fs::remove_dir_all(dir).ok();
}

fn tempdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hotforge-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Instrumentation coverage over the corpus: every complex region has a
/// trampoline heading its body and each exit, every call is immediately
/// followed by one, and site ids are lexicographic in position.
#[test]
fn instrumentation_coverage_scan() {
    use hotforge::ir::{is_complex, InstrKind, Region};
    let fixtures = Fixture::load_dir(&fixtures_dir()).unwrap();
    for fx in &fixtures {
        let (inst, report) = instrument_module(&fx.vulnerable).unwrap();
        for f in &inst.functions {
            let is_tramp = |b: usize, i: usize| {
                matches!(f.blocks[b].instrs[i].kind, InstrKind::Trampoline { .. })
            };
            let cfg = analyze_cfg(f).unwrap();
            for l in &cfg.loops {
                if is_complex(Region::Loop(l), f) {
                    assert!(is_tramp(l.header, 0), "{}: loop header uncovered", f.name);
                    for &e in &l.exits {
                        assert!(is_tramp(e, 0), "{}: loop exit uncovered", f.name);
                    }
                }
            }
            for r in &cfg.branch_regions {
                if is_complex(Region::Branch(r), f) {
                    assert!(is_tramp(r.header, 0), "{}: branch arm uncovered", f.name);
                    for &e in &r.exits {
                        assert!(is_tramp(e, 0), "{}: branch exit uncovered", f.name);
                    }
                }
            }
            for b in &f.blocks {
                for (i, instr) in b.instrs.iter().enumerate() {
                    if matches!(instr.kind, InstrKind::Call { .. }) {
                        assert!(
                            matches!(b.instrs[i + 1].kind, InstrKind::Trampoline { .. }),
                            "{}: call at {}:{} lacks an after-call trampoline",
                            f.name,
                            b.label,
                            i
                        );
                    }
                }
            }
        }
        // Ids follow (function order, block order, instruction order).
        let mut positions = Vec::new();
        for s in &report.sites {
            let fi = inst
                .functions
                .iter()
                .position(|f| f.name == s.function)
                .unwrap();
            let bi = inst.functions[fi].block_index(&s.block).unwrap();
            positions.push((fi, bi, s.index, s.id));
        }
        let mut sorted = positions.clone();
        sorted.sort();
        assert_eq!(positions, sorted, "{}: ids not lexicographic", fx.tag);
        assert!(positions.windows(2).all(|w| w[0].3 < w[1].3));
    }
}

/// A hotpatch that tries to write program memory is stopped by the runtime.
#[test]
fn hotpatch_store_isolation_is_enforced() {
    let m =
        parse_module("fn f(%out: ptr) {\nentry:\n  trampoline 0\n  store %out, 1\n  ret 0\n}\n")
            .unwrap();
    let evil_body = parse_module(
        "fn evil(%frame: ptr) {\nentry:\n  %p = call frame_get(%frame, 0)\n  store %p, 999\n  ret 0\n}\n",
    )
    .unwrap();
    let mut evil = hotforge::analyze::Hotpatch::trivial_pass("evil", "f", 0);
    evil.body = evil_body.functions[0].clone();
    evil.required_vars = vec!["out".to_string()];
    let mut registry = PatchRegistry::new();
    registry.install(evil).unwrap();
    let err = interpret(
        &m,
        "f",
        &[ArgValue::Object(vec![0])],
        &registry,
        &Limits::default(),
    )
    .expect_err("isolation violation must fail the dispatch");
    assert!(err.to_string().contains("violated isolation"), "{err}");
}

/// A bundle bound to a site the module does not carry fails at install.
#[test]
fn bundle_site_mismatch_fails_at_install() {
    let fx = load("cve_2020_10021");
    let (inst, outcomes, _) = prepare_fixture(&fx).unwrap();
    let sites = hotforge::instrument::recover_module_sites(&inst).unwrap();
    let mut wrong = outcomes[0].hotpatch.clone();
    wrong.site_id = 99;
    let err = hotforge::bundle::check_against_module(&wrong, &inst, &sites)
        .expect_err("unknown site must be rejected");
    assert!(err.to_string().contains("site mismatch"), "{err}");
}

/// Identical (module, args, registry) produce identical traces, dispatch
/// records, and step counts.
#[test]
fn runs_are_deterministic() {
    let fx = load("cve_2020_10062");
    let (inst, _, registry) = prepare_fixture(&fx).unwrap();
    let input = vec![
        ArgValue::Chain(vec![0xff, 0xff, 0x7f]),
        ArgValue::Object(vec![0]),
    ];
    let a = interpret(&inst, &fx.function, &input, &registry, &Limits::default()).unwrap();
    let b = interpret(&inst, &fx.function, &input, &registry, &Limits::default()).unwrap();
    assert_eq!(a.ret, b.ret);
    assert_eq!(a.env.steps, b.env.steps);
    assert_eq!(a.env.trace, b.env.trace);
    assert_eq!(a.env.dispatches, b.env.dispatches);
}

/// Seeded random verification is reproducible and passes on the corpus.
#[test]
fn random_mode_verification_is_seeded() {
    use hotforge::harness::{verify_fixture, VerifyMode, VerifyReport};
    let fx = load("simple_if_absorb");
    let mode = VerifyMode::Random {
        samples: 250,
        seed: 7,
    };
    for _ in 0..2 {
        let report = verify_fixture(&fx, mode);
        match report {
            VerifyReport::Pass {
                cases, ref mode, ..
            } => {
                assert_eq!(cases, 250);
                assert!(mode.contains("seed=7"));
            }
            other => panic!("{other}"),
        }
    }
}
