//! Acceptance suite: one test per shipped-behavior criterion, each printing
//! a `criterion N ... PASS` line (visible with `--nocapture`). Run with
//! `cargo test --test acceptance`.

use std::path::PathBuf;
use std::time::Instant;

use hotforge::analyze::{decompile_guard, official_guard};
use hotforge::bundle;
use hotforge::harness::{
    bench_fixtures, bench_stable_json, dispatch_scaling, prepare_fixture, preservation_check,
    verify_fixture, Fixture, VerifyMode, VerifyReport,
};
use hotforge::instrument::{instrument_module, SiteKind};
use hotforge::runtime::{decode_action, Op, PatchRegistry};

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(tag: &str) -> Fixture {
    Fixture::load(&fixtures_dir().join(format!("{tag}.toml"))).expect("fixture loads")
}

fn pass(n: u32, what: &str) {
    println!("criterion {n} ({what}): PASS");
}

/// Criterion 1: on the CVE-2020-10021 fixture the analysis selects the
/// entrance trampoline and the substituted guard canonicalizes exactly.
#[test]
fn criterion_1_entrance_hoisting_worked_example() {
    let started = Instant::now();
    let fx = load("cve_2020_10021");
    let (_, outcomes, _) = prepare_fixture(&fx).expect("analysis succeeds");
    assert_eq!(outcomes.len(), 1);
    assert_eq!(outcomes[0].site.kind, SiteKind::Entrance);
    assert_eq!(
        outcomes[0].expr.to_string(),
        "(((CB2<<24)|(CB3<<16)|(CB4<<8)|(CB5<<0)) * BLOCK_SIZE) >= memory_size"
    );
    assert!(
        started.elapsed().as_secs_f64() < 1.0,
        "analysis took too long"
    );
    pass(
        1,
        "guard hoisted to the entrance trampoline, exact canonical expression",
    );
}

/// Criterion 2: the CVE-2020-10062 fixture yields two hotpatches on the
/// loop-header and loop-exit sites, each body identical (modulo frame
/// reads) to its official fragment.
#[test]
fn criterion_2_loop_fragment_worked_example() {
    let started = Instant::now();
    let fx = load("cve_2020_10062");
    let inst_vuln = fx.vulnerable.function(&fx.function).unwrap();
    let f_pat = fx.patched.function(&fx.function).unwrap();
    let (_, outcomes, _) = prepare_fixture(&fx).expect("analysis succeeds");
    assert_eq!(outcomes.len(), 2);
    assert_eq!(outcomes[0].site.kind, SiteKind::LoopHeader);
    assert_eq!(outcomes[1].site.kind, SiteKind::LoopExit);
    for (outcome, spec) in outcomes.iter().zip(&fx.specs) {
        // Adjacent site: nothing was substituted, so the emitted body must
        // evaluate exactly the official fragment's guard.
        assert!(
            outcome.trace.steps.is_empty(),
            "expected an empty substitution trace"
        );
        let (body_guard, word) = decompile_guard(&outcome.hotpatch).expect("straight-line body");
        let fragment_guard = official_guard(inst_vuln, f_pat, spec).expect("fragment guard");
        assert!(
            body_guard.eq_modulo_symbols(&fragment_guard),
            "body `{body_guard}` != fragment `{fragment_guard}`"
        );
        let action = decode_action(word).unwrap();
        assert_eq!(action.op, Op::Drop);
        assert_eq!(action.ret_code, -22);
    }
    assert!(
        started.elapsed().as_secs_f64() < 1.0,
        "analysis took too long"
    );
    pass(
        2,
        "fragments bound to loop header/exit, bodies match the official patch",
    );
}

/// Criterion 3: instrumenting the varint-decode fixture yields exactly three
/// trampolines: entrance, loop header, loop exit.
#[test]
fn criterion_3_instrumentation_site_count() {
    let fx = load("cve_2020_10062");
    let (_, report) = instrument_module(&fx.vulnerable).expect("instruments");
    let kinds: Vec<SiteKind> = report.sites.iter().map(|s| s.kind).collect();
    assert_eq!(
        kinds,
        vec![SiteKind::Entrance, SiteKind::LoopHeader, SiteKind::LoopExit]
    );
    pass(3, "exactly 3 sites: entrance, loop_header, loop_exit");
}

/// Criterion 4: exhaustive oracle equivalence on every fixable fixture.
#[test]
fn criterion_4_oracle_equivalence_exhaustive() {
    let started = Instant::now();
    let fixtures = Fixture::load_dir(&fixtures_dir()).expect("corpus loads");
    assert!(fixtures.len() >= 8, "corpus must ship at least 8 fixtures");
    let mut verified = 0;
    for fx in &fixtures {
        if fx.expect_unfixable.is_some() {
            continue;
        }
        let report = verify_fixture(fx, VerifyMode::Exhaustive);
        assert!(matches!(report, VerifyReport::Pass { .. }), "{report}");
        println!("  {report}");
        verified += 1;
    }
    assert!(verified >= 8 - 1);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "exhaustive verification took {elapsed:.1}s");
    pass(
        4,
        "instrumented+hotpatched modules equivalent to patched oracles",
    );
}

/// Criterion 5: the struct-edit fixture is rejected with the exact error
/// class `unsupported patch class`.
#[test]
fn criterion_5_unfixable_class_detection() {
    let fx = load("struct_edit_reject");
    let report = verify_fixture(&fx, VerifyMode::Exhaustive);
    match &report {
        VerifyReport::CannotFix {
            class, expected, ..
        } => {
            assert_eq!(class, "unsupported patch class");
            assert!(expected);
        }
        other => panic!("expected cannot-fix, got {other}"),
    }
    pass(
        5,
        "struct-edit patch rejected with class `unsupported patch class`",
    );
}

/// Criterion 6: dispatcher lookups stay within ceil(log2(n)) + 1 comparisons
/// and grow monotonically over registry sizes 1..=64.
#[test]
fn criterion_6_dispatch_complexity() {
    let points = dispatch_scaling();
    assert_eq!(
        points.iter().map(|p| p.registry_size).collect::<Vec<_>>(),
        vec![1, 2, 4, 8, 16, 32, 64]
    );
    let mut last = 0;
    for p in &points {
        assert!(
            p.max_comparisons <= p.bound,
            "n={}: {} comparisons exceed bound {}",
            p.registry_size,
            p.max_comparisons,
            p.bound
        );
        assert!(p.max_comparisons >= last, "comparisons not nondecreasing");
        last = p.max_comparisons;
    }
    pass(
        6,
        "binary-search comparisons bounded by ceil(log2 n)+1, nondecreasing",
    );
}

/// Criterion 7: with an empty registry, instrumented modules are fully
/// trace-equivalent to the originals over 1,000 seeded inputs per fixture,
/// with a fixed per-trampoline step constant.
#[test]
fn criterion_7_no_patch_transparency() {
    let fixtures = Fixture::load_dir(&fixtures_dir()).expect("corpus loads");
    for fx in &fixtures {
        let report = preservation_check(fx, 1000, 0x6f72_6163).unwrap_or_else(|e| {
            panic!("{}: {e}", fx.tag);
        });
        assert_eq!(report.step_overhead_per_trampoline, 1);
        println!(
            "  {}: {} cases, {} trampolines executed, k={}",
            report.tag,
            report.cases,
            report.trampolines_executed,
            report.step_overhead_per_trampoline
        );
    }
    pass(
        7,
        "empty-registry runs trace-equivalent; per-trampoline overhead k=1",
    );
}

/// Criterion 8: the 65th install fails with `registry full`.
#[test]
fn criterion_8_registry_capacity() {
    let mut registry = PatchRegistry::new();
    for site in 0..64 {
        registry
            .install(hotforge::analyze::Hotpatch::trivial_pass(
                &format!("p{site}"),
                "f",
                site,
            ))
            .expect("installs under capacity");
    }
    let err = registry
        .install(hotforge::analyze::Hotpatch::trivial_pass("p64", "f", 64))
        .expect_err("65th install must fail");
    assert_eq!(err.to_string(), "registry full, max 64");
    pass(8, "65th install rejected with `registry full, max 64`");
}

/// Criterion 9: bundles round-trip byte-identically and any single-byte
/// mutation is rejected.
#[test]
fn criterion_9_bundle_integrity() {
    let fx = load("cve_2020_10021");
    let (_, outcomes, _) = prepare_fixture(&fx).expect("analysis succeeds");
    let bytes = bundle::to_bytes(&bundle::pack(&outcomes[0].hotpatch));
    let back = bundle::unpack(&bytes).expect("round-trip");
    assert_eq!(back, outcomes[0].hotpatch);
    assert_eq!(bundle::to_bytes(&bundle::pack(&back)), bytes);
    for i in 0..bytes.len() {
        for flip in [0x01u8, 0x20, 0x80] {
            let mut mutated = bytes.clone();
            mutated[i] ^= flip;
            assert!(
                bundle::unpack(&mutated).is_err(),
                "mutation at byte {i} (xor {flip:#04x}) was accepted"
            );
        }
    }
    pass(
        9,
        "pack/unpack byte-identical; every single-byte mutation rejected",
    );
}

/// Criterion 10: two bench runs with one seed agree on everything except
/// wall-time fields.
#[test]
fn criterion_10_bench_determinism() {
    let fixtures = Fixture::load_dir(&fixtures_dir()).expect("corpus loads");
    let a = bench_fixtures(&fixtures, 42);
    let b = bench_fixtures(&fixtures, 42);
    assert_eq!(bench_stable_json(&a), bench_stable_json(&b));
    pass(10, "bench JSON identical across runs modulo *_ms fields");
}
