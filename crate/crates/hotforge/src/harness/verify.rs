//! Differential verification: the patched module is the oracle for the
//! instrumented-plus-hotpatched vulnerable module. Equivalence means equal
//! return values and equal observable store traces (stores to harness cells;
//! locals die with the frame and are not observable).

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyze::{analyze_patches, AnalyzeOutcome};
use crate::bundle;
use crate::harness::fixture::Fixture;
use crate::instrument::instrument_module;
use crate::ir::Module;
use crate::runtime::{
    interpret, ArgValue, Limits, PatchRegistry, RunOutcome, TRAMPOLINE_MISS_STEPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    Exhaustive,
    Random { samples: u32, seed: u64 },
}

impl fmt::Display for VerifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyMode::Exhaustive => write!(f, "exhaustive"),
            VerifyMode::Random { samples, seed } => write!(f, "random(n={samples}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterExample {
    pub input: Vec<String>,
    pub patched: String,
    pub hotpatched: String,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerifyReport {
    Pass {
        tag: String,
        mode: String,
        cases: u64,
    },
    Fail {
        tag: String,
        mode: String,
        cases_run: u64,
        counterexample: CounterExample,
    },
    CannotFix {
        tag: String,
        error: String,
        class: String,
        /// Whether the fixture declares this failure class as intended.
        expected: bool,
    },
    /// The fixture expected an analysis failure that did not happen.
    UnexpectedFixable { tag: String },
}

impl VerifyReport {
    /// Pass, or an expected cannot-fix.
    pub fn is_success(&self) -> bool {
        matches!(
            self,
            VerifyReport::Pass { .. } | VerifyReport::CannotFix { expected: true, .. }
        )
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyReport::Pass { tag, mode, cases } => {
                write!(f, "{tag}: pass ({cases} cases, {mode})")
            }
            VerifyReport::Fail { tag, cases_run, counterexample, .. } => write!(
                f,
                "{tag}: FAIL after {cases_run} cases\n  input: {}\n  patched:    {}\n  hotpatched: {}",
                counterexample.input.join(", "),
                counterexample.patched,
                counterexample.hotpatched
            ),
            VerifyReport::CannotFix { tag, error, expected, .. } => {
                if *expected {
                    write!(f, "{tag}: cannot fix (expected): {error}")
                } else {
                    write!(f, "{tag}: cannot fix: {error}")
                }
            }
            VerifyReport::UnexpectedFixable { tag } => {
                write!(f, "{tag}: FAIL: expected analysis to reject this fixture, but it succeeded")
            }
        }
    }
}

fn describe(outcome: &Result<RunOutcome, crate::runtime::RuntimeError>) -> String {
    match outcome {
        Ok(out) => {
            let obs: Vec<String> = out
                .env
                .observable_trace()
                .iter()
                .map(|e| format!("({},{})", e.cell, e.value))
                .collect();
            format!(
                "ret={} stores=[{}]",
                out.ret
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "void".into()),
                obs.join(" ")
            )
        }
        Err(e) => format!("error: {e}"),
    }
}

fn equivalent(a: &RunOutcome, b: &RunOutcome) -> bool {
    a.ret == b.ret && a.env.observable_trace() == b.env.observable_trace()
}

/// Instruments the fixture's vulnerable module and installs every analyzed
/// hotpatch through the bundle transport path.
pub fn prepare(
    fx: &Fixture,
) -> Result<(Module, Vec<AnalyzeOutcome>, PatchRegistry), crate::analyze::AnalyzeError> {
    let (inst, report) = instrument_module(&fx.vulnerable).map_err(|e| {
        crate::analyze::AnalyzeError::InvalidSpec(format!("instrumentation failed: {e}"))
    })?;
    let f_inst = inst.function(&fx.function).ok_or_else(|| {
        crate::analyze::AnalyzeError::InvalidSpec(format!("no function `{}`", fx.function))
    })?;
    let f_pat = fx.patched.function(&fx.function).ok_or_else(|| {
        crate::analyze::AnalyzeError::InvalidSpec(format!("no patched function `{}`", fx.function))
    })?;
    let outcomes = analyze_patches(f_inst, f_pat, &fx.specs, &report.sites)?;
    let mut registry = PatchRegistry::new();
    for outcome in &outcomes {
        // Round-trip through the wire format so verification covers it.
        let packed = bundle::to_bytes(&bundle::pack(&outcome.hotpatch));
        let unpacked = bundle::unpack(&packed).map_err(|e| {
            crate::analyze::AnalyzeError::InvalidSpec(format!("bundle round-trip failed: {e}"))
        })?;
        bundle::check_against_module(&unpacked, &inst, &report.sites).map_err(|e| {
            crate::analyze::AnalyzeError::InvalidSpec(format!("bundle install failed: {e}"))
        })?;
        registry.install(unpacked).map_err(|e| {
            crate::analyze::AnalyzeError::InvalidSpec(format!("registry install failed: {e}"))
        })?;
    }
    Ok((inst, outcomes, registry))
}

/// Runs the equivalence oracle over the fixture's input domain.
pub fn verify_fixture(fx: &Fixture, mode: VerifyMode) -> VerifyReport {
    let (inst, _, registry) = match prepare(fx) {
        Ok(x) => x,
        Err(e) => {
            let class = e.class().to_string();
            let expected = fx.expect_unfixable.as_deref() == Some(class.as_str());
            return VerifyReport::CannotFix {
                tag: fx.tag.clone(),
                error: e.to_string(),
                class,
                expected,
            };
        }
    };
    if fx.expect_unfixable.is_some() {
        return VerifyReport::UnexpectedFixable {
            tag: fx.tag.clone(),
        };
    }

    let limits = Limits::default();
    let empty = PatchRegistry::new();
    let mut cases = 0u64;
    let mut check = |input: &[ArgValue]| -> Option<CounterExample> {
        cases += 1;
        let oracle = interpret(&fx.patched, &fx.function, input, &empty, &limits);
        let subject = interpret(&inst, &fx.function, input, &registry, &limits);
        let ok = match (&oracle, &subject) {
            (Ok(a), Ok(b)) => equivalent(a, b),
            _ => false,
        };
        if ok {
            None
        } else {
            Some(CounterExample {
                input: input.iter().map(|a| a.to_string()).collect(),
                patched: describe(&oracle),
                hotpatched: describe(&subject),
            })
        }
    };

    let counterexample = match mode {
        VerifyMode::Exhaustive => {
            let mut found = None;
            for input in fx.exhaustive_inputs() {
                if let Some(ce) = check(&input) {
                    found = Some(ce);
                    break;
                }
            }
            found
        }
        VerifyMode::Random { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut found = None;
            for _ in 0..samples {
                let input = fx.sample_input(&mut rng);
                if let Some(ce) = check(&input) {
                    found = Some(ce);
                    break;
                }
            }
            found
        }
    };
    match counterexample {
        None => VerifyReport::Pass {
            tag: fx.tag.clone(),
            mode: mode.to_string(),
            cases,
        },
        Some(ce) => VerifyReport::Fail {
            tag: fx.tag.clone(),
            mode: mode.to_string(),
            cases_run: cases,
            counterexample: ce,
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PreservationReport {
    pub tag: String,
    pub cases: u64,
    /// Steps each executed trampoline added; constant across all runs.
    pub step_overhead_per_trampoline: u64,
    pub trampolines_executed: u64,
}

/// No-patch transparency: with an empty registry the instrumented module
/// must be fully trace-equivalent to the original, and cost exactly
/// `TRAMPOLINE_MISS_STEPS` extra steps per executed trampoline.
pub fn preservation_check(
    fx: &Fixture,
    samples: u32,
    seed: u64,
) -> Result<PreservationReport, String> {
    let (inst, _) = instrument_module(&fx.vulnerable).map_err(|e| e.to_string())?;
    let empty = PatchRegistry::new();
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_tramps = 0u64;
    for case in 0..samples {
        let input = fx.sample_input(&mut rng);
        let a = interpret(&fx.vulnerable, &fx.function, &input, &empty, &limits)
            .map_err(|e| format!("case {case}: original run failed: {e}"))?;
        let b = interpret(&inst, &fx.function, &input, &empty, &limits)
            .map_err(|e| format!("case {case}: instrumented run failed: {e}"))?;
        if a.ret != b.ret || a.env.trace != b.env.trace {
            return Err(format!(
                "case {case}: instrumented run diverged on input {:?}",
                input.iter().map(|a| a.to_string()).collect::<Vec<_>>()
            ));
        }
        let extra = b.env.steps - a.env.steps;
        if extra != b.env.trampoline_hits * TRAMPOLINE_MISS_STEPS {
            return Err(format!(
                "case {case}: step overhead {extra} != {} trampolines x {TRAMPOLINE_MISS_STEPS}",
                b.env.trampoline_hits
            ));
        }
        total_tramps += b.env.trampoline_hits;
    }
    Ok(PreservationReport {
        tag: fx.tag.clone(),
        cases: samples as u64,
        step_overhead_per_trampoline: TRAMPOLINE_MISS_STEPS,
        trampolines_executed: total_tramps,
    })
}
