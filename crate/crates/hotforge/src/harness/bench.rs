//! Desk-scale bench suite: per-fixture analysis wall time, hotpatch sizes,
//! dispatcher comparison scaling, and empty-registry step overhead. Wall
//! times live in `*_ms` fields; everything else is deterministic for a
//! fixed seed.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyze::Hotpatch;
use crate::bundle;
use crate::harness::fixture::Fixture;
use crate::harness::verify::prepare;
use crate::ir::Module;
use crate::runtime::{interpret, Limits, PatchRegistry, TRAMPOLINE_MISS_STEPS};

#[derive(Debug, Clone, Serialize)]
pub struct DispatchPoint {
    pub registry_size: usize,
    pub max_comparisons: u32,
    pub bound: u32,
}

/// Probes dispatcher lookups for registry sizes 1..=64, recording the worst
/// comparison count over all sites plus one miss probe.
pub fn dispatch_scaling() -> Vec<DispatchPoint> {
    [1usize, 2, 4, 8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let mut registry = PatchRegistry::new();
            for site in 0..n as u32 {
                registry
                    .install(Hotpatch::trivial_pass(
                        &format!("probe_{site}"),
                        "bench",
                        site,
                    ))
                    .expect("bench registry within capacity");
            }
            let mut max_comparisons = 0;
            for probe in 0..=n as u32 {
                let (_, comparisons) = registry.lookup(probe);
                max_comparisons = max_comparisons.max(comparisons);
            }
            DispatchPoint {
                registry_size: n,
                max_comparisons,
                bound: (n as f64).log2().ceil() as u32 + 1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HotpatchStat {
    pub name: String,
    pub site_id: u32,
    pub site_kind: String,
    pub instructions: usize,
    pub bundle_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub tag: String,
    pub status: String,
    pub analysis_ms: f64,
    pub hotpatches: Vec<HotpatchStat>,
    pub trampolines_in_function: usize,
    pub step_overhead_per_trampoline: u64,
    pub probe_runs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub rows: Vec<BenchRow>,
    pub dispatch: Vec<DispatchPoint>,
}

fn failed_row(tag: &str, reason: String) -> BenchRow {
    BenchRow {
        tag: tag.to_string(),
        status: format!("failed: {reason}"),
        analysis_ms: 0.0,
        hotpatches: vec![],
        trampolines_in_function: 0,
        step_overhead_per_trampoline: TRAMPOLINE_MISS_STEPS,
        probe_runs: 0,
    }
}

/// Instrumentation step overhead on a few seeded probe inputs; the delta
/// must be the trampoline count times the documented constant.
fn probe_overhead(fx: &Fixture, inst: &Module, seed: u64) -> Result<u64, String> {
    let empty = PatchRegistry::new();
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs = 8u64;
    for _ in 0..runs {
        let input = fx.sample_input(&mut rng);
        let a = interpret(&fx.vulnerable, &fx.function, &input, &empty, &limits)
            .map_err(|e| e.to_string())?;
        let b =
            interpret(inst, &fx.function, &input, &empty, &limits).map_err(|e| e.to_string())?;
        if b.env.steps - a.env.steps != b.env.trampoline_hits * TRAMPOLINE_MISS_STEPS {
            return Err("step overhead is not trampoline-proportional".into());
        }
    }
    Ok(runs)
}

pub fn bench_fixtures(fixtures: &[Fixture], seed: u64) -> BenchReport {
    let mut rows = Vec::new();
    for fx in fixtures {
        let started = Instant::now();
        let prepared = prepare(fx);
        let analysis_ms = started.elapsed().as_secs_f64() * 1e3;
        let row = match prepared {
            Err(e) => failed_row(&fx.tag, e.to_string()),
            Ok((inst, outcomes, _)) => {
                let hotpatches = outcomes
                    .iter()
                    .map(|o| HotpatchStat {
                        name: o.hotpatch.name.clone(),
                        site_id: o.hotpatch.site_id,
                        site_kind: o.hotpatch.site_kind.as_str().to_string(),
                        instructions: o.hotpatch.body.count_instrs(),
                        bundle_bytes: bundle::to_bytes(&bundle::pack(&o.hotpatch)).len(),
                    })
                    .collect();
                let trampolines = inst
                    .function(&fx.function)
                    .map(|f| {
                        f.count_instrs()
                            - fx.vulnerable.function(&fx.function).unwrap().count_instrs()
                    })
                    .unwrap_or(0);
                match probe_overhead(fx, &inst, seed) {
                    Err(e) => failed_row(&fx.tag, e),
                    Ok(probe_runs) => BenchRow {
                        tag: fx.tag.clone(),
                        status: "ok".into(),
                        analysis_ms,
                        hotpatches,
                        trampolines_in_function: trampolines,
                        step_overhead_per_trampoline: TRAMPOLINE_MISS_STEPS,
                        probe_runs,
                    },
                }
            }
        };
        rows.push(row);
    }
    // Unfixable fixtures are bench rows too; mark the expected ones.
    for (row, fx) in rows.iter_mut().zip(fixtures) {
        if let Some(class) = &fx.expect_unfixable {
            if row.status.starts_with("failed") && row.status.contains(class.as_str()) {
                row.status = format!("unfixable (expected): {class}");
            }
        }
    }
    rows.sort_by(|a, b| a.tag.cmp(&b.tag));
    BenchReport {
        seed,
        rows,
        dispatch: dispatch_scaling(),
    }
}

/// Plain-text table rendering.
pub fn to_text(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("seed: {}\n\n", report.seed));
    let headers = [
        "fixture",
        "status",
        "analysis ms",
        "hotpatch instrs",
        "sites",
        "bundle bytes",
    ];
    let mut table: Vec<[String; 6]> = Vec::new();
    for row in &report.rows {
        let instrs = row
            .hotpatches
            .iter()
            .map(|h| h.instructions.to_string())
            .collect::<Vec<_>>()
            .join("+");
        let kinds = row
            .hotpatches
            .iter()
            .map(|h| h.site_kind.clone())
            .collect::<Vec<_>>()
            .join("+");
        let bytes = row
            .hotpatches
            .iter()
            .map(|h| h.bundle_bytes.to_string())
            .collect::<Vec<_>>()
            .join("+");
        table.push([
            row.tag.clone(),
            row.status.clone(),
            format!("{:.3}", row.analysis_ms),
            if instrs.is_empty() {
                "-".into()
            } else {
                instrs
            },
            if kinds.is_empty() { "-".into() } else { kinds },
            if bytes.is_empty() { "-".into() } else { bytes },
        ]);
    }
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out.push_str(&fmt_row(
        &headers.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    ));
    out.push('\n');
    for row in &table {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out.push_str("\ndispatch comparisons vs registry size:\n");
    for p in &report.dispatch {
        out.push_str(&format!(
            "  n={:<3} max comparisons {} (bound {})\n",
            p.registry_size, p.max_comparisons, p.bound
        ));
    }
    out
}

/// JSON with wall-time fields blanked, for determinism comparisons.
pub fn stable_json(report: &BenchReport) -> serde_json::Value {
    let mut value = serde_json::to_value(report).expect("report serializes");
    fn scrub(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                let time_keys: Vec<String> =
                    map.keys().filter(|k| k.ends_with("_ms")).cloned().collect();
                for k in time_keys {
                    map[&k] = serde_json::Value::Null;
                }
                for (_, child) in map.iter_mut() {
                    scrub(child);
                }
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(scrub),
            _ => {}
        }
    }
    scrub(&mut value);
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_scaling_is_logarithmic_and_monotone() {
        let points = dispatch_scaling();
        let mut last = 0;
        for p in &points {
            assert!(
                p.max_comparisons <= p.bound,
                "n={}: {} > {}",
                p.registry_size,
                p.max_comparisons,
                p.bound
            );
            assert!(
                p.max_comparisons >= last,
                "comparisons decreased at n={}",
                p.registry_size
            );
            last = p.max_comparisons;
        }
    }
}
