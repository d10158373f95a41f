//! Command-line front end. Every command is a thin wrapper over the library
//! passes; all of them are deterministic given their flags, inputs, and the
//! seed (`--seed` or `HOTFORGE_SEED`).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analyze::{ActionSpec, PatchRange, PatchSpec};
use crate::bundle;
use crate::harness::{bench_fixtures, diff_function, verify_fixture, Fixture, VerifyMode};
use crate::instrument::{instrument_module, recover_module_sites, TrampolineSite};
use crate::ir::{parse_module, print_module, validate_ok, Module};
use crate::runtime::{interpret, ArgValue, Limits, PatchRegistry};

const DEFAULT_SEED: u64 = 20240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Parser)]
#[command(
    name = "hotforge",
    version,
    about = "hotpatch synthesis toolchain for a small SSA IR"
)]
struct Cli {
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Insert trampolines at every instrumentation site of a module.
    Instrument {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the site list and per-kind counts as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Hoist an official patch to its best trampoline and emit a bundle.
    Analyze {
        #[arg(long)]
        vulnerable: PathBuf,
        #[arg(long)]
        patched: PathBuf,
        #[arg(long = "fn")]
        function: String,
        /// Patch location `BLOCK:IDX..BLOCK:IDX`; repeat per fragment.
        #[arg(long = "patch-at", required = true)]
        patch_at: Vec<String>,
        /// `drop:CODE` or `redirect:LABEL`; one per `--patch-at`.
        #[arg(long, required = true)]
        action: Vec<String>,
        #[arg(long)]
        cve: String,
        #[arg(short, long)]
        output: PathBuf,
        /// Dump the substitution trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Interpret a module; exit code is the low byte of the return value.
    Run {
        firmware: PathBuf,
        #[arg(long)]
        entry: String,
        /// Comma-separated arguments: scalars, `[1 2 3]` objects, or
        /// `chain[1 2 3]` linked byte streams.
        #[arg(long, default_value = "")]
        args: String,
        /// Install a patch bundle before running; repeatable.
        #[arg(long)]
        install: Vec<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
    },
    /// Suggest a patch range from the vulnerable/patched difference.
    Diff {
        vulnerable: PathBuf,
        patched: PathBuf,
        #[arg(long = "fn")]
        function: String,
    },
    /// Run the equivalence oracle for one fixture manifest.
    Verify {
        fixture: PathBuf,
        #[arg(long, default_value = "exhaustive")]
        mode: String,
        #[arg(long, default_value_t = 1000)]
        samples: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bench the fixture corpus: analysis time, sizes, dispatch scaling.
    Bench {
        fixtures: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Bundle inspection.
    Bundle {
        #[command(subcommand)]
        cmd: BundleCmd,
    },
}

#[derive(Subcommand)]
enum BundleCmd {
    /// Check a bundle's integrity and embedded hotpatch.
    Verify { file: PathBuf },
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("HOTFORGE_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(DEFAULT_SEED)
}

fn read_module(path: &Path) -> Result<Module, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut m = parse_module(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    m.name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("module")
        .to_string();
    validate_ok(&m).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(m)
}

/// Parses the `--args` string: top-level commas split arguments, brackets
/// group object/chain payloads.
fn parse_args(s: &str) -> Result<Vec<ArgValue>, String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    let mut parts = Vec::new();
    for c in s.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth = depth.checked_sub(1).ok_or("unbalanced `]`")?;
                cur.push(c);
            }
            ',' if depth == 0 => {
                parts.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        parts.push(cur.trim().to_string());
    }
    for part in parts.iter().filter(|p| !p.is_empty()) {
        let list = |inner: &str| -> Result<Vec<i64>, String> {
            inner
                .split_whitespace()
                .map(|w| w.parse::<i64>().map_err(|_| format!("bad number `{w}`")))
                .collect()
        };
        if let Some(rest) = part.strip_prefix("chain[") {
            let inner = rest.strip_suffix(']').ok_or("chain[..] not closed")?;
            out.push(ArgValue::Chain(list(inner)?));
        } else if let Some(rest) = part.strip_prefix('[') {
            let inner = rest.strip_suffix(']').ok_or("[..] not closed")?;
            out.push(ArgValue::Object(list(inner)?));
        } else {
            out.push(ArgValue::Scalar(
                part.parse().map_err(|_| format!("bad argument `{part}`"))?,
            ));
        }
    }
    Ok(out)
}

/// Sites of a module that must be instrumented: recovered when trampolines
/// are present, inserted otherwise.
fn ensure_instrumented(m: Module) -> Result<(Module, Vec<TrampolineSite>), String> {
    if m.has_trampolines() {
        let sites = recover_module_sites(&m).map_err(|e| e.to_string())?;
        Ok((m, sites))
    } else {
        let (inst, report) = instrument_module(&m).map_err(|e| e.to_string())?;
        Ok((inst, report.sites))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct RunTrace<'a> {
    ret: Option<i64>,
    steps: u64,
    trampoline_hits: u64,
    dispatches: &'a [crate::runtime::DispatchRecord],
    stores: &'a [crate::runtime::StoreEvent],
}

fn cmd_instrument(input: &Path, output: &Path, report: Option<&Path>) -> Result<i32, String> {
    let m = read_module(input)?;
    let (inst, rep) = instrument_module(&m).map_err(|e| e.to_string())?;
    std::fs::write(output, print_module(&inst))
        .map_err(|e| format!("{}: {e}", output.display()))?;
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    println!(
        "instrumented {} function(s), {} trampoline(s) -> {}",
        inst.functions.len(),
        rep.sites.len(),
        output.display()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    vulnerable: &Path,
    patched: &Path,
    function: &str,
    patch_at: &[String],
    action: &[String],
    cve: &str,
    output: &Path,
    trace: Option<&Path>,
    format: Format,
) -> Result<i32, String> {
    if patch_at.len() != action.len() {
        return Err("need exactly one --action per --patch-at".into());
    }
    let vuln = read_module(vulnerable)?;
    let pat = read_module(patched)?;
    let (inst, sites) = ensure_instrumented(vuln)?;
    let f_inst = inst
        .function(function)
        .ok_or_else(|| format!("no function `{function}` in {}", vulnerable.display()))?;
    let f_pat = pat
        .function(function)
        .ok_or_else(|| format!("no function `{function}` in {}", patched.display()))?;
    let mut specs = Vec::new();
    for (at, act) in patch_at.iter().zip(action) {
        specs.push(PatchSpec {
            function: function.to_string(),
            range: PatchRange::parse(at)?,
            action: ActionSpec::parse(act)?,
            cve_id: cve.to_string(),
        });
    }
    let outcomes = crate::analyze::analyze_patches(f_inst, f_pat, &specs, &sites)
        .map_err(|e| e.to_string())?;

    let mut written = Vec::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        let path = if outcomes.len() == 1 {
            output.to_path_buf()
        } else {
            let stem = output
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("patch");
            let ext = output
                .extension()
                .and_then(|s| s.to_str())
                .unwrap_or("bundle");
            output.with_file_name(format!("{stem}.{}.{ext}", i + 1))
        };
        let bytes = bundle::to_bytes(&bundle::pack(&outcome.hotpatch));
        std::fs::write(&path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        written.push((path, outcome));
    }
    if let Some(path) = trace {
        #[derive(Serialize)]
        struct TraceOut<'a> {
            fragment: usize,
            scenario: &'a crate::analyze::Scenario,
            site_id: u32,
            site_kind: String,
            expression: String,
            trace: &'a crate::analyze::SubstitutionTrace,
        }
        let payload: Vec<TraceOut> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| TraceOut {
                fragment: i + 1,
                scenario: &o.scenario,
                site_id: o.site.id,
                site_kind: o.site.kind.as_str().to_string(),
                expression: o.expr.to_string(),
                trace: &o.trace,
            })
            .collect();
        write_json(path, &payload)?;
    }
    for (path, outcome) in &written {
        match format {
            Format::Json => println!(
                "{}",
                serde_json::json!({
                    "bundle": path.display().to_string(),
                    "site_id": outcome.site.id,
                    "site_kind": outcome.site.kind.as_str(),
                    "required_vars": outcome.hotpatch.required_vars,
                    "expression": outcome.expr.to_string(),
                })
            ),
            Format::Text => println!(
                "{}: bound to site {} ({}), guard `{}` -> {}",
                outcome.hotpatch.name,
                outcome.site.id,
                outcome.site.kind,
                outcome.expr,
                path.display()
            ),
        }
    }
    Ok(0)
}

fn cmd_run(
    firmware: &Path,
    entry: &str,
    args: &str,
    install: &[PathBuf],
    trace: Option<&Path>,
    max_steps: u64,
) -> Result<i32, String> {
    let m = read_module(firmware)?;
    let mut registry = PatchRegistry::new();
    let m = if install.is_empty() {
        m
    } else {
        let (inst, sites) = ensure_instrumented(m)?;
        for path in install {
            let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let hotpatch =
                bundle::unpack(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            bundle::check_against_module(&hotpatch, &inst, &sites)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            registry.install(hotpatch).map_err(|e| e.to_string())?;
        }
        inst
    };
    let argv = parse_args(args)?;
    let out =
        interpret(&m, entry, &argv, &registry, &Limits { max_steps }).map_err(|e| e.to_string())?;
    if let Some(path) = trace {
        write_json(
            path,
            &RunTrace {
                ret: out.ret,
                steps: out.env.steps,
                trampoline_hits: out.env.trampoline_hits,
                dispatches: &out.env.dispatches,
                stores: &out.env.trace,
            },
        )?;
    }
    match out.ret {
        Some(v) => {
            println!("{v}");
            Ok((v & 0xff) as i32)
        }
        None => {
            println!("void");
            Ok(0)
        }
    }
}

fn cmd_verify(
    fixture: &Path,
    mode: &str,
    samples: u32,
    seed: Option<u64>,
    format: Format,
) -> Result<i32, String> {
    let fx = Fixture::load(fixture).map_err(|e| e.to_string())?;
    let mode = match mode {
        "exhaustive" => VerifyMode::Exhaustive,
        "random" => VerifyMode::Random {
            samples,
            seed: resolve_seed(seed),
        },
        other => return Err(format!("unknown mode `{other}` (exhaustive|random)")),
    };
    let report = verify_fixture(&fx, mode);
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
        ),
        Format::Text => println!("{report}"),
    }
    Ok(if report.is_success() { 0 } else { 1 })
}

fn cmd_bench(
    fixtures: &Path,
    seed: Option<u64>,
    output: Option<&Path>,
    format: Format,
) -> Result<i32, String> {
    let list = Fixture::load_dir(fixtures).map_err(|e| e.to_string())?;
    if list.is_empty() {
        return Err(format!("no fixture manifests under {}", fixtures.display()));
    }
    let report = bench_fixtures(&list, resolve_seed(seed));
    if let Some(path) = output {
        write_json(path, &report)?;
    }
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
        ),
        Format::Text => print!("{}", crate::harness::bench_to_text(&report)),
    }
    Ok(0)
}

fn cmd_diff(
    vulnerable: &Path,
    patched: &Path,
    function: &str,
    format: Format,
) -> Result<i32, String> {
    let v = read_module(vulnerable)?;
    let p = read_module(patched)?;
    let fv = v
        .function(function)
        .ok_or_else(|| format!("no function `{function}` in {}", vulnerable.display()))?;
    let fp = p
        .function(function)
        .ok_or_else(|| format!("no function `{function}` in {}", patched.display()))?;
    let report = diff_function(fv, fp);
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
        ),
        Format::Text => {
            if report.spans.is_empty() {
                println!("no insertions: functions are identical up to common subsequence");
            } else {
                for s in &report.spans {
                    println!("inserted {}:{}..{}:{}", s.block, s.start, s.block, s.end);
                }
                match &report.suggestion {
                    Some(sug) => println!("suggested --patch-at {sug}"),
                    None => println!("warning: non-contiguous patch, pass fragments separately"),
                }
            }
        }
    }
    Ok(0)
}

fn cmd_bundle_verify(file: &Path) -> Result<i32, String> {
    let bytes = std::fs::read(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let h = bundle::unpack(&bytes).map_err(|e| e.to_string())?;
    println!(
        "ok: {} for `{}` site {} ({} vars, {} body instructions)",
        h.name,
        h.target_fn,
        h.site_id,
        h.required_vars.len(),
        h.body.count_instrs()
    );
    Ok(0)
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let format = cli.format;
    let result = match &cli.cmd {
        Cmd::Instrument {
            input,
            output,
            report,
        } => cmd_instrument(input, output, report.as_deref()),
        Cmd::Analyze {
            vulnerable,
            patched,
            function,
            patch_at,
            action,
            cve,
            output,
            trace,
        } => cmd_analyze(
            vulnerable,
            patched,
            function,
            patch_at,
            action,
            cve,
            output,
            trace.as_deref(),
            format,
        ),
        Cmd::Run {
            firmware,
            entry,
            args,
            install,
            trace,
            max_steps,
        } => cmd_run(firmware, entry, args, install, trace.as_deref(), *max_steps),
        Cmd::Diff {
            vulnerable,
            patched,
            function,
        } => cmd_diff(vulnerable, patched, function, format),
        Cmd::Verify {
            fixture,
            mode,
            samples,
            seed,
        } => cmd_verify(fixture, mode, *samples, *seed, format),
        Cmd::Bench {
            fixtures,
            seed,
            output,
        } => cmd_bench(fixtures, *seed, output.as_deref(), format),
        Cmd::Bundle {
            cmd: BundleCmd::Verify { file },
        } => cmd_bundle_verify(file),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
