//! Fixture pairs: a vulnerable module, its patched counterpart, the patch
//! locations, and the input domain the equivalence oracle sweeps.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analyze::{ActionSpec, PatchRange, PatchSpec};
use crate::ir::{parse_module, validate, Module};
use crate::runtime::ArgValue;

#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    tag: String,
    function: String,
    vulnerable: String,
    patched: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    expect_unfixable: Option<String>,
    #[serde(default)]
    patches: Vec<PatchEntry>,
    #[serde(default)]
    inputs: Vec<InputEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct PatchEntry {
    cve: String,
    at: String,
    action: String,
}

#[derive(Debug, Clone, Deserialize)]
struct InputEntry {
    kind: String,
    #[serde(default)]
    values: Vec<i64>,
    #[serde(default)]
    range: Option<[i64; 2]>,
    #[serde(default)]
    slots: Vec<Vec<i64>>,
    #[serde(default)]
    lengths: Vec<usize>,
    #[serde(default)]
    last_low: bool,
}

/// Per-argument input domain.
#[derive(Debug, Clone)]
pub enum ArgDomain {
    Scalar {
        values: Vec<i64>,
    },
    /// One object cell; the cartesian product of the slot domains.
    Object {
        slots: Vec<Vec<i64>>,
    },
    /// Chains of each length over `values`; `last_low` masks the final
    /// element to 7 bits so a stream always terminates.
    Chain {
        lengths: Vec<usize>,
        values: Vec<i64>,
        last_low: bool,
    },
}

impl ArgDomain {
    fn enumerate(&self) -> Vec<ArgValue> {
        match self {
            ArgDomain::Scalar { values } => values.iter().map(|&v| ArgValue::Scalar(v)).collect(),
            ArgDomain::Object { slots } => {
                let mut out = vec![Vec::new()];
                for slot in slots {
                    let mut next = Vec::new();
                    for prefix in &out {
                        for &v in slot {
                            let mut p = prefix.clone();
                            p.push(v);
                            next.push(p);
                        }
                    }
                    out = next;
                }
                out.into_iter().map(ArgValue::Object).collect()
            }
            ArgDomain::Chain {
                lengths,
                values,
                last_low,
            } => {
                let mut seen: HashSet<Vec<i64>> = HashSet::new();
                let mut out = Vec::new();
                for &len in lengths {
                    let mut chains = vec![Vec::new()];
                    for _ in 0..len {
                        let mut next = Vec::new();
                        for prefix in &chains {
                            for &v in values {
                                let mut p = prefix.clone();
                                p.push(v);
                                next.push(p);
                            }
                        }
                        chains = next;
                    }
                    for mut chain in chains {
                        if *last_low {
                            if let Some(last) = chain.last_mut() {
                                *last &= 0x7f;
                            }
                        }
                        if seen.insert(chain.clone()) {
                            out.push(ArgValue::Chain(chain));
                        }
                    }
                }
                out
            }
        }
    }

    fn sample(&self, rng: &mut dyn rand::RngCore) -> ArgValue {
        let pick = |rng: &mut dyn rand::RngCore, values: &[i64]| -> i64 {
            values[(rng.next_u64() % values.len() as u64) as usize]
        };
        match self {
            ArgDomain::Scalar { values } => ArgValue::Scalar(pick(rng, values)),
            ArgDomain::Object { slots } => {
                ArgValue::Object(slots.iter().map(|s| pick(rng, s)).collect())
            }
            ArgDomain::Chain {
                lengths,
                values,
                last_low,
            } => {
                let len = lengths[(rng.next_u64() % lengths.len() as u64) as usize];
                let mut chain: Vec<i64> = (0..len).map(|_| pick(rng, values)).collect();
                if *last_low {
                    if let Some(last) = chain.last_mut() {
                        *last &= 0x7f;
                    }
                }
                ArgValue::Chain(chain)
            }
        }
    }
}

#[derive(Debug)]
pub enum FixtureError {
    Io(PathBuf, std::io::Error),
    Manifest(PathBuf, String),
    Ir(PathBuf, String),
    Invalid(PathBuf, String),
}

impl fmt::Display for FixtureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixtureError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            FixtureError::Manifest(p, e) => write!(f, "{}: bad manifest: {e}", p.display()),
            FixtureError::Ir(p, e) => write!(f, "{}: {e}", p.display()),
            FixtureError::Invalid(p, e) => write!(f, "{}: invalid module: {e}", p.display()),
        }
    }
}

impl std::error::Error for FixtureError {}

/// A loaded fixture pair with its declared patch specs and input domain.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub tag: String,
    pub description: String,
    pub function: String,
    pub vulnerable: Module,
    pub patched: Module,
    pub specs: Vec<PatchSpec>,
    pub domains: Vec<ArgDomain>,
    pub expect_unfixable: Option<String>,
}

impl Fixture {
    pub fn load(manifest_path: &Path) -> Result<Fixture, FixtureError> {
        let read = |p: &Path| -> Result<String, FixtureError> {
            std::fs::read_to_string(p).map_err(|e| FixtureError::Io(p.to_path_buf(), e))
        };
        let text = read(manifest_path)?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| FixtureError::Manifest(manifest_path.to_path_buf(), e.to_string()))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));

        let load_module = |rel: &str| -> Result<Module, FixtureError> {
            let path = dir.join(rel);
            let mut module = parse_module(&read(&path)?)
                .map_err(|e| FixtureError::Ir(path.clone(), e.to_string()))?;
            module.name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("module")
                .to_string();
            let violations = validate(&module);
            if !violations.is_empty() {
                return Err(FixtureError::Invalid(path, violations[0].to_string()));
            }
            Ok(module)
        };
        let vulnerable = load_module(&manifest.vulnerable)?;
        let patched = load_module(&manifest.patched)?;

        let mut specs = Vec::new();
        for p in &manifest.patches {
            let range = PatchRange::parse(&p.at)
                .map_err(|e| FixtureError::Manifest(manifest_path.to_path_buf(), e))?;
            let action = ActionSpec::parse(&p.action)
                .map_err(|e| FixtureError::Manifest(manifest_path.to_path_buf(), e))?;
            specs.push(PatchSpec {
                function: manifest.function.clone(),
                range,
                action,
                cve_id: p.cve.clone(),
            });
        }
        let mut domains = Vec::new();
        for (i, input) in manifest.inputs.iter().enumerate() {
            let bad = |msg: &str| {
                FixtureError::Manifest(manifest_path.to_path_buf(), format!("inputs[{i}]: {msg}"))
            };
            let domain = match input.kind.as_str() {
                "scalar" => {
                    let mut values = input.values.clone();
                    if let Some([lo, hi]) = input.range {
                        values.extend(lo..=hi);
                    }
                    if values.is_empty() {
                        return Err(bad("scalar domain is empty"));
                    }
                    ArgDomain::Scalar { values }
                }
                "object" => {
                    if input.slots.is_empty() || input.slots.iter().any(|s| s.is_empty()) {
                        return Err(bad("object domain needs nonempty slots"));
                    }
                    ArgDomain::Object {
                        slots: input.slots.clone(),
                    }
                }
                "chain" => {
                    if input.lengths.is_empty() || input.values.is_empty() {
                        return Err(bad("chain domain needs lengths and values"));
                    }
                    ArgDomain::Chain {
                        lengths: input.lengths.clone(),
                        values: input.values.clone(),
                        last_low: input.last_low,
                    }
                }
                other => return Err(bad(&format!("unknown input kind `{other}`"))),
            };
            domains.push(domain);
        }

        Ok(Fixture {
            tag: manifest.tag,
            description: manifest.description,
            function: manifest.function,
            vulnerable,
            patched,
            specs,
            domains,
            expect_unfixable: manifest.expect_unfixable,
        })
    }

    /// Loads every `*.toml` fixture under a directory, sorted by tag.
    pub fn load_dir(dir: &Path) -> Result<Vec<Fixture>, FixtureError> {
        let entries = std::fs::read_dir(dir).map_err(|e| FixtureError::Io(dir.to_path_buf(), e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "toml").unwrap_or(false))
            .collect();
        paths.sort();
        let mut fixtures = Vec::new();
        for p in paths {
            fixtures.push(Fixture::load(&p)?);
        }
        fixtures.sort_by(|a, b| a.tag.cmp(&b.tag));
        Ok(fixtures)
    }

    /// Full cartesian product of all argument domains.
    pub fn exhaustive_inputs(&self) -> Vec<Vec<ArgValue>> {
        let per_arg: Vec<Vec<ArgValue>> = self.domains.iter().map(|d| d.enumerate()).collect();
        let mut out: Vec<Vec<ArgValue>> = vec![Vec::new()];
        for arg in per_arg {
            let mut next = Vec::with_capacity(out.len() * arg.len());
            for prefix in &out {
                for v in &arg {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }

    pub fn sample_input(&self, rng: &mut dyn rand::RngCore) -> Vec<ArgValue> {
        self.domains.iter().map(|d| d.sample(rng)).collect()
    }
}
