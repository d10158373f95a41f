//! Patch bundles: the canonical transport form of a hotpatch.
//!
//! A bundle is a single-line JSON document with a fixed key order and no
//! insignificant whitespace; `checksum` is the SHA-256 of the serialization
//! of every preceding field. Signing is out of scope, so the checksum is
//! the integrity hook: any byte flip is rejected at unpack time.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyze::{ActionDesc, Hotpatch};
use crate::instrument::{SiteKind, TrampolineSite};
use crate::ir::{parse_module, print_function, validate_ok, InstrKind, Module, Ty};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BundleBody {
    version: u32,
    cve_id: String,
    name: String,
    target_fn: String,
    site_id: u32,
    site_kind: SiteKind,
    required_vars: Vec<String>,
    action: ActionDesc,
    hotpatch_ir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBundle {
    #[serde(flatten)]
    body: BundleBody,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BundleError {
    Malformed(String),
    IntegrityFailure,
    UnknownVersion(u32),
    BadHotpatch(String),
    SiteMismatch(String),
}

impl fmt::Display for BundleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BundleError::Malformed(d) => write!(f, "malformed bundle: {d}"),
            BundleError::IntegrityFailure => write!(f, "bundle integrity failure"),
            BundleError::UnknownVersion(v) => write!(f, "unknown bundle version {v}"),
            BundleError::BadHotpatch(d) => write!(f, "bundle hotpatch invalid: {d}"),
            BundleError::SiteMismatch(d) => write!(f, "bundle site mismatch: {d}"),
        }
    }
}

impl std::error::Error for BundleError {}

fn checksum_of(body: &BundleBody) -> String {
    let canonical = serde_json::to_string(body).expect("bundle body serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Packs a hotpatch into its canonical byte form. Deterministic: equal
/// hotpatches produce identical bytes.
pub fn pack(h: &Hotpatch) -> PatchBundle {
    let hotpatch_ir = format!("extern frame_get\n\n{}", print_function(&h.body));
    let body = BundleBody {
        version: BUNDLE_VERSION,
        cve_id: h.cve_id.clone(),
        name: h.name.clone(),
        target_fn: h.target_fn.clone(),
        site_id: h.site_id,
        site_kind: h.site_kind,
        required_vars: h.required_vars.clone(),
        action: h.action.clone(),
        hotpatch_ir,
    };
    let checksum = checksum_of(&body);
    PatchBundle { body, checksum }
}

pub fn to_bytes(bundle: &PatchBundle) -> Vec<u8> {
    serde_json::to_string(bundle)
        .expect("bundle serializes")
        .into_bytes()
}

/// Parses and verifies a bundle, rebuilding the hotpatch. The checksum is
/// checked first; the embedded IR must parse, validate, and be pure (no
/// trampolines, no calls besides `frame_get`, a single ptr parameter).
pub fn unpack(bytes: &[u8]) -> Result<Hotpatch, BundleError> {
    let text = std::str::from_utf8(bytes).map_err(|e| BundleError::Malformed(e.to_string()))?;
    let bundle: PatchBundle =
        serde_json::from_str(text).map_err(|e| BundleError::Malformed(e.to_string()))?;
    // Accept exactly the canonical byte form: a parse that survives only
    // because serde tolerated a deviation (dropped key, reordered fields,
    // stray whitespace) must not.
    if serde_json::to_string(&bundle)
        .expect("bundle serializes")
        .as_bytes()
        != bytes
    {
        return Err(BundleError::Malformed(
            "bundle is not in canonical form".into(),
        ));
    }
    if checksum_of(&bundle.body) != bundle.checksum {
        return Err(BundleError::IntegrityFailure);
    }
    let body = bundle.body;
    if body.version != BUNDLE_VERSION {
        return Err(BundleError::UnknownVersion(body.version));
    }
    let module =
        parse_module(&body.hotpatch_ir).map_err(|e| BundleError::BadHotpatch(e.to_string()))?;
    validate_ok(&module).map_err(|e| BundleError::BadHotpatch(e.to_string()))?;
    let func = module
        .function(&body.name)
        .ok_or_else(|| BundleError::BadHotpatch(format!("missing function `{}`", body.name)))?;
    if !matches!(func.params.as_slice(), [(_, Ty::Ptr)]) {
        return Err(BundleError::BadHotpatch(
            "hotpatch must take one ptr frame".into(),
        ));
    }
    for block in &func.blocks {
        for i in &block.instrs {
            match &i.kind {
                InstrKind::Trampoline { .. } => {
                    return Err(BundleError::BadHotpatch(
                        "hotpatch contains a trampoline".into(),
                    ))
                }
                InstrKind::Call { callee, .. } if callee != "frame_get" => {
                    return Err(BundleError::BadHotpatch(format!(
                        "hotpatch calls `{callee}`"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(Hotpatch {
        name: body.name,
        body: func.clone(),
        target_fn: body.target_fn,
        site_id: body.site_id,
        site_kind: body.site_kind,
        required_vars: body.required_vars,
        action: body.action,
        cve_id: body.cve_id,
    })
}

/// Install-time check: the bundle's site must exist in the module, belong
/// to the bound function, and agree on kind; redirect targets must resolve.
pub fn check_against_module(
    h: &Hotpatch,
    module: &Module,
    sites: &[TrampolineSite],
) -> Result<(), BundleError> {
    let site = sites
        .iter()
        .find(|s| s.id == h.site_id)
        .ok_or_else(|| BundleError::SiteMismatch(format!("site {} not in module", h.site_id)))?;
    if site.function != h.target_fn {
        return Err(BundleError::SiteMismatch(format!(
            "site {} belongs to `{}`, bundle targets `{}`",
            h.site_id, site.function, h.target_fn
        )));
    }
    if site.kind != h.site_kind {
        return Err(BundleError::SiteMismatch(format!(
            "site {} is {}, bundle expects {}",
            h.site_id, site.kind, h.site_kind
        )));
    }
    let func = module.function(&h.target_fn).ok_or_else(|| {
        BundleError::SiteMismatch(format!("function `{}` not in module", h.target_fn))
    })?;
    if let (Some(label), Some(index)) = (&h.action.target_label, h.action.target_index) {
        if func.blocks.get(index).map(|b| &b.label) != Some(label) {
            return Err(BundleError::SiteMismatch(format!(
                "redirect target `{label}` is not block {index} of `{}`",
                h.target_fn
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Hotpatch {
        Hotpatch::trivial_pass("filter_test_1", "target", 3)
    }

    #[test]
    fn pack_unpack_round_trips() {
        let h = sample();
        let bundle = pack(&h);
        let bytes = to_bytes(&bundle);
        let back = unpack(&bytes).unwrap();
        assert_eq!(back, h);
        // Byte-identical re-pack.
        assert_eq!(to_bytes(&pack(&back)), bytes);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = to_bytes(&pack(&sample()));
        for i in 0..bytes.len() {
            for flip in [0x01u8, 0x80] {
                let mut mutated = bytes.clone();
                mutated[i] ^= flip;
                assert!(
                    unpack(&mutated).is_err(),
                    "byte {i} flipped by {flip:#x} was accepted"
                );
            }
        }
    }

    #[test]
    fn checksum_failure_class_when_payload_edited() {
        let mut bundle = pack(&sample());
        bundle.body.site_id = 4;
        let err = unpack(&to_bytes(&bundle)).unwrap_err();
        assert_eq!(err, BundleError::IntegrityFailure);
    }
}
