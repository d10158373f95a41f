//! The table of active hotpatches: bounded to 64 entries, kept sorted by
//! (site id, installation sequence), looked up with binary search.
//!
//! The site id plays the role a trampoline's return address (the link
//! register) would play on hardware: it names the hook that asked for a
//! patch, and it is the registry key.

use std::fmt;

use crate::analyze::Hotpatch;

pub const MAX_PATCHES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatchKey {
    pub site: u32,
    pub seq: u32,
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub key: PatchKey,
    pub hotpatch: Hotpatch,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryError {
    Full,
    DuplicateKey(PatchKey),
    UnknownKey(PatchKey),
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryError::Full => write!(f, "registry full, max {MAX_PATCHES}"),
            RegistryError::DuplicateKey(k) => {
                write!(f, "duplicate registry key (site {}, seq {})", k.site, k.seq)
            }
            RegistryError::UnknownKey(k) => {
                write!(f, "unknown registry key (site {}, seq {})", k.site, k.seq)
            }
        }
    }
}

impl std::error::Error for RegistryError {}

#[derive(Debug, Clone, Default)]
pub struct PatchRegistry {
    entries: Vec<RegistryEntry>,
    next_seq: u32,
}

impl PatchRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Installs a hotpatch on its bound site. Patches on the same site run
    /// in installation order at dispatch time.
    pub fn install(&mut self, hotpatch: Hotpatch) -> Result<PatchKey, RegistryError> {
        if self.entries.len() >= MAX_PATCHES {
            return Err(RegistryError::Full);
        }
        let key = PatchKey {
            site: hotpatch.site_id(),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        let pos = self.entries.partition_point(|e| e.key < key);
        if self.entries.get(pos).map(|e| e.key) == Some(key) {
            return Err(RegistryError::DuplicateKey(key));
        }
        self.entries.insert(
            pos,
            RegistryEntry {
                key,
                hotpatch,
                enabled: true,
            },
        );
        Ok(key)
    }

    fn position(&self, key: PatchKey) -> Result<usize, RegistryError> {
        self.entries
            .iter()
            .position(|e| e.key == key)
            .ok_or(RegistryError::UnknownKey(key))
    }

    pub fn enable(&mut self, key: PatchKey) -> Result<(), RegistryError> {
        let i = self.position(key)?;
        self.entries[i].enabled = true;
        Ok(())
    }

    pub fn disable(&mut self, key: PatchKey) -> Result<(), RegistryError> {
        let i = self.position(key)?;
        self.entries[i].enabled = false;
        Ok(())
    }

    pub fn remove(&mut self, key: PatchKey) -> Result<Hotpatch, RegistryError> {
        let i = self.position(key)?;
        Ok(self.entries.remove(i).hotpatch)
    }

    /// Binary search for the entries bound to `site`. Returns the matching
    /// index range and the number of key comparisons performed, which is at
    /// most `ceil(log2(n)) + 1` for a registry of n entries.
    pub fn lookup(&self, site: u32) -> (std::ops::Range<usize>, u32) {
        let mut comparisons = 0u32;
        let mut lo = 0usize;
        let mut hi = self.entries.len();
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            comparisons += 1;
            if self.entries[mid].key.site < site {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let start = lo;
        let mut end = start;
        while end < self.entries.len() && self.entries[end].key.site == site {
            end += 1;
        }
        (start..end, comparisons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::Hotpatch;

    fn pass_patch(site: u32) -> Hotpatch {
        Hotpatch::trivial_pass("probe", "target", site)
    }

    #[test]
    fn install_keeps_entries_sorted() {
        let mut r = PatchRegistry::new();
        for site in [5u32, 1, 3, 3, 0] {
            r.install(pass_patch(site)).unwrap();
        }
        let keys: Vec<PatchKey> = r.entries().iter().map(|e| e.key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        // Same-site entries keep installation order.
        let (range, _) = r.lookup(3);
        let seqs: Vec<u32> = r.entries()[range].iter().map(|e| e.key.seq).collect();
        assert_eq!(seqs, vec![2, 3]);
    }

    #[test]
    fn capacity_is_64() {
        let mut r = PatchRegistry::new();
        for site in 0..64 {
            r.install(pass_patch(site)).unwrap();
        }
        let err = r.install(pass_patch(64)).unwrap_err();
        assert_eq!(err, RegistryError::Full);
        assert_eq!(err.to_string(), "registry full, max 64");
    }

    #[test]
    fn enable_disable_remove() {
        let mut r = PatchRegistry::new();
        let k = r.install(pass_patch(7)).unwrap();
        r.disable(k).unwrap();
        assert!(!r.entries()[0].enabled);
        r.enable(k).unwrap();
        assert!(r.entries()[0].enabled);
        r.remove(k).unwrap();
        assert!(r.is_empty());
        assert!(matches!(r.remove(k), Err(RegistryError::UnknownKey(_))));
    }

    #[test]
    fn lookup_comparisons_within_logarithmic_bound() {
        for n in [1usize, 2, 4, 8, 16, 32, 64] {
            let mut r = PatchRegistry::new();
            for site in 0..n as u32 {
                r.install(pass_patch(site)).unwrap();
            }
            let bound = (n as f64).log2().ceil() as u32 + 1;
            let mut max_seen = 0;
            for probe in 0..=n as u32 {
                let (_, comparisons) = r.lookup(probe);
                max_seen = max_seen.max(comparisons);
            }
            assert!(max_seen <= bound, "n={n}: {max_seen} > {bound}");
        }
    }
}
