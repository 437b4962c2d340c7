use std::collections::BTreeMap;
use std::sync::RwLock;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEntry {
    pub blocked_at: f64,
    /// Object ids of the verified outliers that triggered the block.
    pub evidence: Vec<u64>,
}

/// Blocked sources. Reads may run concurrently; writes are serialized.
#[derive(Debug, Default)]
pub struct BlockList {
    inner: RwLock<BTreeMap<String, BlockEntry>>,
}

impl BlockList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true when `source` was not blocked before. An existing entry is
    /// kept as is.
    pub fn block(&self, source: &str, at: f64, evidence: Vec<u64>) -> bool {
        let mut map = self.inner.write().expect("blocklist lock poisoned");
        if map.contains_key(source) {
            return false;
        }
        map.insert(
            source.to_string(),
            BlockEntry {
                blocked_at: at,
                evidence,
            },
        );
        true
    }

    pub fn is_blocked(&self, source: &str) -> bool {
        self.inner
            .read()
            .expect("blocklist lock poisoned")
            .contains_key(source)
    }

    pub fn entry(&self, source: &str) -> Option<BlockEntry> {
        self.inner
            .read()
            .expect("blocklist lock poisoned")
            .get(source)
            .cloned()
    }

    pub fn clear(&self, source: &str) -> bool {
        self.inner
            .write()
            .expect("blocklist lock poisoned")
            .remove(source)
            .is_some()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("blocklist lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sources(&self) -> Vec<String> {
        self.inner
            .read()
            .expect("blocklist lock poisoned")
            .keys()
            .cloned()
            .collect()
    }
}
