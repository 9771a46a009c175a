use std::collections::VecDeque;

use crate::digest::{ContentHash, ExecSignature};

/// A worker's local state: signatures resident in VRAM and artifacts on local disk.
/// Both are LRU lists with the least recently used entry at the front.
#[derive(Debug, Clone)]
pub struct LocalCache {
    vram_bytes: u64,
    resident: VecDeque<(ExecSignature, u64)>,
    disk_budget: u64,
    disk_used: u64,
    disk: VecDeque<(ContentHash, u64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("footprint of {footprint} bytes exceeds VRAM of {vram} bytes")]
pub struct FootprintTooLarge {
    pub footprint: u64,
    pub vram: u64,
}

impl LocalCache {
    pub fn new(vram_bytes: u64, disk_budget: u64) -> Self {
        Self { vram_bytes, resident: VecDeque::new(), disk_budget, disk_used: 0, disk: VecDeque::new() }
    }

    pub fn is_resident(&self, sig: &ExecSignature) -> bool {
        self.resident.iter().any(|(s, _)| s == sig)
    }

    pub fn resident_signatures(&self) -> impl Iterator<Item = &ExecSignature> {
        self.resident.iter().map(|(s, _)| s)
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident.iter().map(|(_, b)| b).sum()
    }

    /// Make `sig` resident, evicting least recently used signatures until
    /// `footprint` plus `headroom` fits. Returns the evicted signatures.
    pub fn load(&mut self, sig: ExecSignature, footprint: u64, headroom: u64) -> Result<Vec<ExecSignature>, FootprintTooLarge> {
        if let Some(pos) = self.resident.iter().position(|(s, _)| *s == sig) {
            let entry = self.resident.remove(pos).expect("present");
            self.resident.push_back(entry);
            return Ok(Vec::new());
        }
        if footprint > self.vram_bytes {
            return Err(FootprintTooLarge { footprint, vram: self.vram_bytes });
        }
        let budget = self.vram_bytes.saturating_sub(headroom).max(footprint);
        let mut evicted = Vec::new();
        while self.resident_bytes() + footprint > budget {
            match self.resident.pop_front() {
                Some((s, _)) => evicted.push(s),
                None => break,
            }
        }
        self.resident.push_back((sig, footprint));
        Ok(evicted)
    }

    pub fn unload(&mut self, sig: &ExecSignature) {
        self.resident.retain(|(s, _)| s != sig);
    }

    pub fn has_artifact(&self, h: &ContentHash) -> bool {
        self.disk.iter().any(|(a, _)| a == h)
    }

    /// Record `h` on local disk, refreshing its recency; evicts LRU artifacts over budget.
    pub fn insert_artifact(&mut self, h: ContentHash, size: u64) {
        if let Some(pos) = self.disk.iter().position(|(a, _)| *a == h) {
            let entry = self.disk.remove(pos).expect("present");
            self.disk.push_back(entry);
            return;
        }
        self.disk.push_back((h, size));
        self.disk_used += size;
        while self.disk_used > self.disk_budget && self.disk.len() > 1 {
            let (_, s) = self.disk.pop_front().expect("non-empty");
            self.disk_used -= s;
        }
    }

    pub fn disk_used(&self) -> u64 {
        self.disk_used
    }
}
