use super::SyncError;
use crate::ahb::PackedWords;

/// One cycle of buffered leader outputs. `leader_outputs` and `prediction`
/// are packed snapshots (see [`crate::ahb::pack_small`]).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LobEntry {
    pub cycle: u64,
    pub leader_outputs: PackedWords,
    pub prediction: Option<PackedWords>,
}

/// Leader Output Buffer, bounded by the configured depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lob {
    depth: usize,
    entries: Vec<LobEntry>,
}

impl Lob {
    pub fn new(depth: usize) -> Self {
        Lob { depth, entries: Vec::with_capacity(depth) }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, e: LobEntry) -> Result<(), SyncError> {
        if self.entries.len() >= self.depth {
            return Err(SyncError::LobOverflow(self.depth));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn entries(&self) -> &[LobEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<&LobEntry> {
        self.entries.get(i)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_bound() {
        let mut lob = Lob::new(2);
        let e = LobEntry { cycle: 0, leader_outputs: PackedWords::new(), prediction: None };
        lob.push(e.clone()).unwrap();
        lob.push(e.clone()).unwrap();
        assert_eq!(lob.push(e), Err(SyncError::LobOverflow(2)));
        lob.clear();
        assert!(lob.is_empty());
    }
}
