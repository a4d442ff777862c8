//! Explicit endpoint pool bookkeeping.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcquireMode {
    Exclusive,
    Shared,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    exclusive: bool,
    shared: usize,
}

/// Tracks which explicit endpoints are held and how.
///
/// Exclusive holders get a slot nobody else uses. Shared holders rotate
/// round-robin over the slots that are not held exclusively, so an exclusive
/// owner's serial context is never shared.
#[derive(Debug, Clone)]
pub(crate) struct ExplicitPool {
    slots: Vec<Slot>,
    next_shared: usize,
}

impl ExplicitPool {
    pub(crate) fn new(size: usize) -> Self {
        Self {
            slots: vec![Slot::default(); size],
            next_shared: 0,
        }
    }

    pub(crate) fn acquire(&mut self, mode: AcquireMode) -> Result<usize> {
        if self.slots.is_empty() {
            return Err(Error::NoExplicitPool);
        }
        match mode {
            AcquireMode::Exclusive => {
                let idx = self
                    .slots
                    .iter()
                    .position(|s| !s.exclusive && s.shared == 0)
                    .ok_or(Error::PoolExhausted)?;
                self.slots[idx].exclusive = true;
                Ok(idx)
            }
            AcquireMode::Shared => {
                let n = self.slots.len();
                let idx = (0..n)
                    .map(|k| (self.next_shared + k) % n)
                    .find(|&i| !self.slots[i].exclusive)
                    .ok_or(Error::PoolExhausted)?;
                self.slots[idx].shared += 1;
                self.next_shared = (idx + 1) % n;
                Ok(idx)
            }
        }
    }

    pub(crate) fn release(&mut self, idx: usize, mode: AcquireMode) -> bool {
        let slot = &mut self.slots[idx];
        match mode {
            AcquireMode::Exclusive => {
                debug_assert!(slot.exclusive);
                slot.exclusive = false;
                true
            }
            AcquireMode::Shared => {
                debug_assert!(slot.shared > 0);
                slot.shared -= 1;
                slot.shared == 0
            }
        }
    }

    pub(crate) fn held(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.exclusive || s.shared > 0)
            .count()
    }

    pub(crate) fn share_count(&self, idx: usize) -> usize {
        self.slots[idx].shared
    }
}
