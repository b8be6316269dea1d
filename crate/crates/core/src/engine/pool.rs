use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("pool has {free} free blocks, {needed} needed")]
    Exhausted { needed: u64, free: u64 },
    #[error("reservation of {needed} blocks exceeds remaining {remaining}")]
    OverCommitted { needed: u64, remaining: u64 },
}

/// Paged cache pool with per-request block counts.
///
/// Requests first reserve the most blocks they will ever hold here, then
/// allocate up to that as their cursor advances. Admission against
/// reservations means a resident request can always grow to its reserved
/// size, so no allocation made within a reservation ever fails.
#[derive(Debug, Clone)]
pub struct CachePool {
    block_tokens: u64,
    capacity: u64,
    allocated: BTreeMap<usize, u64>,
    allocated_total: u64,
    reserved: BTreeMap<usize, u64>,
    reserved_total: u64,
}

impl CachePool {
    pub fn new(block_tokens: u64, capacity: u64) -> Self {
        Self {
            block_tokens,
            capacity,
            allocated: BTreeMap::new(),
            allocated_total: 0,
            reserved: BTreeMap::new(),
            reserved_total: 0,
        }
    }

    pub fn block_tokens(&self) -> u64 {
        self.block_tokens
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn allocated_total(&self) -> u64 {
        self.allocated_total
    }

    pub fn free(&self) -> u64 {
        self.capacity - self.allocated_total
    }

    pub fn reserved_total(&self) -> u64 {
        self.reserved_total
    }

    pub fn held(&self, req: usize) -> u64 {
        self.allocated.get(&req).copied().unwrap_or(0)
    }

    pub fn can_reserve(&self, blocks: u64) -> bool {
        self.reserved_total + blocks <= self.capacity
    }

    /// Raises `req`'s reservation to at least `blocks`.
    pub fn reserve(&mut self, req: usize, blocks: u64) -> Result<(), PoolError> {
        let current = self.reserved.get(&req).copied().unwrap_or(0);
        if blocks <= current {
            return Ok(());
        }
        let extra = blocks - current;
        if self.reserved_total + extra > self.capacity {
            return Err(PoolError::OverCommitted {
                needed: extra,
                remaining: self.capacity - self.reserved_total,
            });
        }
        self.reserved.insert(req, blocks);
        self.reserved_total += extra;
        Ok(())
    }

    /// Grows `req`'s allocation to `blocks`. Idempotent; never shrinks.
    pub fn grow_to(&mut self, req: usize, blocks: u64) -> Result<(), PoolError> {
        let current = self.held(req);
        if blocks <= current {
            return Ok(());
        }
        let extra = blocks - current;
        if extra > self.free() {
            return Err(PoolError::Exhausted {
                needed: extra,
                free: self.free(),
            });
        }
        self.allocated.insert(req, blocks);
        self.allocated_total += extra;
        Ok(())
    }

    /// Drops the allocation and reservation of `req`; returns blocks freed.
    pub fn release(&mut self, req: usize) -> u64 {
        let freed = self.allocated.remove(&req).unwrap_or(0);
        self.allocated_total -= freed;
        if let Some(r) = self.reserved.remove(&req) {
            self.reserved_total -= r;
        }
        freed
    }

    pub fn holders(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.allocated.iter().map(|(&r, &b)| (r, b))
    }

    /// Checks internal counters against the per-request maps.
    pub fn check(&self) -> Result<(), String> {
        let alloc: u64 = self.allocated.values().sum();
        let res: u64 = self.reserved.values().sum();
        if alloc != self.allocated_total || res != self.reserved_total {
            return Err(format!(
                "pool counters drifted: allocated {alloc} vs {}, reserved {res} vs {}",
                self.allocated_total, self.reserved_total
            ));
        }
        if self.allocated_total > self.capacity {
            return Err(format!(
                "pool over capacity: {} > {}",
                self.allocated_total, self.capacity
            ));
        }
        Ok(())
    }
}
