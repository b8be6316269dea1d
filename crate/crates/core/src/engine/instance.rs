use std::collections::VecDeque;

use super::{Batch, BudgetPair, CachePool, Ceilings, InstanceType, PoolError, SchedulerPolicy};
use crate::cost::{
    batch_work, blocks_for, dual_stream_latency, HardwareProfile, ModelProfile, StageKind, IMAGE_BLOCK_TOKENS,
    KV_BLOCK_TOKENS,
};
use crate::workload::RequestSpec;

/// Progress of one request through its stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cursor {
    pub image_tokens: Vec<u64>,
    pub images_done: usize,
    pub prefill_total: u64,
    pub prefill_done: u64,
    pub output_total: u64,
    /// Tokens emitted so far, including the one produced by prefill.
    pub emitted: u64,
    pub kv_len: u64,
}

impl Cursor {
    pub fn new(r: &RequestSpec) -> Self {
        Self {
            image_tokens: r.image_tokens.clone(),
            images_done: 0,
            prefill_total: r.prefill_tokens(),
            prefill_done: 0,
            output_total: r.output_tokens,
            emitted: 0,
            kv_len: 0,
        }
    }

    /// Stage of the next piece of work, `None` once finished.
    pub fn stage(&self) -> Option<StageKind> {
        if self.images_done < self.image_tokens.len() {
            Some(StageKind::Encode)
        } else if self.prefill_done < self.prefill_total {
            Some(StageKind::Prefill)
        } else if self.emitted < self.output_total {
            Some(StageKind::Decode)
        } else {
            None
        }
    }

    pub fn visual_tokens(&self) -> u64 {
        self.image_tokens.iter().sum()
    }

    pub fn encoded_tokens(&self) -> u64 {
        self.image_tokens[..self.images_done].iter().sum()
    }

    pub fn remaining_images(&self) -> u64 {
        (self.image_tokens.len() - self.images_done) as u64
    }

    /// Prompt plus output tokens still to be processed.
    pub fn remaining_tokens(&self) -> u64 {
        (self.prefill_total - self.prefill_done) + (self.output_total - self.emitted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Sched {
    Decode,
    Prefill(u64),
    Encode(u64),
}

/// A request resident on one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resident {
    pub req: usize,
    pub cursor: Cursor,
    pub(super) sched: Option<Sched>,
}

impl Resident {
    pub fn new(req: usize, cursor: Cursor) -> Self {
        Self {
            req,
            cursor,
            sched: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(super) struct Waiting {
    pub res: Resident,
    pub migrated: bool,
}

/// Where a request goes after a batch touched it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    /// Stays here, waiting for its next batch of the given stage.
    Queue(StageKind),
    /// Leaves for another instance to run the given stage.
    Migrate(StageKind),
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub req: usize,
    /// Stage the request ran in the completed batch.
    pub stage: StageKind,
    pub token: bool,
    pub next: Next,
}

/// Result of forming a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Started {
    pub batch: Batch,
    pub latency_s: f64,
    /// Migrated requests whose blocks were allocated here during formation.
    pub pulled: Vec<usize>,
}

/// One simulated serving instance.
#[derive(Debug, Clone)]
pub struct InstanceState {
    pub index: usize,
    pub ty: InstanceType,
    pub policy: SchedulerPolicy,
    pub budgets: BudgetPair,
    pub ceilings: Ceilings,
    pub kv_pool: CachePool,
    pub image_pool: CachePool,
    pub(super) waiting: VecDeque<Waiting>,
    pub(super) running: Vec<Resident>,
    pub(super) incoming: Vec<Resident>,
    pub(super) departing: Vec<Resident>,
    pub(super) busy: bool,
}

impl InstanceState {
    pub fn new(
        index: usize,
        ty: InstanceType,
        policy: SchedulerPolicy,
        budgets: BudgetPair,
        ceilings: Ceilings,
        kv_blocks: u64,
        image_blocks: u64,
    ) -> Self {
        Self {
            index,
            ty,
            policy,
            budgets,
            ceilings,
            kv_pool: CachePool::new(KV_BLOCK_TOKENS, kv_blocks),
            image_pool: CachePool::new(IMAGE_BLOCK_TOKENS, image_blocks),
            waiting: VecDeque::new(),
            running: Vec::new(),
            incoming: Vec::new(),
            departing: Vec::new(),
            busy: false,
        }
    }

    /// Splits `cache_bytes` of device memory between the two pools.
    /// Instances that both hold images and run the language model give
    /// `image_fraction` of it to the image pool.
    pub fn pool_blocks(
        ty: InstanceType,
        cache_bytes: f64,
        image_fraction: f64,
        model: &ModelProfile<f64>,
    ) -> (u64, u64) {
        let wants_image = ty.has(StageKind::Encode) || ty.has(StageKind::Prefill);
        let wants_kv = ty.has_language();
        let image_share = match (wants_image, wants_kv) {
            (true, true) => image_fraction,
            (true, false) => 1.0,
            _ => 0.0,
        };
        let kv_block = model.kv_bytes_per_token() * KV_BLOCK_TOKENS as f64;
        let image_block = model.image_bytes_per_token() * IMAGE_BLOCK_TOKENS as f64;
        let kv = ((1.0 - image_share) * cache_bytes / kv_block).floor() as u64;
        let image = (image_share * cache_bytes / image_block).floor() as u64;
        (kv, image)
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    pub fn running(&self) -> &[Resident] {
        &self.running
    }

    pub fn waiting_reqs(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.waiting.iter().map(|w| (w.res.req, w.migrated))
    }

    /// Requests held here in any form: waiting, running, or mid-transfer.
    pub fn resident_count(&self) -> usize {
        self.waiting.len() + self.running.len() + self.incoming.len() + self.departing.len()
    }

    /// Prompt and output tokens still owed to everything queued or running.
    pub fn outstanding_tokens(&self) -> u64 {
        self.waiting
            .iter()
            .map(|w| &w.res)
            .chain(&self.running)
            .chain(&self.incoming)
            .map(|r| r.cursor.remaining_tokens())
            .sum()
    }

    /// Most KV blocks a request will hold before it next leaves. A request
    /// that still needs prefill on an instance without it holds no KV here
    /// until it comes back for decode.
    pub fn kv_lifetime_blocks(&self, c: &Cursor) -> u64 {
        let leaves_first = c.prefill_done < c.prefill_total && !self.ty.has(StageKind::Prefill);
        let tokens = if leaves_first {
            0
        } else if self.ty.has(StageKind::Decode) {
            c.prefill_total + c.output_total - 1
        } else if self.ty.has(StageKind::Prefill) {
            c.prefill_total
        } else {
            0
        };
        blocks_for(tokens, KV_BLOCK_TOKENS)
    }

    /// Most image blocks a request will hold here.
    pub fn image_lifetime_blocks(&self, c: &Cursor) -> u64 {
        let holds = self.ty.has(StageKind::Encode) || self.ty.has(StageKind::Prefill);
        if holds && c.prefill_done < c.prefill_total {
            blocks_for(c.visual_tokens(), IMAGE_BLOCK_TOKENS)
        } else {
            0
        }
    }

    /// Blocks a request's cursor implies it holds between batches.
    pub fn implied_blocks(c: &Cursor) -> (u64, u64) {
        let kv = blocks_for(c.kv_len, KV_BLOCK_TOKENS);
        let image = if c.prefill_done < c.prefill_total {
            blocks_for(c.encoded_tokens(), IMAGE_BLOCK_TOKENS)
        } else {
            0
        };
        (kv, image)
    }

    /// Reserves lifetime blocks in both pools, or neither.
    pub(super) fn reserve(&mut self, req: usize, c: &Cursor) -> Result<(), PoolError> {
        let kv = self.kv_lifetime_blocks(c);
        let image = self.image_lifetime_blocks(c);
        self.kv_pool.reserve(req, kv)?;
        if let Err(e) = self.image_pool.reserve(req, image) {
            self.kv_pool.release(req);
            return Err(e);
        }
        Ok(())
    }

    /// Reserves and allocates everything `cursor` implies.
    fn settle(&mut self, res: &Resident) -> Result<(), PoolError> {
        self.reserve(res.req, &res.cursor)?;
        let (kv, image) = Self::implied_blocks(&res.cursor);
        let grown = self
            .kv_pool
            .grow_to(res.req, kv)
            .and_then(|_| self.image_pool.grow_to(res.req, image));
        if grown.is_err() {
            self.kv_pool.release(res.req);
            self.image_pool.release(res.req);
        }
        grown
    }

    /// Places a request directly in the running set with the blocks its
    /// cursor implies.
    pub fn insert_running(&mut self, res: Resident) -> Result<(), PoolError> {
        self.settle(&res)?;
        self.running.push(res);
        Ok(())
    }

    /// Appends a newly arrived request to the tail of the waiting queue.
    pub fn enqueue(&mut self, res: Resident) {
        self.waiting.push_back(Waiting { res, migrated: false });
    }

    /// Puts a migrating request at the head of the waiting queue.
    pub fn enqueue_migrated(&mut self, res: Resident) {
        self.waiting.push_front(Waiting { res, migrated: true });
    }

    /// Allocates blocks for migrated requests at the head of the queue and
    /// moves them into the transfer set. Returns the pulled ids and whether a
    /// migration is still blocked on memory.
    pub(super) fn pull_migrations(&mut self) -> (Vec<usize>, bool) {
        let mut pulled = Vec::new();
        while let Some(w) = self.waiting.front() {
            if !w.migrated {
                break;
            }
            let res = w.res.clone();
            if self.settle(&res).is_err() {
                return (pulled, true);
            }
            self.waiting.pop_front();
            pulled.push(res.req);
            self.incoming.push(res);
        }
        (pulled, false)
    }

    /// Moves a request whose transfer has finished into the running set.
    pub fn finish_incoming(&mut self, req: usize) -> bool {
        match self.incoming.iter().position(|r| r.req == req) {
            Some(i) => {
                let r = self.incoming.remove(i);
                self.running.push(r);
                true
            }
            None => false,
        }
    }

    /// Cursor of a request that is leaving this instance.
    pub fn departing_cursor(&self, req: usize) -> Option<&Cursor> {
        self.departing.iter().find(|r| r.req == req).map(|r| &r.cursor)
    }

    /// Frees the blocks of a request that has left; returns (kv, image)
    /// blocks freed.
    pub fn release_departed(&mut self, req: usize) -> Option<(u64, u64)> {
        let i = self.departing.iter().position(|r| r.req == req)?;
        self.departing.remove(i);
        Some((self.kv_pool.release(req), self.image_pool.release(req)))
    }

    /// Forms the next batch and its latency. Marks the instance busy unless
    /// the batch is empty.
    pub fn start(&mut self, model: &ModelProfile<f64>, hw: &HardwareProfile<f64>) -> Started {
        debug_assert!(!self.busy);
        let (batch, pulled) = self.form_batch();
        let latency_s = if batch.is_empty() {
            0.0
        } else {
            self.busy = true;
            batch_latency(&batch, model, hw)
        };
        Started {
            batch,
            latency_s,
            pulled,
        }
    }

    /// Applies the effects of the batch in flight.
    pub fn complete(&mut self) -> Vec<Outcome> {
        self.busy = false;
        let mut outcomes = Vec::new();
        let mut leaving = Vec::new();
        for (pos, r) in self.running.iter_mut().enumerate() {
            let Some(s) = r.sched.take() else { continue };
            let c = &mut r.cursor;
            let (stage, token, next) = match s {
                Sched::Decode => {
                    c.kv_len += 1;
                    c.emitted += 1;
                    let next = if c.emitted == c.output_total {
                        Next::Finished
                    } else {
                        Next::Queue(StageKind::Decode)
                    };
                    (StageKind::Decode, true, next)
                }
                Sched::Prefill(n) => {
                    c.prefill_done += n;
                    c.kv_len += n;
                    if c.prefill_done < c.prefill_total {
                        (StageKind::Prefill, false, Next::Queue(StageKind::Prefill))
                    } else {
                        c.emitted = 1;
                        self.image_pool.release(r.req);
                        let next = if c.output_total == 1 {
                            Next::Finished
                        } else if self.ty.has(StageKind::Decode) {
                            Next::Queue(StageKind::Decode)
                        } else {
                            Next::Migrate(StageKind::Decode)
                        };
                        (StageKind::Prefill, true, next)
                    }
                }
                Sched::Encode(k) => {
                    c.images_done += k as usize;
                    let next = if c.images_done < c.image_tokens.len() {
                        Next::Queue(StageKind::Encode)
                    } else if self.ty.has(StageKind::Prefill) {
                        Next::Queue(StageKind::Prefill)
                    } else {
                        Next::Migrate(StageKind::Prefill)
                    };
                    (StageKind::Encode, false, next)
                }
            };
            if matches!(next, Next::Finished | Next::Migrate(_)) {
                leaving.push((pos, next));
            }
            outcomes.push(Outcome {
                req: r.req,
                stage,
                token,
                next,
            });
        }
        for &(pos, next) in leaving.iter().rev() {
            let r = self.running.remove(pos);
            match next {
                Next::Finished => {
                    self.kv_pool.release(r.req);
                    self.image_pool.release(r.req);
                }
                _ => self.departing.push(r),
            }
        }
        outcomes
    }

    /// Checks block accounting against cursors.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.kv_pool.check()?;
        self.image_pool.check()?;
        let mut holders: Vec<usize> = Vec::new();
        for r in self.running.iter().chain(&self.incoming) {
            let (mut kv, mut image) = Self::implied_blocks(&r.cursor);
            match r.sched {
                Some(Sched::Decode) => kv = blocks_for(r.cursor.kv_len + 1, KV_BLOCK_TOKENS),
                Some(Sched::Prefill(n)) => kv = blocks_for(r.cursor.kv_len + n, KV_BLOCK_TOKENS),
                Some(Sched::Encode(k)) => {
                    let upto = r.cursor.images_done + k as usize;
                    image = blocks_for(r.cursor.image_tokens[..upto].iter().sum(), IMAGE_BLOCK_TOKENS);
                }
                None => {}
            }
            if self.kv_pool.held(r.req) != kv || self.image_pool.held(r.req) != image {
                return Err(format!(
                    "instance {} request {}: holds ({}, {}) blocks, cursor implies ({kv}, {image})",
                    self.index,
                    r.req,
                    self.kv_pool.held(r.req),
                    self.image_pool.held(r.req)
                ));
            }
            holders.push(r.req);
        }
        holders.extend(self.departing.iter().map(|r| r.req));
        for (req, blocks) in self.kv_pool.holders().chain(self.image_pool.holders()) {
            if blocks > 0 && !holders.contains(&req) {
                return Err(format!(
                    "instance {} leaks {blocks} blocks of request {req}",
                    self.index
                ));
            }
        }
        for w in &self.waiting {
            if self.kv_pool.held(w.res.req) + self.image_pool.held(w.res.req) > 0 {
                return Err(format!("waiting request {} holds blocks", w.res.req));
            }
        }
        if !self.busy && self.running.iter().any(|r| r.sched.is_some()) {
            return Err(format!("idle instance {} has scheduled entries", self.index));
        }
        Ok(())
    }
}

/// Dual-stream roofline latency of a batch.
pub fn batch_latency(batch: &Batch, model: &ModelProfile<f64>, hw: &HardwareProfile<f64>) -> f64 {
    let chunks: Vec<u64> = batch.prefill.iter().map(|&(_, n)| n).collect();
    let contexts: Vec<u64> = batch.decode.iter().map(|&(_, s)| s).collect();
    let (v, l) = batch_work(&batch.encode_tokens, &chunks, &contexts, model);
    dual_stream_latency(&v, &l, hw)
}
