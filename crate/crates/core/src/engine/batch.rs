use serde::Serialize;

use super::instance::{Resident, Sched, Waiting};
use super::{InstanceState, SchedulerPolicy};
use crate::cost::{blocks_for, StageKind, IMAGE_BLOCK_TOKENS, KV_BLOCK_TOKENS};

/// Work selected for one iteration of an instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Batch {
    /// (request, KV length before this step)
    pub decode: Vec<(usize, u64)>,
    /// (request, chunk tokens)
    pub prefill: Vec<(usize, u64)>,
    /// (request, images)
    pub encode: Vec<(usize, u64)>,
    /// Visual tokens of every image in `encode`, in order.
    pub encode_tokens: Vec<u64>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.decode.is_empty() && self.prefill.is_empty() && self.encode.is_empty()
    }

    /// Language tokens: chunk tokens plus one per decode entry.
    pub fn tokens(&self) -> u64 {
        self.prefill.iter().map(|&(_, n)| n).sum::<u64>() + self.decode.len() as u64
    }

    pub fn images(&self) -> u64 {
        self.encode.iter().map(|&(_, k)| k).sum()
    }
}

impl InstanceState {
    /// Effective (token, image) budgets. An encode-capable instance always
    /// gets at least one image per batch so encodes cannot starve.
    pub fn effective_budgets(&self) -> (u64, u64) {
        let tau_e = if self.ty.has(StageKind::Encode) {
            self.budgets.tau_e.max(1)
        } else {
            0
        };
        (self.budgets.tau_t.max(1), tau_e)
    }

    /// Selects the next batch under the instance's policy. Also pulls
    /// migrated requests waiting at the head of the queue; their ids are
    /// returned alongside the batch.
    pub fn form_batch(&mut self) -> (Batch, Vec<usize>) {
        let (pulled, blocked) = self.pull_migrations();
        let mut b = Batch::default();
        match self.policy {
            SchedulerPolicy::StageLevel => self.form_stage_level(&mut b, blocked),
            SchedulerPolicy::PrefillPrioritized => self.form_prefill_first(&mut b, blocked),
            SchedulerPolicy::StallFreeChunked => self.form_stall_free(&mut b, blocked),
        }
        (b, pulled)
    }

    fn form_stage_level(&mut self, b: &mut Batch, blocked: bool) {
        let (tau_t, tau_e) = self.effective_budgets();
        let mut n_t = self.add_decodes(b);
        let mut n_e = 0;
        for pos in 0..self.running.len() {
            match self.running[pos].cursor.stage() {
                Some(StageKind::Prefill) if n_t < tau_t => {
                    let rem = prefill_left(&self.running[pos]);
                    n_t += self.try_prefill(pos, rem.min(tau_t - n_t), b);
                }
                Some(StageKind::Encode) if n_e < tau_e => {
                    let rem = self.running[pos].cursor.remaining_images();
                    n_e += self.try_encode(pos, rem.min(tau_e - n_e), b);
                }
                _ => {}
            }
        }
        if blocked {
            return;
        }
        if self.ty.has(StageKind::Prefill) {
            while n_t < tau_t {
                let Some(pos) = self.admit_next(StageKind::Prefill) else {
                    break;
                };
                let rem = prefill_left(&self.running[pos]);
                n_t += self.try_prefill(pos, rem.min(tau_t - n_t), b);
            }
        }
        if self.ty.has(StageKind::Encode) {
            while n_e < tau_e {
                let Some(pos) = self.admit_next(StageKind::Encode) else {
                    break;
                };
                let rem = self.running[pos].cursor.remaining_images();
                n_e += self.try_encode(pos, rem.min(tau_e - n_e), b);
            }
        }
    }

    fn form_prefill_first(&mut self, b: &mut Batch, blocked: bool) {
        let ceiling = self.ceilings.tokens;
        let mut n_t = 0;
        for pos in 0..self.running.len() {
            match self.running[pos].cursor.stage() {
                Some(StageKind::Prefill) if n_t < ceiling => {
                    let rem = prefill_left(&self.running[pos]);
                    n_t += self.try_prefill(pos, rem, b);
                }
                Some(StageKind::Encode) => {
                    let rem = self.running[pos].cursor.remaining_images();
                    self.try_encode(pos, rem, b);
                }
                _ => {}
            }
        }
        if !blocked {
            while n_t < ceiling {
                let stage = match self.next_admissible() {
                    Some(s) => s,
                    None => break,
                };
                let Some(pos) = self.admit_next(stage) else { break };
                if stage == StageKind::Prefill {
                    let rem = prefill_left(&self.running[pos]);
                    n_t += self.try_prefill(pos, rem, b);
                } else {
                    let rem = self.running[pos].cursor.remaining_images();
                    self.try_encode(pos, rem, b);
                }
            }
        }
        if b.is_empty() {
            self.add_decodes(b);
        }
    }

    fn form_stall_free(&mut self, b: &mut Batch, blocked: bool) {
        let tau_t = self.budgets.tau_t.max(1);
        let mut n_t = self.add_decodes(b);
        for pos in 0..self.running.len() {
            match self.running[pos].cursor.stage() {
                Some(StageKind::Prefill) if n_t < tau_t => {
                    let rem = prefill_left(&self.running[pos]);
                    n_t += self.try_prefill(pos, rem.min(tau_t - n_t), b);
                }
                Some(StageKind::Encode) => {
                    let rem = self.running[pos].cursor.remaining_images();
                    self.try_encode(pos, rem, b);
                }
                _ => {}
            }
        }
        if blocked {
            return;
        }
        if self.ty.has(StageKind::Prefill) {
            while n_t < tau_t {
                let Some(pos) = self.admit_next(StageKind::Prefill) else {
                    break;
                };
                let rem = prefill_left(&self.running[pos]);
                n_t += self.try_prefill(pos, rem.min(tau_t - n_t), b);
            }
        }
        if self.ty.has(StageKind::Encode) {
            if let Some(pos) = self.admit_next(StageKind::Encode) {
                let rem = self.running[pos].cursor.remaining_images();
                self.try_encode(pos, rem, b);
            }
        }
    }

    /// Adds every running decode; returns how many were added.
    fn add_decodes(&mut self, b: &mut Batch) -> u64 {
        let mut n = 0;
        for r in self.running.iter_mut() {
            if r.cursor.stage() != Some(StageKind::Decode) {
                continue;
            }
            let need = blocks_for(r.cursor.kv_len + 1, KV_BLOCK_TOKENS);
            if self.kv_pool.grow_to(r.req, need).is_ok() {
                r.sched = Some(Sched::Decode);
                b.decode.push((r.req, r.cursor.kv_len));
                n += 1;
            }
        }
        n
    }

    /// Schedules a prefill chunk of `n` tokens; returns tokens scheduled.
    fn try_prefill(&mut self, pos: usize, n: u64, b: &mut Batch) -> u64 {
        let r = &mut self.running[pos];
        if n == 0 || r.sched.is_some() {
            return 0;
        }
        let need = blocks_for(r.cursor.kv_len + n, KV_BLOCK_TOKENS);
        if self.kv_pool.grow_to(r.req, need).is_err() {
            return 0;
        }
        r.sched = Some(Sched::Prefill(n));
        b.prefill.push((r.req, n));
        n
    }

    /// Schedules `k` images; returns images scheduled.
    fn try_encode(&mut self, pos: usize, k: u64, b: &mut Batch) -> u64 {
        let r = &mut self.running[pos];
        if k == 0 || r.sched.is_some() {
            return 0;
        }
        let from = r.cursor.images_done;
        let upto = from + k as usize;
        let tokens: u64 = r.cursor.image_tokens[..upto].iter().sum();
        if self
            .image_pool
            .grow_to(r.req, blocks_for(tokens, IMAGE_BLOCK_TOKENS))
            .is_err()
        {
            return 0;
        }
        r.sched = Some(Sched::Encode(k));
        b.encode.push((r.req, k));
        b.encode_tokens.extend_from_slice(&r.cursor.image_tokens[from..upto]);
        k
    }

    /// Stage of the first new request this instance could admit.
    fn next_admissible(&self) -> Option<StageKind> {
        self.waiting
            .iter()
            .filter(|w| !w.migrated)
            .filter_map(|w| w.res.cursor.stage())
            .find(|&s| self.ty.has(s) && s != StageKind::Decode)
    }

    /// Admits the first new waiting request whose next stage is `stage`.
    /// Stops at that request if its reservation does not fit.
    fn admit_next(&mut self, stage: StageKind) -> Option<usize> {
        let i = self
            .waiting
            .iter()
            .position(|w: &Waiting| !w.migrated && w.res.cursor.stage() == Some(stage))?;
        let (req, cursor) = {
            let r = &self.waiting[i].res;
            (r.req, r.cursor.clone())
        };
        self.reserve(req, &cursor).ok()?;
        let w = self.waiting.remove(i)?;
        self.running.push(w.res);
        Some(self.running.len() - 1)
    }
}

fn prefill_left(r: &Resident) -> u64 {
    r.cursor.prefill_total - r.cursor.prefill_done
}
