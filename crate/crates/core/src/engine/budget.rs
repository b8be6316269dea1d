use serde::{Deserialize, Serialize};

use super::InstanceType;
use crate::cost::{batch_work, dual_stream_latency, HardwareProfile, ModelProfile, StageKind};
use crate::scalar::Scalar;

/// Per-batch caps: language tokens (`tau_t`) and images (`tau_e`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPair {
    pub tau_t: u64,
    pub tau_e: u64,
    /// False when even the floor batch exceeds the latency cap.
    pub feasible: bool,
}

/// Upper bounds for the budget search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ceilings {
    pub tokens: u64,
    pub images: u64,
}

impl Default for Ceilings {
    fn default() -> Self {
        Self {
            tokens: 16384,
            images: 128,
        }
    }
}

/// Worst-case latency of a batch with `tokens` language tokens and `images`
/// images, nondecreasing in both arguments.
pub trait BatchLatency<T> {
    fn latency(&self, tokens: u64, images: u64) -> T;
}

impl<T, F: Fn(u64, u64) -> T> BatchLatency<T> for F {
    fn latency(&self, tokens: u64, images: u64) -> T {
        self(tokens, images)
    }
}

/// Request shape assumed by the roofline probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetProbe {
    /// Visual tokens per probed image.
    pub image_tokens: u64,
    /// KV length of every probed decode entry.
    pub decode_context: u64,
}

impl Default for BudgetProbe {
    fn default() -> Self {
        Self {
            image_tokens: 576,
            decode_context: 2048,
        }
    }
}

/// Roofline batch latency for one instance type.
///
/// A `tokens`-token language batch is probed both as a single prefill chunk
/// and as `tokens` decode entries (whichever the instance can run) and the
/// slower shape is taken. Prefill cost is convex in chunk length with no
/// constant term, so any mix of chunks and decodes is no slower than the
/// worse pure shape.
pub struct RooflineProbe<'a, T> {
    pub model: &'a ModelProfile<T>,
    pub hw: &'a HardwareProfile<T>,
    pub ty: InstanceType,
    pub probe: BudgetProbe,
}

impl<T: Scalar> BatchLatency<T> for RooflineProbe<'_, T> {
    fn latency(&self, tokens: u64, images: u64) -> T {
        let imgs = vec![self.probe.image_tokens; images as usize];
        let mut shapes: Vec<(Vec<u64>, Vec<u64>)> = Vec::new();
        if tokens == 0 {
            shapes.push((vec![], vec![]));
        } else {
            if self.ty.has(StageKind::Prefill) {
                shapes.push((vec![tokens], vec![]));
            }
            if self.ty.has(StageKind::Decode) {
                shapes.push((vec![], vec![self.probe.decode_context; tokens as usize]));
            }
            if shapes.is_empty() {
                shapes.push((vec![], vec![]));
            }
        }
        shapes
            .iter()
            .map(|(p, d)| {
                let (v, l) = batch_work(&imgs, p, d, self.model);
                dual_stream_latency(&v, &l, self.hw)
            })
            .fold(T::neg_infinity(), T::max)
    }
}

/// Largest `x` in `[lo, hi]` with `ok(x)`, given `ok(lo)` and `ok` monotone.
fn largest_ok(lo: u64, hi: u64, ok: impl Fn(u64) -> bool) -> u64 {
    let (mut lo, mut hi) = (lo, hi);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Largest budgets whose worst-case batch fits in `cap` seconds.
///
/// `tau_t` is searched first, then `tau_e` given `tau_t`. With
/// `reserve_image`, an instance that both encodes and runs the language
/// model searches `tau_t` with one image already in the batch, so that
/// `tau_e >= 1` and co-scheduled encodes can always make progress within
/// the cap. Instances without a language stage report `tau_t = 1`; those
/// without encode report `tau_e = 0`. If the floor batch already exceeds
/// the cap, floors `(1, 0)` are returned with `feasible = false`.
pub fn search_budgets<T: Scalar>(
    cap: T,
    lat: &impl BatchLatency<T>,
    ty: InstanceType,
    ceilings: Ceilings,
    reserve_image: bool,
) -> BudgetPair {
    let infeasible = BudgetPair {
        tau_t: 1,
        tau_e: 0,
        feasible: false,
    };
    let has_e = ty.has(StageKind::Encode);
    let lang = ty.has_language();
    let reserve = u64::from(reserve_image && has_e && lang);

    let tau_t = if lang {
        let ceil = ceilings.tokens.max(1);
        if lat.latency(1, reserve) > cap {
            return infeasible;
        }
        largest_ok(1, ceil, |t| lat.latency(t, reserve) <= cap)
    } else {
        1
    };

    let tau_e = if has_e {
        let lang_tokens = if lang { tau_t } else { 0 };
        let floor = if lang { reserve } else { 0 };
        if !lang && ceilings.images > 0 && lat.latency(0, 1) > cap {
            return infeasible;
        }
        largest_ok(floor, ceilings.images.max(floor), |e| {
            lat.latency(lang_tokens, e) <= cap
        })
    } else {
        0
    };

    BudgetPair {
        tau_t,
        tau_e,
        feasible: true,
    }
}
