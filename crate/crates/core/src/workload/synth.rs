//! Seeded synthetic traces with Poisson arrivals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{RequestId, RequestSpec, SloSpec, Trace, WorkloadError};

/// Bounded integer distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Fixed(u64),
    /// Inclusive on both ends.
    Uniform {
        lo: u64,
        hi: u64,
    },
    /// `(value, weight)` pairs.
    Choice(Vec<(u64, f64)>),
}

impl Dist {
    fn validate(&self) -> Result<(), WorkloadError> {
        match self {
            Dist::Fixed(_) => Ok(()),
            Dist::Uniform { lo, hi } if lo <= hi => Ok(()),
            Dist::Uniform { lo, hi } => Err(WorkloadError::InvalidDist(format!("uniform lo {lo} > hi {hi}"))),
            Dist::Choice(items) => {
                let total: f64 = items.iter().map(|(_, w)| w).sum();
                if items.is_empty() || items.iter().any(|(_, w)| !(*w >= 0.0)) || !(total > 0.0) {
                    Err(WorkloadError::InvalidDist(
                        "choice weights must be >= 0 with a positive sum".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        match self {
            Dist::Fixed(v) => *v,
            Dist::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            Dist::Choice(items) => {
                let total: f64 = items.iter().map(|(_, w)| w).sum();
                let mut x = rng.random::<f64>() * total;
                for (v, w) in items {
                    if x < *w {
                        return *v;
                    }
                    x -= w;
                }
                items.last().map(|(v, _)| *v).unwrap_or_default()
            }
        }
    }
}

/// Parameters of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_requests: usize,
    /// Mean arrivals per second.
    pub rate: f64,
    pub image_count: Dist,
    pub visual_tokens: Dist,
    pub prompt_tokens: Dist,
    pub output_tokens: Dist,
    #[serde(default)]
    pub slo: Option<SloSpec>,
}

/// Generates a trace with exponential inter-arrival gaps; the first request
/// arrives at t = 0. Output is a pure function of `spec`.
pub fn synth_trace(spec: &SynthSpec) -> Result<Trace, WorkloadError> {
    if !(spec.rate > 0.0 && spec.rate.is_finite()) {
        return Err(WorkloadError::InvalidRate(spec.rate));
    }
    for d in [
        &spec.image_count,
        &spec.visual_tokens,
        &spec.prompt_tokens,
        &spec.output_tokens,
    ] {
        d.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaps = Exp::new(spec.rate).map_err(|e| WorkloadError::InvalidDist(e.to_string()))?;
    let mut t = 0.0;
    let mut requests = Vec::with_capacity(spec.n_requests);
    for i in 0..spec.n_requests {
        if i > 0 {
            t += gaps.sample(&mut rng);
        }
        let images = spec.image_count.sample(&mut rng);
        let image_tokens = (0..images)
            .map(|_| spec.visual_tokens.sample(&mut rng))
            .collect::<Vec<_>>();
        let mut prompt = spec.prompt_tokens.sample(&mut rng);
        if prompt == 0 && image_tokens.iter().sum::<u64>() == 0 {
            prompt = 1;
        }
        let output = spec.output_tokens.sample(&mut rng).max(1);
        requests.push(RequestSpec {
            id: RequestId::Int(i as u64),
            arrival_s: t,
            image_tokens,
            prompt_tokens: prompt,
            output_tokens: output,
            ttft_slo_s: spec.slo.map(|s| s.ttft_s),
            tbt_slo_s: spec.slo.map(|s| s.tbt_s),
        });
    }
    Ok(Trace::new(
        "synthetic",
        format!("synth seed={} rate={}", spec.seed, spec.rate),
        requests,
    ))
}

/// Datasets with a built-in workload shape.
pub const DATASETS: [&str; 5] = ["textcaps", "pope", "mme", "textvqa", "vizwiz"];

/// Workload shape roughly resembling one evaluation dataset, for a given
/// model preset (which fixes how many visual tokens an image becomes).
pub fn dataset_preset(dataset: &str, model: &str, seed: u64, n_requests: usize, rate: f64) -> Option<SynthSpec> {
    let visual_tokens = match model {
        "llava-1.5-7b" => Dist::Fixed(576),
        "llava-next-7b" => Dist::Choice(vec![(1152, 1.0), (1728, 2.0), (2304, 2.0), (2880, 3.0)]),
        "qwen2-vl-7b" => Dist::Uniform { lo: 256, hi: 1280 },
        _ => return None,
    };
    let (prompt, output) = match dataset {
        "textcaps" => (Dist::Uniform { lo: 12, hi: 24 }, Dist::Uniform { lo: 8, hi: 40 }),
        "pope" => (Dist::Uniform { lo: 10, hi: 20 }, Dist::Uniform { lo: 1, hi: 3 }),
        "mme" => (Dist::Uniform { lo: 15, hi: 45 }, Dist::Uniform { lo: 1, hi: 2 }),
        "textvqa" => (Dist::Uniform { lo: 10, hi: 30 }, Dist::Uniform { lo: 2, hi: 12 }),
        "vizwiz" => (Dist::Uniform { lo: 10, hi: 40 }, Dist::Uniform { lo: 4, hi: 40 }),
        _ => return None,
    };
    Some(SynthSpec {
        seed,
        n_requests,
        rate,
        image_count: Dist::Fixed(1),
        visual_tokens,
        prompt_tokens: prompt,
        output_tokens: output,
        slo: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_spec(seed: u64, n: usize) -> SynthSpec {
        SynthSpec {
            seed,
            n_requests: n,
            rate: 4.0,
            image_count: Dist::Fixed(1),
            visual_tokens: Dist::Fixed(576),
            prompt_tokens: Dist::Fixed(40),
            output_tokens: Dist::Fixed(100),
            slo: None,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_trace(&fixed_spec(7, 50)).unwrap();
        let b = synth_trace(&fixed_spec(7, 50)).unwrap();
        assert_eq!(a, b);
        let c = synth_trace(&fixed_spec(8, 50)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_and_fixed_shapes() {
        assert!(synth_trace(&fixed_spec(1, 0)).unwrap().is_empty());
        let t = synth_trace(&fixed_spec(1, 30)).unwrap();
        for r in &t.requests {
            assert_eq!(r.image_tokens, vec![576]);
            assert_eq!((r.prompt_tokens, r.output_tokens), (40, 100));
        }
        assert!(t.requests.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
    }

    #[test]
    fn mean_rate_is_close() {
        let mut spec = fixed_spec(3, 4000);
        spec.rate = 2.5;
        let t = synth_trace(&spec).unwrap();
        let r = t.rate().unwrap();
        assert!((r - 2.5).abs() < 0.15, "rate {r}");
    }

    #[test]
    fn invalid_inputs() {
        let mut s = fixed_spec(1, 3);
        s.rate = 0.0;
        assert!(synth_trace(&s).is_err());
        let mut s = fixed_spec(1, 3);
        s.prompt_tokens = Dist::Uniform { lo: 5, hi: 2 };
        assert!(synth_trace(&s).is_err());
        let mut s = fixed_spec(1, 3);
        s.output_tokens = Dist::Choice(vec![]);
        assert!(synth_trace(&s).is_err());
    }

    #[test]
    fn presets_exist() {
        for d in DATASETS {
            assert!(dataset_preset(d, "llava-1.5-7b", 0, 10, 1.0).is_some());
        }
        assert!(dataset_preset("coco", "llava-1.5-7b", 0, 10, 1.0).is_none());
    }
}
