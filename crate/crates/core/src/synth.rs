//! Seeded synthetic flow generator.
//!
//! Arrivals follow a Poisson process (exponential gaps) starting with a
//! packet at t = 0, and sizes come from a per-class Gaussian mixture that is
//! rounded and clamped to [1, 1500] bytes. Every flow draws from its own
//! stream keyed by (seed, class index, jitter offset, flow index).

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Dataset, Flow, Origin, Packet};
use crate::rng;

pub const SYNTH_SIZE_CEILING: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeComponent {
    pub mean: f64,
    pub stddev: f64,
    pub weight: f64,
}

impl SizeComponent {
    pub const fn new(mean: f64, stddev: f64, weight: f64) -> Self {
        SizeComponent { mean, stddev, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub label: String,
    pub rate_per_s: f64,
    pub size_mixture: Vec<SizeComponent>,
    pub duration_s: f64,
    #[serde(default)]
    pub jitter_seed_offset: i64,
}

impl ClassProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("profile {:?}: {msg}", self.label)));
        if !(self.rate_per_s.is_finite() && self.rate_per_s > 0.0) {
            return bad(format!("rate_per_s {} must be positive", self.rate_per_s));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s {} must be positive", self.duration_s));
        }
        if self.size_mixture.is_empty() {
            return bad("size_mixture is empty".into());
        }
        for c in &self.size_mixture {
            if !(1.0..=1500.0).contains(&c.mean) {
                return bad(format!("mean {} outside [1, 1500]", c.mean));
            }
            if !(c.stddev.is_finite() && c.stddev >= 0.0) {
                return bad(format!("stddev {} must be >= 0", c.stddev));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return bad(format!("weight {} must be >= 0", c.weight));
            }
        }
        let total: f64 = self.size_mixture.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub profiles: Vec<ClassProfile>,
    pub flows_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            profiles: default_profiles(),
            flows_per_class: 100,
            seed: 20_240_917,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flows_per_class == 0 {
            return Err(Error::InvalidConfig("flows_per_class must be positive".into()));
        }
        if self.profiles.is_empty() {
            return Err(Error::InvalidConfig("no profiles".into()));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate()?;
            if self.profiles[..i].iter().any(|q| q.label == p.label) {
                return Err(Error::InvalidConfig(format!("duplicate profile label {:?}", p.label)));
            }
        }
        Ok(())
    }
}

/// Shipped profiles.
///
/// `bulk` carries most of its bytes in ~1400 B packets. Fragmenting those at
/// an MTU in [750, 1200] yields pairs that land in the size bands `mixed`
/// occupies, which is what makes an un-augmented model vulnerable.
pub fn default_profiles() -> Vec<ClassProfile> {
    vec![
        ClassProfile {
            label: "bulk".into(),
            rate_per_s: 60.0,
            size_mixture: vec![
                SizeComponent::new(1400.0, 25.0, 0.85),
                SizeComponent::new(80.0, 20.0, 0.15),
            ],
            duration_s: 20.0,
            jitter_seed_offset: 0,
        },
        ClassProfile {
            label: "chat".into(),
            rate_per_s: 12.0,
            size_mixture: vec![
                SizeComponent::new(200.0, 60.0, 0.8),
                SizeComponent::new(600.0, 120.0, 0.2),
            ],
            duration_s: 20.0,
            jitter_seed_offset: 0,
        },
        ClassProfile {
            label: "mixed".into(),
            rate_per_s: 45.0,
            size_mixture: vec![
                SizeComponent::new(950.0, 70.0, 0.5),
                SizeComponent::new(450.0, 70.0, 0.4),
                SizeComponent::new(80.0, 20.0, 0.1),
            ],
            duration_s: 20.0,
            jitter_seed_offset: 0,
        },
    ]
}

fn sample_size(mixture: &[SizeComponent], rng: &mut impl Rng) -> u32 {
    let mut u: f64 = rng.random();
    let mut chosen = mixture[mixture.len() - 1];
    for c in mixture {
        if u < c.weight {
            chosen = *c;
            break;
        }
        u -= c.weight;
    }
    let raw = if chosen.stddev == 0.0 {
        chosen.mean
    } else {
        Normal::new(chosen.mean, chosen.stddev)
            .expect("validated stddev")
            .sample(rng)
    };
    raw.round().clamp(1.0, f64::from(SYNTH_SIZE_CEILING)) as u32
}

pub fn generate_flow(profile: &ClassProfile, seed: u64, class_index: usize, flow_index: usize) -> Flow {
    let mut rng = rng::stream(
        seed,
        &[class_index as u64, profile.jitter_seed_offset as u64, flow_index as u64],
    );
    let gaps = Exp::new(profile.rate_per_s).expect("validated rate");
    let mut packets = Vec::with_capacity((profile.rate_per_s * profile.duration_s) as usize + 1);
    let mut t = 0.0;
    while t < profile.duration_s {
        packets.push(Packet {
            time: t,
            size: sample_size(&profile.size_mixture, &mut rng),
        });
        t += gaps.sample(&mut rng);
    }
    Flow::new(profile.label.clone(), Origin::Synthetic, packets).expect("packets start at t = 0")
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let flows = cfg
        .profiles
        .iter()
        .enumerate()
        .flat_map(|(ci, p)| (0..cfg.flows_per_class).map(move |fi| generate_flow(p, cfg.seed, ci, fi)))
        .collect();
    Ok(Dataset::new(flows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::render_flows;

    fn two_profiles(n: usize) -> SynthConfig {
        SynthConfig {
            profiles: default_profiles().into_iter().take(2).collect(),
            flows_per_class: n,
            seed: 11,
        }
    }

    #[test]
    fn counts_flows_and_classes() {
        let ds = generate(&two_profiles(50)).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.classes().len(), 2);
    }

    #[test]
    fn deterministic_jsonl() {
        let render = |cfg: &SynthConfig| {
            let mut out = Vec::new();
            render_flows(&generate(cfg).unwrap(), &mut out).unwrap();
            out
        };
        let cfg = two_profiles(5);
        assert_eq!(render(&cfg), render(&cfg));
        let other = SynthConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(render(&cfg), render(&other));
    }

    #[test]
    fn degenerate_mixture_is_constant() {
        let cfg = SynthConfig {
            profiles: vec![ClassProfile {
                label: "x".into(),
                rate_per_s: 30.0,
                size_mixture: vec![SizeComponent::new(1400.0, 0.0, 1.0)],
                duration_s: 5.0,
                jitter_seed_offset: 0,
            }],
            flows_per_class: 3,
            seed: 0,
        };
        let ds = generate(&cfg).unwrap();
        assert!(ds.flows().iter().flat_map(|f| f.packets()).all(|p| p.size == 1400));
    }

    #[test]
    fn generated_packets_are_valid() {
        let ds = generate(&SynthConfig {
            flows_per_class: 10,
            ..Default::default()
        })
        .unwrap();
        for f in ds.flows() {
            assert_eq!(f.first_time(), 0.0);
            for p in f.packets() {
                assert!((1..=1500).contains(&p.size));
                assert!(p.time >= 0.0 && p.time < 20.0);
            }
        }
    }

    #[test]
    fn empirical_rate_within_five_percent() {
        let cfg = SynthConfig {
            flows_per_class: 200,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        for p in &cfg.profiles {
            let packets: usize = ds
                .flows()
                .iter()
                .filter(|f| f.label() == p.label)
                .map(|f| f.packets().len())
                .sum();
            let rate = packets as f64 / (200.0 * p.duration_s);
            assert!(
                (rate - p.rate_per_s).abs() <= 0.05 * p.rate_per_s,
                "{}: {rate} vs {}",
                p.label,
                p.rate_per_s
            );
        }
    }

    #[test]
    fn default_has_a_large_packet_class() {
        let ds = generate(&SynthConfig {
            flows_per_class: 20,
            ..Default::default()
        })
        .unwrap();
        let best = ds
            .classes()
            .iter()
            .map(|c| {
                let (big, all) = ds
                    .flows()
                    .iter()
                    .filter(|f| f.label() == c)
                    .flat_map(|f| f.packets())
                    .fold((0usize, 0usize), |(b, a), p| (b + usize::from(p.size > 1200), a + 1));
                big as f64 / all as f64
            })
            .fold(0.0, f64::max);
        assert!(best >= 0.30, "{best}");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = two_profiles(1);
        cfg.profiles[1].label = cfg.profiles[0].label.clone();
        assert!(generate(&cfg).is_err());

        let mut cfg = two_profiles(1);
        cfg.profiles[0].size_mixture[0].weight = 0.5;
        assert!(generate(&cfg).is_err());

        let mut cfg = two_profiles(1);
        cfg.profiles[0].size_mixture[0].mean = 1600.0;
        assert!(generate(&cfg).is_err());

        assert!(generate(&two_profiles(0)).is_err());
    }
}
