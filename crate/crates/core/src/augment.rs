//! Average (subset-mean) and MTU (fragmentation) augmentation.
//!
//! Average augmentation works on FlowPics: every m-subset of a class yields
//! the elementwise mean of its members. MTU augmentation works on packet
//! lists, re-sending every oversized packet as MTU-sized fragments plus a
//! remainder at the same timestamp; [`mtu_fragment_histogram`] is the
//! equivalent single pass over a size-indexed count vector.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Dataset, Flow, Origin, Packet};
use crate::flowpic::{FlowPic, PicSpec};
use crate::rng;

const SUBSET_STREAM: u64 = 0xA7E;
const MTU_STREAM: u64 = 0x3707;

/// How many m-subsets to draw per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetCap {
    /// Every C(N, m) subset.
    All,
    Absolute(usize),
    /// `k * N` subsets for a class of N samples.
    PerClassMultiple(usize),
}

impl Default for SubsetCap {
    fn default() -> Self {
        SubsetCap::PerClassMultiple(3)
    }
}

impl SubsetCap {
    pub fn limit(self, class_size: usize) -> Option<usize> {
        match self {
            SubsetCap::All => None,
            SubsetCap::Absolute(n) => Some(n),
            SubsetCap::PerClassMultiple(k) => Some(k.saturating_mul(class_size)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AverageConfig {
    pub m: usize,
    pub cap: SubsetCap,
    pub seed: u64,
}

impl Default for AverageConfig {
    fn default() -> Self {
        AverageConfig {
            m: 2,
            cap: SubsetCap::default(),
            seed: 0,
        }
    }
}

/// C(n, k), or `None` when it does not fit in a u64.
pub fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// The `rank`-th m-subset of `0..n` in lexicographic order.
fn unrank_combination(mut rank: u64, n: usize, m: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(m);
    let mut x = 0;
    while out.len() < m {
        let count = binomial(n - x - 1, m - out.len() - 1).expect("bounded by C(n, m)");
        if rank < count {
            out.push(x);
        } else {
            rank -= count;
        }
        x += 1;
    }
    out
}

/// Chooses which m-subsets of `0..n` to average, in lexicographic order.
pub fn subset_plan(n: usize, cfg: &AverageConfig) -> Result<Vec<Vec<usize>>> {
    if cfg.m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    if n < cfg.m {
        return Err(Error::NotEnoughInputs {
            required: cfg.m,
            got: n,
        });
    }
    let m = cfg.m;
    let total = binomial(n, m);
    let limit = cfg.cap.limit(n);
    let mut rng = rng::stream(cfg.seed, &[SUBSET_STREAM, n as u64, m as u64]);
    match (total, limit) {
        (Some(total), None) => Ok((0..total).map(|r| unrank_combination(r, n, m)).collect()),
        (Some(total), Some(cap)) if cap as u64 >= total => {
            Ok((0..total).map(|r| unrank_combination(r, n, m)).collect())
        }
        (Some(total), Some(cap)) if usize::try_from(total).is_ok() => {
            let mut ranks = index::sample(&mut rng, total as usize, cap).into_vec();
            ranks.sort_unstable();
            Ok(ranks.into_iter().map(|r| unrank_combination(r as u64, n, m)).collect())
        }
        (None, None) => Err(Error::InvalidConfig(format!(
            "C({n}, {m}) subsets is too many without a cap"
        ))),
        (_, Some(cap)) => {
            // C(n, m) is astronomically larger than cap, so rejection converges fast.
            let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(cap);
            while seen.len() < cap {
                let mut pick = index::sample(&mut rng, n, m).into_vec();
                pick.sort_unstable();
                seen.insert(pick);
            }
            let mut plan: Vec<Vec<usize>> = seen.into_iter().collect();
            plan.sort();
            Ok(plan)
        }
    }
}

/// Elementwise means of m-subsets of one class's FlowPics.
pub fn average_augment(class_pics: &[FlowPic], cfg: &AverageConfig) -> Result<Vec<FlowPic>> {
    let Some(first) = class_pics.first() else {
        return Err(Error::NotEnoughInputs {
            required: cfg.m.max(1),
            got: 0,
        });
    };
    for p in class_pics {
        if p.label() != first.label() {
            return Err(Error::MixedLabels {
                expected: first.label().to_string(),
                found: p.label().to_string(),
            });
        }
        if p.bins() != first.bins() {
            return Err(Error::ShapeMismatch(format!(
                "pics of {} and {} bins",
                first.bins(),
                p.bins()
            )));
        }
    }
    let plan = subset_plan(class_pics.len(), cfg)?;
    let divisor = cfg.m as f64;
    plan.iter()
        .map(|subset| {
            let mut acc = class_pics[subset[0]].cells().to_vec();
            for &i in &subset[1..] {
                for (a, b) in acc.iter_mut().zip(class_pics[i].cells()) {
                    *a += b;
                }
            }
            acc.iter_mut().for_each(|a| *a /= divisor);
            FlowPic::from_cells(first.bins(), acc, first.label(), Origin::AvgAugmented)
        })
        .collect()
}

/// Averages each class of a mixed collection separately, preserving class order.
pub fn average_augment_by_class(pics: &[FlowPic], cfg: &AverageConfig) -> Result<Vec<FlowPic>> {
    let mut labels: Vec<&str> = Vec::new();
    for p in pics {
        if !labels.contains(&p.label()) {
            labels.push(p.label());
        }
    }
    let mut out = Vec::new();
    for (ci, label) in labels.iter().enumerate() {
        let class: Vec<FlowPic> = pics.iter().filter(|p| p.label() == *label).cloned().collect();
        let class_cfg = AverageConfig {
            seed: rng::derive_seed(cfg.seed, &[ci as u64]),
            ..*cfg
        };
        out.extend(average_augment(&class, &class_cfg)?);
    }
    Ok(out)
}

/// Splits every packet larger than `mtu` into `mtu`-sized fragments plus the remainder.
pub fn mtu_fragment_flow(f: &Flow, mtu: u32) -> Result<Flow> {
    if mtu == 0 {
        return Err(Error::InvalidConfig("mtu must be at least 1".into()));
    }
    let mut packets = Vec::with_capacity(f.packets().len());
    for p in f.packets() {
        let mut remaining = p.size;
        while remaining > mtu {
            packets.push(Packet {
                time: p.time,
                size: mtu,
            });
            remaining -= mtu;
        }
        packets.push(Packet {
            time: p.time,
            size: remaining,
        });
    }
    Flow::new(f.label(), Origin::MtuAugmented, packets)
}

/// Per-time-bin packet counts indexed by exact size `0..=size_ceiling`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeHistogram {
    pub size_ceiling: u32,
    pub columns: Vec<Vec<u64>>,
}

impl SizeHistogram {
    pub fn from_flow(f: &Flow, spec: &PicSpec, size_ceiling: u32) -> Result<Self> {
        spec.validate()?;
        let mut columns = vec![vec![0u64; size_ceiling as usize + 1]; spec.bins];
        for p in f.packets() {
            if p.size > size_ceiling {
                return Err(Error::InvalidPacket(format!(
                    "size {} above histogram ceiling {size_ceiling}",
                    p.size
                )));
            }
            columns[spec.time_bin(p.time)][p.size as usize] += 1;
        }
        Ok(SizeHistogram { size_ceiling, columns })
    }

    pub fn fragment(&self, mtu: u32) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|c| mtu_fragment_histogram(c, mtu))
            .collect::<Result<_>>()?;
        Ok(SizeHistogram {
            size_ceiling: self.size_ceiling,
            columns,
        })
    }
}

/// Single-pass MTU fragmentation of one size-count vector (`h.len() = ceiling + 1`).
///
/// Every count above `mtu` moves one copy to index `mtu` and one to
/// `s - mtu`. Only valid while `2 * mtu >= ceiling`.
pub fn mtu_fragment_histogram(h: &[u64], mtu: u32) -> Result<Vec<u64>> {
    if h.is_empty() {
        return Err(Error::ShapeMismatch("empty size histogram".into()));
    }
    let ceiling = (h.len() - 1) as u32;
    if 2 * u64::from(mtu) < u64::from(ceiling) {
        return Err(Error::MtuBelowHalfCeiling {
            mtu,
            half: ceiling.div_ceil(2),
        });
    }
    let mtu = mtu as usize;
    let mut out = h.to_vec();
    if mtu + 1 >= h.len() {
        return Ok(out);
    }
    let oversized = &h[mtu + 1..];
    out[mtu] += oversized.iter().sum::<u64>();
    for (offset, &count) in oversized.iter().enumerate() {
        out[offset + 1] += count;
    }
    out[mtu + 1..].iter_mut().for_each(|c| *c = 0);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtuConfig {
    pub mtu_min: u32,
    pub mtu_max: u32,
    pub seed: u64,
    pub size_ceiling: u32,
}

impl Default for MtuConfig {
    fn default() -> Self {
        MtuConfig {
            mtu_min: 750,
            mtu_max: 1200,
            seed: 0,
            size_ceiling: 1500,
        }
    }
}

impl MtuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.mtu_min && self.mtu_min <= self.mtu_max && self.mtu_max <= self.size_ceiling) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < mtu_min ({}) <= mtu_max ({}) <= size_ceiling ({})",
                self.mtu_min, self.mtu_max, self.size_ceiling
            )));
        }
        Ok(())
    }

    /// The MTU drawn for the flow at `index`, uniform on `[mtu_min, mtu_max]`.
    pub fn draw(&self, index: usize) -> u32 {
        rng::stream(self.seed, &[MTU_STREAM, index as u64]).random_range(self.mtu_min..=self.mtu_max)
    }
}

/// Fragments each flow at its own independently drawn MTU.
pub fn mtu_augment_dataset(ds: &Dataset, cfg: &MtuConfig) -> Result<Dataset> {
    Ok(mtu_augment_with_draws(ds, cfg)?.0)
}

pub fn mtu_augment_with_draws(ds: &Dataset, cfg: &MtuConfig) -> Result<(Dataset, Vec<u32>)> {
    cfg.validate()?;
    let mut draws = Vec::with_capacity(ds.len());
    let mut flows = Vec::with_capacity(ds.len());
    for (i, f) in ds.flows().iter().enumerate() {
        let mtu = cfg.draw(i);
        draws.push(mtu);
        flows.push(mtu_fragment_flow(f, mtu)?);
    }
    Ok((Dataset::new(flows), draws))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(packets: &[(f64, u32)]) -> Flow {
        let p = packets.iter().map(|&(t, s)| Packet::new(t, s).unwrap()).collect();
        Flow::new("x", Origin::Original, p).unwrap()
    }

    fn sizes(f: &Flow) -> Vec<(f64, u32)> {
        f.packets().iter().map(|p| (p.time, p.size)).collect()
    }

    fn pic(bins: usize, cells: &[f64]) -> FlowPic {
        FlowPic::from_cells(bins, cells.to_vec(), "c", Origin::Original).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), Some(6));
        assert_eq!(binomial(12, 4), Some(495));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(64, 2), Some(2016));
        assert_eq!(binomial(1000, 500), None);
    }

    #[test]
    fn unrank_is_lexicographic() {
        let all: Vec<Vec<usize>> = (0..6).map(|r| unrank_combination(r, 4, 2)).collect();
        assert_eq!(
            all,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
    }

    #[test]
    fn mean_of_two_matrices() {
        let a = pic(2, &[2.0, 4.0, 0.0, 0.0]);
        let b = pic(2, &[4.0, 8.0, 0.0, 0.0]);
        let cfg = AverageConfig {
            m: 2,
            cap: SubsetCap::All,
            seed: 0,
        };
        let out = average_augment(&[a, b], &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].cells(), [3.0, 6.0, 0.0, 0.0]);
        assert_eq!(out[0].origin(), Origin::AvgAugmented);
        assert_eq!(out[0].label(), "c");
    }

    #[test]
    fn m_one_is_identity() {
        let pics = vec![pic(2, &[1.0, 0.0, 0.0, 2.0]), pic(2, &[0.5, 0.5, 0.0, 0.0])];
        let cfg = AverageConfig {
            m: 1,
            cap: SubsetCap::All,
            seed: 0,
        };
        let out = average_augment(&pics, &cfg).unwrap();
        let cells: Vec<&[f64]> = out.iter().map(|p| p.cells()).collect();
        assert_eq!(cells, vec![pics[0].cells(), pics[1].cells()]);
    }

    #[test]
    fn four_choose_two_outputs() {
        let pics: Vec<FlowPic> = (0..4).map(|i| pic(1, &[i as f64])).collect();
        let cfg = AverageConfig {
            m: 2,
            cap: SubsetCap::All,
            seed: 0,
        };
        assert_eq!(average_augment(&pics, &cfg).unwrap().len(), 6);
    }

    #[test]
    fn cap_samples_distinct_subsets() {
        let pics: Vec<FlowPic> = (0..20).map(|i| pic(1, &[i as f64])).collect();
        let cfg = AverageConfig {
            m: 2,
            cap: SubsetCap::PerClassMultiple(3),
            seed: 5,
        };
        let plan = subset_plan(20, &cfg).unwrap();
        assert_eq!(plan.len(), 60);
        let unique: HashSet<_> = plan.iter().collect();
        assert_eq!(unique.len(), 60);
        assert_eq!(plan, subset_plan(20, &cfg).unwrap());
        assert_eq!(average_augment(&pics, &cfg).unwrap().len(), 60);
        // a cap above C(N, m) takes everything
        let cfg = AverageConfig {
            m: 2,
            cap: SubsetCap::Absolute(1000),
            seed: 5,
        };
        assert_eq!(subset_plan(20, &cfg).unwrap().len(), 190);
    }

    #[test]
    fn huge_space_uses_rejection() {
        let cfg = AverageConfig {
            m: 40,
            cap: SubsetCap::Absolute(10),
            seed: 1,
        };
        let plan = subset_plan(200, &cfg).unwrap();
        assert_eq!(plan.len(), 10);
        assert!(plan.iter().all(|s| s.len() == 40 && s.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn average_error_paths() {
        let cfg = AverageConfig {
            m: 3,
            cap: SubsetCap::All,
            seed: 0,
        };
        assert!(matches!(
            average_augment(&[pic(1, &[1.0]), pic(1, &[2.0])], &cfg),
            Err(Error::NotEnoughInputs { required: 3, got: 2 })
        ));
        let other = FlowPic::from_cells(1, vec![1.0], "d", Origin::Original).unwrap();
        let cfg = AverageConfig { m: 1, ..cfg };
        assert!(matches!(
            average_augment(&[pic(1, &[1.0]), other], &cfg),
            Err(Error::MixedLabels { .. })
        ));
        assert!(average_augment(&[], &cfg).is_err());
    }

    #[test]
    fn by_class_keeps_labels_apart() {
        let mut pics: Vec<FlowPic> = (0..4).map(|i| pic(1, &[i as f64])).collect();
        pics.extend((0..3).map(|i| FlowPic::from_cells(1, vec![10.0 + i as f64], "d", Origin::Original).unwrap()));
        let cfg = AverageConfig {
            m: 2,
            cap: SubsetCap::All,
            seed: 0,
        };
        let out = average_augment_by_class(&pics, &cfg).unwrap();
        assert_eq!(out.len(), 6 + 3);
        assert!(out[..6].iter().all(|p| p.label() == "c" && p.get(0, 0) < 4.0));
        assert!(out[6..].iter().all(|p| p.label() == "d" && p.get(0, 0) >= 10.0));
    }

    #[test]
    fn fragment_1400_at_1000() {
        let out = mtu_fragment_flow(&flow(&[(2.5, 1400)]), 1000).unwrap();
        assert_eq!(sizes(&out), [(2.5, 1000), (2.5, 400)]);
        assert_eq!(out.origin(), Origin::MtuAugmented);
    }

    #[test]
    fn fragment_1500_at_600() {
        let out = mtu_fragment_flow(&flow(&[(1.0, 1500)]), 600).unwrap();
        assert_eq!(sizes(&out), [(1.0, 600), (1.0, 600), (1.0, 300)]);
    }

    #[test]
    fn large_mtu_is_identity() {
        let f = flow(&[(0.0, 100), (0.5, 1400), (1.0, 700)]);
        let out = mtu_fragment_flow(&f, 1400).unwrap();
        assert_eq!(sizes(&out), sizes(&f));
        assert!(mtu_fragment_flow(&f, 0).is_err());
    }

    #[test]
    fn histogram_worked_example() {
        let mut h = vec![0u64; 1501];
        h[1400] = 1;
        let out = mtu_fragment_histogram(&h, 1000).unwrap();
        let mut expected = vec![0u64; 1501];
        expected[1000] = 1;
        expected[400] = 1;
        assert_eq!(out, expected);
    }

    #[test]
    fn histogram_two_sizes() {
        let mut h = vec![0u64; 1501];
        h[1300] = 2;
        h[900] = 1;
        let out = mtu_fragment_histogram(&h, 1000).unwrap();
        let mut expected = vec![0u64; 1501];
        expected[1000] = 2;
        expected[300] = 2;
        expected[900] = 1;
        assert_eq!(out, expected);
    }

    #[test]
    fn histogram_below_mtu_unchanged() {
        let mut h = vec![0u64; 1501];
        h[10] = 3;
        h[1000] = 4;
        assert_eq!(mtu_fragment_histogram(&h, 1000).unwrap(), h);
    }

    #[test]
    fn histogram_rejects_small_mtu() {
        let h = vec![0u64; 1501];
        let err = mtu_fragment_histogram(&h, 749).unwrap_err();
        assert!(matches!(err, Error::MtuBelowHalfCeiling { mtu: 749, half: 750 }));
        assert!(err.to_string().contains("mtu_fragment_flow"));
        assert!(mtu_fragment_histogram(&h, 750).is_ok());
    }

    #[test]
    fn mtu_dataset_determinism_and_identity() {
        let ds = Dataset::new(vec![flow(&[(0.0, 1400), (1.0, 200)]), flow(&[(0.0, 700), (2.0, 750)])]);
        let cfg = MtuConfig {
            seed: 3,
            ..Default::default()
        };
        let (a, draws) = mtu_augment_with_draws(&ds, &cfg).unwrap();
        assert_eq!(a, mtu_augment_dataset(&ds, &cfg).unwrap());
        assert!(draws.iter().all(|m| (750..=1200).contains(m)));
        assert_eq!(a.len(), 2);
        assert_eq!(sizes(&a.flows()[1]), sizes(&ds.flows()[1]));
        assert_eq!(a.flows()[1].origin(), Origin::MtuAugmented);
        assert_eq!(a.flows()[0].total_bytes(), 1600);
    }

    #[test]
    fn mtu_draws_cover_the_closed_range() {
        let cfg = MtuConfig {
            mtu_min: 750,
            mtu_max: 752,
            ..Default::default()
        };
        let seen: HashSet<u32> = (0..200).map(|i| cfg.draw(i)).collect();
        assert_eq!(seen, HashSet::from([750, 751, 752]));
        assert!(MtuConfig {
            mtu_min: 900,
            mtu_max: 800,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(MtuConfig { mtu_min: 0, ..cfg }.validate().is_err());
        assert!(MtuConfig { mtu_max: 1600, ..cfg }.validate().is_err());
    }
}
