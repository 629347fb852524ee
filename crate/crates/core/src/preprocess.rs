//! Dataset filters, windowing and the max-packet-size distribution.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Dataset, Flow, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_duration_s: f64,
    pub min_packets_in_window: usize,
    pub window_s: f64,
    pub min_class_size: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_duration_s: 15.0,
            min_packets_in_window: 100,
            window_s: 15.0,
            min_class_size: 0,
        }
    }
}

impl FilterPolicy {
    pub fn permissive() -> Self {
        FilterPolicy {
            min_duration_s: 0.0,
            min_packets_in_window: 0,
            window_s: 0.0,
            min_class_size: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration_s >= 0.0 && self.window_s >= 0.0) {
            return Err(Error::InvalidConfig("filter durations must be nonnegative".into()));
        }
        Ok(())
    }

    fn keeps(&self, f: &Flow) -> bool {
        if f.duration() < self.min_duration_s {
            return false;
        }
        let start = f.first_time();
        let in_window = f
            .packets()
            .iter()
            .take_while(|p| p.time - start <= self.window_s)
            .count();
        in_window >= self.min_packets_in_window
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFilterRow {
    pub label: String,
    pub total: usize,
    /// Flows passing the per-flow thresholds.
    pub passing: usize,
    /// Flows kept after class pruning (0 when the class was dropped).
    pub surviving: usize,
    pub percentage: f64,
    pub class_removed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub policy: FilterPolicy,
    pub classes: Vec<ClassFilterRow>,
    pub total: usize,
    pub surviving: usize,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>12} {:>24}", "class", "all samples", "filtered samples")?;
        for row in &self.classes {
            let note = if row.class_removed { "  (class removed)" } else { "" };
            writeln!(
                f,
                "{:<20} {:>12} {:>15} ({:>5.1}%){note}",
                row.label, row.total, row.surviving, row.percentage
            )?;
        }
        let pct = percent(self.surviving, self.total);
        write!(
            f,
            "{:<20} {:>12} {:>15} ({:>5.1}%)",
            "total", self.total, self.surviving, pct
        )
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Duration filter, then the in-window packet count, then class pruning.
pub fn apply_filters(ds: &Dataset, policy: &FilterPolicy) -> (Dataset, FilterReport) {
    let passing: Vec<&Flow> = ds.flows().iter().filter(|f| policy.keeps(f)).collect();
    let passing_count = |label: &str| passing.iter().filter(|f| f.label() == label).count();

    let mut rows = Vec::with_capacity(ds.classes().len());
    for label in ds.classes() {
        let total = ds.class_count(label);
        let pass = passing_count(label);
        let removed = pass < policy.min_class_size;
        let surviving = if removed { 0 } else { pass };
        rows.push(ClassFilterRow {
            label: label.clone(),
            total,
            passing: pass,
            surviving,
            percentage: percent(surviving, total),
            class_removed: removed,
        });
    }

    let kept: Dataset = passing
        .into_iter()
        .filter(|f| rows.iter().any(|r| r.label == f.label() && !r.class_removed))
        .cloned()
        .collect();
    let report = FilterReport {
        policy: *policy,
        total: ds.len(),
        surviving: kept.len(),
        classes: rows,
    };
    (kept, report)
}

/// Keeps packets with `time <= window_s` and re-bases them to the first kept packet.
pub fn truncate_to_window(f: &Flow, window_s: f64) -> Result<Flow> {
    if window_s.is_nan() || window_s <= 0.0 {
        return Err(Error::InvalidConfig(format!("window_s {window_s} must be positive")));
    }
    let kept: Vec<&Packet> = f.packets().iter().take_while(|p| p.time <= window_s).collect();
    let Some(first) = kept.first().map(|p| p.time) else {
        return Err(Error::EmptyWindow);
    };
    let packets = kept
        .into_iter()
        .map(|p| Packet {
            time: p.time - first,
            size: p.size,
        })
        .collect();
    Flow::new(f.label(), f.origin(), packets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSizeRow {
    /// `None` for the collapsed "Other" row.
    pub max_size: Option<u32>,
    pub count: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSizeDistribution {
    pub rows: Vec<MaxSizeRow>,
    pub total: usize,
}

impl fmt::Display for MaxSizeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>16} {:>18} {:>11}",
            "max packet size", "number of samples", "percentage"
        )?;
        for (i, row) in self.rows.iter().enumerate() {
            let size = row.max_size.map_or_else(|| "Other".to_string(), |s| s.to_string());
            write!(f, "{size:>16} {:>18} {:>10.2}%", row.count, row.percentage)?;
            if i + 1 < self.rows.len() {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Groups flows by their largest packet. Named rows are sorted by count
/// (ties: larger size first); with `top_k`, the rest collapse into a final
/// "Other" row.
pub fn max_size_distribution(ds: &Dataset, top_k: Option<usize>) -> Result<MaxSizeDistribution> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for f in ds.flows() {
        *counts.entry(f.max_size()).or_default() += 1;
    }
    let mut grouped: Vec<(u32, usize)> = counts.into_iter().collect();
    grouped.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));

    let total = ds.len();
    let row = |max_size, count| MaxSizeRow {
        max_size,
        count,
        percentage: percent(count, total),
    };
    let k = top_k.unwrap_or(usize::MAX);
    let mut rows: Vec<MaxSizeRow> = grouped.iter().take(k).map(|&(s, c)| row(Some(s), c)).collect();
    let other: usize = grouped.iter().skip(k).map(|&(_, c)| c).sum();
    if other > 0 {
        rows.push(row(None, other));
    }
    Ok(MaxSizeDistribution { rows, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Origin;

    fn flow_with(label: &str, times: &[f64], size: u32) -> Flow {
        let packets = times.iter().map(|&t| Packet::new(t, size).unwrap()).collect();
        Flow::new(label, Origin::Original, packets).unwrap()
    }

    /// `n_window` packets spread evenly before `min(duration, 14.9)`, plus a last packet at `duration`.
    fn paced(label: &str, n_window: usize, duration: f64) -> Flow {
        let span = duration.min(14.9);
        let mut times: Vec<f64> = (0..n_window).map(|i| i as f64 * span / n_window as f64).collect();
        times.push(duration);
        flow_with(label, &times, 500)
    }

    #[test]
    fn flow_with_99_window_packets_removed() {
        // 99 packets in [0, 14.7], one more at t = 20 outside the window
        let mut times: Vec<f64> = (0..99).map(|i| i as f64 * 0.15).collect();
        times.push(20.0);
        let f = flow_with("a", &times, 100);
        let (out, _) = apply_filters(&Dataset::new(vec![f]), &FilterPolicy::default());
        assert!(out.is_empty());
    }

    #[test]
    fn flow_with_150_window_packets_retained() {
        let mut times: Vec<f64> = (0..150).map(|i| i as f64 * 0.1).collect();
        times.push(16.0);
        let f = flow_with("a", &times, 100);
        let (out, report) = apply_filters(&Dataset::new(vec![f]), &FilterPolicy::default());
        assert_eq!(out.len(), 1);
        assert_eq!(report.surviving, 1);
    }

    #[test]
    fn short_flows_removed() {
        let f = paced("a", 200, 14.95);
        let (out, _) = apply_filters(&Dataset::new(vec![f]), &FilterPolicy::default());
        assert!(out.is_empty());
    }

    #[test]
    fn zero_policy_is_identity() {
        let ds = Dataset::new(vec![paced("a", 3, 1.0), paced("b", 1, 0.5), paced("a", 200, 30.0)]);
        let (out, report) = apply_filters(&ds, &FilterPolicy::permissive());
        assert_eq!(out, ds);
        assert_eq!(report.surviving, 3);
    }

    #[test]
    fn class_pruning_and_report() {
        let ds = Dataset::new(vec![
            paced("big", 150, 20.0),
            paced("big", 150, 20.0),
            paced("big", 10, 20.0),
            paced("small", 150, 20.0),
        ]);
        let policy = FilterPolicy {
            min_class_size: 2,
            ..Default::default()
        };
        let (out, report) = apply_filters(&ds, &policy);
        assert_eq!(out.len(), 2);
        assert_eq!(out.classes(), ["big"]);
        let big = &report.classes[0];
        assert_eq!((big.total, big.surviving), (3, 2));
        assert!((big.percentage - 200.0 / 3.0).abs() < 1e-9);
        let small = &report.classes[1];
        assert!(small.class_removed);
        assert_eq!((small.passing, small.surviving), (1, 0));
        let table = report.to_string();
        assert!(table.contains("class removed"), "{table}");
    }

    #[test]
    fn filtering_everything_is_reported() {
        let ds = Dataset::new(vec![paced("a", 3, 1.0)]);
        let (out, report) = apply_filters(&ds, &FilterPolicy::default());
        assert!(out.is_empty());
        assert_eq!(report.total, 1);
        assert_eq!(report.surviving, 0);
    }

    #[test]
    fn truncate_rebases_to_first_kept_packet() {
        let f = flow_with("a", &[1.0, 14.0, 16.0], 10);
        let t = truncate_to_window(&f, 15.0).unwrap();
        let times: Vec<f64> = t.packets().iter().map(|p| p.time).collect();
        assert_eq!(times, [0.0, 13.0]);
    }

    #[test]
    fn truncate_inside_window_only_shifts() {
        let f = flow_with("a", &[2.0, 3.5, 9.0], 10);
        let t = truncate_to_window(&f, 15.0).unwrap();
        let times: Vec<f64> = t.packets().iter().map(|p| p.time).collect();
        assert_eq!(times, [0.0, 1.5, 7.0]);
    }

    #[test]
    fn truncate_empty_window_errors() {
        let f = flow_with("a", &[16.0, 17.0], 10);
        let err = truncate_to_window(&f, 15.0).unwrap_err();
        assert_eq!(err.to_string(), "no packets in window");
        assert!(truncate_to_window(&f, 0.0).is_err());
    }

    #[test]
    fn max_size_counts() {
        let ds = Dataset::new(vec![
            flow_with("a", &[0.0], 1412),
            flow_with("a", &[0.0], 1412),
            flow_with("b", &[0.0], 1294),
        ]);
        let d = max_size_distribution(&ds, None).unwrap();
        assert_eq!(d.rows.len(), 2);
        assert_eq!((d.rows[0].max_size, d.rows[0].count), (Some(1412), 2));
        assert!((d.rows[0].percentage - 66.67).abs() < 0.005);
        assert_eq!((d.rows[1].max_size, d.rows[1].count), (Some(1294), 1));
        assert!((d.rows[1].percentage - 33.33).abs() < 0.005);
    }

    #[test]
    fn max_size_singleton_and_empty() {
        let ds = Dataset::new(vec![flow_with("a", &[0.0], 900)]);
        let d = max_size_distribution(&ds, Some(5)).unwrap();
        assert_eq!(d.rows.len(), 1);
        assert_eq!(d.rows[0].percentage, 100.0);
        assert!(max_size_distribution(&Dataset::default(), None).is_err());
    }

    #[test]
    fn max_size_other_row() {
        let sizes = [1412, 1412, 1412, 1294, 1294, 1392, 1434, 1484, 1000, 999];
        let ds: Dataset = sizes.iter().map(|&s| flow_with("a", &[0.0], s)).collect();
        let d = max_size_distribution(&ds, Some(5)).unwrap();
        assert_eq!(d.rows.len(), 6);
        let other = d.rows.last().unwrap();
        assert_eq!((other.max_size, other.count), (None, 2));
        let sum: f64 = d.rows.iter().map(|r| r.percentage).sum();
        assert!((sum - 100.0).abs() < 0.01);
        assert!(d.to_string().contains("Other"));
    }
}
