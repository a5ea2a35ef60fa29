//! Run metrics: nearest-rank latency percentiles, cache counters, impacted-key
//! histograms, and a two-run comparison report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nearest-rank percentile over an ascending-sorted sample: the smallest
/// element with at least ceil(q/100 * n) samples at or below it.
pub fn percentile(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty() && (0.0..=100.0).contains(&q));
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.max(1) - 1]
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct LatencySummary {
    pub count: u64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
    pub mean_us: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &mut Vec<u64>) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        samples.sort_unstable();
        LatencySummary {
            count: samples.len() as u64,
            p50_us: percentile(samples, 50.0),
            p95_us: percentile(samples, 95.0),
            p99_us: percentile(samples, 99.0),
            max_us: *samples.last().unwrap(),
            mean_us: samples.iter().sum::<u64>() as f64 / samples.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub label: String,
    pub ops: u64,
    pub reads: u64,
    pub writes: u64,
    pub errors: u64,
    pub errors_by_kind: BTreeMap<String, u64>,
    pub read_latency: LatencySummary,
    pub write_latency: LatencySummary,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub fallback_roots: u64,
    /// (hits, misses) per template.
    pub per_template: BTreeMap<String, (u64, u64)>,
    /// Per write kind, a histogram of impacted cache keys per operation.
    pub impacted_keys: BTreeMap<String, BTreeMap<u64, u64>>,
    pub ranges_cleared: u64,
    pub cp_populated: u64,
    pub cp_discarded: u64,
    pub queue_dropped: u64,
    /// Cached-vs-uncached result divergences observed (when diff checking is
    /// on) — must stay zero.
    pub result_diffs: u64,
    pub oracle_violations: u64,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<RunMetrics> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("metrics file: {e}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    /// b/a latency factors; above 1.0 means `b` is slower.
    pub read_p50_factor: f64,
    pub read_p95_factor: f64,
    pub read_p99_factor: f64,
    pub write_p95_factor: f64,
    pub hit_rate_a: f64,
    pub hit_rate_b: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if a == 0 && b == 0 {
        1.0
    } else if a == 0 {
        f64::INFINITY
    } else {
        b as f64 / a as f64
    }
}

fn hit_rate(m: &RunMetrics) -> f64 {
    let total = m.cache_hits + m.cache_misses;
    if total == 0 {
        0.0
    } else {
        m.cache_hits as f64 / total as f64
    }
}

pub fn compare(a: &RunMetrics, b: &RunMetrics) -> Comparison {
    Comparison {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        read_p50_factor: ratio(a.read_latency.p50_us, b.read_latency.p50_us),
        read_p95_factor: ratio(a.read_latency.p95_us, b.read_latency.p95_us),
        read_p99_factor: ratio(a.read_latency.p99_us, b.read_latency.p99_us),
        write_p95_factor: ratio(a.write_latency.p95_us, b.write_latency.p95_us),
        hit_rate_a: hit_rate(a),
        hit_rate_b: hit_rate(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_basics() {
        let s: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&s, 50.0), 50);
        assert_eq!(percentile(&s, 95.0), 95);
        assert_eq!(percentile(&s, 99.0), 99);
        assert_eq!(percentile(&s, 100.0), 100);
        assert_eq!(percentile(&[7], 99.0), 7);
    }

    #[test]
    fn p99_of_identical_samples_is_that_value() {
        let s = vec![123u64; 100];
        assert_eq!(percentile(&s, 99.0), 123);
    }

    #[test]
    fn p95_monotone_under_max_outlier() {
        let mut base: Vec<u64> = (1..=200).collect();
        let before = percentile(&base, 95.0);
        *base.last_mut().unwrap() = 1_000_000;
        assert!(percentile(&base, 95.0) >= before);
    }

    #[test]
    fn comparison_of_run_with_itself_is_unity() {
        let mut m = RunMetrics::default();
        m.read_latency = LatencySummary::from_samples(&mut vec![5, 6, 7, 8]);
        m.cache_hits = 3;
        m.cache_misses = 1;
        let c = compare(&m, &m);
        assert_eq!(c.read_p50_factor, 1.0);
        assert_eq!(c.read_p95_factor, 1.0);
        assert_eq!(c.read_p99_factor, 1.0);
        assert_eq!(c.hit_rate_a, c.hit_rate_b);
    }

    #[test]
    fn metrics_json_round_trip() {
        let mut m = RunMetrics { label: "c+q+".into(), ops: 10, ..Default::default() };
        m.impacted_keys.entry("add-edge".into()).or_default().insert(2, 7);
        let back = RunMetrics::from_json(&m.to_json()).unwrap();
        assert_eq!(back.label, "c+q+");
        assert_eq!(back.impacted_keys["add-edge"][&2], 7);
        assert!(RunMetrics::from_json("not json").is_err());
    }
}
