//! Evaluation report: serializable structure plus aligned tables.

use serde::{Deserialize, Serialize};

use super::RunMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub negatives: usize,
    pub split: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Per-metric mean and dispersion over runs; `std` is absent for single runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: EvalProtocol,
    pub runs: Vec<RunMetrics>,
    pub mean: MetricSummary,
    pub std: Option<MetricSummary>,
}

impl EvalReport {
    /// Basic sanity on metric ranges and orderings.
    pub fn check_invariants(&self) -> Result<(), String> {
        for r in &self.runs {
            for v in [r.hr5, r.hr10, r.ndcg5, r.ndcg10] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("metric out of range: {v}"));
                }
            }
            if r.hr5 > r.hr10 + 1e-12 {
                return Err("HR@5 exceeds HR@10".into());
            }
            if r.ndcg5 > r.hr5 + 1e-12 || r.ndcg10 > r.hr10 + 1e-12 {
                return Err("NDCG exceeds HR at the same cutoff".into());
            }
        }
        Ok(())
    }

    /// Aligned human-readable table (metric columns N@5/N@10/HR@5/HR@10).
    pub fn table(&self, label: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "split={} negatives={} runs={}\n",
            self.protocol.split,
            self.protocol.negatives,
            self.runs.len()
        ));
        out.push_str(&format!(
            "{:<22} {:>8} {:>8} {:>8} {:>8}\n",
            "Method", "N@5", "N@10", "HR@5", "HR@10"
        ));
        out.push_str(&format!(
            "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            label, self.mean.ndcg5, self.mean.ndcg10, self.mean.hr5, self.mean.hr10
        ));
        match &self.std {
            Some(s) => out.push_str(&format!(
                "{:<22} ±{:>7.4} ±{:>7.4} ±{:>7.4} ±{:>7.4}\n",
                "", s.ndcg5, s.ndcg10, s.hr5, s.hr10
            )),
            None => out.push_str(&format!("{:<22} {:>8} {:>8} {:>8} {:>8}\n", "", "n=1", "n=1", "n=1", "n=1")),
        }
        out
    }
}

/// Ablation-style comparison table: one row per variant.
pub fn comparison_table(rows: &[(String, MetricSummary)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>8} {:>8} {:>8} {:>8}\n",
        "Model Variant", "N@5", "N@10", "H@5", "H@10"
    ));
    for (label, m) in rows {
        out.push_str(&format!(
            "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            label, m.ndcg5, m.ndcg10, m.hr5, m.hr10
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout_and_invariants() {
        let runs = vec![
            RunMetrics { seed: 1, hr5: 0.5, hr10: 0.7, ndcg5: 0.3, ndcg10: 0.4, users: 10 },
            RunMetrics { seed: 2, hr5: 0.6, hr10: 0.8, ndcg5: 0.4, ndcg10: 0.5, users: 10 },
        ];
        let report = super::super::aggregate_runs(
            runs,
            EvalProtocol { negatives: 100, split: "test".into(), seeds: vec![1, 2] },
        );
        report.check_invariants().unwrap();
        let t = report.table("model");
        assert!(t.contains("N@5"));
        assert!(t.contains("HR@10"));
        assert!(t.contains('±'));

        let single = super::super::aggregate_runs(
            vec![RunMetrics { seed: 1, hr5: 0.5, hr10: 0.7, ndcg5: 0.3, ndcg10: 0.4, users: 10 }],
            EvalProtocol { negatives: 100, split: "valid".into(), seeds: vec![1] },
        );
        assert!(single.table("model").contains("n=1"));
    }

    #[test]
    fn invariant_violations_are_reported() {
        let bad = EvalReport {
            protocol: EvalProtocol { negatives: 100, split: "test".into(), seeds: vec![1] },
            runs: vec![RunMetrics { seed: 1, hr5: 0.9, hr10: 0.7, ndcg5: 0.3, ndcg10: 0.4, users: 1 }],
            mean: MetricSummary { hr5: 0.9, hr10: 0.7, ndcg5: 0.3, ndcg10: 0.4 },
            std: None,
        };
        assert!(bad.check_invariants().is_err());
    }
}
