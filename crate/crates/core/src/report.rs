//! CSV and JSON emission. Output depends only on the results, never on the
//! clock or the host, so identical runs give byte-identical files.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::engine::{MetricsRecord, ScenarioResult};
use crate::memory::ReplacementEvent;
use crate::partition::ShardAssignment;

pub const METRICS_HEADER: &str =
    "round,variant,rsn_round,rsn_cum,retrain_ratio,energy_j,occupancy,replacements,drops,accuracy";

pub fn metrics_row(m: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{:.6},{:.3},{},{},{},{}",
        m.round,
        m.variant,
        m.rsn_round,
        m.rsn_cum,
        m.retrain_ratio,
        m.energy_j,
        m.occupancy,
        m.replacements,
        m.drops,
        m.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default()
    )
}

pub fn metrics_csv<'a>(records: impl IntoIterator<Item = &'a MetricsRecord>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in records {
        out.push_str(&metrics_row(m));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub capacity_slots: Option<usize>,
    pub rsn_total: u64,
    pub energy_total_j: f64,
    pub retrain_episodes: u64,
    pub replacements: u64,
    pub drops: u64,
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ScenarioConfig,
    pub chunks: usize,
    pub delete_requests: usize,
    pub samples_added: u64,
    pub variants: Vec<VariantSummary>,
}

pub fn summarize(result: &ScenarioResult) -> RunSummary {
    RunSummary {
        config: result.config.clone(),
        chunks: result.chunks,
        delete_requests: result.delete_requests,
        samples_added: result.samples_added,
        variants: result
            .runs
            .iter()
            .map(|r| VariantSummary {
                variant: r.tag.to_string(),
                capacity_slots: r.capacity_slots,
                rsn_total: r.rsn_total(),
                energy_total_j: r.energy_total(),
                retrain_episodes: r.episodes,
                replacements: r.metrics.last().map_or(0, |m| m.replacements),
                drops: r.metrics.last().map_or(0, |m| m.drops),
                final_accuracy: r.final_accuracy(),
            })
            .collect(),
    }
}

pub fn summary_json(result: &ScenarioResult) -> String {
    serde_json::to_string_pretty(&summarize(result)).expect("summary serializes") + "\n"
}

pub fn events_jsonl(events: &[ReplacementEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", e.to_json_line());
    }
    out
}

pub fn assignments_jsonl(assignments: &[ShardAssignment]) -> String {
    let mut out = String::new();
    for a in assignments {
        let _ = writeln!(out, "{}", a.to_json());
    }
    out
}
