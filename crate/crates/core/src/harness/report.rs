//! Metrics aggregation and report files: per-episode JSONL, a summary
//! JSON, and a plain-text table.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, HarnessError};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub episodes: u32,
    pub successes: u32,
    pub success_rate: f64,
    /// Binomial standard error of the success rate.
    pub success_se: f64,
    pub mean_steps: f64,
    /// Reflection invocations per decision.
    pub reflection_rate: f64,
    /// Revisions per decision.
    pub revision_rate: f64,
    /// Fraction of proposals matching the expert action.
    pub proposal_optimal_fraction: f64,
    pub revised_count: u64,
    /// Mean oracle one-step advantage of revised proposals.
    pub mean_revised_advantage: f64,
    pub mean_forward_passes: f64,
    pub mean_decision_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub v: u32,
    pub episodes: usize,
    pub modes: Vec<ModeSummary>,
}

/// Aggregate per-mode statistics, preserving first-appearance order.
pub fn summarize(episodes: &[EpisodeRecord]) -> Summary {
    let mut order: Vec<String> = Vec::new();
    for e in episodes {
        if !order.contains(&e.mode) {
            order.push(e.mode.clone());
        }
    }
    let modes = order
        .into_iter()
        .map(|mode| {
            let rows: Vec<&EpisodeRecord> =
                episodes.iter().filter(|e| e.mode == mode).collect();
            let n = rows.len() as f64;
            let successes = rows.iter().filter(|e| e.success).count() as u32;
            let p = f64::from(successes) / n;
            let decisions: u64 = rows.iter().map(|e| u64::from(e.steps)).sum();
            let reflections: u64 = rows.iter().map(|e| u64::from(e.reflections)).sum();
            let revisions: u64 = rows.iter().map(|e| u64::from(e.revisions)).sum();
            let optimal: u64 = rows.iter().map(|e| u64::from(e.proposal_optimal)).sum();
            let advantages: Vec<i64> = rows
                .iter()
                .flat_map(|e| e.revised_advantages.iter().copied())
                .collect();
            let wall_ms: f64 = rows.iter().map(|e| e.wall_clock_ms).sum();
            ModeSummary {
                mode,
                episodes: rows.len() as u32,
                successes,
                success_rate: p,
                success_se: (p * (1.0 - p) / n).sqrt(),
                mean_steps: decisions as f64 / n,
                reflection_rate: reflections as f64 / decisions.max(1) as f64,
                revision_rate: revisions as f64 / decisions.max(1) as f64,
                proposal_optimal_fraction: optimal as f64 / decisions.max(1) as f64,
                revised_count: advantages.len() as u64,
                mean_revised_advantage: if advantages.is_empty() {
                    0.0
                } else {
                    advantages.iter().sum::<i64>() as f64 / advantages.len() as f64
                },
                mean_forward_passes: rows.iter().map(|e| e.forward_passes as f64).sum::<f64>()
                    / n,
                mean_decision_ms: wall_ms / decisions.max(1) as f64,
            }
        })
        .collect();
    Summary {
        v: 1,
        episodes: episodes.len(),
        modes,
    }
}

pub fn write_episodes_jsonl(path: &Path, episodes: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in episodes {
        serde_json::to_writer(&mut file, e)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_episodes_jsonl(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut episodes = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(serde_json::from_str(line)?);
    }
    Ok(episodes)
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<(), HarnessError> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

pub fn render_table(summary: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>5} {:>9} {:>7} {:>6} {:>8} {:>8} {:>8} {:>9} {:>8} {:>9}\n",
        "mode",
        "n",
        "success",
        "se",
        "steps",
        "reflect",
        "revise",
        "propopt",
        "rev-adv",
        "fwd/ep",
        "ms/step"
    ));
    for m in &summary.modes {
        out.push_str(&format!(
            "{:<24} {:>5} {:>8.1}% {:>6.1}% {:>6.1} {:>7.1}% {:>7.1}% {:>7.1}% {:>9.2} {:>8.0} {:>9.3}\n",
            m.mode,
            m.episodes,
            m.success_rate * 100.0,
            m.success_se * 100.0,
            m.mean_steps,
            m.reflection_rate * 100.0,
            m.revision_rate * 100.0,
            m.proposal_optimal_fraction * 100.0,
            m.mean_revised_advantage,
            m.mean_forward_passes,
            m.mean_decision_ms
        ));
    }
    out
}

pub fn write_table(path: &Path, summary: &Summary) -> Result<(), HarnessError> {
    std::fs::write(path, render_table(summary))?;
    Ok(())
}

/// Write all three report files into `dir`.
pub fn write_reports(dir: &Path, episodes: &[EpisodeRecord]) -> Result<Summary, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(episodes);
    write_episodes_jsonl(&dir.join("episodes.jsonl"), episodes)?;
    write_summary_json(&dir.join("summary.json"), &summary)?;
    write_table(&dir.join("table.txt"), &summary)?;
    Ok(summary)
}
