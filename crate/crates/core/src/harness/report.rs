//! Plot-ready CSV tables and a short text summary of a run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunLog, TimingRecord};
use crate::decision::{Td3Agent, TrainingCurve};
use crate::error::Result;
use crate::stats;
use crate::verify::TradeoffPoint;

pub const ROUND_METRICS_FILE: &str = "round_metrics.csv";
pub const LATENCY_FILE: &str = "latency_summary.csv";
pub const POLICY_GRID_FILE: &str = "policy_grid.csv";
pub const TRAINING_CURVE_FILE: &str = "training_curve.csv";
pub const TRADEOFF_FILE: &str = "eps_tradeoff.csv";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub records: usize,
    pub rtt_p50_us: f64,
    pub rtt_p99_us: f64,
    pub pipeline_p50_us: f64,
    pub pipeline_p99_us: f64,
    pub records_per_second: f64,
    pub frames_per_second: f64,
    pub lost_frames: u64,
}

pub fn latency_summary(log: &RunLog) -> LatencySummary {
    let pick = |f: fn(&TimingRecord) -> f64| log.timings.iter().map(f).collect::<Vec<_>>();
    let q = |xs: &[f64], p: f64| if xs.is_empty() { 0.0 } else { stats::quantile(xs, p) };
    let rtt = pick(|t| t.rtt_us);
    let pipe = pick(|t| t.pipeline_us);
    LatencySummary {
        records: log.timings.len(),
        rtt_p50_us: q(&rtt, 0.5),
        rtt_p99_us: q(&rtt, 0.99),
        pipeline_p50_us: q(&pipe, 0.5),
        pipeline_p99_us: q(&pipe, 0.99),
        records_per_second: log.summary.records_per_second,
        frames_per_second: log.summary.frames_per_second,
        lost_frames: log.summary.frames.lost,
    }
}

#[derive(Debug, Serialize)]
struct MetricRow {
    round: u32,
    terminal: u32,
    r_risk: f64,
    eps: f64,
    reward: f64,
    ledger_total: f64,
    alpha: f64,
    beta: f64,
    privacy_strength: Option<f64>,
    relative_utility: Option<f64>,
}

const METRIC_HEADER: [&str; 10] = [
    "round",
    "terminal",
    "r_risk",
    "eps",
    "reward",
    "ledger_total",
    "alpha",
    "beta",
    "privacy_strength",
    "relative_utility",
];

/// Writes the per-round table, latency table and text summary; returns the text.
pub fn report(log: &RunLog, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(ROUND_METRICS_FILE))?;
    w.write_record(METRIC_HEADER)?;
    for r in &log.records {
        w.serialize(MetricRow {
            round: r.round,
            terminal: r.terminal,
            r_risk: r.r_risk,
            eps: r.eps,
            reward: r.reward,
            ledger_total: r.ledger_total,
            alpha: r.alpha,
            beta: r.beta,
            privacy_strength: r.privacy_strength,
            relative_utility: r.relative_utility,
        })?;
    }
    w.flush()?;

    let lat = latency_summary(log);
    let mut w = csv::Writer::from_path(dir.join(LATENCY_FILE))?;
    w.serialize(lat)?;
    w.flush()?;

    let mut text = String::new();
    let _ = writeln!(text, "records: {}", log.records.len());
    if !log.records.is_empty() {
        let eps: Vec<f64> = log.records.iter().map(|r| r.eps).collect();
        let last = log.records.last().expect("nonempty");
        let _ = writeln!(text, "mean eps: {:.4}", stats::mean(&eps));
        let _ = writeln!(text, "final alpha {:.4}, beta {:.4}", last.alpha, last.beta);
        let verified = log.records.iter().filter(|r| r.verified).count();
        let _ = writeln!(text, "verifications: {verified}");
    }
    let _ = writeln!(
        text,
        "rtt p50 {:.1} us, p99 {:.1} us; {:.1} records/s; {} frames lost",
        lat.rtt_p50_us, lat.rtt_p99_us, lat.records_per_second, lat.lost_frames
    );
    std::fs::write(dir.join(SUMMARY_TEXT_FILE), &text)?;
    Ok(text)
}

/// Policy outputs on an even grid. Values use the shortest representation
/// that parses back to the same `f64`, so the file is an exact dump.
pub fn write_policy_grid(agent: &Td3Agent, points: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["s", "eps"])?;
    for (s, eps) in agent.policy_grid(points) {
        w.write_record([s.to_string(), eps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_policy_grid(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_training_curve(curve: &TrainingCurve, path: &Path) -> Result<()> {
    curve.write_csv(std::fs::File::create(path)?)
}

pub fn write_tradeoff(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if points.is_empty() {
        w.write_record(TradeoffPoint::HEADER)?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
