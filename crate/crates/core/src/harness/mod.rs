//! Closed-loop simulation: terminal actors perceive risk, pick a budget and
//! release perturbed rows; the edge verifies the releases and feeds weight
//! updates back. Actors talk only through framed messages.

pub mod config;
pub mod report;
pub mod transport;

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blp::BudgetLedger;
use crate::decision::{reward_terms, energy_cost, PrivacyEnv, RewardParams, Td3Agent};
use crate::error::{Error, Result};
use crate::fusion::{
    anp_weights, context_risk, fuse_conservative, resource_risk, AnpWeights, ContextField, GradeScheme,
    PairwiseMatrix, ResourceSnapshot, RiskVector, SensitivityTable,
};
use crate::lightae::{trace_rows, Detector};
use crate::tracegen::sensing::{sensing_fields, SensingRow, SensingSource, SENSING_FIELDS};
use crate::tracegen::{build_dataset, Profile};
use crate::verify::{evaluate_release, feedback_update, release, FeedbackState};

pub use config::{RunConfig, TransportMode};
pub use transport::{decode_frame, encode_frame, Endpoint, Feedback, LinkStats, Message, NoisyRecord, SeqWindow};

/// Channel samples scored per round.
pub const CHANNEL_WINDOW: usize = 20;
/// Index of the light field, the one that reveals occupancy.
const OCCUPANCY_FIELD: usize = 2;

// Synthetic power model: idle draw plus per-operation and per-byte costs.
const IDLE_POWER: f64 = 0.5;
const POWER_PER_MAC: f64 = 1e-8;
const POWER_PER_BYTE: f64 = 1e-5;
const POWER_CEILING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub terminal: u32,
    pub risk: RiskVector,
    pub r_risk: f64,
    pub eps: f64,
    pub privacy_gain: f64,
    pub utility_loss: f64,
    pub energy: f64,
    pub reward: f64,
    pub ledger_total: f64,
    /// True when the edge verified this terminal's window in this round.
    pub verified: bool,
    /// Most recent verification results, carried forward between checks.
    pub mia_auc: Option<f64>,
    pub privacy_strength: Option<f64>,
    pub pia_advantage: Option<f64>,
    pub f1: Option<f64>,
    pub clean_f1: Option<f64>,
    pub relative_utility: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl RoundRecord {
    pub fn is_finite(&self) -> bool {
        let opt = [
            self.mia_auc,
            self.privacy_strength,
            self.pia_advantage,
            self.f1,
            self.clean_f1,
            self.relative_utility,
        ];
        self.risk.as_array().iter().all(|v| v.is_finite())
            && [
                self.r_risk,
                self.eps,
                self.privacy_gain,
                self.utility_loss,
                self.energy,
                self.reward,
                self.ledger_total,
                self.alpha,
                self.beta,
            ]
            .iter()
            .all(|v| v.is_finite())
            && opt.iter().flatten().all(|v| v.is_finite())
    }

    /// Whether the latest known metrics meet both thresholds.
    pub fn meets(&self, state: &FeedbackState) -> bool {
        match (self.privacy_strength, self.relative_utility) {
            (Some(p), Some(u)) => state.privacy_ok(p) && state.utility_ok(u),
            _ => false,
        }
    }
}

/// Wall-clock measurements, kept apart from the deterministic round log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub round: u32,
    pub terminal: u32,
    /// Risk perception, decision and perturbation.
    pub pipeline_us: f64,
    /// Record sent to acknowledgment received.
    pub rtt_us: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub sent: u64,
    pub received: u64,
    pub duplicates: u64,
    pub lost: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub terminals: usize,
    pub rounds: usize,
    pub records: usize,
    pub frames: FrameSummary,
    pub wall_seconds: f64,
    pub records_per_second: f64,
    pub frames_per_second: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RoundRecord>,
    pub timings: Vec<TimingRecord>,
    pub summary: RunSummary,
}

/// Offline-phase outputs the loop needs.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub detector: Arc<Detector>,
    pub agent: Td3Agent,
}

impl Artifacts {
    /// Loads the detector and agent checkpoints named in the config.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let missing = |what: &str| Error::Config(format!("run.{what} checkpoint path is not set"));
        let detector = cfg.run.detector.as_deref().ok_or_else(|| missing("detector"))?;
        let agent = cfg.run.agent.as_deref().ok_or_else(|| missing("agent"))?;
        Ok(Self {
            detector: Arc::new(Detector::load(detector)?),
            agent: Td3Agent::load(agent, cfg.run.seed)?,
        })
    }
}

fn mix(seed: u64, terminal: u32, round: u32, salt: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(17) ^ (u64::from(terminal) << 32) ^ u64::from(round);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Perception {
    weights: AnpWeights,
    scheme: GradeScheme,
    sensitivity: SensitivityTable,
}

impl Perception {
    fn new() -> Result<Self> {
        Ok(Self {
            weights: anp_weights(&PairwiseMatrix::default_risk_matrix())?,
            scheme: GradeScheme::default(),
            sensitivity: SensitivityTable::default(),
        })
    }
}

struct Terminal {
    id: u32,
    cfg: Arc<RunConfig>,
    detector: Arc<Detector>,
    channel: Arc<Array2<f64>>,
    agent: Td3Agent,
    reward: RewardParams,
    source: SensingSource,
    ledger: BudgetLedger,
    perception: Perception,
    last_power: Option<f64>,
    latest: Option<Feedback>,
    link: Endpoint,
}

impl Terminal {
    fn run(mut self) -> Result<(Vec<(RoundRecord, TimingRecord)>, LinkStats)> {
        self.link.send(&Message::Hello { terminal: self.id })?;
        let mut out = Vec::new();
        loop {
            match self.link.recv()? {
                Message::Task { round, .. } => out.push(self.round(round)?),
                Message::Shutdown => return Ok((out, self.link.stats())),
                other => return Err(Error::Protocol(format!("terminal expected a task, got {other:?}"))),
            }
        }
    }

    fn round(&mut self, round: u32) -> Result<(RoundRecord, TimingRecord)> {
        let started = Instant::now();
        let run = &self.cfg.run;
        let first_row = u64::from(round) * run.rows_per_round as u64;
        let rows = self
            .source
            .rows(u64::from(self.id), first_row..first_row + run.rows_per_round as u64);

        let risk = self.perceive(round, &rows)?;
        let composite = fuse_conservative(&risk, &self.perception.weights, &self.perception.scheme)?;
        let (lo, hi) = self.cfg.eps_bounds();
        let eps = self.agent.policy(composite.r_risk).clamp(lo, hi);
        let noisy = release(&rows, eps, mix(run.seed, self.id, round, 0xB1), &mut self.ledger)?;

        let bytes = noisy.len() * SENSING_FIELDS * std::mem::size_of::<f64>();
        let power = IDLE_POWER
            + POWER_PER_MAC * (self.detector.model.macs() * CHANNEL_WINDOW) as f64
            + POWER_PER_BYTE * bytes as f64;
        let previous = self.last_power.replace(power).unwrap_or(power);
        let energy = energy_cost(&[0.0, 1.0], &[previous, power], POWER_CEILING)?;
        let terms = reward_terms(eps, composite.r_risk, &self.reward, energy);
        let pipeline = started.elapsed();

        let sent = Instant::now();
        self.link.send(&Message::Record(NoisyRecord {
            terminal: self.id,
            round,
            eps,
            risk,
            r_risk: composite.r_risk,
            first_row,
            rows: noisy,
        }))?;
        let feedback = match self.link.recv()? {
            Message::Ack { round: r, feedback, .. } if r == round => feedback,
            other => return Err(Error::Protocol(format!("expected ack for round {round}, got {other:?}"))),
        };
        let rtt = sent.elapsed();

        if let Some(fb) = feedback {
            self.latest = Some(fb);
            if fb.alpha != self.reward.alpha || fb.beta != self.reward.beta {
                self.reward.alpha = fb.alpha;
                self.reward.beta = fb.beta;
                if run.fine_tune_steps > 0 {
                    let env = PrivacyEnv::new(self.reward, self.cfg.transition_params());
                    self.agent.fine_tune(&env, run.fine_tune_steps)?;
                }
            }
        }
        let latest = self.latest;
        let record = RoundRecord {
            round,
            terminal: self.id,
            risk,
            r_risk: composite.r_risk,
            eps,
            privacy_gain: terms.privacy_gain,
            utility_loss: terms.utility_loss,
            energy,
            reward: terms.total,
            ledger_total: self.ledger.total(),
            verified: feedback.is_some(),
            mia_auc: latest.map(|f| f.mia_auc),
            privacy_strength: latest.map(|f| f.privacy_strength),
            pia_advantage: latest.map(|f| f.pia_advantage),
            f1: latest.map(|f| f.f1),
            clean_f1: latest.map(|f| f.clean_f1),
            relative_utility: latest.map(|f| f.relative_utility),
            alpha: self.reward.alpha,
            beta: self.reward.beta,
        };
        if !record.is_finite() {
            return Err(Error::Validation(format!("non-finite round record {record:?}")));
        }
        let timing = TimingRecord {
            round,
            terminal: self.id,
            pipeline_us: pipeline.as_secs_f64() * 1e6,
            rtt_us: rtt.as_secs_f64() * 1e6,
        };
        Ok((record, timing))
    }

    fn perceive(&self, round: u32, rows: &[SensingRow]) -> Result<RiskVector> {
        let n = self.channel.nrows();
        let span = n.saturating_sub(CHANNEL_WINDOW).max(1);
        let start = (self.id as usize * 997 + round as usize * CHANNEL_WINDOW) % span;
        let window = self.channel.slice(s![start..(start + CHANNEL_WINDOW).min(n), ..]).to_owned();
        let channel = self.detector.channel_risk(&window)?;

        let kinds: Vec<_> = sensing_fields().iter().map(|f| f.kind).collect();
        let sensitivity = self.perception.sensitivity.semantic_risk(&kinds);
        let fields: Vec<ContextField> = (0..SENSING_FIELDS)
            .map(|k| ContextField {
                sensitive: k == OCCUPANCY_FIELD,
                samples: rows.iter().map(|r| r.values[k]).collect(),
            })
            .collect();
        let context = context_risk(&fields)?;

        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.run.seed, self.id, round, 0x2E5));
        let resource = resource_risk(&ResourceSnapshot {
            mem_usage: rng.random_range(0.35..0.75),
            cpu_usage: rng.random_range(0.25..0.85),
            mem_normal: 0.5,
            cpu_normal: 0.4,
            mem_max: 0.95,
            cpu_max: 0.95,
        })?;
        RiskVector::new(channel, sensitivity, context, resource)
    }
}

/// Edge-side state for one terminal.
struct EdgeSession {
    link: Endpoint,
    feedback: FeedbackState,
    window: VecDeque<(u64, [f64; SENSING_FIELDS])>,
}

struct Edge {
    cfg: Arc<RunConfig>,
    source: SensingSource,
    sessions: Vec<EdgeSession>,
}

impl Edge {
    fn handle(&mut self, terminal: u32, record: NoisyRecord) -> Result<Message> {
        let run = &self.cfg.run;
        let session = &mut self.sessions[terminal as usize];
        if record.terminal != terminal {
            return Err(Error::Protocol(format!(
                "record from terminal {} arrived on session {terminal}",
                record.terminal
            )));
        }
        for (i, row) in record.rows.iter().enumerate() {
            session.window.push_back((record.first_row + i as u64, *row));
        }
        while session.window.len() > run.verify_window {
            session.window.pop_front();
        }
        let due = (record.round as usize + 1) % run.verify_cadence == 0;
        let feedback = if due && session.window.len() >= crate::verify::MIN_UTILITY_ROWS {
            let clean: Vec<SensingRow> = session
                .window
                .iter()
                .map(|(idx, _)| self.source.row(u64::from(terminal), *idx))
                .collect();
            let noisy: Vec<[f64; SENSING_FIELDS]> = session.window.iter().map(|(_, r)| *r).collect();
            let m = evaluate_release(&clean, &noisy, mix(run.seed, terminal, record.round, 0xED6E))?;
            let relative = m.relative_utility();
            session.feedback = feedback_update(&session.feedback, m.privacy_strength, relative);
            log::debug!(
                "terminal {terminal} round {}: strength {:.3}, utility {:.3}, alpha {:.3}, beta {:.3}",
                record.round,
                m.privacy_strength,
                relative,
                session.feedback.alpha,
                session.feedback.beta
            );
            Some(Feedback {
                alpha: session.feedback.alpha,
                beta: session.feedback.beta,
                mia_auc: m.mia_auc,
                privacy_strength: m.privacy_strength,
                pia_advantage: m.pia.advantage(),
                f1: m.utility.f1,
                clean_f1: m.utility.clean_f1.unwrap_or(0.0),
                relative_utility: relative,
            })
        } else {
            None
        };
        Ok(Message::Ack {
            terminal,
            round: record.round,
            feedback,
        })
    }
}

fn connect(cfg: &RunConfig) -> Result<(Vec<Endpoint>, Vec<Endpoint>)> {
    let timeout = Duration::from_millis(cfg.run.timeout_ms);
    let n = cfg.run.terminals;
    match cfg.run.transport {
        TransportMode::InProcess => Ok((0..n).map(|_| Endpoint::pair(timeout)).unzip()),
        TransportMode::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let dialer = thread::spawn(move || -> Result<Vec<TcpStream>> {
                (0..n).map(|_| Ok(TcpStream::connect(addr)?)).collect()
            });
            let mut edge = Vec::with_capacity(n);
            for _ in 0..n {
                edge.push(Endpoint::from_stream(listener.accept()?.0, timeout)?);
            }
            let terminals = dialer
                .join()
                .map_err(|_| Error::Transport {
                    attempts: 1,
                    reason: "connect thread panicked".into(),
                })??
                .into_iter()
                .map(|s| Endpoint::from_stream(s, timeout))
                .collect::<Result<Vec<_>>>()?;
            Ok((edge, terminals))
        }
    }
}

/// Channel trace the terminals score, shared read-only.
pub fn channel_trace(seed: u64) -> Result<Array2<f64>> {
    let (_, test) = build_dataset(Profile::Fd, seed)?;
    Ok(trace_rows(&test))
}

/// Runs the closed loop and returns the records sorted by round, then terminal.
pub fn run_loop(cfg: &RunConfig, artifacts: &Artifacts) -> Result<RunLog> {
    cfg.validate()?;
    let cfg = Arc::new(cfg.clone());
    let run = &cfg.run;
    let channel = Arc::new(channel_trace(run.seed)?);
    let source = SensingSource::new(run.seed);
    let mut reward = cfg.reward_params();
    reward.eps_min = artifacts.agent.bounds.eps_min;
    reward.eps_max = artifacts.agent.bounds.eps_max;

    let started = Instant::now();
    let (edge_links, terminal_links) = connect(&cfg)?;
    let mut handles = Vec::with_capacity(run.terminals);
    for (id, link) in terminal_links.into_iter().enumerate() {
        let terminal = Terminal {
            id: id as u32,
            cfg: Arc::clone(&cfg),
            detector: Arc::clone(&artifacts.detector),
            channel: Arc::clone(&channel),
            agent: artifacts.agent.clone(),
            reward,
            source,
            ledger: BudgetLedger::new(),
            perception: Perception::new()?,
            last_power: None,
            latest: None,
            link,
        };
        handles.push(
            thread::Builder::new()
                .name(format!("terminal-{id}"))
                .spawn(move || terminal.run())?,
        );
    }

    // Sessions are indexed by the id each terminal announces.
    let mut slots: Vec<Option<EdgeSession>> = (0..run.terminals).map(|_| None).collect();
    for mut link in edge_links {
        match link.recv()? {
            Message::Hello { terminal } if (terminal as usize) < slots.len() && slots[terminal as usize].is_none() => {
                slots[terminal as usize] = Some(EdgeSession {
                    link,
                    feedback: cfg.feedback_state(),
                    window: VecDeque::new(),
                });
            }
            other => return Err(Error::Protocol(format!("expected a unique hello, got {other:?}"))),
        }
    }
    let mut edge = Edge {
        cfg: Arc::clone(&cfg),
        source,
        sessions: slots.into_iter().map(|s| s.expect("every terminal said hello")).collect(),
    };

    for round in 0..run.rounds as u32 {
        for (t, session) in edge.sessions.iter_mut().enumerate() {
            session.link.send(&Message::Task {
                terminal: t as u32,
                round,
            })?;
        }
        for t in 0..edge.sessions.len() {
            let reply = match edge.sessions[t].link.recv()? {
                Message::Record(record) => edge.handle(t as u32, record)?,
                other => return Err(Error::Protocol(format!("edge expected a record, got {other:?}"))),
            };
            edge.sessions[t].link.send(&reply)?;
        }
    }
    for session in &mut edge.sessions {
        session.link.send(&Message::Shutdown)?;
    }

    let mut log = RunLog::default();
    let mut frames = FrameSummary::default();
    for (id, handle) in handles.into_iter().enumerate() {
        let (rows, stats) = handle.join().map_err(|_| Error::Transport {
            attempts: 1,
            reason: format!("terminal {id} panicked"),
        })??;
        for (record, timing) in rows {
            log.records.push(record);
            log.timings.push(timing);
        }
        frames.sent += stats.sent;
        frames.received += stats.received;
        frames.duplicates += stats.duplicates;
    }
    for session in &edge.sessions {
        let stats = session.link.stats();
        frames.sent += stats.sent;
        frames.received += stats.received;
        frames.duplicates += stats.duplicates;
    }
    frames.lost = frames.sent.saturating_sub(frames.received + frames.duplicates);
    let wall = started.elapsed().as_secs_f64();

    log.records.sort_by_key(|r| (r.round, r.terminal));
    log.timings.sort_by_key(|r| (r.round, r.terminal));
    log.summary = RunSummary {
        terminals: run.terminals,
        rounds: run.rounds,
        records: log.records.len(),
        frames,
        wall_seconds: wall,
        records_per_second: log.records.len() as f64 / wall.max(1e-9),
        frames_per_second: frames.received as f64 / wall.max(1e-9),
    };
    log::info!(
        "{} records from {} terminals in {:.2}s, {} frames lost",
        log.records.len(),
        run.terminals,
        wall,
        frames.lost
    );
    Ok(log)
}

pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "run_summary.json";

/// Writes the round log (deterministic), timings and run summary into `dir`.
pub fn write_run(log: &RunLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(ROUNDS_FILE))?);
    for record in &log.records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let mut csv = csv::Writer::from_path(dir.join(TIMINGS_FILE))?;
    if log.timings.is_empty() {
        csv.write_record(["round", "terminal", "pipeline_us", "rtt_us"])?;
    }
    for t in &log.timings {
        csv.serialize(t)?;
    }
    csv.flush()?;
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&log.summary)?)?;
    Ok(())
}

/// Reads back what [`write_run`] produced; absent files read as empty.
pub fn read_run(dir: &Path) -> Result<RunLog> {
    let mut log = RunLog::default();
    let rounds = dir.join(ROUNDS_FILE);
    if rounds.exists() {
        for line in BufReader::new(File::open(rounds)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                log.records.push(serde_json::from_str(&line)?);
            }
        }
    }
    let timings = dir.join(TIMINGS_FILE);
    if timings.exists() {
        for row in csv::Reader::from_path(timings)?.deserialize() {
            log.timings.push(row?);
        }
    }
    let summary = dir.join(SUMMARY_FILE);
    if summary.exists() {
        log.summary = serde_json::from_slice(&std::fs::read(summary)?)?;
    }
    Ok(log)
}
