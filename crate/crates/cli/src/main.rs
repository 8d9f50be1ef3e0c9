use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use privloop_core::blp::BudgetLedger;
use privloop_core::decision::{PrivacyEnv, Td3Agent};
use privloop_core::harness::{self, report, Artifacts, RunConfig};
use privloop_core::lightae::{
    channel_splits, distill_descendants, profile_blocks, select_blocks, train_teacher, BlockLibrary, Detector,
};
use privloop_core::tracegen::{build_dataset, diurnal_series, sensing_domains, Profile, SensingData, SensingSource};
use privloop_core::verify::{
    self, default_denoisers, evaluate_release, reconstruction_attack, AttackKind, AttackReport,
};

/// Risk-adaptive local privacy loop: data generation, offline training and
/// the closed-loop simulation.
#[derive(Parser)]
#[command(name = "privloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, u64)> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let seed = self.seed.unwrap_or(cfg.run.seed);
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok((cfg, seed))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Fd,
    Sd,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Fd => Profile::Fd,
            ProfileArg::Sd => Profile::Sd,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write channel traces (clean train, injected test) and a sensing table.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fd")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 2000)]
        sensing_rows: usize,
    },
    /// Train the teacher autoencoder and save a calibrated detector.
    TrainAe {
        #[command(flatten)]
        common: Common,
    },
    /// Build the block library of distilled low-rank descendants.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher detector; defaults to OUT/teacher.laem.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Measure memory, latency and accuracy loss of every library variant.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        passes: usize,
    },
    /// Pick one variant per block under the configured reduction targets.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        library: Option<PathBuf>,
        /// Latency reduction target in percent; overrides the config.
        #[arg(long)]
        latency: Option<f64>,
        /// Memory reduction target in percent; overrides the config.
        #[arg(long)]
        resource: Option<f64>,
    },
    /// Train the budget policy and dump its curve and state grid.
    TrainAgent {
        #[command(flatten)]
        common: Common,
    },
    /// Run the closed loop between simulated terminals and the edge.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Attack a release of the sensing task at one budget.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: AttackKind,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 400)]
        rows: u64,
    },
    /// Summarize a run directory into CSV tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory written by `run`; defaults to OUT.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Also dump this agent's policy grid.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Also sweep the attack/utility trade-off over budgets 1..=5.
        #[arg(long)]
        tradeoff: bool,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { common, profile, sensing_rows } => gen_data(&common, profile.into(), sensing_rows),
        Command::TrainAe { common } => train_ae(&common),
        Command::Distill { common, teacher } => distill(&common, teacher),
        Command::Profile { common, library, passes } => profile(&common, library, passes),
        Command::Select { common, library, latency, resource } => select(&common, library, latency, resource),
        Command::TrainAgent { common } => train_agent(&common),
        Command::Run { common, detector, agent } => run(&common, detector, agent),
        Command::Attack { common, kind, eps, rows } => attack(&common, kind, eps, rows),
        Command::Report { common, run, agent, tradeoff, seeds } => report_cmd(&common, run, agent, tradeoff, seeds),
    }
}

fn gen_data(common: &Common, profile: Profile, sensing_rows: usize) -> Result<()> {
    let (_, seed) = common.load()?;
    let (train, test) = build_dataset(profile, seed)?;
    train.save_csv(&common.out.join("channel_train.csv"))?;
    test.save_csv(&common.out.join("channel_test.csv"))?;
    SensingData::generate(sensing_rows, seed).write_csv(File::create(common.out.join("sensing.csv"))?)?;
    log::info!(
        "wrote {} train, {} test channel samples and {sensing_rows} sensing rows to {}",
        train.len(),
        test.len(),
        common.out.display()
    );
    Ok(())
}

fn train_ae(common: &Common) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let splits = channel_splits(Profile::Fd, seed)?;
    let trained = train_teacher(&splits.train, &cfg.teacher_config(), seed)?;
    let detector = Detector::fit(trained.model, &splits.validation)?;
    let f1 = detector.f1(&splits.test)?;
    detector.save(&common.out.join("teacher.laem"))?;
    println!("teacher F1 on injected test trace: {f1:.4}");
    Ok(())
}

fn path_or(out: &Path, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| out.join(name))
}

fn distill(common: &Common, teacher: Option<PathBuf>) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let teacher = Detector::load(&path_or(&common.out, teacher, "teacher.laem"))?;
    let splits = channel_splits(Profile::Fd, seed)?;
    let library = distill_descendants(
        &teacher.model,
        &splits.train,
        &cfg.lightae.variant_fractions,
        &cfg.teacher_config(),
        seed,
    )?;
    library.save(&common.out.join("library.lael"))?;
    let sizes: Vec<usize> = library.blocks.iter().map(Vec::len).collect();
    println!("variants per block: {sizes:?}");
    Ok(())
}

fn profile(common: &Common, library: Option<PathBuf>, passes: usize) -> Result<()> {
    let (_, seed) = common.load()?;
    let path = path_or(&common.out, library, "library.lael");
    let mut lib = BlockLibrary::load(&path)?;
    let splits = channel_splits(Profile::Fd, seed)?;
    profile_blocks(&mut lib, &splits.validation, &splits.calibration, passes)?;
    lib.save(&path)?;
    for (i, block) in lib.profiles()?.iter().enumerate() {
        for (j, p) in block.iter().enumerate() {
            println!(
                "block {i} variant {j}: {:.0} B, {:.2} us, loss {:.3}",
                p.memory_bytes, p.latency_us, p.accuracy_loss
            );
        }
    }
    Ok(())
}

fn select(common: &Common, library: Option<PathBuf>, latency: Option<f64>, resource: Option<f64>) -> Result<()> {
    let (mut cfg, seed) = common.load()?;
    if let Some(p) = latency {
        cfg.lightae.latency_reduction_pct = p;
    }
    if let Some(p) = resource {
        cfg.lightae.resource_reduction_pct = p;
    }
    let lib = BlockLibrary::load(&path_or(&common.out, library, "library.lael"))?;
    let plan = select_blocks(&lib, &cfg.constraints()?)?;
    let splits = channel_splits(Profile::Fd, seed)?;
    let detector = Detector::fit(lib.assemble(&plan.choices)?, &splits.validation)?;
    let f1 = detector.f1(&splits.test)?;
    detector.save(&common.out.join("detector.laem"))?;
    fs::write(common.out.join("plan.json"), serde_json::to_vec_pretty(&plan)?)?;
    println!(
        "plan {:?}: {:.0} B, {:.2} us, F1 {f1:.4}{}",
        plan.choices,
        plan.memory_bytes,
        plan.latency_us,
        if plan.exact { "" } else { " (heuristic)" }
    );
    Ok(())
}

fn train_agent(common: &Common) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let env = PrivacyEnv::new(cfg.reward_params(), cfg.transition_params());
    let (agent, curve) = Td3Agent::train(cfg.td3_config(), &env, seed)?;
    agent.save(&common.out.join("agent.td3c"))?;
    report::write_training_curve(&curve, &common.out.join(report::TRAINING_CURVE_FILE))?;
    report::write_policy_grid(&agent, 11, &common.out.join(report::POLICY_GRID_FILE))?;
    for (s, eps) in agent.policy_grid(11) {
        println!("s {s:.1} -> eps {eps:.4}");
    }
    Ok(())
}

fn run(common: &Common, detector: Option<PathBuf>, agent: Option<PathBuf>) -> Result<()> {
    let (mut cfg, seed) = common.load()?;
    cfg.run.seed = seed;
    cfg.run.detector = Some(detector.or(cfg.run.detector.take()).unwrap_or_else(|| common.out.join("detector.laem")));
    cfg.run.agent = Some(agent.or(cfg.run.agent.take()).unwrap_or_else(|| common.out.join("agent.td3c")));
    let artifacts = Artifacts::load(&cfg).context("loading offline checkpoints (run train-ae/select and train-agent first)")?;
    let log = harness::run_loop(&cfg, &artifacts)?;
    harness::write_run(&log, &common.out)?;
    print!("{}", report::report(&log, &common.out)?);
    Ok(())
}

fn attack(common: &Common, kind: AttackKind, eps: f64, rows: u64) -> Result<()> {
    let (_, seed) = common.load()?;
    let metric = match kind {
        AttackKind::Mia | AttackKind::Pia => {
            let clean = SensingSource::new(seed).rows(0, 0..rows);
            let noisy = verify::release(&clean, eps, seed ^ 0x7E1E, &mut BudgetLedger::new())?;
            let m = evaluate_release(&clean, &noisy, seed)?;
            if matches!(kind, AttackKind::Mia) {
                m.mia_auc
            } else {
                m.pia.advantage()
            }
        }
        AttackKind::Recon => {
            let series = diurnal_series(verify::SWEEP_SERIES_LEN, seed);
            let domain = sensing_domains()[0];
            let released = verify::release_series(&series, &domain, eps, seed)?;
            let mut best = f64::INFINITY;
            for d in default_denoisers() {
                best = best.min(reconstruction_attack(&released, &series, &d)?);
            }
            best
        }
    };
    let report = AttackReport {
        kind,
        metric,
        epsilon: eps,
        dataset: format!("sensing-seed{seed}"),
    };
    let line = serde_json::to_string(&report)?;
    let mut f = OpenOptions::new().create(true).append(true).open(common.out.join("attacks.jsonl"))?;
    writeln!(f, "{line}")?;
    println!("{line}");
    Ok(())
}

fn report_cmd(common: &Common, run_dir: Option<PathBuf>, agent: Option<PathBuf>, tradeoff: bool, seeds: u64) -> Result<()> {
    let (_, seed) = common.load()?;
    let dir = run_dir.unwrap_or_else(|| common.out.clone());
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let log = harness::read_run(&dir)?;
    print!("{}", report::report(&log, &common.out)?);
    if let Some(agent) = agent {
        let agent = Td3Agent::load(&agent, seed)?;
        report::write_policy_grid(&agent, 11, &common.out.join(report::POLICY_GRID_FILE))?;
    }
    if tradeoff {
        let points = verify::tradeoff_curve(&[1.0, 2.0, 3.0, 4.0, 5.0], seed..seed + seeds)?;
        report::write_tradeoff(&points, &common.out.join(report::TRADEOFF_FILE))?;
    }
    Ok(())
}
