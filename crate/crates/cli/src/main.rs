//! Command-line front end: run the protocols, emit trace and audit files,
//! and check recorded traces against the consistency criteria.

use anyhow::{bail, Context, Result};
use btlab::blocktree::PayloadRule;
use btlab::checker::{self, CheckParams, Outcome};
use btlab::history::History;
use btlab::protocol::Behavior;
use btlab::reduction::{self, PruneMode};
use btlab::sim::{AdversaryPolicy, NetConfig, ProtocolSpec, RunArtifacts, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "btlab",
    about = "Blocktree finality laboratory: adversarial runs and consistency checking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Fifo,
    RandomDelay,
    TargetedRace,
}

impl From<PolicyArg> for AdversaryPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Fifo => AdversaryPolicy::Fifo,
            PolicyArg::RandomDelay => AdversaryPolicy::RandomDelay,
            PolicyArg::TargetedRace => AdversaryPolicy::TargetedRace,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    /// Load the full scenario from a JSON file instead of flags.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Byzantine assignment, e.g. "2=double-vote,3=silent".
    #[arg(long, default_value = "")]
    byzantine: String,
    #[arg(long, default_value_t = 0)]
    gst: u64,
    #[arg(long, default_value_t = 5)]
    delta: u64,
    #[arg(long, default_value_t = 5000)]
    horizon: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::RandomDelay)]
    adversary: PolicyArg,
    /// Output trace path (JSON lines).
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    /// Output oracle audit log path, for oracle-backed protocols.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the asynchronous appender protocol.
    RunEp {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 50)]
        appends_per_process: u32,
        #[arg(long, default_value_t = 40)]
        append_every: u64,
        #[arg(long, default_value_t = 25)]
        read_every: u64,
    },
    /// Run the scripted longest-chain race.
    RunCounterexample {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 5)]
        rounds: u32,
        /// Per-phase branch-length targets (comma separated).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<u64>,
    },
    /// Run the majority-notarization protocol.
    RunStreamlet {
        #[command(flatten)]
        net: NetArgs,
        /// Use the original two-thirds notarization threshold.
        #[arg(long)]
        original_threshold: bool,
        /// Drive repeated-proposal instances up to this index.
        #[arg(long)]
        ec: Option<u32>,
    },
    /// Check a recorded trace against every consistency criterion.
    Check {
        /// Input trace file.
        trace: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        window: f64,
        #[arg(long, default_value_t = 0.5)]
        cut_fraction: f64,
        /// Also check tree growth at each of these thresholds.
        #[arg(long, value_delimiter = ',')]
        k_sweep: Vec<u64>,
        /// Prune this many trailing blocks off every read before checking.
        #[arg(long, conflicts_with = "prune_half")]
        prune_dis: Option<usize>,
        /// Keep only the first half of every read before checking.
        #[arg(long)]
        prune_half: bool,
        /// Derive repeated-proposal decisions up to this instance and
        /// report the smallest agreement index.
        #[arg(long)]
        ec: Option<u32>,
        /// Verify an oracle audit log alongside the trace.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Emit the JSON report to this path as well.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_byzantine(spec: &str) -> Result<BTreeMap<u32, Behavior>> {
    let mut map = BTreeMap::new();
    for part in spec.split(',').filter(|s| !s.is_empty()) {
        let (pid, tag) = part
            .split_once('=')
            .with_context(|| format!("expected pid=behavior, got {part}"))?;
        let pid: u32 = pid.trim().parse()?;
        let behavior: Behavior =
            serde_json::from_value(serde_json::Value::String(tag.trim().to_string()))
                .with_context(|| format!("unknown behavior {tag}"))?;
        map.insert(pid, behavior);
    }
    Ok(map)
}

fn net_config(args: &NetArgs) -> Result<NetConfig> {
    Ok(NetConfig {
        n: args.n,
        byzantine: parse_byzantine(&args.byzantine)?,
        gst: args.gst,
        delta: args.delta,
        horizon: args.horizon,
        seed: args.seed,
        adversary: args.adversary.into(),
        payload_rule: PayloadRule::AcceptAll,
    })
}

fn load_or_build_scenario(args: &NetArgs, protocol: ProtocolSpec) -> Result<Scenario> {
    match &args.scenario {
        Some(path) => {
            let file = File::open(path)
                .with_context(|| format!("opening scenario {}", path.display()))?;
            Ok(serde_json::from_reader(BufReader::new(file))?)
        }
        None => Ok(Scenario {
            config: net_config(args)?,
            protocol,
        }),
    }
}

fn write_artifacts(args: &NetArgs, artifacts: &RunArtifacts) -> Result<()> {
    let file = File::create(&args.trace)
        .with_context(|| format!("creating {}", args.trace.display()))?;
    artifacts.history.write_jsonl(BufWriter::new(file))?;
    println!(
        "trace: {} ({} events, {} reads)",
        args.trace.display(),
        artifacts.history.len(),
        artifacts.history.reads_in_program_order(None).len()
    );
    if let Some(audit_path) = &args.audit {
        let file = File::create(audit_path)
            .with_context(|| format!("creating {}", audit_path.display()))?;
        let mut w = BufWriter::new(file);
        for rec in &artifacts.audit {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        println!(
            "audit: {} ({} records)",
            audit_path.display(),
            artifacts.audit.len()
        );
    }
    Ok(())
}

fn outcome_mark(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
        Outcome::Inconclusive => "INCONCLUSIVE",
        Outcome::Measured => "MEASURED",
    }
}

#[allow(clippy::too_many_arguments)]
fn check_trace(
    trace: &Path,
    window: f64,
    cut_fraction: f64,
    k_sweep: &[u64],
    prune: Option<PruneMode>,
    ec: Option<u32>,
    audit: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<bool> {
    let file = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let mut history = History::read_jsonl(BufReader::new(file))?;
    if let Some(mode) = prune {
        history = reduction::prune_history(&history, mode);
    }
    if !(window > 0.0 && window < 1.0) {
        bail!("window must be in (0, 1)");
    }
    let params = CheckParams {
        window,
        cut_fraction,
    };
    let mut report = checker::check_all(&history, &params);

    if let Some(max_instance) = ec {
        let decisions = reduction::ec_decisions(&history, max_instance);
        report.metrics.smallest_k_ec =
            reduction::smallest_agreement_instance(&decisions).map(|k| k as usize);
        let decided: usize = decisions.values().map(Vec::len).sum();
        println!(
            "instances: {} decisions across {} processes, agreement from {:?}",
            decided,
            decisions.len(),
            report.metrics.smallest_k_ec
        );
    }

    println!("{:<26} {:<13} detail", "criterion", "verdict");
    for v in &report.verdicts {
        println!(
            "{:<26} {:<13} {}",
            v.criterion.to_string(),
            outcome_mark(v.outcome),
            v.detail
        );
    }
    for k in k_sweep {
        let v = checker::check_ever_growing_tree(&history, *k);
        println!(
            "{:<26} {:<13} {}",
            format!("ever-growing-tree k={k}"),
            outcome_mark(v.outcome),
            v.detail
        );
    }
    println!(
        "metrics: reads {}, appends {} ({} acked), max displacement {} (plateaus: {}), cut {:?}",
        report.metrics.reads,
        report.metrics.appends,
        report.metrics.successful_appends,
        report.metrics.max_displacement,
        report.metrics.displacement_plateaus,
        report.metrics.min_esp_cut,
    );

    if let Some(path) = audit {
        let text = std::fs::read_to_string(path)?;
        let records: Vec<btlab::oracle::AuditRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        let mut per_process: BTreeMap<u32, u64> = BTreeMap::new();
        let mut monotone = true;
        for rec in &records {
            if rec.op == btlab::oracle::AuditOp::UpdateView {
                let last = per_process.entry(rec.process.0).or_insert(0);
                if rec.version < *last {
                    monotone = false;
                }
                *last = rec.version;
            }
        }
        println!(
            "audit: {} records, per-process view monotonicity {}",
            records.len(),
            if monotone { "PASS" } else { "FAIL" }
        );
    }

    if let Some(path) = report_path {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
        println!("report: {}", path.display());
    }

    Ok(report.verdicts.iter().all(|v| v.outcome != Outcome::Fail))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::RunEp {
            net,
            appends_per_process,
            append_every,
            read_every,
        } => {
            let scenario = load_or_build_scenario(
                &net,
                ProtocolSpec::EpAsync {
                    appends_per_process,
                    append_every,
                    read_every,
                },
            )?;
            let artifacts = btlab::sim::run(&scenario)?;
            write_artifacts(&net, &artifacts)?;
        }
        Command::RunCounterexample {
            net,
            rounds,
            targets,
        } => {
            let scenario =
                load_or_build_scenario(&net, ProtocolSpec::LongestChainRace { rounds, targets })?;
            let artifacts = btlab::sim::run(&scenario)?;
            write_artifacts(&net, &artifacts)?;
            println!("lead changes: {:?}", artifacts.stats.lead_changes);
        }
        Command::RunStreamlet {
            net,
            original_threshold,
            ec,
        } => {
            let scenario = load_or_build_scenario(
                &net,
                ProtocolSpec::StreamletMod {
                    original_threshold,
                    ec_instances: ec,
                },
            )?;
            let artifacts = btlab::sim::run(&scenario)?;
            write_artifacts(&net, &artifacts)?;
            println!(
                "fork events per process: {:?}, exclusions: {:?}",
                artifacts.stats.fork_events, artifacts.stats.exclusions
            );
        }
        Command::Check {
            trace,
            window,
            cut_fraction,
            k_sweep,
            prune_dis,
            prune_half,
            ec,
            audit,
            report,
        } => {
            let prune = match (prune_dis, prune_half) {
                (Some(d), false) => Some(PruneMode::KnownDis(d)),
                (None, true) => Some(PruneMode::Half),
                (None, false) => None,
                (Some(_), true) => unreachable!("clap conflicts_with"),
            };
            let ok = check_trace(
                &trace,
                window,
                cut_fraction,
                &k_sweep,
                prune,
                ec,
                audit.as_deref(),
                report.as_deref(),
            )?;
            if !ok {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
