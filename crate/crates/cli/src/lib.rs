//! The `venus` command line.

pub mod oracle_http;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use venus_core::action::{parse_model_output, ActionKind};
use venus_core::alignment::{
    align_epoch, enhance_sparse, identify_sparse_actions, AlignConfig, EnhancementConfig, PoolsFile, SelectPolicy,
    SparseSelector, TieBreak, POOLS_SCHEMA,
};
use venus_core::eval::{eval_grounding, eval_nav_steps, GroundingSample, NavStepSample, Prediction};
use venus_core::geometry::{BBox, ScreenSize};
use venus_core::oracle::{MockOrm, MockRolloutOracle, MockSummarizer, RolloutBehavior, ScoreMode};
use venus_core::pipeline::{
    filter_traces, qc_generated, reconstruct_batch, resample_by_category, FilterConfig, QcConfig, ResampleConfig,
};
use venus_core::reward::{grounding_reward, navigation_reward, GroundingTarget, NavigationTarget};
use venus_core::synth::{synthetic_dataset, SynthConfig};
use venus_core::trajectory::{action_distribution, load_dataset, write_dataset, Trajectory};
use venus_core::{Action, RewardConfig64};
use venus_service::{ReviewStore, ServeConfig};

use crate::oracle_http::HttpOracle;

#[derive(Debug, Parser)]
#[command(name = "venus", version, about = "UI-agent data, reward and evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Data pipeline stages.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// One history-alignment epoch.
    Align(AlignArgs),
    /// Sparse-action variant generation from saved thought pools.
    Enhance(EnhanceArgs),
    /// Offline benchmark evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Score a single response.
    #[command(subcommand)]
    Reward(RewardCmd),
    /// Run the reward and review service.
    Serve(ServeArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Review store utilities.
    #[command(subcommand)]
    Review(ReviewCmd),
}

#[derive(Debug, Args)]
pub struct StageIo {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the stage report (JSON).
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base URL of the oracle server; without it the offline mock is used.
    #[arg(long)]
    pub oracle_url: Option<String>,
    /// Per-request timeout for the oracle, in seconds.
    #[arg(long, default_value_t = 60)]
    pub oracle_timeout: u64,
    /// Concurrent oracle calls.
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Rule- and summary-based filtering.
    Filter {
        #[command(flatten)]
        io: StageIo,
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 0.5)]
        consistency_threshold: f64,
        /// Source whose scroll directions describe content motion
        /// (repeatable).
        #[arg(long = "content-motion-source")]
        content_motion_sources: Vec<String>,
    },
    /// Per-category downsampling.
    Resample {
        #[command(flatten)]
        io: StageIo,
        #[arg(long)]
        default_cap: Option<usize>,
        /// `category=N` (repeatable).
        #[arg(long = "cap", value_parser = parse_cap)]
        caps: Vec<(String, usize)>,
    },
    /// Add the answer step to info-retrieval traces.
    Reconstruct {
        #[command(flatten)]
        io: StageIo,
    },
    /// Quality control for generated traces.
    Qc {
        #[command(flatten)]
        io: StageIo,
        #[arg(long, default_value_t = 0.5)]
        orm_threshold: f64,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
        #[arg(long, default_value_t = 3)]
        repeat_k: usize,
        #[arg(long, default_value_t = 0.0)]
        repeat_tol: f64,
        /// Accept ORM survivors directly instead of queueing them for review.
        #[arg(long)]
        skip_review: bool,
        /// Also write the rejected traces here.
        #[arg(long)]
        rejected_out: Option<PathBuf>,
    },
}

fn parse_cap(s: &str) -> Result<(String, usize), String> {
    let (k, v) = s.split_once('=').ok_or("expected category=N")?;
    let n = v.trim().parse().map_err(|_| format!("`{v}` is not a count"))?;
    Ok((k.trim().to_string(), n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockKind {
    Always,
    Never,
    Seeded,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "mock", required_unless_present = "mock")]
    pub oracle_url: Option<String>,
    /// Offline rollout policy instead of a server.
    #[arg(long, value_enum)]
    pub mock: Option<MockKind>,
    /// Match probability of the seeded mock.
    #[arg(long, default_value_t = 0.5)]
    pub match_prob: f64,
    /// Thought emitted by the always-match mock.
    #[arg(long, default_value = "T*")]
    pub mock_thought: String,
    #[arg(long, default_value_t = 8)]
    pub rollouts: usize,
    /// Pixel tolerance for matching rollout actions.
    #[arg(long, default_value_t = 14.0)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub target_len: usize,
    /// Seeds the tie-break between equally good thoughts (and the mock).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the collected thought pools here.
    #[arg(long)]
    pub pools_out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub oracle_timeout: u64,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub pools: PathBuf,
    /// `auto` or a comma-separated list of action kinds.
    #[arg(long, default_value = "auto")]
    pub sparse: String,
    /// Frequency threshold for `--sparse auto`.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 4)]
    pub max_variants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write only the generated variants rather than input plus variants.
    #[arg(long)]
    pub variants_only: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub reward_config: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    Grounding(EvalArgs),
    Nav(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum RewardCmd {
    Grounding {
        #[arg(long)]
        response: String,
        /// `x1,y1,x2,y2`
        #[arg(long, value_parser = parse_box)]
        gt_box: BBox,
        #[arg(long)]
        reward_config: Option<PathBuf>,
    },
    Nav {
        #[arg(long)]
        response: String,
        #[arg(long, value_parser = parse_gt_action)]
        gt_action: Action,
        /// `WIDTHxHEIGHT`
        #[arg(long, value_parser = parse_screen)]
        screen: ScreenSize,
        #[arg(long)]
        reward_config: Option<PathBuf>,
    },
}

fn parse_box(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [x1, y1, x2, y2] = v[..] else {
        return Err("expected four numbers".into());
    };
    BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string())
}

fn parse_gt_action(s: &str) -> Result<Action, String> {
    venus_core::parse_action(s).map_err(|e| e.to_string())
}

fn parse_screen(s: &str) -> Result<ScreenSize, String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    ScreenSize::new(w, h).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, requires = "store")]
    pub review_dataset: Option<PathBuf>,
    #[arg(long, requires = "review_dataset")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub reward_config: Option<PathBuf>,
    /// Built review UI to serve under /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub traces: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub question_rate: f64,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCmd {
    /// Write accepted and fixed traces as JSON Lines.
    Export {
        #[arg(long)]
        review_dataset: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// helpers

fn load_traces(path: &Path) -> Result<Vec<Trajectory>> {
    let loaded = load_dataset(path)?;
    for issue in &loaded.report.rejected {
        eprintln!("{}:{}: skipped: {}", path.display(), issue.line, issue.message);
    }
    const SHOWN: usize = 5;
    for issue in loaded.report.warnings.iter().take(SHOWN) {
        let id = issue.trace_id.as_deref().unwrap_or("?");
        eprintln!("{}: {id}: warning: {}", path.display(), issue.message);
    }
    if loaded.report.warnings.len() > SHOWN {
        eprintln!(
            "{}: {} more warnings",
            path.display(),
            loaded.report.warnings.len() - SHOWN
        );
    }
    Ok(loaded.trajectories)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a JSON Lines file of records; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_traces(path: &Path, ts: &[Trajectory]) -> Result<()> {
    write_dataset(path, ts).with_context(|| format!("writing {}", path.display()))
}

/// Loads and validates a reward config; defaults when no path is given.
pub fn load_reward_config(path: Option<&Path>) -> Result<RewardConfig64> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => RewardConfig64::default(),
    };
    cfg.validate().context("invalid reward config")?;
    Ok(cfg)
}

fn http(url: &str, timeout: u64) -> Result<HttpOracle> {
    Ok(HttpOracle::new(url, Duration::from_secs(timeout))?)
}

// ---------------------------------------------------------------------------
// commands

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(cmd) => pipeline(cmd),
        Command::Align(a) => align(a),
        Command::Enhance(a) => enhance(a),
        Command::Eval(cmd) => eval(cmd),
        Command::Reward(cmd) => reward(cmd),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => {
            let ts = synthetic_dataset(&SynthConfig {
                traces: a.traces,
                seed: a.seed,
                question_rate: a.question_rate,
                ..SynthConfig::default()
            });
            write_traces(&a.out, &ts)?;
            eprintln!("wrote {} traces to {}", ts.len(), a.out.display());
            Ok(())
        }
        Command::Review(ReviewCmd::Export {
            review_dataset,
            store,
            out,
        }) => {
            let store = ReviewStore::open_with_dataset(&store, &review_dataset)?;
            let n = store.export_to(&out)?;
            eprintln!("exported {n} traces to {}", out.display());
            Ok(())
        }
    }
}

fn pipeline(cmd: PipelineCmd) -> Result<()> {
    match cmd {
        PipelineCmd::Filter {
            io,
            min_len,
            consistency_threshold,
            content_motion_sources,
        } => {
            let ts = load_traces(&io.input)?;
            let cfg = FilterConfig {
                min_len,
                consistency_threshold,
                content_motion_sources: content_motion_sources.into_iter().collect(),
                max_in_flight: io.max_in_flight,
            };
            let (kept, report) = match &io.oracle_url {
                Some(url) => filter_traces(&ts, &http(url, io.oracle_timeout)?, &cfg)?,
                None => filter_traces(&ts, &MockSummarizer::new(io.seed, ScoreMode::Hashed), &cfg)?,
            };
            write_traces(&io.out, &kept)?;
            write_json(&io.report, &report)?;
            eprintln!("filter: {} -> {}", report.input, report.kept);
        }
        PipelineCmd::Resample { io, default_cap, caps } => {
            let ts = load_traces(&io.input)?;
            let cfg = ResampleConfig {
                default_cap,
                caps: caps.into_iter().collect::<BTreeMap<_, _>>(),
                seed: io.seed,
            };
            let (kept, report) = resample_by_category(&ts, &cfg);
            write_traces(&io.out, &kept)?;
            write_json(&io.report, &report)?;
            eprintln!("resample: {} -> {}", report.input, report.kept);
        }
        PipelineCmd::Reconstruct { io } => {
            let ts = load_traces(&io.input)?;
            let (out, report) = match &io.oracle_url {
                Some(url) => reconstruct_batch(&ts, &http(url, io.oracle_timeout)?, io.max_in_flight)?,
                None => reconstruct_batch(&ts, &MockSummarizer::new(io.seed, ScoreMode::Hashed), io.max_in_flight)?,
            };
            write_traces(&io.out, &out)?;
            write_json(&io.report, &report)?;
            eprintln!("reconstruct: {} -> {}", report.input, report.kept);
        }
        PipelineCmd::Qc {
            io,
            orm_threshold,
            min_len,
            repeat_k,
            repeat_tol,
            skip_review,
            rejected_out,
        } => {
            let ts = load_traces(&io.input)?;
            let cfg = QcConfig {
                min_len,
                repeat_k,
                repeat_tol,
                orm_threshold,
                skip_review,
                max_in_flight: io.max_in_flight,
            };
            let qc = match &io.oracle_url {
                Some(url) => qc_generated(&ts, &http(url, io.oracle_timeout)?, &cfg)?,
                None => qc_generated(
                    &ts,
                    &MockOrm {
                        seed: io.seed,
                        mode: ScoreMode::Hashed,
                    },
                    &cfg,
                )?,
            };
            let mut survivors = qc.accepted.clone();
            survivors.extend(qc.needs_review.iter().cloned());
            write_traces(&io.out, &survivors)?;
            if let Some(p) = rejected_out {
                write_traces(&p, &qc.rejected)?;
            }
            write_json(&io.report, &qc.report)?;
            eprintln!(
                "qc: {} in, {} accepted, {} for review, {} rejected",
                qc.report.input,
                qc.accepted.len(),
                qc.needs_review.len(),
                qc.rejected.len()
            );
        }
    }
    Ok(())
}

fn align(a: AlignArgs) -> Result<()> {
    let ts = load_traces(&a.input)?;
    let cfg = AlignConfig {
        rollouts: a.rollouts,
        tol: a.tol,
        policy: SelectPolicy {
            target_length: a.target_len,
            tie_break: match a.seed {
                Some(seed) => TieBreak::SeededRandom { seed },
                None => TieBreak::First,
            },
        },
        max_in_flight: a.max_in_flight,
    };
    let out = match (&a.oracle_url, a.mock) {
        (Some(url), _) => align_epoch(&ts, &http(url, a.oracle_timeout)?, &cfg)?,
        (None, Some(kind)) => {
            let behavior = match kind {
                MockKind::Always => RolloutBehavior::AlwaysMatch {
                    thought: a.mock_thought.clone(),
                },
                MockKind::Never => RolloutBehavior::NeverMatch,
                MockKind::Seeded => RolloutBehavior::Seeded {
                    match_prob: a.match_prob,
                },
            };
            let oracle = MockRolloutOracle::new(behavior, a.seed.unwrap_or(0)).with_ground_truth(&ts);
            align_epoch(&ts, &oracle, &cfg)?
        }
        (None, None) => bail!("either --oracle-url or --mock is required"),
    };
    for (id, fails) in &out.failures {
        for f in fails {
            eprintln!("{id}: {f}");
        }
    }
    write_traces(&a.out, &out.trajectories)?;
    if let Some(p) = &a.pools_out {
        write_json(p, &out.pools_file())?;
    }
    let replaced: usize = ts
        .iter()
        .zip(&out.trajectories)
        .map(|(b, o)| b.steps.iter().zip(&o.steps).filter(|(x, y)| x.thought != y.thought).count())
        .sum();
    eprintln!(
        "align: {} traces, {replaced} thoughts replaced, {} traces with oracle failures",
        out.trajectories.len(),
        out.failures.len()
    );
    Ok(())
}

/// Parses `--sparse`: `auto` or `Kind,Kind,...`.
pub fn parse_sparse(s: &str, tau: f64) -> Result<SparseSelector> {
    if s.trim().eq_ignore_ascii_case("auto") {
        if !(0.0..=1.0).contains(&tau) {
            bail!("--tau must lie in [0, 1]");
        }
        return Ok(SparseSelector::Threshold { tau });
    }
    let kinds = s
        .split(',')
        .map(|k| {
            k.trim()
                .parse::<ActionKind>()
                .map_err(|_| anyhow::anyhow!("unknown action kind `{}`", k.trim()))
        })
        .collect::<Result<BTreeSet<_>>>()?;
    Ok(SparseSelector::Explicit { kinds })
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let ts = load_traces(&a.input)?;
    let pools: PoolsFile = read_json(&a.pools)?;
    if pools.schema != POOLS_SCHEMA {
        bail!("{}: schema `{}`, expected `{POOLS_SCHEMA}`", a.pools.display(), pools.schema);
    }
    let cfg = EnhancementConfig {
        sparse: parse_sparse(&a.sparse, a.tau)?,
        max_variants: a.max_variants,
        seed: a.seed,
    };
    let sparse = identify_sparse_actions(&action_distribution(&ts), &cfg);
    let mut variants = Vec::new();
    for t in &ts {
        match pools.traces.get(&t.trace_id) {
            Some(p) if p.len() == t.steps.len() => {
                variants.extend(enhance_sparse(t, p, &sparse, cfg.max_variants, cfg.seed))
            }
            Some(p) => eprintln!(
                "{}: {} pools for {} steps, skipped",
                t.trace_id,
                p.len(),
                t.steps.len()
            ),
            None => eprintln!("{}: no pools, skipped", t.trace_id),
        }
    }
    let kinds: Vec<&str> = sparse.iter().map(|k| k.name()).collect();
    eprintln!("enhance: sparse kinds [{}], {} variants", kinds.join(", "), variants.len());
    if a.variants_only {
        write_traces(&a.out, &variants)
    } else {
        let mut all = ts;
        all.extend(variants);
        write_traces(&a.out, &all)
    }
}

fn eval(cmd: EvalCmd) -> Result<()> {
    let (args, report) = match cmd {
        EvalCmd::Grounding(args) => {
            let preds: Vec<Prediction> = read_jsonl(&args.preds)?;
            let samples: Vec<GroundingSample> = read_jsonl(&args.samples)?;
            (args, eval_grounding(&preds, &samples)?)
        }
        EvalCmd::Nav(args) => {
            let cfg = load_reward_config(args.reward_config.as_deref())?;
            let preds: Vec<Prediction> = read_jsonl(&args.preds)?;
            let samples: Vec<NavStepSample> = read_jsonl(&args.samples)?;
            (args, eval_nav_steps(&preds, &samples, &cfg)?)
        }
    };
    fs::write(&args.report, report.to_json()).with_context(|| format!("writing {}", args.report.display()))?;
    eprintln!(
        "{}: {}/{} correct ({:.4}), {} missing",
        report.benchmark,
        report.correct,
        report.total,
        report.accuracy,
        report.missing.len()
    );
    Ok(())
}

fn reward(cmd: RewardCmd) -> Result<()> {
    let breakdown = match cmd {
        RewardCmd::Grounding {
            response,
            gt_box,
            reward_config,
        } => {
            let cfg = load_reward_config(reward_config.as_deref())?;
            grounding_reward(&response, &GroundingTarget { gt_box }, &cfg)
        }
        RewardCmd::Nav {
            response,
            gt_action,
            screen,
            reward_config,
        } => {
            let cfg = load_reward_config(reward_config.as_deref())?;
            navigation_reward(&parse_model_output(&response), &NavigationTarget { gt_action, screen }, &cfg)
        }
    };
    println!("{}", serde_json::to_string(&breakdown)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServeConfig {
        addr: Some(SocketAddr::new(a.host, a.port)),
        port: a.port,
        reward_config: load_reward_config(a.reward_config.as_deref())?,
        review_dataset: a.review_dataset,
        store_dir: a.store,
        ui_dir: a.ui_dir,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(venus_service::serve(cfg))?;
    Ok(())
}
