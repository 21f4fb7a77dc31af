//! `beliefgraph` command-line driver.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::{Ablation, ExpectationMode, ModelConfig, Trajectory};
use crate::embeddings::{load_table, synth_table, EmbeddingTable, EmbeddingVocab};
use crate::error::{Error, Result};
use crate::metrics::cluster_trajectories;
use crate::trainer::{
    attention_csv, diagnostics_csv, gradient, read_checkpoint, rollout, train, write_checkpoint, ActionSelection,
    GradMode, ParamLayout, ParamSet, RolloutOptions, TrainConfig,
};

use super::{evaluate_metrics, load_dataset, marginals_csv, median, synth_dataset, write_dataset, PlantedSpec, SurveyDataset};

/// File name of the embedding table inside a dataset directory.
pub const TABLE_FILE: &str = "table.bgt";

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "beliefgraph", version, about = "Dynamic belief-graph engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset and embedding table.
    Synth(Common),
    /// Train on a dataset and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Held-out dataset whose accuracy is logged each epoch.
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Roll out a checkpoint on a dataset and write the metrics report.
    Eval(Common),
    /// Write per-step rollout marginals and actions.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Draw actions instead of taking the most probable one.
        #[arg(long)]
        sample: bool,
        /// Directory for per-step attention matrices.
        #[arg(long)]
        attention: Option<PathBuf>,
    },
    /// Train the full model and both ablations and compare them.
    Ablate(Common),
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random trajectories in the check batch.
        #[arg(long, default_value_t = 4)]
        agents: usize,
    },
    /// Cluster z-normalized rating trajectories per belief.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration, model configuration, or planted spec (synth).
    #[arg(long, visible_alias = "spec")]
    config: Option<PathBuf>,
    /// Embedding table; defaults to `table.bgt` next to the dataset.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Dataset file or directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Diagnostics CSV destination.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    expectation_mode: Option<ModeArg>,
    #[arg(long)]
    teacher_forcing: bool,
    #[arg(long)]
    kl_weight: Option<f64>,
    /// Checkpoint to read.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    MeanField,
    Enumerate,
}

impl From<ModeArg> for ExpectationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::MeanField => ExpectationMode::MeanField,
            ModeArg::Enumerate => ExpectationMode::Enumerate,
        }
    }
}

/// Contents of a `--config` file for training and evaluation. A bare model
/// configuration is accepted as well.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let is_run = value
            .as_object()
            .is_some_and(|o| o.contains_key("model") || o.contains_key("train"));
        if is_run {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(RunConfig {
                model: Some(serde_json::from_str(text)?),
                train: TrainConfig::default(),
            })
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(c) => synth_cmd(&c),
        Command::Train { common, test_data } => train_cmd(&common, test_data.as_deref()),
        Command::Eval(c) => eval_cmd(&c),
        Command::Rollout { common, sample, attention } => rollout_cmd(&common, sample, attention.as_deref()),
        Command::Ablate(c) => ablate_cmd(&c),
        Command::Gradcheck { common, agents } => gradcheck_cmd(&common, agents),
        Command::Cluster { common, k } => cluster_cmd(&common, k),
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn load_run_config(c: &Common) -> Result<RunConfig> {
    let mut run = match &c.config {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = c.expectation_mode {
        if let Some(m) = run.model.as_mut() {
            m.expectation_mode = mode.into();
        }
    }
    if c.teacher_forcing {
        run.train.teacher_forcing = true;
    }
    if let Some(w) = c.kl_weight {
        run.train.kl_weight = w;
    }
    if let Some(s) = c.seed {
        run.train.rng_seed = s;
    }
    Ok(run)
}

/// Dataset, effective model configuration, and embedding table.
struct Loaded {
    data: SurveyDataset,
    cfg: ModelConfig,
    table: EmbeddingTable,
    train: TrainConfig,
}

fn load_inputs(c: &Common) -> Result<Loaded> {
    let run = load_run_config(c)?;
    let data_path = required(&c.data, "data")?;
    let data = load_dataset(data_path)?;
    let mut cfg = run.model.unwrap_or_else(|| data.config.clone());
    if let Some(mode) = c.expectation_mode {
        cfg.expectation_mode = mode.into();
    }
    cfg.validate()?;
    for traj in &data.agents {
        traj.validate(&cfg)?;
    }
    let table_path = match &c.table {
        Some(p) => p.clone(),
        None if data_path.is_dir() => data_path.join(TABLE_FILE),
        None => data_path.with_file_name(TABLE_FILE),
    };
    let table = load_table(&table_path, &cfg, &data.embedding_vocab())?;
    Ok(Loaded {
        data,
        cfg,
        table,
        train: run.train,
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn synth_cmd(c: &Common) -> Result<i32> {
    let mut spec: PlantedSpec = serde_json::from_str(&std::fs::read_to_string(required(&c.config, "config")?)?)?;
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(mode) = c.expectation_mode {
        spec.config.expectation_mode = mode.into();
    }
    let out = required(&c.out, "out")?;
    std::fs::create_dir_all(out)?;
    let planted = synth_dataset(&spec)?;
    write_dataset(&planted.dataset, out)?;
    planted.table.write(out.join(TABLE_FILE))?;
    let ids: Vec<String> = planted.dataset.agents.iter().map(|a| a.agent_id.clone()).collect();
    std::fs::write(out.join("true_marginals.csv"), marginals_csv(&ids, &planted.true_marginals))?;
    write_checkpoint(&planted.params, &spec.config, out.join("planted.bgp"))?;
    println!(
        "wrote {} agents, {} embeddings to {}",
        planted.dataset.agents.len(),
        planted.table.len(),
        out.display()
    );
    Ok(0)
}

fn train_cmd(c: &Common, test_data: Option<&Path>) -> Result<i32> {
    let l = load_inputs(c)?;
    let out = required(&c.out, "out")?;
    let test = match test_data {
        Some(p) => {
            let t = load_dataset(p)?;
            for traj in &t.agents {
                traj.validate(&l.cfg)?;
            }
            Some(t.agents)
        }
        None => None,
    };
    let params0 = ParamSet::init(&l.cfg, l.train.rng_seed);
    let outcome = train(&l.data.agents, params0, &l.table, &l.cfg, &l.train, test.as_deref())?;
    write_checkpoint(&outcome.params, &l.cfg, out)?;
    if let Some(log) = &c.log {
        std::fs::write(log, diagnostics_csv(&outcome.log))?;
    }
    let first = &outcome.log[0];
    let last = outcome.log.last().unwrap_or(first);
    println!(
        "epochs {}: loss {:.6} -> {:.6}, train accuracy {:.4} -> {:.4}",
        l.train.epochs,
        first.loss(l.train.kl_weight),
        last.loss(l.train.kl_weight),
        first.action_accuracy,
        last.action_accuracy
    );
    Ok(0)
}

fn eval_cmd(c: &Common) -> Result<i32> {
    let l = load_inputs(c)?;
    let params = read_checkpoint(required(&c.ckpt, "ckpt")?, &l.cfg)?;
    let report = evaluate_metrics(&params, &l.table, &l.cfg, &l.data.agents)?;
    match &c.out {
        Some(p) => {
            std::fs::write(p, report.to_csv())?;
            print!("{}", report.pretty());
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(0)
}

fn rollout_cmd(c: &Common, sample: bool, attention: Option<&Path>) -> Result<i32> {
    let l = load_inputs(c)?;
    let params = read_checkpoint(required(&c.ckpt, "ckpt")?, &l.cfg)?;
    if let Some(dir) = attention {
        std::fs::create_dir_all(dir)?;
    }
    let mut csv = String::from("agent,t,obs,action");
    for i in 0..l.cfg.k {
        write!(csv, ",m_{i}").unwrap();
    }
    csv.push('\n');
    for (n, traj) in l.data.agents.iter().enumerate() {
        let opts = RolloutOptions {
            selection: if sample { ActionSelection::Sample } else { ActionSelection::Argmax },
            rng_seed: c.seed.unwrap_or(0).wrapping_add(n as u64),
            with_attention: attention.is_some(),
            initial: Some(traj.initial_marginals(&l.cfg)),
        };
        let r = rollout(&params, &l.table, &l.cfg, &traj.observation_ids, &opts)?;
        for (t, step) in r.steps.iter().enumerate() {
            write!(csv, "{},{t},{},{}", traj.agent_id, traj.observation_ids[t], step.action).unwrap();
            for v in step.marginals.as_slice() {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
            if let (Some(dir), Some(mats)) = (attention, &step.attention) {
                for (a, m) in l.cfg.mask(t)?.iter().zip(mats) {
                    std::fs::write(dir.join(format!("{}_t{t}_a{a}.csv", traj.agent_id)), attention_csv(m))?;
                }
            }
        }
    }
    write_or_print(c.out.as_deref(), &csv)?;
    Ok(0)
}

fn ablate_cmd(c: &Common) -> Result<i32> {
    let l = load_inputs(c)?;
    let mut table = String::from("variant,final_loss,train_acc,median_spearman,pairwise_structure,cohens_d,dtw\n");
    let mut logs = String::new();
    for (name, ablation) in [
        ("full", Ablation::Full),
        ("no_pairwise", Ablation::NoPairwise),
        ("no_temporal", Ablation::NoTemporal),
    ] {
        let mut cfg = l.cfg.clone();
        cfg.ablation = ablation;
        let outcome = train(
            &l.data.agents,
            ParamSet::init(&cfg, l.train.rng_seed),
            &l.table,
            &cfg,
            &l.train,
            None,
        )?;
        let report = evaluate_metrics(&outcome.params, &l.table, &cfg, &l.data.agents)?;
        let fmt = |r: &std::result::Result<f64, String>| r.as_ref().map(|v| v.to_string()).unwrap_or_else(|_| "NA".into());
        let med = median(report.per_belief_spearman.iter().filter_map(|r| r.as_ref().ok().copied()))
            .map_or("NA".to_string(), |v| v.to_string());
        let last = outcome.log.last().expect("log has the initial row");
        writeln!(
            table,
            "{name},{},{},{med},{},{},{}",
            last.loss(l.train.kl_weight),
            last.action_accuracy,
            fmt(&report.structure_score),
            fmt(&report.cohens_d),
            fmt(&report.dtw)
        )
        .unwrap();
        for line in diagnostics_csv(&outcome.log).lines().skip(1) {
            writeln!(logs, "{name},{line}").unwrap();
        }
    }
    if let Some(log) = &c.log {
        std::fs::write(log, format!("variant,epoch,mean_L_act,mean_KL,train_acc,test_acc\n{logs}"))?;
    }
    write_or_print(c.out.as_deref(), &table)?;
    if c.out.is_some() {
        print!("{table}");
    }
    Ok(0)
}

/// Random valid trajectories for a gradient check.
fn random_batch(cfg: &ModelConfig, observations: &[u32], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Trajectory>> {
    (0..n)
        .map(|i| {
            let mut actions = Vec::with_capacity(cfg.t);
            for t in 0..cfg.t {
                let mask = cfg.mask(t)?;
                actions.push(mask[rng.random_range(0..mask.len())]);
            }
            Ok(Trajectory {
                agent_id: format!("check{i}"),
                observation_ids: (0..cfg.t)
                    .map(|_| observations[rng.random_range(0..observations.len())])
                    .collect(),
                action_ids: actions,
                belief_ratings: None,
                initial_ratings: None,
            })
        })
        .collect()
}

/// Relative error between two gradient entries, with a floor of `1e-6` on the
/// denominator so that entries that are both near zero compare absolutely.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference gradients
/// on a random model, table and batch derived from `seed`. Returns the error
/// and the name of the worst parameter block.
pub fn gradcheck(cfg: &ModelConfig, tcfg: &TrainConfig, seed: u64, agents: usize) -> Result<(f64, &'static str)> {
    cfg.validate()?;
    let observations: Vec<u32> = (0..3).collect();
    let table = synth_table(cfg, &EmbeddingVocab::new(observations.clone(), cfg.num_actions), seed);
    let mut params = ParamSet::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    params.unary.beta = rng.random_range(-1.0..1.0);
    params.pairwise.beta = rng.random_range(-1.0..1.0);
    params.attention.beta_a = rng.random_range(-1.0..1.0);
    params.inference.bias = rng.random_range(-1.0..1.0);
    let batch_owned = random_batch(cfg, &observations, agents.max(1), &mut rng)?;
    let batch: Vec<&Trajectory> = batch_owned.iter().collect();
    let obj = tcfg.objective();
    let (_, analytic) = gradient(&params, &batch, &table, cfg, &obj, GradMode::Analytic)?;
    let (_, numeric) = gradient(&params, &batch, &table, cfg, &obj, GradMode::Numeric)?;
    let layout = ParamLayout::new(cfg);
    let mut worst = (0.0, "none");
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > worst.0 {
            worst = (e, layout.name_of(i).unwrap_or("?"));
        }
    }
    Ok(worst)
}

fn gradcheck_cmd(c: &Common, agents: usize) -> Result<i32> {
    let run = load_run_config(c)?;
    let cfg = run
        .model
        .ok_or_else(|| Error::Config("gradcheck needs a model configuration in --config".into()))?;
    if run.train.teacher_forcing {
        return Err(Error::Config(
            "gradcheck compares against the undetached loss; run it without teacher forcing".into(),
        ));
    }
    let (err, name) = gradcheck(&cfg, &run.train, c.seed.unwrap_or(0), agents)?;
    println!("max relative error {err:.3e} ({name})");
    Ok(if err < GRADCHECK_TOLERANCE { 0 } else { 1 })
}

fn cluster_cmd(c: &Common, k: usize) -> Result<i32> {
    let data = load_dataset(required(&c.data, "data")?)?;
    let seed = c.seed.unwrap_or(0);
    let mut csv = String::from("belief,agent,cluster\n");
    let mut summary = String::new();
    for i in 0..data.config.k {
        let mut ids = Vec::new();
        let mut seqs = Vec::new();
        for tr in &data.agents {
            let Some(rows) = &tr.belief_ratings else { continue };
            let seq: Option<Vec<f64>> = rows.iter().map(|r| r[i].map(f64::from)).collect();
            if let Some(s) = seq {
                ids.push(tr.agent_id.clone());
                seqs.push(s);
            }
        }
        let cl = cluster_trajectories(&seqs, k, seed)?;
        for (id, label) in ids.iter().zip(&cl.labels) {
            writeln!(csv, "{i},{id},{label}").unwrap();
        }
        for (j, cen) in cl.centroids.iter().enumerate() {
            let size = cl.labels.iter().filter(|&&l| l == j).count();
            let shown: Vec<String> = cen.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(summary, "belief {i} cluster {j}: n={size} centroid ({})", shown.join(", ")).unwrap();
        }
    }
    write_or_print(c.out.as_deref(), &csv)?;
    if c.out.is_some() {
        print!("{summary}");
    }
    Ok(0)
}
