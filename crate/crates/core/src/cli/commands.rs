//! Subcommand implementations. Every command reads and writes files under
//! one per-seed directory so seeds never share an output file.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    contraction_curves, find_anchor_pairs, good_coverage, pearson, robustness_sweep, sharpening_scan, Anchor,
    ContractionCurve, FinetunabilityReport, RobustnessCurve, SharpeningRecord,
};
use crate::bc_flow::{pretrain, DemoDataset, FlowPolicy, PretrainRun};
use crate::dice_rl::{evaluate, finetune_observed, DicePolicy, FinetuneRun, MetricsRow};
use crate::envs::{generate_demos, scripted_expert, DemoSet, GateWorld, Mode, Trajectory};
use crate::grad::Tensor;
use crate::rollout::ChunkPolicy;
use crate::Error;

use super::checkpoint::{combined_checkpoint, combined_from_checkpoint, flow_checkpoint, flow_from_checkpoint, Checkpoint, Finetuned};
use super::config::RunConfig;
use super::io::{opt_cell, read_demos, write_demos, write_manifest, Table};
use super::svg::{line_chart, scatter_chart, Series};

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub mod files {
    pub const DEMOS: &str = "demos.csv";
    pub const DEMOS_SUMMARY: &str = "demos_summary.csv";
    pub const PRETRAIN_DIR: &str = "pretrain";
    pub const PRETRAIN_METRICS: &str = "pretrain_metrics.csv";
    pub const PRIOR: &str = "prior.ckpt";
    pub const FINETUNED: &str = "finetune.ckpt";
    pub const FINETUNE_METRICS: &str = "finetune_metrics.csv";
    pub const FINETUNABILITY: &str = "finetunability.csv";
    pub const SHARPENING: &str = "sharpening.csv";
    pub const CONTRACTION: &str = "contraction.csv";
    pub const ROBUSTNESS: &str = "robustness.csv";
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing input {}", path.display()),
        )))
    }
}

fn manifest(dir: &Path, cmd: &str, cfg: &RunConfig, seed: u64, inputs: &[PathBuf]) -> Result<(), Error> {
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&dir.join(format!("manifest_{cmd}.txt")), cmd, seed, &cfg.to_text(), &refs)
}

pub fn world(cfg: &RunConfig) -> Result<GateWorld, Error> {
    Ok(GateWorld::new(cfg.env.clone())?)
}

fn load_dataset(cfg: &RunConfig, dir: &Path) -> Result<DemoDataset, Error> {
    let path = dir.join(files::DEMOS);
    require(&path)?;
    let (trajs, _) = read_demos(&path, cfg.finetune.gamma)?;
    DemoDataset::new(trajs, cfg.pretrain.horizon)
}

fn load_prior(dir: &Path) -> Result<FlowPolicy, Error> {
    let path = dir.join(files::PRIOR);
    require(&path)?;
    flow_from_checkpoint(&Checkpoint::load(&path)?)
}

pub fn load_finetuned(dir: &Path) -> Result<Finetuned, Error> {
    let path = dir.join(files::FINETUNED);
    require(&path)?;
    combined_from_checkpoint(&Checkpoint::load(&path)?)
}

/// Noisy scripted-expert demonstrations plus a summary of how they were
/// collected.
pub fn gen_demos(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<DemoSet, Error> {
    std::fs::create_dir_all(dir)?;
    let w = world(cfg)?;
    let set = generate_demos(&w, cfg.demos.count, cfg.demos.noise, cfg.finetune.gamma, seed)?;
    write_demos(&dir.join(files::DEMOS), &set.trajectories, &set.modes)?;
    let mut t = Table::new(&["episodes", "attempts", "attempt_success_rate", "narrow_frac", "wide_frac"]);
    t.push(vec![
        set.trajectories.len().to_string(),
        set.attempts.to_string(),
        set.attempt_success_rate().to_string(),
        set.mode_fraction(Mode::NarrowGate).to_string(),
        set.mode_fraction(Mode::WideGate).to_string(),
    ]);
    t.write(&dir.join(files::DEMOS_SUMMARY))?;
    manifest(dir, "gen-demos", cfg, seed, &[])?;
    Ok(set)
}

/// Flow-matching pretraining; writes every retained checkpoint, the last
/// one as the prior, and the per-checkpoint losses.
pub fn run_pretrain(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<PretrainRun, Error> {
    let ds = load_dataset(cfg, dir)?;
    let w = world(cfg)?;
    let run = pretrain(&ds, &cfg.pretrain, Some(&w), seed)?;
    let ck_dir = dir.join(files::PRETRAIN_DIR);
    std::fs::create_dir_all(&ck_dir)?;
    let mut t = Table::new(&["epoch", "train_loss", "val_loss", "success_rate"]);
    for c in &run.checkpoints {
        flow_checkpoint(&c.policy).save(&ck_dir.join(format!("epoch_{:04}.ckpt", c.epoch)))?;
        t.push(vec![
            c.epoch.to_string(),
            c.train_loss.to_string(),
            c.val_loss.to_string(),
            opt_cell(c.success_rate),
        ]);
    }
    t.write(&dir.join(files::PRETRAIN_METRICS))?;
    flow_checkpoint(&run.last().policy).save(&dir.join(files::PRIOR))?;
    manifest(dir, "pretrain", cfg, seed, &[dir.join(files::DEMOS)])?;
    Ok(run)
}

fn metrics_cells(r: &MetricsRow) -> Vec<String> {
    vec![
        r.env_steps.to_string(),
        r.episodes.to_string(),
        r.success_rate.to_string(),
        r.mean_return.to_string(),
        r.filter_active_frac.to_string(),
        r.mean_residual_norm.to_string(),
        r.critic_loss.to_string(),
        r.actor_loss.to_string(),
        r.rlpd_ratio.to_string(),
    ]
}

/// Residual actor-critic finetuning of the stored prior.
pub fn run_finetune(cfg: &RunConfig, seed: u64, dir: &Path, verbose: bool) -> Result<FinetuneRun, Error> {
    let ds = load_dataset(cfg, dir)?;
    let prior = load_prior(dir)?;
    let w = world(cfg)?;
    let mut observer = |r: &MetricsRow| {
        if verbose {
            eprintln!(
                "seed {seed} step {:>6} success {:.3} critic {:.4} actor {:.4}",
                r.env_steps, r.success_rate, r.critic_loss, r.actor_loss
            );
        }
    };
    let run = finetune_observed(&w, &prior, &ds, &cfg.finetune, seed, &mut observer)?;
    let mut t = Table::new(&MetricsRow::HEADER);
    for r in &run.metrics {
        t.push(metrics_cells(r));
    }
    t.write(&dir.join(files::FINETUNE_METRICS))?;
    let fin = Finetuned {
        prior,
        actor: run.actor.clone(),
        critics: run.critics.clone(),
    };
    combined_checkpoint(&fin).save(&dir.join(files::FINETUNED))?;
    manifest(dir, "finetune", cfg, seed, &[dir.join(files::DEMOS), dir.join(files::PRIOR)])?;
    Ok(run)
}

/// Noise-free scripted expert as a chunk policy: each chunk is planned by
/// simulating the expert for `horizon` steps from the observed state.
pub struct ExpertPolicy<'a> {
    pub world: &'a GateWorld,
    pub mode: Mode,
    pub horizon: usize,
}

impl ChunkPolicy for ExpertPolicy<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn candidates(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        2 * self.horizon
    }

    fn act(&self, obs: &Tensor, _latents: &Tensor) -> Result<Tensor, Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(obs.rows() * 2 * self.horizon);
        for i in 0..obs.rows() {
            let mut state = self.world.state_at([obs.row(i)[0], obs.row(i)[1]]);
            for _ in 0..self.horizon {
                if state.terminal {
                    out.extend([0.0, 0.0]);
                    continue;
                }
                let a = scripted_expert(self.world, &state, &mut rng, self.mode, 0.0);
                self.world.step(&mut state, a)?;
                out.extend(a);
            }
        }
        Ok(Tensor::matrix(obs.rows(), 2 * self.horizon, out)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyChoice {
    Prior,
    Finetuned,
    Expert,
}

impl PolicyChoice {
    pub fn name(self) -> &'static str {
        match self {
            PolicyChoice::Prior => "prior",
            PolicyChoice::Finetuned => "finetuned",
            PolicyChoice::Expert => "expert",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub policy: PolicyChoice,
    pub episodes: usize,
    pub success_rate: f32,
    pub std_error: f32,
    pub mean_return: f32,
}

/// Held-out success rate of one policy on the evaluation seed stream.
pub fn run_evaluate(cfg: &RunConfig, seed: u64, dir: &Path, choice: PolicyChoice) -> Result<EvalReport, Error> {
    std::fs::create_dir_all(dir)?;
    let w = world(cfg)?;
    let episodes = cfg.analysis.eval_episodes;
    let f = &cfg.finetune;
    let (summary, inputs) = match choice {
        PolicyChoice::Expert => {
            let p = ExpertPolicy {
                world: &w,
                mode: Mode::WideGate,
                horizon: cfg.pretrain.horizon,
            };
            (evaluate(&w, &p, episodes, seed, None)?, vec![])
        }
        PolicyChoice::Prior => {
            let prior = load_prior(dir)?;
            (evaluate(&w, &prior, episodes, seed, None)?, vec![dir.join(files::PRIOR)])
        }
        PolicyChoice::Finetuned => {
            let fin = load_finetuned(dir)?;
            let p = DicePolicy::new(
                &fin.prior,
                &fin.actor,
                &fin.critics,
                f.k,
                f.best_of_n_enabled && f.best_of_n_eval,
                f.policy_reduction,
            );
            (evaluate(&w, &p, episodes, seed, None)?, vec![dir.join(files::FINETUNED)])
        }
    };
    let report = EvalReport {
        policy: choice,
        episodes,
        success_rate: summary.success_rate,
        std_error: summary.std_error(),
        mean_return: summary.mean_return,
    };
    let mut t = Table::new(&["policy", "episodes", "success_rate", "std_error", "mean_return"]);
    t.push(vec![
        choice.name().into(),
        episodes.to_string(),
        report.success_rate.to_string(),
        report.std_error.to_string(),
        report.mean_return.to_string(),
    ]);
    t.write(&dir.join(format!("evaluate_{}.csv", choice.name())))?;
    manifest(dir, &format!("evaluate-{}", choice.name()), cfg, seed, &inputs)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOutputs {
    pub prior_report: FinetunabilityReport,
    pub finetuned_report: FinetunabilityReport,
    pub sharpening: Vec<SharpeningRecord>,
    pub sharpening_pearson: Option<f32>,
    pub contraction: ContractionCurve,
    pub robustness: Vec<RobustnessCurve>,
}

/// Worker count for analysis: `DICE_THREADS` when set to a positive
/// integer, otherwise rayon's default.
pub fn analysis_threads() -> Option<usize> {
    std::env::var("DICE_THREADS").ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Finetunability, sharpening, contraction and robustness of the finetuned
/// policy against its prior. The four jobs run concurrently; each is
/// deterministic on its own seed streams.
pub fn run_analyze(cfg: &RunConfig, seed: u64, dir: &Path, threads: Option<usize>) -> Result<AnalysisOutputs, Error> {
    let ds = load_dataset(cfg, dir)?;
    let fin = load_finetuned(dir)?;
    let w = world(cfg)?;
    let a = &cfg.analysis;
    let f = &cfg.finetune;
    let policy = DicePolicy::new(
        &fin.prior,
        &fin.actor,
        &fin.critics,
        f.k,
        f.best_of_n_enabled && f.best_of_n_eval,
        f.policy_reduction,
    );
    let critic = fin.critics.online_view(f.policy_reduction);
    let anchors = Anchor::from_pairs(&ds.anchors(a.anchor_stride));
    let pairs = find_anchor_pairs(ds.trajectories(), a.pair_stride, a.pair_min_dist, a.pair_max_dist, a.max_pairs);
    let demos: &[Trajectory] = ds.trajectories();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ((cov, sharp), (contraction, robustness)) = pool.install(|| {
        rayon::join(
            || {
                rayon::join(
                    || -> Result<_, Error> {
                        Ok((
                            good_coverage(&fin.prior, &critic, &anchors, f.alpha, a.k, seed)?,
                            good_coverage(&policy, &critic, &anchors, f.alpha, a.k, seed)?,
                        ))
                    },
                    || sharpening_scan(&fin.prior, &policy, &critic, &anchors, a.k, seed),
                )
            },
            || {
                rayon::join(
                    || contraction_curves(&w, &policy, &fin.prior, demos, &pairs, a.contraction_chunks, seed),
                    || {
                        robustness_sweep(
                            &w,
                            &[("finetuned", &policy), ("prior", &fin.prior)],
                            &a.noise_probs,
                            a.noise_scale,
                            a.robustness_episodes,
                            seed,
                        )
                    },
                )
            },
        )
    });
    let (prior_report, finetuned_report) = cov?;
    let sharpening = sharp?;
    let contraction = contraction?;
    let robustness = robustness?;
    let dv: Vec<f32> = sharpening.iter().map(|r| r.delta_v).collect();
    let ndh: Vec<f32> = sharpening.iter().map(|r| -r.delta_h).collect();
    let out = AnalysisOutputs {
        prior_report,
        finetuned_report,
        sharpening_pearson: pearson(&dv, &ndh),
        sharpening,
        contraction,
        robustness,
    };
    write_analysis(dir, &out)?;
    manifest(dir, "analyze", cfg, seed, &[dir.join(files::DEMOS), dir.join(files::FINETUNED)])?;
    Ok(out)
}

fn write_analysis(dir: &Path, out: &AnalysisOutputs) -> Result<(), Error> {
    let mut t = Table::new(&["policy", "anchors", "alpha", "k", "good_cov", "bad_cov", "bad_ent"]);
    for (name, r) in [("prior", &out.prior_report), ("finetuned", &out.finetuned_report)] {
        t.push(vec![
            name.into(),
            r.anchors.to_string(),
            r.alpha.to_string(),
            r.k.to_string(),
            r.good_cov.to_string(),
            r.bad_cov.to_string(),
            opt_cell(r.bad_ent),
        ]);
    }
    t.write(&dir.join(files::FINETUNABILITY))?;

    let mut t = Table::new(&["anchor", "delta_v", "delta_h"]);
    for r in &out.sharpening {
        t.push(vec![r.anchor.to_string(), r.delta_v.to_string(), r.delta_h.to_string()]);
    }
    t.write(&dir.join(files::SHARPENING))?;

    let c = &out.contraction;
    let mut t = Table::new(&["t", "finetuned", "prior", "expert"]);
    for i in 0..=c.horizon_chunks {
        t.push(vec![i.to_string(), c.rl[i].to_string(), c.pre[i].to_string(), c.expert[i].to_string()]);
    }
    t.write(&dir.join(files::CONTRACTION))?;

    let mut header = vec!["noise_prob".to_string()];
    header.extend(out.robustness.iter().map(|r| r.name.clone()));
    let mut t = Table::new(&header);
    if let Some(first) = out.robustness.first() {
        for (i, p) in first.probs.iter().enumerate() {
            let mut row = vec![p.to_string()];
            row.extend(out.robustness.iter().map(|r| r.success[i].to_string()));
            t.push(row);
        }
    }
    t.write(&dir.join(files::ROBUSTNESS))
}

fn xy(t: &Table, x: &str, y: &str) -> Result<Vec<(f32, f32)>, Error> {
    Ok(t.numbers(x)?.into_iter().zip(t.numbers(y)?).collect())
}

fn chart_lines(t: &Table, x: &str, ys: &[&str]) -> Result<Vec<Series>, Error> {
    ys.iter().map(|&y| Ok(Series::new(y, xy(t, x, y)?))).collect()
}

/// Renders an SVG for every known CSV present in `dir`; returns the files
/// written.
pub fn run_report(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<(), Error> {
        let p = dir.join(name);
        std::fs::write(&p, svg)?;
        written.push(p);
        Ok(())
    };
    let load = |name: &str| -> Result<Option<Table>, Error> {
        let p = dir.join(name);
        if p.exists() {
            Table::read(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    if let Some(t) = load(files::PRETRAIN_METRICS)? {
        let s = chart_lines(&t, "epoch", &["train_loss", "val_loss"])?;
        emit("pretrain_loss.svg", line_chart("Flow-matching loss", "epoch", "loss", &s))?;
    }
    if let Some(t) = load(files::FINETUNE_METRICS)? {
        let s = chart_lines(&t, "env_steps", &["success_rate"])?;
        emit("finetune_success.svg", line_chart("Online finetuning", "env steps", "success rate", &s))?;
    }
    if let Some(t) = load(files::SHARPENING)? {
        let pts = t
            .numbers("delta_h")?
            .into_iter()
            .zip(t.numbers("delta_v")?)
            .map(|(dh, dv)| (-dh, dv))
            .collect();
        emit(
            "sharpening.svg",
            scatter_chart("Value gain vs entropy drop", "-delta H", "delta V", &[Series::new("anchors", pts)]),
        )?;
    }
    if let Some(t) = load(files::CONTRACTION)? {
        let s = chart_lines(&t, "t", &["finetuned", "prior", "expert"])?;
        emit("contraction.svg", line_chart("Contraction of nearby rollouts", "chunks", "c(t)", &s))?;
    }
    if let Some(t) = load(files::ROBUSTNESS)? {
        let names: Vec<&str> = t.header[1..].iter().map(String::as_str).collect();
        let s = chart_lines(&t, "noise_prob", &names)?;
        emit("robustness.svg", line_chart("Action-noise robustness", "noise probability", "success rate", &s))?;
    }
    if written.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no metrics CSVs in {}", dir.display()),
        )));
    }
    Ok(written)
}

/// Every stage for one seed: demos, pretraining, finetuning, evaluation,
/// analysis and report.
pub fn run_pipeline(cfg: &RunConfig, seed: u64, out: &Path) -> Result<PathBuf, Error> {
    let dir = seed_dir(out, seed);
    gen_demos(cfg, seed, &dir)?;
    run_pretrain(cfg, seed, &dir)?;
    run_finetune(cfg, seed, &dir, false)?;
    for c in [PolicyChoice::Prior, PolicyChoice::Finetuned] {
        run_evaluate(cfg, seed, &dir, c)?;
    }
    run_analyze(cfg, seed, &dir, analysis_threads())?;
    run_report(&dir)?;
    Ok(dir)
}
