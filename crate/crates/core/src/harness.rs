//! Seeded episodes, metrics, experiment grids and their CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::Policy;
use crate::environments::{Environment, ScenarioConfig, TraceStep, TrainerConfig, TrainerSpec, World};
use crate::error::{Error, Result};
use crate::history::InteractionRecord;
use crate::learners::{LearnerKind, LearnerSession, LearnerSettings};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::stats::{mean, std_dev, welch_t};

pub const EPISODE_CSV_HEADER: &str = "cell_id,scenario,learner,trainer,n_states,n_actions,seed,steps_used,rats_per_step,policy_gap,accum_distance,sigma_final";

pub const METRICS: [&str; 5] = [
    "steps_used",
    "rats_per_step",
    "policy_gap",
    "accum_distance",
    "sigma_final",
];

/// `sqrt(sum_s (learned(s) - optimal(s))^2)`.
pub fn policy_gap(learned: &Policy, optimal: &Policy) -> Result<f64> {
    if learned.len() != optimal.len() {
        return Err(Error::InvalidConfig(vec![format!(
            "policy lengths differ: {} vs {}",
            learned.len(),
            optimal.len()
        )]));
    }
    Ok(learned
        .actions()
        .iter()
        .zip(optimal.actions())
        .map(|(a, b)| (a.distance(*b) as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Sum of squared distances to the optimum per state block. Within each block
/// the trailing run of one repeated action counts only once.
pub fn accumulative_distance(trace: &[TraceStep], optimal: &Policy) -> f64 {
    let mut total = 0.0;
    for block in trace.chunk_by(|x, y| x.s == y.s) {
        let last = block.last().unwrap().a;
        let run = block.iter().rev().take_while(|st| st.a == last).count();
        let kept = block.len() - run + 1;
        let target = optimal.get(block[0].s);
        total += block[..kept]
            .iter()
            .map(|st| (st.a.distance(target) as f64).powi(2))
            .sum::<f64>();
    }
    total
}

/// Fraction of steps in which the rat was caught.
pub fn rats_per_step(trace: &[TraceStep]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::InvalidConfig(vec!["empty trace".into()]));
    }
    let mut caught = 0usize;
    for st in trace {
        match st.caught {
            Some(true) => caught += 1,
            Some(false) => {}
            None => {
                return Err(Error::InvalidConfig(vec![
                    "trace has no catch outcomes (not a dog scenario)".into(),
                ]))
            }
        }
    }
    Ok(caught as f64 / trace.len() as f64)
}

/// One episode: scenario, trainer and learner, plus an optional default seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
    pub learner: LearnerKind,
    #[serde(default)]
    pub settings: LearnerSettings,
    /// Selections of a simulated QUERY user, per state and step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_script: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EpisodeConfig {
    pub fn new(scenario: ScenarioConfig, trainer: TrainerConfig, learner: LearnerKind) -> Self {
        Self {
            scenario,
            trainer,
            learner,
            settings: LearnerSettings::default(),
            query_script: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Dog scenario only.
    pub rats_per_step: Option<f64>,
    pub policy_gap: f64,
    pub accumulative_distance: f64,
    pub steps_used: usize,
}

impl Metrics {
    pub fn compute(trace: &[TraceStep], learned: &Policy, optimal: &Policy) -> Result<Self> {
        let dog = trace.first().is_some_and(|s| s.caught.is_some());
        Ok(Self {
            rats_per_step: if dog { Some(rats_per_step(trace)?) } else { None },
            policy_gap: policy_gap(learned, optimal)?,
            accumulative_distance: accumulative_distance(trace, optimal),
            steps_used: trace.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub learner: LearnerKind,
    pub scenario: ScenarioConfig,
    pub world: World,
    pub trace: Vec<TraceStep>,
    pub final_policy: Policy,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_trace: Option<Vec<f64>>,
    /// Steps whose EM fixpoint hit the iteration cap.
    pub em_unconverged_steps: usize,
}

impl EpisodeResult {
    pub fn sigma_final(&self) -> Option<f64> {
        self.sigma_trace.as_ref().and_then(|t| t.last().copied())
    }

    pub fn recompute_metrics(&self) -> Result<Metrics> {
        Metrics::compute(&self.trace, &self.final_policy, &self.world.optimal_policy)
    }

    pub fn records(&self) -> Vec<InteractionRecord> {
        self.trace.iter().map(TraceStep::record).collect()
    }
}

/// Runs one full episode; the result depends only on `(config, seed)`.
pub fn run_episode(config: &EpisodeConfig, seed: u64) -> Result<EpisodeResult> {
    let scenario = &config.scenario;
    scenario.validate()?;
    let world = World::generate(
        scenario,
        &config.trainer,
        config.settings.epsilon,
        &mut stream_rng(seed, Stream::World),
    )?;
    let mut learner = LearnerSession::new(
        config.learner,
        scenario.n_states,
        scenario.n_actions,
        config.settings,
        &mut stream_rng(seed, Stream::Learner),
    )?;
    let mut env = Environment::new(
        scenario.clone(),
        world.clone(),
        stream_rng(seed, Stream::Environment),
        stream_rng(seed, Stream::Trainer),
    )?;
    if let Some(script) = &config.query_script {
        env = env.with_query_script(script.clone());
    }

    let mut trace = Vec::with_capacity(scenario.total_steps());
    let mut unconverged = 0;
    while !env.is_finished() {
        trace.push(env.step(&mut learner)?);
        if !learner.em_diagnostics().1 {
            unconverged += 1;
        }
    }
    let final_policy = learner.policy().clone();
    let metrics = Metrics::compute(&trace, &final_policy, &world.optimal_policy)?;
    Ok(EpisodeResult {
        seed,
        learner: config.learner,
        scenario: scenario.clone(),
        world,
        trace,
        final_policy,
        metrics,
        sigma_trace: learner.sigma_trace().map(<[f64]>::to_vec),
        em_unconverged_steps: unconverged,
    })
}

/// Per-step learner outputs obtained by feeding a record log back through a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub policies: Vec<Policy>,
    pub sigma_trace: Option<Vec<f64>>,
    pub final_policy: Policy,
}

/// Replays `records` through a fresh learner initialised from `seed`.
///
/// Each record's action must be the one the learner would have taken
/// (QUERY records are applied as selections first).
pub fn replay(
    records: &[InteractionRecord],
    learner: LearnerKind,
    n_states: usize,
    n_actions: usize,
    settings: LearnerSettings,
    seed: u64,
) -> Result<ReplayOutcome> {
    let mut session = LearnerSession::new(
        learner,
        n_states,
        n_actions,
        settings,
        &mut stream_rng(seed, Stream::Learner),
    )?;
    let mut policies = Vec::with_capacity(records.len());
    for rec in records {
        if matches!(learner, LearnerKind::Query) {
            session.query_select(rec.a)?;
        }
        let a = session.act(rec.s)?;
        if a != rec.a {
            return Err(Error::Protocol(format!(
                "replay diverged at t={}: log has a={} but the learner chose {}",
                rec.t, rec.a, a
            )));
        }
        session.observe_feedback(rec.s, rec.a, rec.f)?;
        policies.push(session.policy().clone());
    }
    Ok(ReplayOutcome {
        policies,
        sigma_trace: session.sigma_trace().map(<[f64]>::to_vec),
        final_policy: session.policy().clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
    pub learner: LearnerKind,
}

/// Cells x seeds. Episode `i` of cell `c` runs with seed
/// `derive_seed(&[master_seed, c, i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub cells: Vec<GridCell>,
    pub seeds: usize,
    #[serde(default)]
    pub settings: LearnerSettings,
    /// Metrics to compare pairwise between learners sharing scenario and trainer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<String>,
}

impl ExperimentGrid {
    /// Every learner kind crossed with one scenario and trainer.
    pub fn comparison(
        scenario: ScenarioConfig,
        trainer: TrainerConfig,
        learners: &[LearnerKind],
        seeds: usize,
    ) -> Self {
        Self {
            cells: learners
                .iter()
                .map(|&learner| GridCell {
                    scenario: scenario.clone(),
                    trainer: trainer.clone(),
                    learner,
                })
                .collect(),
            seeds,
            settings: LearnerSettings::default(),
            compare: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.seeds < 1 {
            errs.push("seeds must be >= 1".to_string());
        }
        for (i, c) in self.cells.iter().enumerate() {
            for v in c.scenario.violations() {
                errs.push(format!("cell {i}: {v}"));
            }
            if let Err(e) = c.learner.validate(&self.settings) {
                errs.push(format!("cell {i}: {e}"));
            }
        }
        for m in &self.compare {
            if !METRICS.contains(&m.as_str()) {
                errs.push(format!("unknown metric {m:?}"));
            }
        }
        if !self.compare.is_empty() {
            for (key, learners) in self.groups() {
                if learners.len() < 2 {
                    errs.push(format!("significance test requested but group {key} has one learner"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    fn groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut g: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.cells.iter().enumerate() {
            g.entry(group_key(&c.scenario, &c.trainer)).or_default().push(i);
        }
        g
    }
}

fn group_key(s: &ScenarioConfig, t: &TrainerConfig) -> String {
    format!(
        "{}/{}/S{}/K{}/T{}",
        s.kind.name(),
        t.name(),
        s.n_states,
        s.n_actions,
        s.steps_per_state
    )
}

/// One line of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub cell_id: usize,
    pub scenario: String,
    pub learner: String,
    pub trainer: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub seed: u64,
    pub steps_used: usize,
    pub rats_per_step: Option<f64>,
    pub policy_gap: f64,
    pub accum_distance: f64,
    pub sigma_final: Option<f64>,
}

impl EpisodeRow {
    pub fn from_result(cell_id: usize, trainer: &TrainerSpec, r: &EpisodeResult) -> Self {
        Self {
            cell_id,
            scenario: r.scenario.kind.name().into(),
            learner: r.learner.label(),
            trainer: trainer.name().into(),
            n_states: r.scenario.n_states,
            n_actions: r.scenario.n_actions,
            seed: r.seed,
            steps_used: r.metrics.steps_used,
            rats_per_step: r.metrics.rats_per_step,
            policy_gap: r.metrics.policy_gap,
            accum_distance: r.metrics.accumulative_distance,
            sigma_final: r.sigma_final(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "steps_used" => Some(self.steps_used as f64),
            "rats_per_step" => self.rats_per_step,
            "policy_gap" => Some(self.policy_gap),
            "accum_distance" => Some(self.accum_distance),
            "sigma_final" => self.sigma_final,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell_id: usize,
    pub scenario: String,
    pub learner: String,
    pub trainer: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub group: String,
    pub metric: String,
    pub learner_a: String,
    pub learner_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    pub episodes: Vec<EpisodeRow>,
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<ComparisonRow>,
}

impl GridOutput {
    /// Per-episode values of `metric` for `cell_id`.
    pub fn values(&self, cell_id: usize, metric: &str) -> Vec<f64> {
        self.episodes
            .iter()
            .filter(|r| r.cell_id == cell_id)
            .filter_map(|r| r.metric(metric))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("episodes.csv"), &self.episodes)?;
        write_csv(&dir.join("summary.csv"), &self.summary)?;
        if !self.comparisons.is_empty() {
            write_csv(&dir.join("comparisons.csv"), &self.comparisons)?;
        }
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// Per-cell mean, sample standard deviation and count of every metric, ordered by cell id.
pub fn summarize(rows: &[EpisodeRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<usize, Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        cells.entry(r.cell_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (cell_id, rs) in cells {
        let first = rs[0];
        for metric in METRICS {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.metric(metric)).collect();
            let (m, sd) = if vals.is_empty() {
                (None, None)
            } else {
                (Some(mean(&vals)), Some(std_dev(&vals)))
            };
            out.push(SummaryRow {
                cell_id,
                scenario: first.scenario.clone(),
                learner: first.learner.clone(),
                trainer: first.trainer.clone(),
                n_states: first.n_states,
                n_actions: first.n_actions,
                metric: metric.to_string(),
                mean: m,
                std: sd,
                count: vals.len(),
            });
        }
    }
    out
}

/// Runs every `(cell, seed)` episode on a pool of `workers` threads.
pub fn run_grid(grid: &ExperimentGrid, master_seed: u64, workers: usize) -> Result<GridOutput> {
    grid.validate()?;
    let jobs: Vec<(usize, usize)> = (0..grid.cells.len())
        .flat_map(|c| (0..grid.seeds).map(move |i| (c, i)))
        .collect();
    let run = |&(cell_id, seed_index): &(usize, usize)| -> Result<EpisodeRow> {
        let cell = &grid.cells[cell_id];
        let mut config = EpisodeConfig::new(cell.scenario.clone(), cell.trainer.clone(), cell.learner);
        config.settings = grid.settings;
        let seed = derive_seed(&[master_seed, cell_id as u64, seed_index as u64]);
        let result = run_episode(&config, seed)?;
        Ok(EpisodeRow::from_result(cell_id, &result.world.trainer, &result))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(vec![format!("thread pool: {e}")]))?;
    let episodes = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let summary = summarize(&episodes);
    let mut comparisons = Vec::new();
    for (key, members) in grid.groups() {
        for metric in &grid.compare {
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    let va: Vec<f64> = episodes.iter().filter(|r| r.cell_id == a).filter_map(|r| r.metric(metric)).collect();
                    let vb: Vec<f64> = episodes.iter().filter(|r| r.cell_id == b).filter_map(|r| r.metric(metric)).collect();
                    if va.is_empty() || vb.is_empty() {
                        continue;
                    }
                    let test = welch_t(&va, &vb).ok();
                    comparisons.push(ComparisonRow {
                        group: key.clone(),
                        metric: metric.clone(),
                        learner_a: grid.cells[a].learner.label(),
                        learner_b: grid.cells[b].learner.label(),
                        mean_a: mean(&va),
                        mean_b: mean(&vb),
                        t: test.map(|r| r.t),
                        p: test.map(|r| r.p),
                    });
                }
            }
        }
    }
    Ok(GridOutput {
        episodes,
        summary,
        comparisons,
    })
}

/// Companion metadata written next to an episode record log; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogMeta {
    pub scenario: ScenarioConfig,
    pub learner: LearnerKind,
    #[serde(default)]
    pub settings: LearnerSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_policy: Option<Policy>,
}

/// Path of the metadata file for record log `log`: `x.jsonl` -> `x.meta.json`.
pub fn meta_path(log: &Path) -> std::path::PathBuf {
    log.with_extension("meta.json")
}

pub fn write_episode_log(log: &Path, records: &[InteractionRecord], meta: &EpisodeLogMeta) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = log.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json("record", e))?;
        buf.write_all(b"\n").map_err(|e| Error::io(log, e))?;
    }
    fs::write(log, buf).map_err(|e| Error::io(log, e))?;
    let meta_file = meta_path(log);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::json("episode metadata", e))?;
    fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))
}

pub fn read_episode_log(log: &Path) -> Result<(Vec<InteractionRecord>, Option<EpisodeLogMeta>)> {
    let file = fs::File::open(log).map_err(|e| Error::io(log, e))?;
    let records = crate::history::read_jsonl(std::io::BufReader::new(file))?;
    let meta_file = meta_path(log);
    let meta = match fs::read_to_string(&meta_file) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .map_err(|e| Error::json(meta_file.display().to_string(), e))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&meta_file, e)),
    };
    Ok((records, meta))
}
