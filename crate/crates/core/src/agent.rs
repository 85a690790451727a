//! The perception → planning → action → learning cycle for action-unaware
//! and action-aware agents, and the multi-run experiment driver.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{select_action, SelectionMode};
use crate::environment::{build_layout, GridEnv, LayoutName};
use crate::error::{AifError, Result};
use crate::learning::{update_alpha, update_beta, EpisodeEvidence, WeightedTrack};
use crate::model::{init_model, Model, ModelSpec};
use crate::perception::{infer_track, marginal_fe, track_free_energy, BeliefEnsemble, FeRecord, UpdateRule};
use crate::planning::{policy_posterior_masked, total_efe, EfeBreakdown, PolicyPosterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Infers its own past actions: every policy carries a full belief track.
    Unaware,
    /// Knows its executed actions: shared past track plus prefix pruning.
    Aware,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unaware => "unaware",
            Self::Aware => "aware",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = AifError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unaware" => Ok(Self::Unaware),
            "aware" => Ok(Self::Aware),
            other => Err(AifError::Config(format!("unknown agent kind `{other}` (valid: unaware, aware)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSettings {
    pub kind: AgentKind,
    /// VMP sweeps per environment step.
    pub inf_steps: usize,
    pub selection: SelectionMode,
    pub rule: UpdateRule,
}

impl AgentSettings {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            inf_steps: 10,
            selection: SelectionMode::Kd,
            rule: UpdateRule::FixedPoint,
        }
    }
}

/// Everything captured at one step, after planning and before acting.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: usize,
    pub fe: FeRecord,
    /// Per-policy expected free energy; empty at the terminal step.
    pub efe: Vec<EfeBreakdown>,
    pub q_pi: Vec<f64>,
    /// `None` at the terminal step.
    pub action: Option<usize>,
    /// Policies not pruned at this step.
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    /// True tiles visited, for diagnostics only.
    pub tiles: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub alpha_mass_delta: f64,
    pub beta_mass_delta: f64,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub settings: AgentSettings,
    pub model: Model,
    pub ensemble: BeliefEnsemble,
    pub posterior: Option<PolicyPosterior>,
    pub executed_actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub episode_index: usize,
    active: Vec<bool>,
    rng: ChaCha8Rng,
}

impl AgentState {
    pub fn new(model: Model, settings: AgentSettings, seed: u64) -> Self {
        let ensemble = BeliefEnsemble::new(model.policies.len(), model.num_steps, model.num_states());
        Self {
            active: vec![true; model.policies.len()],
            settings,
            model,
            ensemble,
            posterior: None,
            executed_actions: Vec::new(),
            observations: Vec::new(),
            episode_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Observations received so far in the current episode.
    pub fn tau(&self) -> usize {
        self.observations.len()
    }

    /// Which policies are still consistent with the executed actions.
    pub fn active_policies(&self) -> &[bool] {
        &self.active
    }

    fn update_active(&mut self) {
        if self.settings.kind == AgentKind::Unaware {
            return;
        }
        let prefix = &self.executed_actions;
        for (flag, policy) in self.active.iter_mut().zip(&self.model.policies) {
            *flag = policy.actions()[..prefix.len()] == prefix[..];
        }
    }

    /// Action sequence each policy's track is evaluated under.
    fn effective_sequences(&self) -> Vec<Vec<usize>> {
        let policies = &self.model.policies;
        match self.settings.kind {
            AgentKind::Unaware => policies.iter().map(|p| p.actions().to_vec()).collect(),
            AgentKind::Aware => {
                let done = self.executed_actions.len();
                policies
                    .iter()
                    .map(|p| {
                        let mut seq = self.executed_actions.clone();
                        seq.extend_from_slice(&p.actions()[done..]);
                        seq
                    })
                    .collect()
            }
        }
    }

    /// Perceptual phase; returns F per policy and each policy's action sequence.
    fn perceive(&mut self) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
        let AgentSettings { inf_steps, rule, .. } = self.settings;
        let obs = &self.observations;
        let model = &self.model;
        let seqs = self.effective_sequences();
        match self.settings.kind {
            AgentKind::Unaware => {
                let fes = self
                    .ensemble
                    .tracks
                    .par_iter_mut()
                    .zip(seqs.par_iter())
                    .map(|(track, seq)| {
                        infer_track(track, seq, obs, model, 0, inf_steps, rule)?;
                        track_free_energy(track.view(), seq, obs, model)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((fes, seqs))
            }
            AgentKind::Aware => {
                let tau = obs.len();
                let mut past = self.ensemble.past.slice(s![..tau, ..]).to_owned();
                infer_track(&mut past, &self.executed_actions, obs, model, 0, inf_steps, rule)?;
                self.ensemble.past.slice_mut(s![..tau, ..]).assign(&past);

                // one evaluation per distinct sequence, warm-started from a survivor
                let mut unique: BTreeMap<&[usize], usize> = BTreeMap::new();
                let order = (0..seqs.len())
                    .filter(|&k| self.active[k])
                    .chain((0..seqs.len()).filter(|&k| !self.active[k]));
                for k in order {
                    unique.entry(seqs[k].as_slice()).or_insert(k);
                }
                let jobs: Vec<(&[usize], usize)> = unique.into_iter().collect();
                let fixed = tau - 1;
                let results = jobs
                    .par_iter()
                    .map(|&(seq, rep)| {
                        let mut track = self.ensemble.tracks[rep].clone();
                        track.slice_mut(s![..fixed, ..]).assign(&past.slice(s![..fixed, ..]));
                        infer_track(&mut track, seq, obs, model, fixed, inf_steps, rule)?;
                        let fe = track_free_energy(track.view(), seq, obs, model)?;
                        Ok((seq.to_vec(), (track, fe)))
                    })
                    .collect::<Result<BTreeMap<Vec<usize>, (Array2<f64>, f64)>>>()?;
                let mut fes = Vec::with_capacity(seqs.len());
                for (k, seq) in seqs.iter().enumerate() {
                    let (track, fe) = &results[seq];
                    self.ensemble.tracks[k].assign(track);
                    fes.push(*fe);
                }
                Ok((fes, seqs))
            }
        }
    }

    fn record(&self, fes: Vec<f64>, efe: Vec<EfeBreakdown>, post: &PolicyPosterior, action: Option<usize>) -> Result<StepRecord> {
        let (marginal, kl_b, kl_a) = marginal_fe(&fes, &post.q_pi, &self.model, true)?;
        Ok(StepRecord {
            observation: *self.observations.last().expect("at least one observation"),
            fe: FeRecord {
                policy_fes: fes,
                marginal_fe: marginal,
                kl_b,
                kl_a,
                step: self.tau(),
            },
            efe,
            q_pi: post.q_pi.as_slice().to_vec(),
            action,
            survivors: self.active.iter().filter(|&&a| a).count(),
        })
    }

    /// Perceive, plan and act on a new observation. Returns the chosen action.
    pub fn agent_step(&mut self, observation: usize) -> Result<(usize, StepRecord)> {
        let t_max = self.model.num_steps;
        if self.tau() + 1 >= t_max {
            return Err(AifError::BadTimeStep {
                t: self.tau() + 1,
                reason: "no planning at the terminal step",
            });
        }
        self.observations.push(observation);
        self.update_active();
        let tau = self.tau();
        let (fes, seqs) = self.perceive()?;
        let efe = seqs
            .par_iter()
            .enumerate()
            .map(|(k, seq)| total_efe(self.ensemble.tracks[k].view(), seq, &self.model, tau))
            .collect::<Result<Vec<_>>>()?;
        let g: Vec<f64> = efe.iter().map(|e| e.total).collect();
        let post = policy_posterior_masked(&g, &fes, &self.active)?;
        let decision = select_action(
            &post.q_pi,
            &self.model.policies,
            self.model.num_actions(),
            tau - 1,
            self.settings.selection,
            &mut self.rng,
        )?;
        let record = self.record(fes, efe, &post, Some(decision.action))?;
        self.executed_actions.push(decision.action);
        self.posterior = Some(post);
        Ok((decision.action, record))
    }

    /// Perceptual update on the last observation of the episode; no planning.
    pub fn final_update(&mut self, observation: usize) -> Result<StepRecord> {
        if self.tau() + 1 != self.model.num_steps {
            return Err(AifError::BadTimeStep {
                t: self.tau() + 1,
                reason: "final update must receive the last observation",
            });
        }
        self.observations.push(observation);
        self.update_active();
        let (fes, _) = self.perceive()?;
        let zeros = vec![0.0; fes.len()];
        let post = policy_posterior_masked(&zeros, &fes, &self.active)?;
        let record = self.record(fes, Vec::new(), &post, None)?;
        self.posterior = Some(post);
        Ok(record)
    }

    fn evidence(&self) -> Result<EpisodeEvidence> {
        let post = self.posterior.as_ref().ok_or(AifError::NoPolicies)?;
        let tracks = match self.settings.kind {
            AgentKind::Unaware => self
                .model
                .policies
                .iter()
                .zip(&self.ensemble.tracks)
                .zip(post.q_pi.as_slice())
                .filter(|(_, &q)| q > 0.0)
                .map(|((p, track), &q)| WeightedTrack {
                    actions: p.actions().to_vec(),
                    weight: q,
                    beliefs: track.clone(),
                })
                .collect(),
            AgentKind::Aware => {
                let k = self.active.iter().position(|&a| a).ok_or(AifError::NoPolicies)?;
                vec![WeightedTrack {
                    actions: self.executed_actions.clone(),
                    weight: 1.0,
                    beliefs: self.ensemble.tracks[k].clone(),
                }]
            }
        };
        Ok(EpisodeEvidence {
            observations: self.observations.clone(),
            tracks,
        })
    }

    /// Learning phase. Returns the Dirichlet mass added to alpha and beta.
    pub fn learn(&mut self) -> Result<(f64, f64)> {
        let evidence = self.evidence()?;
        let mut alpha_delta = 0.0;
        if let Some(alpha) = self.model.alpha.as_mut() {
            let before = alpha.post.total();
            update_alpha(&mut alpha.post, &evidence)?;
            alpha_delta = alpha.post.total() - before;
        }
        let mut beta_delta = 0.0;
        if self.model.learn_b {
            let before: f64 = self.model.beta_post.iter().map(|b| b.total()).sum();
            update_beta(&mut self.model.beta_post, &evidence)?;
            beta_delta = self.model.beta_post.iter().map(|b| b.total()).sum::<f64>() - before;
        }
        self.model.refresh()?;
        self.model.check_invariants()?;
        Ok((alpha_delta, beta_delta))
    }

    /// Uniform beliefs, full policy set, empty history.
    pub fn reset_episode(&mut self) {
        self.ensemble.reset();
        self.active.fill(true);
        self.executed_actions.clear();
        self.observations.clear();
        self.posterior = None;
        self.episode_index += 1;
    }
}

/// Plays one episode, learns from it and resets the agent.
pub fn run_episode(agent: &mut AgentState, env: &mut GridEnv, env_seed: u64) -> Result<EpisodeTrace> {
    let t_max = agent.model.num_steps;
    if env.num_steps() != t_max {
        return Err(AifError::Config(format!(
            "environment runs {} steps but the agent plans for {t_max}",
            env.num_steps()
        )));
    }
    let (mut tile, mut obs) = env.reset(env_seed);
    let mut tiles = vec![tile];
    let mut steps = Vec::with_capacity(t_max);
    for _ in 1..t_max {
        let (action, record) = agent.agent_step(obs)?;
        steps.push(record);
        let out = env.step(action)?;
        tile = out.tile;
        obs = out.observation;
        tiles.push(tile);
    }
    steps.push(agent.final_update(obs)?);
    let observations = agent.observations.clone();
    let actions = agent.executed_actions.clone();
    let (alpha_mass_delta, beta_mass_delta) = agent.learn()?;
    agent.reset_episode();
    Ok(EpisodeTrace {
        observations,
        actions,
        success: tile == env.layout().goal_tile,
        tiles,
        steps,
        alpha_mass_delta,
        beta_mass_delta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub layout: LayoutName,
    pub model: ModelSpec,
    pub agent: AgentSettings,
    pub num_runs: usize,
    pub num_episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub episodes: Vec<EpisodeTrace>,
    pub initial_model: Model,
    pub final_model: Model,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub settings: ExperimentSettings,
    pub runs: Vec<RunResult>,
}

impl Experiment {
    /// Fraction of runs that ended on the goal, per episode.
    pub fn success_rate(&self) -> Vec<f64> {
        self.mean_over_runs(|ep| if ep.success { 1.0 } else { 0.0 })
    }

    /// Per-episode mean over runs of a scalar episode statistic.
    pub fn mean_over_runs(&self, f: impl Fn(&EpisodeTrace) -> f64) -> Vec<f64> {
        let n = self.runs.len() as f64;
        (0..self.settings.num_episodes)
            .map(|e| self.runs.iter().map(|r| f(&r.episodes[e])).sum::<f64>() / n)
            .collect()
    }
}

fn run_single(settings: &ExperimentSettings, env: &GridEnv, run: usize) -> Result<RunResult> {
    let seed = settings.seed.wrapping_add(run as u64);
    let model = init_model(env.layout(), &env.maps().emission, &settings.model, seed)?;
    let initial_model = model.clone();
    let mut agent = AgentState::new(model, settings.agent, seed);
    let mut env = env.clone();
    let mut env_seeds = ChaCha8Rng::seed_from_u64(seed);
    let episodes = (0..settings.num_episodes)
        .map(|_| run_episode(&mut agent, &mut env, env_seeds.random()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult {
        run,
        seed,
        episodes,
        initial_model,
        final_model: agent.model,
    })
}

/// Trains `num_runs` independent agents (seeds `seed + run`) in parallel.
pub fn run_experiment(settings: &ExperimentSettings) -> Result<Experiment> {
    let (layout, maps) = build_layout(settings.layout);
    let env = GridEnv::new(Arc::new(layout), Arc::new(maps), settings.model.num_steps);
    let runs = (0..settings.num_runs)
        .into_par_iter()
        .map(|run| run_single(settings, &env, run))
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment {
        settings: settings.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::build_layout;
    use crate::model::PrefLoc;

    fn spec(layout: LayoutName) -> ModelSpec {
        let (num_steps, num_policies) = match layout {
            LayoutName::Tmaze4 => (4, 64),
            LayoutName::Gridw9 => (5, 256),
        };
        ModelSpec {
            num_steps,
            num_policies,
            learn_a: false,
            learn_b: true,
            pref_loc: PrefLoc::AllGoal,
            pref_precision: 4.0,
        }
    }

    fn setup(kind: AgentKind, seed: u64) -> (AgentState, GridEnv) {
        let (layout, maps) = build_layout(LayoutName::Tmaze4);
        let model = init_model(&layout, &maps.emission, &spec(LayoutName::Tmaze4), seed).unwrap();
        let env = GridEnv::new(Arc::new(layout), Arc::new(maps), 4);
        (AgentState::new(model, AgentSettings::new(kind), seed), env)
    }

    #[test]
    fn genesis_posteriors_agree() {
        let (mut unaware, env) = setup(AgentKind::Unaware, 3);
        let (mut aware, _) = setup(AgentKind::Aware, 3);
        let obs = env.layout().start_tile;
        let (_, a) = unaware.agent_step(obs).unwrap();
        let (_, b) = aware.agent_step(obs).unwrap();
        assert_eq!(a.q_pi, b.q_pi);
    }

    #[test]
    fn aware_prefix_pruning() {
        let (mut agent, _) = setup(AgentKind::Aware, 1);
        agent.agent_step(4).unwrap();
        agent.executed_actions = vec![3];
        let (_, rec) = agent.agent_step(3).unwrap();
        assert_eq!(rec.survivors, 16);
        let mass: f64 = rec.q_pi.iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        for (k, p) in agent.model.policies.iter().enumerate() {
            if p.action_at(0) != 3 {
                assert_eq!(rec.q_pi[k], 0.0);
            }
        }
    }

    #[test]
    fn unaware_keeps_all_policies() {
        let (mut agent, mut env) = setup(AgentKind::Unaware, 2);
        let trace = run_episode(&mut agent, &mut env, 0).unwrap();
        assert!(trace.steps.iter().all(|s| s.survivors == 64));
    }

    #[test]
    fn trace_shape_and_conservation() {
        for kind in [AgentKind::Unaware, AgentKind::Aware] {
            let (mut agent, mut env) = setup(kind, 5);
            let trace = run_episode(&mut agent, &mut env, 9).unwrap();
            assert_eq!(trace.observations.len(), 4);
            assert_eq!(trace.actions.len(), 3);
            assert_eq!(trace.steps.len(), 4);
            assert!(trace.steps[3].efe.is_empty() && trace.steps[3].action.is_none());
            assert!((trace.beta_mass_delta - 3.0).abs() < 1e-9);
            assert_eq!(agent.tau(), 0);
            assert!(agent.active_policies().iter().all(|&a| a));
        }
    }

    #[test]
    fn aware_final_free_energies_coincide() {
        let (mut agent, mut env) = setup(AgentKind::Aware, 8);
        let (_, obs) = env.reset(1);
        let mut obs = obs;
        for _ in 0..3 {
            let (a, _) = agent.agent_step(obs).unwrap();
            obs = env.step(a).unwrap().observation;
        }
        let rec = agent.final_update(obs).unwrap();
        let f0 = rec.fe.policy_fes[0];
        assert!(rec.fe.policy_fes.iter().all(|f| (f - f0).abs() < 1e-9));
    }

    #[test]
    fn terminal_step_rejects_planning() {
        let (mut agent, _) = setup(AgentKind::Unaware, 0);
        for o in [4, 3, 2] {
            agent.agent_step(o).unwrap();
        }
        assert!(agent.agent_step(1).is_err());
    }

    #[test]
    fn known_transitions_succeed_immediately() {
        for kind in [AgentKind::Unaware, AgentKind::Aware] {
            let (mut agent, mut env) = setup(kind, 11);
            let truth = env.maps().transitions.clone();
            agent.model.inject_transitions(&truth, 1e6).unwrap();
            let trace = run_episode(&mut agent, &mut env, 0).unwrap();
            assert_eq!(trace.actions, vec![3, 3, 2], "{kind}");
            assert!(trace.success);
        }
    }

    #[test]
    fn mismatched_horizon_is_rejected() {
        let (mut agent, _) = setup(AgentKind::Unaware, 0);
        let (layout, maps) = build_layout(LayoutName::Tmaze4);
        let mut env = GridEnv::new(Arc::new(layout), Arc::new(maps), 5);
        assert!(run_episode(&mut agent, &mut env, 0).is_err());
    }

    #[test]
    fn experiments_are_deterministic() {
        let settings = ExperimentSettings {
            layout: LayoutName::Tmaze4,
            model: spec(LayoutName::Tmaze4),
            agent: AgentSettings::new(AgentKind::Aware),
            num_runs: 2,
            num_episodes: 3,
            seed: 7,
        };
        let a = run_experiment(&settings).unwrap();
        let b = run_experiment(&settings).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.episodes, rb.episodes);
        }
        assert_eq!(a.success_rate().len(), 3);
        let single = ExperimentSettings { num_runs: 1, ..settings };
        let one = run_experiment(&single).unwrap();
        let rate = one.success_rate();
        for (e, ep) in one.runs[0].episodes.iter().enumerate() {
            assert_eq!(rate[e], if ep.success { 1.0 } else { 0.0 });
        }
    }
}
