//! The runtime navigation loop: observation history, action selection and
//! goal detection.
//!
//! Action selection and goal detection are strategies chosen by name from a
//! [`StrategyRegistry`]. The built-in action sources are `learned` (the
//! policy network) and `expert` (planned and discretized commands); the
//! built-in goal detectors are `learned` (goal checker with a confirmation
//! rotation) and `gps` (true distance to the goal position).

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{Action, DiscretizeParams, FORWARD_METERS};
use crate::gridworld::{Footprint, GridMap, Pose};
use crate::models::{
    expert_commands, Autoencoder, Embedding, GoalCheckInput, GoalChecker, ModelError, Policy,
    PolicyInput,
};
use crate::plan::Costmap;
use crate::render::{capture_panorama, render, CameraParams};
use crate::sim::{transition, AgentState, SimError, TraceRecord};

/// Past observations kept besides the current one.
pub const HISTORY_LEN: usize = 4;
/// Left turns in a confirmation rotation (10 degrees each).
pub const CONFIRM_TURNS: usize = 36;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("strategy {strategy:?} needs a {component}")]
    MissingComponent {
        strategy: String,
        component: &'static str,
    },
    #[error("unknown {kind} {name:?}; registered: {known}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
}

/// The current embedding plus the last [`HISTORY_LEN`] ones, oldest first.
/// Before enough steps have elapsed the past slots repeat the first embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    past: VecDeque<Embedding>,
    current: Embedding,
}

impl HistoryBuffer {
    pub fn new(first: Embedding) -> Self {
        Self {
            past: std::iter::repeat_n(first.clone(), HISTORY_LEN).collect(),
            current: first,
        }
    }

    pub fn push(&mut self, embedding: Embedding) {
        self.past.pop_front();
        let prev = std::mem::replace(&mut self.current, embedding);
        self.past.push_back(prev);
    }

    pub fn past(&self) -> impl Iterator<Item = &[f32]> {
        self.past.iter().map(Vec::as_slice)
    }

    pub fn current(&self) -> &[f32] {
        &self.current
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GoalMode {
    Learned,
    Gps { tolerance: f64 },
}

impl GoalMode {
    pub fn detector_name(&self) -> &'static str {
        match self {
            GoalMode::Learned => "learned",
            GoalMode::Gps { .. } => "gps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_steps: usize,
    pub belief_trigger: f64,
    pub confirm_avg_threshold: f64,
    /// Steps after a failed confirmation during which beliefs cannot trigger another.
    pub confirm_cooldown: usize,
    pub goal_mode: GoalMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            belief_trigger: 0.99,
            confirm_avg_threshold: 0.9,
            confirm_cooldown: 20,
            goal_mode: GoalMode::Learned,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0 < self.confirm_avg_threshold
            && self.confirm_avg_threshold < self.belief_trigger
            && self.belief_trigger <= 1.0)
        {
            return Err(PipelineError::Config(format!(
                "need 0 < confirm threshold ({}) < belief trigger ({}) <= 1",
                self.confirm_avg_threshold, self.belief_trigger
            )));
        }
        if self.max_steps == 0 {
            return Err(PipelineError::Config("max_steps must be positive".into()));
        }
        if let GoalMode::Gps { tolerance } = self.goal_mode {
            if !(tolerance > 0.0) {
                return Err(PipelineError::Config(format!(
                    "gps tolerance must be positive, got {tolerance}"
                )));
            }
        }
        Ok(())
    }
}

/// The navigation target: where the panorama was captured and, when an
/// encoder is in use, its eight view embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub pose: Pose,
    pub embeddings: Option<Vec<Embedding>>,
}

impl GoalSpec {
    pub fn capture(
        map: &GridMap,
        cam: &CameraParams,
        encoder: Option<&Autoencoder>,
        pose: &Pose,
    ) -> Result<Self, PipelineError> {
        let embeddings = match encoder {
            Some(enc) => Some(enc.encode_batch(&capture_panorama(map, pose, cam).images)?),
            None => None,
        };
        Ok(Self {
            pose: *pose,
            embeddings,
        })
    }
}

/// What a strategy sees at each decision.
pub struct StepContext<'a> {
    pub step: usize,
    pub pose: &'a Pose,
    pub goal: &'a GoalSpec,
    /// Present when the episode runs with an encoder.
    pub history: Option<&'a HistoryBuffer>,
}

pub trait ActionSource: Send {
    fn name(&self) -> &str;
    /// Next motion; `Done` ends the episode.
    fn next_action(&mut self, ctx: &StepContext) -> Result<Action, PipelineError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalSignal {
    /// The detector is certain the goal is reached.
    Reached,
    /// Probability of being at the goal.
    Belief(f64),
    NotReached,
}

pub trait GoalDetector: Send {
    fn name(&self) -> &str;
    fn evaluate(&mut self, ctx: &StepContext) -> Result<GoalSignal, PipelineError>;
}

/// Shared read-only state the strategies are built from.
pub struct Components<'a> {
    pub map: &'a GridMap,
    pub footprint: Footprint,
    pub costmap: &'a Costmap,
    pub discretize: DiscretizeParams,
    pub pipeline: &'a PipelineConfig,
    pub policy: Option<&'a Policy>,
    pub goal_checker: Option<&'a GoalChecker>,
}

pub type ActionSourceFactory =
    for<'a> fn(&Components<'a>) -> Result<Box<dyn ActionSource + 'a>, PipelineError>;
pub type GoalDetectorFactory =
    for<'a> fn(&Components<'a>) -> Result<Box<dyn GoalDetector + 'a>, PipelineError>;

/// Named strategy constructors.
#[derive(Clone)]
pub struct StrategyRegistry {
    action_sources: BTreeMap<String, ActionSourceFactory>,
    goal_detectors: BTreeMap<String, GoalDetectorFactory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register_action_source("learned", learned_policy);
        r.register_action_source("expert", expert_actions);
        r.register_goal_detector("learned", learned_goal_detector);
        r.register_goal_detector("gps", gps_goal_detector);
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            action_sources: BTreeMap::new(),
            goal_detectors: BTreeMap::new(),
        }
    }

    pub fn register_action_source(&mut self, name: &str, factory: ActionSourceFactory) {
        self.action_sources.insert(name.into(), factory);
    }

    pub fn register_goal_detector(&mut self, name: &str, factory: GoalDetectorFactory) {
        self.goal_detectors.insert(name.into(), factory);
    }

    pub fn action_source_names(&self) -> Vec<&str> {
        self.action_sources.keys().map(String::as_str).collect()
    }

    pub fn goal_detector_names(&self) -> Vec<&str> {
        self.goal_detectors.keys().map(String::as_str).collect()
    }

    pub fn action_source<'a>(
        &self,
        name: &str,
        c: &Components<'a>,
    ) -> Result<Box<dyn ActionSource + 'a>, PipelineError> {
        let f = self
            .action_sources
            .get(name)
            .ok_or_else(|| PipelineError::UnknownStrategy {
                kind: "action source",
                name: name.into(),
                known: self.action_source_names().join(", "),
            })?;
        f(c)
    }

    pub fn goal_detector<'a>(
        &self,
        name: &str,
        c: &Components<'a>,
    ) -> Result<Box<dyn GoalDetector + 'a>, PipelineError> {
        let f = self
            .goal_detectors
            .get(name)
            .ok_or_else(|| PipelineError::UnknownStrategy {
                kind: "goal detector",
                name: name.into(),
                known: self.goal_detector_names().join(", "),
            })?;
        f(c)
    }
}

fn missing(strategy: &str, component: &'static str) -> PipelineError {
    PipelineError::MissingComponent {
        strategy: strategy.into(),
        component,
    }
}

fn learned_policy<'a>(c: &Components<'a>) -> Result<Box<dyn ActionSource + 'a>, PipelineError> {
    Ok(Box::new(LearnedPolicy::new(
        c.policy.ok_or_else(|| missing("learned", "policy"))?,
    )))
}

fn expert_actions<'a>(c: &Components<'a>) -> Result<Box<dyn ActionSource + 'a>, PipelineError> {
    Ok(Box::new(ExpertActions::new(
        c.map,
        c.footprint,
        c.costmap,
        c.discretize,
    )))
}

fn learned_goal_detector<'a>(
    c: &Components<'a>,
) -> Result<Box<dyn GoalDetector + 'a>, PipelineError> {
    Ok(Box::new(LearnedGoalDetector::new(
        c.goal_checker
            .ok_or_else(|| missing("learned", "goal checker"))?,
    )))
}

fn gps_goal_detector<'a>(c: &Components<'a>) -> Result<Box<dyn GoalDetector + 'a>, PipelineError> {
    match c.pipeline.goal_mode {
        GoalMode::Gps { tolerance } => Ok(Box::new(GpsGoalDetector::new(tolerance))),
        GoalMode::Learned => Err(PipelineError::Config(
            "the gps detector needs a gps goal mode".into(),
        )),
    }
}

fn policy_input(ctx: &StepContext, strategy: &str) -> Result<PolicyInput, PipelineError> {
    let history = ctx.history.ok_or_else(|| missing(strategy, "encoder"))?;
    let goal = ctx
        .goal
        .embeddings
        .as_deref()
        .ok_or_else(|| missing(strategy, "goal embedding"))?;
    Ok(PolicyInput::assemble(history, goal)?)
}

/// Argmax of the policy network.
pub struct LearnedPolicy<'a> {
    policy: &'a Policy,
}

impl<'a> LearnedPolicy<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        Self { policy }
    }
}

impl ActionSource for LearnedPolicy<'_> {
    fn name(&self) -> &str {
        "learned"
    }

    fn next_action(&mut self, ctx: &StepContext) -> Result<Action, PipelineError> {
        Ok(self.policy.act(&policy_input(ctx, "learned")?)?.0)
    }
}

/// Replays the expert command sequence planned from the first pose it sees.
/// Emits `Done` when planning fails or the commands run out.
pub struct ExpertActions<'a> {
    map: &'a GridMap,
    footprint: Footprint,
    costmap: &'a Costmap,
    params: DiscretizeParams,
    plan: Option<VecDeque<Action>>,
}

impl<'a> ExpertActions<'a> {
    pub fn new(
        map: &'a GridMap,
        footprint: Footprint,
        costmap: &'a Costmap,
        params: DiscretizeParams,
    ) -> Self {
        Self {
            map,
            footprint,
            costmap,
            params,
            plan: None,
        }
    }
}

impl ActionSource for ExpertActions<'_> {
    fn name(&self) -> &str {
        "expert"
    }

    fn next_action(&mut self, ctx: &StepContext) -> Result<Action, PipelineError> {
        let plan = self.plan.get_or_insert_with(|| {
            expert_commands(
                self.map,
                &self.footprint,
                self.costmap,
                ctx.pose,
                &ctx.goal.pose,
                &self.params,
            )
            .map(|p| p.actions.into())
            .unwrap_or_default()
        });
        Ok(plan.pop_front().unwrap_or(Action::Done))
    }
}

/// Goal-checker probability for the current observation.
pub struct LearnedGoalDetector<'a> {
    checker: &'a GoalChecker,
}

impl<'a> LearnedGoalDetector<'a> {
    pub fn new(checker: &'a GoalChecker) -> Self {
        Self { checker }
    }
}

impl GoalDetector for LearnedGoalDetector<'_> {
    fn name(&self) -> &str {
        "learned"
    }

    fn evaluate(&mut self, ctx: &StepContext) -> Result<GoalSignal, PipelineError> {
        let history = ctx.history.ok_or_else(|| missing("learned", "encoder"))?;
        let goal = ctx
            .goal
            .embeddings
            .clone()
            .ok_or_else(|| missing("learned", "goal embedding"))?;
        let p = self.checker.predict(&GoalCheckInput {
            current: history.current().to_vec(),
            goal,
        })?;
        Ok(GoalSignal::Belief(p as f64))
    }
}

/// Reached when the true position is within `tolerance` of the goal.
pub struct GpsGoalDetector {
    tolerance: f64,
}

impl GpsGoalDetector {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance }
    }
}

impl GoalDetector for GpsGoalDetector {
    fn name(&self) -> &str {
        "gps"
    }

    fn evaluate(&mut self, ctx: &StepContext) -> Result<GoalSignal, PipelineError> {
        Ok(if ctx.pose.distance_to(&ctx.goal.pose) <= self.tolerance {
            GoalSignal::Reached
        } else {
            GoalSignal::NotReached
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmOutcome {
    pub passed: bool,
    pub probabilities: Vec<f64>,
    /// The rotation was cut short by the caller (step budget).
    pub aborted: bool,
    pub final_pose: Pose,
}

impl ConfirmOutcome {
    pub fn mean(&self) -> f64 {
        if self.probabilities.is_empty() {
            0.0
        } else {
            self.probabilities.iter().sum::<f64>() / self.probabilities.len() as f64
        }
    }
}

/// Turns left [`CONFIRM_TURNS`] times, calling `probe` at each new pose.
/// Passes iff the mean probability exceeds `threshold`. A probe returning
/// `None` aborts the rotation, which then fails.
pub fn confirm_rotation<F>(
    start: &Pose,
    threshold: f64,
    mut probe: F,
) -> Result<ConfirmOutcome, PipelineError>
where
    F: FnMut(&Pose) -> Result<Option<f64>, PipelineError>,
{
    let mut pose = *start;
    let mut probabilities = Vec::with_capacity(CONFIRM_TURNS);
    for _ in 0..CONFIRM_TURNS {
        pose = Action::Left.apply(&pose);
        match probe(&pose)? {
            Some(p) => probabilities.push(p),
            None => {
                return Ok(ConfirmOutcome {
                    passed: false,
                    probabilities,
                    aborted: true,
                    final_pose: pose,
                })
            }
        }
    }
    let mut out = ConfirmOutcome {
        passed: false,
        probabilities,
        aborted: false,
        final_pose: pose,
    };
    out.passed = out.mean() > threshold;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    Done,
    Collision,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub reason: TerminationReason,
    /// Motion actions taken, confirmation turns included.
    pub steps: usize,
    pub forwards: usize,
    /// Observed path length: 0.1 m per successful Forward.
    pub path_length: f64,
    pub start: Pose,
    pub goal: Pose,
    pub final_pose: Pose,
    pub confirmations: usize,
    pub trace: Vec<TraceRecord>,
}

/// Environment and perception for an episode.
pub struct EpisodeEnv<'a> {
    pub map: &'a GridMap,
    pub footprint: Footprint,
    pub camera: &'a CameraParams,
    /// Without an encoder no observations are rendered.
    pub encoder: Option<&'a Autoencoder>,
}

struct Runner<'a, 'b> {
    env: &'b EpisodeEnv<'a>,
    state: AgentState,
    history: Option<HistoryBuffer>,
    steps: usize,
    forwards: usize,
    trace: Vec<TraceRecord>,
}

impl Runner<'_, '_> {
    fn observe(&mut self) -> Result<(), PipelineError> {
        if let Some(enc) = self.env.encoder {
            let emb = enc.encode(&render(self.env.map, &self.state.pose, self.env.camera))?;
            match &mut self.history {
                Some(h) => h.push(emb),
                None => self.history = Some(HistoryBuffer::new(emb)),
            }
        }
        Ok(())
    }

    /// Applies one motion. Returns false on collision.
    fn act(&mut self, action: Action) -> Result<bool, PipelineError> {
        self.steps += 1;
        match transition(self.env.map, &self.env.footprint, &self.state, action) {
            Ok(next) => {
                self.state = next;
                if action == Action::Forward {
                    self.forwards += 1;
                }
                self.trace
                    .push(TraceRecord::new(self.steps, &self.state.pose, Some(action)));
                self.observe()?;
                Ok(true)
            }
            Err(SimError::Collision { .. }) => {
                self.state.collided = true;
                self.trace
                    .push(TraceRecord::new(self.steps, &self.state.pose, Some(action)));
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn ctx<'c>(&'c self, goal: &'c GoalSpec) -> StepContext<'c> {
        StepContext {
            step: self.steps,
            pose: &self.state.pose,
            goal,
            history: self.history.as_ref(),
        }
    }

    fn set_belief(&mut self, belief: f64) {
        if let Some(last) = self.trace.last_mut() {
            last.belief = Some(belief);
        }
    }
}

/// Runs one episode until Done, a collision or the step budget.
pub fn navigate(
    env: &EpisodeEnv,
    source: &mut dyn ActionSource,
    detector: &mut dyn GoalDetector,
    start: &Pose,
    goal: &GoalSpec,
    cfg: &PipelineConfig,
) -> Result<Episode, PipelineError> {
    cfg.validate()?;
    if !crate::gridworld::is_collision_free(env.map, start, &env.footprint) {
        return Err(SimError::InvalidStart.into());
    }
    let mut run = Runner {
        env,
        state: AgentState::new(*start),
        history: None,
        steps: 0,
        forwards: 0,
        trace: Vec::new(),
    };
    let mut first = TraceRecord::new(0, start, None);
    first.goal_x = Some(goal.pose.x);
    first.goal_y = Some(goal.pose.y);
    run.trace.push(first);
    run.observe()?;

    let mut cooldown = 0usize;
    let mut confirmations = 0usize;
    let reason = 'episode: loop {
        match detector.evaluate(&run.ctx(goal))? {
            GoalSignal::Reached => break TerminationReason::Done,
            GoalSignal::Belief(p) => {
                run.set_belief(p);
                if p > cfg.belief_trigger && cooldown == 0 {
                    confirmations += 1;
                    let mut collided = false;
                    let outcome = confirm_rotation(
                        &run.state.pose.clone(),
                        cfg.confirm_avg_threshold,
                        |_| {
                            if run.steps >= cfg.max_steps {
                                return Ok(None);
                            }
                            if !run.act(Action::Left)? {
                                collided = true;
                                return Ok(None);
                            }
                            let p = match detector.evaluate(&run.ctx(goal))? {
                                GoalSignal::Belief(p) => p,
                                GoalSignal::Reached => 1.0,
                                GoalSignal::NotReached => 0.0,
                            };
                            run.set_belief(p);
                            Ok(Some(p))
                        },
                    )?;
                    if collided {
                        break 'episode TerminationReason::Collision;
                    }
                    if outcome.passed {
                        break TerminationReason::Done;
                    }
                    if outcome.aborted {
                        break TerminationReason::StepLimit;
                    }
                    cooldown = cfg.confirm_cooldown;
                }
            }
            GoalSignal::NotReached => {}
        }
        if run.steps >= cfg.max_steps {
            break TerminationReason::StepLimit;
        }
        let action = source.next_action(&run.ctx(goal))?;
        if action == Action::Done {
            break TerminationReason::Done;
        }
        if !run.act(action)? {
            break TerminationReason::Collision;
        }
        cooldown = cooldown.saturating_sub(1);
    };
    if reason == TerminationReason::Done {
        let pose = run.state.pose;
        run.trace
            .push(TraceRecord::new(run.steps, &pose, Some(Action::Done)));
    }
    Ok(Episode {
        reason,
        steps: run.steps,
        forwards: run.forwards,
        path_length: run.forwards as f64 * FORWARD_METERS,
        start: *start,
        goal: goal.pose,
        final_pose: run.state.pose,
        confirmations,
        trace: run.trace,
    })
}
