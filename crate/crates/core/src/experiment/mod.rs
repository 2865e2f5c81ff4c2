//! Seeded multi-run experiments over the five environment-similarity groups.

pub mod compare;
pub mod config;
pub mod curves;
pub mod emit;

pub use compare::{compare_report, CompareReport, WindowRow, WINDOWS};
pub use config::ConfigFile;
pub use curves::{polyfit, polyval, CurveSet, SMOOTH_DEGREE};
pub use emit::{emit, load_curves, EmitPaths};

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blackboard::{Blackboard, BlackboardConfig};
use crate::dqn::{derive_seed, Agent, AgentError, AgentHyperparams};
use crate::envs::{EnvConfig, N_ACTIONS, OBS_DIM};
use crate::federation::{
    env_seed, globals_identical, run_epoch, FederationError, FederationSession, InProcessBus,
    Participant, SharedKey, TcpTransport, Transport,
};
use crate::nn::{init_model, split_topology, NnError, SplitModel, GLOBAL_LAYER_ID};

pub const AGENT_A: &str = "A";
pub const AGENT_B: &str = "B";

const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("curve fit failed: {0}")]
    Fit(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ExperimentError::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Same,
    Similar,
    DiffTall,
    DiffFat,
    TotallyDiff,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Same,
        Group::Similar,
        Group::DiffTall,
        Group::DiffFat,
        Group::TotallyDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Same => "same",
            Group::Similar => "similar",
            Group::DiffTall => "diff-tall",
            Group::DiffFat => "diff-fat",
            Group::TotallyDiff => "totally-diff",
        }
    }

    /// Environments of agents A and B. Agent A always plays the default
    /// CartPole.
    pub fn envs(self) -> (EnvConfig, EnvConfig) {
        let a = EnvConfig::cartpole();
        let b = match self {
            Group::Same => EnvConfig::cartpole(),
            Group::Similar => EnvConfig {
                gravity: 12.0,
                ..EnvConfig::cartpole()
            },
            Group::DiffTall => EnvConfig {
                gravity: 12.0,
                pole_half_length: 1.0,
                ..EnvConfig::cartpole()
            },
            Group::DiffFat => EnvConfig {
                gravity: 12.0,
                pole_half_length: 0.25,
                pole_mass: 0.2,
                ..EnvConfig::cartpole()
            },
            Group::TotallyDiff => EnvConfig::mountain_car(),
        };
        (a, b)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("unknown group {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Coop,
    SoloA,
    SoloB,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Coop => "coop",
            Mode::SoloA => "solo-a",
            Mode::SoloB => "solo-b",
        }
    }

    /// Agents taking part, in turn order.
    pub fn agents(self) -> &'static [&'static str] {
        match self {
            Mode::Coop => &[AGENT_A, AGENT_B],
            Mode::SoloA => &[AGENT_A],
            Mode::SoloB => &[AGENT_B],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Coop, Mode::SoloA, Mode::SoloB]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportChoice {
    InProcess,
    /// Connect to a running Black Board, or start a private one on loopback
    /// for every run when no address is given.
    Network {
        blackboard: Option<String>,
    },
}

impl TransportChoice {
    pub fn name(&self) -> &'static str {
        match self {
            TransportChoice::InProcess => "inprocess",
            TransportChoice::Network { .. } => "network",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub group: Group,
    pub mode: Mode,
    pub epochs: u32,
    pub runs: usize,
    pub base_seed: u64,
    pub env_a: EnvConfig,
    pub env_b: EnvConfig,
    pub hyper_a: AgentHyperparams,
    pub hyper_b: AgentHyperparams,
    pub transport: TransportChoice,
    /// Shared key for coop runs. A fresh one is generated when absent; the
    /// key does not influence results.
    pub key: Option<SharedKey>,
}

impl ExperimentSpec {
    pub fn new(group: Group, mode: Mode) -> Self {
        let (env_a, env_b) = group.envs();
        Self {
            group,
            mode,
            epochs: 200,
            runs: 10,
            base_seed: 0,
            env_a,
            env_b,
            hyper_a: AgentHyperparams::default(),
            hyper_b: AgentHyperparams::default(),
            transport: TransportChoice::InProcess,
            key: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::InvalidSpec("runs must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(ExperimentError::InvalidSpec("epochs must be >= 1".into()));
        }
        for env in [&self.env_a, &self.env_b] {
            env.validate().map_err(AgentError::from)?;
        }
        self.hyper_a.validate()?;
        self.hyper_b.validate()?;
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.group, self.mode)
    }

    fn env(&self, agent: &str) -> &EnvConfig {
        if agent == AGENT_A {
            &self.env_a
        } else {
            &self.env_b
        }
    }

    fn hyper(&self, agent: &str) -> &AgentHyperparams {
        if agent == AGENT_A {
            &self.hyper_a
        } else {
            &self.hyper_b
        }
    }
}

/// Seed of run `run`.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

pub fn agent_seed(run_seed: u64, agent: &str) -> u64 {
    derive_seed(run_seed, agent)
}

/// Fresh model for `agent`. Local layers depend on the agent's seed, the
/// global layer only on the run seed, so all agents of a run start from the
/// same global weights.
pub fn initial_model(run_seed: u64, agent: &str) -> Result<SplitModel, ExperimentError> {
    let topology = split_topology(agent, OBS_DIM, N_ACTIONS);
    let mut model = init_model(
        agent,
        derive_seed(agent_seed(run_seed, agent), "model"),
        &topology,
    )?;
    let shared = init_model(agent, derive_seed(run_seed, "global"), &topology)?;
    model.set_params(GLOBAL_LAYER_ID, shared.global_layer().params())?;
    Ok(model)
}

fn new_agent(spec: &ExperimentSpec, run_seed: u64, name: &str) -> Result<Agent, ExperimentError> {
    let model = initial_model(run_seed, name)?;
    let policy_seed = derive_seed(agent_seed(run_seed, name), "policy");
    Ok(Agent::new(
        name,
        model,
        spec.hyper(name).clone(),
        policy_seed,
    )?)
}

/// Returns of one run, `[agent][epoch]` with agents in turn order.
pub type RunCurves = Vec<Vec<f64>>;

/// Runs the whole experiment. In-process runs execute in parallel; network
/// runs execute one after another.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<CurveSet, ExperimentError> {
    spec.validate()?;
    let raw: Vec<RunCurves> = match spec.transport {
        TransportChoice::InProcess => (0..spec.runs)
            .into_par_iter()
            .map(|r| run_single(spec, r))
            .collect::<Result<_, _>>()?,
        TransportChoice::Network { .. } => (0..spec.runs)
            .map(|r| run_single(spec, r))
            .collect::<Result<_, _>>()?,
    };
    let agents = spec.mode.agents().iter().map(|a| a.to_string()).collect();
    CurveSet::from_raw(agents, raw)
}

/// Runs training number `run` of the experiment.
pub fn run_single(spec: &ExperimentSpec, run: usize) -> Result<RunCurves, ExperimentError> {
    run_single_observed(spec, run, |_, _| {})
}

/// Like [`run_single`], calling `on_epoch(epoch, models)` after every epoch
/// with the models of all agents in turn order.
pub fn run_single_observed<F>(
    spec: &ExperimentSpec,
    run: usize,
    mut on_epoch: F,
) -> Result<RunCurves, ExperimentError>
where
    F: FnMut(u32, &[&SplitModel]),
{
    let seed = run_seed(spec.base_seed, run);
    match spec.mode {
        Mode::SoloA | Mode::SoloB => {
            let name = spec.mode.agents()[0];
            let mut agent = new_agent(spec, seed, name)?;
            let env = spec.env(name);
            let aseed = agent_seed(seed, name);
            let mut returns = Vec::with_capacity(spec.epochs as usize);
            for epoch in 0..spec.epochs {
                let r = agent.rollout(env, env_seed(aseed, epoch))?;
                agent.train_offline()?;
                agent.end_epoch();
                returns.push(r.episode_return);
                on_epoch(epoch, &[&agent.model]);
            }
            Ok(vec![returns])
        }
        Mode::Coop => run_coop(spec, seed, &mut on_epoch),
    }
}

fn run_coop(
    spec: &ExperimentSpec,
    seed: u64,
    on_epoch: &mut dyn FnMut(u32, &[&SplitModel]),
) -> Result<RunCurves, ExperimentError> {
    let names = spec.mode.agents();
    let key = spec.key.clone().unwrap_or_else(SharedKey::generate);
    let mut _blackboard = None;
    let mut transports: Vec<Box<dyn Transport>> = Vec::with_capacity(names.len());
    match &spec.transport {
        TransportChoice::InProcess => {
            let bus = InProcessBus::new(names.len());
            for _ in names {
                transports.push(Box::new(bus.endpoint()));
            }
        }
        TransportChoice::Network { blackboard } => {
            let addr = match blackboard {
                Some(a) => a.clone(),
                None => {
                    let bb = Blackboard::bind(BlackboardConfig::new("127.0.0.1:0", names.len()))
                        .and_then(Blackboard::spawn)
                        .map_err(|e| ExperimentError::io("starting local blackboard", e))?;
                    let addr = bb.addr().to_string();
                    _blackboard = Some(bb);
                    addr
                }
            };
            for _ in names {
                let t = TcpTransport::connect(addr.as_str(), CONNECT_TIMEOUT).map_err(|e| {
                    FederationError::Transport(format!("cannot reach blackboard at {addr}: {e}"))
                })?;
                transports.push(Box::new(t));
            }
        }
    }

    let mut participants = Vec::with_capacity(names.len());
    for (name, transport) in names.iter().zip(transports) {
        participants.push(Participant {
            agent: new_agent(spec, seed, name)?,
            env: spec.env(name).clone(),
            seed: agent_seed(seed, name),
            session: FederationSession::join(name, key.clone(), transport)?,
        });
    }

    let mut curves = vec![Vec::with_capacity(spec.epochs as usize); names.len()];
    for epoch in 0..spec.epochs {
        let returns = run_epoch(&mut participants, epoch)?;
        let models: Vec<&SplitModel> = participants.iter().map(|p| &p.agent.model).collect();
        on_epoch(epoch, &models);
        if !globals_identical(participants.iter().map(|p| &p.agent.model)) {
            return Err(FederationError::Protocol(format!(
                "global layers diverged after epoch {epoch}"
            ))
            .into());
        }
        for (c, r) in curves.iter_mut().zip(returns) {
            c.push(r);
        }
    }
    for p in &mut participants {
        p.session.close()?;
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(group: Group, mode: Mode) -> ExperimentSpec {
        ExperimentSpec {
            epochs: 4,
            runs: 2,
            ..ExperimentSpec::new(group, mode)
        }
    }

    #[test]
    fn names_round_trip() {
        for g in Group::ALL {
            assert_eq!(g.name().parse::<Group>().unwrap(), g);
        }
        for m in [Mode::Coop, Mode::SoloA, Mode::SoloB] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Group>().is_err());
    }

    #[test]
    fn group_envs() {
        let (a, b) = Group::DiffFat.envs();
        assert_eq!(a, EnvConfig::cartpole());
        assert_eq!(
            (b.gravity, b.pole_half_length, b.pole_mass),
            (12.0, 0.25, 0.2)
        );
        let (_, b) = Group::Same.envs();
        assert_eq!(b, EnvConfig::cartpole());
    }

    #[test]
    fn agents_start_from_shared_global_layer() {
        let a = initial_model(5, AGENT_A).unwrap();
        let b = initial_model(5, AGENT_B).unwrap();
        assert!(globals_identical([&a, &b]));
        assert_ne!(
            a.layer("A.1").unwrap().weights,
            b.layer("B.1").unwrap().weights
        );
    }

    #[test]
    fn runs_are_deterministic_and_shaped() {
        let spec = small(Group::Same, Mode::Coop);
        let x = run_experiment(&spec).unwrap();
        let y = run_experiment(&spec).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.agents, vec!["A", "B"]);
        assert_eq!((x.runs(), x.epochs()), (2, 4));
        let solo = run_experiment(&small(Group::Same, Mode::SoloB)).unwrap();
        assert_eq!(solo.agents, vec!["B"]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(Group::Same, Mode::Coop);
        s.runs = 0;
        assert!(run_experiment(&s).is_err());
        let mut s = small(Group::Same, Mode::Coop);
        s.env_b.gravity = -1.0;
        assert!(run_experiment(&s).is_err());
    }
}
