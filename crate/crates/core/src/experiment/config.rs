//! TOML experiment configuration.
//!
//! ```toml
//! [experiment]        # optional; command-line flags override it
//! group = "similar"
//! mode = "coop"
//! runs = 10
//! epochs = 200
//! seed = 0
//!
//! [agent.A]           # any AgentHyperparams field; omitted fields keep defaults
//! lr = 0.01
//!
//! [env.B]             # replaces the group's environment for agent B
//! kind = "cart_pole"
//! gravity = 12.0
//!
//! [federation]
//! key = "<64 hex chars>"
//! transport = "network"
//! blackboard = "127.0.0.1:7000"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentSpec, Group, Mode, TransportChoice, AGENT_A, AGENT_B};
use crate::dqn::AgentHyperparams;
use crate::envs::EnvConfig;
use crate::federation::SharedKey;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blackboard: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    pub agent: BTreeMap<String, AgentHyperparams>,
    pub env: BTreeMap<String, EnvConfig>,
    pub federation: FederationSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ConfigFile =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for name in cfg.agent.keys().chain(cfg.env.keys()) {
            if name != AGENT_A && name != AGENT_B {
                return Err(ExperimentError::Config(format!(
                    "unknown agent {name:?}, expected A or B"
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Configuration reproducing `spec`. The key is never written.
    pub fn from_spec(spec: &ExperimentSpec) -> Self {
        let (transport, blackboard) = match &spec.transport {
            TransportChoice::InProcess => ("inprocess", None),
            TransportChoice::Network { blackboard } => ("network", blackboard.clone()),
        };
        Self {
            experiment: ExperimentSection {
                group: Some(spec.group),
                mode: Some(spec.mode),
                runs: Some(spec.runs),
                epochs: Some(spec.epochs),
                seed: Some(spec.base_seed),
            },
            agent: BTreeMap::from([
                (AGENT_A.to_string(), spec.hyper_a.clone()),
                (AGENT_B.to_string(), spec.hyper_b.clone()),
            ]),
            env: BTreeMap::from([
                (AGENT_A.to_string(), spec.env_a.clone()),
                (AGENT_B.to_string(), spec.env_b.clone()),
            ]),
            federation: FederationSection {
                key: None,
                transport: Some(transport.to_string()),
                blackboard,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Builds a spec from the `[experiment]` section, falling back to `group`
    /// and `mode` when the file does not name them.
    pub fn to_spec(&self, group: Group, mode: Mode) -> Result<ExperimentSpec, ExperimentError> {
        let e = &self.experiment;
        let mut spec = ExperimentSpec::new(e.group.unwrap_or(group), e.mode.unwrap_or(mode));
        self.apply(&mut spec)?;
        Ok(spec)
    }

    /// Overlays every field present in the file onto `spec`.
    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<(), ExperimentError> {
        if let Some(r) = self.experiment.runs {
            spec.runs = r;
        }
        if let Some(e) = self.experiment.epochs {
            spec.epochs = e;
        }
        if let Some(s) = self.experiment.seed {
            spec.base_seed = s;
        }
        if let Some(h) = self.agent.get(AGENT_A) {
            spec.hyper_a = h.clone();
        }
        if let Some(h) = self.agent.get(AGENT_B) {
            spec.hyper_b = h.clone();
        }
        if let Some(env) = self.env.get(AGENT_A) {
            spec.env_a = env.clone();
        }
        if let Some(env) = self.env.get(AGENT_B) {
            spec.env_b = env.clone();
        }
        if let Some(k) = &self.federation.key {
            spec.key = Some(SharedKey::from_hex(k)?);
        }
        match self.federation.transport.as_deref() {
            None => {}
            Some("inprocess") => spec.transport = TransportChoice::InProcess,
            Some("network") => {
                spec.transport = TransportChoice::Network {
                    blackboard: self.federation.blackboard.clone(),
                }
            }
            Some(other) => {
                return Err(ExperimentError::Config(format!(
                    "unknown transport {other:?}, expected inprocess or network"
                )))
            }
        }
        Ok(())
    }
}
