//! Chat with a language model under a per-phase autonomy policy.

pub mod actions;
pub mod provider;
pub mod session;
pub mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::AssistError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    Assistant,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResearchPhase {
    IdeaGeneration,
    ExperimentDesign,
    CodeGeneration,
    Execution,
    Visualization,
    Interpretation,
}

impl ResearchPhase {
    pub const ALL: [ResearchPhase; 6] = [
        ResearchPhase::IdeaGeneration,
        ResearchPhase::ExperimentDesign,
        ResearchPhase::CodeGeneration,
        ResearchPhase::Execution,
        ResearchPhase::Visualization,
        ResearchPhase::Interpretation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResearchPhase::IdeaGeneration => "idea_generation",
            ResearchPhase::ExperimentDesign => "experiment_design",
            ResearchPhase::CodeGeneration => "code_generation",
            ResearchPhase::Execution => "execution",
            ResearchPhase::Visualization => "visualization",
            ResearchPhase::Interpretation => "interpretation",
        }
    }
}

impl fmt::Display for ResearchPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResearchPhase {
    type Err = AssistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResearchPhase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| AssistError::Config(format!("unknown research phase {s:?}")))
    }
}

/// 0 manual, 1 propose, 2 auto with review, 3 auto.
pub type AutonomyLevel = u8;

pub const MAX_LEVEL: AutonomyLevel = 3;

pub fn level_name(level: AutonomyLevel) -> &'static str {
    match level {
        0 => "manual",
        1 => "propose",
        2 => "auto_with_review",
        _ => "auto",
    }
}

/// Autonomy level for every research phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct AutonomyPolicy(BTreeMap<ResearchPhase, AutonomyLevel>);

impl AutonomyPolicy {
    pub fn uniform(level: AutonomyLevel) -> Self {
        Self(ResearchPhase::ALL.into_iter().map(|p| (p, level.min(MAX_LEVEL))).collect())
    }

    /// Every phase must be present and every level within 0..=3.
    pub fn from_map(map: BTreeMap<ResearchPhase, AutonomyLevel>) -> Result<Self, AssistError> {
        let missing: Vec<&str> = ResearchPhase::ALL.iter().filter(|p| !map.contains_key(p)).map(|p| p.as_str()).collect();
        if !missing.is_empty() {
            return Err(AssistError::Config(format!("policy is missing phases: {}", missing.join(", "))));
        }
        if let Some((p, l)) = map.iter().find(|(_, l)| **l > MAX_LEVEL) {
            return Err(AssistError::Config(format!("level {l} for {p} is outside 0..=3")));
        }
        Ok(Self(map))
    }

    pub fn level(&self, phase: ResearchPhase) -> AutonomyLevel {
        self.0[&phase]
    }

    pub fn set(&mut self, phase: ResearchPhase, level: AutonomyLevel) -> Result<(), AssistError> {
        if level > MAX_LEVEL {
            return Err(AssistError::Config(format!("level {level} is outside 0..=3")));
        }
        self.0.insert(phase, level);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResearchPhase, AutonomyLevel)> + '_ {
        self.0.iter().map(|(p, l)| (*p, *l))
    }
}

impl Default for AutonomyPolicy {
    fn default() -> Self {
        Self::uniform(1)
    }
}

impl<'de> Deserialize<'de> for AutonomyPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<ResearchPhase, AutonomyLevel>::deserialize(d)?;
        AutonomyPolicy::from_map(map).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub ts: u64,
    pub phase: ResearchPhase,
}
