//! The ten agent roles: prompts, context keys, tools and output schemas.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    CircuitExplainer,
    MatchingFinder,
    DcGoalSetter,
    InitialDesigner,
    DcReviewer,
    DcSizer,
    SpecsReviewer,
    ReasoningSizer,
    AdvisorReviewer,
    EquippedSizer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 10] = [
        AgentRole::CircuitExplainer,
        AgentRole::MatchingFinder,
        AgentRole::DcGoalSetter,
        AgentRole::InitialDesigner,
        AgentRole::DcReviewer,
        AgentRole::DcSizer,
        AgentRole::SpecsReviewer,
        AgentRole::ReasoningSizer,
        AgentRole::AdvisorReviewer,
        AgentRole::EquippedSizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::CircuitExplainer => "Circuit Explainer",
            AgentRole::MatchingFinder => "Matching Finder",
            AgentRole::DcGoalSetter => "DC Goal Setter",
            AgentRole::InitialDesigner => "Initial Designer",
            AgentRole::DcReviewer => "DC Reviewer",
            AgentRole::DcSizer => "DC Sizer",
            AgentRole::SpecsReviewer => "Specs Reviewer",
            AgentRole::ReasoningSizer => "Reasoning Sizer",
            AgentRole::AdvisorReviewer => "Advisor Reviewer",
            AgentRole::EquippedSizer => "Equipped Sizer",
        }
    }

    pub fn phase(self) -> u8 {
        match self {
            AgentRole::CircuitExplainer
            | AgentRole::MatchingFinder
            | AgentRole::DcGoalSetter
            | AgentRole::InitialDesigner => 1,
            AgentRole::DcReviewer | AgentRole::DcSizer => 2,
            AgentRole::SpecsReviewer | AgentRole::ReasoningSizer => 3,
            AgentRole::AdvisorReviewer | AgentRole::EquippedSizer => 4,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    DcSim,
    FullSim,
    Optimizer,
}

impl Tool {
    pub fn as_str(self) -> &'static str {
        match self {
            Tool::DcSim => "dc_sim",
            Tool::FullSim => "full_sim",
            Tool::Optimizer => "optimizer",
        }
    }
}

/// Pieces of workflow state an agent sees, rendered in this declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKey {
    Netlist,
    Parameters,
    Specs,
    Explanation,
    Matching,
    DcGoals,
    LatestDc,
    LatestFull,
    /// Whichever simulation ran last.
    LatestSim,
    Feedback,
    Stagnation,
    History,
}

impl ContextKey {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKey::Netlist => "netlist",
            ContextKey::Parameters => "parameters",
            ContextKey::Specs => "specs",
            ContextKey::Explanation => "explanation",
            ContextKey::Matching => "matching",
            ContextKey::DcGoals => "dc_goals",
            ContextKey::LatestDc => "latest_dc",
            ContextKey::LatestFull => "latest_full",
            ContextKey::LatestSim => "latest_sim",
            ContextKey::Feedback => "feedback",
            ContextKey::Stagnation => "stagnation",
            ContextKey::History => "history",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Explanation,
    Matching,
    DcGoals,
    Sizing,
    DcReview,
    SpecsReview,
    AdvisorReview,
    EquippedDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub role: AgentRole,
    pub role_prompt: &'static str,
    pub context_keys: Vec<ContextKey>,
    pub tools: Vec<Tool>,
    pub output_schema: SchemaId,
    /// Closing instruction appended to the assembled context.
    pub task: &'static str,
}

const PROMPTS: [&str; 10] = [
    include_str!("../../prompts/circuit_explainer.md"),
    include_str!("../../prompts/matching_finder.md"),
    include_str!("../../prompts/dc_goal_setter.md"),
    include_str!("../../prompts/initial_designer.md"),
    include_str!("../../prompts/dc_reviewer.md"),
    include_str!("../../prompts/dc_sizer.md"),
    include_str!("../../prompts/specs_reviewer.md"),
    include_str!("../../prompts/reasoning_sizer.md"),
    include_str!("../../prompts/advisor_reviewer.md"),
    include_str!("../../prompts/equipped_sizer.md"),
];

pub fn agent_spec(role: AgentRole) -> AgentSpec {
    use ContextKey::*;
    let (context_keys, tools, output_schema, task) = match role {
        AgentRole::CircuitExplainer => (
            vec![Netlist, Parameters, Specs],
            vec![],
            SchemaId::Explanation,
            "Explain the role of every device and structure in this circuit.",
        ),
        AgentRole::MatchingFinder => (
            vec![Netlist, Parameters, Explanation],
            vec![],
            SchemaId::Matching,
            "Identify parameters that must be matched (differential pairs, mirrors) and group them.",
        ),
        AgentRole::DcGoalSetter => (
            vec![Netlist, Specs, Explanation, Matching],
            vec![],
            SchemaId::DcGoals,
            "State the operating region every transistor must be in.",
        ),
        AgentRole::InitialDesigner => (
            vec![Netlist, Parameters, Specs, Explanation, Matching, DcGoals],
            vec![],
            SchemaId::Sizing,
            "Propose a complete initial sizing.",
        ),
        AgentRole::DcReviewer => (
            vec![Netlist, DcGoals, LatestDc, History],
            vec![Tool::DcSim],
            SchemaId::DcReview,
            "Compare the simulated operating regions with the DC goals and suggest modifications.",
        ),
        AgentRole::DcSizer => (
            vec![Parameters, Matching, DcGoals, LatestDc, Feedback, History],
            vec![],
            SchemaId::Sizing,
            "Apply the reviewer's feedback and propose refined parameter values.",
        ),
        AgentRole::SpecsReviewer => (
            vec![Specs, DcGoals, LatestSim, History],
            vec![Tool::FullSim, Tool::DcSim],
            SchemaId::SpecsReview,
            "Critique the measured performance and choose the tool for the next validation.",
        ),
        AgentRole::ReasoningSizer => (
            vec![Parameters, Specs, Matching, LatestFull, Feedback, History],
            vec![],
            SchemaId::Sizing,
            "Propose refined parameter values that address the critique.",
        ),
        AgentRole::AdvisorReviewer => (
            vec![Specs, LatestSim, Stagnation, History],
            vec![Tool::FullSim, Tool::DcSim],
            SchemaId::AdvisorReview,
            "Critique the performance, watch for stagnation and advise whether to call the optimizer.",
        ),
        AgentRole::EquippedSizer => (
            vec![Parameters, Specs, Matching, LatestFull, Feedback, Stagnation, History],
            vec![Tool::Optimizer],
            SchemaId::EquippedDecision,
            "Either propose refined values yourself or configure an optimizer run.",
        ),
    };
    let idx = AgentRole::ALL.iter().position(|r| *r == role).expect("role listed");
    AgentSpec { role, role_prompt: PROMPTS[idx], context_keys, tools, output_schema, task }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tools_follow_the_workflow_diagram() {
        for role in AgentRole::ALL {
            let s = agent_spec(role);
            let want: &[Tool] = match role {
                AgentRole::DcReviewer => &[Tool::DcSim],
                AgentRole::SpecsReviewer | AgentRole::AdvisorReviewer => &[Tool::FullSim, Tool::DcSim],
                AgentRole::EquippedSizer => &[Tool::Optimizer],
                _ => &[],
            };
            assert_eq!(s.tools, want, "{role}");
            assert!(!s.role_prompt.trim().is_empty());
        }
    }

    #[test]
    fn context_keys_are_produced_earlier() {
        // keys available from the config before any agent runs
        let mut available = vec![ContextKey::Netlist, ContextKey::Parameters, ContextKey::Specs];
        for role in AgentRole::ALL {
            let s = agent_spec(role);
            for k in &s.context_keys {
                let produced_by_own_tool = matches!(k, ContextKey::LatestDc | ContextKey::LatestSim | ContextKey::LatestFull | ContextKey::Stagnation | ContextKey::History)
                    && role.phase() >= 2;
                assert!(available.contains(k) || produced_by_own_tool, "{role} reads {k:?} before it exists");
            }
            available.extend(match role {
                AgentRole::CircuitExplainer => vec![ContextKey::Explanation],
                AgentRole::MatchingFinder => vec![ContextKey::Matching],
                AgentRole::DcGoalSetter => vec![ContextKey::DcGoals],
                AgentRole::DcReviewer | AgentRole::SpecsReviewer | AgentRole::AdvisorReviewer => vec![ContextKey::Feedback],
                _ => vec![],
            });
        }
    }
}
