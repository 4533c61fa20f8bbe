//! Ideal-object grouping and action-space partitioning.
//!
//! Agents are grouped by the pair (ideal object, interactive action count):
//! attackers act on enemies, supporters on allies, so the two never share an
//! output layer. Each group gets its own parameters; a partition that is
//! disjoint and exhaustive satisfies the joint trajectory condition, under
//! which per-agent greedy actions reproduce the greedy joint action of every
//! monotonic group value.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{MapConfig, UnitKind, COMMON_ACTIONS};

/// Which side an agent's interactive actions target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdealObject {
    Ally,
    Enemy,
}

impl IdealObject {
    pub fn of(kind: UnitKind) -> Self {
        match kind {
            UnitKind::Attacker => IdealObject::Enemy,
            UnitKind::Supporter => IdealObject::Ally,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    /// Agent indices in ascending order.
    pub members: Vec<usize>,
    pub ideal_object: IdealObject,
    pub interactive_dim: usize,
}

impl Group {
    /// Unpadded per-agent action count.
    pub fn action_dim(&self) -> usize {
        COMMON_ACTIONS + self.interactive_dim
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub groups: Vec<Group>,
}

impl GroupAssignment {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Group index of `agent`, if any.
    pub fn group_of(&self, agent: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.members.contains(&agent))
    }

    /// Every agent in one group with the padded action layout: the shape
    /// shared-parameter baselines use.
    pub fn single_padded(config: &MapConfig) -> Self {
        Self {
            groups: vec![Group {
                members: (0..config.n_allies()).collect(),
                ideal_object: IdealObject::Enemy,
                interactive_dim: padded_action_dim(config) - COMMON_ACTIONS,
            }],
        }
    }
}

/// Partitions allied agents by (ideal object, interactive action count).
///
/// Groups are ordered by the first agent that belongs to them.
pub fn group_by_ideal_object(config: &MapConfig) -> GroupAssignment {
    let mut groups: Vec<Group> = Vec::new();
    for (agent, unit) in config.ally_units.iter().enumerate() {
        let ideal_object = IdealObject::of(unit.stats.unit_kind);
        let interactive_dim = config.interactive_dim(unit.stats.unit_kind);
        match groups.iter_mut().find(|g| g.ideal_object == ideal_object && g.interactive_dim == interactive_dim) {
            Some(g) => g.members.push(agent),
            None => groups.push(Group { members: vec![agent], ideal_object, interactive_dim }),
        }
    }
    GroupAssignment { groups }
}

/// True iff the groups are pairwise disjoint and together cover exactly the
/// agents `0..n_agents`.
pub fn validate_jtc(assignment: &GroupAssignment, n_agents: usize) -> bool {
    let mut seen = BTreeSet::new();
    for g in &assignment.groups {
        for &a in &g.members {
            if a >= n_agents || !seen.insert(a) {
                return false;
            }
        }
    }
    seen.len() == n_agents
}

/// `6 + max interactive dim` over the allied unit kinds present.
pub fn padded_action_dim(config: &MapConfig) -> usize {
    COMMON_ACTIONS
        + config.ally_units.iter().map(|u| config.interactive_dim(u.stats.unit_kind)).max().unwrap_or(0)
}

/// Which padded action ids correspond to a real action for `agent`.
/// Entries past the agent's true action count are padding and stay masked.
pub fn real_action_slots(config: &MapConfig, agent: usize) -> Vec<bool> {
    let real = COMMON_ACTIONS + config.agent_interactive_dim(agent);
    (0..padded_action_dim(config)).map(|j| j < real).collect()
}
