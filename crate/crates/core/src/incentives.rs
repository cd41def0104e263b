//! Utility table for proposers, oracle nodes and committee members, and the
//! equilibrium conditions derived from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum IncentiveError {
    #[error("invalid incentive parameter: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncentiveParams {
    /// Probability that a voter is audited.
    pub p_a: f64,
    pub stk_o: f64,
    pub stk_m: f64,
    pub stk_b: f64,
    /// Submission fee per signature.
    pub r_m: f64,
    pub block_reward: f64,
    /// Share of the block reward paid to oracle nodes.
    pub eta_b: f64,
    /// Cost of verifying chunks.
    pub c_s: f64,
    /// Cost of aggregating signatures.
    pub c_m: f64,
    /// Signatures aggregated per commitment.
    pub k_sig: f64,
}

impl IncentiveParams {
    pub fn validate(&self) -> Result<(), IncentiveError> {
        let fields = [
            ("p_a", self.p_a),
            ("stk_o", self.stk_o),
            ("stk_m", self.stk_m),
            ("stk_b", self.stk_b),
            ("r_m", self.r_m),
            ("block_reward", self.block_reward),
            ("eta_b", self.eta_b),
            ("c_s", self.c_s),
            ("c_m", self.c_m),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(IncentiveError::Parameter(format!("{name}={v} must be non-negative")));
            }
        }
        if self.p_a > 1.0 {
            return Err(IncentiveError::Parameter(format!("p_a={} above 1", self.p_a)));
        }
        if self.eta_b > 1.0 {
            return Err(IncentiveError::Parameter(format!("eta_b={} above 1", self.eta_b)));
        }
        if !(self.k_sig >= 1.0) {
            return Err(IncentiveError::Parameter(format!("k_sig={} below 1", self.k_sig)));
        }
        Ok(())
    }

    /// Reward per oracle signature, `eta_b B / k`.
    pub fn oracle_reward(&self) -> f64 {
        self.eta_b * self.block_reward / self.k_sig
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Proposer,
    Oracle,
    Committee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Offline,
    Defect,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Cooperate, Action::Offline, Action::Defect];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub proposer: Action,
    pub oracle: Action,
    pub committee: Action,
}

impl StrategyProfile {
    pub fn uniform(action: Action) -> Self {
        Self {
            proposer: action,
            oracle: action,
            committee: action,
        }
    }

    pub fn action(&self, role: Role) -> Action {
        match role {
            Role::Proposer => self.proposer,
            Role::Oracle => self.oracle,
            Role::Committee => self.committee,
        }
    }
}

/// Utility of `action` for `role` when the block is committed.
pub fn expected_utility(role: Role, action: Action, p: &IncentiveParams) -> f64 {
    let reward = p.oracle_reward();
    match (role, action) {
        (_, Action::Offline) => 0.0,
        (Role::Proposer, Action::Cooperate) => (1.0 - p.eta_b) * p.block_reward,
        (Role::Proposer, Action::Defect) => -p.stk_b,
        (Role::Oracle, Action::Cooperate) => reward - p.r_m - p.c_s,
        (Role::Oracle, Action::Defect) => -p.p_a * p.stk_o + (1.0 - p.p_a) * reward - p.r_m,
        (Role::Committee, Action::Cooperate) => p.k_sig * p.r_m - p.c_m,
        (Role::Committee, Action::Defect) => -p.stk_m,
    }
}

/// An inequality `lhs > rhs` (or `>=` when `strict` is false).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub expression: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub strict: bool,
    pub satisfied: bool,
}

impl Condition {
    fn new(expression: &'static str, lhs: f64, rhs: f64, strict: bool) -> Self {
        let slack = lhs - rhs;
        let satisfied = if strict { slack > 0.0 } else { slack >= 0.0 };
        Self {
            expression,
            lhs,
            rhs,
            slack,
            strict,
            satisfied,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumCheck {
    pub profile: &'static str,
    pub equilibrium: bool,
    pub conditions: Vec<Condition>,
}

/// All-Cooperate is an equilibrium for oracle nodes when
/// `p_a (stk_o + 1) - c_s > 0` and `eta_b B / k > r_m + c_s`.
///
/// The first inequality is the published closed form. Comparing the table's
/// Cooperate and Defect rows directly gives `p_a (stk_o + eta_b B / k) > c_s`
/// instead; the two coincide only when `eta_b B / k = 1`.
pub fn check_allc_equilibrium(p: &IncentiveParams) -> EquilibriumCheck {
    let conditions = vec![
        Condition::new("p_a * (stk_o + 1) - c_s > 0", p.p_a * (p.stk_o + 1.0) - p.c_s, 0.0, true),
        Condition::new("eta_b * B / k > r_m + c_s", p.oracle_reward(), p.r_m + p.c_s, true),
    ];
    EquilibriumCheck {
        profile: "All-C",
        equilibrium: conditions.iter().all(|c| c.satisfied),
        conditions,
    }
}

/// Utilities of a lone deviator when everyone else stays offline: nothing
/// is committed, so no reward, fee or audit applies.
pub fn uncommitted_utility(action: Action, p: &IncentiveParams) -> f64 {
    match action {
        Action::Cooperate => -p.c_s,
        Action::Offline | Action::Defect => 0.0,
    }
}

/// All-Offline is an equilibrium whenever verification is not subsidised.
pub fn check_allo_equilibrium(p: &IncentiveParams) -> EquilibriumCheck {
    let conditions = vec![Condition::new("c_s >= 0", p.c_s, 0.0, false)];
    EquilibriumCheck {
        profile: "All-O",
        equilibrium: conditions.iter().all(|c| c.satisfied),
        conditions,
    }
}
