//! The statistics component: rules that map a window of past statements
//! about an edge (or about the node itself) to a published verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VotingError {
    #[error("weight is undefined for probability {0}")]
    DegenerateProbability(f64),
    #[error("the weighted rule requires a network prior")]
    MissingPrior,
    #[error("network prior needs 0 < positives < total, got {0}/{1}")]
    DegeneratePrior(u64, u64),
}

/// One past statement: a positive claim (bridge / articulation point) or a
/// negative one, with the competence the protocol attached to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Statement {
    pub positive: bool,
    pub competence: f64,
    /// Numeric key of the search the statement came from.
    pub search_key: u64,
    pub time: f64,
}

impl Statement {
    pub fn new(positive: bool, competence: f64) -> Self {
        Statement {
            positive,
            competence,
            search_key: 0,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteRule {
    Unanimity,
    SimpleMajority,
    OneVote,
    IntelligentMajority,
    CompetentCycle,
    Weighted,
}

impl VoteRule {
    pub const ALL: [VoteRule; 6] = [
        VoteRule::Unanimity,
        VoteRule::SimpleMajority,
        VoteRule::OneVote,
        VoteRule::IntelligentMajority,
        VoteRule::CompetentCycle,
        VoteRule::Weighted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VoteRule::Unanimity => "unanimity",
            VoteRule::SimpleMajority => "simple-majority",
            VoteRule::OneVote => "one-vote",
            VoteRule::IntelligentMajority => "intelligent-majority",
            VoteRule::CompetentCycle => "competent-cycle",
            VoteRule::Weighted => "weighted",
        }
    }
}

impl std::str::FromStr for VoteRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VoteRule::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown voting rule `{s}`"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleConfig {
    pub rule: VoteRule,
    /// Window size: how many of the most recent statements are considered.
    pub window: usize,
    /// Statements at or above this competence count as trustworthy.
    pub trust_threshold: f64,
    /// Prior probability of a positive (bridges: N_B/N_T); weighted rule only.
    pub prior: Option<f64>,
}

impl RuleConfig {
    pub fn new(rule: VoteRule) -> Self {
        RuleConfig {
            rule,
            window: 5,
            trust_threshold: 0.9,
            prior: None,
        }
    }
}

/// Natural-log odds of `p`. Undefined at the endpoints.
pub fn weight(p: f64) -> Result<f64, VotingError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(VotingError::DegenerateProbability(p));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Prior probability of a positive from network-wide counts
/// (e.g. bridges / edges), suitable as the weighted rule's threshold input.
pub fn network_prior(positives: u64, total: u64) -> Result<f64, VotingError> {
    if positives == 0 || positives >= total {
        return Err(VotingError::DegeneratePrior(positives, total));
    }
    Ok(positives as f64 / total as f64)
}

// Statements carry competence 1 routinely (bridge messages); the logit is
// clamped away from the pole so they stay finite yet dominant.
const WEIGHT_CLAMP: f64 = 1.0 - 1e-9;

/// Apply `cfg.rule` to the last `cfg.window` statements of `history`
/// (oldest first). Returns the published verdict: true = positive.
pub fn vote(history: &[Statement], cfg: &RuleConfig) -> Result<bool, VotingError> {
    let start = history.len().saturating_sub(cfg.window);
    let window = &history[start..];
    let positives = window.iter().filter(|s| s.positive).count();
    let trustworthy_negative = window
        .iter()
        .any(|s| !s.positive && s.competence >= cfg.trust_threshold);

    Ok(match cfg.rule {
        // Zero of zero votes confirm: an empty window is unanimous.
        VoteRule::Unanimity => positives == window.len(),
        VoteRule::SimpleMajority => 2 * positives > window.len(),
        VoteRule::OneVote => positives >= 1,
        VoteRule::IntelligentMajority => {
            2 * positives > window.len() && !trustworthy_negative
        }
        VoteRule::CompetentCycle => !trustworthy_negative,
        VoteRule::Weighted => {
            let prior = cfg.prior.ok_or(VotingError::MissingPrior)?;
            let threshold = weight(prior)?;
            if window.is_empty() {
                return Ok(false);
            }
            let mut sum = 0.0;
            for s in window {
                let w = weight(s.competence.clamp(1e-12, WEIGHT_CLAMP))?;
                sum += if s.positive { w } else { -w };
            }
            sum > threshold
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn win(bits: &[(bool, f64)]) -> Vec<Statement> {
        bits.iter().map(|&(p, c)| Statement::new(p, c)).collect()
    }

    fn cfg(rule: VoteRule) -> RuleConfig {
        RuleConfig::new(rule)
    }

    #[test]
    fn weight_basics() {
        assert_relative_eq!(weight(0.5).unwrap(), 0.0);
        assert_relative_eq!(weight(0.9).unwrap(), 9f64.ln(), epsilon = 1e-12);
        for p in [0.1, 0.25, 0.6, 0.93] {
            assert_relative_eq!(
                weight(1.0 - p).unwrap(),
                -weight(p).unwrap(),
                epsilon = 1e-12
            );
        }
        assert!(weight(0.0).is_err());
        assert!(weight(1.0).is_err());
    }

    #[test]
    fn network_prior_checks_degeneracy() {
        assert_relative_eq!(network_prior(10, 100).unwrap(), 0.1);
        assert_relative_eq!(weight(network_prior(1, 2).unwrap()).unwrap(), 0.0);
        assert!(network_prior(0, 5).is_err());
        assert!(network_prior(5, 5).is_err());
    }

    #[test]
    fn rule_readings_on_spec_windows() {
        let all_pos = win(&[(true, 1.0); 5]);
        assert!(vote(&all_pos, &cfg(VoteRule::Unanimity)).unwrap());

        let one_neg = win(&[
            (true, 1.0),
            (true, 1.0),
            (false, 0.5),
            (true, 1.0),
            (true, 1.0),
        ]);
        assert!(!vote(&one_neg, &cfg(VoteRule::Unanimity)).unwrap());
        assert!(vote(&one_neg, &cfg(VoteRule::SimpleMajority)).unwrap());
        assert!(vote(&one_neg, &cfg(VoteRule::OneVote)).unwrap());

        // A trustworthy negative silences the competent-cycle rule.
        let split = win(&[(true, 0.95), (false, 0.95)]);
        assert!(!vote(&split, &cfg(VoteRule::CompetentCycle)).unwrap());
        let weak_neg = win(&[(true, 0.95), (false, 0.5)]);
        assert!(vote(&weak_neg, &cfg(VoteRule::CompetentCycle)).unwrap());
    }

    #[test]
    fn intelligent_majority_needs_both_conditions() {
        let majority_with_trusted_neg = win(&[
            (true, 0.95),
            (true, 0.95),
            (true, 0.95),
            (false, 0.95),
            (false, 0.3),
        ]);
        assert!(vote(&majority_with_trusted_neg, &cfg(VoteRule::SimpleMajority)).unwrap());
        assert!(!vote(&majority_with_trusted_neg, &cfg(VoteRule::IntelligentMajority)).unwrap());
    }

    #[test]
    fn empty_window_defaults() {
        let empty: Vec<Statement> = Vec::new();
        assert!(vote(&empty, &cfg(VoteRule::Unanimity)).unwrap());
        assert!(vote(&empty, &cfg(VoteRule::CompetentCycle)).unwrap());
        assert!(!vote(&empty, &cfg(VoteRule::SimpleMajority)).unwrap());
        assert!(!vote(&empty, &cfg(VoteRule::OneVote)).unwrap());
        assert!(!vote(&empty, &cfg(VoteRule::IntelligentMajority)).unwrap());
        let mut weighted = cfg(VoteRule::Weighted);
        weighted.prior = Some(0.1);
        assert!(!vote(&empty, &weighted).unwrap());
    }

    #[test]
    fn weighted_rule_reduces_to_strict_majority_at_even_prior() {
        let mut c = cfg(VoteRule::Weighted);
        c.prior = Some(0.5);
        for pos in 0..=5usize {
            let mut w: Vec<Statement> = Vec::new();
            for i in 0..5 {
                w.push(Statement::new(i < pos, 0.8));
            }
            let verdict = vote(&w, &c).unwrap();
            assert_eq!(verdict, pos > 5 - pos, "pos={pos}");
        }
    }

    #[test]
    fn weighted_tie_is_negative() {
        let mut c = cfg(VoteRule::Weighted);
        c.prior = Some(0.5); // threshold weight 0
        let w = win(&[(true, 0.8), (false, 0.8)]); // sum exactly 0
        assert!(!vote(&w, &c).unwrap());
    }

    #[test]
    fn weighted_without_prior_is_an_error() {
        let w = win(&[(true, 0.8)]);
        assert!(matches!(
            vote(&w, &cfg(VoteRule::Weighted)),
            Err(VotingError::MissingPrior)
        ));
    }

    #[test]
    fn unanimity_persistence_after_one_negative() {
        let k = 5;
        let mut history = vec![Statement::new(true, 1.0); k];
        history.push(Statement::new(false, 0.9));
        let c = cfg(VoteRule::Unanimity);
        // The negative stays in the window for the next k evaluations.
        for round in 0..k {
            assert!(!vote(&history, &c).unwrap(), "round {round}");
            history.push(Statement::new(true, 1.0));
        }
        assert!(vote(&history, &c).unwrap());
    }

    #[test]
    fn window_limits_to_last_k() {
        let mut history = vec![Statement::new(false, 1.0)];
        history.extend(vec![Statement::new(true, 1.0); 5]);
        let c = cfg(VoteRule::Unanimity);
        assert!(vote(&history, &c).unwrap()); // the old negative fell out
    }
}
