use serde::{Deserialize, Serialize};

use crate::text::jaccard;
use crate::Timestamp;

/// Retrieval weights and the staleness time constant, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub w_rel: f64,
    pub w_stale: f64,
    pub w_risk: f64,
    pub tau: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            w_rel: 0.60,
            w_stale: 0.25,
            w_risk: 0.15,
            tau: 7.0,
        }
    }
}

/// `1 - exp(-age/tau)`: zero when just verified, saturating at one.
pub fn staleness(age: f64, tau: f64) -> f64 {
    1.0 - (-age / tau).exp()
}

impl ScoringConfig {
    pub fn staleness_at(&self, last_verified_at: Timestamp, now: Timestamp) -> f64 {
        staleness(now.saturating_sub(last_verified_at) as f64, self.tau)
    }

    /// Freshness is the complement of staleness.
    pub fn freshness_at(&self, last_verified_at: Timestamp, now: Timestamp) -> f64 {
        1.0 - self.staleness_at(last_verified_at, now)
    }

    pub fn score(&self, relevance: f64, staleness: f64, action_risk: f64, confidence: f64) -> f64 {
        self.w_rel * relevance - self.w_stale * staleness - self.w_risk * action_risk * (1.0 - confidence)
    }
}

/// Relevance of stored content to a query, in `[0,1]`.
pub trait RelevanceModel: Send + Sync {
    fn relevance(&self, content: &str, query: &str) -> f64;
}

/// Lowercase whitespace-token Jaccard overlap.
#[derive(Debug, Default, Clone, Copy)]
pub struct TokenJaccard;

impl RelevanceModel for TokenJaccard {
    fn relevance(&self, content: &str, query: &str) -> f64 {
        jaccard(content, query)
    }
}
