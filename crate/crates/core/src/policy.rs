//! Crawling policies as pure priority rules.
//!
//! A policy decides the priority of a page when it is first discovered and
//! whether a later rediscovery (a new in-link from a freshly crawled page)
//! changes it. Selection is always "highest priority, oldest first" and lives
//! in the frontier.

use std::fmt;
use std::str::FromStr;

use crate::corpus::PageId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// Constant priority; FIFO selection makes this breadth-first.
    Bfs,
    /// Priority is the target page's own quality, known before download.
    QOracle,
    /// Priority is the quality of the first page that linked to the target.
    QFirst,
    /// Like `QFirst`, lowered to the minimum quality over all discovering pages.
    QMin,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Bfs,
        PolicyKind::QOracle,
        PolicyKind::QFirst,
        PolicyKind::QMin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Bfs => "bfs",
            PolicyKind::QOracle => "qoracle",
            PolicyKind::QFirst => "qfirst",
            PolicyKind::QMin => "qmin",
        }
    }

    /// Whether discovery contexts must carry the target's own score.
    pub fn uses_oracle(self) -> bool {
        self == PolicyKind::QOracle
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown policy {s:?} (expected one of bfs, qoracle, qfirst, qmin)"
                ))
            })
    }
}

/// What the crawler knows when it sees the link `ancestor -> target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscoveryContext {
    pub ancestor: PageId,
    /// Quality of the (already downloaded) ancestor.
    pub ancestor_quality: f64,
    pub target: PageId,
    /// The target's own quality; only an oracle can know this.
    pub target_quality_oracle: Option<f64>,
}

/// A priority-assignment function plus an update rule.
pub trait PriorityRule {
    fn initial_priority(&self, ctx: &DiscoveryContext) -> Result<f64>;

    /// New priority for a page already in the frontier, or `None` to leave it.
    fn rediscovery_update(&self, current: f64, ctx: &DiscoveryContext) -> Option<f64>;
}

impl PriorityRule for PolicyKind {
    fn initial_priority(&self, ctx: &DiscoveryContext) -> Result<f64> {
        match self {
            PolicyKind::Bfs => Ok(0.0),
            PolicyKind::QOracle => ctx.target_quality_oracle.ok_or_else(|| {
                Error::invalid(format!(
                    "qoracle needs the target's own score for page {}",
                    ctx.target
                ))
            }),
            PolicyKind::QFirst | PolicyKind::QMin => Ok(ctx.ancestor_quality),
        }
    }

    fn rediscovery_update(&self, current: f64, ctx: &DiscoveryContext) -> Option<f64> {
        match self {
            PolicyKind::QMin if ctx.ancestor_quality < current => Some(ctx.ancestor_quality),
            _ => None,
        }
    }
}
