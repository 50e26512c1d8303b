//! Chain layout: Alice, intermediate hosts, Bob, and where Eve listens.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::delay::{DelayModel, DelayModelError};

/// WAN hop spread used by [`ChainTopology::default`], in nanoseconds.
pub const DEFAULT_WAN_SCALE_NS: f64 = 2_000_000.0;
/// Eve's timestamp jitter relative to the WAN hop spread.
pub const DEFAULT_EVE_JITTER_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("line {line}: {source}")]
    Model {
        line: usize,
        #[source]
        source: DelayModelError,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("topology needs at least one hop")]
    NoHops,
    #[error("eve position {position} is beyond {hops} hops")]
    EvePosition { position: usize, hops: usize },
    #[error("drop probability {0} outside [0, 1)")]
    DropProb(f64),
}

/// Hops are listed from Alice towards Bob. Nodes are numbered so that node
/// `i` sits just before hop `i`: node 0 is Alice and node `hops.len()` is
/// Bob. Eve listens at node `eve_position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTopology {
    pub hops: Vec<DelayModel>,
    pub eve_position: usize,
    /// Additive noise on each of Eve's passage timestamps.
    pub eve_jitter: DelayModel,
    /// Per-packet loss probability.
    pub drop_prob: f64,
}

impl Default for ChainTopology {
    /// Alice and Eve share a LAN segment in front of two WAN hops.
    fn default() -> Self {
        Self::with_eve_jitter(DEFAULT_EVE_JITTER_FRACTION)
    }
}

impl ChainTopology {
    /// The default chain with Eve's jitter at `fraction` of the WAN spread.
    pub fn with_eve_jitter(fraction: f64) -> Self {
        let wan = DEFAULT_WAN_SCALE_NS;
        Self {
            hops: vec![
                DelayModel::normal(20.0 * wan * 0.1, wan * 0.1),
                DelayModel::normal(25.0 * wan, wan),
                DelayModel::normal(25.0 * wan, wan),
            ],
            eve_position: 1,
            eve_jitter: DelayModel::normal(0.0, wan * fraction),
            drop_prob: 0.0,
        }
    }

    /// `n` identical hops with no eavesdropper noise, Eve at Alice.
    pub fn uniform(model: DelayModel, n: usize) -> Self {
        Self {
            hops: vec![model; n],
            eve_position: 0,
            eve_jitter: DelayModel::Constant { value: 0.0 },
            drop_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.hops.is_empty() {
            return Err(TopologyError::NoHops);
        }
        if self.eve_position > self.hops.len() {
            return Err(TopologyError::EvePosition {
                position: self.eve_position,
                hops: self.hops.len(),
            });
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(TopologyError::DropProb(self.drop_prob));
        }
        Ok(())
    }

    /// Parses the `key = value` text format:
    ///
    /// ```text
    /// # one line per hop, Alice first
    /// hop = normal loc=200000 scale=200000
    /// hop = laplace loc=50000000 scale=2000000
    /// eve_position = 1
    /// eve_jitter = normal loc=0 scale=100000
    /// drop_prob = 0.01
    /// ```
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut hops = Vec::new();
        let mut eve_position = 0;
        let mut eve_jitter = DelayModel::Constant { value: 0.0 };
        let mut drop_prob = 0.0;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| TopologyError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let value = value.trim();
            let model = |v: &str| v.parse::<DelayModel>().map_err(|source| TopologyError::Model { line, source });
            let syntax = |message: String| TopologyError::Syntax { line, message };
            match key.trim() {
                "hop" => hops.push(model(value)?),
                "eve_jitter" => eve_jitter = model(value)?,
                "eve_position" => {
                    eve_position = value.parse().map_err(|_| syntax(format!("bad eve_position `{value}`")))?
                }
                "drop_prob" => drop_prob = value.parse().map_err(|_| syntax(format!("bad drop_prob `{value}`")))?,
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        let topo = Self {
            hops,
            eve_position,
            eve_jitter,
            drop_prob,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for h in &self.hops {
            writeln!(out, "hop = {h}").unwrap();
        }
        writeln!(out, "eve_position = {}", self.eve_position).unwrap();
        writeln!(out, "eve_jitter = {}", self.eve_jitter).unwrap();
        writeln!(out, "drop_prob = {}", self.drop_prob).unwrap();
        out
    }
}
