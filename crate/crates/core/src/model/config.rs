use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the set-attention stack sees as one set element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    /// One element per person (flattened 3J pose).
    People,
    /// One element per joint of every person; person identity is lost.
    Scene,
    /// Every person is its own singleton set; no information crosses persons.
    None,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 3] = [
        InteractionMode::People,
        InteractionMode::Scene,
        InteractionMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::People => "people",
            InteractionMode::Scene => "scene",
            InteractionMode::None => "none",
        }
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InteractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "people" => Ok(InteractionMode::People),
            "scene" => Ok(InteractionMode::Scene),
            "none" => Ok(InteractionMode::None),
            other => Err(Error::Config(format!(
                "unknown interaction mode `{other}` (expected people, scene or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub decoder_hidden: usize,
    pub mode: InteractionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 15,
            dim: 64,
            blocks: 2,
            heads: 4,
            decoder_hidden: 256,
            mode: InteractionMode::People,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.joints < 2 {
            return fail(format!("joints must be >= 2, got {}", self.joints));
        }
        if self.blocks < 1 {
            return fail("at least one SAB block is required".into());
        }
        if self.heads < 1 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        // layer norm needs width >= 2
        if self.dim < 2 {
            return fail(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.decoder_hidden < 1 {
            return fail("decoder_hidden must be >= 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let linear = |i: usize, o: usize| i * o + o;
        let ff = 2 * linear(d, d);
        let mab = 4 * linear(d, d) + 2 * (2 * d) + ff;
        let person_proj = linear(3 * self.joints, d);
        let joint_proj = match self.mode {
            InteractionMode::Scene => linear(3, d),
            _ => 0,
        };
        let pma = d + ff + mab;
        let decoder = linear(2 * d, self.decoder_hidden) + linear(self.decoder_hidden, 3 * self.joints);
        person_proj + joint_proj + self.blocks * mab + pma + decoder
    }
}
