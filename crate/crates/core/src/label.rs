use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary meme label. `Troll` is the positive class (target 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Troll,
    NotTroll,
}

impl Label {
    /// Canonical class order used by confusion matrices and reports.
    pub const ALL: [Label; 2] = [Label::Troll, Label::NotTroll];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Troll => "troll",
            Label::NotTroll => "not-troll",
        }
    }

    pub fn target(self) -> f32 {
        match self {
            Label::Troll => 1.0,
            Label::NotTroll => 0.0,
        }
    }

    /// Thresholds a troll probability at 0.5.
    pub fn from_probability(p: f32) -> Self {
        if p >= 0.5 {
            Label::Troll
        } else {
            Label::NotTroll
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Troll => 0,
            Label::NotTroll => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel;

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "troll" => Ok(Label::Troll),
            "not-troll" => Ok(Label::NotTroll),
            _ => Err(UnknownLabel),
        }
    }
}
