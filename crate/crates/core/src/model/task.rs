use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Downstream objective; selects the head, task token and tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Sr2,
    Sr3,
    Sr4,
    Denoise,
    Segment,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Sr2,
        TaskKind::Sr3,
        TaskKind::Sr4,
        TaskKind::Denoise,
        TaskKind::Segment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sr2 => "sr2",
            TaskKind::Sr3 => "sr3",
            TaskKind::Sr4 => "sr4",
            TaskKind::Denoise => "denoise",
            TaskKind::Segment => "segment",
        }
    }

    /// Spatial upscale factor produced by the tail.
    pub fn scale(self) -> usize {
        match self {
            TaskKind::Sr2 => 2,
            TaskKind::Sr3 => 3,
            TaskKind::Sr4 => 4,
            TaskKind::Denoise | TaskKind::Segment => 1,
        }
    }

    pub fn is_super_resolution(self) -> bool {
        self.scale() > 1
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task `{s}`")))
    }
}
