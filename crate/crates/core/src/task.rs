use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four model tasks of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Entity pair filtering: which ordered pairs are related at all.
    Epf,
    /// Relation classification on the filtered pairs.
    Rc,
    /// Head candidates for a set of relations.
    Head,
    /// Tail candidates for a set of relations.
    Tail,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Epf, TaskKind::Rc, TaskKind::Head, TaskKind::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Epf => "epf",
            TaskKind::Rc => "rc",
            TaskKind::Head => "head",
            TaskKind::Tail => "tail",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epf" => Ok(TaskKind::Epf),
            "rc" => Ok(TaskKind::Rc),
            "head" => Ok(TaskKind::Head),
            "tail" => Ok(TaskKind::Tail),
            other => Err(format!("unknown task {other:?} (expected epf, rc, head or tail)")),
        }
    }
}
