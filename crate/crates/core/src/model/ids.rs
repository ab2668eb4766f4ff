use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Index of a managed device (AP or UE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u16);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Directed link from `from` to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId {
    pub from: DeviceId,
    pub to: DeviceId,
}

impl LinkId {
    pub fn new(from: u16, to: u16) -> Self {
        LinkId {
            from: DeviceId(from),
            to: DeviceId(to),
        }
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FileDelivery,
    DelaySensitive,
}

impl TaskKind {
    fn tag(self) -> &'static str {
        match self {
            TaskKind::FileDelivery => "file",
            TaskKind::DelaySensitive => "delay",
        }
    }
}

/// A task is identified by its link, its kind and an ordinal among tasks of
/// that kind on the link. The textual form is `"<from>-<to>:<kind><ordinal>"`,
/// e.g. `"1-0:delay0"`, and is used as the JSON map key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId {
    pub link: LinkId,
    pub kind: TaskKind,
    pub ordinal: u16,
}

impl TaskId {
    pub fn file(from: u16, to: u16, ordinal: u16) -> Self {
        TaskId {
            link: LinkId::new(from, to),
            kind: TaskKind::FileDelivery,
            ordinal,
        }
    }

    pub fn delay(from: u16, to: u16, ordinal: u16) -> Self {
        TaskId {
            link: LinkId::new(from, to),
            kind: TaskKind::DelaySensitive,
            ordinal,
        }
    }

    pub fn device(&self) -> DeviceId {
        self.link.from
    }

    pub fn is_file(&self) -> bool {
        self.kind == TaskKind::FileDelivery
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.link, self.kind.tag(), self.ordinal)
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Config(format!("malformed task id `{s}`"));
        let (link, task) = s.split_once(':').ok_or_else(bad)?;
        let (from, to) = link.split_once('-').ok_or_else(bad)?;
        let (kind, ordinal) = if let Some(rest) = task.strip_prefix("file") {
            (TaskKind::FileDelivery, rest)
        } else if let Some(rest) = task.strip_prefix("delay") {
            (TaskKind::DelaySensitive, rest)
        } else {
            return Err(bad());
        };
        Ok(TaskId {
            link: LinkId::new(
                from.trim().parse().map_err(|_| bad())?,
                to.trim().parse().map_err(|_| bad())?,
            ),
            kind,
            ordinal: ordinal.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
