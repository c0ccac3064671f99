use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, GameRecord, Killer, Victim, TYRANT_SLOT};

/// Interval between win-task reference times.
pub const WIN_INTERVAL: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Win,
    Tyrant,
    Kill,
    Bekill,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Win, Task::Tyrant, Task::Kill, Task::Bekill];

    pub fn num_classes(self) -> usize {
        match self {
            Task::Win | Task::Tyrant => 2,
            Task::Kill | Task::Bekill => super::HERO_SLOTS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Win => "win",
            Task::Tyrant => "tyrant",
            Task::Kill => "kill",
            Task::Bekill => "bekill",
        }
    }

    /// Human-readable name of a class index.
    pub fn class_name(self, class: usize) -> String {
        match self {
            Task::Win | Task::Tyrant => super::Camp::from_index(class).name().to_string(),
            Task::Kill | Task::Bekill => format!("hero_{class}"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "win" => Ok(Task::Win),
            "tyrant" => Ok(Task::Tyrant),
            "kill" => Ok(Task::Kill),
            "bekill" => Ok(Task::Bekill),
            _ => Err(DataError::UnknownTask(s.to_string())),
        }
    }
}

/// A labelled prediction point inside one match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInstance {
    pub task: Task,
    /// End of the input window (game seconds).
    pub t: u32,
    /// Seconds between `t` and the anchored event (0 for win).
    pub horizon: u32,
    pub label: usize,
}

/// Extracts every instance of `task` from a match.
///
/// Instances whose `window`-second input would start before the first frame
/// are dropped.
pub fn extract_event_instances(
    record: &GameRecord,
    task: Task,
    horizon: u32,
    window: u32,
) -> Result<Vec<EventInstance>, DataError> {
    if window == 0 {
        return Err(DataError::InvalidWindow);
    }
    if task != Task::Win && horizon == 0 {
        return Err(DataError::InvalidHorizon { task, horizon });
    }
    let fits = |t: u32| t >= window && t <= record.length();
    let mut out = Vec::new();
    match task {
        Task::Win => {
            let mut t = WIN_INTERVAL;
            while t <= record.length() {
                if fits(t) {
                    out.push(EventInstance {
                        task,
                        t,
                        horizon: 0,
                        label: record.winner.index(),
                    });
                }
                t += WIN_INTERVAL;
            }
        }
        Task::Tyrant | Task::Kill | Task::Bekill => {
            for death in &record.deaths {
                let label = match (task, death.victim, death.killer) {
                    (Task::Tyrant, Victim::Monster(TYRANT_SLOT), _) => match death.killer_camp {
                        Some(camp) => camp.index(),
                        None => continue,
                    },
                    (Task::Kill, Victim::Hero(_), Killer::Hero(killer)) => killer,
                    (Task::Bekill, Victim::Hero(victim), _) => victim,
                    _ => continue,
                };
                let Some(t) = death.death_frame.checked_sub(horizon) else {
                    continue;
                };
                if fits(t) {
                    out.push(EventInstance {
                        task,
                        t,
                        horizon,
                        label,
                    });
                }
            }
        }
    }
    Ok(out)
}
