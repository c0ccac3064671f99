//! Synthetic MOBA-style match telemetry.
//!
//! Every match is simulated second by second with five feature categories
//! (hero, global, monster, soldier, tower) plus a death log. A handful of
//! rules tie labels to observable features so that attribution quality can be
//! checked against known causes:
//!
//! * the camp that takes the Tyrant is the camp whose heroes are closer to it
//!   at the kill frame, with probability `signal_strength`;
//! * the winner is the camp favored by the gold-income trajectory, with
//!   probability `0.5 + 0.5 * signal_strength`;
//! * the next victim is the lowest-hp hero and the next killer the enemy hero
//!   with the highest level-plus-gold score, each with probability
//!   `signal_strength`.

mod events;
mod io;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use events::{extract_event_instances, EventInstance, Task};
pub use io::{load_dataset, read_dataset, save_dataset, save_dataset_with_digest, write_dataset, DATASET_SCHEMA_VERSION};
pub use sim::generate_game;

/// Heroes per camp; slots 0..5 are red, 5..10 blue.
pub const HEROES_PER_CAMP: usize = 5;
pub const HERO_SLOTS: usize = 2 * HEROES_PER_CAMP;
/// Size of the hero-id pool (cardinality of the hero-id categorical).
pub const HERO_POOL: usize = 20;
pub const MAX_LEVEL: u32 = 15;
/// Towers per camp (outer, inner, base).
pub const TOWERS_PER_CAMP: usize = 3;
/// Monster slots; slot 0 is always the Tyrant.
pub const MONSTER_SLOTS: usize = 3;
pub const TYRANT_SLOT: usize = 0;
pub const TYRANT_POSITION: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: malformed record at `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: unsupported schema version {found}")]
    SchemaVersion { line: usize, found: u32 },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("horizon {horizon} s is not allowed for task {task}")]
    InvalidHorizon { task: Task, horizon: u32 },
    #[error("window length must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camp {
    Red,
    Blue,
}

impl Camp {
    pub fn index(self) -> usize {
        match self {
            Camp::Red => 0,
            Camp::Blue => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Camp::Red
        } else {
            Camp::Blue
        }
    }

    pub fn opponent(self) -> Self {
        match self {
            Camp::Red => Camp::Blue,
            Camp::Blue => Camp::Red,
        }
    }

    /// Camp owning hero slot `slot`.
    pub fn of_slot(slot: usize) -> Self {
        Self::from_index(slot / HEROES_PER_CAMP)
    }

    pub fn slots(self) -> std::ops::Range<usize> {
        let start = self.index() * HEROES_PER_CAMP;
        start..start + HEROES_PER_CAMP
    }

    pub fn name(self) -> &'static str {
        match self {
            Camp::Red => "red",
            Camp::Blue => "blue",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeroState {
    pub hero_id: u32,
    pub camp: Camp,
    pub level: u32,
    pub kills: u32,
    pub assists: u32,
    pub deaths: u32,
    pub hp: f64,
    pub x: f64,
    pub y: f64,
    pub skills: [u32; 4],
    pub gold: f64,
}

impl HeroState {
    pub fn is_alive(&self) -> bool {
        self.hp > 0.0
    }

    pub fn distance_to(&self, point: (f64, f64)) -> f64 {
        ((self.x - point.0).powi(2) + (self.y - point.1).powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub game_time: u32,
    /// Indexed by [`Camp::index`].
    pub alive_heroes: [u32; 2],
    pub gold: [f64; 2],
    pub alive_towers: [u32; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonsterKind {
    Tyrant,
    RedBuff,
    BlueBuff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonsterState {
    pub kind: MonsterKind,
    pub hp: f64,
    pub alive: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoldierState {
    pub camp: Camp,
    pub kind: u32,
    pub hp: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerState {
    pub camp: Camp,
    /// 0 outer, 1 inner, 2 base.
    pub kind: u32,
    pub hp: f64,
    pub alive: bool,
    pub x: f64,
    pub y: f64,
}

/// One second of telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub game_time: u32,
    #[serde(rename = "hero")]
    pub heroes: Vec<HeroState>,
    pub global: GlobalState,
    #[serde(rename = "monster")]
    pub monsters: Vec<MonsterState>,
    #[serde(rename = "soldier")]
    pub soldiers: Vec<SoldierState>,
    #[serde(rename = "tower")]
    pub towers: Vec<TowerState>,
}

impl Frame {
    pub fn tyrant(&self) -> &MonsterState {
        &self.monsters[TYRANT_SLOT]
    }

    /// Mean hero-to-Tyrant distance of a camp.
    pub fn mean_tyrant_distance(&self, camp: Camp) -> f64 {
        let tyrant = self.tyrant();
        camp.slots()
            .map(|s| self.heroes[s].distance_to((tyrant.x, tyrant.y)))
            .sum::<f64>()
            / HEROES_PER_CAMP as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Victim {
    Hero(usize),
    Monster(usize),
    Tower(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Killer {
    Hero(usize),
    Environment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeathEvent {
    pub death_frame: u32,
    pub victim: Victim,
    pub killer: Killer,
    pub killer_camp: Option<Camp>,
}

/// One simulated match.
#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub game_id: u64,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub deaths: Vec<DeathEvent>,
    pub winner: Camp,
}

impl GameRecord {
    pub fn length(&self) -> u32 {
        self.frames.len() as u32
    }

    /// Frame at game time `t` (1-based).
    pub fn frame(&self, t: u32) -> Option<&Frame> {
        t.checked_sub(1).and_then(|i| self.frames.get(i as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub min_length: u32,
    pub max_length: u32,
    pub heroes_per_camp: usize,
    /// Probability that each planted rule is applied.
    pub signal_strength: f64,
    pub tyrant_first_spawn: u32,
    pub tyrant_respawn: u32,
    /// Per-second probability that a hero fight starts.
    pub fight_rate: f64,
    /// Fraction of hero deaths credited to towers or monsters.
    pub environment_kill_rate: f64,
    /// Extra gold per second for each hero of the favored camp.
    pub favored_income: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_length: 300,
            max_length: 900,
            heroes_per_camp: HEROES_PER_CAMP,
            signal_strength: 0.9,
            tyrant_first_spawn: 90,
            tyrant_respawn: 120,
            fight_rate: 0.04,
            environment_kill_rate: 0.1,
            favored_income: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.heroes_per_camp == 0 {
            return fail("a match needs heroes".into());
        }
        if self.heroes_per_camp != HEROES_PER_CAMP {
            return fail(format!("heroes_per_camp must be {HEROES_PER_CAMP}"));
        }
        if self.min_length == 0 || self.max_length == 0 {
            return fail("match length must be positive".into());
        }
        if self.min_length < 300 || self.max_length > 1200 || self.min_length > self.max_length {
            return fail(format!(
                "match length range {}..={} must lie within 300..=1200",
                self.min_length, self.max_length
            ));
        }
        if self.tyrant_respawn == 0 {
            return fail("tyrant respawn interval must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return fail("signal_strength must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.fight_rate) || !(0.0..=1.0).contains(&self.environment_kill_rate) {
            return fail("rates must lie in [0, 1]".into());
        }
        if self.favored_income < 0.0 {
            return fail("favored_income must be non-negative".into());
        }
        Ok(())
    }
}
