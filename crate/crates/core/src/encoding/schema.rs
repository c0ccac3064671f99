use std::fmt;

use serde::{Deserialize, Serialize};

use super::EncodingError;
use crate::datagen::{
    Camp, Frame, GameRecord, HERO_POOL, HERO_SLOTS, TOWERS_PER_CAMP, TYRANT_SLOT,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeroField {
    HeroId,
    Camp,
    Level,
    Hp,
    Gold,
    Kills,
    Deaths,
    Assists,
    X,
    Y,
    Skill(u8),
    /// Derived: distance from the hero to the Tyrant pit.
    TyrantDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalField {
    GameTime,
    AliveHeroes(Camp),
    Gold(Camp),
    AliveTowers(Camp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityField {
    Kind,
    Hp,
    Alive,
    X,
    Y,
}

/// Where a feature group reads its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Hero { slot: usize, field: HeroField },
    Global { field: GlobalField },
    Monster { slot: usize, field: EntityField },
    Tower { slot: usize, field: EntityField },
    /// Number of live soldiers of a camp.
    SoldierCount { camp: Camp },
}

impl FeatureSource {
    /// Raw (unnormalized) value in `frame`, or `None` when the entity is absent.
    pub fn extract(&self, frame: &Frame) -> Option<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match *self {
            FeatureSource::Hero { slot, field } => {
                let h = frame.heroes.get(slot)?;
                Some(match field {
                    HeroField::HeroId => h.hero_id as f64,
                    HeroField::Camp => h.camp.index() as f64,
                    HeroField::Level => h.level as f64,
                    HeroField::Hp => h.hp,
                    HeroField::Gold => h.gold,
                    HeroField::Kills => h.kills as f64,
                    HeroField::Deaths => h.deaths as f64,
                    HeroField::Assists => h.assists as f64,
                    HeroField::X => h.x,
                    HeroField::Y => h.y,
                    HeroField::Skill(i) => *h.skills.get(i as usize)? as f64,
                    HeroField::TyrantDistance => {
                        let m = frame.monsters.get(TYRANT_SLOT)?;
                        h.distance_to((m.x, m.y))
                    }
                })
            }
            FeatureSource::Global { field } => {
                let g = &frame.global;
                Some(match field {
                    GlobalField::GameTime => g.game_time as f64,
                    GlobalField::AliveHeroes(c) => g.alive_heroes[c.index()] as f64,
                    GlobalField::Gold(c) => g.gold[c.index()],
                    GlobalField::AliveTowers(c) => g.alive_towers[c.index()] as f64,
                })
            }
            FeatureSource::Monster { slot, field } => {
                let m = frame.monsters.get(slot)?;
                Some(match field {
                    EntityField::Kind => m.kind as u32 as f64,
                    EntityField::Hp => m.hp,
                    EntityField::Alive => flag(m.alive),
                    EntityField::X => m.x,
                    EntityField::Y => m.y,
                })
            }
            FeatureSource::Tower { slot, field } => {
                let t = frame.towers.get(slot)?;
                Some(match field {
                    EntityField::Kind => t.kind as f64,
                    EntityField::Hp => t.hp,
                    EntityField::Alive => flag(t.alive),
                    EntityField::X => t.x,
                    EntityField::Y => t.y,
                })
            }
            FeatureSource::SoldierCount { camp } => {
                Some(frame.soldiers.iter().filter(|s| s.camp == camp).count() as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { cardinality: usize },
    Numeric { min: f64, max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub source: FeatureSource,
    pub offset: usize,
    pub width: usize,
}

impl FeatureGroup {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    pub fn span(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

/// Ordered feature groups and their spans in the encoded vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    groups: Vec<FeatureGroup>,
    input_width: usize,
}

/// Group declaration used to assemble a schema.
#[derive(Clone, Debug)]
pub struct GroupSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub source: FeatureSource,
}

impl GroupSpec {
    pub fn categorical(name: impl Into<String>, cardinality: usize, source: FeatureSource) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
            source,
        }
    }

    pub fn numeric(name: impl Into<String>, source: FeatureSource) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric { min: 0.0, max: 0.0 },
            source,
        }
    }
}

impl fmt::Display for HeroField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeroField::HeroId => f.write_str("hero_id"),
            HeroField::Camp => f.write_str("camp"),
            HeroField::Level => f.write_str("level"),
            HeroField::Hp => f.write_str("hp"),
            HeroField::Gold => f.write_str("gold"),
            HeroField::Kills => f.write_str("kills"),
            HeroField::Deaths => f.write_str("deaths"),
            HeroField::Assists => f.write_str("assists"),
            HeroField::X => f.write_str("x"),
            HeroField::Y => f.write_str("y"),
            HeroField::Skill(i) => write!(f, "skill{}", i + 1),
            HeroField::TyrantDistance => f.write_str("tyrant_distance"),
        }
    }
}

impl FeatureSchema {
    pub fn from_groups(specs: Vec<GroupSpec>) -> Result<Self, EncodingError> {
        let mut offset = 0;
        let mut groups = Vec::with_capacity(specs.len());
        for spec in specs {
            let width = match spec.kind {
                FeatureKind::Categorical { cardinality: 0 } => {
                    return Err(EncodingError::EmptyCategorical(spec.name))
                }
                FeatureKind::Categorical { cardinality } => cardinality,
                FeatureKind::Numeric { .. } => 1,
            };
            groups.push(FeatureGroup {
                name: spec.name,
                kind: spec.kind,
                source: spec.source,
                offset,
                width,
            });
            offset += width;
        }
        if offset == 0 {
            return Err(EncodingError::EmptySchema);
        }
        Ok(Self {
            groups,
            input_width: offset,
        })
    }

    /// Desk-scale schema: every hero's identity, camp, economy, combat stats,
    /// position, skills and Tyrant distance; global counters; the Tyrant; and
    /// the six towers. Numeric ranges are unfitted.
    pub fn mini_skeleton() -> Self {
        let mut specs = Vec::new();
        for slot in 0..HERO_SLOTS {
            let hero = |field| FeatureSource::Hero { slot, field };
            let name = |field: HeroField| format!("hero_{slot}.{field}");
            specs.push(GroupSpec::categorical(name(HeroField::HeroId), HERO_POOL, hero(HeroField::HeroId)));
            specs.push(GroupSpec::categorical(name(HeroField::Camp), 2, hero(HeroField::Camp)));
            let mut numeric = vec![
                HeroField::Level,
                HeroField::Hp,
                HeroField::Gold,
                HeroField::Kills,
                HeroField::Deaths,
                HeroField::X,
                HeroField::Y,
            ];
            numeric.extend((0..4).map(HeroField::Skill));
            numeric.push(HeroField::TyrantDistance);
            for field in numeric {
                specs.push(GroupSpec::numeric(name(field), hero(field)));
            }
        }
        specs.push(GroupSpec::numeric(
            "global.game_time",
            FeatureSource::Global {
                field: GlobalField::GameTime,
            },
        ));
        for camp in [Camp::Red, Camp::Blue] {
            let c = camp.name();
            for (label, field) in [
                ("alive_heroes", GlobalField::AliveHeroes(camp)),
                ("gold", GlobalField::Gold(camp)),
                ("alive_towers", GlobalField::AliveTowers(camp)),
            ] {
                specs.push(GroupSpec::numeric(format!("global.{label}_{c}"), FeatureSource::Global { field }));
            }
        }
        for (label, field) in [
            ("hp", EntityField::Hp),
            ("alive", EntityField::Alive),
            ("x", EntityField::X),
            ("y", EntityField::Y),
        ] {
            specs.push(GroupSpec::numeric(
                format!("tyrant.{label}"),
                FeatureSource::Monster {
                    slot: TYRANT_SLOT,
                    field,
                },
            ));
        }
        for slot in 0..2 * TOWERS_PER_CAMP {
            for (label, field) in [("hp", EntityField::Hp), ("alive", EntityField::Alive)] {
                specs.push(GroupSpec::numeric(
                    format!("tower_{slot}.{label}"),
                    FeatureSource::Tower { slot, field },
                ));
            }
        }
        Self::from_groups(specs).expect("mini schema is well formed")
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Group owning encoded dimension `dim`.
    pub fn group_of(&self, dim: usize) -> Option<&FeatureGroup> {
        let idx = self.groups.partition_point(|g| g.offset + g.width <= dim);
        self.groups.get(idx).filter(|g| g.span().contains(&dim))
    }

    /// Name of one encoded dimension: the group name, plus `=value` for
    /// categorical dimensions.
    pub fn dimension_name(&self, dim: usize) -> Option<String> {
        let g = self.group_of(dim)?;
        Some(if g.is_categorical() {
            format!("{}={}", g.name, dim - g.offset)
        } else {
            g.name.clone()
        })
    }

    pub fn dimension_names(&self) -> Vec<String> {
        (0..self.input_width)
            .map(|d| self.dimension_name(d).expect("dimension in range"))
            .collect()
    }

    /// Fits numeric ranges to the empirical extremes over every frame of the
    /// training records.
    pub fn fit_normalization(&self, records: &[GameRecord]) -> Result<Self, EncodingError> {
        if records.iter().all(|r| r.frames.is_empty()) {
            return Err(EncodingError::EmptyTrainingSet);
        }
        let mut fitted = self.clone();
        let numeric: Vec<usize> = (0..self.groups.len())
            .filter(|&i| !self.groups[i].is_categorical())
            .collect();
        let mut lo = vec![f64::INFINITY; numeric.len()];
        let mut hi = vec![f64::NEG_INFINITY; numeric.len()];
        for frame in records.iter().flat_map(|r| &r.frames) {
            for (k, &i) in numeric.iter().enumerate() {
                if let Some(v) = self.groups[i].source.extract(frame) {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
        }
        for (k, &i) in numeric.iter().enumerate() {
            let (min, max) = if lo[k].is_finite() { (lo[k], hi[k]) } else { (0.0, 0.0) };
            fitted.groups[i].kind = FeatureKind::Numeric { min, max };
        }
        Ok(fitted)
    }

    /// Writes the encoding of `frame` into `out` (length `input_width`).
    pub fn encode_into(&self, frame: &Frame, out: &mut [f64]) -> Result<(), EncodingError> {
        if out.len() != self.input_width {
            return Err(EncodingError::WidthMismatch {
                expected: self.input_width,
                found: out.len(),
            });
        }
        for g in &self.groups {
            let value = g
                .source
                .extract(frame)
                .ok_or_else(|| EncodingError::MissingSource(g.name.clone()))?;
            match g.kind {
                FeatureKind::Categorical { cardinality } => {
                    let span = &mut out[g.span()];
                    span.fill(0.0);
                    if value < 0.0 || value.fract() != 0.0 || value as usize >= cardinality {
                        return Err(EncodingError::CategoryOutOfRange {
                            group: g.name.clone(),
                            value,
                            cardinality,
                        });
                    }
                    span[value as usize] = 1.0;
                }
                FeatureKind::Numeric { min, max } => {
                    out[g.offset] = normalize(value, min, max);
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EncodingError> {
        let schema: Self = serde_json::from_str(text).map_err(|e| EncodingError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Spans are contiguous, non-overlapping and cover `input_width`.
    pub fn validate(&self) -> Result<(), EncodingError> {
        let mut expected = 0;
        for g in &self.groups {
            let width = match g.kind {
                FeatureKind::Categorical { cardinality } => cardinality,
                FeatureKind::Numeric { .. } => 1,
            };
            if g.offset != expected || g.width != width || width == 0 {
                return Err(EncodingError::Schema(format!("group `{}` has an inconsistent span", g.name)));
            }
            expected += width;
        }
        if expected != self.input_width || expected == 0 {
            return Err(EncodingError::Schema("spans do not cover the input width".into()));
        }
        Ok(())
    }
}

/// `clamp((v - min) / (max - min), 0, 1)`; a degenerate range encodes to 0.
pub fn normalize(value: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((value - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Encodes one frame into a fresh vector.
pub fn encode_frame(frame: &Frame, schema: &FeatureSchema) -> Result<Vec<f64>, EncodingError> {
    let mut out = vec![0.0; schema.input_width()];
    schema.encode_into(frame, &mut out)?;
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_game, GeneratorConfig};
    use proptest::prelude::*;

    fn short() -> GeneratorConfig {
        GeneratorConfig {
            min_length: 300,
            max_length: 320,
            ..GeneratorConfig::default()
        }
    }

    fn hero_gold(slot: usize, min: f64, max: f64) -> GroupSpec {
        GroupSpec {
            name: format!("hero_{slot}.gold"),
            kind: FeatureKind::Numeric { min, max },
            source: FeatureSource::Hero {
                slot,
                field: HeroField::Gold,
            },
        }
    }

    fn frame_with_gold(gold: f64) -> Frame {
        let mut frame = generate_game(0, &short()).unwrap().frames.remove(0);
        frame.heroes[0].gold = gold;
        frame
    }

    #[test]
    fn one_hot_categorical() {
        let src = FeatureSource::Hero {
            slot: 0,
            field: HeroField::Level,
        };
        let schema = FeatureSchema::from_groups(vec![GroupSpec::categorical("lvl", 3, src)]).unwrap();
        let mut frame = frame_with_gold(0.0);
        frame.heroes[0].level = 1;
        assert_eq!(encode_frame(&frame, &schema).unwrap(), vec![0.0, 1.0, 0.0]);
        frame.heroes[0].level = 3;
        let err = encode_frame(&frame, &schema).unwrap_err();
        assert!(err.to_string().contains("lvl"), "{err}");
    }

    #[test]
    fn numeric_scaling_and_clamping() {
        let schema = FeatureSchema::from_groups(vec![hero_gold(0, 0.0, 1000.0)]).unwrap();
        assert_eq!(encode_frame(&frame_with_gold(500.0), &schema).unwrap(), vec![0.5]);
        let fitted = FeatureSchema::from_groups(vec![hero_gold(0, 10.0, 20.0)]).unwrap();
        assert_eq!(encode_frame(&frame_with_gold(15.0), &fitted).unwrap(), vec![0.5]);
        assert_eq!(encode_frame(&frame_with_gold(25.0), &fitted).unwrap(), vec![1.0]);
        assert_eq!(encode_frame(&frame_with_gold(5.0), &fitted).unwrap(), vec![0.0]);
    }

    #[test]
    fn constant_feature_encodes_zero() {
        let mut rec = generate_game(1, &short()).unwrap();
        for f in &mut rec.frames {
            f.heroes[0].gold = 42.0;
        }
        let schema = FeatureSchema::from_groups(vec![hero_gold(0, 0.0, 0.0)])
            .unwrap()
            .fit_normalization(std::slice::from_ref(&rec))
            .unwrap();
        assert_eq!(schema.groups()[0].kind, FeatureKind::Numeric { min: 42.0, max: 42.0 });
        for f in &rec.frames {
            assert_eq!(encode_frame(f, &schema).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn fit_uses_empirical_extremes() {
        let records: Vec<_> = (0..3).map(|s| generate_game(s, &short()).unwrap()).collect();
        let schema = FeatureSchema::mini_skeleton().fit_normalization(&records).unwrap();
        let g = schema.group("hero_4.gold").unwrap();
        let golds = records.iter().flat_map(|r| &r.frames).map(|f| f.heroes[4].gold);
        let lo = golds.clone().fold(f64::INFINITY, f64::min);
        let hi = golds.fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(g.kind, FeatureKind::Numeric { min: lo, max: hi });
        assert_eq!(
            FeatureSchema::mini_skeleton().fit_normalization(&[]),
            Err(EncodingError::EmptyTrainingSet)
        );
    }

    #[test]
    fn mini_width_matches_group_sum() {
        let schema = FeatureSchema::mini_skeleton();
        let sum: usize = schema
            .groups()
            .iter()
            .map(|g| match g.kind {
                FeatureKind::Categorical { cardinality } => cardinality,
                FeatureKind::Numeric { .. } => 1,
            })
            .sum();
        assert_eq!(schema.input_width(), sum);
        let frame = frame_with_gold(1.0);
        assert_eq!(encode_frame(&frame, &schema).unwrap().len(), sum);
        schema.validate().unwrap();
    }

    #[test]
    fn dimension_names() {
        let schema = FeatureSchema::mini_skeleton();
        assert_eq!(schema.dimension_name(0).unwrap(), "hero_0.hero_id=0");
        assert_eq!(schema.dimension_name(19).unwrap(), "hero_0.hero_id=19");
        assert_eq!(schema.dimension_name(20).unwrap(), "hero_0.camp=0");
        assert_eq!(schema.dimension_name(22).unwrap(), "hero_0.level");
        let gold = schema.group("hero_3.gold").unwrap();
        assert_eq!(schema.dimension_name(gold.offset).unwrap(), "hero_3.gold");
        assert!(schema.dimension_name(schema.input_width()).is_none());
        assert_eq!(schema.dimension_names().len(), schema.input_width());
    }

    #[test]
    fn json_round_trip() {
        let records = vec![generate_game(5, &short()).unwrap()];
        let schema = FeatureSchema::mini_skeleton().fit_normalization(&records).unwrap();
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(back, schema);
        let broken = schema.to_json().replacen("\"offset\": 20", "\"offset\": 21", 1);
        assert!(matches!(FeatureSchema::from_json(&broken), Err(EncodingError::Schema(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn generated_frames_always_encode(seed in 0u64..10_000, pick in 0usize..300) {
            let rec = generate_game(seed, &short()).unwrap();
            let schema = FeatureSchema::mini_skeleton()
                .fit_normalization(std::slice::from_ref(&generate_game(seed ^ 1, &short()).unwrap()))
                .unwrap();
            let frame = &rec.frames[pick % rec.frames.len()];
            let x = encode_frame(frame, &schema).unwrap();
            for g in schema.groups() {
                let span = &x[g.span()];
                if g.is_categorical() {
                    prop_assert_eq!(span.iter().filter(|&&v| v == 1.0).count(), 1);
                    prop_assert!(span.iter().all(|&v| v == 0.0 || v == 1.0));
                } else {
                    prop_assert!((0.0..=1.0).contains(&span[0]));
                }
            }
        }
    }
}
