use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const FIGHT_DURATION: u32 = 3;
const TYRANT_APPROACH: u32 = 30;
const TYRANT_HP_DRAIN: u32 = 8;
const TOWER_SIEGE: u32 = 60;
const KILL_BOUNTY: f64 = 100.0;
const ASSIST_BOUNTY: f64 = 30.0;
const TYRANT_BOUNTY: f64 = 60.0;
const SOLDIER_CAP: usize = 12;

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn base_of(camp: Camp) -> (f64, f64) {
    match camp {
        Camp::Red => (0.08, 0.08),
        Camp::Blue => (0.92, 0.92),
    }
}

fn tower_position(camp: Camp, kind: u32) -> (f64, f64) {
    let d = [0.35, 0.22, 0.1][kind as usize];
    match camp {
        Camp::Red => (d, d),
        Camp::Blue => (1.0 - d, 1.0 - d),
    }
}

const BUFF_POSITIONS: [(f64, f64); 2] = [(0.25, 0.4), (0.75, 0.6)];

fn skills_for(level: u32) -> [u32; 4] {
    [
        level.div_ceil(3).min(6),
        ((level + 1) / 3).min(6),
        (level / 3).min(6),
        (level / 4).min(3),
    ]
}

struct Doom {
    death_at: u32,
    killer: Killer,
    start_hp: f64,
}

struct HeroSim {
    state: HeroState,
    exp: f64,
    target: (f64, f64),
    retarget_at: u32,
    respawn_at: Option<u32>,
    doom: Option<Doom>,
}

impl HeroSim {
    fn alive(&self) -> bool {
        self.state.hp > 0.0
    }

    fn score(&self) -> f64 {
        self.state.level as f64 + self.state.gold / 1000.0
    }
}

struct TowerSim {
    state: TowerState,
    destroy_at: Option<u32>,
}

struct MonsterSim {
    state: MonsterState,
    spawn_at: Option<u32>,
    kill_at: Option<u32>,
}

struct Soldier {
    state: SoldierState,
    born: u32,
}

struct Sim<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    length: u32,
    favored: Camp,
    winner: Camp,
    heroes: Vec<HeroSim>,
    towers: Vec<TowerSim>,
    monsters: Vec<MonsterSim>,
    soldiers: Vec<Soldier>,
    contesting: Option<Camp>,
    deaths: Vec<DeathEvent>,
    frames: Vec<Frame>,
}

/// Simulates one match. Deterministic for a fixed `(seed, config)`.
pub fn generate_game(seed: u64, config: &GeneratorConfig) -> Result<GameRecord, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = rng.gen_range(config.min_length..=config.max_length);
    let favored = if rng.gen_bool(0.5) { Camp::Red } else { Camp::Blue };
    let keep_favored = 0.5 + 0.5 * config.signal_strength;
    let winner = if rng.gen_bool(keep_favored) {
        favored
    } else {
        favored.opponent()
    };

    let mut ids: Vec<u32> = (0..HERO_POOL as u32).collect();
    ids.shuffle(&mut rng);
    let heroes = (0..HERO_SLOTS)
        .map(|slot| {
            let camp = Camp::of_slot(slot);
            let base = base_of(camp);
            HeroSim {
                state: HeroState {
                    hero_id: ids[slot],
                    camp,
                    level: 1,
                    kills: 0,
                    assists: 0,
                    deaths: 0,
                    hp: 1.0,
                    x: round3(base.0 + rng.gen_range(-0.03..0.03)),
                    y: round3(base.1 + rng.gen_range(-0.03..0.03)),
                    skills: skills_for(1),
                    gold: 300.0,
                },
                exp: 0.0,
                target: base,
                retarget_at: 1,
                respawn_at: None,
                doom: None,
            }
        })
        .collect();

    let loser = winner.opponent();
    let mut towers = Vec::with_capacity(2 * TOWERS_PER_CAMP);
    for camp in [Camp::Red, Camp::Blue] {
        for kind in 0..TOWERS_PER_CAMP as u32 {
            let (x, y) = tower_position(camp, kind);
            let destroy_at = if camp == loser {
                Some(match kind {
                    0 => (0.4 * length as f64).round() as u32,
                    1 => (0.7 * length as f64).round() as u32,
                    _ => length,
                })
            } else if kind == 0 && rng.gen_bool(0.5) {
                Some((rng.gen_range(0.3..0.9) * length as f64).round() as u32)
            } else {
                None
            };
            towers.push(TowerSim {
                state: TowerState {
                    camp,
                    kind,
                    hp: 1.0,
                    alive: true,
                    x,
                    y,
                },
                destroy_at,
            });
        }
    }

    let mut monsters = vec![MonsterSim {
        state: MonsterState {
            kind: MonsterKind::Tyrant,
            hp: 0.0,
            alive: false,
            x: TYRANT_POSITION.0,
            y: TYRANT_POSITION.1,
        },
        spawn_at: Some(config.tyrant_first_spawn.max(1)),
        kill_at: None,
    }];
    for (kind, pos) in [MonsterKind::RedBuff, MonsterKind::BlueBuff].into_iter().zip(BUFF_POSITIONS) {
        monsters.push(MonsterSim {
            state: MonsterState {
                kind,
                hp: 0.0,
                alive: false,
                x: pos.0,
                y: pos.1,
            },
            spawn_at: Some(30),
            kill_at: None,
        });
    }

    let mut sim = Sim {
        cfg: config,
        rng,
        length,
        favored,
        winner,
        heroes,
        towers,
        monsters,
        soldiers: Vec::new(),
        contesting: None,
        deaths: Vec::new(),
        frames: Vec::with_capacity(length as usize),
    };
    for t in 1..=length {
        sim.step(t);
    }
    Ok(GameRecord {
        game_id: seed,
        seed,
        frames: sim.frames,
        deaths: sim.deaths,
        winner: sim.winner,
    })
}

impl Sim<'_> {
    fn step(&mut self, t: u32) {
        self.resolve_hero_deaths(t);
        self.respawn_heroes(t);
        self.update_heroes(t);
        self.start_fight(t);
        self.update_tyrant(t);
        self.update_buffs(t);
        self.update_towers(t);
        self.update_soldiers(t);
        self.emit(t);
    }

    fn camp_gold(&self, camp: Camp) -> f64 {
        camp.slots().map(|s| self.heroes[s].state.gold.round()).sum()
    }

    fn random_alive_hero(&mut self, camp: Camp) -> Option<usize> {
        let alive: Vec<usize> = camp.slots().filter(|&s| self.heroes[s].alive()).collect();
        alive.choose(&mut self.rng).copied()
    }

    fn resolve_hero_deaths(&mut self, t: u32) {
        for slot in 0..HERO_SLOTS {
            let due = self.heroes[slot].doom.as_ref().is_some_and(|d| d.death_at == t);
            if !due {
                continue;
            }
            let doom = self.heroes[slot].doom.take().unwrap();
            let camp = Camp::of_slot(slot);
            let base = base_of(camp);
            let hero = &mut self.heroes[slot];
            hero.state.hp = 0.0;
            hero.state.deaths += 1;
            hero.state.x = base.0;
            hero.state.y = base.1;
            hero.respawn_at = Some(t + 6 + hero.state.level);
            let killer_camp = match doom.killer {
                Killer::Hero(k) => {
                    let killer = &mut self.heroes[k];
                    killer.state.kills += 1;
                    killer.state.gold += KILL_BOUNTY;
                    killer.exp += 40.0;
                    let helpers: Vec<usize> = Camp::of_slot(k)
                        .slots()
                        .filter(|&s| s != k && self.heroes[s].alive())
                        .collect();
                    let count = self.rng.gen_range(0..=2.min(helpers.len()));
                    for &h in helpers.choose_multiple(&mut self.rng, count) {
                        self.heroes[h].state.assists += 1;
                        self.heroes[h].state.gold += ASSIST_BOUNTY;
                    }
                    Some(Camp::of_slot(k))
                }
                Killer::Environment => None,
            };
            self.deaths.push(DeathEvent {
                death_frame: t,
                victim: Victim::Hero(slot),
                killer: doom.killer,
                killer_camp,
            });
        }
    }

    fn respawn_heroes(&mut self, t: u32) {
        for hero in &mut self.heroes {
            if hero.respawn_at == Some(t) {
                hero.respawn_at = None;
                hero.state.hp = 1.0;
                hero.retarget_at = t;
            }
        }
    }

    fn update_heroes(&mut self, t: u32) {
        let approach = self.contesting;
        for slot in 0..HERO_SLOTS {
            let camp = Camp::of_slot(slot);
            let favored = camp == self.favored;
            let rng = &mut self.rng;
            let hero = &mut self.heroes[slot];
            if !hero.alive() {
                continue;
            }
            // economy
            let income = 2.0 + rng.gen_range(0.0..1.0) + if favored { self.cfg.favored_income } else { 0.0 };
            hero.state.gold += income;
            hero.exp += 1.0;
            hero.state.level = (1 + (hero.exp / 60.0) as u32).min(MAX_LEVEL);
            hero.state.skills = skills_for(hero.state.level);

            // health
            match &hero.doom {
                Some(doom) => {
                    let left = doom.death_at.saturating_sub(t) as f64;
                    hero.state.hp = round3(doom.start_hp * left / FIGHT_DURATION as f64).max(0.001);
                }
                None => {
                    let hp = if rng.gen_bool(0.15) {
                        hero.state.hp - rng.gen_range(0.05..0.3)
                    } else {
                        hero.state.hp + 0.02
                    };
                    hero.state.hp = round3(hp.clamp(0.05, 1.0));
                }
            }

            // movement
            let pos = (hero.state.x, hero.state.y);
            let dist_tyrant = hero.state.distance_to(TYRANT_POSITION);
            let (target, speed): ((f64, f64), f64) = match approach {
                Some(c) if c == camp => (TYRANT_POSITION, 0.06),
                Some(_) if dist_tyrant < 0.45 => {
                    let away = if dist_tyrant < 1e-9 {
                        (1.0, 0.0)
                    } else {
                        ((pos.0 - TYRANT_POSITION.0) / dist_tyrant, (pos.1 - TYRANT_POSITION.1) / dist_tyrant)
                    };
                    (
                        (TYRANT_POSITION.0 + away.0 * 0.5, TYRANT_POSITION.1 + away.1 * 0.5),
                        0.06,
                    )
                }
                _ => {
                    if t >= hero.retarget_at {
                        hero.target = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
                        hero.retarget_at = t + rng.gen_range(10..30);
                    }
                    (hero.target, 0.03)
                }
            };
            let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
            let d = (dx * dx + dy * dy).sqrt();
            let step = speed.min(d);
            let (mut nx, mut ny) = if d > 1e-9 {
                (pos.0 + dx / d * step, pos.1 + dy / d * step)
            } else {
                pos
            };
            nx += rng.gen_range(-0.004..0.004);
            ny += rng.gen_range(-0.004..0.004);
            hero.state.x = round3(nx.clamp(0.0, 1.0));
            hero.state.y = round3(ny.clamp(0.0, 1.0));
        }
    }

    fn start_fight(&mut self, t: u32) {
        if t + FIGHT_DURATION > self.length || !self.rng.gen_bool(self.cfg.fight_rate) {
            return;
        }
        let strength = self.cfg.signal_strength;
        let candidates: Vec<usize> = (0..HERO_SLOTS)
            .filter(|&s| self.heroes[s].alive() && self.heroes[s].doom.is_none())
            .collect();
        if candidates.is_empty() {
            return;
        }
        let victim = if self.rng.gen_bool(strength) {
            *candidates
                .iter()
                .min_by(|&&a, &&b| self.heroes[a].state.hp.total_cmp(&self.heroes[b].state.hp))
                .unwrap()
        } else {
            *candidates.choose(&mut self.rng).unwrap()
        };
        let enemy: Vec<usize> = Camp::of_slot(victim)
            .opponent()
            .slots()
            .filter(|&s| self.heroes[s].alive() && self.heroes[s].doom.is_none())
            .collect();
        let killer = if enemy.is_empty() || self.rng.gen_bool(self.cfg.environment_kill_rate) {
            Killer::Environment
        } else if self.rng.gen_bool(strength) {
            let best = enemy
                .iter()
                .copied()
                .reduce(|a, b| {
                    if self.heroes[b].score() > self.heroes[a].score() {
                        b
                    } else {
                        a
                    }
                })
                .unwrap();
            Killer::Hero(best)
        } else {
            Killer::Hero(*enemy.choose(&mut self.rng).unwrap())
        };
        let hero = &mut self.heroes[victim];
        hero.doom = Some(Doom {
            death_at: t + FIGHT_DURATION,
            killer,
            start_hp: hero.state.hp,
        });
    }

    fn update_tyrant(&mut self, t: u32) {
        let tyrant = &mut self.monsters[TYRANT_SLOT];
        if tyrant.spawn_at == Some(t) {
            tyrant.spawn_at = None;
            tyrant.state.alive = true;
            tyrant.state.hp = 1.0;
            tyrant.kill_at = Some(t + self.rng.gen_range(TYRANT_APPROACH..=90));
        }
        let Some(kill_at) = self.monsters[TYRANT_SLOT].kill_at else {
            return;
        };
        if t + TYRANT_APPROACH == kill_at {
            let leader = if self.camp_gold(Camp::Red) >= self.camp_gold(Camp::Blue) {
                Camp::Red
            } else {
                Camp::Blue
            };
            self.contesting = Some(if self.rng.gen_bool(0.75) {
                leader
            } else {
                leader.opponent()
            });
        }
        if t + TYRANT_HP_DRAIN > kill_at {
            self.monsters[TYRANT_SLOT].state.hp = round3((kill_at - t) as f64 / TYRANT_HP_DRAIN as f64);
        }
        if t == kill_at {
            let closer = closer_camp(&self.heroes_snapshot());
            let killer_camp = if self.rng.gen_bool(self.cfg.signal_strength) {
                closer
            } else {
                closer.opponent()
            };
            let killer = self
                .random_alive_hero(killer_camp)
                .unwrap_or_else(|| killer_camp.slots().start);
            for s in killer_camp.slots() {
                self.heroes[s].state.gold += TYRANT_BOUNTY;
            }
            self.deaths.push(DeathEvent {
                death_frame: t,
                victim: Victim::Monster(TYRANT_SLOT),
                killer: Killer::Hero(killer),
                killer_camp: Some(killer_camp),
            });
            let tyrant = &mut self.monsters[TYRANT_SLOT];
            tyrant.state.alive = false;
            tyrant.state.hp = 0.0;
            tyrant.kill_at = None;
            tyrant.spawn_at = Some(t + self.cfg.tyrant_respawn);
            self.contesting = None;
        }
    }

    fn heroes_snapshot(&self) -> Vec<HeroState> {
        self.heroes.iter().map(|h| h.state.clone()).collect()
    }

    fn update_buffs(&mut self, t: u32) {
        for slot in 1..MONSTER_SLOTS {
            if self.monsters[slot].spawn_at == Some(t) {
                let kill_at = t + self.rng.gen_range(40..100);
                let m = &mut self.monsters[slot];
                m.spawn_at = None;
                m.state.alive = true;
                m.state.hp = 1.0;
                m.kill_at = Some(kill_at);
            }
            let Some(kill_at) = self.monsters[slot].kill_at else {
                continue;
            };
            if t + 5 > kill_at {
                self.monsters[slot].state.hp = round3((kill_at - t) as f64 / 5.0);
            }
            if t == kill_at {
                let camp = if self.rng.gen_bool(0.5) { Camp::Red } else { Camp::Blue };
                let killer = self.random_alive_hero(camp);
                self.deaths.push(DeathEvent {
                    death_frame: t,
                    victim: Victim::Monster(slot),
                    killer: killer.map_or(Killer::Environment, Killer::Hero),
                    killer_camp: killer.map(|_| camp),
                });
                let m = &mut self.monsters[slot];
                m.state.alive = false;
                m.state.hp = 0.0;
                m.kill_at = None;
                m.spawn_at = Some(t + 60);
            }
        }
    }

    fn update_towers(&mut self, t: u32) {
        for i in 0..self.towers.len() {
            let Some(destroy_at) = self.towers[i].destroy_at else {
                continue;
            };
            if t > destroy_at {
                continue;
            }
            if t + TOWER_SIEGE > destroy_at {
                self.towers[i].state.hp = round3((destroy_at - t) as f64 / TOWER_SIEGE as f64);
            }
            if t == destroy_at {
                let attacker = self.towers[i].state.camp.opponent();
                let killer = self.random_alive_hero(attacker);
                self.towers[i].state.alive = false;
                self.towers[i].state.hp = 0.0;
                self.deaths.push(DeathEvent {
                    death_frame: t,
                    victim: Victim::Tower(i),
                    killer: killer.map_or(Killer::Environment, Killer::Hero),
                    killer_camp: Some(attacker),
                });
            }
        }
    }

    fn update_soldiers(&mut self, t: u32) {
        for s in &mut self.soldiers {
            let dir = match s.state.camp {
                Camp::Red => 1.0,
                Camp::Blue => -1.0,
            };
            s.state.x = round3((s.state.x + dir * 0.015).clamp(0.0, 1.0));
            s.state.y = round3((s.state.y + dir * 0.015).clamp(0.0, 1.0));
            if t - s.born > 20 {
                s.state.hp = round3(s.state.hp - 0.025);
            }
        }
        self.soldiers.retain(|s| s.state.hp > 0.0);
        if t % 30 == 15 {
            for camp in [Camp::Red, Camp::Blue] {
                let base = base_of(camp);
                for kind in 0..3u32 {
                    let offset = (kind as f64 - 1.0) * 0.02;
                    self.soldiers.push(Soldier {
                        state: SoldierState {
                            camp,
                            kind,
                            hp: 1.0,
                            x: round3(base.0 + offset),
                            y: round3(base.1 - offset),
                        },
                        born: t,
                    });
                }
            }
        }
        if self.soldiers.len() > SOLDIER_CAP {
            let excess = self.soldiers.len() - SOLDIER_CAP;
            self.soldiers.drain(..excess);
        }
    }

    fn emit(&mut self, t: u32) {
        let heroes: Vec<HeroState> = self
            .heroes
            .iter()
            .map(|h| HeroState {
                gold: h.state.gold.round(),
                ..h.state.clone()
            })
            .collect();
        let mut alive_heroes = [0u32; 2];
        let mut gold = [0.0f64; 2];
        for h in &heroes {
            if h.is_alive() {
                alive_heroes[h.camp.index()] += 1;
            }
            gold[h.camp.index()] += h.gold;
        }
        let mut alive_towers = [0u32; 2];
        for tower in &self.towers {
            if tower.state.alive {
                alive_towers[tower.state.camp.index()] += 1;
            }
        }
        self.frames.push(Frame {
            game_time: t,
            heroes,
            global: GlobalState {
                game_time: t,
                alive_heroes,
                gold,
                alive_towers,
            },
            monsters: self.monsters.iter().map(|m| m.state.clone()).collect(),
            soldiers: self.soldiers.iter().map(|s| s.state.clone()).collect(),
            towers: self.towers.iter().map(|tw| tw.state.clone()).collect(),
        });
    }
}

/// Camp with the smaller mean hero-to-Tyrant distance; ties go to red.
pub(crate) fn closer_camp(heroes: &[HeroState]) -> Camp {
    let mean = |camp: Camp| {
        camp.slots()
            .map(|s| heroes[s].distance_to(TYRANT_POSITION))
            .sum::<f64>()
            / HEROES_PER_CAMP as f64
    };
    if mean(Camp::Red) <= mean(Camp::Blue) {
        Camp::Red
    } else {
        Camp::Blue
    }
}
