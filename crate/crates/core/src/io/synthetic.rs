//! Seeded synthetic sensor streams with injectable anomaly episodes.
//!
//! Sensor `j` of a sector has kind `pollution`, `traffic` or `parking`
//! according to `j % 3`, and emits `kind(METRIC, VALUE, SECTOR)` at every
//! tick. Metric names are shared between sectors. In typed mode every sensor
//! is a pollution sensor emitting `pollution(TYPE, VALUE, SENSOR, SECTOR)`
//! for both types 1 and 2.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Atom, Interner, Symbol, Term, Time};
use crate::stream::Stream;

/// City sector followed by its suburbs, as in the shipped background facts.
pub const CLUSTERS: [&[u32]; 3] = [&[3, 1, 2, 10], &[4, 8, 9], &[6, 7, 5]];

const POLLUTION: [&str; 4] = [
    "ozone",
    "carbon_monoxide",
    "sulfure_dioxide",
    "nitrogen_dioxide",
];
const TRAFFIC: [&str; 2] = ["vehicle_count", "avg_speed"];
const PARKING: [&str; 2] = ["vacant", "occupancy"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMode {
    /// Independent uniform draws from the range at every tick.
    Uniform,
    /// A bounded random walk with steps in [-10, 10].
    Walk,
}

/// What an anomalous episode forces in the affected sectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Pollution alternates 215/5, traffic 10/280.
    Metropolitan,
    /// Pollution 215/214, traffic 10/11.
    Industrial,
    /// Pollution 215/214, traffic 300/250.
    Highway,
    /// Pollution 5/10, traffic 11/10.
    Urban,
    /// Two sectors with constant opposite readings: one low (traffic 30,
    /// pollution 10), one high (200, 200).
    Conflict,
    /// Typed pollution at 150 across a city and all of its suburbs.
    Cluster,
    /// Per episode, one of metropolitan, industrial, highway or urban.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Probability that an episode is anomalous.
    pub probability: f64,
    /// Episode length in ticks.
    pub episode_len: u64,
    pub profile: Profile,
    /// Each anomalous episode affects between 1 and this many sectors.
    pub max_sectors: u32,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            probability: 0.0,
            episode_len: 40,
            profile: Profile::Metropolitan,
            max_sectors: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub sectors: u32,
    pub sensors_per_sector: u32,
    pub ticks: u64,
    pub start: Time,
    pub mode: ValueMode,
    pub typed_pollution: bool,
    pub pollution_range: [i64; 2],
    pub traffic_range: [i64; 2],
    pub parking_range: [i64; 2],
    pub anomaly: AnomalyConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            sectors: 10,
            sensors_per_sector: 3,
            ticks: 100,
            start: 0,
            mode: ValueMode::Walk,
            typed_pollution: false,
            pollution_range: [20, 190],
            traffic_range: [20, 240],
            parking_range: [0, 100],
            anomaly: AnomalyConfig::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pollution,
    Traffic,
    Parking,
}

struct Sensor {
    sector: u32,
    kind: Kind,
    measure: Term,
    name: Term,
    /// Current value per emitted series (two for typed pollution).
    state: Vec<i64>,
}

/// Forced readings for one sector during an episode.
#[derive(Clone, Copy)]
struct Forced {
    pollution: Option<[i64; 2]>,
    traffic: Option<[i64; 2]>,
}

fn forced(profile: Profile) -> Forced {
    let f = |p: Option<[i64; 2]>, t: Option<[i64; 2]>| Forced {
        pollution: p,
        traffic: t,
    };
    match profile {
        Profile::Metropolitan => f(Some([215, 5]), Some([10, 280])),
        Profile::Industrial => f(Some([215, 214]), Some([10, 11])),
        Profile::Highway => f(Some([215, 214]), Some([300, 250])),
        Profile::Urban => f(Some([5, 10]), Some([11, 10])),
        Profile::Cluster => f(Some([150, 150]), None),
        Profile::Conflict | Profile::Mixed => unreachable!("expanded per episode"),
    }
}

impl SyntheticConfig {
    fn range(&self, kind: Kind) -> [i64; 2] {
        let [a, b] = match kind {
            Kind::Pollution => self.pollution_range,
            Kind::Traffic => self.traffic_range,
            Kind::Parking => self.parking_range,
        };
        [a.min(b), a.max(b)]
    }

    fn sensors(&self, rng: &mut ChaCha8Rng) -> Vec<Sensor> {
        let mut out = Vec::new();
        let mut symbols = Interner::default();
        for sector in 1..=self.sectors {
            for j in 0..self.sensors_per_sector {
                let kind = if self.typed_pollution {
                    Kind::Pollution
                } else {
                    [Kind::Pollution, Kind::Traffic, Kind::Parking][(j % 3) as usize]
                };
                let names: &[&str] = match kind {
                    Kind::Pollution => &POLLUTION,
                    Kind::Traffic => &TRAFFIC,
                    Kind::Parking => &PARKING,
                };
                let slot = if self.typed_pollution { j } else { j / 3 } as usize;
                let base = names[slot % names.len()];
                let cycle = slot / names.len();
                let measure = if cycle == 0 {
                    base.to_string()
                } else {
                    format!("{base}_{cycle}")
                };
                let [lo, hi] = self.range(kind);
                let series = if self.typed_pollution { 2 } else { 1 };
                out.push(Sensor {
                    sector,
                    kind,
                    measure: Term::Sym(symbols.intern(&measure)),
                    name: Term::Sym(symbols.intern(&format!("s{sector}_{j}"))),
                    state: (0..series).map(|_| rng.gen_range(lo..=hi)).collect(),
                });
            }
        }
        out
    }
}

/// Plans per-episode forced readings: `plan[e]` lists (sector, readings).
fn plan_episodes(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(u32, Forced)>> {
    let len = cfg.anomaly.episode_len.max(1);
    let episodes = cfg.ticks.div_ceil(len);
    let all: Vec<u32> = (1..=cfg.sectors).collect();
    (0..episodes)
        .map(|_| {
            if cfg.sectors == 0 || !rng.gen_bool(cfg.anomaly.probability.clamp(0.0, 1.0)) {
                return Vec::new();
            }
            match cfg.anomaly.profile {
                Profile::Conflict => {
                    if cfg.sectors < 2 {
                        return Vec::new();
                    }
                    let pair: Vec<u32> = all.choose_multiple(rng, 2).copied().collect();
                    vec![
                        (
                            pair[0],
                            Forced {
                                pollution: Some([10, 10]),
                                traffic: Some([30, 30]),
                            },
                        ),
                        (
                            pair[1],
                            Forced {
                                pollution: Some([200, 200]),
                                traffic: Some([200, 200]),
                            },
                        ),
                    ]
                }
                Profile::Cluster => {
                    let fits: Vec<&[u32]> = CLUSTERS
                        .iter()
                        .copied()
                        .filter(|c| c.iter().all(|&s| s <= cfg.sectors))
                        .collect();
                    match fits.choose(rng) {
                        Some(c) => c.iter().map(|&s| (s, forced(Profile::Cluster))).collect(),
                        None => Vec::new(),
                    }
                }
                profile => {
                    let k = rng.gen_range(1..=cfg.anomaly.max_sectors.clamp(1, cfg.sectors));
                    let chosen: Vec<u32> = all.choose_multiple(rng, k as usize).copied().collect();
                    chosen
                        .into_iter()
                        .map(|s| {
                            let p = if profile == Profile::Mixed {
                                *[
                                    Profile::Metropolitan,
                                    Profile::Industrial,
                                    Profile::Highway,
                                    Profile::Urban,
                                ]
                                .choose(rng)
                                .expect("nonempty")
                            } else {
                                profile
                            };
                            (s, forced(p))
                        })
                        .collect()
                }
            }
        })
        .collect()
}

/// Generates a stream that depends only on `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Stream {
    if cfg.ticks == 0 {
        return Stream::empty();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sensors = cfg.sensors(&mut rng);
    let episodes = plan_episodes(cfg, &mut rng);
    let len = cfg.anomaly.episode_len.max(1);
    let mut stream =
        Stream::with_timeline(cfg.start, cfg.start + cfg.ticks - 1).expect("valid timeline");
    let preds: [Symbol; 3] = ["pollution".into(), "traffic".into(), "parking".into()];
    for i in 0..cfg.ticks {
        let t = cfg.start + i;
        let active = &episodes[(i / len) as usize];
        for s in &mut sensors {
            let [lo, hi] = cfg.range(s.kind);
            for v in &mut s.state {
                *v = match cfg.mode {
                    ValueMode::Uniform => rng.gen_range(lo..=hi),
                    ValueMode::Walk => (*v + rng.gen_range(-10..=10)).clamp(lo, hi),
                };
            }
            let force = active
                .iter()
                .find(|(sec, _)| *sec == s.sector)
                .and_then(|(_, f)| match s.kind {
                    Kind::Pollution => f.pollution,
                    Kind::Traffic => f.traffic,
                    Kind::Parking => None,
                });
            let value = |series: usize| match force {
                Some(pair) => pair[(t % 2) as usize],
                None => s.state[series],
            };
            let sector = Term::num(s.sector as f64);
            if cfg.typed_pollution {
                for (series, ty) in [1.0, 2.0].into_iter().enumerate() {
                    let atom = Atom::new(
                        preds[0].clone(),
                        vec![
                            Term::num(ty),
                            Term::num(value(series) as f64),
                            s.name.clone(),
                            sector.clone(),
                        ],
                    );
                    stream.insert(t, atom).expect("ground");
                }
            } else {
                let pred = match s.kind {
                    Kind::Pollution => &preds[0],
                    Kind::Traffic => &preds[1],
                    Kind::Parking => &preds[2],
                };
                let atom = Atom::new(
                    pred.clone(),
                    vec![s.measure.clone(), Term::num(value(0) as f64), sector],
                );
                stream.insert(t, atom).expect("ground");
            }
        }
    }
    stream
}
