//! Synthetic planted-bias datasets and score tables.
//!
//! Two profiles imitate the faculty-matching and no-fly-list scenarios:
//! `faculty` (country groups, planted on `cn`) and `compas` (race x sex
//! intersections, planted on `black-female`). Duplicates of planted-group
//! entities are corrupted more heavily and planted-group hard negatives
//! share family names, so matchers find that group harder.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EntityTable, LabeledPair, Record};
use crate::groups::{GroupIndex, SensitiveAttribute, SensitiveAttributeSpec};
use crate::matcher::{ScoreRow, ScoreTable};
use crate::rng::{self, standard_normal, streams};
use crate::stats::normal_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Faculty,
    Compas,
}

impl Profile {
    pub const ALL: [Profile; 2] = [Profile::Faculty, Profile::Compas];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Faculty => "faculty",
            Profile::Compas => "compas",
        }
    }

    pub fn planted_group(self) -> &'static str {
        match self {
            Profile::Faculty => "cn",
            Profile::Compas => "black-female",
        }
    }

    pub fn sensitive_spec(self) -> SensitiveAttributeSpec {
        match self {
            Profile::Faculty => SensitiveAttributeSpec::new(vec![SensitiveAttribute::single("country")], false),
            Profile::Compas => SensitiveAttributeSpec::new(
                vec![SensitiveAttribute::single("race"), SensitiveAttribute::single("sex")],
                true,
            ),
        }
    }

    /// Atomic cells entities are drawn from; the first is planted.
    fn cells(self) -> &'static [&'static [&'static str]] {
        match self {
            Profile::Faculty => &[&["cn"], &["de"], &["us"]],
            Profile::Compas => &[
                &["black", "female"],
                &["black", "male"],
                &["white", "female"],
                &["white", "male"],
            ],
        }
    }

    pub fn schema(self) -> Vec<String> {
        let cols: &[&str] = match self {
            Profile::Faculty => &["name", "affiliation", "country", "area", "year"],
            Profile::Compas => &["name", "race", "sex", "dob", "city"],
        };
        cols.iter().map(|c| c.to_string()).collect()
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "faculty" => Ok(Profile::Faculty),
            "compas" => Ok(Profile::Compas),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

fn default_entities() -> usize {
    120
}
fn default_match_rate() -> f64 {
    0.5
}
fn default_negatives() -> usize {
    2
}
fn default_hard_share() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub profile: Profile,
    #[serde(default)]
    pub seed: u64,
    /// Left-table entities per atomic cell.
    #[serde(default = "default_entities")]
    pub entities_per_group: usize,
    /// Share of left entities with a duplicate in the right table.
    #[serde(default = "default_match_rate")]
    pub match_rate: f64,
    /// Non-match pairs per left entity.
    #[serde(default = "default_negatives")]
    pub negatives_per_entity: usize,
    /// Share of non-match pairs drawn from the same cell.
    #[serde(default = "default_hard_share")]
    pub hard_negative_share: f64,
}

impl SynthConfig {
    pub fn new(profile: Profile, seed: u64) -> Self {
        Self {
            profile,
            seed,
            entities_per_group: default_entities(),
            match_rate: default_match_rate(),
            negatives_per_entity: default_negatives(),
            hard_negative_share: default_hard_share(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub profile: Profile,
    pub left: EntityTable,
    pub right: EntityTable,
    /// All labeled pairs, matches first in left-table order.
    pub pairs: Vec<LabeledPair>,
    pub sensitive: SensitiveAttributeSpec,
    pub planted: String,
}

const CN_FAMILY: &[&str] = &["wang", "li", "zhang", "liu", "chen", "yang", "huang", "zhao", "wu", "zhou"];
const CN_GIVEN: &[&str] = &[
    "wei", "jing", "lei", "min", "yan", "jun", "hui", "xin", "yu", "hao", "jie", "ling", "tao", "fang",
];
const DE_FAMILY: &[&str] = &[
    "mueller", "schmidt", "schneider", "fischer", "weber", "meyer", "wagner", "becker", "schulz",
    "hoffmann", "koch", "richter", "klein", "wolf", "schroeder", "neumann", "schwarz", "zimmermann",
    "braun", "krueger", "hartmann", "lange", "werner", "krause",
];
const DE_GIVEN: &[&str] = &[
    "lukas", "anna", "felix", "lena", "jonas", "marie", "paul", "sophie", "maximilian", "katharina",
    "tobias", "johanna", "florian", "christina", "sebastian", "friederike",
];
const US_FAMILY: &[&str] = &[
    "smith", "johnson", "williams", "brown", "jones", "miller", "davis", "wilson", "anderson", "taylor",
    "thomas", "moore", "jackson", "martin", "thompson", "harris", "clark", "lewis", "robinson", "walker",
    "young", "allen", "king", "wright",
];
const US_GIVEN: &[&str] = &[
    "james", "mary", "robert", "patricia", "michael", "jennifer", "william", "elizabeth", "david",
    "barbara", "richard", "susan", "joseph", "jessica", "charles", "sarah",
];
const AFFILIATIONS: &[&str] = &[
    "university of toronto", "tsinghua university", "peking university", "tu munich",
    "university of bonn", "stanford university", "carnegie mellon university",
    "university of michigan", "zhejiang university", "rwth aachen university",
    "university of washington", "fudan university",
];
const AREAS: &[&str] = &["databases", "machine learning", "systems", "theory", "networking", "graphics", "security"];
const CITIES: &[&str] = &["miami", "tampa", "orlando", "jacksonville", "tallahassee", "gainesville"];

fn pick<'a>(r: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(r).copied().unwrap_or("")
}

/// Name pools per cell: (family, given). Planted cells draw from the small
/// pool so that distinct entities often share names.
fn name_pools(profile: Profile, cell: &[&str]) -> (&'static [&'static str], &'static [&'static str]) {
    match (profile, cell) {
        (Profile::Faculty, ["cn"]) => (CN_FAMILY, CN_GIVEN),
        (Profile::Faculty, ["de"]) => (DE_FAMILY, DE_GIVEN),
        (Profile::Faculty, _) => (US_FAMILY, US_GIVEN),
        (Profile::Compas, [_, "female"]) => (US_FAMILY, &US_GIVEN[..8]),
        (Profile::Compas, _) => (US_FAMILY, &US_GIVEN[8..]),
    }
}

#[derive(Debug, Clone)]
struct Entity {
    cell: usize,
    family: String,
    given: String,
    values: Vec<Option<String>>,
}

fn make_entity(profile: Profile, cell_idx: usize, r: &mut ChaCha8Rng) -> Entity {
    let cell = profile.cells()[cell_idx];
    let (fam, giv) = name_pools(profile, cell);
    let family = pick(r, fam).to_string();
    let given = pick(r, giv).to_string();
    let name = format!("{given} {family}");
    let values = match profile {
        Profile::Faculty => vec![
            Some(name),
            Some(pick(r, AFFILIATIONS).to_string()),
            Some(cell[0].to_string()),
            Some(pick(r, AREAS).to_string()),
            Some(format!("{}", r.random_range(1975..2020))),
        ],
        Profile::Compas => vec![
            Some(name),
            Some(cell[0].to_string()),
            Some(cell[1].to_string()),
            Some(format!(
                "{}-{:02}-{:02}",
                r.random_range(1950..2000),
                r.random_range(1..13),
                r.random_range(1..29)
            )),
            Some(pick(r, CITIES).to_string()),
        ],
    };
    Entity {
        cell: cell_idx,
        family,
        given,
        values,
    }
}

fn typo(s: &str, r: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let i = r.random_range(0..chars.len());
    match r.random_range(0..3) {
        0 => {
            chars.remove(i);
        }
        1 => chars[i] = (b'a' + r.random_range(0..26u8)) as char,
        _ => {
            let j = (i + 1).min(chars.len() - 1);
            chars.swap(i, j);
        }
    }
    chars.into_iter().collect()
}

fn abbreviate(s: &str) -> String {
    s.split_whitespace()
        .filter_map(|w| w.chars().next())
        .collect()
}

/// Right-table copy of an entity. Planted entities get reordered,
/// initialed names and more typos in the other fields.
fn corrupt(profile: Profile, e: &Entity, planted: bool, r: &mut ChaCha8Rng) -> Vec<Option<String>> {
    let mut v = e.values.clone();
    if planted {
        let initial = e.given.chars().next().unwrap_or('x');
        v[0] = Some(match r.random_range(0..3) {
            0 => format!("{}, {initial}.", e.family),
            1 => format!("{} {}", e.family, typo(&e.given, r)),
            _ => format!("{initial}. {}", typo(&e.family, r)),
        });
        match profile {
            Profile::Faculty => {
                if r.random_bool(0.6) {
                    v[1] = v[1].as_deref().map(abbreviate);
                }
                if r.random_bool(0.5) {
                    v[3] = None;
                }
                if r.random_bool(0.4) {
                    let y: i32 = v[4].as_deref().and_then(|y| y.parse().ok()).unwrap_or(2000);
                    v[4] = Some(format!("{}", y + if r.random_bool(0.5) { 1 } else { -1 }));
                }
            }
            Profile::Compas => {
                if r.random_bool(0.5) {
                    v[3] = v[3].as_deref().map(|d| typo(d, r));
                }
                if r.random_bool(0.4) {
                    v[4] = None;
                }
            }
        }
    } else {
        if r.random_bool(0.3) {
            v[0] = v[0].as_deref().map(|n| typo(n, r));
        }
        if profile == Profile::Faculty && r.random_bool(0.1) {
            v[1] = v[1].as_deref().map(abbreviate);
        }
    }
    v
}

/// Generates a planted-bias dataset. Left ids are `a<i>`, right ids `b<j>`.
pub fn generate(config: &SynthConfig) -> SynthDataset {
    let profile = config.profile;
    let mut r = rng::stream(config.seed, streams::SYNTH_DATA);
    let cells = profile.cells().len();
    let schema = profile.schema();

    let mut entities = Vec::new();
    for c in 0..cells {
        for _ in 0..config.entities_per_group {
            entities.push(make_entity(profile, c, &mut r));
        }
    }
    let mut left = EntityTable::new("tableA", schema.clone());
    for (i, e) in entities.iter().enumerate() {
        left.push(Record {
            id: format!("a{i}"),
            values: e.values.clone(),
        })
        .expect("unique ids");
    }

    // right table: duplicates of matched entities, then distinct entities
    let mut right_rows: Vec<(usize, Vec<Option<String>>)> = Vec::new();
    let mut dup_of: Vec<Option<usize>> = vec![None; entities.len()];
    for (i, e) in entities.iter().enumerate() {
        if r.random_bool(config.match_rate.clamp(0.0, 1.0)) {
            dup_of[i] = Some(right_rows.len());
            right_rows.push((e.cell, corrupt(profile, e, e.cell == 0, &mut r)));
        }
    }
    let extra = entities.len() - right_rows.len();
    for k in 0..extra {
        let e = make_entity(profile, k % cells, &mut r);
        right_rows.push((e.cell, e.values));
    }
    let mut right = EntityTable::new("tableB", schema);
    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (j, (cell, values)) in right_rows.into_iter().enumerate() {
        by_cell[cell].push(j);
        right
            .push(Record {
                id: format!("b{j}"),
                values,
            })
            .expect("unique ids");
    }

    let mut pairs = Vec::new();
    for (i, d) in dup_of.iter().enumerate() {
        if let Some(j) = d {
            pairs.push(LabeledPair::new(format!("a{i}"), format!("b{j}"), true));
        }
    }
    let n_right = right.len();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (i, e) in entities.iter().enumerate() {
        let mut placed = 0;
        let mut tries = 0;
        while placed < config.negatives_per_entity && tries < 20 * (config.negatives_per_entity + 1) {
            tries += 1;
            let j = if r.random_bool(config.hard_negative_share.clamp(0.0, 1.0)) {
                let pool = &by_cell[e.cell];
                // same cell; planted cells prefer a shared family name
                let same_name: Vec<usize> = if e.cell == 0 {
                    pool.iter()
                        .copied()
                        .filter(|&j| {
                            right.rows()[j].values[0]
                                .as_deref()
                                .is_some_and(|n| n.contains(e.family.as_str()))
                        })
                        .take(64)
                        .collect()
                } else {
                    Vec::new()
                };
                if !same_name.is_empty() && r.random_bool(0.7) {
                    same_name[r.random_range(0..same_name.len())]
                } else if pool.is_empty() {
                    continue;
                } else {
                    pool[r.random_range(0..pool.len())]
                }
            } else {
                r.random_range(0..n_right)
            };
            if dup_of[i] == Some(j) || !seen.insert((i, j)) {
                continue;
            }
            pairs.push(LabeledPair::new(format!("a{i}"), format!("b{j}"), false));
            placed += 1;
        }
    }

    SynthDataset {
        profile,
        left,
        right,
        pairs,
        sensitive: profile.sensitive_spec(),
        planted: profile.planted_group().to_string(),
    }
}

/// Score distributions of a simulated matcher. Scores are normal draws
/// clamped to `[0, 1]`; true matches touching a planted group have their
/// mean lowered by `planted_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub match_mean: f64,
    pub non_match_mean: f64,
    pub sd: f64,
    pub planted_shift: f64,
    pub planted: Vec<String>,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            match_mean: 0.8,
            non_match_mean: 0.2,
            sd: 0.15,
            planted_shift: 0.35,
            planted: Vec::new(),
        }
    }
}

impl ScoreModel {
    pub fn planted_on(group: &str) -> Self {
        Self {
            planted: vec![group.to_string()],
            ..Self::default()
        }
    }

    fn planted_indices(&self, groups: &GroupIndex) -> Vec<usize> {
        self.planted.iter().filter_map(|g| groups.index_of(g)).collect()
    }

    fn is_planted(&self, planted: &[usize], groups: &GroupIndex, p: &LabeledPair) -> bool {
        let hit = |e: Option<&crate::groups::GroupEncoding>| e.is_some_and(|e| planted.iter().any(|&g| e.contains(g)));
        hit(groups.left.get(&p.left_id)) || hit(groups.right.get(&p.right_id))
    }

    /// Mean score of a pair before clamping.
    pub fn mean_for(&self, truth: bool, planted: bool) -> f64 {
        match (truth, planted) {
            (true, true) => self.match_mean - self.planted_shift,
            (true, false) => self.match_mean,
            (false, _) => self.non_match_mean,
        }
    }

    /// `P(score > tau)` for a pair; exact because clamping leaves the
    /// event unchanged for `tau` in `[0, 1)`.
    pub fn positive_probability(&self, truth: bool, planted: bool, tau: f64) -> f64 {
        normal_sf((tau - self.mean_for(truth, planted)) / self.sd)
    }
}

/// Draws one score per pair, in pair order, from the seeded score stream.
pub fn synthetic_scores(
    matcher_id: &str,
    pairs: &[LabeledPair],
    groups: &GroupIndex,
    model: &ScoreModel,
    seed: u64,
) -> ScoreTable {
    let planted = model.planted_indices(groups);
    let mut r = rng::stream(seed, streams::SYNTH_SCORES);
    let rows = pairs
        .iter()
        .map(|p| {
            let mean = model.mean_for(p.label, model.is_planted(&planted, groups, p));
            let s = mean + model.sd * standard_normal(&mut r);
            ScoreRow {
                left_id: p.left_id.clone(),
                right_id: p.right_id.clone(),
                score: s.clamp(0.0, 1.0),
            }
        })
        .collect();
    ScoreTable {
        matcher_id: matcher_id.to_string(),
        rows,
    }
}

/// Expected TPRP disparity (subtraction) of `group` over `pairs` at
/// threshold `tau`: the expected pooled TPR minus the expected group TPR,
/// each an average of per-pair positive probabilities.
pub fn expected_tprp_disparity(
    pairs: &[LabeledPair],
    groups: &GroupIndex,
    model: &ScoreModel,
    group: &str,
    tau: f64,
) -> Option<f64> {
    let planted = model.planted_indices(groups);
    let g = groups.index_of(group)?;
    let (mut all, mut n_all, mut sub, mut n_sub) = (0.0, 0usize, 0.0, 0usize);
    for p in pairs.iter().filter(|p| p.label) {
        let prob = model.positive_probability(true, model.is_planted(&planted, groups, p), tau);
        all += prob;
        n_all += 1;
        let (l, rt) = (groups.left.get(&p.left_id)?, groups.right.get(&p.right_id)?);
        if l.contains(g) || rt.contains(g) {
            sub += prob;
            n_sub += 1;
        }
    }
    if n_all == 0 || n_sub == 0 {
        return None;
    }
    Some(f64::max(0.0, all / n_all as f64 - sub / n_sub as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::extract_groups;

    #[test]
    fn generation_is_deterministic_and_consistent() {
        for profile in Profile::ALL {
            let c = SynthConfig::new(profile, 3);
            let a = generate(&c);
            assert_eq!(a, generate(&c));
            assert!(a.pairs.iter().any(|p| p.label));
            for p in &a.pairs {
                assert!(a.left.contains(&p.left_id) && a.right.contains(&p.right_id));
            }
            let g = extract_groups(&a.left, &a.right, &a.sensitive).unwrap();
            assert!(g.index_of(&a.planted).is_some());
            let unique: BTreeSet<_> = a.pairs.iter().map(|p| (&p.left_id, &p.right_id)).collect();
            assert_eq!(unique.len(), a.pairs.len());
        }
    }

    #[test]
    fn analytic_positive_rates() {
        let m = ScoreModel::planted_on("cn");
        assert!((m.positive_probability(true, false, 0.5) - 0.977_249_868).abs() < 1e-6);
        assert!((m.positive_probability(true, true, 0.5) - 0.369_441_340).abs() < 1e-6);
    }
}
