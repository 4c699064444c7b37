//! Synthetic corpus generator with planted stories and ground truth.
//!
//! Background articles are random pseudo-word texts. Each planted story has a
//! fixed core text; its articles are light mutations of that core, share a
//! story-specific entity, and are spread over outlets so that the story does or
//! does not reach storm mode by construction. Every planted story is checked
//! against the storm criteria with a direct brute-force count before anything
//! is returned, and a spec whose stories do not come out as declared is
//! rejected as infeasible.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_articles_jsonl, write_outlets_jsonl, Article, ArticleId, EntityMention, OutletProfile, Reliability,
    Scope,
};
use crate::error::{Error, Result};
use crate::similarity::{mock_embed, write_embeddings, EmbeddingMatrix};
use crate::storms::StormParams;

const SYLLABLES: [&str; 100] = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu", "ga", "ge",
    "gi", "go", "gu", "ha", "he", "hi", "ho", "hu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo",
    "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra",
    "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi",
    "vo", "vu", "za", "ze", "zi", "zo", "zu", "ja", "je", "ji", "jo", "ju", "ca", "ce", "ci", "co", "cu",
    "ya", "ye", "yi", "yo", "yu", "wa", "we", "wi", "wo", "wu", "xa", "xe", "xi", "xo", "xu",
];

/// Unique pseudo-word for every index; lengths grow with the index so no two
/// indices collide.
pub fn pseudo_word(mut index: usize) -> String {
    let mut digits = Vec::new();
    loop {
        digits.push(index % 100);
        index /= 100;
        if index == 0 {
            break;
        }
    }
    while digits.len() < 2 {
        digits.push(0);
    }
    digits.iter().rev().map(|d| SYLLABLES[*d]).collect()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const VOCAB: usize = 30_000;
const ENTITY_BASE: usize = 1_000_000;
const STORY_BASE: usize = 5_000_000;
const TITLE_SUFFIX_BASE: usize = 20_000_000;
const ENTITY_TYPES: [&str; 6] = ["PERSON", "ORG", "EVENT", "PRODUCT", "WORK_OF_ART", "GPE"];
const BURST: u32 = 4;
const TOPIC_UNITS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutletGroup {
    pub name_prefix: String,
    pub count: usize,
    pub scope: Scope,
    pub reliability: Reliability,
    /// Background articles per outlet per day before scaling to the total.
    pub daily_rate: f64,
    /// Low-volume outlets never reach the window floor and are reserved for
    /// volume near-misses.
    #[serde(default)]
    pub low_volume: bool,
    /// States cycled over local outlets.
    #[serde(default)]
    pub states: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Storm,
    /// Too short, otherwise a storm.
    Duration,
    /// Long enough but fewer than the required storm-mode outlets.
    Outlets,
    /// Long, widely covered, but no outlet reaches the share threshold.
    Share,
    /// Share reached only at outlets below the window-volume floor.
    Volume,
}

impl Expectation {
    pub fn reason(self) -> Option<&'static str> {
        match self {
            Expectation::Storm => None,
            Expectation::Duration => Some("duration"),
            Expectation::Outlets => Some("outlets"),
            Expectation::Share => Some("share"),
            Expectation::Volume => Some("volume"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStory {
    pub label: String,
    pub expect: Expectation,
    /// Day offset from the corpus start.
    pub start_day: u32,
    /// Articles per day from the first day; first and last entries non-zero and
    /// no run of seven or more empty days.
    pub schedule: Vec<u32>,
    pub heavy_outlets: usize,
    pub light_outlets: usize,
    #[serde(default = "half")]
    pub national_share: f64,
    #[serde(default)]
    pub topic: Option<usize>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonEntity {
    pub name: String,
    pub kind: String,
    /// Fraction of all articles mentioning it.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub total_articles: usize,
    pub outlet_groups: Vec<OutletGroup>,
    pub stories: Vec<PlantedStory>,
    #[serde(default = "default_entity_pool")]
    pub entity_pool: usize,
    #[serde(default)]
    pub common_entities: Vec<CommonEntity>,
    #[serde(default = "default_topics")]
    pub topics: usize,
    #[serde(default = "default_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_body_words")]
    pub body_words: usize,
    #[serde(default = "default_story_words")]
    pub story_words: usize,
    #[serde(default)]
    pub storm_params: StormParams,
}

fn default_entity_pool() -> usize {
    20_000
}
fn default_topics() -> usize {
    30
}
fn default_dim() -> usize {
    256
}
fn default_body_words() -> usize {
    40
}
fn default_story_words() -> usize {
    150
}

/// Daily counts for `duration` days summing to `total`, peaking at
/// `peak_index` (0-based) and decaying on both sides. Every day gets at least one.
pub fn decay_schedule(duration: u32, total: u32, peak_index: u32, tau: f64) -> Vec<u32> {
    let d = duration as usize;
    assert!(total as usize >= d, "schedule needs at least one article per day");
    let weights: Vec<f64> = (0..d)
        .map(|i| {
            let dist = (i as f64 - f64::from(peak_index)).abs();
            let rate = if (i as u32) < peak_index {
                2.0 * tau.max(0.5)
            } else {
                tau
            };
            (-dist / rate).exp() + 0.08
        })
        .collect();
    let spare = f64::from(total - duration);
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * spare).collect();
    let mut counts: Vec<u32> = exact.iter().map(|x| x.floor() as u32 + 1).collect();
    let mut remainder = total - counts.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| {
        let fa = exact[*a] - exact[*a].floor();
        let fb = exact[*b] - exact[*b].floor();
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    for i in order {
        if remainder == 0 {
            break;
        }
        counts[i] += 1;
        remainder -= 1;
    }
    counts
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn states(n: usize) -> Vec<String> {
    const CODES: [&str; 20] = [
        "OH", "TX", "CA", "NY", "FL", "PA", "IL", "GA", "NC", "MI", "WA", "AZ", "MA", "TN", "IN", "MO", "MD",
        "WI", "CO", "MN",
    ];
    CODES.iter().take(n).map(|s| (*s).to_owned()).collect()
}

fn regular_groups(national: [usize; 4], local: usize, n_states: usize, rate: f64) -> Vec<OutletGroup> {
    let reliabilities = [
        Reliability::Reliable,
        Reliability::Mixed,
        Reliability::Unreliable,
        Reliability::Unrated,
    ];
    let mut groups: Vec<OutletGroup> = reliabilities
        .iter()
        .zip(national)
        .filter(|(_, n)| *n > 0)
        .map(|(r, n)| OutletGroup {
            name_prefix: format!("national-{}", r.as_str()),
            count: n,
            scope: Scope::National,
            reliability: *r,
            daily_rate: rate,
            low_volume: false,
            states: vec![],
        })
        .collect();
    groups.push(OutletGroup {
        name_prefix: "local".into(),
        count: local,
        scope: Scope::Local,
        reliability: Reliability::Unrated,
        daily_rate: rate,
        low_volume: false,
        states: states(n_states),
    });
    groups
}

fn story(
    label: String,
    expect: Expectation,
    start_day: u32,
    schedule: Vec<u32>,
    heavy: usize,
    light: usize,
    national_share: f64,
) -> PlantedStory {
    PlantedStory {
        label,
        expect,
        start_day,
        schedule,
        heavy_outlets: heavy,
        light_outlets: light,
        national_share,
        topic: None,
    }
}

impl SynthSpec {
    /// 100,000 articles over 100 days with 10 planted storms and 20 near-misses
    /// (five per failed criterion).
    pub fn benchmark() -> Self {
        let mut groups = regular_groups([14, 8, 5, 3], 30, 15, 15.0);
        groups.push(OutletGroup {
            name_prefix: "local-small".into(),
            count: 8,
            scope: Scope::Local,
            reliability: Reliability::Unrated,
            daily_rate: 3.0,
            low_volume: true,
            states: states(8),
        });

        let mut stories = Vec::new();
        let storms: [(u32, u32, u32, usize, usize, f64); 10] = [
            (3, 7, 160, 8, 10, 0.6),
            (10, 12, 300, 12, 15, 0.5),
            (18, 20, 520, 16, 20, 0.7),
            (25, 9, 200, 10, 12, 0.3),
            (33, 15, 420, 14, 18, 0.55),
            (45, 30, 800, 20, 20, 0.5),
            (52, 8, 180, 6, 10, 0.8),
            (60, 11, 260, 9, 14, 0.4),
            (70, 25, 640, 18, 20, 0.6),
            (82, 14, 360, 12, 16, 0.5),
        ];
        for (i, (start, duration, total, heavy, light, share)) in storms.into_iter().enumerate() {
            let peak = [0, 1, 2, 0, 3, 1, 0, 2, 12, 1][i];
            stories.push(story(
                format!("storm-{i:02}"),
                Expectation::Storm,
                start,
                decay_schedule(duration, total, peak, 2.5),
                heavy,
                light,
                share,
            ));
        }
        for (i, start) in [5u32, 27, 48, 66, 88].into_iter().enumerate() {
            let duration = [6, 6, 5, 6, 4][i];
            stories.push(story(
                format!("near-duration-{i}"),
                Expectation::Duration,
                start,
                decay_schedule(duration, 80, 0, 2.0),
                6,
                8,
                0.5,
            ));
        }
        for (i, start) in [14u32, 36, 57, 75, 89].into_iter().enumerate() {
            stories.push(story(
                format!("near-outlets-{i}"),
                Expectation::Outlets,
                start,
                decay_schedule(8 + i as u32 % 3, 100, 1, 3.0),
                4,
                12,
                0.5,
            ));
        }
        for (i, start) in [8u32, 30, 50, 68, 85].into_iter().enumerate() {
            stories.push(story(
                format!("near-share-{i}"),
                Expectation::Share,
                start,
                vec![5, 5, 4, 4, 4, 4, 5, 5, 4],
                0,
                24,
                0.5,
            ));
        }
        for (i, start) in [12u32, 40, 62, 78, 92].into_iter().enumerate() {
            stories.push(story(
                format!("near-volume-{i}"),
                Expectation::Volume,
                start,
                decay_schedule(7, 60, 1, 3.0),
                6,
                9,
                0.0,
            ));
        }

        SynthSpec {
            seed: 2020,
            start_date: ymd(2021, 1, 4),
            days: 100,
            total_articles: 100_000,
            outlet_groups: groups,
            stories,
            entity_pool: 20_000,
            common_entities: vec![
                CommonEntity {
                    name: "Joe Biden".into(),
                    kind: "PERSON".into(),
                    rate: 0.08,
                },
                CommonEntity {
                    name: "Covid Pandemic".into(),
                    kind: "EVENT".into(),
                    rate: 0.06,
                },
                CommonEntity {
                    name: "United States".into(),
                    kind: "GPE".into(),
                    rate: 0.2,
                },
            ],
            topics: default_topics(),
            embed_dim: default_dim(),
            body_words: default_body_words(),
            story_words: default_story_words(),
            storm_params: StormParams::default(),
        }
    }

    /// One long, late-peaking storm: first article on 2021-03-04, 54 days,
    /// 1,378 articles, half of them from national outlets, peak on day 48.
    pub fn chauvin() -> Self {
        let mut schedule = vec![20u32; 54];
        for count in &mut schedule[..3] {
            *count += 26;
        }
        schedule[46] += 50;
        schedule[47] += 120;
        schedule[48] += 50;
        debug_assert_eq!(schedule.iter().sum::<u32>(), 1378);
        let start_date = ymd(2021, 2, 22);
        let start_day = (ymd(2021, 3, 4) - start_date).num_days() as u32;
        SynthSpec {
            seed: 48,
            start_date,
            days: 70,
            total_articles: 33_000,
            outlet_groups: regular_groups([7, 4, 2, 2], 15, 10, 15.0),
            stories: vec![story(
                "trial".into(),
                Expectation::Storm,
                start_day,
                schedule,
                24,
                6,
                0.5,
            )],
            entity_pool: 8_000,
            common_entities: vec![],
            topics: default_topics(),
            embed_dim: default_dim(),
            body_words: default_body_words(),
            story_words: default_story_words(),
            storm_params: StormParams::default(),
        }
    }

    /// A few thousand articles with two storms and two near-misses; for quick runs.
    pub fn small() -> Self {
        SynthSpec {
            seed: 7,
            start_date: ymd(2021, 6, 1),
            days: 30,
            total_articles: 9_600,
            outlet_groups: regular_groups([5, 3, 1, 1], 10, 5, 15.0),
            stories: vec![
                story(
                    "storm-a".into(),
                    Expectation::Storm,
                    2,
                    decay_schedule(9, 120, 1, 2.0),
                    7,
                    6,
                    0.5,
                ),
                story(
                    "storm-b".into(),
                    Expectation::Storm,
                    15,
                    decay_schedule(12, 150, 4, 3.0),
                    8,
                    6,
                    0.6,
                ),
                story(
                    "near-a".into(),
                    Expectation::Duration,
                    8,
                    decay_schedule(5, 60, 0, 2.0),
                    6,
                    4,
                    0.5,
                ),
                story(
                    "near-b".into(),
                    Expectation::Share,
                    20,
                    vec![3, 2, 2, 3, 2, 2, 3, 2],
                    0,
                    18,
                    0.5,
                ),
            ],
            entity_pool: 3_000,
            common_entities: vec![CommonEntity {
                name: "State Capitol".into(),
                kind: "GPE".into(),
                rate: 0.1,
            }],
            topics: 10,
            embed_dim: 128,
            body_words: default_body_words(),
            story_words: default_story_words(),
            storm_params: StormParams::default(),
        }
    }

    pub fn planted_articles(&self) -> usize {
        self.stories
            .iter()
            .map(|s| s.schedule.iter().map(|c| *c as usize).sum::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub label: String,
    pub expect: Expectation,
    pub is_storm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub article_ids: Vec<ArticleId>,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub duration_days: u32,
    pub daily_counts: Vec<u32>,
    pub national_articles: usize,
    pub storm_mode_outlets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub total_articles: usize,
    pub background_articles: usize,
    pub planted_articles: usize,
    pub stories: Vec<PlantedTruth>,
}

impl GroundTruth {
    pub fn storms(&self) -> impl Iterator<Item = &PlantedTruth> {
        self.stories.iter().filter(|s| s.is_storm)
    }

    pub fn near_misses(&self) -> impl Iterator<Item = &PlantedTruth> {
        self.stories.iter().filter(|s| !s.is_storm)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub articles: Vec<Article>,
    pub outlets: Vec<OutletProfile>,
    pub embeddings: EmbeddingMatrix,
    pub truth: GroundTruth,
}

impl SynthCorpus {
    /// Writes `articles.jsonl`, `outlets.jsonl`, `embeddings.emb` (+ `.ids`),
    /// `truth.json`, `spec.json` and a ready-to-run `pipeline.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let articles = dir.join("articles.jsonl");
        let mut w = BufWriter::new(File::create(&articles).map_err(|e| Error::io(&articles, e))?);
        write_articles_jsonl(&mut w, &self.articles)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&articles, e))?;
        let outlets = dir.join("outlets.jsonl");
        let mut w = BufWriter::new(File::create(&outlets).map_err(|e| Error::io(&outlets, e))?);
        write_outlets_jsonl(&mut w, &self.outlets)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&outlets, e))?;
        write_embeddings(&dir.join("embeddings.emb"), &self.embeddings)?;
        let truth = dir.join("truth.json");
        fs::write(&truth, serde_json::to_vec_pretty(&self.truth)?).map_err(|e| Error::io(&truth, e))?;
        let spec = dir.join("spec.json");
        fs::write(&spec, serde_json::to_vec_pretty(&self.spec)?).map_err(|e| Error::io(&spec, e))?;
        let config = dir.join("pipeline.toml");
        fs::write(&config, self.pipeline_config()).map_err(|e| Error::io(&config, e))
    }

    /// Pipeline configuration for the written files, with the entity cap at
    /// 5% of the corpus so the common entities are excluded.
    pub fn pipeline_config(&self) -> String {
        let p = &self.spec.storm_params;
        format!(
            "seed = {seed}\n\
             topics = {topics}\n\
             embed_dim = {dim}\n\
             max_count = {cap}\n\
             window_days = {w}\n\
             share_threshold = {share}\n\
             min_window_articles = {floor}\n\
             min_duration = {dur}\n\
             min_storm_outlets = {outlets}\n\
             \n\
             [paths]\n\
             articles = \"articles.jsonl\"\n\
             outlets = \"outlets.jsonl\"\n\
             embeddings = \"embeddings.emb\"\n\
             workdir = \"work\"\n",
            seed = self.spec.seed,
            topics = self.spec.topics,
            dim = self.spec.embed_dim,
            cap = (self.articles.len() / 20).max(100),
            w = p.window_days,
            share = p.share_threshold,
            floor = p.min_window_articles,
            dur = p.min_duration,
            outlets = p.min_storm_outlets,
        )
    }
}

struct Draft {
    day: u32,
    outlet: usize,
    story: Option<usize>,
}

struct OutletInfo {
    profile: OutletProfile,
    rate: f64,
    low_volume: bool,
}

fn build_outlets(spec: &SynthSpec) -> Result<Vec<OutletInfo>> {
    let mut outlets = Vec::new();
    for group in &spec.outlet_groups {
        if group.scope == Scope::National && !group.states.is_empty() {
            return Err(Error::Infeasible(format!(
                "national group {} lists states",
                group.name_prefix
            )));
        }
        for i in 0..group.count {
            let name = format!("{}-{:02}", group.name_prefix, i + 1);
            let state = (!group.states.is_empty()).then(|| group.states[i % group.states.len()].clone());
            outlets.push(OutletInfo {
                profile: OutletProfile {
                    name,
                    scope: group.scope,
                    state,
                    reliability: group.reliability,
                },
                rate: group.daily_rate,
                low_volume: group.low_volume,
            });
        }
    }
    Ok(outlets)
}

/// Per-day split of a schedule into national and local counts whose totals
/// are exactly `round(total * share)` and the rest.
fn split_schedule(schedule: &[u32], national: usize) -> (Vec<u32>, Vec<u32>) {
    let total: u32 = schedule.iter().sum();
    let mut cum = 0u64;
    let mut prev = 0u64;
    let mut nat = Vec::with_capacity(schedule.len());
    for c in schedule {
        cum += u64::from(*c);
        let target = cum * national as u64 / u64::from(total.max(1));
        nat.push((target - prev) as u32);
        prev = target;
    }
    let local = schedule.iter().zip(&nat).map(|(c, n)| c - n).collect();
    (nat, local)
}

/// Places one scope's share of a story over its heavy and light outlets.
/// Light outlets publish at most once in any three consecutive days; heavy
/// outlets get a burst on their busiest day plus whatever the light outlets
/// cannot absorb.
fn allocate_pool(
    label: &str,
    counts: &[u32],
    heavy: &[usize],
    light: &[usize],
    out: &mut Vec<(u32, usize)>,
) -> Result<()> {
    let mut remaining = counts.to_vec();
    let mut placed: Vec<(u32, usize)> = Vec::new();
    for &h in heavy {
        let Some(best) = (0..remaining.len()).max_by(|a, b| remaining[*a].cmp(&remaining[*b]).then(b.cmp(a)))
        else {
            break;
        };
        let mut need = BURST;
        for day in best..(best + 3).min(remaining.len()) {
            let take = need.min(remaining[day]);
            remaining[day] -= take;
            need -= take;
            placed.extend(std::iter::repeat_n((day as u32, h), take as usize));
        }
    }
    for (day, left) in remaining.iter_mut().enumerate() {
        let eligible: Vec<usize> = light
            .iter()
            .enumerate()
            .filter(|(i, _)| (day + i) % 3 == 0)
            .map(|(_, o)| *o)
            .collect();
        for o in eligible {
            if *left == 0 {
                break;
            }
            placed.push((day as u32, o));
            *left -= 1;
        }
        if *left > 0 && heavy.is_empty() {
            return Err(Error::Infeasible(format!(
                "story {label}: day {day} needs {left} more articles than its light outlets can carry"
            )));
        }
        for i in 0..*left as usize {
            placed.push((day as u32, heavy[(day + i) % heavy.len()]));
        }
        *left = 0;
    }
    out.extend(placed);
    Ok(())
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.days == 0 || spec.outlet_groups.is_empty() {
        return Err(Error::Infeasible("spec needs days and outlets".into()));
    }
    if spec.topics < 2 || spec.embed_dim < 8 {
        return Err(Error::Infeasible(
            "need at least 2 topics and embedding dim >= 8".into(),
        ));
    }
    if spec.planted_articles() > spec.total_articles {
        return Err(Error::Infeasible(format!(
            "{} planted articles exceed the total of {}",
            spec.planted_articles(),
            spec.total_articles
        )));
    }
    for s in &spec.stories {
        let len = s.schedule.len() as u32;
        if len == 0 || s.schedule[0] == 0 || *s.schedule.last().unwrap() == 0 {
            return Err(Error::Infeasible(format!(
                "story {}: schedule must start and end with coverage",
                s.label
            )));
        }
        if s.start_day + len > spec.days {
            return Err(Error::Infeasible(format!(
                "story {} runs past the corpus end",
                s.label
            )));
        }
        let mut gap = 0;
        for c in &s.schedule {
            gap = if *c == 0 { gap + 1 } else { 0 };
            if gap >= 7 {
                return Err(Error::Infeasible(format!(
                    "story {}: a week without coverage splits the story",
                    s.label
                )));
            }
        }
        if !(0.0..=1.0).contains(&s.national_share) {
            return Err(Error::Infeasible(format!(
                "story {}: national_share outside [0, 1]",
                s.label
            )));
        }
        if let Some(t) = s.topic {
            if t >= spec.topics {
                return Err(Error::Infeasible(format!(
                    "story {}: topic {t} out of range",
                    s.label
                )));
            }
        }
    }
    Ok(())
}

fn take_outlets(pool: &[usize], n: usize, label: &str, what: &str) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::Infeasible(format!(
            "story {label}: needs {n} {what} outlets, only {} available",
            pool.len()
        )));
    }
    Ok(pool[..n].to_vec())
}

fn plant_story(
    spec: &SynthSpec,
    story: &PlantedStory,
    outlets: &[OutletInfo],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(u32, usize)>> {
    let mut regular_nat: Vec<usize> = Vec::new();
    let mut regular_loc: Vec<usize> = Vec::new();
    let mut small: Vec<usize> = Vec::new();
    for (i, o) in outlets.iter().enumerate() {
        match (o.low_volume, o.profile.scope) {
            (true, _) => small.push(i),
            (false, Scope::National) => regular_nat.push(i),
            (false, Scope::Local) => regular_loc.push(i),
        }
    }
    regular_nat.shuffle(rng);
    regular_loc.shuffle(rng);
    small.shuffle(rng);

    let share = story.national_share;
    let split = |n: usize| {
        let nat = (n as f64 * share).round() as usize;
        (nat, n - nat)
    };
    let (light_nat_n, light_loc_n) = split(story.light_outlets);
    let (mut heavy_nat, mut heavy_loc) = (Vec::new(), Vec::new());
    let (light_nat, light_loc);
    if story.expect == Expectation::Volume {
        for o in take_outlets(&small, story.heavy_outlets, &story.label, "low-volume")? {
            match outlets[o].profile.scope {
                Scope::National => heavy_nat.push(o),
                Scope::Local => heavy_loc.push(o),
            }
        }
        light_nat = take_outlets(&regular_nat, light_nat_n, &story.label, "national")?;
        light_loc = take_outlets(&regular_loc, light_loc_n, &story.label, "local")?;
    } else {
        let (hn, hl) = split(story.heavy_outlets);
        let nat = take_outlets(&regular_nat, hn + light_nat_n, &story.label, "national")?;
        let loc = take_outlets(&regular_loc, hl + light_loc_n, &story.label, "local")?;
        heavy_nat = nat[..hn].to_vec();
        light_nat = nat[hn..].to_vec();
        heavy_loc = loc[..hl].to_vec();
        light_loc = loc[hl..].to_vec();
    }

    let total: u32 = story.schedule.iter().sum();
    let has_nat = !heavy_nat.is_empty() || !light_nat.is_empty();
    let has_loc = !heavy_loc.is_empty() || !light_loc.is_empty();
    let national = match (has_nat, has_loc) {
        (true, true) => (f64::from(total) * share).round() as usize,
        (true, false) => total as usize,
        (false, true) => 0,
        (false, false) => return Err(Error::Infeasible(format!("story {} has no outlets", story.label))),
    };
    let (nat_counts, loc_counts) = split_schedule(&story.schedule, national);
    let mut placed = Vec::new();
    allocate_pool(&story.label, &nat_counts, &heavy_nat, &light_nat, &mut placed)?;
    allocate_pool(&story.label, &loc_counts, &heavy_loc, &light_loc, &mut placed)?;
    let _ = spec;
    Ok(placed
        .into_iter()
        .map(|(day, outlet)| (story.start_day + day, outlet))
        .collect())
}

fn topic_dist(rng: &mut ChaCha8Rng, k: usize, primary: usize, primary_units: u32) -> Vec<f64> {
    let mut units = vec![0u32; k];
    units[primary] = primary_units;
    for _ in 0..TOPIC_UNITS - primary_units {
        units[rng.gen_range(0..k)] += 1;
    }
    units
        .into_iter()
        .map(|u| f64::from(u) / f64::from(TOPIC_UNITS))
        .collect()
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| pseudo_word(rng.gen_range(0..VOCAB))).collect()
}

fn background_entity(i: usize) -> EntityMention {
    EntityMention::new(
        format!(
            "{} {}",
            capitalize(&pseudo_word(ENTITY_BASE + 2 * i)),
            capitalize(&pseudo_word(ENTITY_BASE + 2 * i + 1))
        ),
        ENTITY_TYPES[i % ENTITY_TYPES.len()],
    )
}

fn story_entity(i: usize) -> EntityMention {
    EntityMention::new(
        format!(
            "{} {}",
            capitalize(&pseudo_word(STORY_BASE + 2 * i)),
            capitalize(&pseudo_word(STORY_BASE + 2 * i + 1))
        ),
        "EVENT",
    )
}

/// Generates a corpus from `spec`.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outlets = build_outlets(spec)?;

    let mut drafts: Vec<Draft> = Vec::with_capacity(spec.total_articles);
    for (s, story) in spec.stories.iter().enumerate() {
        for (day, outlet) in plant_story(spec, story, &outlets, &mut rng)? {
            drafts.push(Draft {
                day,
                outlet,
                story: Some(s),
            });
        }
    }

    let background = spec.total_articles - drafts.len();
    let base: f64 = outlets.iter().map(|o| o.rate).sum::<f64>() * f64::from(spec.days);
    if base <= 0.0 && background > 0 {
        return Err(Error::Infeasible("outlets publish nothing".into()));
    }
    let scale = background as f64 / base;
    let mut slots: Vec<u32> = Vec::with_capacity(outlets.len() * spec.days as usize);
    for o in &outlets {
        for _ in 0..spec.days {
            slots.push((o.rate * scale).floor() as u32);
        }
    }
    let assigned: usize = slots.iter().map(|c| *c as usize).sum();
    let mut weights: Vec<f64> = Vec::with_capacity(slots.len());
    for o in &outlets {
        weights.extend(std::iter::repeat_n(o.rate, spec.days as usize));
    }
    let weight_sum: f64 = weights.iter().sum();
    for _ in assigned..background {
        let mut x = rng.gen::<f64>() * weight_sum;
        let mut slot = 0;
        while slot + 1 < weights.len() && x >= weights[slot] {
            x -= weights[slot];
            slot += 1;
        }
        slots[slot] += 1;
    }
    for (slot, count) in slots.iter().enumerate() {
        let outlet = slot / spec.days as usize;
        let day = (slot % spec.days as usize) as u32;
        for _ in 0..*count {
            drafts.push(Draft {
                day,
                outlet,
                story: None,
            });
        }
    }
    drafts.sort_by_key(|d| (d.day, d.outlet, d.story.map_or(0, |s| s + 1)));

    let story_cores: Vec<(Vec<String>, Vec<String>, usize)> = spec
        .stories
        .iter()
        .map(|s| {
            let topic = s.topic.unwrap_or_else(|| rng.gen_range(0..spec.topics));
            (words(&mut rng, 6), words(&mut rng, spec.story_words), topic)
        })
        .collect();

    let mut articles = Vec::with_capacity(drafts.len());
    let mut members: Vec<Vec<ArticleId>> = vec![Vec::new(); spec.stories.len()];
    for (i, draft) in drafts.iter().enumerate() {
        let id = ArticleId(i as u64);
        let date = spec.start_date + Days::new(u64::from(draft.day));
        let mut entities = Vec::new();
        let (title, text, topics) = match draft.story {
            Some(s) => {
                members[s].push(id);
                let (title_words, core, topic) = &story_cores[s];
                let mut body = core.clone();
                let at = rng.gen_range(0..body.len());
                body[at] = pseudo_word(rng.gen_range(0..VOCAB));
                let mut title = title_words.clone();
                title.push(pseudo_word(TITLE_SUFFIX_BASE + i));
                entities.push(story_entity(s));
                (title, body, topic_dist(&mut rng, spec.topics, *topic, 48))
            }
            None => {
                let mut title = words(&mut rng, 5);
                title.push(pseudo_word(TITLE_SUFFIX_BASE + i));
                let primary = rng.gen_range(0..spec.topics);
                (
                    title,
                    words(&mut rng, spec.body_words),
                    topic_dist(&mut rng, spec.topics, primary, 40),
                )
            }
        };
        for _ in 0..2 {
            entities.push(background_entity(rng.gen_range(0..spec.entity_pool.max(1))));
        }
        for common in &spec.common_entities {
            if rng.gen::<f64>() < common.rate {
                entities.push(EntityMention::new(common.name.clone(), common.kind.clone()));
            }
        }
        let mut title = title.join(" ");
        title = capitalize(&title);
        articles.push(Article {
            id,
            outlet: outlets[draft.outlet].profile.name.clone(),
            date,
            title,
            text: text.join(" ") + ".",
            entities: Some(entities),
            topic_dist: Some(topics),
        });
    }

    let data: Vec<f32> = articles
        .par_iter()
        .flat_map_iter(|a| mock_embed(&a.title, &a.text, spec.embed_dim, spec.seed))
        .collect();
    let embeddings = EmbeddingMatrix::new(spec.embed_dim, articles.iter().map(|a| a.id).collect(), data)?;

    let profiles: Vec<OutletProfile> = outlets.iter().map(|o| o.profile.clone()).collect();
    let truth = verify(spec, &articles, &profiles, members)?;
    Ok(SynthCorpus {
        spec: spec.clone(),
        articles,
        outlets: profiles,
        embeddings,
        truth,
    })
}

/// Brute-force storm check of every planted story against its declared outcome.
fn verify(
    spec: &SynthSpec,
    articles: &[Article],
    outlets: &[OutletProfile],
    members: Vec<Vec<ArticleId>>,
) -> Result<GroundTruth> {
    let params = &spec.storm_params;
    let mut totals: HashMap<(&str, NaiveDate), u32> = HashMap::new();
    for a in articles {
        *totals.entry((a.outlet.as_str(), a.date)).or_insert(0) += 1;
    }
    let national: BTreeSet<&str> = outlets
        .iter()
        .filter(|o| o.scope == Scope::National)
        .map(|o| o.name.as_str())
        .collect();

    let mut stories = Vec::new();
    for (story, ids) in spec.stories.iter().zip(members) {
        let dates: Vec<NaiveDate> = ids.iter().map(|id| articles[id.0 as usize].date).collect();
        let first = *dates.iter().min().expect("stories are non-empty");
        let last = *dates.iter().max().unwrap();
        let duration = (last - first).num_days() as u32 + 1;

        let mut own: HashMap<(&str, NaiveDate), u32> = HashMap::new();
        for id in &ids {
            let a = &articles[id.0 as usize];
            *own.entry((a.outlet.as_str(), a.date)).or_insert(0) += 1;
        }
        let covering: BTreeSet<&str> = own.keys().map(|(o, _)| *o).collect();
        let mut full = BTreeSet::new();
        let mut share_only = BTreeSet::new();
        let mut floor_with_coverage = BTreeSet::new();
        let w = i64::from(params.window_days);
        for outlet in &covering {
            let mut start = first - chrono::Duration::days(w - 1);
            while start <= last {
                let (mut t, mut s) = (0u32, 0u32);
                for k in 0..w {
                    let day = start + chrono::Duration::days(k);
                    t += totals.get(&(*outlet, day)).copied().unwrap_or(0);
                    s += own.get(&(*outlet, day)).copied().unwrap_or(0);
                }
                if s > 0 {
                    let meets_share = f64::from(s) / f64::from(t) >= params.share_threshold;
                    let meets_floor = t >= params.min_window_articles;
                    if meets_share && meets_floor {
                        full.insert(*outlet);
                    }
                    if meets_share {
                        share_only.insert(*outlet);
                    }
                    if meets_floor {
                        floor_with_coverage.insert(*outlet);
                    }
                }
                start += chrono::Duration::days(1);
            }
        }
        let long = duration >= params.min_duration;
        let enough = params.min_storm_outlets;
        let is_storm = long && full.len() >= enough;
        let observed = if is_storm {
            Some(Expectation::Storm)
        } else if !long && full.len() >= enough {
            Some(Expectation::Duration)
        } else if long && !full.is_empty() && full.len() < enough {
            Some(Expectation::Outlets)
        } else if long && full.is_empty() && floor_with_coverage.len() >= enough && share_only.is_empty() {
            Some(Expectation::Share)
        } else if long && full.len() < enough && share_only.len() >= enough {
            Some(Expectation::Volume)
        } else {
            None
        };
        if observed != Some(story.expect) {
            return Err(Error::Infeasible(format!(
                "story {} was declared {:?} but comes out as {:?} (duration {}, {} storm-mode outlets)",
                story.label,
                story.expect,
                observed,
                duration,
                full.len()
            )));
        }

        let mut daily = vec![0u32; duration as usize];
        for d in &dates {
            daily[(*d - first).num_days() as usize] += 1;
        }
        let national_articles = ids
            .iter()
            .filter(|id| national.contains(articles[id.0 as usize].outlet.as_str()))
            .count();
        stories.push(PlantedTruth {
            label: story.label.clone(),
            expect: story.expect,
            is_storm,
            reason: story.expect.reason().map(str::to_owned),
            article_ids: ids,
            first_day: first,
            last_day: last,
            duration_days: duration,
            daily_counts: daily,
            national_articles,
            storm_mode_outlets: full.into_iter().map(str::to_owned).collect(),
        });
    }
    let planted = spec.planted_articles();
    Ok(GroundTruth {
        total_articles: articles.len(),
        background_articles: articles.len() - planted,
        planted_articles: planted,
        stories,
    })
}

/// Summary of a generated corpus, keyed by story label.
pub fn truth_index(truth: &GroundTruth) -> BTreeMap<&str, &PlantedTruth> {
    truth.stories.iter().map(|s| (s.label.as_str(), s)).collect()
}
