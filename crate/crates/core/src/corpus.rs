//! Article corpus: ingestion, validation, deduplication and date windowing.
//!
//! A [`Corpus`] is immutable once built. Articles are kept sorted by id, so an
//! article's position in [`Corpus::articles`] doubles as a dense index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a topic distribution.
pub const TOPIC_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArticleId(pub u64);

impl fmt::Display for ArticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A named entity mention: `(surface, type tag)`. Serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention(pub String, pub String);

impl EntityMention {
    pub fn new(surface: impl Into<String>, kind: impl Into<String>) -> Self {
        EntityMention(surface.into(), kind.into())
    }

    pub fn surface(&self) -> &str {
        &self.0
    }

    pub fn kind(&self) -> &str {
        &self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: ArticleId,
    pub outlet: String,
    pub date: NaiveDate,
    pub title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<EntityMention>>,
    #[serde(rename = "topics", default, skip_serializing_if = "Option::is_none")]
    pub topic_dist: Option<Vec<f64>>,
}

impl Article {
    pub fn entities(&self) -> &[EntityMention] {
        self.entities.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    National,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reliability {
    Reliable,
    Mixed,
    Unreliable,
    Unrated,
}

impl Reliability {
    pub fn as_str(self) -> &'static str {
        match self {
            Reliability::Reliable => "reliable",
            Reliability::Mixed => "mixed",
            Reliability::Unreliable => "unreliable",
            Reliability::Unrated => "unrated",
        }
    }
}

impl FromStr for Reliability {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "reliable" => Ok(Reliability::Reliable),
            "mixed" => Ok(Reliability::Mixed),
            "unreliable" => Ok(Reliability::Unreliable),
            "unrated" => Ok(Reliability::Unrated),
            other => Err(format!("unknown reliability {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutletProfile {
    pub name: String,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    pub reliability: Reliability,
}

impl OutletProfile {
    pub fn national(name: impl Into<String>, reliability: Reliability) -> Self {
        OutletProfile {
            name: name.into(),
            scope: Scope::National,
            state: None,
            reliability,
        }
    }

    pub fn local(name: impl Into<String>, state: Option<&str>) -> Self {
        OutletProfile {
            name: name.into(),
            scope: Scope::Local,
            state: state.map(str::to_owned),
            reliability: Reliability::Unrated,
        }
    }

    pub fn is_national(&self) -> bool {
        self.scope == Scope::National
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match (&self.scope, &self.state) {
            (Scope::National, Some(state)) => {
                Err(format!("national outlet {:?} carries state {state:?}", self.name))
            }
            (Scope::Local, Some(state))
                if state.len() != 2 || !state.bytes().all(|b| b.is_ascii_uppercase()) =>
            {
                Err(format!("state {state:?} is not a 2-letter code"))
            }
            _ => Ok(()),
        }
    }
}

/// Inclusive calendar-day range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvertedRange { start, end });
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    /// Number of calendar days in the range.
    pub fn len_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    /// Whole days from the start of the range (negative before it).
    pub fn offset(&self, date: NaiveDate) -> i64 {
        (date - self.start).num_days()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    articles: Vec<Article>,
    outlets: BTreeMap<String, OutletProfile>,
    date_range: DateRange,
}

impl Corpus {
    /// Builds a corpus, sorting articles by id and checking every invariant.
    /// When `date_range` is `None` it is taken from the articles themselves.
    pub fn new(
        mut articles: Vec<Article>,
        outlets: impl IntoIterator<Item = OutletProfile>,
        date_range: Option<DateRange>,
    ) -> Result<Self> {
        let mut outlet_map = BTreeMap::new();
        for outlet in outlets {
            outlet.validate().map_err(Error::Config)?;
            outlet_map.insert(outlet.name.clone(), outlet);
        }
        articles.sort_by_key(|a| a.id);
        for pair in articles.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId {
                    id: pair[1].id,
                    line: 0,
                });
            }
        }
        for article in &articles {
            if !outlet_map.contains_key(&article.outlet) {
                return Err(Error::UnknownOutlet {
                    id: article.id,
                    outlet: article.outlet.clone(),
                });
            }
        }
        let date_range = match date_range {
            Some(range) => range,
            None => data_range(&articles),
        };
        for article in &articles {
            if !date_range.contains(article.date) {
                return Err(Error::DateOutOfRange {
                    id: article.id,
                    date: article.date,
                    start: date_range.start,
                    end: date_range.end,
                });
            }
        }
        Ok(Corpus {
            articles,
            outlets: outlet_map,
            date_range,
        })
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn outlets(&self) -> &BTreeMap<String, OutletProfile> {
        &self.outlets
    }

    pub fn outlet(&self, name: &str) -> Option<&OutletProfile> {
        self.outlets.get(name)
    }

    pub fn date_range(&self) -> DateRange {
        self.date_range
    }

    /// Dense position of an article id.
    pub fn position(&self, id: ArticleId) -> Option<usize> {
        self.articles.binary_search_by_key(&id, |a| a.id).ok()
    }

    pub fn get(&self, id: ArticleId) -> Option<&Article> {
        self.position(id).map(|pos| &self.articles[pos])
    }

    pub fn ids(&self) -> impl Iterator<Item = ArticleId> + '_ {
        self.articles.iter().map(|a| a.id)
    }

    /// The outlet profile of an article. Every article resolves by construction.
    pub fn outlet_of(&self, article: &Article) -> &OutletProfile {
        &self.outlets[&article.outlet]
    }

    fn with_articles(&self, articles: Vec<Article>, date_range: DateRange) -> Corpus {
        Corpus {
            articles,
            outlets: self.outlets.clone(),
            date_range,
        }
    }
}

fn data_range(articles: &[Article]) -> DateRange {
    let min = articles.iter().map(|a| a.date).min();
    let max = articles.iter().map(|a| a.date).max();
    match (min, max) {
        (Some(start), Some(end)) => DateRange { start, end },
        _ => {
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
            DateRange {
                start: epoch,
                end: epoch,
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Declared corpus range; articles outside it are an error.
    pub date_range: Option<DateRange>,
}

/// A record that parsed but could not be admitted to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub id: Option<ArticleId>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejections: Vec<Rejection>,
}

#[derive(Deserialize)]
struct RawArticle {
    id: Option<ArticleId>,
    outlet: String,
    date: NaiveDate,
    title: String,
    text: String,
    #[serde(default)]
    entities: Option<Vec<EntityMention>>,
    #[serde(default)]
    topics: Option<Vec<f64>>,
}

/// Reads and validates an article file and an outlet file (both JSONL).
pub fn ingest(articles_path: &Path, outlets_path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let articles = File::open(articles_path).map_err(|e| Error::io(articles_path, e))?;
    let outlets = File::open(outlets_path).map_err(|e| Error::io(outlets_path, e))?;
    ingest_from(
        BufReader::new(articles),
        articles_path,
        BufReader::new(outlets),
        outlets_path,
        opts,
    )
}

/// Reader-based ingestion; `*_name` only labels error messages.
pub fn ingest_from(
    articles: impl BufRead,
    articles_name: &Path,
    outlets: impl BufRead,
    outlets_name: &Path,
    opts: &IngestOptions,
) -> Result<Ingested> {
    let outlets = read_outlets(outlets, outlets_name)?;
    let known: HashSet<&str> = outlets.iter().map(|o| o.name.as_str()).collect();

    let mut accepted = Vec::new();
    let mut rejections = Vec::new();
    let mut seen: HashMap<ArticleId, usize> = HashMap::new();
    let mut record_index = 0u64;
    for (idx, line) in articles.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(articles_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: articles_name.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let id = raw.id.unwrap_or(ArticleId(record_index));
        record_index += 1;
        if seen.insert(id, line_no).is_some() {
            return Err(Error::DuplicateId { id, line: line_no });
        }
        if let Some(range) = opts.date_range {
            if !range.contains(raw.date) {
                return Err(Error::DateOutOfRange {
                    id,
                    date: raw.date,
                    start: range.start,
                    end: range.end,
                });
            }
        }
        if !known.contains(raw.outlet.as_str()) {
            rejections.push(Rejection {
                line: line_no,
                id: Some(id),
                reason: format!("unknown outlet {:?}", raw.outlet),
            });
            continue;
        }
        if let Some(topics) = &raw.topics {
            if let Err(reason) = check_topic_dist(topics) {
                rejections.push(Rejection {
                    line: line_no,
                    id: Some(id),
                    reason,
                });
                continue;
            }
        }
        accepted.push(Article {
            id,
            outlet: raw.outlet,
            date: raw.date,
            title: raw.title,
            text: raw.text,
            entities: raw.entities,
            topic_dist: raw.topics,
        });
    }
    let corpus = Corpus::new(accepted, outlets, opts.date_range)?;
    Ok(Ingested { corpus, rejections })
}

fn check_topic_dist(topics: &[f64]) -> std::result::Result<(), String> {
    if topics.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("topic distribution has a negative or non-finite entry".into());
    }
    let sum: f64 = topics.iter().sum();
    if (sum - 1.0).abs() > TOPIC_SUM_TOLERANCE {
        return Err(format!("topic distribution sums to {sum}"));
    }
    Ok(())
}

pub fn read_outlets(reader: impl BufRead, name: &Path) -> Result<Vec<OutletProfile>> {
    let mut outlets = Vec::new();
    let mut names = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: name.to_path_buf(),
            line: idx + 1,
            message,
        };
        let outlet: OutletProfile = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        outlet.validate().map_err(malformed)?;
        if !names.insert(outlet.name.clone()) {
            return Err(malformed(format!("duplicate outlet {:?}", outlet.name)));
        }
        outlets.push(outlet);
    }
    Ok(outlets)
}

pub fn write_articles_jsonl(mut w: impl Write, articles: &[Article]) -> std::io::Result<()> {
    for article in articles {
        serde_json::to_writer(&mut w, article)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_outlets_jsonl<'a>(
    mut w: impl Write,
    outlets: impl IntoIterator<Item = &'a OutletProfile>,
) -> std::io::Result<()> {
    for outlet in outlets {
        serde_json::to_writer(&mut w, outlet)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the corpus back out in the ingest schema.
pub fn export(corpus: &Corpus, articles_path: &Path, outlets_path: &Path) -> Result<()> {
    let write = |path: &Path, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    };
    write(articles_path, &|w| write_articles_jsonl(w, corpus.articles()))?;
    write(outlets_path, &|w| {
        write_outlets_jsonl(w, corpus.outlets().values())
    })
}

/// Keeps one article per `(outlet, exact title)`: the earliest-dated, lowest id on ties.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut keep: HashMap<(&str, &str), (NaiveDate, ArticleId)> = HashMap::new();
    for article in corpus.articles() {
        let key = (article.outlet.as_str(), article.title.as_str());
        let candidate = (article.date, article.id);
        keep.entry(key)
            .and_modify(|best| {
                if candidate < *best {
                    *best = candidate;
                }
            })
            .or_insert(candidate);
    }
    let survivors = corpus
        .articles()
        .iter()
        .filter(|a| keep[&(a.outlet.as_str(), a.title.as_str())].1 == a.id)
        .cloned()
        .collect();
    corpus.with_articles(survivors, corpus.date_range())
}

/// Restricts the corpus to `start..=end`, which becomes its new date range.
pub fn truncate_range(corpus: &Corpus, start: NaiveDate, end: NaiveDate) -> Result<Corpus> {
    let range = DateRange::new(start, end)?;
    let survivors = corpus
        .articles()
        .iter()
        .filter(|a| range.contains(a.date))
        .cloned()
        .collect();
    Ok(corpus.with_articles(survivors, range))
}
