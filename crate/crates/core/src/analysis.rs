//! Topic skew of storm coverage, gatekeeping series around storm onsets, and
//! lead-lag influence graphs between outlets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, ArticleId, Corpus, OutletProfile, Scope};
use crate::error::{Error, Result};
use crate::storms::StormRecord;

pub const DEFAULT_TOPICS: usize = 30;
pub const DEFAULT_GATEKEEPING_WINDOW: u32 = 14;
pub const DEFAULT_LOOKBACK_DAYS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicModelMeta {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl TopicModelMeta {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("topic count must be at least 2, got {k}")));
        }
        Ok(TopicModelMeta { k, labels: None })
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn topic_dist(article: &Article, k: usize) -> Result<&[f64]> {
    let dist = article
        .topic_dist
        .as_deref()
        .ok_or_else(|| Error::MissingTopics {
            ids: vec![article.id],
        })?;
    if dist.len() != k {
        return Err(Error::TopicLength {
            id: article.id,
            expected: k,
            found: dist.len(),
        });
    }
    Ok(dist)
}

/// The article's highest-scoring topic.
pub fn assign_article_topic(article: &Article, k: usize) -> Result<usize> {
    topic_dist(article, k).map(argmax)
}

/// Argmax of the summed topic distributions of a storm's articles.
pub fn storm_topic(article_ids: &[ArticleId], corpus: &Corpus, k: usize) -> Result<usize> {
    let mut sum = vec![0.0; k];
    let mut missing = Vec::new();
    for id in article_ids {
        let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
        match topic_dist(article, k) {
            Ok(dist) => sum.iter_mut().zip(dist).for_each(|(s, p)| *s += p),
            Err(Error::MissingTopics { .. }) => missing.push(*id),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingTopics { ids: missing });
    }
    Ok(argmax(&sum))
}

/// Percentage-point difference, per topic, between the share of storm articles
/// and the share of non-storm articles assigned to it.
pub fn topic_skew(storm_topics: &[usize], nonstorm_topics: &[usize], k: usize) -> Result<Vec<f64>> {
    if storm_topics.is_empty() {
        return Err(Error::EmptyInput("storm articles"));
    }
    if nonstorm_topics.is_empty() {
        return Err(Error::EmptyInput("non-storm articles"));
    }
    let pct = |topics: &[usize]| {
        let mut counts = vec![0usize; k];
        for t in topics {
            counts[*t] += 1;
        }
        counts
            .into_iter()
            .map(|c| 100.0 * c as f64 / topics.len() as f64)
            .collect::<Vec<_>>()
    };
    let (storm, rest) = (pct(storm_topics), pct(nonstorm_topics));
    Ok(storm.iter().zip(&rest).map(|(s, r)| s - r).collect())
}

/// Topic skew over a whole corpus: storm articles are the members of `storms`,
/// everything else is non-storm.
pub fn corpus_topic_skew(storms: &[StormRecord], corpus: &Corpus, k: usize) -> Result<Vec<f64>> {
    let members: HashSet<ArticleId> = storms
        .iter()
        .flat_map(|s| s.article_ids.iter().copied())
        .collect();
    let mut storm_topics = Vec::new();
    let mut other = Vec::new();
    let mut missing = Vec::new();
    for article in corpus.articles() {
        let topic = match assign_article_topic(article, k) {
            Ok(t) => t,
            Err(Error::MissingTopics { .. }) => {
                missing.push(article.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        if members.contains(&article.id) {
            storm_topics.push(topic);
        } else {
            other.push(topic);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingTopics { ids: missing });
    }
    topic_skew(&storm_topics, &other, k)
}

/// Articles grouped by publication day, for the gatekeeping series.
pub struct DayIndex<'a> {
    corpus: &'a Corpus,
    by_day: HashMap<NaiveDate, Vec<usize>>,
}

impl<'a> DayIndex<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        let mut by_day: HashMap<NaiveDate, Vec<usize>> = HashMap::new();
        for (pos, article) in corpus.articles().iter().enumerate() {
            by_day.entry(article.date).or_default().push(pos);
        }
        DayIndex { corpus, by_day }
    }

    fn on(&self, date: NaiveDate) -> impl Iterator<Item = &'a Article> + '_ {
        self.by_day
            .get(&date)
            .into_iter()
            .flatten()
            .map(|&pos| &self.corpus.articles()[pos])
    }
}

fn shift(date: NaiveDate, offset: i64) -> Option<NaiveDate> {
    if offset >= 0 {
        date.checked_add_days(Days::new(offset as u64))
    } else {
        date.checked_sub_days(Days::new(offset.unsigned_abs()))
    }
}

/// For each offset in `-window..=window` around the storm's first day, the
/// percentage of articles from the storm's covering outlets that fall in the
/// storm's topic. `None` marks days without any qualifying article.
pub fn gatekeeping_series(
    storm: &StormRecord,
    days: &DayIndex<'_>,
    k: usize,
    window: u32,
    exclude_storm_articles: bool,
) -> Result<Vec<Option<f64>>> {
    let corpus = days.corpus;
    let topic = storm_topic(&storm.article_ids, corpus, k)?;
    let members: HashSet<ArticleId> = storm.article_ids.iter().copied().collect();
    let mut outlets = HashSet::new();
    for id in &storm.article_ids {
        outlets.insert(corpus.get(*id).ok_or(Error::UnknownArticle(*id))?.outlet.as_str());
    }
    let window = i64::from(window);
    let mut series = Vec::with_capacity(2 * window as usize + 1);
    let mut missing = Vec::new();
    for offset in -window..=window {
        let Some(date) = shift(storm.start_day, offset) else {
            series.push(None);
            continue;
        };
        let (mut total, mut on_topic) = (0usize, 0usize);
        for article in days.on(date) {
            if !outlets.contains(article.outlet.as_str())
                || (exclude_storm_articles && members.contains(&article.id))
            {
                continue;
            }
            match assign_article_topic(article, k) {
                Ok(t) => {
                    total += 1;
                    on_topic += usize::from(t == topic);
                }
                Err(Error::MissingTopics { .. }) => missing.push(article.id),
                Err(e) => return Err(e),
            }
        }
        series.push((total > 0).then(|| 100.0 * on_topic as f64 / total as f64));
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::MissingTopics { ids: missing });
    }
    Ok(series)
}

/// Per-offset mean over storms, skipping null points.
pub fn average_gatekeeping_series(series: &[Vec<Option<f64>>]) -> Result<Vec<Option<f64>>> {
    let len = series
        .first()
        .map(Vec::len)
        .ok_or(Error::EmptyInput("gatekeeping series"))?;
    Ok((0..len)
        .map(|i| {
            let values: Vec<f64> = series
                .iter()
                .filter_map(|s| s.get(i).copied().flatten())
                .collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        })
        .collect())
}

pub fn write_gatekeeping_csv(
    w: impl Write,
    window: u32,
    all: &[Option<f64>],
    excluding_members: &[Option<f64>],
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["offset", "all_articles", "excluding_storm_articles"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, offset) in (-i64::from(window)..=i64::from(window)).enumerate() {
        csv.write_record([
            offset.to_string(),
            cell(all.get(i).copied().flatten()),
            cell(excluding_members.get(i).copied().flatten()),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("gatekeeping csv", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKey {
    Outlet,
    OutletType,
}

/// Node label of an outlet: its name, or its ecosystem segment (`local` or
/// `national-<reliability>`).
pub fn node_label(profile: &OutletProfile, key: NodeKey) -> String {
    match (key, profile.scope) {
        (NodeKey::Outlet, _) => profile.name.clone(),
        (NodeKey::OutletType, Scope::Local) => "local".to_owned(),
        (NodeKey::OutletType, Scope::National) => format!("national-{}", profile.reliability.as_str()),
    }
}

/// Directed lead-lag graph. `edges[(i, j)]` counts storms in which `i` published
/// within the lookback window before `j`'s first article.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InfluenceGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), u64>,
}

impl InfluenceGraph {
    pub fn from_parts(
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = ((String, String), u64)>,
    ) -> Self {
        let mut graph = InfluenceGraph {
            nodes: nodes.into_iter().collect(),
            edges: BTreeMap::new(),
        };
        for ((src, dst), w) in edges {
            if w > 0 && src != dst {
                graph.nodes.insert(src.clone());
                graph.nodes.insert(dst.clone());
                *graph.edges.entry((src, dst)).or_insert(0) += w;
            }
        }
        graph
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<(String, String), u64> {
        &self.edges
    }

    pub fn weight(&self, src: &str, dst: &str) -> u64 {
        self.edges
            .get(&(src.to_owned(), dst.to_owned()))
            .copied()
            .unwrap_or(0)
    }

    /// Outgoing minus incoming weight for every node.
    pub fn net(&self) -> BTreeMap<String, i64> {
        let mut net: BTreeMap<String, i64> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for ((src, dst), w) in &self.edges {
            *net.get_mut(src).unwrap() += *w as i64;
            *net.get_mut(dst).unwrap() -= *w as i64;
        }
        net
    }

    /// The subgraph induced by `keep`.
    pub fn restrict(&self, keep: &BTreeSet<String>) -> InfluenceGraph {
        InfluenceGraph {
            nodes: self.nodes.intersection(keep).cloned().collect(),
            edges: self
                .edges
                .iter()
                .filter(|((s, d), _)| keep.contains(s) && keep.contains(d))
                .map(|(k, w)| (k.clone(), *w))
                .collect(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let net = self.net();
        serde_json::json!({
            "nodes": net.iter().map(|(id, net)| serde_json::json!({"id": id, "net": net})).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|((src, dst), w)| serde_json::json!({"src": src, "dst": dst, "weight": w})).collect::<Vec<_>>(),
        })
    }

    /// Graphviz rendering with pen widths proportional to edge weight.
    pub fn to_dot(&self) -> String {
        let net = self.net();
        let max = self.edges.values().copied().max().unwrap_or(1).max(1) as f64;
        let mut out = String::from("digraph influence {\n  node [shape=ellipse];\n");
        for (id, n) in &net {
            out.push_str(&format!(
                "  {:?} [label=\"{}\\nnet {:+}\"];\n",
                id,
                id.replace('"', "\\\""),
                n
            ));
        }
        for ((src, dst), w) in &self.edges {
            out.push_str(&format!(
                "  {:?} -> {:?} [weight={}, penwidth={:.2}];\n",
                src,
                dst,
                w,
                0.5 + 4.5 * (*w as f64) / max
            ));
        }
        out.push_str("}\n");
        out
    }
}

pub fn build_influence_graph(
    storms: &[StormRecord],
    corpus: &Corpus,
    lookback_days: u32,
    key: NodeKey,
) -> Result<InfluenceGraph> {
    let lookback = i64::from(lookback_days);
    let mut nodes = BTreeSet::new();
    let mut edges: BTreeMap<(String, String), u64> = BTreeMap::new();
    for storm in storms {
        let mut days: BTreeMap<String, BTreeSet<i64>> = BTreeMap::new();
        for id in &storm.article_ids {
            let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
            let label = node_label(corpus.outlet_of(article), key);
            days.entry(label)
                .or_default()
                .insert((article.date - storm.start_day).num_days());
        }
        for (j, j_days) in &days {
            let first = *j_days.first().expect("non-empty");
            for (i, i_days) in &days {
                if i != j && i_days.range(first - lookback..first).next().is_some() {
                    *edges.entry((i.clone(), j.clone())).or_insert(0) += 1;
                }
            }
        }
        nodes.extend(days.into_keys());
    }
    Ok(InfluenceGraph { nodes, edges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub graph: InfluenceGraph,
    pub requested: usize,
    pub selected: Vec<String>,
}

impl Subgraph {
    pub fn clamped(&self) -> bool {
        self.selected.len() < self.requested
    }
}

/// Keeps the `n` outlets passing `filter` with the most storm articles (ties by
/// name), restricting edges to them.
pub fn top_outlets_subgraph(
    graph: &InfluenceGraph,
    storms: &[StormRecord],
    corpus: &Corpus,
    n: usize,
    filter: impl Fn(&OutletProfile) -> bool,
) -> Result<Subgraph> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in storms.iter().flat_map(|s| &s.article_ids) {
        let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
        if filter(corpus.outlet_of(article)) {
            *counts.entry(article.outlet.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if n > ranked.len() {
        tracing::warn!(
            requested = n,
            available = ranked.len(),
            "fewer qualifying outlets than requested; clamping"
        );
    }
    let selected: Vec<String> = ranked
        .iter()
        .take(n)
        .map(|(name, _)| (*name).to_owned())
        .collect();
    let keep: BTreeSet<String> = selected.iter().cloned().collect();
    Ok(Subgraph {
        graph: graph.restrict(&keep),
        requested: n,
        selected,
    })
}

/// Keyword-bucket topic distribution for building fixtures. Counts keyword hits
/// per bucket with add-one smoothing. Not a topic model.
pub fn keyword_topic_dist(text: &str, buckets: &[Vec<String>]) -> Vec<f64> {
    let mut counts = vec![1.0; buckets.len()];
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let word = word.to_lowercase();
        for (i, bucket) in buckets.iter().enumerate() {
            if bucket.contains(&word) {
                counts[i] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}
