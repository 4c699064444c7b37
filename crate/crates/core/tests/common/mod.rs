#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{Days, NaiveDate};
use rand::Rng;
use stormpipe_core::clustering::StoryCluster;
use stormpipe_core::corpus::{Article, ArticleId, Corpus, EntityMention, OutletProfile, Reliability};

pub fn base() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
}

pub fn day(n: u32) -> NaiveDate {
    base() + Days::new(u64::from(n))
}

pub fn article(id: u64, outlet: &str, d: u32, entities: &[(&str, &str)]) -> Article {
    Article {
        id: ArticleId(id),
        outlet: outlet.to_owned(),
        date: day(d),
        title: format!("title {id}"),
        text: String::new(),
        entities: Some(entities.iter().map(|(s, k)| EntityMention::new(*s, *k)).collect()),
        topic_dist: None,
    }
}

pub fn national(name: &str) -> OutletProfile {
    OutletProfile::national(name, Reliability::Reliable)
}

pub const KINDS: [&str; 7] = ["ORG", "EVENT", "PERSON", "WORK_OF_ART", "PRODUCT", "GPE", "DATE"];

/// Random corpus for blocking tests: up to `n` articles over `days` days,
/// each with 0–3 mentions drawn from a pool of `pool` entities of mixed type.
pub fn random_entity_corpus(rng: &mut impl Rng, n: usize, days: u32, pool: usize) -> Corpus {
    let kind_of = |e: usize| KINDS[e % KINDS.len()];
    let articles = (0..n)
        .map(|i| {
            let mentions: Vec<(String, String)> = (0..rng.gen_range(0..4))
                .map(|_| {
                    let e = rng.gen_range(0..pool);
                    (format!("entity {e}"), kind_of(e).to_owned())
                })
                .collect();
            let mut a = article(i as u64 * 3 + 1, "O", rng.gen_range(0..days), &[]);
            a.entities = Some(
                mentions
                    .iter()
                    .map(|(s, k)| EntityMention::new(s.clone(), k.clone()))
                    .collect(),
            );
            a
        })
        .collect();
    Corpus::new(articles, [national("O")], None).unwrap()
}

/// All-pairs blocking filter computed directly from the article list.
pub fn brute_force_candidates(
    corpus: &Corpus,
    admitted: &BTreeSet<&str>,
    max_count: usize,
    max_day_gap: i64,
) -> BTreeSet<(u64, u64)> {
    let sets: Vec<BTreeSet<&str>> = corpus
        .articles()
        .iter()
        .map(|a| {
            a.entities()
                .iter()
                .filter(|m| admitted.contains(m.kind()))
                .map(|m| m.surface())
                .collect()
        })
        .collect();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &sets {
        for e in set {
            *freq.entry(e).or_insert(0) += 1;
        }
    }
    let usable = |e: &&str| {
        let f = freq[*e];
        (2..=max_count).contains(&f)
    };
    let arts = corpus.articles();
    let mut out = BTreeSet::new();
    for i in 0..arts.len() {
        for j in 0..arts.len() {
            if arts[i].id >= arts[j].id {
                continue;
            }
            let gap = (arts[i].date - arts[j].date).num_days().abs();
            if gap <= max_day_gap && sets[i].intersection(&sets[j]).any(&usable) {
                out.insert((arts[i].id.0, arts[j].id.0));
            }
        }
    }
    out
}

/// Breadth-first component labelling of an undirected graph on `0..n`.
pub fn bfs_partition(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut parts = BTreeSet::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut part = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            part.insert(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        parts.insert(part);
    }
    parts
}

pub fn cluster_of(corpus: &Corpus, cluster_id: usize, ids: &[u64]) -> StoryCluster {
    let mut ids: Vec<ArticleId> = ids.iter().copied().map(ArticleId).collect();
    ids.sort();
    let dates: Vec<NaiveDate> = ids.iter().map(|id| corpus.get(*id).unwrap().date).collect();
    StoryCluster {
        cluster_id,
        article_ids: ids,
        first_day: *dates.iter().min().unwrap(),
        last_day: *dates.iter().max().unwrap(),
    }
}

/// Storm-criteria fixture: `outlets` outlets each publishing `(members, total)`
/// articles on day 0 (members belong to the story), plus one member from a
/// quiet outlet on day `duration - 1`. `overrides[i]` replaces outlet i's pair.
pub struct StormFixture {
    pub corpus: Corpus,
    pub cluster: StoryCluster,
}

pub fn storm_fixture(
    outlets: usize,
    duration: u32,
    default: (u32, u32),
    overrides: &[(usize, (u32, u32))],
) -> StormFixture {
    let mut articles = Vec::new();
    let mut members = Vec::new();
    let mut profiles = vec![national("quiet")];
    let mut next = 0u64;
    for o in 0..outlets {
        let name = format!("outlet-{o}");
        profiles.push(national(&name));
        let (s, t) = overrides
            .iter()
            .find(|(i, _)| *i == o)
            .map(|(_, p)| *p)
            .unwrap_or(default);
        for k in 0..t {
            articles.push(article(next, &name, 0, &[]));
            if k < s {
                members.push(next);
            }
            next += 1;
        }
    }
    articles.push(article(next, "quiet", duration - 1, &[]));
    members.push(next);
    let corpus = Corpus::new(articles, profiles, None).unwrap();
    let cluster = cluster_of(&corpus, 0, &members);
    StormFixture { corpus, cluster }
}

/// Storm record for `ids` with fields derived from the corpus; no storm-mode
/// events are attached.
pub fn storm_record(corpus: &Corpus, cluster_id: usize, ids: &[u64]) -> stormpipe_core::storms::StormRecord {
    use stormpipe_core::storms::{peak_day_index, storm_time_series, StormRecord};
    let cluster = cluster_of(corpus, cluster_id, ids);
    let duration = cluster.duration_days();
    let (daily, states) =
        storm_time_series(&cluster.article_ids, cluster.first_day, duration, corpus).unwrap();
    let peak = peak_day_index(&daily);
    let outlets: BTreeSet<&str> = cluster
        .article_ids
        .iter()
        .map(|id| corpus.get(*id).unwrap().outlet.as_str())
        .collect();
    let national = cluster
        .article_ids
        .iter()
        .filter(|id| corpus.outlet_of(corpus.get(**id).unwrap()).is_national())
        .count();
    StormRecord {
        cluster_id,
        article_ids: cluster.article_ids.clone(),
        start_day: cluster.first_day,
        end_day: cluster.last_day,
        peak_day: cluster.first_day + Days::new(u64::from(peak - 1)),
        peak_day_index: peak,
        duration_days: duration,
        article_count: ids.len(),
        outlet_count: outlets.len(),
        storm_mode_outlets: outlets.iter().map(|s| (*s).to_owned()).collect(),
        pct_national: 100.0 * national as f64 / ids.len() as f64,
        daily_counts: daily,
        daily_state_counts: states,
        storm_mode_events: vec![],
    }
}

/// Random multi-outlet corpus with topic distributions and a handful of
/// random "storms" (random member subsets), for analysis tests.
pub struct AnalysisFixture {
    pub corpus: Corpus,
    pub storms: Vec<stormpipe_core::storms::StormRecord>,
    pub k: usize,
}

pub fn analysis_fixture(
    rng: &mut impl Rng,
    outlets: usize,
    n: usize,
    days: u32,
    storms: usize,
    k: usize,
) -> AnalysisFixture {
    let mut profiles = Vec::new();
    for o in 0..outlets {
        let name = format!("o{o}");
        profiles.push(match o % 3 {
            0 => OutletProfile::national(&name, Reliability::Reliable),
            1 => OutletProfile::national(&name, Reliability::Mixed),
            _ => OutletProfile::local(&name, Some(["OH", "TX", "CA"][o % 3])),
        });
    }
    let articles: Vec<Article> = (0..n as u64)
        .map(|id| {
            let mut a = article(
                id,
                &format!("o{}", rng.gen_range(0..outlets)),
                rng.gen_range(0..days),
                &[],
            );
            let raw: Vec<f64> = (0..k).map(|_| f64::from(rng.gen_range(0u32..8))).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1.0);
            let mut dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
            if raw.iter().all(|v| *v == 0.0) {
                dist = vec![0.0; k];
                dist[0] = 1.0;
            }
            a.topic_dist = Some(dist);
            a
        })
        .collect();
    let corpus = Corpus::new(articles, profiles, None).unwrap();
    let records = (0..storms)
        .map(|s| {
            let size = rng.gen_range(2..=(n / 4).max(2));
            let mut ids: BTreeSet<u64> = BTreeSet::new();
            while ids.len() < size {
                ids.insert(rng.gen_range(0..n as u64));
            }
            storm_record(&corpus, s, &ids.into_iter().collect::<Vec<_>>())
        })
        .collect();
    AnalysisFixture {
        corpus,
        storms: records,
        k,
    }
}
