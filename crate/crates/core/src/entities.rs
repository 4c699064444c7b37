//! Entity blocking: the filtered inverted index and candidate pair generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleId, Corpus, EntityMention};
use crate::error::{Error, Result};

pub const CANDIDATE_MAGIC: &[u8; 4] = b"CND1";
pub const FALLBACK_TYPE: &str = "FALLBACK";
pub const DEFAULT_MAX_COUNT: usize = 20_000;
pub const DEFAULT_MAX_DAY_GAP: u32 = 7;

/// Entity-type tags admitted to the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeFilter(BTreeSet<String>);

impl TypeFilter {
    /// Organization, event, person, work of art and product tags.
    pub fn standard() -> Self {
        Self::from_tags(["ORG", "EVENT", "PERSON", "WORK_OF_ART", "PRODUCT"])
    }

    pub fn from_tags<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        TypeFilter(tags.into_iter().map(Into::into).collect())
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.0.insert(tag.into());
        self
    }

    pub fn admits(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for TypeFilter {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedEntity {
    pub entity: String,
    pub article_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityIndex {
    postings: BTreeMap<String, Vec<ArticleId>>,
    excluded: Vec<ExcludedEntity>,
    type_filter: TypeFilter,
    max_count: usize,
}

impl EntityIndex {
    pub fn postings(&self) -> &BTreeMap<String, Vec<ArticleId>> {
        &self.postings
    }

    pub fn posting(&self, entity: &str) -> Option<&[ArticleId]> {
        self.postings.get(entity).map(Vec::as_slice)
    }

    pub fn excluded(&self) -> &[ExcludedEntity] {
        &self.excluded
    }

    pub fn type_filter(&self) -> &TypeFilter {
        &self.type_filter
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    /// Writes postings as JSONL `{"entity":..,"articles":[..]}`.
    pub fn write_postings_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            entity: &'a str,
            articles: &'a [ArticleId],
        }
        for (entity, articles) in &self.postings {
            serde_json::to_writer(&mut w, &Row { entity, articles })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_excluded_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for row in &self.excluded {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds an index from the two JSONL files written above.
    pub fn from_jsonl(
        postings: &str,
        excluded: &str,
        type_filter: TypeFilter,
        max_count: usize,
    ) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            entity: String,
            articles: Vec<ArticleId>,
        }
        let mut map = BTreeMap::new();
        for line in postings.lines().filter(|l| !l.trim().is_empty()) {
            let row: Row = serde_json::from_str(line)?;
            map.insert(row.entity, row.articles);
        }
        let excluded = excluded
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<_>>()?;
        Ok(EntityIndex {
            postings: map,
            excluded,
            type_filter,
            max_count,
        })
    }
}

/// Copy of `corpus` in which articles without entity annotations carry the
/// heuristic spans of their title and text.
pub fn with_fallback_entities(corpus: &Corpus) -> Result<Corpus> {
    let articles = corpus
        .articles()
        .par_iter()
        .map(|a| {
            let mut a = a.clone();
            if a.entities.is_none() {
                a.entities = Some(extract_entities_fallback(&format!("{}. {}", a.title, a.text)));
            }
            a
        })
        .collect();
    Corpus::new(
        articles,
        corpus.outlets().values().cloned(),
        Some(corpus.date_range()),
    )
}

const INDEX_CHUNK: usize = 4096;

/// Builds the inverted index. Entity frequency is counted in distinct articles
/// after type filtering; entities above `max_count` go to the exclusion list and
/// entities seen in fewer than two articles are dropped.
pub fn build_index(corpus: &Corpus, type_filter: &TypeFilter, max_count: usize) -> EntityIndex {
    // Chunks are merged in corpus order, so posting lists come out ascending.
    let partials: Vec<HashMap<&str, Vec<ArticleId>>> = corpus
        .articles()
        .par_chunks(INDEX_CHUNK)
        .map(|chunk| {
            let mut map: HashMap<&str, Vec<ArticleId>> = HashMap::new();
            for article in chunk {
                let mut seen = BTreeSet::new();
                for mention in article.entities() {
                    if type_filter.admits(mention.kind()) && seen.insert(mention.surface()) {
                        map.entry(mention.surface()).or_default().push(article.id);
                    }
                }
            }
            map
        })
        .collect();

    let mut merged: BTreeMap<&str, Vec<ArticleId>> = BTreeMap::new();
    for partial in partials {
        for (entity, ids) in partial {
            merged.entry(entity).or_default().extend(ids);
        }
    }

    let mut postings = BTreeMap::new();
    let mut excluded = Vec::new();
    for (entity, ids) in merged {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        if ids.len() > max_count {
            excluded.push(ExcludedEntity {
                entity: entity.to_owned(),
                article_count: ids.len(),
            });
        } else if ids.len() >= 2 {
            postings.insert(entity.to_owned(), ids);
        }
    }
    EntityIndex {
        postings,
        excluded,
        type_filter: type_filter.clone(),
        max_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub a: ArticleId,
    pub b: ArticleId,
}

impl CandidatePair {
    /// Canonical pair with `a < b`.
    pub fn new(x: ArticleId, y: ArticleId) -> Self {
        if x < y {
            CandidatePair { a: x, b: y }
        } else {
            CandidatePair { a: y, b: x }
        }
    }
}

/// Candidate generator over an index and the corpus it was built from.
///
/// Pairs are produced per article in ascending `(a, b)` order: for each article
/// every posting list it belongs to is range-searched by date, so nothing
/// beyond one article's neighbourhood is ever materialized.
pub struct CandidateGenerator<'a> {
    corpus: &'a Corpus,
    max_day_gap: i64,
    days: Vec<i64>,
    // posting lists as (day, position), sorted
    lists: Vec<Vec<(i64, u32)>>,
    // CSR: entity slots of each article position
    offsets: Vec<usize>,
    slots: Vec<u32>,
}

impl<'a> CandidateGenerator<'a> {
    pub fn new(index: &EntityIndex, corpus: &'a Corpus, max_day_gap: u32) -> Result<Self> {
        let range = corpus.date_range();
        let days: Vec<i64> = corpus.articles().iter().map(|a| range.offset(a.date)).collect();
        let mut lists = Vec::with_capacity(index.postings.len());
        let mut per_article: Vec<u32> = vec![0; corpus.len()];
        for ids in index.postings.values() {
            let mut list = Vec::with_capacity(ids.len());
            for id in ids {
                let pos = corpus.position(*id).ok_or(Error::UnknownArticle(*id))?;
                list.push((days[pos], pos as u32));
                per_article[pos] += 1;
            }
            list.sort_unstable();
            lists.push(list);
        }
        let mut offsets = Vec::with_capacity(corpus.len() + 1);
        offsets.push(0);
        for count in &per_article {
            offsets.push(offsets.last().unwrap() + *count as usize);
        }
        let mut fill = offsets.clone();
        let mut slots = vec![0u32; *offsets.last().unwrap()];
        for (slot, list) in lists.iter().enumerate() {
            for &(_, pos) in list {
                slots[fill[pos as usize]] = slot as u32;
                fill[pos as usize] += 1;
            }
        }
        Ok(CandidateGenerator {
            corpus,
            max_day_gap: i64::from(max_day_gap),
            days,
            lists,
            offsets,
            slots,
        })
    }

    /// Positions `q > pos` blocked with the article at `pos`, ascending.
    fn neighbours(&self, pos: usize, out: &mut Vec<u32>) {
        out.clear();
        let day = self.days[pos];
        for &slot in &self.slots[self.offsets[pos]..self.offsets[pos + 1]] {
            let list = &self.lists[slot as usize];
            let lo = list.partition_point(|&(d, _)| d < day - self.max_day_gap);
            let hi = list.partition_point(|&(d, _)| d <= day + self.max_day_gap);
            out.extend(
                list[lo..hi]
                    .iter()
                    .filter(|&&(_, q)| q as usize > pos)
                    .map(|&(_, q)| q),
            );
        }
        out.sort_unstable();
        out.dedup();
    }

    fn pairs_for(&self, pos: usize, buf: &mut Vec<u32>, out: &mut Vec<CandidatePair>) {
        self.neighbours(pos, buf);
        let a = self.corpus.articles()[pos].id;
        out.extend(buf.iter().map(|&q| CandidatePair {
            a,
            b: self.corpus.articles()[q as usize].id,
        }));
    }

    /// Sequential stream of all candidate pairs in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = CandidatePair> + '_ {
        let mut buf = Vec::new();
        (0..self.corpus.len()).flat_map(move |pos| {
            let mut out = Vec::new();
            self.pairs_for(pos, &mut buf, &mut out);
            out
        })
    }

    /// Processes articles in blocks of `block` positions in parallel and hands
    /// each block's pairs to `sink` in ascending order.
    pub fn for_each_block<E>(
        &self,
        block: usize,
        mut sink: impl FnMut(&[CandidatePair]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        const CHUNK: usize = 256;
        let n = self.corpus.len();
        let block = block.max(CHUNK);
        let mut start = 0;
        while start < n {
            let end = (start + block).min(n);
            let parts: Vec<Vec<CandidatePair>> = (start..end)
                .into_par_iter()
                .step_by(CHUNK)
                .map(|chunk_start| {
                    let mut buf = Vec::new();
                    let mut out = Vec::new();
                    for pos in chunk_start..(chunk_start + CHUNK).min(end) {
                        self.pairs_for(pos, &mut buf, &mut out);
                    }
                    out
                })
                .collect();
            for part in parts {
                sink(&part)?;
            }
            start = end;
        }
        Ok(())
    }

    /// All pairs, generated in parallel.
    pub fn collect(&self) -> Vec<CandidatePair> {
        let mut all = Vec::new();
        self.for_each_block(1 << 16, |pairs| {
            all.extend_from_slice(pairs);
            Ok::<(), std::convert::Infallible>(())
        })
        .unwrap_or_else(|never| match never {});
        all
    }
}

/// Every unordered article pair sharing an indexed entity and dated at most
/// `max_day_gap` days apart, ascending by `(a, b)`.
pub fn generate_candidates(
    index: &EntityIndex,
    corpus: &Corpus,
    max_day_gap: u32,
) -> Result<Vec<CandidatePair>> {
    Ok(CandidateGenerator::new(index, corpus, max_day_gap)?.collect())
}

/// Streaming writer for the binary candidate format.
pub struct CandidateWriter<W: Write> {
    inner: W,
    count: u64,
}

impl<W: Write> CandidateWriter<W> {
    pub fn new(mut inner: W) -> std::io::Result<Self> {
        inner.write_all(CANDIDATE_MAGIC)?;
        Ok(CandidateWriter { inner, count: 0 })
    }

    pub fn write(&mut self, pairs: &[CandidatePair]) -> std::io::Result<()> {
        for pair in pairs {
            self.inner.write_all(&pair.a.0.to_le_bytes())?;
            self.inner.write_all(&pair.b.0.to_le_bytes())?;
        }
        self.count += pairs.len() as u64;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_candidates(path: &Path, pairs: &[CandidatePair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = CandidateWriter::new(BufWriter::new(file)).map_err(|e| Error::io(path, e))?;
    w.write(pairs).map_err(|e| Error::io(path, e))?;
    w.finish().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidatePair>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_candidates(&bytes)
}

pub fn decode_candidates(bytes: &[u8]) -> Result<Vec<CandidatePair>> {
    if bytes.len() < 4 || &bytes[..4] != CANDIDATE_MAGIC {
        return Err(Error::BadMagic {
            expected: "CND1",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    let payload = &bytes[4..];
    if !payload.len().is_multiple_of(16) {
        return Err(Error::Truncated {
            expected: (payload.len() as u64 / 16 + 1) * 16,
            found: payload.len() as u64,
        });
    }
    Ok(payload
        .chunks_exact(16)
        .map(|rec| CandidatePair {
            a: ArticleId(u64::from_le_bytes(rec[..8].try_into().unwrap())),
            b: ArticleId(u64::from_le_bytes(rec[8..].try_into().unwrap())),
        })
        .collect())
}

pub fn write_candidates_jsonl(mut w: impl Write, pairs: &[CandidatePair]) -> std::io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

const SENTENCE_END: &[char] = &['.', '!', '?'];
const RUN_BREAK: &[char] = &['.', '!', '?', ',', ';', ':', ')', ']', '"'];
const TRIM: &[char] = &[
    '.', '!', '?', ',', ';', ':', '"', '\'', '(', ')', '[', ']', '\u{201c}', '\u{201d}', '\u{2018}',
    '\u{2019}',
];

fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

/// Heuristic entity spans: maximal runs of two or more consecutive capitalized
/// tokens, typed `FALLBACK`. A lone capitalized sentence-initial word is never
/// a span; runs break at clause punctuation.
pub fn extract_entities_fallback(text: &str) -> Vec<EntityMention> {
    let mut found = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let mut flush = |run: &mut Vec<&str>| {
        if run.len() >= 2 {
            found.push(EntityMention::new(run.join(" "), FALLBACK_TYPE));
        }
        run.clear();
    };
    for raw in text.split_whitespace() {
        let token = raw.trim_matches(TRIM);
        let opens_clause = raw.starts_with(['(', '[', '"', '\u{201c}']);
        if opens_clause {
            flush(&mut run);
        }
        if !token.is_empty() && is_capitalized(token) {
            run.push(token);
        } else {
            flush(&mut run);
        }
        if raw.ends_with(RUN_BREAK) || raw.ends_with(SENTENCE_END) {
            flush(&mut run);
        }
    }
    flush(&mut run);
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, OutletProfile, Reliability};
    use chrono::NaiveDate;

    fn art(id: u64, day: u32, ents: &[(&str, &str)]) -> Article {
        Article {
            id: ArticleId(id),
            outlet: "O".into(),
            date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(day as u64),
            title: format!("t{id}"),
            text: String::new(),
            entities: Some(ents.iter().map(|(s, t)| EntityMention::new(*s, *t)).collect()),
            topic_dist: None,
        }
    }

    fn corpus(articles: Vec<Article>) -> Corpus {
        Corpus::new(
            articles,
            [OutletProfile::national("O", Reliability::Reliable)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn indexes_admitted_entities() {
        let c = corpus(vec![
            art(1, 0, &[("Acme Corp", "ORG"), ("Ohio", "GPE")]),
            art(5, 0, &[("Acme Corp", "ORG"), ("Ohio", "GPE")]),
            art(9, 1, &[("Acme Corp", "ORG")]),
            art(10, 1, &[("Solo", "PERSON")]),
        ]);
        let idx = build_index(&c, &TypeFilter::standard(), DEFAULT_MAX_COUNT);
        assert_eq!(
            idx.posting("Acme Corp").unwrap(),
            &[ArticleId(1), ArticleId(5), ArticleId(9)]
        );
        assert!(idx.posting("Ohio").is_none());
        // single-article entities are not indexed
        assert!(idx.posting("Solo").is_none());
    }

    #[test]
    fn repeated_mentions_count_once() {
        let c = corpus(vec![
            art(1, 0, &[("A", "ORG"), ("A", "ORG")]),
            art(2, 0, &[("A", "ORG")]),
        ]);
        let idx = build_index(&c, &TypeFilter::standard(), 2);
        assert_eq!(idx.posting("A").unwrap().len(), 2);
        assert!(idx.excluded().is_empty());
    }

    #[test]
    fn frequency_cap_moves_entity_to_excluded() {
        let c = corpus((0..4).map(|i| art(i, 0, &[("Big", "ORG")])).collect());
        let idx = build_index(&c, &TypeFilter::standard(), 3);
        assert!(idx.posting("Big").is_none());
        assert_eq!(
            idx.excluded(),
            &[ExcludedEntity {
                entity: "Big".into(),
                article_count: 4
            }]
        );
    }

    #[test]
    fn day_gap_boundary() {
        let c = corpus(vec![
            art(0, 0, &[("Acme", "ORG")]),
            art(1, 2, &[("Acme", "ORG")]),
            art(2, 8, &[("Acme", "ORG")]),
        ]);
        let idx = build_index(&c, &TypeFilter::standard(), 100);
        let pairs = generate_candidates(&idx, &c, 7).unwrap();
        assert_eq!(
            pairs,
            vec![
                CandidatePair::new(ArticleId(0), ArticleId(1)),
                CandidatePair::new(ArticleId(1), ArticleId(2)),
            ]
        );
    }

    #[test]
    fn shared_entities_emit_pair_once() {
        let c = corpus(vec![
            art(3, 0, &[("A", "ORG"), ("B", "PERSON")]),
            art(4, 1, &[("B", "PERSON"), ("A", "ORG")]),
        ]);
        let idx = build_index(&c, &TypeFilter::standard(), 100);
        let gen = CandidateGenerator::new(&idx, &c, 7).unwrap();
        let seq: Vec<_> = gen.iter().collect();
        assert_eq!(seq, vec![CandidatePair::new(ArticleId(3), ArticleId(4))]);
        assert_eq!(gen.collect(), seq);
    }

    #[test]
    fn binary_format_round_trip_and_magic() {
        let pairs = vec![
            CandidatePair::new(ArticleId(1), ArticleId(2)),
            CandidatePair::new(ArticleId(u64::MAX - 1), ArticleId(u64::MAX)),
        ];
        let mut w = CandidateWriter::new(Vec::new()).unwrap();
        w.write(&pairs).unwrap();
        let bytes = w.finish().unwrap();
        assert_eq!(&bytes[..4], b"CND1");
        assert_eq!(bytes.len(), 4 + 32);
        assert_eq!(decode_candidates(&bytes).unwrap(), pairs);
        assert!(matches!(decode_candidates(b"XXXX"), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_candidates(&bytes[..30]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn fallback_basic_cases() {
        assert_eq!(
            extract_entities_fallback("Derek Chauvin stood trial."),
            vec![EntityMention::new("Derek Chauvin", FALLBACK_TYPE)]
        );
        assert!(extract_entities_fallback("the quick brown fox").is_empty());
        assert!(extract_entities_fallback("Yesterday it rained.").is_empty());
    }
}
