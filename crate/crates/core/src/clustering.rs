//! Story clusters as connected components of the similarity graph.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleId, Corpus};
use crate::error::{Error, Result};

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        UnionFind {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            let grandparent = self.parent[self.parent[x]];
            self.parent[x] = grandparent;
            x = grandparent;
        }
        x
    }

    /// Returns true when `x` and `y` were in different sets.
    pub fn union(&mut self, x: usize, y: usize) -> bool {
        let (mut rx, mut ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        if self.size[rx] < self.size[ry] {
            std::mem::swap(&mut rx, &mut ry);
        }
        self.parent[ry] = rx;
        self.size[rx] += self.size[ry];
        true
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Component label for every article of a universe. Labels run `0..C` in
/// order of each component's smallest member id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    ids: Vec<ArticleId>,
    labels: Vec<usize>,
    count: usize,
}

impl ClusterAssignment {
    pub fn ids(&self) -> &[ArticleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn component_count(&self) -> usize {
        self.count
    }

    pub fn label_of(&self, id: ArticleId) -> Option<usize> {
        self.ids.binary_search(&id).ok().map(|i| self.labels[i])
    }

    /// Members of each component, ascending.
    pub fn components(&self) -> Vec<Vec<ArticleId>> {
        let mut out = vec![Vec::new(); self.count];
        for (id, label) in self.ids.iter().zip(&self.labels) {
            out[*label].push(*id);
        }
        out
    }
}

/// Any edge type with two endpoints.
pub trait Endpoints {
    fn endpoints(&self) -> (ArticleId, ArticleId);
}

impl Endpoints for crate::similarity::SimilarityEdge {
    fn endpoints(&self) -> (ArticleId, ArticleId) {
        (self.a, self.b)
    }
}

impl Endpoints for crate::entities::CandidatePair {
    fn endpoints(&self) -> (ArticleId, ArticleId) {
        (self.a, self.b)
    }
}

impl Endpoints for (ArticleId, ArticleId) {
    fn endpoints(&self) -> (ArticleId, ArticleId) {
        *self
    }
}

pub fn connected_components<E: Endpoints>(
    edges: &[E],
    universe: impl IntoIterator<Item = ArticleId>,
) -> Result<ClusterAssignment> {
    let mut ids: Vec<ArticleId> = universe.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    let index_of = |id: ArticleId| ids.binary_search(&id).map_err(|_| Error::UnknownEndpoint(id));

    let mut forest = UnionFind::new(ids.len());
    for edge in edges {
        let (a, b) = edge.endpoints();
        forest.union(index_of(a)?, index_of(b)?);
    }

    let mut root_label = vec![usize::MAX; ids.len()];
    let mut labels = Vec::with_capacity(ids.len());
    let mut count = 0;
    for i in 0..ids.len() {
        let root = forest.find(i);
        if root_label[root] == usize::MAX {
            root_label[root] = count;
            count += 1;
        }
        labels.push(root_label[root]);
    }
    Ok(ClusterAssignment { ids, labels, count })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryCluster {
    pub cluster_id: usize,
    #[serde(rename = "articles")]
    pub article_ids: Vec<ArticleId>,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
}

impl StoryCluster {
    pub fn size(&self) -> usize {
        self.article_ids.len()
    }

    /// Inclusive calendar span in days.
    pub fn duration_days(&self) -> u32 {
        (self.last_day - self.first_day).num_days() as u32 + 1
    }
}

pub const DEFAULT_MIN_SIZE: usize = 2;

/// Materializes components of at least `min_size` articles. Cluster ids are the
/// component labels, so they stay stable whatever `min_size` is.
pub fn build_story_clusters(
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    min_size: usize,
) -> Result<Vec<StoryCluster>> {
    let mut clusters = Vec::new();
    for (label, members) in assignment.components().into_iter().enumerate() {
        if members.len() < min_size.max(1) {
            continue;
        }
        let mut first = NaiveDate::MAX;
        let mut last = NaiveDate::MIN;
        for id in &members {
            let date = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?.date;
            first = first.min(date);
            last = last.max(date);
        }
        clusters.push(StoryCluster {
            cluster_id: label,
            article_ids: members,
            first_day: first,
            last_day: last,
        });
    }
    Ok(clusters)
}

pub fn write_clusters_jsonl(mut w: impl Write, clusters: &[StoryCluster]) -> std::io::Result<()> {
    for c in clusters {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_clusters_jsonl(text: &str) -> Result<Vec<StoryCluster>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, OutletProfile, Reliability};

    fn ids(v: &[u64]) -> Vec<ArticleId> {
        v.iter().copied().map(ArticleId).collect()
    }

    fn e(a: u64, b: u64) -> (ArticleId, ArticleId) {
        (ArticleId(a), ArticleId(b))
    }

    #[test]
    fn chain_closure() {
        let asg = connected_components(&[e(1, 2), e(2, 3)], ids(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!(asg.components(), vec![ids(&[1, 2, 3]), ids(&[4]), ids(&[5])]);
        assert_eq!(asg.label_of(ArticleId(4)), Some(1));
    }

    #[test]
    fn no_edges_gives_singletons() {
        let asg = connected_components::<(ArticleId, ArticleId)>(&[], ids(&[3, 1, 2])).unwrap();
        assert_eq!(asg.component_count(), 3);
        assert_eq!(asg.labels(), &[0, 1, 2]);
    }

    #[test]
    fn labels_follow_min_member() {
        let asg = connected_components(&[e(5, 9), e(2, 7)], ids(&[2, 5, 7, 9, 1])).unwrap();
        assert_eq!(asg.components(), vec![ids(&[1]), ids(&[2, 7]), ids(&[5, 9])]);
    }

    #[test]
    fn foreign_endpoint_is_rejected() {
        assert!(matches!(
            connected_components(&[e(1, 42)], ids(&[1, 2])),
            Err(Error::UnknownEndpoint(ArticleId(42)))
        ));
    }

    #[test]
    fn story_cluster_dates_and_min_size() {
        let mk = |id: u64, day: u32| Article {
            id: ArticleId(id),
            outlet: "O".into(),
            date: NaiveDate::from_ymd_opt(2021, 1, day).unwrap(),
            title: String::new(),
            text: String::new(),
            entities: None,
            topic_dist: None,
        };
        let corpus = Corpus::new(
            vec![mk(1, 1), mk(2, 3), mk(3, 2), mk(4, 9)],
            [OutletProfile::national("O", Reliability::Mixed)],
            None,
        )
        .unwrap();
        let asg = connected_components(&[e(1, 2), e(2, 3)], corpus.ids()).unwrap();
        let clusters = build_story_clusters(&asg, &corpus, 2).unwrap();
        assert_eq!(clusters.len(), 1);
        let c = &clusters[0];
        assert_eq!(c.first_day, NaiveDate::from_ymd_opt(2021, 1, 1).unwrap());
        assert_eq!(c.last_day, NaiveDate::from_ymd_opt(2021, 1, 3).unwrap());
        assert_eq!(c.duration_days(), 3);
        assert_eq!(build_story_clusters(&asg, &corpus, 1).unwrap().len(), 2);

        let mut buf = Vec::new();
        write_clusters_jsonl(&mut buf, &clusters).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"cluster_id":0,"articles":[1,2,3],"first_day":"2021-01-01","last_day":"2021-01-03"}"#
        );
        assert_eq!(read_clusters_jsonl(&line).unwrap(), clusters);
    }
}
