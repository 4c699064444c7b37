mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stormpipe_core::analysis::{
    argmax, build_influence_graph, corpus_topic_skew, gatekeeping_series, DayIndex, NodeKey,
};
use stormpipe_core::clustering::{build_story_clusters, connected_components, StoryCluster};
use stormpipe_core::corpus::{dedup, export, ingest, truncate_range, IngestOptions};
use stormpipe_core::entities::{build_index, generate_candidates, TypeFilter};
use stormpipe_core::similarity::{cosine, score_candidates, EmbeddingMatrix};
use stormpipe_core::storms::{evaluate_cluster, identify_storms, OutletVolume, StormParams};
use stormpipe_core::{Article, ArticleId, Corpus};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Corpus with repeated titles so that dedup has work to do.
fn titled_corpus(seed: u64, n: usize) -> Corpus {
    let mut r = rng(seed);
    let articles: Vec<Article> = (0..n as u64)
        .map(|id| {
            let mut a = article(id, ["a", "b", "c"][r.gen_range(0..3)], r.gen_range(0..15), &[]);
            a.title = format!("t{}", r.gen_range(0..n / 2 + 1));
            a.text = format!("body {id}");
            a
        })
        .collect();
    Corpus::new(articles, ["a", "b", "c"].map(national), None).unwrap()
}

fn random_matrix(r: &mut impl Rng, ids: &[ArticleId], dim: usize) -> EmbeddingMatrix {
    let data = (0..ids.len() * dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    let mut m = EmbeddingMatrix::new(dim, ids.to_vec(), data).unwrap();
    m.normalize().unwrap();
    m
}

/// Multi-outlet corpus cut into random disjoint clusters.
fn clustered_corpus(seed: u64) -> (Corpus, Vec<StoryCluster>) {
    let mut r = rng(seed);
    let outlets: Vec<String> = (0..8).map(|i| format!("o{i}")).collect();
    let mut profiles: Vec<_> = outlets.iter().map(|o| national(o)).collect();
    profiles[3] = stormpipe_core::OutletProfile::local("o3", Some("OH"));
    let n = r.gen_range(100..400);
    let articles: Vec<Article> = (0..n as u64)
        .map(|id| article(id, &outlets[r.gen_range(0..8)], r.gen_range(0..20), &[]))
        .collect();
    let corpus = Corpus::new(articles, profiles, None).unwrap();
    let mut ids: Vec<u64> = (0..n as u64).collect();
    ids.shuffle(&mut r);
    let mut clusters = Vec::new();
    let mut rest = &ids[..];
    while rest.len() > 2 {
        let take = r.gen_range(2..=rest.len().min(60));
        clusters.push(cluster_of(&corpus, clusters.len(), &rest[..take]));
        rest = &rest[take..];
    }
    (corpus, clusters)
}

fn loose() -> StormParams {
    StormParams {
        window_days: 3,
        share_threshold: 0.05,
        min_window_articles: 4,
        min_duration: 3,
        min_storm_outlets: 2,
    }
}

fn storm_ids(clusters: &[StoryCluster], corpus: &Corpus, params: &StormParams) -> BTreeSet<usize> {
    identify_storms(clusters, corpus, params)
        .unwrap()
        .into_iter()
        .map(|s| s.cluster_id)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dedup_is_idempotent_and_never_grows(seed in any::<u64>(), n in 1usize..200) {
        let corpus = titled_corpus(seed, n);
        let once = dedup(&corpus);
        prop_assert!(once.len() <= corpus.len());
        let twice = dedup(&once);
        prop_assert_eq!(once.articles(), twice.articles());
    }

    #[test]
    fn truncating_to_the_full_range_is_the_identity(seed in any::<u64>(), n in 1usize..200) {
        let corpus = titled_corpus(seed, n);
        let range = corpus.date_range();
        let cut = truncate_range(&corpus, range.start, range.end).unwrap();
        prop_assert_eq!(cut.articles(), corpus.articles());
        prop_assert_eq!(cut.date_range(), range);
    }

    #[test]
    fn export_then_ingest_round_trips_bytes(seed in any::<u64>(), n in 1usize..120) {
        let mut r = rng(seed);
        let corpus = random_entity_corpus(&mut r, n, 10, 30);
        let dir = tempfile::tempdir().unwrap();
        let (a1, o1) = (dir.path().join("a1.jsonl"), dir.path().join("o1.jsonl"));
        let (a2, o2) = (dir.path().join("a2.jsonl"), dir.path().join("o2.jsonl"));
        export(&corpus, &a1, &o1).unwrap();
        let back = ingest(&a1, &o1, &IngestOptions::default()).unwrap().corpus;
        prop_assert_eq!(back.articles(), corpus.articles());
        export(&back, &a2, &o2).unwrap();
        prop_assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());
        prop_assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    }

    #[test]
    fn candidates_equal_brute_force_and_respect_posting_bound(
        seed in any::<u64>(), n in 2usize..160, days in 1u32..30, cap in 2usize..20, gap in 0u32..10,
    ) {
        let mut r = rng(seed);
        let corpus = random_entity_corpus(&mut r, n, days, 40);
        let filter = TypeFilter::standard();
        let index = build_index(&corpus, &filter, cap);
        let pairs = generate_candidates(&index, &corpus, gap).unwrap();
        prop_assert!(pairs.windows(2).all(|w| w[0] < w[1]));
        let got: BTreeSet<(u64, u64)> = pairs.iter().map(|p| (p.a.0, p.b.0)).collect();
        let admitted: BTreeSet<&str> = filter.tags().collect();
        prop_assert_eq!(&got, &brute_force_candidates(&corpus, &admitted, cap, i64::from(gap)));
        let bound: usize = index.postings().values().map(|l| l.len() * (l.len() - 1) / 2).sum();
        prop_assert!(got.len() <= bound);
    }

    #[test]
    fn index_ignores_article_and_mention_order(seed in any::<u64>(), n in 1usize..150) {
        let mut r = rng(seed);
        let corpus = random_entity_corpus(&mut r, n, 10, 25);
        let mut shuffled: Vec<Article> = corpus.articles().to_vec();
        shuffled.shuffle(&mut r);
        for a in &mut shuffled {
            a.entities.as_mut().unwrap().shuffle(&mut r);
        }
        let other = Corpus::new(shuffled, [national("O")], None).unwrap();
        let filter = TypeFilter::standard();
        prop_assert_eq!(build_index(&corpus, &filter, 6), build_index(&other, &filter, 6));
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        u in prop::collection::vec(-10.0f32..10.0, 16),
        v in prop::collection::vec(-10.0f32..10.0, 16),
        scale in 0.01f32..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine(&u, &v).unwrap();
        prop_assert_eq!(c, cosine(&v, &u).unwrap());
        let scaled: Vec<f32> = u.iter().map(|x| x * scale).collect();
        prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() < 1e-5);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn scoring_is_a_monotone_subset_independent_of_threads(seed in any::<u64>(), lo in -0.5f32..0.5, step in 0.0f32..0.5) {
        let mut r = rng(seed);
        let corpus = random_entity_corpus(&mut r, 120, 8, 15);
        let index = build_index(&corpus, &TypeFilter::standard(), 100);
        let pairs = generate_candidates(&index, &corpus, 7).unwrap();
        let ids: Vec<ArticleId> = corpus.ids().collect();
        let m = random_matrix(&mut r, &ids, 8);
        let low = score_candidates(&pairs, &m, lo).edges;
        let high = score_candidates(&pairs, &m, lo + step).edges;
        let all: BTreeSet<(ArticleId, ArticleId)> = pairs.iter().map(|p| (p.a, p.b)).collect();
        let low_set: BTreeSet<(ArticleId, ArticleId)> = low.iter().map(|e| (e.a, e.b)).collect();
        prop_assert!(low_set.is_subset(&all));
        prop_assert!(high.iter().all(|e| low_set.contains(&(e.a, e.b))));
        prop_assert!(low.iter().all(|e| e.score > lo));

        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let one = pool(1).install(|| score_candidates(&pairs, &m, lo).edges);
        let four = pool(4).install(|| score_candidates(&pairs, &m, lo).edges);
        prop_assert_eq!(&one, &low);
        prop_assert_eq!(&four, &low);
    }

    #[test]
    fn components_ignore_edge_order_and_never_split_on_new_edges(
        seed in any::<u64>(), n in 1usize..120, m in 0usize..200,
    ) {
        let mut r = rng(seed);
        let ids: Vec<ArticleId> = (0..n as u64).map(|i| ArticleId(i * 2)).collect();
        let mut edges: Vec<(ArticleId, ArticleId)> =
            (0..m).map(|_| (ids[r.gen_range(0..n)], ids[r.gen_range(0..n)])).collect();
        let base = connected_components(&edges, ids.clone()).unwrap();
        edges.shuffle(&mut r);
        let shuffled = connected_components(&edges, ids.clone()).unwrap();
        prop_assert_eq!(&base, &shuffled);

        edges.push((ids[r.gen_range(0..n)], ids[r.gen_range(0..n)]));
        let grown = connected_components(&edges, ids.clone()).unwrap();
        prop_assert!(grown.component_count() <= base.component_count());
        prop_assert!(base.component_count() - grown.component_count() <= 1);
    }

    #[test]
    fn stricter_storm_thresholds_never_add_storms(
        seed in any::<u64>(), share in 0.0f64..0.3, duration in 0u32..10, outlets in 0usize..4,
    ) {
        let (corpus, clusters) = clustered_corpus(seed);
        let base = storm_ids(&clusters, &corpus, &loose());
        for strict in [
            StormParams { share_threshold: loose().share_threshold + share, ..loose() },
            StormParams { min_duration: loose().min_duration + duration, ..loose() },
            StormParams { min_storm_outlets: loose().min_storm_outlets + outlets, ..loose() },
            StormParams { min_window_articles: loose().min_window_articles + duration * 3, ..loose() },
        ] {
            prop_assert!(storm_ids(&clusters, &corpus, &strict).is_subset(&base));
        }
    }

    #[test]
    fn storm_records_are_consistent(seed in any::<u64>()) {
        let (corpus, clusters) = clustered_corpus(seed);
        let volume = OutletVolume::new(&corpus);
        for c in &clusters {
            let v = evaluate_cluster(c, &corpus, &volume, &loose()).unwrap();
            let covering: BTreeSet<&str> =
                c.article_ids.iter().map(|id| corpus.get(*id).unwrap().outlet.as_str()).collect();
            prop_assert!(v.storm_mode_outlets.iter().all(|o| covering.contains(o.as_str())));
        }
        for s in identify_storms(&clusters, &corpus, &loose()).unwrap() {
            prop_assert_eq!(s.daily_counts.iter().sum::<u32>() as usize, s.article_count);
            prop_assert_eq!(s.daily_counts.len(), s.duration_days as usize);
            prop_assert!(s.peak_day_index >= 1 && s.peak_day_index <= s.duration_days);
            prop_assert!(s.storm_mode_outlets.len() >= loose().min_storm_outlets);
        }
    }

    #[test]
    fn influence_nets_cancel_and_weights_are_bounded(seed in any::<u64>(), storms in 1usize..12, lookback in 1u32..4) {
        let mut r = rng(seed);
        let fx = analysis_fixture(&mut r, 7, 200, 25, storms, 3);
        for key in [NodeKey::Outlet, NodeKey::OutletType] {
            let graph = build_influence_graph(&fx.storms, &fx.corpus, lookback, key).unwrap();
            prop_assert_eq!(graph.net().values().sum::<i64>(), 0);
            prop_assert!(graph.edges().values().all(|w| *w as usize <= fx.storms.len()));
            let fewer = build_influence_graph(&fx.storms[1..], &fx.corpus, lookback, key).unwrap();
            for ((s, d), w) in fewer.edges() {
                prop_assert!(*w <= graph.weight(s, d));
            }
        }
    }

    #[test]
    fn skew_cancels_and_gatekeeping_is_a_percentage(seed in any::<u64>(), k in 2usize..8) {
        let mut r = rng(seed);
        let fx = analysis_fixture(&mut r, 6, 250, 40, 5, k);
        let skew = corpus_topic_skew(&fx.storms, &fx.corpus, k).unwrap();
        prop_assert!(skew.iter().sum::<f64>().abs() < 1e-9);
        let days = DayIndex::new(&fx.corpus);
        for s in &fx.storms {
            for exclude in [false, true] {
                let series = gatekeeping_series(s, &days, k, 7, exclude).unwrap();
                prop_assert_eq!(series.len(), 15);
                prop_assert!(series.iter().flatten().all(|v| (0.0..=100.0).contains(v)));
            }
        }
    }

    #[test]
    fn argmax_is_scale_invariant(values in prop::collection::vec(0.0f64..1.0, 1..40), scale in 0.001f64..1000.0) {
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert_eq!(argmax(&values), argmax(&scaled));
    }
}

#[test]
fn story_clusters_partition_the_clustered_articles() {
    let mut r = rng(7);
    let corpus = random_entity_corpus(&mut r, 300, 10, 50);
    let index = build_index(&corpus, &TypeFilter::standard(), 30);
    let pairs = generate_candidates(&index, &corpus, 7).unwrap();
    let assignment = connected_components(&pairs, corpus.ids()).unwrap();
    let clusters = build_story_clusters(&assignment, &corpus, 2).unwrap();
    let mut seen: BTreeMap<ArticleId, usize> = BTreeMap::new();
    for c in &clusters {
        assert!(c.size() >= 2);
        for id in &c.article_ids {
            assert!(seen.insert(*id, c.cluster_id).is_none());
        }
    }
}
