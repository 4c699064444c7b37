//! Media storm detection and the temporal statistics over detected storms.
//!
//! An outlet is in *storm mode* for a story when, in some window of
//! `window_days` consecutive days in which it published at least
//! `min_window_articles` articles overall, at least `share_threshold` of those
//! articles belong to the story. A story cluster is a storm when it spans at
//! least `min_duration` calendar days and at least `min_storm_outlets` outlets
//! enter storm mode for it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::StoryCluster;
use crate::corpus::{ArticleId, Corpus, DateRange, Scope};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormParams {
    pub window_days: u32,
    pub share_threshold: f64,
    pub min_window_articles: u32,
    pub min_duration: u32,
    pub min_storm_outlets: usize,
}

impl Default for StormParams {
    fn default() -> Self {
        StormParams {
            window_days: 3,
            share_threshold: 0.03,
            min_window_articles: 40,
            min_duration: 7,
            min_storm_outlets: 5,
        }
    }
}

/// Per-outlet daily publication counts with prefix sums, for O(1) window totals.
#[derive(Debug, Clone)]
pub struct OutletVolume {
    range: DateRange,
    prefix: HashMap<String, Vec<u32>>,
}

impl OutletVolume {
    pub fn new(corpus: &Corpus) -> Self {
        let range = corpus.date_range();
        let days = range.len_days();
        let mut daily: HashMap<String, Vec<u32>> = corpus
            .outlets()
            .keys()
            .map(|name| (name.clone(), vec![0; days]))
            .collect();
        for article in corpus.articles() {
            let day = range.offset(article.date) as usize;
            daily.get_mut(&article.outlet).expect("outlet resolves")[day] += 1;
        }
        let prefix = daily
            .into_iter()
            .map(|(name, counts)| {
                let mut sums = Vec::with_capacity(counts.len() + 1);
                sums.push(0);
                for c in counts {
                    sums.push(sums.last().unwrap() + c);
                }
                (name, sums)
            })
            .collect();
        OutletVolume { range, prefix }
    }

    /// Articles published by `outlet` over `days` days from `start`. Days outside
    /// the corpus range count as zero.
    pub fn total(&self, outlet: &str, start: NaiveDate, days: u32) -> u32 {
        let Some(sums) = self.prefix.get(outlet) else {
            return 0;
        };
        let n = (sums.len() - 1) as i64;
        let lo = self.range.offset(start).clamp(0, n) as usize;
        let hi = (self.range.offset(start) + i64::from(days)).clamp(0, n) as usize;
        sums[hi] - sums[lo]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormModeEvent {
    pub outlet: String,
    pub window_start: NaiveDate,
    pub share: f64,
    pub outlet_window_total: u32,
    pub story_window_count: u32,
}

fn add_days(date: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        date.checked_add_days(Days::new(days as u64))
    } else {
        date.checked_sub_days(Days::new(days.unsigned_abs()))
    }
    .expect("date arithmetic within calendar range")
}

/// Storm-mode events of every outlet covering `cluster`, ordered by outlet then
/// window start. Windows slide with stride one day over every start from
/// `first_day - (window_days - 1)` to `last_day`.
pub fn detect_storm_mode(
    cluster: &StoryCluster,
    corpus: &Corpus,
    volume: &OutletVolume,
    params: &StormParams,
) -> Result<Vec<StormModeEvent>> {
    let window = i64::from(params.window_days.max(1));
    let origin = add_days(cluster.first_day, -(window - 1));
    let span = (cluster.last_day - origin).num_days() + window;

    let mut per_outlet: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for id in &cluster.article_ids {
        let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
        let day = (article.date - origin).num_days() as usize;
        per_outlet
            .entry(article.outlet.as_str())
            .or_insert_with(|| vec![0; span as usize])[day] += 1;
    }

    let mut events = Vec::new();
    for (outlet, counts) in per_outlet {
        for start in 0..=(span - window) as usize {
            let story: u32 = counts[start..start + window as usize].iter().sum();
            if story == 0 {
                continue;
            }
            let window_start = add_days(origin, start as i64);
            let total = volume.total(outlet, window_start, window as u32);
            if total < params.min_window_articles {
                continue;
            }
            let share = f64::from(story) / f64::from(total);
            if share >= params.share_threshold {
                events.push(StormModeEvent {
                    outlet: outlet.to_owned(),
                    window_start,
                    share,
                    outlet_window_total: total,
                    story_window_count: story,
                });
            }
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormRecord {
    pub cluster_id: usize,
    pub article_ids: Vec<ArticleId>,
    pub start_day: NaiveDate,
    pub end_day: NaiveDate,
    pub peak_day: NaiveDate,
    pub peak_day_index: u32,
    pub duration_days: u32,
    pub article_count: usize,
    pub outlet_count: usize,
    pub storm_mode_outlets: Vec<String>,
    pub pct_national: f64,
    pub daily_counts: Vec<u32>,
    pub daily_state_counts: Vec<u32>,
    pub storm_mode_events: Vec<StormModeEvent>,
}

/// Storm-mode evaluation of a single cluster, storm or not.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterVerdict {
    pub duration_days: u32,
    pub storm_mode_outlets: Vec<String>,
    pub events: Vec<StormModeEvent>,
    pub is_storm: bool,
}

pub fn evaluate_cluster(
    cluster: &StoryCluster,
    corpus: &Corpus,
    volume: &OutletVolume,
    params: &StormParams,
) -> Result<ClusterVerdict> {
    let duration_days = cluster.duration_days();
    // Storm mode is irrelevant when the span alone disqualifies the cluster.
    let events = if duration_days >= params.min_duration {
        detect_storm_mode(cluster, corpus, volume, params)?
    } else {
        Vec::new()
    };
    let outlets: BTreeSet<&str> = events.iter().map(|e| e.outlet.as_str()).collect();
    let storm_mode_outlets: Vec<String> = outlets.into_iter().map(str::to_owned).collect();
    let is_storm =
        duration_days >= params.min_duration && storm_mode_outlets.len() >= params.min_storm_outlets;
    Ok(ClusterVerdict {
        duration_days,
        storm_mode_outlets,
        events,
        is_storm,
    })
}

/// Clusters meeting both storm criteria, as fully populated records.
pub fn identify_storms(
    clusters: &[StoryCluster],
    corpus: &Corpus,
    params: &StormParams,
) -> Result<Vec<StormRecord>> {
    let volume = OutletVolume::new(corpus);
    let records: Vec<Option<StormRecord>> = clusters
        .par_iter()
        .map(|cluster| {
            let verdict = evaluate_cluster(cluster, corpus, &volume, params)?;
            if !verdict.is_storm {
                return Ok(None);
            }
            storm_record(cluster, corpus, verdict).map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(records.into_iter().flatten().collect())
}

fn storm_record(cluster: &StoryCluster, corpus: &Corpus, verdict: ClusterVerdict) -> Result<StormRecord> {
    let (daily_counts, daily_state_counts) = storm_time_series(
        &cluster.article_ids,
        cluster.first_day,
        verdict.duration_days,
        corpus,
    )?;
    let peak_day_index = peak_day_index(&daily_counts);
    let mut outlets = BTreeSet::new();
    let mut national = 0usize;
    for id in &cluster.article_ids {
        let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
        outlets.insert(article.outlet.as_str());
        if corpus.outlet_of(article).scope == Scope::National {
            national += 1;
        }
    }
    Ok(StormRecord {
        cluster_id: cluster.cluster_id,
        article_ids: cluster.article_ids.clone(),
        start_day: cluster.first_day,
        end_day: cluster.last_day,
        peak_day: add_days(cluster.first_day, i64::from(peak_day_index) - 1),
        peak_day_index,
        duration_days: verdict.duration_days,
        article_count: cluster.article_ids.len(),
        outlet_count: outlets.len(),
        storm_mode_outlets: verdict.storm_mode_outlets,
        pct_national: 100.0 * national as f64 / cluster.article_ids.len() as f64,
        daily_counts,
        daily_state_counts,
        storm_mode_events: verdict.events,
    })
}

/// Daily member-article counts and daily distinct US states among local
/// outlets, day 1 being `start_day`.
pub fn storm_time_series(
    article_ids: &[ArticleId],
    start_day: NaiveDate,
    duration_days: u32,
    corpus: &Corpus,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let days = duration_days as usize;
    let mut counts = vec![0u32; days];
    let mut states: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); days];
    for id in article_ids {
        let article = corpus.get(*id).ok_or(Error::UnknownArticle(*id))?;
        let offset = (article.date - start_day).num_days();
        if offset < 0 || offset as usize >= days {
            continue;
        }
        counts[offset as usize] += 1;
        let outlet = corpus.outlet_of(article);
        if let (Scope::Local, Some(state)) = (outlet.scope, outlet.state.as_deref()) {
            states[offset as usize].insert(state);
        }
    }
    Ok((counts, states.iter().map(|s| s.len() as u32).collect()))
}

/// 1-based index of the busiest day, earliest on ties.
pub fn peak_day_index(daily_counts: &[u32]) -> u32 {
    let mut best = 0;
    for (i, c) in daily_counts.iter().enumerate() {
        if *c > daily_counts[best] {
            best = i;
        }
    }
    best as u32 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl FeatureStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(FeatureStats {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: median_sorted(&sorted),
        })
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormSummary {
    pub storms: usize,
    pub articles: FeatureStats,
    pub duration_days: FeatureStats,
    pub outlets: FeatureStats,
    pub pct_national: FeatureStats,
}

pub fn storm_summary(storms: &[StormRecord]) -> Result<StormSummary> {
    if storms.is_empty() {
        return Err(Error::EmptyInput("storm list"));
    }
    let feature =
        |f: fn(&StormRecord) -> f64| FeatureStats::from_values(&storms.iter().map(f).collect::<Vec<_>>());
    Ok(StormSummary {
        storms: storms.len(),
        articles: feature(|s| s.article_count as f64)?,
        duration_days: feature(|s| f64::from(s.duration_days))?,
        outlets: feature(|s| s.outlet_count as f64)?,
        pct_national: feature(|s| s.pct_national)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Articles,
    States,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBands {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Linear interpolation between order statistics; `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-day mean over storms (zero-padded to `horizon_days`) with a percentile
/// bootstrap 95% band from resampling whole storms.
pub fn average_series(
    series: &[Vec<f64>],
    horizon_days: usize,
    bootstrap_reps: usize,
    seed: u64,
) -> Result<SeriesBands> {
    if series.len() < 2 {
        return Err(Error::EmptyInput("at least two series are required"));
    }
    let padded: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            (0..horizon_days)
                .map(|d| s.get(d).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    let n = padded.len();
    let column_mean = |rows: &mut dyn Iterator<Item = &Vec<f64>>| {
        let mut acc = vec![0.0; horizon_days];
        for row in rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    };
    let mean = column_mean(&mut padded.iter());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps: Vec<Vec<f64>> = vec![Vec::with_capacity(bootstrap_reps); horizon_days];
    for _ in 0..bootstrap_reps {
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let rep = column_mean(&mut sample.iter().map(|&i| &padded[i]));
        for (day, v) in rep.into_iter().enumerate() {
            reps[day].push(v);
        }
    }
    let mut lower = Vec::with_capacity(horizon_days);
    let mut upper = Vec::with_capacity(horizon_days);
    for (day, mut values) in reps.into_iter().enumerate() {
        if values.is_empty() {
            lower.push(mean[day]);
            upper.push(mean[day]);
            continue;
        }
        values.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&values, 0.025));
        upper.push(quantile_sorted(&values, 0.975));
    }
    Ok(SeriesBands { mean, lower, upper })
}

pub fn average_storm_series(
    storms: &[StormRecord],
    kind: SeriesKind,
    horizon_days: usize,
    bootstrap_reps: usize,
    seed: u64,
) -> Result<SeriesBands> {
    let series: Vec<Vec<f64>> = storms
        .iter()
        .map(|s| {
            let raw = match kind {
                SeriesKind::Articles => &s.daily_counts,
                SeriesKind::States => &s.daily_state_counts,
            };
            raw.iter().map(|v| f64::from(*v)).collect()
        })
        .collect();
    average_series(&series, horizon_days, bootstrap_reps, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub value: u32,
    pub cdf: f64,
}

/// Empirical CDF evaluated at each distinct value.
pub fn duration_ecdf(durations: &[u32]) -> Result<Vec<EcdfPoint>> {
    if durations.is_empty() {
        return Err(Error::EmptyInput("durations"));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut points: Vec<EcdfPoint> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let cdf = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.value == *v => last.cdf = cdf,
            _ => points.push(EcdfPoint { value: *v, cdf }),
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub histogram: BTreeMap<u32, usize>,
    pub median: f64,
    /// Most frequent peak day, earliest on ties.
    pub mode: u32,
}

pub fn peak_statistics(storms: &[StormRecord]) -> Result<PeakStats> {
    peak_statistics_from(&storms.iter().map(|s| s.peak_day_index).collect::<Vec<_>>())
}

pub fn peak_statistics_from(peaks: &[u32]) -> Result<PeakStats> {
    if peaks.is_empty() {
        return Err(Error::EmptyInput("storm list"));
    }
    let mut histogram = BTreeMap::new();
    for p in peaks {
        *histogram.entry(*p).or_insert(0) += 1;
    }
    let mut mode = 0;
    let mut best = 0;
    for (day, count) in &histogram {
        if *count > best {
            best = *count;
            mode = *day;
        }
    }
    let mut sorted: Vec<f64> = peaks.iter().map(|p| f64::from(*p)).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(PeakStats {
        histogram,
        median: median_sorted(&sorted),
        mode,
    })
}

pub fn write_storms_jsonl(mut w: impl Write, storms: &[StormRecord]) -> std::io::Result<()> {
    for s in storms {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_storms_jsonl(text: &str) -> Result<Vec<StormRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Storm table: start, peak, length, article count, % national and a blank
/// description column for manual annotation.
pub fn write_storm_table_csv(w: impl Write, storms: &[StormRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "start_date",
        "peak_date",
        "length",
        "article_count",
        "pct_national",
        "description",
    ])?;
    for s in storms {
        csv.write_record([
            s.start_day.to_string(),
            s.peak_day.to_string(),
            s.duration_days.to_string(),
            s.article_count.to_string(),
            format!("{:.1}", s.pct_national),
            String::new(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("storm table", e))
}

pub fn write_bands_csv(w: impl Write, articles: &SeriesBands, states: &SeriesBands) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "day",
        "articles_mean",
        "articles_lower",
        "articles_upper",
        "states_mean",
        "states_lower",
        "states_upper",
    ])?;
    for day in 0..articles.mean.len() {
        csv.write_record([
            (day + 1).to_string(),
            articles.mean[day].to_string(),
            articles.lower[day].to_string(),
            articles.upper[day].to_string(),
            states.mean[day].to_string(),
            states.lower[day].to_string(),
            states.upper[day].to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("series bands", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, OutletProfile, Reliability};

    fn date(day: i64) -> NaiveDate {
        add_days(NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(), day)
    }

    struct Builder {
        articles: Vec<Article>,
        outlets: Vec<OutletProfile>,
    }

    impl Builder {
        fn new() -> Self {
            Builder {
                articles: Vec::new(),
                outlets: Vec::new(),
            }
        }

        fn outlet(&mut self, p: OutletProfile) -> &mut Self {
            self.outlets.push(p);
            self
        }

        fn add(&mut self, outlet: &str, day: i64, n: usize) -> Vec<ArticleId> {
            (0..n)
                .map(|_| {
                    let id = ArticleId(self.articles.len() as u64);
                    self.articles.push(Article {
                        id,
                        outlet: outlet.into(),
                        date: date(day),
                        title: format!("a{}", id.0),
                        text: String::new(),
                        entities: None,
                        topic_dist: None,
                    });
                    id
                })
                .collect()
        }

        fn corpus(&self) -> Corpus {
            Corpus::new(self.articles.clone(), self.outlets.clone(), None).unwrap()
        }
    }

    fn cluster(corpus: &Corpus, ids: Vec<ArticleId>) -> StoryCluster {
        let dates: Vec<NaiveDate> = ids.iter().map(|i| corpus.get(*i).unwrap().date).collect();
        StoryCluster {
            cluster_id: 0,
            article_ids: ids,
            first_day: *dates.iter().min().unwrap(),
            last_day: *dates.iter().max().unwrap(),
        }
    }

    #[test]
    fn share_boundary_is_inclusive() {
        let mut b = Builder::new();
        b.outlet(OutletProfile::national("A", Reliability::Reliable));
        let members = b.add("A", 5, 3);
        b.add("A", 5, 97);
        let c = b.corpus();
        let cl = cluster(&c, members);
        let events = detect_storm_mode(&cl, &c, &OutletVolume::new(&c), &StormParams::default()).unwrap();
        // windows starting days 3, 4 and 5 all cover day 5
        assert_eq!(events.len(), 3);
        assert!(events
            .iter()
            .all(|e| e.outlet_window_total == 100 && e.share == 0.03));
    }

    #[test]
    fn small_windows_are_ignored() {
        let mut b = Builder::new();
        b.outlet(OutletProfile::national("A", Reliability::Reliable));
        let members = b.add("A", 5, 5);
        b.add("A", 5, 34);
        let c = b.corpus();
        let cl = cluster(&c, members);
        let events = detect_storm_mode(&cl, &c, &OutletVolume::new(&c), &StormParams::default()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn volume_totals_clamp_to_corpus_range() {
        let mut b = Builder::new();
        b.outlet(OutletProfile::national("A", Reliability::Reliable));
        b.add("A", 0, 2);
        b.add("A", 1, 3);
        let c = b.corpus();
        let v = OutletVolume::new(&c);
        assert_eq!(v.total("A", date(-2), 3), 2);
        assert_eq!(v.total("A", date(0), 3), 5);
        assert_eq!(v.total("A", date(5), 3), 0);
        assert_eq!(v.total("nobody", date(0), 3), 0);
    }

    #[test]
    fn peak_ties_go_to_earliest_day() {
        assert_eq!(peak_day_index(&[5, 9, 9, 2]), 2);
        assert_eq!(peak_day_index(&[9, 5, 3, 1]), 1);
        assert_eq!(peak_day_index(&[0, 0, 4]), 3);
    }

    #[test]
    fn time_series_counts_states() {
        let mut b = Builder::new();
        b.outlet(OutletProfile::national("N", Reliability::Reliable))
            .outlet(OutletProfile::local("L1", Some("OH")))
            .outlet(OutletProfile::local("L2", Some("OH")))
            .outlet(OutletProfile::local("L3", Some("TX")))
            .outlet(OutletProfile::local("L4", None));
        let mut ids = b.add("N", 0, 2);
        ids.extend(b.add("L1", 0, 1));
        ids.extend(b.add("L2", 0, 1));
        ids.extend(b.add("L3", 2, 1));
        ids.extend(b.add("L4", 2, 1));
        let c = b.corpus();
        let (counts, states) = storm_time_series(&ids, date(0), 3, &c).unwrap();
        assert_eq!(counts, vec![4, 0, 2]);
        assert_eq!(states, vec![1, 0, 1]);

        let national: Vec<ArticleId> = ids[..2].to_vec();
        let (counts, states) = storm_time_series(&national, date(0), 1, &c).unwrap();
        assert_eq!(counts, vec![2]);
        assert_eq!(states, vec![0]);
    }

    #[test]
    fn summary_statistics() {
        let mk = |articles: usize, duration: u32| StormRecord {
            cluster_id: 0,
            article_ids: vec![],
            start_day: date(0),
            end_day: date(0),
            peak_day: date(0),
            peak_day_index: 1,
            duration_days: duration,
            article_count: articles,
            outlet_count: 5,
            storm_mode_outlets: vec![],
            pct_national: 50.0,
            daily_counts: vec![],
            daily_state_counts: vec![],
            storm_mode_events: vec![],
        };
        let one = storm_summary(&[mk(51, 7)]).unwrap();
        assert_eq!(
            one.articles,
            FeatureStats {
                min: 51.0,
                max: 51.0,
                mean: 51.0,
                median: 51.0
            }
        );
        let two = storm_summary(&[mk(51, 7), mk(60, 11)]).unwrap();
        assert_eq!(two.duration_days.median, 9.0);
        assert!(matches!(storm_summary(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ecdf_values() {
        let pts = duration_ecdf(&[7, 10, 10, 20]).unwrap();
        assert_eq!(
            pts,
            vec![
                EcdfPoint { value: 7, cdf: 0.25 },
                EcdfPoint { value: 10, cdf: 0.75 },
                EcdfPoint { value: 20, cdf: 1.0 },
            ]
        );
        assert_eq!(duration_ecdf(&[12]).unwrap()[0].cdf, 1.0);
        assert!(duration_ecdf(&[]).is_err());
    }

    #[test]
    fn peak_stats_median_and_mode() {
        let s = peak_statistics_from(&[1, 1, 3, 8]).unwrap();
        assert_eq!(s.mode, 1);
        assert_eq!(s.median, 2.0);
        assert_eq!(peak_statistics_from(&[4, 2, 2, 4]).unwrap().mode, 2);
    }

    #[test]
    fn series_average_and_bands() {
        let same = vec![vec![3.0, 2.0, 1.0]; 4];
        let bands = average_series(&same, 5, 200, 1).unwrap();
        assert_eq!(bands.mean, vec![3.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(bands.lower, bands.mean);
        assert_eq!(bands.upper, bands.mean);

        let two = vec![vec![10.0], vec![20.0]];
        let bands = average_series(&two, 1, 500, 9).unwrap();
        assert_eq!(bands.mean, vec![15.0]);
        assert!(bands.lower[0] >= 10.0 && bands.upper[0] <= 20.0);
        assert_eq!(bands, average_series(&two, 1, 500, 9).unwrap());
        assert!(average_series(&two[..1], 1, 10, 0).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.975) - 4.9).abs() < 1e-12);
    }
}
