//! Alignment quality (within-cluster error, variance explained) and
//! retrieval quality (average precision, reciprocal rank, team-draft
//! interleaving).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kmeans::{kmeans, KMeansConfig, KMeansError};
use crate::model::{Play, PlayId};
use crate::scalar::{euclidean_distance, Scalar};
use crate::tree::{grow_tree_with_placements, TreeConfig, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no points")]
    Empty,
    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("labels ({labels}) and points ({points}) differ in length")]
    LabelMismatch { labels: usize, points: usize },
    #[error("label {label} out of range for k = {k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("line {line}: {message}")]
    Judgments { line: u64, message: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Mean distance (not squared) of every point to its cluster mean.
pub fn wce<T: Scalar>(points: &[&[T]], labels: &[usize], k: usize) -> Result<T, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::Empty);
    }
    if labels.len() != points.len() {
        return Err(MetricsError::LabelMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        if l >= k {
            return Err(MetricsError::LabelOutOfRange { label: l, k });
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.iter()) {
            *s += *v;
        }
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(MetricsError::EmptyCluster(c));
    }
    let means: Vec<Vec<T>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / T::of_usize(c)).collect())
        .collect();
    let total = points
        .iter()
        .zip(labels)
        .fold(T::zero(), |acc, (p, &l)| acc + euclidean_distance(p, &means[l]));
    Ok(total / T::of_usize(points.len()))
}

/// K-means followed by [`wce`].
pub fn kmeans_wce<T: Scalar>(points: &[&[T]], k: usize, config: &KMeansConfig) -> Result<T, MetricsError> {
    let km = kmeans(points, k, config)?;
    let k = km.k();
    let sizes = km.cluster_sizes();
    // duplicate centroids can leave a cluster empty; drop it
    let remap: Vec<usize> = sizes
        .iter()
        .scan(0, |next, &s| {
            let id = *next;
            if s > 0 {
                *next += 1;
            }
            Some(id)
        })
        .collect();
    let used = sizes.iter().filter(|&&s| s > 0).count();
    let labels: Vec<usize> = km.labels.iter().map(|&l| remap[l]).collect();
    debug_assert!(used <= k);
    wce(points, &labels, used)
}

/// Share of total variance carried by each principal component, in
/// descending order. Returns `min(n, dim)` ratios, or none when the data has
/// no variance.
pub fn variance_explained<T: Scalar>(data: &[&[T]]) -> Result<Vec<f64>, MetricsError> {
    let n = data.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, actual: n });
    }
    let dim = data[0].len();
    let mut x = DMatrix::<f64>::zeros(n, dim);
    for (i, row) in data.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(MetricsError::NonFinite);
            }
            x[(i, j)] = v;
        }
    }
    for j in 0..dim {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    // XᵀX and XXᵀ share their non-zero spectrum; decompose the smaller one.
    let gram = if n < dim { &x * x.transpose() } else { x.transpose() * &x };
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|&v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    Ok(eig.into_iter().map(|v| v / total).collect())
}

pub fn cumulative_variance(ratios: &[f64], components: usize) -> f64 {
    ratios.iter().take(components).sum()
}

/// Mean of precision at each relevant rank; 0 when nothing relevant is
/// retrieved.
pub fn average_precision(ranking: &[PlayId], relevant: &BTreeSet<PlayId>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Inverse rank of the first relevant item; 0 when there is none.
pub fn expected_reciprocal_rank(ranking: &[PlayId], relevant: &BTreeSet<PlayId>) -> f64 {
    ranking
        .iter()
        .position(|id| relevant.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub play_id: PlayId,
    pub relevant: bool,
}

/// Relevant play ids per query. Later judgments of the same pair win.
pub fn relevant_sets(judgments: &[RelevanceJudgment]) -> BTreeMap<String, BTreeSet<PlayId>> {
    let mut latest: BTreeMap<(&str, &PlayId), bool> = BTreeMap::new();
    for j in judgments {
        latest.insert((&j.query_id, &j.play_id), j.relevant);
    }
    let mut out: BTreeMap<String, BTreeSet<PlayId>> = BTreeMap::new();
    for ((q, p), rel) in latest {
        let set = out.entry(q.to_string()).or_default();
        if rel {
            set.insert(p.clone());
        }
    }
    out
}

/// Reads `query_id,play_id,relevant` rows; `relevant` is `1/0/true/false`.
/// A header row and `#` comments are skipped.
pub fn read_judgments<R: Read>(input: R) -> Result<Vec<RelevanceJudgment>, MetricsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| MetricsError::Judgments {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let first = rec.get(0).unwrap_or("");
        if first.starts_with('#') || first == "query_id" || (rec.len() == 1 && first.is_empty()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(MetricsError::Judgments {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let relevant = match rec[2].to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => {
                return Err(MetricsError::Judgments {
                    line,
                    message: format!("bad relevance {other:?}"),
                })
            }
        };
        if !seen.insert((rec[0].to_string(), rec[1].to_string())) {
            return Err(MetricsError::Judgments {
                line,
                message: format!("second judgment for ({}, {})", &rec[0], &rec[1]),
            });
        }
        out.push(RelevanceJudgment {
            query_id: rec[0].to_string(),
            play_id: PlayId(rec[1].to_string()),
            relevant,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    A,
    B,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedItem {
    pub play_id: PlayId,
    /// Which input lists contain the item.
    pub source: Source,
    /// Which team drafted it.
    pub drafted_by: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedRanking {
    pub items: Vec<InterleavedItem>,
    pub coin_seed: u64,
}

impl InterleavedRanking {
    pub fn play_ids(&self) -> Vec<PlayId> {
        self.items.iter().map(|i| i.play_id.clone()).collect()
    }

    /// Relevant items credited to each team.
    pub fn credit(&self, relevant: &BTreeSet<PlayId>) -> (usize, usize) {
        self.items
            .iter()
            .filter(|i| relevant.contains(&i.play_id))
            .fold((0, 0), |(a, b), i| match i.drafted_by {
                Side::A => (a + 1, b),
                Side::B => (a, b + 1),
            })
    }
}

/// Team-draft interleaving with a seeded fair coin per round.
pub fn team_draft_interleave(a: &[PlayId], b: &[PlayId], seed: u64) -> InterleavedRanking {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = team_draft_interleave_with(a, b, || rng.gen_bool(0.5));
    out.coin_seed = seed;
    out
}

/// Same as [`team_draft_interleave`]; `a_first` is called once per round.
/// Drafting stops as soon as a team has nothing new to contribute.
pub fn team_draft_interleave_with(a: &[PlayId], b: &[PlayId], mut a_first: impl FnMut() -> bool) -> InterleavedRanking {
    let in_a: BTreeSet<&PlayId> = a.iter().collect();
    let in_b: BTreeSet<&PlayId> = b.iter().collect();
    let mut taken: BTreeSet<&PlayId> = BTreeSet::new();
    let mut items = Vec::new();
    let (mut ia, mut ib) = (0, 0);
    'rounds: loop {
        let order = if a_first() { [Side::A, Side::B] } else { [Side::B, Side::A] };
        for side in order {
            let (list, cursor) = match side {
                Side::A => (a, &mut ia),
                Side::B => (b, &mut ib),
            };
            while *cursor < list.len() && taken.contains(&list[*cursor]) {
                *cursor += 1;
            }
            let Some(id) = list.get(*cursor) else {
                break 'rounds;
            };
            taken.insert(id);
            let source = match (in_a.contains(id), in_b.contains(id)) {
                (true, true) => Source::Both,
                (true, false) => Source::A,
                _ => Source::B,
            };
            items.push(InterleavedItem {
                play_id: id.clone(),
                source,
                drafted_by: side,
            });
        }
    }
    InterleavedRanking { items, coin_seed: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingScores {
    pub average_precision: f64,
    pub reciprocal_rank: f64,
}

/// Scores each method's top-`depth` list against the same relevant set.
pub fn pooled_scores(
    a: &[PlayId],
    b: &[PlayId],
    relevant: &BTreeSet<PlayId>,
    depth: usize,
) -> (RankingScores, RankingScores) {
    let score = |list: &[PlayId]| {
        let top = &list[..list.len().min(depth)];
        RankingScores {
            average_precision: average_precision(top, relevant),
            reciprocal_rank: expected_reciprocal_rank(top, relevant),
        }
    };
    (score(a), score(b))
}

/// The same corpus under three orderings of its agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedViews<T> {
    pub identity: Vec<Vec<T>>,
    /// One template per team for the whole corpus.
    pub role: Vec<Vec<T>>,
    pub tree: Vec<Vec<T>>,
}

impl<T: Scalar> AlignedViews<T> {
    pub fn named(&self) -> [(&'static str, &[Vec<T>]); 3] {
        [("identity", &self.identity), ("role", &self.role), ("tree", &self.tree)]
    }
}

/// Builds the three views. The role view is a depth-1 tree grown with the
/// same config.
pub fn aligned_views<T: Scalar>(plays: &[Play<T>], config: &TreeConfig) -> Result<AlignedViews<T>, MetricsError> {
    let flatten_with = |placements: Vec<crate::tree::Placement>| -> Result<Vec<Vec<T>>, MetricsError> {
        plays
            .par_iter()
            .zip(placements.into_par_iter())
            .map(|(p, pl)| {
                Ok(p.permuted_both(&pl.perms)?.into_coords())
            })
            .collect()
    };
    let role_cfg = TreeConfig {
        max_depth: 1,
        ..*config
    };
    let (_, role) = grow_tree_with_placements(plays, &role_cfg)?;
    let (_, tree) = grow_tree_with_placements(plays, config)?;
    Ok(AlignedViews {
        identity: plays.iter().map(|p| p.coords().to_vec()).collect(),
        role: flatten_with(role)?,
        tree: flatten_with(tree)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WceRow {
    pub alignment: String,
    pub k: usize,
    pub wce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub alignment: String,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressibilityReport {
    pub wce: Vec<WceRow>,
    pub variance: Vec<VarianceCurve>,
}

impl CompressibilityReport {
    pub fn wce_for(&self, alignment: &str, k: usize) -> Option<f64> {
        self.wce.iter().find(|r| r.alignment == alignment && r.k == k).map(|r| r.wce)
    }

    pub fn cumulative(&self, alignment: &str, components: usize) -> Option<f64> {
        self.variance
            .iter()
            .find(|c| c.alignment == alignment)
            .map(|c| cumulative_variance(&c.ratios, components))
    }

    /// `alignment,k,wce` rows.
    pub fn wce_csv(&self) -> String {
        let mut out = String::from("alignment,k,wce\n");
        for r in &self.wce {
            let _ = writeln!(out, "{},{},{}", r.alignment, r.k, r.wce);
        }
        out
    }

    /// `alignment,component,ratio,cumulative` rows.
    pub fn variance_csv(&self) -> String {
        let mut out = String::from("alignment,component,ratio,cumulative\n");
        for c in &self.variance {
            let mut acc = 0.0;
            for (i, r) in c.ratios.iter().enumerate() {
                acc += r;
                let _ = writeln!(out, "{},{},{},{}", c.alignment, i + 1, r, acc);
            }
        }
        out
    }
}

/// WCE for every K and the variance spectrum of every view.
pub fn compressibility_report<T: Scalar>(
    views: &AlignedViews<T>,
    ks: &[usize],
    kmeans_config: &KMeansConfig,
) -> Result<CompressibilityReport, MetricsError> {
    let mut wce_rows = Vec::new();
    let mut variance = Vec::new();
    for (name, data) in views.named() {
        let refs: Vec<&[T]> = data.iter().map(Vec::as_slice).collect();
        for &k in ks {
            wce_rows.push(WceRow {
                alignment: name.to_string(),
                k,
                wce: kmeans_wce(&refs, k, kmeans_config)?.as_f64(),
            });
        }
        variance.push(VarianceCurve {
            alignment: name.to_string(),
            ratios: variance_explained(&refs)?,
        });
    }
    Ok(CompressibilityReport { wce: wce_rows, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, Strategy};
    use rand_distr::{Distribution, Normal};

    fn ids(names: &[&str]) -> Vec<PlayId> {
        names.iter().map(|&n| n.into()).collect()
    }

    fn set(names: &[&str]) -> BTreeSet<PlayId> {
        ids(names).into_iter().collect()
    }

    fn refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn wce_examples() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        assert_eq!(wce(&refs(&pts), &[0, 1, 2, 3], 4).unwrap(), 0.0);
        assert_eq!(wce(&refs(&pts), &[0, 0, 1, 1], 2).unwrap(), 0.5);
        let pair = vec![vec![-1.0], vec![1.0]];
        assert_eq!(wce(&refs(&pair), &[0, 0], 1).unwrap(), 1.0);
        assert_eq!(kmeans_wce(&refs(&pts), 2, &KMeansConfig::with_seed(0)).unwrap(), 0.5);
        assert_eq!(wce::<f64>(&[], &[], 1), Err(MetricsError::Empty));
        assert_eq!(wce(&refs(&pair), &[0, 0], 2), Err(MetricsError::EmptyCluster(1)));
    }

    #[test]
    fn variance_of_a_line() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let r = variance_explained(&refs(&pts)).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
        let flat = vec![vec![3.0, 3.0]; 4];
        assert!(variance_explained(&refs(&flat)).unwrap().is_empty());
        assert!(matches!(
            variance_explained(&refs(&flat[..1])),
            Err(MetricsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn isotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = Normal::new(0.0, 3.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..5000).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
        let r = variance_explained(&refs(&pts)).unwrap();
        assert!((r[0] - 0.5).abs() < 0.05 && (r[1] - 0.5).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn gram_and_covariance_agree() {
        // 5 samples in 8 dimensions takes the Gram route; compare with the
        // covariance spectrum computed directly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let r = variance_explained(&refs(&pts)).unwrap();
        let mut x = DMatrix::from_fn(5, 8, |i, j| pts[i][j]);
        for j in 0..8 {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let mut direct: Vec<f64> = (x.transpose() * &x).symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
        direct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = direct.iter().sum();
        for (a, b) in r.iter().zip(&direct) {
            assert!((a - b / total).abs() < 1e-10);
        }
    }

    #[test]
    fn ap_and_err_examples() {
        let ranking = ids(&["p1", "p2", "p3"]);
        assert_eq!(average_precision(&ranking, &set(&["p1", "p2", "p3"])), 1.0);
        let ap = average_precision(&ranking, &set(&["p1", "p3"]));
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&ranking, &set(&[])), 0.0);
        assert_eq!(expected_reciprocal_rank(&ranking, &set(&["p1"])), 1.0);
        let four = ids(&["a", "b", "c", "d"]);
        assert_eq!(expected_reciprocal_rank(&four, &set(&["d"])), 0.25);
        assert_eq!(expected_reciprocal_rank(&four, &set(&["z"])), 0.0);
    }

    #[test]
    fn interleave_examples() {
        let a = ids(&["p1", "p2"]);
        let b = ids(&["p3", "p4"]);
        let out = team_draft_interleave_with(&a, &b, || true);
        assert_eq!(out.play_ids(), ids(&["p1", "p3", "p2", "p4"]));
        let same = ids(&["x", "y", "z"]);
        let out = team_draft_interleave(&same, &same, 9);
        assert_eq!(out.play_ids(), same);
        assert!(out.items.iter().all(|i| i.source == Source::Both));
    }

    #[test]
    fn judgments_file() {
        let text = "query_id,play_id,relevant\nq1,p1,1\nq1,p2,0\nq1,p3,true\n";
        let j = read_judgments(text.as_bytes()).unwrap();
        let sets = relevant_sets(&j);
        assert_eq!(sets["q1"], set(&["p1", "p3"]));
        assert!(read_judgments("q1,p1,1\nq1,p1,0\n".as_bytes()).is_err());
        assert!(read_judgments("q1,p1,maybe\n".as_bytes()).is_err());
    }

    fn ranking_pair() -> impl Strategy<Value = (Vec<PlayId>, Vec<PlayId>, u64)> {
        let list = || proptest::sample::subsequence((0..30).collect::<Vec<u32>>(), 0..15).prop_shuffle();
        (list(), list(), any::<u64>()).prop_map(|(a, b, s)| {
            let f = |v: Vec<u32>| v.into_iter().map(|i| PlayId(format!("p{i}"))).collect();
            (f(a), f(b), s)
        })
    }

    proptest! {
        #[test]
        fn interleaving_prefix_balance((a, b, seed) in ranking_pair()) {
            let out = team_draft_interleave(&a, &b, seed);
            let (mut da, mut db) = (0i64, 0i64);
            let mut seen = BTreeSet::new();
            for item in &out.items {
                prop_assert!(seen.insert(item.play_id.clone()));
                match item.drafted_by {
                    Side::A => da += 1,
                    Side::B => db += 1,
                }
                prop_assert!((da - db).abs() <= 1);
            }
        }

        #[test]
        fn ap_err_ignore_relabeling(flags in proptest::collection::vec(any::<bool>(), 1..20), salt in 0u32..1000) {
            let ranking: Vec<PlayId> = (0..flags.len()).map(|i| PlayId(format!("a{i}"))).collect();
            let renamed: Vec<PlayId> = (0..flags.len()).map(|i| PlayId(format!("b{}", i as u32 * 7 + salt))).collect();
            let rel = |r: &[PlayId]| r.iter().zip(&flags).filter(|(_, &f)| f).map(|(p, _)| p.clone()).collect::<BTreeSet<_>>();
            prop_assert_eq!(average_precision(&ranking, &rel(&ranking)), average_precision(&renamed, &rel(&renamed)));
            prop_assert_eq!(expected_reciprocal_rank(&ranking, &rel(&ranking)), expected_reciprocal_rank(&renamed, &rel(&renamed)));
        }

        #[test]
        fn variance_ratios_normalized(seed in any::<u64>(), n in 3usize..30, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
            let r = variance_explained(&refs(&pts)).unwrap();
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for w in r.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
