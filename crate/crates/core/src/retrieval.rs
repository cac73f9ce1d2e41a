//! Hash-based retrieval on top of the alignment tree, plus the ball-only
//! clustering baseline.
//!
//! The hash key of a play is the leaf it reaches. A query is aligned with
//! the tree, every play stored under its key becomes a candidate, and the
//! candidates are ranked by L2 distance over the selected trajectories in
//! the shared slot order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{align_play, build_cost_matrix, solve_assignment, AssignmentError, CostMetric};
use crate::ingest::{read_plays, write_plays};
use crate::kmeans::{kmeans, nearest, sample_indices, KMeansConfig, KMeansError};
use crate::model::{flatten, AgentSelection, CostMatrix, ModelError, Play, PlayId, Team, TeamPerms, Template};
use crate::scalar::{mix_seed, Scalar};
use crate::tree::{grow_tree_with_placements, AlignmentTree, NodeId, TreeConfig, TreeError};

pub const INDEX_FORMAT: &str = "playtree-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("cannot build an index from an empty corpus")]
    Empty,
    #[error("no index for {0} s windows")]
    NoWindow(u32),
    #[error("query has {actual_frames} frames / {actual_players} players per team; the {window} s index expects {frames} / {players}")]
    QueryShape {
        window: u32,
        frames: usize,
        players: usize,
        actual_frames: usize,
        actual_players: usize,
    },
    #[error("query selects no trajectories")]
    EmptySelection,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("boost for {0} must be finite and at least 1")]
    BadBoost(PlayId),
    #[error("unknown play {0}")]
    UnknownPlay(PlayId),
    #[error("{0} plays are indexed but missing from the play store")]
    MissingPlays(usize),
    #[error("index has no baseline")]
    NoBaseline,
    #[error("index file: {0}")]
    Format(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

impl From<std::io::Error> for RetrievalError {
    fn from(e: std::io::Error) -> Self {
        RetrievalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Tree,
    Baseline,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Tree => "tree",
            Method::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tree" => Ok(Method::Tree),
            "baseline" => Ok(Method::Baseline),
            other => Err(format!("unknown method {other:?} (tree|baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub tree: TreeConfig,
    /// Leaves probed per query: the query's own leaf plus up to
    /// `probe_leaves - 1` sibling leaves nearest to it.
    pub probe_leaves: usize,
    pub build_baseline: bool,
}

impl IndexConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            tree: TreeConfig::with_seed(seed),
            probe_leaves: 1,
            build_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub play_id: PlayId,
    /// Alignment of the raw play into the key's slot order.
    pub perms: TeamPerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct BaselineIndex<T> {
    pub template_offense: Template<T>,
    pub template_defense: Template<T>,
    /// Ball-trajectory cluster centres.
    pub centroids: Vec<Vec<T>>,
    pub buckets: BTreeMap<usize, Vec<Entry>>,
}

/// Everything stored for one window length. This is the index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct WindowIndex<T> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub window_seconds: u32,
    pub probe_leaves: usize,
    pub tree: AlignmentTree<T>,
    pub buckets: BTreeMap<NodeId, Vec<Entry>>,
    pub baseline: Option<BaselineIndex<T>>,
}

fn scalar_name<T: Scalar>() -> String {
    std::any::type_name::<T>().to_string()
}

impl<T: Scalar> WindowIndex<T> {
    pub fn play_count(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> Result<Vec<u8>, RetrievalError> {
        serde_json::to_vec(self).map_err(|e| RetrievalError::Format(e.to_string()))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let index: Self = serde_json::from_slice(bytes).map_err(|e| RetrievalError::Format(e.to_string()))?;
        if index.format != INDEX_FORMAT {
            return Err(RetrievalError::Format(format!("not a {INDEX_FORMAT} file")));
        }
        if index.version != INDEX_VERSION {
            return Err(RetrievalError::Format(format!(
                "version {} (expected {INDEX_VERSION})",
                index.version
            )));
        }
        if index.scalar != scalar_name::<T>() {
            return Err(RetrievalError::Format(format!(
                "built with {} coordinates, loading as {}",
                index.scalar,
                scalar_name::<T>()
            )));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        Self::from_json(&fs::read(path)?)
    }

    fn metric(&self) -> CostMetric {
        self.tree.config.metric()
    }
}

/// Builds the index for a corpus of one window length.
pub fn build_window_index<T: Scalar>(plays: &[Play<T>], config: &IndexConfig) -> Result<WindowIndex<T>, RetrievalError> {
    let first = plays.first().ok_or(RetrievalError::Empty)?;
    let (tree, placements) = grow_tree_with_placements(plays, &config.tree)?;
    let mut buckets: BTreeMap<NodeId, Vec<Entry>> = BTreeMap::new();
    for (play, placed) in plays.iter().zip(placements) {
        buckets.entry(placed.leaf).or_default().push(Entry {
            play_id: play.play_id.clone(),
            perms: placed.perms,
        });
    }
    let baseline = if config.build_baseline {
        Some(build_baseline(plays, &tree)?)
    } else {
        None
    };
    Ok(WindowIndex {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        scalar: scalar_name::<T>(),
        window_seconds: first.window_seconds,
        probe_leaves: config.probe_leaves.max(1),
        tree,
        buckets,
        baseline,
    })
}

fn build_baseline<T: Scalar>(plays: &[Play<T>], tree: &AlignmentTree<T>) -> Result<BaselineIndex<T>, RetrievalError> {
    let root = tree.root();
    let metric = tree.config.metric();
    let ball = AgentSelection::ball_only();
    let vectors = plays.iter().map(|p| flatten(p, &ball)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[T]> = vectors.iter().map(Vec::as_slice).collect();
    let sample: Vec<&[T]> = sample_indices(refs.len(), tree.config.partition_sample_limit, mix_seed(tree.config.rng_seed, 0xba12))
        .into_iter()
        .map(|i| refs[i])
        .collect();
    let cfg = KMeansConfig {
        max_iterations: tree.config.kmeans_max_iterations,
        seed: mix_seed(tree.config.rng_seed, 0xba11),
        restarts: 1,
    };
    let mut k = tree.leaf_count().min(sample.len()).max(1);
    let km = loop {
        match kmeans(&sample, k, &cfg) {
            Ok(km) => break km,
            Err(KMeansError::Degenerate { distinct, .. }) => k = distinct.max(1),
            Err(e) => return Err(e.into()),
        }
    };
    let perms = plays
        .par_iter()
        .map(|p| align_play(&root.template_offense, &root.template_defense, p, metric).map(|(_, perms, _)| perms))
        .collect::<Result<Vec<_>, _>>()?;
    let mut buckets: BTreeMap<usize, Vec<Entry>> = BTreeMap::new();
    let labels: Vec<usize> = refs.par_iter().map(|v| nearest(&km.centroids, v).0).collect();
    for ((play, label), perms) in plays.iter().zip(labels).zip(perms) {
        buckets.entry(label).or_default().push(Entry {
            play_id: play.play_id.clone(),
            perms,
        });
    }
    Ok(BaselineIndex {
        template_offense: root.template_offense.clone(),
        template_defense: root.template_defense.clone(),
        centroids: km.centroids,
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Query<T> {
    pub play: Play<T>,
    /// Agent indices refer to the query play's own order.
    pub selected: AgentSelection,
    pub k: usize,
    #[serde(default)]
    pub method: Method,
    /// Multiplicative boosts (≥ 1) applied after ranking.
    #[serde(default)]
    pub boosts: BTreeMap<PlayId, f64>,
    /// Agents actually observed; the rest are filled in from the root
    /// templates before alignment. `None` means all agents are present.
    #[serde(default)]
    pub present: Option<AgentSelection>,
}

impl<T: Scalar> Query<T> {
    pub fn new(play: Play<T>, selected: AgentSelection, k: usize) -> Self {
        Self {
            play,
            selected,
            k,
            method: Method::Tree,
            boosts: BTreeMap::new(),
            present: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct RankedResult<T> {
    pub rank: usize,
    pub play_id: PlayId,
    /// L2 distance over the selected trajectories, feet.
    pub distance: T,
    /// Distance divided by the play's boost; the sort key.
    pub score: T,
    /// Alignment of the candidate into the hash key's slot order.
    pub correspondence: TeamPerms,
    /// Reorders the candidate so its agent `i` corresponds to the query's
    /// agent `i`.
    pub query_order: TeamPerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome<T> {
    pub results: Vec<RankedResult<T>>,
    /// Hash key(s) probed: leaf ids for the tree, cluster ids for the baseline.
    pub keys: Vec<usize>,
    /// Alignment of the query into the key's slot order.
    pub query_perms: TeamPerms,
    pub candidates: usize,
}

/// Raw plays keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlayStore<T> {
    plays: BTreeMap<PlayId, Arc<Play<T>>>,
}

impl<T: Scalar> PlayStore<T> {
    pub fn new(plays: impl IntoIterator<Item = Play<T>>) -> Self {
        Self {
            plays: plays.into_iter().map(|p| (p.play_id.clone(), Arc::new(p))).collect(),
        }
    }

    pub fn get(&self, id: &PlayId) -> Option<&Play<T>> {
        self.plays.get(id).map(Arc::as_ref)
    }

    pub fn len(&self) -> usize {
        self.plays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plays.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &PlayId> {
        self.plays.keys()
    }

    pub fn plays(&self) -> impl Iterator<Item = &Play<T>> {
        self.plays.values().map(Arc::as_ref)
    }
}

/// Indexes for every window length plus the raw play payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayIndex<T> {
    windows: BTreeMap<u32, WindowIndex<T>>,
    store: PlayStore<T>,
}

/// Groups a mixed corpus by window length and indexes every group.
pub fn build_index<T: Scalar>(plays: Vec<Play<T>>, config: &IndexConfig) -> Result<PlayIndex<T>, RetrievalError> {
    if plays.is_empty() {
        return Err(RetrievalError::Empty);
    }
    let mut groups: BTreeMap<u32, Vec<Play<T>>> = BTreeMap::new();
    for p in &plays {
        groups.entry(p.window_seconds).or_default().push(p.clone());
    }
    let windows = groups
        .iter()
        .map(|(&w, group)| build_window_index(group, config).map(|idx| (w, idx)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(PlayIndex {
        windows,
        store: PlayStore::new(plays),
    })
}

impl<T: Scalar> PlayIndex<T> {
    /// Pairs loaded index files with a play store; every indexed id must be
    /// present in the store.
    pub fn from_parts(windows: Vec<WindowIndex<T>>, store: PlayStore<T>) -> Result<Self, RetrievalError> {
        let mut map = BTreeMap::new();
        for w in windows {
            let missing = w
                .buckets
                .values()
                .flatten()
                .filter(|e| store.get(&e.play_id).is_none())
                .count();
            if missing > 0 {
                return Err(RetrievalError::MissingPlays(missing));
            }
            if map.insert(w.window_seconds, w).is_some() {
                return Err(RetrievalError::Format("two index files for the same window length".into()));
            }
        }
        Ok(Self { windows: map, store })
    }

    pub fn windows(&self) -> impl Iterator<Item = &WindowIndex<T>> {
        self.windows.values()
    }

    pub fn window(&self, seconds: u32) -> Option<&WindowIndex<T>> {
        self.windows.get(&seconds)
    }

    pub fn store(&self) -> &PlayStore<T> {
        &self.store
    }

    pub fn play(&self, id: &PlayId) -> Option<&Play<T>> {
        self.store.get(id)
    }

    pub fn query(&self, q: &Query<T>) -> Result<Vec<RankedResult<T>>, RetrievalError> {
        self.query_detailed(q).map(|o| o.results)
    }

    pub fn query_detailed(&self, q: &Query<T>) -> Result<QueryOutcome<T>, RetrievalError> {
        let index = self
            .windows
            .get(&q.play.window_seconds)
            .ok_or(RetrievalError::NoWindow(q.play.window_seconds))?;
        check_query(index, q)?;
        let play = match &q.present {
            Some(present) => impute_missing(&q.play, present, &index.tree.root().template_offense, &index.tree.root().template_defense, index.metric())?,
            None => q.play.clone(),
        };
        let (aligned, query_perms, keys, entries) = match q.method {
            Method::Tree => tree_candidates(index, &play)?,
            Method::Baseline => baseline_candidates(index, &play)?,
        };
        let selection = q.selected.through(&query_perms);
        let query_inverse = query_perms.inverse();
        let mut scored = entries
            .par_iter()
            .map(|e| {
                let raw = self.store.get(&e.play_id).ok_or_else(|| RetrievalError::UnknownPlay(e.play_id.clone()))?;
                Ok((selected_distance(&aligned, &selection, raw, &e.perms), *e))
            })
            .collect::<Result<Vec<(T, &Entry)>, RetrievalError>>()?;
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.play_id.cmp(&b.1.play_id)));
        let mut ranked: Vec<(T, T, &Entry)> = scored
            .into_iter()
            .map(|(d, e)| {
                let boost = q.boosts.get(&e.play_id).copied().unwrap_or(1.0);
                (d, d / T::of(boost), e)
            })
            .collect();
        // stable: equal scores keep distance order
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let candidates = ranked.len();
        let results = ranked
            .into_iter()
            .take(q.k)
            .enumerate()
            .map(|(i, (distance, score, e))| RankedResult {
                rank: i + 1,
                play_id: e.play_id.clone(),
                distance,
                score,
                correspondence: e.perms.clone(),
                query_order: e.perms.then(&query_inverse),
            })
            .collect();
        Ok(QueryOutcome {
            results,
            keys,
            query_perms,
            candidates,
        })
    }
}

fn check_query<T: Scalar>(index: &WindowIndex<T>, q: &Query<T>) -> Result<(), RetrievalError> {
    let tree = &index.tree;
    if q.play.frame_count() != tree.frames || q.play.players_per_team != tree.players_per_team {
        return Err(RetrievalError::QueryShape {
            window: index.window_seconds,
            frames: tree.frames,
            players: tree.players_per_team,
            actual_frames: q.play.frame_count(),
            actual_players: q.play.players_per_team,
        });
    }
    if q.selected.is_empty() {
        return Err(RetrievalError::EmptySelection);
    }
    let agents = q.play.agent_count();
    if let Some(&a) = q.selected.agents.iter().find(|&&a| a >= agents) {
        return Err(ModelError::AgentOutOfRange { agent: a, count: agents }.into());
    }
    if q.k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if let Some((id, _)) = q.boosts.iter().find(|(_, &b)| !(b.is_finite() && b >= 1.0)) {
        return Err(RetrievalError::BadBoost(id.clone()));
    }
    Ok(())
}

type Candidates<'a, T> = (Play<T>, TeamPerms, Vec<usize>, Vec<&'a Entry>);

fn tree_candidates<'a, T: Scalar>(index: &'a WindowIndex<T>, play: &Play<T>) -> Result<Candidates<'a, T>, RetrievalError> {
    let tree = &index.tree;
    let alignment = tree.align(play)?;
    let mut keys = vec![alignment.leaf];
    if index.probe_leaves > 1 {
        if let Some(parent) = tree.nodes[alignment.leaf].parent {
            // the query as the parent saw it when routing
            let upto = alignment.steps[..alignment.steps.len() - 1]
                .iter()
                .fold(TeamPerms::identity(play.players_per_team), |acc, s| acc.then(s));
            let at_parent = play.permuted_both(&upto)?;
            keys.extend(
                tree.ranked_children(parent, at_parent.coords())
                    .into_iter()
                    .filter(|&n| n != alignment.leaf && tree.nodes[n].is_leaf())
                    .take(index.probe_leaves - 1),
            );
        }
    }
    let entries = keys.iter().flat_map(|k| index.buckets.get(k).into_iter().flatten()).collect();
    Ok((alignment.aligned, alignment.perms, keys, entries))
}

fn baseline_candidates<'a, T: Scalar>(index: &'a WindowIndex<T>, play: &Play<T>) -> Result<Candidates<'a, T>, RetrievalError> {
    let base = index.baseline.as_ref().ok_or(RetrievalError::NoBaseline)?;
    let ball = flatten(play, &AgentSelection::ball_only())?;
    let (key, _) = nearest(&base.centroids, &ball);
    let (aligned, perms, _) = align_play(&base.template_offense, &base.template_defense, play, index.metric())?;
    let entries = base.buckets.get(&key).into_iter().flatten().collect();
    Ok((aligned, perms, vec![key], entries))
}

/// L2 distance between an aligned query and a raw candidate viewed through
/// its stored alignment, over the selected aligned slots.
pub fn selected_distance<T: Scalar>(aligned_query: &Play<T>, selection: &AgentSelection, candidate: &Play<T>, perms: &TeamPerms) -> T {
    let m = candidate.players_per_team;
    let w = candidate.frame_width();
    let raw_agent = |slot: usize| {
        if slot < m {
            perms.offense.mapping()[slot]
        } else {
            m + perms.defense.mapping()[slot - m]
        }
    };
    let pairs: Vec<(usize, usize)> = selection.agents.iter().map(|&s| (2 * s, 2 * raw_agent(s))).collect();
    let q = aligned_query.coords();
    let c = candidate.coords();
    let mut acc = T::zero();
    for f in 0..candidate.frame_count() {
        let base = f * w;
        for &(qs, cs) in &pairs {
            let dx = q[base + qs] - c[base + cs];
            let dy = q[base + qs + 1] - c[base + cs + 1];
            acc += dx * dx + dy * dy;
        }
        if selection.ball {
            for i in w - 3..w {
                let d = q[base + i] - c[base + i];
                acc += d * d;
            }
        }
    }
    acc.sqrt()
}

/// Replaces agents outside `present` with template trajectories. Observed
/// agents claim the template slots they fit best; each missing agent takes
/// one of the remaining slots.
pub fn impute_missing<T: Scalar>(
    play: &Play<T>,
    present: &AgentSelection,
    offense: &Template<T>,
    defense: &Template<T>,
    metric: CostMetric,
) -> Result<Play<T>, RetrievalError> {
    if !present.ball {
        return Err(RetrievalError::Format("the ball trajectory must be present".into()));
    }
    let m = play.players_per_team;
    let mut out = play.clone();
    for (team, template) in [(Team::Offense, offense), (Team::Defense, defense)] {
        let range = play.team_range(team);
        let missing: BTreeSet<usize> = (0..m).filter(|i| !present.agents.contains(&(range.start + i))).collect();
        if missing.is_empty() {
            continue;
        }
        let cost = build_cost_matrix(template, play, team, metric)?;
        let rows: Vec<Vec<T>> = (0..m)
            .map(|r| {
                cost.row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| if missing.contains(&c) { T::zero() } else { v })
                    .collect()
            })
            .collect();
        let (perm, _) = solve_assignment(&CostMatrix::from_rows(&rows)?);
        let w = play.frame_width();
        let coords = out.coords_mut();
        for (slot, &agent) in perm.mapping().iter().enumerate() {
            if !missing.contains(&agent) {
                continue;
            }
            for f in 0..play.frame_count() {
                let [x, y] = template.xy(if template.frames() == 1 { 0 } else { f }, slot);
                let at = f * w + 2 * (range.start + agent);
                coords[at] = x;
                coords[at + 1] = y;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: usize,
    pub upper: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window_seconds: u32,
    pub plays: usize,
    pub depth: usize,
    pub node_count: usize,
    pub leaf_count: usize,
    pub max_leaf_size: usize,
    pub leaf_size_histogram: Vec<HistogramBin>,
    pub layer_costs: Vec<f64>,
    pub baseline_clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub window_lengths: Vec<u32>,
    pub windows: Vec<WindowStats>,
}

pub fn window_stats<T: Scalar>(index: &WindowIndex<T>) -> WindowStats {
    let sizes: Vec<usize> = index.tree.leaves().map(|l| l.size).collect();
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let width = (largest / 10).max(1);
    let mut bins: Vec<HistogramBin> = (0..=largest / width)
        .map(|i| HistogramBin {
            lower: i * width,
            upper: (i + 1) * width - 1,
            count: 0,
        })
        .collect();
    for s in &sizes {
        bins[s / width].count += 1;
    }
    bins.retain(|b| b.count > 0);
    WindowStats {
        window_seconds: index.window_seconds,
        plays: index.play_count(),
        depth: index.tree.depth(),
        node_count: index.tree.nodes.len(),
        leaf_count: sizes.len(),
        max_leaf_size: largest,
        leaf_size_histogram: bins,
        layer_costs: index.tree.layer_costs.iter().map(|c| c.as_f64()).collect(),
        baseline_clusters: index.baseline.as_ref().map(|b| b.centroids.len()),
    }
}

/// Play store file inside an index directory.
pub const PLAY_STORE_FILE: &str = "plays.csv";

/// Index file name for one window length.
pub fn index_file_name(window_seconds: u32) -> String {
    format!("index-w{window_seconds}.json")
}

impl<T: Scalar> PlayIndex<T> {
    /// Writes the play store and one index file per window length.
    pub fn save_dir(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir)?;
        let plays: Vec<Play<T>> = self.store.plays().cloned().collect();
        let file = std::io::BufWriter::new(fs::File::create(dir.join(PLAY_STORE_FILE))?);
        write_plays(file, &plays).map_err(|e| RetrievalError::Format(e.to_string()))?;
        for w in self.windows.values() {
            w.save(&dir.join(index_file_name(w.window_seconds)))?;
        }
        Ok(())
    }

    /// Loads a directory written by [`PlayIndex::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self, RetrievalError> {
        let file = std::io::BufReader::new(fs::File::open(dir.join(PLAY_STORE_FILE))?);
        let plays = read_plays::<T, _>(file).map_err(|e| RetrievalError::Format(format!("{PLAY_STORE_FILE}: {e}")))?;
        let mut windows = Vec::new();
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("index-w") && n.ends_with(".json"))
            .collect();
        names.sort();
        for name in names {
            windows.push(WindowIndex::load(&dir.join(&name)).map_err(|e| RetrievalError::Format(format!("{name}: {e}")))?);
        }
        if windows.is_empty() {
            return Err(RetrievalError::Format(format!("no index files in {}", dir.display())));
        }
        Self::from_parts(windows, PlayStore::new(plays))
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            window_lengths: self.windows.keys().copied().collect(),
            windows: self.windows.values().map(window_stats).collect(),
        }
    }
}
