//! Coarse-to-fine alignment tree.
//!
//! Every node learns one template per team from the plays routed to it,
//! re-orders those templates to agree with its parent, aligns its plays and,
//! unless a stop criterion fires, partitions them with K-means. The K with
//! the best separation score wins. Aligning a new play replays the same
//! path: align against the node templates, step to the nearest child
//! centroid, repeat until a leaf. The leaf id doubles as the hash key used
//! for retrieval.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{
    align_play, build_template_cost_matrix, solve_assignment, AssignmentError, CostMetric,
};
use crate::kmeans::{kmeans, nearest, sample_indices, KMeansConfig, KMeansError};
use crate::model::{Play, PlayId, Team, TeamPerms, Template};
use crate::scalar::{mix_seed, squared_distance, Scalar};
use crate::template::{fit_template, TemplateError, TemplateLearnConfig};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("cannot grow a tree from an empty corpus")]
    Empty,
    #[error("invalid tree config: {0}")]
    Config(String),
    #[error("play {play_id} has {actual_frames} frames / {actual_players} players per team; tree expects {frames} / {players}")]
    ShapeMismatch {
        play_id: String,
        frames: usize,
        players: usize,
        actual_frames: usize,
        actual_players: usize,
    },
    #[error("partition needs K >= 2 (got {0})")]
    TooFewClusters(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

/// Inclusive range of cluster counts tried at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl Default for KRange {
    fn default() -> Self {
        Self { min: 2, max: 10 }
    }
}

impl fmt::Display for KRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

impl FromStr for KRange {
    type Err = String;

    /// Accepts `2..10`, `2..=10` or `2-10`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..=")
            .or_else(|| s.split_once(".."))
            .or_else(|| s.split_once('-'))
            .ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
        let min = a.trim().parse().map_err(|e| format!("bad k min: {e}"))?;
        let max = b.trim().parse().map_err(|e| format!("bad k max: {e}"))?;
        Ok(Self { min, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_leaf_size: usize,
    /// Maximum number of layers, root included.
    pub max_depth: usize,
    pub k_range: KRange,
    pub rng_seed: u64,
    /// Per-node template learning; its seed is re-derived for every node.
    pub template: TemplateLearnConfig,
    pub kmeans_max_iterations: usize,
    /// When set, K-means at a node is fitted on at most this many plays
    /// (seeded sample) and then every play is assigned to the nearest
    /// centroid.
    pub partition_sample_limit: Option<usize>,
}

impl TreeConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        Self {
            max_leaf_size: 2000,
            max_depth: 6,
            k_range: KRange::default(),
            rng_seed,
            template: TemplateLearnConfig::with_seed(rng_seed),
            kmeans_max_iterations: 100,
            partition_sample_limit: None,
        }
    }

    pub fn metric(&self) -> CostMetric {
        self.template.cost_metric
    }

    fn check(&self) -> Result<(), TreeError> {
        if self.k_range.min < 2 {
            return Err(TreeError::Config("k_range min must be at least 2".into()));
        }
        if self.k_range.max < self.k_range.min {
            return Err(TreeError::Config("k_range max below min".into()));
        }
        if self.max_depth < 1 {
            return Err(TreeError::Config("max_depth must be at least 1".into()));
        }
        if self.max_leaf_size < 1 {
            return Err(TreeError::Config("max_leaf_size must be at least 1".into()));
        }
        if self.partition_sample_limit.is_some_and(|s| s < self.k_range.min) {
            return Err(TreeError::Config("partition_sample_limit below k_range min".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ChildLink<T> {
    pub node: NodeId,
    /// K-means centroid of the child's plays, flattened and aligned to the
    /// parent's templates.
    pub centroid: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct TreeNode<T> {
    pub id: NodeId,
    pub layer: usize,
    pub parent: Option<NodeId>,
    pub template_offense: Template<T>,
    pub template_defense: Template<T>,
    /// Slot re-ordering applied to the freshly learned templates so they
    /// agree with the parent's; `None` at the root.
    pub parent_alignment: Option<TeamPerms>,
    pub children: Vec<ChildLink<T>>,
    /// Corpus plays held by a leaf; empty for internal nodes.
    pub play_ids: Vec<PlayId>,
    pub size: usize,
    /// Sum of squared distances of the node's aligned plays to their mean.
    pub scatter: T,
    /// Separation score of the chosen partition, if the node was split.
    pub partition_score: Option<T>,
}

impl<T: Scalar> TreeNode<T> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn template(&self, team: Team) -> &Template<T> {
        match team {
            Team::Offense => &self.template_offense,
            Team::Defense => &self.template_defense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AlignmentTree<T> {
    pub config: TreeConfig,
    pub players_per_team: usize,
    pub frames: usize,
    pub window_seconds: u32,
    pub nodes: Vec<TreeNode<T>>,
    /// Within-cluster pairwise reconstruction cost per layer, normalized by
    /// corpus size. Leaves that stopped early count at every deeper layer.
    pub layer_costs: Vec<T>,
}

/// Where a corpus play ended up during growth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub leaf: NodeId,
    pub perms: TeamPerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeAlignment<T> {
    pub aligned: Play<T>,
    pub leaf: NodeId,
    /// Composition of every per-layer permutation along the path.
    pub perms: TeamPerms,
    pub path: Vec<NodeId>,
    /// Per-node permutation, parallel to `path`.
    pub steps: Vec<TeamPerms>,
    /// Assignment cost against the leaf templates.
    pub cost: T,
}

impl<T: Scalar> AlignmentTree<T> {
    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &TreeNode<T> {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode<T>> {
        self.nodes.get(id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode<T>> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Number of layers, root included.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.layer + 1).max().unwrap_or(0)
    }

    /// Node ids grouped by layer: the stored template sets per layer.
    pub fn layers(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.depth()];
        for n in &self.nodes {
            out[n.layer].push(n.id);
        }
        out
    }

    /// Aligns a play by descending from the root to a leaf.
    pub fn align(&self, play: &Play<T>) -> Result<TreeAlignment<T>, TreeError> {
        if play.frame_count() != self.frames || play.players_per_team != self.players_per_team {
            return Err(TreeError::ShapeMismatch {
                play_id: play.play_id.0.clone(),
                frames: self.frames,
                players: self.players_per_team,
                actual_frames: play.frame_count(),
                actual_players: play.players_per_team,
            });
        }
        let metric = self.config.metric();
        let mut current = play.clone();
        let mut perms = TeamPerms::identity(self.players_per_team);
        let mut path = Vec::new();
        let mut steps = Vec::new();
        let mut id = Self::ROOT;
        loop {
            let node = &self.nodes[id];
            path.push(id);
            let (aligned, step, cost) =
                align_play(&node.template_offense, &node.template_defense, &current, metric)?;
            perms = perms.then(&step);
            steps.push(step);
            current = aligned;
            if node.is_leaf() {
                return Ok(TreeAlignment {
                    aligned: current,
                    leaf: id,
                    perms,
                    path,
                    steps,
                    cost,
                });
            }
            id = route(&node.children, current.coords());
        }
    }

    /// Ranks the children of `parent` by centroid distance to an aligned play.
    pub fn ranked_children(&self, parent: NodeId, aligned: &[T]) -> Vec<NodeId> {
        let mut scored: Vec<(T, usize, NodeId)> = self.nodes[parent]
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| (squared_distance(&c.centroid, aligned), i, c.node))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, _, n)| n).collect()
    }
}

fn route<T: Scalar>(children: &[ChildLink<T>], point: &[T]) -> NodeId {
    let mut best = (children[0].node, T::infinity());
    for c in children {
        let d = squared_distance(&c.centroid, point);
        if d < best.1 {
            best = (c.node, d);
        }
    }
    best.0
}

/// Aligns a play with the tree; see [`AlignmentTree::align`].
pub fn align_with_tree<T: Scalar>(play: &Play<T>, tree: &AlignmentTree<T>) -> Result<TreeAlignment<T>, TreeError> {
    tree.align(play)
}

/// Mean separation of a clustering: for each point, the gap between its
/// distance to the nearest other cluster mean and to its own mean, relative
/// to the former.
pub fn partition_score<T: Scalar>(
    points: &[&[T]],
    labels: &[usize],
    k: usize,
    metric: CostMetric,
) -> Result<T, TreeError> {
    if k < 2 {
        return Err(TreeError::TooFewClusters(k));
    }
    let means = cluster_means(points, labels, k)?;
    let mut total = T::zero();
    for (p, &l) in points.iter().zip(labels) {
        let own = metric.from_squared(squared_distance(p, &means[l]));
        let neighbor = means
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != l)
            .map(|(_, m)| metric.from_squared(squared_distance(p, m)))
            .fold(T::infinity(), T::min);
        if neighbor > T::zero() {
            total += (neighbor - own) / neighbor;
        }
    }
    Ok(total / T::of_usize(points.len()))
}

fn cluster_means<T: Scalar>(points: &[&[T]], labels: &[usize], k: usize) -> Result<Vec<Vec<T>>, TreeError> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.iter()) {
            *s += *v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(TreeError::EmptyCluster(empty));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            let n = T::of_usize(c);
            s.into_iter().map(|v| v / n).collect()
        })
        .collect())
}

/// Chosen clustering for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    pub score: T,
    /// `(K, score)` for every K that produced a valid clustering.
    pub scores: Vec<(usize, T)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionOptions {
    pub k_range: KRange,
    pub seed: u64,
    pub metric: CostMetric,
    pub kmeans_max_iterations: usize,
    pub sample_limit: Option<usize>,
}

/// Runs K-means for every K in range and keeps the clustering with the
/// highest separation score (ties go to the smaller K). `None` means the
/// data cannot be split.
pub fn choose_partition<T: Scalar>(
    points: &[&[T]],
    options: &PartitionOptions,
) -> Result<Option<Partition<T>>, TreeError> {
    if options.k_range.min < 2 {
        return Err(TreeError::TooFewClusters(options.k_range.min));
    }
    let sample: Vec<&[T]> = sample_indices(points.len(), options.sample_limit, mix_seed(options.seed, 0x5a))
        .into_iter()
        .map(|i| points[i])
        .collect();
    let kmax = options.k_range.max.min(sample.len());
    let cfg = KMeansConfig {
        max_iterations: options.kmeans_max_iterations,
        seed: options.seed,
        restarts: 1,
    };
    let mut best: Option<Partition<T>> = None;
    let mut scores = Vec::new();
    for k in options.k_range.min..=kmax {
        let km = match kmeans(&sample, k, &cfg) {
            Ok(km) => km,
            Err(KMeansError::Degenerate { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        let score = match partition_score(&sample, &km.labels, k, options.metric) {
            Ok(s) => s,
            Err(TreeError::EmptyCluster(_)) => continue,
            Err(e) => return Err(e),
        };
        scores.push((k, score));
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Partition {
                k,
                centroids: km.centroids,
                score,
                scores: Vec::new(),
            });
        }
    }
    Ok(best.map(|b| Partition { scores, ..b }))
}

/// Grows the tree; see [`grow_tree_with_placements`].
pub fn grow_tree<T: Scalar>(plays: &[Play<T>], config: &TreeConfig) -> Result<AlignmentTree<T>, TreeError> {
    grow_tree_with_placements(plays, config).map(|(t, _)| t)
}

struct Pending<T> {
    id: NodeId,
    parent: Option<NodeId>,
    members: Vec<usize>,
    data: Vec<Play<T>>,
    perms: Vec<TeamPerms>,
}

struct Processed<T> {
    node: TreeNode<T>,
    members: Vec<usize>,
    perms: Vec<TeamPerms>,
    split: Option<Vec<ChildData<T>>>,
}

struct ChildData<T> {
    centroid: Vec<T>,
    members: Vec<usize>,
    data: Vec<Play<T>>,
    perms: Vec<TeamPerms>,
}

/// Grows the tree layer by layer and also reports, per corpus play, the leaf
/// it landed in and the composed permutation that aligned it.
pub fn grow_tree_with_placements<T: Scalar>(
    plays: &[Play<T>],
    config: &TreeConfig,
) -> Result<(AlignmentTree<T>, Vec<Placement>), TreeError> {
    config.check()?;
    let first = plays.first().ok_or(TreeError::Empty)?;
    let (frames, players) = (first.frame_count(), first.players_per_team);
    for p in plays {
        if p.frame_count() != frames || p.players_per_team != players {
            return Err(TreeError::ShapeMismatch {
                play_id: p.play_id.0.clone(),
                frames,
                players,
                actual_frames: p.frame_count(),
                actual_players: p.players_per_team,
            });
        }
    }

    let total = plays.len();
    let mut nodes: Vec<Option<TreeNode<T>>> = vec![None];
    let mut placements: Vec<Option<Placement>> = vec![None; total];
    let mut layer_costs = Vec::new();
    let mut carried = T::zero();
    let mut pending = vec![Pending {
        id: 0,
        parent: None,
        members: (0..total).collect(),
        data: plays.to_vec(),
        perms: vec![TeamPerms::identity(players); total],
    }];

    let mut layer = 0;
    while !pending.is_empty() {
        let parents: Vec<Option<(Template<T>, Template<T>)>> = pending
            .iter()
            .map(|p| {
                p.parent.map(|pid| {
                    let n = nodes[pid].as_ref().expect("parent built");
                    (n.template_offense.clone(), n.template_defense.clone())
                })
            })
            .collect();
        let processed = pending
            .into_par_iter()
            .zip(parents.into_par_iter())
            .map(|(p, parent)| process_node(p, parent, layer, config))
            .collect::<Result<Vec<_>, _>>()?;

        let mut layer_sum = carried;
        let mut next = Vec::new();
        for mut out in processed {
            let pair_cost = T::of(2.0) * T::of_usize(out.node.size) * out.node.scatter;
            layer_sum += pair_cost;
            match out.split.take() {
                None => {
                    carried += pair_cost;
                    out.node.play_ids = out.members.iter().map(|&i| plays[i].play_id.clone()).collect();
                    for (&m, perms) in out.members.iter().zip(out.perms) {
                        placements[m] = Some(Placement {
                            leaf: out.node.id,
                            perms,
                        });
                    }
                }
                Some(children) => {
                    for child in children {
                        let id = nodes.len();
                        nodes.push(None);
                        out.node.children.push(ChildLink {
                            node: id,
                            centroid: child.centroid,
                        });
                        next.push(Pending {
                            id,
                            parent: Some(out.node.id),
                            members: child.members,
                            data: child.data,
                            perms: child.perms,
                        });
                    }
                }
            }
            let id = out.node.id;
            nodes[id] = Some(out.node);
        }
        layer_costs.push(layer_sum / T::of_usize(total));
        pending = next;
        layer += 1;
    }

    let tree = AlignmentTree {
        config: *config,
        players_per_team: players,
        frames,
        window_seconds: first.window_seconds,
        nodes: nodes.into_iter().map(|n| n.expect("every node built")).collect(),
        layer_costs,
    };
    let placements = placements
        .into_iter()
        .map(|p| p.expect("every play placed in a leaf"))
        .collect();
    Ok((tree, placements))
}

fn process_node<T: Scalar>(
    pending: Pending<T>,
    parent: Option<(Template<T>, Template<T>)>,
    layer: usize,
    config: &TreeConfig,
) -> Result<Processed<T>, TreeError> {
    let Pending {
        id,
        parent: parent_id,
        members,
        data,
        perms,
    } = pending;
    let metric = config.metric();
    let node_seed = mix_seed(config.rng_seed, id as u64);

    let mut templates = Vec::with_capacity(2);
    for (salt, team) in [(1u64, Team::Offense), (2, Team::Defense)] {
        let cfg = TemplateLearnConfig {
            rng_seed: mix_seed(node_seed, salt),
            ..config.template
        };
        templates.push(fit_template(&data, team, &cfg)?.template);
    }
    let mut template_defense = templates.pop().expect("two templates");
    let mut template_offense = templates.pop().expect("two templates");

    let parent_alignment = match &parent {
        Some((po, pd)) => {
            let (so, _) = solve_assignment(&build_template_cost_matrix(po, &template_offense, metric)?);
            let (sd, _) = solve_assignment(&build_template_cost_matrix(pd, &template_defense, metric)?);
            template_offense = template_offense.permuted(&so);
            template_defense = template_defense.permuted(&sd);
            Some(TeamPerms {
                offense: so,
                defense: sd,
            })
        }
        None => None,
    };

    let solved = data
        .par_iter()
        .map(|p| align_play(&template_offense, &template_defense, p, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let mut aligned = Vec::with_capacity(solved.len());
    let mut composed = Vec::with_capacity(solved.len());
    for ((play, step, _), prev) in solved.into_iter().zip(&perms) {
        aligned.push(play);
        composed.push(prev.then(&step));
    }
    drop(data);

    let points: Vec<&[T]> = aligned.iter().map(|p| p.coords()).collect();
    let scatter = scatter(&points);
    let mut node = TreeNode {
        id,
        layer,
        parent: parent_id,
        template_offense,
        template_defense,
        parent_alignment,
        children: Vec::new(),
        play_ids: Vec::new(),
        size: aligned.len(),
        scatter,
        partition_score: None,
    };

    let stop = aligned.len() <= config.max_leaf_size || layer + 1 >= config.max_depth;
    let partition = if stop {
        None
    } else {
        choose_partition(
            &points,
            &PartitionOptions {
                k_range: config.k_range,
                seed: mix_seed(node_seed, 3),
                metric,
                kmeans_max_iterations: config.kmeans_max_iterations,
                sample_limit: config.partition_sample_limit,
            },
        )?
    };
    let Some(partition) = partition else {
        return Ok(Processed {
            node,
            members,
            perms: composed,
            split: None,
        });
    };

    // Membership is defined by nearest stored centroid so that routing a
    // corpus play later lands exactly where growth put it.
    let labels: Vec<usize> = points.par_iter().map(|p| nearest(&partition.centroids, p).0).collect();
    drop(points);
    let k = partition.centroids.len();
    let mut groups: Vec<ChildData<T>> = partition
        .centroids
        .into_iter()
        .map(|centroid| ChildData {
            centroid,
            members: Vec::new(),
            data: Vec::new(),
            perms: Vec::new(),
        })
        .collect();
    for (((play, perm), member), label) in aligned.into_iter().zip(composed).zip(members).zip(labels) {
        let g = &mut groups[label];
        g.members.push(member);
        g.data.push(play);
        g.perms.push(perm);
    }
    groups.retain(|g| !g.members.is_empty());
    debug_assert!(groups.len() <= k);
    if groups.len() < 2 {
        let g = groups.pop().expect("one non-empty group");
        return Ok(Processed {
            node,
            members: g.members,
            perms: g.perms,
            split: None,
        });
    }
    node.partition_score = Some(partition.score);
    Ok(Processed {
        node,
        members: Vec::new(),
        perms: Vec::new(),
        split: Some(groups),
    })
}

fn scatter<T: Scalar>(points: &[&[T]]) -> T {
    let Some(first) = points.first() else {
        return T::zero();
    };
    let mut mean = vec![T::zero(); first.len()];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += *v;
        }
    }
    let n = T::of_usize(points.len());
    mean.iter_mut().for_each(|m| *m /= n);
    points.iter().fold(T::zero(), |acc, p| acc + squared_distance(p, &mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| vec![x]).collect()
    }

    fn refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn score_for_four_points() {
        let pts = one_d(&[0.0, 1.0, 10.0, 11.0]);
        let e = partition_score(&refs(&pts), &[0, 0, 1, 1], 2, CostMetric::Euclidean).unwrap();
        // means 0.5 and 10.5; the outer points are 10.5 from the other mean,
        // the inner ones 9.5
        let expected = (10.0 / 10.5 + 9.0 / 9.5) / 2.0;
        assert!((e - expected).abs() < 1e-12);
        let e2 = partition_score(&refs(&pts), &[0, 0, 1, 1], 2, CostMetric::Squared).unwrap();
        let expected2 = ((110.25 - 0.25) / 110.25 + (90.25 - 0.25) / 90.25) / 2.0;
        assert!((e2 - expected2).abs() < 1e-12);
    }

    #[test]
    fn score_is_one_for_points_at_their_means() {
        let pts = one_d(&[0.0, 0.0, 50.0, 50.0]);
        let e = partition_score(&refs(&pts), &[0, 0, 1, 1], 2, CostMetric::Euclidean).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn mixed_margins_average() {
        // c0 = {0, 10} has mean 5, c1 = {7.5, 7.5} has mean 7.5
        let pts = one_d(&[0.0, 10.0, 7.5, 7.5]);
        let e = partition_score(&refs(&pts), &[0, 0, 1, 1], 2, CostMetric::Euclidean).unwrap();
        let expected = ((7.5 - 5.0) / 7.5 + (2.5 - 5.0) / 2.5 + 2.0 * (2.5 - 0.0) / 2.5) / 4.0;
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_neighbor_distance_contributes_zero() {
        // both clusters share the mean 1
        let pts = one_d(&[0.0, 2.0, 1.0, 1.0]);
        let e = partition_score(&refs(&pts), &[0, 0, 1, 1], 2, CostMetric::Euclidean).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn score_errors() {
        let pts = one_d(&[0.0, 1.0]);
        assert_eq!(
            partition_score(&refs(&pts), &[0, 0], 1, CostMetric::Euclidean),
            Err(TreeError::TooFewClusters(1))
        );
        assert_eq!(
            partition_score(&refs(&pts), &[0, 0], 2, CostMetric::Euclidean),
            Err(TreeError::EmptyCluster(1))
        );
    }

    fn opts(seed: u64) -> PartitionOptions {
        PartitionOptions {
            k_range: KRange::default(),
            seed,
            metric: CostMetric::Squared,
            kmeans_max_iterations: 100,
            sample_limit: None,
        }
    }

    #[test]
    fn identical_points_do_not_split() {
        let pts = vec![vec![3.0, 4.0]; 30];
        assert_eq!(choose_partition(&refs(&pts), &opts(1)).unwrap(), None);
    }

    #[test]
    fn k_range_parses() {
        assert_eq!("2..10".parse::<KRange>().unwrap(), KRange { min: 2, max: 10 });
        assert_eq!("3-7".parse::<KRange>().unwrap(), KRange { min: 3, max: 7 });
        assert!("x".parse::<KRange>().is_err());
    }

    fn two_formation_corpus(n: usize, seed: u64) -> Vec<Play<f64>> {
        use crate::model::Frame;
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let formations = [
            [[50.0, 5.0], [60.0, 40.0], [70.0, 25.0], [80.0, 10.0], [85.0, 45.0]],
            [[88.0, 25.0], [75.0, 20.0], [75.0, 30.0], [60.0, 5.0], [60.0, 45.0]],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let base = formations[i % 2];
                let mut offense: Vec<[f64; 2]> =
                    base.iter().map(|[x, y]| [x + rng.gen_range(-2.0..2.0), y + rng.gen_range(-2.0..2.0)]).collect();
                offense.shuffle(&mut rng);
                let frames: Vec<_> = (0..3)
                    .map(|f| {
                        let mut agents: Vec<[f64; 2]> = offense.iter().map(|[x, y]| [x + f as f64, *y]).collect();
                        agents.extend(offense.iter().map(|[x, y]| [x - 3.0, *y + 1.0]));
                        Frame {
                            timestamp: f as f64,
                            agents,
                            ball: [base[0][0], base[0][1], 4.0],
                        }
                    })
                    .collect();
                Play::from_frames(format!("p{i}").as_str().into(), "g".into(), 1, 3.0, 5, &frames).unwrap()
            })
            .collect()
    }

    fn small_config(seed: u64) -> TreeConfig {
        TreeConfig {
            max_leaf_size: 10,
            max_depth: 3,
            k_range: KRange { min: 2, max: 4 },
            ..TreeConfig::with_seed(seed)
        }
    }

    #[test]
    fn grows_and_routes_corpus_back_to_its_leaf() {
        let plays = two_formation_corpus(60, 5);
        let (tree, placements) = grow_tree_with_placements(&plays, &small_config(9)).unwrap();
        assert!(tree.root().children.len() >= 2);
        assert_eq!(tree.leaves().map(|l| l.size).sum::<usize>(), plays.len());
        for (play, placed) in plays.iter().zip(&placements) {
            let a = tree.align(play).unwrap();
            assert_eq!(a.leaf, placed.leaf);
            assert_eq!(a.perms, placed.perms);
            assert_eq!(a.aligned, play.permuted_both(&a.perms).unwrap());
            assert!(tree.nodes[a.leaf].play_ids.contains(&play.play_id));
        }
        for w in tree.layer_costs.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn root_split_separates_formations() {
        let plays = two_formation_corpus(40, 8);
        let cfg = TreeConfig {
            max_depth: 2,
            ..small_config(1)
        };
        let (tree, placements) = grow_tree_with_placements(&plays, &cfg).unwrap();
        assert_eq!(tree.root().children.len(), 2);
        for (i, p) in placements.iter().enumerate() {
            assert_eq!(p.leaf, placements[i % 2].leaf);
        }
        assert_ne!(placements[0].leaf, placements[1].leaf);
    }

    #[test]
    fn growth_is_deterministic() {
        let plays = two_formation_corpus(30, 2);
        let a = grow_tree(&plays, &small_config(4)).unwrap();
        let b = grow_tree(&plays, &small_config(4)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn small_corpus_is_a_single_leaf() {
        let plays = two_formation_corpus(6, 3);
        let tree = grow_tree(&plays, &small_config(0)).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.layer_costs.len(), 1);
        assert!(tree.root().parent_alignment.is_none());
    }

    #[test]
    fn config_and_shape_errors() {
        let plays = two_formation_corpus(4, 1);
        let bad = TreeConfig {
            k_range: KRange { min: 1, max: 3 },
            ..small_config(0)
        };
        assert!(matches!(grow_tree(&plays, &bad), Err(TreeError::Config(_))));
        assert_eq!(grow_tree::<f64>(&[], &small_config(0)), Err(TreeError::Empty));
    }
}
