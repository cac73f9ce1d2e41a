//! Domain types shared across the crate.
//!
//! A [`Play`] stores its trajectories as one dense frame-major buffer. Each
//! frame holds `2 * players_per_team` agents as `(x, y)` pairs, offense
//! first, followed by the ball as `(x, y, z)`. With the default 5v5 roster a
//! frame is 23 numbers and a 4 s window at 25 Hz flattens to 2300.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const COURT_LENGTH_FT: f64 = 94.0;
pub const COURT_WIDTH_FT: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("agent selection is empty")]
    EmptyScope,
    #[error("agent index {agent} out of range for {count} agents")]
    AgentOutOfRange { agent: usize, count: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cost matrix entry ({row}, {col}) is negative")]
    NegativeCost { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GameId(pub String);

impl fmt::Display for PlayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PlayId {
    fn from(s: &str) -> Self {
        PlayId(s.to_string())
    }
}

impl From<&str> for GameId {
    fn from(s: &str) -> Self {
        GameId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Offense,
    Defense,
}

impl Team {
    pub const BOTH: [Team; 2] = [Team::Offense, Team::Defense];
}

impl fmt::Display for Team {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Team::Offense => f.write_str("offense"),
            Team::Defense => f.write_str("defense"),
        }
    }
}

/// Roster and sampling configuration every play is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RosterConfig {
    pub players_per_team: usize,
    pub sample_rate_hz: f64,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            players_per_team: 5,
            sample_rate_hz: 25.0,
        }
    }
}

impl RosterConfig {
    pub fn frames_for(&self, window_seconds: u32) -> usize {
        (f64::from(window_seconds) * self.sample_rate_hz).round() as usize
    }
}

/// One sampled instant: agent positions (offense then defense) plus the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub timestamp: f64,
    pub agents: Vec<[T; 2]>,
    pub ball: [T; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Play<T> {
    pub play_id: PlayId,
    pub game_id: GameId,
    pub start_time: f64,
    pub window_seconds: u32,
    pub sample_rate_hz: f64,
    pub players_per_team: usize,
    frames: usize,
    coords: Vec<T>,
}

impl<T: Scalar> Play<T> {
    /// Builds a play from a dense frame-major coordinate buffer.
    pub fn from_coords(
        play_id: PlayId,
        game_id: GameId,
        start_time: f64,
        window_seconds: u32,
        sample_rate_hz: f64,
        players_per_team: usize,
        coords: Vec<T>,
    ) -> Result<Self, ModelError> {
        let width = frame_width(players_per_team);
        if !coords.len().is_multiple_of(width) {
            return Err(ModelError::DimensionMismatch {
                expected: width * (coords.len() / width + 1),
                actual: coords.len(),
            });
        }
        Ok(Self {
            play_id,
            game_id,
            start_time,
            window_seconds,
            sample_rate_hz,
            players_per_team,
            frames: coords.len() / width,
            coords,
        })
    }

    pub fn from_frames(
        play_id: PlayId,
        game_id: GameId,
        window_seconds: u32,
        sample_rate_hz: f64,
        players_per_team: usize,
        frames: &[Frame<T>],
    ) -> Result<Self, ModelError> {
        let agents = 2 * players_per_team;
        let mut coords = Vec::with_capacity(frames.len() * frame_width(players_per_team));
        for frame in frames {
            if frame.agents.len() != agents {
                return Err(ModelError::DimensionMismatch {
                    expected: agents,
                    actual: frame.agents.len(),
                });
            }
            for xy in &frame.agents {
                coords.extend_from_slice(xy);
            }
            coords.extend_from_slice(&frame.ball);
        }
        let start_time = frames.first().map_or(0.0, |f| f.timestamp);
        Self::from_coords(
            play_id,
            game_id,
            start_time,
            window_seconds,
            sample_rate_hz,
            players_per_team,
            coords,
        )
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn agent_count(&self) -> usize {
        2 * self.players_per_team
    }

    pub fn frame_width(&self) -> usize {
        frame_width(self.players_per_team)
    }

    /// Agent index range occupied by a team.
    pub fn team_range(&self, team: Team) -> Range<usize> {
        team_range(self.players_per_team, team)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [T] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn frame_slice(&self, frame: usize) -> &[T] {
        let w = self.frame_width();
        &self.coords[frame * w..(frame + 1) * w]
    }

    pub fn agent(&self, frame: usize, agent: usize) -> [T; 2] {
        let base = frame * self.frame_width() + 2 * agent;
        [self.coords[base], self.coords[base + 1]]
    }

    pub fn ball(&self, frame: usize) -> [T; 3] {
        let base = frame * self.frame_width() + 4 * self.players_per_team;
        [self.coords[base], self.coords[base + 1], self.coords[base + 2]]
    }

    pub fn frame(&self, frame: usize) -> Frame<T> {
        Frame {
            timestamp: self.start_time + frame as f64 / self.sample_rate_hz,
            agents: (0..self.agent_count()).map(|a| self.agent(frame, a)).collect(),
            ball: self.ball(frame),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame<T>> + '_ {
        (0..self.frames).map(|f| self.frame(f))
    }

    /// Reorders one team's agents: slot `s` of the result holds source agent
    /// `perm.mapping()[s]` of that team, in every frame.
    pub fn permuted(&self, team: Team, perm: &PermutationMap) -> Result<Self, ModelError> {
        if perm.len() != self.players_per_team {
            return Err(ModelError::DimensionMismatch {
                expected: self.players_per_team,
                actual: perm.len(),
            });
        }
        let mut out = self.clone();
        let offset = self.team_range(team).start;
        let w = self.frame_width();
        for f in 0..self.frames {
            let src = &self.coords[f * w..(f + 1) * w];
            let dst = &mut out.coords[f * w..(f + 1) * w];
            for (slot, &agent) in perm.mapping().iter().enumerate() {
                let d = 2 * (offset + slot);
                let s = 2 * (offset + agent);
                dst[d] = src[s];
                dst[d + 1] = src[s + 1];
            }
        }
        Ok(out)
    }

    pub fn permuted_both(&self, perms: &TeamPerms) -> Result<Self, ModelError> {
        self.permuted(Team::Offense, &perms.offense)?
            .permuted(Team::Defense, &perms.defense)
    }
}

pub fn frame_width(players_per_team: usize) -> usize {
    4 * players_per_team + 3
}

pub fn team_range(players_per_team: usize, team: Team) -> Range<usize> {
    match team {
        Team::Offense => 0..players_per_team,
        Team::Defense => players_per_team..2 * players_per_team,
    }
}

/// A subset of agents (by index into the play's agent list) and optionally
/// the ball.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentSelection {
    pub agents: BTreeSet<usize>,
    pub ball: bool,
}

impl AgentSelection {
    pub fn new(agents: impl IntoIterator<Item = usize>, ball: bool) -> Self {
        Self {
            agents: agents.into_iter().collect(),
            ball,
        }
    }

    pub fn all(players_per_team: usize) -> Self {
        Self::new(0..2 * players_per_team, true)
    }

    pub fn team(players_per_team: usize, team: Team, ball: bool) -> Self {
        Self::new(team_range(players_per_team, team), ball)
    }

    pub fn ball_only() -> Self {
        Self::new([], true)
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty() && !self.ball
    }

    pub fn flat_len(&self, frames: usize) -> usize {
        frames * (2 * self.agents.len() + if self.ball { 3 } else { 0 })
    }

    /// Translates agent indices of a raw play into slot indices of the same
    /// play after `perms` has been applied.
    pub fn through(&self, perms: &TeamPerms) -> Self {
        let m = perms.offense.len();
        let inv_o = perms.offense.inverse();
        let inv_d = perms.defense.inverse();
        let agents = self
            .agents
            .iter()
            .map(|&a| {
                if a < m {
                    inv_o.mapping()[a]
                } else {
                    m + inv_d.mapping()[a - m]
                }
            })
            .collect();
        Self {
            agents,
            ball: self.ball,
        }
    }
}

/// Lays out the selected channels frame-major: for each frame the selected
/// agents in ascending index order as `(x, y)`, then the ball `(x, y, z)`.
pub fn flatten<T: Scalar>(play: &Play<T>, scope: &AgentSelection) -> Result<Vec<T>, ModelError> {
    let mut out = Vec::with_capacity(scope.flat_len(play.frame_count()));
    flatten_into(play, scope, &mut out)?;
    Ok(out)
}

pub fn flatten_into<T: Scalar>(
    play: &Play<T>,
    scope: &AgentSelection,
    out: &mut Vec<T>,
) -> Result<(), ModelError> {
    if scope.is_empty() {
        return Err(ModelError::EmptyScope);
    }
    let count = play.agent_count();
    if let Some(&bad) = scope.agents.iter().find(|&&a| a >= count) {
        return Err(ModelError::AgentOutOfRange { agent: bad, count });
    }
    let ball_at = 2 * count;
    for f in 0..play.frame_count() {
        let frame = play.frame_slice(f);
        for &a in &scope.agents {
            out.push(frame[2 * a]);
            out.push(frame[2 * a + 1]);
        }
        if scope.ball {
            out.extend_from_slice(&frame[ball_at..ball_at + 3]);
        }
    }
    Ok(())
}

/// Agent reordering for one team: `mapping[slot]` is the source agent placed
/// in that slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermutationMap {
    mapping: Vec<usize>,
}

impl TryFrom<Vec<usize>> for PermutationMap {
    type Error = ModelError;

    fn try_from(mapping: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(mapping)
    }
}

impl From<PermutationMap> for Vec<usize> {
    fn from(p: PermutationMap) -> Self {
        p.mapping
    }
}

impl PermutationMap {
    pub fn new(mapping: Vec<usize>) -> Result<Self, ModelError> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n {
                return Err(ModelError::InvalidPermutation(format!(
                    "index {m} out of range 0..{n}"
                )));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(ModelError::InvalidPermutation(format!("index {m} repeated")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (slot, &src) in self.mapping.iter().enumerate() {
            inv[src] = slot;
        }
        Self { mapping: inv }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &PermutationMap) -> Self {
        debug_assert_eq!(self.len(), next.len());
        Self {
            mapping: next.mapping.iter().map(|&s| self.mapping[s]).collect(),
        }
    }
}

impl fmt::Display for PermutationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.mapping.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

/// One permutation per team; the ball is never permuted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TeamPerms {
    pub offense: PermutationMap,
    pub defense: PermutationMap,
}

impl TeamPerms {
    pub fn identity(players_per_team: usize) -> Self {
        Self {
            offense: PermutationMap::identity(players_per_team),
            defense: PermutationMap::identity(players_per_team),
        }
    }

    pub fn get(&self, team: Team) -> &PermutationMap {
        match team {
            Team::Offense => &self.offense,
            Team::Defense => &self.defense,
        }
    }

    pub fn set(&mut self, team: Team, perm: PermutationMap) {
        match team {
            Team::Offense => self.offense = perm,
            Team::Defense => self.defense = perm,
        }
    }

    pub fn then(&self, next: &TeamPerms) -> Self {
        Self {
            offense: self.offense.then(&next.offense),
            defense: self.defense.then(&next.defense),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            offense: self.offense.inverse(),
            defense: self.defense.inverse(),
        }
    }
}

/// Square matrix of non-negative finite assignment costs, row = template
/// slot, column = play agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(n: usize, entries: Vec<T>) -> Result<Self, ModelError> {
        if entries.len() != n * n {
            return Err(ModelError::DimensionMismatch {
                expected: n * n,
                actual: entries.len(),
            });
        }
        for (i, v) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFinite("cost matrix"));
            }
            if *v < T::zero() {
                return Err(ModelError::NegativeCost {
                    row: i / n,
                    col: i % n,
                });
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ModelError> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(n, entries)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }
}

/// Canonical slot trajectories for one team at one tree node.
///
/// Layout is frame-major `[frame][slot][x, y]`. A template with a single
/// frame is a per-slot mean position and is broadcast over every frame of
/// the play it is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Template<T> {
    pub team: Team,
    slots: usize,
    frames: usize,
    positions: Vec<T>,
}

impl<T: Scalar> Template<T> {
    pub fn new(team: Team, slots: usize, frames: usize, positions: Vec<T>) -> Result<Self, ModelError> {
        if positions.len() != 2 * slots * frames {
            return Err(ModelError::DimensionMismatch {
                expected: 2 * slots * frames,
                actual: positions.len(),
            });
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("template"));
        }
        Ok(Self {
            team,
            slots,
            frames,
            positions,
        })
    }

    /// Copies one team of a play, in the play's agent order.
    pub fn from_play(play: &Play<T>, team: Team) -> Self {
        let range = play.team_range(team);
        let mut positions = Vec::with_capacity(2 * range.len() * play.frame_count());
        for f in 0..play.frame_count() {
            let frame = play.frame_slice(f);
            positions.extend_from_slice(&frame[2 * range.start..2 * range.end]);
        }
        Self {
            team,
            slots: range.len(),
            frames: play.frame_count(),
            positions,
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn xy(&self, frame: usize, slot: usize) -> [T; 2] {
        let base = 2 * (frame * self.slots + slot);
        [self.positions[base], self.positions[base + 1]]
    }

    /// Collapses the trajectory into one mean position per slot.
    pub fn mean_position(&self) -> Self {
        let mut positions = vec![T::zero(); 2 * self.slots];
        for f in 0..self.frames {
            for s in 0..self.slots {
                let [x, y] = self.xy(f, s);
                positions[2 * s] += x;
                positions[2 * s + 1] += y;
            }
        }
        let n = T::of_usize(self.frames.max(1));
        positions.iter_mut().for_each(|v| *v /= n);
        Self {
            team: self.team,
            slots: self.slots,
            frames: 1,
            positions,
        }
    }

    /// Reorders slots: slot `s` of the result is slot `perm.mapping()[s]`.
    pub fn permuted(&self, perm: &PermutationMap) -> Self {
        let mut positions = self.positions.clone();
        for f in 0..self.frames {
            for (slot, &src) in perm.mapping().iter().enumerate() {
                let d = 2 * (f * self.slots + slot);
                let s = 2 * (f * self.slots + src);
                positions[d] = self.positions[s];
                positions[d + 1] = self.positions[s + 1];
            }
        }
        Self {
            positions,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    WindowLength(u32),
    SampleRate { expected: f64, actual: f64 },
    AgentCount { expected: usize, actual: usize },
    FrameCount { expected: usize, actual: usize },
    NonFinite { frame: usize },
    OutOfBounds { frame: usize, agent: Option<usize>, x: f64, y: f64 },
    NegativeBallHeight { frame: usize, z: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WindowLength(w) => write!(f, "window length {w} s not in 1..=5"),
            Violation::SampleRate { expected, actual } => {
                write!(f, "sample rate {actual} Hz ≠ {expected} Hz")
            }
            Violation::AgentCount { expected, actual } => {
                write!(f, "agent count {actual} ≠ {expected}")
            }
            Violation::FrameCount { expected, actual } => {
                write!(f, "frame count {actual} ≠ {expected}")
            }
            Violation::NonFinite { frame } => write!(f, "non-finite coordinate in frame {frame}"),
            Violation::OutOfBounds { frame, agent, x, y } => match agent {
                Some(a) => write!(f, "out of bounds: agent {a} at ({x}, {y}) in frame {frame}"),
                None => write!(f, "out of bounds: ball at ({x}, {y}) in frame {frame}"),
            },
            Violation::NegativeBallHeight { frame, z } => {
                write!(f, "ball height {z} < 0 in frame {frame}")
            }
        }
    }
}

/// Returns every invariant violation; an empty list means the play is valid.
pub fn validate_play<T: Scalar>(play: &Play<T>, config: &RosterConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(1..=5).contains(&play.window_seconds) {
        out.push(Violation::WindowLength(play.window_seconds));
    }
    if play.sample_rate_hz != config.sample_rate_hz {
        out.push(Violation::SampleRate {
            expected: config.sample_rate_hz,
            actual: play.sample_rate_hz,
        });
    }
    if play.players_per_team != config.players_per_team {
        out.push(Violation::AgentCount {
            expected: 2 * config.players_per_team,
            actual: play.agent_count(),
        });
    }
    let expected = config.frames_for(play.window_seconds);
    if play.frame_count() != expected {
        out.push(Violation::FrameCount {
            expected,
            actual: play.frame_count(),
        });
    }
    let in_court = |x: f64, y: f64| (0.0..=COURT_LENGTH_FT).contains(&x) && (0.0..=COURT_WIDTH_FT).contains(&y);
    for f in 0..play.frame_count() {
        if play.frame_slice(f).iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { frame: f });
            continue;
        }
        for a in 0..play.agent_count() {
            let [x, y] = play.agent(f, a);
            let (x, y) = (x.as_f64(), y.as_f64());
            if !in_court(x, y) {
                out.push(Violation::OutOfBounds { frame: f, agent: Some(a), x, y });
            }
        }
        let [bx, by, bz] = play.ball(f);
        let (bx, by, bz) = (bx.as_f64(), by.as_f64(), bz.as_f64());
        if !in_court(bx, by) {
            out.push(Violation::OutOfBounds { frame: f, agent: None, x: bx, y: by });
        }
        if bz < 0.0 {
            out.push(Violation::NegativeBallHeight { frame: f, z: bz });
        }
    }
    out
}
