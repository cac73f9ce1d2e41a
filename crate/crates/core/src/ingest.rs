//! Tracking files, play windows and the synthetic corpus generator.
//!
//! Tracking rows are `time_s,team_id,player_id,action_id,x,y,z`, one per
//! agent per frame. The ball uses team and player id `-1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::solve_assignment;
use crate::model::{
    frame_width, CostMatrix, GameId, ModelError, PermutationMap, Play, PlayId, RosterConfig, Team,
    TeamPerms, COURT_LENGTH_FT, COURT_WIDTH_FT,
};
use crate::scalar::{mix_seed, Scalar};

pub const BALL_ID: i64 = -1;
pub const TRACKING_HEADER: &str = "time_s,team_id,player_id,action_id,x,y,z";
const BASKET: [f64; 2] = [88.75, 25.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: timestamp {time} precedes {previous}")]
    NonMonotone { line: u64, time: f64, previous: f64 },
    #[error("line {line}: duplicate agent sample (team {team}, player {player}) at t={time}")]
    Duplicate { line: u64, time: f64, team: i64, player: i64 },
    #[error("frame at t={time} has no ball row")]
    MissingBall { time: f64 },
    #[error("frame at t={time}: team {team} has {actual} players, expected {expected}")]
    MissingAgents { time: f64, team: i64, expected: usize, actual: usize },
    #[error("expected exactly two teams, found {0:?}")]
    TeamCount(Vec<i64>),
    #[error("line {line}: frame interval {interval} s is below half the {expected} s cadence")]
    Cadence { line: u64, interval: f64, expected: f64 },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<io::Error> for IngestError {
    fn from(e: io::Error) -> Self {
        IngestError::Io(e.to_string())
    }
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io.to_string()),
            other => IngestError::Malformed {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub player_id: i64,
    pub action_id: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFrame {
    pub time: f64,
    /// Players of `GameStream::team_ids[0]` and `[1]`, sorted by player id.
    pub teams: [Vec<AgentSample>; 2],
    pub ball: AgentSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameStream {
    pub game_id: GameId,
    /// Ascending.
    pub team_ids: [i64; 2],
    pub frames: Vec<GameFrame>,
}

struct Row {
    line: u64,
    time: f64,
    team: i64,
    sample: AgentSample,
}

fn field<V: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<V, IngestError> {
    let raw = rec.get(i).ok_or_else(|| IngestError::Malformed {
        line,
        message: format!("missing {name}"),
    })?;
    raw.trim().parse().map_err(|_| IngestError::Malformed {
        line,
        message: format!("bad {name} {raw:?}"),
    })
}

fn parse_row(rec: &csv::StringRecord) -> Result<Row, IngestError> {
    let line = rec.position().map_or(0, |p| p.line());
    if rec.len() != 7 {
        return Err(IngestError::Malformed {
            line,
            message: format!("expected 7 fields, found {}", rec.len()),
        });
    }
    let time: f64 = field(rec, 0, "time", line)?;
    let x: f64 = field(rec, 4, "x", line)?;
    let y: f64 = field(rec, 5, "y", line)?;
    let z: f64 = field(rec, 6, "z", line)?;
    if ![time, x, y, z].iter().all(|v| v.is_finite()) {
        return Err(IngestError::Malformed {
            line,
            message: "non-finite value".into(),
        });
    }
    Ok(Row {
        line,
        time,
        team: field(rec, 1, "team_id", line)?,
        sample: AgentSample {
            player_id: field(rec, 2, "player_id", line)?,
            action_id: field(rec, 3, "action_id", line)?,
            x,
            y,
            z,
        },
    })
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.get(0).is_some_and(|f| f.trim() == "time_s")
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Groups rows of consecutive equal timestamps into raw frames.
#[derive(Default)]
struct FrameBuilder {
    time: Option<f64>,
    rows: Vec<Row>,
}

struct RawFrame {
    time: f64,
    first_line: u64,
    rows: Vec<Row>,
}

impl FrameBuilder {
    fn push(&mut self, row: Row, out: &mut Vec<RawFrame>) -> Result<(), IngestError> {
        match self.time {
            Some(t) if row.time < t => {
                return Err(IngestError::NonMonotone {
                    line: row.line,
                    time: row.time,
                    previous: t,
                })
            }
            Some(t) if row.time > t => self.flush(out),
            _ => {}
        }
        if self
            .rows
            .iter()
            .any(|r| r.team == row.team && r.sample.player_id == row.sample.player_id)
        {
            return Err(IngestError::Duplicate {
                line: row.line,
                time: row.time,
                team: row.team,
                player: row.sample.player_id,
            });
        }
        self.time = Some(row.time);
        self.rows.push(row);
        Ok(())
    }

    fn flush(&mut self, out: &mut Vec<RawFrame>) {
        if let Some(time) = self.time {
            let rows = std::mem::take(&mut self.rows);
            out.push(RawFrame {
                time,
                first_line: rows.first().map_or(0, |r| r.line),
                rows,
            });
        }
    }
}

/// Parses a tracking file into a validated frame stream.
pub fn parse_tracking<R: Read>(input: R, game_id: GameId, roster: &RosterConfig) -> Result<GameStream, IngestError> {
    let mut raw = Vec::new();
    let mut builder = FrameBuilder::default();
    for rec in reader(input).records() {
        let rec = rec?;
        if rec.get(0).is_some_and(|f| f.starts_with('#')) || is_header(&rec) {
            continue;
        }
        builder.push(parse_row(&rec)?, &mut raw)?;
    }
    builder.flush(&mut raw);
    assemble(raw, game_id, roster)
}

fn assemble(raw: Vec<RawFrame>, game_id: GameId, roster: &RosterConfig) -> Result<GameStream, IngestError> {
    let mut teams: Vec<i64> = raw
        .iter()
        .flat_map(|f| f.rows.iter().map(|r| r.team))
        .filter(|&t| t != BALL_ID)
        .collect();
    teams.sort_unstable();
    teams.dedup();
    if teams.len() != 2 && !raw.is_empty() {
        return Err(IngestError::TeamCount(teams));
    }
    let team_ids = if raw.is_empty() { [0, 1] } else { [teams[0], teams[1]] };
    let interval = 1.0 / roster.sample_rate_hz;
    let mut frames = Vec::with_capacity(raw.len());
    let mut previous: Option<f64> = None;
    for f in raw {
        if let Some(p) = previous {
            if f.time - p < 0.5 * interval {
                return Err(IngestError::Cadence {
                    line: f.first_line,
                    interval: f.time - p,
                    expected: interval,
                });
            }
        }
        previous = Some(f.time);
        let mut ball = None;
        let mut sides: [Vec<AgentSample>; 2] = [Vec::new(), Vec::new()];
        for r in f.rows {
            if r.team == BALL_ID {
                ball = Some(r.sample);
            } else {
                let side = usize::from(r.team == team_ids[1]);
                sides[side].push(r.sample);
            }
        }
        let ball = ball.ok_or(IngestError::MissingBall { time: f.time })?;
        for (side, team) in sides.iter_mut().zip(team_ids) {
            if side.len() != roster.players_per_team {
                return Err(IngestError::MissingAgents {
                    time: f.time,
                    team,
                    expected: roster.players_per_team,
                    actual: side.len(),
                });
            }
            side.sort_by_key(|s| s.player_id);
        }
        frames.push(GameFrame {
            time: f.time,
            teams: sides,
            ball,
        });
    }
    Ok(GameStream {
        game_id,
        team_ids,
        frames,
    })
}

fn push_row(out: &mut String, time: f64, team: i64, s: &AgentSample) {
    let _ = writeln!(
        out,
        "{time},{team},{},{},{},{},{}",
        s.player_id, s.action_id, s.x, s.y, s.z
    );
}

/// Inverse of [`parse_tracking`].
pub fn serialize_tracking(stream: &GameStream) -> String {
    let mut out = String::new();
    out.push_str(TRACKING_HEADER);
    out.push('\n');
    for f in &stream.frames {
        for (side, team) in f.teams.iter().zip(stream.team_ids) {
            for s in side {
                push_row(&mut out, f.time, team, s);
            }
        }
        push_row(&mut out, f.time, BALL_ID, &f.ball);
    }
    out
}

/// Which team counts as offense in a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OffenseRule {
    /// Team of the player nearest the ball at the window midpoint.
    #[default]
    BallProximity,
    /// Fixed team id.
    Team(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub window_lengths: Vec<u32>,
    pub stride_seconds: f64,
    pub offense: OffenseRule,
    pub roster: RosterConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            window_lengths: vec![1, 2, 3, 4, 5],
            stride_seconds: 1.0,
            offense: OffenseRule::default(),
            roster: RosterConfig::default(),
        }
    }
}

/// Index ranges of gap-free runs of frames.
pub fn continuous_chunks(stream: &GameStream, sample_rate_hz: f64) -> Vec<std::ops::Range<usize>> {
    let limit = 1.5 / sample_rate_hz;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=stream.frames.len() {
        if i == stream.frames.len() || stream.frames[i].time - stream.frames[i - 1].time > limit {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Cuts fixed-length plays out of every continuous chunk.
///
/// Windows never cross a gap. Offense/defense are assigned per window and
/// the court is rotated so the offense attacks the basket at x = 94.
pub fn extract_windows<T: Scalar>(stream: &GameStream, config: &ExtractConfig) -> Result<Vec<Play<T>>, IngestError> {
    let rate = config.roster.sample_rate_hz;
    let stride = ((config.stride_seconds * rate).round() as usize).max(1);
    let chunks = continuous_chunks(stream, rate);
    let mut out = Vec::new();
    for &length in &config.window_lengths {
        let frames = config.roster.frames_for(length);
        if frames == 0 {
            continue;
        }
        for chunk in &chunks {
            let mut start = chunk.start;
            while start + frames <= chunk.end {
                out.push(window(stream, start, frames, length, config)?);
                start += stride;
            }
        }
    }
    Ok(out)
}

fn offense_side(stream: &GameStream, window: &[GameFrame], rule: OffenseRule) -> usize {
    match rule {
        OffenseRule::Team(id) => usize::from(stream.team_ids[1] == id),
        OffenseRule::BallProximity => {
            let mid = &window[window.len() / 2];
            let d = |s: &AgentSample| (s.x - mid.ball.x).powi(2) + (s.y - mid.ball.y).powi(2);
            let best = |side: &[AgentSample]| side.iter().map(d).fold(f64::INFINITY, f64::min);
            usize::from(best(&mid.teams[1]) < best(&mid.teams[0]))
        }
    }
}

fn window<T: Scalar>(
    stream: &GameStream,
    start: usize,
    frames: usize,
    length: u32,
    config: &ExtractConfig,
) -> Result<Play<T>, IngestError> {
    let slice = &stream.frames[start..start + frames];
    let off = offense_side(stream, slice, config.offense);
    let mean_x = slice
        .iter()
        .flat_map(|f| f.teams[off].iter().map(|s| s.x))
        .sum::<f64>()
        / (slice.len() * slice[0].teams[off].len()).max(1) as f64;
    let flip = mean_x < COURT_LENGTH_FT / 2.0;
    let place = |x: f64, y: f64| {
        let (x, y) = if flip { (COURT_LENGTH_FT - x, COURT_WIDTH_FT - y) } else { (x, y) };
        [x.clamp(0.0, COURT_LENGTH_FT), y.clamp(0.0, COURT_WIDTH_FT)]
    };
    let m = config.roster.players_per_team;
    let mut coords = Vec::with_capacity(frames * frame_width(m));
    for f in slice {
        for side in [off, 1 - off] {
            for s in &f.teams[side] {
                coords.extend(place(s.x, s.y).map(T::of));
            }
        }
        let [bx, by] = place(f.ball.x, f.ball.y);
        coords.extend([bx, by, f.ball.z.max(0.0)].map(T::of));
    }
    let play_id = PlayId(format!("{}-w{}-f{}", stream.game_id, length, start));
    Ok(Play::from_coords(
        play_id,
        stream.game_id.clone(),
        slice[0].time,
        length,
        config.roster.sample_rate_hz,
        m,
        coords,
    )?)
}

/// Writes plays in the tracking format, one `#play` directive per play.
/// Offense is team 0, defense team 1, player ids are slot indices.
pub fn write_plays<T: Scalar, W: Write>(mut out: W, plays: &[Play<T>]) -> Result<(), IngestError> {
    let mut buf = String::new();
    writeln!(buf, "{TRACKING_HEADER}").ok();
    out.write_all(buf.as_bytes())?;
    for play in plays {
        buf.clear();
        let _ = writeln!(
            buf,
            "#play {} game={} start={} window={} rate={} players={}",
            play.play_id, play.game_id, play.start_time, play.window_seconds, play.sample_rate_hz, play.players_per_team
        );
        let m = play.players_per_team;
        for f in 0..play.frame_count() {
            let t = play.start_time + f as f64 / play.sample_rate_hz;
            for team in Team::BOTH {
                let team_id = i64::from(team == Team::Defense);
                for (slot, a) in play.team_range(team).enumerate() {
                    let [x, y] = play.agent(f, a);
                    let _ = writeln!(buf, "{t},{team_id},{slot},0,{x},{y},0");
                }
            }
            let [x, y, z] = play.ball(f);
            let _ = writeln!(buf, "{t},-1,-1,0,{x},{y},{z}");
            debug_assert!(m > 0);
        }
        out.write_all(buf.as_bytes())?;
    }
    Ok(())
}

struct PlayHeader {
    line: u64,
    play_id: PlayId,
    game_id: GameId,
    start: f64,
    window: u32,
    rate: f64,
    players: usize,
}

fn parse_header(text: &str, line: u64) -> Result<PlayHeader, IngestError> {
    let bad = |message: String| IngestError::Malformed { line, message };
    let mut parts = text.split_whitespace();
    parts.next();
    let play_id = PlayId(parts.next().ok_or_else(|| bad("#play without id".into()))?.to_string());
    let mut kv = BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| bad(format!("bad attribute {p:?}")))?;
        kv.insert(k, v);
    }
    fn get<V: std::str::FromStr>(
        kv: &BTreeMap<&str, &str>,
        key: &str,
        bad: &dyn Fn(String) -> IngestError,
    ) -> Result<V, IngestError> {
        kv.get(key)
            .ok_or_else(|| bad(format!("missing {key}=")))?
            .parse()
            .map_err(|_| bad(format!("bad {key}=")))
    }
    Ok(PlayHeader {
        line,
        play_id,
        game_id: GameId(get::<String>(&kv, "game", &bad)?),
        start: get(&kv, "start", &bad)?,
        window: get(&kv, "window", &bad)?,
        rate: get(&kv, "rate", &bad)?,
        players: get(&kv, "players", &bad)?,
    })
}

/// Reads plays written by [`write_plays`].
pub fn read_plays<T: Scalar, R: Read>(input: R) -> Result<Vec<Play<T>>, IngestError> {
    let mut out = Vec::new();
    let mut current: Option<(PlayHeader, Vec<T>, usize)> = None;
    let finish = |cur: Option<(PlayHeader, Vec<T>, usize)>, out: &mut Vec<Play<T>>| -> Result<(), IngestError> {
        if let Some((h, coords, _)) = cur {
            let play = Play::from_coords(h.play_id, h.game_id, h.start, h.window, h.rate, h.players, coords)
                .map_err(|e| IngestError::Malformed {
                    line: h.line,
                    message: e.to_string(),
                })?;
            out.push(play);
        }
        Ok(())
    };
    for rec in reader(input).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let first = rec.get(0).unwrap_or("");
        if first.starts_with("#play") {
            finish(current.take(), &mut out)?;
            current = Some((parse_header(first, line)?, Vec::new(), 0));
            continue;
        }
        if first.starts_with('#') || is_header(&rec) {
            continue;
        }
        let row = parse_row(&rec)?;
        let (h, coords, expected) = current.as_mut().ok_or(IngestError::Malformed {
            line,
            message: "row before any #play directive".into(),
        })?;
        // rows must follow the fixed slot order
        let w = frame_width(h.players);
        let pos = *expected % (2 * h.players + 1);
        let (team, player) = if pos < 2 * h.players {
            (i64::from(pos >= h.players), (pos % h.players) as i64)
        } else {
            (BALL_ID, BALL_ID)
        };
        if row.team != team || row.sample.player_id != player {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected team {team} player {player}"),
            });
        }
        let parse = |v: &str, name: &str| -> Result<T, IngestError> {
            v.parse().map_err(|_| IngestError::Malformed {
                line,
                message: format!("bad {name}"),
            })
        };
        coords.push(parse(rec.get(4).unwrap_or(""), "x")?);
        coords.push(parse(rec.get(5).unwrap_or(""), "y")?);
        if team == BALL_ID {
            coords.push(parse(rec.get(6).unwrap_or(""), "z")?);
        }
        *expected += 1;
        debug_assert!(coords.len() <= w * (*expected / (2 * h.players + 1) + 1));
    }
    finish(current.take(), &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub formations: usize,
    pub plays_per_formation: usize,
    /// Standard deviation of per-frame Gaussian noise, feet.
    pub noise_ft: f64,
    pub seed: u64,
    pub window_seconds: u32,
    pub roster: RosterConfig,
    /// Amplitude of each formation's movement over the window, feet.
    pub motion_ft: f64,
    /// Amplitude of smooth per-play deviation from the formation, feet.
    pub jitter_ft: f64,
}

impl SyntheticSpec {
    pub fn new(formations: usize, plays_per_formation: usize, noise_ft: f64, seed: u64) -> Self {
        Self {
            formations,
            plays_per_formation,
            noise_ft,
            seed,
            window_seconds: 1,
            roster: RosterConfig::default(),
            motion_ft: 6.0,
            jitter_ft: 2.0,
        }
    }
}

/// Ground truth for one synthetic play.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticLabel {
    pub play_id: PlayId,
    pub formation: usize,
    /// Per team, `mapping[i]` is the formation role played by stored agent
    /// `i`. Its inverse is the alignment that restores role order.
    pub true_permutation: TeamPerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus<T> {
    pub plays: Vec<Play<T>>,
    pub labels: Vec<SyntheticLabel>,
    /// Role-ordered mean trajectory of each formation, in play layout.
    pub formations: Vec<Vec<f64>>,
}

type Curve = [[f64; 2]; 4];

fn bezier(c: &Curve, t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    let mut p = [0.0; 2];
    for (wi, ci) in w.iter().zip(c) {
        p[0] += wi * ci[0];
        p[1] += wi * ci[1];
    }
    p
}

fn random_curve(rng: &mut ChaCha8Rng, amplitude: f64) -> Curve {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut c = [[0.0; 2]; 4];
    for p in c.iter_mut().skip(1) {
        *p = [amplitude * n.sample(rng), amplitude * n.sample(rng)];
    }
    c
}

fn formation_anchors(rng: &mut ChaCha8Rng, m: usize, existing: &[Vec<[f64; 2]>]) -> Vec<[f64; 2]> {
    let spread = |pts: &[[f64; 2]]| {
        let mut min = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                min = min.min(((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
            }
        }
        min
    };
    let separation = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        let rows: Vec<Vec<f64>> = a
            .iter()
            .map(|p| b.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).collect())
            .collect();
        let cost = CostMatrix::from_rows(&rows).expect("finite distances");
        solve_assignment(&cost).1 / m as f64
    };
    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
    for _ in 0..200 {
        let pts: Vec<[f64; 2]> = (0..m).map(|_| [rng.gen_range(54.0..90.0), rng.gen_range(4.0..46.0)]).collect();
        let sep = existing.iter().map(|e| separation(e, &pts)).fold(f64::INFINITY, f64::min);
        let score = spread(&pts).min(sep);
        if score >= 9.0 {
            return pts;
        }
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, pts));
        }
    }
    best.expect("at least one candidate").1
}

struct Formation {
    offense: Vec<[f64; 2]>,
    defense: Vec<[f64; 2]>,
    offense_motion: Vec<Curve>,
    defense_motion: Vec<Curve>,
    ball_from: usize,
    ball_to: usize,
}

impl Formation {
    fn draw(rng: &mut ChaCha8Rng, m: usize, motion: f64, existing: &[Vec<[f64; 2]>]) -> Self {
        let offense = formation_anchors(rng, m, existing);
        let defense = offense
            .iter()
            .map(|&[x, y]| {
                let (dx, dy) = (BASKET[0] - x, BASKET[1] - y);
                let len = (dx * dx + dy * dy).sqrt().max(1e-9);
                let step = 3.0f64.min(len * 0.5);
                [x + dx / len * step, y + dy / len * step]
            })
            .collect();
        let offense_motion: Vec<Curve> = (0..m).map(|_| random_curve(rng, motion)).collect();
        let defense_motion = offense_motion
            .iter()
            .map(|c| {
                let own = random_curve(rng, motion * 0.25);
                let mut out = *c;
                for (o, d) in out.iter_mut().zip(own) {
                    o[0] += d[0];
                    o[1] += d[1];
                }
                out
            })
            .collect();
        let ball_from = rng.gen_range(0..m);
        let ball_to = (ball_from + rng.gen_range(1..m.max(2))) % m.max(1);
        Self {
            offense,
            defense,
            offense_motion,
            defense_motion,
            ball_from,
            ball_to,
        }
    }

    /// Role-ordered frame buffer with per-agent deviations added.
    fn render(&self, frames: usize, m: usize, jitter: &[Curve], noise: &mut dyn FnMut() -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(frames * frame_width(m));
        for f in 0..frames {
            let t = if frames > 1 { f as f64 / (frames - 1) as f64 } else { 0.0 };
            let mut positions = Vec::with_capacity(2 * m);
            for (a, (anchor, motion)) in self
                .offense
                .iter()
                .zip(&self.offense_motion)
                .chain(self.defense.iter().zip(&self.defense_motion))
                .enumerate()
            {
                let d = bezier(motion, t);
                let j = bezier(&jitter[a], t);
                positions.push([anchor[0] + d[0] + j[0], anchor[1] + d[1] + j[1]]);
            }
            for p in &positions {
                out.push((p[0] + noise()).clamp(0.0, COURT_LENGTH_FT));
                out.push((p[1] + noise()).clamp(0.0, COURT_WIDTH_FT));
            }
            let (a, b) = (positions[self.ball_from], positions[self.ball_to]);
            let j = bezier(&jitter[2 * m], t);
            let bx = a[0] + (b[0] - a[0]) * t + j[0] + noise();
            let by = a[1] + (b[1] - a[1]) * t + j[1] + noise();
            let bz = 4.0 + 6.0 * t * (1.0 - t) + noise().abs() * 0.1;
            out.push(bx.clamp(0.0, COURT_LENGTH_FT));
            out.push(by.clamp(0.0, COURT_WIDTH_FT));
            out.push(bz.max(0.0));
        }
        out
    }
}

/// Reorders a role-ordered buffer so stored agent `i` of each team carries
/// role `shuffle.get(team).mapping()[i]`.
fn scatter_roles(roles: &[f64], m: usize, shuffle: &TeamPerms) -> Vec<f64> {
    let w = frame_width(m);
    let mut out = roles.to_vec();
    for (f, frame) in roles.chunks(w).enumerate() {
        for team in Team::BOTH {
            let base = crate::model::team_range(m, team).start;
            for (i, &role) in shuffle.get(team).mapping().iter().enumerate() {
                let d = f * w + 2 * (base + i);
                let s = 2 * (base + role);
                out[d] = frame[s];
                out[d + 1] = frame[s + 1];
            }
        }
    }
    out
}

fn random_perms(rng: &mut ChaCha8Rng, m: usize) -> TeamPerms {
    let mut draw = || {
        let mut v: Vec<usize> = (0..m).collect();
        v.shuffle(rng);
        PermutationMap::new(v).expect("shuffle is a bijection")
    };
    let offense = draw();
    let defense = draw();
    TeamPerms { offense, defense }
}

/// Multi-formation corpus with ground truth. Identical specs produce
/// identical corpora.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticCorpus<T>, IngestError> {
    let m = spec.roster.players_per_team;
    let frames = spec.roster.frames_for(spec.window_seconds);
    if m == 0 || frames == 0 {
        return Err(ModelError::EmptyScope.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut formations: Vec<Formation> = Vec::with_capacity(spec.formations);
    for _ in 0..spec.formations {
        let existing: Vec<Vec<[f64; 2]>> = formations.iter().map(|f| f.offense.clone()).collect();
        formations.push(Formation::draw(&mut rng, m, spec.motion_ft, &existing));
    }
    let still = vec![[[0.0; 2]; 4]; 2 * m + 1];
    let means = formations.iter().map(|f| f.render(frames, m, &still, &mut || 0.0)).collect();

    let noise = Normal::new(0.0, spec.noise_ft.max(0.0)).map_err(|e| IngestError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    let mut plays = Vec::with_capacity(spec.formations * spec.plays_per_formation);
    let mut labels = Vec::with_capacity(plays.capacity());
    for (g, formation) in formations.iter().enumerate() {
        for i in 0..spec.plays_per_formation {
            let index = g * spec.plays_per_formation + i;
            let mut prng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64 + 1));
            let jitter: Vec<Curve> = (0..2 * m + 1).map(|_| random_curve(&mut prng, spec.jitter_ft)).collect();
            let shuffle = random_perms(&mut prng, m);
            let mut nrng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0xA5A5, index as u64));
            let roles = formation.render(frames, m, &jitter, &mut || noise.sample(&mut nrng));
            let coords = scatter_roles(&roles, m, &shuffle);
            let play_id = PlayId(format!("syn{index:06}"));
            plays.push(Play::from_coords(
                play_id.clone(),
                GameId("synthetic".into()),
                index as f64 * f64::from(spec.window_seconds),
                spec.window_seconds,
                spec.roster.sample_rate_hz,
                m,
                coords.into_iter().map(T::of).collect(),
            )?);
            labels.push(SyntheticLabel {
                play_id,
                formation: g,
                true_permutation: shuffle,
            });
        }
    }
    Ok(SyntheticCorpus {
        plays,
        labels,
        formations: means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSpec {
    pub count: usize,
    /// Amplitude of a smooth per-agent deviation, feet.
    pub jitter_ft: f64,
    /// Per-coordinate Gaussian noise, feet.
    pub noise_ft: f64,
    pub seed: u64,
}

/// Perturbed copies of `play` with fresh agent orderings. Returns each copy
/// with the shuffle applied to the original's agent order.
pub fn near_duplicates<T: Scalar>(play: &Play<T>, spec: &DuplicateSpec) -> Result<Vec<(Play<T>, TeamPerms)>, IngestError> {
    let m = play.players_per_team;
    let w = frame_width(m);
    let frames = play.frame_count();
    let noise = Normal::new(0.0, spec.noise_ft.max(0.0)).map_err(|e| IngestError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    let base: Vec<f64> = play.coords().iter().map(|v| v.as_f64()).collect();
    (0..spec.count)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, c as u64));
            let jitter: Vec<Curve> = (0..2 * m + 1).map(|_| random_curve(&mut rng, spec.jitter_ft)).collect();
            let mut moved = base.clone();
            for f in 0..frames {
                let t = if frames > 1 { f as f64 / (frames - 1) as f64 } else { 0.0 };
                for (a, curve) in jitter.iter().enumerate() {
                    let [dx, dy] = bezier(curve, t);
                    let at = f * w + 2 * a;
                    moved[at] += dx + noise.sample(&mut rng);
                    moved[at + 1] += dy + noise.sample(&mut rng);
                }
                moved[f * w + w - 1] = (moved[f * w + w - 1] + noise.sample(&mut rng)).max(0.0);
            }
            for (i, v) in moved.iter_mut().enumerate() {
                let k = i % w;
                if k < w - 1 {
                    let limit = if k.is_multiple_of(2) { COURT_LENGTH_FT } else { COURT_WIDTH_FT };
                    *v = v.clamp(0.0, limit);
                }
            }
            let shuffle = random_perms(&mut rng, m);
            let coords = scatter_roles(&moved, m, &shuffle).into_iter().map(T::of).collect();
            let copy = Play::from_coords(
                PlayId(format!("{}~d{c}", play.play_id)),
                play.game_id.clone(),
                play.start_time,
                play.window_seconds,
                play.sample_rate_hz,
                m,
                coords,
            )?;
            Ok((copy, shuffle))
        })
        .collect()
}

/// Writes `play_id,formation_label,true_permutation` rows. The permutation
/// column is offense then defense mapping, space separated, joined by `|`.
pub fn write_labels<W: Write>(mut out: W, labels: &[SyntheticLabel]) -> Result<(), IngestError> {
    let mut buf = String::from("play_id,formation_label,true_permutation\n");
    for l in labels {
        let _ = writeln!(
            buf,
            "{},{},{}|{}",
            l.play_id, l.formation, l.true_permutation.offense, l.true_permutation.defense
        );
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<SyntheticLabel>, IngestError> {
    let mut out = Vec::new();
    for rec in reader(input).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.get(0).is_some_and(|f| f == "play_id" || f.starts_with('#')) {
            continue;
        }
        let bad = |message: &str| IngestError::Malformed {
            line,
            message: message.to_string(),
        };
        let formation = field(&rec, 1, "formation_label", line)?;
        let perm = rec.get(2).ok_or_else(|| bad("missing true_permutation"))?;
        let (o, d) = perm.split_once('|').ok_or_else(|| bad("permutation needs offense|defense"))?;
        let parse = |s: &str| -> Result<PermutationMap, IngestError> {
            let v = s
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<Vec<usize>, _>>()
                .map_err(|_| bad("bad permutation entry"))?;
            PermutationMap::new(v).map_err(|e| bad(&e.to_string()))
        };
        out.push(SyntheticLabel {
            play_id: PlayId(rec.get(0).unwrap_or("").to_string()),
            formation,
            true_permutation: TeamPerms {
                offense: parse(o)?,
                defense: parse(d)?,
            },
        });
    }
    Ok(out)
}
