//! Agent correspondence: cost matrices and an exact linear assignment solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CostMatrix, ModelError, PermutationMap, Play, Team, TeamPerms, Template};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("template has {template} slots but team has {team} agents")]
    SlotMismatch { template: usize, team: usize },
    #[error("template spans {template} frames but play has {play}")]
    FrameMismatch { template: usize, play: usize },
}

/// How per-frame agent displacement accumulates into an assignment cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMetric {
    /// Sum over frames of the Euclidean distance.
    Euclidean,
    /// Sum over frames of the squared Euclidean distance.
    #[default]
    Squared,
}

impl CostMetric {
    #[inline]
    pub fn point<T: Scalar>(self, dx: T, dy: T) -> T {
        let sq = dx * dx + dy * dy;
        match self {
            CostMetric::Euclidean => sq.sqrt(),
            CostMetric::Squared => sq,
        }
    }

    /// Applies the metric to a squared vector distance.
    #[inline]
    pub fn from_squared<T: Scalar>(self, sq: T) -> T {
        match self {
            CostMetric::Euclidean => sq.sqrt(),
            CostMetric::Squared => sq,
        }
    }
}

impl std::str::FromStr for CostMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(CostMetric::Euclidean),
            "squared" => Ok(CostMetric::Squared),
            other => Err(format!("unknown metric {other:?} (expected euclidean|squared)")),
        }
    }
}

/// Entry `(m, n)` is the accumulated distance between template slot `m` and
/// agent `n` of `team` over all frames.
pub fn build_cost_matrix<T: Scalar>(
    template: &Template<T>,
    play: &Play<T>,
    team: Team,
    metric: CostMetric,
) -> Result<CostMatrix<T>, AssignmentError> {
    let range = play.team_range(team);
    let n = range.len();
    if template.slots() != n {
        return Err(AssignmentError::SlotMismatch {
            template: template.slots(),
            team: n,
        });
    }
    let broadcast = template.frames() == 1;
    if !broadcast && template.frames() != play.frame_count() {
        return Err(AssignmentError::FrameMismatch {
            template: template.frames(),
            play: play.frame_count(),
        });
    }
    let mut entries = vec![T::zero(); n * n];
    let tpos = template.positions();
    for f in 0..play.frame_count() {
        let frame = play.frame_slice(f);
        let tf = if broadcast { 0 } else { f };
        let trow = &tpos[2 * tf * n..2 * (tf + 1) * n];
        for m in 0..n {
            let (tx, ty) = (trow[2 * m], trow[2 * m + 1]);
            for a in 0..n {
                let base = 2 * (range.start + a);
                entries[m * n + a] += metric.point(tx - frame[base], ty - frame[base + 1]);
            }
        }
    }
    Ok(CostMatrix::new(n, entries)?)
}

/// Slot-to-slot cost between two templates of the same team; rows index
/// `reference` slots, columns index `other` slots.
pub fn build_template_cost_matrix<T: Scalar>(
    reference: &Template<T>,
    other: &Template<T>,
    metric: CostMetric,
) -> Result<CostMatrix<T>, AssignmentError> {
    let n = reference.slots();
    if other.slots() != n {
        return Err(AssignmentError::SlotMismatch {
            template: n,
            team: other.slots(),
        });
    }
    let frames = reference.frames().max(other.frames());
    for t in [reference, other] {
        if t.frames() != 1 && t.frames() != frames {
            return Err(AssignmentError::FrameMismatch {
                template: reference.frames(),
                play: other.frames(),
            });
        }
    }
    let at = |t: &Template<T>, f: usize| if t.frames() == 1 { 0 } else { f };
    let mut entries = vec![T::zero(); n * n];
    for f in 0..frames {
        for m in 0..n {
            let [rx, ry] = reference.xy(at(reference, f), m);
            for k in 0..n {
                let [ox, oy] = other.xy(at(other, f), k);
                entries[m * n + k] += metric.point(rx - ox, ry - oy);
            }
        }
    }
    Ok(CostMatrix::new(n, entries)?)
}

/// Minimum-cost assignment of template slots (rows) to agents (columns).
///
/// Among optimal assignments the lexicographically smallest mapping is
/// returned, so repeated solves are reproducible.
pub fn solve_assignment<T: Scalar>(cost: &CostMatrix<T>) -> (PermutationMap, T) {
    let n = cost.size();
    if n == 0 {
        return (PermutationMap::identity(0), T::zero());
    }
    let (u, v) = hungarian_potentials(cost);

    let mut scale = T::zero();
    for r in 0..n {
        for &c in cost.row(r) {
            scale = scale.max(c);
        }
    }
    let tol = T::epsilon() * T::of(64.0) * T::of_usize(n) * scale.max(T::one());
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|r| (0..n).map(|c| cost.get(r, c) - u[r] - v[c] <= tol).collect())
        .collect();

    let mapping = lexicographic_matching(&tight);
    let total = mapping
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (r, &c)| acc + cost.get(r, c));
    (
        PermutationMap::new(mapping).expect("matching is a bijection"),
        total,
    )
}

/// O(n^3) shortest augmenting path Hungarian method. Returns optimal dual
/// potentials for rows and columns.
fn hungarian_potentials<T: Scalar>(cost: &CostMatrix<T>) -> (Vec<T>, Vec<T>) {
    let n = cost.size();
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching inside the tight-edge graph.
fn lexicographic_matching(tight: &[Vec<bool>]) -> Vec<usize> {
    let n = tight.len();
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut col_used = vec![false; n];
    for row in 0..n {
        let mut chosen = None;
        for col in 0..n {
            if col_used[col] || !tight[row][col] {
                continue;
            }
            col_used[col] = true;
            if has_perfect_matching(tight, row + 1, &col_used) {
                chosen = Some(col);
                break;
            }
            col_used[col] = false;
        }
        // The Hungarian matching is tight, so some column always fits.
        fixed.push(chosen.expect("tight graph admits a perfect matching"));
    }
    fixed
}

fn has_perfect_matching(tight: &[Vec<bool>], first_row: usize, col_used: &[bool]) -> bool {
    let n = tight.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    for row in first_row..n {
        let mut seen = vec![false; n];
        if !augment(tight, row, col_used, &mut seen, &mut match_col) {
            return false;
        }
    }
    true
}

fn augment(
    tight: &[Vec<bool>],
    row: usize,
    col_used: &[bool],
    seen: &mut [bool],
    match_col: &mut [Option<usize>],
) -> bool {
    for col in 0..tight.len() {
        if col_used[col] || seen[col] || !tight[row][col] {
            continue;
        }
        seen[col] = true;
        let free = match match_col[col] {
            None => true,
            Some(other) => augment(tight, other, col_used, seen, match_col),
        };
        if free {
            match_col[col] = Some(row);
            return true;
        }
    }
    false
}

pub fn apply_permutation<T: Scalar>(
    play: &Play<T>,
    perm: &PermutationMap,
    team: Team,
) -> Result<Play<T>, AssignmentError> {
    Ok(play.permuted(team, perm)?)
}

/// Solves one team's correspondence against a template.
pub fn align_team<T: Scalar>(
    template: &Template<T>,
    play: &Play<T>,
    team: Team,
    metric: CostMetric,
) -> Result<(PermutationMap, T), AssignmentError> {
    let cost = build_cost_matrix(template, play, team, metric)?;
    Ok(solve_assignment(&cost))
}

/// Aligns both teams against their templates. Returns the aligned play, the
/// permutations applied and the summed assignment cost.
pub fn align_play<T: Scalar>(
    offense: &Template<T>,
    defense: &Template<T>,
    play: &Play<T>,
    metric: CostMetric,
) -> Result<(Play<T>, TeamPerms, T), AssignmentError> {
    let (po, co) = align_team(offense, play, Team::Offense, metric)?;
    let (pd, cd) = align_team(defense, play, Team::Defense, metric)?;
    let perms = TeamPerms {
        offense: po,
        defense: pd,
    };
    let aligned = play.permuted_both(&perms)?;
    Ok((aligned, perms, co + cd))
}

/// Frame-level correspondence: one permutation per frame instead of one per
/// window. Used for occupancy heat maps rather than retrieval.
pub fn align_per_frame<T: Scalar>(
    template: &Template<T>,
    play: &Play<T>,
    team: Team,
    metric: CostMetric,
) -> Result<Vec<PermutationMap>, AssignmentError> {
    let range = play.team_range(team);
    let n = range.len();
    if template.slots() != n {
        return Err(AssignmentError::SlotMismatch {
            template: template.slots(),
            team: n,
        });
    }
    let broadcast = template.frames() == 1;
    if !broadcast && template.frames() != play.frame_count() {
        return Err(AssignmentError::FrameMismatch {
            template: template.frames(),
            play: play.frame_count(),
        });
    }
    (0..play.frame_count())
        .map(|f| {
            let tf = if broadcast { 0 } else { f };
            let mut entries = Vec::with_capacity(n * n);
            for m in 0..n {
                let [tx, ty] = template.xy(tf, m);
                for a in 0..n {
                    let [x, y] = play.agent(f, range.start + a);
                    entries.push(metric.point(tx - x, ty - y));
                }
            }
            let cost = CostMatrix::new(n, entries)?;
            Ok(solve_assignment(&cost).0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Frame;

    /// Exhaustive oracle: minimum over all permutations, lexicographically
    /// smallest argmin.
    pub(crate) fn brute_force(rows: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = rows.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            let total = perm.iter().enumerate().fold(0.0, |acc, (r, &c)| acc + rows[r][c]);
            if best.as_ref().is_none_or(|(_, b)| total < *b) {
                best = Some((perm.clone(), total));
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best.unwrap()
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let n = p.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && p[i - 1] >= p[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while p[j] <= p[i - 1] {
            j -= 1;
        }
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    fn two_agent_play(xs: [f64; 2]) -> Play<f64> {
        let frame = Frame {
            timestamp: 0.0,
            agents: vec![[xs[0], 0.0], [xs[1], 0.0], [0.0, 0.0], [0.0, 0.0]],
            ball: [0.0, 0.0, 0.0],
        };
        Play::from_frames("p".into(), "g".into(), 1, 1.0, 2, &[frame]).unwrap()
    }

    #[test]
    fn hand_computed_cost_matrix() {
        let template = Template::new(Team::Offense, 2, 1, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let play = two_agent_play([1.0, 3.0]);
        let cost = build_cost_matrix(&template, &play, Team::Offense, CostMetric::Euclidean).unwrap();
        assert_eq!(cost.row(0), &[1.0, 3.0]);
        assert_eq!(cost.row(1), &[0.0, 2.0]);
    }

    #[test]
    fn self_template_has_zero_diagonal_and_swap_moves_zeros() {
        let play = two_agent_play([10.0, 20.0]);
        let template = Template::from_play(&play, Team::Offense);
        let cost = build_cost_matrix(&template, &play, Team::Offense, CostMetric::Squared).unwrap();
        assert_eq!(cost.get(0, 0), 0.0);
        assert_eq!(cost.get(1, 1), 0.0);

        let swapped = play
            .permuted(Team::Offense, &PermutationMap::new(vec![1, 0]).unwrap())
            .unwrap();
        let cost = build_cost_matrix(&template, &swapped, Team::Offense, CostMetric::Squared).unwrap();
        assert_eq!(cost.get(0, 1), 0.0);
        assert_eq!(cost.get(1, 0), 0.0);
        assert!(cost.get(0, 0) > 0.0 && cost.get(1, 1) > 0.0);
    }

    #[test]
    fn realigning_with_swap_restores_zero_diagonal() {
        let template = Template::new(Team::Offense, 2, 1, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let play = two_agent_play([1.0, 0.0]);
        let (perm, cost) = align_team(&template, &play, Team::Offense, CostMetric::Euclidean).unwrap();
        assert_eq!(perm.mapping(), &[1, 0]);
        assert_eq!(cost, 0.0);
        let aligned = apply_permutation(&play, &perm, Team::Offense).unwrap();
        let after = build_cost_matrix(&template, &aligned, Team::Offense, CostMetric::Euclidean).unwrap();
        assert_eq!(after.get(0, 0), 0.0);
        assert_eq!(after.get(1, 1), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let template = Template::new(Team::Offense, 3, 1, vec![0.0; 6]).unwrap();
        let play = two_agent_play([1.0, 3.0]);
        assert!(matches!(
            build_cost_matrix(&template, &play, Team::Offense, CostMetric::Euclidean),
            Err(AssignmentError::SlotMismatch { .. })
        ));
    }

    #[test]
    fn diagonal_zero_gives_identity() {
        let cost = CostMatrix::from_rows(&[
            vec![0.0, 2.0, 3.0],
            vec![1.0, 0.0, 4.0],
            vec![5.0, 6.0, 0.0],
        ])
        .unwrap();
        let (p, c) = solve_assignment(&cost);
        assert!(p.is_identity());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn three_by_three_example() {
        let rows = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        assert_eq!(brute_force(&rows), (vec![1, 0, 2], 5.0));
        let (p, c) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
        assert_eq!(p.mapping(), &[1, 0, 2]);
        assert_eq!(c, 5.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let rows = vec![vec![1.0; 4]; 4];
        let (p, _) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
        assert!(p.is_identity());
        let rows = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]];
        let (p, c) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
        assert_eq!(p.mapping(), &[0, 1, 2]);
        assert_eq!(c, 1.0);
        let rows = vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 5.0]];
        let (p, _) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
        assert_eq!(p.mapping(), &[1, 2, 0]);
    }

    #[test]
    fn f32_solves_too() {
        let rows = vec![vec![4.0f32, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (p, c) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
        assert_eq!(p.mapping(), &[1, 0, 2]);
        assert_eq!(c, 5.0);
    }

    #[test]
    fn per_frame_alignment_follows_swaps() {
        let frames: Vec<_> = [[1.0, 3.0], [3.0, 1.0]]
            .iter()
            .map(|xs| Frame {
                timestamp: 0.0,
                agents: vec![[xs[0], 0.0], [xs[1], 0.0], [0.0, 0.0], [0.0, 0.0]],
                ball: [0.0, 0.0, 0.0],
            })
            .collect();
        let play = Play::from_frames("p".into(), "g".into(), 1, 2.0, 2, &frames).unwrap();
        let template = Template::new(Team::Offense, 2, 1, vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let perms = align_per_frame(&template, &play, Team::Offense, CostMetric::Squared).unwrap();
        assert_eq!(perms[0].mapping(), &[0, 1]);
        assert_eq!(perms[1].mapping(), &[1, 0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, n), n)
        }

        fn small_int_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (1usize..=6).prop_flat_map(|n| {
                proptest::collection::vec(
                    proptest::collection::vec((0u8..4).prop_map(f64::from), n),
                    n,
                )
            })
        }

        proptest! {
            #[test]
            fn matches_exhaustive_minimum(rows in (1usize..=7).prop_flat_map(matrix)) {
                let (p, c) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
                let (_, best) = brute_force(&rows);
                prop_assert_eq!(c, best);
                let recomputed = p.mapping().iter().enumerate().fold(0.0, |a, (r, &k)| a + rows[r][k]);
                prop_assert_eq!(recomputed, c);
            }

            #[test]
            fn tie_breaking_matches_lexicographic_oracle(rows in small_int_matrix()) {
                let (p, c) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
                let (best_perm, best) = brute_force(&rows);
                prop_assert_eq!(c, best);
                prop_assert_eq!(p.mapping(), best_perm.as_slice());
            }

            #[test]
            fn row_and_column_shifts(rows in matrix(5), row in 0usize..5, col in 0usize..5, shift in 0.0f64..50.0) {
                let (p0, c0) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
                let mut shifted = rows.clone();
                shifted[row].iter_mut().for_each(|v| *v += shift);
                for r in shifted.iter_mut() {
                    r[col] += shift;
                }
                let (p1, c1) = solve_assignment(&CostMatrix::from_rows(&shifted).unwrap());
                prop_assert_eq!(p0, p1);
                prop_assert!((c1 - (c0 + 2.0 * shift)).abs() < 1e-9);
            }

            #[test]
            fn realignment_is_identity(coords in proptest::collection::vec(0.0f64..50.0, 23 * 3),
                                       tcoords in proptest::collection::vec(0.0f64..50.0, 10 * 3)) {
                let play = Play::from_coords("p".into(), "g".into(), 0.0, 1, 3.0, 5, coords).unwrap();
                let template = Template::new(Team::Offense, 5, 3, tcoords).unwrap();
                let (perm, cost) = align_team(&template, &play, Team::Offense, CostMetric::Squared).unwrap();
                let aligned = apply_permutation(&play, &perm, Team::Offense).unwrap();
                let (again, cost2) = align_team(&template, &aligned, Team::Offense, CostMetric::Squared).unwrap();
                prop_assert!(again.is_identity());
                prop_assert_eq!(cost, cost2);
            }
        }
    }
}
