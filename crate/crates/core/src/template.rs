//! EM learning of a formation template: alternate Hungarian alignment of
//! every play against the current template with a per-slot mean update.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{align_team, AssignmentError, CostMetric};
use crate::model::{PermutationMap, Play, Team, Template};
use crate::scalar::{hash_str, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("cannot learn a template from zero plays")]
    Empty,
    #[error("play {play_id} has shape {actual:?}, expected {expected:?} (players per team, frames)")]
    InconsistentShape {
        play_id: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("templates differ in shape")]
    ShapeMismatch,
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateLearnConfig {
    pub max_iterations: usize,
    /// Mean slot displacement in feet below which iteration stops.
    pub convergence_threshold: f64,
    pub rng_seed: u64,
    pub cost_metric: CostMetric,
}

impl TemplateLearnConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        Self {
            max_iterations: 50,
            convergence_threshold: 0.1,
            rng_seed,
            cost_metric: CostMetric::Squared,
        }
    }

    fn check(&self) -> Result<(), TemplateError> {
        if self.max_iterations < 1 {
            return Err(TemplateError::Config("max_iterations must be at least 1"));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(TemplateError::Config("convergence_threshold must be positive"));
        }
        Ok(())
    }
}

/// Output of one template fit, without materialized aligned plays.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateFit<T> {
    pub template: Template<T>,
    /// Permutation aligning each input play to `template`, in input order.
    pub perms: Vec<PermutationMap>,
    /// Summed assignment cost after each alignment pass; the last entry is
    /// the cost of `perms` against the returned template.
    pub objective: Vec<T>,
    /// Template movement after each mean update.
    pub deltas: Vec<T>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTemplate<T> {
    pub fit: TemplateFit<T>,
    pub aligned: Vec<Play<T>>,
}

/// Learns a team template and returns it with aligned copies of the plays.
pub fn learn_template<T: Scalar>(
    plays: &[Play<T>],
    team: Team,
    config: &TemplateLearnConfig,
) -> Result<LearnedTemplate<T>, TemplateError> {
    let fit = fit_template(plays, team, config)?;
    let aligned = plays
        .par_iter()
        .zip(fit.perms.par_iter())
        .map(|(p, perm)| p.permuted(team, perm).map_err(AssignmentError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LearnedTemplate { fit, aligned })
}

pub fn fit_template<T: Scalar>(
    plays: &[Play<T>],
    team: Team,
    config: &TemplateLearnConfig,
) -> Result<TemplateFit<T>, TemplateError> {
    config.check()?;
    let first = plays.first().ok_or(TemplateError::Empty)?;
    let shape = (first.players_per_team, first.frame_count());
    for p in plays {
        let s = (p.players_per_team, p.frame_count());
        if s != shape {
            return Err(TemplateError::InconsistentShape {
                play_id: p.play_id.0.clone(),
                expected: shape,
                actual: s,
            });
        }
    }
    let slots = shape.0;

    if plays.len() == 1 {
        return Ok(TemplateFit {
            template: Template::from_play(first, team),
            perms: vec![PermutationMap::identity(slots)],
            objective: vec![T::zero()],
            deltas: Vec::new(),
            converged: true,
        });
    }

    // The seed picks the initial example by id, independent of input order.
    let init = plays
        .iter()
        .enumerate()
        .min_by_key(|(i, p)| (hash_str(config.rng_seed, &p.play_id.0), *i))
        .map(|(i, _)| i)
        .expect("non-empty");
    let mut template = Template::from_play(&plays[init], team);
    let threshold = T::of(config.convergence_threshold);

    let mut objective = Vec::new();
    let mut deltas = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iterations {
        let (perms, cost) = align_all(&template, plays, team, config.cost_metric)?;
        objective.push(cost);
        let next = mean_template(plays, &perms, team, slots, shape.1);
        let delta = template_delta(&template, &next)?;
        deltas.push(delta);
        template = next;
        if delta < threshold {
            converged = true;
            break;
        }
    }
    let (perms, cost) = align_all(&template, plays, team, config.cost_metric)?;
    objective.push(cost);

    Ok(TemplateFit {
        template,
        perms,
        objective,
        deltas,
        converged,
    })
}

fn align_all<T: Scalar>(
    template: &Template<T>,
    plays: &[Play<T>],
    team: Team,
    metric: CostMetric,
) -> Result<(Vec<PermutationMap>, T), TemplateError> {
    let solved = plays
        .par_iter()
        .map(|p| align_team(template, p, team, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = T::zero();
    let perms = solved
        .into_iter()
        .map(|(perm, cost)| {
            total += cost;
            perm
        })
        .collect();
    Ok((perms, total))
}

/// Per-slot mean of the aligned plays, summed in input order.
fn mean_template<T: Scalar>(
    plays: &[Play<T>],
    perms: &[PermutationMap],
    team: Team,
    slots: usize,
    frames: usize,
) -> Template<T> {
    let mut sum = vec![T::zero(); 2 * slots * frames];
    for (play, perm) in plays.iter().zip(perms) {
        let offset = play.team_range(team).start;
        for f in 0..frames {
            let frame = play.frame_slice(f);
            for (slot, &agent) in perm.mapping().iter().enumerate() {
                let d = 2 * (f * slots + slot);
                let s = 2 * (offset + agent);
                sum[d] += frame[s];
                sum[d + 1] += frame[s + 1];
            }
        }
    }
    let n = T::of_usize(plays.len());
    sum.iter_mut().for_each(|v| *v /= n);
    Template::new(team, slots, frames, sum).expect("mean of finite plays is finite")
}

/// Mean Euclidean displacement between corresponding slots, averaged over
/// slots and frames.
pub fn template_delta<T: Scalar>(old: &Template<T>, new: &Template<T>) -> Result<T, TemplateError> {
    if old.slots() != new.slots() || old.frames() != new.frames() {
        return Err(TemplateError::ShapeMismatch);
    }
    let a = old.positions();
    let b = new.positions();
    let mut total = T::zero();
    for (pa, pb) in a.chunks_exact(2).zip(b.chunks_exact(2)) {
        let dx = pa[0] - pb[0];
        let dy = pa[1] - pb[1];
        total += (dx * dx + dy * dy).sqrt();
    }
    let count = a.len() / 2;
    Ok(if count == 0 { T::zero() } else { total / T::of_usize(count) })
}
