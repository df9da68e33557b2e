use crate::dataset::GraspCandidate;
use crate::error::{Error, Result};
use crate::geometry::PatchMetrics;

/// Weights of the geometric cost `F = α·S_rough + β·(1 − C_N) + γ·U_C` and
/// the blend `W_p = δ·(1 − S) + (1 − δ)·F`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.6,
            gamma: 0.2,
            delta: 0.5,
        }
    }
}

impl RankWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!("ranking weights must be non-negative: {self:?}")));
        }
        if (self.alpha + self.beta + self.gamma - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "alpha + beta + gamma must equal 1, got {}",
                self.alpha + self.beta + self.gamma
            )));
        }
        if self.delta > 1.0 {
            return Err(Error::InvalidArgument(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInput {
    pub candidate: GraspCandidate,
    pub raw: PatchMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    /// Position of the candidate in the input sequence.
    pub index: usize,
    pub candidate: GraspCandidate,
    /// Min-max normalized metrics.
    pub metrics: PatchMetrics,
    pub f_cost: f64,
    pub w_p: f64,
}

pub fn geometric_cost(normalized: &PatchMetrics, w: &RankWeights) -> f64 {
    w.alpha * normalized.s_rough + w.beta * (1.0 - normalized.c_n) + w.gamma * normalized.u_c
}

pub fn combined_cost(score: f64, f_cost: f64, w: &RankWeights) -> f64 {
    w.delta * (1.0 - score) + (1.0 - w.delta) * f_cost
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-15 * hi.abs().max(lo.abs()).max(1e-300)) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// Min-max normalizes each cost term across the set. Normal consistency is
/// normalized through its cost `1 − C_N`, so an all-equal metric contributes
/// zero cost for every candidate.
pub fn normalize_metrics(raw: &[PatchMetrics]) -> Vec<PatchMetrics> {
    let s = min_max(&raw.iter().map(|m| m.s_rough).collect::<Vec<_>>());
    let c: Vec<f64> = min_max(&raw.iter().map(|m| 1.0 - m.c_n).collect::<Vec<_>>())
        .into_iter()
        .map(|v| 1.0 - v)
        .collect();
    let u = min_max(&raw.iter().map(|m| m.u_c).collect::<Vec<_>>());
    (0..raw.len())
        .map(|i| PatchMetrics {
            s_rough: s[i],
            c_n: c[i],
            u_c: u[i],
        })
        .collect()
}

/// Scores every candidate and sorts ascending by `W_p`; ties go to the
/// higher planner score, then the lower input index.
pub fn rank_candidates(inputs: &[CandidateInput], weights: &RankWeights) -> Result<Vec<RankedCandidate>> {
    weights.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("cannot rank an empty candidate set".into()));
    }
    let raw: Vec<PatchMetrics> = inputs.iter().map(|c| c.raw).collect();
    let normalized = normalize_metrics(&raw);
    let mut ranked: Vec<RankedCandidate> = inputs
        .iter()
        .zip(normalized)
        .enumerate()
        .map(|(index, (input, metrics))| {
            let f_cost = geometric_cost(&metrics, weights);
            let w_p = combined_cost(input.candidate.score, f_cost, weights);
            RankedCandidate {
                index,
                candidate: input.candidate.clone(),
                metrics,
                f_cost,
                w_p,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.w_p
            .total_cmp(&b.w_p)
            .then(b.candidate.score.total_cmp(&a.candidate.score))
            .then(a.index.cmp(&b.index))
    });
    Ok(ranked)
}

/// Fraction of scenes where the `W_p` choice among the `top_n` candidates
/// by planner score differs from the planner's own best candidate.
pub fn mismatch_rate(scenes: &[Vec<CandidateInput>], top_n: usize, weights: &RankWeights) -> Result<f64> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    if scenes.is_empty() {
        return Ok(0.0);
    }
    let mut mismatches = 0usize;
    for (s, scene) in scenes.iter().enumerate() {
        if scene.len() < top_n {
            return Err(Error::InvalidArgument(format!(
                "scene {s} has {} candidates, fewer than top_n = {top_n}",
                scene.len()
            )));
        }
        let mut order: Vec<usize> = (0..scene.len()).collect();
        order.sort_by(|&a, &b| scene[b].candidate.score.total_cmp(&scene[a].candidate.score).then(a.cmp(&b)));
        let top: Vec<CandidateInput> = order[..top_n].iter().map(|&i| scene[i].clone()).collect();
        let best = rank_candidates(&top, weights)?;
        if best[0].index != 0 {
            mismatches += 1;
        }
    }
    Ok(mismatches as f64 / scenes.len() as f64)
}
