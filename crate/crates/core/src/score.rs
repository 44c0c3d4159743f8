//! Log-likelihood, closed-form marginal likelihoods and the decomposable
//! Bayesian structure score, plus its BIC approximation.
//!
//! Everything is computed in log space through `ln Γ`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CtbnError, Result};
use crate::estimate::{mle, PriorPattern, PriorSpec};
use crate::model::{dimension, Cim, CtbnModel, Graph};
use crate::par;
use crate::stats::{family_stats, FamilyStats};
use crate::trajectory::Dataset;

/// What `|D|` means in the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSize {
    /// Total number of transition events.
    #[default]
    Transitions,
    /// Number of trajectories.
    Trajectories,
    /// Total observed time.
    TotalTime,
}

impl DataSize {
    pub fn measure(self, data: &Dataset) -> f64 {
        match self {
            DataSize::Transitions => data.n_events() as f64,
            DataSize::Trajectories => data.len() as f64,
            DataSize::TotalTime => data.total_time(),
        }
    }
}

impl std::str::FromStr for DataSize {
    type Err = CtbnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transitions" => Ok(DataSize::Transitions),
            "trajectories" => Ok(DataSize::Trajectories),
            "total-time" | "total_time" => Ok(DataSize::TotalTime),
            other => Err(CtbnError::InvalidArgument(format!(
                "unknown data-size convention `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub prior: PriorPattern,
    /// `c` in `ln P(Pa(X) = U) = -c |U|`.
    pub structure_penalty: f64,
    pub data_size: DataSize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            prior: PriorPattern::default(),
            structure_penalty: 0.0,
            data_size: DataSize::Transitions,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.structure_penalty >= 0.0 && self.structure_penalty.is_finite()) {
            return Err(CtbnError::InvalidArgument(format!(
                "structure penalty must be >= 0, got {}",
                self.structure_penalty
            )));
        }
        PriorPattern::new(self.prior.alpha, self.prior.tau).map(|_| ())
    }

    pub fn log_structure_prior(&self, n_parents: usize) -> f64 {
        0.0 - self.structure_penalty * n_parents as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub log_marg_q: f64,
    pub log_marg_theta: f64,
    pub log_structure_prior: f64,
    pub total: f64,
}

impl FamilyScore {
    pub fn new(log_marg_q: f64, log_marg_theta: f64, log_structure_prior: f64) -> Self {
        Self {
            log_marg_q,
            log_marg_theta,
            log_structure_prior,
            total: log_marg_q + log_marg_theta + log_structure_prior,
        }
    }
}

/// `x ln y` with `0 ln 0 = 0`.
#[inline]
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `ℓ_X = Σ M[x|u] ln q − q T[x|u] + Σ M[x,x'|u] ln θ` for one family.
/// Returns `-∞` when the data contain a transition the CIM forbids.
pub fn family_loglik(cim: &Cim, stats: &FamilyStats) -> f64 {
    let k = stats.card();
    let mut ll = 0.0;
    for u in 0..stats.n_instantiations() {
        for x in 0..k {
            let q = cim.q(u, x);
            ll += xlny(stats.m_total(u, x) as f64, q) - q * stats.time(u, x);
            for y in (0..k).filter(|&y| y != x) {
                ll += xlny(stats.count(u, x, y) as f64, cim.theta(u, x, y));
            }
        }
    }
    ll
}

/// Transition-model log-likelihood of `data`, optionally plus the
/// log-probability of each trajectory's initial state.
pub fn loglik(model: &CtbnModel, data: &Dataset, include_initial: bool) -> Result<f64> {
    if model.specs() != data.specs() {
        return Err(CtbnError::ShapeMismatch(
            "model and data use different variables".into(),
        ));
    }
    let per_var = par::map_range(model.n_vars(), |x| -> Result<f64> {
        let stats = family_stats(data, x, model.graph().parents(x))?;
        Ok(family_loglik(model.cim(x), &stats))
    });
    let mut ll = 0.0;
    for v in per_var {
        ll += v?;
    }
    if include_initial {
        for t in data.trajectories() {
            for (x, &s) in t.initial.iter().enumerate() {
                ll += model.initial(x)[s].ln();
            }
        }
    }
    Ok(ll)
}

fn check_prior(stats: &FamilyStats, prior: &PriorSpec) -> Result<()> {
    if stats.var() != prior.var()
        || stats.parents() != prior.parents()
        || stats.n_instantiations() != prior.n_instantiations()
    {
        return Err(CtbnError::ShapeMismatch(
            "prior and statistics describe different families".into(),
        ));
    }
    Ok(())
}

/// `ln MargL^q`: the rate parameters integrated against their Gamma priors,
/// `Σ ln Γ(α+M+1) + (α+1) ln τ − ln Γ(α+1) − (α+M+1) ln(τ+T)`.
pub fn marg_l_q(stats: &FamilyStats, prior: &PriorSpec) -> Result<f64> {
    check_prior(stats, prior)?;
    let mut out = 0.0;
    for u in 0..stats.n_instantiations() {
        for x in 0..stats.card() {
            let a = prior.alpha_q(u, x);
            let tau = prior.tau(u, x);
            let m = stats.m_total(u, x) as f64;
            let t = stats.time(u, x);
            out += ln_gamma(a + m + 1.0) - ln_gamma(a + 1.0) + (a + 1.0) * tau.ln() - (a + m + 1.0) * (tau + t).ln();
        }
    }
    Ok(out)
}

/// `ln MargL^θ`: the Dirichlet–multinomial marginal of the next-state
/// choices, `Σ ln Γ(α_x) − ln Γ(α_x + M_x) + Σ_{x'} ln Γ(α_{xx'} + M_{xx'}) − ln Γ(α_{xx'})`.
pub fn marg_l_theta(stats: &FamilyStats, prior: &PriorSpec) -> Result<f64> {
    check_prior(stats, prior)?;
    let k = stats.card();
    let mut out = 0.0;
    for u in 0..stats.n_instantiations() {
        for x in 0..k {
            let m = stats.m_total(u, x);
            if m == 0 {
                continue;
            }
            let a = prior.alpha_q(u, x);
            out += ln_gamma(a) - ln_gamma(a + m as f64);
            for y in (0..k).filter(|&y| y != x) {
                let c = stats.count(u, x, y);
                if c > 0 {
                    let ay = prior.alpha_theta(u, x, y);
                    out += ln_gamma(ay + c as f64) - ln_gamma(ay);
                }
            }
        }
    }
    debug_assert!(out <= 1e-9 * (1.0 + out.abs()), "probability above one: {out}");
    Ok(out)
}

/// Family score from precomputed statistics.
pub fn fam_score_from_stats(stats: &FamilyStats, prior: &PriorSpec, cfg: &ScoreConfig) -> Result<FamilyScore> {
    Ok(FamilyScore::new(
        marg_l_q(stats, prior)?,
        marg_l_theta(stats, prior)?,
        cfg.log_structure_prior(stats.parents().len()),
    ))
}

/// `ln P(Pa(X)=U) + ln MargL^q + ln MargL^θ` for `X = var`, `U = parents`.
pub fn fam_score(data: &Dataset, var: usize, parents: &[usize], cfg: &ScoreConfig) -> Result<FamilyScore> {
    let stats = family_stats(data, var, parents)?;
    let prior = cfg.prior.for_family(var, stats.parents(), data.specs());
    fam_score_from_stats(&stats, &prior, cfg)
}

/// Per-variable family scores of `graph`.
pub fn family_scores(graph: &Graph, data: &Dataset, cfg: &ScoreConfig) -> Result<Vec<FamilyScore>> {
    if graph.n_vars() != data.n_vars() {
        return Err(CtbnError::ShapeMismatch("graph and data disagree on variables".into()));
    }
    par::map_range(graph.n_vars(), |x| fam_score(data, x, graph.parents(x), cfg))
        .into_iter()
        .collect()
}

/// Bayesian score `ln P(D|G) + ln P(G)`, the sum of the family totals.
pub fn structure_score(graph: &Graph, data: &Dataset, cfg: &ScoreConfig) -> Result<f64> {
    Ok(family_scores(graph, data, cfg)?.iter().map(|f| f.total).sum())
}

/// `ℓ(q̂, θ̂ : D) − (ln|D| / 2) · Dim[G]` with MLE parameters.
pub fn bic_score(graph: &Graph, data: &Dataset, convention: DataSize) -> Result<f64> {
    if graph.n_vars() != data.n_vars() {
        return Err(CtbnError::ShapeMismatch("graph and data disagree on variables".into()));
    }
    let size = convention.measure(data);
    if !(size >= 1.0) {
        return Err(CtbnError::EmptyData(format!(
            "BIC needs |D| >= 1 under {convention:?}, got {size}"
        )));
    }
    let lls = par::map_range(graph.n_vars(), |x| -> Result<f64> {
        let stats = family_stats(data, x, graph.parents(x))?;
        Ok(family_loglik(&mle(&stats).cim, &stats))
    });
    let mut ll = 0.0;
    for v in lls {
        ll += v?;
    }
    Ok(ll - size.ln() / 2.0 * dimension(graph, data.specs())? as f64)
}
