//! Maximum-likelihood and conjugate Bayesian estimation of CIM parameters.
//!
//! The rate prior uses the parameterization `p(q) ∝ q^α e^{-qτ}`, i.e. a
//! Gamma with shape `α + 1` and rate `τ`. Stored and serialized `α` values
//! always follow this convention. The next-state prior for row `(u, x)` is
//! Dirichlet with weights `α[x][x'|u]`, and the rate's `α[x|u]` is their sum.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{CtbnError, Result};
use crate::model::{
    instantiation_key, n_instantiations, parse_instantiation_key, variable_index, Cim, CtbnModel, Graph, VariableSpec,
};
use crate::stats::FamilyStats;

/// Hyperparameters for one family `(X, U)`.
///
/// Only `τ[x|u]` and `α[x][x'|u]` are stored; `α[x|u]` is always the row sum
/// of the Dirichlet weights, so the two priors stay coherent.
///
/// A posterior keeps the absorbed durations and counts apart from the prior
/// values and adds them on access. Updating with `s1` then `s2` therefore
/// gives bit-identical hyperparameters to one update with `s1 + s2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    var: usize,
    parents: Vec<usize>,
    card: usize,
    n_inst: usize,
    tau: Vec<f64>,
    alpha_theta: Vec<f64>,
    seen_time: Vec<f64>,
    seen_counts: Vec<u64>,
}

/// Posterior hyperparameters have the same shape and meaning as priors.
pub type PosteriorSpec = PriorSpec;

impl PriorSpec {
    /// Builds a prior from `τ[u][x]` and `α[u][x][x']` (diagonal ignored).
    pub fn from_parts(
        var: usize,
        parents: Vec<usize>,
        specs: &[VariableSpec],
        tau: Vec<Vec<f64>>,
        alpha_theta: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let card = specs[var].card();
        let n_inst = n_instantiations(&parents, specs);
        if tau.len() != n_inst || alpha_theta.len() != n_inst {
            return Err(CtbnError::ShapeMismatch(format!("expected {n_inst} instantiations")));
        }
        let mut out = Self {
            var,
            parents,
            card,
            n_inst,
            tau: vec![0.0; n_inst * card],
            alpha_theta: vec![0.0; n_inst * card * card],
            seen_time: vec![0.0; n_inst * card],
            seen_counts: vec![0; n_inst * card * card],
        };
        for u in 0..n_inst {
            if tau[u].len() != card || alpha_theta[u].len() != card {
                return Err(CtbnError::ShapeMismatch(format!("expected {card} states")));
            }
            for x in 0..card {
                let t = tau[u][x];
                if !(t > 0.0 && t.is_finite()) {
                    return Err(CtbnError::Invalid(format!("tau must be positive, got {t}")));
                }
                out.tau[u * card + x] = t;
                if alpha_theta[u][x].len() != card {
                    return Err(CtbnError::ShapeMismatch(format!("expected {card} targets")));
                }
                for y in (0..card).filter(|&y| y != x) {
                    let a = alpha_theta[u][x][y];
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(CtbnError::Invalid(format!(
                            "Dirichlet weights must be positive, got {a}"
                        )));
                    }
                    out.alpha_theta[(u * card + x) * card + y] = a;
                }
            }
        }
        Ok(out)
    }

    pub fn var(&self) -> usize {
        self.var
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn card(&self) -> usize {
        self.card
    }

    pub fn n_instantiations(&self) -> usize {
        self.n_inst
    }

    /// `τ[x|u]`.
    #[inline]
    pub fn tau(&self, u: usize, x: usize) -> f64 {
        let i = u * self.card + x;
        self.tau[i] + self.seen_time[i]
    }

    /// `α[x][y|u]`, zero on the diagonal.
    #[inline]
    pub fn alpha_theta(&self, u: usize, x: usize, y: usize) -> f64 {
        let i = (u * self.card + x) * self.card + y;
        self.alpha_theta[i] + self.seen_counts[i] as f64
    }

    /// `α[x|u] = Σ_{y≠x} α[x][y|u]`.
    pub fn alpha_q(&self, u: usize, x: usize) -> f64 {
        (0..self.card).map(|y| self.alpha_theta(u, x, y)).sum()
    }

    /// Mean of the rate under this Gamma: `(α + 1) / τ`.
    pub fn rate_mean(&self, u: usize, x: usize) -> f64 {
        (self.alpha_q(u, x) + 1.0) / self.tau(u, x)
    }

    fn matches(&self, stats: &FamilyStats) -> Result<()> {
        if self.var != stats.var()
            || self.parents != stats.parents()
            || self.card != stats.card()
            || self.n_inst != stats.n_instantiations()
        {
            return Err(CtbnError::ShapeMismatch(format!(
                "prior for ({}, {:?}) applied to statistics of ({}, {:?})",
                self.var,
                self.parents,
                stats.var(),
                stats.parents()
            )));
        }
        Ok(())
    }
}

/// Uniform hyperparameter pattern applied to any family: every
/// `α[x][x'|u] = alpha / (k - 1)` (so `α[x|u] = alpha`) and `τ[x|u] = tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPattern {
    pub alpha: f64,
    pub tau: f64,
}

impl Default for PriorPattern {
    fn default() -> Self {
        Self { alpha: 1.0, tau: 1.0 }
    }
}

impl PriorPattern {
    pub fn new(alpha: f64, tau: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(CtbnError::InvalidArgument(format!(
                "prior needs alpha > 0 and tau > 0, got alpha={alpha}, tau={tau}"
            )));
        }
        Ok(Self { alpha, tau })
    }

    pub fn for_family(&self, var: usize, parents: &[usize], specs: &[VariableSpec]) -> PriorSpec {
        let card = specs[var].card();
        let n_inst = n_instantiations(parents, specs);
        let w = self.alpha / (card - 1) as f64;
        let mut alpha_theta = vec![0.0; n_inst * card * card];
        for u in 0..n_inst {
            for x in 0..card {
                for y in (0..card).filter(|&y| y != x) {
                    alpha_theta[(u * card + x) * card + y] = w;
                }
            }
        }
        PriorSpec {
            var,
            parents: parents.to_vec(),
            card,
            n_inst,
            tau: vec![self.tau; n_inst * card],
            alpha_theta,
            seen_time: vec![0.0; n_inst * card],
            seen_counts: vec![0; n_inst * card * card],
        }
    }
}

/// Why an MLE cell fell back to a default value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    /// `T[x|u] = 0`: the rate is undefined and emitted as 0.
    ZeroTime,
    /// `M[x|u] = 0`: the next-state distribution is undefined and emitted uniform.
    NoTransitions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateCell {
    pub instantiation: usize,
    pub state: usize,
    pub kind: Degeneracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub cim: Cim,
    pub degenerate: Vec<DegenerateCell>,
}

/// `q̂ = M[x|u] / T[x|u]`, `θ̂ = M[x,x'|u] / M[x|u]`, with flagged fallbacks
/// for empty cells.
pub fn mle(stats: &FamilyStats) -> MleFit {
    let k = stats.card();
    let mut cim = Cim::zeros(k, stats.n_instantiations());
    let mut degenerate = Vec::new();
    for u in 0..stats.n_instantiations() {
        for x in 0..k {
            let t = stats.time(u, x);
            let m = stats.m_total(u, x);
            if t > 0.0 {
                cim.set_q(u, x, m as f64 / t);
            } else {
                degenerate.push(DegenerateCell {
                    instantiation: u,
                    state: x,
                    kind: Degeneracy::ZeroTime,
                });
            }
            if m > 0 {
                let row: Vec<f64> = (0..k).map(|y| stats.count(u, x, y) as f64 / m as f64).collect();
                cim.set_theta_row(u, x, &row);
            } else {
                degenerate.push(DegenerateCell {
                    instantiation: u,
                    state: x,
                    kind: Degeneracy::NoTransitions,
                });
            }
        }
    }
    MleFit { cim, degenerate }
}

/// Conjugate update: counts and durations are added to the hyperparameters.
pub fn posterior(prior: &PriorSpec, stats: &FamilyStats) -> Result<PosteriorSpec> {
    prior.matches(stats)?;
    let mut post = prior.clone();
    let k = prior.card;
    for u in 0..prior.n_inst {
        for x in 0..k {
            post.seen_time[u * k + x] += stats.time(u, x);
            for y in (0..k).filter(|&y| y != x) {
                post.seen_counts[(u * k + x) * k + y] += stats.count(u, x, y);
            }
        }
    }
    Ok(post)
}

/// Expected parameters with the hyperparameters acting as imaginary counts:
/// `q̃ = (α[x|u] + M[x|u]) / (τ[x|u] + T[x|u])` and
/// `θ̃ = (α[x][x'|u] + M[x,x'|u]) / (α[x|u] + M[x|u])`.
pub fn expected_params(prior: &PriorSpec, stats: &FamilyStats) -> Result<Cim> {
    prior.matches(stats)?;
    let k = prior.card;
    let mut cim = Cim::zeros(k, prior.n_inst);
    for u in 0..prior.n_inst {
        for x in 0..k {
            let m = stats.m_total(u, x) as f64;
            let a = prior.alpha_q(u, x);
            cim.set_q(u, x, (a + m) / (prior.tau(u, x) + stats.time(u, x)));
            let row: Vec<f64> = (0..k)
                .map(|y| {
                    if y == x {
                        0.0
                    } else {
                        (prior.alpha_theta(u, x, y) + stats.count(u, x, y) as f64) / (a + m)
                    }
                })
                .collect();
            cim.set_theta_row(u, x, &row);
        }
    }
    Ok(cim)
}

#[derive(Debug, Serialize, Deserialize)]
struct CellPrior {
    tau: Vec<f64>,
    alpha_theta: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyPrior {
    parents: Vec<String>,
    cells: IndexMap<String, CellPrior>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PriorFile {
    Pattern(PriorPattern),
    Explicit { families: IndexMap<String, FamilyPrior> },
}

/// Hyperparameters loaded from a prior file: either the scalar shorthand
/// `{"alpha": a, "tau": t}` or explicit per-family cells.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSource {
    Pattern(PriorPattern),
    Explicit(Vec<Option<PriorSpec>>),
}

impl PriorSource {
    pub fn from_json_str(text: &str, specs: &[VariableSpec]) -> Result<Self> {
        match serde_json::from_str::<PriorFile>(text)? {
            PriorFile::Pattern(p) => Ok(PriorSource::Pattern(PriorPattern::new(p.alpha, p.tau)?)),
            PriorFile::Explicit { families } => {
                let mut out = vec![None; specs.len()];
                for (name, fam) in families {
                    let x = variable_index(specs, &name)?;
                    let mut parents = fam
                        .parents
                        .iter()
                        .map(|p| variable_index(specs, p))
                        .collect::<Result<Vec<_>>>()?;
                    parents.sort_unstable();
                    let k = specs[x].card();
                    let m = n_instantiations(&parents, specs);
                    let mut tau = vec![Vec::new(); m];
                    let mut alpha = vec![Vec::new(); m];
                    for (key, cell) in &fam.cells {
                        let u = parse_instantiation_key(key, &parents, specs)?;
                        tau[u] = cell.tau.clone();
                        alpha[u] = cell
                            .alpha_theta
                            .iter()
                            .map(|row| row.iter().map(|v| v.unwrap_or(0.0)).collect())
                            .collect();
                    }
                    if let Some(u) = tau.iter().position(Vec::is_empty) {
                        return Err(CtbnError::Invalid(format!(
                            "prior for `{name}` misses instantiation [{}]",
                            instantiation_key(&parents, specs, u)
                        )));
                    }
                    let _ = k;
                    out[x] = Some(PriorSpec::from_parts(x, parents, specs, tau, alpha)?);
                }
                Ok(PriorSource::Explicit(out))
            }
        }
    }

    pub fn read(path: impl AsRef<Path>, specs: &[VariableSpec]) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, specs)
    }

    /// Prior for `(var, parents)`; explicit priors must cover that family exactly.
    pub fn for_family(&self, var: usize, parents: &[usize], specs: &[VariableSpec]) -> Result<PriorSpec> {
        match self {
            PriorSource::Pattern(p) => Ok(p.for_family(var, parents, specs)),
            PriorSource::Explicit(all) => match all.get(var).and_then(Option::as_ref) {
                Some(p) if p.parents == parents => Ok(p.clone()),
                Some(_) => Err(CtbnError::ShapeMismatch(format!(
                    "prior for `{}` was written for a different parent set",
                    specs[var].name()
                ))),
                None => Err(CtbnError::Invalid(format!("no prior for `{}`", specs[var].name()))),
            },
        }
    }
}

/// Serializes a prior in the explicit file format.
pub fn priors_to_json(priors: &[PriorSpec], specs: &[VariableSpec]) -> Result<String> {
    let mut families = IndexMap::new();
    for p in priors {
        let mut cells = IndexMap::new();
        for u in 0..p.n_inst {
            cells.insert(
                instantiation_key(&p.parents, specs, u),
                CellPrior {
                    tau: (0..p.card).map(|x| p.tau(u, x)).collect(),
                    alpha_theta: (0..p.card)
                        .map(|x| (0..p.card).map(|y| (x != y).then(|| p.alpha_theta(u, x, y))).collect())
                        .collect(),
                },
            );
        }
        families.insert(
            specs[p.var].name().to_string(),
            FamilyPrior {
                parents: p.parents.iter().map(|&q| specs[q].name().to_string()).collect(),
                cells,
            },
        );
    }
    Ok(serde_json::to_string_pretty(&PriorFile::Explicit { families })?)
}

/// Fits CIMs for a fixed structure by expected parameters and the initial
/// distribution by add-one-smoothed frequencies of the trajectories' initial
/// states.
pub fn fit_model(data: &crate::trajectory::Dataset, graph: &Graph, priors: &PriorSource) -> Result<CtbnModel> {
    let specs = data.specs();
    if graph.n_vars() != specs.len() {
        return Err(CtbnError::ShapeMismatch("graph and data disagree on variables".into()));
    }
    let cims = crate::par::map_range(specs.len(), |x| -> Result<Cim> {
        let stats = crate::stats::family_stats(data, x, graph.parents(x))?;
        let prior = priors.for_family(x, graph.parents(x), specs)?;
        expected_params(&prior, &stats)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    CtbnModel::new(specs.to_vec(), graph.clone(), cims, initial_frequencies(data))
}

/// Add-one-smoothed frequencies of each variable's initial value.
pub fn initial_frequencies(data: &crate::trajectory::Dataset) -> Vec<Vec<f64>> {
    data.specs()
        .iter()
        .enumerate()
        .map(|(x, spec)| {
            let mut counts = vec![1.0; spec.card()];
            for t in data.trajectories() {
                counts[t.initial[x]] += 1.0;
            }
            let total: f64 = counts.iter().sum();
            counts.iter().map(|c| c / total).collect()
        })
        .collect()
}
