//! Time-sliced DBN baseline.
//!
//! Trajectories are sampled on a grid `0, Δ, 2Δ, ...`; each variable's value
//! at the end of a slice is predicted from previous-slice parents (which may
//! include the variable itself). There are no intra-slice edges, so the
//! search decomposes per variable exactly like the CTBN search.
//!
//! To compare against continuous-time densities, the slice likelihood is
//! augmented: each within-slice event is placed uniformly (density `1/Δ`),
//! and a per-variable parameter `p_multi` gives the probability of two or
//! more events of that variable in one slice.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CtbnError, Result};
use crate::model::{
    instantiation_index, instantiation_key, n_instantiations, parse_instantiation_key, specs_from_entries,
    specs_to_entries, variable_index, VariableEntry, VariableSpec, SIMPLEX_TOL,
};
use crate::par;
use crate::trajectory::Dataset;

/// One trajectory on the slice grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedTrajectory {
    /// Full assignment at each grid point; `n_slices + 1` entries.
    pub states: Vec<Vec<usize>>,
    /// `counts[j][v]`: events of variable `v` inside slice `j`.
    pub counts: Vec<Vec<u32>>,
}

impl SlicedTrajectory {
    pub fn n_slices(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedData {
    pub delta_t: f64,
    pub specs: Vec<VariableSpec>,
    pub trajectories: Vec<SlicedTrajectory>,
}

impl SlicedData {
    pub fn n_slices(&self) -> usize {
        self.trajectories.iter().map(SlicedTrajectory::n_slices).sum()
    }

    /// Iterates `(start state, end state, per-variable event counts)`.
    pub fn slices(&self) -> impl Iterator<Item = (&[usize], &[usize], &[u32])> {
        self.trajectories.iter().flat_map(|t| {
            (0..t.n_slices()).map(move |j| {
                (
                    t.states[j].as_slice(),
                    t.states[j + 1].as_slice(),
                    t.counts[j].as_slice(),
                )
            })
        })
    }
}

/// Number of whole slices of width `delta_t` in `[0, end_time]`.
fn whole_slices(end_time: f64, delta_t: f64) -> usize {
    // the epsilon keeps e.g. 10 / 0.1 from rounding down to 99
    ((end_time / delta_t) * (1.0 + 1e-12)).floor() as usize
}

/// Samples every trajectory at `0, Δ, 2Δ, ...`, dropping a final partial
/// slice. Slice `j` covers `(jΔ, (j+1)Δ]`; an event at a grid time belongs
/// to the slice ending there.
pub fn discretize(data: &Dataset, delta_t: f64) -> Result<SlicedData> {
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(CtbnError::InvalidArgument(format!(
            "delta_t must be positive, got {delta_t}"
        )));
    }
    let n = data.n_vars();
    let mut out = Vec::with_capacity(data.len());
    for (idx, traj) in data.trajectories().iter().enumerate() {
        let slices = whole_slices(traj.end_time, delta_t);
        if slices == 0 {
            log::warn!(
                "trajectory {idx} (end_time {}) is shorter than delta_t {delta_t}; it contributes no slices",
                traj.end_time
            );
        }
        let grid = |j: usize| (j as f64 * delta_t).min(traj.end_time);
        let mut states = Vec::with_capacity(slices + 1);
        let mut counts = vec![vec![0u32; n]; slices];
        let mut state = traj.initial.clone();
        let mut ev = traj.events.iter().peekable();
        states.push(state.clone());
        for (j, slice_counts) in counts.iter_mut().enumerate() {
            let end = grid(j + 1);
            while let Some(e) = ev.next_if(|e| e.time <= end) {
                state[e.var] = e.value;
                slice_counts[e.var] += 1;
            }
            states.push(state.clone());
        }
        out.push(SlicedTrajectory { states, counts });
    }
    Ok(SlicedData {
        delta_t,
        specs: data.specs().to_vec(),
        trajectories: out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    delta_t: f64,
    specs: Vec<VariableSpec>,
    /// Previous-slice parents, sorted; may include the variable itself.
    parents: Vec<Vec<usize>>,
    /// `cpts[v][u * k + x']`.
    cpts: Vec<Vec<f64>>,
    p_multi: Vec<f64>,
}

impl DbnModel {
    pub fn new(
        delta_t: f64,
        specs: Vec<VariableSpec>,
        parents: Vec<Vec<usize>>,
        cpts: Vec<Vec<f64>>,
        p_multi: Vec<f64>,
    ) -> Result<Self> {
        let n = specs.len();
        if parents.len() != n || cpts.len() != n || p_multi.len() != n {
            return Err(CtbnError::ShapeMismatch("one entry per variable expected".into()));
        }
        let mut sorted = parents;
        for ps in &mut sorted {
            ps.sort_unstable();
            if ps.windows(2).any(|w| w[0] == w[1]) || ps.iter().any(|&p| p >= n) {
                return Err(CtbnError::Invalid("bad previous-slice parent list".into()));
            }
        }
        for v in 0..n {
            let k = specs[v].card();
            let m = n_instantiations(&sorted[v], &specs);
            if cpts[v].len() != m * k {
                return Err(CtbnError::ShapeMismatch(format!(
                    "CPT of `{}` needs {m}x{k} entries",
                    specs[v].name()
                )));
            }
            for u in 0..m {
                let row = &cpts[v][u * k..(u + 1) * k];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(CtbnError::Invalid(format!(
                        "CPT row {u} of `{}` is not a distribution",
                        specs[v].name()
                    )));
                }
            }
            if !(0.0..=1.0).contains(&p_multi[v]) {
                return Err(CtbnError::Invalid(format!(
                    "p_multi of `{}` outside [0, 1]",
                    specs[v].name()
                )));
            }
        }
        Ok(Self {
            delta_t,
            specs,
            parents: sorted,
            cpts,
            p_multi,
        })
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn cpt(&self, v: usize, u: usize, x: usize) -> f64 {
        self.cpts[v][u * self.specs[v].card() + x]
    }

    pub fn p_multi(&self, v: usize) -> f64 {
        self.p_multi[v]
    }

    /// Free CPT parameters: `Σ_v |Val(Pa_v)| (k_v - 1)`.
    pub fn n_parameters(&self) -> usize {
        (0..self.specs.len())
            .map(|v| n_instantiations(self.parents(v), &self.specs) * (self.specs[v].card() - 1))
            .sum()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut cpts = IndexMap::new();
        let mut p_multi = IndexMap::new();
        for v in 0..self.specs.len() {
            let k = self.specs[v].card();
            let ps = self.parents(v);
            let rows = (0..n_instantiations(ps, &self.specs))
                .map(|u| {
                    (
                        instantiation_key(ps, &self.specs, u),
                        self.cpts[v][u * k..(u + 1) * k].to_vec(),
                    )
                })
                .collect();
            cpts.insert(self.specs[v].name().to_string(), rows);
            p_multi.insert(self.specs[v].name().to_string(), self.p_multi[v]);
        }
        Ok(serde_json::to_string_pretty(&DbnFile {
            delta_t: self.delta_t,
            variables: specs_to_entries(&self.specs),
            parents: self
                .parents
                .iter()
                .enumerate()
                .map(|(v, ps)| {
                    let names = ps.iter().map(|&p| self.specs[p].name().to_string()).collect();
                    (self.specs[v].name().to_string(), names)
                })
                .collect(),
            cpts,
            p_multi,
        })?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DbnFile = serde_json::from_str(text)?;
        let specs = specs_from_entries(file.variables)?;
        let mut parents = vec![Vec::new(); specs.len()];
        for (child, ps) in &file.parents {
            let mut idx = ps
                .iter()
                .map(|p| variable_index(&specs, p))
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            parents[variable_index(&specs, child)?] = idx;
        }
        let n = specs.len();
        let mut cpts = Vec::with_capacity(n);
        let mut p_multi = Vec::with_capacity(n);
        for v in 0..n {
            let name = specs[v].name();
            let k = specs[v].card();
            let ps = &parents[v];
            let m = n_instantiations(ps, &specs);
            let rows = file
                .cpts
                .get(name)
                .ok_or_else(|| CtbnError::Invalid(format!("no CPT for `{name}`")))?;
            let mut cpt = vec![f64::NAN; m * k];
            for (key, row) in rows {
                let u = parse_instantiation_key(key, ps, &specs)?;
                if row.len() != k {
                    return Err(CtbnError::ShapeMismatch(format!(
                        "CPT row [{key}] of `{name}` needs {k} entries"
                    )));
                }
                cpt[u * k..(u + 1) * k].copy_from_slice(row);
            }
            cpts.push(cpt);
            p_multi.push(
                *file
                    .p_multi
                    .get(name)
                    .ok_or_else(|| CtbnError::Invalid(format!("no p_multi for `{name}`")))?,
            );
        }
        DbnModel::new(file.delta_t, specs, parents, cpts, p_multi)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json_string()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DbnFile {
    delta_t: f64,
    variables: Vec<VariableEntry>,
    parents: IndexMap<String, Vec<String>>,
    cpts: IndexMap<String, IndexMap<String, Vec<f64>>>,
    p_multi: IndexMap<String, f64>,
}

/// Counts `N[u][x']` of end-of-slice values of `var` under start-of-slice
/// parent instantiations.
fn slice_counts(sliced: &SlicedData, var: usize, parents: &[usize]) -> Vec<u64> {
    let k = sliced.specs[var].card();
    let m = n_instantiations(parents, &sliced.specs);
    let mut counts = vec![0u64; m * k];
    for (start, end, _) in sliced.slices() {
        let u = instantiation_index(parents, &sliced.specs, start);
        counts[u * k + end[var]] += 1;
    }
    counts
}

/// Dirichlet–multinomial log marginal with symmetric weight `alpha` per cell.
fn dirichlet_score(counts: &[u64], k: usize, alpha: f64) -> f64 {
    counts
        .chunks(k)
        .map(|row| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                return 0.0;
            }
            ln_gamma(k as f64 * alpha) - ln_gamma(k as f64 * alpha + n as f64)
                + row
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| ln_gamma(alpha + c as f64) - ln_gamma(alpha))
                    .sum::<f64>()
        })
        .sum()
}

fn greedy_dbn_family(sliced: &SlicedData, var: usize, max_parents: usize, alpha: f64) -> Vec<usize> {
    let n = sliced.specs.len();
    let k = sliced.specs[var].card();
    let score = |ps: &[usize]| dirichlet_score(&slice_counts(sliced, var, ps), k, alpha);
    let mut parents: Vec<usize> = Vec::new();
    let mut current = score(&parents);
    loop {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut candidates = Vec::new();
        if parents.len() < max_parents {
            for z in (0..n).filter(|z| !parents.contains(z)) {
                let mut c = parents.clone();
                c.insert(c.binary_search(&z).unwrap_err(), z);
                candidates.push(c);
            }
        }
        for i in 0..parents.len() {
            let mut c = parents.clone();
            c.remove(i);
            candidates.push(c);
        }
        for c in candidates {
            let s = score(&c);
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((c, s));
            }
        }
        match best {
            Some((c, s)) if s > current => {
                parents = c;
                current = s;
            }
            _ => return parents,
        }
    }
}

/// Learns previous-slice parent sets by per-variable greedy search on the
/// Dirichlet–multinomial marginal (symmetric weight `prior_strength` per
/// cell), sets CPTs to posterior means and
/// `p_multi = (#slices with ≥ 2 events + 1) / (#slices + 2)`.
pub fn dbn_learn(sliced: &SlicedData, max_parents: usize, prior_strength: f64) -> Result<DbnModel> {
    let total = sliced.n_slices();
    if total == 0 {
        return Err(CtbnError::EmptyData("no complete slices to learn from".into()));
    }
    if !(prior_strength > 0.0 && prior_strength.is_finite()) {
        return Err(CtbnError::InvalidArgument(format!(
            "prior strength must be positive, got {prior_strength}"
        )));
    }
    let n = sliced.specs.len();
    let parents = par::map_range(n, |v| greedy_dbn_family(sliced, v, max_parents.min(n), prior_strength));
    let mut cpts = Vec::with_capacity(n);
    let mut p_multi = Vec::with_capacity(n);
    for v in 0..n {
        let k = sliced.specs[v].card();
        let counts = slice_counts(sliced, v, &parents[v]);
        let mut cpt = Vec::with_capacity(counts.len());
        for row in counts.chunks(k) {
            let denom = row.iter().sum::<u64>() as f64 + k as f64 * prior_strength;
            cpt.extend(row.iter().map(|&c| (c as f64 + prior_strength) / denom));
        }
        cpts.push(cpt);
        let multi = sliced.slices().filter(|(_, _, c)| c[v] >= 2).count();
        p_multi.push((multi as f64 + 1.0) / (total as f64 + 2.0));
    }
    DbnModel::new(sliced.delta_t, sliced.specs.clone(), parents, cpts, p_multi)
}

/// Free parameters of a fully connected binary DBN over `n` variables. With
/// intra-slice arcs the `i`-th next-slice variable also conditions on the
/// `i - 1` earlier ones: `Σ_i 2^(n+i-1)`; without them each has `2^n` rows.
pub fn count_dbn_parameters(n_vars: usize, intra_slice: bool) -> usize {
    if intra_slice {
        (1..=n_vars).map(|i| 1usize << (n_vars + i - 1)).sum()
    } else {
        n_vars << n_vars
    }
}

/// Augmented slice log-likelihood of `data` under `model`. Per slice and
/// variable with `k` events: `ln CPT + ln(1 - p_multi)` when `k ≤ 1` or
/// `ln p_multi` when `k ≥ 2`, plus `k ln(1/Δ)`.
pub fn dbn_loglik(model: &DbnModel, data: &Dataset) -> Result<f64> {
    if model.specs() != data.specs() {
        return Err(CtbnError::ShapeMismatch(
            "model and data use different variables".into(),
        ));
    }
    let sliced = discretize(data, model.delta_t)?;
    let inv_dt = (1.0 / model.delta_t).ln();
    let n = model.specs.len();
    let mut ll = 0.0;
    for (start, end, counts) in sliced.slices() {
        for v in 0..n {
            let u = instantiation_index(model.parents(v), &model.specs, start);
            ll += model.cpt(v, u, end[v]).ln();
            let k = counts[v];
            let p = model.p_multi[v];
            ll += if k <= 1 { (1.0 - p).ln() } else { p.ln() };
            ll += k as f64 * inv_dt;
        }
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Event, Trajectory};

    fn one_event(delta: f64) -> SlicedData {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![0], 1.0, vec![Event::new(0.5, 0, 1)])],
        )
        .unwrap();
        discretize(&d, delta).unwrap()
    }

    #[test]
    fn single_slice_reflects_event() {
        let s = one_event(1.0);
        let t = &s.trajectories[0];
        assert_eq!(t.states, vec![vec![0], vec![1]]);
        assert_eq!(t.counts, vec![vec![1]]);
    }

    #[test]
    fn quarter_slices_place_event_in_second_slice() {
        let s = one_event(0.25);
        let t = &s.trajectories[0];
        assert_eq!(t.n_slices(), 4);
        assert_eq!(t.counts, vec![vec![0], vec![1], vec![0], vec![0]]);
        assert_eq!(t.states, vec![vec![0], vec![0], vec![1], vec![1], vec![1]]);
    }

    #[test]
    fn no_events_give_constant_slices() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![1], 3.0, vec![])],
        )
        .unwrap();
        let s = discretize(&d, 1.0).unwrap();
        assert!(s.trajectories[0].states.iter().all(|v| v == &vec![1]));
        assert!(s.slices().all(|(_, _, c)| c[0] == 0));
    }

    #[test]
    fn short_trajectory_contributes_nothing() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![1], 0.5, vec![])],
        )
        .unwrap();
        let s = discretize(&d, 1.0).unwrap();
        assert_eq!(s.n_slices(), 0);
        assert!(dbn_learn(&s, 1, 1.0).is_err());
    }

    #[test]
    fn grid_does_not_lose_the_last_slice() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![1], 10.0, vec![])],
        )
        .unwrap();
        assert_eq!(discretize(&d, 0.1).unwrap().n_slices(), 100);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_dbn_parameters(2, true), 12);
        assert_eq!(count_dbn_parameters(1, true), 2);
        assert_eq!(count_dbn_parameters(1, false), 2);
        assert_eq!(count_dbn_parameters(2, false), 8);
    }

    fn persistent_model(p_multi: f64) -> DbnModel {
        DbnModel::new(
            2.0,
            vec![VariableSpec::binary("X")],
            vec![vec![0]],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![p_multi],
        )
        .unwrap()
    }

    #[test]
    fn identity_cpt_on_constant_data_scores_zero() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![0], 6.0, vec![])],
        )
        .unwrap();
        assert_eq!(dbn_loglik(&persistent_model(0.0), &d).unwrap(), 0.0);
    }

    #[test]
    fn one_event_adds_uniform_density() {
        let m = DbnModel::new(
            2.0,
            vec![VariableSpec::binary("X")],
            vec![vec![0]],
            vec![vec![0.5, 0.5, 0.5, 0.5]],
            vec![0.2],
        )
        .unwrap();
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![0], 2.0, vec![Event::new(1.0, 0, 1)])],
        )
        .unwrap();
        let expected = 0.5f64.ln() + 0.8f64.ln() + 0.5f64.ln();
        assert!((dbn_loglik(&m, &d).unwrap() - expected).abs() < 1e-15);
        // a forbidden outcome is impossible data
        assert_eq!(dbn_loglik(&persistent_model(0.0), &d).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn persistence_data_learns_identity() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X"), VariableSpec::binary("Y")],
            (0..20)
                .map(|i| Trajectory::new(vec![i % 2, (i / 2) % 2], 50.0, vec![]))
                .collect(),
        )
        .unwrap();
        let m = dbn_learn(&discretize(&d, 1.0).unwrap(), 2, 1.0).unwrap();
        assert_eq!(m.parents(0), &[0]);
        assert!(m.cpt(0, 0, 0) > 0.99 && m.cpt(0, 1, 1) > 0.99);
        assert!(m.p_multi(0) < 0.01);
    }

    #[test]
    fn json_round_trip() {
        let m = persistent_model(0.25);
        let back = DbnModel::from_json_str(&m.to_json_string().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
