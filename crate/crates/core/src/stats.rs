//! Sufficient statistics `T[x|u]` (time spent) and `M[x,x'|u]` (transition
//! counts) for a variable and a candidate parent set.
//!
//! Durations are split at every event of the child or of a parent. The
//! parent context of a child transition is the assignment just before the
//! event, which is unambiguous because simultaneous events are rejected.

use std::ops::Add;

use crate::error::{CtbnError, Result};
use crate::model::{instantiation_index, n_instantiations, VariableSpec};
use crate::par;
use crate::trajectory::{Dataset, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyStats {
    var: usize,
    parents: Vec<usize>,
    card: usize,
    n_inst: usize,
    time: Vec<f64>,
    counts: Vec<u64>,
}

impl FamilyStats {
    pub fn zeros(var: usize, parents: Vec<usize>, specs: &[VariableSpec]) -> Self {
        let card = specs[var].card();
        let n_inst = n_instantiations(&parents, specs);
        Self {
            var,
            parents,
            card,
            n_inst,
            time: vec![0.0; n_inst * card],
            counts: vec![0; n_inst * card * card],
        }
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

    /// `T[x|u]`.
    #[inline]
    pub fn time(&self, u: usize, x: usize) -> f64 {
        self.time[u * self.card + x]
    }

    /// `M[x,y|u]`; zero on the diagonal.
    #[inline]
    pub fn count(&self, u: usize, x: usize, y: usize) -> u64 {
        self.counts[(u * self.card + x) * self.card + y]
    }

    /// `M[x|u]`, the number of transitions leaving `x` under `u`.
    pub fn m_total(&self, u: usize, x: usize) -> u64 {
        let base = (u * self.card + x) * self.card;
        self.counts[base..base + self.card].iter().sum()
    }

    pub fn total_time(&self) -> f64 {
        self.time.iter().sum()
    }

    pub fn n_transitions(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0) && self.time.iter().all(|&t| t == 0.0)
    }

    /// Builds statistics directly from `T[u][x]` and `M[u][x][y]`.
    pub fn from_parts(
        var: usize,
        parents: Vec<usize>,
        specs: &[VariableSpec],
        time: Vec<Vec<f64>>,
        counts: Vec<Vec<Vec<u64>>>,
    ) -> Result<Self> {
        let mut s = Self::zeros(var, parents, specs);
        if time.len() != s.n_inst || counts.len() != s.n_inst {
            return Err(CtbnError::ShapeMismatch(format!(
                "expected {} instantiations",
                s.n_inst
            )));
        }
        let k = s.card;
        for u in 0..s.n_inst {
            if time[u].len() != k || counts[u].len() != k {
                return Err(CtbnError::ShapeMismatch(format!("expected {k} states")));
            }
            for x in 0..k {
                if time[u][x] < 0.0 {
                    return Err(CtbnError::Invalid("negative duration".into()));
                }
                s.time[u * k + x] = time[u][x];
                if counts[u][x].len() != k {
                    return Err(CtbnError::ShapeMismatch(format!("expected {k} targets")));
                }
                for y in 0..k {
                    if x != y {
                        s.counts[(u * k + x) * k + y] = counts[u][x][y];
                    }
                }
            }
        }
        Ok(s)
    }

    /// Sums out every parent not in `keep` (which must be a subset of the
    /// current parents).
    pub fn marginalize(&self, keep: &[usize], specs: &[VariableSpec]) -> Result<FamilyStats> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        if let Some(p) = keep.iter().find(|p| !self.parents.contains(p)) {
            return Err(CtbnError::InvalidArgument(format!("{p} is not a parent")));
        }
        let mut out = FamilyStats::zeros(self.var, keep.clone(), specs);
        let mut assignment = vec![0; specs.len()];
        let k = self.card;
        for u in 0..self.n_inst {
            let values = crate::model::decode_instantiation(&self.parents, specs, u);
            for (&p, &v) in self.parents.iter().zip(&values) {
                assignment[p] = v;
            }
            let w = instantiation_index(&keep, specs, &assignment);
            for x in 0..k {
                out.time[w * k + x] += self.time(u, x);
                for y in 0..k {
                    out.counts[(w * k + x) * k + y] += self.count(u, x, y);
                }
            }
        }
        Ok(out)
    }

    fn check_same_family(&self, other: &FamilyStats) {
        assert!(
            self.var == other.var && self.parents == other.parents && self.card == other.card,
            "statistics of different families cannot be combined"
        );
    }
}

impl Add for &FamilyStats {
    type Output = FamilyStats;

    fn add(self, rhs: &FamilyStats) -> FamilyStats {
        self.check_same_family(rhs);
        FamilyStats {
            var: self.var,
            parents: self.parents.clone(),
            card: self.card,
            n_inst: self.n_inst,
            time: self.time.iter().zip(&rhs.time).map(|(a, b)| a + b).collect(),
            counts: self.counts.iter().zip(&rhs.counts).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Neumaier-compensated running sums.
#[derive(Clone)]
struct CompensatedSums {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSums {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, i: usize, v: f64) {
        let s = self.sum[i];
        let t = s + v;
        if s.abs() >= v.abs() {
            self.comp[i] += (s - t) + v;
        } else {
            self.comp[i] += (v - t) + s;
        }
        self.sum[i] = t;
    }

    fn finish(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

fn check_family(data: &Dataset, var: usize, parents: &[usize]) -> Result<Vec<usize>> {
    let n = data.n_vars();
    if var >= n {
        return Err(CtbnError::UnknownVariable(format!("index {var}")));
    }
    let mut ps = parents.to_vec();
    ps.sort_unstable();
    ps.dedup();
    if let Some(&p) = ps.iter().find(|&&p| p >= n) {
        return Err(CtbnError::UnknownVariable(format!("index {p}")));
    }
    if ps.contains(&var) {
        return Err(CtbnError::InvalidArgument(format!(
            "`{}` cannot be its own parent",
            data.specs()[var].name()
        )));
    }
    Ok(ps)
}

struct TrajectoryStats {
    time: CompensatedSums,
    counts: Vec<u64>,
}

fn trajectory_stats(
    traj: &Trajectory,
    specs: &[VariableSpec],
    var: usize,
    parents: &[usize],
    relevant: &[bool],
    card: usize,
    n_cells: usize,
) -> TrajectoryStats {
    let mut time = CompensatedSums::new(n_cells);
    let mut counts = vec![0u64; n_cells * card];
    let mut state = traj.initial.clone();
    let mut cell = instantiation_index(parents, specs, &state) * card + state[var];
    let mut start = 0.0;
    for e in &traj.events {
        if !relevant[e.var] {
            state[e.var] = e.value;
            continue;
        }
        time.add(cell, e.time - start);
        if e.var == var {
            counts[cell * card + e.value] += 1;
        }
        state[e.var] = e.value;
        start = e.time;
        cell = instantiation_index(parents, specs, &state) * card + state[var];
    }
    time.add(cell, traj.end_time - start);
    TrajectoryStats { time, counts }
}

/// Sufficient statistics of `var` with parent set `parents` over `data`.
pub fn family_stats(data: &Dataset, var: usize, parents: &[usize]) -> Result<FamilyStats> {
    let parents = check_family(data, var, parents)?;
    let specs = data.specs();
    let mut out = FamilyStats::zeros(var, parents, specs);
    let mut relevant = vec![false; specs.len()];
    relevant[var] = true;
    for &p in &out.parents {
        relevant[p] = true;
    }
    let n_cells = out.n_inst * out.card;
    let per_traj = par::map_slice(data.trajectories(), |t| {
        trajectory_stats(t, specs, var, &out.parents, &relevant, out.card, n_cells)
    });
    let mut time = CompensatedSums::new(n_cells);
    for ts in &per_traj {
        for (i, v) in ts.time.finish().into_iter().enumerate() {
            time.add(i, v);
        }
        for (c, &m) in out.counts.iter_mut().zip(&ts.counts) {
            *c += m;
        }
    }
    out.time = time.finish();
    Ok(out)
}

/// Free-function form of [`FamilyStats::m_total`].
pub fn m_total(stats: &FamilyStats, x: usize, u: usize) -> u64 {
    stats.m_total(u, x)
}
