//! Variables, dependency graphs, conditional intensity matrices and whole
//! CTBN models.
//!
//! Conventions used everywhere in the crate:
//!
//! - variables and their states are identified by their declaration index;
//! - a parent list is kept sorted by variable index, so the "first" parent is
//!   the one declared earliest;
//! - parent instantiations are enumerated in mixed radix with the first
//!   parent varying slowest and the last parent fastest. A family with no
//!   parents has exactly one (empty) instantiation.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{CtbnError, Result};

/// Absolute tolerance for simplex and row-sum checks.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A discrete variable and its ordered domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    name: String,
    states: Vec<String>,
}

impl VariableSpec {
    pub fn new<S: Into<String>>(name: S, states: Vec<String>) -> Result<Self> {
        let name = name.into();
        if states.len() < 2 {
            return Err(CtbnError::Invalid(format!(
                "variable `{name}` needs at least two states"
            )));
        }
        let mut seen = HashSet::new();
        for s in &states {
            if !seen.insert(s.as_str()) {
                return Err(CtbnError::Invalid(format!(
                    "variable `{name}` has duplicate state `{s}`"
                )));
            }
        }
        Ok(Self { name, states })
    }

    /// A variable with states `s0, s1, ..., s{k-1}`.
    pub fn with_cardinality<S: Into<String>>(name: S, k: usize) -> Result<Self> {
        Self::new(name, (0..k).map(|i| format!("s{i}")).collect())
    }

    pub fn binary<S: Into<String>>(name: S) -> Self {
        Self::with_cardinality(name, 2).expect("two states")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn card(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

pub fn variable_index(specs: &[VariableSpec], name: &str) -> Result<usize> {
    specs
        .iter()
        .position(|s| s.name() == name)
        .ok_or_else(|| CtbnError::UnknownVariable(name.to_string()))
}

/// Directed graph over variable indices. Cycles are allowed; self-loops are not.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    parents: Vec<Vec<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self {
            parents: vec![Vec::new(); n],
        }
    }

    pub fn from_parents(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        let mut out = Vec::with_capacity(n);
        for (x, mut ps) in parents.into_iter().enumerate() {
            ps.sort_unstable();
            for w in ps.windows(2) {
                if w[0] == w[1] {
                    return Err(CtbnError::Invalid(format!("variable {x} lists parent {} twice", w[0])));
                }
            }
            if let Some(&p) = ps.iter().find(|&&p| p >= n) {
                return Err(CtbnError::Invalid(format!(
                    "parent index {p} out of range for {n} variables"
                )));
            }
            if ps.contains(&x) {
                return Err(CtbnError::Invalid(format!("variable {x} is its own parent")));
            }
            out.push(ps);
        }
        Ok(Self { parents: out })
    }

    /// `X1 -> X2 -> ... -> Xn`.
    pub fn chain(n: usize) -> Self {
        Self {
            parents: (0..n).map(|i| if i == 0 { Vec::new() } else { vec![i - 1] }).collect(),
        }
    }

    /// Every variable is a parent of every other variable.
    pub fn complete(n: usize) -> Self {
        Self {
            parents: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, x: usize) -> &[usize] {
        &self.parents[x]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    /// Adds `from -> to`; returns false if the edge already existed.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<bool> {
        let n = self.n_vars();
        if from >= n || to >= n {
            return Err(CtbnError::InvalidArgument(format!(
                "edge {from}->{to} out of range for {n} variables"
            )));
        }
        if from == to {
            return Err(CtbnError::InvalidArgument(format!("self-loop on {from}")));
        }
        match self.parents[to].binary_search(&from) {
            Ok(_) => Ok(false),
            Err(pos) => {
                self.parents[to].insert(pos, from);
                Ok(true)
            }
        }
    }

    /// Removes `from -> to`; returns false if the edge was absent.
    pub fn remove_edge(&mut self, from: usize, to: usize) -> bool {
        match self.parents[to].binary_search(&from) {
            Ok(pos) => {
                self.parents[to].remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    pub fn set_parents(&mut self, x: usize, parents: Vec<usize>) -> Result<()> {
        let mut all = std::mem::take(&mut self.parents);
        all[x] = parents;
        match Self::from_parents(all.clone()) {
            Ok(g) => {
                *self = g;
                Ok(())
            }
            Err(e) => {
                self.parents = all;
                Err(e)
            }
        }
    }

    /// All edges as `(from, to)`, ordered by `to` then `from`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(to, ps)| ps.iter().map(move |&from| (from, to)))
    }

    pub fn n_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// True when every edge of `self` is also in `other`.
    pub fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.n_vars() == other.n_vars() && self.edges().all(|(f, t)| other.has_edge(f, t))
    }
}

/// Number of joint instantiations of `parents`.
pub fn n_instantiations(parents: &[usize], specs: &[VariableSpec]) -> usize {
    parents.iter().map(|&p| specs[p].card()).product()
}

/// Index of the instantiation of `parents` found in the full assignment `state`.
pub fn instantiation_index(parents: &[usize], specs: &[VariableSpec], state: &[usize]) -> usize {
    parents.iter().fold(0, |acc, &p| acc * specs[p].card() + state[p])
}

/// Parent values of instantiation `u`, aligned with `parents`.
pub fn decode_instantiation(parents: &[usize], specs: &[VariableSpec], mut u: usize) -> Vec<usize> {
    let mut out = vec![0; parents.len()];
    for (slot, &p) in parents.iter().enumerate().rev() {
        let k = specs[p].card();
        out[slot] = u % k;
        u /= k;
    }
    out
}

/// `"p1=s1,p2=s2"`, or the empty string for the empty instantiation.
pub fn instantiation_key(parents: &[usize], specs: &[VariableSpec], u: usize) -> String {
    decode_instantiation(parents, specs, u)
        .iter()
        .zip(parents)
        .map(|(&v, &p)| format!("{}={}", specs[p].name(), specs[p].states()[v]))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_instantiation_key(key: &str, parents: &[usize], specs: &[VariableSpec]) -> Result<usize> {
    let bad = || CtbnError::UnknownInstantiation(format!("`{key}`"));
    let parts: Vec<&str> = if key.is_empty() {
        Vec::new()
    } else {
        key.split(',').map(str::trim).collect()
    };
    if parts.len() != parents.len() {
        return Err(bad());
    }
    let mut u = 0;
    for (part, &p) in parts.iter().zip(parents) {
        let (name, value) = part.split_once('=').ok_or_else(bad)?;
        if name.trim() != specs[p].name() {
            return Err(bad());
        }
        let v = specs[p].state_index(value.trim()).ok_or_else(bad)?;
        u = u * specs[p].card() + v;
    }
    Ok(u)
}

/// Enumerates the instantiations of `Pa(x)` in the crate's fixed order, each
/// as the list of parent values aligned with `graph.parents(x)`.
pub fn parent_instantiations(graph: &Graph, x: usize, specs: &[VariableSpec]) -> Vec<Vec<usize>> {
    let parents = graph.parents(x);
    (0..n_instantiations(parents, specs))
        .map(|u| decode_instantiation(parents, specs, u))
        .collect()
}

/// Conditional intensity matrix of one variable: for each parent
/// instantiation `u` and state `x`, the exit rate `q[x|u]` and the
/// next-state distribution `theta[x][x'|u]` over `x' != x`.
///
/// Diagonal `theta` entries are kept at zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct Cim {
    card: usize,
    n_inst: usize,
    q: Vec<f64>,
    theta: Vec<f64>,
}

impl Cim {
    /// All rates zero and uniform `theta` rows.
    pub fn zeros(card: usize, n_inst: usize) -> Self {
        let mut theta = vec![0.0; n_inst * card * card];
        if card > 1 {
            let w = 1.0 / (card - 1) as f64;
            for u in 0..n_inst {
                for x in 0..card {
                    for y in 0..card {
                        if x != y {
                            theta[(u * card + x) * card + y] = w;
                        }
                    }
                }
            }
        }
        Self {
            card,
            n_inst,
            q: vec![0.0; n_inst * card],
            theta,
        }
    }

    /// Builds a CIM from `q[u][x]` and `theta[u][x][x']` (diagonal ignored).
    pub fn from_rows(q: Vec<Vec<f64>>, theta: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_inst = q.len();
        if n_inst == 0 || theta.len() != n_inst {
            return Err(CtbnError::ShapeMismatch(
                "q and theta need one entry per instantiation".into(),
            ));
        }
        let card = q[0].len();
        let mut cim = Self::zeros(card, n_inst);
        for (u, (qu, tu)) in q.iter().zip(&theta).enumerate() {
            if qu.len() != card || tu.len() != card {
                return Err(CtbnError::ShapeMismatch(format!(
                    "instantiation {u}: expected {card} states"
                )));
            }
            for x in 0..card {
                cim.set_q(u, x, qu[x]);
                if tu[x].len() != card {
                    return Err(CtbnError::ShapeMismatch(format!(
                        "instantiation {u}, state {x}: theta row needs {card} entries"
                    )));
                }
                cim.set_theta_row(u, x, &tu[x]);
            }
        }
        Ok(cim)
    }

    pub fn card(&self) -> usize {
        self.card
    }

    pub fn n_instantiations(&self) -> usize {
        self.n_inst
    }

    #[inline]
    pub fn q(&self, u: usize, x: usize) -> f64 {
        self.q[u * self.card + x]
    }

    #[inline]
    pub fn theta(&self, u: usize, x: usize, y: usize) -> f64 {
        self.theta[(u * self.card + x) * self.card + y]
    }

    /// Off-diagonal intensity `q[x|u] * theta[x][y|u]`.
    #[inline]
    pub fn intensity(&self, u: usize, x: usize, y: usize) -> f64 {
        self.q(u, x) * self.theta(u, x, y)
    }

    pub fn set_q(&mut self, u: usize, x: usize, value: f64) {
        self.q[u * self.card + x] = value;
    }

    /// Sets the `theta` row of `(u, x)`; `row[x]` is ignored.
    pub fn set_theta_row(&mut self, u: usize, x: usize, row: &[f64]) {
        let base = (u * self.card + x) * self.card;
        for (y, &v) in row.iter().enumerate().take(self.card) {
            self.theta[base + y] = if y == x { 0.0 } else { v };
        }
    }

    /// Dense `k x k` intensity matrix for instantiation `u`.
    pub fn intensity_matrix(&self, u: usize) -> Result<Vec<Vec<f64>>> {
        if u >= self.n_inst {
            return Err(CtbnError::UnknownInstantiation(format!(
                "{u} (CIM has {})",
                self.n_inst
            )));
        }
        Ok((0..self.card)
            .map(|x| {
                (0..self.card)
                    .map(|y| if x == y { -self.q(u, x) } else { self.intensity(u, x, y) })
                    .collect()
            })
            .collect())
    }
}

/// A full CTBN: variables, graph, one CIM per variable and a factored
/// initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CtbnModel {
    specs: Vec<VariableSpec>,
    graph: Graph,
    cims: Vec<Cim>,
    initial: Vec<Vec<f64>>,
}

impl CtbnModel {
    /// Checks shapes only; value-level invariants are reported by [`validate_model`].
    pub fn new(specs: Vec<VariableSpec>, graph: Graph, cims: Vec<Cim>, initial: Vec<Vec<f64>>) -> Result<Self> {
        let n = specs.len();
        if graph.n_vars() != n || cims.len() != n || initial.len() != n {
            return Err(CtbnError::ShapeMismatch(format!(
                "{n} variables but graph/cims/initial sized {}/{}/{}",
                graph.n_vars(),
                cims.len(),
                initial.len()
            )));
        }
        let mut names = HashSet::new();
        for s in &specs {
            if !names.insert(s.name()) {
                return Err(CtbnError::Invalid(format!("duplicate variable `{}`", s.name())));
            }
        }
        for x in 0..n {
            let k = specs[x].card();
            let m = n_instantiations(graph.parents(x), &specs);
            if cims[x].card() != k || cims[x].n_instantiations() != m {
                return Err(CtbnError::ShapeMismatch(format!(
                    "CIM of `{}` is {}x{} but family needs {k} states x {m} instantiations",
                    specs[x].name(),
                    cims[x].card(),
                    cims[x].n_instantiations()
                )));
            }
            if initial[x].len() != k {
                return Err(CtbnError::ShapeMismatch(format!(
                    "initial distribution of `{}` needs {k} entries",
                    specs[x].name()
                )));
            }
        }
        Ok(Self {
            specs,
            graph,
            cims,
            initial,
        })
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn n_vars(&self) -> usize {
        self.specs.len()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn cim(&self, x: usize) -> &Cim {
        &self.cims[x]
    }

    pub fn cims(&self) -> &[Cim] {
        &self.cims
    }

    pub fn initial(&self, x: usize) -> &[f64] {
        &self.initial[x]
    }

    /// Instantiation index of `Pa(x)` within the full assignment `state`.
    #[inline]
    pub fn instantiation_of(&self, x: usize, state: &[usize]) -> usize {
        instantiation_index(self.graph.parents(x), &self.specs, state)
    }

    /// Exit rate of `x` in the full assignment `state`.
    #[inline]
    pub fn exit_rate(&self, x: usize, state: &[usize]) -> f64 {
        self.cims[x].q(self.instantiation_of(x, state), state[x])
    }

    pub fn dimension(&self) -> usize {
        dimension(&self.graph, &self.specs).expect("model shapes checked at construction")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
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

/// One broken invariant found by [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeRate {
        variable: String,
        instantiation: String,
        state: String,
        value: f64,
    },
    NonFiniteRate {
        variable: String,
        instantiation: String,
        state: String,
    },
    NegativeTheta {
        variable: String,
        instantiation: String,
        state: String,
        target: String,
        value: f64,
    },
    ThetaRowSum {
        variable: String,
        instantiation: String,
        state: String,
        sum: f64,
    },
    InitialNegative {
        variable: String,
        state: String,
        value: f64,
    },
    InitialSum {
        variable: String,
        sum: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeRate {
                variable,
                instantiation,
                state,
                value,
            } => write!(f, "{variable} [{instantiation}] q[{state}] = {value} is negative"),
            Violation::NonFiniteRate {
                variable,
                instantiation,
                state,
            } => write!(f, "{variable} [{instantiation}] q[{state}] is not finite"),
            Violation::NegativeTheta {
                variable,
                instantiation,
                state,
                target,
                value,
            } => write!(
                f,
                "{variable} [{instantiation}] theta[{state}][{target}] = {value} is negative"
            ),
            Violation::ThetaRowSum {
                variable,
                instantiation,
                state,
                sum,
            } => write!(f, "{variable} [{instantiation}] theta row {state} sums to {sum}"),
            Violation::InitialNegative { variable, state, value } => {
                write!(f, "{variable} initial[{state}] = {value} is negative")
            }
            Violation::InitialSum { variable, sum } => {
                write!(f, "{variable} initial distribution sums to {sum}")
            }
        }
    }
}

/// Lists every value-level invariant the model breaks. An empty list means
/// the model is valid.
pub fn validate_model(model: &CtbnModel) -> Vec<Violation> {
    let specs = model.specs();
    let mut out = Vec::new();
    for x in 0..model.n_vars() {
        let spec = &specs[x];
        let parents = model.graph().parents(x);
        let cim = model.cim(x);
        for u in 0..cim.n_instantiations() {
            let key = || instantiation_key(parents, specs, u);
            for s in 0..spec.card() {
                let q = cim.q(u, s);
                if !q.is_finite() {
                    out.push(Violation::NonFiniteRate {
                        variable: spec.name().into(),
                        instantiation: key(),
                        state: spec.states()[s].clone(),
                    });
                } else if q < 0.0 {
                    out.push(Violation::NegativeRate {
                        variable: spec.name().into(),
                        instantiation: key(),
                        state: spec.states()[s].clone(),
                        value: q,
                    });
                }
                let mut sum = 0.0;
                for t in (0..spec.card()).filter(|&t| t != s) {
                    let th = cim.theta(u, s, t);
                    if th < 0.0 || th.is_nan() {
                        out.push(Violation::NegativeTheta {
                            variable: spec.name().into(),
                            instantiation: key(),
                            state: spec.states()[s].clone(),
                            target: spec.states()[t].clone(),
                            value: th,
                        });
                    }
                    sum += th;
                }
                // rows with q = 0 are never used, so their sum is unconstrained
                if q > 0.0 && !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                    out.push(Violation::ThetaRowSum {
                        variable: spec.name().into(),
                        instantiation: key(),
                        state: spec.states()[s].clone(),
                        sum,
                    });
                }
            }
        }
        let init = model.initial(x);
        for (s, &p) in init.iter().enumerate() {
            if p < 0.0 || p.is_nan() {
                out.push(Violation::InitialNegative {
                    variable: spec.name().into(),
                    state: spec.states()[s].clone(),
                    value: p,
                });
            }
        }
        let sum: f64 = init.iter().sum();
        if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
            out.push(Violation::InitialSum {
                variable: spec.name().into(),
                sum,
            });
        }
    }
    out
}

/// Free parameters of variable `x`'s family: per parent instantiation, `k`
/// rates plus `k(k-2)` free next-state probabilities.
pub fn family_dimension(parents: &[usize], card: usize, specs: &[VariableSpec]) -> usize {
    n_instantiations(parents, specs) * card * (card - 1)
}

/// Number of independent parameters of the structure.
pub fn dimension(graph: &Graph, specs: &[VariableSpec]) -> Result<usize> {
    if graph.n_vars() != specs.len() {
        return Err(CtbnError::UnknownVariable(format!(
            "graph has {} variables but {} are declared",
            graph.n_vars(),
            specs.len()
        )));
    }
    Ok((0..specs.len())
        .map(|x| family_dimension(graph.parents(x), specs[x].card(), specs))
        .sum())
}

/// Reads a graph from JSON: either a bare `{variable: [parents]}` map or any
/// object with such a map under `"graph"` (a model file, for instance).
pub fn graph_from_json_str(text: &str, specs: &[VariableSpec]) -> Result<Graph> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let map = match value.get("graph") {
        Some(g) => g.clone(),
        None => value,
    };
    let names: IndexMap<String, Vec<String>> = serde_json::from_value(map)?;
    graph_from_names(&names, specs)
}

/// Writes a graph as a `{variable: [parents]}` JSON map.
pub fn graph_to_json_string(graph: &Graph, specs: &[VariableSpec]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&graph_to_names(graph, specs))?)
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct VariableEntry {
    pub name: String,
    pub states: Vec<String>,
}

pub(crate) fn specs_to_entries(specs: &[VariableSpec]) -> Vec<VariableEntry> {
    specs
        .iter()
        .map(|s| VariableEntry {
            name: s.name().into(),
            states: s.states().to_vec(),
        })
        .collect()
}

pub(crate) fn specs_from_entries(entries: Vec<VariableEntry>) -> Result<Vec<VariableSpec>> {
    let specs = entries
        .into_iter()
        .map(|e| VariableSpec::new(e.name, e.states))
        .collect::<Result<Vec<_>>>()?;
    let mut names = HashSet::new();
    for s in &specs {
        if !names.insert(s.name().to_string()) {
            return Err(CtbnError::Invalid(format!("duplicate variable `{}`", s.name())));
        }
    }
    Ok(specs)
}

/// Reads a graph given as `{variable: [parent names]}`; missing variables
/// have no parents.
pub(crate) fn graph_from_names(names: &IndexMap<String, Vec<String>>, specs: &[VariableSpec]) -> Result<Graph> {
    let mut parents = vec![Vec::new(); specs.len()];
    for (child, ps) in names {
        let x = variable_index(specs, child)?;
        parents[x] = ps.iter().map(|p| variable_index(specs, p)).collect::<Result<_>>()?;
    }
    Graph::from_parents(parents)
}

pub(crate) fn graph_to_names(graph: &Graph, specs: &[VariableSpec]) -> IndexMap<String, Vec<String>> {
    (0..specs.len())
        .map(|x| {
            (
                specs[x].name().to_string(),
                graph.parents(x).iter().map(|&p| specs[p].name().to_string()).collect(),
            )
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CimEntry {
    q: Vec<f64>,
    theta: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    variables: Vec<VariableEntry>,
    graph: IndexMap<String, Vec<String>>,
    cims: IndexMap<String, IndexMap<String, CimEntry>>,
    initial: IndexMap<String, Vec<f64>>,
}

impl ModelFile {
    fn from_model(model: &CtbnModel) -> Self {
        let specs = model.specs();
        let mut cims = IndexMap::new();
        let mut initial = IndexMap::new();
        for x in 0..specs.len() {
            let parents = model.graph().parents(x);
            let cim = model.cim(x);
            let k = cim.card();
            let mut per_u = IndexMap::new();
            for u in 0..cim.n_instantiations() {
                per_u.insert(
                    instantiation_key(parents, specs, u),
                    CimEntry {
                        q: (0..k).map(|s| cim.q(u, s)).collect(),
                        theta: (0..k)
                            .map(|s| (0..k).map(|t| (s != t).then(|| cim.theta(u, s, t))).collect())
                            .collect(),
                    },
                );
            }
            cims.insert(specs[x].name().to_string(), per_u);
            initial.insert(specs[x].name().to_string(), model.initial(x).to_vec());
        }
        Self {
            variables: specs_to_entries(specs),
            graph: graph_to_names(model.graph(), specs),
            cims,
            initial,
        }
    }

    fn into_model(self) -> Result<CtbnModel> {
        let specs = specs_from_entries(self.variables)?;
        let graph = graph_from_names(&self.graph, &specs)?;
        let n = specs.len();
        let mut cims = Vec::with_capacity(n);
        let mut initial = Vec::with_capacity(n);
        for x in 0..n {
            let name = specs[x].name();
            let k = specs[x].card();
            let parents = graph.parents(x);
            let m = n_instantiations(parents, &specs);
            let entries = self
                .cims
                .get(name)
                .ok_or_else(|| CtbnError::Invalid(format!("no CIM for `{name}`")))?;
            let mut cim = Cim::zeros(k, m);
            let mut seen = vec![false; m];
            for (key, entry) in entries {
                let u = parse_instantiation_key(key, parents, &specs)?;
                if entry.q.len() != k || entry.theta.len() != k {
                    return Err(CtbnError::ShapeMismatch(format!(
                        "CIM `{name}` [{key}] needs {k} states"
                    )));
                }
                for s in 0..k {
                    cim.set_q(u, s, entry.q[s]);
                    if entry.theta[s].len() != k {
                        return Err(CtbnError::ShapeMismatch(format!(
                            "CIM `{name}` [{key}] theta row {s} needs {k} entries"
                        )));
                    }
                    let row: Vec<f64> = entry.theta[s].iter().map(|v| v.unwrap_or(0.0)).collect();
                    cim.set_theta_row(u, s, &row);
                }
                seen[u] = true;
            }
            if let Some(u) = seen.iter().position(|&b| !b) {
                return Err(CtbnError::Invalid(format!(
                    "CIM `{name}` is missing instantiation [{}]",
                    instantiation_key(parents, &specs, u)
                )));
            }
            cims.push(cim);
            initial.push(
                self.initial
                    .get(name)
                    .cloned()
                    .ok_or_else(|| CtbnError::Invalid(format!("no initial distribution for `{name}`")))?,
            );
        }
        CtbnModel::new(specs, graph, cims, initial)
    }
}
