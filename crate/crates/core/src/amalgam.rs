//! Amalgamation of a CTBN into one joint intensity matrix, and the
//! S-map predicates on joint processes.
//!
//! Joint states are enumerated in mixed radix with the first variable
//! varying slowest. Matrices are stored sparsely by row; entries that are
//! not stored are zero.

use std::io::Write;

use crate::error::{CtbnError, Result};
use crate::model::{CtbnModel, Graph, VariableSpec};
use crate::par;

/// Default cap on the number of joint states.
pub const DEFAULT_STATE_CAP: usize = 1 << 20;

/// Default tolerance for comparing transition intensities.
pub const INTENSITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointIntensity {
    cards: Vec<usize>,
    strides: Vec<usize>,
    diag: Vec<f64>,
    /// Off-diagonal nonzero entries per row, sorted by column.
    off: Vec<Vec<(usize, f64)>>,
}

fn strides_of(cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * cards[i + 1];
    }
    strides
}

fn state_count(cards: &[usize], cap: usize) -> Result<usize> {
    let mut n: usize = 1;
    for &k in cards {
        n = n
            .checked_mul(k)
            .filter(|&v| v <= cap)
            .ok_or(CtbnError::StateSpaceTooLarge {
                states: cards.iter().fold(1usize, |a, &k| a.saturating_mul(k)),
                cap,
            })?;
    }
    Ok(n)
}

impl JointIntensity {
    /// Builds a joint matrix over variables with cardinalities `cards` from a
    /// dense square matrix.
    pub fn from_dense(cards: Vec<usize>, matrix: &[Vec<f64>]) -> Result<Self> {
        let n = state_count(&cards, DEFAULT_STATE_CAP)?;
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(CtbnError::ShapeMismatch(format!("expected a {n}x{n} matrix")));
        }
        let strides = strides_of(&cards);
        let diag = (0..n).map(|i| matrix[i][i]).collect();
        let off = matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Ok(Self {
            cards,
            strides,
            diag,
            off,
        })
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn n_states(&self) -> usize {
        self.diag.len()
    }

    pub fn n_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn index_of(&self, state: &[usize]) -> usize {
        state.iter().zip(&self.strides).map(|(s, st)| s * st).sum()
    }

    pub fn state_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.cards.len()];
        for (v, &st) in self.strides.iter().enumerate() {
            out[v] = index / st;
            index %= st;
        }
        out
    }

    /// Value of variable `var` in joint state `index`.
    #[inline]
    fn value(&self, index: usize, var: usize) -> usize {
        (index / self.strides[var]) % self.cards[var]
    }

    /// Index of `index` with variable `var` set to `value`.
    #[inline]
    fn with_value(&self, index: usize, var: usize, value: usize) -> usize {
        index - self.value(index, var) * self.strides[var] + value * self.strides[var]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        match self.off[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => self.off[i][p].1,
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.off[i].iter().map(|&(_, v)| v).sum::<f64>()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Labels like `X=x0;Y=y1` for every joint state, in index order.
    pub fn state_labels(&self, specs: &[VariableSpec]) -> Vec<String> {
        (0..self.n_states())
            .map(|i| {
                self.state_of(i)
                    .iter()
                    .zip(specs)
                    .map(|(&v, s)| format!("{}={}", s.name(), s.states()[v]))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .collect()
    }

    /// Dense CSV: a header of state labels, then one row per source state.
    pub fn write_csv<W: Write>(&self, specs: &[VariableSpec], mut out: W) -> Result<()> {
        let labels = self.state_labels(specs);
        writeln!(out, "from,{}", labels.join(","))?;
        for (i, label) in labels.iter().enumerate() {
            let row: Vec<String> = (0..self.n_states()).map(|j| self.get(i, j).to_string()).collect();
            writeln!(out, "{label},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Intensity of the `var: s_var -> target` transition out of joint state `i`.
    #[inline]
    fn single_flip(&self, i: usize, var: usize, target: usize) -> f64 {
        self.get(i, self.with_value(i, var, target))
    }

    /// Distribution at time `t` from `p0` by uniformization:
    /// `p(t) = Σ_k Pois(k; Λt) p0 Pᵏ` with `P = I + Q/Λ`.
    pub fn transient(&self, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.n_states();
        if p0.len() != n {
            return Err(CtbnError::ShapeMismatch(format!("expected {n} probabilities")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CtbnError::InvalidArgument(format!("time must be >= 0, got {t}")));
        }
        let lambda = self.diag.iter().fold(0.0f64, |m, d| m.max(-d));
        if lambda == 0.0 || t == 0.0 {
            return Ok(p0.to_vec());
        }
        // keep Λt per step moderate so e^{-Λt} does not underflow
        let steps = ((lambda * t) / 20.0).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut p = p0.to_vec();
        for _ in 0..steps {
            p = self.uniformized_step(&p, lambda, h);
        }
        Ok(p)
    }

    fn uniformized_step(&self, p0: &[f64], lambda: f64, h: f64) -> Vec<f64> {
        let n = self.n_states();
        let lt = lambda * h;
        let mut weight = (-lt).exp();
        let mut cumulative = weight;
        let mut term = p0.to_vec();
        let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
        let mut k = 0usize;
        while cumulative < 1.0 - 1e-16 && k < 10_000 {
            k += 1;
            let mut next = vec![0.0; n];
            for i in 0..n {
                let pi = term[i];
                if pi == 0.0 {
                    continue;
                }
                next[i] += pi * (1.0 + self.diag[i] / lambda);
                for &(j, v) in &self.off[i] {
                    next[j] += pi * v / lambda;
                }
            }
            term = next;
            weight *= lt / k as f64;
            cumulative += weight;
            for (a, v) in acc.iter_mut().zip(&term) {
                *a += v * weight;
            }
        }
        acc
    }
}

/// Product of the model's per-variable initial distributions over joint states.
pub fn joint_initial(model: &CtbnModel) -> Vec<f64> {
    let cards: Vec<usize> = model.specs().iter().map(VariableSpec::card).collect();
    let strides = strides_of(&cards);
    let n: usize = cards.iter().product();
    (0..n)
        .map(|mut i| {
            let mut p = 1.0;
            for (v, &st) in strides.iter().enumerate() {
                p *= model.initial(v)[i / st];
                i %= st;
            }
            p
        })
        .collect()
}

/// Joint intensity matrix of `model`, refusing state spaces above `cap`.
pub fn amalgamate_with_cap(model: &CtbnModel, cap: usize) -> Result<JointIntensity> {
    let cards: Vec<usize> = model.specs().iter().map(VariableSpec::card).collect();
    let n = state_count(&cards, cap)?;
    let strides = strides_of(&cards);
    let rows = par::map_range(n, |i| {
        let mut state = vec![0; cards.len()];
        let mut rem = i;
        for (v, &st) in strides.iter().enumerate() {
            state[v] = rem / st;
            rem %= st;
        }
        let mut off = Vec::new();
        for (var, &k) in cards.iter().enumerate() {
            let cim = model.cim(var);
            let u = model.instantiation_of(var, &state);
            let x = state[var];
            for y in (0..k).filter(|&y| y != x) {
                let rate = cim.intensity(u, x, y);
                if rate != 0.0 {
                    off.push((i - x * strides[var] + y * strides[var], rate));
                }
            }
        }
        off.sort_unstable_by_key(|&(j, _)| j);
        let diag = -off.iter().map(|&(_, v)| v).sum::<f64>();
        (diag, off)
    });
    let (diag, off) = rows.into_iter().unzip();
    Ok(JointIntensity {
        cards,
        strides,
        diag,
        off,
    })
}

pub fn amalgamate(model: &CtbnModel) -> Result<JointIntensity> {
    amalgamate_with_cap(model, DEFAULT_STATE_CAP)
}

/// True when every entry between states differing in two or more variables
/// has magnitude at most `tol`.
pub fn is_variable_based(q: &JointIntensity, tol: f64) -> bool {
    (0..q.n_states()).all(|i| {
        q.off[i].iter().all(|&(j, v)| {
            let changed = (0..q.n_vars())
                .filter(|&var| q.value(i, var) != q.value(j, var))
                .count();
            changed <= 1 || v.abs() <= tol
        })
    })
}

fn require_variable_based(q: &JointIntensity) -> Result<()> {
    if !is_variable_based(q, 0.0) {
        return Err(CtbnError::NotVariableBased(
            "some entry changes two or more variables at once".into(),
        ));
    }
    Ok(())
}

/// True when, for every variable `X`, the intensities of `X`'s transitions
/// depend only on the current values of `X` and its parents in `graph`.
pub fn is_smap(q: &JointIntensity, graph: &Graph, tol: f64) -> Result<bool> {
    require_variable_based(q)?;
    if graph.n_vars() != q.n_vars() {
        return Err(CtbnError::ShapeMismatch(
            "graph and matrix disagree on variables".into(),
        ));
    }
    for var in 0..q.n_vars() {
        let k = q.cards[var];
        let parents = graph.parents(var);
        let n_ctx: usize = k * parents.iter().map(|&p| q.cards[p]).product::<usize>();
        let mut reference: Vec<Option<Vec<f64>>> = vec![None; n_ctx];
        for i in 0..q.n_states() {
            let x = q.value(i, var);
            let ctx = parents.iter().fold(x, |acc, &p| acc * q.cards[p] + q.value(i, p));
            let profile: Vec<f64> = (0..k)
                .map(|y| if y == x { 0.0 } else { q.single_flip(i, var, y) })
                .collect();
            match &reference[ctx] {
                None => reference[ctx] = Some(profile),
                Some(r) => {
                    if r.iter().zip(&profile).any(|(a, b)| (a - b).abs() > tol) {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// The unique minimal S-map: `Z -> X` is kept iff some pair of joint states
/// differing only in `Z` gives `X` different transition intensities.
pub fn minimal_smap(q: &JointIntensity, tol: f64) -> Result<Graph> {
    require_variable_based(q)?;
    let n_vars = q.n_vars();
    let parents = par::map_range(n_vars, |var| {
        let k = q.cards[var];
        (0..n_vars)
            .filter(|&z| z != var)
            .filter(|&z| {
                (0..q.n_states()).any(|i| {
                    let zi = q.value(i, z);
                    let x = q.value(i, var);
                    (zi + 1..q.cards[z]).any(|zj| {
                        let j = q.with_value(i, z, zj);
                        (0..k)
                            .filter(|&y| y != x)
                            .any(|y| (q.single_flip(i, var, y) - q.single_flip(j, var, y)).abs() > tol)
                    })
                })
            })
            .collect::<Vec<_>>()
    });
    Graph::from_parents(parents)
}
