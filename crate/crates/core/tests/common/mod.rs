//! Independent numerical oracles and generators shared by the integration
//! tests. Nothing here calls the library's scoring or matrix code.

#![allow(dead_code)]

use ctbn::model::{n_instantiations, Cim, CtbnModel, Graph, VariableSpec};
use ctbn::sampler::rng_from_seed;
use rand::Rng;

/// `ln ∫ exp(log_f)` from weighted nodes, shifting by the largest log value
/// so huge or tiny integrands stay representable.
fn log_sum(nodes: &[(f64, f64)]) -> f64 {
    let shift = nodes
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|&(_, l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = nodes
        .iter()
        .filter(|(w, l)| *w > 0.0 && l.is_finite())
        .map(|&(w, l)| w * (l - shift).exp())
        .sum();
    s.ln() + shift
}

/// Repeats a double-exponential rule with halving step until two levels agree.
fn refine(mut level: impl FnMut(f64) -> f64) -> f64 {
    let mut h = 0.5;
    let mut prev = level(h);
    for _ in 0..9 {
        h /= 2.0;
        let cur = level(h);
        if (cur - prev).abs() <= 1e-12 * cur.abs().max(1.0) {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// `ln ∫_0^1 exp(log_f(x, 1 - x)) dx` by tanh-sinh quadrature. The integrand
/// receives both `x` and `1 - x`, each computed without cancellation, so
/// algebraic singularities at either end are handled accurately.
pub fn log_integral_unit(log_f: impl Fn(f64, f64) -> f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    refine(|h| {
        let mut nodes = Vec::new();
        let n = (4.0 / h) as i64;
        for i in -n..=n {
            let t = i as f64 * h;
            let u = FRAC_PI_2 * t.sinh();
            // x = (1 + tanh u)/2, 1 - x = (1 - tanh u)/2, both via exp
            let left = 1.0 / (1.0 + (2.0 * u).exp());
            let right = 1.0 / (1.0 + (-2.0 * u).exp());
            let (x, xc) = (right, left);
            if x <= 0.0 || xc <= 0.0 {
                continue;
            }
            let w = h * FRAC_PI_2 * t.cosh() / (2.0 * u.cosh().powi(2));
            nodes.push((w, log_f(x, xc)));
        }
        log_sum(&nodes)
    })
}

/// `ln ∫_0^∞ exp(log_f(x)) dx` by exp-sinh quadrature.
pub fn log_integral_half_line(log_f: impl Fn(f64) -> f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    refine(|h| {
        let mut nodes = Vec::new();
        let n = (4.5 / h) as i64;
        for i in -n..=n {
            let t = i as f64 * h;
            let x = (FRAC_PI_2 * t.sinh()).exp();
            if x == 0.0 || !x.is_finite() {
                continue;
            }
            let w = h * FRAC_PI_2 * t.cosh() * x;
            nodes.push((w, log_f(x)));
        }
        log_sum(&nodes)
    })
}

/// `ln ∫ Π θ_i^{a_i - 1} dθ` over the simplex of `a.len()` outcomes
/// (2 or 3), by nested quadrature in stick-breaking coordinates
/// `θ_1 = v`, `θ_2 = (1-v) w`, `θ_3 = (1-v)(1-w)` with Jacobian `1 - v`.
pub fn log_dirichlet_integral(a: &[f64]) -> f64 {
    match a {
        [a1, a2] => log_integral_unit(|x, xc| (a1 - 1.0) * x.ln() + (a2 - 1.0) * xc.ln()),
        [a1, a2, a3] => log_integral_unit(|v, vc| {
            let inner = log_integral_unit(|w, wc| {
                (a1 - 1.0) * v.ln() + (a2 - 1.0) * (vc.ln() + w.ln()) + (a3 - 1.0) * (vc.ln() + wc.ln())
            });
            inner + vc.ln()
        }),
        _ => panic!("oracle handles 2 or 3 outcomes"),
    }
}

/// Dense `exp(Q t)` by scaling and squaring a Taylor series.
pub fn expm(q: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    let n = q.len();
    let norm = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = t / f64::from(2u32.pow(squarings));
    let a: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..30 {
        term = matmul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] != 0.0 {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    c
}

/// Random model with given cards and graph; every CIM row differs across
/// parent instantiations with probability one, so no edge is vacuous.
pub fn random_model(cards: &[usize], graph: Graph, seed: u64) -> CtbnModel {
    let mut rng = rng_from_seed(seed);
    let specs: Vec<VariableSpec> = cards
        .iter()
        .enumerate()
        .map(|(i, &k)| VariableSpec::with_cardinality(format!("V{i}"), k).unwrap())
        .collect();
    let cims = (0..specs.len())
        .map(|x| {
            let k = cards[x];
            let m = n_instantiations(graph.parents(x), &specs);
            let mut cim = Cim::zeros(k, m);
            for u in 0..m {
                for s in 0..k {
                    cim.set_q(u, s, rng.random_range(0.2..3.0));
                    let raw: Vec<f64> = (0..k)
                        .map(|y| if y == s { 0.0 } else { rng.random_range(0.1..1.0) })
                        .collect();
                    let total: f64 = raw.iter().sum();
                    cim.set_theta_row(u, s, &raw.iter().map(|v| v / total).collect::<Vec<_>>());
                }
            }
            cim
        })
        .collect();
    let initial = cards
        .iter()
        .map(|&k| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|v| v / total).collect()
        })
        .collect();
    CtbnModel::new(specs, graph, cims, initial).unwrap()
}

/// Random graph over `n` variables with at most `max_parents` parents each.
pub fn random_graph(n: usize, max_parents: usize, seed: u64) -> Graph {
    let mut rng = rng_from_seed(seed);
    let parents = (0..n)
        .map(|x| {
            let mut ps: Vec<usize> = (0..n).filter(|&z| z != x && rng.random_bool(0.5)).collect();
            ps.truncate(max_parents);
            ps
        })
        .collect();
    Graph::from_parents(parents).unwrap()
}

/// Quantile of the standard normal for a two-sided `3σ` style bound.
pub const THREE_SIGMA: f64 = 3.0;
