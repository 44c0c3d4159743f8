//! Forward simulation of CTBN trajectories and the benchmark networks used by
//! the experiments.
//!
//! Sampling collapses the per-variable exponential clocks into one: with total
//! exit rate `R`, the dwell is `Exp(R)` and variable `i` fires with
//! probability `q_i / R`.
//!
//! Seeds: a master seed `s` yields per-trajectory seeds
//! `splitmix64(s ^ i)`; each trajectory then uses a ChaCha8 stream seeded from
//! that value. `splitmix64` is a bijection, so distinct `i` give distinct
//! sub-seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{CtbnError, Result};
use crate::model::{Cim, CtbnModel, Graph, VariableSpec};
use crate::par;
use crate::search::subsets_up_to;
use crate::trajectory::{Dataset, Event, Trajectory};

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `i` of `master`.
pub fn sub_seed(master: u64, i: u64) -> u64 {
    splitmix64(master ^ i)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index drawn from unnormalized nonnegative `weights`.
fn pick<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Samples one trajectory on `[0, end_time]` using `rng`.
pub fn sample_trajectory_with<R: Rng + ?Sized>(model: &CtbnModel, end_time: f64, rng: &mut R) -> Trajectory {
    let n = model.n_vars();
    let initial: Vec<usize> = (0..n).map(|x| pick(rng, model.initial(x).iter().copied())).collect();
    let mut state = initial.clone();
    let mut events = Vec::new();
    let mut rates = vec![0.0; n];
    let mut t = 0.0;
    loop {
        for (x, r) in rates.iter_mut().enumerate() {
            *r = model.exit_rate(x, &state);
        }
        let total: f64 = rates.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let dwell: f64 = Exp1.sample(rng);
        let next = t + dwell / total;
        if next > end_time {
            break;
        }
        if next <= t {
            // dwell below float resolution at this time scale; draw again
            continue;
        }
        t = next;
        let var = pick(rng, rates.iter().copied());
        let cim = model.cim(var);
        let u = model.instantiation_of(var, &state);
        let from = state[var];
        let value = pick(
            rng,
            (0..cim.card()).map(|y| if y == from { 0.0 } else { cim.theta(u, from, y) }),
        );
        state[var] = value;
        events.push(Event::new(t, var, value));
    }
    Trajectory::new(initial, end_time, events)
}

pub fn sample_trajectory(model: &CtbnModel, end_time: f64, seed: u64) -> Result<Trajectory> {
    check_end_time(end_time)?;
    Ok(sample_trajectory_with(model, end_time, &mut rng_from_seed(seed)))
}

fn check_end_time(end_time: f64) -> Result<()> {
    if !(end_time > 0.0 && end_time.is_finite()) {
        return Err(CtbnError::InvalidArgument(format!(
            "end_time must be positive, got {end_time}"
        )));
    }
    Ok(())
}

/// `n` independent trajectories; trajectory `i` uses `sub_seed(seed, i)`.
pub fn sample_dataset(model: &CtbnModel, n: usize, end_time: f64, seed: u64) -> Result<Dataset> {
    check_end_time(end_time)?;
    let trajectories = par::map_range(n, |i| {
        sample_trajectory_with(model, end_time, &mut rng_from_seed(sub_seed(seed, i as u64)))
    });
    Dataset::new(model.specs().to_vec(), trajectories)
}

/// Binary chain `X1 -> ... -> Xn`. `X1` flips at `rate`; every other variable
/// moves toward its parent's value at `rate` and away from it at `rate / 10`.
pub fn chain_network(n: usize, rate: f64) -> Result<CtbnModel> {
    if n == 0 || !(rate > 0.0 && rate.is_finite()) {
        return Err(CtbnError::InvalidArgument(format!(
            "chain needs n >= 1 and rate > 0, got n={n}, rate={rate}"
        )));
    }
    let specs: Vec<_> = (1..=n).map(|i| VariableSpec::binary(format!("X{i}"))).collect();
    let flip = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mut cims = vec![Cim::from_rows(vec![vec![rate, rate]], vec![flip.clone()])?];
    for _ in 1..n {
        // instantiation u = parent value; leaving x is "toward" iff x != u
        let q = (0..2)
            .map(|u| (0..2).map(|x| if x == u { rate / 10.0 } else { rate }).collect())
            .collect();
        cims.push(Cim::from_rows(q, vec![flip.clone(), flip.clone()])?);
    }
    CtbnModel::new(specs, Graph::chain(n), cims, vec![vec![0.5, 0.5]; n])
}

/// Random CTBN over `specs`: each parent set is uniform among all subsets of
/// the other variables of size at most `max_parents`, rates are `Exp(1)`
/// (Gamma with shape 1 and rate 1), next-state rows are `Dirichlet(1, ..., 1)`
/// and the initial distribution is uniform.
pub fn random_model_with<R: Rng + ?Sized>(
    specs: Vec<VariableSpec>,
    max_parents: usize,
    rng: &mut R,
) -> Result<CtbnModel> {
    let n = specs.len();
    if n == 0 || max_parents > n - 1 {
        return Err(CtbnError::InvalidArgument(format!(
            "max_parents {max_parents} must be at most n - 1 = {}",
            n.saturating_sub(1)
        )));
    }
    let mut parents = Vec::with_capacity(n);
    for x in 0..n {
        let others: Vec<usize> = (0..n).filter(|&z| z != x).collect();
        let choices = subsets_up_to(&others, max_parents);
        parents.push(choices[rng.random_range(0..choices.len())].clone());
    }
    let graph = Graph::from_parents(parents)?;
    let mut cims = Vec::with_capacity(n);
    for x in 0..n {
        let k = specs[x].card();
        let m = crate::model::n_instantiations(graph.parents(x), &specs);
        let mut cim = Cim::zeros(k, m);
        for u in 0..m {
            for s in 0..k {
                let q: f64 = Exp1.sample(rng);
                cim.set_q(u, s, q);
                let raw: Vec<f64> = (0..k).map(|y| if y == s { 0.0 } else { Exp1.sample(rng) }).collect();
                let total: f64 = raw.iter().sum();
                cim.set_theta_row(u, s, &raw.iter().map(|v| v / total).collect::<Vec<_>>());
            }
        }
        cims.push(cim);
    }
    let initial = specs.iter().map(|s| vec![1.0 / s.card() as f64; s.card()]).collect();
    CtbnModel::new(specs, graph, cims, initial)
}

/// Random binary network with `n` variables named `X1..Xn`.
pub fn random_network(n: usize, max_parents: usize, seed: u64) -> Result<CtbnModel> {
    let specs = (1..=n).map(|i| VariableSpec::binary(format!("X{i}"))).collect();
    random_model_with(specs, max_parents, &mut rng_from_seed(seed))
}

/// Rates of the drug network are multiplied by this factor; it sets the mean
/// number of transitions over 6 time units to roughly 18.
pub const DRUG_RATE_SCALE: f64 = 1.0;

/// An eight-variable drug-effect network with the cycle
/// `Hungry -> Eating -> FullStomach -> Hungry`.
///
/// Structure:
///
/// | variable      | states              | parents                    |
/// |---------------|---------------------|----------------------------|
/// | Eating        | no, yes             | Hungry                     |
/// | Hungry        | no, yes             | FullStomach                |
/// | FullStomach   | no, yes             | Eating                     |
/// | Uptake        | no, yes             | –                          |
/// | Concentration | low, medium, high   | FullStomach, Uptake        |
/// | Barometer     | falling, rising     | –                          |
/// | JointPain     | low, high           | Concentration, Barometer   |
/// | Drowsy        | no, yes             | Concentration              |
///
/// All parameters are fixed constants listed in the body of this function.
pub fn drug_network() -> CtbnModel {
    let s = |name: &str, states: &[&str]| {
        VariableSpec::new(name, states.iter().map(|v| v.to_string()).collect()).expect("static spec")
    };
    let specs = vec![
        s("Eating", &["no", "yes"]),
        s("Hungry", &["no", "yes"]),
        s("FullStomach", &["no", "yes"]),
        s("Uptake", &["no", "yes"]),
        s("Concentration", &["low", "medium", "high"]),
        s("Barometer", &["falling", "rising"]),
        s("JointPain", &["low", "high"]),
        s("Drowsy", &["no", "yes"]),
    ];
    let graph = Graph::from_parents(vec![
        vec![1],
        vec![2],
        vec![0],
        vec![],
        vec![2, 3],
        vec![],
        vec![4, 5],
        vec![4],
    ])
    .expect("static graph");

    let c = DRUG_RATE_SCALE;
    let flip = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    // binary CIM from per-instantiation (rate 0->1, rate 1->0)
    let binary = |rates: &[(f64, f64)]| {
        Cim::from_rows(
            rates.iter().map(|&(up, down)| vec![c * up, c * down]).collect(),
            vec![flip.clone(); rates.len()],
        )
        .expect("static CIM")
    };

    // Eating | Hungry=no, yes
    let eating = binary(&[(0.1, 2.0), (2.0, 0.1)]);
    // Hungry | FullStomach=no, yes
    let hungry = binary(&[(1.0, 0.1), (0.05, 2.0)]);
    // FullStomach | Eating=no, yes
    let full = binary(&[(0.05, 0.5), (2.0, 0.05)]);
    let uptake = binary(&[(0.3, 1.0)]);

    // Concentration | FullStomach, Uptake (FullStomach slowest)
    let decay = (
        vec![0.05, 0.8, 0.8],
        vec![vec![0.0, 1.0, 0.0], vec![0.9, 0.0, 0.1], vec![0.1, 0.9, 0.0]],
    );
    let fast = (
        vec![2.0, 1.5, 0.1],
        vec![vec![0.0, 0.8, 0.2], vec![0.1, 0.0, 0.9], vec![0.1, 0.9, 0.0]],
    );
    let slow = (
        vec![0.6, 0.5, 0.2],
        vec![vec![0.0, 0.9, 0.1], vec![0.3, 0.0, 0.7], vec![0.1, 0.9, 0.0]],
    );
    let conc_rows = [&decay, &fast, &decay, &slow];
    let concentration = Cim::from_rows(
        conc_rows
            .iter()
            .map(|(q, _)| q.iter().map(|v| c * v).collect())
            .collect(),
        conc_rows.iter().map(|(_, t)| t.clone()).collect(),
    )
    .expect("static CIM");

    let barometer = binary(&[(0.3, 0.3)]);

    // JointPain | Concentration, Barometer (Concentration slowest)
    let mut pain = Vec::new();
    for (conc_up, conc_down) in [(1.0, 0.3), (0.5, 1.0), (0.1, 2.0)] {
        for baro_up in [1.0, 0.2] {
            pain.push((conc_up * baro_up, conc_down));
        }
    }
    let joint_pain = binary(&pain);

    // Drowsy | Concentration
    let drowsy = binary(&[(0.05, 1.5), (0.3, 0.5), (1.5, 0.1)]);

    let initial = vec![
        vec![0.8, 0.2],
        vec![0.5, 0.5],
        vec![0.5, 0.5],
        vec![0.9, 0.1],
        vec![0.8, 0.15, 0.05],
        vec![0.5, 0.5],
        vec![0.5, 0.5],
        vec![0.8, 0.2],
    ];
    CtbnModel::new(
        specs,
        graph,
        vec![
            eating,
            hungry,
            full,
            uptake,
            concentration,
            barometer,
            joint_pain,
            drowsy,
        ],
        initial,
    )
    .expect("static model")
}
