//! Structure search over parent sets.
//!
//! Without an acyclicity constraint the Bayesian score decomposes into
//! independent per-variable problems, so both searches optimize each family
//! on its own. Ties between equal scores go to the lexicographically
//! smallest parent list.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CtbnError, Result};
use crate::estimate::{fit_model, PriorSource};
use crate::model::{CtbnModel, Graph};
use crate::par;
use crate::sampler::{rng_from_seed, sub_seed};
use crate::score::{fam_score_from_stats, FamilyScore, ScoreConfig};
use crate::stats::family_stats;
use crate::trajectory::Dataset;

/// All subsets of `items` with at most `k` elements, each sorted, in
/// lexicographic order.
pub fn subsets_up_to(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        if cur.len() == k {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::new();
    rec(&sorted, k, 0, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exhaustive,
    #[default]
    Greedy,
}

impl std::str::FromStr for Method {
    type Err = CtbnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Method::Exhaustive),
            "greedy" => Ok(Method::Greedy),
            other => Err(CtbnError::InvalidArgument(format!("unknown search method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_parents: usize,
    pub method: Method,
    pub score: ScoreConfig,
    /// Extra greedy runs from random parent sets.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_parents: 2,
            method: Method::Greedy,
            score: ScoreConfig::default(),
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Add,
    Remove,
}

/// One accepted greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub kind: MoveKind,
    pub parent: usize,
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyResult {
    pub parents: Vec<usize>,
    pub score: FamilyScore,
    pub trace: Vec<Move>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub graph: Graph,
    pub family_scores: Vec<FamilyScore>,
    pub total: f64,
    /// Accepted moves per variable; empty for exhaustive search.
    pub traces: Vec<Vec<Move>>,
}

/// Scores parent sets of one variable, memoized by parent list.
pub struct FamilyScorer<'a> {
    data: &'a Dataset,
    var: usize,
    cfg: &'a ScoreConfig,
    cache: HashMap<Vec<usize>, FamilyScore>,
}

impl<'a> FamilyScorer<'a> {
    pub fn new(data: &'a Dataset, var: usize, cfg: &'a ScoreConfig) -> Self {
        Self {
            data,
            var,
            cfg,
            cache: HashMap::new(),
        }
    }

    /// `parents` must be sorted.
    pub fn score(&mut self, parents: &[usize]) -> Result<FamilyScore> {
        if let Some(s) = self.cache.get(parents) {
            return Ok(*s);
        }
        let stats = family_stats(self.data, self.var, parents)?;
        let prior = self.cfg.prior.for_family(self.var, parents, self.data.specs());
        let s = fam_score_from_stats(&stats, &prior, self.cfg)?;
        self.cache.insert(parents.to_vec(), s);
        Ok(s)
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

fn better(score: f64, parents: &[usize], best_score: f64, best: &[usize]) -> bool {
    score > best_score || (score == best_score && parents < best)
}

fn check(data: &Dataset, cfg: &SearchConfig) -> Result<()> {
    if data.is_empty() {
        return Err(CtbnError::EmptyData(
            "structure search needs at least one trajectory".into(),
        ));
    }
    let n = data.n_vars();
    if n > 0 && cfg.max_parents > n - 1 {
        return Err(CtbnError::InvalidArgument(format!(
            "max_parents {} exceeds n - 1 = {}",
            cfg.max_parents,
            n - 1
        )));
    }
    cfg.score.validate()
}

/// Best parent set of `var` among all sets of size `<= max_parents`.
pub fn exhaustive_family(data: &Dataset, var: usize, cfg: &SearchConfig) -> Result<FamilyResult> {
    let others: Vec<usize> = (0..data.n_vars()).filter(|&z| z != var).collect();
    let mut scorer = FamilyScorer::new(data, var, &cfg.score);
    let mut best: Option<(Vec<usize>, FamilyScore)> = None;
    for cand in subsets_up_to(&others, cfg.max_parents) {
        let s = scorer.score(&cand)?;
        let take = match &best {
            None => true,
            Some((bp, bs)) => better(s.total, &cand, bs.total, bp),
        };
        if take {
            best = Some((cand, s));
        }
    }
    let (parents, score) = best.expect("the empty set is always a candidate");
    Ok(FamilyResult {
        parents,
        score,
        trace: Vec::new(),
    })
}

/// Exact k-Learn: every variable gets its highest-scoring parent set of
/// size at most `max_parents`. No acyclicity filtering.
pub fn exhaustive_klearn(data: &Dataset, cfg: &SearchConfig) -> Result<SearchResult> {
    check(data, cfg)?;
    let fams = par::map_range(data.n_vars(), |x| exhaustive_family(data, x, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    assemble(fams)
}

fn hill_climb(
    scorer: &mut FamilyScorer<'_>,
    n: usize,
    var: usize,
    k: usize,
    start: Vec<usize>,
) -> Result<FamilyResult> {
    let mut parents = start;
    let mut current = scorer.score(&parents)?;
    let mut trace = Vec::new();
    loop {
        let mut best: Option<(Move, Vec<usize>, FamilyScore)> = None;
        let mut consider = |kind: MoveKind, z: usize, cand: Vec<usize>, s: FamilyScore| {
            if best.as_ref().is_none_or(|(_, _, b)| s.total > b.total) {
                best = Some((
                    Move {
                        kind,
                        parent: z,
                        score_after: s.total,
                    },
                    cand,
                    s,
                ));
            }
        };
        if parents.len() < k {
            for z in (0..n).filter(|&z| z != var && !parents.contains(&z)) {
                let mut cand = parents.clone();
                let pos = cand.binary_search(&z).unwrap_err();
                cand.insert(pos, z);
                let s = scorer.score(&cand)?;
                consider(MoveKind::Add, z, cand, s);
            }
        }
        for (i, &z) in parents.iter().enumerate() {
            let mut cand = parents.clone();
            cand.remove(i);
            let s = scorer.score(&cand)?;
            consider(MoveKind::Remove, z, cand, s);
        }
        match best {
            Some((mv, cand, s)) if s.total > current.total => {
                trace.push(mv);
                parents = cand;
                current = s;
            }
            _ => break,
        }
    }
    Ok(FamilyResult {
        parents,
        score: current,
        trace,
    })
}

/// Greedy add/remove hill-climbing for one variable, starting from the empty
/// parent set. Moves are scanned additions first, then removals, each in
/// ascending parent order; only strict improvements are applied. With
/// `cfg.restarts > 0`, extra climbs start from seeded random parent sets and
/// the best local optimum wins.
pub fn greedy_family(data: &Dataset, var: usize, cfg: &SearchConfig) -> Result<FamilyResult> {
    let n = data.n_vars();
    let mut scorer = FamilyScorer::new(data, var, &cfg.score);
    let mut best = hill_climb(&mut scorer, n, var, cfg.max_parents, Vec::new())?;
    if cfg.restarts > 0 {
        let others: Vec<usize> = (0..n).filter(|&z| z != var).collect();
        let mut rng = rng_from_seed(sub_seed(cfg.seed, var as u64));
        for _ in 0..cfg.restarts {
            let size = rng.random_range(0..=cfg.max_parents.min(others.len()));
            let mut pool = others.clone();
            let mut start = Vec::with_capacity(size);
            for _ in 0..size {
                start.push(pool.swap_remove(rng.random_range(0..pool.len())));
            }
            start.sort_unstable();
            let r = hill_climb(&mut scorer, n, var, cfg.max_parents, start)?;
            if better(r.score.total, &r.parents, best.score.total, &best.parents) {
                best = r;
            }
        }
    }
    Ok(best)
}

pub fn greedy_search(data: &Dataset, cfg: &SearchConfig) -> Result<SearchResult> {
    check(data, cfg)?;
    let fams = par::map_range(data.n_vars(), |x| greedy_family(data, x, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    assemble(fams)
}

fn assemble(fams: Vec<FamilyResult>) -> Result<SearchResult> {
    let graph = Graph::from_parents(fams.iter().map(|f| f.parents.clone()).collect())?;
    let family_scores: Vec<FamilyScore> = fams.iter().map(|f| f.score).collect();
    Ok(SearchResult {
        graph,
        total: family_scores.iter().map(|f| f.total).sum(),
        family_scores,
        traces: fams.into_iter().map(|f| f.trace).collect(),
    })
}

pub fn search(data: &Dataset, cfg: &SearchConfig) -> Result<SearchResult> {
    match cfg.method {
        Method::Exhaustive => exhaustive_klearn(data, cfg),
        Method::Greedy => greedy_search(data, cfg),
    }
}

/// Runs the configured search, then fits expected parameters under the
/// search prior and an add-one-smoothed initial distribution.
pub fn learn_structure(data: &Dataset, cfg: &SearchConfig) -> Result<(CtbnModel, SearchResult)> {
    let result = search(data, cfg)?;
    let model = fit_model(data, &result.graph, &PriorSource::Pattern(cfg.score.prior))?;
    Ok((model, result))
}

/// Number of directed edges present in exactly one of the graphs.
pub fn hamming(a: &Graph, b: &Graph) -> Result<usize> {
    if a.n_vars() != b.n_vars() {
        return Err(CtbnError::ShapeMismatch(format!(
            "graphs over {} and {} variables",
            a.n_vars(),
            b.n_vars()
        )));
    }
    let only_a = a.edges().filter(|&(f, t)| !b.has_edge(f, t)).count();
    let only_b = b.edges().filter(|&(f, t)| !a.has_edge(f, t)).count();
    Ok(only_a + only_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VariableSpec;
    use crate::trajectory::{Event, Trajectory};

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(
            subsets_up_to(&[3, 1, 2], 2),
            vec![vec![], vec![1], vec![1, 2], vec![1, 3], vec![2], vec![2, 3], vec![3]]
        );
        assert_eq!(subsets_up_to(&[0, 1], 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn hamming_examples() {
        let chain = Graph::chain(4);
        let empty = Graph::empty(4);
        assert_eq!(hamming(&chain, &chain).unwrap(), 0);
        assert_eq!(hamming(&chain, &empty).unwrap(), 3);
        assert_eq!(hamming(&empty, &chain).unwrap(), 3);
        let mut rev = Graph::empty(4);
        rev.add_edge(1, 0).unwrap();
        assert_eq!(hamming(&chain, &rev).unwrap(), 4);
        assert!(hamming(&chain, &Graph::empty(3)).is_err());
    }

    #[test]
    fn single_variable_has_no_parents() {
        let d = Dataset::new(
            vec![VariableSpec::binary("X")],
            vec![Trajectory::new(vec![0], 3.0, vec![Event::new(1.0, 0, 1)])],
        )
        .unwrap();
        let cfg = SearchConfig {
            max_parents: 0,
            ..SearchConfig::default()
        };
        let r = exhaustive_klearn(&d, &cfg).unwrap();
        assert!(r.graph.parents(0).is_empty());
        let g = greedy_family(&d, 0, &cfg).unwrap();
        assert!(g.parents.is_empty() && g.trace.is_empty());
    }

    #[test]
    fn empty_data_and_bad_k_are_errors() {
        let specs = vec![VariableSpec::binary("A"), VariableSpec::binary("B")];
        assert!(exhaustive_klearn(&Dataset::empty(specs.clone()), &SearchConfig::default()).is_err());
        let d = Dataset::new(specs, vec![Trajectory::new(vec![0, 0], 1.0, vec![])]).unwrap();
        let cfg = SearchConfig {
            max_parents: 2,
            ..SearchConfig::default()
        };
        assert!(exhaustive_klearn(&d, &cfg).is_err());
    }
}
