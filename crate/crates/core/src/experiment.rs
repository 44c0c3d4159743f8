//! Desk-scale versions of the comparison experiments.
//!
//! Every grid point `(seed, size)` is independent. Points run in parallel
//! (bounded by `jobs`) and rows come back in `(seed, size)` order, so the
//! CSV files are byte-identical across runs and thread counts.
//!
//! Data for a seed is nested across sizes: the trajectory of length 50 is a
//! prefix of the one of length 250, and the first `n` drug trajectories are
//! shared by every larger training set. Trends across sizes therefore reflect
//! more data rather than different draws.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dbn::{dbn_learn, dbn_loglik, discretize, DbnModel};
use crate::error::{CtbnError, Result};
use crate::estimate::{fit_model, PriorSource};
use crate::model::CtbnModel;
use crate::par;
use crate::sampler::{chain_network, drug_network, random_network, sample_dataset, splitmix64, sub_seed};
use crate::score::{loglik, ScoreConfig};
use crate::search::{exhaustive_klearn, greedy_search, hamming, learn_structure, Method, SearchConfig};
use crate::trajectory::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Learned dimension and Hamming distance on chain data.
    Chain,
    /// Exhaustive and greedy search on random networks.
    Random,
    /// Held-out likelihood on the drug network.
    Drug,
    /// Held-out likelihood of CTBN vs DBN on chain data.
    DbnCompare,
}

impl std::str::FromStr for ExperimentKind {
    type Err = CtbnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Self::Chain),
            "random" => Ok(Self::Random),
            "drug" => Ok(Self::Drug),
            "dbn-compare" => Ok(Self::DbnCompare),
            other => Err(CtbnError::InvalidArgument(format!("unknown experiment `{other}`"))),
        }
    }
}

impl ExperimentKind {
    pub fn output_file(self) -> &'static str {
        match self {
            Self::Chain => "chain_params.csv",
            Self::Random => "random_structure.csv",
            Self::Drug => "drug_loglik.csv",
            Self::DbnCompare => "dbn_compare.csv",
        }
    }
}

/// Experiment grid and knobs. Missing fields in a config file take the
/// defaults of [`ExperimentConfig::defaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Time units of training data, or trajectory counts for `drug`.
    pub sizes: Vec<f64>,
    pub max_parents: usize,
    pub method: Method,
    pub score: ScoreConfig,
    /// Variables in each random network.
    pub n_nodes: usize,
    /// Base rate of the chain network.
    pub chain_rate: f64,
    /// Length of each drug trajectory.
    pub traj_len: f64,
    /// Held-out trajectories for `drug`; held-out time units for
    /// `dbn-compare` (0 means "same as the training size").
    pub test_size: f64,
    pub dbn_deltas: Vec<f64>,
    pub dbn_prior: f64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let (sizes, method, deltas, test_size) = match kind {
            ExperimentKind::Chain => (vec![30.0, 100.0, 300.0], Method::Exhaustive, vec![0.1, 1.0, 10.0], 0.0),
            ExperimentKind::Random => (vec![10.0, 50.0, 150.0, 250.0], Method::Exhaustive, vec![], 0.0),
            ExperimentKind::Drug => (
                vec![10.0, 30.0, 100.0, 300.0],
                Method::Greedy,
                vec![0.5, 1.0, 2.0],
                100.0,
            ),
            ExperimentKind::DbnCompare => (vec![300.0], Method::Exhaustive, vec![0.1, 1.0, 10.0], 0.0),
        };
        Self {
            kind,
            seeds: if kind == ExperimentKind::Random {
                (1..=20).collect()
            } else {
                (1..=10).collect()
            },
            sizes,
            max_parents: 2,
            method,
            score: ScoreConfig::default(),
            n_nodes: 6,
            chain_rate: 1.0,
            traj_len: 6.0,
            test_size,
            dbn_deltas: deltas,
            dbn_prior: 1.0,
            jobs: None,
        }
    }

    /// Parses a JSON config; fields not present take the defaults for the
    /// config's `kind` (or `fallback` when the file names none).
    pub fn from_json_str(text: &str, fallback: ExperimentKind) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CtbnError::Invalid("experiment config must be a JSON object".into()))?;
        let kind = match obj.get("kind") {
            Some(k) => serde_json::from_value(k.clone())?,
            None => fallback,
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        if let Some(target) = merged.as_object_mut() {
            for (key, v) in obj.iter() {
                if !target.contains_key(key) {
                    return Err(CtbnError::Invalid(format!("unknown experiment config field `{key}`")));
                }
                target.insert(key.clone(), v.clone());
            }
        }
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.sizes.is_empty() {
            return Err(CtbnError::InvalidArgument("need at least one seed and one size".into()));
        }
        if self.sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CtbnError::InvalidArgument("sizes must be positive".into()));
        }
        if self.kind == ExperimentKind::Drug && self.sizes.iter().any(|s| s.fract() != 0.0) {
            return Err(CtbnError::InvalidArgument("drug sizes are trajectory counts".into()));
        }
        if self.dbn_deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(CtbnError::InvalidArgument("DBN slice widths must be positive".into()));
        }
        if !(self.traj_len > 0.0 && self.chain_rate > 0.0 && self.test_size >= 0.0) {
            return Err(CtbnError::InvalidArgument(
                "traj_len and chain_rate must be positive".into(),
            ));
        }
        if self.jobs == Some(0) {
            return Err(CtbnError::InvalidArgument("jobs must be at least 1".into()));
        }
        self.score.validate()
    }

    fn search_config(&self, method: Method) -> SearchConfig {
        SearchConfig {
            max_parents: self.max_parents,
            method,
            score: self.score,
            restarts: 0,
            seed: 0,
        }
    }
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of a numeric column, in row order.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| CtbnError::InvalidArgument(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse()
                    .map_err(|_| CtbnError::Invalid(format!("non-numeric `{}` in `{name}`", r[c])))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(out, "{}", r.join(","))?;
        }
        Ok(())
    }
}

fn cell(v: impl Display) -> String {
    v.to_string()
}

fn run_grid<F>(cfg: &ExperimentConfig, point: F) -> Result<Vec<Vec<String>>>
where
    F: Fn(u64, f64) -> Result<Vec<String>> + Sync + Send,
{
    let grid: Vec<(u64, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.sizes.iter().map(move |&n| (s, n)))
        .collect();
    let work = || par::map_slice(&grid, |&(s, n)| point(s, n)).into_iter().collect();
    match cfg.jobs {
        #[cfg(feature = "parallel")]
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| CtbnError::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        _ => work(),
    }
}

/// One trajectory of length `len` from the stream of `seed`; shorter lengths
/// give prefixes of longer ones.
fn single_trajectory(model: &CtbnModel, len: f64, seed: u64) -> Result<Dataset> {
    sample_dataset(model, 1, len, seed)
}

/// DBNs at each configured slice width; `None` where the training data is
/// shorter than one slice (reported as `NaN`).
fn learn_dbns(cfg: &ExperimentConfig, train: &Dataset) -> Result<Vec<Option<DbnModel>>> {
    cfg.dbn_deltas
        .iter()
        .map(|&dt| {
            let sliced = discretize(train, dt)?;
            if sliced.n_slices() == 0 {
                return Ok(None);
            }
            dbn_learn(&sliced, cfg.max_parents + 1, cfg.dbn_prior).map(Some)
        })
        .collect()
}

fn delta_columns(prefix: &str, deltas: &[f64], suffix: &str) -> Vec<String> {
    deltas.iter().map(|d| format!("{prefix}{d}{suffix}")).collect()
}

pub fn experiment_chain(cfg: &ExperimentConfig) -> Result<Table> {
    let truth = chain_network(4, cfg.chain_rate)?;
    let mut header: Vec<String> = ["seed", "size", "dim_learned", "hamming_to_truth"]
        .map(String::from)
        .to_vec();
    header.extend(delta_columns("dbn_params_dt", &cfg.dbn_deltas, ""));
    header.extend(["max_parents", "method"].map(String::from));
    let rows = run_grid(cfg, |seed, size| {
        let data = single_trajectory(&truth, size, splitmix64(seed))?;
        let (model, _) = learn_structure(&data, &cfg.search_config(cfg.method))?;
        let mut row = vec![
            cell(seed),
            cell(size),
            cell(model.dimension()),
            cell(hamming(model.graph(), truth.graph())?),
        ];
        for dbn in learn_dbns(cfg, &data)? {
            row.push(dbn.map_or(cell(f64::NAN), |m| cell(m.n_parameters())));
        }
        row.push(cell(cfg.max_parents));
        row.push(cell(method_name(cfg.method)));
        Ok(row)
    })?;
    Ok(Table { header, rows })
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Exhaustive => "exhaustive",
        Method::Greedy => "greedy",
    }
}

pub fn experiment_random(cfg: &ExperimentConfig) -> Result<Table> {
    let header = [
        "seed",
        "size",
        "n_nodes",
        "max_parents",
        "true_edges",
        "hamming_exhaustive_truth",
        "hamming_greedy_exhaustive",
        "hamming_greedy_truth",
        "events",
    ]
    .map(String::from)
    .to_vec();
    let rows = run_grid(cfg, |seed, size| {
        let truth = random_network(cfg.n_nodes, cfg.max_parents, seed)?;
        let data = single_trajectory(&truth, size, sub_seed(seed, 1))?;
        let ex = exhaustive_klearn(&data, &cfg.search_config(Method::Exhaustive))?;
        let gr = greedy_search(&data, &cfg.search_config(Method::Greedy))?;
        Ok(vec![
            cell(seed),
            cell(size),
            cell(cfg.n_nodes),
            cell(cfg.max_parents),
            cell(truth.graph().n_edges()),
            cell(hamming(&ex.graph, truth.graph())?),
            cell(hamming(&gr.graph, &ex.graph)?),
            cell(hamming(&gr.graph, truth.graph())?),
            cell(data.n_events()),
        ])
    })?;
    Ok(Table { header, rows })
}

pub fn experiment_drug(cfg: &ExperimentConfig) -> Result<Table> {
    let truth = drug_network();
    let mut header: Vec<String> = [
        "seed",
        "n_train",
        "n_test",
        "traj_len",
        "true_loglik",
        "params_only_loglik",
        "structure_params_loglik",
        "hamming_to_truth",
    ]
    .map(String::from)
    .to_vec();
    header.extend(delta_columns("dbn_dt", &cfg.dbn_deltas, "_loglik"));
    header.extend(["max_parents", "method"].map(String::from));
    let n_test = cfg.test_size as usize;
    if n_test == 0 {
        return Err(CtbnError::InvalidArgument(
            "drug experiment needs test trajectories".into(),
        ));
    }
    let rows = run_grid(cfg, |seed, size| {
        let train = sample_dataset(&truth, size as usize, cfg.traj_len, sub_seed(seed, 1))?;
        let test = sample_dataset(&truth, n_test, cfg.traj_len, sub_seed(seed, 2))?;
        let mean = |ll: f64| ll / n_test as f64;
        let params_only = fit_model(&train, truth.graph(), &PriorSource::Pattern(cfg.score.prior))?;
        let (learned, _) = learn_structure(&train, &cfg.search_config(cfg.method))?;
        let mut row = vec![
            cell(seed),
            cell(size),
            cell(n_test),
            cell(cfg.traj_len),
            cell(mean(loglik(&truth, &test, false)?)),
            cell(mean(loglik(&params_only, &test, false)?)),
            cell(mean(loglik(&learned, &test, false)?)),
            cell(hamming(learned.graph(), truth.graph())?),
        ];
        for dbn in learn_dbns(cfg, &train)? {
            row.push(match dbn {
                Some(m) => cell(mean(dbn_loglik(&m, &test)?)),
                None => cell(f64::NAN),
            });
        }
        row.push(cell(cfg.max_parents));
        row.push(cell(method_name(cfg.method)));
        Ok(row)
    })?;
    Ok(Table { header, rows })
}

pub fn experiment_dbn_compare(cfg: &ExperimentConfig) -> Result<Table> {
    let truth = chain_network(4, cfg.chain_rate)?;
    let mut header: Vec<String> = ["seed", "size", "test_size", "true_loglik", "ctbn_loglik"]
        .map(String::from)
        .to_vec();
    header.extend(delta_columns("dbn_dt", &cfg.dbn_deltas, "_loglik"));
    header.extend(["max_parents", "method"].map(String::from));
    let rows = run_grid(cfg, |seed, size| {
        let test_len = if cfg.test_size > 0.0 { cfg.test_size } else { size };
        let train = single_trajectory(&truth, size, sub_seed(seed, 1))?;
        let test = single_trajectory(&truth, test_len, sub_seed(seed, 2))?;
        let (learned, _) = learn_structure(&train, &cfg.search_config(cfg.method))?;
        let mut row = vec![
            cell(seed),
            cell(size),
            cell(test_len),
            cell(loglik(&truth, &test, false)?),
            cell(loglik(&learned, &test, false)?),
        ];
        for dbn in learn_dbns(cfg, &train)? {
            row.push(match dbn {
                Some(m) => cell(dbn_loglik(&m, &test)?),
                None => cell(f64::NAN),
            });
        }
        row.push(cell(cfg.max_parents));
        row.push(cell(method_name(cfg.method)));
        Ok(row)
    })?;
    Ok(Table { header, rows })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Chain => experiment_chain(cfg),
        ExperimentKind::Random => experiment_random(cfg),
        ExperimentKind::Drug => experiment_drug(cfg),
        ExperimentKind::DbnCompare => experiment_dbn_compare(cfg),
    }
}

/// Runs the experiment and writes its CSV into `out_dir`, returning the
/// file path.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let table = run_experiment(cfg)?;
    std::fs::create_dir_all(out_dir.as_ref())?;
    let path = out_dir.as_ref().join(cfg.kind.output_file());
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::fs::write(&path, buf)?;
    Ok(path)
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
