//! `ctbn` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Diagnostics go to stderr; set `CTBN_LOG` to error, warn, info or
//! debug to change their verbosity.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctbn::amalgam::{amalgamate_with_cap, is_smap, minimal_smap, DEFAULT_STATE_CAP, INTENSITY_TOL};
use ctbn::dbn::{dbn_learn, dbn_loglik, discretize, DbnModel};
use ctbn::estimate::{fit_model, initial_frequencies, mle, PriorPattern, PriorSource};
use ctbn::experiment::{run_to_dir, ExperimentConfig, ExperimentKind};
use ctbn::model::{graph_from_json_str, graph_to_json_string, instantiation_key, validate_model, variable_index};
use ctbn::sampler::{chain_network, drug_network, random_network, sample_dataset};
use ctbn::score::{bic_score, family_scores, loglik, DataSize, ScoreConfig};
use ctbn::search::{learn_structure, Method, SearchConfig};
use ctbn::stats::family_stats;
use ctbn::trajectory::{read_dataset, write_dataset};
use ctbn::{CtbnModel, Dataset, Graph};

#[derive(Parser)]
#[command(
    name = "ctbn",
    version,
    about = "Learn continuous time Bayesian networks from trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories from a model or a built-in network.
    Sample(SampleArgs),
    /// Print sufficient statistics of one family (or all families of a graph) as CSV.
    Stats(StatsArgs),
    /// Fit parameters for a fixed graph.
    FitParams(FitArgs),
    /// Learn structure and parameters.
    Learn(LearnArgs),
    /// Print per-family Bayesian score components (or the BIC score) as CSV.
    Score(ScoreArgs),
    /// Transition-model log-likelihood of data under a model.
    Loglik(LoglikArgs),
    /// Write the joint intensity matrix of a model as CSV.
    Amalgamate(AmalgamateArgs),
    /// Minimal S-map graph of a model's joint process.
    MinimalSmap(SmapArgs),
    /// Learn a time-sliced DBN baseline.
    DbnLearn(DbnLearnArgs),
    /// Augmented log-likelihood of data under a DBN.
    DbnLoglik(DbnLoglikArgs),
    /// Run a comparison experiment and write its CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Network {
    Chain,
    Drug,
    Random,
}

#[derive(Args)]
struct SampleArgs {
    /// Model file to sample from.
    #[arg(long, conflicts_with = "network", required_unless_present = "network")]
    model: Option<PathBuf>,
    /// Built-in network to sample from instead of a model file.
    #[arg(long, value_enum)]
    network: Option<Network>,
    /// Variables in a chain or random network.
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    /// Base rate of the chain network.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Parent cap of a random network.
    #[arg(long, default_value_t = 2)]
    max_parents: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    end_time: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the sampled-from model here.
    #[arg(long)]
    write_model: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Trajectory file (JSON Lines).
    #[arg(long)]
    data: PathBuf,
    /// Model whose variables define the universe when the data file has no header.
    #[arg(long)]
    variables_from: Option<PathBuf>,
}

#[derive(Args)]
struct PriorArgs {
    /// Scale of the default Gamma/Dirichlet prior.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Prior observation time of the default prior.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
}

impl PriorArgs {
    fn pattern(&self) -> ctbn::Result<PriorPattern> {
        PriorPattern::new(self.alpha, self.tau)
    }
}

#[derive(Args)]
struct ScoreOpts {
    #[command(flatten)]
    prior: PriorArgs,
    /// Per-parent log structure penalty.
    #[arg(long, default_value_t = 0.0)]
    penalty: f64,
    /// What |D| counts in the BIC penalty: transitions, trajectories or total-time.
    #[arg(long, default_value = "transitions")]
    data_size: String,
}

impl ScoreOpts {
    fn config(&self) -> Result<ScoreConfig, Failure> {
        let cfg = ScoreConfig {
            prior: self.prior.pattern().map_err(usage)?,
            structure_penalty: self.penalty,
            data_size: self.data_size.parse().map_err(usage)?,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Child variable.
    #[arg(long, requires = "data", conflicts_with = "graph")]
    var: Option<String>,
    /// Comma-separated parents of `--var`.
    #[arg(long, value_delimiter = ',', requires = "var")]
    parents: Vec<String>,
    /// Graph (or model) file; prints every family in it.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Graph (or model) file giving the structure.
    #[arg(long)]
    graph: PathBuf,
    /// Prior file: `{"alpha": a, "tau": t}` or explicit per-family cells.
    #[arg(long, conflicts_with = "mle")]
    prior: Option<PathBuf>,
    /// Maximum-likelihood parameters instead of expected posterior parameters.
    #[arg(long)]
    mle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    max_parents: usize,
    #[arg(long, default_value = "greedy")]
    method: String,
    /// Extra greedy runs from random parent sets (needs `--seed`).
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    score: ScoreOpts,
    #[arg(long)]
    out: PathBuf,
    /// Write per-variable greedy move traces as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    score: ScoreOpts,
    /// Print the BIC score instead of the Bayesian breakdown.
    #[arg(long)]
    bic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoglikArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Add the log-probability of each trajectory's initial state.
    #[arg(long)]
    include_initial: bool,
}

#[derive(Args)]
struct AmalgamateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest joint state space allowed.
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct SmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = INTENSITY_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    cap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DbnLearnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    delta_t: f64,
    #[arg(long, default_value_t = 3)]
    max_parents: usize,
    /// Dirichlet weight per CPT cell.
    #[arg(long, default_value_t = 1.0)]
    prior_strength: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DbnLoglikArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// chain, random, drug or dbn-compare.
    kind: String,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as a list (`1,2,5`) or inclusive range (`1..10`).
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated data sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<f64>,
    #[arg(long)]
    max_parents: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<ctbn::CtbnError> for Failure {
    fn from(e: ctbn::CtbnError) -> Self {
        Failure::Data(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTBN_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Sample(a) => sample(a),
        Command::Stats(a) => stats(a),
        Command::FitParams(a) => fit_params(a),
        Command::Learn(a) => learn(a),
        Command::Score(a) => score(a),
        Command::Loglik(a) => {
            let model = read_model(&a.model)?;
            let data = read_data(&a.data, Some(&model))?;
            println!("{}", loglik(&model, &data, a.include_initial)?);
            Ok(())
        }
        Command::Amalgamate(a) => {
            let model = read_model(&a.model)?;
            let q = amalgamate_with_cap(&model, a.cap)?;
            q.write_csv(model.specs(), output(a.out.as_deref())?)?;
            Ok(())
        }
        Command::MinimalSmap(a) => minimal(a),
        Command::DbnLearn(a) => {
            if !(a.delta_t > 0.0) {
                return Err(usage("--delta-t must be positive"));
            }
            let data = load_data(&a.data)?;
            let model = dbn_learn(&discretize(&data, a.delta_t)?, a.max_parents, a.prior_strength)?;
            model
                .write(&a.out)
                .with_context(|| format!("writing {}", a.out.display()))?;
            Ok(())
        }
        Command::DbnLoglik(a) => {
            let model = DbnModel::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
            let data =
                read_dataset(&a.data, Some(model.specs())).with_context(|| format!("reading {}", a.data.display()))?;
            println!("{}", dbn_loglik(&model, &data)?);
            Ok(())
        }
        Command::Experiment(a) => experiment(a),
    }
}

fn read_model(path: &Path) -> Result<CtbnModel, Failure> {
    let model = CtbnModel::read(path).with_context(|| format!("reading {}", path.display()))?;
    let problems = validate_model(&model);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        return Err(Failure::Data(anyhow::anyhow!(
            "invalid model {}:\n  {}",
            path.display(),
            list.join("\n  ")
        )));
    }
    Ok(model)
}

fn read_data(path: &Path, model: Option<&CtbnModel>) -> Result<Dataset, Failure> {
    Ok(read_dataset(path, model.map(CtbnModel::specs)).with_context(|| format!("reading {}", path.display()))?)
}

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    let model = args.variables_from.as_deref().map(read_model).transpose()?;
    read_data(&args.data, model.as_ref())
}

fn read_graph(path: &Path, data: &Dataset) -> Result<Graph, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(graph_from_json_str(&text, data.specs()).with_context(|| format!("parsing graph {}", path.display()))?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sample(a: SampleArgs) -> Result<(), Failure> {
    if !(a.end_time > 0.0) {
        return Err(usage("--end-time must be positive"));
    }
    let model = match (a.model.as_deref(), a.network) {
        (Some(p), _) => read_model(p)?,
        (None, Some(Network::Chain)) => chain_network(a.nodes, a.rate).map_err(usage)?,
        (None, Some(Network::Drug)) => drug_network(),
        (None, Some(Network::Random)) => random_network(a.nodes, a.max_parents, a.seed).map_err(usage)?,
        (None, None) => return Err(usage("one of --model or --network is required")),
    };
    let data = sample_dataset(&model, a.n, a.end_time, a.seed)?;
    write_dataset(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.write_model {
        model.write(p).with_context(|| format!("writing {}", p.display()))?;
    }
    log::info!("sampled {} trajectories with {} events", data.len(), data.n_events());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let data = load_data(&a.data)?;
    let specs = data.specs();
    let families: Vec<(usize, Vec<usize>)> = match (&a.var, &a.graph) {
        (Some(v), _) => {
            let x = variable_index(specs, v)?;
            let mut ps = a
                .parents
                .iter()
                .map(|p| variable_index(specs, p))
                .collect::<ctbn::Result<Vec<_>>>()?;
            ps.sort_unstable();
            vec![(x, ps)]
        }
        (None, Some(g)) => {
            let graph = read_graph(g, &data)?;
            (0..specs.len()).map(|x| (x, graph.parents(x).to_vec())).collect()
        }
        (None, None) => return Err(usage("one of --var or --graph is required")),
    };
    let width = families.iter().map(|(x, _)| specs[*x].card()).max().unwrap_or(0);
    let mut out = output(a.out.as_deref())?;
    let to_cols: Vec<String> = (0..width).map(|y| format!("M_to_{y}")).collect();
    writeln!(out, "variable,instantiation,state,T,{}", to_cols.join(","))?;
    for (x, ps) in families {
        let st = family_stats(&data, x, &ps)?;
        let k = specs[x].card();
        for u in 0..st.n_instantiations() {
            let key = instantiation_key(&ps, specs, u);
            for s in 0..k {
                let counts: Vec<String> = (0..width)
                    .map(|y| {
                        if y == s || y >= k {
                            String::new()
                        } else {
                            st.count(u, s, y).to_string()
                        }
                    })
                    .collect();
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    specs[x].name(),
                    csv_field(&key),
                    specs[x].states()[s],
                    st.time(u, s),
                    counts.join(",")
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Quotes a field containing commas.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fit_params(a: FitArgs) -> Result<(), Failure> {
    let data = load_data(&a.data)?;
    let graph = read_graph(&a.graph, &data)?;
    let model = if a.mle {
        let mut cims = Vec::with_capacity(data.n_vars());
        for x in 0..data.n_vars() {
            let fit = mle(&family_stats(&data, x, graph.parents(x))?);
            for cell in &fit.degenerate {
                log::warn!(
                    "{}: degenerate MLE cell [{}] state {} ({:?})",
                    data.specs()[x].name(),
                    instantiation_key(graph.parents(x), data.specs(), cell.instantiation),
                    data.specs()[x].states()[cell.state],
                    cell.kind
                );
            }
            cims.push(fit.cim);
        }
        CtbnModel::new(data.specs().to_vec(), graph, cims, initial_frequencies(&data))?
    } else {
        let priors = match &a.prior {
            Some(p) => PriorSource::read(p, data.specs()).with_context(|| format!("reading prior {}", p.display()))?,
            None => PriorSource::Pattern(PriorPattern::default()),
        };
        fit_model(&data, &graph, &priors)?
    };
    model
        .write(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn learn(a: LearnArgs) -> Result<(), Failure> {
    let method: Method = a.method.parse().map_err(usage)?;
    if a.restarts > 0 && a.seed.is_none() {
        return Err(usage("--restarts needs --seed"));
    }
    let cfg = SearchConfig {
        max_parents: a.max_parents,
        method,
        score: a.score.config()?,
        restarts: a.restarts,
        seed: a.seed.unwrap_or(0),
    };
    let data = load_data(&a.data)?;
    let (model, result) = learn_structure(&data, &cfg)?;
    model
        .write(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.trace {
        let names = |i: usize| data.specs()[i].name().to_string();
        let traces: serde_json::Map<String, serde_json::Value> = result
            .traces
            .iter()
            .enumerate()
            .map(|(x, moves)| {
                let steps = moves
                    .iter()
                    .map(|m| serde_json::json!({"kind": m.kind, "parent": names(m.parent), "score": m.score_after}))
                    .collect();
                (names(x), serde_json::Value::Array(steps))
            })
            .collect();
        std::fs::write(p, serde_json::to_string_pretty(&traces).map_err(anyhow::Error::from)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    log::info!("learned {} edges, score {}", result.graph.n_edges(), result.total);
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let cfg = a.score.config()?;
    let data = load_data(&a.data)?;
    let graph = read_graph(&a.graph, &data)?;
    let mut out = output(a.out.as_deref())?;
    if a.bic {
        let conv: DataSize = cfg.data_size;
        writeln!(out, "bic,data_size_convention,data_size")?;
        writeln!(
            out,
            "{},{},{}",
            bic_score(&graph, &data, conv)?,
            a.score.data_size,
            conv.measure(&data)
        )?;
    } else {
        writeln!(out, "variable,parents,log_marg_q,log_marg_theta,log_prior,total")?;
        let specs = data.specs();
        for (x, f) in family_scores(&graph, &data, &cfg)?.iter().enumerate() {
            let parents: Vec<&str> = graph.parents(x).iter().map(|&p| specs[p].name()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                specs[x].name(),
                parents.join(";"),
                f.log_marg_q,
                f.log_marg_theta,
                f.log_structure_prior,
                f.total
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn minimal(a: SmapArgs) -> Result<(), Failure> {
    let model = read_model(&a.model)?;
    let q = amalgamate_with_cap(&model, a.cap)?;
    let g = minimal_smap(&q, a.tol)?;
    if !is_smap(&q, model.graph(), a.tol)? {
        log::warn!("the model's own graph is not an S-map at tolerance {}", a.tol);
    }
    let removed = model.graph().n_edges() - g.n_edges();
    if removed > 0 {
        log::info!("{removed} vacuous edge(s) dropped");
    }
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", graph_to_json_string(&g, model.specs())?)?;
    out.flush()?;
    Ok(())
}

/// Parses `1,2,5` or the inclusive range `1..10`.
fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || usage(format!("cannot parse seeds `{s}`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let kind: ExperimentKind = a.kind.parse().map_err(usage)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg = ExperimentConfig::from_json_str(&text, kind)?;
            if cfg.kind != kind {
                return Err(usage(format!("config is for a different experiment than `{}`", a.kind)));
            }
            cfg
        }
        None => {
            if a.seeds.is_none() {
                return Err(usage("experiments need --seeds (or a config file listing seeds)"));
            }
            ExperimentConfig::defaults(kind)
        }
    };
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if !a.sizes.is_empty() {
        cfg.sizes = a.sizes.clone();
    }
    if let Some(k) = a.max_parents {
        cfg.max_parents = k;
    }
    if let Some(m) = &a.method {
        cfg.method = m.parse().map_err(usage)?;
    }
    if let Some(n) = a.nodes {
        cfg.n_nodes = n;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.validate().map_err(usage)?;
    let path = run_to_dir(&cfg, &a.out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
