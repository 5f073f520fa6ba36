//! Command-line front end. Every subcommand computes all of its outputs
//! before writing any file, and files are renamed into place only once
//! fully written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, ClassLabels, CsvOptions, DataMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{self, Distance, Method};
use crate::genealogy::Genealogy;
use crate::greedy::GreedyVariant;
use crate::kernels::{self, KernelParams, ModelKind};
use crate::learning::{self, CellPosterior, FitConfig, FitResult, Inference};
use crate::smc::{self, Proposal, SmcConfig};
use crate::synth::{self, SweepAxis, SweepConfig, SynthConfig};
use crate::util::fmt_num;

/// Tree-building algorithm selected with `--algo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Greedy(GreedyVariant),
    Smc,
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "smc" {
            Ok(Algo::Smc)
        } else {
            s.parse().map(Algo::Greedy)
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "coalescent", version, about = "Bayesian hierarchical clustering with Kingman's coalescent")]
pub struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// brownian | multinomial (inferred from column types when absent).
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    /// Number of SMC particles.
    #[arg(long, global = true, default_value_t = 100)]
    pub particles: usize,
    /// prior-prior | prior-post | post-post
    #[arg(long, global = true, default_value = "post-post")]
    pub proposal: Proposal,
    /// Tree builds; parameters are re-estimated between consecutive builds.
    #[arg(long, global = true, default_value_t = 1)]
    pub iters: usize,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// rate1 | max-prob | min-duration | smc
    #[arg(long, global = true, default_value = "rate1")]
    pub algo: Algo,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file with a header row.
    pub input: PathBuf,
    /// Column types, e.g. `real`, `cat:2` or `real,cat:3`.
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long, default_value = "NA")]
    pub na: String,
    /// Column holding class labels.
    #[arg(long)]
    pub label_col: Option<String>,
    /// Column holding row names.
    #[arg(long)]
    pub row_label_col: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a tree, learning parameters between builds; writes tree.nwk, params.txt, logprob.txt, trace.tsv.
    Fit(DataArgs),
    /// Run SMC; writes smc.txt, diagnostics.tsv, particles.tsv.
    Smc(DataArgs),
    /// Brownian predictive density of query rows; writes predict.tsv.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// CSV of fully observed query rows with the same columns.
        #[arg(long, conflicts_with = "grid")]
        query: Option<PathBuf>,
        /// `lo:hi:count` grid for one-dimensional data.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Fill missing cells from the tree; writes restore.tsv and restored.csv.
    Restore(DataArgs),
    /// Purity, subtree and leave-one-out scores against average linkage; writes metrics.tsv.
    Evaluate(DataArgs),
    /// Flat clusters from merge log-likelihood ratios; writes clusters.tsv.
    Cluster(DataArgs),
    /// Synthetic data and held-out prediction sweeps.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Sample data from the model; writes data.csv and tree.nwk.
    Data {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Categories per dimension (multinomial).
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        mask: f64,
        /// Add a `class` column from cutting the true tree into this many subtrees.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Held-out log predictive over one varied setting; writes sweep.tsv.
    Sweep {
        /// D | n | lambda | S
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated methods: smc-<proposal> or greedy-<variant>.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "smc-post-post,smc-prior-post,smc-prior-prior,greedy-rate1"
        )]
        methods: Vec<String>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
}

/// Parses `args`, runs the command and returns the process exit code. Errors
/// are reported on stderr as `error: <kind>: <message>`.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: argument: {first}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e);
            1
        }
    }
}

/// Runs a parsed command, writing its files into `--out-dir`. Returns a short
/// summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let (outputs, summary) = match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a)?,
        Command::Smc(a) => cmd_smc(cli, a)?,
        Command::Predict { data, query, grid } => cmd_predict(cli, data, query.as_deref(), grid.as_deref())?,
        Command::Restore(a) => cmd_restore(cli, a)?,
        Command::Evaluate(a) => cmd_evaluate(cli, a)?,
        Command::Cluster(a) => cmd_cluster(cli, a)?,
        Command::Synth(s) => cmd_synth(cli, s)?,
    };
    write_outputs(&cli.out_dir, &outputs)?;
    Ok(summary)
}

type Outputs = Vec<(&'static str, String)>;

fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(outputs.len());
    let result = (|| -> Result<()> {
        for (name, text) in outputs {
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, text)?;
            staged.push((tmp, dir.join(name)));
        }
        for (tmp, dest) in &staged {
            std::fs::rename(tmp, dest)?;
        }
        Ok(())
    })();
    if result.is_err() {
        for (tmp, _) in &staged {
            let _ = std::fs::remove_file(tmp);
        }
    }
    result
}

/// Loads the data file; `--model brownian` without a schema reads every column as real.
fn load(cli: &Cli, a: &DataArgs) -> Result<DataMatrix> {
    let schema = match (&a.schema, cli.model) {
        (Some(s), _) => Some(data::parse_schema(s)?),
        (None, Some(ModelKind::Brownian)) => Some(vec![crate::data::ColumnKind::Real]),
        (None, _) => None,
    };
    let opts = CsvOptions {
        schema,
        na_token: a.na.clone(),
        label_col: a.label_col.clone(),
        row_label_col: a.row_label_col.clone(),
    };
    data::load_csv(&a.input, &opts)
}

fn resolve_model(cli: &Cli, data: &DataMatrix) -> Result<ModelKind> {
    match cli.model {
        Some(m) => Ok(m),
        None if data.is_all_real() => Ok(ModelKind::Brownian),
        None if data.is_all_categorical() => Ok(ModelKind::Multinomial),
        None => Err(Error::Unsupported(
            "mixed real and categorical columns; pass --model".into(),
        )),
    }
}

fn smc_config(cli: &Cli) -> SmcConfig {
    SmcConfig {
        particles: cli.particles,
        proposal: cli.proposal,
        resample_threshold: 0.5,
        seed: cli.seed,
    }
}

fn fit_data(cli: &Cli, data: &DataMatrix, model: ModelKind) -> Result<FitResult> {
    let params0 = KernelParams::initial_for(data, model)?;
    let inference = match cli.algo {
        Algo::Greedy(v) => Inference::Greedy(v),
        Algo::Smc => Inference::Smc(smc_config(cli)),
    };
    learning::fit(
        data,
        &params0,
        &FitConfig {
            iterations: cli.iters,
            inference,
            ..FitConfig::default()
        },
    )
}

fn newick(g: &Genealogy, data: &DataMatrix) -> Result<String> {
    Ok(g.to_newick(&data.leaf_labels())? + "\n")
}

/// `name value` lines describing the kernel parameters.
pub fn params_text(p: &KernelParams) -> String {
    let mut out = String::new();
    match p {
        KernelParams::Brownian { lambda } => {
            out.push_str("model brownian\n");
            for (d, l) in lambda.iter().enumerate() {
                let _ = writeln!(out, "lambda_{d} {}", fmt_num(*l));
            }
        }
        KernelParams::Multinomial { dims } => {
            out.push_str("model multinomial\n");
            for (d, dim) in dims.iter().enumerate() {
                let _ = writeln!(out, "rate_{d} {}", fmt_num(dim.rate));
                for (k, q) in dim.equilibrium.iter().enumerate() {
                    let _ = writeln!(out, "q_{d}_{k} {}", fmt_num(*q));
                }
            }
        }
    }
    out
}

fn cmd_fit(cli: &Cli, a: &DataArgs) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    let model = resolve_model(cli, &data)?;
    let r = fit_data(cli, &data, model)?;
    let lik = kernels::evaluate_tree(&r.genealogy, &data, &r.params)?;
    let tree = newick(&r.genealogy, &data)?;
    let logprob = format!(
        "joint_log_prob {}\nlog_prior {}\nlog_marginal {}\n",
        fmt_num(lik.joint),
        fmt_num(lik.log_prior),
        fmt_num(lik.log_marginal)
    );
    let opt = |x: Option<f64>| x.map_or("NA".to_string(), fmt_num);
    let mut trace = String::from("iteration\tjoint_log_prob\tobjective_before\tobjective_after\n");
    for s in &r.trace {
        let _ = writeln!(
            trace,
            "{}\t{}\t{}\t{}",
            s.iteration,
            fmt_num(s.joint),
            opt(s.objective_before),
            opt(s.objective_after)
        );
    }
    let summary = tree.trim_end().to_string();
    Ok((
        vec![
            ("tree.nwk", tree),
            ("params.txt", params_text(&r.params)),
            ("logprob.txt", logprob),
            ("trace.tsv", trace),
        ],
        summary,
    ))
}

fn cmd_smc(cli: &Cli, a: &DataArgs) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    let model = resolve_model(cli, &data)?;
    let params = KernelParams::initial_for(&data, model)?;
    let ens = smc::run_smc(&data, &params, &smc_config(cli))?;
    let est = ens.log_marginal_estimate();
    let mut diag = String::from("iteration\tess\tlog_norm\tresampled\n");
    for d in &ens.diagnostics {
        let _ = writeln!(diag, "{}\t{}\t{}\t{}", d.iteration, fmt_num(d.ess), fmt_num(d.log_norm), d.resampled);
    }
    let labels = data.leaf_labels();
    let mut parts = String::from("particle\tlog_weight\tweight\tnewick\n");
    for (i, (p, w)) in ens.particles.iter().zip(ens.normalized_weights()).enumerate() {
        let nwk = p.genealogy()?.to_newick(&labels)?;
        let _ = writeln!(parts, "{i}\t{}\t{}\t{nwk}", fmt_num(p.log_weight), fmt_num(w));
    }
    let text = format!(
        "log_marginal_estimate {}\nfinal_ess {}\nparticles {}\nproposal {}\n",
        fmt_num(est),
        fmt_num(ens.ess()),
        cli.particles,
        cli.proposal
    );
    Ok((
        vec![("smc.txt", text), ("diagnostics.tsv", diag), ("particles.tsv", parts)],
        format!("log_marginal_estimate {}", fmt_num(est)),
    ))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Argument(format!("grid '{s}' is not lo:hi:count"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let count: usize = count.parse().map_err(|_| bad())?;
    if count < 2 || !(hi > lo) {
        return Err(bad());
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

fn cmd_predict(cli: &Cli, a: &DataArgs, query: Option<&Path>, grid: Option<&str>) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    if resolve_model(cli, &data)? != ModelKind::Brownian {
        return Err(Error::Unsupported("predict needs the brownian model".into()));
    }
    let points: Vec<Vec<f64>> = match (query, grid) {
        (Some(q), None) => {
            let qd = data::load_csv(
                q,
                &CsvOptions {
                    schema: Some(vec![crate::data::ColumnKind::Real]),
                    na_token: a.na.clone(),
                    ..CsvOptions::default()
                },
            )?;
            if qd.n_cols() != data.n_cols() || qd.missing_count() > 0 {
                return Err(Error::Argument(format!(
                    "query rows must have {} observed columns",
                    data.n_cols()
                )));
            }
            (0..qd.n_rows())
                .map(|r| qd.row(r).into_iter().map(|v| v.expect("checked")).collect())
                .collect()
        }
        (None, Some(g)) => {
            if data.n_cols() != 1 {
                return Err(Error::Argument("--grid needs one-dimensional data".into()));
            }
            parse_grid(g)?.into_iter().map(|x| vec![x]).collect()
        }
        _ => return Err(Error::Argument("predict needs --query or --grid".into())),
    };
    let r = fit_data(cli, &data, ModelKind::Brownian)?;
    let mut out = data.names().join("\t") + "\tdensity\n";
    for p in &points {
        let dens = learning::predictive_density_brownian(&r.genealogy, &data, &r.params, p)?;
        let cols: Vec<String> = p.iter().map(|&x| fmt_num(x)).collect();
        let _ = writeln!(out, "{}\t{}", cols.join("\t"), fmt_num(dens));
    }
    Ok((vec![("predict.tsv", out)], format!("{} densities", points.len())))
}

fn cmd_restore(cli: &Cli, a: &DataArgs) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    let model = resolve_model(cli, &data)?;
    let r = fit_data(cli, &data, model)?;
    let rest = learning::restore_missing(&r.genealogy, &data, &r.params)?;
    let labels = data.leaf_labels();
    let mut tsv = String::from("row\tcolumn\tvalue\tconfidence\n");
    for c in &rest.cells {
        let confidence = match &c.posterior {
            CellPosterior::Gaussian { var, .. } => var.sqrt(),
            CellPosterior::Categorical(p) => p[learning::argmax(p)],
        };
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}",
            labels[c.row],
            data.names()[c.column],
            fmt_num(c.posterior.point()),
            fmt_num(confidence)
        );
    }
    let mut csv = Vec::new();
    data::write_csv(&rest.filled, &mut csv, &a.na)?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    Ok((
        vec![("restore.tsv", tsv), ("restored.csv", csv)],
        format!("{} cells restored", rest.cells.len()),
    ))
}

fn cmd_evaluate(cli: &Cli, a: &DataArgs) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    let labels = data
        .classes()
        .ok_or_else(|| Error::Argument("evaluate needs --label-col".into()))?
        .ids
        .clone();
    let model = resolve_model(cli, &data)?;
    let r = fit_data(cli, &data, model)?;
    let avg = evaluation::average_link_tree(&data, Distance::for_data(&data))?;
    let mut out = String::from("method\tmetric\tvalue\n");
    for (name, g) in [("coalescent", &r.genealogy), ("average-link", &avg)] {
        let metrics = [
            ("purity", evaluation::dendrogram_purity(g, &labels)?),
            ("subtree", evaluation::subtree_score(g, &labels)?),
            ("loo", evaluation::loo_accuracy(g, &labels)?),
        ];
        for (m, v) in metrics {
            let _ = writeln!(out, "{name}\t{m}\t{}", fmt_num(v));
        }
    }
    Ok((vec![("metrics.tsv", out.clone())], out.trim_end().to_string()))
}

fn cmd_cluster(cli: &Cli, a: &DataArgs) -> Result<(Outputs, String)> {
    let data = load(cli, a)?;
    let model = resolve_model(cli, &data)?;
    let r = fit_data(cli, &data, model)?;
    let clusters = learning::flat_clusters(&r.genealogy, &data, &r.params)?;
    let labels = data.leaf_labels();
    let mut out = String::from("cluster\tsize\tllr\ttime\tmembers\n");
    for (i, c) in clusters.iter().enumerate() {
        let members: Vec<&str> = c.members.iter().map(|&m| labels[m].as_str()).collect();
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}",
            c.members.len(),
            fmt_num(c.llr),
            fmt_num(c.time),
            members.join(",")
        );
    }
    Ok((vec![("clusters.tsv", out)], format!("{} clusters", clusters.len())))
}

fn parse_method(s: &str, particles: usize) -> Result<Method> {
    if let Some(p) = s.strip_prefix("smc-") {
        Ok(Method::Smc {
            proposal: p.parse()?,
            particles,
        })
    } else if let Some(v) = s.strip_prefix("greedy-") {
        Ok(Method::Greedy(v.parse()?))
    } else {
        Err(Error::Argument(format!("unknown method '{s}'")))
    }
}

fn cmd_synth(cli: &Cli, s: &SynthCommand) -> Result<(Outputs, String)> {
    match s {
        SynthCommand::Data {
            n,
            dims,
            lambda,
            k,
            mask,
            classes,
        } => {
            let model = cli.model.unwrap_or(ModelKind::Brownian);
            let mut cfg = match model {
                ModelKind::Brownian => SynthConfig::brownian(*n, *dims, *lambda, cli.seed),
                ModelKind::Multinomial => SynthConfig::multinomial(*n, *dims, *k, *lambda, cli.seed),
            };
            cfg.mask_fraction = *mask;
            let (mut data, g) = synth::generate(&cfg)?;
            if let Some(c) = classes {
                let ids = synth::cut_classes(&g, *c)?;
                data = data.with_classes(ClassLabels {
                    column: "class".into(),
                    ids,
                    names: (0..*c).map(|i| format!("c{i}")).collect(),
                })?;
            }
            let mut csv = Vec::new();
            data::write_csv(&data, &mut csv, "NA")?;
            let csv = String::from_utf8(csv).expect("csv output is utf-8");
            Ok((
                vec![("data.csv", csv), ("tree.nwk", newick(&g, &data)?)],
                format!("{} rows", n),
            ))
        }
        SynthCommand::Sweep {
            axis,
            values,
            methods,
            repeats,
            n,
            dims,
            lambda,
        } => {
            if cli.model == Some(ModelKind::Multinomial) {
                return Err(Error::Unsupported("the sweep generates brownian data".into()));
            }
            let methods = methods
                .iter()
                .map(|m| parse_method(m, cli.particles))
                .collect::<Result<Vec<_>>>()?;
            let cfg = SweepConfig {
                repeats: *repeats,
                n: *n,
                dims: *dims,
                lambda: *lambda,
                particles: cli.particles,
                seed: cli.seed,
                ..SweepConfig::new(*axis, values.clone(), methods)
            };
            let rows = synth::sweep(&cfg)?;
            let mut out = format!("{axis}\tmethod\tmean\tstderr\tcompleted\tfailed\n");
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    fmt_num(r.value),
                    r.method,
                    fmt_num(r.mean),
                    fmt_num(r.stderr),
                    r.completed,
                    r.failed
                );
            }
            Ok((vec![("sweep.tsv", out)], format!("{} rows", rows.len())))
        }
    }
}
