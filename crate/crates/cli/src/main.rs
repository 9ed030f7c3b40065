//! `rpt`: build rank projection trees over trained networks and evaluate the
//! resulting interpretations.
//!
//! Exit codes: 0 success, 1 I/O or malformed auxiliary input, 2 invalid
//! model file, 3 ranking or tree error, 4 salience error, 5 statistics
//! error, 64 command-line usage error.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rpt_core::salience::SalienceError;
use rpt_core::stats::{self, KsDirection, StatsError};
use rpt_core::tree::max_half_branch;
use rpt_core::{
    build_tree, expand_with_modules, gradient_salience, rank_inputs, salience_map, Aggregator,
    BuildOptions, NetError, Network, RankError, RankKind, RankProjectionTree, RankingSpec,
    SalienceMap, TreeError, DEFAULT_SEED,
};
use serde::Serialize;

use crate::io::{GroupList, GroupsDoc, Provenance, TreeDoc};

const LEAF_CAP_VAR: &str = "RPT_LEAF_CAP";

#[derive(Parser)]
#[command(
    name = "rpt",
    version,
    about = "Rank projection tree interpretation of feed-forward networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a weight file; report layer sizes, legal branching and digest.
    Validate {
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build a rank projection tree.
    Tree {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "weights")]
        rank: RankArg,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// CSV of reference inputs (header row, one input vector per row).
        #[arg(long)]
        ref_inputs: Option<PathBuf>,
        /// Half branching factor B.
        #[arg(short = 'b', long)]
        half_branch: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Per-input salience from a tree, or the gradient-magnitude baseline from a model.
    Salience {
        #[arg(long, conflicts_with_all = ["model"], required_unless_present = "model")]
        tree: Option<PathBuf>,
        #[arg(long, default_value = "abs-average")]
        aggregator: String,
        /// Gradient-magnitude baseline: the model to differentiate.
        #[arg(long, requires = "ref_inputs")]
        model: Option<PathBuf>,
        #[arg(long)]
        ref_inputs: Option<PathBuf>,
        /// Emit only the top K inputs, best first.
        #[arg(long)]
        top: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Positive/negative input groupings for every internal tree node.
    Groups {
        #[arg(long)]
        tree: PathBuf,
        /// Module map used to expand input indices into gene names.
        #[arg(long)]
        modules: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Normalized l1 distance between predicted and reference rankings.
    CompareRank {
        /// Salience CSV or `item,score` CSV.
        #[arg(long)]
        pred: PathBuf,
        /// `item,score` CSV of reference scores.
        #[arg(long)]
        truth: PathBuf,
        #[arg(short, long)]
        k: usize,
        /// Module map translating salience input indices to module ids.
        #[arg(long)]
        modules: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Hypergeometric enrichment of target items in every grouping.
    Enrich {
        #[arg(long)]
        groups: PathBuf,
        /// One target item per line.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        universe_size: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// One-sided two-sample Kolmogorov-Smirnov test.
    Ks {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "a-above-b")]
        direction: String,
        #[arg(long, default_value = "p_value")]
        column: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Empirical CDF of one numeric column, as plot-ready CSV.
    Ecdf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "p_value")]
        column: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RankArg {
    Weights,
    Gradient,
    Random,
}

impl From<RankArg> for RankKind {
    fn from(r: RankArg) -> Self {
        match r {
            RankArg::Weights => RankKind::Weights,
            RankArg::Gradient => RankKind::Gradient,
            RankArg::Random => RankKind::Random,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    fn rank_code(e: &RankError) -> u8 {
        match e {
            RankError::Net(_) => 2,
            _ => 3,
        }
    }
    for cause in err.chain() {
        if cause.is::<NetError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<RankError>() {
            return rank_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TreeError>() {
            return match e {
                TreeError::Rank(r) => rank_code(r),
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<SalienceError>() {
            return match e {
                SalienceError::Net(_) => 2,
                _ => 4,
            };
        }
        if cause.is::<StatsError>() {
            return 5;
        }
    }
    1
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { model, output } => cmd_validate(model, output),
        Command::Tree {
            model,
            rank,
            seed,
            ref_inputs,
            half_branch,
            output,
        } => cmd_tree(model, rank.into(), seed, ref_inputs, half_branch, output),
        Command::Salience {
            tree,
            aggregator,
            model,
            ref_inputs,
            top,
            output,
        } => cmd_salience(tree, &aggregator, model, ref_inputs, top, output),
        Command::Groups {
            tree,
            modules,
            output,
        } => cmd_groups(tree, modules, output),
        Command::CompareRank {
            pred,
            truth,
            k,
            modules,
            output,
        } => cmd_compare(pred, truth, k, modules, output),
        Command::Enrich {
            groups,
            targets,
            universe_size,
            format,
            output,
        } => cmd_enrich(groups, targets, universe_size, format, output),
        Command::Ks {
            a,
            b,
            direction,
            column,
            output,
        } => cmd_ks(a, b, &direction, &column, output),
        Command::Ecdf {
            input,
            column,
            output,
        } => cmd_ecdf(input, &column, output),
    }
}

fn load_model(path: &Path, prov: &mut Provenance) -> Result<Network> {
    let bytes = io::read_bytes(path)?;
    prov.input("model", &bytes);
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| NetError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .with_context(|| format!("loading model {}", path.display()))?;
    Network::from_json(text).with_context(|| format!("loading model {}", path.display()))
}

fn load_tree(path: &Path, prov: &mut Provenance) -> Result<RankProjectionTree> {
    let bytes = io::read_bytes(path)?;
    prov.input("tree", &bytes);
    let doc: TreeDoc = serde_json::from_slice(&bytes)
        .map_err(|e| TreeError::Malformed(e.to_string()))
        .with_context(|| format!("loading tree {}", path.display()))?;
    RankProjectionTree::from_file(doc.tree)
        .with_context(|| format!("loading tree {}", path.display()))
}

fn leaf_cap() -> Result<u64> {
    match std::env::var(LEAF_CAP_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{LEAF_CAP_VAR}=`{v}` is not a non-negative integer")),
        Err(_) => Ok(rpt_core::tree::DEFAULT_LEAF_CAP),
    }
}

#[derive(Serialize)]
struct LayerReport {
    layer: usize,
    size: usize,
    /// Largest B with 2B < size; absent for the output layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_half_branch: Option<usize>,
}

#[derive(Serialize)]
struct ValidateReport {
    provenance: Provenance,
    digest: String,
    depth: usize,
    /// Output first.
    layer_sizes: Vec<usize>,
    layers: Vec<LayerReport>,
    /// 0 means no tree can be built over this network.
    max_half_branch: usize,
}

fn cmd_validate(model: PathBuf, output: Option<PathBuf>) -> Result<()> {
    let mut prov = Provenance::new("validate");
    let net = load_model(&model, &mut prov)?;
    let sizes = net.layer_sizes();
    let layers = sizes
        .iter()
        .enumerate()
        .map(|(layer, &size)| LayerReport {
            layer,
            size,
            max_half_branch: (layer > 0).then(|| size.saturating_sub(1) / 2),
        })
        .collect();
    let report = ValidateReport {
        provenance: prov,
        digest: net.digest(),
        depth: net.depth(),
        max_half_branch: max_half_branch(&sizes),
        layer_sizes: sizes,
        layers,
    };
    io::emit(output.as_ref(), &io::to_json(&report))
}

fn cmd_tree(
    model: PathBuf,
    kind: RankKind,
    seed: u64,
    ref_inputs: Option<PathBuf>,
    half_branch: usize,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut prov = Provenance::new("tree");
    let net = load_model(&model, &mut prov)?;
    let mut reference_inputs = Vec::new();
    if let Some(path) = &ref_inputs {
        let bytes = io::read_bytes(path)?;
        prov.input("ref_inputs", &bytes);
        reference_inputs = io::read_matrix(&bytes, path)?;
    }
    let spec = RankingSpec {
        kind,
        seed,
        reference_inputs,
    };
    let cap = leaf_cap()?;
    prov.param("rank", kind);
    prov.param("seed", seed);
    prov.param("half_branch", half_branch);
    prov.param("leaf_cap", cap);
    let tree = build_tree(&net, &spec, half_branch, BuildOptions { leaf_cap: cap })?;
    let doc = TreeDoc {
        provenance: Some(prov),
        tree: tree.to_file(),
    };
    io::emit(output.as_ref(), &io::to_json(&doc))
}

fn salience_rows(
    map: &SalienceMap,
    top: Option<usize>,
) -> Result<(Vec<&'static str>, Vec<Vec<String>>)> {
    let name = map.method.name().to_string();
    match top {
        None => Ok((
            vec!["input_index", "score", "covered", "aggregator"],
            (1..=map.len())
                .map(|n| {
                    vec![
                        n.to_string(),
                        map.score(n).to_string(),
                        map.is_covered(n).to_string(),
                        name.clone(),
                    ]
                })
                .collect(),
        )),
        Some(k) => Ok((
            vec!["rank", "input_index", "score", "covered", "aggregator"],
            rank_inputs(map, k)?
                .into_iter()
                .enumerate()
                .map(|(r, (n, s))| {
                    vec![
                        (r + 1).to_string(),
                        n.to_string(),
                        s.to_string(),
                        map.is_covered(n).to_string(),
                        name.clone(),
                    ]
                })
                .collect(),
        )),
    }
}

fn cmd_salience(
    tree: Option<PathBuf>,
    aggregator: &str,
    model: Option<PathBuf>,
    ref_inputs: Option<PathBuf>,
    top: Option<usize>,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut prov = Provenance::new("salience");
    let map = match (tree, model) {
        (Some(tree), None) => {
            let aggregator: Aggregator = aggregator.parse().map_err(|e: String| anyhow!(e))?;
            let tree = load_tree(&tree, &mut prov)?;
            prov.param("aggregator", aggregator);
            salience_map(&tree, aggregator)
        }
        (None, Some(model)) => {
            let net = load_model(&model, &mut prov)?;
            let path = ref_inputs.ok_or_else(|| anyhow!("--model needs --ref-inputs"))?;
            let bytes = io::read_bytes(&path)?;
            prov.input("ref_inputs", &bytes);
            let refs = io::read_matrix(&bytes, &path)?;
            prov.param("method", "gradient-magnitude");
            gradient_salience(&net, &refs)?
        }
        _ => bail!("give exactly one of --tree or --model"),
    };
    if let Some(k) = top {
        prov.param("top", k);
    }
    let (header, rows) = salience_rows(&map, top)?;
    io::emit(output.as_ref(), &io::csv_text(&prov, &header, &rows)?)
}

fn cmd_groups(tree: PathBuf, modules: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let mut prov = Provenance::new("groups");
    let tree = load_tree(&tree, &mut prov)?;
    let groups = tree.extract_groups();
    let list = match modules {
        None => GroupList::Indices(groups),
        Some(path) => {
            let bytes = io::read_bytes(&path)?;
            prov.input("modules", &bytes);
            let map = io::read_modules(&bytes, &path)?;
            GroupList::Genes(expand_with_modules(&groups, &map)?)
        }
    };
    let doc = GroupsDoc {
        provenance: prov,
        groups: list,
    };
    io::emit(output.as_ref(), &io::to_json(&doc))
}

#[derive(Serialize)]
struct CompareDoc {
    provenance: Provenance,
    order: stats::ScoreOrder,
    comparison: stats::RankingComparison,
}

fn cmd_compare(
    pred: PathBuf,
    truth: PathBuf,
    k: usize,
    modules: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut prov = Provenance::new("compare-rank");
    let map = match &modules {
        Some(path) => {
            let bytes = io::read_bytes(path)?;
            prov.input("modules", &bytes);
            Some(io::read_modules(&bytes, path)?)
        }
        None => None,
    };
    let pred_bytes = io::read_bytes(&pred)?;
    prov.input("pred", &pred_bytes);
    let pred = io::read_scores(&pred_bytes, &pred, map.as_ref())?;
    let truth_bytes = io::read_bytes(&truth)?;
    prov.input("truth", &truth_bytes);
    let truth = io::read_scores(&truth_bytes, &truth, None)?;
    prov.param("k", k);
    let comparison = stats::compare_rankings(&pred.scores, &truth.scores, k, pred.order)?;
    let doc = CompareDoc {
        provenance: prov,
        order: pred.order,
        comparison,
    };
    io::emit(output.as_ref(), &io::to_json(&doc))
}

#[derive(Serialize)]
struct EnrichRow {
    path: rpt_core::TreePath,
    layer: usize,
    node_index: usize,
    sign: &'static str,
    #[serde(flatten)]
    result: stats::EnrichmentResult,
}

#[derive(Serialize)]
struct EnrichDoc {
    provenance: Provenance,
    results: Vec<EnrichRow>,
}

fn cmd_enrich(
    groups: PathBuf,
    targets: PathBuf,
    universe_size: u64,
    format: Format,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut prov = Provenance::new("enrich");
    let bytes = io::read_bytes(&groups)?;
    prov.input("groups", &bytes);
    let doc: GroupsDoc = serde_json::from_slice(&bytes)
        .with_context(|| format!("{}: invalid groups file", groups.display()))?;
    let target_bytes = io::read_bytes(&targets)?;
    prov.input("targets", &target_bytes);
    let target_set = io::read_items(&target_bytes, &targets)?;
    prov.param("universe_size", universe_size);

    let mut results = Vec::new();
    for g in doc.groups.as_named() {
        for (sign, set) in [("plus", &g.s_plus), ("minus", &g.s_minus)] {
            let result = stats::enrichment(set, &target_set, universe_size)
                .with_context(|| format!("group {} ({sign})", g.path))?;
            results.push(EnrichRow {
                path: g.path.clone(),
                layer: g.layer,
                node_index: g.node_index,
                sign,
                result,
            });
        }
    }
    let text = match format {
        Format::Json => io::to_json(&EnrichDoc {
            provenance: prov,
            results,
        }),
        Format::Csv => {
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        r.path.to_string(),
                        r.layer.to_string(),
                        r.node_index.to_string(),
                        r.sign.to_string(),
                        r.result.population.to_string(),
                        r.result.successes.to_string(),
                        r.result.sample.to_string(),
                        r.result.observed.to_string(),
                        r.result.p_value.to_string(),
                    ]
                })
                .collect();
            io::csv_text(
                &prov,
                &[
                    "path",
                    "layer",
                    "node_index",
                    "sign",
                    "population",
                    "successes",
                    "sample",
                    "observed",
                    "p_value",
                ],
                &rows,
            )?
        }
    };
    io::emit(output.as_ref(), &text)
}

#[derive(Serialize)]
struct KsDoc {
    provenance: Provenance,
    result: stats::KsResult,
}

fn cmd_ks(
    a: PathBuf,
    b: PathBuf,
    direction: &str,
    column: &str,
    output: Option<PathBuf>,
) -> Result<()> {
    let direction: KsDirection = direction.parse().map_err(|e: String| anyhow!(e))?;
    let mut prov = Provenance::new("ks");
    let a_bytes = io::read_bytes(&a)?;
    let b_bytes = io::read_bytes(&b)?;
    prov.input("a", &a_bytes);
    prov.input("b", &b_bytes);
    prov.param("direction", direction);
    prov.param("column", column);
    let xs = io::read_column(&a_bytes, &a, column)?;
    let ys = io::read_column(&b_bytes, &b, column)?;
    let result = stats::ks_1tail(&xs, &ys, direction)?;
    io::emit(
        output.as_ref(),
        &io::to_json(&KsDoc {
            provenance: prov,
            result,
        }),
    )
}

fn cmd_ecdf(input: PathBuf, column: &str, output: Option<PathBuf>) -> Result<()> {
    let mut prov = Provenance::new("ecdf");
    let bytes = io::read_bytes(&input)?;
    prov.input("values", &bytes);
    prov.param("column", column);
    let values = io::read_column(&bytes, &input, column)?;
    let steps = stats::ecdf(&values)?;
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|(x, f)| vec![x.to_string(), f.to_string()])
        .collect();
    io::emit(
        output.as_ref(),
        &io::csv_text(&prov, &["x", "ecdf"], &rows)?,
    )
}
