//! Command-line front end: builds optimal overlays, verifies overlay and
//! network axioms, decides validity, unfolds networks, resolves them to
//! binary form, generates random instances and runs the perturbation
//! experiments.
//!
//! Exit codes: 0 success, 1 parse/input error, 2 semantic failure (invalid
//! triple, failed axiom, invalid network), 3 cap exceeded.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use osf_forge::builder::{build_osf, OsfMap, TieBreaker};
use osf_forge::model::{ForestTriple, Network, NodeId};
use osf_forge::network::{
    binary_resolution, build_network, check_valid, search_validity, unfold, NetworkError,
    SearchCaps, ValidityWitness,
};
use osf_forge::newick::{
    parse_forest, parse_leaf_map, parse_network_json, parse_osf_map, parse_tree_with_warnings,
    serialize_forest, serialize_leaf_map, serialize_network_dot, serialize_network_json,
    serialize_osf_map, serialize_tree,
};
use osf_forge::perturb::{
    perturb_forest_experiment, perturb_gene_experiment, random_triple, StabilityReport,
    TripleParams,
};
use osf_forge::verify::{
    brute_force_t, check_osf, check_strict, introgression_set_of, VerifyError,
};

#[derive(Parser)]
#[command(name = "osf-forge", version, about = "Overlaid species forest toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tie {
    First,
    Seeded,
}

#[derive(Args)]
struct TripleArgs {
    /// Gene tree file: a single rooted Newick line.
    #[arg(long)]
    gene: PathBuf,
    /// Species forest file: one Newick line per tree.
    #[arg(long)]
    forest: PathBuf,
    /// Leaf map file: gene<TAB>species rows.
    #[arg(long)]
    map: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build an optimal strict overlay and its network.
    Build {
        #[command(flatten)]
        triple: TripleArgs,
        /// Output directory for osf.tsv, introgression.tsv and the network.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[arg(long, value_enum, default_value = "first")]
        tie: Tie,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the overlay axioms for a stored map.
    Verify {
        #[command(flatten)]
        triple: TripleArgs,
        /// Overlay map file as written by `build`.
        #[arg(long)]
        osf: PathBuf,
        /// Also check the strictness axiom.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide whether a network is a representation of some overlay.
    Validate {
        /// Network JSON file ({nodes, forest_arcs, contact_arcs, leaf_labels}).
        #[arg(long)]
        network: PathBuf,
        /// Anchor vertex id for a direct check.
        #[arg(long)]
        rho: Option<usize>,
        /// Comma-separated arc indices (forest arcs first, then contact arcs).
        #[arg(long)]
        arcs: Option<String>,
        /// Exhaustive search over anchors and arc subsets.
        #[arg(long)]
        search: bool,
        /// Arc-count cap for the exhaustive search.
        #[arg(long, default_value_t = 16)]
        cap_search: usize,
    },
    /// Binary resolution of the overlay network.
    Resolve {
        #[command(flatten)]
        triple: TripleArgs,
        /// Overlay map file; defaults to the builder output.
        #[arg(long)]
        osf: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
    },
    /// Unfold a witnessed network back into a forest triple.
    Unfold {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        rho: usize,
        #[arg(long)]
        arcs: String,
        /// Cap on the number of unfolded vertices.
        #[arg(long, default_value_t = 65536)]
        cap_unfold: usize,
        /// Output directory for gene.nwk, forest.nwk, map.tsv, osf.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Random SPR perturbation trials with bound checking.
    Perturb {
        #[command(flatten)]
        triple: TripleArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Number of gene-tree SPR moves per trial.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Move species subtrees between trees instead of editing the gene tree.
        #[arg(long)]
        forest_moves: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random forest triple.
    Gen {
        #[arg(long, default_value_t = 6)]
        gene_leaves: usize,
        #[arg(long, default_value_t = 2)]
        trees: usize,
        #[arg(long, default_value_t = 3)]
        leaves_per_tree: usize,
        /// Allow multifurcations.
        #[arg(long)]
        non_binary: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for gene.nwk, forest.nwk, map.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive minimum contact count, for cross-checking `build`.
    Oracle {
        #[command(flatten)]
        triple: TripleArgs,
        /// Cap on the number of enumerated extensions.
        #[arg(long, default_value_t = 10_000_000)]
        cap_oracle: u128,
    },
}

enum CliError {
    Input(String),
    Semantic(String),
    Cap(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Semantic(_) => 2,
            CliError::Cap(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Semantic(m) | CliError::Cap(m) => write!(f, "{m}"),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_out(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, content)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_triple(args: &TripleArgs) -> Result<ForestTriple, CliError> {
    let (gene, warnings) = parse_tree_with_warnings(&read(&args.gene)?)
        .map_err(|e| CliError::Input(format!("gene tree: {e}")))?;
    for w in warnings {
        eprintln!("warning: gene tree: {w:?}");
    }
    let forest =
        parse_forest(&read(&args.forest)?).map_err(|e| CliError::Input(format!("forest: {e}")))?;
    let phi = parse_leaf_map(&read(&args.map)?, &gene, &forest)
        .map_err(|e| CliError::Input(format!("leaf map: {e}")))?;
    ForestTriple::new(gene, forest, &phi)
        .map_err(|e| CliError::Semantic(format!("invalid triple: {e}")))
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    parse_network_json(&read(path)?).map_err(|e| CliError::Input(format!("network: {e}")))
}

fn load_osf(path: &Path, triple: &ForestTriple) -> Result<OsfMap, CliError> {
    parse_osf_map(&read(path)?, triple).map_err(|e| CliError::Input(format!("overlay map: {e}")))
}

fn parse_arc_list(text: &str, net: &Network) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let idx: usize = part
            .parse()
            .map_err(|_| CliError::Input(format!("bad arc index {part:?}")))?;
        if idx >= net.arcs().len() {
            return Err(CliError::Input(format!("arc index {idx} out of range")));
        }
        out.push(idx);
    }
    Ok(out)
}

fn pick_seed(seed: Option<u64>) -> Result<u64, CliError> {
    match seed {
        Some(s) => Ok(s),
        None => {
            if std::env::var("OSF_FORGE_CI").as_deref() == Ok("1") {
                Err(CliError::Semantic(
                    "--seed is required when OSF_FORGE_CI=1".to_string(),
                ))
            } else {
                Ok(rand::random())
            }
        }
    }
}

fn tie_breaker(tie: Tie, seed: Option<u64>) -> Result<TieBreaker, CliError> {
    match tie {
        Tie::First => Ok(TieBreaker::first()),
        Tie::Seeded => Ok(TieBreaker::seeded(pick_seed(seed)?)),
    }
}

fn network_text(net: &Network, format: Format) -> Result<String, CliError> {
    match format {
        Format::Dot => serialize_network_dot(net),
        Format::Json => serialize_network_json(net),
    }
    .map_err(|e| CliError::Semantic(e.to_string()))
}

fn witness_json(w: &ValidityWitness) -> String {
    serde_json::to_string_pretty(w).expect("witness serializes")
}

fn cmd_build(
    triple: &TripleArgs,
    out: Option<&Path>,
    format: Format,
    tie: Tie,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let t = load_triple(triple)?;
    let mut tb = tie_breaker(tie, seed)?;
    let psi = build_osf(&t, &mut tb);
    let rep = build_network(&t, &psi).map_err(|e| CliError::Semantic(e.to_string()))?;
    println!(
        "t={} contact_arcs={}",
        psi.contact_count(),
        psi.contact_set().len()
    );
    if let Some(dir) = out {
        write_out(&dir.join("osf.tsv"), &serialize_osf_map(&t, &psi))?;
        let intro =
            introgression_set_of(&t, &psi).map_err(|e| CliError::Semantic(e.to_string()))?;
        let mut lines = String::new();
        for (u, v) in intro.arcs() {
            lines.push_str(&format!("{}\t{}\n", u.index(), v.index()));
        }
        write_out(&dir.join("introgression.tsv"), &lines)?;
        let name = match format {
            Format::Dot => "network.dot",
            Format::Json => "network.json",
        };
        write_out(&dir.join(name), &network_text(&rep.network, format)?)?;
    }
    Ok(0)
}

fn cmd_verify(
    triple: &TripleArgs,
    osf: &Path,
    strict: bool,
    out: Option<&Path>,
) -> Result<i32, CliError> {
    let t = load_triple(triple)?;
    let psi = load_osf(osf, &t)?;
    let mut report = check_osf(&t, &psi).map_err(|e| CliError::Semantic(e.to_string()))?;
    if strict {
        let s = check_strict(&t, &psi).map_err(|e| CliError::Semantic(e.to_string()))?;
        report.s3 = s.s3;
    }
    let body =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Semantic(e.to_string()))?;
    match out {
        Some(path) => write_out(path, &body)?,
        None => println!("{body}"),
    }
    Ok(if report.all_pass() { 0 } else { 2 })
}

fn cmd_validate(
    network: &Path,
    rho: Option<usize>,
    arcs: Option<&str>,
    search: bool,
    cap_search: usize,
) -> Result<i32, CliError> {
    let net = load_network(network)?;
    let caps = SearchCaps {
        exhaustive_arcs: cap_search,
        ..SearchCaps::default()
    };
    if search {
        match search_validity(&net, &caps) {
            Ok(Some(w)) => {
                println!("{}", witness_json(&w));
                Ok(0)
            }
            Ok(None) => {
                println!("invalid");
                Ok(2)
            }
            Err(NetworkError::CapExceeded(m)) => Err(CliError::Cap(m)),
            Err(e) => Err(CliError::Semantic(e.to_string())),
        }
    } else {
        let (Some(rho), Some(arcs)) = (rho, arcs) else {
            return Err(CliError::Input(
                "--rho and --arcs are required without --search".to_string(),
            ));
        };
        let arc_list = parse_arc_list(arcs, &net)?;
        match check_valid(&net, NodeId(rho), &arc_list, &caps) {
            Ok(w) => {
                println!("{}", witness_json(&w));
                Ok(0)
            }
            Err(NetworkError::CapExceeded(m)) => Err(CliError::Cap(m)),
            Err(e) => {
                println!("invalid: {e}");
                Ok(2)
            }
        }
    }
}

fn cmd_resolve(
    triple: &TripleArgs,
    osf: Option<&Path>,
    out: Option<&Path>,
    format: Format,
) -> Result<i32, CliError> {
    let t = load_triple(triple)?;
    let psi = match osf {
        Some(path) => load_osf(path, &t)?,
        None => build_osf(&t, &mut TieBreaker::first()),
    };
    let res = binary_resolution(&t, &psi).map_err(|e| match e {
        NetworkError::CapExceeded(m) => CliError::Cap(m),
        other => CliError::Semantic(other.to_string()),
    })?;
    let body = network_text(&res.network, format)?;
    match out {
        Some(path) => write_out(path, &body)?,
        None => println!("{body}"),
    }
    Ok(0)
}

fn cmd_unfold(
    network: &Path,
    rho: usize,
    arcs: &str,
    cap_unfold: usize,
    out: &Path,
) -> Result<i32, CliError> {
    let net = load_network(network)?;
    let arc_list = parse_arc_list(arcs, &net)?;
    let caps = SearchCaps {
        unfold_nodes: cap_unfold,
        ..SearchCaps::default()
    };
    let (t, psi) = match unfold(&net, NodeId(rho), &arc_list, &caps) {
        Ok(pair) => pair,
        Err(NetworkError::CapExceeded(m)) => return Err(CliError::Cap(m)),
        Err(e) => {
            println!("invalid: {e}");
            return Ok(2);
        }
    };
    write_out(&out.join("gene.nwk"), &format!("{}\n", serialize_tree(&t.gene)))?;
    write_out(&out.join("forest.nwk"), &serialize_forest(&t.forest))?;
    write_out(&out.join("map.tsv"), &serialize_leaf_map(&t))?;
    write_out(&out.join("osf.tsv"), &serialize_osf_map(&t, &psi))?;
    println!(
        "gene_leaves={} trees={} contact_arcs={}",
        t.gene.leaves().len(),
        t.forest.len(),
        psi.contact_set().len()
    );
    Ok(0)
}

fn cmd_perturb(
    triple: &TripleArgs,
    trials: usize,
    k: usize,
    forest_moves: bool,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<i32, CliError> {
    let t = load_triple(triple)?;
    let seed = pick_seed(seed)?;
    let mut report = StabilityReport {
        seed,
        records: Vec::new(),
    };
    for i in 0..trials {
        let sub = seed.wrapping_add(i as u64);
        let one = if forest_moves {
            perturb_forest_experiment(&t, sub)
        } else {
            perturb_gene_experiment(&t, k, sub)
        }
        .map_err(|e| CliError::Semantic(e.to_string()))?;
        for mut r in one.records {
            r.trial = i;
            report.records.push(r);
        }
    }
    let csv = report.to_csv();
    let summary = report.summary_json();
    match out {
        Some(dir) => {
            write_out(&dir.join("report.csv"), &csv)?;
            write_out(&dir.join("summary.json"), &summary)?;
            println!("{summary}");
        }
        None => {
            print!("{csv}");
            println!("{summary}");
        }
    }
    Ok(0)
}

fn cmd_gen(
    gene_leaves: usize,
    trees: usize,
    leaves_per_tree: usize,
    non_binary: bool,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32, CliError> {
    let seed = pick_seed(seed)?;
    let params = TripleParams {
        n_gene_leaves: gene_leaves,
        n_trees: trees,
        leaves_per_tree,
        binary: !non_binary,
    };
    let t = random_triple(&params, seed).map_err(|e| CliError::Semantic(e.to_string()))?;
    write_out(&out.join("gene.nwk"), &format!("{}\n", serialize_tree(&t.gene)))?;
    write_out(&out.join("forest.nwk"), &serialize_forest(&t.forest))?;
    write_out(&out.join("map.tsv"), &serialize_leaf_map(&t))?;
    println!("seed={seed}");
    Ok(0)
}

fn cmd_oracle(triple: &TripleArgs, cap: u128) -> Result<i32, CliError> {
    let t = load_triple(triple)?;
    match brute_force_t(&t, cap) {
        Ok(t_min) => {
            println!("t={t_min}");
            Ok(0)
        }
        Err(VerifyError::CapExceeded { size, cap }) => Err(CliError::Cap(format!(
            "search space {size} exceeds cap {cap}"
        ))),
        Err(e) => Err(CliError::Semantic(e.to_string())),
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match &cli.cmd {
        Command::Build {
            triple,
            out,
            format,
            tie,
            seed,
        } => cmd_build(triple, out.as_deref(), *format, *tie, *seed),
        Command::Verify {
            triple,
            osf,
            strict,
            out,
        } => cmd_verify(triple, osf, *strict, out.as_deref()),
        Command::Validate {
            network,
            rho,
            arcs,
            search,
            cap_search,
        } => cmd_validate(network, *rho, arcs.as_deref(), *search, *cap_search),
        Command::Resolve {
            triple,
            osf,
            out,
            format,
        } => cmd_resolve(triple, osf.as_deref(), out.as_deref(), *format),
        Command::Unfold {
            network,
            rho,
            arcs,
            cap_unfold,
            out,
        } => cmd_unfold(network, *rho, arcs, *cap_unfold, out),
        Command::Perturb {
            triple,
            trials,
            k,
            forest_moves,
            seed,
            out,
        } => cmd_perturb(triple, *trials, *k, *forest_moves, *seed, out.as_deref()),
        Command::Gen {
            gene_leaves,
            trees,
            leaves_per_tree,
            non_binary,
            seed,
            out,
        } => cmd_gen(
            *gene_leaves,
            *trees,
            *leaves_per_tree,
            *non_binary,
            *seed,
            out,
        ),
        Command::Oracle { triple, cap_oracle } => cmd_oracle(triple, *cap_oracle),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };
    std::process::exit(code);
}
