use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aced_core::cit::{build_tree_with_tamper, verify_symbol, CitError, CodedTree, Commitment, Tamper, TreeParams};
use aced_core::dispersal::{assign_chunks, feasibility, verify_design, DispersalError, DispersalParams, VerifyMode};
use aced_core::incentives::{check_allc_equilibrium, check_allo_equilibrium, IncentiveError, IncentiveParams};
use aced_core::metrics;
use aced_core::oracle::commitment_id;
use aced_core::retrieval::{reconstruct, verify_fraud_proof, ChunkSet, ReconstructionResult, RetrievalError};
use aced_core::simnet::{check_properties, measure, run_scenario, ScenarioConfig, SimError};
use aced_core::wire::{self, WireError};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O error or malformed binary input
  2  usage error
  3  invalid parameters or configuration
  4  verification failed
  5  fraud detected (fraud proof written)
  6  insufficient chunks to reconstruct
  7  defective code detected during reconstruction";

const EXIT_IO: u8 = 1;
const EXIT_PARAMETER: u8 = 3;
const EXIT_VERIFY: u8 = 4;
const EXIT_FRAUD: u8 = 5;
const EXIT_INSUFFICIENT: u8 = 6;
const EXIT_BAD_CODE: u8 = 7;

const TREE_CACHE_MAGIC: &[u8; 4] = b"ACTC";
const TREE_CACHE_VERSION: u8 = 1;

#[derive(Parser)]
#[command(name = "aced", version, about = "Data availability oracle toolkit", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a coded tree over a block and write its commitment and a tree cache.
    #[command(after_help = EXIT_CODES)]
    Commit {
        #[arg(long)]
        block: PathBuf,
        /// Tree parameters (JSON).
        #[arg(long)]
        params: PathBuf,
        /// Commitment output file.
        #[arg(long)]
        out: PathBuf,
        /// Tree cache output file, read by `pom`.
        #[arg(long)]
        tree: PathBuf,
        /// Corrupt one coded symbol, as `LAYER:INDEX`, to produce an invalid tree.
        #[arg(long, value_parser = parse_tamper)]
        tamper: Option<(usize, usize)>,
    },
    /// Sample proofs of membership for base symbols.
    #[command(after_help = EXIT_CODES)]
    Pom {
        #[arg(long)]
        tree: PathBuf,
        /// Base index; repeat for several.
        #[arg(long, required_unless_present = "all")]
        index: Vec<usize>,
        /// Sample every base index.
        #[arg(long, conflicts_with = "index")]
        all: bool,
        /// Output file for one index, or a directory of `<index>.apom` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check proofs of membership or a fraud proof against a commitment.
    #[command(after_help = EXIT_CODES)]
    Verify {
        #[arg(long)]
        commitment: PathBuf,
        /// Proof of membership file; repeat for several.
        #[arg(long, required_unless_present = "fraud_proof")]
        pom: Vec<PathBuf>,
        #[arg(long, conflicts_with = "pom")]
        fraud_proof: Option<PathBuf>,
    },
    /// Draw a chunk-to-node dispersal design.
    #[command(after_help = EXIT_CODES)]
    Disperse {
        /// Dispersal configuration (JSON).
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        design_seed: u64,
        /// Design output file (text).
        #[arg(long)]
        out: PathBuf,
        /// Estimate the fraction of retrieval subsets that miss eta.
        #[arg(long, value_enum)]
        check: Option<CheckMode>,
        /// Monte-Carlo trials for `--check monte-carlo`.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Reconstruct a block from proofs of membership.
    #[command(after_help = EXIT_CODES)]
    Retrieve {
        #[arg(long)]
        commitment: PathBuf,
        /// Proof of membership files or directories of `.apom` files.
        #[arg(long, num_args = 1.., required = true)]
        chunks: Vec<PathBuf>,
        /// Receives the block, or the fraud proof when the coding is invalid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a protocol scenario and write its trace.
    #[command(after_help = EXIT_CODES)]
    Simulate {
        /// Scenario configuration (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the storage, proof size and communication formulas.
    #[command(after_help = EXIT_CODES)]
    Metrics {
        /// Metrics configuration (JSON).
        #[arg(long)]
        params: PathBuf,
        /// Output directory for report.json, summary.csv and baselines.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the equilibrium conditions of the incentive game.
    #[command(after_help = EXIT_CODES)]
    Incentives {
        /// Incentive parameters (JSON).
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Exhaustive,
    MonteCarlo,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Wire { path: PathBuf, source: WireError },
    #[error("{0}")]
    Parameter(String),
    #[error(transparent)]
    Cit(#[from] CitError),
    #[error(transparent)]
    Dispersal(#[from] DispersalError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Wire { .. } => EXIT_IO,
            CliError::Retrieval(RetrievalError::BadCode { .. }) => EXIT_BAD_CODE,
            CliError::Retrieval(RetrievalError::InvalidUnit { .. }) => EXIT_VERIFY,
            CliError::Sim(SimError::Oracle(_)) => EXIT_IO,
            _ => EXIT_PARAMETER,
        }
    }
}

fn parse_tamper(s: &str) -> Result<(usize, usize), String> {
    let (layer, index) = s.split_once(':').ok_or("expected LAYER:INDEX")?;
    Ok((
        layer.parse().map_err(|e| format!("layer: {e}"))?,
        index.parse().map_err(|e| format!("index: {e}"))?,
    ))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, data).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read(path)?).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn read_commitment(path: &Path) -> Result<Commitment, CliError> {
    wire::decode_commitment(&read(path)?).map_err(|source| CliError::Wire {
        path: path.into(),
        source,
    })
}

fn wire_err(path: &Path) -> impl FnOnce(WireError) -> CliError + '_ {
    move |source| CliError::Wire {
        path: path.into(),
        source,
    }
}

/// Tree cache: magic, version, u32 LE length of the parameter JSON, the JSON,
/// then the raw block. `pom` rebuilds the tree from it deterministically.
fn encode_tree_cache(params: &TreeParams, tamper: Option<&Tamper>, block: &[u8]) -> Vec<u8> {
    let header = json!({ "params": params, "tamper": tamper.map(|t| [t.layer, t.index]) });
    let header = serde_json::to_vec(&header).expect("serializable");
    let mut out = Vec::with_capacity(9 + header.len() + block.len());
    out.extend_from_slice(TREE_CACHE_MAGIC);
    out.push(TREE_CACHE_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(block);
    out
}

fn tamper_mask() -> Vec<u8> {
    vec![0xff]
}

fn load_tree_cache(path: &Path) -> Result<CodedTree, CliError> {
    #[derive(Deserialize)]
    struct Header {
        params: TreeParams,
        tamper: Option<[usize; 2]>,
    }
    let data = read(path)?;
    let bad = |msg: &str| CliError::Wire {
        path: path.into(),
        source: WireError::Invalid(msg.into()),
    };
    if data.len() < 9 {
        return Err(CliError::Wire {
            path: path.into(),
            source: WireError::Truncated,
        });
    }
    if &data[..4] != TREE_CACHE_MAGIC {
        return Err(CliError::Wire {
            path: path.into(),
            source: WireError::BadMagic(data[..4].try_into().unwrap()),
        });
    }
    if data[4] != TREE_CACHE_VERSION {
        return Err(CliError::Wire {
            path: path.into(),
            source: WireError::Version(data[4]),
        });
    }
    let len = u32::from_le_bytes(data[5..9].try_into().unwrap()) as usize;
    let header = data.get(9..9 + len).ok_or_else(|| bad("header truncated"))?;
    let header: Header = serde_json::from_slice(header).map_err(|e| bad(&e.to_string()))?;
    let tamper = header.tamper.map(|[layer, index]| Tamper {
        layer,
        index,
        mask: tamper_mask(),
    });
    Ok(build_tree_with_tamper(&data[9 + len..], &header.params, tamper.as_ref())?)
}

fn collect_pom_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let entries = fs::read_dir(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "apom"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

/// Configuration for `disperse`.
#[derive(Deserialize)]
struct DisperseConfig {
    nodes: usize,
    /// Base-layer chunks to place.
    chunks: usize,
    dispersal: DispersalParams,
}

/// Configuration for `metrics`. Without `lambda`, the largest efficiency
/// tolerating `beta` is used and gamma is set to `1 - 2 beta`.
#[derive(Deserialize)]
struct MetricsConfig {
    /// Block size in bytes.
    block_size: f64,
    nodes: usize,
    beta: f64,
    eta: f64,
    #[serde(default)]
    lambda: Option<f64>,
    tree: TreeParams,
}

fn commit(
    block: &Path,
    params: &Path,
    out: &Path,
    tree_out: &Path,
    tamper: Option<(usize, usize)>,
) -> Result<u8, CliError> {
    let params: TreeParams = read_json(params)?;
    let block = read(block)?;
    let tamper = tamper.map(|(layer, index)| Tamper {
        layer,
        index,
        mask: tamper_mask(),
    });
    let tree = build_tree_with_tamper(&block, &params, tamper.as_ref())?;
    write(out, wire::encode_commitment(tree.commitment()))?;
    write(tree_out, encode_tree_cache(&params, tamper.as_ref(), &block))?;
    let summary = json!({
        "commitment_id": hex::encode(commitment_id(tree.commitment())),
        "block_len": block.len(),
        "layer_sizes": tree.layer_sizes(),
    });
    print!("{}", pretty(&summary));
    Ok(0)
}

fn pom(tree: &Path, indices: &[usize], all: bool, out: &Path) -> Result<u8, CliError> {
    let tree = load_tree_cache(tree)?;
    let indices: Vec<usize> = if all {
        (0..tree.base_size()).collect()
    } else {
        indices.to_vec()
    };
    if indices.len() == 1 && !all {
        write(out, wire::encode_pom(&tree.sample_pom(indices[0])?))?;
    } else {
        create_dir(out)?;
        for i in indices {
            write(&out.join(format!("{i}.apom")), wire::encode_pom(&tree.sample_pom(i)?))?;
        }
    }
    Ok(0)
}

fn verify(commitment: &Path, poms: &[PathBuf], fraud_proof: Option<&Path>) -> Result<u8, CliError> {
    let c = read_commitment(commitment)?;
    let mut ok = true;
    if let Some(path) = fraud_proof {
        let proof = wire::decode_fraud_proof(&read(path)?).map_err(wire_err(path))?;
        let valid = verify_fraud_proof(&c, &c.params, &proof);
        println!("{}: {}", path.display(), if valid { "valid" } else { "invalid" });
        ok = valid;
    }
    for path in poms {
        let pom = wire::decode_pom(&read(path)?).map_err(wire_err(path))?;
        let valid = verify_symbol(&c, &c.params, &pom);
        println!("{}: {}", path.display(), if valid { "valid" } else { "invalid" });
        ok &= valid;
    }
    Ok(if ok { 0 } else { EXIT_VERIFY })
}

fn disperse(params: &Path, seed: u64, out: &Path, check: Option<CheckMode>, trials: u64) -> Result<u8, CliError> {
    let config: DisperseConfig = read_json(params)?;
    config.dispersal.validate()?;
    let design = assign_chunks(config.chunks, config.nodes, config.dispersal.lambda, seed)?;
    write(out, design.to_text())?;
    let estimate = check
        .map(|mode| {
            let mode = match mode {
                CheckMode::Exhaustive => VerifyMode::Exhaustive,
                CheckMode::MonteCarlo => VerifyMode::MonteCarlo { trials, seed },
            };
            verify_design(&design, config.dispersal.gamma, config.dispersal.eta, mode)
        })
        .transpose()?;
    let summary = json!({
        "chunks_per_node": design.k_per_node,
        "effective_lambda": design.effective_lambda(),
        "delivered_lambda": design.delivered_lambda(),
        "feasibility": feasibility(&config.dispersal),
        "failure_rate": estimate.map(|e| e.rate),
        "failure_std_error": estimate.map(|e| e.std_error),
        "subsets_checked": estimate.map(|e| e.subsets_checked),
    });
    print!("{}", pretty(&summary));
    Ok(0)
}

fn retrieve(commitment: &Path, chunks: &[PathBuf], out: &Path) -> Result<u8, CliError> {
    let c = read_commitment(commitment)?;
    let mut set = ChunkSet::new(c.clone());
    let mut rejected = 0usize;
    for path in collect_pom_files(chunks)? {
        let pom = wire::decode_pom(&read(&path)?).map_err(wire_err(&path))?;
        match set.insert(pom) {
            Ok(_) => {}
            Err(RetrievalError::InvalidUnit { .. }) => rejected += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let (outcome, code) = match reconstruct(&c, &c.params, &set) {
        Ok(ReconstructionResult::Block(block)) => {
            write(out, &block)?;
            (json!({ "outcome": "block", "bytes": block.len() }), 0)
        }
        Ok(ReconstructionResult::Fraud(proof)) => {
            let bytes = wire::encode_fraud_proof(&proof);
            write(out, &bytes)?;
            (
                json!({ "outcome": "fraud", "layer": proof.layer, "proof_bytes": bytes.len() }),
                EXIT_FRAUD,
            )
        }
        Ok(ReconstructionResult::Insufficient(known)) => {
            (json!({ "outcome": "insufficient", "known_fraction": known }), EXIT_INSUFFICIENT)
        }
        Err(RetrievalError::BadCode { layer, known_fraction }) => (
            json!({ "outcome": "bad_code", "layer": layer, "known_fraction": known_fraction }),
            EXIT_BAD_CODE,
        ),
        Err(e) => return Err(e.into()),
    };
    let mut summary = outcome;
    summary["chunks"] = json!(set.len());
    summary["rejected"] = json!(rejected);
    print!("{}", pretty(&summary));
    Ok(code)
}

fn simulate(scenario: &Path, out: &Path) -> Result<u8, CliError> {
    let config: ScenarioConfig = read_json(scenario)?;
    let trace = run_scenario(&config)?;
    create_dir(out)?;
    write(&out.join("trace.json"), trace.to_json())?;
    write(&out.join("counters.csv"), trace.counters_csv())?;
    let log: String = trace
        .chain
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect();
    write(&out.join("chain.log"), log)?;
    let mut proofs = Vec::new();
    for record in &trace.fraud_proofs {
        let proof = format!("fraud-{}.afrd", record.record);
        let commitment = format!("commitment-{}.acmt", record.record);
        write(&out.join(&proof), &record.proof)?;
        write(&out.join(&commitment), wire::encode_commitment(&record.commitment))?;
        proofs.push(json!({ "record": record.record, "round": record.round, "proof": proof, "commitment": commitment }));
    }
    let properties = check_properties(&config, &trace);
    let report = json!({
        "measurement": measure(&trace),
        "properties": properties,
        "fraud_proofs": proofs,
        "committed_rounds": trace.rounds.iter().filter(|r| r.committed.is_some()).count(),
        "rounds": trace.rounds.len(),
    });
    write(&out.join("report.json"), pretty(&report))?;
    print!("{}", pretty(&report));
    Ok(0)
}

fn metrics_cmd(params: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let config: MetricsConfig = read_json(params)?;
    config.tree.validate()?;
    if !(0.0..0.5).contains(&config.beta) {
        return Err(CliError::Parameter(format!("beta {} outside [0, 0.5)", config.beta)));
    }
    let dispersal = DispersalParams {
        gamma: 1.0 - 2.0 * config.beta,
        eta: config.eta,
        lambda: config
            .lambda
            .unwrap_or_else(|| metrics::tolerant_lambda(config.beta, config.eta)),
    };
    dispersal.validate()?;
    let report = metrics::report(config.block_size, config.nodes, &config.tree, &dispersal);
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("report.json"), pretty(&report))?;
        write(&dir.join("summary.csv"), report.summary_csv())?;
        write(&dir.join("baselines.csv"), report.baselines_csv())?;
    }
    print!("{}", pretty(&report));
    Ok(0)
}

fn incentives(params: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let p: IncentiveParams = read_json(params)?;
    p.validate()?;
    let report = json!({
        "all_cooperate": check_allc_equilibrium(&p),
        "all_offline": check_allo_equilibrium(&p),
    });
    if let Some(path) = out {
        write(path, pretty(&report))?;
    }
    print!("{}", pretty(&report));
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Commit {
            block,
            params,
            out,
            tree,
            tamper,
        } => commit(&block, &params, &out, &tree, tamper),
        Command::Pom { tree, index, all, out } => pom(&tree, &index, all, &out),
        Command::Verify {
            commitment,
            pom,
            fraud_proof,
        } => verify(&commitment, &pom, fraud_proof.as_deref()),
        Command::Disperse {
            params,
            design_seed,
            out,
            check,
            trials,
        } => disperse(&params, design_seed, &out, check, trials),
        Command::Retrieve { commitment, chunks, out } => retrieve(&commitment, &chunks, &out),
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::Metrics { params, out } => metrics_cmd(&params, out.as_deref()),
        Command::Incentives { params, out } => incentives(&params, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
