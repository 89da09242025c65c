use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mhg_autodiff::rng::{keyed_rng, standard_normal};
use mhg_core::downstream::{
    ecfp_matrix, evaluate, radius_scan, random_projection, report_csv, split_dataset,
    FingerprintMatrix, ReportRow, SplitTag, DEFAULT_RIDGE_GRID,
};
use mhg_core::grammar::{
    derive, extract_grammar, grammar_hash, load_grammar, parse_molecule, write_grammar, Grammar,
};
use mhg_core::hypergraph::molecule_code;
use mhg_core::model::{
    decode_generate_batch, read_checkpoint, write_checkpoint, DecodeMode, DecodeOutcome,
    ModelParams,
};
use mhg_core::molgraph::{read_corpus, write_smiles, CorpusRecord, Molecule};
use mhg_core::training::{train, TrainingConfig};

/// Molecular hypergraph grammar autoencoder toolkit.
#[derive(Parser)]
#[command(name = "mhg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce a grammar from a SMILES corpus.
    ExtractGrammar {
        /// Corpus: one SMILES per line, optionally followed by a tab and a value.
        #[arg(long = "in")]
        input: PathBuf,
        /// Grammar file to write (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        grammar: PathBuf,
        /// Training config (key = value lines); defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch report CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write encoder fingerprints h_G for a corpus.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Fingerprint CSV with header id,f0,..
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode latent vectors into molecules.
    Decode(DecodeArgs),
    /// Parse every corpus molecule under a grammar and derive it back.
    Roundtrip {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Ridge-regression evaluation of fingerprints against ECFP6 and a
    /// random-projection baseline.
    Eval {
        #[arg(long)]
        fp: PathBuf,
        /// SMILES<TAB>value file aligned row by row with the fingerprints.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Seed of the random-projection baseline.
        #[arg(long, default_value_t = 0)]
        baseline_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the encoder radius by validation R² and report its test R².
    RadiusScan {
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<usize>,
        /// Fingerprint path pattern; `{r}` is replaced by the radius.
        #[arg(long)]
        fp_pattern: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    grammar: PathBuf,
    /// Latent vectors, one per line, separated by commas or whitespace.
    #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
    z_file: Option<PathBuf>,
    /// Draw this many latents from N(0, I).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample from the masked softmax at this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// One SMILES per line; truncated decodes are written as `# truncated`.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let ctx = path.display().to_string();
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(data(&ctx))?;
    tmp.write_all(bytes).map_err(data(&ctx))?;
    tmp.flush().map_err(data(&ctx))?;
    tmp.persist(path)
        .map_err(|e| CliError::Data(format!("{ctx}: {}", e.error)))?;
    Ok(())
}

fn corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_corpus(path).map_err(data(path.display()))
}

fn molecules(records: &[CorpusRecord]) -> Vec<Molecule> {
    records.iter().map(|r| r.molecule.clone()).collect()
}

fn grammar(path: &Path) -> Result<Grammar> {
    load_grammar(path).map_err(data(path.display()))
}

fn checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    let bytes = std::fs::read(path).map_err(data(path.display()))?;
    read_checkpoint(&bytes).map_err(data(path.display()))
}

fn labels(path: &Path) -> Result<(Vec<Molecule>, Vec<f64>)> {
    let records = corpus(path)?;
    let mut y = Vec::with_capacity(records.len());
    for r in &records {
        y.push(r.value.ok_or_else(|| {
            CliError::Data(format!("{}: line {} has no value", path.display(), r.line))
        })?);
    }
    Ok((molecules(&records), y))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExtractGrammar { input, out } => {
            let mols = molecules(&corpus(&input)?);
            let (g, _) = extract_grammar(&mols).map_err(data("grammar extraction"))?;
            write_atomic(&out, write_grammar(&g).as_bytes())?;
            println!(
                "rules={} start_rules={} molecules={}",
                g.len(),
                g.start_rule_ids().len(),
                mols.len()
            );
        }
        Command::Train {
            corpus: corpus_path,
            grammar: grammar_path,
            config,
            seed,
            out,
            report,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(data(p.display()))?;
                    TrainingConfig::from_text(&text).map_err(|e| CliError::Usage(e.to_string()))?
                }
                None => TrainingConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            info!("training seed {}", cfg.seed);
            let g = grammar(&grammar_path)?;
            let mols = molecules(&corpus(&corpus_path)?);
            let (params, rep) = train(&mols, &g, &cfg).map_err(data("training"))?;
            write_atomic(&out, &write_checkpoint(&params, &grammar_hash(&g)))?;
            if let Some(r) = report {
                write_atomic(&r, rep.to_csv().as_bytes())?;
            }
            let last = rep.epochs.last();
            println!(
                "epochs={} steps={} final_loss={}",
                rep.epochs.len(),
                rep.steps,
                last.map_or(f64::NAN, |e| e.loss)
            );
        }
        Command::Encode { ckpt, input, out } => {
            let (params, _) = checkpoint(&ckpt)?;
            let mols = molecules(&corpus(&input)?);
            let fp = mhg_core::downstream::fingerprint(&mols, &params, &ckpt.display().to_string())
                .map_err(data("encoding"))?;
            write_atomic(&out, fp.to_csv().as_bytes())?;
            println!("rows={} dim={}", fp.len(), fp.dim);
        }
        Command::Decode(args) => decode(args)?,
        Command::Roundtrip { grammar: gp, input } => {
            let g = grammar(&gp)?;
            let records = corpus(&input)?;
            let mut ok = 0;
            for (i, r) in records.iter().enumerate() {
                let same = parse_molecule(&r.molecule, &g, i)
                    .and_then(|seq| derive(&seq, &g))
                    .is_ok_and(|m| molecule_code(&m) == molecule_code(&r.molecule));
                if same {
                    ok += 1;
                } else {
                    eprintln!("line {}: {} does not round-trip", r.line, r.smiles);
                }
            }
            let n = records.len();
            println!(
                "roundtrip={ok}/{n} ({:.2}%)",
                100.0 * ok as f64 / n.max(1) as f64
            );
            if ok != n {
                return Err(CliError::Data(format!(
                    "{} molecules failed to round-trip",
                    n - ok
                )));
            }
        }
        Command::Eval {
            fp,
            labels: lp,
            split_seed,
            baseline_seed,
            out,
        } => {
            let text = std::fs::read_to_string(&fp).map_err(data(fp.display()))?;
            let x = FingerprintMatrix::from_csv(&text, "mhg-gnn").map_err(data(fp.display()))?;
            let (mols, y) = labels(&lp)?;
            if x.len() != y.len() {
                return Err(CliError::Data(format!(
                    "{} fingerprint rows but {} labels",
                    x.len(),
                    y.len()
                )));
            }
            let split =
                split_dataset(y.len(), (0.6, 0.2, 0.2), split_seed).map_err(data("split"))?;
            let ecfp = ecfp_matrix(&mols);
            let proj = random_projection(&ecfp, x.dim, baseline_seed);
            let mut rows = Vec::new();
            for (name, m) in [
                ("mhg-gnn", &x),
                ("ecfp6", &ecfp),
                ("random-projection", &proj),
            ] {
                rows.extend(
                    evaluate(name, None, m, &y, &split, &DEFAULT_RIDGE_GRID).map_err(data(name))?,
                );
            }
            write_atomic(&out, report_csv(&rows).as_bytes())?;
            for r in rows.iter().filter(|r| r.split == SplitTag::Test) {
                println!("{} test_r2={:.4}", r.method, r.r2);
            }
        }
        Command::RadiusScan {
            radii,
            fp_pattern,
            labels: lp,
            split_seed,
            out,
        } => {
            if !fp_pattern.contains("{r}") {
                return Err(CliError::Usage("--fp-pattern must contain {r}".into()));
            }
            let (_, y) = labels(&lp)?;
            let mut per_radius = BTreeMap::new();
            for r in radii {
                let path = fp_pattern.replace("{r}", &r.to_string());
                let text = std::fs::read_to_string(&path).map_err(data(&path))?;
                let x = FingerprintMatrix::from_csv(&text, path.clone()).map_err(data(&path))?;
                if x.len() != y.len() {
                    return Err(CliError::Data(format!(
                        "{path}: {} rows but {} labels",
                        x.len(),
                        y.len()
                    )));
                }
                per_radius.insert(r, x);
            }
            let split =
                split_dataset(y.len(), (0.6, 0.2, 0.2), split_seed).map_err(data("split"))?;
            let scan = radius_scan(&per_radius, &y, &split, &DEFAULT_RIDGE_GRID)
                .map_err(data("radius scan"))?;
            let mut rows: Vec<ReportRow> = scan
                .val_r2
                .iter()
                .map(|(&r, &v)| ReportRow {
                    method: "mhg-gnn".into(),
                    radius: Some(r),
                    split: SplitTag::Val,
                    r2: v,
                })
                .collect();
            rows.push(ReportRow {
                method: "mhg-gnn (selected)".into(),
                radius: Some(scan.chosen),
                split: SplitTag::Test,
                r2: scan.test_r2,
            });
            write_atomic(&out, report_csv(&rows).as_bytes())?;
            println!(
                "selected r={} val_r2={:.4} test_r2={:.4}",
                scan.chosen, scan.val_r2[&scan.chosen], scan.test_r2
            );
        }
    }
    Ok(())
}

fn parse_latents(text: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut zs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let z = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Data(format!("z-file line {}: {e}", n + 1)))?;
        if z.len() != dim {
            return Err(CliError::Data(format!(
                "z-file line {}: expected {dim} values, got {}",
                n + 1,
                z.len()
            )));
        }
        zs.push(z);
    }
    Ok(zs)
}

fn decode(args: DecodeArgs) -> Result<()> {
    let (params, hash) = checkpoint(&args.ckpt)?;
    let g = grammar(&args.grammar)?;
    if hash != grammar_hash(&g) || params.config.n_rules != g.len() {
        return Err(CliError::Data(
            "checkpoint was trained against a different grammar".into(),
        ));
    }
    if args.max_len == 0 {
        return Err(CliError::Usage("--max-len must be at least 1".into()));
    }
    let dim = params.config.latent_dim;
    let zs = match (&args.z_file, args.sample) {
        (Some(p), _) => {
            parse_latents(&std::fs::read_to_string(p).map_err(data(p.display()))?, dim)?
        }
        (None, Some(n)) => {
            info!("latent seed {}", args.seed);
            let t = standard_normal(&mut keyed_rng(args.seed, 0x2a7e, 0), &[n, dim]);
            (0..n).map(|i| t.row(i).to_vec()).collect()
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --z-file or --sample is required".into(),
            ))
        }
    };
    let mode = match args.temperature {
        Some(t) if t > 0.0 => DecodeMode::Sample { temperature: t },
        Some(_) => return Err(CliError::Usage("--temperature must be positive".into())),
        None => DecodeMode::Greedy,
    };
    let mut out = String::new();
    let (mut valid, mut truncated, mut invalid) = (0, 0, 0);
    for chunk in zs.chunks(256) {
        let outcomes = decode_generate_batch(chunk, &g, &params, mode, args.max_len, args.seed)
            .map_err(data("decoding"))?;
        for o in outcomes {
            match o {
                DecodeOutcome::Complete { molecule, .. } => {
                    if Molecule::new(molecule.atoms().to_vec(), molecule.bonds().to_vec()).is_ok() {
                        valid += 1;
                    } else {
                        invalid += 1;
                    }
                    out.push_str(&write_smiles(&molecule));
                }
                DecodeOutcome::Truncated { rules, .. } => {
                    truncated += 1;
                    out.push_str(&format!("# truncated after {} rules", rules.len()));
                }
            }
            out.push('\n');
        }
    }
    write_atomic(&args.out, out.as_bytes())?;
    println!("valid={valid} truncated={truncated}");
    if invalid > 0 {
        return Err(CliError::Data(format!(
            "{invalid} decoded molecules failed validation"
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
