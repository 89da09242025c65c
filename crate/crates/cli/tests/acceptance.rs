//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mhg_autodiff::rng::{keyed_rng, standard_normal};
use mhg_autodiff::{grad_check, Tensor};
use mhg_core::downstream::{
    ecfp_matrix, evaluate, fingerprint, radius_scan, random_projection, split_dataset, SplitTag,
    DEFAULT_RIDGE_GRID,
};
use mhg_core::grammar::{
    applicable_rules, apply_rule, derive, extract_grammar, parse_molecule, DerivationState, Grammar,
};
use mhg_core::hypergraph::molecule_code;
use mhg_core::model::{
    decode_generate_batch, gin_encode_batch, loss, loss_and_gradients, vae_head, DecodeMode,
    DecodeOutcome, Mode, ModelConfig, ModelParams,
};
use mhg_core::molgraph::{parse_corpus, parse_smiles, write_smiles, Molecule};
use mhg_core::training::{teacher_forced_accuracy, train, TrainReport, TrainingConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
}

fn read_labeled(name: &str) -> (Vec<Molecule>, Vec<f64>) {
    let text = std::fs::read_to_string(data_path(name)).unwrap();
    let records = parse_corpus(&text).unwrap();
    let y = records
        .iter()
        .map(|r| r.value.unwrap_or(f64::NAN))
        .collect();
    (records.into_iter().map(|r| r.molecule).collect(), y)
}

fn toy_config(radius: usize, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        node_dim: 32,
        radius,
        latent_dim: 32,
        gru_hidden: 64,
        gru_layers: 3,
        rule_emb: 32,
        epochs,
        seed: 1,
        ..TrainingConfig::default()
    }
}

struct Toy {
    mols: Vec<Molecule>,
    grammar: Grammar,
    params: ModelParams,
    report: TrainReport,
    train_time: Duration,
}

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn validity(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let z = standard_normal(
        &mut keyed_rng(7, 0xacce, 1),
        &[1000, toy.params.config.latent_dim],
    );
    let zs: Vec<Vec<f64>> = (0..1000).map(|i| z.row(i).to_vec()).collect();
    let outs = decode_generate_batch(&zs, &toy.grammar, &toy.params, DecodeMode::Greedy, 200, 0)
        .map_err(|e| e.to_string())?;
    let (mut valid, mut invalid, mut truncated) = (0, 0, 0);
    for o in &outs {
        match o {
            DecodeOutcome::Complete { molecule, .. } => {
                let rebuilt = Molecule::new(molecule.atoms().to_vec(), molecule.bonds().to_vec());
                let reparsed = parse_smiles(&write_smiles(molecule));
                let same = matches!((&rebuilt, &reparsed), (Ok(a), Ok(b)) if molecule_code(a) == molecule_code(b));
                if same {
                    valid += 1;
                } else {
                    invalid += 1;
                }
            }
            DecodeOutcome::Truncated { .. } => truncated += 1,
        }
    }
    let t = start.elapsed();
    check(
        invalid == 0 && truncated <= 50 && t < Duration::from_secs(120),
        format!("valid={valid} invalid={invalid} truncated={truncated} of 1000 at max_len 200 in {t:.1?}"),
    )
}

fn round_trip(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let mut ok = 0;
    for (i, m) in toy.mols.iter().enumerate() {
        let back = parse_molecule(m, &toy.grammar, i).and_then(|s| derive(&s, &toy.grammar));
        if back.is_ok_and(|b| molecule_code(&b) == molecule_code(m)) {
            ok += 1;
        }
    }
    let t = start.elapsed();
    check(
        ok == toy.mols.len() && t < Duration::from_secs(30),
        format!(
            "{ok}/{} molecules re-derived isomorphically in {t:.1?}",
            toy.mols.len()
        ),
    )
}

fn dimensions() -> Outcome {
    let m = [parse_smiles("c1ccccc1O").unwrap()];
    let mut widths = Vec::new();
    for r in [3, 5, 6, 7, 8] {
        let c = ModelConfig {
            node_dim: 256,
            radius: r,
            latent_dim: 2,
            gru_hidden: 2,
            gru_layers: 1,
            rule_emb: 2,
            n_rules: 2,
            dropout: 0.1,
        };
        let p = ModelParams::init(c, 0).map_err(|e| e.to_string())?;
        widths.push(fingerprint(&m, &p, "r").map_err(|e| e.to_string())?.dim);
    }
    check(
        widths == [1024, 1536, 1792, 2048, 2304],
        format!("widths {widths:?}"),
    )
}

fn mask_oracle(toy: &Toy) -> Outcome {
    let g = &toy.grammar;
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let (mut states, mut mismatches) = (0, 0);
    while states < 200 {
        let mut s = DerivationState::initial();
        let stop = rng.random_range(0..10);
        for _ in 0..stop {
            let allowed: Vec<usize> = (0..g.len())
                .filter(|&i| g.completion_mask(&s, 60)[i])
                .collect();
            let Some(&id) = allowed.choose(&mut rng) else {
                break;
            };
            s = apply_rule(&s, &g.rules()[id]).unwrap();
        }
        let mask = applicable_rules(&s, g);
        for (i, r) in g.rules().iter().enumerate() {
            if mask[i] != apply_rule(&s, r).is_ok() {
                mismatches += 1;
            }
        }
        states += 1;
    }
    check(
        mismatches == 0,
        format!(
            "{states} states x {} rules, {mismatches} discrepancies",
            g.len()
        ),
    )
}

fn gradient_integrity() -> Outcome {
    let ms: Vec<Molecule> = ["CCO", "c1ccccc1N", "CC(=O)O", "C1CCNC1"]
        .iter()
        .map(|s| parse_smiles(s).unwrap())
        .collect();
    let (g, seqs) = extract_grammar(&ms).map_err(|e| e.to_string())?;
    let batch: Vec<_> = ms.iter().zip(&seqs).collect();
    let c = ModelConfig {
        node_dim: 4,
        radius: 2,
        latent_dim: 3,
        gru_hidden: 4,
        gru_layers: 2,
        rule_emb: 3,
        n_rules: g.len(),
        dropout: 0.1,
    };
    let mut p = ModelParams::init(c, 5).map_err(|e| e.to_string())?;
    p.get_mut("vae.eta_mu").unwrap().data_mut()[0] = 0.7;
    p.get_mut("vae.eta_sigma").unwrap().data_mut()[0] = -0.4;
    let base = p.clone();
    let f = |ts: &[Tensor]| {
        let mut q = base.clone();
        q.tensors_mut().clone_from_slice(ts);
        let (l, grads) = loss_and_gradients(&batch, &g, &q, 0.5, Mode::Eval).expect("loss");
        Ok((l.total, grads))
    };
    let err = grad_check(f, p.tensors()).map_err(|e| e.to_string())?;
    check(
        err < 1e-4,
        format!(
            "max relative error {err:.2e} over {} parameters",
            p.parameter_count()
        ),
    )
}

fn initialization(toy: &Toy) -> Outcome {
    let fresh = ModelParams::init(toy.params.config.clone(), 3).map_err(|e| e.to_string())?;
    let refs: Vec<&Molecule> = toy.mols.iter().take(50).collect();
    let hs = gin_encode_batch(&refs, &fresh).map_err(|e| e.to_string())?;
    let noise = vec![0.3; fresh.config.latent_dim];
    let mut nonzero = 0;
    for h in &hs {
        let out = vae_head(h, &fresh, &noise).map_err(|e| e.to_string())?;
        nonzero += out
            .mu
            .iter()
            .chain(&out.logvar)
            .filter(|&&v| v != 0.0)
            .count();
    }
    let seqs: Vec<_> = refs
        .iter()
        .enumerate()
        .map(|(i, m)| parse_molecule(m, &toy.grammar, i).unwrap())
        .collect();
    let batch: Vec<_> = refs.iter().copied().zip(&seqs).collect();
    let kl = loss(
        &batch,
        &toy.grammar,
        &fresh,
        0.01,
        Mode::Train { seed: 1, step: 0 },
    )
    .map_err(|e| e.to_string())?
    .kl;
    check(
        nonzero == 0 && kl == 0.0,
        format!("KL = {kl}, nonzero mu/logvar entries = {nonzero}"),
    )
}

fn training_sanity(toy: &Toy) -> Outcome {
    let first = toy.report.epochs[0].loss;
    let last = toy.report.epochs.last().unwrap().loss;
    let start = Instant::now();
    let single = vec![toy.mols[17].clone()];
    let cfg = TrainingConfig {
        beta: 0.0,
        epochs: 100,
        ..toy_config(3, 100)
    };
    let (p, _) = train(&single, &toy.grammar, &cfg).map_err(|e| e.to_string())?;
    let acc = teacher_forced_accuracy(&single, &toy.grammar, &p, 1).map_err(|e| e.to_string())?;
    let total = toy.train_time + start.elapsed();
    check(
        last <= 0.5 * first && acc == 1.0 && total < Duration::from_secs(600),
        format!(
            "loss {first:.3} -> {last:.3} ({:.1}% of epoch 1); memorization accuracy {acc}; {total:.1?}",
            100.0 * last / first
        ),
    )
}

fn test_r2(rows: &[mhg_core::downstream::ReportRow]) -> f64 {
    rows.iter().find(|r| r.split == SplitTag::Test).unwrap().r2
}

fn downstream(toy: &Toy) -> Outcome {
    let (mols, mw) = read_labeled("corpus_mw.tsv");
    let (_, rings) = read_labeled("corpus_rings.tsv");
    let split = split_dataset(mols.len(), (0.6, 0.2, 0.2), 0).map_err(|e| e.to_string())?;
    let fp = fingerprint(&mols, &toy.params, "toy").map_err(|e| e.to_string())?;
    let proj = random_projection(&ecfp_matrix(&mols), fp.dim, 0);
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, y) in [("mw", &mw), ("rings", &rings)] {
        let ours = test_r2(
            &evaluate("mhg", Some(3), &fp, y, &split, &DEFAULT_RIDGE_GRID)
                .map_err(|e| e.to_string())?,
        );
        let base = test_r2(
            &evaluate("rp", None, &proj, y, &split, &DEFAULT_RIDGE_GRID)
                .map_err(|e| e.to_string())?,
        );
        ok &= ours > base && (name != "mw" || ours > 0.5);
        detail.push(format!(
            "{name}: test R2 {ours:.3} vs random projection {base:.3}"
        ));
    }

    let mut per_radius = BTreeMap::new();
    for r in [3, 5, 6, 7, 8] {
        let (p, _) =
            train(&toy.mols, &toy.grammar, &toy_config(r, 10)).map_err(|e| e.to_string())?;
        per_radius.insert(
            r,
            fingerprint(&mols, &p, "scan").map_err(|e| e.to_string())?,
        );
    }
    let scan =
        radius_scan(&per_radius, &mw, &split, &DEFAULT_RIDGE_GRID).map_err(|e| e.to_string())?;
    let mut poisoned = mw.clone();
    for &i in &split.test {
        poisoned[i] = if i % 2 == 0 { 1e9 } else { -1e9 };
    }
    let again = radius_scan(&per_radius, &poisoned, &split, &DEFAULT_RIDGE_GRID)
        .map_err(|e| e.to_string())?;
    let blind = again.chosen == scan.chosen && again.val_r2 == scan.val_r2;
    ok &= blind;
    detail.push(format!(
        "selected r={} (test R2 {:.3}); choice unchanged with scrambled test labels: {blind}",
        scan.chosen, scan.test_r2
    ));
    check(ok, detail.join("; "))
}

fn invariance(toy: &Toy) -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for m in toy.mols.iter().take(20) {
        let base = gin_encode_batch(&[m], &toy.params)
            .map_err(|e| e.to_string())?
            .remove(0);
        let perms: Vec<Molecule> = (0..100)
            .map(|_| {
                let mut p: Vec<usize> = (0..m.atom_count()).collect();
                p.shuffle(&mut rng);
                m.permuted(&p)
            })
            .collect();
        let refs: Vec<&Molecule> = perms.iter().collect();
        for h in gin_encode_batch(&refs, &toy.params).map_err(|e| e.to_string())? {
            for (a, b) in h.iter().zip(&base) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("max |delta h_G| = {worst:.2e} over 20 molecules x 100 permutations"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mhg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn determinism() -> Outcome {
    let corpus = data_path("corpus.smi");
    let mw = data_path("corpus_mw.tsv");
    let (corpus, mw) = (corpus.to_str().unwrap(), mw.to_str().unwrap());
    let config = "node_dim = 8\nradius = 2\nlatent_dim = 4\ngru_hidden = 8\ngru_layers = 2\nrule_emb = 4\nepochs = 2\nseed = 3\n";
    let steps: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        (
            "extract-grammar",
            vec!["extract-grammar", "--in", corpus, "--out", "g.json"],
            vec!["g.json"],
        ),
        (
            "roundtrip",
            vec!["roundtrip", "--grammar", "g.json", "--in", corpus],
            vec![],
        ),
        (
            "train",
            vec![
                "train",
                "--corpus",
                corpus,
                "--grammar",
                "g.json",
                "--config",
                "cfg.txt",
                "--out",
                "m.ckpt",
                "--report",
                "r.csv",
            ],
            vec!["m.ckpt", "r.csv"],
        ),
        (
            "encode",
            vec!["encode", "--ckpt", "m.ckpt", "--in", mw, "--out", "fp2.csv"],
            vec!["fp2.csv"],
        ),
        (
            "decode",
            vec![
                "decode",
                "--ckpt",
                "m.ckpt",
                "--grammar",
                "g.json",
                "--sample",
                "200",
                "--temperature",
                "1.0",
                "--seed",
                "4",
                "--out",
                "d.smi",
            ],
            vec!["d.smi"],
        ),
        (
            "eval",
            vec![
                "eval",
                "--fp",
                "fp2.csv",
                "--labels",
                mw,
                "--split-seed",
                "1",
                "--out",
                "e.csv",
            ],
            vec!["e.csv"],
        ),
        (
            "radius-scan",
            vec![
                "radius-scan",
                "--radii",
                "2",
                "--fp-pattern",
                "fp{r}.csv",
                "--labels",
                mw,
                "--out",
                "s.csv",
            ],
            vec!["s.csv"],
        ),
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        std::fs::write(d.path().join("cfg.txt"), config).unwrap();
    }
    let mut checked = Vec::new();
    for (name, args, outputs) in &steps {
        for d in &dirs {
            run_cli(d.path(), args)?;
        }
        for f in outputs {
            let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{name}: {f} differs between runs"));
            }
        }
        checked.push(*name);
    }
    Ok(format!("byte-identical outputs for {}", checked.join(", ")))
}

fn main() {
    let total = Instant::now();
    let mols: Vec<Molecule> = read_labeled("corpus.smi").0;
    let (grammar, _) = extract_grammar(&mols).expect("grammar");
    let start = Instant::now();
    let (params, report) = train(&mols, &grammar, &toy_config(3, 200)).expect("toy training");
    let toy = Toy {
        mols,
        grammar,
        params,
        report,
        train_time: start.elapsed(),
    };

    let criteria: Vec<Criterion> = vec![
        ("validity guarantee", Box::new(|| validity(&toy))),
        ("round-trip", Box::new(|| round_trip(&toy))),
        ("dimensional claims", Box::new(dimensions)),
        ("mask-oracle equivalence", Box::new(|| mask_oracle(&toy))),
        ("gradient integrity", Box::new(gradient_integrity)),
        ("initialization claims", Box::new(|| initialization(&toy))),
        ("training sanity", Box::new(|| training_sanity(&toy))),
        ("downstream methodology", Box::new(|| downstream(&toy))),
        ("encoder invariance", Box::new(|| invariance(&toy))),
        ("CLI determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "[{tag}] {:>2}. {name}: {detail} ({:.1?})",
            i + 1,
            started.elapsed()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        criteria.len() - failed,
        total.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
