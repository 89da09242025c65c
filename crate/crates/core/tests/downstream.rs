mod common;

use std::collections::BTreeMap;

use mhg_core::downstream::{
    ecfp, ecfp_matrix, evaluate, fingerprint, fit_ridge, r2_score, radius_scan, random_projection,
    report_csv, split_dataset, FingerprintMatrix, SplitTag, DEFAULT_RIDGE_GRID,
};
use mhg_core::model::{ModelConfig, ModelParams};
use mhg_core::molgraph::{parse_corpus, parse_smiles};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn small_params(radius: usize, node_dim: usize) -> ModelParams {
    let c = ModelConfig {
        node_dim,
        radius,
        latent_dim: 2,
        gru_hidden: 2,
        gru_layers: 1,
        rule_emb: 2,
        n_rules: 2,
        dropout: 0.1,
    };
    ModelParams::init(c, 3).unwrap()
}

#[test]
fn fingerprint_widths_follow_radius() {
    let mols = vec![
        parse_smiles("CCO").unwrap(),
        parse_smiles("c1ccccc1").unwrap(),
    ];
    for (r, width) in [(3, 1024), (5, 1536), (6, 1792), (7, 2048), (8, 2304)] {
        let fp = fingerprint(&mols, &small_params(r, 256), "test").unwrap();
        assert_eq!((fp.len(), fp.dim), (2, width));
    }
}

#[test]
fn isomorphic_duplicates_share_rows() {
    let mols = vec![
        parse_smiles("OCC(N)c1ccccc1").unwrap(),
        parse_smiles("c1ccc(C(N)CO)cc1").unwrap(),
    ];
    let fp = fingerprint(&mols, &small_params(3, 8), "test").unwrap();
    for (a, b) in fp.rows[0].iter().zip(&fp.rows[1]) {
        assert!((a - b).abs() < 1e-9);
    }
    let e = ecfp_matrix(&mols);
    assert_eq!(e.rows[0], e.rows[1]);
}

#[test]
fn ecfp_examples() {
    let bits = |s: &str| ecfp(&parse_smiles(s).unwrap(), 3, 1024);
    let methane = bits("C");
    // one atom: one identifier per depth
    let set = methane.iter().filter(|&&b| b).count();
    assert!((1..=4).contains(&set));
    assert_ne!(bits("CC"), bits("CCO"));
    assert_eq!(bits("OCC"), bits("CCO"));
    assert_eq!(ecfp_matrix(&[parse_smiles("CCO").unwrap()]).dim, 1024);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn ecfp_is_permutation_invariant(m in common::arb_molecule(), seed in 0u64..1000) {
        let perm = common::permutation(m.atom_count(), seed);
        prop_assert_eq!(ecfp(&m, 3, 1024), ecfp(&m.permuted(&perm), 3, 1024));
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 5usize..300, seed in 0u64..50) {
        let s = split_dataset(n, (0.6, 0.2, 0.2), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), (n as f64 * 0.2).floor() as usize);
        prop_assert_eq!(s.clone(), split_dataset(n, (0.6, 0.2, 0.2), seed).unwrap());
        let tags = s.tags(n);
        prop_assert_eq!(tags.iter().filter(|&&t| t == SplitTag::Test).count(), s.test.len());
    }
}

fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn ridge_recovers_linear_targets() {
    let x = random_rows(60, 5, 1);
    let y: Vec<f64> = x
        .iter()
        .map(|r| 2.0 * r[0] - r[3] + 0.5 * r[4] + 7.0)
        .collect();
    let m = fit_ridge(&x[..40], &y[..40], &x[40..], &y[40..], &[1e-10]).unwrap();
    assert!(r2_score(&y[..40], &m.predict(&x[..40])).unwrap() > 1.0 - 1e-9);
    assert!(r2_score(&y[40..], &m.predict(&x[40..])).unwrap() > 1.0 - 1e-9);
}

#[test]
fn ridge_on_noise_does_not_generalize() {
    let x = random_rows(200, 10, 2);
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let y: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = fit_ridge(
        &x[..120],
        &y[..120],
        &x[120..160],
        &y[120..160],
        &DEFAULT_RIDGE_GRID,
    )
    .unwrap();
    let test = r2_score(&y[160..], &m.predict(&x[160..])).unwrap();
    assert!(test < 0.1, "{test}");
}

#[test]
fn duplicate_and_constant_columns_are_dropped() {
    let x = random_rows(30, 3, 4);
    let y: Vec<f64> = x.iter().map(|r| r[0] + r[1] * r[2]).collect();
    let widened: Vec<Vec<f64>> = x
        .iter()
        .map(|r| vec![r[0], r[1], 5.0, r[0], r[2], r[1]])
        .collect();
    let a = fit_ridge(&x[..20], &y[..20], &x[20..], &y[20..], &DEFAULT_RIDGE_GRID).unwrap();
    let b = fit_ridge(
        &widened[..20],
        &y[..20],
        &widened[20..],
        &y[20..],
        &DEFAULT_RIDGE_GRID,
    )
    .unwrap();
    assert_eq!(b.kept, vec![0, 1, 4]);
    assert_eq!(a.predict(&x), b.predict(&widened));
    let dual = fit_ridge(&x[..2], &y[..2], &x[20..], &y[20..], &[0.1]).unwrap();
    assert!(dual.predict(&x).iter().all(|v| v.is_finite()));
}

#[test]
fn fingerprint_csv_round_trips() {
    let mols = vec![parse_smiles("CCO").unwrap(), parse_smiles("CN").unwrap()];
    let fp = fingerprint(&mols, &small_params(2, 3), "m").unwrap();
    let back = FingerprintMatrix::from_csv(&fp.to_csv(), "m").unwrap();
    assert_eq!(back, fp);
    assert!(FingerprintMatrix::from_csv("id,f1\n0,1\n", "m").is_err());
    assert!(FingerprintMatrix::from_csv("id,f0\n1,1\n", "m").is_err());
}

#[test]
fn scan_selects_on_validation_only() {
    let records = parse_corpus(common::CORPUS_MW).unwrap();
    let mols: Vec<_> = records.iter().map(|r| r.molecule.clone()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.value.unwrap()).collect();
    let split = split_dataset(mols.len(), (0.6, 0.2, 0.2), 0).unwrap();
    let per_radius: BTreeMap<usize, FingerprintMatrix> = [1, 2, 3]
        .into_iter()
        .map(|r| (r, fingerprint(&mols, &small_params(r, 6), "m").unwrap()))
        .collect();
    let scan = radius_scan(&per_radius, &y, &split, &DEFAULT_RIDGE_GRID).unwrap();
    let best = scan
        .val_r2
        .values()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(scan.val_r2[&scan.chosen], best);
    // test labels never influence the choice
    let mut y_poisoned = y.clone();
    for &i in &split.test {
        y_poisoned[i] = if i % 2 == 0 { 1e6 } else { -1e6 };
    }
    let again = radius_scan(&per_radius, &y_poisoned, &split, &DEFAULT_RIDGE_GRID).unwrap();
    assert_eq!(again.chosen, scan.chosen);
    assert_eq!(again.val_r2, scan.val_r2);

    let e = ecfp_matrix(&mols);
    let rows = evaluate("ecfp6", None, &e, &y, &split, &DEFAULT_RIDGE_GRID).unwrap();
    assert_eq!(rows.len(), 3);
    let csv = report_csv(&rows);
    assert!(csv.starts_with("method,radius,split,r2\necfp6,,train,"));
    let rp = random_projection(&e, 64, 1);
    assert_eq!((rp.len(), rp.dim), (mols.len(), 64));
    assert_eq!(rp, random_projection(&e, 64, 1));
}
