use super::*;
use crate::repo::is_missing;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn table(id: &str, n_cols: usize, n_rows: usize) -> Table {
    let names = (0..n_cols).map(|c| format!("c{c}")).collect();
    let rows = (0..n_rows)
        .map(|r| (0..n_cols).map(|c| format!("v{c}_{r} street")).collect())
        .collect();
    Table::new(id, names, rows).unwrap()
}

fn exact() -> FabricationConfig {
    FabricationConfig {
        p_fuzzy_pair: 0.0,
        ..FabricationConfig::default()
    }
}

fn shared_count(p: &FabricatedPair) -> usize {
    p.n_positive()
}

#[test]
fn label_counts_follow_the_shared_columns() {
    let t = table("t", 3, 20);
    let mut seen_example = false;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = fabricate_pair(&t, &exact(), &mut rng).unwrap().unwrap();
        let (nl, nr) = (p.left.n_columns(), p.right.n_columns());
        assert_eq!(p.labels.len(), nl * nr);
        let s = shared_count(&p);
        assert!((1..=3).contains(&s));
        assert_eq!(p.labels.len() - s, nl * nr - s);
        if s == 1 && nl == 2 && nr == 2 {
            assert_eq!(p.labels.len() - s, 3);
            seen_example = true;
        }
    }
    assert!(seen_example);
}

#[test]
fn partition_is_exact_and_positives_match_names() {
    let t = table("t", 6, 30);
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = fabricate_pair(&t, &FabricationConfig::default(), &mut rng).unwrap().unwrap();
        let all: BTreeSet<(usize, usize)> = p.labels.iter().map(|l| (l.0, l.1)).collect();
        assert_eq!(all.len(), p.labels.len());
        for (i, j, label) in &p.labels {
            let same = p.left.column_names[*i] == p.right.column_names[*j];
            assert_eq!(same, *label == Label::Positive);
        }
        assert!(shared_count(&p) <= 4);
    }
}

#[test]
fn exact_pairs_share_the_overlap_rows() {
    let t = table("t", 4, 40);
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = fabricate_pair(&t, &exact(), &mut rng).unwrap().unwrap();
        assert!(!p.fuzzy);
        assert!(p.overlap_rows >= 4 && p.overlap_rows <= 28);
        for (i, j, label) in &p.labels {
            if *label != Label::Positive {
                continue;
            }
            let l: BTreeSet<&str> = p.left.column_cells(*i).collect();
            let r: BTreeSet<&str> = p.right.column_cells(*j).collect();
            assert!(l.intersection(&r).count() >= p.overlap_rows);
        }
        assert_eq!(p.left.n_rows() + p.right.n_rows(), 40 + p.overlap_rows);
    }
}

#[test]
fn positives_intersect_despite_sparse_columns() {
    let mut rows = vec![vec!["".to_owned(), "a".to_owned()]; 50];
    rows[49][0] = "lonely".into();
    let t = Table::new("sparse", vec!["x".into(), "y".into()], rows).unwrap();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = fabricate_pair(&t, &exact(), &mut rng).unwrap().unwrap();
        for (i, j, label) in &p.labels {
            if *label == Label::Positive {
                let l: BTreeSet<&str> = p.left.column_cells(*i).filter(|c| !is_missing(c)).collect();
                let r: BTreeSet<&str> = p.right.column_cells(*j).filter(|c| !is_missing(c)).collect();
                assert!(l.intersection(&r).next().is_some(), "seed {seed}");
            }
        }
    }
}

#[test]
fn fuzzy_pairs_perturb_only_right_shared_cells() {
    let cfg = FabricationConfig {
        p_fuzzy_pair: 1.0,
        p_perturb_value: 1.0,
        ..FabricationConfig::default()
    };
    let t = table("t", 3, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = fabricate_pair(&t, &cfg, &mut rng).unwrap().unwrap();
    assert!(p.fuzzy);
    let originals: BTreeSet<&str> = t.rows.iter().flatten().map(String::as_str).collect();
    for row in &p.left.rows {
        assert!(row.iter().all(|c| originals.contains(c.as_str())));
    }
    for (i, j, label) in &p.labels {
        if *label == Label::Positive {
            // a typo can occasionally land on another row's value
            let kept = p.right.column_cells(*j).filter(|c| originals.contains(c)).count();
            assert!(kept * 10 <= p.right.n_rows(), "column {i}: {kept} unchanged");
        }
    }
}

#[test]
fn small_tables_are_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(fabricate_pair(&table("t", 3, 1), &exact(), &mut rng).unwrap().is_none());
    let empty = Table::new("e", vec!["a".into()], vec![vec!["".into()], vec!["null".into()]]).unwrap();
    assert!(fabricate_pair(&empty, &exact(), &mut rng).unwrap().is_none());
}

#[test]
fn config_validation() {
    let bad = [
        FabricationConfig { p_fuzzy_pair: 1.5, ..Default::default() },
        FabricationConfig { shared_cols_range: (3, 2), ..Default::default() },
        FabricationConfig { overlap_fraction_range: (0.5, 0.2), ..Default::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
}

fn repo(n_tables: usize) -> Repository {
    Repository::from_tables((0..n_tables).map(|i| table(&format!("t{i}"), 2 + i % 4, 10 + i)).collect())
}

#[test]
fn training_set_shape() {
    let r = repo(11);
    let set = generate_training_set(&r, &FabricationConfig::default()).unwrap();
    assert_eq!(set.repository.tables.len(), 22);
    assert!(set.n_negative() >= set.n_positive());
    let w = set.positive_weight();
    assert!((w - set.n_negative() as f64 / set.n_positive() as f64).abs() < 1e-15);
    for e in &set.examples {
        let (a, b) = (&set.repository.columns[e.node_a], &set.repository.columns[e.node_b]);
        assert_eq!(a.table_id, format!("{}__L", e.source_table));
        assert_eq!(b.table_id, format!("{}__R", e.source_table));
        assert_eq!(a.name == b.name, e.label == Label::Positive);
    }
}

#[test]
fn training_set_is_deterministic() {
    let r = repo(6);
    let cfg = FabricationConfig {
        seed: 99,
        ..FabricationConfig::default()
    };
    let a = generate_training_set(&r, &cfg).unwrap();
    let b = generate_training_set(&r, &cfg).unwrap();
    assert_eq!(a.repository, b.repository);
    assert_eq!(a.examples, b.examples);
    let c = generate_training_set(&r, &FabricationConfig::default()).unwrap();
    assert_ne!(a.repository, c.repository);
}

#[test]
fn training_set_needs_an_eligible_table() {
    let r = Repository::from_tables(vec![table("t", 2, 1)]);
    assert!(generate_training_set(&r, &FabricationConfig::default()).is_err());
}

#[test]
fn examples_file_roundtrip() {
    let r = repo(3);
    let set = generate_training_set(&r, &FabricationConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("examples.csv");
    write_examples(&path, &set.repository, &set.examples).unwrap();
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("table_a,column_a,table_b,column_b,label\n"));
    let back = read_examples(&path, &set.repository).unwrap();
    assert_eq!(back, set.examples);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn perturbation_keeps_values_present(seed in any::<u64>(), v in "[a-zA-Z0-9 $,./-]{1,12}") {
        prop_assume!(!is_missing(&v));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = perturb_value(v.trim(), &mut rng);
        prop_assert!(!is_missing(&out));
    }

    #[test]
    fn fabricated_labels_partition(seed in any::<u64>(), cols in 1usize..7, rows in 2usize..30) {
        let t = table("p", cols, rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = fabricate_pair(&t, &FabricationConfig::default(), &mut rng).unwrap().unwrap();
        let pos = p.n_positive();
        prop_assert!(pos >= 1 && pos <= cols.min(4));
        prop_assert_eq!(p.labels.len(), p.left.n_columns() * p.right.n_columns());
        prop_assert!(p.left.n_rows() >= 1 && p.right.n_rows() >= 1);
    }
}
