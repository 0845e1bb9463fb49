use super::*;
use crate::model::{LossMode, ModelConfig};
use crate::profile::PROFILE_DIM;
use crate::repo::Table;
use crate::similarity::{TrigramEmbedder, N_SIGNALS};

fn table(id: &str, cols: &[(&str, &[&str])]) -> Table {
    let names = cols.iter().map(|c| c.0.to_owned()).collect();
    let n = cols[0].1.len();
    let rows = (0..n).map(|r| cols.iter().map(|c| c.1[r].to_owned()).collect()).collect();
    Table::new(id, names, rows).unwrap()
}

fn small_repo() -> Repository {
    Repository::from_tables(vec![
        table(
            "people",
            &[("city", &["Boston", "Paris", "Lima", "Oslo"]), ("age", &["31", "45", "27", "60"])],
        ),
        table(
            "visits",
            &[("town", &["Paris", "Oslo", "Rome", "Boston"]), ("n", &["3", "1", "4", "1"])],
        ),
        table("places", &[("addr", &["1 Main Street", "2 Oak Street", "9 Elm Road", "4 Pine Street"])]),
    ])
}

fn model(loss_mode: LossMode) -> RgcnModel<f64> {
    let cfg = ModelConfig {
        input_dim: PROFILE_DIM,
        hidden_dim: 8,
        layers: 2,
        head_hidden: 4,
        loss_mode,
        margin: 1.0,
    };
    let mut m = RgcnModel::new(cfg, 7).unwrap();
    m.k = 2;
    m
}

#[test]
fn predictions_cover_cross_pairs_in_order() {
    let repo = small_repo();
    for mode in [LossMode::Triplet, LossMode::CrossEntropy] {
        let preds = infer(&model(mode), &repo, &TrigramEmbedder::default()).unwrap();
        assert_eq!(preds.len(), repo.cross_table_pairs().len());
        for w in preds.windows(2) {
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && (w[0].node_a, w[0].node_b) < (w[1].node_a, w[1].node_b)));
        }
        assert!(preds.iter().all(|p| (0.0..=1.0).contains(&p.score) && p.node_a < p.node_b));
        let again = infer(&model(mode), &repo, &TrigramEmbedder::default()).unwrap();
        assert_eq!(preds, again);
    }
}

#[test]
fn single_table_gives_nothing() {
    let repo = Repository::from_tables(vec![small_repo().tables[0].clone()]);
    assert!(infer(&model(LossMode::Triplet), &repo, &TrigramEmbedder::default()).unwrap().is_empty());
}

#[test]
fn feature_width_mismatch_is_an_error() {
    let repo = small_repo();
    let records = compute_all_pairs(&repo, &TrigramEmbedder::default());
    let raw = vec![vec![0.0; 5]; repo.n_nodes()];
    assert!(matches!(
        infer_from_parts(&model(LossMode::Triplet), repo.n_nodes(), &records, &raw),
        Err(Error::Dimension { .. })
    ));
}

fn record(a: usize, b: usize, s: f64) -> SimilarityRecord {
    SimilarityRecord {
        node_a: a,
        node_b: b,
        scores: [s; N_SIGNALS],
    }
}

#[test]
fn oracle_signal_baseline_is_perfect() {
    let truth = GroundTruth::from_pairs([(0, 2), (1, 3)]);
    let records: Vec<_> = [(0, 2), (0, 3), (1, 2), (1, 3)]
        .into_iter()
        .map(|(a, b)| record(a, b, if truth.contains(a, b) { 1.0 } else { 0.0 }))
        .collect();
    for s in SignalType::ALL {
        let c = threshold_baseline(&records, s, &truth).unwrap();
        assert_eq!(best_f1(&c), 1.0);
        for w in c.windows(2) {
            assert!(w[0].threshold > w[1].threshold);
            assert!(w[0].recall <= w[1].recall);
        }
    }
}

#[test]
fn full_jaccard_misses_the_street_pair() {
    let repo = Repository::from_tables(vec![
        table("a", &[("addr", &["12 Main Street", "4 Oak Street", "9 Elm Street"])]),
        table("b", &[("address", &["12 Main St", "4 Oak St", "9 Elm St"])]),
    ]);
    let records = compute_all_pairs(&repo, &TrigramEmbedder::default());
    let truth = GroundTruth::from_pairs([(0, 1)]);
    let c = threshold_baseline(&records, SignalType::JaccardFull, &truth).unwrap();
    assert!(c.iter().filter(|p| p.threshold > 0.0).all(|p| p.recall == 0.0));
    let c = threshold_baseline(&records, SignalType::JaccardInfrequent, &truth).unwrap();
    assert!(c.iter().any(|p| p.threshold > 0.0 && p.recall == 1.0));
}

#[test]
fn pr_curve_on_predictions() {
    let preds = [
        JoinPrediction { node_a: 0, node_b: 2, score: 0.9 },
        JoinPrediction { node_a: 0, node_b: 3, score: 0.8 },
        JoinPrediction { node_a: 1, node_b: 3, score: 0.7 },
    ];
    let truth = GroundTruth::from_pairs([(2, 0), (3, 1)]);
    let c = pr_curve(&preds, &truth).unwrap();
    assert!((best_f1(&c) - 0.8).abs() < 1e-15);
    assert!(pr_curve(&preds, &GroundTruth::default()).is_err());
}

#[test]
fn ground_truth_file() {
    let repo = small_repo();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.csv");
    std::fs::write(&path, "table_a,column_a,table_b,column_b,kind\npeople,city,visits,town,equi\npeople,city,places,addr,\n").unwrap();
    let truth = GroundTruth::load(&path, &repo).unwrap();
    assert_eq!(truth.len(), 2);
    assert!(truth.contains(2, 0));
    assert_eq!(truth.kind(0, 2), Some(JoinKind::Equi));
    assert_eq!(truth.kind(0, 4), None);

    let out = dir.path().join("out.csv");
    truth.write(&out, &repo).unwrap();
    assert_eq!(GroundTruth::load(&out, &repo).unwrap(), truth);

    std::fs::write(&path, "table_a,column_a,table_b,column_b\npeople,city,visits,nope\n").unwrap();
    assert!(matches!(GroundTruth::load(&path, &repo), Err(Error::UnknownColumn { .. })));
    std::fs::write(&path, "table_a,column_a,table_b,column_b\npeople,city,visits,town\n").unwrap();
    assert_eq!(GroundTruth::load(&path, &repo).unwrap().len(), 1);
}

#[test]
fn predictions_file() {
    let repo = small_repo();
    let preds = infer(&model(LossMode::Triplet), &repo, &TrigramEmbedder::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    write_predictions(&path, &repo, &preds).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("table_a,column_a,table_b,column_b,score"));
    assert_eq!(lines.count(), preds.len());
}
