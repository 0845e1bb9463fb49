//! End-to-end commands over a resolved run configuration: fabricate, train,
//! predict and evaluate. Each command is a function of its configuration and
//! input files, and writes the fully resolved configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fabricate::{generate_training_set, write_examples, FabricationConfig, TrainingSet};
use crate::graph::build_graph;
use crate::model::train::{train_with_selection, EpochRecord};
use crate::model::{checkpoint, LossMode, RgcnModel, TrainConfig, TrainingData};
use crate::predict::baseline::{train_mlp_baseline, MlpConfig};
use crate::predict::{
    infer_from_parts, mlp_curve, pr_curve, same_table_truth, threshold_baseline, write_predictions, CurveSummary,
    GroundTruth, JoinPrediction,
};
use crate::profile::{profile_repository, read_profile_cache, write_profile_cache, ColumnProfile};
use crate::repo::{load_repository_with, Repository};
use crate::similarity::{
    compute_all_pairs, read_similarity_cache, write_similarity_cache, SignalType, SimilarityRecord, TokenEmbedder,
    TrigramEmbedder, WordVectors,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub repository: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub profile_cache: Option<PathBuf>,
    pub similarity_cache: Option<PathBuf>,
    pub graph_dump: Option<PathBuf>,
    pub delimiter: u8,
    pub seed: u64,
    pub threads: usize,
    pub signal: Option<SignalType>,
    pub fabrication: FabricationConfig,
    pub training: TrainConfig,
    pub mlp: MlpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            repository: None,
            truth: None,
            output_dir: PathBuf::from("out"),
            model: None,
            predictions: None,
            report: None,
            embeddings: None,
            profile_cache: None,
            similarity_cache: None,
            graph_dump: None,
            delimiter: b',',
            seed: 0,
            threads: 0,
            signal: None,
            fabrication: FabricationConfig::default(),
            training: TrainConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every recognized key, in the order they are written out.
    pub const KEYS: [&'static str; 33] = [
        "repository",
        "truth",
        "output_dir",
        "model",
        "predictions",
        "report",
        "embeddings",
        "profile_cache",
        "similarity_cache",
        "graph_dump",
        "delimiter",
        "seed",
        "threads",
        "signal",
        "shared_cols_min",
        "shared_cols_max",
        "overlap_min",
        "overlap_max",
        "p_fuzzy_pair",
        "p_perturb_value",
        "epochs",
        "lr",
        "validation_fraction",
        "k_candidates",
        "loss_mode",
        "margin",
        "hidden_dim",
        "layers",
        "head_hidden",
        "per_anchor_cap",
        "mlp_hidden",
        "mlp_epochs",
        "mlp_lr",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "repository" => self.repository = opt_path(value),
            "truth" => self.truth = opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "model" => self.model = opt_path(value),
            "predictions" => self.predictions = opt_path(value),
            "report" => self.report = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            "profile_cache" => self.profile_cache = opt_path(value),
            "similarity_cache" => self.similarity_cache = opt_path(value),
            "graph_dump" => self.graph_dump = opt_path(value),
            "delimiter" => self.delimiter = parse_delimiter(value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "signal" => {
                self.signal = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "shared_cols_min" => self.fabrication.shared_cols_range.0 = parse(key, value)?,
            "shared_cols_max" => self.fabrication.shared_cols_range.1 = parse(key, value)?,
            "overlap_min" => self.fabrication.overlap_fraction_range.0 = parse(key, value)?,
            "overlap_max" => self.fabrication.overlap_fraction_range.1 = parse(key, value)?,
            "p_fuzzy_pair" => self.fabrication.p_fuzzy_pair = parse(key, value)?,
            "p_perturb_value" => self.fabrication.p_perturb_value = parse(key, value)?,
            "epochs" => self.training.epochs = parse(key, value)?,
            "lr" => self.training.lr = parse(key, value)?,
            "validation_fraction" => self.training.validation_fraction = parse(key, value)?,
            "k_candidates" => {
                self.training.k_candidates = value
                    .split(',')
                    .map(|k| parse::<usize>(key, k.trim()))
                    .collect::<Result<_>>()?
            }
            "loss_mode" => self.training.loss_mode = parse(key, value)?,
            "margin" => self.training.margin = parse(key, value)?,
            "hidden_dim" => self.training.hidden_dim = parse(key, value)?,
            "layers" => self.training.layers = parse(key, value)?,
            "head_hidden" => self.training.head_hidden = parse(key, value)?,
            "per_anchor_cap" => self.training.per_anchor_cap = parse(key, value)?,
            "mlp_hidden" => self.mlp.hidden = parse(key, value)?,
            "mlp_epochs" => self.mlp.epochs = parse(key, value)?,
            "mlp_lr" => self.mlp.lr = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
            keys.push(k.trim().to_owned());
        }
        Ok(keys)
    }

    /// Applies a config file and returns the keys it set.
    pub fn apply_file(&mut self, path: &Path) -> Result<Vec<String>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.training;
        let f = &self.fabrication;
        let values = [
            show_path(&self.repository),
            show_path(&self.truth),
            self.output_dir.display().to_string(),
            self.model_path().display().to_string(),
            self.predictions_path().display().to_string(),
            self.report_path().display().to_string(),
            show_path(&self.embeddings),
            show_path(&self.profile_cache),
            show_path(&self.similarity_cache),
            show_path(&self.graph_dump),
            match self.delimiter {
                b'\t' => "tab".to_owned(),
                d => char::from(d).to_string(),
            },
            self.seed.to_string(),
            self.threads.to_string(),
            self.signal.map(|s| s.name().to_owned()).unwrap_or_default(),
            f.shared_cols_range.0.to_string(),
            f.shared_cols_range.1.to_string(),
            f.overlap_fraction_range.0.to_string(),
            f.overlap_fraction_range.1.to_string(),
            f.p_fuzzy_pair.to_string(),
            f.p_perturb_value.to_string(),
            t.epochs.to_string(),
            t.lr.to_string(),
            t.validation_fraction.to_string(),
            t.k_candidates.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            t.loss_mode.to_string(),
            t.margin.to_string(),
            t.hidden_dim.to_string(),
            t.layers.to_string(),
            t.head_hidden.to_string(),
            t.per_anchor_cap.to_string(),
            self.mlp.hidden.to_string(),
            self.mlp.epochs.to_string(),
            self.mlp.lr.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn to_config_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.fabrication_config().validate()?;
        self.train_config().validate()
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.predictions
            .clone()
            .unwrap_or_else(|| self.output_dir.join("predictions.csv"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.output_dir.join("report.json"))
    }

    pub fn fabrication_config(&self) -> FabricationConfig {
        FabricationConfig {
            seed: self.seed,
            ..self.fabrication.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            seed: self.seed,
            ..self.mlp.clone()
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn TokenEmbedder>> {
        Ok(match &self.embeddings {
            Some(path) => Box::new(WordVectors::load(path)?),
            None => Box::new(TrigramEmbedder::default()),
        })
    }

    fn repository_dir(&self) -> Result<&Path> {
        self.repository
            .as_deref()
            .ok_or_else(|| Error::Config("`repository` is not set".into()))
    }

    pub fn load_repository(&self) -> Result<Repository> {
        load_repository_with(self.repository_dir()?, self.delimiter)
    }

    /// Writes `<output_dir>/<command>.conf`.
    fn write_resolved(&self, command: &str) -> Result<()> {
        ensure_dir(&self.output_dir)?;
        let path = self.output_dir.join(format!("{command}.conf"));
        fs::write(&path, self.to_config_string()).map_err(|e| Error::io(&path, e))
    }
}

fn parse_delimiter(value: &str) -> Result<u8> {
    match value {
        "tab" | "\\t" => Ok(b'\t'),
        v if v.len() == 1 && v.is_ascii() => Ok(v.as_bytes()[0]),
        v => Err(Error::Config(format!("delimiter must be a single ASCII character or `tab`, got `{v}`"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Profiles of `repo`, read from `cache` when it matches and written there otherwise.
pub fn repository_profiles(repo: &Repository, cache: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    if let Some(path) = cache.filter(|p| p.exists()) {
        let cached = read_profile_cache(path)?;
        let matches = cached.len() == repo.n_nodes() && cached.iter().enumerate().all(|(i, p)| p.node_id == i);
        if matches {
            return Ok(cached.into_iter().map(|p| p.features).collect());
        }
        log::warn!("profile cache {} does not match the repository; recomputing", path.display());
    }
    let profiles: Vec<ColumnProfile> = profile_repository(repo);
    if let Some(path) = cache {
        ensure_parent(path)?;
        write_profile_cache(path, &profiles)?;
    }
    Ok(profiles.into_iter().map(|p| p.features).collect())
}

/// Cross-table similarity records of `repo`, cached like [`repository_profiles`].
pub fn repository_similarities(
    repo: &Repository,
    embedder: &dyn TokenEmbedder,
    cache: Option<&Path>,
) -> Result<Vec<SimilarityRecord>> {
    if let Some(path) = cache.filter(|p| p.exists()) {
        let cached = read_similarity_cache(path)?;
        let pairs = repo.cross_table_pairs();
        let matches = cached.len() == pairs.len()
            && cached.iter().zip(&pairs).all(|(r, &(a, b))| (r.node_a, r.node_b) == (a, b));
        if matches {
            return Ok(cached);
        }
        log::warn!("similarity cache {} does not match the repository; recomputing", path.display());
    }
    let records = compute_all_pairs(repo, embedder);
    if let Some(path) = cache {
        ensure_parent(path)?;
        write_similarity_cache(path, &records)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct FabricateSummary {
    pub tables: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn cmd_fabricate(cfg: &RunConfig) -> Result<FabricateSummary> {
    cfg.validate()?;
    let repo = cfg.load_repository()?;
    let set = generate_training_set(&repo, &cfg.fabrication_config())?;
    set.repository.write_dir(&cfg.output_dir.join("fabricated"))?;
    write_examples(&cfg.output_dir.join("examples.csv"), &set.repository, &set.examples)?;
    cfg.write_resolved("fabricate")?;
    Ok(FabricateSummary {
        tables: set.repository.tables.len(),
        positives: set.n_positive(),
        negatives: set.n_negative(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub k: usize,
    /// `(k, validation best F1)` per candidate.
    pub selection: Vec<(usize, f64)>,
    pub positives: usize,
    pub negatives: usize,
    pub history: Vec<EpochRecord>,
}

fn training_inputs(cfg: &RunConfig, repo: &Repository, embedder: &dyn TokenEmbedder) -> Result<(TrainingSet, TrainingData)> {
    let set = generate_training_set(repo, &cfg.fabrication_config())?;
    let data = TrainingData::prepare(&set.repository, &set.examples, embedder, &cfg.train_config())?;
    Ok((set, data))
}

/// Fabricates training pairs, selects `k`, trains, and saves the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let repo = cfg.load_repository()?;
    let embedder = cfg.embedder()?;
    let (set, data) = training_inputs(cfg, &repo, embedder.as_ref())?;
    log::info!(
        "fabricated {} tables, {} positive and {} negative examples",
        set.repository.tables.len(),
        set.n_positive(),
        set.n_negative()
    );
    let selection = train_with_selection::<f64>(&data, &cfg.train_config())?;
    let path = cfg.model_path();
    ensure_parent(&path)?;
    checkpoint::save(&selection.model, &path)?;
    let summary = TrainSummary {
        k: selection.k,
        selection: selection.scores,
        positives: set.n_positive(),
        negatives: set.n_negative(),
        history: selection.history.epochs,
    };
    write_json(&cfg.output_dir.join("training.json"), &summary)?;
    cfg.write_resolved("train")?;
    Ok(summary)
}

struct Scored {
    repo: Repository,
    records: Vec<SimilarityRecord>,
    predictions: Vec<JoinPrediction>,
    model: RgcnModel<f64>,
}

fn score_repository(cfg: &RunConfig) -> Result<Scored> {
    let model: RgcnModel<f64> = checkpoint::load(&cfg.model_path())?;
    let repo = cfg.load_repository()?;
    let embedder = cfg.embedder()?;
    let records = repository_similarities(&repo, embedder.as_ref(), cfg.similarity_cache.as_deref())?;
    let raw = repository_profiles(&repo, cfg.profile_cache.as_deref())?;
    if let Some(path) = &cfg.graph_dump {
        ensure_parent(path)?;
        build_graph(&records, repo.n_nodes(), model.k.max(1))?.write_jsonl(path)?;
    }
    let predictions = infer_from_parts(&model, repo.n_nodes(), &records, &raw)?;
    Ok(Scored {
        repo,
        records,
        predictions,
        model,
    })
}

/// Scores every cross-table pair of the repository and writes the predictions file.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<JoinPrediction>> {
    cfg.validate()?;
    let scored = score_repository(cfg)?;
    let path = cfg.predictions_path();
    ensure_parent(&path)?;
    write_predictions(&path, &scored.repo, &scored.predictions)?;
    cfg.write_resolved("predict")?;
    Ok(scored.predictions)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub k: usize,
    pub loss_mode: LossMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub n_pairs: usize,
    pub n_truth: usize,
    /// Truth pairs inside a single table; they count against recall.
    pub n_truth_same_table: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgcn: Option<CurveSummary>,
    pub signals: Vec<CurveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp: Option<CurveSummary>,
}

fn load_truth(cfg: &RunConfig, repo: &Repository) -> Result<GroundTruth> {
    let path = cfg
        .truth
        .as_deref()
        .ok_or_else(|| Error::Config("`truth` is not set".into()))?;
    GroundTruth::load(path, repo)
}

/// Curves, best F1 and PR-AUC for the model, each single signal and the
/// similarity perceptron. With `signal` set, only that signal's baseline.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let report = match cfg.signal {
        Some(signal) => {
            let repo = cfg.load_repository()?;
            let truth = load_truth(cfg, &repo)?;
            let embedder = cfg.embedder()?;
            let records = repository_similarities(&repo, embedder.as_ref(), cfg.similarity_cache.as_deref())?;
            Report {
                n_pairs: records.len(),
                n_truth: truth.len(),
                n_truth_same_table: same_table_truth(&truth, &repo).len(),
                model: None,
                rgcn: None,
                signals: vec![CurveSummary::new(signal.name(), threshold_baseline(&records, signal, &truth)?)],
                mlp: None,
            }
        }
        None => {
            let scored = score_repository(cfg)?;
            let truth = load_truth(cfg, &scored.repo)?;
            let rgcn = CurveSummary::new("rgcn", pr_curve(&scored.predictions, &truth)?);
            let signals = SignalType::ALL
                .into_iter()
                .map(|s| Ok(CurveSummary::new(s.name(), threshold_baseline(&scored.records, s, &truth)?)))
                .collect::<Result<Vec<_>>>()?;
            let embedder = cfg.embedder()?;
            let set = generate_training_set(&scored.repo, &cfg.fabrication_config())?;
            let fabricated = compute_all_pairs(&set.repository, embedder.as_ref());
            let (mlp, _) = train_mlp_baseline(&fabricated, &set.examples, &cfg.mlp_config())?;
            let mlp = CurveSummary::new("mlp", mlp_curve(&mlp, &scored.records, &truth)?);
            Report {
                n_pairs: scored.predictions.len(),
                n_truth: truth.len(),
                n_truth_same_table: same_table_truth(&truth, &scored.repo).len(),
                model: Some(ModelInfo {
                    k: scored.model.k,
                    loss_mode: scored.model.config.loss_mode,
                }),
                rgcn: Some(rgcn),
                signals,
                mlp: Some(mlp),
            }
        }
    };
    write_json(&cfg.report_path(), &report)?;
    cfg.write_resolved("evaluate")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_config_string();
        let mut back = RunConfig::parse_str(&text).unwrap();
        // resolved paths are materialized; compare the resolved form
        assert_eq!(back.to_config_string(), text);
        back.model = None;
        back.predictions = None;
        back.report = None;
        assert_eq!(back, cfg);
        assert_eq!(cfg.training.epochs, 30);
        assert_eq!(cfg.training.lr, 0.001);
        assert_eq!(cfg.training.k_candidates, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.training.loss_mode, LossMode::Triplet);
        assert_eq!(cfg.training.hidden_dim, 256);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        for (k, v) in cfg.entries() {
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap();
        }
        assert_eq!(cfg.entries().len(), RunConfig::KEYS.len());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse_str("epochz = 3"), Err(Error::Config(_))));
        assert!(RunConfig::parse_str("epochs = three").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
        assert!(RunConfig::parse_str("delimiter = ab").is_err());
        assert!(RunConfig::parse_str("signal = cosine").is_err());
    }

    #[test]
    fn parses_values() {
        let cfg = RunConfig::parse_str(
            "# comment\nseed = 7\nk_candidates = 2, 3\nloss_mode = ce\ndelimiter = tab\nsignal = jaccard_full # inline\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.k_candidates, vec![2, 3]);
        assert_eq!(cfg.training.loss_mode, LossMode::CrossEntropy);
        assert_eq!(cfg.delimiter, b'\t');
        assert_eq!(cfg.signal, Some(SignalType::JaccardFull));
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.fabrication_config().seed, 7);
    }

    #[test]
    fn invalid_ranges_fail_validation() {
        let cfg = RunConfig::parse_str("epochs = 0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse_str("p_fuzzy_pair = 2").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_repository_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_owned(),
            ..RunConfig::default()
        };
        assert!(matches!(cmd_fabricate(&cfg), Err(Error::Config(_))));
    }
}
