//! Frame-level scoring, AP/AR/F1, report files and score plots.

mod metrics;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ModelError, ModelParams, PromptEmbedding};
use crate::simgen::LoadedEpisode;

pub use metrics::{average_precision, average_recall, f1_from_ap_ar, point_metrics, PointMetrics};
pub use plot::{render_score_plot, PlotError};

pub const METRICS_FILE: &str = "metrics.json";
pub const SCORES_DIR: &str = "scores";
pub const POINT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive steps; AP and AR are undefined")]
    NoPositives,
    #[error("scores must not be NaN")]
    NonFiniteScore,
    #[error("nothing to evaluate")]
    Empty,
    #[error("no scores for episode {0}")]
    MissingEpisode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Step probabilities of one episode with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScores {
    pub id: String,
    pub probabilities: Vec<f64>,
    pub step_labels: Vec<bool>,
}

/// Sigmoid of the per-step logits, no pooling.
pub fn score_episodes(
    params: &ModelParams,
    prompt: &PromptEmbedding,
    episodes: &[&LoadedEpisode],
) -> Result<Vec<EpisodeScores>, EvalError> {
    episodes
        .iter()
        .map(|ep| {
            Ok(EpisodeScores {
                id: ep.id.clone(),
                probabilities: params.predict(&ep.features, prompt)?,
                step_labels: ep.step_labels.clone(),
            })
        })
        .collect()
}

/// Attaches externally produced probabilities (keyed by episode id) to the
/// ground truth of `episodes`.
pub fn scores_from_map(
    map: &BTreeMap<String, Vec<f64>>,
    episodes: &[&LoadedEpisode],
) -> Result<Vec<EpisodeScores>, EvalError> {
    episodes
        .iter()
        .map(|ep| {
            let probabilities = map
                .get(&ep.id)
                .ok_or_else(|| EvalError::MissingEpisode(ep.id.clone()))?
                .clone();
            if probabilities.len() != ep.step_labels.len() {
                return Err(EvalError::LengthMismatch {
                    scores: probabilities.len(),
                    labels: ep.step_labels.len(),
                });
            }
            Ok(EpisodeScores {
                id: ep.id.clone(),
                probabilities,
                step_labels: ep.step_labels.clone(),
            })
        })
        .collect()
}

/// Scores that are 0.5 up to tiny seeded noise, i.e. a random ranking.
pub fn chance_scores(episodes: &[EpisodeScores], seed: u64) -> Vec<EpisodeScores> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    episodes
        .iter()
        .map(|e| EpisodeScores {
            id: e.id.clone(),
            probabilities: e
                .probabilities
                .iter()
                .map(|_| 0.5 + rng.random_range(-1e-6..1e-6))
                .collect(),
            step_labels: e.step_labels.clone(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub episodes: usize,
    pub steps: usize,
    pub positive_steps: usize,
}

/// AP, AR and F1 in percent at full precision; F1 is exactly the harmonic
/// mean of the stored AP and AR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
    pub point: PointMetrics,
    pub counts: Counts,
}

impl Metrics {
    pub fn summary(&self) -> String {
        format!("AP {:.2}  AR {:.2}  F1 {:.2}", self.ap, self.ar, self.f1)
    }
}

/// Micro-averaged metrics over the concatenated steps of every episode.
pub fn compute_metrics(episodes: &[EpisodeScores]) -> Result<Metrics, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in episodes {
        if e.probabilities.len() != e.step_labels.len() {
            return Err(EvalError::LengthMismatch {
                scores: e.probabilities.len(),
                labels: e.step_labels.len(),
            });
        }
        scores.extend_from_slice(&e.probabilities);
        labels.extend_from_slice(&e.step_labels);
    }
    let ap = average_precision(&scores, &labels)?;
    let ar = average_recall(&scores, &labels)?;
    Ok(Metrics {
        ap,
        ar,
        f1: f1_from_ap_ar(ap, ar),
        point: point_metrics(&scores, &labels, POINT_THRESHOLD),
        counts: Counts {
            episodes: episodes.len(),
            steps: scores.len(),
            positive_steps: labels.iter().filter(|&&l| l).count(),
        },
    })
}

/// SHA-256 digests tying a report to its inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_manifest_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores_file_sha256: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub metrics: Metrics,
    pub episode_ids: Vec<String>,
    pub provenance: Provenance,
}

/// Contents of `scores/<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub episodes: Vec<EpisodeScores>,
    pub metrics: Metrics,
}

impl ScoreReport {
    pub fn new(episodes: Vec<EpisodeScores>) -> Result<Self, EvalError> {
        let metrics = compute_metrics(&episodes)?;
        Ok(Self { episodes, metrics })
    }

    /// Writes `metrics.json` and one `scores/<id>.json` per episode.
    pub fn write(&self, out_dir: &Path, provenance: &Provenance) -> Result<(), EvalError> {
        fs::create_dir_all(out_dir.join(SCORES_DIR))?;
        let file = MetricsFile {
            metrics: self.metrics,
            episode_ids: self.episodes.iter().map(|e| e.id.clone()).collect(),
            provenance: provenance.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(out_dir.join(METRICS_FILE), text)?;
        for e in &self.episodes {
            let record = ScoreRecord {
                id: e.id.clone(),
                probabilities: e.probabilities.clone(),
            };
            fs::write(
                out_dir.join(SCORES_DIR).join(format!("{}.json", e.id)),
                serde_json::to_vec(&record)?,
            )?;
        }
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile, EvalError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn read_score_record(path: &Path) -> Result<ScoreRecord, EvalError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
