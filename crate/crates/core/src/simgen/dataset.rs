use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    encode_features, label_steps, plan_episode, simulate, Arena, Episode, FeatureEncoder,
    MistakeKind, PlanConfig, SimError, Task,
};
use crate::ltl::PropositionState;
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// Independent random stream for `(seed, id, purpose)`.
pub fn derive_rng(seed: u64, id: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.update([0u8]);
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub task: Task,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub layouts: Vec<usize>,
    pub num_robots: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub encoder_seed: u64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub position_noise: f64,
    pub vicinity_radius: f64,
    pub segment_len: usize,
    /// Defaults to the task's own mistake.
    pub mistake: Option<MistakeKind>,
    pub plan: PlanConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            task: Task::Mutex,
            n_normal: 125,
            n_anomalous: 125,
            layouts: vec![0, 1, 2],
            num_robots: 3,
            test_fraction: 0.2,
            seed: 1,
            encoder_seed: 7,
            feature_dim: 64,
            feature_noise: 0.05,
            position_noise: 0.005,
            vicinity_radius: super::DEFAULT_VICINITY_RADIUS,
            segment_len: 16,
            mistake: None,
            plan: PlanConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn mistake(&self) -> MistakeKind {
        self.mistake.unwrap_or(self.task.default_mistake())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.task.check_mistake(self.mistake())?;
        self.plan.validate()?;
        if self.n_normal + self.n_anomalous == 0 {
            return Err(SimError::Config("no episodes requested".into()));
        }
        if self.layouts.is_empty() {
            return Err(SimError::Config("no layouts selected".into()));
        }
        for &l in &self.layouts {
            Arena::layout_with_radius(l, self.vicinity_radius)?;
        }
        if self.num_robots < 2 {
            return Err(SimError::Config("at least two robots are required".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(SimError::Config("test_fraction must lie in [0, 1)".into()));
        }
        if self.feature_dim == 0 || self.segment_len == 0 {
            return Err(SimError::Config("feature_dim and segment_len must be positive".into()));
        }
        if !(self.feature_noise >= 0.0 && self.position_noise >= 0.0) {
            return Err(SimError::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn episode_id(&self, index: usize) -> String {
        format!("{}-{index:04}", self.task)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompts {
    pub task_prompt: String,
    pub mistake_prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub steps: usize,
    pub video_label: bool,
    pub split: Split,
    pub layout: usize,
    pub mistake: Option<MistakeKind>,
    /// Relative to the dataset directory.
    pub features: String,
    pub labels: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub task: Task,
    pub formula: String,
    pub prompts: Prompts,
    pub segment_len: usize,
    pub feature_dim: usize,
    pub num_robots: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub episodes: Vec<EpisodeRecord>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split, label: bool) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.split == split && e.video_label == label)
            .count()
    }
}

/// Contents of `labels/<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub task: Task,
    pub step_labels: Vec<bool>,
    pub video_label: bool,
    pub prop_trace: Vec<PropositionState>,
}

/// One episode, deterministic in `(config, id)`.
pub fn generate_episode(
    config: &GeneratorConfig,
    encoder: &FeatureEncoder,
    id: &str,
    anomalous: bool,
) -> Result<Episode, SimError> {
    let mut rng = derive_rng(config.seed, id, "episode");
    let layout = config.layouts[rng.random_range(0..config.layouts.len())];
    let arena = Arena::layout_with_radius(layout, config.vicinity_radius)?;
    let mistake = anomalous.then(|| config.mistake());
    let plan = plan_episode(
        config.task,
        layout,
        &arena,
        config.num_robots,
        mistake,
        &config.plan,
        rng.next_u64(),
    )?;
    let run = simulate(&plan, &arena, config.position_noise, rng.next_u64())?;
    let step_labels = label_steps(config.task, &run.prop_trace)?;
    let video_label = step_labels.iter().any(|&l| l);
    if video_label != anomalous {
        return Err(SimError::Dataset(format!(
            "episode {id}: schedule produced video label {video_label}, intended {anomalous}"
        )));
    }
    let mut noise_rng = derive_rng(config.seed, id, "features");
    let features = encode_features(
        &run.positions,
        &arena,
        encoder,
        config.feature_noise,
        &mut noise_rng,
    )?;
    Ok(Episode {
        id: id.to_owned(),
        task: config.task,
        layout,
        num_robots: config.num_robots,
        mistake,
        positions: run.positions,
        prop_trace: run.prop_trace,
        step_labels,
        video_label,
        features,
        segment_len: config.segment_len,
    })
}

/// All episodes of a configuration with their stratified split assignment.
pub fn generate_episodes(config: &GeneratorConfig) -> Result<Vec<(Episode, Split)>, SimError> {
    config.validate()?;
    let encoder = FeatureEncoder::new(config.num_robots, config.feature_dim, config.encoder_seed)?;
    let total = config.n_normal + config.n_anomalous;
    let mut episodes = Vec::with_capacity(total);
    for i in 0..total {
        let id = config.episode_id(i);
        episodes.push(generate_episode(config, &encoder, &id, i >= config.n_normal)?);
    }
    let mut splits = vec![Split::Train; total];
    for (label, range) in [(false, 0..config.n_normal), (true, config.n_normal..total)] {
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut derive_rng(config.seed, if label { "anomalous" } else { "normal" }, "split"));
        let n_test = (idx.len() as f64 * config.test_fraction).round() as usize;
        for &i in &idx[..n_test] {
            splits[i] = Split::Test;
        }
    }
    Ok(episodes.into_iter().zip(splits).collect())
}

fn write_features(path: &Path, features: &Tensor) -> Result<(), SimError> {
    let bytes: Vec<u8> = features
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_features(path: &Path, rows: usize, cols: usize) -> Result<Tensor, SimError> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(SimError::Dataset(format!(
            "{} holds {} bytes, expected {rows}x{cols} f32",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor::new(rows, cols, data)?)
}

/// Generates every episode and writes `manifest.json`, `features/<id>.f32`
/// and `labels/<id>.json` under `out_dir`.
pub fn generate_dataset(config: &GeneratorConfig, out_dir: &Path) -> Result<DatasetManifest, SimError> {
    let episodes = generate_episodes(config)?;
    fs::create_dir_all(out_dir.join("features"))?;
    fs::create_dir_all(out_dir.join("labels"))?;
    let mut records = Vec::with_capacity(episodes.len());
    for (ep, split) in &episodes {
        let features = format!("features/{}.f32", ep.id);
        let labels = format!("labels/{}.json", ep.id);
        write_features(&out_dir.join(&features), &ep.features)?;
        let label_record = LabelRecord {
            id: ep.id.clone(),
            task: ep.task,
            step_labels: ep.step_labels.clone(),
            video_label: ep.video_label,
            prop_trace: ep.prop_trace.clone(),
        };
        fs::write(out_dir.join(&labels), serde_json::to_vec_pretty(&label_record)?)?;
        records.push(EpisodeRecord {
            id: ep.id.clone(),
            steps: ep.steps(),
            video_label: ep.video_label,
            split: *split,
            layout: ep.layout,
            mistake: ep.mistake,
            features,
            labels,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        task: config.task,
        formula: config.task.formula_text().to_owned(),
        prompts: Prompts {
            task_prompt: config.task.task_prompt().to_owned(),
            mistake_prompt: config.task.mistake_prompt().to_owned(),
        },
        segment_len: config.segment_len,
        feature_dim: config.feature_dim,
        num_robots: config.num_robots,
        seed: config.seed,
        generator: config.clone(),
        episodes: records,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct LoadedEpisode {
    pub id: String,
    pub split: Split,
    pub video_label: bool,
    pub step_labels: Vec<bool>,
    pub features: Tensor,
}

impl LoadedEpisode {
    pub fn steps(&self) -> usize {
        self.step_labels.len()
    }
}

impl From<&Episode> for LoadedEpisode {
    fn from(ep: &Episode) -> Self {
        Self {
            id: ep.id.clone(),
            split: Split::Train,
            video_label: ep.video_label,
            step_labels: ep.step_labels.clone(),
            features: ep.features.clone(),
        }
    }
}

/// A dataset directory read back into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub episodes: Vec<LoadedEpisode>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, SimError> {
        let manifest_path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| {
            SimError::Dataset(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SimError::Dataset(format!("unsupported manifest version {}", manifest.version)));
        }
        let mut seen = BTreeSet::new();
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for rec in &manifest.episodes {
            if !seen.insert(rec.id.as_str()) {
                return Err(SimError::Dataset(format!("duplicate episode id {}", rec.id)));
            }
            let features = read_features(&root.join(&rec.features), rec.steps, manifest.feature_dim)?;
            let labels: LabelRecord = serde_json::from_slice(&fs::read(root.join(&rec.labels))?)?;
            if labels.step_labels.len() != rec.steps || labels.video_label != rec.video_label {
                return Err(SimError::Dataset(format!("labels of {} disagree with the manifest", rec.id)));
            }
            episodes.push(LoadedEpisode {
                id: rec.id.clone(),
                split: rec.split,
                video_label: rec.video_label,
                step_labels: labels.step_labels,
                features,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            episodes,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&LoadedEpisode> {
        self.episodes.iter().filter(|e| e.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::eval_finite;

    fn small(task: Task) -> GeneratorConfig {
        GeneratorConfig {
            task,
            n_normal: 10,
            n_anomalous: 10,
            feature_dim: 8,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&small(Task::Mutex), dir.path()).unwrap();
        assert_eq!(manifest.episodes.len(), 20);
        assert_eq!(manifest.episodes.iter().filter(|e| e.video_label).count(), 10);
        assert_eq!(manifest.count(Split::Test, true), 2);
        assert_eq!(manifest.count(Split::Test, false), 2);
        let data = Dataset::load(dir.path()).unwrap();
        for ep in &data.episodes {
            let positives = ep.step_labels.iter().filter(|&&l| l).count();
            assert_eq!(positives > 0, ep.video_label, "{}", ep.id);
            assert_eq!(ep.features.cols(), 8);
        }
    }

    #[test]
    fn labels_agree_with_formula() {
        for task in [Task::Mutex, Task::Ordering] {
            let phi = task.formula();
            for (ep, _) in generate_episodes(&small(task)).unwrap() {
                assert_eq!(ep.video_label, !eval_finite(&phi, &ep.prop_trace).unwrap());
                assert_eq!(ep.raw_frame_count(), 16 * ep.steps());
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small(Task::Ordering);
        generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        for rel in ["manifest.json", "features/ordering-0003.f32", "labels/ordering-0017.json"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn loaded_features_equal_generated() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Task::Mutex);
        generate_dataset(&cfg, dir.path()).unwrap();
        let data = Dataset::load(dir.path()).unwrap();
        let fresh = generate_episodes(&cfg).unwrap();
        for ((ep, split), loaded) in fresh.iter().zip(&data.episodes) {
            assert_eq!(ep.features, loaded.features);
            assert_eq!(*split, loaded.split);
        }
    }

    #[test]
    fn splits_are_disjoint_and_balanced() {
        let cfg = GeneratorConfig {
            n_normal: 23,
            n_anomalous: 17,
            feature_dim: 4,
            ..GeneratorConfig::default()
        };
        let eps = generate_episodes(&cfg).unwrap();
        let test: BTreeSet<&str> = eps.iter().filter(|(_, s)| *s == Split::Test).map(|(e, _)| e.id.as_str()).collect();
        let train: BTreeSet<&str> = eps.iter().filter(|(_, s)| *s == Split::Train).map(|(e, _)| e.id.as_str()).collect();
        assert!(test.is_disjoint(&train));
        assert_eq!(test.len() + train.len(), 40);
        let test_anom = eps.iter().filter(|(e, s)| *s == Split::Test && e.video_label).count();
        assert!((test_anom as f64 - 17.0 * 0.2).abs() <= 1.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small(Task::Ordering);
        cfg.mistake = Some(MistakeKind::MutexOverlap);
        assert!(matches!(generate_episodes(&cfg), Err(SimError::IncompatibleMistake { .. })));
        let cfg = GeneratorConfig { n_normal: 0, n_anomalous: 0, ..GeneratorConfig::default() };
        assert!(generate_episodes(&cfg).is_err());
        let cfg = GeneratorConfig { layouts: vec![5], ..GeneratorConfig::default() };
        assert!(generate_episodes(&cfg).is_err());
    }

    #[test]
    fn missing_files_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        generate_dataset(&small(Task::Mutex), dir.path()).unwrap();
        fs::remove_file(dir.path().join("features/mutex-0004.f32")).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
    }
}
