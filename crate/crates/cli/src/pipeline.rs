//! End-to-end experiment pipeline: stage planning, execution, artifact
//! persistence, and the run manifest.
//!
//! A run executes stages in a fixed order, each stage writing its outputs
//! into the run directory before the next one starts. Stage timings go into
//! the manifest only, so everything else in the directory is a pure function
//! of the configuration.

use std::fs;
use std::path::Path;
use std::time::Instant;

use grasp_core::data::{self, Dataset};
use grasp_core::inversion::{invert, inversion_result_to_json, InversionResult};
use grasp_core::metrics::{
    accuracy, asr, epsilon1, epsilon2_jaccard, epsilon3, unlearn, unlearn_set_sizes,
    MetricsReport,
};
use grasp_core::nn::{save_model, sgd_train, Model};
use grasp_core::poison::{amend, grasp_poison, save_trigger, PoisonCounts, PoisonedDataset, Trigger};
use grasp_core::robustness::{local_lipschitz, overall_robustness, SampleOutcome};
use grasp_core::rng;
use grasp_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, seeds, DatasetSpec, ExperimentConfig};

/// Ball radius for the per-run local Lipschitz probe. Held constant across
/// configurations so fold changes between runs compare like with like.
pub const LIPSCHITZ_RADIUS: f64 = 0.1;
/// Sample-pair budget per probed point.
pub const LIPSCHITZ_PAIRS: usize = 64;
/// Trigger-stamped test points probed by the Lipschitz instrumentation.
pub const LIPSCHITZ_POINTS: usize = 8;

/// One step of the pipeline. Variants are ordered; a run executes the
/// dependency closure of its target in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Load or synthesize the train and test splits.
    Data,
    /// Build the attack trigger.
    Trigger,
    /// Append poisoned copies to the training split.
    Poison,
    /// Train the model on the poisoned data.
    Train,
    /// Train an identically initialized model on the clean data.
    CleanTwin,
    /// Per-sample perturbation radii and the local Lipschitz probe.
    Robustness,
    /// Reverse-engineer a trigger from each trained model.
    Inversion,
    /// Defense-effectiveness metrics against the recovered trigger.
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Data,
        Stage::Trigger,
        Stage::Poison,
        Stage::Train,
        Stage::CleanTwin,
        Stage::Robustness,
        Stage::Inversion,
        Stage::Metrics,
    ];

    /// Stages that must have run immediately before this one.
    fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Data => &[],
            Stage::Trigger => &[Stage::Data],
            Stage::Poison => &[Stage::Trigger],
            Stage::Train => &[Stage::Poison],
            Stage::CleanTwin => &[Stage::Train],
            Stage::Robustness => &[Stage::Train],
            Stage::Inversion => &[Stage::CleanTwin],
            Stage::Metrics => &[Stage::Robustness, Stage::Inversion],
        }
    }

    /// The stages a run targeting `self` executes, in pipeline order.
    pub fn plan(self) -> Vec<Stage> {
        let mut needed = [false; Stage::ALL.len()];
        let mut queue = vec![self];
        while let Some(stage) = queue.pop() {
            let idx = Stage::ALL.iter().position(|&s| s == stage).expect("stage listed");
            if !needed[idx] {
                needed[idx] = true;
                queue.extend_from_slice(stage.deps());
            }
        }
        Stage::ALL
            .iter()
            .copied()
            .filter(|&s| needed[Stage::ALL.iter().position(|&t| t == s).expect("listed")])
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Trigger => "trigger",
            Stage::Poison => "poison",
            Stage::Train => "train",
            Stage::CleanTwin => "clean_twin",
            Stage::Robustness => "robustness",
            Stage::Inversion => "inversion",
            Stage::Metrics => "metrics",
        }
    }
}

/// Execution record for one stage: what it wrote and how long it took.
/// `wall_ms` is the only nondeterministic field in the whole run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// File names relative to the run directory.
    pub artifacts: Vec<String>,
    pub wall_ms: u64,
}

/// Summary of a run, written as `manifest.json` in the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub target: Stage,
    pub stages: Vec<StageRecord>,
    /// True once every planned stage has finished.
    pub completed: bool,
    /// Error message of the stage that stopped the run early.
    pub failure: Option<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// In-memory artifacts handed from stage to stage.
#[derive(Default)]
struct PipelineState {
    train_set: Option<Dataset>,
    test_set: Option<Dataset>,
    trigger: Option<Trigger>,
    poisoned: Option<PoisonedDataset>,
    model_backdoored: Option<Model>,
    model_clean: Option<Model>,
    inversion: Option<InversionResult>,
    inversion_clean: Option<InversionResult>,
}

impl PipelineState {
    fn train_set(&self) -> &Dataset {
        self.train_set.as_ref().expect("data stage ran")
    }
    fn test_set(&self) -> &Dataset {
        self.test_set.as_ref().expect("data stage ran")
    }
    fn trigger(&self) -> &Trigger {
        self.trigger.as_ref().expect("trigger stage ran")
    }
    fn poisoned(&self) -> &PoisonedDataset {
        self.poisoned.as_ref().expect("poison stage ran")
    }
    fn model_backdoored(&self) -> &Model {
        self.model_backdoored.as_ref().expect("train stage ran")
    }
    fn model_clean(&self) -> &Model {
        self.model_clean.as_ref().expect("clean twin stage ran")
    }
}

/// Poison-stage summary persisted next to the poisoned dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonSummary {
    pub counts: PoisonCounts,
    pub total: usize,
}

/// Local Lipschitz probe around trigger-stamped test points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub radius: f64,
    pub n_pairs: usize,
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Runs every stage in `target.plan()`, persisting artifacts into
/// `cfg.out_dir`. The manifest is written even when a stage fails, so a
/// partial run directory always says how far it got and why it stopped.
pub fn run_pipeline(cfg: &ExperimentConfig, target: Stage) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut echo = serde_json::to_string_pretty(cfg)?;
    echo.push('\n');
    fs::write(cfg.out_dir.join("config.json"), echo)?;

    let mut manifest = RunManifest {
        config_hash: config_hash(cfg)?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        target,
        stages: Vec::new(),
        completed: false,
        failure: None,
    };
    let mut state = PipelineState::default();
    for stage in target.plan() {
        let start = Instant::now();
        match run_stage(cfg, stage, &mut state) {
            Ok(artifacts) => manifest.stages.push(StageRecord {
                stage,
                artifacts,
                wall_ms: start.elapsed().as_millis() as u64,
            }),
            Err(e) => {
                manifest.failure = Some(format!("{} stage: {e}", stage.name()));
                write_manifest(&manifest, &cfg.out_dir)?;
                return Err(e);
            }
        }
    }
    manifest.completed = true;
    write_manifest(&manifest, &cfg.out_dir)?;
    Ok(manifest)
}

fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn run_stage(cfg: &ExperimentConfig, stage: Stage, state: &mut PipelineState) -> Result<Vec<String>> {
    match stage {
        Stage::Data => stage_data(cfg, state),
        Stage::Trigger => stage_trigger(cfg, state),
        Stage::Poison => stage_poison(cfg, state),
        Stage::Train => stage_train(cfg, state),
        Stage::CleanTwin => stage_clean_twin(cfg, state),
        Stage::Robustness => stage_robustness(cfg, state),
        Stage::Inversion => stage_inversion(cfg, state),
        Stage::Metrics => stage_metrics(cfg, state),
    }
}

fn stage_data(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic { kind, n_train, n_test } => (
            data::synthetic_dataset(*kind, *n_train, rng::derive_seed(cfg.seed, seeds::DATA_TRAIN))?,
            data::synthetic_dataset(*kind, *n_test, rng::derive_seed(cfg.seed, seeds::DATA_TEST))?,
        ),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            data::load_idx(train_images, train_labels)?,
            data::load_idx(test_images, test_labels)?,
        ),
    };
    data::save_dataset(&train, &cfg.out_dir.join("train_set.grsd"))?;
    data::save_dataset(&test, &cfg.out_dir.join("test_set.grsd"))?;
    state.train_set = Some(train);
    state.test_set = Some(test);
    Ok(vec!["train_set.grsd".into(), "test_set.grsd".into()])
}

fn stage_trigger(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let trigger = cfg.trigger.build(state.train_set().item_shape())?;
    save_trigger(&trigger, &cfg.out_dir.join("trigger.json"))?;
    state.trigger = Some(trigger);
    Ok(vec!["trigger.json".into()])
}

fn stage_poison(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let poisoned = grasp_poison(state.train_set(), state.trigger(), &cfg.poison)?;
    data::save_dataset(&poisoned.dataset, &cfg.out_dir.join("poisoned_train.grsd"))?;

    let summary = PoisonSummary {
        counts: poisoned.counts,
        total: poisoned.dataset.len(),
    };
    write_json(&cfg.out_dir.join("poison.json"), &summary)?;

    let mut csv = String::from("index,provenance\n");
    for (i, p) in poisoned.provenance.iter().enumerate() {
        let name = match p {
            grasp_core::poison::Provenance::Clean => "clean",
            grasp_core::poison::Provenance::TriggerTarget => "trigger_target",
            grasp_core::poison::Provenance::NoisySource => "noisy_source",
        };
        csv.push_str(&format!("{i},{name}\n"));
    }
    fs::write(cfg.out_dir.join("provenance.csv"), csv)?;

    state.poisoned = Some(poisoned);
    Ok(vec![
        "poisoned_train.grsd".into(),
        "poison.json".into(),
        "provenance.csv".into(),
    ])
}

fn init_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model> {
    let specs = cfg.arch.layer_specs(data.item_shape(), data.num_classes)?;
    Model::new_seeded(data.item_shape(), data.num_classes, &specs, cfg.train.seed)
}

fn stage_train(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let init = init_model(cfg, state.train_set())?;
    let model = sgd_train(&init, &state.poisoned().dataset, &cfg.train)?;
    save_model(&model, &cfg.out_dir.join("model_backdoored.grsl"))?;
    state.model_backdoored = Some(model);
    Ok(vec!["model_backdoored.grsl".into()])
}

fn stage_clean_twin(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let init = init_model(cfg, state.train_set())?;
    let model = sgd_train(&init, state.train_set(), &cfg.train)?;
    save_model(&model, &cfg.out_dir.join("model_clean.grsl"))?;
    state.model_clean = Some(model);
    Ok(vec!["model_clean.grsl".into()])
}

fn stage_robustness(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let model = state.model_backdoored();
    let test = state.test_set();
    let eval = test.subsample(
        cfg.robustness_samples.min(test.len()),
        rng::derive_seed(cfg.robustness.seed, seeds::EVAL_SET),
    )?;
    let report = overall_robustness(model, &eval, state.trigger(), cfg.poison.target, &cfg.robustness)?;
    fs::write(cfg.out_dir.join("robustness.json"), report.to_json()? + "\n")?;

    let mut csv = String::from("sample,kind,outcome,radius\n");
    for row in &report.per_sample {
        let kind = match row.kind {
            grasp_core::robustness::RadiusKind::Trigger => "trigger",
            grasp_core::robustness::RadiusKind::Obstructed => "obstructed",
        };
        let (outcome, radius) = match row.outcome {
            SampleOutcome::Found(r) => ("found", fmt_real(r)),
            SampleOutcome::NotFound => ("not_found", String::new()),
            SampleOutcome::NotAstute => ("not_astute", String::new()),
        };
        csv.push_str(&format!("{},{kind},{outcome},{radius}\n", row.sample));
    }
    fs::write(cfg.out_dir.join("robustness.csv"), csv)?;

    // The probe stamps the trigger onto the first test samples so each run
    // measures steepness at comparable points.
    let probe_seed = rng::derive_seed(cfg.robustness.seed, seeds::LIPSCHITZ);
    let mut per_point = Vec::new();
    for i in 0..LIPSCHITZ_POINTS.min(test.len()) {
        let stamped = amend(&test.images[i], state.trigger())?;
        per_point.push(local_lipschitz(
            model,
            &stamped,
            LIPSCHITZ_RADIUS,
            LIPSCHITZ_PAIRS,
            rng::derive_seed(probe_seed, i as u64),
        )?);
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len().max(1) as f64;
    let probe = LipschitzProbe {
        radius: LIPSCHITZ_RADIUS,
        n_pairs: LIPSCHITZ_PAIRS,
        per_point,
        mean,
    };
    write_json(&cfg.out_dir.join("lipschitz.json"), &probe)?;

    Ok(vec![
        "robustness.json".into(),
        "robustness.csv".into(),
        "lipschitz.json".into(),
    ])
}

/// Builds the defender's input for trigger inversion: a seeded tenth of the
/// training data to optimize over, with the test split appended as the
/// holdout that restart selection scores against.
fn inversion_input(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<(Dataset, usize)> {
    let opt_n = (train.len() / 10).max(1);
    let opt = train.subsample(opt_n, rng::derive_seed(cfg.inversion.seed, seeds::OPT_SET))?;
    let mut images = opt.images;
    let mut labels = opt.labels;
    images.extend(test.images.iter().cloned());
    labels.extend_from_slice(&test.labels);
    Ok((Dataset::new(images, labels, train.num_classes)?, opt_n))
}

fn stage_inversion(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let (clean_input, opt_n) = inversion_input(cfg, state.train_set(), state.test_set())?;
    // The optimization batch is pinned to the drawn subsample so the
    // configured batch size cannot silently pull holdout samples into the
    // objective.
    let mut icfg = cfg.inversion.clone();
    icfg.batch = opt_n;

    let result = invert(state.model_backdoored(), &clean_input, cfg.poison.target, &icfg)?;
    fs::write(
        cfg.out_dir.join("inversion.json"),
        inversion_result_to_json(&result)? + "\n",
    )?;
    state.inversion = Some(result);

    let twin = invert(state.model_clean(), &clean_input, cfg.poison.target, &icfg)?;
    fs::write(
        cfg.out_dir.join("inversion_clean.json"),
        inversion_result_to_json(&twin)? + "\n",
    )?;
    state.inversion_clean = Some(twin);

    Ok(vec!["inversion.json".into(), "inversion_clean.json".into()])
}

fn stage_metrics(cfg: &ExperimentConfig, state: &mut PipelineState) -> Result<Vec<String>> {
    let model = state.model_backdoored();
    let twin = state.model_clean();
    let test = state.test_set();
    let trigger = state.trigger();
    let y_t = cfg.poison.target;
    let recovered = state.inversion.as_ref().expect("inversion stage ran");
    let recovered_twin = state.inversion_clean.as_ref().expect("inversion stage ran");

    let asr_before = asr(model, test, trigger.mask(), trigger.pattern(), y_t, true)?;
    let unlearned = unlearn(
        model,
        &recovered.mask,
        &recovered.pattern,
        state.train_set(),
        &cfg.unlearn,
    )?;
    let asr_after = asr(&unlearned, test, trigger.mask(), trigger.pattern(), y_t, true)?;
    save_model(&unlearned, &cfg.out_dir.join("model_unlearned.grsl"))?;

    let (unlearn_set_size, unlearn_stamped) = unlearn_set_sizes(state.train_set().len());
    let epsilon3_sources = test.labels.iter().filter(|&&l| l != y_t).count();
    let report = MetricsReport {
        asr_before,
        asr_after_unlearn: asr_after,
        epsilon1: epsilon1(asr_before, asr_after),
        epsilon2: epsilon2_jaccard(&recovered.binarized_mask, trigger.mask())?,
        epsilon3: epsilon3(twin, &recovered_twin.mask, &recovered_twin.pattern, y_t, test)?,
        epsilon4: None,
        clean_accuracy: accuracy(model, test)?,
        clean_accuracy_after_unlearn: accuracy(&unlearned, test)?,
        unlearn_set_size,
        unlearn_stamped,
        epsilon3_sources,
        exclude_target_class: true,
        unlearn_config: cfg.unlearn.clone(),
    };
    fs::write(cfg.out_dir.join("metrics.json"), report.to_json()? + "\n")?;

    Ok(vec!["metrics.json".into(), "model_unlearned.grsl".into()])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Formats a real for CSV output with 9 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.8e}")
}

/// Reads a JSON artifact from a run directory, reporting which file was
/// missing or malformed.
pub fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Config(format!("missing artifact {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("corrupt artifact {}: {e}", path.display())))
}
