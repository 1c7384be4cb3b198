//! The reproducible experiment pipeline behind the `tpa-lab` CLI.
//!
//! Every command reads an [`ExperimentConfig`] (flat `key=value`, pixel
//! units for distances) and writes machine-readable artifacts into an output
//! directory. All randomness derives from the master seed through named
//! sub-streams, and reports only mention file names and content hashes, so
//! re-running from the same seed reproduces every file byte-for-byte on any
//! number of threads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{self, AdversarialExample, AttackConfig, AttackKind};
use crate::checkpoint;
use crate::data::{self, Dataset, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::flatness::{self, BoundConfig, BoundReport};
use crate::kv::KvFile;
use crate::model::{mlp_spec, Activation};
use crate::rng;
use crate::tensor::{norm_l2, norm_linf};
use crate::train::{self, Accuracy, TrainConfig, TrainReport};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "split.json";
pub const TRANSFER_REPORT_FILE: &str = "transfer_report.json";
pub const ASR_MATRIX_FILE: &str = "asr_matrix.csv";
pub const SIN_DEMO_FILE: &str = "sin_landscape.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Blobs {
        n_classes: usize,
        modes: usize,
        dim: usize,
        n_per_class: usize,
        sigma: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub residual_blocks: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitSpec,
    pub proxy: ModelConfig,
    pub target: ModelConfig,
    pub attacks: Vec<AttackKind>,
    /// Shared attack settings in `[0,1]` units; `kind` is set per run.
    pub attack: AttackConfig,
    pub max_examples: Option<usize>,
    pub bound: BoundConfig,
    pub bound_attacks: Vec<AttackKind>,
}

fn parse_list<T, F>(kv: &KvFile, key: &str, default: Vec<T>, parse: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> std::result::Result<T, String>,
{
    match kv.get_str(key) {
        None => Ok(default),
        Some(s) if s.trim().is_empty() => Ok(Vec::new()),
        Some(s) => s
            .split(',')
            .map(|item| parse(item.trim()).map_err(|m| kv.error(key, m)))
            .collect(),
    }
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "softplus" => Ok(Activation::Softplus),
        other => Err(format!("unknown activation `{other}`")),
    }
}

fn model_config(kv: &KvFile, prefix: &str, seed: u64, role: u64) -> Result<ModelConfig> {
    let key = |k: &str| format!("{prefix}.{k}");
    let hidden = parse_list(kv, &key("hidden"), vec![32], |s| {
        s.parse::<usize>()
            .ok()
            .filter(|w| *w > 0)
            .ok_or_else(|| format!("bad width `{s}`"))
    })?;
    let activation = match kv.get_str(&key("activation")) {
        None => Activation::Softplus,
        Some(s) => parse_activation(s).map_err(|m| kv.error(&key("activation"), m))?,
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: kv.get_or(&key("train.epochs"), defaults.epochs)?,
        batch_size: kv.get_or(&key("train.batch_size"), defaults.batch_size)?,
        learning_rate: kv.get_or(&key("train.learning_rate"), defaults.learning_rate)?,
        momentum: kv.get_or(&key("train.momentum"), defaults.momentum)?,
        seed: kv.get_or(
            &key("train.seed"),
            rng::derive_seed(seed, &[rng::TRAIN, role]),
        )?,
    };
    train
        .validate()
        .map_err(|e| kv.error(&key("train"), e.to_string()))?;
    Ok(ModelConfig {
        hidden,
        activation,
        residual_blocks: kv.get_or(&key("residual_blocks"), 0)?,
        train,
    })
}

impl ExperimentConfig {
    /// Builds the config from `kv`, rejecting unknown keys.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let seed: u64 = kv.get_or("seed", 7)?;
        let data = match kv.get_str("data.source").unwrap_or("blobs") {
            "blobs" => DataSource::Blobs {
                n_classes: kv.get_or("data.n_classes", 3)?,
                modes: kv.get_or("data.modes", 1)?,
                dim: kv.get_or("data.dim", 16)?,
                n_per_class: kv.get_or("data.n_per_class", 400)?,
                sigma: kv.get_or("data.sigma", 0.08)?,
            },
            "idx" => DataSource::Idx {
                images: kv
                    .get::<PathBuf>("data.images")?
                    .ok_or_else(|| kv.error("data.images", "required for data.source=idx"))?,
                labels: kv
                    .get::<PathBuf>("data.labels")?
                    .ok_or_else(|| kv.error("data.labels", "required for data.source=idx"))?,
            },
            other => return Err(kv.error("data.source", format!("unknown source `{other}`"))),
        };
        let split = SplitSpec {
            seed: kv.get_or("split.seed", rng::derive_seed(seed, &[rng::SPLIT]))?,
            proxy_fraction: kv.get_or("split.proxy", 0.4)?,
            target_fraction: kv.get_or("split.target", 0.4)?,
            eval_fraction: kv.get_or("split.eval", 0.2)?,
            disjoint: kv.get_or("split.disjoint", true)?,
        };
        split
            .validate()
            .map_err(|e| kv.error("split", e.to_string()))?;

        let kind_list = |key: &str, default: Vec<AttackKind>| {
            parse_list(kv, key, default, |s| {
                s.parse::<AttackKind>()
                    .map_err(|_| format!("unknown attack kind `{s}`"))
            })
        };
        let attacks = kind_list("attack.kinds", AttackKind::ALL.to_vec())?;
        let base = AttackConfig {
            seed: rng::derive_seed(seed, &[rng::ATTACK]),
            ..AttackConfig::published_defaults(AttackKind::Bim)
        };
        let attack = base.merge_kv(kv, "attack")?;
        let bound = BoundConfig {
            c: kv.get_or("bound.c", 1.0)?,
            h: kv.get_or("bound.h", 1e-3)?,
            kde_bandwidth: kv.get_or("bound.kde_bandwidth", 0.1)?,
        };
        bound
            .validate()
            .map_err(|e| kv.error("bound", e.to_string()))?;

        let cfg = ExperimentConfig {
            seed,
            data,
            split,
            proxy: model_config(kv, "proxy", seed, 0)?,
            target: model_config(kv, "target", seed, 1)?,
            attacks,
            attack,
            max_examples: kv.get("attack.max_examples")?,
            bound,
            bound_attacks: kind_list("bound.attacks", vec![AttackKind::Bim, AttackKind::Tpa])?,
        };
        kv.finish()?;
        Ok(cfg)
    }

    pub fn default_for_seed(seed: u64) -> Self {
        let mut kv = KvFile::default();
        kv.set("seed", seed);
        Self::from_kv(&kv).expect("defaults are valid")
    }

    pub fn model_config(&self, role: Role) -> &ModelConfig {
        match role {
            Role::Proxy => &self.proxy,
            Role::Target => &self.target,
        }
    }

    pub fn attack_config(&self, kind: AttackKind) -> AttackConfig {
        self.attack.with_kind(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Proxy,
    Target,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Proxy => "proxy",
            Role::Target => "target",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proxy" => Ok(Role::Proxy),
            "target" => Ok(Role::Target),
            other => Err(Error::config("role", format!("unknown role `{other}`"))),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Content-addressed reference to an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub name: String,
    pub sha256: String,
}

impl FileRef {
    fn of(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path)?;
        Ok((
            FileRef {
                name: file_name(path),
                sha256: checkpoint::content_hash(&bytes),
            },
            bytes,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub source: DataSource,
    pub n_examples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub dataset: FileRef,
    pub split_spec: SplitSpec,
    pub split: Split,
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Blobs {
            n_classes,
            modes,
            dim,
            n_per_class,
            sigma,
        } => data::gen_blob_mixture(
            rng::derive_seed(cfg.seed, &[rng::DATA]),
            *n_classes,
            *modes,
            *dim,
            *n_per_class,
            *sigma,
        ),
        DataSource::Idx { images, labels } => data::load_idx(images, labels),
    }
}

/// `gen-data`: writes `dataset.csv` and the split manifest `split.json`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<DataManifest> {
    fs::create_dir_all(out)?;
    let dataset = build_dataset(cfg)?;
    let path = out.join(DATASET_FILE);
    let mut csv_bytes = Vec::new();
    dataset.write_csv(&mut csv_bytes)?;
    fs::write(&path, &csv_bytes)?;
    let manifest = DataManifest {
        seed: cfg.seed,
        source: cfg.data.clone(),
        n_examples: dataset.len(),
        dim: dataset.dim(),
        n_classes: dataset.n_classes(),
        dataset: FileRef {
            name: DATASET_FILE.into(),
            sha256: checkpoint::content_hash(&csv_bytes),
        },
        split_spec: cfg.split.clone(),
        split: cfg.split.split(dataset.len())?,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads the dataset and manifest written by [`gen_data`].
pub fn load_data(dir: &Path) -> Result<(Dataset, DataManifest)> {
    let manifest: DataManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let bytes = fs::read(dir.join(&manifest.dataset.name))?;
    if checkpoint::content_hash(&bytes) != manifest.dataset.sha256 {
        return Err(Error::Consistency(
            "dataset file does not match its manifest hash".into(),
        ));
    }
    let dataset = Dataset::read_csv(&bytes[..], manifest.n_classes)?;
    if dataset.len() != manifest.n_examples
        || (!dataset.is_empty() && dataset.dim() != manifest.dim)
    {
        return Err(Error::Consistency(
            "dataset shape disagrees with manifest".into(),
        ));
    }
    Ok((dataset, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub role: Role,
    pub model: ModelConfig,
    pub dataset: FileRef,
    pub checkpoint: FileRef,
    pub report: TrainReport,
}

/// `train`: fits the proxy or target on its split; writes `<role>.tpam`
/// and `<role>.train.json`.
pub fn train_role(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    role: Role,
    out: &Path,
) -> Result<TrainOutput> {
    fs::create_dir_all(out)?;
    let (dataset, manifest) = load_data(data_dir)?;
    let mc = cfg.model_config(role);
    let indices = match role {
        Role::Proxy => &manifest.split.proxy_train,
        Role::Target => &manifest.split.target_train,
    };
    let spec = mlp_spec(
        manifest.dim,
        &mc.hidden,
        manifest.n_classes,
        mc.activation,
        mc.residual_blocks,
    );
    let (model, mut report) = train::train(&spec, &dataset.subset(indices), &mc.train)?;
    report.eval_accuracy = Some(train::evaluate_accuracy(
        &model,
        &dataset.subset(&manifest.split.eval),
    )?);
    let ckpt_path = out.join(format!("{}.tpam", role.name()));
    let bytes = checkpoint::to_bytes(&model);
    fs::write(&ckpt_path, &bytes)?;
    let output = TrainOutput {
        role,
        model: mc.clone(),
        dataset: manifest.dataset.clone(),
        checkpoint: FileRef {
            name: file_name(&ckpt_path),
            sha256: checkpoint::content_hash(&bytes),
        },
        report,
    };
    write_json(&out.join(format!("{}.train.json", role.name())), &output)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub label: usize,
    pub target_class: Option<usize>,
    pub success_on_proxy: bool,
    pub linf: f64,
    pub l2: f64,
    /// Neighborhood gradient norm at the final perturbation.
    pub final_surrogate: f64,
    pub gradient_evaluations: u64,
    pub proxy_loss_trace: Vec<f64>,
    pub surrogate_trace: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub examples: usize,
    pub skipped: usize,
    pub proxy_success_rate: Option<f64>,
    pub mean_final_surrogate: Option<f64>,
    pub gradient_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutput {
    pub attack: AttackConfig,
    pub proxy: FileRef,
    pub n_classes: usize,
    pub dataset: FileRef,
    pub adversarial_set: String,
    pub summary: AttackSummary,
    pub examples: Vec<ExampleRecord>,
}

/// Examples attacked by default: the eval split, optionally truncated.
fn attack_indices(cfg: &ExperimentConfig, manifest: &DataManifest) -> Vec<usize> {
    let mut idx = manifest.split.eval.clone();
    if let Some(m) = cfg.max_examples {
        idx.truncate(m);
    }
    idx
}

fn write_adv_csv(
    path: &Path,
    dim: usize,
    rows: &[(usize, usize, Option<usize>, Vec<f64>)],
) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string(), "label".into(), "target".into()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    out.write_record(&header)?;
    for (index, label, target, adv) in rows {
        let mut rec = vec![
            index.to_string(),
            label.to_string(),
            target.map(|t| t.to_string()).unwrap_or_default(),
        ];
        rec.extend(adv.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an adversarial-set CSV as `(index, label, target, adv)` rows.
pub fn read_adv_csv(path: &Path) -> Result<Vec<(usize, usize, Option<usize>, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let bad = |m: String| Error::Format(format!("{}: {m}", file_name(path)));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(e.to_string()));
        let target = if rec[2].is_empty() {
            None
        } else {
            Some(int(2)?)
        };
        let adv = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push((int(0)?, int(1)?, target, adv));
    }
    Ok(rows)
}

/// Seed of the Monte-Carlo neighborhood used to score example `index`.
/// It depends only on the master attack seed, so all attacks are scored on
/// the same neighbors.
pub fn surrogate_seed(attack_seed: u64, index: usize) -> u64 {
    rng::derive_seed(attack_seed, &[rng::SURROGATE, index as u64])
}

/// `attack`: runs `kind` against the model in `model_path` over the eval
/// split; writes `adv_<kind>.csv` and `attack_<kind>.json`.
pub fn attack_cmd(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    model_path: &Path,
    kind: AttackKind,
    out: &Path,
) -> Result<AttackOutput> {
    fs::create_dir_all(out)?;
    let (dataset, manifest) = load_data(data_dir)?;
    let (proxy_ref, bytes) = FileRef::of(model_path)?;
    let model = checkpoint::from_bytes(&bytes)?;
    if model.input_dim() != manifest.dim || model.n_classes() != manifest.n_classes {
        return Err(Error::Consistency(format!(
            "model {} does not match the dataset shape",
            proxy_ref.name
        )));
    }
    let acfg = cfg.attack_config(kind);
    let indices = attack_indices(cfg, &manifest);
    let results = attack::attack_batch(&model, &dataset, &indices, &acfg);

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (i, result) in results {
        let r = match result {
            Ok(r) => r,
            Err(Error::Argument(msg)) => {
                log::debug!("skipping example {i}: {msg}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let y = dataset.label(i);
        let target_class = acfg
            .targeted
            .then(|| attack::batch_target(&acfg, y, model.n_classes()))
            .flatten();
        let final_surrogate = flatness::surrogate_value(
            &model,
            dataset.input(i),
            &r.delta,
            y,
            acfg.b,
            acfg.n_samples,
            surrogate_seed(acfg.seed, i),
        )?;
        rows.push((i, y, target_class, r.adv_input.clone()));
        records.push(ExampleRecord {
            index: i,
            label: y,
            target_class,
            success_on_proxy: r.success_on_proxy,
            linf: norm_linf(&r.delta),
            l2: norm_l2(&r.delta),
            final_surrogate,
            gradient_evaluations: r.gradient_evaluations,
            proxy_loss_trace: r.proxy_loss_trace,
            surrogate_trace: r.surrogate_trace,
            delta: r.delta,
        });
    }

    let adv_name = format!("adv_{kind}.csv");
    write_adv_csv(&out.join(&adv_name), manifest.dim, &rows)?;
    let n = records.len();
    let summary = AttackSummary {
        examples: n,
        skipped,
        proxy_success_rate: (n > 0)
            .then(|| records.iter().filter(|r| r.success_on_proxy).count() as f64 / n as f64),
        mean_final_surrogate: (n > 0)
            .then(|| records.iter().map(|r| r.final_surrogate).sum::<f64>() / n as f64),
        gradient_evaluations: records.iter().map(|r| r.gradient_evaluations).sum(),
    };
    let output = AttackOutput {
        attack: acfg,
        proxy: proxy_ref,
        n_classes: manifest.n_classes,
        dataset: manifest.dataset.clone(),
        adversarial_set: adv_name,
        summary,
        examples: records,
    };
    write_json(&out.join(format!("attack_{kind}.json")), &output)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEntry {
    pub proxy: String,
    pub target: String,
    pub attack: AttackKind,
    pub targeted: bool,
    pub eligible: usize,
    pub successes: usize,
    pub asr: Option<f64>,
    /// No example was eligible, so the ASR is undefined.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub examples: usize,
    pub gradient_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub entries: Vec<TransferEntry>,
    /// Clean eval-split accuracy per model name.
    pub clean_accuracy: BTreeMap<String, Accuracy>,
    pub mean_surrogate: BTreeMap<String, Option<f64>>,
    pub runtime: BTreeMap<String, RuntimeStats>,
    /// Hashes of every checkpoint and attack result consumed.
    pub inputs: Vec<FileRef>,
    pub attack_configs: BTreeMap<String, AttackConfig>,
}

/// `evaluate`: scores every attack result against every target model;
/// writes `transfer_report.json` and `asr_matrix.csv`.
pub fn evaluate_cmd(
    data_dir: &Path,
    results: &[PathBuf],
    targets: &[PathBuf],
    out: &Path,
) -> Result<TransferReport> {
    fs::create_dir_all(out)?;
    let (dataset, manifest) = load_data(data_dir)?;
    let eval = dataset.subset(&manifest.split.eval);

    let mut inputs = Vec::new();
    let mut target_models = Vec::new();
    let mut clean_accuracy = BTreeMap::new();
    for path in targets {
        let (r, bytes) = FileRef::of(path)?;
        let model = checkpoint::from_bytes(&bytes)?;
        if model.n_classes() != manifest.n_classes || model.input_dim() != manifest.dim {
            return Err(Error::Consistency(format!(
                "target {} has a different label space or input size than the dataset",
                r.name
            )));
        }
        clean_accuracy.insert(file_stem(path), train::evaluate_accuracy(&model, &eval)?);
        inputs.push(r);
        target_models.push((file_stem(path), model));
    }

    let mut entries = Vec::new();
    let mut mean_surrogate = BTreeMap::new();
    let mut runtime = BTreeMap::new();
    let mut attack_configs = BTreeMap::new();
    for path in results {
        let (r, bytes) = FileRef::of(path)?;
        let output: AttackOutput = serde_json::from_slice(&bytes)?;
        if output.n_classes != manifest.n_classes {
            return Err(Error::Consistency(format!(
                "{} was crafted for {} classes, dataset has {}",
                r.name, output.n_classes, manifest.n_classes
            )));
        }
        inputs.push(r);
        let adv_path = path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&output.adversarial_set);
        let examples: Vec<AdversarialExample> = read_adv_csv(&adv_path)?
            .into_iter()
            .map(|(index, label, target_class, adv)| AdversarialExample {
                index,
                label,
                target_class,
                clean: dataset.input(index).to_vec(),
                adv,
            })
            .collect();
        let proxy_name = output.proxy.name.trim_end_matches(".tpam").to_string();
        let kind = output.attack.kind;
        for (target_name, model) in &target_models {
            let outcome = attack::evaluate_transfer(&examples, model)?;
            entries.push(TransferEntry {
                proxy: proxy_name.clone(),
                target: target_name.clone(),
                attack: kind,
                targeted: output.attack.targeted,
                eligible: outcome.eligible,
                successes: outcome.successes,
                asr: outcome.asr,
                undefined: outcome.asr.is_none(),
            });
        }
        mean_surrogate.insert(kind.to_string(), output.summary.mean_final_surrogate);
        runtime.insert(
            kind.to_string(),
            RuntimeStats {
                examples: output.summary.examples,
                gradient_evaluations: output.summary.gradient_evaluations,
            },
        );
        attack_configs.insert(kind.to_string(), output.attack);
    }

    let report = TransferReport {
        entries,
        clean_accuracy,
        mean_surrogate,
        runtime,
        inputs,
        attack_configs,
    };
    write_json(&out.join(TRANSFER_REPORT_FILE), &report)?;
    let mut w = csv::Writer::from_path(out.join(ASR_MATRIX_FILE))?;
    w.write_record(["proxy", "target", "attack", "eligible", "successes", "asr"])?;
    for e in &report.entries {
        w.write_record([
            e.proxy.clone(),
            e.target.clone(),
            e.attack.to_string(),
            e.eligible.to_string(),
            e.successes.to_string(),
            e.asr
                .map(|a| a.to_string())
                .unwrap_or_else(|| "undefined".into()),
        ])?;
    }
    w.flush()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub bound: BoundConfig,
    pub attack: AttackKind,
    pub proxy: FileRef,
    pub target: FileRef,
    pub attack_result: FileRef,
    pub report: BoundReport,
}

/// `bound`: evaluates the transfer bound for one attack result; writes
/// `bound_<kind>.json`.
pub fn bound_cmd(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    proxy_path: &Path,
    target_path: &Path,
    result_path: &Path,
    out: &Path,
) -> Result<BoundOutput> {
    fs::create_dir_all(out)?;
    let (dataset, _) = load_data(data_dir)?;
    let (proxy_ref, pb) = FileRef::of(proxy_path)?;
    let (target_ref, tb) = FileRef::of(target_path)?;
    let (result_ref, rb) = FileRef::of(result_path)?;
    let proxy = checkpoint::from_bytes(&pb)?;
    let target = checkpoint::from_bytes(&tb)?;
    let result: AttackOutput = serde_json::from_slice(&rb)?;
    let indices: Vec<usize> = result.examples.iter().map(|e| e.index).collect();
    let deltas: Vec<Vec<f64>> = result.examples.iter().map(|e| e.delta.clone()).collect();
    let mut report = flatness::bound_components(
        &proxy,
        &target,
        &dataset.subset(&indices),
        &deltas,
        &cfg.bound,
    )?;
    for (e, idx) in report.per_example.iter_mut().zip(&indices) {
        e.index = *idx;
    }
    let output = BoundOutput {
        bound: cfg.bound,
        attack: result.attack.kind,
        proxy: proxy_ref,
        target: target_ref,
        attack_result: result_ref,
        report,
    };
    write_json(
        &out.join(format!("bound_{}.json", result.attack.kind)),
        &output,
    )?;
    Ok(output)
}

/// `demo-sin`: writes the landscape CSV.
pub fn demo_sin_cmd(
    x_min: f64,
    x_max: f64,
    n_points: usize,
    out: &Path,
) -> Result<flatness::LandscapeDemo> {
    fs::create_dir_all(out)?;
    let demo = flatness::sin_landscape_demo(x_min, x_max, n_points)?;
    demo.write_csv(fs::File::create(out.join(SIN_DEMO_FILE))?)?;
    Ok(demo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub transfer: TransferReport,
    pub bounds: Vec<BoundOutput>,
}

/// Full pipeline: data, both models, every configured attack against the
/// proxy, transfer to the target, and the bound for `bound_attacks`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutput> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    gen_data(cfg, out)?;
    train_role(cfg, out, Role::Proxy, out)?;
    train_role(cfg, out, Role::Target, out)?;
    let proxy = out.join("proxy.tpam");
    let target = out.join("target.tpam");
    let mut results = Vec::new();
    for &kind in &cfg.attacks {
        attack_cmd(cfg, out, &proxy, kind, out)?;
        results.push(out.join(format!("attack_{kind}.json")));
    }
    let transfer = evaluate_cmd(out, &results, &[proxy.clone(), target.clone()], out)?;
    let mut bounds = Vec::new();
    for &kind in &cfg.bound_attacks {
        let path = out.join(format!("attack_{kind}.json"));
        if path.exists() {
            bounds.push(bound_cmd(cfg, out, &proxy, &target, &path, out)?);
        }
    }
    Ok(PipelineOutput { transfer, bounds })
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = ExperimentConfig::default_for_seed(3);
        assert_eq!(cfg.attacks.len(), 6);
        assert_eq!(cfg.attack.lambda, 5.0);
        assert_eq!(cfg.attack.epsilon, 16.0 / 255.0);
        assert_ne!(cfg.proxy.train.seed, cfg.target.train.seed);
    }

    #[test]
    fn pixel_units_are_converted() {
        let kv = KvFile::parse("attack.epsilon=8\nattack.tpa.b=4\nattack.tpa.lambda=2\n").unwrap();
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.attack.epsilon, 8.0 / 255.0);
        assert_eq!(cfg.attack.b, 4.0 / 255.0);
        assert_eq!(cfg.attack.lambda, 2.0);
    }

    #[test]
    fn config_errors_name_the_key() {
        let kv = KvFile::parse("seed=1\nproxy.activation=tanh\n").unwrap();
        match ExperimentConfig::from_kv(&kv) {
            Err(Error::Config { line, key, .. }) => {
                assert_eq!((line, key.as_str()), (2, "proxy.activation"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let kv = KvFile::parse("attack.kinds=bim,fgsm\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_kv(&kv),
            Err(Error::Config { line: 1, .. })
        ));
        let kv = KvFile::parse("atack.epsilon=3\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_kv(&kv),
            Err(Error::Config { line: 1, .. })
        ));
    }
}
