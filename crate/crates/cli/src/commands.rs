use std::fs;
use std::path::{Path, PathBuf};

use amalgam_core::checkpoint::{load_checkpoint, save_checkpoint};
use amalgam_core::experts::{load_embedding_file, write_embedding_file, Expert, OovPolicy, StubExpertSpec};
use amalgam_core::fusion::{ConcatModel, GateActivation, LifaModel, Model};
use amalgam_core::numeric::Rng;
use amalgam_core::preprocess::{load_dictionary, run_pipeline, default_dictionary, PreprocessConfig};
use amalgam_core::synthetic::{expert_name, noisy_review_corpus, SyntheticSpec, SyntheticTask};
use amalgam_core::training::{
    encode_dataset, epoch_log_to_string, evaluate, gate_summary, gradient_check_coords, load_dataset, train,
    write_dataset, EncodedDataset,
};
use anyhow::{anyhow, bail, Context};

use crate::artifacts::{self, GateReport, GateTable, GradCheckFile, MetricsReport, TemperatureEntry};
use crate::config::{ConfigError, ExperimentConfig, ExpertKind, OovKind, Variant};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a PathBuf> {
    value.as_ref().ok_or_else(|| CliError::Usage(format!("config is missing `{key}`")))
}

/// Creates the output directory and writes the resolved-config echo.
fn prepare_out(cfg: &ExperimentConfig) -> CliResult<()> {
    let out = &cfg.experiment.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    artifacts::write(&out.join("config.resolved.toml"), &cfg.echo())?;
    Ok(())
}

/// Experts named by the config, restricted to one for SINGLE.
pub fn load_experts(cfg: &ExperimentConfig) -> anyhow::Result<Vec<Expert>> {
    let variant = cfg.variant();
    let mut experts = Vec::new();
    for e in &cfg.experts {
        let name = e.name.get_ref();
        if let Variant::Single(only) = &variant {
            if only != name {
                continue;
            }
        }
        let expert = match e.kind {
            ExpertKind::Stub => Expert::Stub(StubExpertSpec::new(
                name.clone(),
                e.dim.expect("validated"),
                e.seed.expect("validated"),
            )?),
            ExpertKind::File => {
                let path = e.path.as_ref().expect("validated");
                let loaded = load_embedding_file(path)?;
                if loaded.duplicates > 0 {
                    eprintln!("warning: {}: {} duplicate tokens, last kept", path.display(), loaded.duplicates);
                }
                if let Some(d) = e.dim {
                    if d != loaded.table.dim() {
                        bail!("expert {name:?}: config says dim {d}, {} has {}", path.display(), loaded.table.dim());
                    }
                }
                let policy = match e.oov {
                    Some(OovKind::Stub) => OovPolicy::StubFallback {
                        seed: e.oov_seed.expect("validated"),
                    },
                    _ => OovPolicy::Zero,
                };
                Expert::Table(loaded.table.with_name(name.clone()).with_oov_policy(policy))
            }
        };
        experts.push(expert);
    }
    if experts.is_empty() {
        bail!("config defines no experts");
    }
    Ok(experts)
}

fn expert_names(experts: &[Expert]) -> Vec<String> {
    experts.iter().map(|e| e.name().to_string()).collect()
}

fn encode(experts: &[Expert], path: &Path) -> anyhow::Result<EncodedDataset> {
    let examples = load_dataset(path)?;
    if examples.is_empty() {
        bail!("{}: dataset has no examples", path.display());
    }
    Ok(encode_dataset(experts, &examples))
}

pub fn init_model(cfg: &ExperimentConfig, dims: &[usize]) -> anyhow::Result<Model> {
    let mut rng = Rng::new(cfg.experiment.seed);
    Ok(match cfg.activation() {
        Some(act) => Model::Lifa(LifaModel::init(&mut rng, dims, cfg.experiment.k, act)?),
        None => Model::Concat(ConcatModel::init(&mut rng, dims, cfg.experiment.k)?),
    })
}

fn load_matching_checkpoint(cfg: &ExperimentConfig, dims: &[usize]) -> anyhow::Result<Model> {
    let path = cfg.checkpoint_path();
    let model = load_checkpoint(&path)?;
    let mismatch = |what: String| anyhow!("checkpoint {} does not match config: {what}", path.display());
    if model.dims() != dims {
        return Err(mismatch(format!("expert dims {:?} vs {:?}", model.dims(), dims)));
    }
    if model.k() != cfg.experiment.k {
        return Err(mismatch(format!("k {} vs {}", model.k(), cfg.experiment.k)));
    }
    if model.activation() != cfg.activation() {
        return Err(mismatch(format!("gate {:?} vs {:?}", model.activation(), cfg.activation())));
    }
    Ok(model)
}

pub fn train_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let train_path = required(&cfg.experiment.train, "experiment.train")?;
    prepare_out(cfg)?;
    let experts = load_experts(cfg)?;
    let data = encode(&experts, train_path)?;
    let dims: Vec<usize> = experts.iter().map(Expert::dim).collect();
    let model = init_model(cfg, &dims)?;
    let outcome = train(model, &data.examples, &cfg.training_config()).map_err(anyhow::Error::from)?;
    save_checkpoint(&outcome.model, cfg.checkpoint_path()).map_err(anyhow::Error::from)?;
    artifacts::write(&cfg.experiment.out.join("epochs.log"), &epoch_log_to_string(&outcome.log))?;
    println!(
        "trained {} for {} epochs; best epoch {} with validation accuracy {}",
        cfg.variant(),
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_val_accuracy
    );
    Ok(())
}

pub fn eval_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let test_path = required(&cfg.experiment.test, "experiment.test")?;
    prepare_out(cfg)?;
    let experts = load_experts(cfg)?;
    let dims: Vec<usize> = experts.iter().map(Expert::dim).collect();
    let model = load_matching_checkpoint(cfg, &dims)?;
    let data = encode(&experts, test_path)?;
    let eval = evaluate(&model, &data.examples).map_err(anyhow::Error::from)?;
    let out = &cfg.experiment.out;
    let report = MetricsReport::new(cfg.variant().to_string(), expert_names(&experts), &eval, data.oov_tokens);
    artifacts::write(&out.join("metrics.txt"), &report.to_text())?;
    artifacts::write(&out.join("predictions.csv"), &artifacts::predictions_csv(&eval))?;
    if let Some(trace) = eval.gate_trace() {
        let summary = gate_summary(&trace, 10).map_err(anyhow::Error::from)?;
        artifacts::write(&out.join("gates.csv"), &GateTable::new(trace, &summary).to_text())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

pub fn gradcheck_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let train_path = required(&cfg.experiment.train, "experiment.train")?;
    prepare_out(cfg)?;
    let experts = load_experts(cfg)?;
    let data = encode(&experts, train_path)?;
    let gc = &cfg.gradcheck;
    let example = data.examples.get(gc.example).ok_or_else(|| {
        CliError::Usage(format!(
            "gradcheck.example = {} but the training set has {} examples",
            gc.example,
            data.examples.len()
        ))
    })?;
    let dims: Vec<usize> = experts.iter().map(Expert::dim).collect();
    let model = init_model(cfg, &dims)?;
    let coords = gc.max_coords.filter(|&m| m < model.num_params()).map(|m| {
        let mut all: Vec<usize> = (0..model.num_params()).collect();
        Rng::new(cfg.experiment.seed).shuffle(&mut all);
        let mut picked = all[..m].to_vec();
        picked.sort_unstable();
        picked
    });
    let report = gradient_check_coords(&model, example, gc.h, gc.tol, coords.as_deref()).map_err(anyhow::Error::from)?;
    let file = GradCheckFile::new(cfg.variant().to_string(), gc.h, &report);
    artifacts::write(&cfg.experiment.out.join("gradcheck.txt"), &file.to_text())?;
    print!("{}", file.to_text());
    if !file.passed {
        return Err(CliError::CheckFailed(format!(
            "gradient check failed: max relative error {} at {} exceeds {}",
            report.max_rel_error, report.worst_param, report.tol
        )));
    }
    Ok(())
}

pub fn gate_report_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let data_path = cfg
        .experiment
        .test
        .as_ref()
        .or(cfg.experiment.train.as_ref())
        .ok_or_else(|| CliError::Usage("config is missing `experiment.test`".into()))?;
    prepare_out(cfg)?;
    let experts = load_experts(cfg)?;
    let dims: Vec<usize> = experts.iter().map(Expert::dim).collect();
    let mut model = match load_matching_checkpoint(cfg, &dims)? {
        Model::Lifa(m) => m,
        Model::Concat(_) => return Err(CliError::Usage("gate-report needs a gated variant".into())),
    };
    let data = encode(&experts, data_path)?;
    let mut temperature = Vec::new();
    for &tau in &cfg.gate_report.taus {
        model.activation = GateActivation::softmax(tau).map_err(anyhow::Error::from)?;
        let trace = data
            .examples
            .iter()
            .map(|ex| model.forward(&ex.features).map(|t| t.alpha))
            .collect::<Result<Vec<_>, _>>()
            .map_err(anyhow::Error::from)?;
        let summary = gate_summary(&trace, cfg.gate_report.bins).map_err(anyhow::Error::from)?;
        println!("tau = {tau}: mean entropy {}", summary.mean_entropy);
        temperature.push(TemperatureEntry {
            tau,
            mean_entropy: summary.mean_entropy,
            mean_alpha: summary.mean_alpha,
            histogram: summary.histogram,
        });
    }
    let report = GateReport {
        experts: expert_names(&experts),
        examples: data.examples.len(),
        bins: cfg.gate_report.bins,
        temperature,
    };
    artifacts::write(&cfg.experiment.out.join("gate_report.txt"), &report.to_text())?;
    Ok(())
}

pub fn preprocess_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let p = &cfg.preprocess;
    let input = required(&p.input, "preprocess.input")?;
    prepare_out(cfg)?;
    let dictionary = match &p.dictionary {
        Some(path) => load_dictionary(path).map_err(anyhow::Error::from)?,
        None => default_dictionary(),
    };
    let config = PreprocessConfig {
        dictionary,
        steps: cfg.steps().into_iter().collect(),
        elongation_threshold: p.elongation_threshold,
    };
    let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let mut kept = String::new();
    let mut report = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    report.write_record(["line", "step", "changes", "drop"]).map_err(anyhow::Error::from)?;
    let (mut n_kept, mut n_dropped) = (0, 0);
    for (i, line) in text.lines().enumerate() {
        let out = run_pipeline(line, &config).map_err(anyhow::Error::from)?;
        for r in &out.reports {
            let drop = r.drop.map(|d| d.to_string()).unwrap_or_default();
            report
                .write_record([(i + 1).to_string(), r.step.to_string(), r.changes.to_string(), drop])
                .map_err(anyhow::Error::from)?;
        }
        match out.text {
            Some(t) => {
                kept.push_str(&t);
                kept.push('\n');
                n_kept += 1;
            }
            None => n_dropped += 1,
        }
    }
    let output = p.output.clone().unwrap_or_else(|| cfg.experiment.out.join("preprocessed.txt"));
    artifacts::write(&output, &kept)?;
    let report = String::from_utf8(report.into_inner().map_err(|e| anyhow!("{e}"))?).expect("utf-8");
    artifacts::write(&cfg.experiment.out.join("preprocess_report.tsv"), &report)?;
    println!("kept {n_kept} lines, dropped {n_dropped}; wrote {}", output.display());
    Ok(())
}

pub struct SynthOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub experts: usize,
    pub informative: usize,
}

/// Writes the planted-expert task as data files plus a ready-to-run config.
pub fn synth_cmd(o: &SynthOptions) -> CliResult<()> {
    if o.seed > i64::MAX as u64 {
        return Err(CliError::Usage("--seed must be below 2^63".into()));
    }
    if o.train_size < 100 || o.test_size < 1 {
        return Err(CliError::Usage("--train-size must be at least 100 and --test-size at least 1".into()));
    }
    let task = SyntheticTask::new(o.seed, SyntheticSpec::new(o.experts, o.informative))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&o.out).with_context(|| format!("cannot create {}", o.out.display()))?;
    write_dataset(&task.sample(o.train_size, o.seed.wrapping_add(1)), o.out.join("train.tsv")).map_err(anyhow::Error::from)?;
    write_dataset(&task.sample(o.test_size, o.seed.wrapping_add(2)), o.out.join("test.tsv")).map_err(anyhow::Error::from)?;
    let table_file = format!("{}.vec", expert_name(o.informative));
    write_embedding_file(task.informative_table(), o.out.join(&table_file)).map_err(anyhow::Error::from)?;
    let mut corpus = noisy_review_corpus(1000, o.seed).join("\n");
    corpus.push('\n');
    artifacts::write(&o.out.join("reviews.txt"), &corpus)?;

    let mut config = format!(
        "[experiment]\nvariant = \"SIGMOID\"\nseed = {}\ntrain = \"train.tsv\"\ntest = \"test.tsv\"\nout = \"run\"\n",
        o.seed
    );
    for (i, seed) in task.stub_seeds.iter().enumerate() {
        config.push_str(&format!("\n[[expert]]\nname = \"{}\"\n", expert_name(i)));
        match seed {
            Some(s) => config.push_str(&format!("kind = \"stub\"\nseed = {s}\ndim = {}\n", task.spec.dim)),
            None => config.push_str(&format!("kind = \"file\"\npath = \"{table_file}\"\n")),
        }
    }
    config.push_str("\n[preprocess]\ninput = \"reviews.txt\"\n");
    artifacts::write(&o.out.join("config.toml"), &config)?;
    println!("wrote synthetic task to {}", o.out.display());
    Ok(())
}
