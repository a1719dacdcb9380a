//! Datasets, mini-batch training with early stopping, metrics and the
//! gradient-check harness.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experts::{Expert, TokenSequence};
use crate::fusion::Model;
use crate::numeric::{entropy, finite_diff_coord, relative_error, softmax2, AdamConfig, AdamState, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: TokenSequence,
    /// 1 = positive, 0 = negative.
    pub label: usize,
}

impl Example {
    pub fn new(text: TokenSequence, label: usize) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Example { text, label })
    }
}

/// Parses `label<TAB>text` lines; blank lines are skipped.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `label<TAB>text`"))?;
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(path, line_no, format!("label must be 0 or 1, found {other:?}"))),
        };
        let tokens = TokenSequence::from_text(body).map_err(|_| Error::parse(path, line_no, "example has no tokens"))?;
        out.push(Example { text: tokens, label });
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn dataset_to_string(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        writeln!(out, "{}\t{}", ex.label, ex.text.to_text()).unwrap();
    }
    out
}

pub fn write_dataset(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(examples)).map_err(|e| Error::io(path, e))
}

/// An example reduced to one pooled vector per expert.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub features: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub examples: Vec<EncodedExample>,
    /// Out-of-vocabulary token count per expert.
    pub oov_tokens: Vec<usize>,
}

/// Pools every example through every expert.
pub fn encode_dataset(experts: &[Expert], examples: &[Example]) -> EncodedDataset {
    let mut oov_tokens = vec![0; experts.len()];
    let examples = examples
        .iter()
        .map(|ex| {
            let features = experts
                .iter()
                .zip(oov_tokens.iter_mut())
                .map(|(expert, oov)| {
                    let pooled = expert.embed_and_pool(&ex.text);
                    *oov += pooled.oov;
                    pooled.vector
                })
                .collect();
            EncodedExample {
                features,
                label: ex.label,
            }
        })
        .collect();
    EncodedDataset { examples, oov_tokens }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 8,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_epochs and patience must be at least 1".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation accuracy (earliest on ties).
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Seeded stratified split; returns `(train, validation)` index lists in
/// ascending order.
pub fn stratified_split(labels: &[usize], val_fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub fn accuracy(model: &Model, examples: &[&EncodedExample]) -> Result<f64> {
    let mut correct = 0;
    for ex in examples {
        if predicted_class(model.logits(&ex.features)?) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn predicted_class(logits: [f64; 2]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Mini-batch Adam training with early stopping on validation accuracy.
pub fn train(mut model: Model, data: &[EncodedExample], config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let labels: Vec<usize> = data.iter().map(|ex| ex.label).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::Dataset("training set contains a single class".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut split_rng = rng.fork();
    let mut shuffle_rng = rng.fork();
    let (mut train_idx, val_idx) = stratified_split(&labels, config.val_fraction, &mut split_rng);
    if val_idx.is_empty() {
        return Err(Error::Dataset("validation split is empty; need more examples".into()));
    }
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    if !train_labels.contains(&0) || !train_labels.contains(&1) {
        return Err(Error::Dataset("training split contains a single class".into()));
    }
    let val: Vec<&EncodedExample> = val_idx.iter().map(|&i| &data[i]).collect();

    let mut adam = AdamState::new(model.num_params(), config.adam);
    let mut params = model.params_flat();
    let mut grad = vec![0.0; params.len()];
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::new();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut train_idx);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &data[i];
                loss_sum += model.backward_into(&ex.features, ex.label, scale, &mut grad)?;
            }
            adam.update(&mut params, &grad)?;
            model.set_params_flat(&params)?;
        }
        let val_accuracy = accuracy(&model, &val)?;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best.2 {
            best = (model.clone(), epoch, val_accuracy);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        log,
        best_epoch: best.1,
        best_val_accuracy: best.2,
    })
}

pub fn epoch_log_to_string(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_accuracy\n");
    for r in log {
        writeln!(out, "{}\t{}\t{}", r.epoch, r.train_loss, r.val_accuracy).unwrap();
    }
    out
}

pub fn parse_epoch_log(text: &str, path: &Path) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch\ttrain_loss\tval_accuracy")) => {}
        _ => return Err(Error::parse(path, 1, "missing epoch log header")),
    }
    lines
        .map(|(i, line)| {
            let bad = || Error::parse(path, i + 1, format!("malformed epoch record {line:?}"));
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [e, l, a] => Ok(EpochRecord {
                    epoch: e.parse().map_err(|_| bad())?,
                    train_loss: l.parse().map_err(|_| bad())?,
                    val_accuracy: a.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn from_pairs(labels: &[usize], predicted: &[usize]) -> Self {
        let mut c = Counts::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, _) => c.tn += 1,
                _ => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Positive-class F1, `2TP / (2TP + FP + FN)`; zero when undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `None` when the evaluation set holds only one class.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub counts: Counts,
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Exact pairwise count.
pub fn compute_auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::InvalidArgument("AUC needs at least one positive and one negative score".into()));
    }
    let mut concordant = 0usize;
    let mut ties = 0usize;
    for &p in scores_pos {
        for &n in scores_neg {
            if p > n {
                concordant += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    Ok((concordant as f64 + 0.5 * ties as f64) / (scores_pos.len() * scores_neg.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub predicted: usize,
    /// Softmax probability of the positive class.
    pub score: f64,
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    /// Gate weights per example, when the model has a gate.
    pub fn gate_trace(&self) -> Option<Vec<Vec<f64>>> {
        self.predictions.iter().map(|p| p.alpha.clone()).collect()
    }
}

pub fn metrics_from_predictions(predictions: &[Prediction]) -> Metrics {
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let counts = Counts::from_pairs(&labels, &predicted);
    let pos: Vec<f64> = predictions.iter().filter(|p| p.label == 1).map(|p| p.score).collect();
    let neg: Vec<f64> = predictions.iter().filter(|p| p.label == 0).map(|p| p.score).collect();
    Metrics {
        auc: compute_auc(&pos, &neg).ok(),
        accuracy: counts.accuracy(),
        f1: counts.f1(),
        counts,
    }
}

pub fn evaluate(model: &Model, data: &[EncodedExample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let predictions = data
        .iter()
        .map(|ex| {
            let (logits, alpha) = model.predict(&ex.features)?;
            Ok(Prediction {
                label: ex.label,
                predicted: predicted_class(logits),
                score: softmax2(logits)[1],
                alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        metrics: metrics_from_predictions(&predictions),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSummary {
    pub mean_alpha: Vec<f64>,
    /// Mean Shannon entropy (nats) of α normalized to sum to one.
    pub mean_entropy: f64,
    /// Per expert, counts of α over equal-width bins on [0, 1].
    pub histogram: Vec<Vec<usize>>,
}

pub fn gate_summary(trace: &[Vec<f64>], bins: usize) -> Result<GateSummary> {
    let n = match trace.first() {
        Some(a) => a.len(),
        None => return Err(Error::InvalidArgument("gate trace is empty".into())),
    };
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut mean_alpha = vec![0.0; n];
    let mut entropy_sum = 0.0;
    let mut histogram = vec![vec![0; bins]; n];
    for alpha in trace {
        if alpha.len() != n {
            return Err(Error::LengthMismatch { context: "gate trace", expected: n, got: alpha.len() });
        }
        let total: f64 = alpha.iter().sum();
        let normalized: Vec<f64> = alpha.iter().map(|a| a / total).collect();
        entropy_sum += entropy(&normalized);
        for (i, &a) in alpha.iter().enumerate() {
            mean_alpha[i] += a;
            let bin = ((a * bins as f64) as usize).min(bins - 1);
            histogram[i][bin] += 1;
        }
    }
    let count = trace.len() as f64;
    mean_alpha.iter_mut().for_each(|m| *m /= count);
    Ok(GateSummary {
        mean_alpha,
        mean_entropy: entropy_sum / count,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares `analytic` against central differences of `loss` at the given
/// coordinates (all of them when `coords` is `None`).
pub fn compare_gradients<F>(
    params: &[f64],
    mut loss: F,
    analytic: &[f64],
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
    name_of: impl Fn(usize) -> String,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::LengthMismatch {
            context: "compare_gradients",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        tol,
    };
    for &k in coords {
        let numeric = finite_diff_coord(&mut loss, &mut probe, k, h);
        let err = relative_error(analytic[k], numeric);
        if report.checked == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = k;
            report.analytic = analytic[k];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report.worst_param = name_of(report.worst_index);
    Ok(report)
}

/// Checks `backward` against finite differences over every parameter.
pub fn gradient_check(model: &Model, example: &EncodedExample, h: f64, tol: f64) -> Result<GradCheckReport> {
    gradient_check_coords(model, example, h, tol, None)
}

pub fn gradient_check_coords(
    model: &Model,
    example: &EncodedExample,
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    let mut analytic = vec![0.0; model.num_params()];
    model.backward_into(&example.features, example.label, 1.0, &mut analytic)?;
    let mut probe_model = model.clone();
    let loss = |p: &[f64]| {
        probe_model.set_params_flat(p).expect("parameter count is fixed");
        probe_model
            .loss(&example.features, example.label)
            .expect("shapes validated by backward")
    };
    compare_gradients(&model.params_flat(), loss, &analytic, h, tol, coords, |i| model.param_name(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ConcatModel, GateActivation, LifaModel};
    use proptest::prelude::*;
    use crate::numeric::Rng;

    fn encoded(rng: &mut Rng, dims: &[usize], label: usize, shift: f64) -> EncodedExample {
        EncodedExample {
            features: dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.uniform(-1.0, 1.0) + shift).collect())
                .collect(),
            label,
        }
    }

    fn separable(n: usize, seed: u64) -> Vec<EncodedExample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                encoded(&mut rng, &[3, 2], label, if label == 1 { 1.5 } else { -1.5 })
            })
            .collect()
    }

    fn lifa(seed: u64) -> Model {
        Model::Lifa(LifaModel::init(&mut Rng::new(seed), &[3, 2], 4, GateActivation::Sigmoid).unwrap())
    }

    #[test]
    fn parse_dataset_lines() {
        let data = parse_dataset("1\tgiao hàng nhanh\n\n0\tchán\r\n", Path::new("d.tsv")).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].label, 1);
        assert_eq!(data[0].text.tokens(), &["giao", "hàng", "nhanh"]);
        assert_eq!(dataset_to_string(&data), "1\tgiao hàng nhanh\n0\tchán\n");
        let err = parse_dataset("1\tok\n2\tbad\n", Path::new("d.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(parse_dataset("1 no tab\n", Path::new("d")).unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(parse_dataset("0\t  \n", Path::new("d")).unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_auc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert_eq!(compute_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.5; 3], &[0.5; 4]).unwrap(), 0.5);
        assert!(compute_auc(&[], &[0.1]).is_err());
        assert!(compute_auc(&[0.1], &[]).is_err());
    }

    #[test]
    fn f1_and_accuracy_from_counts() {
        let c = Counts { tp: 2, fp: 1, tn: 0, fn_: 1 };
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.accuracy(), 0.5);
        let all_right = Counts::from_pairs(&[1, 0, 1, 0], &[1, 0, 1, 0]);
        assert_eq!((all_right.accuracy(), all_right.f1()), (1.0, 1.0));
        assert_eq!(Counts::from_pairs(&[0, 0], &[0, 0]).f1(), 0.0);
    }

    #[test]
    fn train_rejects_degenerate_data() {
        let cfg = TrainingConfig::default();
        assert!(matches!(train(lifa(0), &[], &cfg), Err(Error::Dataset(_))));
        let mut one_class = separable(40, 1);
        one_class.iter_mut().for_each(|e| e.label = 1);
        assert!(matches!(train(lifa(0), &one_class, &cfg), Err(Error::Dataset(_))));
        let bad = TrainingConfig { batch_size: 0, ..cfg };
        assert!(train(lifa(0), &separable(40, 1), &bad).is_err());
        let bad = TrainingConfig { val_fraction: 1.0, ..cfg };
        assert!(train(lifa(0), &separable(40, 1), &bad).is_err());
    }

    #[test]
    fn train_is_deterministic_and_learns() {
        let data = separable(200, 3);
        let cfg = TrainingConfig { max_epochs: 10, seed: 9, ..TrainingConfig::default() };
        let a = train(lifa(1), &data, &cfg).unwrap();
        let b = train(lifa(1), &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.best_val_accuracy >= 0.95, "{:?}", a.log);
    }

    #[test]
    fn early_stopping_keeps_best_checkpoint() {
        let mut rng = Rng::new(5);
        // Pure noise labels so validation accuracy fluctuates.
        let data: Vec<_> = (0..120).map(|i| encoded(&mut rng, &[3, 2], i % 2, 0.0)).collect();
        let cfg = TrainingConfig { max_epochs: 30, patience: 2, seed: 4, ..TrainingConfig::default() };
        let out = train(lifa(2), &data, &cfg).unwrap();
        let best_logged = out.log.iter().map(|r| r.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val_accuracy, best_logged);
        let first_best = out.log.iter().find(|r| r.val_accuracy == best_logged).unwrap();
        assert_eq!(out.best_epoch, first_best.epoch);
        let after_best = out.log.len() - out.best_epoch;
        assert!(after_best <= cfg.patience);

        // Re-derive the validation split and recheck the returned model.
        let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
        let mut rng = Rng::new(cfg.seed);
        let (_, val_idx) = stratified_split(&labels, cfg.val_fraction, &mut rng.fork());
        let val: Vec<&EncodedExample> = val_idx.iter().map(|&i| &data[i]).collect();
        assert_eq!(accuracy(&out.model, &val).unwrap(), best_logged);
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 30)).collect();
        let (train, val) = stratified_split(&labels, 0.1, &mut Rng::new(1));
        assert_eq!(val.len(), 10);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 3);
        assert_eq!(train.len() + val.len(), 100);
    }

    #[test]
    fn epoch_log_round_trip() {
        let log = vec![
            EpochRecord { epoch: 1, train_loss: std::f64::consts::LN_2, val_accuracy: 0.5 },
            EpochRecord { epoch: 2, train_loss: 1.0 / 3.0, val_accuracy: 0.95 },
        ];
        let text = epoch_log_to_string(&log);
        assert_eq!(parse_epoch_log(&text, Path::new("log")).unwrap(), log);
        assert!(parse_epoch_log("nope\n", Path::new("log")).is_err());
    }

    #[test]
    fn evaluate_reports_gate_weights() {
        let data = separable(20, 8);
        let eval = evaluate(&lifa(3), &data).unwrap();
        assert_eq!(eval.predictions.len(), 20);
        assert!(eval.gate_trace().unwrap().iter().all(|a| a.len() == 2));
        let concat = Model::Concat(ConcatModel::init(&mut Rng::new(1), &[3, 2], 4).unwrap());
        assert!(evaluate(&concat, &data).unwrap().gate_trace().is_none());
        assert!(evaluate(&concat, &[]).is_err());
    }

    #[test]
    fn gradient_check_fresh_model() {
        let mut rng = Rng::new(17);
        let example = encoded(&mut rng, &[3, 2], 1, 0.0);
        for activation in [GateActivation::Sigmoid, GateActivation::softmax(0.5).unwrap()] {
            let model = Model::Lifa(LifaModel::init(&mut rng, &[3, 2], 4, activation).unwrap());
            let report = gradient_check(&model, &example, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{report:?}");
            assert_eq!(report.checked, model.num_params());
        }
    }

    #[test]
    fn gradient_check_flags_corrupted_gate_jacobian() {
        let mut rng = Rng::new(23);
        let model = LifaModel::init(&mut rng, &[3, 2], 4, GateActivation::softmax(0.5).unwrap()).unwrap();
        let example = encoded(&mut rng, &[3, 2], 0, 0.0);
        // Drops the −ααᵀ term of the softmax Jacobian.
        let broken = |alpha: &[f64], d: &[f64]| -> Vec<f64> {
            alpha.iter().zip(d).map(|(a, g)| a * g / 0.5).collect()
        };
        let mut analytic = vec![0.0; model.num_params()];
        model
            .backward_with_gate_vjp(&example.features, 0, 1.0, &mut analytic, &broken)
            .unwrap();
        let mut probe = model.clone();
        let report = compare_gradients(
            &model.params_flat(),
            |p| {
                probe.set_params_flat(p).unwrap();
                probe.loss(&example.features, 0).unwrap()
            },
            &analytic,
            1e-5,
            1e-4,
            None,
            |i| model.param_name(i),
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
        assert!(!report.passed());
    }

    #[test]
    fn zero_input_gives_zero_projection_gradients() {
        let model = LifaModel::init(&mut Rng::new(2), &[3, 2], 4, GateActivation::Sigmoid).unwrap();
        let grads = model.backward(&[vec![0.0; 3], vec![0.0; 2]], 1).unwrap();
        for p in &grads.projections {
            assert!(p.as_slice().iter().all(|&g| g == 0.0));
        }
        let report = gradient_check(
            &Model::Lifa(model),
            &EncodedExample { features: vec![vec![0.0; 3], vec![0.0; 2]], label: 1 },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
    }

    #[test]
    fn gate_summary_counts() {
        let trace = vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![0.2, 0.6]];
        let s = gate_summary(&trace, 4).unwrap();
        assert!((s.mean_alpha[0] - 1.7 / 3.0).abs() < 1e-12);
        let expected = (2f64.ln() + 0.0 + (-(0.25f64.ln()) * 0.25 - 0.75 * 0.75f64.ln())) / 3.0;
        assert!((s.mean_entropy - expected).abs() < 1e-12);
        assert_eq!(s.histogram, vec![vec![1, 0, 1, 1], vec![1, 0, 2, 0]]);
        assert!(gate_summary(&[], 4).is_err());
        assert!(gate_summary(&trace, 0).is_err());
    }

    #[test]
    fn gradient_check_rejects_bad_step() {
        let mut rng = Rng::new(1);
        let example = encoded(&mut rng, &[3, 2], 1, 0.0);
        assert!(gradient_check(&lifa(1), &example, 0.0, 1e-4).is_err());
    }

    fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
        // Rank-sum formulation with midranks, independent of pair counting.
        let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut rank_sum = 0.0;
        let mut i = 0;
        while i < all.len() {
            let mut j = i;
            while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * mid;
            i = j + 1;
        }
        let (p, n) = (pos.len() as f64, neg.len() as f64);
        (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
    }

    proptest! {
        #[test]
        fn auc_matches_rank_sum(
            pos in prop::collection::vec(0u8..20, 1..25),
            neg in prop::collection::vec(0u8..20, 1..25),
        ) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            prop_assert!((compute_auc(&pos, &neg).unwrap() - brute_auc(&pos, &neg)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            pos in prop::collection::vec(-5.0f64..5.0, 1..20),
            neg in prop::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            let f = |v: &f64| (v * 0.7).exp() + 3.0 * v;
            let a = compute_auc(&pos, &neg).unwrap();
            let b = compute_auc(&pos.iter().map(f).collect::<Vec<_>>(), &neg.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_consistent_with_counts(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60)) {
            let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let c = Counts::from_pairs(&labels, &predicted);
            prop_assert_eq!(c.total(), pairs.len());
            let correct = pairs.iter().filter(|p| p.0 == p.1).count();
            prop_assert_eq!(c.accuracy(), correct as f64 / pairs.len() as f64);
            let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
            let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            prop_assert!((c.f1() - f1).abs() < 1e-12);
        }
    }
}
