use amalgam_core::checkpoint::{checkpoint_to_string, parse_checkpoint};
use amalgam_core::experts::{load_embedding_file, write_embedding_file, Expert};
use amalgam_core::fusion::{GateActivation, LifaModel, Model};
use amalgam_core::numeric::Rng;
use amalgam_core::synthetic::{SyntheticSpec, SyntheticTask};
use amalgam_core::training::{encode_dataset, evaluate, load_dataset, train, write_dataset, TrainingConfig};

fn task() -> SyntheticTask {
    SyntheticTask::new(21, SyntheticSpec::new(3, 1)).unwrap()
}

#[test]
fn sigmoid_lifa_learns_planted_expert() {
    let task = task();
    let train_set = encode_dataset(&task.experts, &task.sample(2000, 1));
    let test_set = encode_dataset(&task.experts, &task.sample(1000, 2));
    let model = Model::Lifa(LifaModel::init(&mut Rng::new(3), &[8, 8, 8], 64, GateActivation::Sigmoid).unwrap());
    let out = train(model, &train_set.examples, &TrainingConfig { seed: 5, ..Default::default() }).unwrap();
    assert!(out.log.len() <= 30);
    let eval = evaluate(&out.model, &test_set.examples).unwrap();
    assert!(eval.metrics.accuracy >= 0.95, "{:?}", eval.metrics);
    let gates = eval.gate_trace().unwrap();
    let mean = |i: usize| gates.iter().map(|a| a[i]).sum::<f64>() / gates.len() as f64;
    assert!(mean(1) > mean(0) && mean(1) > mean(2), "{} {} {}", mean(0), mean(1), mean(2));
}

#[test]
fn training_is_bitwise_reproducible() {
    let task = task();
    let data = encode_dataset(&task.experts, &task.sample(300, 9));
    let run = || {
        let model = Model::Lifa(LifaModel::init(&mut Rng::new(4), &[8, 8, 8], 16, GateActivation::softmax(10.0).unwrap()).unwrap());
        let cfg = TrainingConfig { seed: 2, max_epochs: 4, ..Default::default() };
        let out = train(model, &data.examples, &cfg).unwrap();
        (checkpoint_to_string(&out.model), out.log)
    };
    assert_eq!(run(), run());
}

#[test]
fn saved_artifacts_reload_to_same_evaluation() {
    let task = task();
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("train.tsv");
    write_dataset(&task.sample(200, 4), &data_path).unwrap();
    let table_path = dir.path().join("expert1.vec");
    write_embedding_file(task.informative_table(), &table_path).unwrap();

    let loaded = load_embedding_file(&table_path).unwrap();
    assert_eq!(loaded.duplicates, 0);
    assert_eq!(&loaded.table.clone().with_name("expert1"), task.informative_table());
    let mut experts = task.experts.clone();
    experts[1] = Expert::Table(loaded.table);

    let examples = load_dataset(&data_path).unwrap();
    assert_eq!(examples, task.sample(200, 4));
    let data = encode_dataset(&experts, &examples);
    assert_eq!(data, encode_dataset(&task.experts, &examples));

    let model = Model::Lifa(LifaModel::init(&mut Rng::new(1), &[8, 8, 8], 8, GateActivation::Sigmoid).unwrap());
    let out = train(model, &data.examples, &TrainingConfig { max_epochs: 3, ..Default::default() }).unwrap();
    let text = checkpoint_to_string(&out.model);
    let back = parse_checkpoint(&text, std::path::Path::new("m.ckpt")).unwrap();
    assert_eq!(evaluate(&back, &data.examples).unwrap(), evaluate(&out.model, &data.examples).unwrap());
}
