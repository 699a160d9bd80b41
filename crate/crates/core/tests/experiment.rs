mod common;

use common::*;
use hib_mtl::experiment::*;
use hib_mtl::model::{init_model, ModelDims, MtlModel};

fn settings(json: &str, out: &std::path::Path) -> Settings {
    let mut c = ExperimentConfig::from_json(json).unwrap();
    c.out_dir = Some(out.to_path_buf());
    c.data_dir = Some(mnist_dir());
    c.resolve().unwrap()
}

#[test]
fn gauss_ib_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(r#"{"kind":"gauss-ib","betas":[0.05,0.5,2.0]}"#, dir.path());
    cmd_gauss_ib(&s).unwrap();
    let first = std::fs::read(dir.path().join("gauss_ib.json")).unwrap();
    cmd_gauss_ib(&s).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("gauss_ib.json")).unwrap());

    // beta = 2 exceeds 1 / (1 - 0.4), the largest informative lambda: every variance is infinite.
    let report: GaussIbReport = serde_json::from_slice(&first).unwrap();
    let last = &report.entries[2];
    assert!(last.solutions.iter().all(|s| s.noise_variances.iter().all(|v| v.is_infinite())));
    assert!(String::from_utf8(first).unwrap().contains("\"inf\""));
}

#[test]
fn gauss_ib_reads_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("tasks.json");
    std::fs::write(
        &spec_path,
        r#"[{"dim_x":2,"c_x":[[1,0],[0,1]],"c_x_given_y":[[0.2,0],[0,1]]},
            {"dim_x":2,"c_x":[[1,0],[0,1]],"c_x_given_y":[[1,0],[0,0.5]]}]"#,
    )
    .unwrap();
    let mut s = settings(r#"{"kind":"gauss-ib","betas":[0.4],"latent_dim":2}"#, dir.path());
    s.gaussian_spec = Some(spec_path);
    let report = cmd_gauss_ib(&s).unwrap();
    let e = &report.entries[0];
    assert_eq!(e.masks.as_ref().unwrap(), &vec![vec![true, false], vec![false, true]]);
    // lambda = 0.2, beta = 0.4 and unit quadratic form give alpha = 5.
    assert!((e.solutions[0].alphas[0] - 5.0).abs() < 1e-12);
    assert!((e.stacked.as_ref().unwrap().task_noise[0][0] - 0.2).abs() < 1e-12);
}

#[test]
fn zero_epoch_training_saves_the_initial_model() {
    let Some(mnist) = mnist_splits() else { return };
    let dir = tempfile::tempdir().unwrap();
    let s = settings(r#"{"kind":"grouped","epochs":0,"seed":4}"#, dir.path());
    let out = cmd_train(&s, &mnist, &|_| {}).unwrap();
    let saved = MtlModel::load_checkpoint(&dir.path().join("checkpoint.json")).unwrap();
    let init = init_model(&ModelDims::mnist_mlp(4, vec![4; 4]), 0.1, true, 4).unwrap();
    assert_eq!(saved, init);
    assert!(out.history.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.ndjson")).unwrap(), "");
}

#[test]
fn training_reruns_are_byte_identical() {
    let Some(mnist) = mnist_splits() else { return };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(r#"{"kind":"multimnist","epochs":1,"seed":2}"#, dir.path());
        cmd_train(&s, &mnist, &|_| {}).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        (read("metrics.ndjson"), read("checkpoint.json"))
    };
    let (m1, c1) = run();
    let (m2, c2) = run();
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    let record: serde_json::Value = serde_json::from_slice(m1.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(record["epoch"], 1);
    assert_eq!(record["test_accuracy"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_rows_do_not_depend_on_execution_order() {
    let Some(mnist) = mnist_splits() else { return };
    let sweep = |betas: &str, threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let s = settings(&format!(r#"{{"kind":"sweep","epochs":1,"betas":{betas}}}"#), dir.path());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let rows = pool.install(|| cmd_sweep(&s, &mnist)).unwrap();
        assert!(dir.path().join("sweep.csv").exists());
        rows
    };
    let serial = sweep("[0.0, 0.1]", 1);
    let parallel = sweep("[0.1, 0.0]", 3);
    assert_eq!(serial.len(), 2);
    for row in &serial {
        let twin = parallel.iter().find(|r| r.beta == row.beta).unwrap();
        assert_eq!(row.test_accuracy, twin.test_accuracy);
        assert_eq!(row.log_vars, twin.log_vars);
    }
    let csv = sweep_csv(&serial).unwrap();
    assert!(csv.starts_with("beta,noise,\"acc_[2,9,4]\","), "{csv}");
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ablation_summary_matches_schema() {
    let Some(mnist) = mnist_splits() else { return };
    let dir = tempfile::tempdir().unwrap();
    let s = settings(r#"{"kind":"ablation","epochs":1,"n_trials":1,"seed":3}"#, dir.path());
    let summary = cmd_ablate(&s, &mnist).unwrap();
    let row = &summary.rows[0];
    assert!([0.0, 100.0].contains(&row.trainable_noise_rate));
    assert!([0.0, 100.0].contains(&row.fixed_noise_rate));
    assert_eq!(summary.trials.len(), 2);

    let schema: serde_json::Value = serde_json::from_str(ABLATION_SUMMARY_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("ablation.json")).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&written).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = written.clone();
    broken["rows"][0]["trainable_noise_rate"] = serde_json::json!(140.0);
    assert!(!validator.is_valid(&broken));
}
