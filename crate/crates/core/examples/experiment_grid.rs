//! A reduced design x scenario x hyperparameter grid with a resumable
//! ledger, on synthetic sign-task datasets.

use infoflow::dataset::{Scenario, SplitRanges, SupervisedDataset};
use infoflow::experiment::{run_experiment, Design, ExperimentPlan, HyperGrid, Part};
use infoflow::net::{NetworkSpec, Preset};
use infoflow::oracle::sign_task;

fn dataset(seed: u64) -> SupervisedDataset {
    let (windows, labels) = sign_task(300, 16, seed);
    SupervisedDataset {
        windows,
        labels,
        feature_names: vec!["x".into()],
        label_dates: Vec::new(),
        window: 16,
        horizon: 1,
        split: Some(SplitRanges { train: 0..200, val: 200..250, test: 250..300 }),
        scale: None,
    }
}

fn main() -> infoflow::Result<()> {
    let plan = ExperimentPlan {
        designs: vec![
            Design::preset(Preset::D5),
            Design { name: "small".into(), spec: NetworkSpec::parse("lstm(8) dropout(0.5) dense(1,sigmoid)")? },
        ],
        scenarios: vec![Scenario::S1, Scenario::S2],
        grid: HyperGrid { batch: vec![32], learning_rate: vec![0.01, 0.001], dropout: vec![0.3], seeds: 2 },
        max_epochs: 10,
        patience: 3,
        master_seed: 1,
    };
    let data = vec![(Scenario::S1, dataset(1)), (Scenario::S2, dataset(2))];
    let dir = std::env::temp_dir().join("infoflow-experiment-grid");
    std::fs::create_dir_all(&dir).map_err(|e| infoflow::Error::io(&dir, e))?;
    let ledger = dir.join("runs.tsv");
    // Start clean so the second call shows the resume.
    let _ = std::fs::remove_file(&ledger);
    let first = run_experiment(&plan, &data, Some(&ledger), "example")?;
    let again = run_experiment(&plan, &data, Some(&ledger), "example")?;
    println!("{} runs; trained {} then {}", first.runs.len(), first.trained, again.trained);
    print!("{}", again.table(Part::Validation, None));
    print!("{}", again.table(Part::Test, None));
    Ok(())
}
