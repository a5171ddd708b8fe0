// Fit on the Boston housing data, save the model, reload it and predict
// with 90% intervals.

use std::collections::HashMap;
use std::error::Error;

use horserule::data::load_csv;
use horserule::inference::{predict, PredictOptions};
use horserule::model::{fit, FitConfig};
use horserule::model_file::{read_model, write_model};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/boston.csv");
    let data = load_csv(path, "medv", &HashMap::new())?;

    let mut cfg = FitConfig::default();
    cfg.trees.ntree = 100;
    cfg.gibbs.niter = 400;
    cfg.gibbs.burnin = 100;
    let model = fit(&data, &cfg)?;
    println!(
        "{} rules + {} linear terms, {} draws",
        model.rules.len(),
        model.n_columns() - model.rules.len(),
        model.draws.n_draws()
    );

    let dir = std::env::temp_dir().join(format!("horserule-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let file = dir.join("boston.hr");
    write_model(&model, &file)?;
    let back = read_model(&file)?;
    std::fs::remove_dir_all(&dir)?;

    let opts = PredictOptions {
        interval: Some(0.9),
        ..PredictOptions::default()
    };
    let pred = predict(&back, data.x.as_ref(), &opts)?;
    let (lo, hi) = (pred.lower.as_ref().unwrap(), pred.upper.as_ref().unwrap());
    println!("row  observed  predicted  [5%, 95%]");
    for i in 0..5 {
        println!("{i:>3}  {:>8.2}  {:>9.2}  [{:.2}, {:.2}]", data.y[i], pred.mean[i], lo[i], hi[i]);
    }
    let covered = (0..data.n_rows()).filter(|&i| lo[i] <= pred.mean[i] && pred.mean[i] <= hi[i]).count();
    assert_eq!(covered, data.n_rows());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
