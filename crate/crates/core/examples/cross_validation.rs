// Five-fold cross-validation of the standard and rule-structured priors
// against least squares, with RRMSE per fold.

use std::collections::HashMap;
use std::error::Error;

use horserule::data::load_csv;
use horserule::experiments::{cross_validate, CvCandidate};
use horserule::model::FitConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/boston.csv");
    let data = load_csv(path, "medv", &HashMap::new())?;

    let mut structured = FitConfig::default();
    structured.trees.ntree = 60;
    structured.gibbs.niter = 250;
    structured.gibbs.burnin = 50;
    let standard = FitConfig {
        mu: 0.0,
        eta: 0.0,
        ..structured.clone()
    };
    let candidates = vec![
        CvCandidate::horserule("mu=1,eta=2", structured),
        CvCandidate::horserule("mu=0,eta=0", standard),
        CvCandidate::ols(),
    ];
    let report = cross_validate(&data, &candidates, 5, 1, 42)?;
    report.write_summary(std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
