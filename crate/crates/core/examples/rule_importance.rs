// The ten most important rules and the covariate ranking on Boston.

use std::collections::HashMap;
use std::error::Error;

use horserule::data::load_csv;
use horserule::inference::{rule_importance, variable_importance, write_importance, write_variable_importance};
use horserule::model::{fit, FitConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/boston.csv");
    let data = load_csv(path, "medv", &HashMap::new())?;
    let mut cfg = FitConfig::default();
    cfg.trees.ntree = 100;
    cfg.gibbs.niter = 400;
    cfg.gibbs.burnin = 100;
    let model = fit(&data, &cfg)?;

    let imp = rule_importance(&model);
    let top: Vec<_> = imp.ranked().into_iter().take(10).collect();
    println!("most important terms:");
    write_importance(&top, std::io::stdout())?;

    let vi = variable_importance(&model);
    println!("\ncovariates:");
    write_variable_importance(&vi.ranked(), std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
