// Sparse summaries of a posterior-mean fit along a penalty path.

use std::collections::HashMap;
use std::error::Error;

use horserule::data::load_csv;
use horserule::dss::{dss_path, dss_summarize, write_dss};
use horserule::inference::rule_importance;
use horserule::model::{fit, FitConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/boston.csv");
    let data = load_csv(path, "medv", &HashMap::new())?;
    let mut cfg = FitConfig::default();
    cfg.trees.ntree = 80;
    cfg.gibbs.niter = 300;
    cfg.gibbs.burnin = 100;
    let model = fit(&data, &cfg)?;
    let z = model.design(data.x.as_ref())?;

    println!("lambda      nonzero  fit gap");
    for s in dss_path(&model, z.as_ref(), 12, 1e-2)? {
        println!("{:<10.4}  {:>7}  {:.4}", s.lambda, s.nonzero_count, s.fit_gap);
    }

    let s = dss_summarize(&model, z.as_ref(), 0.05)?;
    println!("\nlambda 0.05 keeps {} of {} terms:", s.nonzero_count, model.n_columns());
    write_dss(&model, &rule_importance(&model), &s, std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
