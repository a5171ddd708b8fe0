// Activation matrix of the top rules, with coefficient signs and outcomes.

use std::collections::HashMap;
use std::error::Error;

use horserule::data::load_csv;
use horserule::inference::ruleheat_export;
use horserule::model::{fit, FitConfig, LinearTerms};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/boston.csv");
    let data = load_csv(path, "medv", &HashMap::new())?;
    let mut cfg = FitConfig::default();
    cfg.trees.ntree = 80;
    cfg.gibbs.niter = 300;
    cfg.gibbs.burnin = 100;
    // Rules only, so every heat-map column is a rule.
    cfg.linear = LinearTerms::None;
    let model = fit(&data, &cfg)?;

    let heat = ruleheat_export(&model, data.x.as_ref(), &data.y, 8)?;
    print!("{}", heat.legend());
    let mut buf = Vec::new();
    heat.write_csv(&mut buf)?;
    let text = String::from_utf8(buf)?;
    for line in text.lines().take(8) {
        println!("{line}");
    }
    println!("... ({} rows)", data.n_rows());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
