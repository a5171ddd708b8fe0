// Linear signal recovery: y = 5x1 + 3x2 + x3 + x4 + x5 + noise with 20
// covariates, rules added on top of the linear terms.

use std::error::Error;

use horserule::experiments::{simulate, SimulationSettings};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut s = SimulationSettings {
        n: 300,
        p: 20,
        reps: 2,
        n_test: 500,
        ..SimulationSettings::default()
    };
    s.fit.trees.ntree = 60;
    s.fit.max_rules = Some(150);
    s.fit.gibbs.niter = 400;
    s.fit.gibbs.burnin = 100;
    let report = simulate(&s)?;
    report.write_csv(std::io::stdout())?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
