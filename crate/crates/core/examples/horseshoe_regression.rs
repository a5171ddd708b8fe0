// The sampler on its own: horseshoe regression on a hand-made design with
// two signals among forty columns.

use std::error::Error;

use faer::Mat;
use horserule::data::{standardize, YTransform};
use horserule::inference::quantile;
use horserule::rng::rng_from;
use horserule::sampler::{gibbs_run, GibbsSettings, PriorSpec};
use rand::Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (n, p) = (120, 40);
    let mut rng = rng_from(3);
    let x = Mat::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
    let y: Vec<f64> = (0..n).map(|i| 4.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 0.3 * (rng.random::<f64>() - 0.5)).collect();
    let st = standardize(x.as_ref(), &y, YTransform::None)?;

    let settings = GibbsSettings {
        niter: 2000,
        burnin: 500,
        ..GibbsSettings::default()
    };
    let draws = gibbs_run(st.xs.as_ref(), &st.ys, &PriorSpec::standard(p), &settings)?;
    let mean = draws.beta_mean();
    println!("col   mean     5%       95%");
    for j in [0, 1, 2, 3] {
        let mut col: Vec<f64> = (0..draws.n_draws()).map(|k| draws.beta[(k, j)]).collect();
        col.sort_by(f64::total_cmp);
        println!("{j:>3}  {:>7.3}  {:>7.3}  {:>7.3}", mean[j], quantile(&col, 0.05), quantile(&col, 0.95));
    }
    let noise: f64 = mean[2..].iter().map(|b| b.abs()).sum();
    println!("sum |beta| over the {} noise columns: {noise:.3}", p - 2);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
