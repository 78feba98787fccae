//! Fit the latent-regime model on synthetic observations and inspect the
//! variational posterior: regime centers, per-regime outcome mixes, and
//! the predictive probabilities for a new feature vector.
//!
//! ```bash
//! cargo run -p regimevar --example fit_regimes
//! ```

use nalgebra::{DMatrix, DVector};
use regimevar::synth::{adjusted_rand_index, gen_var_dataset, SyntheticSpec};
use regimevar::vi::{
    cavi_fit, predictive_category_probs, predictive_cluster_probs, CaviOptions, Hyperparams,
    Observations,
};

fn main() -> regimevar::Result<()> {
    let spec = SyntheticSpec {
        seed: 63,
        len: 400,
        cluster_weights: vec![0.5, 0.5],
        cluster_means: vec![vec![-5.0], vec![5.0]],
        within_cov: vec![vec![1.0]],
        theta: vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.3, 0.6]],
        category_samplers: vec![(-0.02, 0.004), (0.0, 0.004), (0.02, 0.004)],
        schedule: Vec::new(),
    };
    let data = gen_var_dataset(&spec)?;
    let obs = Observations::new(data.features.clone(), data.categories.clone())?;

    let hyper = Hyperparams {
        cluster_weights: vec![0.5, 0.5],
        mean_priors: vec![DVector::from_element(1, 0.0); 2],
        mean_prior_covs: vec![DMatrix::from_element(1, 1, 25.0); 2],
        within_cov: DMatrix::from_element(1, 1, 1.0),
        category_priors: vec![DVector::from_element(3, 1.0); 2],
    };
    let state = cavi_fit(&obs, &hyper, &CaviOptions { seed: 11, ..Default::default() })?;

    println!(
        "converged after {} sweeps, final ELBO {:.3}",
        state.elbo_trace.len() - 1,
        state.elbo_trace.last().unwrap()
    );
    for k in 0..2 {
        let mix = state.category_means(k);
        println!(
            "regime {k}: center {:+.2}, outcome mix [{:.2}, {:.2}, {:.2}]",
            state.cluster_means[k][0], mix[0], mix[1], mix[2]
        );
    }
    let ari = adjusted_rand_index(&state.hard_assignments(), &data.clusters);
    println!("adjusted Rand index vs ground truth: {ari:.3}");

    for x in [-5.0, 0.0, 5.0] {
        let q = predictive_cluster_probs(&DVector::from_element(1, x), &hyper, &state)?;
        let p = predictive_category_probs(&DVector::from_element(1, x), &hyper, &state)?;
        println!(
            "x = {x:+.1}: regime probs [{:.3}, {:.3}], outcome probs [{:.3}, {:.3}, {:.3}]",
            q[0], q[1], p[0], p[1], p[2]
        );
    }
    Ok(())
}
