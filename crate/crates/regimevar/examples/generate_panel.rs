//! Generate a synthetic market panel with a latent-regime structure and
//! dump it in the CSV schema the rest of the crate consumes.
//!
//! ```bash
//! cargo run -p regimevar --example generate_panel
//! ```

use chrono::NaiveDate;
use regimevar::synth::{gen_var_dataset, var_panel, RegimeShift, SyntheticSpec};

fn main() -> regimevar::Result<()> {
    // Two regimes: a calm one that mostly emits small moves and a
    // volatile one that emits large ones. The mix flips at index 400.
    let spec = SyntheticSpec {
        seed: 42,
        len: 600,
        cluster_weights: vec![0.9, 0.1],
        cluster_means: vec![vec![0.0, 0.0], vec![3.0, 3.0]],
        within_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        theta: vec![vec![0.02, 0.96, 0.02], vec![0.35, 0.30, 0.35]],
        category_samplers: vec![(-0.022, 0.004), (0.0, 0.004), (0.022, 0.004)],
        schedule: vec![RegimeShift {
            at: 400,
            cluster_weights: Some(vec![0.1, 0.9]),
            theta: None,
        }],
    };
    let data = gen_var_dataset(&spec)?;
    let panel = var_panel(&data, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap())?;

    let out = std::env::temp_dir().join("regimevar_panel.csv");
    panel.write_csv(&out)?;
    println!("wrote {} ({} business days)", out.display(), panel.len());

    let volatile_before = data.clusters[..400].iter().filter(|c| **c == 1).count();
    let volatile_after = data.clusters[400..].iter().filter(|c| **c == 1).count();
    println!("volatile-regime days: {volatile_before} before the switch, {volatile_after} after");

    let value = panel.series("portfolio")?;
    println!(
        "portfolio level: start {:.1}, at switch {:.1}, end {:.1}",
        value[0], value[400], value[599]
    );
    Ok(())
}
