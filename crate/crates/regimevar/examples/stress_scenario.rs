//! Design stress scenarios for an equity/bond portfolio on a synthetic
//! two-factor market: target peak losses at two confidence levels and the
//! expected risk-factor shifts that accompany them.
//!
//! ```bash
//! cargo run --release -p regimevar --example stress_scenario
//! ```

use chrono::NaiveDate;
use regimevar::market_data::{ChangeMode, FeatureKind, FeatureSpec, Instrument, Portfolio, ReturnRule};
use regimevar::stress::{
    design_scenario, RiskFactorRule, ShiftBand, StressCategorySpec, StressConfig,
};
use regimevar::synth::{gen_stress_panel, RegimeDynamics, StressMarketSpec};
use regimevar::vi::CaviOptions;

fn market() -> StressMarketSpec {
    StressMarketSpec {
        seed: 12,
        len: 1060,
        cluster_weights: vec![0.55, 0.25, 0.12, 0.08],
        feature_means: vec![
            vec![0.3, -0.2, 0.1],
            vec![-0.6, 0.8, -0.4],
            vec![1.8, 1.6, 1.2],
            vec![-2.0, -1.8, 2.2],
        ],
        within_cov: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ],
        regimes: vec![
            // calm, mild risk-off, crisis with falling rates, rate shock
            RegimeDynamics { equity_drift: 0.0005, equity_vol: 0.006, yield_drift: 0.00002, yield_vol: 0.0003, correlation: 0.1 },
            RegimeDynamics { equity_drift: -0.001, equity_vol: 0.012, yield_drift: -0.00005, yield_vol: 0.0006, correlation: -0.3 },
            RegimeDynamics { equity_drift: -0.006, equity_vol: 0.025, yield_drift: -0.0004, yield_vol: 0.0012, correlation: -0.5 },
            RegimeDynamics { equity_drift: -0.004, equity_vol: 0.02, yield_drift: 0.0005, yield_vol: 0.0012, correlation: 0.4 },
        ],
        weight_schedule: Vec::new(),
        start_equity: 3000.0,
        start_yield: 0.015,
    }
}

fn scenario_config(p_star: f64) -> StressConfig {
    StressConfig {
        features: (1..=3)
            .map(|i| FeatureSpec {
                name: format!("x{i}"),
                kind: FeatureKind::Change {
                    series: format!("f{i}"),
                    lag: 1,
                    mode: ChangeMode::Difference,
                },
            })
            .collect(),
        portfolio: Portfolio {
            instruments: vec![
                Instrument { series: "spx".into(), weight: 0.5, rule: ReturnRule::PriceReturn },
                Instrument {
                    series: "ust10y".into(),
                    weight: 0.5,
                    rule: ReturnRule::DurationYield { duration: 8.5 },
                },
            ],
        },
        max_loss_window: 15,
        horizon: 45,
        p_star,
        calibration_window: 1000,
        clusters: 4,
        // Eight stress categories: five loss severities when rates fall,
        // three when rates rise.
        category_spec: StressCategorySpec {
            key_factor: Some(RiskFactorRule { series: "ust10y".into(), mode: ChangeMode::Difference }),
            bands: vec![
                ShiftBand { shift_min: None, shift_max: Some(0.0), loss_cuts: vec![-12.0, -8.0, -5.0, -2.5] },
                ShiftBand { shift_min: Some(0.0), shift_max: None, loss_cuts: vec![-6.0, -2.5] },
            ],
        },
        risk_factors: vec![
            RiskFactorRule { series: "ust10y".into(), mode: ChangeMode::Difference },
            RiskFactorRule { series: "spx".into(), mode: ChangeMode::Relative },
        ],
        constraint: None,
        dirichlet_prior: 1.0,
        within_variance: Some(vec![1.0, 1.0, 1.0]),
        mean_prior_variance: None,
        cavi: CaviOptions { seed: 7, restarts: 1, max_sweeps: 150, rel_tol: 1e-8 },
    }
}

fn main() -> regimevar::Result<()> {
    let (panel, _) = gen_stress_panel(&market(), NaiveDate::from_ymd_opt(2016, 1, 4).unwrap())?;
    println!("calibrating on the trailing 1000 observations of a {}-day panel", panel.len());

    for p_star in [0.75, 0.95] {
        let result = design_scenario(&panel, &scenario_config(p_star))?;
        println!(
            "\np* = {p_star}: target peak loss {:.2} points (15-day windows over the next 45 days)",
            result.target_loss_magnitude
        );
        for (factor, shift) in &result.shifts {
            println!("  expected {factor} shift: {shift:+.5}");
        }
        println!("  records: {}, converged: {}", result.record_count, result.converged);
        for diag in result.categories.iter().filter(|d| d.fitted) {
            println!(
                "  category {}: {} obs{}: {}",
                diag.index,
                diag.count,
                if diag.low_confidence { " (low confidence)" } else { "" },
                diag.description
            );
        }
    }
    Ok(())
}
