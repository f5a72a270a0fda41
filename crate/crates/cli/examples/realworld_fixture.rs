//! Regenerates `fixtures/realworld/`: 50 state-like units, monthly 1990-01..1999-12, nine
//! treated units whose prices drop after 1998-01, with gas price and income covariates.
//!
//! cargo run -p counterfact-cli --example realworld_fixture -- fixtures/realworld

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const STATES: [&str; 50] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA",
    "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA",
    "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
];
const TREATED: [&str; 9] = ["CA", "CT", "IL", "MD", "ME", "NJ", "NY", "PA", "RI"];
const MONTHS: usize = 120;
const T0: usize = 96;
const BASELINE: f64 = 11.36;
const RELATIVE_DROP: f64 = 0.07;

fn month_label(k: usize) -> String {
    format!("{}-{:02}", 1990 + k / 12, k % 12 + 1)
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/realworld".into()));
    std::fs::create_dir_all(&out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1998);
    let unit_noise = Normal::new(0.0, 0.06).unwrap();

    // national gas price: slow cycle plus a persistent random walk
    let mut walk = 0.0;
    let national_gas: Vec<f64> = (0..MONTHS)
        .map(|k| {
            walk += rng.random_range(-0.03..0.03);
            2.2 + 0.25 * (k as f64 * std::f64::consts::TAU / 40.0).sin() + walk
        })
        .collect();

    let mut prices = Vec::new();
    let mut gas = Vec::new();
    let mut income = Vec::new();
    for state in STATES {
        let treated = TREATED.contains(&state);
        let level = if treated { rng.random_range(9.5..13.0) } else { rng.random_range(5.5..10.5) };
        let growth: f64 = rng.random_range(0.0005..0.0025);
        let amplitude = rng.random_range(0.02..0.06);
        let gas_offset = rng.random_range(-0.3..0.3);
        let gas_loading = rng.random_range(0.05..0.15);
        let income_start = rng.random_range(17.0..30.0);
        let income_growth: f64 = rng.random_range(0.002..0.005);

        let mut ar = 0.0;
        let mut p = Vec::with_capacity(MONTHS);
        let mut g = Vec::with_capacity(MONTHS);
        let mut inc = Vec::with_capacity(MONTHS);
        for k in 0..MONTHS {
            let g_k = national_gas[k] + gas_offset + rng.random_range(-0.05..0.05);
            ar = 0.6 * ar + unit_noise.sample(&mut rng);
            let season = 1.0 + amplitude * ((k % 12) as f64 * std::f64::consts::TAU / 12.0 - 1.2).sin();
            let value = level * (1.0 + growth).powi(k as i32) * season + gas_loading * (g_k - 2.2) + ar;
            p.push(value);
            g.push(g_k);
            inc.push(income_start * (1.0 + income_growth).powi(k as i32) + rng.random_range(-0.05..0.05));
        }
        prices.push((state, treated, p));
        gas.push(g);
        income.push(inc);
    }

    // rescale treated units so their mean over the last pre-intervention year is BASELINE
    let last_year: f64 = prices
        .iter()
        .filter(|(_, t, _)| *t)
        .flat_map(|(_, _, p)| p[T0 - 12..T0].to_vec())
        .sum::<f64>()
        / (12.0 * TREATED.len() as f64);
    for (_, treated, p) in prices.iter_mut() {
        if *treated {
            let scale = BASELINE / last_year;
            p.iter_mut().for_each(|v| *v *= scale);
            for v in &mut p[T0..] {
                *v *= 1.0 - RELATIVE_DROP;
            }
        }
    }

    let mut panel = String::from("unit_id,period,value\n");
    let mut covariates = String::from("unit_id,period,name,value\n");
    for (i, (state, _, p)) in prices.iter().enumerate() {
        for k in 0..MONTHS {
            writeln!(panel, "{state},{},{:.3}", month_label(k), p[k]).unwrap();
            writeln!(covariates, "{state},{},gas_price,{:.3}", month_label(k), gas[i][k]).unwrap();
            writeln!(covariates, "{state},{},income,{:.3}", month_label(k), income[i][k]).unwrap();
        }
    }
    std::fs::write(out.join("panel.csv"), panel).unwrap();
    std::fs::write(out.join("covariates.csv"), covariates).unwrap();
    let study = serde_json::json!({
        "panel": "panel.csv",
        "t0": "1998-01",
        "treated_units": TREATED,
        "season": 12,
        "covariates": ["covariates.csv"],
        "seed": 1998,
        "output_dir": "out",
    });
    std::fs::write(out.join("study.json"), serde_json::to_string_pretty(&study).unwrap() + "\n").unwrap();
}
