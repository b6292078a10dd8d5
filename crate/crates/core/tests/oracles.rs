//! Monte-Carlo and closed-form cross-checks that are cheap enough for every run.

use minsemi::config::fixtures;
use minsemi::grid::BallDomain;
use minsemi::mc::{coarsen_masses, l1_masses, simulate, SimulationParams, Start};
use minsemi::model::{DiffusionModel, FieldSpec};
use minsemi::semigroup::Semigroup;
use minsemi::stationary::{stationary_density, StationaryMethod};
use minsemi::thermo::{classify_reversibility, free_energy, helmholtz_decompose, ClassifyOptions, FreeEnergy};
use minsemi::Error;
use serde_json::json;

fn brownian_survival(t: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    (0..200)
        .map(|k| {
            let n = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            4.0 / PI * sign / n * (-(n * PI / (2.0 * r)).powi(2) * t / 2.0).exp()
        })
        .sum()
}

#[test]
fn bridge_correction_removes_the_exit_bias() {
    let m = fixtures::load("brownian1d").model().unwrap();
    let exact = brownian_survival(1.0, 2.0);
    let run = |bridge: bool| {
        let mut p = SimulationParams::new(vec![0.0], 0.02, 1.0, 20_000, 17);
        p.absorb_radius = Some(2.0);
        p.bridge = bridge;
        simulate(&m, &p).unwrap().survival_probability(1.0)
    };
    let (with, without) = (run(true), run(false));
    assert!((with.value - exact).abs() < 3.0 * with.std_err, "{with:?} vs {exact}");
    // discrete monitoring misses crossings, so survival is overestimated
    assert!(without.value - exact > 3.0 * without.std_err, "{without:?} vs {exact}");
}

#[test]
fn reversible_heat_stays_bounded() {
    let m = fixtures::load("ou1d").model().unwrap();
    let mut p = SimulationParams::new(vec![0.0], 0.01, 40.0, 2_000, 3);
    p.record_times = vec![5.0, 10.0, 20.0];
    let e = simulate(&m, &p).unwrap();
    let stats = |t: f64| {
        let w = e.heat_increments(0.0, t).unwrap();
        let max = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mean = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
        (max, mean / t)
    };
    let (max5, rate5) = stats(5.0);
    let (max40, rate40) = stats(40.0);
    // eight times the horizon, nowhere near eight times the excursion
    assert!(max40 < 2.0 * max5, "{max5} {max40}");
    assert!(rate40 < rate5 / 4.0 && rate40 < 0.05, "{rate5} {rate40}");
}

#[test]
fn flipped_drift_fails_the_kernel_comparison() {
    let c = fixtures::load("ou1d");
    let m = c.model().unwrap();
    let d = BallDomain::new(1, 1.0, 3, 0.05).unwrap();
    let sg = Semigroup::new(&m, &d, c.scheme).unwrap();
    let row = sg.kernel_row(&[0.5], 0.5, 100).unwrap();
    let l1 = |flip: bool| {
        let mut p = SimulationParams::new(vec![0.5], 0.005, 0.5, 20_000, 5);
        p.absorb_radius = Some(3.0);
        p.flip_drift = flip;
        let (h, _) = simulate(&m, &p).unwrap().empirical_kernel(0.5, &row.grid).unwrap();
        l1_masses(&coarsen_masses(&row, 4), &coarsen_masses(&h, 4))
    };
    let (good, bad) = (l1(false), l1(true));
    assert!(good < 0.05, "{good}");
    assert!(bad > 0.3, "{bad}");
}

#[test]
fn rotational_stationary_variance_matches_simulation() {
    let c = fixtures::rot2d(1.0);
    let m = c.model().unwrap();
    let d = c.domain().unwrap();
    let theta = stationary_density(&m, &d, c.scheme, StationaryMethod::Nullspace).unwrap().theta;
    let g = &theta.grid;
    let var: f64 = (0..g.len()).map(|i| g.coords(i)[0].powi(2) * theta.values[i]).sum::<f64>() * g.cell_volume();
    assert!((var - 0.5).abs() < 5e-3, "{var}");
    let mut p = SimulationParams::new(vec![0.0, 0.0], 0.01, 4.0, 5_000, 8);
    p.start = Start::Point(vec![1.0, -1.0]);
    let e = simulate(&m, &p).unwrap();
    let v = e.variance(4.0).unwrap();
    assert!((v[0].value - var).abs() < 4.0 * v[0].std_err + 0.01, "{:?} vs {var}", v[0]);
}

fn gradient_2d() -> DiffusionModel {
    DiffusionModel::new(
        2,
        FieldSpec::new("gradient_polynomial", json!({"quartic": 0.25, "quadratic": 0.5})),
        FieldSpec::new("constant", json!({"scalar": 1.0})),
        0.5,
        None,
    )
    .unwrap()
}

#[test]
fn planar_gradient_flow_is_reversible() {
    let m = gradient_2d();
    let d = BallDomain::new(2, 1.0, 3, 0.1).unwrap();
    let v = classify_reversibility(&m, &d, Default::default(), &ClassifyOptions::default()).unwrap();
    assert!(v.reversible, "{v:?}");
    let theta = stationary_density(&m, &d, Default::default(), StationaryMethod::Nullspace).unwrap().theta;
    assert!(matches!(free_energy(&m, &theta).unwrap(), FreeEnergy::Present { .. }));
    assert!(helmholtz_decompose(&m, &theta).unwrap().gamma_weighted < 1e-3);
}

#[test]
fn rotation_has_no_free_energy() {
    let c = fixtures::rot2d(1.0);
    let m = c.model().unwrap();
    let d = c.domain().unwrap();
    let theta = stationary_density(&m, &d, c.scheme, StationaryMethod::Nullspace).unwrap().theta;
    assert!(matches!(free_energy(&m, &theta).unwrap(), FreeEnergy::Absent { .. }));
}

#[test]
fn repelling_drift_is_flagged_ambiguous() {
    let m = DiffusionModel::new(
        1,
        FieldSpec::new("linear", json!({"matrix": [[-1.0]]})),
        FieldSpec::new("constant", json!({"scalar": 1.0})),
        -1.0,
        None,
    )
    .unwrap();
    let d = BallDomain::new(1, 1.0, 4, 0.05).unwrap();
    let r = stationary_density(&m, &d, Default::default(), StationaryMethod::Nullspace);
    assert!(matches!(r, Err(Error::Ambiguous(_))), "{:?}", r.map(|s| s.shell_mass));
}
