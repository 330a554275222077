use mfy_core::localtime::*;
use mfy_core::paths::{gen_noise, NoiseKind};
use mfy_core::stats::median;
use mfy_core::{SamplePath, SpatialGrid, TimeGrid};

#[test]
fn linear_path_has_flat_density() {
    let tg = TimeGrid::dyadic(1.0, 12).unwrap();
    let sg = SpatialGrid::new(2.0, 64, 1).unwrap();
    let z = SamplePath::from_fn(tg, 1, |t, x| x[0] = t);
    let occ = occupation_measure(&z, &sg, 0.0, 1.0).unwrap();
    assert_eq!(occ.total_mass(), 1.0);
    let h = sg.spacing();
    let tol = 2.0 * tg.dt() / h;
    for node in 0..sg.n_nodes() {
        let x = sg.coordinate(node);
        if x > h / 2.0 && x < 1.0 - h / 2.0 {
            assert!((occ.density_at(node) - 1.0).abs() <= tol, "node at {x}: {}", occ.density_at(node));
        } else if x < -h || x > 1.0 + h {
            assert_eq!(occ.density_at(node), 0.0);
        }
    }
}

#[test]
fn fbm_local_time_time_regularity() {
    let tg = TimeGrid::dyadic(1.0, 12).unwrap();
    let sg = SpatialGrid::new(8.0, 1 << 10, 1).unwrap();
    let fits: Vec<f64> = (0..50)
        .map(|seed| {
            let z = gen_noise(NoiseKind::fbm(0.2), 1, tg, seed).unwrap();
            local_time_time_regularity_with_lags(&z, &sg, 0.55, 2f64.powi(-10), 2f64.powi(-4))
                .unwrap()
                .fitted_exponent
        })
        .collect();
    assert!(median(&fits) >= 0.55, "median {}", median(&fits));
}

#[test]
fn window_masses_add_up() {
    let tg = TimeGrid::dyadic(1.0, 10).unwrap();
    let sg = SpatialGrid::new(4.0, 128, 1).unwrap();
    let z = gen_noise(NoiseKind::fbm(0.3), 1, tg, 4).unwrap();
    let whole = occupation_by_index(&z, &sg, 0, 1024).unwrap();
    let left = occupation_by_index(&z, &sg, 0, 300).unwrap();
    let right = occupation_by_index(&z, &sg, 300, 1024).unwrap();
    assert_eq!(left.concat(&right).unwrap().half_step_counts(), whole.half_step_counts());
    assert_eq!(whole.total_mass(), 1.0);
    assert!(right.concat(&left).is_err());
    let coarse = TimeGrid::dyadic(1.0, 4).unwrap();
    let inc = occupation_increments(&z, &sg, &coarse).unwrap();
    assert_eq!(inc.len(), 16);
    let mut acc = inc[0].clone();
    for o in &inc[1..] {
        acc = acc.concat(o).unwrap();
    }
    assert_eq!(acc.half_step_counts(), whole.half_step_counts());
}

#[test]
fn support_stays_near_the_range() {
    let tg = TimeGrid::dyadic(1.0, 10).unwrap();
    let sg = SpatialGrid::new(4.0, 256, 1).unwrap();
    let z = gen_noise(NoiseKind::Brownian, 1, tg, 8).unwrap();
    let lo = z.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let occ = occupation_measure(&z, &sg, 0.0, 1.0).unwrap();
    for node in 0..sg.n_nodes() {
        if occ.half_step_counts()[node] > 0 {
            let x = sg.coordinate(node);
            assert!(x >= lo - sg.spacing() && x <= hi + sg.spacing());
        }
    }
}

#[test]
fn grid_aligned_translation_shifts_counts() {
    let tg = TimeGrid::dyadic(1.0, 10).unwrap();
    let sg = SpatialGrid::new(4.0, 256, 1).unwrap();
    let z = gen_noise(NoiseKind::fbm(0.4), 1, tg, 2).unwrap();
    let shift = 5;
    let c = shift as f64 * sg.spacing();
    let moved = z.add(&SamplePath::constant(tg, &[c])).unwrap();
    let a = occupation_measure(&z, &sg, 0.0, 1.0).unwrap();
    let b = occupation_measure(&moved, &sg, 0.0, 1.0).unwrap();
    for node in 0..sg.n_nodes() - shift {
        assert_eq!(a.half_step_counts()[node], b.half_step_counts()[node + shift]);
    }
}

#[test]
fn two_dimensional_masses() {
    let tg = TimeGrid::dyadic(1.0, 9).unwrap();
    let sg = SpatialGrid::new(4.0, 64, 2).unwrap();
    let z = gen_noise(NoiseKind::fbm(0.3), 2, tg, 1).unwrap();
    let occ = occupation_measure(&z, &sg, 0.25, 0.75).unwrap();
    assert_eq!(occ.total_mass(), 0.5);
    let dens = occ.density();
    let integral: f64 = dens.data.iter().sum::<f64>() * sg.cell_volume();
    assert!((integral - 0.5).abs() < 1e-12);
    assert!(occ.l2_norm() > 0.0);
}

#[test]
fn windows_off_the_grid_are_rejected() {
    let tg = TimeGrid::dyadic(1.0, 4).unwrap();
    let sg = SpatialGrid::new(4.0, 64, 1).unwrap();
    let z = SamplePath::zeros(tg, 1);
    assert!(occupation_measure(&z, &sg, 0.1, 0.5).is_err());
    assert!(occupation_measure(&z, &sg, 0.5, 0.25).is_err());
    let far = SamplePath::constant(tg, &[10.0]);
    assert!(occupation_measure(&far, &sg, 0.0, 1.0).is_err());
}
