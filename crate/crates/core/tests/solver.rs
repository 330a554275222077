use mfy_core::averaging::{averaged_field_direct, gamma_norm, AveragedField};
use mfy_core::kernels::Kernel;
use mfy_core::nlyi::EmpiricalMeasureFlow;
use mfy_core::paths::{gen_noise, NoiseKind, NoiseSampler};
use mfy_core::rng::{purpose, stream_id};
use mfy_core::solver::*;
use mfy_core::{Error, SamplePath, SpatialGrid, TimeGrid};

fn benchmark(seed: u64) -> (AveragedField, Vec<f64>, Vec<SamplePath>) {
    let tg = TimeGrid::dyadic(1.0, 8).unwrap();
    let sg = SpatialGrid::new(4.0, 1 << 9, 1).unwrap();
    let z = gen_noise(NoiseKind::fbm(0.1), 1, tg, seed).unwrap();
    let k = Kernel::power_law(-1.0, 4.0 * sg.spacing(), 1).unwrap();
    let f = averaged_field_direct(&k, &z, &sg, &tg).unwrap();
    let n = 64;
    let sampler = NoiseSampler::new(NoiseKind::Brownian, 1, tg).unwrap();
    let b = (0..n).map(|i| sampler.sample(seed, stream_id(purpose::IDIOSYNCRATIC, i)).scaled(0.3)).collect();
    let x = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    (f, x, b)
}

fn linear_field(log2_steps: u32) -> AveragedField {
    let tg = TimeGrid::dyadic(1.0, log2_steps).unwrap();
    let sg = SpatialGrid::new(4.0, 64, 1).unwrap();
    averaged_field_direct(&Kernel::linear(vec![-1.0], 1).unwrap(), &SamplePath::zeros(tg, 1), &sg, &tg).unwrap()
}

#[test]
fn zero_field_and_constant_drift() {
    let tg = TimeGrid::dyadic(1.0, 7).unwrap();
    let sg = SpatialGrid::new(4.0, 128, 1).unwrap();
    let b = gen_noise(NoiseKind::Brownian, 1, tg, 2).unwrap();
    let mu = EmpiricalMeasureFlow::new(&[b.clone(), b.scaled(2.0)]).unwrap();
    let cfg = SolveConfig::default();
    let y = solve_frozen(&AveragedField::zero(sg, tg), &[0.4], &b, &mu, &cfg).unwrap();
    for k in 0..=128 {
        assert_eq!(y.at(k)[0], 0.4 + b.at(k)[0]);
    }
    let field = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = -0.6 * t);
    let y = solve_frozen(&field, &[0.4], &b, &mu, &cfg).unwrap();
    for k in 0..=128 {
        assert!((y.at(k)[0] - (0.4 - 0.6 * tg.time(k) + b.at(k)[0])).abs() < 1e-14);
    }
}

#[test]
fn linear_ode_oracle() {
    let errors: Vec<f64> = (10..=13)
        .map(|lg| {
            let field = linear_field(lg);
            let tg = *field.time_grid();
            let dirac = EmpiricalMeasureFlow::dirac(&SamplePath::zeros(tg, 1));
            let y = solve_frozen(&field, &[1.0], &SamplePath::zeros(tg, 1), &dirac, &SolveConfig::default()).unwrap();
            (0..=tg.n_steps()).map(|k| (y.at(k)[0] - (-tg.time(k)).exp()).abs()).fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[2] <= 1e-3, "{errors:?}");
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 1.5, "{errors:?}");
    }
}

#[test]
fn linear_mean_field_oracle() {
    let field = linear_field(12);
    let tg = *field.time_grid();
    let x = [-1.0, -0.25, 0.4, 1.0, 0.7];
    let m = x.iter().sum::<f64>() / 5.0;
    let b = vec![SamplePath::zeros(tg, 1); 5];
    let cfg = SolveConfig {
        picard_tol: 1e-12,
        ..Default::default()
    };
    let sol = solve_mkv(&field, &x, &b, &cfg).unwrap();
    assert!(sol.converged);
    for k in (0..=tg.n_steps()).step_by(64) {
        let mean = sol.flow.marginal(k).iter().sum::<f64>() / 5.0;
        assert!((mean - m).abs() < 1e-12);
        for i in 0..5 {
            let exact = m + (-tg.time(k)).exp() * (x[i] - m);
            assert!((sol.flow.point(k, i)[0] - exact).abs() <= 1e-3);
        }
    }
}

#[test]
fn zero_field_fixed_point_is_the_input_law() {
    let (f, x, b) = benchmark(0);
    let zero = AveragedField::zero(*f.spatial_grid(), *f.time_grid());
    let sol = solve_mkv(&zero, &x, &b, &SolveConfig::default()).unwrap();
    assert_eq!(sol.iterations(), 1);
    assert_eq!(sol.gaps, vec![0.0]);
    assert_eq!(sol.flow.data(), drift_free_flow(&x, &b).unwrap().data());
}

#[test]
fn picard_gaps_contract_geometrically() {
    for seed in 0..3 {
        let (f, x, b) = benchmark(seed);
        let sol = solve_mkv(&f, &x, &b, &SolveConfig::default()).unwrap();
        assert!(sol.converged);
        for w in sol.gaps[2..].windows(2) {
            assert!(w[1] / w[0] <= 0.5, "seed {seed}: {:?}", sol.gaps);
        }
    }
}

#[test]
fn non_convergence_is_flagged() {
    let (f, x, b) = benchmark(1);
    let cfg = SolveConfig {
        max_iters: 2,
        ..Default::default()
    };
    let sol = solve_mkv(&f, &x, &b, &cfg).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations(), 2);
}

#[test]
fn restarting_mid_way_reproduces_the_solution() {
    let (f, x, b) = benchmark(2);
    let sol = solve_mkv(&f, &x, &b, &SolveConfig::default()).unwrap();
    let cfg = SolveConfig::default();
    let y = solve_frozen(&f, &x[5..6], &b[5], &sol.flow, &cfg).unwrap();
    for start in [0usize, 1, 100, 255, 256] {
        let tail = solve_frozen_from(&f, start, y.at(start), &b[5], &sol.flow, &cfg).unwrap();
        assert_eq!(&tail[..], &y.values()[start..]);
    }
}

#[test]
fn frozen_flow_gap_grows_along_a_ray() {
    let (f, x, b) = benchmark(3);
    let mu = drift_free_flow(&x, &b).unwrap();
    let cfg = SolveConfig::default();
    let base = solve_frozen(&f, &[0.1], &b[0], &mu, &cfg).unwrap();
    let mut last = 0.0;
    for lambda in [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2] {
        let y = solve_frozen(&f, &[0.1 + lambda], &b[0], &mu, &cfg).unwrap();
        let gap = y.sub(&base).unwrap().sup_norm();
        if lambda == 0.0 {
            assert_eq!(gap, 0.0);
        } else {
            assert!(gap >= last && (gap / lambda).is_finite(), "lambda {lambda}: {gap} < {last}");
        }
        last = gap;
    }
}

#[test]
fn fixed_points_are_deterministic() {
    let (f, x, b) = benchmark(4);
    let a = solve_mkv(&f, &x, &b, &SolveConfig::default()).unwrap();
    let c = solve_mkv(&f, &x, &b, &SolveConfig::default()).unwrap();
    assert_eq!(a.flow.data(), c.flow.data());
    assert_eq!(a.gaps, c.gaps);
}

#[test]
fn limit_does_not_depend_on_the_initial_flow() {
    let (f, x, b) = benchmark(0);
    let cfg = SolveConfig::default();
    let a = solve_mkv(&f, &x, &b, &cfg).unwrap();
    let still: Vec<SamplePath> = x.iter().map(|&v| SamplePath::constant(*f.time_grid(), &[v])).collect();
    let other = solve_mkv_from(&f, &x, &b, EmpiricalMeasureFlow::new(&still).unwrap(), &cfg).unwrap();
    assert!(a.converged && other.converged);
    assert!(flow_gap(&a.flow, &other.flow).unwrap() <= 2.0 * cfg.picard_tol);
}

#[test]
fn binned_and_direct_drifts_agree() {
    let (f, x, b) = benchmark(1);
    let direct = solve_mkv(&f, &x, &b, &SolveConfig { strategy: ConvStrategy::Direct, ..Default::default() }).unwrap();
    let binned = solve_mkv(&f, &x, &b, &SolveConfig { strategy: ConvStrategy::Binned, ..Default::default() }).unwrap();
    let gap = flow_gap(&direct.flow, &binned.flow).unwrap();
    assert!(gap < 1e-2, "{gap}");
}

#[test]
fn growth_check_closed_forms() {
    let tg = TimeGrid::dyadic(1.0, 6).unwrap();
    let sg = SpatialGrid::new(4.0, 64, 1).unwrap();
    let cfg = SolveConfig::default();
    let zero = SamplePath::zeros(tg, 1);
    let dirac = EmpiricalMeasureFlow::dirac(&zero);
    let y = solve_frozen(&AveragedField::zero(sg, tg), &[0.3], &zero, &dirac, &cfg).unwrap();
    let rep = growth_check(&y, &dirac, &zero, 0.0, &cfg).unwrap();
    assert_eq!((rep.y_seminorm, rep.ratio), (0.0, 0.0));

    let field = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = 0.8 * t);
    let y = solve_frozen(&field, &[0.3], &zero, &dirac, &cfg).unwrap();
    let rep = growth_check(&y, &dirac, &zero, 0.5, &cfg).unwrap();
    // [Y]_β = 0.8 sup lag^{1−β} = 0.8 at lag T = 1
    assert!((rep.y_seminorm - 0.8).abs() < 1e-12);
    assert!((rep.ratio - 0.8).abs() < 1e-12);
    let rep = growth_check(&y, &dirac, &zero, 4.0, &cfg).unwrap();
    assert!((rep.ratio - 0.2).abs() < 1e-12);
}

#[test]
fn growth_ratio_is_stable_across_seeds() {
    let (f, x, b) = benchmark(0);
    let mu = drift_free_flow(&x, &b).unwrap();
    let gn = gamma_norm(&f, 0.75, 2, 64).unwrap().value;
    let cfg = SolveConfig::default();
    let sampler = NoiseSampler::new(NoiseKind::Brownian, 1, *f.time_grid()).unwrap();
    let ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let bi = sampler.sample(100 + seed, stream_id(purpose::IDIOSYNCRATIC, 0)).scaled(0.3);
            let y = solve_frozen(&f, &[0.0], &bi, &mu, &cfg).unwrap();
            growth_check(&y, &mu, &bi, gn, &cfg).unwrap().ratio
        })
        .collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo <= 2.0, "{ratios:?}");
}

#[test]
fn blow_up_guard_names_the_particle() {
    let tg = TimeGrid::dyadic(1.0, 4).unwrap();
    let sg = SpatialGrid::new(0.5, 64, 1).unwrap();
    let field = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = 100.0 * t);
    let x = [0.0, 0.1];
    let b = vec![SamplePath::zeros(tg, 1); 2];
    match solve_mkv(&field, &x, &b, &SolveConfig::default()) {
        Err(Error::BlowUp { step, particle, limit, .. }) => {
            assert_eq!(step, 1);
            assert_eq!(particle, Some(0));
            assert_eq!(limit, 5.0);
        }
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (f, x, b) = benchmark(0);
    assert!(solve_mkv(&f, &x[..10], &b, &SolveConfig::default()).is_err());
    let other = SamplePath::zeros(TimeGrid::dyadic(1.0, 5).unwrap(), 1);
    let mu = drift_free_flow(&x, &b).unwrap();
    assert!(solve_frozen(&f, &[0.0], &other, &mu, &SolveConfig::default()).is_err());
    let bad = SolveConfig {
        beta: 0.2,
        ..Default::default()
    };
    assert!(solve_mkv(&f, &x, &b, &bad).is_err());
}
