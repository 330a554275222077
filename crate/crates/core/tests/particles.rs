use mfy_core::averaging::{averaged_field_direct, AveragedField};
use mfy_core::kernels::{Family, Kernel};
use mfy_core::metrics::sup_marginal_w1;
use mfy_core::nlyi::EmpiricalMeasureFlow;
use mfy_core::particles::*;
use mfy_core::paths::{gen_noise, NoiseKind, NoiseSampler};
use mfy_core::rng::{purpose, stream_id};
use mfy_core::solver::{solve_mkv, ConvStrategy, SolveConfig};
use mfy_core::{Error, SamplePath, SpatialGrid, TimeGrid};

fn rough_field(seed: u64, d: usize) -> AveragedField {
    let tg = TimeGrid::dyadic(1.0, 8).unwrap();
    let sg = if d == 1 {
        SpatialGrid::new(4.0, 1 << 9, 1).unwrap()
    } else {
        SpatialGrid::new(4.0, 1 << 6, 2).unwrap()
    };
    let z = gen_noise(NoiseKind::fbm(0.1), d, tg, seed).unwrap();
    let k = if d == 1 {
        Kernel::power_law(-1.0, 4.0 * sg.spacing(), 1).unwrap()
    } else {
        Kernel::new(Family::BiotSavart, 4.0 * sg.spacing(), 2).unwrap()
    };
    averaged_field_direct(&k, &z, &sg, &tg).unwrap()
}

/// `Γ_{s,t} = (t − s)K` is odd only when the noise stands still.
fn odd_field(d: usize) -> AveragedField {
    let f = rough_field(0, d);
    let z = SamplePath::zeros(*f.time_grid(), d);
    let sg = *f.spatial_grid();
    let k = if d == 1 {
        Kernel::power_law(-1.0, 4.0 * sg.spacing(), 1).unwrap()
    } else {
        Kernel::new(Family::BiotSavart, 4.0 * sg.spacing(), 2).unwrap()
    };
    averaged_field_direct(&k, &z, &sg, f.time_grid()).unwrap()
}

fn inputs(seed: u64, n: usize, d: usize, tg: TimeGrid) -> (Vec<f64>, Vec<SamplePath>) {
    let sampler = NoiseSampler::new(NoiseKind::Brownian, d, tg).unwrap();
    let b = (0..n).map(|i| sampler.sample(seed, stream_id(purpose::IDIOSYNCRATIC, i as u64)).scaled(0.3)).collect();
    let x = (0..n * d).map(|i| -1.0 + 2.0 * ((i * 37) % (n * d)) as f64 / (n * d) as f64).collect();
    (x, b)
}

fn direct() -> SolveConfig {
    SolveConfig {
        strategy: ConvStrategy::Direct,
        ..Default::default()
    }
}

#[test]
fn zero_field_is_free_motion() {
    let f = rough_field(0, 1);
    let zero = AveragedField::zero(*f.spatial_grid(), *f.time_grid());
    let (x, b) = inputs(1, 16, 1, *f.time_grid());
    let flow = simulate_particles(&zero, &x, &b, &direct()).unwrap();
    for k in 0..=256 {
        for i in 0..16 {
            assert_eq!(flow.point(k, i)[0], x[i] + b[i].at(k)[0]);
        }
    }
}

#[test]
fn odd_kernels_conserve_the_center_of_mass() {
    for d in [1, 2] {
        let f = odd_field(d);
        // keep pair differences inside the box, where the interpolation is antisymmetric
        let x: Vec<f64> = inputs(0, 32, d, *f.time_grid()).0.iter().map(|v| 0.5 * v).collect();
        let still = vec![SamplePath::zeros(*f.time_grid(), d); 32];
        let flow = simulate_particles(&f, &x, &still, &direct()).unwrap();
        let center = |k: usize| -> Vec<f64> {
            (0..d).map(|a| (0..32).map(|i| flow.point(k, i)[a]).sum::<f64>() / 32.0).collect()
        };
        let c0 = center(0);
        let moved = (0..32).map(|i| (flow.point(256, i)[0] - x[i * d]).abs()).fold(0.0, f64::max);
        assert!(moved > 1e-3);
        assert_eq!(f.clamp_count(), 0);
        for k in 1..=256 {
            for (a, b) in center(k).iter().zip(&c0) {
                assert!((a - b).abs() <= 1e-12, "d={d} step {k}: {}", a - b);
            }
        }
    }
}

#[test]
fn particles_match_the_mean_field_fixed_point() {
    for seed in 0..3 {
        let f = rough_field(seed, 1);
        let (x, b) = inputs(seed, 64, 1, *f.time_grid());
        let cfg = SolveConfig::default();
        let flow = simulate_particles(&f, &x, &b, &cfg).unwrap();
        let sol = solve_mkv(&f, &x, &b, &cfg).unwrap();
        assert!(sol.converged);
        let all: Vec<usize> = (0..=256).collect();
        let gap = sup_marginal_w1(&flow, &sol.flow, &all).unwrap();
        let bound = cfg.picard_tol + sol.gaps.last().unwrap();
        assert!(gap <= bound, "seed {seed}: {gap} > {bound}");
    }
}

#[test]
fn shift_round_trip_is_exact() {
    let tg = TimeGrid::dyadic(1.0, 6).unwrap();
    // grid values written once as dyadic rationals
    let atoms: Vec<SamplePath> = (0..5)
        .map(|i| SamplePath::from_fn(tg, 1, |t, x| x[0] = ((i as f64 - 2.0) * 64.0 + t * 64.0).round() / 1024.0))
        .collect();
    let flow = EmpiricalMeasureFlow::new(&atoms).unwrap();
    let z = SamplePath::from_fn(tg, 1, |t, x| x[0] = (300.0 * (7.0 * t).sin()).round() / 512.0);
    let there = shifted_system(&flow, &z).unwrap();
    let back = shifted_system(&there, &z.scaled(-1.0)).unwrap();
    assert_eq!(back.data(), flow.data());
    assert_eq!(shifted_system(&flow, &SamplePath::zeros(tg, 1)).unwrap().data(), flow.data());
    let c = shifted_system(&flow, &SamplePath::constant(tg, &[0.25])).unwrap();
    for (a, b) in c.data().iter().zip(flow.data()) {
        assert_eq!(*a, b + 0.25);
    }
    let other = SamplePath::zeros(TimeGrid::dyadic(1.0, 5).unwrap(), 1);
    assert!(shifted_system(&flow, &other).is_err());
}

#[test]
fn permuting_inputs_permutes_outputs() {
    for (d, strategy) in [(1, ConvStrategy::Direct), (1, ConvStrategy::Binned), (2, ConvStrategy::Direct)] {
        let f = rough_field(3, d);
        let n = 24;
        let (x, b) = inputs(3, n, d, *f.time_grid());
        let cfg = SolveConfig {
            strategy,
            ..Default::default()
        };
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 5) % n).collect();
        let px: Vec<f64> = perm.iter().flat_map(|&p| x[p * d..(p + 1) * d].to_vec()).collect();
        let pb: Vec<SamplePath> = perm.iter().map(|&p| b[p].clone()).collect();
        let a = simulate_particles(&f, &x, &b, &cfg).unwrap();
        let c = simulate_particles(&f, &px, &pb, &cfg).unwrap();
        assert_eq!(c.data(), a.permuted(&perm).unwrap().data(), "d={d} {strategy:?}");
    }
}

#[test]
fn small_systems_match_a_hand_written_double_loop() {
    for d in [1, 2] {
        let f = rough_field(4, d);
        let tg = *f.time_grid();
        for n in [1, 2, 5, 8] {
            let (x, b) = inputs(5, n, d, tg);
            let flow = simulate_particles(&f, &x, &b, &direct()).unwrap();
            let mut y = x.clone();
            for k in 0..tg.n_steps() {
                let mut order: Vec<&[f64]> = y.chunks(d).collect();
                order.sort_by(|p, q| p.iter().zip(q.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap());
                let sorted: Vec<f64> = order.concat();
                let mut next = vec![0.0; n * d];
                let mut v = vec![0.0; d];
                let mut diff = vec![0.0; d];
                for i in 0..n {
                    let mut acc = vec![0.0; d];
                    for j in 0..n {
                        for a in 0..d {
                            diff[a] = y[i * d + a] - sorted[j * d + a];
                        }
                        f.increment(k, k + 1, &diff, &mut v);
                        for a in 0..d {
                            acc[a] += v[a];
                        }
                    }
                    for a in 0..d {
                        let drift = acc[a] * (1.0 / n as f64);
                        next[i * d + a] = y[i * d + a] + (drift - 0.0) + (b[i].at(k + 1)[a] - b[i].at(k)[a]);
                    }
                }
                y = next;
                assert_eq!(flow.marginal(k + 1), &y[..], "d={d} n={n} step {}", k + 1);
            }
        }
    }
}

#[test]
fn binned_and_direct_sums_agree() {
    for n in [64, 256, 1024] {
        let f = rough_field(1, 1);
        let (x, b) = inputs(6, n, 1, *f.time_grid());
        let a = simulate_particles(&f, &x, &b, &direct()).unwrap();
        let cfg = SolveConfig {
            strategy: ConvStrategy::Binned,
            ..Default::default()
        };
        let c = simulate_particles(&f, &x, &b, &cfg).unwrap();
        let all: Vec<usize> = (0..=256).collect();
        let gap = sup_marginal_w1(&a, &c, &all).unwrap();
        assert!(gap < 1e-2, "n={n}: {gap}");
    }
}

#[test]
fn self_term_can_be_dropped() {
    let tg = TimeGrid::dyadic(1.0, 5).unwrap();
    let sg = SpatialGrid::new(4.0, 128, 1).unwrap();
    // K ≡ 1 everywhere: each particle feels drift 1 with the self term, (N−1)/N without
    let field = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = t);
    let b = vec![SamplePath::zeros(tg, 1); 4];
    let x = [0.0, 0.5, -0.5, 1.0];
    let with = simulate_particles(&field, &x, &b, &SolveConfig::default()).unwrap();
    let without = simulate_particles_with(&field, &x, &b, &SolveConfig::default(), ParticleOptions { include_self: false }).unwrap();
    for i in 0..4 {
        assert!((with.point(32, i)[0] - (x[i] + 1.0)).abs() < 1e-12);
        assert!((without.point(32, i)[0] - (x[i] + 0.75)).abs() < 1e-12);
    }
    // odd kernels vanish at the origin, so the flag changes nothing
    let f = odd_field(1);
    let (x, b) = inputs(0, 16, 1, *f.time_grid());
    let a = simulate_particles(&f, &x, &b, &direct()).unwrap();
    let c = simulate_particles_with(&f, &x, &b, &direct(), ParticleOptions { include_self: false }).unwrap();
    assert_eq!(a.data(), c.data());
}

#[test]
fn pairwise_distances() {
    let tg = TimeGrid::dyadic(1.0, 3).unwrap();
    let atoms = [SamplePath::constant(tg, &[0.0]), SamplePath::from_fn(tg, 1, |t, x| x[0] = 1.0 - t / 2.0)];
    let flow = EmpiricalMeasureFlow::new(&atoms).unwrap();
    let (shifted, raw) = min_pairwise_distances(&flow, &SamplePath::constant(tg, &[0.1])).unwrap();
    assert_eq!(raw, 0.5);
    assert!((shifted - 0.4).abs() < 1e-15);
    let single = EmpiricalMeasureFlow::new(&atoms[..1]).unwrap();
    assert!(min_pairwise_distances(&single, &SamplePath::zeros(tg, 1)).is_err());
}

#[test]
fn runaway_particle_is_reported() {
    let tg = TimeGrid::dyadic(1.0, 4).unwrap();
    let sg = SpatialGrid::new(1.0, 64, 1).unwrap();
    let field = AveragedField::from_fn(sg, tg, |t, _, o| o[0] = t);
    let mut b = vec![SamplePath::zeros(tg, 1); 3];
    b[2] = SamplePath::from_fn(tg, 1, |t, x| x[0] = 400.0 * t);
    match simulate_particles(&field, &[0.0, 0.1, 0.2], &b, &SolveConfig::default()) {
        Err(Error::BlowUp { step, particle, .. }) => assert_eq!((step, particle), (1, Some(2))),
        other => panic!("expected blow-up, got {other:?}"),
    }
    assert!(simulate_particles(&field, &[0.0], &b, &SolveConfig::default()).is_err());
    assert!(simulate_particles(&field, &[], &[], &SolveConfig::default()).is_err());
}
