use mfy_core::kernels::*;
use mfy_core::{GriddedField, SpatialGrid};

fn presets(dim: usize) -> Vec<Kernel> {
    let mut out = vec![
        Kernel::power_law(-1.0, 0.1, dim).unwrap(),
        Kernel::power_law(-0.5, 0.1, dim).unwrap(),
        Kernel::new(Family::LennardJones { p: 1.0, mode: Mode::Gradient }, 0.2, dim).unwrap(),
        Kernel::linear((0..dim * dim).map(|i| if i % (dim + 1) == 0 { -1.0 } else { 0.5 }).collect(), dim).unwrap(),
        Kernel::zero(dim),
    ];
    if dim == 2 {
        out.push(Kernel::new(Family::BiotSavart, 0.1, 2).unwrap());
    }
    out
}

fn sample_points(dim: usize) -> Vec<Vec<f64>> {
    (0..40)
        .map(|i| (0..dim).map(|a| ((i * 7 + a * 13) as f64 * 0.61).sin() * 1.7).collect())
        .collect()
}

#[test]
fn odd_families_are_odd() {
    for dim in 1..=3 {
        for k in presets(dim) {
            assert!(k.is_odd());
            let c = k.components();
            for x in sample_points(dim) {
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                let (mut a, mut b) = (vec![0.0; c], vec![0.0; c]);
                k.eval(&x, &mut a);
                k.eval(&neg, &mut b);
                for i in 0..c {
                    assert!((a[i] + b[i]).abs() <= 1e-14 * a[i].abs().max(1.0), "{k:?} at {x:?}");
                }
            }
        }
    }
}

#[test]
fn homogeneity_outside_the_ball() {
    for dim in 1..=3 {
        for sigma in [-0.5, -1.0, -1.5, -2.0] {
            let k = Kernel::power_law(sigma, 0.01, dim).unwrap();
            for x in sample_points(dim) {
                if mfy_core::stats::norm(&x) < 0.05 {
                    continue;
                }
                let mut base = vec![0.0; dim];
                k.eval(&x, &mut base);
                for lambda in [2.0, 4.0] {
                    let y: Vec<f64> = x.iter().map(|v| v * lambda).collect();
                    let mut out = vec![0.0; dim];
                    k.eval(&y, &mut out);
                    for a in 0..dim {
                        let expect = lambda.powf(sigma) * base[a];
                        assert!((out[a] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
                    }
                }
            }
        }
    }
    let bs = Kernel::new(Family::BiotSavart, 0.01, 2).unwrap();
    let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
    bs.eval(&[0.3, -0.7], &mut a);
    bs.eval(&[0.6, -1.4], &mut b);
    assert!((b[0] - a[0] / 2.0).abs() < 1e-15 && (b[1] - a[1] / 2.0).abs() < 1e-15);
}

#[test]
fn mollification_is_continuous_and_bounded() {
    for sigma in [-0.5, -1.0, -2.0] {
        let eps = 0.05;
        let k = Kernel::power_law(sigma, eps, 1).unwrap();
        let at_eps = eps.powf(sigma);
        let (mut inside, mut outside) = ([0.0], [0.0]);
        k.eval(&[eps * (1.0 - 1e-9)], &mut inside);
        k.eval(&[eps * (1.0 + 1e-9)], &mut outside);
        assert!((inside[0] - outside[0]).abs() < 1e-6 * at_eps);
        let mut worst = 0.0f64;
        for i in 0..=1000 {
            let mut v = [0.0];
            k.eval(&[eps * i as f64 / 1000.0], &mut v);
            worst = worst.max(v[0].abs());
        }
        assert!(worst <= 2.0 * at_eps, "sigma {sigma}: {worst} vs {at_eps}");
    }
}

#[test]
fn biot_savart_is_perpendicular() {
    let k = Kernel::new(Family::BiotSavart, 0.05, 2).unwrap();
    for x in sample_points(2) {
        let mut v = [0.0; 2];
        k.eval(&x, &mut v);
        assert!((v[0] * x[0] + v[1] * x[1]).abs() < 1e-15);
    }
    assert!(Kernel::new(Family::BiotSavart, 0.05, 3).is_err());
}

#[test]
fn singular_families_need_positive_epsilon() {
    assert!(Kernel::power_law(-1.0, 0.0, 1).is_err());
    assert!(Kernel::new(Family::MollifiedDirac, -1.0, 1).is_err());
    assert!(Kernel::linear(vec![1.0, 2.0], 1).is_err());
}

#[test]
fn gaussian_blocks_decay_fast() {
    let g = SpatialGrid::new(8.0, 1 << 12, 1).unwrap();
    let k = Kernel::new(Family::MollifiedDirac, 0.25, 1).unwrap();
    let f = evaluate_on_grid(&k, &g).unwrap();
    let b = besov_block_norms(&f, LpNorm::L1, 8).unwrap();
    let top = b.iter().cloned().fold(0.0, f64::max);
    for k in 5..b.len() {
        assert!(b[k] <= (b[k - 1] / 10.0).max(1e-13 * top), "block {}: {:?}", k as i64 - 1, b);
    }
}

#[test]
fn block_scaling_of_power_laws() {
    let g = SpatialGrid::new(16.0, 1 << 14, 1).unwrap();
    for sigma in [-0.5, -1.0, -1.5] {
        let k = Kernel::power_law(sigma, 1.0 / 256.0, 1).unwrap();
        let b = besov_block_norms(&evaluate_on_grid(&k, &g).unwrap(), LpNorm::L1, 7).unwrap();
        let scaled: Vec<f64> = (2..=5).map(|j: i32| 2f64.powf((sigma + 1.0) * j as f64) * b[(j + 1) as usize]).collect();
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 1.5, "sigma {sigma}: {scaled:?}");
    }
}

#[test]
fn block_norm_orders() {
    let g = SpatialGrid::new(4.0, 256, 1).unwrap();
    let f = GriddedField::from_fn(g, 1, |x, o| o[0] = (-x[0] * x[0]).exp());
    let l1 = besov_block_norms(&f, LpNorm::L1, 4).unwrap();
    let linf = besov_block_norms(&f, LpNorm::Inf, 4).unwrap();
    let l2 = besov_block_norms(&f, LpNorm::L2, 4).unwrap();
    assert_eq!(l1.len(), 6);
    for k in 0..6 {
        // on a domain of length 8: ‖f‖₁ ≤ 8 ‖f‖_∞ and ‖f‖₂ ≤ √8 ‖f‖_∞
        assert!(l1[k] <= 8.0 * linf[k] * (1.0 + 1e-12));
        assert!(l2[k] <= 8f64.sqrt() * linf[k] * (1.0 + 1e-12));
    }
    assert!(besov_block_norms(&f, LpNorm::L1, 9).is_err());
}

#[test]
fn threshold_table() {
    assert_eq!(hurst_threshold(0.0).unwrap(), 0.25);
    assert_eq!(hurst_threshold(-1.0).unwrap(), 1.0 / 6.0);
    assert_eq!(hurst_threshold(-2.0).unwrap(), 0.125);
    assert!(hurst_threshold(0.5).is_err());
}

#[test]
fn kernel_strings() {
    for s in ["power_law:-1,eps=0.05", "biot_savart,eps=0.02", "dirac,eps=0.1", "lennard_jones:1,eps=0.05", "linear:-1", "zero", "power_law:-0.5,eps=0.1,mode=radial"] {
        let spec: KernelSpec = s.parse().unwrap();
        assert_eq!(spec.to_string(), s);
        let dim = if s.starts_with("biot") { 2 } else { 1 };
        spec.build(dim).unwrap();
    }
    assert!("power_law:-1".parse::<KernelSpec>().unwrap().build(1).is_err());
    assert!("warp:3".parse::<KernelSpec>().unwrap().build(1).is_err());
    assert_eq!("lennard_jones:1.5".parse::<KernelSpec>().unwrap().sigma(), Some(-3.0));
}
