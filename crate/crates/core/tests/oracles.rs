//! Allocation and solver checked against brute-force active-set enumeration
//! written independently of the library.

use dockswarm::allocation::{allocate, to_pwm, PlanarWrench, ThrusterLayout};
use dockswarm::solver::{solve, DecisionVector, Objective, SolverConfig, SolverError};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every face of the box `0 ≤ x ≤ ub` (each coordinate at its lower bound,
/// upper bound or free) solved with the given equality constraints; the
/// feasible candidate with the least objective wins.
fn brute_force(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    lb: &[f64],
    ub: &[f64],
    eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Option<DVector<f64>> {
    let n = a.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut digits = code;
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        for i in 0..n {
            match digits % 3 {
                0 => x[i] = lb[i],
                1 => x[i] = ub[i],
                _ => free.push(i),
            }
            digits /= 3;
        }
        let m = eq.map_or(0, |(b, _)| b.nrows());
        let k = free.len();
        if k + m > 0 {
            let mut lhs = DMatrix::zeros(k + m, k + m);
            let mut rhs = DVector::zeros(k + m);
            let gx = g * &x;
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    lhs[(r, c)] = g[(i, j)];
                }
                rhs[r] = -a[i] - gx[i];
            }
            if let Some((b, w)) = eq {
                let bx = b * &x;
                for r in 0..m {
                    for (c, &j) in free.iter().enumerate() {
                        lhs[(k + r, c)] = b[(r, j)];
                        lhs[(c, k + r)] = b[(r, j)];
                    }
                    rhs[k + r] = w[r] - bx[r];
                }
            }
            let Some(pinv) = lhs.pseudo_inverse(1e-12).ok() else { continue };
            let sol = pinv * rhs;
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        if (0..n).any(|i| x[i] < lb[i] - 1e-10 || x[i] > ub[i] + 1e-10) {
            continue;
        }
        if let Some((b, w)) = eq {
            if (b * &x - w).amax() > 1e-9 {
                continue;
            }
        }
        let f = 0.5 * x.dot(&(g * &x)) + a.dot(&x);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

fn b_matrix(layout: &ThrusterLayout) -> DMatrix<f64> {
    let b = layout.effectiveness();
    DMatrix::from_fn(3, b.ncols(), |r, c| b[(r, c)])
}

fn oracle_thrusts(w: &PlanarWrench, layout: &ThrusterLayout) -> DVector<f64> {
    let n = layout.len();
    let b = b_matrix(layout);
    let lb = vec![0.0; n];
    let ub = layout.max_thrusts();
    let eye = DMatrix::identity(n, n);
    let wv = DVector::from_column_slice(w.as_slice());
    if let Some(t) = brute_force(&eye, &DVector::zeros(n), &lb, &ub, Some((&b, &wv))) {
        return t;
    }
    let eps = 1e-9;
    let g = (b.transpose() * &b + &eye * eps) * 2.0;
    let a = -(b.transpose() * &wv) * 2.0;
    let closest = brute_force(&g, &a, &lb, &ub, None).unwrap();
    let w_star = &b * &closest;
    brute_force(&eye, &DVector::zeros(n), &lb, &ub, Some((&b, &w_star))).unwrap_or(closest)
}

#[test]
fn allocation_matches_exhaustive_active_set() {
    let layout = ThrusterLayout::slider();
    let b = b_matrix(&layout);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..100 {
        let w = if k % 4 != 3 {
            let t = DVector::from_fn(layout.len(), |i, _| rng.random_range(0.0..layout.max_thrusts()[i]));
            let bw = &b * t;
            PlanarWrench::new(bw[0], bw[1], bw[2])
        } else {
            PlanarWrench::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0))
        };
        let got = allocate(&w, &layout).unwrap();
        let want = oracle_thrusts(&w, &layout);
        for (g, e) in got.thrusts.iter().zip(want.iter()) {
            assert!((g - e).abs() < 1e-6, "wrench {k}: {:?} vs {:?}", got.thrusts, want.as_slice());
        }
    }
}

struct BoxQp {
    g: DMatrix<f64>,
    a: DVector<f64>,
}

impl Objective for BoxQp {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, z: &[f64], _: f64) -> Result<f64, SolverError> {
        let z = DVector::from_column_slice(z);
        Ok(0.5 * z.dot(&(&self.g * &z)) + self.a.dot(&z))
    }

    fn value_and_gradient(&self, z: &[f64], p: f64, grad: &mut [f64]) -> Result<f64, SolverError> {
        let zv = DVector::from_column_slice(z);
        grad.copy_from_slice((&self.g * zv + &self.a).as_slice());
        self.value(z, p)
    }
}

#[test]
fn solver_matches_exhaustive_box_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SolverConfig { tolerance: 1e-10, max_inner_iterations: 5000, ..SolverConfig::default() };
    for _ in 0..30 {
        let n = rng.random_range(1..=6);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let g = m.transpose() * &m + DMatrix::identity(n, n) * 0.3;
        let a = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let lb: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let ub: Vec<f64> = lb.iter().map(|l| l + rng.random_range(0.1..1.0)).collect();
        let want = brute_force(&g, &a, &lb, &ub, None).unwrap();
        let (z, report) = solve(&BoxQp { g, a }, &DecisionVector::new(vec![0.0; n], lb, ub), &cfg).unwrap();
        assert!(report.converged);
        for (x, y) in z.values.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", z.values, want.as_slice());
        }
    }
}

proptest! {
    #[test]
    fn allocation_respects_bounds_and_reports_achieved(fx in -2.0..2.0f64, fy in -2.0..2.0f64, tz in -0.6..0.6f64) {
        let layout = ThrusterLayout::slider();
        let a = allocate(&PlanarWrench::new(fx, fy, tz), &layout).unwrap();
        for (t, m) in a.thrusts.iter().zip(layout.max_thrusts()) {
            prop_assert!(*t >= -1e-9 && *t <= m + 1e-9);
        }
        let bt = layout.effectiveness() * DVector::from_vec(a.thrusts.clone());
        prop_assert!((bt - a.achieved).amax() < 1e-9);
        if !a.saturated {
            prop_assert!((a.achieved - PlanarWrench::new(fx, fy, tz)).amax() < 1e-6);
        }
    }

    #[test]
    fn pwm_mean_thrust_within_one_rounding_step(fx in -1.0..1.0f64, fy in -1.0..1.0f64, tz in -0.3..0.3f64) {
        let layout = ThrusterLayout::slider();
        let a = allocate(&PlanarWrench::new(fx, fy, tz), &layout).unwrap();
        let (period, min_on) = (0.1, 0.01);
        let mean = to_pwm(&a.thrusts, &layout, period, min_on).mean_thrusts(&layout);
        for ((t, m), tmax) in a.thrusts.iter().zip(&mean).zip(layout.max_thrusts()) {
            prop_assert!((t - m).abs() <= tmax * min_on / period + 1e-12);
        }
    }
}
