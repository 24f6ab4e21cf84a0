use dcio_core::channel::{ChannelSpec, Preequalizer};
use dcio_core::harness::{analytic_ser, power_gain_at_ber};
use dcio_core::labeling::{bsa_optimize, is_swap_optimal, labeling_cost, reference_n0};
use dcio_core::model::{squared_distance, JointConstellation, StackedVector};
use dcio_core::optimizer::{linearize_distance, pairwise_distance};
use dcio_core::qfunc::{q, q_inverse};
use dcio_core::solver::{solve, AffineRow, ConvexSubproblem, QuadConstraint, QuadForm, SolveStatus, SolverOptions};
use dcio_core::transform::{assemble_frequency, dft, idft, phi_vector, real_samples, time_samples};
use num_complex::Complex64;
use proptest::prelude::*;

fn column(dims: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dims)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_inverts_idft(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..17)) {
        let x: Vec<Complex64> = v.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let back = dft(&idft(&x));
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn joint_samples_are_real_and_match_phi(nj in 0usize..4, c in column(7)) {
        let n = 8;
        let c = &c[..2 * nj + 1];
        let f = assemble_frequency(c, n).unwrap();
        let direct = real_samples(&f).unwrap();
        let t = time_samples(c, n).unwrap();
        for i in 0..n {
            let idx = if i == 0 { n } else { i };
            let phi = phi_vector(idx, n, nj).unwrap();
            prop_assert!((phi.dot(c) - t[i]).abs() < 1e-12);
            prop_assert!((direct[i] - t[i]).abs() < 1e-12);
        }
        // Parseval with mirrors counted twice
        let energy: f64 = t.iter().map(|x| x * x).sum();
        let freq = c[0] * c[0] + 2.0 * c[1..].iter().map(|x| x * x).sum::<f64>();
        prop_assert!((energy - freq).abs() < 1e-10 * (1.0 + freq));
    }

    #[test]
    fn equalized_bins_have_flat_gain(
        paths in prop::collection::vec((0.05f64..1.0, 0u32..8), 1..4),
        alpha in 0.2f64..2.0,
    ) {
        let n = 16;
        let spec = ChannelSpec::multipath(&paths);
        let z: Vec<_> = (0..n / 2).map(|k| spec.bin_response(k, n)).collect();
        prop_assume!(z.iter().all(|v| v.norm() > 1e-3) && z[0].im.abs() < 1e-12);
        let eq = Preequalizer::build(&spec, n, n / 2 - 1, alpha).unwrap();
        for k in 1..n / 2 {
            let mut c = vec![0.0; n - 1];
            c[2 * k - 1] = 1.0;
            let u = eq.apply(&c);
            let y = z[k] * Complex64::new(u[2 * k - 1], u[2 * k]);
            prop_assert!((y - Complex64::new(alpha, 0.0)).norm() < 1e-12);
        }
        prop_assert!((z[0].re * eq.f0 - alpha).abs() < 1e-12);
    }

    #[test]
    fn tangent_plane_never_overestimates(a in column(6), b in column(6)) {
        let v0 = StackedVector::new([a.clone(), b.clone()].concat(), 3).unwrap();
        let lin = linearize_distance(&v0, 0, 1).unwrap();
        let shifted: Vec<f64> = v0.values.iter().rev().map(|x| x * 0.7 + 0.1).collect();
        let v = StackedVector::new(shifted, 3).unwrap();
        prop_assert!(lin.eval(&v) <= pairwise_distance(&v, 0, 1).unwrap() + 1e-12);
        prop_assert!((lin.eval(&v0) - pairwise_distance(&v0, 0, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn q_is_decreasing_and_inverse_consistent(x in -6.0f64..6.0, dx in 1e-3f64..1.0) {
        prop_assert!(q(x + dx) < q(x));
        prop_assert!((q(x) + q(-x) - 1.0).abs() < 1e-14);
        let p = q(x);
        if p > 1e-12 && p < 1.0 - 1e-12 {
            prop_assert!((q_inverse(p) - x).abs() < 1e-6);
        }
    }

    #[test]
    fn union_bound_dominates(points in prop::collection::vec(column(3), 2..12), n0 in 0.01f64..3.0) {
        let c = JointConstellation::from_point_list(&points).unwrap();
        prop_assume!(c.min_distance() > 1e-6);
        let a = analytic_ser(&c, n0);
        prop_assert!(a.union >= a.nearest * (1.0 - 1e-12));
        prop_assert!(a.kissing >= 2.0 / points.len() as f64 - 1e-12);
    }

    #[test]
    fn bsa_returns_swap_optimal_bijection(points in prop::collection::vec(column(3), 8..=8), seed in any::<u64>()) {
        let c = JointConstellation::from_point_list(&points).unwrap();
        prop_assume!(c.min_distance() > 1e-3);
        let n0 = reference_n0(&c);
        let r = bsa_optimize(&c, n0, seed);
        let mut words = r.labeling.words().to_vec();
        words.sort_unstable();
        prop_assert_eq!(words, (0..8).collect::<Vec<_>>());
        prop_assert!(is_swap_optimal(&r.labeling, &c, n0));
        for w in r.trace.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        prop_assert!((labeling_cost(&r.labeling, &c, n0) - r.cost).abs() <= 1e-12 * r.cost.max(1e-300));
    }

    #[test]
    fn constant_shift_gives_constant_gain(shift in -3.0f64..3.0, slope in 0.1f64..1.0) {
        let a: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 10f64.powf(-slope * i as f64 / 2.0))).collect();
        let b: Vec<(f64, f64)> = a.iter().map(|&(s, v)| (s + shift, v)).collect();
        let g = power_gain_at_ber(&b, &a, 1e-4).unwrap();
        prop_assert!((g - shift).abs() < 1e-9);
    }
}

/// Random instance in two variables: maximize `s` subject to
/// `a_i·c - s ≥ b_i`, `c ≥ lo`, and `q1 c1² + q2 c2² ≤ P`.
#[derive(Debug, Clone)]
struct SmallInstance {
    s_rows: Vec<([f64; 2], f64)>,
    lo: [f64; 2],
    q: [f64; 2],
    budget: f64,
}

impl SmallInstance {
    fn problem(&self) -> ConvexSubproblem {
        let mut rows: Vec<AffineRow> = self
            .s_rows
            .iter()
            .map(|(a, b)| AffineRow::new(vec![(0, a[0]), (1, a[1])], true, *b))
            .collect();
        rows.push(AffineRow::new(vec![(0, 1.0)], false, self.lo[0]));
        rows.push(AffineRow::new(vec![(1, 1.0)], false, self.lo[1]));
        ConvexSubproblem {
            n_vars: 2,
            rows,
            quad: Some(QuadConstraint {
                form: QuadForm::Diagonal(self.q.to_vec()),
                budget: self.budget,
            }),
        }
    }

    fn value(&self, c: [f64; 2]) -> Option<f64> {
        let feasible = c[0] >= self.lo[0]
            && c[1] >= self.lo[1]
            && self.q[0] * c[0] * c[0] + self.q[1] * c[1] * c[1] <= self.budget;
        feasible.then(|| {
            self.s_rows
                .iter()
                .map(|(a, b)| a[0] * c[0] + a[1] * c[1] - b)
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Grid search over the bounding box followed by repeated zooming.
    fn oracle(&self) -> f64 {
        let r = [(self.budget / self.q[0]).sqrt(), (self.budget / self.q[1]).sqrt()];
        let (mut center, mut half) = ([0.0, 0.0], r);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..12 {
            let steps = 200;
            let mut arg = center;
            for i in 0..=steps {
                for j in 0..=steps {
                    let c = [
                        center[0] - half[0] + 2.0 * half[0] * i as f64 / steps as f64,
                        center[1] - half[1] + 2.0 * half[1] * j as f64 / steps as f64,
                    ];
                    if let Some(v) = self.value(c) {
                        if v > best {
                            best = v;
                            arg = c;
                        }
                    }
                }
            }
            center = arg;
            half = [half[0] * 0.1, half[1] * 0.1];
        }
        best
    }
}

fn instance() -> impl Strategy<Value = SmallInstance> {
    (
        prop::collection::vec(((-2.0f64..2.0, -2.0f64..2.0), -1.0f64..1.0), 1..8),
        (-1.0f64..0.0, -1.0f64..0.0),
        (0.2f64..2.0, 0.2f64..2.0),
        1.0f64..4.0,
    )
        .prop_map(|(rows, lo, q, budget)| SmallInstance {
            s_rows: rows.into_iter().map(|((a0, a1), b)| ([a0, a1], b)).collect(),
            lo: [lo.0, lo.1],
            q: [q.0, q.1],
            budget,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn solver_matches_zoomed_grid_oracle(inst in instance()) {
        let sol = solve(&inst.problem(), &[0.0, 0.0], &SolverOptions::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let want = inst.oracle();
        prop_assert!((sol.s - want).abs() <= 1e-3 * want.abs().max(1.0), "solver {} oracle {}", sol.s, want);
        prop_assert!(inst.problem().max_violation(&sol.c, sol.s) <= 1e-9);
    }
}

#[test]
fn solver_with_large_budget_matches_lp_vertex() {
    // max s: c1 - s ≥ 0, c2 - s ≥ 0, c1 + c2 ≤ 3 (as -c1 - c2 ≥ -3), c ≥ 0;
    // the LP optimum is the vertex (1.5, 1.5)
    let p = ConvexSubproblem {
        n_vars: 2,
        rows: vec![
            AffineRow::new(vec![(0, 1.0)], true, 0.0),
            AffineRow::new(vec![(1, 1.0)], true, 0.0),
            AffineRow::new(vec![(0, -1.0), (1, -1.0)], false, -3.0),
            AffineRow::new(vec![(0, 1.0)], false, 0.0),
            AffineRow::new(vec![(1, 1.0)], false, 0.0),
        ],
        quad: Some(QuadConstraint {
            form: QuadForm::Diagonal(vec![1.0, 1.0]),
            budget: 1e6,
        }),
    };
    let sol = solve(&p, &[0.1, 0.1], &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.s - 1.5).abs() < 1e-6);
    assert!(squared_distance(&sol.c, &[1.5, 1.5]) < 1e-10);
}
