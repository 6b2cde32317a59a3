use lrcs::altgdmin::{estimate_rank, rank_cutoff, truncate};
use lrcs::hierarchical::{soft_threshold, HierarchicalModel};
use lrcs::metrics::nsmse;
use lrcs::numerics::{orthonormality_error, row_dft_unitary, row_idft_unitary, subspace_distance, thin_qr};
use lrcs::operators::{frame_ops_from_plan, LinearOperator};
use lrcs::sampling::{golden_angle_pseudo_radial, synth_coil_maps, SamplingPlan, Scheme};
use lrcs::{CMatrix, CVector, MeasurementSet, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cmat(rows: usize, cols: usize, seed: u64) -> CMatrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    CMatrix::from_fn(rows, cols, |_, _| C64::new(r.sample(StandardNormal), r.sample(StandardNormal)))
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![
        (1usize..10).prop_map(|lines| Scheme::PseudoRadial { lines }),
        (1usize..40).prop_map(|m| Scheme::UniformFourier { m }),
        (1.0f64..4.0).prop_map(|reduction| Scheme::CartesianVd { reduction }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masked_fourier_adjoint(n1 in 4usize..16, n2 in 4usize..16, mc in 1usize..4, s in scheme(), seed in 0u64..1000) {
        let s = match s {
            Scheme::UniformFourier { m } => Scheme::UniformFourier { m: m.min(n1 * n2) },
            other => other,
        };
        let plan = SamplingPlan::generate(n1, n2, 2, mc, s, seed).unwrap();
        for op in frame_ops_from_plan(&plan).unwrap() {
            let x = cmat(op.input_len(), 1, seed).column(0).clone_owned();
            let y = cmat(op.output_len(), 1, seed + 1).column(0).clone_owned();
            let gap = (op.forward(&x).dotc(&y) - x.dotc(&op.backward(&y))).norm();
            prop_assert!(gap <= 1e-10 * x.norm() * y.norm());
            // |A| <= 1 for SOS-normalized coils and a unitary transform
            prop_assert!(op.forward(&x).norm() <= x.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn radial_mask_has_dc(n1 in 2usize..24, n2 in 2usize..24, lines in 1usize..12, frame in 0usize..50) {
        let m = golden_angle_pseudo_radial(n1, n2, lines, frame, 0).unwrap();
        prop_assert!(m.get(0, 0));
        prop_assert!(m.count() <= n1 * n2);
    }

    #[test]
    fn coil_maps_sum_of_squares(n1 in 2usize..20, n2 in 2usize..20, mc in 1usize..6, seed in 0u64..100) {
        let c = synth_coil_maps(n1, n2, mc, seed).unwrap();
        for p in 0..n1 * n2 {
            let s: f64 = c.maps().iter().map(|m| m[p].norm_sqr()).sum();
            prop_assert!((s - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn qr_basis_is_orthonormal_and_spans_input(n in 2usize..30, r in 1usize..5, seed in 0u64..1000) {
        prop_assume!(r <= n);
        let m = cmat(n, r, seed);
        let (q, rm) = thin_qr(&m).unwrap();
        prop_assert!(orthonormality_error(q.matrix()) <= 1e-10 * (r as f64).sqrt());
        prop_assert!((q.matrix() * &rm - &m).norm() <= 1e-10 * m.norm());
        let (again, _) = thin_qr(&m).unwrap();
        prop_assert_eq!(q.matrix(), again.matrix());
    }

    #[test]
    fn subspace_distance_is_symmetric_and_bounded(n in 3usize..20, r in 1usize..3, seed in 0u64..1000) {
        let a = thin_qr(&cmat(n, r, seed)).unwrap().0;
        let b = thin_qr(&cmat(n, r, seed + 7)).unwrap().0;
        let (ab, ba) = (subspace_distance(&a, &b).unwrap(), subspace_distance(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-10);
        prop_assert!(ab <= (r as f64).sqrt() + 1e-10);
        prop_assert!(subspace_distance(&a, &a).unwrap() <= 1e-10);
    }

    #[test]
    fn nsmse_is_a_bounded_scale_invariant_distance(n in 1usize..20, q in 1usize..6, seed in 0u64..1000, re in -5.0f64..5.0, im in -5.0f64..5.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let (t, e) = (cmat(n, q, seed), cmat(n, q, seed + 1));
        let v = nsmse(&t, &e).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let scaled = &e * C64::new(re, im);
        prop_assert!((nsmse(&t, &scaled).unwrap() - v).abs() <= 1e-10);
    }

    #[test]
    fn soft_threshold_shrinks_magnitude_and_keeps_phase(re in -10.0f64..10.0, im in -10.0f64..10.0, omega in 0.0f64..5.0) {
        let s = C64::new(re, im);
        let out = soft_threshold(s, omega);
        prop_assert!((out.norm() - (s.norm() - omega).max(0.0)).abs() <= 1e-12);
        if out.norm() > 0.0 {
            prop_assert!((out / out.norm() - s / s.norm()).norm() <= 1e-12);
        }
    }

    #[test]
    fn row_dft_round_trip(n in 1usize..8, q in 1usize..20, seed in 0u64..1000) {
        let m = cmat(n, q, seed);
        let f = row_dft_unitary(&m);
        prop_assert!((f.norm() - m.norm()).abs() <= 1e-10 * m.norm());
        prop_assert!((row_idft_unitary(&f) - &m).norm() <= 1e-10 * m.norm());
    }

    #[test]
    fn model_reconstruct_is_exact_sum(n in 1usize..10, q in 1usize..8, seed in 0u64..1000) {
        let mean = cmat(n, 1, seed).column(0).clone_owned();
        let (x, e) = (cmat(n, q, seed + 1), cmat(n, q, seed + 2));
        let z = HierarchicalModel::new(mean.clone(), x.clone(), e.clone()).unwrap().reconstruct();
        for k in 0..q {
            for i in 0..n {
                prop_assert_eq!(z[(i, k)], (mean[i] + x[(i, k)]) + e[(i, k)]);
            }
        }
    }

    #[test]
    fn truncation_caps_magnitudes(lens in proptest::collection::vec(1usize..20, 1..6), seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<CVector> = lens
            .iter()
            .map(|&l| CVector::from_fn(l, |_, _| C64::new(r.sample::<f64, _>(StandardNormal) * 10f64.powi(r.random_range(-2..4)), 0.0)))
            .collect();
        let t = truncate(&MeasurementSet::new(frames.clone())).unwrap();
        let limit = t.gamma.sqrt();
        for (orig, kept) in frames.iter().zip(&t.y.frames) {
            for (a, b) in orig.iter().zip(kept.iter()) {
                prop_assert!(b.norm() <= limit);
                prop_assert!(*b == *a || *b == C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn rank_rule_is_bounded_and_monotone_in_energy(
        raw in proptest::collection::vec(0.0f64..10.0, 10..60),
        b1 in 50.0f64..100.0,
        b2 in 50.0f64..100.0,
    ) {
        let mut sigma = raw;
        sigma.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sigma[0] > 0.0);
        let (n, q, mc, m) = (sigma.len() * 10, sigma.len(), 1, sigma.len() * 10);
        let j = rank_cutoff(n, q, mc, m).unwrap();
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let r_lo = estimate_rank(&sigma, n, q, mc, m, lo).unwrap();
        let r_hi = estimate_rank(&sigma, n, q, mc, m, hi).unwrap();
        prop_assert!(1 <= r_lo && r_lo <= r_hi && r_hi <= j);
    }
}
