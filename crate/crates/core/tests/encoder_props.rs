mod common;

use common::{column, dist, gaussian_dict, random_hyper, unit_sample};
use kspc_core::encoder::{
    encode, encode_batch, encode_iterative, encode_iterative_with_state, encode_unrolled,
    ProximalDescent,
};
use kspc_core::shrinkage::{stacked_prox, top_k_mask};
use kspc_core::{
    build_encoder_params, objective_ksparse, objective_rpca, DatasetMatrix, Dictionary,
    EncoderParams, Hyper, Matrix, SparseRepresentation, Variant,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn objective(params: &EncoderParams, x: &[f64], rep: &SparseRepresentation) -> f64 {
    let h = params.hyper();
    let d = params.dictionary().atoms();
    let (x, s, o) = (column(x), column(&rep.s), column(&rep.o));
    match h.variant {
        Variant::Rpca => objective_rpca(&x, d, &s, &o, h.lambda_star, h.lambda).unwrap(),
        Variant::KSparse => {
            objective_ksparse(&x, d, &s, &o, h.lambda_star, h.lambda, h.k_star, h.k).unwrap()
        }
    }
}

#[test]
fn unrolled_equals_truncated_iteration_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for ksparse in [false, true] {
        for _ in 0..30 {
            let d = gaussian_dict(&mut rng, 5, 8);
            let x = unit_sample(&mut rng, 5);
            for depth in [1, 5, 20] {
                let hyper = random_hyper(&mut rng, ksparse, 5, 8).with_depth(depth);
                let params = build_encoder_params(&d, &hyper).unwrap();
                let (unrolled, trace) = encode_unrolled(&x, &params).unwrap();
                let iterative = encode_iterative(&x, &params, 0.0, depth).unwrap();
                assert_eq!(trace.depth(), depth);
                for (a, b) in unrolled
                    .s
                    .iter()
                    .chain(&unrolled.o)
                    .zip(iterative.s.iter().chain(&iterative.o))
                {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                assert_eq!(encode(&x, &params).unwrap(), unrolled);
            }
        }
    }
}

#[test]
fn objective_never_increases_along_the_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for instance in 0..100 {
        let ksparse = instance % 2 == 1;
        let d = gaussian_dict(&mut rng, 5, 8);
        let x = unit_sample(&mut rng, 5);
        let hyper = random_hyper(&mut rng, ksparse, 5, 8);
        let params = build_encoder_params(&d, &hyper).unwrap();
        let mut pd = ProximalDescent::new(&params, &x).unwrap();
        let mut prev = objective(&params, &x, &pd.representation());
        for step in 0..200 {
            pd.step().unwrap();
            let cur = objective(&params, &x, &pd.representation());
            assert!(
                cur <= prev + 1e-9,
                "instance {instance} step {step}: {prev} -> {cur}"
            );
            prev = cur;
        }
    }
}

#[test]
fn one_more_layer_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for ksparse in [false, true] {
        for _ in 0..30 {
            let d = gaussian_dict(&mut rng, 5, 8);
            let x = unit_sample(&mut rng, 5);
            let base = random_hyper(&mut rng, ksparse, 5, 8);
            let mut prev = f64::INFINITY;
            for depth in 1..15 {
                let params = build_encoder_params(&d, &base.with_depth(depth)).unwrap();
                let cur = objective(&params, &x, &encode(&x, &params).unwrap());
                assert!(cur <= prev + 1e-9);
                prev = cur;
            }
        }
    }
}

#[test]
fn deep_unrolling_approaches_the_converged_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = [0.0f64; 3];
    for _ in 0..50 {
        let d = gaussian_dict(&mut rng, 5, 8);
        let x = unit_sample(&mut rng, 5);
        let hyper = Hyper::rpca(0.5, 0.2);
        let params = build_encoder_params(&d, &hyper).unwrap();
        let converged = encode_iterative(&x, &params, 1e-12, 1_000_000).unwrap();
        for (slot, depth) in [30, 300, 3000].into_iter().enumerate() {
            let params = build_encoder_params(&d, &hyper.with_depth(depth)).unwrap();
            let unrolled = encode(&x, &params).unwrap();
            worst[slot] = worst[slot].max(dist(&unrolled.s, &converged.s));
        }
    }
    eprintln!("worst distance at depth 30/300/3000: {worst:?}");
    assert!(worst[1] <= worst[0] && worst[2] <= worst[1]);
    assert!(worst[2] <= 1e-6, "worst code distance {}", worst[2]);
}

#[test]
fn converged_state_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let tol = 1e-9;
    for ksparse in [false, true] {
        for _ in 0..30 {
            let d = gaussian_dict(&mut rng, 5, 8);
            let x = unit_sample(&mut rng, 5);
            let params = build_encoder_params(&d, &random_hyper(&mut rng, ksparse, 5, 8)).unwrap();
            let (_, state) = encode_iterative_with_state(&x, &params, tol, 100_000).unwrap();
            let next = stacked_prox(&state.b, &params).unwrap();
            let znorm = state.z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dist(&next, &state.z) <= tol * znorm.max(1.0) * (1.0 + 1e-9));
        }
    }
}

#[test]
fn ksparse_layers_shrink_outside_the_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..30 {
        let d = gaussian_dict(&mut rng, 5, 8);
        let x = unit_sample(&mut rng, 5);
        let hyper = random_hyper(&mut rng, true, 5, 8).with_depth(6);
        let params = build_encoder_params(&d, &hyper).unwrap();
        let (_, trace) = encode_unrolled(&x, &params).unwrap();
        let t = params.thresholds();
        for layer in 0..6 {
            let b = &trace.pre_activation(layer)[..8];
            let z = &trace.output(layer)[..8];
            let mask = top_k_mask(b, hyper.k_star).unwrap();
            for i in 0..8 {
                if !mask[i] {
                    assert!(z[i].abs() <= (b[i].abs() - t[i]).max(0.0) + 1e-15);
                }
            }
        }
    }
}

#[test]
fn zero_sample_stays_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = gaussian_dict(&mut rng, 5, 8);
    for ksparse in [false, true] {
        let params = build_encoder_params(&d, &random_hyper(&mut rng, ksparse, 5, 8)).unwrap();
        let (rep, state) = encode_iterative_with_state(&[0.0; 5], &params, 1e-12, 50).unwrap();
        assert_eq!(state.iter, 1);
        assert!(rep.s.iter().chain(&rep.o).chain(&rep.l).all(|&v| v == 0.0));
    }
}

#[test]
fn scalar_rpca_with_large_outlier_penalty_recovers_the_code() {
    let d = Dictionary::new(Matrix::from_rows(&[&[1.0]]).unwrap()).unwrap();
    let params = build_encoder_params(&d, &Hyper::rpca(0.0, 10.0)).unwrap();
    let rep = encode_iterative(&[1.0], &params, 1e-12, 10_000).unwrap();
    assert_eq!(rep.o, vec![0.0]);
    assert!((rep.s[0] - 1.0).abs() < 1e-9);
}

#[test]
fn unprotected_nothing_means_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..10 {
        let d = gaussian_dict(&mut rng, 5, 8);
        let x = unit_sample(&mut rng, 5);
        let params = build_encoder_params(&d, &Hyper::ksparse(0.7, 0.4, 8, 5)).unwrap();
        let rep = encode_iterative(&x, &params, 1e-13, 100_000).unwrap();
        let resid: Vec<f64> = (0..5).map(|i| x[i] - rep.l[i] - rep.o[i]).collect();
        assert!(resid.iter().all(|r| r.abs() < 1e-8), "{resid:?}");
    }
}

#[test]
fn batch_encoding_is_columnwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let d = gaussian_dict(&mut rng, 5, 8);
    let params = build_encoder_params(&d, &Hyper::ksparse(0.3, 0.2, 3, 1)).unwrap();

    let empty = DatasetMatrix::new(Matrix::zeros(5, 0), None).unwrap();
    let (s, o) = encode_batch(&empty, &params).unwrap();
    assert_eq!((s.rows(), s.cols(), o.rows(), o.cols()), (8, 0, 5, 0));

    let cols: Vec<Vec<f64>> = (0..4).map(|_| unit_sample(&mut rng, 5)).collect();
    let x = Matrix::from_columns(5, &cols).unwrap();
    let (s, o) = encode_batch(&DatasetMatrix::new(x.clone(), None).unwrap(), &params).unwrap();
    let perm = [2, 0, 3, 1];
    let (ps, po) = encode_batch(
        &DatasetMatrix::new(x.select_columns(&perm), None).unwrap(),
        &params,
    )
    .unwrap();
    for (j, &p) in perm.iter().enumerate() {
        assert_eq!(ps.col(j), s.col(p));
        assert_eq!(po.col(j), o.col(p));
    }

    let same = Matrix::from_columns(5, &[cols[0].clone(), cols[0].clone()]).unwrap();
    let (ss, _) = encode_batch(&DatasetMatrix::new(same, None).unwrap(), &params).unwrap();
    assert_eq!(ss.col(0), ss.col(1));
}
