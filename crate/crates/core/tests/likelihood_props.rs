use gsca::likelihood::{binary_nll, grad_f1, grad_f2, inverse_link, quantitative_nll, LinkKind};
use ndarray::Array2;
use proptest::prelude::*;

const LINKS: [LinkKind; 2] = [LinkKind::Logit, LinkKind::Probit];

fn block(rows: usize, cols: usize, values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap()
}

/// Relative error of the analytic gradient against central differences.
fn fd_error<F: Fn(&Array2<f64>) -> f64>(f: F, theta: &Array2<f64>, grad: &Array2<f64>) -> f64 {
    let h = 1e-5;
    let mut num = Array2::<f64>::zeros(theta.dim());
    for idx in ndarray::indices(theta.dim()) {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[idx] += h;
        tm[idx] -= h;
        num[idx] = (f(&tp) - f(&tm)) / (2.0 * h);
    }
    let diff = (&num - grad).mapv(|v| v * v).sum().sqrt();
    let scale = num.mapv(|v| v * v).sum().sqrt().max(1e-12);
    diff / scale
}

proptest! {
    #[test]
    fn binary_gradient_matches_central_differences(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        bits in prop::collection::vec(any::<bool>(), 12),
        observed in prop::collection::vec(prop::bool::weighted(0.8), 12),
        link in 0usize..2,
    ) {
        let theta = block(3, 4, &vals);
        let x = Array2::from_shape_vec((3, 4), bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let q = Array2::from_shape_vec((3, 4), observed).unwrap();
        let kind = LINKS[link];
        let g = grad_f1(x.view(), theta.view(), q.view(), kind).unwrap();
        let err = fd_error(|t| binary_nll(x.view(), t.view(), q.view(), kind).unwrap(), &theta, &g);
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn quantitative_gradient_matches_central_differences(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        xs in prop::collection::vec(-5.0f64..5.0, 12),
        observed in prop::collection::vec(prop::bool::weighted(0.8), 12),
        sigma2 in 0.1f64..5.0,
    ) {
        let theta = block(4, 3, &vals);
        let x = block(4, 3, &xs);
        let q = Array2::from_shape_vec((4, 3), observed).unwrap();
        let g = grad_f2(x.view(), theta.view(), q.view(), sigma2).unwrap();
        let err = fd_error(|t| quantitative_nll(x.view(), t.view(), sigma2, q.view()).unwrap(), &theta, &g);
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn logit_curvature_is_at_most_a_quarter(t in -30.0f64..30.0, x in any::<bool>()) {
        let x = Array2::from_elem((1, 1), x as u8 as f64);
        let q = Array2::from_elem((1, 1), true);
        let f = |v: f64| binary_nll(x.view(), Array2::from_elem((1, 1), v).view(), q.view(), LinkKind::Logit).unwrap();
        let h = 1e-4;
        let second = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
        prop_assert!(second <= 0.25 + 1e-6, "second derivative {second} at {t}");
    }

    #[test]
    fn masked_entries_do_not_change_observed_contributions(
        vals in prop::collection::vec(-5.0f64..5.0, 6),
        junk in prop::collection::vec(-1e3f64..1e3, 6),
        observed in prop::collection::vec(any::<bool>(), 6),
        link in 0usize..2,
    ) {
        let theta = block(2, 3, &vals);
        let q = Array2::from_shape_vec((2, 3), observed).unwrap();
        let x1 = Array2::from_shape_fn((2, 3), |(i, j)| ((i + j) % 2) as f64);
        // unobserved cells hold arbitrary values; only the mask matters
        let mut x1_junk = x1.clone();
        let mut x2 = block(2, 3, &vals).mapv(|v| v * 0.5);
        let mut x2_junk = x2.clone();
        for (k, idx) in ndarray::indices((2, 3)).into_iter().enumerate() {
            if !q[idx] {
                x1_junk[idx] = junk[k];
                x2_junk[idx] = junk[k];
            }
        }
        x2.zip_mut_with(&q, |v, &o| if !o { *v = 0.0 });
        let kind = LINKS[link];
        prop_assert_eq!(
            binary_nll(x1.view(), theta.view(), q.view(), kind).unwrap(),
            binary_nll(x1_junk.view(), theta.view(), q.view(), kind).unwrap()
        );
        prop_assert_eq!(
            grad_f1(x1.view(), theta.view(), q.view(), kind).unwrap(),
            grad_f1(x1_junk.view(), theta.view(), q.view(), kind).unwrap()
        );
        prop_assert_eq!(
            quantitative_nll(x2.view(), theta.view(), 1.3, q.view()).unwrap(),
            quantitative_nll(x2_junk.view(), theta.view(), 1.3, q.view()).unwrap()
        );
        let g = grad_f2(x2_junk.view(), theta.view(), q.view(), 1.3).unwrap();
        for (gv, &o) in g.iter().zip(q.iter()) {
            if !o {
                prop_assert_eq!(*gv, 0.0);
            }
        }
    }
}

#[test]
fn inverse_link_is_increasing_on_a_dense_grid() {
    for kind in LINKS {
        // strict where neighbouring probabilities are distinct in f64 (the
        // upper tail saturates at 1 - ulp much earlier than the lower one)
        let (lo, hi) = match kind {
            LinkKind::Logit => (-36.0, 20.0),
            LinkKind::Probit => (-8.0, 5.0),
        };
        let n = 20_000;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=n {
            let t = lo + (hi - lo) * k as f64 / n as f64;
            let p = inverse_link(kind, t).unwrap();
            assert!(p > prev, "{kind:?} not increasing at {t}");
            assert!(p > 0.0 && p < 1.0);
            prev = p;
        }
        let mut prev = 0.0;
        for k in 0..=n {
            let t = -60.0 + 120.0 * k as f64 / n as f64;
            let p = inverse_link(kind, t).unwrap();
            assert!(p >= prev && p > 0.0 && p < 1.0, "{kind:?} at {t}");
            prev = p;
        }
    }
}
