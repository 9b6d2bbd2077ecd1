use bppeps::tensor::{c, contract, eigh, matricize, svd, DenseTensor, Matrix, C64};
use proptest::prelude::*;

fn matrix_strategy(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, k)| {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), r * k)
            .prop_map(move |v| Matrix::from_vec(r, k, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(m in matrix_strategy(7)) {
        let s = svd(&m).unwrap();
        prop_assert!(s.reconstruct().max_abs_diff(&m) < 1e-11);
        prop_assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.s.iter().all(|&x| x >= 0.0));
        let k = s.s.len();
        prop_assert!(s.u.adjoint().mul(&s.u).max_abs_diff(&Matrix::identity(k)) < 1e-11);
        prop_assert!(s.v.adjoint().mul(&s.v).max_abs_diff(&Matrix::identity(k)) < 1e-11);
    }

    #[test]
    fn eigh_diagonalizes_hermitian(m in matrix_strategy(6)) {
        let n = m.rows();
        let sq = Matrix::from_fn(n, n, |i, j| if j < m.cols() { m[(i, j)] } else { c(0.3, -0.1) });
        let h = sq.hermitian_part();
        let (vals, vecs) = eigh(&h).unwrap();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let lhs = h.mul(&vecs);
        let rhs = Matrix::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
        prop_assert!(vecs.adjoint().mul(&vecs).max_abs_diff(&Matrix::identity(n)) < 1e-11);
    }

    #[test]
    fn contraction_matches_matmul(a in matrix_strategy(5), seed in 0u64..1000) {
        let (r, k) = (a.rows(), a.cols());
        let b = Matrix::from_fn(k, 3, |i, j| c(((i * 7 + j * 3) as u64 ^ seed) as f64 / 997.0, (i + j) as f64 * 0.1));
        let ta = DenseTensor::from_matrix(&a);
        let tb = DenseTensor::from_matrix(&b);
        let t = contract(&ta, &tb, &[(1, 0)]).unwrap();
        prop_assert_eq!(t.shape(), &[r, 3][..]);
        let want = a.mul(&b);
        let got = matricize(&t, &[0]).unwrap();
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn multi_leg_contraction_matches_naive_sum() {
    // a[i,j,k] · b[k,l,j] summed over j and k.
    let (ni, nj, nk, nl) = (2, 3, 2, 4);
    let av: Vec<C64> = (0..ni * nj * nk).map(|x| c(x as f64 * 0.5 - 1.0, (x % 3) as f64)).collect();
    let bv: Vec<C64> = (0..nk * nl * nj).map(|x| c((x % 5) as f64 - 2.0, x as f64 * 0.1)).collect();
    let a = DenseTensor::new(vec![ni, nj, nk], av).unwrap();
    let b = DenseTensor::new(vec![nk, nl, nj], bv).unwrap();
    let t = contract(&a, &b, &[(1, 2), (2, 0)]).unwrap();
    assert_eq!(t.shape(), &[ni, nl]);
    for i in 0..ni {
        for l in 0..nl {
            let mut want = c(0.0, 0.0);
            for j in 0..nj {
                for k in 0..nk {
                    want += a.get(&[i, j, k]) * b.get(&[k, l, j]);
                }
            }
            assert!((t.get(&[i, l]) - want).norm() < 1e-12);
        }
    }
}

#[test]
fn contraction_rejects_mismatched_legs() {
    let a = DenseTensor::zeros(vec![2, 3]);
    let b = DenseTensor::zeros(vec![2, 3]);
    assert!(contract(&a, &b, &[(1, 0)]).is_err());
    assert!(contract(&a, &b, &[(0, 0), (0, 1)]).is_err());
}

#[test]
fn permute_roundtrip() {
    let data: Vec<C64> = (0..24).map(|x| c(x as f64, 0.0)).collect();
    let t = DenseTensor::new(vec![2, 3, 4], data).unwrap();
    let p = t.permute(&[2, 0, 1]).unwrap();
    assert_eq!(p.shape(), &[4, 2, 3]);
    assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
    let back = p.permute(&[1, 2, 0]).unwrap();
    assert_eq!(back, t);
}
