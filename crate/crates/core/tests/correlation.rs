#![allow(clippy::needless_range_loop)]

use cmm_core::correlation::{
    aggregate_context, apply_topk, correlate, head_average, merge_heads, project_shared,
    split_heads,
};
use cmm_core::fixtures::normal_matrix;
use cmm_core::{CorrelationWeights, GridEmbeddings, Matrix, TokenEmbeddings};
use cmm_oracle as oracle;

fn tokens(t: usize, d: usize, seed: u64) -> TokenEmbeddings {
    TokenEmbeddings::new(normal_matrix(t, d, seed, 100)).unwrap()
}

fn grids(g: usize, d: usize, seed: u64) -> GridEmbeddings {
    GridEmbeddings::new(normal_matrix(g, d, seed, 101)).unwrap()
}

fn weights(dt: usize, dv: usize, ds: usize, seed: u64) -> CorrelationWeights {
    CorrelationWeights {
        w_text: normal_matrix(dt, ds, seed, 102).scale(1.0 / (dt as f64).sqrt()),
        w_vision: normal_matrix(dv, ds, seed, 103).scale(1.0 / (dv as f64).sqrt()),
    }
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], j))
}

#[test]
fn projection_matches_matmul_oracle() {
    let (xt, xv, w) = (tokens(3, 8, 1), grids(5, 8, 1), weights(8, 8, 8, 1));
    let (pt, pv) = project_shared(&xt, &xv, &w).unwrap();
    let want_t = oracle::matmul(&oracle::rows(xt.values()), &oracle::rows(&w.w_text));
    let want_v = oracle::matmul(&oracle::rows(xv.values()), &oracle::rows(&w.w_vision));
    assert!(oracle::max_abs(&oracle::rows(&pt), &want_t) <= 1e-12);
    assert!(oracle::max_abs(&oracle::rows(&pv), &want_v) <= 1e-12);
}

#[test]
fn projection_of_zero_inputs_is_zero() {
    let xt = TokenEmbeddings::new(Matrix::zeros(3, 8)).unwrap();
    let xv = GridEmbeddings::new(Matrix::zeros(5, 6)).unwrap();
    let (pt, pv) = project_shared(&xt, &xv, &weights(8, 6, 8, 2)).unwrap();
    assert!(pt.as_slice().iter().chain(pv.as_slice()).all(|&v| v == 0.0));
    assert!(project_shared(&xt, &xv, &weights(8, 8, 8, 2)).is_err());
}

#[test]
fn split_heads_matches_index_arithmetic() {
    let x = normal_matrix(6, 16, 4, 0);
    let t = split_heads(&x, 4).unwrap();
    assert_eq!(t.dims(), [4, 6, 4]);
    for h in 0..4 {
        for i in 0..6 {
            for c in 0..4 {
                assert_eq!(t.get(h, i, c), x.as_slice()[i * 16 + h * 4 + c]);
            }
        }
    }
    assert_eq!(merge_heads(&t), x);
}

#[test]
fn correlate_matches_loop_oracle() {
    // H = 2, T = 3, G = 5, D_H = 4.
    let xt = normal_matrix(3, 8, 6, 0);
    let xv = normal_matrix(5, 8, 6, 1);
    let s = correlate(&split_heads(&xt, 2).unwrap(), &split_heads(&xv, 2).unwrap()).unwrap();
    let want = oracle::correlation_scores(&oracle::rows(&xt), &oracle::rows(&xv), 2);
    for h in 0..2 {
        for t in 0..3 {
            for g in 0..5 {
                assert!((s.scores.get(h, t, g) - want[h][t][g]).abs() <= 1e-10);
            }
        }
    }
    s.check_invariants(1e-9).unwrap();
}

#[test]
fn topk_matches_mask_then_normalize() {
    let xt = normal_matrix(4, 8, 8, 0);
    let xv = normal_matrix(5, 8, 8, 1);
    let s = correlate(&split_heads(&xt, 2).unwrap(), &split_heads(&xv, 2).unwrap()).unwrap();
    let top = apply_topk(s.clone(), 3).unwrap();
    top.check_invariants(1e-9).unwrap();
    for h in 0..2 {
        for t in 0..4 {
            let want = oracle::mask_and_normalize(s.scores.lane(h, t), 3);
            for (g, w) in want.iter().enumerate() {
                assert!((top.renormalized.get(h, t, g) - w).abs() <= 1e-15);
                assert_eq!(top.mask_row(h, t)[g], *w != 0.0);
            }
        }
    }
}

#[test]
fn aggregate_matches_weighted_sum_oracle() {
    let xt = normal_matrix(6, 12, 9, 0);
    let xv = normal_matrix(5, 12, 9, 1);
    let s = correlate(&split_heads(&xt, 3).unwrap(), &split_heads(&xv, 3).unwrap()).unwrap();
    let s = apply_topk(s, 2).unwrap();
    let c = aggregate_context(&s, &xv).unwrap();
    let renorm: Vec<oracle::Rows> = (0..3).map(|h| oracle::rows(&s.renormalized.slice(h))).collect();
    let want = oracle::context(&renorm, &oracle::rows(&xv));
    assert!(oracle::max_abs(&oracle::rows(&c), &want) <= 1e-10);
}

#[test]
fn context_rows_stay_inside_grid_bounds() {
    for seed in 0..10 {
        let xt = normal_matrix(7, 8, seed, 0).scale(2.0);
        let xv = normal_matrix(5, 8, seed, 1);
        let s = correlate(&split_heads(&xt, 4).unwrap(), &split_heads(&xv, 4).unwrap()).unwrap();
        let s = apply_topk(s, 1 + seed as usize % 5).unwrap();
        let c = aggregate_context(&s, &xv).unwrap();
        for j in 0..8 {
            let col: Vec<f64> = (0..5).map(|g| xv.get(g, j)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for t in 0..7 {
                assert!(c.get(t, j) >= lo - 1e-9 && c.get(t, j) <= hi + 1e-9);
            }
        }
    }
}

fn context_for(xt: &TokenEmbeddings, xv: &GridEmbeddings, w: &CorrelationWeights, k: usize) -> Matrix {
    let (pt, pv) = project_shared(xt, xv, w).unwrap();
    let s = correlate(&split_heads(&pt, 2).unwrap(), &split_heads(&pv, 2).unwrap()).unwrap();
    aggregate_context(&apply_topk(s, k).unwrap(), &pv).unwrap()
}

#[test]
fn token_permutation_permutes_context() {
    let (xt, xv, w) = (tokens(6, 8, 12), grids(5, 8, 12), weights(8, 8, 8, 12));
    let perm = [3, 0, 5, 1, 4, 2];
    let c = context_for(&xt, &xv, &w, 3);
    let xt_p = TokenEmbeddings::new(permute_rows(xt.values(), &perm)).unwrap();
    let c_p = context_for(&xt_p, &xv, &w, 3);
    assert_eq!(c_p, permute_rows(&c, &perm));
}

#[test]
fn grid_permutation_leaves_context_unchanged() {
    let (xt, xv, w) = (tokens(6, 8, 13), grids(5, 8, 13), weights(8, 8, 8, 13));
    let perm = [4, 2, 0, 3, 1];
    let c = context_for(&xt, &xv, &w, 3);
    let xv_p = GridEmbeddings::new(permute_rows(xv.values(), &perm)).unwrap();
    let c_p = context_for(&xt, &xv_p, &w, 3);
    assert!(c.max_abs_diff(&c_p) <= 1e-12);
}

#[test]
fn full_topk_is_a_no_op() {
    let xt = normal_matrix(5, 8, 14, 0);
    let xv = normal_matrix(5, 8, 14, 1);
    let s = correlate(&split_heads(&xt, 2).unwrap(), &split_heads(&xv, 2).unwrap()).unwrap();
    let full = apply_topk(s.clone(), 5).unwrap();
    assert!(full.renormalized.max_abs_diff(&s.scores) <= 1e-12);
    assert!(head_average(&full).max_abs_diff(&head_average(&s)) <= 1e-12);
}
