//! Closed forms of the ranking metrics and tie handling.

use lhgnn::eval::{map_metric, ndcg_metric, rank_of_true};

#[test]
fn rank_two_closed_forms() {
    assert!((map_metric(&[2]).unwrap() - 0.5).abs() < 1e-12);
    assert!((ndcg_metric(&[2]).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-12);
}

#[test]
fn all_rank_one_is_perfect() {
    let ranks = vec![1; 50];
    assert!((map_metric(&ranks).unwrap() - 1.0).abs() < 1e-12);
    assert!((ndcg_metric(&ranks).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn means_over_mixed_ranks() {
    let ranks = [1, 2, 4, 10];
    let map = (1.0 + 0.5 + 0.25 + 0.1) / 4.0;
    let ndcg = (1.0 + 1.0 / 3f64.log2() + 1.0 / 5f64.log2() + 1.0 / 11f64.log2()) / 4.0;
    assert!((map_metric(&ranks).unwrap() - map).abs() < 1e-12);
    assert!((ndcg_metric(&ranks).unwrap() - ndcg).abs() < 1e-12);
    assert!(map_metric(&[]).is_err());
    assert!(map_metric(&[0]).is_err());
}

#[test]
fn ties_go_to_the_lower_node_id() {
    // Candidates: truth 7 first, then negatives; all scores equal.
    let cands = [7, 3, 9, 1];
    assert_eq!(rank_of_true(&cands, &[0.0; 4]).unwrap(), 3);
    assert_eq!(rank_of_true(&cands, &[1.0, 0.0, 0.0, 0.0]).unwrap(), 1);
    assert!(rank_of_true(&cands, &[f64::NAN, 0.0, 0.0, 0.0]).is_err());
}
