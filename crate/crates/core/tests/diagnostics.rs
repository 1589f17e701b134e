use eventsnn::analysis::{cosine_similarity, norm_bound_check, theorem_bound};
use proptest::prelude::*;

proptest! {
    // r = r_d - delta with delta orthogonal to r_d gives cos = |r_d| / |r|
    #[test]
    fn right_triangle_identity(rd in prop::collection::vec(0.01f64..1.0, 2..8), w in prop::collection::vec(-1.0f64..1.0, 2..8)) {
        let n = rd.len().min(w.len());
        let (rd, w) = (&rd[..n], &w[..n]);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let k = dot(w, rd) / dot(rd, rd);
        let delta: Vec<f64> = w.iter().zip(rd).map(|(w, r)| w - k * r).collect();
        let r: Vec<f64> = rd.iter().zip(&delta).map(|(a, d)| a - d).collect();
        let cos = cosine_similarity(&r, rd).unwrap();
        let expect = dot(rd, rd).sqrt() / dot(&r, &r).sqrt();
        prop_assert!((cos - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn cosine_stays_in_range(a in prop::collection::vec(-3.0f64..3.0, 1..8), b in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let n = a.len().min(b.len());
        if let Some(c) = cosine_similarity(&a[..n], &b[..n]) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }
}

#[test]
fn zero_desired_rate_has_no_angle() {
    assert_eq!(cosine_similarity(&[1.0, 2.0], &[0.0, 0.0]), None);
}

#[test]
fn bound_single_neuron() {
    let b = theorem_bound(&[1.0], 1.0, 1.0).unwrap();
    assert!((b - 3f64.sqrt() / (3f64.sqrt() + 1.0)).abs() < 1e-12);
}

#[test]
fn uniform_norm_sits_under_jensen_bound() {
    let one = norm_bound_check(1, 1.0, 10_000, 1).unwrap();
    assert!((one.mean - 0.5).abs() < 4.0 * one.std_error);
    assert!(one.holds_strictly());
    let hundred = norm_bound_check(100, 1.0, 10_000, 1).unwrap();
    assert!((hundred.bound - (100.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!(hundred.holds());
}
