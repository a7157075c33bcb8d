//! The curves against a from-scratch recomputation: σ from the ledger after
//! n fines of 2 resources and 2 credit, λ = log2(1 + σ), and linear
//! interpolation between the conservative anchor and the native one.

use cats_sim::curves::{duration_points, ledger_points, velocity_points};

fn sigma(n: u32) -> f64 {
    let n = n as f64;
    ((10.0 - 2.0 * n) / 10.0).min((10.0 - 2.0 * n - 2.0) / 8.0).max(0.0)
}

fn lambda(n: u32) -> f64 {
    (1.0 + sigma(n)).log2()
}

fn interp(conservative: f64, native: f64, n: u32) -> f64 {
    conservative + (native - conservative) * lambda(n)
}

#[test]
fn lambda_matches_hand_values() {
    let want = [1.0, 0.80735, 0.58496, 0.32193, 0.0];
    let p = ledger_points();
    assert_eq!(p.len(), want.len());
    for (i, (pt, w)) in p.iter().zip(want).enumerate() {
        assert_eq!(pt.n_violations, i as u32);
        assert!((pt.lambda - lambda(i as u32)).abs() < 1e-12);
        assert!((pt.lambda - w).abs() < 1e-5, "n={i}: {} vs {w}", pt.lambda);
        assert!((pt.sigma - sigma(i as u32)).abs() < 1e-12);
        assert_eq!(pt.banned, i == 4);
    }
}

#[test]
fn velocity_interpolation() {
    for p in velocity_points() {
        let n = p.n_violations;
        assert_eq!(p.conservative, velocity_points()[0].conservative);
        assert!((p.conservative - 50.0).abs() < 1e-9);
        assert!((p.normal - interp(50.0, 40.0, n)).abs() < 1e-9);
        assert!((p.aggressive - interp(50.0, 30.0, n)).abs() < 1e-9);
    }
}

#[test]
fn duration_interpolation() {
    let d = duration_points();
    for p in &d {
        let n = p.n_violations;
        assert_eq!(p.conservative, 3.0);
        assert!((p.normal - interp(3.0, 5.0, n)).abs() < 1e-9);
        assert!((p.aggressive - interp(3.0, 6.0, n)).abs() < 1e-9);
    }
    assert!((d[3].aggressive - 3.966).abs() < 1e-3);
}
