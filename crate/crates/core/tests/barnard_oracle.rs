//! Barnard p-values against a direct enumeration written from the definition.

mod support;

use support::{barnard_oracle, pascal};
use treewalk_core::eval::{barnard_exact, barnard_exact_with, Alternative, Table2x2};

#[test]
fn every_small_table_matches_enumeration() {
    let binom = pascal(8);
    let mut worst: f64 = 0.0;
    for na in 1..=8 {
        for nb in 1..=8 {
            for xa in 0..=na {
                for xb in 0..=nb {
                    let got = barnard_exact(&Table2x2::new(xa as u32, na as u32, xb as u32, nb as u32).unwrap());
                    let want = barnard_oracle(xa, na, xb, nb, &binom);
                    worst = worst.max((got - want).abs());
                    assert!((got - want).abs() <= 1e-9, "{xa}/{na} vs {xb}/{nb}: {got} vs {want}");
                }
            }
        }
    }
    assert!(worst <= 1e-9);
}

#[test]
fn opposite_corner_and_symmetry() {
    // a perfect, b zero: nothing is as extreme as the observation except itself
    let p = barnard_exact(&Table2x2::new(5, 5, 0, 5).unwrap());
    assert!((p - 1.0).abs() < 1e-12, "{p}");
    let up = barnard_exact(&Table2x2::new(0, 5, 5, 5).unwrap());
    assert!((up - 0.5f64.powi(10)).abs() < 1e-12, "{up}");
    let less = barnard_exact_with::<f64>(&Table2x2::new(5, 5, 0, 5).unwrap(), Alternative::Less, 0.001);
    assert!((less - up).abs() < 1e-12);
}

#[test]
fn scaling_up_the_same_proportions_strengthens_evidence() {
    let mut last = 1.0;
    for m in 1..=4 {
        let p = barnard_exact(&Table2x2::new(2 * m, 5 * m, 4 * m, 5 * m).unwrap());
        assert!(p < last, "m={m}: {p} !< {last}");
        last = p;
    }
}
