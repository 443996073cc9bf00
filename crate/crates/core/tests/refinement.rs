mod common;

use adaptive_pf::regress::Direction;
use common::histories;

fn monotone_within(h: &[f64], slack: f64) -> bool {
    h.windows(2).all(|w| w[1] <= w[0] + slack)
}

#[test]
fn linear_refinement_reduces_violations() {
    for direction in [Direction::Under, Direction::Over] {
        for h in histories(false, direction, &[1, 2, 3, 4, 5], 4) {
            println!("CLA {direction:?}: {h:?}");
            assert!(h[0] <= 0.10);
            assert!(monotone_within(&h, 0.02), "{h:?}");
            assert!(h[h.len() - 1] <= h[0]);
        }
    }
}

#[test]
fn rational_refinement_reduces_violations() {
    for h in histories(true, Direction::Under, &[1, 2, 3], 3) {
        println!("CRA Under: {h:?}");
        assert!(h[0] <= 0.10);
        assert!(monotone_within(&h, 0.02), "{h:?}");
    }
}
