//! Test systems bundled with the crate.
//!
//! | name | buses | use |
//! |------|-------|-----|
//! | `two_bus` | 2 | lossless line with closed-form solutions |
//! | `feeder6` | 6 | radial distribution feeder |
//! | `three_bus` | 3 | dispatch problem for the OPF demonstration |
//! | `case9` | 9 | WSCC nine-bus system |

use crate::netmodel::{parse_matpower, NetworkCase};

pub const TWO_BUS: &str = include_str!("../cases/two_bus.m");
pub const FEEDER6: &str = include_str!("../cases/feeder6.m");
pub const THREE_BUS: &str = include_str!("../cases/three_bus.m");
pub const CASE9: &str = include_str!("../cases/case9.m");

pub fn two_bus() -> NetworkCase {
    parse_matpower(TWO_BUS).expect("bundled case parses")
}

pub fn feeder6() -> NetworkCase {
    parse_matpower(FEEDER6).expect("bundled case parses")
}

pub fn three_bus() -> NetworkCase {
    parse_matpower(THREE_BUS).expect("bundled case parses")
}

pub fn case9() -> NetworkCase {
    parse_matpower(CASE9).expect("bundled case parses")
}

/// Looks a bundled case up by name.
pub fn by_name(name: &str) -> Option<NetworkCase> {
    match name {
        "two_bus" => Some(two_bus()),
        "feeder6" => Some(feeder6()),
        "three_bus" => Some(three_bus()),
        "case9" => Some(case9()),
        _ => None,
    }
}
