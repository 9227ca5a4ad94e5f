//! Networks shipped with the crate.

use crate::model::{parse_network, Network};

pub const CHAIN: &str = include_str!("../../../networks/chain.crn");
pub const BINDING: &str = include_str!("../../../networks/binding.crn");
pub const CYCLE: &str = include_str!("../../../networks/cycle.crn");
pub const CYCLE_BAD: &str = include_str!("../../../networks/cycle_bad.crn");
pub const SLOW_PAIR: &str = include_str!("../../../networks/slow_pair.crn");
pub const EXCHANGE: &str = include_str!("../../../networks/exchange.crn");

/// `(name, text)` for every shipped network.
pub const ALL: [(&str, &str); 6] = [
    ("chain", CHAIN),
    ("binding", BINDING),
    ("cycle", CYCLE),
    ("cycle_bad", CYCLE_BAD),
    ("slow_pair", SLOW_PAIR),
    ("exchange", EXCHANGE),
];

pub fn by_name(name: &str) -> Option<Network> {
    ALL.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_network(text).expect("shipped network parses"))
}
