#![no_main]

use libfuzzer_sys::fuzz_target;
use mapek::planning::{parse_policy, print_policy};

// Anything that parses must print to text that parses back to the same rules.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rules) = parse_policy(text) else { return };
    let printed = print_policy(&rules);
    let reparsed = parse_policy(&printed).expect("printed policy parses");
    assert_eq!(reparsed, rules, "{printed}");
});
