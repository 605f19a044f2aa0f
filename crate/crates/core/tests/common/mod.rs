//! Message counts derived by hand, independently of the protocol code.
//!
//! Every function models a run that starts with all of `1..=n` believing in
//! `n`, with the processes in `crashed` down before anyone reacts.

#![allow(dead_code)]

use std::collections::BTreeSet;

fn alive_above(n: u32, k: u32, crashed: &BTreeSet<u32>) -> u64 {
    (k + 1..=n).filter(|j| !crashed.contains(j)).count() as u64
}

/// Bully: the detector and every live process above it challenge all
/// higher ids, each live higher id answers, the winner tells all `n`.
pub fn bully_detect(n: u32, detector: u32, crashed: &BTreeSet<u32>) -> u64 {
    let participants =
        std::iter::once(detector).chain((detector + 1..=n).filter(|j| !crashed.contains(j)));
    let mut total = 0;
    for k in participants {
        total += u64::from(n - k);
        total += alive_above(n, k, crashed);
    }
    total + u64::from(n)
}

/// Kordafshari: elections up, answers back, one grant, one announcement.
pub fn kordafshari_detect(n: u32, detector: u32, crashed: &BTreeSet<u32>) -> u64 {
    let answers = alive_above(n, detector, crashed);
    let grant = u64::from(answers > 0);
    u64::from(n - detector) + answers + grant + u64::from(n)
}

/// Mamun: elections up, oks back, the initiator announces.
pub fn mamun_detect(n: u32, detector: u32, crashed: &BTreeSet<u32>) -> u64 {
    u64::from(n - detector) + alive_above(n, detector, crashed) + u64::from(n)
}

/// Mamun recovery: one query per higher id and one answer from each.
pub fn mamun_recovery(n: u32, p: u32) -> u64 {
    2 * u64::from(n - p)
}

/// Commission: one election per reporter, a two-message verify, a
/// two-message probe per id scanned from the top down to the first live one
/// above the highest reporter, then the announcement to all `n`.
pub fn ec_detect(n: u32, reporters: &[u32], crashed: &BTreeSet<u32>) -> u64 {
    let coordinator = n;
    let top_reporter = *reporters.iter().max().expect("at least one reporter");
    let mut probes = 0;
    for candidate in (top_reporter + 1..=n).rev().filter(|&c| c != coordinator) {
        probes += 2;
        if !crashed.contains(&candidate) {
            break;
        }
    }
    reporters.len() as u64 + 2 + probes + u64::from(n)
}

pub fn set(ids: &[u32]) -> BTreeSet<u32> {
    ids.iter().copied().collect()
}
