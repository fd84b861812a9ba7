//! Shared inputs for the benchmarks under `benches/`.

use cops_core::log::split_history;
use cops_core::synthgen::{generate, GenConfig};
use cops_core::{DocumentRef, UserHistory};

/// A small synthetic world: the corpus and the histories of a few users.
pub struct Sample {
    pub corpus: Vec<DocumentRef>,
    pub histories: Vec<UserHistory>,
}

pub fn sample(n_users: usize) -> Sample {
    let cfg = GenConfig {
        n_users,
        ..GenConfig::default()
    };
    let data = generate(&cfg).expect("default generator config is feasible");
    let split = split_history(&data.users, cfg.split_fraction).expect("valid split");
    Sample {
        corpus: data.corpus,
        histories: split.histories,
    }
}

/// A listwise reply naming `n` candidates in reverse order, `[n] > ... > [1]`.
pub fn reversed_reply(n: usize) -> String {
    (1..=n).rev().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ")
}
