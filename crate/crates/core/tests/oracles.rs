// SPDX-License-Identifier: Apache-2.0

//! Ledger and registry queries against brute-force references on random
//! small matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprosvc_core::ids::CommitId;
use reprosvc_core::ledger::{query, RunRecord};
use reprosvc_core::registry::hard_models;
use reprosvc_core::testkit::{oracle, records};

const MATRICES: u64 = 200;

fn histories() -> impl Iterator<Item = (u64, Vec<RunRecord>, usize, usize)> {
    (0..MATRICES).map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let benchmarks = rng.gen_range(1..=5);
        let algorithms = rng.gen_range(1..=3);
        let commits = rng.gen_range(1..=6);
        let history = records::random_history(&mut rng, "p", commits, benchmarks, algorithms);
        (seed, history, benchmarks, algorithms)
    })
}

#[test]
fn diff_commits_matches_brute_force() {
    for (seed, history, _, _) in histories() {
        let commits = query::commits_in_order(&history);
        for from in &commits {
            for to in &commits {
                let got = query::diff_commits(&history, from, to).unwrap();
                let want = oracle::diff(&history, from, to).unwrap();
                let changed: Vec<_> = got
                    .changes
                    .iter()
                    .map(|c| (c.benchmark_id.clone(), c.algorithm.clone(), c.old_status, c.new_status))
                    .collect();
                assert_eq!(changed, want.changed, "seed {seed}");
                let added: Vec<_> = got.added_cells.iter().map(|k| (k.benchmark_id.clone(), k.algorithm.clone())).collect();
                assert_eq!(added, want.added, "seed {seed}");
                let removed: Vec<_> =
                    got.removed_cells.iter().map(|k| (k.benchmark_id.clone(), k.algorithm.clone())).collect();
                assert_eq!(removed, want.removed, "seed {seed}");
            }
        }
    }
}

#[test]
fn first_regression_matches_brute_force() {
    for (seed, history, benchmarks, algorithms) in histories() {
        for b in 0..benchmarks {
            for a in 0..algorithms {
                let (b, a) = (records::benchmark_name(b), records::algorithm_name(a));
                assert_eq!(
                    query::first_regression(&history, &b, &a),
                    oracle::first_regression(&history, &b, &a),
                    "seed {seed} {b}/{a}"
                );
            }
        }
    }
}

#[test]
fn hard_models_match_brute_force() {
    for (seed, history, _, _) in histories() {
        let mut targets: Vec<Option<CommitId>> = query::commits_in_order(&history).into_iter().map(Some).collect();
        targets.push(None);
        for commit in targets {
            let got: Vec<_> = hard_models(&history, commit.as_ref())
                .unwrap()
                .into_iter()
                .map(|h| (h.benchmark_id, h.timeout_algorithms, h.passing_algorithms))
                .collect();
            let want = oracle::hard_models(oracle::latest_at(&history, commit.as_ref()).unwrap());
            assert_eq!(got, want, "seed {seed} at {commit:?}");
        }
    }
}

#[test]
fn unknown_commits_are_no_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let history = records::random_history(&mut rng, "p", 3, 2, 2);
    let ghost = CommitId::parse("dead").unwrap();
    let known = query::commits_in_order(&history)[0].clone();
    assert_eq!(query::diff_commits(&history, &ghost, &known).unwrap_err().code(), "NO_RUN");
    assert_eq!(hard_models(&history, Some(&ghost)).unwrap_err().code(), "NO_RUN");
    assert_eq!(hard_models(&[], None).unwrap_err().code(), "NO_DATA");
}
