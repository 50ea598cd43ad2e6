// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprosvc_core::harness::CellStatus;
use reprosvc_core::ledger::{query, Ledger, RunRecord};
use reprosvc_core::report::{grade, rank, rank_order, ranked_entry};
use reprosvc_core::testkit::{oracle, records};

fn record_from(seed: u64) -> RunRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let project = format!("p{}", rng.gen_range(0..4));
    let benchmarks = rng.gen_range(0..6);
    let algorithms = rng.gen_range(1..4);
    records::random_record(&mut rng, &project, &format!("{seed:x}"), (seed % 10_000) as i64, benchmarks, algorithms)
}

proptest! {
    #[test]
    fn grade_follows_the_rule(seed in any::<u64>()) {
        let r = record_from(seed);
        prop_assert_eq!(grade(&r).color, oracle::color(&r));
    }

    #[test]
    fn grade_ignores_timing_hosts_and_cell_order(seed in any::<u64>()) {
        let r = record_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let mut noisy = r.clone();
        noisy.cells.shuffle(&mut rng);
        for c in &mut noisy.cells {
            c.wall_ms = rng.gen();
        }
        if let Some(t) = &mut noisy.test {
            t.wall_ms = rng.gen();
        }
        noisy.env_fingerprint.arch = "riscv64".into();
        noisy.finished_at += chrono::Duration::hours(3);
        prop_assert_eq!(grade(&noisy), grade(&r));
    }

    #[test]
    fn passing_one_more_cell_never_worsens_the_color(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let r = record_from(seed);
        let failing: Vec<usize> = (0..r.cells.len()).filter(|&i| !r.cells[i].status.is_pass()).collect();
        prop_assume!(!failing.is_empty());
        let mut better = r.clone();
        better.cells[failing[pick.index(failing.len())]].status = CellStatus::Pass;
        prop_assert!(oracle::severity(grade(&better).color) <= oracle::severity(grade(&r).color));
    }

    #[test]
    fn rank_is_a_permutation_invariant_total_order(seeds in prop::collection::vec(any::<u64>(), 1..16), shuffle in any::<u64>()) {
        let records: Vec<RunRecord> = seeds.iter().enumerate().map(|(i, s)| {
            let mut r = record_from(*s);
            r.run_id = format!("run-{i}");
            r
        }).collect();
        let ranked = rank(&records);
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(&rank(&shuffled), &ranked);
        for w in ranked.windows(2) {
            prop_assert!(rank_order(&w[0], &w[1]).is_lt());
        }
        let entries: Vec<_> = records.iter().map(ranked_entry).collect();
        for a in &entries {
            for b in &entries {
                prop_assert_eq!(rank_order(a, b), rank_order(b, a).reverse());
            }
        }
    }

    #[test]
    fn diff_reverses_when_commits_swap(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = records::random_history(&mut rng, "p", 4, 4, 3);
        let commits = query::commits_in_order(&history);
        for a in &commits {
            let same = query::diff_commits(&history, a, a).unwrap();
            prop_assert!(same.changes.is_empty() && same.added_cells.is_empty() && same.removed_cells.is_empty());
            for b in &commits {
                let ab = query::diff_commits(&history, a, b).unwrap();
                let ba = query::diff_commits(&history, b, a).unwrap();
                let reversed: Vec<_> = ba.changes.iter().map(|c| c.reversed()).collect();
                prop_assert_eq!(&ab.changes, &reversed);
                prop_assert_eq!(&ab.added_cells, &ba.removed_cells);
            }
        }
    }

    #[test]
    fn records_survive_json(seed in any::<u64>()) {
        let r = record_from(seed);
        let text = serde_json::to_string(&r).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunRecord>(&text).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ledger_reads_back_what_was_appended(seed in any::<u64>(), n in 1usize..12) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = records::random_history(&mut rng, "p", n, 3, 2);
        let ledger = Ledger::open(dir.path()).unwrap();
        for r in &history {
            ledger.append_run(r).unwrap();
        }
        drop(ledger);
        let reopened = Ledger::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.records(&history[0].commit.project_id), history);
        prop_assert!(reopened.recoveries().is_empty());
    }
}
