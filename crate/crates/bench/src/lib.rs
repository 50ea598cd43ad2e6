// SPDX-License-Identifier: Apache-2.0

//! Criterion benchmarks for grading, ranking, ledger queries and ledger
//! storage. See `benches/`.
