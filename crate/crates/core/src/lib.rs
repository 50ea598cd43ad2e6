// SPDX-License-Identifier: Apache-2.0

//! A self-hosted reproducibility service.
//!
//! For every commit of a registered project the service builds the code from
//! scratch in a sandbox, runs the developer's sanity tests and a
//! community-curated (algorithm × benchmark) matrix, appends the outcome to
//! an append-only ledger keyed by commit, and grades it with a traffic light.
//!
//! Modules follow the flow of a run: [`ingest`] turns events into jobs,
//! [`pipeline`] builds, [`harness`] tests, [`ledger`] stores, [`report`]
//! grades, [`registry`] curates benchmarks and [`gateway`] serves it all.

pub mod gateway;
pub mod harness;
pub mod ids;
pub mod ingest;
pub mod ledger;
pub mod pipeline;
pub mod registry;
pub mod report;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use harness::assertion::{Assertion, KeyExpectation};
pub use harness::{CellOutcome, CellStatus, TestOutcome};
pub use ids::{CommitId, Digest, ProjectId, Timestamp};
pub use ingest::{CommitRef, Job, JobState, Project, TriggerEvent, TriggerKind};
pub use ledger::query::{BehaviorDiff, CellChange, History};
pub use ledger::RunRecord;
pub use pipeline::manifest::Manifest;
pub use pipeline::{Stage, StageOutcome, StageStatus};
pub use registry::{Benchmark, BenchmarkState, HardModel, PublicationLink, ValidationReport};
pub use report::{Badge, Color, RankedEntry, TrafficLight};
