// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by tests and benches. Enabled by the `testkit` feature.

pub mod oracle;
pub mod records;
pub mod toy;
