//! Fixture corpus driver: loading, differential verification, diffing, and
//! the bench suite.

mod bench;
mod diff;
mod fixture;
mod verify;

pub use bench::{
    bench_fixtures, dispatch_scaling, stable_json as bench_stable_json, to_text as bench_to_text,
    BenchReport, BenchRow, DispatchPoint,
};
pub use diff::{diff_function, DiffReport, InsertedSpan};
pub use fixture::{ArgDomain, Fixture, FixtureError};
pub use verify::{
    prepare as prepare_fixture, preservation_check, verify_fixture, CounterExample,
    PreservationReport, VerifyMode, VerifyReport,
};
