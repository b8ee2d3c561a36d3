//! Acceptance suite for the mflq workspace; the criteria live in `tests/acceptance.rs`.
