//! Acceptance checks for `brwlab`, kept in their own package so that the
//! long-running suite runs after the unit, property and CLI tests.
