//! Closed-loop experiment harness (in progress).
