//! Pipeline orchestration (in progress).
