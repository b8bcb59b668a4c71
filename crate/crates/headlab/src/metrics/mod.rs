//! Evaluation metrics (in progress).
