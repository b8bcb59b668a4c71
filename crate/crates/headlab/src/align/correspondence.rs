//! Projecting a column-level alignment path down to frame indices.

use super::dtw::AlignmentPath;
use crate::error::{Error, Result};

/// For each source video frame, the target frame that supervises it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCorrespondence {
    pub mapping: Vec<usize>,
}

impl FrameCorrespondence {
    pub fn is_monotone(&self) -> bool {
        self.mapping.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Collapse a DTW path over mel columns into a frame-to-frame mapping.
///
/// Source frame `i` owns columns `[i*cols_per_frame, (i+1)*cols_per_frame)`.
/// Its target frame is the frame of the median aligned column (lower median
/// on ties), and the whole mapping is made monotone by a running maximum.
pub fn path_to_frames(
    path: &AlignmentPath,
    cols_per_frame: usize,
    n_source_frames: usize,
    n_target_frames: usize,
) -> Result<FrameCorrespondence> {
    if path.steps.is_empty() {
        return Err(Error::Input("alignment path is empty".into()));
    }
    if cols_per_frame == 0 {
        return Err(Error::Input("cols_per_frame must be at least 1".into()));
    }
    if n_source_frames == 0 || n_target_frames == 0 {
        return Err(Error::Input("frame counts must be positive".into()));
    }

    let mut mapping = Vec::with_capacity(n_source_frames);
    let mut cursor = 0usize;
    let mut last = 0usize;
    for i in 0..n_source_frames {
        let span_start = i * cols_per_frame;
        let span_end = span_start + cols_per_frame;
        // Path steps are sorted by source column, so a moving cursor suffices.
        while cursor < path.steps.len() && path.steps[cursor].0 < span_start {
            cursor += 1;
        }
        let begin = cursor;
        let mut end = cursor;
        while end < path.steps.len() && path.steps[end].0 < span_end {
            end += 1;
        }
        let frame = if end > begin {
            let cols: &[(usize, usize)] = &path.steps[begin..end];
            // Aligned target columns are non-decreasing along the path, so
            // the lower median is a direct index.
            let median_col = cols[(cols.len() - 1) / 2].1;
            (median_col / cols_per_frame).min(n_target_frames - 1)
        } else {
            // No columns fall in this frame's span (spectrogram shorter than
            // the video); carry the previous frame's target.
            last
        };
        let monotone = frame.max(last);
        mapping.push(monotone);
        last = monotone;
    }
    Ok(FrameCorrespondence { mapping })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagonal(n: usize) -> AlignmentPath {
        AlignmentPath {
            steps: (0..n).map(|i| (i, i)).collect(),
            total_cost: 0.0,
        }
    }

    #[test]
    fn diagonal_path_gives_identity_mapping() {
        let path = diagonal(20);
        let fc = path_to_frames(&path, 4, 5, 5).unwrap();
        assert_eq!(fc.mapping, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn vertical_start_is_monotonized_to_zero() {
        // The path dwells on source column 0 while target columns advance.
        let mut steps = vec![(0, 0), (0, 1), (0, 2), (0, 3)];
        for i in 1..8 {
            steps.push((i, 3 + i));
        }
        let path = AlignmentPath {
            steps,
            total_cost: 0.0,
        };
        let fc = path_to_frames(&path, 4, 2, 3).unwrap();
        assert_eq!(fc.mapping[0], 0);
        assert!(fc.is_monotone());
    }

    #[test]
    fn empty_path_is_an_input_error() {
        let path = AlignmentPath {
            steps: vec![],
            total_cost: 0.0,
        };
        assert!(matches!(
            path_to_frames(&path, 4, 5, 5),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn median_uses_lower_middle_on_even_spans() {
        // Frame 0 spans columns 0..4 aligned to target columns 0,3,5,7:
        // lower median is column 3 -> frame 0 (cols_per_frame 4).
        let steps = vec![(0, 0), (1, 3), (2, 5), (3, 7), (4, 8), (5, 9), (6, 10), (7, 11)];
        let path = AlignmentPath {
            steps,
            total_cost: 0.0,
        };
        let fc = path_to_frames(&path, 4, 2, 3).unwrap();
        assert_eq!(fc.mapping[0], 0);
        assert_eq!(fc.mapping[1], 2);
    }

    #[test]
    fn mapping_is_clamped_to_target_range() {
        let path = diagonal(40);
        let fc = path_to_frames(&path, 4, 10, 4).unwrap();
        assert!(fc.mapping.iter().all(|&j| j < 4));
        assert!(fc.is_monotone());
    }
}
