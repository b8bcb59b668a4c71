//! Dynamic time warping over mel-spectrogram columns.

use crate::error::{Error, Result};
use crate::media::MelSpectrogram;

/// Point cost between two mel columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMetric {
    Euclidean,
    Cosine,
}

impl CostMetric {
    fn cost(&self, a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
        match self {
            CostMetric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            CostMetric::Cosine => {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                1.0 - dot / (na * nb).max(1e-12)
            }
        }
    }
}

/// A monotone warping path over column indices: starts at `(0, 0)`, ends at
/// `(T_A-1, T_B-1)`, and each step advances one or both indices by one.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl AlignmentPath {
    /// Check the start/end/step invariants.
    pub fn is_valid(&self, t_a: usize, t_b: usize) -> bool {
        if self.steps.first() != Some(&(0, 0)) {
            return false;
        }
        if self.steps.last() != Some(&(t_a - 1, t_b - 1)) {
            return false;
        }
        self.steps.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
            (di == 0 || di == 1) && (dj == 0 || dj == 1) && (di, dj) != (0, 0)
        })
    }
}

/// Minimum-cost monotone alignment under the three-move recurrence
/// `D[i,j] = c(i,j) + min(D[i-1,j], D[i,j-1], D[i-1,j-1])`.
pub fn dtw_align(
    a: &MelSpectrogram,
    b: &MelSpectrogram,
    metric: CostMetric,
) -> Result<AlignmentPath> {
    dtw_align_banded(a, b, metric, None)
}

/// As [`dtw_align`] with an optional Sakoe-Chiba band of the given radius on
/// `|i - j|` (widened to keep the corner reachable).
pub fn dtw_align_banded(
    a: &MelSpectrogram,
    b: &MelSpectrogram,
    metric: CostMetric,
    band: Option<usize>,
) -> Result<AlignmentPath> {
    if a.config() != b.config() {
        return Err(Error::Config(
            "spectrograms must share a mel configuration to be aligned".into(),
        ));
    }
    let (ta, tb) = (a.n_cols(), b.n_cols());
    if ta == 0 || tb == 0 {
        return Err(Error::Input("cannot align an empty spectrogram".into()));
    }
    let radius = band.map(|r| r.max(ta.abs_diff(tb)));
    let in_band = |i: usize, j: usize| match radius {
        Some(r) => i.abs_diff(j) <= r,
        None => true,
    };

    let mut dp = vec![f64::INFINITY; ta * tb];
    // Backtracking moves: 0 = diagonal, 1 = advance i, 2 = advance j.
    let mut mv = vec![0u8; ta * tb];
    for i in 0..ta {
        for j in 0..tb {
            if !in_band(i, j) {
                continue;
            }
            let c = metric.cost(a.column(i), b.column(j));
            let idx = i * tb + j;
            if i == 0 && j == 0 {
                dp[idx] = c;
                continue;
            }
            let diag = if i > 0 && j > 0 { dp[idx - tb - 1] } else { f64::INFINITY };
            let up = if i > 0 { dp[idx - tb] } else { f64::INFINITY };
            let left = if j > 0 { dp[idx - 1] } else { f64::INFINITY };
            let (best, m) = if diag <= up && diag <= left {
                (diag, 0)
            } else if up <= left {
                (up, 1)
            } else {
                (left, 2)
            };
            dp[idx] = c + best;
            mv[idx] = m;
        }
    }

    let total_cost = dp[ta * tb - 1];
    if !total_cost.is_finite() {
        return Err(Error::Input("alignment band leaves no feasible path".into()));
    }

    let mut steps = Vec::with_capacity(ta.max(tb));
    let (mut i, mut j) = (ta - 1, tb - 1);
    loop {
        steps.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match mv[i * tb + j] {
            0 if i > 0 && j > 0 => {
                i -= 1;
                j -= 1;
            }
            1 if i > 0 => i -= 1,
            _ => j -= 1,
        }
    }
    steps.reverse();
    Ok(AlignmentPath { steps, total_cost })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::media::MelConfig;
    use ndarray::Array2;

    /// Wrap raw columns in a spectrogram for alignment tests.
    pub fn mel_from_columns(cols: &[Vec<f64>]) -> MelSpectrogram {
        let n_mels = cols[0].len();
        let mut data = Array2::zeros((n_mels, cols.len()));
        for (t, col) in cols.iter().enumerate() {
            for (m, &v) in col.iter().enumerate() {
                data[[m, t]] = v;
            }
        }
        MelSpectrogram::from_parts(data, MelConfig::default())
    }

    /// Exhaustive minimum over all monotone three-move paths.
    pub fn brute_force_min_cost(
        a: &MelSpectrogram,
        b: &MelSpectrogram,
        metric: CostMetric,
    ) -> f64 {
        fn recurse(
            a: &MelSpectrogram,
            b: &MelSpectrogram,
            metric: CostMetric,
            i: usize,
            j: usize,
        ) -> f64 {
            let c = metric.cost(a.column(i), b.column(j));
            if i == 0 && j == 0 {
                return c;
            }
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(recurse(a, b, metric, i - 1, j - 1));
            }
            if i > 0 {
                best = best.min(recurse(a, b, metric, i - 1, j));
            }
            if j > 0 {
                best = best.min(recurse(a, b, metric, i, j - 1));
            }
            c + best
        }
        recurse(a, b, metric, a.n_cols() - 1, b.n_cols() - 1)
    }
}
