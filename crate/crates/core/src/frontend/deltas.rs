use super::{FeatureMatrix, UncertaintySequence};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Sparse linear filter: for each output frame, `(source frame, weight)` pairs.
type FrameFilter = Vec<Vec<(usize, f64)>>;

/// Regression-delta weights with edge replication:
/// `d_t = sum_k k (x_{t+k} - x_{t-k}) / (2 sum_k k^2)`, indices clamped to `[0, L)`.
fn delta_filter(num_frames: usize, window: usize) -> FrameFilter {
    let denom = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let last = num_frames - 1;
    (0..num_frames)
        .map(|t| {
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(2 * window);
            let mut add = |s: usize, w: f64| match taps.iter_mut().find(|(i, _)| *i == s) {
                Some(tap) => tap.1 += w,
                None => taps.push((s, w)),
            };
            for k in 1..=window {
                let w = k as f64 / denom;
                add((t + k).min(last), w);
                add(t.saturating_sub(k), -w);
            }
            taps.retain(|&(_, w)| w != 0.0);
            taps
        })
        .collect()
}

/// `outer ∘ inner` as a single filter.
fn compose(outer: &FrameFilter, inner: &FrameFilter) -> FrameFilter {
    outer
        .iter()
        .map(|taps| {
            let mut out: Vec<(usize, f64)> = Vec::new();
            for &(s, w) in taps {
                for &(r, v) in &inner[s] {
                    match out.iter_mut().find(|(i, _)| *i == r) {
                        Some(tap) => tap.1 += w * v,
                        None => out.push((r, w * v)),
                    }
                }
            }
            out
        })
        .collect()
}

/// Writes `filter(src)` into columns `offset..offset+F` of `dst`, optionally
/// squaring the weights (variance propagation under frame independence).
fn apply(filter: &FrameFilter, src: &RowMatrix, dst: &mut RowMatrix, offset: usize, squared: bool) {
    let f = src.cols();
    for (t, taps) in filter.iter().enumerate() {
        let row = &mut dst.row_mut(t)[offset..offset + f];
        for &(s, w) in taps {
            let w = if squared { w * w } else { w };
            for (o, x) in row.iter_mut().zip(src.row(s)) {
                *o += w * x;
            }
        }
    }
}

fn check_length(num_frames: usize, window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::InvalidArgument("delta window must be >= 1".into()));
    }
    if num_frames <= 2 * window {
        return Err(Error::InsufficientData(format!(
            "{num_frames} frames is too short for delta window {window}"
        )));
    }
    Ok(())
}

fn stack(src: &RowMatrix, window: usize, squared: bool) -> RowMatrix {
    let (l, f) = src.shape();
    let d1 = delta_filter(l, window);
    let d2 = compose(&d1, &d1);
    let mut out = RowMatrix::zeros(l, 3 * f);
    for t in 0..l {
        out.row_mut(t)[..f].copy_from_slice(src.row(t));
    }
    apply(&d1, src, &mut out, f, squared);
    apply(&d2, src, &mut out, 2 * f, squared);
    out
}

/// Appends first- and second-order regression deltas: `[x, Δx, ΔΔx]`.
pub fn append_deltas(fm: &FeatureMatrix, delta_window: usize) -> Result<FeatureMatrix> {
    check_length(fm.num_frames(), delta_window)?;
    let out = stack(fm.frames(), delta_window, false);
    FeatureMatrix::with_mask(
        fm.utt_id.clone(),
        out,
        fm.vad_mask().to_vec(),
        fm.meta.clone(),
    )
}

/// Delta-domain uncertainty for features passed through [`append_deltas`].
/// Each output variance is the squared-weight sum of the input variances,
/// treating frames as independent.
pub fn append_uncertainty_deltas(
    unc: &UncertaintySequence,
    delta_window: usize,
) -> Result<UncertaintySequence> {
    check_length(unc.num_frames(), delta_window)?;
    let out = stack(unc.diag_vars(), delta_window, true);
    UncertaintySequence::new(unc.utt_id.clone(), out)
}
