//! Fixed-length frame windows shared by the affect and gaze lanes.

/// Consecutive non-overlapping `[start, end)` frame windows covering
/// `first..=last`. The final window may be shorter than `window`.
pub fn window_spans(first: u64, last: u64, window: u64) -> Vec<(u64, u64)> {
    assert!(window > 0, "window length must be positive");
    if last < first {
        return Vec::new();
    }
    let end = last + 1;
    (first..end)
        .step_by(window as usize)
        .map(|s| (s, (s + window).min(end)))
        .collect()
}

/// Merge adjacent runs that carry an equal label and touch end to start.
pub fn merge_runs<T, L, I>(runs: I) -> Vec<(T, T, L)>
where
    T: PartialEq + Copy,
    L: PartialEq,
    I: IntoIterator<Item = (T, T, L)>,
{
    let mut out: Vec<(T, T, L)> = Vec::new();
    for (start, end, label) in runs {
        match out.last_mut() {
            Some(prev) if prev.2 == label && prev.1 == start => prev.1 = end,
            _ => out.push((start, end, label)),
        }
    }
    out
}
