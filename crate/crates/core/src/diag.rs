/// Counters for recoverable anomalies.
///
/// Operations that clamp, floor or skip instead of failing bump one of
/// these so callers can report how often it happened.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Diagnostics {
    /// Zero-norm vectors replaced by an epsilon floor (normalize, cosine).
    pub zero_norm_floors: u64,
    /// Parameters skipped by Adam because their gradient was not finite.
    pub skipped_nonfinite_grads: u64,
    /// `lr_at` called outside `0..=total_steps`.
    pub lr_step_clamped: u64,
    /// Queries dropped by triplet mining for lack of a positive.
    pub queries_without_positive: u64,
    /// Queries asking for more results than the index holds.
    pub top_k_truncated: u64,
    /// Normals computed through the collinear/degenerate fallback.
    pub degenerate_normals: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.zero_norm_floors += other.zero_norm_floors;
        self.skipped_nonfinite_grads += other.skipped_nonfinite_grads;
        self.lr_step_clamped += other.lr_step_clamped;
        self.queries_without_positive += other.queries_without_positive;
        self.top_k_truncated += other.top_k_truncated;
        self.degenerate_normals += other.degenerate_normals;
    }
}
