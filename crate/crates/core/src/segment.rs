/// A temporal segment in normalized coordinates: center `m` and width `w`,
/// both relative to the video duration.
///
/// Values are stored as produced; [`TemporalSegment::bounds`] clamps the
/// endpoints to `[0, 1]` where a consumer needs an actual interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalSegment {
    pub m: f64,
    pub w: f64,
}

/// Smallest width the localizer may output.
pub const MIN_WIDTH: f64 = 0.02;

impl TemporalSegment {
    pub const WHOLE: TemporalSegment = TemporalSegment { m: 0.5, w: 1.0 };

    pub const fn new(m: f64, w: f64) -> Self {
        TemporalSegment { m, w }
    }

    pub fn from_bounds(start: f64, end: f64) -> Self {
        TemporalSegment {
            m: 0.5 * (start + end),
            w: end - start,
        }
    }

    /// Converts a span in seconds into normalized coordinates.
    pub fn from_seconds(start: f64, end: f64, duration: f64) -> Self {
        TemporalSegment {
            m: 0.5 * (start + end) / duration,
            w: (end - start) / duration,
        }
    }

    /// Clamped endpoints `(start, end)` in `[0, 1]`.
    pub fn bounds(&self) -> (f64, f64) {
        let lo = (self.m - 0.5 * self.w).clamp(0.0, 1.0);
        let hi = (self.m + 0.5 * self.w).clamp(0.0, 1.0);
        (lo, hi)
    }

    /// Clamped endpoints scaled to seconds.
    pub fn to_seconds(&self, duration: f64) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        (lo * duration, hi * duration)
    }

    /// `m` in `[0, 1]` and `w` in `[MIN_WIDTH, 1]`, which always leaves a
    /// non-empty interval inside the video.
    pub fn clamped(&self) -> Self {
        TemporalSegment {
            m: self.m.clamp(0.0, 1.0),
            w: self.w.clamp(MIN_WIDTH, 1.0),
        }
    }

    /// True when the clamped interval has positive length.
    pub fn is_valid(&self) -> bool {
        let (lo, hi) = self.bounds();
        self.m.is_finite() && self.w.is_finite() && self.w > 0.0 && hi > lo
    }

    /// Temporal intersection over union of the clamped intervals.
    pub fn tiou(&self, other: &TemporalSegment) -> f64 {
        let (a0, a1) = self.bounds();
        let (b0, b1) = other.bounds();
        let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
        let union = (a1 - a0) + (b1 - b0) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_conversion() {
        let s = TemporalSegment::from_seconds(12.0, 24.0, 48.0);
        assert!((s.m - 0.375).abs() < 1e-12 && (s.w - 0.25).abs() < 1e-12);
        assert_eq!(
            TemporalSegment::from_seconds(0.0, 48.0, 48.0),
            TemporalSegment::WHOLE
        );
        let (a, b) = s.to_seconds(48.0);
        assert!((a - 12.0).abs() < 1e-9 * 48.0 && (b - 24.0).abs() < 1e-9 * 48.0);
    }

    #[test]
    fn tiou_worked_values() {
        let a = TemporalSegment::from_bounds(0.3, 0.7);
        let b = TemporalSegment::from_bounds(0.4, 0.8);
        assert!((a.tiou(&b) - 0.6).abs() < 1e-12);
        assert_eq!(a.tiou(&a), 1.0);
        let c = TemporalSegment::from_bounds(0.8, 1.0);
        assert_eq!(TemporalSegment::from_bounds(0.0, 0.2).tiou(&c), 0.0);
    }

    #[test]
    fn clamped_is_valid() {
        for &(m, w) in &[(-1.0, 0.0), (2.0, 5.0), (0.0, 0.02), (1.0, -3.0)] {
            assert!(TemporalSegment::new(m, w).clamped().is_valid());
        }
    }
}
