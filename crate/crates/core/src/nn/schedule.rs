//! Linear warmup followed by half-cycle cosine decay.

/// Learning rate at `step` of `total_steps`.
///
/// Ramps linearly from 0 to `peak` over the first `warmup_frac` of steps,
/// then follows `peak * 0.5 * (1 + cos(pi * progress))`.
pub fn warmup_cosine(step: usize, total_steps: usize, peak: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return peak;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = warmup_frac * total;
    if step < warm {
        return peak * step / warm;
    }
    let span = total - warm;
    if span <= 0.0 {
        return peak;
    }
    let progress = ((step - warm) / span).clamp(0.0, 1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_points() {
        let (total, peak) = (1000, 3e-4);
        assert_eq!(warmup_cosine(0, total, peak, 0.1), 0.0);
        assert!((warmup_cosine(100, total, peak, 0.1) - peak).abs() < 1e-15);
        assert!((warmup_cosine(550, total, peak, 0.1) - 1.5e-4).abs() < 1e-12);
        assert!(warmup_cosine(1000, total, peak, 0.1).abs() < 1e-15);
        assert!((warmup_cosine(50, total, peak, 0.1) - 1.5e-4).abs() < 1e-15);
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        assert_eq!(warmup_cosine(0, 10, 1.0, 0.0), 1.0);
    }
}
