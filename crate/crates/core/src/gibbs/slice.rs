//! Univariate slice sampler with stepping out and shrinkage.

use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct SliceSettings {
    pub width: f64,
    pub max_steps: usize,
    /// Hard support bounds; the target is treated as zero outside.
    pub lower: f64,
    pub upper: f64,
}

impl Default for SliceSettings {
    fn default() -> Self {
        Self {
            width: 1.0,
            max_steps: 50,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }
}

/// One slice-sampling transition from `x0` under the log density `log_f`.
/// `log_f(x0)` must be finite.
pub fn slice_step<R, F>(x0: f64, log_f: F, settings: &SliceSettings, rng: &mut R) -> f64
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let inside = |x: f64| x > settings.lower && x < settings.upper;
    let eval = |x: f64| if inside(x) { log_f(x) } else { f64::NEG_INFINITY };

    let f0 = eval(x0);
    debug_assert!(f0.is_finite(), "slice sampler started off-support");
    let level = f0 + rng.random::<f64>().ln();

    let w = settings.width;
    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    let mut steps_left = (settings.max_steps as f64 * rng.random::<f64>()) as usize;
    steps_left = steps_left.min(settings.max_steps.saturating_sub(1));
    let mut steps_right = settings.max_steps.saturating_sub(1) - steps_left;
    while steps_left > 0 && eval(lo) > level {
        lo -= w;
        steps_left -= 1;
    }
    while steps_right > 0 && eval(hi) > level {
        hi += w;
        steps_right -= 1;
    }
    lo = lo.max(settings.lower);
    hi = hi.min(settings.upper);

    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if eval(x) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-14 * (1.0 + x0.abs()) {
            return x0;
        }
    }
}
