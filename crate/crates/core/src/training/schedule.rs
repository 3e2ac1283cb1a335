/// Linear warmup to `peak_lr` at `warmup_steps`, then decay with the inverse
/// square root of the step: `peak · min(t/w, √(w/t))`. Without warmup the rate
/// is constant.
pub fn lr_schedule(step: usize, peak_lr: f64, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        return peak_lr;
    }
    let t = step.max(1) as f64;
    let w = warmup_steps as f64;
    peak_lr * (t / w).min((w / t).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_values() {
        assert_eq!(lr_schedule(1000, 0.001, 4000), 0.00025);
        assert_eq!(lr_schedule(4000, 0.001, 4000), 0.001);
        assert_eq!(lr_schedule(16000, 0.001, 4000), 0.0005);
    }

    #[test]
    fn rises_then_falls() {
        let lr = |t| lr_schedule(t, 0.001, 4000);
        for t in 1..4000 {
            assert!(lr(t) < lr(t + 1), "not increasing at {t}");
        }
        for t in 4000..20_000 {
            assert!(lr(t) > lr(t + 1), "not decreasing at {t}");
        }
        // continuity at the boundary
        assert!((lr(3999) - lr(4000)).abs() < 1e-6 && (lr(4001) - lr(4000)).abs() < 1e-6);
    }
}
