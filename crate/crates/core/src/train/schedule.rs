use crate::error::{Error, Result};

/// Batch size the base learning rate is quoted for.
pub const REFERENCE_BATCH: usize = 16;

/// `base_lr / 16 · batch_size`.
pub fn adjusted_base_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr / REFERENCE_BATCH as f64 * batch_size as f64
}

/// `base · (1 − iter/total)^power`.
pub fn poly_lr(base: f64, iter: usize, total: usize, power: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Contract("poly schedule needs total > 0".into()));
    }
    if iter > total {
        return Err(Error::ScheduleOverrun { iter, total });
    }
    Ok(base * (1.0 - iter as f64 / total as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_scaling() {
        assert_eq!(adjusted_base_lr(0.001, 16), 0.001);
        assert!((adjusted_base_lr(0.001, 4) - 0.00025).abs() < 1e-15);
        assert_eq!(adjusted_base_lr(0.01, 16), 0.01);
    }

    #[test]
    fn poly_boundaries_and_midpoint() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9).unwrap(), 0.0);
        let mid = poly_lr(0.01, 50, 100, 0.9).unwrap();
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid - 0.005359).abs() < 1e-6);
    }

    #[test]
    fn poly_is_strictly_decreasing() {
        let lrs: Vec<f64> = (0..=40).map(|i| poly_lr(0.1, i, 40, 0.9).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn overrun() {
        assert!(matches!(
            poly_lr(0.1, 11, 10, 0.9),
            Err(Error::ScheduleOverrun { iter: 11, total: 10 })
        ));
    }
}
