//! Lambda-return recursion and percentile-EMA return scaling.

use crate::numcore::stats::{ema_update, percentile};
use crate::numcore::NumError;

/// Backward recursion `R_t = r_t + g c_t ((1-l) v_t + l R_{t+1})` with
/// terminal `R_T = v_T`. `index_shift` bootstraps on `v_{t+1}` instead of
/// the printed same-step `v_t`.
pub fn lambda_returns(
    rewards: &[f64],
    continues: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
    index_shift: bool,
) -> Result<Vec<f64>, NumError> {
    let t_len = values.len();
    if t_len == 0 {
        return Err(NumError::EmptyInput("lambda_returns values"));
    }
    if rewards.len() != t_len - 1 || continues.len() != t_len - 1 {
        return Err(NumError::InvalidArgument(format!(
            "lambda_returns: rewards {} continues {} values {}",
            rewards.len(),
            continues.len(),
            t_len
        )));
    }
    let mut returns = vec![0.0; t_len];
    returns[t_len - 1] = values[t_len - 1];
    for t in (0..t_len - 1).rev() {
        let bootstrap = if index_shift { values[t + 1] } else { values[t] };
        returns[t] = rewards[t]
            + gamma * continues[t] * ((1.0 - lambda) * bootstrap + lambda * returns[t + 1]);
    }
    Ok(returns)
}

/// `S' = EMA(S, Per(returns, 95) - Per(returns, 5), decay)`.
pub fn return_scale_update(scale: f64, returns: &[f64], decay: f64) -> Result<f64, NumError> {
    let range = percentile(returns, 95.0)? - percentile(returns, 5.0)?;
    Ok(ema_update(scale, range, decay))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn terminal_base_case() {
        let r = lambda_returns(&[], &[], &[2.5], 0.9, 0.95, false).unwrap();
        assert_eq!(r, vec![2.5]);
    }

    #[test]
    fn hand_checked_recursion() {
        let r = lambda_returns(&[1.0, 0.0], &[1.0, 1.0], &[0.5, 2.0, 3.0], 0.9, 0.95, false)
            .unwrap();
        assert!((r[0] - 3.292525).abs() < 1e-12, "r0 = {}", r[0]);
        assert!((r[1] - 2.655).abs() < 1e-12);
        assert_eq!(r[2], 3.0);
    }

    #[test]
    fn episode_cut_gates_later_values() {
        // c_t = 0 cuts the recursion: R_t = r_t.
        let r = lambda_returns(&[1.5, 7.0], &[0.0, 1.0], &[9.0, 9.0, 9.0], 0.99, 0.9, false)
            .unwrap();
        assert_eq!(r[0], 1.5);
    }

    #[test]
    fn lambda_zero_reduces_to_one_step_targets() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let t = 10;
            let rewards: Vec<f64> = (0..t - 1).map(|_| rng.normal()).collect();
            let continues = vec![1.0; t - 1];
            let values: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
            let r = lambda_returns(&rewards, &continues, &values, 0.97, 0.0, false).unwrap();
            for i in 0..t - 1 {
                let expected = rewards[i] + 0.97 * values[i];
                assert!((r[i] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lambda_one_reduces_to_discounted_sum() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let t = 10;
            let gamma = 0.95;
            let rewards: Vec<f64> = (0..t - 1).map(|_| rng.normal()).collect();
            let continues = vec![1.0; t - 1];
            let values: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
            let r = lambda_returns(&rewards, &continues, &values, gamma, 1.0, false).unwrap();
            for start in 0..t - 1 {
                let mut expected = 0.0;
                let mut disc = 1.0;
                for k in start..t - 1 {
                    expected += disc * rewards[k];
                    disc *= gamma;
                }
                expected += disc * values[t - 1];
                assert!((r[start] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn index_shift_bootstraps_next_value() {
        let r = lambda_returns(&[1.0], &[1.0], &[5.0, 7.0], 0.9, 0.0, true).unwrap();
        assert!((r[0] - (1.0 + 0.9 * 7.0)).abs() < 1e-12);
        let printed = lambda_returns(&[1.0], &[1.0], &[5.0, 7.0], 0.9, 0.0, false).unwrap();
        assert!((printed[0] - (1.0 + 0.9 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(lambda_returns(&[1.0], &[1.0, 1.0], &[0.0, 0.0], 0.9, 0.9, false).is_err());
    }

    #[test]
    fn scale_update_examples() {
        // returns 1..10 from S = 0: 0.01 * (9.55 - 1.45) = 0.081
        let returns: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let s = return_scale_update(0.0, &returns, 0.99).unwrap();
        assert!((s - 0.081).abs() < 1e-12);

        // Constant returns decay S toward zero.
        let mut s = 1.0;
        for _ in 0..500 {
            s = return_scale_update(s, &[2.0; 8], 0.99).unwrap();
            assert!(s >= 0.0);
        }
        assert!(s < 0.01);
    }
}
