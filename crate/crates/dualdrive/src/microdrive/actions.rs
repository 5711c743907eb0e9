//! The 39-entry discrete control table.
//!
//! Canonical ordering: left column group top-to-bottom (13 rows), then the
//! middle group, then the right group. Indices are load-bearing: checkpoints
//! and policies refer to actions by this table position.

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlTuple {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
    pub reverse: bool,
}

pub const NUM_ACTIONS: usize = 39;

const T: bool = true;
const F: bool = false;

#[rustfmt::skip]
const TABLE: [(f64, f64, f64, bool); NUM_ACTIONS] = [
    // left column group
    (0.0, 0.0,  1.0, F),
    (0.7, 0.0, -0.5, F),
    (0.7, 0.0, -0.3, F),
    (0.7, 0.0, -0.2, F),
    (0.7, 0.0, -0.1, F),
    (0.7, 0.0,  0.0, F),
    (0.7, 0.0,  0.1, F),
    (0.7, 0.0,  0.2, F),
    (0.7, 0.0,  0.3, F),
    (0.7, 0.0,  0.5, F),
    (0.3, 0.0, -0.7, F),
    (0.3, 0.0, -0.5, F),
    (0.3, 0.0, -0.3, F),
    // middle column group
    (0.3, 0.0, -0.2, F),
    (0.3, 0.0, -0.1, F),
    (0.3, 0.0,  0.0, F),
    (0.3, 0.0,  0.1, F),
    (0.3, 0.0,  0.2, F),
    (0.3, 0.0,  0.3, F),
    (0.3, 0.0,  0.5, F),
    (0.3, 0.0,  0.7, F),
    (0.0, 0.0, -1.0, F),
    (0.0, 0.0, -0.6, F),
    (0.0, 0.0, -0.3, F),
    (0.0, 0.0, -0.1, F),
    (1.0, 0.0,  0.0, F),
    // right column group
    (0.0, 0.0,  0.1, F),
    (0.0, 0.0,  0.3, F),
    (0.0, 0.0,  0.6, F),
    (0.0, 0.0,  1.0, F),
    (0.5, 0.0, -0.5, T),
    (0.5, 0.0, -0.3, T),
    (0.5, 0.0, -0.2, T),
    (0.5, 0.0, -0.1, T),
    (0.5, 0.0,  0.0, T),
    (0.5, 0.0,  0.1, T),
    (0.5, 0.0,  0.2, T),
    (0.5, 0.0,  0.3, T),
    (0.5, 0.0,  0.5, T),
];

pub fn action_decode(index: usize) -> Result<ControlTuple, SimError> {
    let &(throttle, brake, steer, reverse) = TABLE
        .get(index)
        .ok_or(SimError::ActionOutOfRange(index))?;
    Ok(ControlTuple {
        throttle,
        brake,
        steer,
        reverse,
    })
}

/// Inverse table lookup. The printed table repeats one tuple
/// (indices 0 and 29 both read throttle 0, steer 1.0, forward), so the
/// inverse returns the smallest matching index.
pub fn action_encode(control: &ControlTuple) -> Option<usize> {
    TABLE.iter().position(|&(t, b, s, r)| {
        t == control.throttle && b == control.brake && s == control.steer && r == control.reverse
    })
}

/// Nearest table entry for a desired continuous command, searching only rows
/// with the requested throttle and reverse values.
pub fn nearest_action(throttle: f64, steer: f64, reverse: bool) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, &(t, _, s, r)) in TABLE.iter().enumerate() {
        if r != reverse {
            continue;
        }
        let cost = 10.0 * (t - throttle).abs() + (s - steer).abs();
        if cost < best_cost {
            best_cost = cost;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_match_table() {
        let first = action_decode(0).unwrap();
        assert_eq!(
            first,
            ControlTuple {
                throttle: 0.0,
                brake: 0.0,
                steer: 1.0,
                reverse: false
            }
        );
        let last = action_decode(38).unwrap();
        assert_eq!(
            last,
            ControlTuple {
                throttle: 0.5,
                brake: 0.0,
                steer: 0.5,
                reverse: true
            }
        );
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(action_decode(39).is_err());
    }

    #[test]
    fn brake_is_always_zero() {
        for i in 0..NUM_ACTIONS {
            assert_eq!(action_decode(i).unwrap().brake, 0.0);
        }
    }

    #[test]
    fn inverse_lookup_roundtrip() {
        for i in 0..NUM_ACTIONS {
            let tuple = action_decode(i).unwrap();
            let j = action_encode(&tuple).expect("decoded tuple must be encodable");
            // Indices 0 and 29 print the same tuple; everywhere else the
            // inverse returns the original index.
            assert_eq!(action_decode(j).unwrap(), tuple);
            if i != 29 {
                assert_eq!(j, i);
            }
        }
    }

    #[test]
    fn reverse_rows_are_exactly_the_last_nine() {
        for i in 0..NUM_ACTIONS {
            assert_eq!(action_decode(i).unwrap().reverse, i >= 30);
        }
    }
}
