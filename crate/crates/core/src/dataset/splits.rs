use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

/// One rolling origin: fit on `train`, forecast `test` (frame indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub origin: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Rolling origins `train_len, train_len + step, ...` for which a full
/// `horizon` of test periods fits in the frame. Test windows tile the tail of
/// the frame when `step == horizon`.
pub fn rolling_splits(len: usize, train_len: usize, step: usize, horizon: usize) -> Result<Vec<Split>> {
    if step == 0 {
        return Err(Error::Config("split step must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("split horizon must be at least 1".into()));
    }
    if train_len == 0 {
        return Err(Error::Config("training window must be at least 1 period".into()));
    }
    let mut out = Vec::new();
    let mut origin = train_len;
    while origin + horizon <= len {
        out.push(Split {
            origin,
            train: origin - train_len..origin,
            test: origin..origin + horizon,
        });
        origin += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn day_sized_steps() {
        let s = rolling_splits(100, 50, 24, 24).unwrap();
        assert_eq!(s.iter().map(|s| s.origin).collect::<Vec<_>>(), vec![50, 74]);
    }

    #[test]
    fn full_length_training_gives_no_splits() {
        assert!(rolling_splits(100, 100, 24, 24).unwrap().is_empty());
    }

    #[test]
    fn unit_steps() {
        assert_eq!(rolling_splits(3, 1, 1, 1).unwrap().len(), 2);
    }

    #[test]
    fn zero_step_rejected() {
        assert!(matches!(rolling_splits(10, 2, 0, 1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn tiled_windows_are_contiguous(len in 1usize..400, train in 1usize..100, h in 1usize..30) {
            let s = rolling_splits(len, train, h, h).unwrap();
            let mut next = train;
            for sp in &s {
                prop_assert_eq!(sp.test.start, next);
                prop_assert_eq!(sp.train.end, sp.test.start);
                prop_assert_eq!(sp.train.len(), train);
                next = sp.test.end;
            }
            if s.is_empty() {
                prop_assert!(train + h > len);
            } else {
                prop_assert!(next <= len);
                prop_assert!(next + h > len);
            }
        }
    }
}
