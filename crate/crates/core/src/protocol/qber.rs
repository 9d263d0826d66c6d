use crate::error::{Error, Result};
use crate::protocol::Decision;

/// Outcome of comparing a revealed chunk of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QberEstimate {
    pub mismatches: u64,
    pub compared: u64,
    /// Revealed positions skipped because Bob had no bit there.
    pub skipped_erasures: u64,
}

impl QberEstimate {
    pub fn value(&self) -> f64 {
        self.mismatches as f64 / self.compared as f64
    }

    pub fn merge(self, other: QberEstimate) -> QberEstimate {
        QberEstimate {
            mismatches: self.mismatches + other.mismatches,
            compared: self.compared + other.compared,
            skipped_erasures: self.skipped_erasures + other.skipped_erasures,
        }
    }
}

/// Every `floor(1 / fraction)`-th position, starting at 0.
pub fn revealed_indices(n: usize, fraction: f64) -> Vec<usize> {
    let stride = ((1.0 / fraction) + 1e-9).floor().max(1.0) as usize;
    (0..n).step_by(stride).collect()
}

/// Compare Alice's and Bob's bits at `revealed`. Erasures on Bob's side are
/// left out of the denominator; an empty comparison is an error, not zero.
pub fn estimate_qber(alice: &[u8], bob: &[Decision], revealed: &[usize]) -> Result<QberEstimate> {
    let mut est = QberEstimate::default();
    for &i in revealed {
        if i >= alice.len() || i >= bob.len() {
            return Err(Error::invalid(
                "revealed_indices",
                format!("index {i} out of range for a {}-bit key", alice.len().min(bob.len())),
            ));
        }
        match bob[i].bit() {
            None => est.skipped_erasures += 1,
            Some(b) => {
                est.compared += 1;
                if b != alice[i] {
                    est.mismatches += 1;
                }
            }
        }
    }
    if est.compared == 0 {
        return Err(Error::UndefinedQber);
    }
    Ok(est)
}

/// Key material left after removing revealed positions and Bob's erasures.
/// Returns `(alice, bob)` bit strings of equal length.
pub fn usable_key(alice: &[u8], bob: &[Decision], revealed: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut skip = vec![false; alice.len()];
    for &i in revealed {
        if let Some(s) = skip.get_mut(i) {
            *s = true;
        }
    }
    alice
        .iter()
        .zip(bob)
        .zip(skip)
        .filter_map(|((&a, d), skipped)| match (skipped, d.bit()) {
            (false, Some(b)) => Some((a, b)),
            _ => None,
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Decision::{Erasure, H, V};

    #[test]
    fn identical_chunks() {
        let alice = [0, 1, 1, 0];
        let bob = [H, V, V, H];
        let est = estimate_qber(&alice, &bob, &[0, 1, 2, 3]).unwrap();
        assert_eq!(est.value(), 0.0);
        assert_eq!(est.compared, 4);
    }

    #[test]
    fn one_in_a_hundred() {
        let alice = vec![0u8; 100];
        let mut bob = vec![H; 100];
        bob[37] = V;
        let all: Vec<usize> = (0..100).collect();
        let est = estimate_qber(&alice, &bob, &all).unwrap();
        assert_eq!(est.value(), 0.01);
    }

    #[test]
    fn erasures_leave_the_denominator() {
        let alice = [0, 1, 0];
        let bob = [Erasure, V, H];
        let est = estimate_qber(&alice, &bob, &[0, 1, 2]).unwrap();
        assert_eq!((est.compared, est.skipped_erasures), (2, 1));
        assert_eq!(estimate_qber(&alice, &bob, &[0]), Err(Error::UndefinedQber));
        assert_eq!(estimate_qber(&alice, &bob, &[]), Err(Error::UndefinedQber));
        assert!(estimate_qber(&alice, &bob, &[3]).is_err());
    }

    #[test]
    fn stride_selection() {
        assert_eq!(revealed_indices(35, 0.1), vec![0, 10, 20, 30]);
        assert_eq!(revealed_indices(3000, 0.1).len(), 300);
        assert_eq!(revealed_indices(5, 0.9), vec![0, 1, 2, 3, 4]);
        assert_eq!(revealed_indices(10, 0.3), vec![0, 3, 6, 9]);
    }

    #[test]
    fn usable_key_drops_revealed_and_erasures() {
        let alice = [0, 1, 0, 1, 1];
        let bob = [H, V, Erasure, V, H];
        let (a, b) = usable_key(&alice, &bob, &[0]);
        assert_eq!(a, vec![1, 1, 1]);
        assert_eq!(b, vec![1, 1, 0]);
    }
}
