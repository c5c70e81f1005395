use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{FIRST_WORD, MASK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Share of positions selected for prediction.
    pub rate: f64,
    /// Of the selected positions: replaced by `[MASK]`.
    pub mask_prob: f64,
    /// Of the selected positions: replaced by a random word. The rest stay
    /// unchanged.
    pub random_prob: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
        }
    }
}

impl MaskConfig {
    /// Every selected position becomes `[MASK]`.
    pub fn pure(rate: f64) -> Self {
        MaskConfig {
            rate,
            mask_prob: 1.0,
            random_prob: 0.0,
        }
    }
}

/// Selects positions for prediction and corrupts them. Position 0 (the
/// classification token) is never selected.
pub fn mask_tokens<R: Rng>(
    sequence: &[u32],
    cfg: &MaskConfig,
    vocab_size: usize,
    rng: &mut R,
) -> (Vec<u32>, Vec<Option<u32>>) {
    let mut inputs = sequence.to_vec();
    let mut labels = alloc::vec![None; sequence.len()];
    for i in 1..sequence.len() {
        if rng.random::<f64>() >= cfg.rate {
            continue;
        }
        labels[i] = Some(sequence[i]);
        let r: f64 = rng.random();
        if r < cfg.mask_prob {
            inputs[i] = MASK;
        } else if r < cfg.mask_prob + cfg.random_prob {
            inputs[i] = rng.random_range(FIRST_WORD..vocab_size as u32);
        }
    }
    (inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let seq: Vec<u32> = (1..30).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (inp, lab) = mask_tokens(
            &seq,
            &MaskConfig {
                rate: 0.0,
                ..Default::default()
            },
            50,
            &mut rng,
        );
        assert_eq!(inp, seq);
        assert!(lab.iter().all(Option::is_none));
    }

    #[test]
    fn full_rate_pure_masks_everything_but_cls() {
        let seq: Vec<u32> = core::iter::once(1).chain(4..20).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (inp, lab) = mask_tokens(&seq, &MaskConfig::pure(1.0), 50, &mut rng);
        assert_eq!(inp[0], 1);
        assert!(inp[1..].iter().all(|&t| t == MASK));
        assert!(lab[1..].iter().zip(&seq[1..]).all(|(l, &s)| *l == Some(s)));
    }

    #[test]
    fn proportions() {
        let n = 100_001;
        let seq: Vec<u32> = (0..n).map(|i| 4 + (i % 40) as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (inp, lab) = mask_tokens(&seq, &MaskConfig::default(), 1000, &mut rng);
        let selected: Vec<usize> = (0..n).filter(|&i| lab[i].is_some()).collect();
        let frac = selected.len() as f64 / (n - 1) as f64;
        assert!((0.14..=0.16).contains(&frac), "{frac}");
        let k = selected.len() as f64;
        let masked = selected.iter().filter(|&&i| inp[i] == MASK).count() as f64 / k;
        let same = selected.iter().filter(|&&i| inp[i] == seq[i]).count() as f64 / k;
        // random replacements can coincide with the original token
        let random = 1.0 - masked - same;
        assert!((masked - 0.8).abs() < 0.02);
        assert!((random - 0.1).abs() < 0.02);
        assert!((same - 0.1).abs() < 0.02);
    }
}
