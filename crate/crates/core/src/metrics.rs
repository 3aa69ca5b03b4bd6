//! Reconstruction error in decibels.

use crate::error::{DectError, Result};

/// `20·log10(‖x − x*‖ / ‖x*‖)` over the pixels selected by `mask`.
///
/// Returns `-inf` when `x` equals the reference on the mask.
pub fn error_db(x: &[f64], reference: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(DectError::dims(reference.len(), x.len()));
    }
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(DectError::dims(x.len(), m.len()));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..x.len()).filter(|i| keep(*i)) {
        let d = x[i] - reference[i];
        num += d * d;
        den += reference[i] * reference[i];
    }
    if num == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if den == 0.0 {
        return Err(DectError::Degenerate("reference is zero on the evaluated region".into()));
    }
    Ok(10.0 * (num / den).log10())
}

/// Pixels of a `side × side` image whose centres lie within `radius` pixels of the centre.
pub fn disc_mask(side: usize, radius: f64) -> Vec<bool> {
    let c = (side as f64 - 1.0) / 2.0;
    (0..side * side)
        .map(|i| {
            let (r, col) = ((i / side) as f64, (i % side) as f64);
            (r - c).hypot(col - c) <= radius
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_ratio() {
        let r = [1.0, 0.0, 0.0, 0.0];
        let x = [1.1, 0.0, 0.0, 0.0];
        assert!((error_db(&x, &r, None).unwrap() + 20.0).abs() < 1e-9);
    }

    #[test]
    fn exact_match_is_neg_inf() {
        let r = [1.0, 2.0];
        assert_eq!(error_db(&r, &r, None).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn mask_restricts() {
        let r = [1.0, 1.0];
        let x = [1.0, 5.0];
        assert_eq!(error_db(&x, &r, Some(&[true, false])).unwrap(), f64::NEG_INFINITY);
        assert!(error_db(&x, &[0.0, 0.0], None).is_err());
    }

    #[test]
    fn disc_mask_counts() {
        let m = disc_mask(5, 1.0);
        assert_eq!(m.iter().filter(|v| **v).count(), 5);
    }
}
