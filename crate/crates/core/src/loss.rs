//! Hybrid denoising objective: masked noise MSE plus a first-difference
//! smoothness term taken along each road.
//!
//! Tensors are `[batch, 2 * roads, points]`; channel `2r` is x and `2r + 1` is
//! y of road `r`. `mask[b * roads + r]` marks real (unpadded) roads.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub mse: f64,
    pub smooth: f64,
    pub total: f64,
}

fn check<T: Real>(eps: &Tensor<T>, eps_hat: &Tensor<T>, mask: &[bool]) -> Result<(usize, usize, usize, usize)> {
    if eps.dims() != eps_hat.dims() {
        return Err(Error::Shape {
            expected: eps.dims(),
            found: eps_hat.dims(),
        });
    }
    let [b, c, k] = eps.dims();
    if c % 2 != 0 || mask.len() != b * (c / 2) {
        return Err(Error::Contract(alloc::format!(
            "mask of length {} does not cover {b} samples of {} roads",
            mask.len(),
            c / 2
        )));
    }
    let valid = mask.iter().filter(|m| **m).count();
    if valid == 0 {
        return Err(Error::AllMasked);
    }
    Ok((b, c / 2, k, valid))
}

/// Mean squared error over unmasked entries.
pub fn loss_mse<T: Real>(eps: &Tensor<T>, eps_hat: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let (b, n, k, valid) = check(eps, eps_hat, mask)?;
    let mut acc = 0.0;
    for bi in 0..b {
        for r in (0..n).filter(|r| mask[bi * n + r]) {
            for c in [2 * r, 2 * r + 1] {
                for (e, h) in eps.row(bi, c).iter().zip(eps_hat.row(bi, c)) {
                    let d = (*h - *e).as_f64();
                    acc += d * d;
                }
            }
        }
    }
    Ok(acc / (valid * 2 * k) as f64)
}

/// Mean over adjacent point pairs of the squared 2D norm of the difference
/// between true and predicted first differences.
pub fn loss_smooth<T: Real>(eps: &Tensor<T>, eps_hat: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let (b, n, k, valid) = check(eps, eps_hat, mask)?;
    if k < 2 {
        return Err(Error::Contract(alloc::format!("smoothness needs at least 2 points per road, got {k}")));
    }
    let mut acc = 0.0;
    for bi in 0..b {
        for r in (0..n).filter(|r| mask[bi * n + r]) {
            for c in [2 * r, 2 * r + 1] {
                let (e, h) = (eps.row(bi, c), eps_hat.row(bi, c));
                for p in 0..k - 1 {
                    let d = ((h[p + 1] - e[p + 1]) - (h[p] - e[p])).as_f64();
                    acc += d * d;
                }
            }
        }
    }
    Ok(acc / (valid * (k - 1)) as f64)
}

pub fn loss_total<T: Real>(eps: &Tensor<T>, eps_hat: &Tensor<T>, mask: &[bool], omega: f64) -> Result<LossParts> {
    if !(omega >= 0.0) {
        return Err(Error::Config(alloc::format!("omega must be >= 0, got {omega}")));
    }
    let mse = loss_mse(eps, eps_hat, mask)?;
    let smooth = loss_smooth(eps, eps_hat, mask)?;
    Ok(LossParts {
        mse,
        smooth,
        total: mse + omega * smooth,
    })
}

/// Total loss and its gradient with respect to `eps_hat`.
pub fn loss_and_grad<T: Real>(eps: &Tensor<T>, eps_hat: &Tensor<T>, mask: &[bool], omega: f64) -> Result<(LossParts, Tensor<T>)> {
    let parts = loss_total(eps, eps_hat, mask, omega)?;
    let (b, n, k, valid) = check(eps, eps_hat, mask)?;
    let cm = 2.0 / (valid * 2 * k) as f64;
    let cs = 2.0 * omega / (valid * (k - 1)) as f64;
    let mut grad = Tensor::zeros_like(eps);
    let mut delta = alloc::vec![0.0f64; k];
    for bi in 0..b {
        for r in (0..n).filter(|r| mask[bi * n + r]) {
            for c in [2 * r, 2 * r + 1] {
                for (d, (e, h)) in delta.iter_mut().zip(eps.row(bi, c).iter().zip(eps_hat.row(bi, c))) {
                    *d = (*h - *e).as_f64();
                }
                let g = grad.row_mut(bi, c);
                for p in 0..k {
                    let mut v = cm * delta[p];
                    if p > 0 {
                        v += cs * (delta[p] - delta[p - 1]);
                    }
                    if p + 1 < k {
                        v += cs * (delta[p] - delta[p + 1]);
                    }
                    g[p] = T::of(v);
                }
            }
        }
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn random(seed: u64, dims: [usize; 3]) -> Tensor<f64> {
        let mut t = Tensor::zeros(dims[0], dims[1], dims[2]);
        rng::fill_normal(&mut rng::stream(seed, 0, 0), t.data_mut());
        t
    }

    fn naive(eps: &Tensor<f64>, hat: &Tensor<f64>, mask: &[bool]) -> (f64, f64) {
        let [b, c, k] = eps.dims();
        let n = c / 2;
        let (mut sm, mut cm, mut ss, mut cs) = (0.0, 0usize, 0.0, 0usize);
        for bi in 0..b {
            for r in 0..n {
                if !mask[bi * n + r] {
                    continue;
                }
                for p in 0..k {
                    for a in 0..2 {
                        let i = (bi * c + 2 * r + a) * k + p;
                        sm += (eps.data()[i] - hat.data()[i]).powi(2);
                        cm += 1;
                    }
                }
                for p in 0..k - 1 {
                    let mut norm2 = 0.0;
                    for a in 0..2 {
                        let i = (bi * c + 2 * r + a) * k + p;
                        let de = eps.data()[i + 1] - eps.data()[i];
                        let dh = hat.data()[i + 1] - hat.data()[i];
                        norm2 += (de - dh).powi(2);
                    }
                    ss += norm2;
                    cs += 1;
                }
            }
        }
        (sm / cm as f64, ss / cs as f64)
    }

    #[test]
    fn identical_prediction_is_zero() {
        let e = random(1, [2, 6, 9]);
        let mask = [true; 6];
        let parts = loss_total(&e, &e, &mask, 1.0).unwrap();
        assert_eq!(parts, LossParts::default());
    }

    #[test]
    fn constant_error_gives_squared_offset() {
        let e = Tensor::<f64>::zeros(1, 4, 8);
        let h = Tensor::full(1, 4, 8, 2.0);
        assert_eq!(loss_mse(&e, &h, &[true, true]).unwrap(), 4.0);
        assert_eq!(loss_smooth(&e, &h, &[true, true]).unwrap(), 0.0);
    }

    #[test]
    fn weighted_total() {
        let e = random(2, [1, 2, 5]);
        let h = random(3, [1, 2, 5]);
        let m = loss_mse(&e, &h, &[true]).unwrap();
        let s = loss_smooth(&e, &h, &[true]).unwrap();
        assert_eq!(loss_total(&e, &h, &[true], 0.0).unwrap().total, m);
        assert!((loss_total(&e, &h, &[true], 1.0).unwrap().total - (m + s)).abs() < 1e-15);
        assert!(loss_total(&e, &h, &[true], -1.0).is_err());
    }

    #[test]
    fn matches_naive_loops() {
        let e = random(4, [3, 8, 12]);
        let h = random(5, [3, 8, 12]);
        let mask = [true, false, true, true, true, true, false, true, false, true, true, true];
        let (m, s) = naive(&e, &h, &mask);
        assert!((loss_mse(&e, &h, &mask).unwrap() - m).abs() < 1e-12);
        assert!((loss_smooth(&e, &h, &mask).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn masked_roads_are_ignored() {
        let e = random(6, [1, 4, 8]);
        let mut h = e.clone();
        h.row_mut(0, 2).iter_mut().for_each(|v| *v += 100.0);
        assert_eq!(loss_total(&e, &h, &[true, false], 1.0).unwrap().total, 0.0);
        assert!(matches!(loss_mse(&e, &h, &[false, false]), Err(Error::AllMasked)));
        assert!(loss_mse(&e, &h, &[true]).is_err());
    }

    #[test]
    fn smoothness_never_crosses_roads() {
        // An error step exactly at a road boundary must not register.
        let e = Tensor::<f64>::zeros(1, 4, 4);
        let mut h = e.clone();
        h.row_mut(0, 2).fill(1.0);
        h.row_mut(0, 3).fill(-3.0);
        assert_eq!(loss_smooth(&e, &h, &[true, true]).unwrap(), 0.0);
    }

    #[test]
    fn short_roads_rejected() {
        let e = Tensor::<f64>::zeros(1, 2, 1);
        assert!(loss_smooth(&e, &e, &[true]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = random(7, [2, 4, 7]);
        let h = random(8, [2, 4, 7]);
        let mask = [true, false, true, true];
        let (_, g) = loss_and_grad(&e, &h, &mask, 0.7).unwrap();
        let step = 1e-6;
        for i in 0..h.numel() {
            let mut hp = h.clone();
            hp.data_mut()[i] += step;
            let mut hm = h.clone();
            hm.data_mut()[i] -= step;
            let fd = (loss_total(&e, &hp, &mask, 0.7).unwrap().total - loss_total(&e, &hm, &mask, 0.7).unwrap().total) / (2.0 * step);
            assert!((fd - g.data()[i]).abs() < 1e-8, "entry {i}: {fd} vs {}", g.data()[i]);
        }
    }

    proptest! {
        #[test]
        fn smooth_is_offset_invariant_and_mse_is_not(seed in 0u64..1000, offsets in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let e = random(seed, [1, 6, 10]);
            let h = random(seed + 1, [1, 6, 10]);
            let mut shifted = h.clone();
            for (r, o) in offsets.iter().enumerate() {
                for c in [2 * r, 2 * r + 1] {
                    shifted.row_mut(0, c).iter_mut().for_each(|v| *v += o);
                }
            }
            let mask = [true; 3];
            let s0 = loss_smooth(&e, &h, &mask).unwrap();
            let s1 = loss_smooth(&e, &shifted, &mask).unwrap();
            prop_assert!((s0 - s1).abs() < 1e-9 * (1.0 + s0));
            if offsets.iter().any(|o| o.abs() > 0.1) {
                prop_assert!(loss_mse(&e, &h, &mask).unwrap() != loss_mse(&e, &shifted, &mask).unwrap());
            }
        }

        #[test]
        fn loss_is_nonnegative_and_zero_only_at_equality(seed in 0u64..1000, omega in 0.0f64..3.0) {
            let e = random(seed, [2, 4, 6]);
            let h = random(seed + 7, [2, 4, 6]);
            let mask = [true, true, false, true];
            prop_assert!(loss_total(&e, &h, &mask, omega).unwrap().total > 0.0);
            prop_assert_eq!(loss_total(&e, &e, &mask, omega).unwrap().total, 0.0);
        }
    }
}
