//! Image quality metrics on `[0, 1]` frames.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frame::Frame;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 · log10(1 / MSE)` in dB; identical frames give `+∞`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Mean of a per-frame metric with infinite frames set aside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    /// Mean over finite frames; `None` when every frame was infinite.
    pub value: Option<f64>,
    pub infinite_frames: usize,
    pub frames: usize,
}

pub fn average_scores(values: &[f64]) -> SequenceScore {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    SequenceScore {
        value: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        infinite_frames: values.len() - finite.len(),
        frames: values.len(),
    }
}

/// PSNR averaged over frame pairs, skipping (and counting) identical pairs.
pub fn psnr_sequence(a: &[Frame], b: &[Frame]) -> Result<SequenceScore> {
    if a.len() != b.len() {
        return Err(invalid(format!("sequences have {} and {} frames", a.len(), b.len())));
    }
    let values = a.iter().zip(b).map(|(x, y)| psnr(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(average_scores(&values))
}

fn window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(w − 10) × (h − 10)`.
fn filter_valid(img: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Windowed SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, dynamic range 1, averaged over all fully-inside windows and
/// channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let g = window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let x = a.channel(c);
        let y = b.channel(c);
        let (x, y) = (x.data(), y.data());
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(x, w, h, &g);
        let my = filter_valid(y, w, h, &g);
        let sxx = filter_valid(&prod(x, x), w, h, &g);
        let syy = filter_valid(&prod(y, y), w, h, &g);
        let sxy = filter_valid(&prod(x, y), w, h, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim_sequence(a: &[Frame], b: &[Frame]) -> Result<SequenceScore> {
    if a.len() != b.len() {
        return Err(invalid(format!("sequences have {} and {} frames", a.len(), b.len())));
    }
    let values = a.iter().zip(b).map(|(x, y)| ssim(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(average_scores(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, w: usize, h: usize, c: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(w, h, c, (0..w * h * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = random(1, 16, 12, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let lo = Frame::filled(8, 8, 1, 0.3).unwrap();
        let hi = Frame::filled(8, 8, 1, 0.4).unwrap();
        assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() < 1e-12);
        let b = random(2, 16, 12, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &lo).is_err());
    }

    #[test]
    fn sequence_skips_infinite_frames() {
        let a = random(1, 8, 8, 1);
        let b = random(2, 8, 8, 1);
        let s = psnr_sequence(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.infinite_frames, 1);
        assert_eq!(s.frames, 2);
        assert_eq!(s.value, Some(psnr(&a, &b).unwrap()));
        let all = psnr_sequence(&[a.clone()], &[a.clone()]).unwrap();
        assert_eq!(all.value, None);
        assert!(psnr_sequence(&[a.clone()], &[]).is_err());
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let a = random(5, 32, 32, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let b = Frame::new(
                32,
                32,
                1,
                a.data()
                    .iter()
                    .zip(&noise)
                    .map(|(v, n)| 0.5 * v + 0.25 + amp * n)
                    .collect(),
            )
            .unwrap();
            let a2 = Frame::new(32, 32, 1, a.data().iter().map(|v| 0.5 * v + 0.25).collect()).unwrap();
            let p = psnr(&a2, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let a = random(3, 32, 24, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let checker = Frame::from_fn(32, 32, 1, |x, y, _| if (x / 4 + y / 4) % 2 == 0 { 0.9 } else { 0.1 }).unwrap();
        let neg = Frame::new(32, 32, 1, checker.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&checker, &neg).unwrap() < 0.5);
        let small = random(4, 10, 20, 1);
        assert!(ssim(&small, &small).is_err());
    }

    /// Direct evaluation of one window against a naive weighted sum.
    #[test]
    fn ssim_single_window_oracle() {
        let a = random(7, 11, 11, 1);
        let b = random(8, 11, 11, 1);
        let r = 5.0;
        let mut wts = vec![];
        for y in 0..11 {
            for x in 0..11 {
                let d2 = (x as f64 - r).powi(2) + (y as f64 - r).powi(2);
                wts.push((-d2 / (2.0 * 1.5 * 1.5)).exp());
            }
        }
        let s: f64 = wts.iter().sum();
        let wsum = |f: &dyn Fn(usize) -> f64| (0..121).map(|i| wts[i] / s * f(i)).sum::<f64>();
        let (x, y) = (a.data(), b.data());
        let ux = wsum(&|i| x[i]);
        let uy = wsum(&|i| y[i]);
        let vx = wsum(&|i| x[i] * x[i]) - ux * ux;
        let vy = wsum(&|i| y[i] * y[i]) - uy * uy;
        let cxy = wsum(&|i| x[i] * y[i]) - ux * uy;
        let want = ((2.0 * ux * uy + 1e-4) * (2.0 * cxy + 9e-4)) / ((ux * ux + uy * uy + 1e-4) * (vx + vy + 9e-4));
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random(s1, 14, 13, 1);
            let b = random(s2, 14, 13, 1);
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
