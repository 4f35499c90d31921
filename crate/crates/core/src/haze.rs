//! Smoke extraction from real footage and the haze image-formation model.
//!
//! A hazy frame is `Ĩ = I_clean · (1 − S̃) + A · S̃` for a smoke layer `S̃` and
//! atmospheric light `A`; [`extract_clean_smoke`] inverts it given a recovered
//! background. Also here: soft masks, the decaying weight applied to
//! generated frames, and the Fourier amplitude/phase loss.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::{Frame, MaskFrame};

pub const DEFAULT_MASK_SIGMA: f64 = 2.0;
pub const DEFAULT_PATCH: usize = 15;
pub const DEFAULT_TOP_FRACTION: f64 = 0.001;
pub const DEFAULT_DENOM_FLOOR: f64 = 0.02;
pub const DEFAULT_FREQ_LAMBDA: f64 = 0.001;

/// Index into `0..n` with half-sample symmetric reflection (`c b a | a b c`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with reflective borders. The kernel is normalized
/// and the border handling symmetric, so the mean of the mask is preserved.
pub fn smooth_mask(mask: &MaskFrame, sigma: f64) -> Result<MaskFrame> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let (w, h) = (mask.width(), mask.height());
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let src = mask.data();
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + reflect(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    MaskFrame::new(w, h, out)
}

/// Coarse smoke layer: the frame multiplied by the (smoothed) mask.
pub fn extract_coarse(mask: &MaskFrame, frame: &Frame) -> Result<Frame> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs frame {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    let c = frame.channels();
    Frame::from_fn(frame.width(), frame.height(), c, |x, y, ch| {
        mask.get(x, y) * frame.get(x, y, ch)
    })
}

fn light_for(a: &[f64], channels: usize) -> Result<Vec<f64>> {
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("atmospheric light must lie in [0, 1]"));
    }
    match a.len() {
        1 => Ok(vec![a[0]; channels]),
        n if n == channels => Ok(a.to_vec()),
        n => Err(Error::DimensionMismatch(format!(
            "{n} atmospheric light values for {channels} channels"
        ))),
    }
}

fn check_layer(base: &Frame, layer: &Frame, what: &str) -> Result<()> {
    if !base.same_size(layer) || (layer.channels() != 1 && layer.channels() != base.channels()) {
        return Err(Error::DimensionMismatch(format!(
            "{what} {}x{}x{} does not fit a {}x{}x{} frame",
            layer.width(),
            layer.height(),
            layer.channels(),
            base.width(),
            base.height(),
            base.channels()
        )));
    }
    Ok(())
}

#[inline]
fn blend(bg: f64, coverage: f64, premultiplied: f64) -> f64 {
    bg * (1.0 - coverage) + premultiplied
}

/// `I_clean · (1 − S̃) + A · S̃`. `a` holds one value per channel, or a
/// single value for all; a single-channel `smoke` is shared by all channels.
pub fn composite_haze(clean_bg: &Frame, smoke: &Frame, a: &[f64]) -> Result<Frame> {
    check_layer(clean_bg, smoke, "smoke layer")?;
    let a = light_for(a, clean_bg.channels())?;
    Frame::from_fn(clean_bg.width(), clean_bg.height(), clean_bg.channels(), |x, y, c| {
        let s = smoke.get_broadcast(x, y, c);
        blend(clean_bg.get(x, y, c), s, a[c] * s)
    })
}

/// The same model with the light term already multiplied in:
/// `bg · (1 − α) + layer`, where `layer` plays the role of `A · S̃`.
pub fn composite_premultiplied(bg: &Frame, alpha: &Frame, layer: &Frame) -> Result<Frame> {
    check_layer(bg, alpha, "alpha")?;
    check_layer(bg, layer, "layer")?;
    Frame::from_fn(bg.width(), bg.height(), bg.channels(), |x, y, c| {
        blend(
            bg.get(x, y, c),
            alpha.get_broadcast(x, y, c),
            layer.get_broadcast(x, y, c),
        )
    })
}

/// Dark channel: the per-pixel minimum over channels, then a `patch × patch`
/// minimum filter clipped at the borders.
pub fn dark_channel(frame: &Frame, patch: usize) -> Result<Vec<f64>> {
    if patch == 0 || patch % 2 == 0 {
        return Err(invalid(format!("patch must be a positive odd size, got {patch}")));
    }
    let (w, h, ch) = (frame.width(), frame.height(), frame.channels());
    let minc: Vec<f64> = frame
        .data()
        .chunks(ch)
        .map(|px| px.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let r = patch / 2;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = minc[y * w + lo..=y * w + hi]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
        }
    }
    let mut dark = vec![0.0; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            dark[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(dark)
}

/// Atmospheric light from the dark channel prior: among the
/// `ceil(top_fraction · N)` pixels with the brightest dark channel (ties go to
/// the lower index), the per-channel maximum of the original frame.
pub fn estimate_atmospheric_light(frame: &Frame, patch: usize, top_fraction: f64) -> Result<Vec<f64>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(invalid(format!("top fraction must lie in (0, 1], got {top_fraction}")));
    }
    let dark = dark_channel(frame, patch)?;
    let n = frame.pixel_count();
    let count = ((top_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dark[j].total_cmp(&dark[i]).then(i.cmp(&j)));
    let ch = frame.channels();
    let mut a = vec![0.0f64; ch];
    for &i in &order[..count] {
        for (c, a) in a.iter_mut().enumerate() {
            *a = a.max(frame.data()[i * ch + c]);
        }
    }
    Ok(a)
}

/// Counts of samples where `|Ĩ_clean − A|` fell under the denominator floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorReport {
    /// Pixels with at least one channel under the floor.
    pub floor_pixels: usize,
    /// Individual channel samples under the floor.
    pub floor_samples: usize,
    pub total_pixels: usize,
}

impl FloorReport {
    pub fn floor_fraction(&self) -> f64 {
        self.floor_pixels as f64 / self.total_pixels as f64
    }
}

/// Inverts the haze model: `S = 1 − (I − A) / (Ĩ_clean − A)`, clamped to
/// `[0, 1]`. Samples with `|Ĩ_clean − A| < denom_floor` take the value of
/// `fallback` (normally the coarse extraction) and are counted in the report.
pub fn extract_clean_smoke(
    frame: &Frame,
    recovered_bg: &Frame,
    a: &[f64],
    fallback: &Frame,
    denom_floor: f64,
) -> Result<(Frame, FloorReport)> {
    frame.check_same_shape(recovered_bg)?;
    check_layer(frame, fallback, "fallback")?;
    if !(denom_floor >= 0.0) {
        return Err(invalid("denominator floor must be non-negative"));
    }
    let a = light_for(a, frame.channels())?;
    let (w, h, ch) = (frame.width(), frame.height(), frame.channels());
    let mut report = FloorReport {
        total_pixels: w * h,
        ..FloorReport::default()
    };
    let mut data = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let mut floored = false;
            for c in 0..ch {
                let denom = recovered_bg.get(x, y, c) - a[c];
                if denom.abs() < denom_floor || denom == 0.0 {
                    floored = true;
                    report.floor_samples += 1;
                    data.push(fallback.get_broadcast(x, y, c));
                } else {
                    data.push(1.0 - (frame.get(x, y, c) - a[c]) / denom);
                }
            }
            report.floor_pixels += floored as usize;
        }
    }
    Ok((Frame::new(w, h, ch, data)?, report))
}

/// `w_t = w_min + (1 − w_min) · exp(−k (t − t0))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub w_min: f64,
    pub k: f64,
    pub t0: i64,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        Self {
            w_min: 0.0,
            k: 0.02,
            t0: 0,
        }
    }
}

impl WeightSchedule {
    pub fn new(w_min: f64, k: f64, t0: i64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_min) {
            return Err(invalid(format!("w_min must lie in [0, 1], got {w_min}")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(invalid(format!("k must be non-negative, got {k}")));
        }
        Ok(Self { w_min, k, t0 })
    }
}

pub fn decay_weight(schedule: &WeightSchedule, t: i64) -> Result<f64> {
    if t < schedule.t0 {
        return Err(invalid(format!("frame {t} precedes t0 = {}", schedule.t0)));
    }
    let WeightSchedule { w_min, k, t0 } = *schedule;
    Ok(w_min + (1.0 - w_min) * (-k * (t - t0) as f64).exp())
}

/// How phase differences are measured in [`frequency_loss_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseDiff {
    /// `|β − β̂|` of principal-value angles, so values near ±π can differ by ~2π.
    #[default]
    Raw,
    /// Shortest angular distance, at most π.
    Wrapped,
}

/// Linear warm-up `min(1, iter / warmup)`; no warm-up means full weight.
pub fn warmup_weight(iter: u64, warmup: u64) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        (iter as f64 / warmup as f64).min(1.0)
    }
}

/// Round-off level below which a spectrum component counts as zero, so real
/// bins get phase exactly 0 or π regardless of the sign of the noise.
fn snap(v: f64, scale: f64) -> f64 {
    if v.abs() <= 1e-12 * scale {
        0.0
    } else {
        v
    }
}

fn spectrum(frame: &Frame, channel: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let (w, h) = (frame.width(), frame.height());
    let mut buf: Vec<Complex<f64>> = frame
        .data()
        .iter()
        .skip(channel)
        .step_by(frame.channels())
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    let scale = buf.iter().map(|c| c.re.abs()).sum::<f64>().max(1.0);
    planner.plan_fft_forward(w).process(&mut buf);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    let fft_h = planner.plan_fft_forward(h);
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fft_h.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    for c in &mut buf {
        *c = Complex::new(snap(c.re, scale), snap(c.im, scale));
    }
    buf
}

/// Unweighted `mean|A − Â| + mean|β − β̂|` over all bins and channels of the
/// per-channel 2D DFTs.
pub fn frequency_distance(pred: &Frame, target: &Frame, phase: PhaseDiff) -> Result<f64> {
    pred.check_same_shape(target)?;
    let mut planner = FftPlanner::new();
    let (mut amp, mut ph) = (0.0, 0.0);
    for c in 0..pred.channels() {
        let f = spectrum(pred, c, &mut planner);
        let g = spectrum(target, c, &mut planner);
        for (a, b) in f.iter().zip(&g) {
            amp += (a.norm() - b.norm()).abs();
            let d = (a.arg() - b.arg()).abs();
            ph += match phase {
                PhaseDiff::Raw => d,
                PhaseDiff::Wrapped => d.min(std::f64::consts::TAU - d),
            };
        }
    }
    let n = (pred.pixel_count() * pred.channels()) as f64;
    Ok(amp / n + ph / n)
}

/// `λ · min(1, iter / warmup) · L_freq` with raw phase differences.
pub fn frequency_loss(pred: &Frame, target: &Frame, iter: u64, warmup: u64, lambda: f64) -> Result<f64> {
    frequency_loss_with(pred, target, iter, warmup, lambda, PhaseDiff::Raw)
}

pub fn frequency_loss_with(
    pred: &Frame,
    target: &Frame,
    iter: u64,
    warmup: u64,
    lambda: f64,
    phase: PhaseDiff,
) -> Result<f64> {
    let w = warmup_weight(iter, warmup);
    let l = frequency_distance(pred, target, phase)?;
    Ok(if w == 0.0 { 0.0 } else { lambda * w * l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, hi: f64) -> Frame {
        let data = (0..w * h * c).map(|_| rng.gen_range(0.0..hi)).collect();
        Frame::new(w, h, c, data).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-1, 1), 0);
    }

    #[test]
    fn smooth_constant_masks() {
        for v in [0.0, 1.0] {
            let m = MaskFrame::new(7, 5, vec![v; 35]).unwrap();
            let s = smooth_mask(&m, 2.0).unwrap();
            assert!(s.data().iter().all(|x| (x - v).abs() < 1e-12));
        }
        assert!(smooth_mask(&MaskFrame::new(1, 1, vec![1.0]).unwrap(), 0.0).is_err());
    }

    /// The Gaussian is symmetric about the step, so the two columns that
    /// straddle it sit at 0.5 ± δ.
    #[test]
    fn step_edge_straddles_half() {
        let m = MaskFrame::from_fn(40, 6, |x, _| if x >= 20 { 1.0 } else { 0.0 }).unwrap();
        let s = smooth_mask(&m, 2.0).unwrap();
        for y in 0..6 {
            let mid = 0.5 * (s.get(19, y) + s.get(20, y));
            assert!((mid - 0.5).abs() < 0.01, "{mid}");
            assert!(s.get(19, y) < 0.5 && s.get(20, y) > 0.5);
        }
    }

    #[test]
    fn coarse_is_pixel_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 9, 7, 3, 1.0);
        let m = MaskFrame::new(9, 7, (0..63).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let out = extract_coarse(&m, &f).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                for c in 0..3 {
                    assert!((out.get(x, y, c) - m.get(x, y) * f.get(x, y, c)).abs() <= 1e-12);
                }
            }
        }
        let ones = MaskFrame::new(9, 7, vec![1.0; 63]).unwrap();
        assert_eq!(extract_coarse(&ones, &f).unwrap(), f);
        let zeros = MaskFrame::new(9, 7, vec![0.0; 63]).unwrap();
        assert!(extract_coarse(&zeros, &f).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(extract_coarse(&MaskFrame::new(2, 2, vec![1.0; 4]).unwrap(), &f).is_err());
    }

    #[test]
    fn composite_examples() {
        let bg = Frame::filled(2, 2, 1, 0.4).unwrap();
        let s = Frame::filled(2, 2, 1, 0.25).unwrap();
        let out = composite_haze(&bg, &s, &[0.8]).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let zero = Frame::filled(2, 2, 1, 0.0).unwrap();
        assert_eq!(composite_haze(&bg, &zero, &[0.8]).unwrap(), bg);
        let one = Frame::filled(2, 2, 1, 1.0).unwrap();
        assert!(composite_haze(&bg, &one, &[0.8])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.8));
        assert!(composite_haze(&bg, &s, &[1.5]).is_err());
        assert!(composite_haze(&bg, &s, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn atmospheric_light_examples() {
        let g = Frame::filled(20, 20, 3, 0.37).unwrap();
        assert_eq!(estimate_atmospheric_light(&g, 15, 0.001).unwrap(), vec![0.37; 3]);
        let f = Frame::from_fn(64, 64, 3, |x, y, _| {
            if (10..30).contains(&x) && (20..40).contains(&y) {
                1.0
            } else {
                0.1
            }
        })
        .unwrap();
        assert_eq!(estimate_atmospheric_light(&f, 15, 0.001).unwrap(), vec![1.0; 3]);
        assert!(estimate_atmospheric_light(&f, 4, 0.001).is_err());
        assert!(estimate_atmospheric_light(&f, 15, 0.0).is_err());
    }

    #[test]
    fn atmospheric_light_recovered_from_synthetic_haze() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = [0.85, 0.8, 0.9];
        // Colorful background: one channel is always dark.
        let bg = Frame::from_fn(96, 96, 3, |x, y, c| {
            let dark = (x / 7 + y / 5) % 3;
            if c == dark {
                0.05
            } else {
                0.3 + 0.3 * (((x * 7 + y * 13 + c * 5) % 11) as f64 / 11.0)
            }
        })
        .unwrap();
        let mut data = Vec::new();
        for y in 0..96 {
            for x in 0..96 {
                let d2 = (x as f64 - 48.0).powi(2) + (y as f64 - 48.0).powi(2);
                data.push((1.2 * (-d2 / 600.0).exp()).min(1.0) * rng.gen_range(0.97..1.0));
            }
        }
        let s = Frame::new(96, 96, 1, data).unwrap();
        let hazy = composite_haze(&bg, &s, &a).unwrap();
        let got = estimate_atmospheric_light(&hazy, 15, 0.001).unwrap();
        for c in 0..3 {
            assert!((got[c] - a[c]).abs() < 0.05, "{got:?}");
        }
    }

    #[test]
    fn extraction_examples_and_floor() {
        let bg = Frame::from_fn(4, 1, 1, |x, _, _| [0.2, 0.4, 0.79, 0.3][x]).unwrap();
        let a = [0.8];
        let fallback = Frame::filled(4, 1, 1, 0.123).unwrap();
        let (s, r) = extract_clean_smoke(&bg, &bg, &a, &fallback, 0.02).unwrap();
        assert_eq!(&s.data()[..2], &[0.0, 0.0]);
        assert_eq!(s.data()[2], 0.123);
        assert_eq!(r.floor_pixels, 1);
        assert_eq!(r.total_pixels, 4);
        let opaque = Frame::filled(4, 1, 1, 0.8).unwrap();
        let (s, _) = extract_clean_smoke(&opaque, &bg, &a, &fallback, 0.02).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert_eq!(s.data()[3], 1.0);
    }

    #[test]
    fn decay_closed_form() {
        let s = WeightSchedule::default();
        assert_eq!(decay_weight(&s, 0).unwrap(), 1.0);
        assert!((decay_weight(&s, 50).unwrap() - (-1.0f64).exp()).abs() <= 1e-12);
        let flat = WeightSchedule::new(0.3, 0.0, 5).unwrap();
        assert_eq!(decay_weight(&flat, 500).unwrap(), 1.0);
        assert!(decay_weight(&flat, 4).is_err());
        assert!(WeightSchedule::new(1.5, 0.1, 0).is_err());
        assert!(WeightSchedule::new(0.5, -0.1, 0).is_err());
    }

    /// Direct O(N²) DFT, independent of the FFT path.
    fn naive_distance(p: &[f64], q: &[f64], w: usize, h: usize) -> f64 {
        let dft = |img: &[f64]| -> Vec<(f64, f64)> {
            let scale = img.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            let mut out = Vec::new();
            for v in 0..h {
                for u in 0..w {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ang = -std::f64::consts::TAU * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                            re += img[y * w + x] * ang.cos();
                            im += img[y * w + x] * ang.sin();
                        }
                    }
                    let z = |t: f64| if t.abs() <= 1e-12 * scale { 0.0 } else { t };
                    out.push((z(re), z(im)));
                }
            }
            out
        };
        let (a, b) = (dft(p), dft(q));
        let n = (w * h) as f64;
        let amp: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x.0.hypot(x.1) - y.0.hypot(y.1)).abs())
            .sum();
        let ph: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x.1.atan2(x.0) - y.1.atan2(y.0)).abs())
            .sum();
        amp / n + ph / n
    }

    #[test]
    fn frequency_loss_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_frame(&mut rng, 4, 4, 1, 1.0);
            let q = random_frame(&mut rng, 4, 4, 1, 1.0);
            let got = frequency_loss(&p, &q, 10, 10, 1.0).unwrap();
            let want = naive_distance(p.data(), q.data(), 4, 4);
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn frequency_loss_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_frame(&mut rng, 6, 5, 3, 1.0);
        let q = random_frame(&mut rng, 6, 5, 3, 1.0);
        assert_eq!(frequency_loss(&p, &p, 100, 10, 0.001).unwrap(), 0.0);
        assert_eq!(frequency_loss(&p, &q, 0, 10, 0.001).unwrap(), 0.0);
        let full = frequency_loss(&p, &q, 10, 10, 0.001).unwrap();
        let half = frequency_loss(&p, &q, 5, 10, 0.001).unwrap();
        assert!(full > 0.0);
        assert!((half - 0.5 * full).abs() <= 1e-15);
        assert_eq!(frequency_loss(&p, &q, 50, 10, 0.001).unwrap(), full);
        let wrapped = frequency_loss_with(&p, &q, 10, 10, 0.001, PhaseDiff::Wrapped).unwrap();
        assert!(wrapped <= full);
        let r = random_frame(&mut rng, 5, 5, 3, 1.0);
        assert!(frequency_loss(&p, &r, 1, 1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_keeps_range_and_mean(
            w in 1usize..24, h in 1usize..24, sigma in 0.3f64..6.0, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = MaskFrame::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let s = smooth_mask(&m, sigma).unwrap();
            prop_assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
            prop_assert!((mean(s.data()) - mean(m.data())).abs() < 1e-6);
        }

        #[test]
        fn composite_identity_when_light_equals_background(
            seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: f64 = rng.gen_range(0.0..1.0);
            let bg = Frame::filled(5, 4, 1, g).unwrap();
            let s = random_frame(&mut rng, 5, 4, 1, 1.0);
            let out = composite_haze(&bg, &s, &[g]).unwrap();
            prop_assert!(out.data().iter().all(|v| (v - g).abs() < 1e-12));
        }

        #[test]
        fn extraction_inverts_composite(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bg = random_frame(&mut rng, 8, 8, 3, 0.6);
            let s = random_frame(&mut rng, 8, 8, 3, 1.0);
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(0.6..1.0)).collect();
            let hazy = composite_haze(&bg, &s, &a).unwrap();
            let (got, _) = extract_clean_smoke(&hazy, &bg, &a, &s, DEFAULT_DENOM_FLOOR).unwrap();
            for (x, y) in got.data().iter().zip(s.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn decay_monotone_and_bounded(w_min in 0.0f64..1.0, k in 0.0f64..1.0, t0 in -20i64..20, dt in 0i64..200) {
            let s = WeightSchedule::new(w_min, k, t0).unwrap();
            let a = decay_weight(&s, t0 + dt).unwrap();
            let b = decay_weight(&s, t0 + dt + 1).unwrap();
            prop_assert!(b <= a);
            prop_assert!(a <= 1.0 && a >= w_min);
        }

        #[test]
        fn amplitude_term_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_frame(&mut rng, 5, 3, 1, 1.0);
            let q = random_frame(&mut rng, 5, 3, 1, 1.0);
            let ab = frequency_distance(&p, &q, PhaseDiff::Raw).unwrap();
            let ba = frequency_distance(&q, &p, PhaseDiff::Raw).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
