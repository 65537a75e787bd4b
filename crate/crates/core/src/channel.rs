//! Beam-sweep channel parameter estimation.
//!
//! Beam indices here are 0-based. The linear order of a beam triple is
//! `(ue·n_el + el)·n_az + az`, and raw samples append the subcarrier as the
//! fastest axis.

use nalgebra::{Matrix5, Vector5};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MeasurementVector;
use crate::measurement::{MeasurementFrame, PathMeasurement, UNINFORMATIVE_ELEVATION_VARIANCE};
use crate::scalar::{deg, lit, Real};
use crate::sim::BeamCodebook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamspaceDims {
    pub n_ue: usize,
    pub n_el: usize,
    pub n_az: usize,
    pub n_subcarriers: usize,
}

impl BeamspaceDims {
    pub fn n_beams(&self) -> usize {
        self.n_ue * self.n_el * self.n_az
    }

    pub fn len(&self) -> usize {
        self.n_beams() * self.n_subcarriers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn beam_index(&self, ue: usize, el: usize, az: usize) -> usize {
        (ue * self.n_el + el) * self.n_az + az
    }

    /// Position of sample `(ue, el, az, subcarrier)` in the flat buffers.
    pub fn index(&self, ue: usize, el: usize, az: usize, s: usize) -> usize {
        self.beam_index(ue, el, az) * self.n_subcarriers + s
    }

    pub fn beam_from_linear(&self, i: usize) -> BeamIndex {
        BeamIndex {
            ue: i / (self.n_el * self.n_az),
            el: (i / self.n_az) % self.n_el,
            az: i % self.n_az,
        }
    }
}

/// Received symbols and the pilots that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBeamspace<T> {
    pub dims: BeamspaceDims,
    /// Absolute index κ of each active subcarrier.
    pub subcarriers: Vec<u32>,
    pub subcarrier_spacing_hz: T,
    pub received: Vec<Complex<T>>,
    pub pilots: Vec<Complex<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeamIndex {
    pub ue: usize,
    pub el: usize,
    pub az: usize,
}

impl BeamIndex {
    pub fn new(ue: usize, el: usize, az: usize) -> Self {
        Self { ue, el, az }
    }

    fn chebyshev(&self, other: &Self) -> usize {
        self.ue
            .abs_diff(other.ue)
            .max(self.el.abs_diff(other.el))
            .max(self.az.abs_diff(other.az))
    }
}

/// Per-bin channel estimates and the per-beam energy map.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceTensor<T> {
    pub dims: BeamspaceDims,
    pub subcarriers: Vec<u32>,
    pub subcarrier_spacing_hz: T,
    pub channel: Vec<Complex<T>>,
    pub energy: Vec<T>,
}

impl<T: Real> BeamspaceTensor<T> {
    pub fn energy_at(&self, b: BeamIndex) -> T {
        self.energy[self.dims.beam_index(b.ue, b.el, b.az)]
    }

    pub fn response(&self, b: BeamIndex) -> &[Complex<T>] {
        let start = self.dims.index(b.ue, b.el, b.az, 0);
        &self.channel[start..start + self.dims.n_subcarriers]
    }

    pub fn contains(&self, b: BeamIndex) -> bool {
        b.ue < self.dims.n_ue && b.el < self.dims.n_el && b.az < self.dims.n_az
    }
}

/// Matched-filter estimate `ĥ = p*·y/|p|²` per bin.
pub fn estimate_beamspace_channel<T: Real>(raw: &RawBeamspace<T>) -> Result<BeamspaceTensor<T>> {
    let dims = raw.dims;
    if raw.received.len() != dims.len()
        || raw.pilots.len() != dims.len()
        || raw.subcarriers.len() != dims.n_subcarriers
    {
        return Err(Error::Config(format!(
            "beamspace buffers do not match dimensions {dims:?}"
        )));
    }
    let mut channel = Vec::with_capacity(dims.len());
    for (y, p) in raw.received.iter().zip(&raw.pilots) {
        let pw = p.norm_sqr();
        if !(pw > T::zero()) {
            return Err(Error::InvalidPilot);
        }
        channel.push(p.conj() * *y / pw);
    }
    let energy = channel
        .chunks(dims.n_subcarriers.max(1))
        .take(dims.n_beams())
        .map(|c| c.iter().fold(T::zero(), |acc, h| acc + h.norm_sqr()))
        .collect::<Vec<_>>();
    let energy = if dims.n_subcarriers == 0 {
        vec![T::zero(); dims.n_beams()]
    } else {
        energy
    };
    Ok(BeamspaceTensor {
        dims,
        subcarriers: raw.subcarriers.clone(),
        subcarrier_spacing_hz: raw.subcarrier_spacing_hz,
        channel,
        energy,
    })
}

/// Beam triple of maximum energy; ties go to the lowest linear index.
pub fn detect_strongest<T: Real>(tensor: &BeamspaceTensor<T>) -> BeamIndex {
    let mut best = 0;
    for (i, e) in tensor.energy.iter().enumerate() {
        if *e > tensor.energy[best] {
            best = i;
        }
    }
    tensor.dims.beam_from_linear(best)
}

fn is_strict_local_max<T: Real>(tensor: &BeamspaceTensor<T>, b: BeamIndex) -> bool {
    let d = tensor.dims;
    let e = tensor.energy_at(b);
    let range = |c: usize, n: usize| c.saturating_sub(1)..(c + 2).min(n);
    for u in range(b.ue, d.n_ue) {
        for el in range(b.el, d.n_el) {
            for az in range(b.az, d.n_az) {
                let n = BeamIndex::new(u, el, az);
                if n != b && tensor.energy_at(n) >= e {
                    return false;
                }
            }
        }
    }
    true
}

/// Greedy multi-path extraction: the global maximum, then strict local
/// maxima of the energy map in decreasing order, skipping any within one
/// index (per axis) of an already selected triple.
pub fn detect_paths<T: Real>(
    tensor: &BeamspaceTensor<T>,
    max_paths: usize,
    min_rel_power_db: T,
) -> Vec<BeamIndex> {
    if tensor.energy.is_empty() || max_paths == 0 {
        return Vec::new();
    }
    let first = detect_strongest(tensor);
    let peak = tensor.energy_at(first);
    let floor = peak * lit::<T>(10.0).powf(min_rel_power_db / lit(10.0));
    let mut candidates: Vec<(T, usize)> = (0..tensor.energy.len())
        .filter(|&i| {
            let b = tensor.dims.beam_from_linear(i);
            b != first && is_strict_local_max(tensor, b)
        })
        .map(|i| (tensor.energy[i], i))
        .collect();
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let mut out = vec![first];
    for (e, i) in candidates {
        if out.len() >= max_paths || e < floor {
            break;
        }
        let b = tensor.dims.beam_from_linear(i);
        if out.iter().all(|s| s.chebyshev(&b) > 1) {
            out.push(b);
        }
    }
    out
}

/// `Σ wᵢθᵢ / Σ wᵢ`; `None` when the weights sum to zero.
pub fn weighted_centroid<T: Real>(angles: &[T], weights: &[T]) -> Option<T> {
    let total = weights.iter().fold(T::zero(), |a, w| a + *w);
    if !(total > T::zero()) {
        return None;
    }
    let acc = angles
        .iter()
        .zip(weights)
        .fold(T::zero(), |a, (t, w)| a + *t * *w);
    Some(acc / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedAngles<T> {
    pub aod_az: T,
    pub aod_el: T,
    pub aoa_az: T,
}

fn refine_axis<T: Real, F>(centre: usize, len: usize, angle: F, energy: impl Fn(usize) -> T) -> T
where
    F: Fn(usize) -> T,
{
    let lo = centre.saturating_sub(1);
    let hi = (centre + 1).min(len - 1);
    let angles: Vec<T> = (lo..=hi).map(&angle).collect();
    let weights: Vec<T> = (lo..=hi).map(energy).collect();
    weighted_centroid(&angles, &weights).unwrap_or_else(|| angle(centre))
}

/// Energy-weighted centroid of the codebook angles of the selected beam and
/// its immediate neighbours on each axis, truncated at the codebook edges.
pub fn refine_angles<T: Real>(
    tensor: &BeamspaceTensor<T>,
    beam: BeamIndex,
    bs_codebook: &BeamCodebook<T>,
    ue_codebook: &BeamCodebook<T>,
) -> RefinedAngles<T> {
    let d = tensor.dims;
    let e = |ue, el, az| tensor.energy_at(BeamIndex::new(ue, el, az));
    let ue_az = |g: usize| ue_codebook.azimuths[g % ue_codebook.n_az()];
    RefinedAngles {
        aod_az: refine_axis(
            beam.az,
            d.n_az,
            |a| bs_codebook.azimuths[a],
            |a| e(beam.ue, beam.el, a),
        ),
        aod_el: refine_axis(
            beam.el,
            d.n_el,
            |l| bs_codebook.elevations[l],
            |l| e(beam.ue, l, beam.az),
        ),
        aoa_az: refine_axis(beam.ue, d.n_ue, ue_az, |u| e(u, beam.el, beam.az)),
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Unambiguous delay window `1/(g·Δf)`, `g` the gcd of subcarrier index gaps.
pub fn delay_window<T: Real>(subcarriers: &[u32], spacing_hz: T) -> Result<T> {
    if subcarriers.len() < 2 {
        return Err(Error::UnderdeterminedDelay);
    }
    let k0 = subcarriers[0];
    let g = subcarriers[1..]
        .iter()
        .fold(0, |g, &k| gcd(g, k.abs_diff(k0)));
    if g == 0 {
        return Err(Error::UnderdeterminedDelay);
    }
    Ok(T::one() / (lit::<T>(g as f64) * spacing_hz))
}

/// Delay maximizing `|Σ ĥ_κ e^{j2πκΔfτ}|²` on a `grid_points` grid over the
/// unambiguous window, refined by a parabola through the peak and its two
/// circular neighbours. Result lies in `[0, window)`.
pub fn estimate_delay<T: Real>(
    response: &[Complex<T>],
    subcarriers: &[u32],
    spacing_hz: T,
    grid_points: usize,
) -> Result<T> {
    let window = delay_window(subcarriers, spacing_hz)?;
    if response.len() != subcarriers.len() || grid_points < 3 {
        return Err(Error::Config("delay search needs matching response and ≥3 grid points".into()));
    }
    let k0 = subcarriers[0];
    let g = subcarriers[1..]
        .iter()
        .fold(0, |g, &k| gcd(g, k.abs_diff(k0)));
    let m = grid_points;
    // κΔfτ_j = κ₀Δfτ_j + (κ−κ₀)/g · j/m cycles; the κ₀ term is a common phase
    let table: Vec<Complex<T>> = (0..m)
        .map(|r| {
            let ph = T::two_pi() * lit::<T>(r as f64 / m as f64);
            Complex::new(ph.cos(), ph.sin())
        })
        .collect();
    let steps: Vec<usize> = subcarriers
        .iter()
        .map(|&k| ((k - k0) / g) as usize % m)
        .collect();
    let metric = |j: usize| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (h, s) in response.iter().zip(&steps) {
            acc += *h * table[(s * j) % m];
        }
        acc.norm_sqr()
    };
    let values: Vec<T> = (0..m).map(metric).collect();
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = j;
        }
    }
    let fm = values[(best + m - 1) % m];
    let f0 = values[best];
    let fp = values[(best + 1) % m];
    let denom = fm - lit::<T>(2.0) * f0 + fp;
    let offset = if denom < T::zero() {
        (lit::<T>(0.5) * (fm - fp) / denom).clamp(lit(-0.5), lit(0.5))
    } else {
        T::zero()
    };
    let mut tau = (lit::<T>(best as f64) + offset) * window / lit(m as f64);
    if tau < T::zero() {
        tau += window;
    }
    if tau >= window {
        tau -= window;
    }
    Ok(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ChannelEstimatorConfig<T> {
    pub max_paths: usize,
    pub min_rel_power_db: T,
    pub delay_grid_points: usize,
    /// Standard deviations written into the reported covariance.
    pub toa_std_s: T,
    pub aoa_az_std: T,
    pub aod_az_std: T,
    pub aod_el_std: T,
}

impl<T: Real> Default for ChannelEstimatorConfig<T> {
    fn default() -> Self {
        Self {
            max_paths: 4,
            min_rel_power_db: lit(-15.0),
            delay_grid_points: 2048,
            toa_std_s: lit(0.5e-9),
            aoa_az_std: deg(2.0),
            aod_az_std: deg(1.0),
            aod_el_std: deg(3.0),
        }
    }
}

impl<T: Real> ChannelEstimatorConfig<T> {
    pub fn covariance(&self) -> Matrix5<T> {
        let sq = |v: T| v * v;
        Matrix5::from_diagonal(&Vector5::new(
            sq(self.toa_std_s),
            sq(self.aoa_az_std),
            lit(UNINFORMATIVE_ELEVATION_VARIANCE),
            sq(self.aod_az_std),
            sq(self.aod_el_std),
        ))
    }
}

/// Full estimator: tensor → one [`PathMeasurement`] per detected beam triple,
/// strongest first. The AOA elevation is reported as 0 (uninformative).
pub fn estimate_frame<T: Real>(
    tensor: &BeamspaceTensor<T>,
    bs_codebook: &BeamCodebook<T>,
    ue_codebook: &BeamCodebook<T>,
    config: &ChannelEstimatorConfig<T>,
    index: usize,
    timestamp: T,
) -> Result<MeasurementFrame<T>> {
    if tensor.dims.n_az != bs_codebook.n_az()
        || tensor.dims.n_el != bs_codebook.n_el()
        || tensor.dims.n_ue != ue_codebook.n_beams()
    {
        return Err(Error::Config("tensor dimensions do not match codebooks".into()));
    }
    if tensor.dims.n_beams() == 0 {
        return Err(Error::NoPaths);
    }
    let cov = config.covariance();
    let mut paths = Vec::new();
    for beam in detect_paths(tensor, config.max_paths, config.min_rel_power_db) {
        let angles = refine_angles(tensor, beam, bs_codebook, ue_codebook);
        let toa = estimate_delay(
            tensor.response(beam),
            &tensor.subcarriers,
            tensor.subcarrier_spacing_hz,
            config.delay_grid_points,
        )?;
        let z = MeasurementVector {
            toa,
            aoa_az: angles.aoa_az,
            aoa_el: T::zero(),
            aod_az: angles.aod_az,
            aod_el: angles.aod_el,
        };
        paths.push(PathMeasurement::new(z, tensor.energy_at(beam), cov));
    }
    Ok(MeasurementFrame::new(index, timestamp, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn raw_from(dims: BeamspaceDims, h: impl Fn(usize) -> Complex<f64>) -> RawBeamspace<f64> {
        let pilots: Vec<_> = (0..dims.len())
            .map(|i| Complex::new(if i % 2 == 0 { 0.7 } else { -0.7 }, 0.7))
            .collect();
        let received = pilots.iter().enumerate().map(|(i, p)| h(i) * p).collect();
        RawBeamspace {
            dims,
            subcarriers: (0..dims.n_subcarriers as u32).map(|m| 4 * m).collect(),
            subcarrier_spacing_hz: 120e3,
            received,
            pilots,
        }
    }

    fn dims() -> BeamspaceDims {
        BeamspaceDims { n_ue: 3, n_el: 2, n_az: 4, n_subcarriers: 5 }
    }

    #[test]
    fn noiseless_estimate_is_exact() {
        let h = |i: usize| Complex::new(i as f64 * 0.1, -(i as f64) * 0.05);
        let t = estimate_beamspace_channel(&raw_from(dims(), h)).unwrap();
        for (i, c) in t.channel.iter().enumerate() {
            assert!((c - h(i)).norm() < 1e-12);
        }
        let b = dims().beam_index(1, 1, 2);
        let want: f64 = (0..5).map(|s| h(b * 5 + s).norm_sqr()).sum();
        assert!((t.energy[b] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_symbols_give_zero_channel() {
        let t = estimate_beamspace_channel(&raw_from(dims(), |_| Complex::new(0.0, 0.0))).unwrap();
        assert!(t.channel.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_pilot_rejected() {
        let mut raw = raw_from(dims(), |_| Complex::new(1.0, 0.0));
        raw.pilots[3] = Complex::new(0.0, 0.0);
        assert!(matches!(estimate_beamspace_channel(&raw), Err(Error::InvalidPilot)));
    }

    #[test]
    fn estimate_variance_matches_noise_over_pilot_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma2 = 0.3;
        let p = Complex::new(1.5, -0.5);
        let h = Complex::new(0.2, 0.1);
        let n = 10_000;
        let d = BeamspaceDims { n_ue: 1, n_el: 1, n_az: 1, n_subcarriers: n };
        let s = (sigma2 / 2.0f64).sqrt();
        let received = (0..n)
            .map(|_| {
                h * p + Complex::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let raw = RawBeamspace {
            dims: d,
            subcarriers: (0..n as u32).collect(),
            subcarrier_spacing_hz: 1.0,
            received,
            pilots: vec![p; n],
        };
        let t = estimate_beamspace_channel(&raw).unwrap();
        let var = t.channel.iter().map(|c| (c - h).norm_sqr()).sum::<f64>() / n as f64;
        let expected = sigma2 / p.norm_sqr();
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} expected {expected}");
    }

    #[test]
    fn energy_invariant_to_common_pilot_phase() {
        let h = |i: usize| Complex::new((i as f64).sin(), (i as f64 * 0.3).cos());
        let raw = raw_from(dims(), h);
        let mut rotated = raw.clone();
        let rot = Complex::from_polar(1.0, 0.77);
        for p in &mut rotated.pilots {
            *p *= rot;
        }
        for (y, p_old) in rotated.received.iter_mut().zip(&raw.pilots) {
            *y = *y / p_old * (p_old * rot);
        }
        let a = estimate_beamspace_channel(&raw).unwrap();
        let b = estimate_beamspace_channel(&rotated).unwrap();
        for (x, y) in a.energy.iter().zip(&b.energy) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn tensor_with_energy(d: BeamspaceDims, energy: Vec<f64>) -> BeamspaceTensor<f64> {
        BeamspaceTensor {
            dims: d,
            subcarriers: vec![0; d.n_subcarriers],
            subcarrier_spacing_hz: 1.0,
            channel: vec![Complex::new(0.0, 0.0); d.len()],
            energy,
        }
    }

    #[test]
    fn uniform_tensor_ties_to_first_beam() {
        let d = dims();
        let t = tensor_with_energy(d, vec![1.0; d.n_beams()]);
        assert_eq!(detect_strongest(&t), BeamIndex::new(0, 0, 0));
        assert_eq!(detect_paths(&t, 5, -15.0), vec![BeamIndex::new(0, 0, 0)]);
    }

    #[test]
    fn two_separated_peaks_strongest_first() {
        let d = BeamspaceDims { n_ue: 6, n_el: 3, n_az: 10, n_subcarriers: 1 };
        let mut e = vec![0.001; d.n_beams()];
        e[d.beam_index(4, 1, 7)] = 4.0;
        e[d.beam_index(4, 1, 6)] = 2.0;
        e[d.beam_index(1, 0, 2)] = 1.0;
        let t = tensor_with_energy(d, e);
        assert_eq!(
            detect_paths(&t, 4, -15.0),
            vec![BeamIndex::new(4, 1, 7), BeamIndex::new(1, 0, 2)]
        );
        assert_eq!(detect_paths(&t, 1, -15.0).len(), 1);
        // second peak is −6 dB
        assert_eq!(detect_paths(&t, 4, -5.0).len(), 1);
    }

    #[test]
    fn centroid_examples() {
        let a = [-4f64.to_radians(), 0.0, 4f64.to_radians()];
        assert!(weighted_centroid(&a, &[1.0, 2.0, 1.0]).unwrap().abs() < 1e-15);
        let c = weighted_centroid(&a, &[0.0, 1.0, 1.0]).unwrap();
        assert!((c - 2f64.to_radians()).abs() < 1e-15);
        assert_eq!(weighted_centroid(&a, &[0.0, 5.0, 0.0]), Some(0.0));
        assert_eq!(weighted_centroid(&a, &[0.0; 3]), None);
    }

    fn tone(tau: f64, subcarriers: &[u32], df: f64) -> Vec<Complex<f64>> {
        subcarriers
            .iter()
            .map(|&k| Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 * df * tau))
            .collect()
    }

    #[test]
    fn delay_examples() {
        let sc: Vec<u32> = (0..792).map(|m| 4 * m).collect();
        let df = 120e3;
        let w = delay_window::<f64>(&sc, df).unwrap();
        assert!((w - 2.0833333e-6).abs() < 1e-12);
        let t0 = estimate_delay(&tone(0.0, &sc, df), &sc, df, 2048).unwrap();
        assert!(t0.min(w - t0) < 1e-13);
        let t = estimate_delay(&tone(100e-9, &sc, df), &sc, df, 2048).unwrap();
        assert!((t - 100e-9).abs() < 0.1e-9);
        // one window later aliases to the same delay
        let t = estimate_delay(&tone(100e-9 + w, &sc, df), &sc, df, 2048).unwrap();
        assert!((t - 100e-9).abs() < 0.1e-9);
        let t = estimate_delay(&tone(w - 0.02e-9, &sc, df), &sc, df, 2048).unwrap();
        assert!(t >= 0.0 && t < w);
        assert!(t.min(w - t) < 0.1e-9);
    }

    #[test]
    fn delay_matches_fine_grid_oracle() {
        let sc: Vec<u32> = (0..792).map(|m| 4 * m).collect();
        let df = 120e3;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let tau = rng.random_range(0.0..1.5e-6);
            let h = tone(tau, &sc, df);
            let est = estimate_delay(&h, &sc, df, 2048).unwrap();
            // exhaustive search, 1 ps steps near the truth
            let metric = |t: f64| {
                h.iter()
                    .zip(&sc)
                    .map(|(h, &k)| h * Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 * df * t))
                    .sum::<Complex<f64>>()
                    .norm_sqr()
            };
            let oracle = (-2000..=2000)
                .map(|i| tau + i as f64 * 1e-12)
                .max_by(|a, b| metric(*a).total_cmp(&metric(*b)))
                .unwrap();
            assert!((est - oracle).abs() < 0.1e-9, "est {est} oracle {oracle}");
        }
    }

    #[test]
    fn delay_needs_two_subcarriers() {
        let r = estimate_delay(&[Complex::new(1.0, 0.0)], &[0], 120e3, 2048);
        assert!(matches!(r, Err(Error::UnderdeterminedDelay)));
    }
}
