//! Closed-form correlation functions and the curves derived from them.
//!
//! All `tau` arguments are in seconds and all frequencies in rad/s unless a
//! name says `_hz`. See [`crate::model`] for the linewidth convention.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{DiffusionProcess, DiffusionSpec, EmitterSpec, InterferenceScenario, IrfSpec};
use crate::scalar::Real;

/// Default half span of τ grids, seconds.
pub const DEFAULT_TAU_HALF_SPAN: f64 = 60e-9;
/// Default τ grid spacing, seconds.
pub const DEFAULT_TAU_STEP: f64 = 50e-12;

/// Field correlation `e^{-iωτ} e^{-γ|τ|/2}`.
pub fn g1<T: Real>(emitter: &EmitterSpec<T>, tau: T) -> Complex<T> {
    let magnitude = (-emitter.linewidth() * tau.abs() / T::lit(2.0)).exp();
    Complex::from_polar(magnitude, -emitter.center_frequency() * tau)
}

/// Background-free intensity correlation `1 - |g1|² = 1 - e^{-γ|τ|}`.
pub fn g2<T: Real>(emitter: &EmitterSpec<T>, tau: T) -> T {
    -(-emitter.linewidth() * tau.abs()).exp_m1()
}

/// Intensity autocorrelation diluted by uncorrelated background:
/// `1 + (S/I)² (g2 - 1)`.
pub fn measured_autocorrelation<T: Real>(emitter: &EmitterSpec<T>, tau: T) -> T {
    diluted(emitter.signal_fraction(), emitter.linewidth(), tau)
}

fn diluted<T: Real>(signal_fraction: T, linewidth: T, tau: T) -> T {
    T::one() - signal_fraction * signal_fraction * (-linewidth * tau.abs()).exp()
}

/// Characteristic function of a zero-mean Gaussian detuning distribution
/// with standard deviation `sigma` (rad/s), evaluated at `tau`.
pub fn gaussian_characteristic<T: Real>(sigma: T, tau: T) -> T {
    let x = sigma * tau;
    (-x * x / T::lit(2.0)).exp()
}

/// The beam-splitter output cross correlation, parameterized directly by the
/// quantities it depends on.
///
/// `rms_detuning` is the standard deviation of a quasi-static Gaussian
/// detuning distribution applied to emitter 1; zero gives the unaveraged
/// expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCorrelationModel<T> {
    pub weight_1: T,
    pub weight_2: T,
    pub signal_fraction_1: T,
    pub signal_fraction_2: T,
    pub linewidth_1: T,
    pub linewidth_2: T,
    pub eta: T,
    pub detuning: T,
    pub rms_detuning: T,
}

impl<T: Real> CrossCorrelationModel<T> {
    pub fn from_scenario(scenario: &InterferenceScenario<T>) -> Self {
        let (c1, c2) = scenario.weights();
        Self {
            weight_1: c1,
            weight_2: c2,
            signal_fraction_1: scenario.emitter_1().signal_fraction(),
            signal_fraction_2: scenario.emitter_2().signal_fraction(),
            linewidth_1: scenario.emitter_1().linewidth(),
            linewidth_2: scenario.emitter_2().linewidth(),
            eta: scenario.eta(),
            detuning: scenario.detuning(),
            rms_detuning: T::zero(),
        }
    }

    pub fn with_diffusion(scenario: &InterferenceScenario<T>, diffusion: &DiffusionSpec<T>) -> Self {
        Self {
            rms_detuning: diffusion.rms_detuning(),
            ..Self::from_scenario(scenario)
        }
    }

    /// `c₁² 𝒢₁₁(τ) + c₂² 𝒢₂₂(τ)`
    pub fn autocorrelation_part(&self, tau: T) -> T {
        self.weight_1 * self.weight_1 * diluted(self.signal_fraction_1, self.linewidth_1, tau)
            + self.weight_2 * self.weight_2 * diluted(self.signal_fraction_2, self.linewidth_2, tau)
    }

    /// The oscillating interference contribution
    /// `η (S₁S₂/I₁I₂) |g1₁₁||g1₂₂| ⟨cos Δωτ⟩`, without the `-2c₁c₂` prefactor.
    pub fn interference(&self, tau: T) -> T {
        let envelope = (-(self.linewidth_1 + self.linewidth_2) * tau.abs() / T::lit(2.0)).exp();
        let phase = (self.detuning * tau).cos() * gaussian_characteristic(self.rms_detuning, tau);
        self.eta * self.signal_fraction_1 * self.signal_fraction_2 * envelope * phase
    }

    pub fn evaluate(&self, tau: T) -> T {
        let mixed = T::lit(2.0) * self.weight_1 * self.weight_2;
        self.autocorrelation_part(tau) + mixed * (T::one() - self.interference(tau))
    }
}

/// Cross correlation of the two beam-splitter outputs at ideal time
/// resolution.
pub fn cross_correlation_g34<T: Real>(scenario: &InterferenceScenario<T>, tau: T) -> T {
    CrossCorrelationModel::from_scenario(scenario).evaluate(tau)
}

/// Cross correlation with emitter 1's detuning averaged over a quasi-static
/// Gaussian distribution of standard deviation `diffusion.rms_detuning()`.
///
/// A diffusion spec that only carries a target width must be resolved with
/// [`resolve_diffusion`] first; its stored amplitude is used as is.
pub fn averaged_g34<T: Real>(
    scenario: &InterferenceScenario<T>,
    diffusion: &DiffusionSpec<T>,
    tau: T,
) -> T {
    CrossCorrelationModel::with_diffusion(scenario, diffusion).evaluate(tau)
}

/// Values on a uniform grid symmetric about zero.
///
/// The abscissa of sample `i` is `(i - n) * step` with `len = 2n + 1`. The
/// abscissa is τ in seconds for correlation curves and frequency offset in Hz
/// for spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve<T> {
    step: T,
    values: Vec<T>,
}

impl<T: Real> SampledCurve<T> {
    pub fn from_values(step: T, values: Vec<T>) -> Result<Self> {
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::domain(format!("grid step must be positive, got {step}")));
        }
        if values.len().is_multiple_of(2) {
            return Err(Error::domain("a symmetric grid has an odd number of points"));
        }
        Ok(Self { step, values })
    }

    /// Sample `f` on `[-half_span, half_span]`; the half span is rounded to
    /// a whole number of steps.
    pub fn tabulate(half_span: T, step: T, f: impl Fn(T) -> T) -> Result<Self> {
        if !(step > T::zero()) || !(half_span >= T::zero()) {
            return Err(Error::domain("grid needs step > 0 and half_span >= 0"));
        }
        let n = (half_span / step).round().to_f64() as usize;
        let values = (0..2 * n + 1)
            .map(|i| f((T::count(i) - T::count(n)) * step))
            .collect();
        Self::from_values(step, values)
    }

    /// The default ±60 ns grid at 50 ps spacing.
    pub fn default_tau_grid(f: impl Fn(T) -> T) -> Self {
        Self::tabulate(T::lit(DEFAULT_TAU_HALF_SPAN), T::lit(DEFAULT_TAU_STEP), f)
            .expect("default grid is valid")
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn center_index(&self) -> usize {
        self.values.len() / 2
    }

    pub fn half_span(&self) -> T {
        T::count(self.center_index()) * self.step
    }

    pub fn abscissa(&self, i: usize) -> T {
        (T::count(i) - T::count(self.center_index())) * self.step
    }

    pub fn abscissae(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len()).map(|i| self.abscissa(i))
    }

    pub fn center_value(&self) -> T {
        self.values[self.center_index()]
    }

    /// Linear interpolation; clamps to the end values outside the grid.
    pub fn value_at(&self, x: T) -> T {
        let pos = x / self.step + T::count(self.center_index());
        if pos <= T::zero() {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= T::count(last) {
            return self.values[last];
        }
        let i = pos.floor().to_f64() as usize;
        let frac = pos - T::count(i);
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            step: self.step,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> T {
        let n = self.values.len();
        if n < 2 {
            return T::zero();
        }
        let inner: T = self.values[1..n - 1].iter().fold(T::zero(), |acc, &v| acc + v);
        (inner + (self.values[0] + self.values[n - 1]) / T::lit(2.0)) * self.step
    }

    pub fn argmax(&self) -> usize {
        self.extremum(|a, b| a > b)
    }

    pub fn argmin(&self) -> usize {
        self.extremum(|a, b| a < b)
    }

    // Ties resolve to the index closest to the center.
    fn extremum(&self, better: impl Fn(T, T) -> bool) -> usize {
        let c = self.center_index();
        let mut best = c;
        for d in 1..=c {
            for i in [c - d, c + d] {
                if better(self.values[i], self.values[best]) {
                    best = i;
                }
            }
        }
        best
    }

    /// Width between the first crossings of `level` found walking outwards
    /// from `start`, with linear interpolation between samples.
    pub fn width_at_level(&self, start: usize, level: T) -> Option<T> {
        let above = self.values[start] > level;
        let crosses = |i: usize| (self.values[i] > level) != above;
        let frac = |inside: usize, outside: usize| {
            let (a, b) = (self.values[inside], self.values[outside]);
            (level - a) / (b - a)
        };

        let mut left = None;
        for i in (0..start).rev() {
            if crosses(i) {
                left = Some(self.abscissa(i + 1) - frac(i + 1, i) * self.step);
                break;
            }
        }
        let mut right = None;
        for i in start + 1..self.len() {
            if crosses(i) {
                right = Some(self.abscissa(i - 1) + frac(i - 1, i) * self.step);
                break;
            }
        }
        Some(right? - left?)
    }

    /// Full width at half maximum of the highest peak.
    pub fn fwhm(&self) -> Option<T> {
        let peak = self.argmax();
        self.width_at_level(peak, self.values[peak] / T::lit(2.0))
    }
}

/// Convolve a τ curve with the detector response.
///
/// The Gaussian kernel is sampled on the curve's grid, truncated at ±6σ and
/// renormalized to unit sum. Samples beyond the grid ends take the end
/// values, so a curve that is flat near its ends keeps its plateau and the
/// integral of its deviation from the plateau.
pub fn convolve_irf<T: Real>(curve: &SampledCurve<T>, irf: &IrfSpec<T>) -> Result<SampledCurve<T>> {
    if irf.is_delta() {
        return Ok(curve.clone());
    }
    let h = curve.step();
    let fwhm = irf.fwhm();
    if h > fwhm / T::lit(4.0) {
        return Err(Error::precision(format!(
            "grid spacing {} s is coarser than a quarter of the IRF FWHM {} s",
            h, fwhm
        )));
    }
    let span = T::lit(2.0) * curve.half_span();
    if span < T::lit(5.0) * fwhm {
        return Err(Error::precision(format!(
            "grid span {span} s is shorter than five IRF widths ({fwhm} s)"
        )));
    }

    let kernel = gaussian_kernel(irf.sigma(), h);
    let half = kernel.len() / 2;
    let values = curve.values();
    let last = values.len() as isize - 1;
    let out = (0..values.len())
        .map(|i| {
            kernel.iter().enumerate().fold(T::zero(), |acc, (k, &w)| {
                let j = (i as isize + k as isize - half as isize).clamp(0, last);
                acc + w * values[j as usize]
            })
        })
        .collect();
    SampledCurve::from_values(h, out)
}

fn gaussian_kernel<T: Real>(sigma: T, h: T) -> Vec<T> {
    let half = (T::lit(6.0) * sigma / h).ceil().to_f64() as usize;
    let mut kernel: Vec<T> = (0..2 * half + 1)
        .map(|k| {
            let x = (T::count(k) - T::count(half)) * h / sigma;
            (-x * x / T::lit(2.0)).exp()
        })
        .collect();
    let total = kernel.iter().fold(T::zero(), |a, &b| a + b);
    kernel.iter_mut().for_each(|w| *w /= total);
    kernel
}

/// Normalized average `⟨exp(-i ∫₀^τ δ(t) dt)⟩` of the diffusion-induced
/// phase for a stationary Gauss-Markov detuning `δ` (exact for that
/// process).
pub fn diffusion_relaxation<T: Real>(diffusion: &DiffusionSpec<T>, tau: T) -> T {
    match diffusion.process() {
        DiffusionProcess::None => T::one(),
        DiffusionProcess::BandLimitedGaussian => {
            let sigma = diffusion.rms_detuning();
            if sigma == T::zero() {
                return T::one();
            }
            let tc = diffusion.correlation_time();
            let x = tau.abs() / tc;
            // x - 1 + e^{-x}, stable for small x
            let shape = x + (-x).exp_m1();
            (-(sigma * tc) * (sigma * tc) * shape).exp()
        }
    }
}

/// Rough FWHM estimate in Hz used to validate spectral grids: the
/// Lorentzian-Gaussian (Voigt) combination in the quasi-static limit.
fn expected_fwhm_hz<T: Real>(emitter: &EmitterSpec<T>, diffusion: &DiffusionSpec<T>) -> T {
    let lorentz = emitter.linewidth_fwhm_hz();
    let gauss = (T::lit(8.0) * T::LN_2()).sqrt() * diffusion.rms_detuning() / T::two_pi();
    T::lit(0.5346) * lorentz + (T::lit(0.2166) * lorentz * lorentz + gauss * gauss).sqrt()
}

/// Emission spectrum relative to the emitter's center frequency, computed
/// as the Fourier transform of the diffusion-averaged field correlation and
/// normalized to unit area on the grid. The abscissa is in Hz.
pub fn lineshape<T: Real>(
    emitter: &EmitterSpec<T>,
    diffusion: &DiffusionSpec<T>,
    half_span_hz: T,
    step_hz: T,
) -> Result<SampledCurve<T>> {
    let expected = expected_fwhm_hz(emitter, diffusion);
    if T::lit(2.0) * half_span_hz < T::lit(5.0) * expected {
        return Err(Error::precision(format!(
            "frequency grid spans {} Hz, less than five expected linewidths ({} Hz)",
            T::lit(2.0) * half_span_hz,
            expected
        )));
    }
    lineshape_on_grid(emitter.linewidth(), diffusion, half_span_hz, step_hz)
}

const MAX_FFT_LEN: usize = 1 << 25;

fn lineshape_on_grid<T: Real>(
    linewidth: T,
    diffusion: &DiffusionSpec<T>,
    half_span_hz: T,
    step_hz: T,
) -> Result<SampledCurve<T>> {
    if !(step_hz > T::zero()) || !(half_span_hz > step_hz) {
        return Err(Error::domain("frequency grid needs 0 < step < half span"));
    }
    let n_half = (half_span_hz / step_hz).round().to_f64() as usize;
    let envelope = |tau: T| (-linewidth * tau / T::lit(2.0)).exp() * diffusion_relaxation(diffusion, tau);

    // Truncate where the field correlation has decayed below e^-30.
    let floor = (-T::lit(30.0)).exp();
    let mut hi = T::lit(60.0) / linewidth;
    let mut lo = T::zero();
    for _ in 0..80 {
        let mid = (lo + hi) / T::lit(2.0);
        if envelope(mid) > floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_max = hi;

    // Sampling at 8x the grid's highest frequency keeps aliased tails small;
    // the record length is a whole number of grid periods so grid points
    // fall on FFT bins.
    let oversample = 8 * n_half.max(1);
    let periods = (t_max * step_hz).ceil().to_f64().max(1.0) as usize;
    let len = oversample
        .checked_mul(periods)
        .filter(|&n| n <= MAX_FFT_LEN)
        .ok_or_else(|| Error::precision("lineshape transform would exceed the FFT size limit"))?;
    let dt = T::one() / (step_hz * T::count(oversample));

    let mut buffer: Vec<Complex<T>> = (0..len)
        .map(|n| Complex::new(envelope(T::count(n) * dt), T::zero()))
        .collect();
    buffer[0] /= T::lit(2.0);
    FftPlanner::<T>::new().plan_fft_forward(len).process(&mut buffer);

    let values: Vec<T> = (0..2 * n_half + 1)
        .map(|i| {
            let k = i as isize - n_half as isize;
            let bin = (k * periods as isize).rem_euclid(len as isize) as usize;
            (T::lit(2.0) * dt * buffer[bin].re).max(T::zero())
        })
        .collect();
    let curve = SampledCurve::from_values(step_hz, values)?;
    let area = curve.integral();
    Ok(curve.map(|v| v / area))
}

/// Resolve a diffusion spec that carries a target width into one with an
/// explicit amplitude. Specs without a target are returned unchanged.
pub fn resolve_diffusion<T: Real>(
    diffusion: &DiffusionSpec<T>,
    emitter: &EmitterSpec<T>,
) -> Result<DiffusionSpec<T>> {
    match diffusion.target_fwhm() {
        Some(_) => diffusion.with_rms_detuning(solve_rms_for_fwhm(diffusion, emitter)?),
        None => Ok(*diffusion),
    }
}

/// Find the diffusion amplitude (rad/s) for which the emitter's broadened
/// line reaches `diffusion.target_fwhm()`, by bisection on the lineshape
/// width. The result matches the target to well within 1%.
pub fn solve_rms_for_fwhm<T: Real>(diffusion: &DiffusionSpec<T>, emitter: &EmitterSpec<T>) -> Result<T> {
    let target = diffusion
        .target_fwhm()
        .ok_or_else(|| Error::domain("diffusion spec has no target FWHM"))?;
    if diffusion.process() == DiffusionProcess::None {
        return Err(Error::domain("cannot broaden a line without a diffusion process"));
    }
    let target_hz = target / T::two_pi();
    let homogeneous_hz = emitter.linewidth_fwhm_hz();
    if target_hz < homogeneous_hz * (T::one() - T::lit(1e-9)) {
        return Err(Error::domain(format!(
            "target FWHM {target_hz} Hz is below the homogeneous width {homogeneous_hz} Hz"
        )));
    }

    let step = target_hz / T::lit(100.0);
    let span = T::lit(6.0) * target_hz;
    let width_at = |rms: T| -> Result<Option<T>> {
        let trial = diffusion.with_rms_detuning(rms)?;
        Ok(lineshape_on_grid(emitter.linewidth(), &trial, span, step)?.fwhm())
    };
    let too_narrow = |rms: T| -> Result<bool> { Ok(matches!(width_at(rms)?, Some(w) if w < target_hz)) };

    if !too_narrow(T::zero())? {
        return Ok(T::zero());
    }
    let mut lo = T::zero();
    let mut hi = target;
    let mut expansions = 0;
    while too_narrow(hi)? {
        lo = hi;
        hi *= T::lit(2.0);
        expansions += 1;
        if expansions > 60 {
            return Err(Error::precision("could not bracket the diffusion amplitude"));
        }
    }
    for _ in 0..100 {
        let mid = (lo + hi) / T::lit(2.0);
        if too_narrow(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::lit(1e-7) * hi {
            break;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// Expected coincidence rate between two outputs for an emission rate and
/// per-photon collection and detection efficiencies: `rate · (η_c η_d)²`.
pub fn coincidence_throughput<T: Real>(emission_rate: T, collection_eff: T, detection_eff: T) -> Result<T> {
    let unit = T::zero()..=T::one();
    if !unit.contains(&collection_eff) || !unit.contains(&detection_eff) {
        return Err(Error::domain(format!(
            "efficiencies must lie in [0, 1], got {collection_eff} and {detection_eff}"
        )));
    }
    if !(emission_rate >= T::zero()) || !emission_rate.is_finite() {
        return Err(Error::domain(format!("emission rate must be >= 0, got {emission_rate}")));
    }
    let per_photon = collection_eff * detection_eff;
    Ok(emission_rate * per_photon * per_photon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use std::f64::consts::{LN_2, PI, TAU};

    const LIFETIME: f64 = 9.5e-9;

    fn ideal(detuning_hz: f64) -> EmitterSpec<f64> {
        EmitterSpec::fourier_limited(LIFETIME, 1e6, 0.0)
            .unwrap()
            .with_center_frequency(TAU * detuning_hz)
            .unwrap()
    }

    fn with_fraction(fraction: f64, detuning_hz: f64) -> EmitterSpec<f64> {
        ideal(detuning_hz).with_rates(fraction * 1e6, (1.0 - fraction) * 1e6).unwrap()
    }

    fn scenario(e1: EmitterSpec<f64>, e2: EmitterSpec<f64>, eta: f64) -> InterferenceScenario<f64> {
        InterferenceScenario::new(e1, e2, eta, IrfSpec::delta()).unwrap()
    }

    #[test]
    fn g1_examples() {
        let e = ideal(0.0);
        assert_eq!(g1(&e, 0.0), Complex::new(1.0, 0.0));
        let v = g1(&e, 2.0 / e.linewidth());
        assert_relative_eq!(v.re, (-1.0f64).exp(), max_relative = 1e-14);
        assert_abs_diff_eq!(v.im, 0.0);
        let d = ideal(123e6);
        let tau = 3.7e-9;
        let (a, b) = (g1(&d, -tau), g1(&d, tau).conj());
        assert_relative_eq!(a.re, b.re, max_relative = 1e-14);
        assert_relative_eq!(a.im, b.im, max_relative = 1e-14);
    }

    #[test]
    fn g2_examples() {
        let e = ideal(0.0);
        assert_eq!(g2(&e, 0.0), 0.0);
        assert_relative_eq!(g2(&e, 1.0), 1.0);
        assert_relative_eq!(g2(&e, LN_2 / e.linewidth()), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn measured_autocorrelation_examples() {
        let e = with_fraction(0.9, 0.0);
        assert_relative_eq!(measured_autocorrelation(&e, 0.0), 0.19, max_relative = 1e-14);
        assert_eq!(measured_autocorrelation(&ideal(0.0), 0.0), 0.0);
        assert_relative_eq!(measured_autocorrelation(&e, 1e-3), 1.0);
    }

    #[test]
    fn cross_correlation_examples() {
        let s = scenario(ideal(0.0), ideal(0.0), 1.0);
        assert_eq!(cross_correlation_g34(&s, 0.0), 0.0);
        let d = scenario(ideal(0.0), ideal(3e9), 0.0);
        assert_relative_eq!(cross_correlation_g34(&d, 0.0), 0.5);
        let h = scenario(ideal(0.0), ideal(0.0), 0.5);
        assert_relative_eq!(cross_correlation_g34(&h, 0.0), 0.25);
    }

    #[test]
    fn beat_period_of_200_mhz() {
        let s = scenario(ideal(200e6), ideal(0.0), 1.0);
        let m = CrossCorrelationModel::from_scenario(&s);
        // cosine factor returns to +1 after one period
        let period = 1.0 / 200e6;
        assert_relative_eq!(period, 5.0e-9);
        let ratio = m.interference(period) / m.interference(0.0);
        assert_relative_eq!(ratio, (-(2.0 / LIFETIME) * period / 2.0).exp(), max_relative = 1e-9);
    }

    #[test]
    fn averaged_reduces_to_plain_without_width() {
        let s = scenario(with_fraction(0.9, 150e6), with_fraction(0.8, 0.0), 0.7);
        let none = DiffusionSpec::none();
        let zero = DiffusionSpec::band_limited(1e6, 0.0).unwrap();
        for i in -100..=100 {
            let tau = i as f64 * 0.3e-9;
            assert_eq!(averaged_g34(&s, &none, tau), cross_correlation_g34(&s, tau));
            assert_eq!(averaged_g34(&s, &zero, tau), cross_correlation_g34(&s, tau));
        }
        let wide = DiffusionSpec::gaussian_distribution_fwhm_hz(1e6, 2e9).unwrap();
        assert_eq!(averaged_g34(&s, &wide, 0.0), cross_correlation_g34(&s, 0.0));
    }

    #[test]
    fn convolution_identities() {
        let s = scenario(ideal(300e6), ideal(0.0), 0.5);
        let curve = SampledCurve::default_tau_grid(|t| cross_correlation_g34(&s, t));
        assert_eq!(convolve_irf(&curve, &IrfSpec::delta()).unwrap(), curve);

        let flat = SampledCurve::default_tau_grid(|_| 0.83);
        let out = convolve_irf(&flat, &IrfSpec::default_tac()).unwrap();
        for v in out.values() {
            assert_relative_eq!(*v, 0.83, max_relative = 1e-14);
        }
    }

    #[test]
    fn convolution_grid_checks() {
        let coarse = SampledCurve::tabulate(60e-9, 300e-12, |_| 1.0).unwrap();
        assert!(matches!(
            convolve_irf(&coarse, &IrfSpec::default_tac()),
            Err(Error::Precision(_))
        ));
        let short = SampledCurve::tabulate(1e-9, 50e-12, |_| 1.0).unwrap();
        assert!(matches!(
            convolve_irf(&short, &IrfSpec::default_tac()),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn convolution_preserves_deviation_integral_and_is_linear() {
        let bump = SampledCurve::default_tau_grid(|t: f64| 1.0 - 0.6 * (-(t / 2e-9).powi(2)).exp());
        let other = SampledCurve::default_tau_grid(|t: f64| (t * 1.3e9).cos() * (-(t / 5e-9).powi(2)).exp());
        let irf = IrfSpec::default_tac();
        let a = convolve_irf(&bump, &irf).unwrap();
        let dev_in = bump.map(|v| v - 1.0).integral();
        let dev_out = a.map(|v| v - 1.0).integral();
        assert_relative_eq!(dev_in, dev_out, max_relative = 1e-12);

        let combo = SampledCurve::from_values(
            bump.step(),
            bump.values().iter().zip(other.values()).map(|(x, y)| 2.0 * x - 3.0 * y).collect(),
        )
        .unwrap();
        let b = convolve_irf(&other, &irf).unwrap();
        let c = convolve_irf(&combo, &irf).unwrap();
        for i in 0..c.len() {
            assert_abs_diff_eq!(c.values()[i], 2.0 * a.values()[i] - 3.0 * b.values()[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn far_detuned_beat_is_washed_out() {
        let s = scenario(ideal(5e9), ideal(0.0), 1.0);
        let m = CrossCorrelationModel::from_scenario(&s);
        let beat = SampledCurve::default_tau_grid(|t| m.interference(t));
        let smoothed = convolve_irf(&beat, &IrfSpec::default_tac()).unwrap();
        let peak_in = beat.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let peak_out = smoothed.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak_out < 0.01 * peak_in, "{peak_out} vs {peak_in}");
    }

    #[test]
    fn lorentzian_lineshape_recovered() {
        let e = ideal(0.0);
        let curve = lineshape(&e, &DiffusionSpec::none(), 400e6, 0.25e6).unwrap();
        let fwhm = curve.fwhm().unwrap();
        assert_relative_eq!(fwhm, 1.0 / (TAU * LIFETIME), max_relative = 0.01);
        assert_relative_eq!(curve.integral(), 1.0, max_relative = 1e-6);

        // compare to the closed-form Lorentzian, renormalized on the grid
        let half = e.linewidth_fwhm_hz() / 2.0;
        let exact = SampledCurve::tabulate(400e6, 0.25e6, |f| half / PI / (f * f + half * half)).unwrap();
        let area = exact.integral();
        for (a, b) in curve.values().iter().zip(exact.values()) {
            assert_abs_diff_eq!(*a, b / area, epsilon = 2e-3 * exact.center_value() / area);
        }
    }

    #[test]
    fn lineshape_rejects_narrow_grid() {
        let e = ideal(0.0);
        assert!(matches!(
            lineshape(&e, &DiffusionSpec::none(), 30e6, 0.1e6),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn slow_wide_diffusion_approaches_detuning_distribution() {
        let e = ideal(0.0);
        let sigma = TAU * 500e6;
        let d = DiffusionSpec::band_limited(1e6, sigma).unwrap();
        let curve = lineshape(&e, &d, 5e9, 5e6).unwrap();
        let gauss_fwhm = (8.0 * LN_2).sqrt() * sigma / TAU;
        let voigt = 0.5346 * e.linewidth_fwhm_hz()
            + (0.2166 * e.linewidth_fwhm_hz().powi(2) + gauss_fwhm.powi(2)).sqrt();
        let fwhm = curve.fwhm().unwrap();
        assert_relative_eq!(fwhm, voigt, max_relative = 0.02);
        assert!(fwhm > gauss_fwhm);
    }

    #[test]
    fn solve_rms_examples() {
        let e = ideal(0.0);
        let exact = DiffusionSpec::with_target_fwhm_hz(1e6, e.linewidth_fwhm_hz()).unwrap();
        assert_eq!(solve_rms_for_fwhm(&exact, &e).unwrap(), 0.0);

        for target in [300e6, 2e9] {
            let spec = DiffusionSpec::with_target_fwhm_hz(1e6, target).unwrap();
            let rms = solve_rms_for_fwhm(&spec, &e).unwrap();
            let solved = spec.with_rms_detuning(rms).unwrap();
            let curve = lineshape(&e, &solved, 5.0 * target, target / 400.0).unwrap();
            assert_relative_eq!(curve.fwhm().unwrap(), target, max_relative = 0.01);
        }

        let below = DiffusionSpec::with_target_fwhm_hz(1e6, 5e6).unwrap();
        assert!(matches!(solve_rms_for_fwhm(&below, &e), Err(Error::Domain(_))));
    }

    #[test]
    fn throughput_examples() {
        assert_relative_eq!(coincidence_throughput(1e7, 0.5, 0.1).unwrap(), 25_000.0, max_relative = 1e-12);
        assert_eq!(coincidence_throughput(3e6, 0.0, 0.4).unwrap(), 0.0);
        assert_eq!(coincidence_throughput(1e7, 1.0, 1.0).unwrap(), 1e7);
        assert!(coincidence_throughput(1e7, 1.2, 0.1).is_err());
        assert!(coincidence_throughput(1e7, 0.5, -0.1).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let e = EmitterSpec::<f32>::fourier_limited(9.5e-9, 9e5, 1e5).unwrap();
        assert!((measured_autocorrelation(&e, 0.0) - 0.19).abs() < 1e-6);
        let s = InterferenceScenario::new(e, e, 1.0, IrfSpec::<f32>::default_tac()).unwrap();
        let curve = SampledCurve::<f32>::default_tau_grid(|t| cross_correlation_g34(&s, t));
        let out = convolve_irf(&curve, s.detector_irf()).unwrap();
        assert!(out.center_value() > curve.center_value());
    }

    fn arb_emitter() -> impl Strategy<Value = EmitterSpec<f64>> {
        (1e-9f64..50e-9, 1.0f64..20.0, -3e9f64..3e9, 0.0f64..1e6, 0.0f64..1e6).prop_filter_map(
            "needs S + B > 0",
            |(lifetime, excess, detuning, s, b)| {
                EmitterSpec::new(TAU * detuning, excess / lifetime, lifetime, s, b, 0.5).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn g2_is_one_minus_g1_squared(e in arb_emitter(), tau in -100e-9f64..100e-9) {
            let lhs = g2(&e, tau);
            let rhs = 1.0 - g1(&e, tau).norm_sqr();
            prop_assert!((lhs - rhs).abs() < 1e-14);
            prop_assert!(g1(&e, tau).norm() <= 1.0 + 1e-15);
        }

        #[test]
        fn g2_monotone_in_delay(e in arb_emitter(), a in 0.0f64..50e-9, b in 0.0f64..50e-9) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(g2(&e, lo) <= g2(&e, hi));
        }

        #[test]
        fn g34_even_and_swap_symmetric(
            e1 in arb_emitter(), e2 in arb_emitter(), eta in 0.0f64..=1.0, tau in -80e-9f64..80e-9
        ) {
            let s = scenario(e1, e2, eta);
            let v = cross_correlation_g34(&s, tau);
            prop_assert!((v - cross_correlation_g34(&s, -tau)).abs() < 1e-14);
            prop_assert!((v - cross_correlation_g34(&s.swapped(), tau)).abs() < 1e-14);
        }

        #[test]
        fn g34_zero_delay_identity_and_plateau(e1 in arb_emitter(), e2 in arb_emitter(), eta in 0.0f64..=1.0) {
            let s = scenario(e1, e2, eta);
            let (c1, c2) = s.weights();
            let (r1, r2) = (e1.signal_fraction(), e2.signal_fraction());
            let expected = c1 * c1 * (1.0 - r1 * r1) + c2 * c2 * (1.0 - r2 * r2)
                + 2.0 * c1 * c2 * (1.0 - eta * r1 * r2);
            prop_assert!((cross_correlation_g34(&s, 0.0) - expected).abs() < 1e-14);
            prop_assert!((cross_correlation_g34(&s, 1e-3) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn g34_zero_delay_monotone(
            e1 in arb_emitter(), e2 in arb_emitter(), eta in 0.0f64..=1.0, d in 0.0f64..=1.0
        ) {
            let s = scenario(e1, e2, eta);
            let base = cross_correlation_g34(&s, 0.0);
            let more_eta = s.with_eta((eta + d).min(1.0)).unwrap();
            prop_assert!(cross_correlation_g34(&more_eta, 0.0) <= base + 1e-15);
            let cleaner = e1.with_rates(e1.signal_rate() + e1.background_rate() * d, e1.background_rate() * (1.0 - d));
            if let Ok(cleaner) = cleaner {
                let s2 = scenario(cleaner, e2, eta);
                // keep the weights fixed: intensity is unchanged by construction
                prop_assert!(cross_correlation_g34(&s2, 0.0) <= base + 1e-12);
            }
        }
    }
}
