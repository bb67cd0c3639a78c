//! Domain types and elementary physical relations.
//!
//! # Frequency conventions
//!
//! Every frequency stored in these types is an *angular* frequency in rad/s,
//! measured as an offset from a common rotating frame. The optical carrier
//! never enters a computation.
//!
//! The homogeneous linewidth `γ` is stored as a decay rate in rad/s such that
//! the field correlation decays as `exp(-γ|τ|/2)` and the intensity
//! correlation as `exp(-γ|τ|)`. The corresponding Lorentzian FWHM in Hz is
//! `γ / 2π`, and the lifetime-limited value is `γ₀ = 1 / lifetime`, i.e.
//! `1 / (2π · lifetime)` Hz. Constructors that take widths in Hz
//! ([`EmitterSpec::from_fwhm_hz`], [`DiffusionSpec::with_target_fwhm_hz`])
//! multiply by `2π`; nothing else in the crate converts.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lifetime-limited (Fourier-limited) FWHM in Hz for an excited-state
/// lifetime in seconds.
pub fn natural_linewidth<T: Real>(lifetime: T) -> Result<T> {
    if !(lifetime > T::zero()) {
        return Err(Error::domain(format!(
            "lifetime must be positive, got {lifetime}"
        )));
    }
    Ok(T::one() / (T::two_pi() * lifetime))
}

/// Linear Stark shift in MHz for an electrode voltage in volts.
pub fn stark_detuning<T: Real>(voltage: T) -> T {
    T::lit(50.0) * (voltage - T::lit(63.0))
}

/// Fraction of detected counts that come from the emitter, `S / (S + B)`.
pub fn signal_fraction<T: Real>(signal_rate: T, background_rate: T) -> Result<T> {
    let total = signal_rate + background_rate;
    if signal_rate < T::zero() || background_rate < T::zero() || !(total > T::zero()) {
        return Err(Error::domain(format!(
            "signal fraction needs S >= 0, B >= 0 and S + B > 0 (S = {signal_rate}, B = {background_rate})"
        )));
    }
    Ok(signal_rate / total)
}

/// A single two-level-like emitter observed through its zero-phonon line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterSpec<T> {
    center_frequency: T,
    linewidth: T,
    lifetime: T,
    signal_rate: T,
    background_rate: T,
    branching_ratio_zpl: T,
}

impl<T: Real> EmitterSpec<T> {
    /// `center_frequency` and `linewidth` in rad/s, `lifetime` in seconds,
    /// rates in detected counts per second.
    pub fn new(
        center_frequency: T,
        linewidth: T,
        lifetime: T,
        signal_rate: T,
        background_rate: T,
        branching_ratio_zpl: T,
    ) -> Result<Self> {
        if !center_frequency.is_finite() {
            return Err(Error::domain("center frequency must be finite"));
        }
        let natural = T::one() / lifetime;
        if !(lifetime > T::zero()) || !lifetime.is_finite() {
            return Err(Error::domain(format!(
                "lifetime must be positive and finite, got {lifetime}"
            )));
        }
        // Widths converted from Hz pick up a rounding error; accept those.
        let slack = T::one() - T::lit(64.0) * T::epsilon();
        if !(linewidth >= natural * slack) || !linewidth.is_finite() {
            return Err(Error::domain(format!(
                "linewidth {:.6} MHz is below the natural linewidth {:.6} MHz of a {} s lifetime",
                (linewidth / T::two_pi()).to_f64() * 1e-6,
                (natural / T::two_pi()).to_f64() * 1e-6,
                lifetime
            )));
        }
        signal_fraction(signal_rate, background_rate)?;
        if !(T::zero()..=T::one()).contains(&branching_ratio_zpl) {
            return Err(Error::domain(format!(
                "branching ratio must lie in [0, 1], got {branching_ratio_zpl}"
            )));
        }
        Ok(Self {
            center_frequency,
            linewidth,
            lifetime,
            signal_rate,
            background_rate,
            branching_ratio_zpl,
        })
    }

    /// Lifetime-limited emitter (`γ = 1 / lifetime`) at zero detuning with
    /// a branching ratio of one half.
    pub fn fourier_limited(lifetime: T, signal_rate: T, background_rate: T) -> Result<Self> {
        Self::new(
            T::zero(),
            T::one() / lifetime,
            lifetime,
            signal_rate,
            background_rate,
            T::lit(0.5),
        )
    }

    /// Same as [`EmitterSpec::new`] with the detuning and linewidth given in
    /// Hz (the linewidth as a Lorentzian FWHM).
    pub fn from_fwhm_hz(
        detuning_hz: T,
        fwhm_hz: T,
        lifetime: T,
        signal_rate: T,
        background_rate: T,
        branching_ratio_zpl: T,
    ) -> Result<Self> {
        Self::new(
            T::two_pi() * detuning_hz,
            T::two_pi() * fwhm_hz,
            lifetime,
            signal_rate,
            background_rate,
            branching_ratio_zpl,
        )
    }

    pub fn with_center_frequency(self, center_frequency: T) -> Result<Self> {
        Self::new(
            center_frequency,
            self.linewidth,
            self.lifetime,
            self.signal_rate,
            self.background_rate,
            self.branching_ratio_zpl,
        )
    }

    pub fn with_rates(self, signal_rate: T, background_rate: T) -> Result<Self> {
        Self::new(
            self.center_frequency,
            self.linewidth,
            self.lifetime,
            signal_rate,
            background_rate,
            self.branching_ratio_zpl,
        )
    }

    pub fn with_linewidth(self, linewidth: T) -> Result<Self> {
        Self::new(
            self.center_frequency,
            linewidth,
            self.lifetime,
            self.signal_rate,
            self.background_rate,
            self.branching_ratio_zpl,
        )
    }

    pub fn center_frequency(&self) -> T {
        self.center_frequency
    }

    /// Homogeneous linewidth γ in rad/s.
    pub fn linewidth(&self) -> T {
        self.linewidth
    }

    /// Homogeneous linewidth as a Lorentzian FWHM in Hz.
    pub fn linewidth_fwhm_hz(&self) -> T {
        self.linewidth / T::two_pi()
    }

    pub fn lifetime(&self) -> T {
        self.lifetime
    }

    /// Radiative-limit decay rate γ₀ = 1 / lifetime in rad/s.
    pub fn natural_linewidth(&self) -> T {
        T::one() / self.lifetime
    }

    pub fn signal_rate(&self) -> T {
        self.signal_rate
    }

    pub fn background_rate(&self) -> T {
        self.background_rate
    }

    /// Total detected intensity `I = S + B`.
    pub fn intensity(&self) -> T {
        self.signal_rate + self.background_rate
    }

    pub fn branching_ratio_zpl(&self) -> T {
        self.branching_ratio_zpl
    }

    pub fn signal_fraction(&self) -> T {
        self.signal_rate / self.intensity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IrfShape {
    Delta,
    Gaussian,
}

/// Detector and timing-electronics response for a coincidence measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrfSpec<T> {
    shape: IrfShape,
    fwhm: T,
}

impl<T: Real> IrfSpec<T> {
    pub fn delta() -> Self {
        Self {
            shape: IrfShape::Delta,
            fwhm: T::zero(),
        }
    }

    /// Gaussian kernel with the given FWHM in seconds. A zero width gives
    /// the delta kernel.
    pub fn gaussian(fwhm: T) -> Result<Self> {
        if fwhm == T::zero() {
            return Ok(Self::delta());
        }
        if !(fwhm > T::zero()) || !fwhm.is_finite() {
            return Err(Error::domain(format!("IRF FWHM must be >= 0, got {fwhm}")));
        }
        Ok(Self {
            shape: IrfShape::Gaussian,
            fwhm,
        })
    }

    /// The 800 ps Gaussian timing resolution of the reference setup.
    pub fn default_tac() -> Self {
        Self {
            shape: IrfShape::Gaussian,
            fwhm: T::lit(800e-12),
        }
    }

    pub fn shape(&self) -> IrfShape {
        self.shape
    }

    pub fn fwhm(&self) -> T {
        self.fwhm
    }

    /// Standard deviation of the kernel in seconds (zero for delta).
    pub fn sigma(&self) -> T {
        self.fwhm / (T::lit(8.0) * T::LN_2()).sqrt()
    }

    pub fn is_delta(&self) -> bool {
        self.shape == IrfShape::Delta
    }

    /// Kernel whose self-convolution equals this one: the per-channel jitter
    /// that produces this response on a two-detector coincidence.
    pub fn per_channel(&self) -> Self {
        match self.shape {
            IrfShape::Delta => *self,
            IrfShape::Gaussian => Self {
                shape: IrfShape::Gaussian,
                fwhm: self.fwhm / T::SQRT_2(),
            },
        }
    }
}

impl<T: Real> Default for IrfSpec<T> {
    fn default() -> Self {
        Self::default_tac()
    }
}

/// Two emitters feeding the inputs of an ideal 50-50 beam splitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceScenario<T> {
    emitter_1: EmitterSpec<T>,
    emitter_2: EmitterSpec<T>,
    eta: T,
    detector_irf: IrfSpec<T>,
}

impl<T: Real> InterferenceScenario<T> {
    pub fn new(
        emitter_1: EmitterSpec<T>,
        emitter_2: EmitterSpec<T>,
        eta: T,
        detector_irf: IrfSpec<T>,
    ) -> Result<Self> {
        if !(T::zero()..=T::one()).contains(&eta) {
            return Err(Error::domain(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self {
            emitter_1,
            emitter_2,
            eta,
            detector_irf,
        })
    }

    pub fn emitter_1(&self) -> &EmitterSpec<T> {
        &self.emitter_1
    }

    pub fn emitter_2(&self) -> &EmitterSpec<T> {
        &self.emitter_2
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn detector_irf(&self) -> &IrfSpec<T> {
        &self.detector_irf
    }

    /// Intensity weights `c_i = I_i / (I_1 + I_2)`; `c_2` is taken as
    /// `1 - c_1` so the pair sums to one.
    pub fn weights(&self) -> (T, T) {
        let i1 = self.emitter_1.intensity();
        let i2 = self.emitter_2.intensity();
        let c1 = i1 / (i1 + i2);
        (c1, T::one() - c1)
    }

    /// Signed detuning `ω₁ - ω₂` in rad/s.
    pub fn detuning(&self) -> T {
        self.emitter_1.center_frequency() - self.emitter_2.center_frequency()
    }

    pub fn swapped(&self) -> Self {
        Self {
            emitter_1: self.emitter_2,
            emitter_2: self.emitter_1,
            ..*self
        }
    }

    pub fn with_eta(&self, eta: T) -> Result<Self> {
        Self::new(self.emitter_1, self.emitter_2, eta, self.detector_irf)
    }

    pub fn with_irf(&self, irf: IrfSpec<T>) -> Self {
        Self {
            detector_irf: irf,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionProcess {
    None,
    /// Stationary Gauss-Markov noise with a single correlation time.
    BandLimitedGaussian,
}

/// Stochastic wandering of an emitter's transition frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSpec<T> {
    process: DiffusionProcess,
    /// Hz
    bandwidth: T,
    /// rad/s
    rms_detuning: T,
    /// rad/s, angular FWHM of the broadened line
    target_fwhm: Option<T>,
}

impl<T: Real> DiffusionSpec<T> {
    pub fn none() -> Self {
        Self {
            process: DiffusionProcess::None,
            bandwidth: T::zero(),
            rms_detuning: T::zero(),
            target_fwhm: None,
        }
    }

    /// `bandwidth` in Hz, `rms_detuning` in rad/s.
    pub fn band_limited(bandwidth: T, rms_detuning: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::domain(format!(
                "diffusion bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(rms_detuning >= T::zero()) || !rms_detuning.is_finite() {
            return Err(Error::domain(format!(
                "rms detuning must be >= 0, got {rms_detuning}"
            )));
        }
        Ok(Self {
            process: DiffusionProcess::BandLimitedGaussian,
            bandwidth,
            rms_detuning,
            target_fwhm: None,
        })
    }

    /// Diffusion whose amplitude is to be solved so the broadened line has
    /// the given angular FWHM (rad/s). See
    /// [`crate::analytic::solve_rms_for_fwhm`].
    pub fn with_target_fwhm(bandwidth: T, target_fwhm: T) -> Result<Self> {
        if !(target_fwhm > T::zero()) || !target_fwhm.is_finite() {
            return Err(Error::domain(format!(
                "target FWHM must be positive, got {target_fwhm}"
            )));
        }
        let mut spec = Self::band_limited(bandwidth, T::zero())?;
        spec.target_fwhm = Some(target_fwhm);
        Ok(spec)
    }

    pub fn with_target_fwhm_hz(bandwidth: T, target_fwhm_hz: T) -> Result<Self> {
        Self::with_target_fwhm(bandwidth, T::two_pi() * target_fwhm_hz)
    }

    /// Quasi-static Gaussian detuning distribution with the given FWHM in
    /// Hz, carried by a slow process of the given bandwidth.
    pub fn gaussian_distribution_fwhm_hz(bandwidth: T, fwhm_hz: T) -> Result<Self> {
        let sigma = T::two_pi() * fwhm_hz / (T::lit(8.0) * T::LN_2()).sqrt();
        Self::band_limited(bandwidth, sigma)
    }

    pub fn process(&self) -> DiffusionProcess {
        self.process
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn rms_detuning(&self) -> T {
        match self.process {
            DiffusionProcess::None => T::zero(),
            DiffusionProcess::BandLimitedGaussian => self.rms_detuning,
        }
    }

    pub fn target_fwhm(&self) -> Option<T> {
        self.target_fwhm
    }

    /// Correlation time `1 / (2π · bandwidth)` in seconds.
    pub fn correlation_time(&self) -> T {
        T::one() / (T::two_pi() * self.bandwidth)
    }

    pub fn with_rms_detuning(&self, rms_detuning: T) -> Result<Self> {
        match self.process {
            DiffusionProcess::None => Ok(*self),
            DiffusionProcess::BandLimitedGaussian => {
                let mut spec = Self::band_limited(self.bandwidth, rms_detuning)?;
                spec.target_fwhm = self.target_fwhm;
                Ok(spec)
            }
        }
    }
}

impl<T: Real> Default for DiffusionSpec<T> {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    RawCounts,
    PlateauNormalized,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::RawCounts => "raw_counts",
            Normalization::PlateauNormalized => "plateau_normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw_counts" => Some(Normalization::RawCounts),
            "plateau_normalized" => Some(Normalization::PlateauNormalized),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceMetadata {
    pub scenario_hash: String,
    pub seed: u64,
    pub total_events: u64,
}

/// A binned correlation histogram (measured or computed).
///
/// `sigma` holds one standard error per bin. Raw-count traces from the
/// histogrammer carry Poisson errors with zero-count bins set to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTrace {
    bin_edges: Vec<f64>,
    counts: Vec<f64>,
    sigma: Vec<f64>,
    normalization: Normalization,
    pub metadata: TraceMetadata,
}

impl CorrelationTrace {
    pub fn new(
        bin_edges: Vec<f64>,
        counts: Vec<f64>,
        sigma: Vec<f64>,
        normalization: Normalization,
        metadata: TraceMetadata,
    ) -> Result<Self> {
        if bin_edges.len() < 2 || counts.len() + 1 != bin_edges.len() {
            return Err(Error::domain(format!(
                "trace needs len(counts) = len(bin_edges) - 1 >= 1, got {} counts and {} edges",
                counts.len(),
                bin_edges.len()
            )));
        }
        if sigma.len() != counts.len() {
            return Err(Error::domain("sigma and counts lengths differ"));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("bin edges must be strictly increasing"));
        }
        if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::domain("counts must be finite and nonnegative"));
        }
        if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::domain("standard errors must be finite and nonnegative"));
        }
        Ok(Self {
            bin_edges,
            counts,
            sigma,
            normalization,
            metadata,
        })
    }

    /// Raw histogram counts with Poisson errors (zero-count bins get σ = 1).
    pub fn from_counts(bin_edges: Vec<f64>, counts: Vec<f64>, metadata: TraceMetadata) -> Result<Self> {
        let sigma = counts
            .iter()
            .map(|&c| if c > 0.0 { c.sqrt() } else { 1.0 })
            .collect();
        Self::new(bin_edges, counts, sigma, Normalization::RawCounts, metadata)
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Common bin width if the bins are uniform to within 1 ppm.
    pub fn uniform_bin_width(&self) -> Option<f64> {
        let w = self.bin_edges[1] - self.bin_edges[0];
        self.bin_edges
            .windows(2)
            .all(|e| ((e[1] - e[0]) - w).abs() <= 1e-6 * w)
            .then_some(w)
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Index of the bin containing τ = 0, if any.
    pub fn zero_bin(&self) -> Option<usize> {
        self.bin_edges.windows(2).position(|w| w[0] <= 0.0 && 0.0 < w[1])
    }

    /// The trace reflected through τ = 0.
    pub fn mirrored(&self) -> Self {
        let bin_edges = self.bin_edges.iter().rev().map(|e| -e).collect();
        let counts = self.counts.iter().rev().copied().collect();
        let sigma = self.sigma.iter().rev().copied().collect();
        Self {
            bin_edges,
            counts,
            sigma,
            normalization: self.normalization,
            metadata: self.metadata.clone(),
        }
    }

    /// Multiply values and errors by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            counts: self.counts.iter().map(|c| c * k).collect(),
            sigma: self.sigma.iter().map(|s| s * k).collect(),
            ..self.clone()
        }
    }

    /// Bin-wise sum of two raw histograms on identical bins. Errors are
    /// recomputed from the merged counts.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.normalization != Normalization::RawCounts
            || other.normalization != Normalization::RawCounts
        {
            return Err(Error::domain("only raw-count histograms can be merged"));
        }
        if self.bin_edges != other.bin_edges {
            return Err(Error::domain("cannot merge histograms with different bins"));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a + b)
            .collect();
        let metadata = TraceMetadata {
            total_events: self.metadata.total_events + other.metadata.total_events,
            ..self.metadata.clone()
        };
        Self::from_counts(self.bin_edges.clone(), counts, metadata)
    }

    pub(crate) fn with_values(&self, counts: Vec<f64>, sigma: Vec<f64>, normalization: Normalization) -> Self {
        Self {
            bin_edges: self.bin_edges.clone(),
            counts,
            sigma,
            normalization,
            metadata: self.metadata.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn natural_linewidth_of_reference_lifetime() {
        let hz = natural_linewidth(9.5e-9_f64).unwrap();
        assert_relative_eq!(hz, 16.753_152e6, max_relative = 1e-6);
        // quoted as roughly 17 MHz
        assert!((hz * 1e-6 - 17.0).abs() < 0.5);
        assert_relative_eq!(natural_linewidth(9.5e-9_f32).unwrap(), 16.753_15e6_f32, max_relative = 1e-5);
    }

    #[test]
    fn natural_linewidth_limits() {
        assert_relative_eq!(
            natural_linewidth(1.0 / (2.0 * std::f64::consts::PI)).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(natural_linewidth(1e300_f64).unwrap() < 1e-300);
        assert!(natural_linewidth(0.0_f64).is_err());
        assert!(natural_linewidth(-1.0_f64).is_err());
        assert!(natural_linewidth(f64::NAN).is_err());
    }

    #[test]
    fn stark_law() {
        assert_eq!(stark_detuning(63.0_f64), 0.0);
        assert_eq!(stark_detuning(67.0_f64), 200.0);
        assert_eq!(stark_detuning(63.0 + 1.5_f64), -stark_detuning(63.0 - 1.5_f64));
    }

    #[test]
    fn signal_fraction_values() {
        assert_relative_eq!(signal_fraction(9e5_f64, 1e5).unwrap(), 0.9);
        assert_eq!(signal_fraction(3.0_f64, 0.0).unwrap(), 1.0);
        assert_eq!(signal_fraction(2.0_f64, 2.0).unwrap(), 0.5);
        assert!(signal_fraction(0.0_f64, 0.0).is_err());
        assert!(signal_fraction(-1.0_f64, 2.0).is_err());
    }

    #[test]
    fn emitter_rejects_sub_natural_linewidth() {
        let err = EmitterSpec::from_fwhm_hz(0.0, 1e6, 9.5e-9, 1e6, 0.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        // Exactly Fourier limited through the Hz path is accepted.
        let hz = natural_linewidth(9.5e-9).unwrap();
        EmitterSpec::from_fwhm_hz(0.0, hz, 9.5e-9, 1e6, 0.0, 0.5).unwrap();
        assert!(EmitterSpec::fourier_limited(9.5e-9, 0.0, 0.0).is_err());
        assert!(EmitterSpec::new(0.0, 2e8, 9.5e-9, 1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn scenario_weights_and_swap() {
        let e1 = EmitterSpec::fourier_limited(9.5e-9, 3e5, 1e5).unwrap();
        let e2 = EmitterSpec::fourier_limited(9.5e-9, 1e5, 0.0)
            .unwrap()
            .with_center_frequency(1e9)
            .unwrap();
        let s = InterferenceScenario::new(e1, e2, 0.5, IrfSpec::delta()).unwrap();
        let (c1, c2) = s.weights();
        assert_relative_eq!(c1, 0.8);
        assert_eq!(c1 + c2, 1.0);
        assert_eq!(s.detuning(), -1e9);
        assert_eq!(s.swapped().detuning(), 1e9);
        assert!(InterferenceScenario::new(e1, e2, 1.2, IrfSpec::delta()).is_err());
    }

    #[test]
    fn irf_conventions() {
        let irf = IrfSpec::<f64>::default_tac();
        assert_relative_eq!(irf.sigma() * (8.0 * 2f64.ln()).sqrt(), 800e-12);
        assert_relative_eq!(irf.per_channel().sigma() * 2f64.sqrt(), irf.sigma());
        assert!(IrfSpec::gaussian(0.0_f64).unwrap().is_delta());
        assert!(IrfSpec::gaussian(-1.0_f64).is_err());
    }

    #[test]
    fn trace_validation() {
        assert!(CorrelationTrace::from_counts(vec![0.0, 1.0], vec![1.0, 2.0], Default::default()).is_err());
        assert!(CorrelationTrace::from_counts(vec![1.0, 0.0], vec![1.0], Default::default()).is_err());
        let t = CorrelationTrace::from_counts(vec![-1.0, 0.0, 1.0], vec![4.0, 0.0], Default::default()).unwrap();
        assert_eq!(t.sigma(), &[2.0, 1.0]);
        assert_eq!(t.zero_bin(), Some(1));
        assert_eq!(t.mirrored().counts(), &[0.0, 4.0]);
    }

    proptest! {
        #[test]
        fn natural_linewidth_strictly_decreasing(a in 1e-12f64..1e-3, f in 1.0001f64..100.0) {
            prop_assert!(natural_linewidth(a * f).unwrap() < natural_linewidth(a).unwrap());
        }

        #[test]
        fn stark_affine(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let lhs = stark_detuning(a) + stark_detuning(b);
            let rhs = 2.0 * stark_detuning(0.5 * (a + b));
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn accepted_emitters_respect_radiative_limit(
            lifetime in 1e-10f64..1e-6,
            excess in 1.0f64..500.0,
            s in 0.0f64..1e7,
            b in 1.0f64..1e6,
        ) {
            let e = EmitterSpec::new(0.0, excess / lifetime, lifetime, s, b, 0.5).unwrap();
            let limit = 2.0 * std::f64::consts::PI * natural_linewidth(lifetime).unwrap();
            prop_assert!(e.linewidth() >= limit * (1.0 - 1e-12));
            let f = e.signal_fraction();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
