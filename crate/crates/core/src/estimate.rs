//! Histogram normalization and weighted least-squares fits of the analytic
//! correlation models.
//!
//! A fit minimizes `Σ [(data - model(θ)) / σ]²` where the model is the
//! analytic curve convolved with the detector response and averaged over
//! each histogram bin. The minimizer takes damped Gauss-Newton
//! (Levenberg-Marquardt) steps with a central-difference Jacobian and falls
//! back to a Nelder-Mead simplex when the normal equations are
//! ill-conditioned. Every fit is single-threaded and deterministic.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::analytic::{convolve_irf, CrossCorrelationModel, SampledCurve};
use crate::error::{Error, Result};
use crate::model::{CorrelationTrace, DiffusionSpec, InterferenceScenario, IrfSpec, Normalization};

/// Fewest bins [`normalize`] accepts.
pub const MIN_NORMALIZE_BINS: usize = 20;
/// Iteration cap of each minimizer stage.
pub const MAX_ITERATIONS: usize = 500;
/// Convergence threshold on the relative parameter change.
pub const PARAMETER_TOLERANCE: f64 = 1e-6;
/// Convergence threshold on the relative change of χ².
pub const CHI2_TOLERANCE: f64 = 1e-9;
/// Finite-difference step in scaled parameter units.
pub const DIFFERENCE_STEP: f64 = 1e-6;

/// Finest spacing of the grid the model is evaluated on before binning.
const MODEL_STEP: f64 = 10e-12;
/// Columns whose norm falls below this fraction of the largest are treated
/// as carrying no information.
const FLAT_COLUMN: f64 = 1e-6;
/// Smallest eigenvalue of the normalized curvature matrix that still counts
/// as well conditioned.
const MIN_EIGENVALUE: f64 = 1e-12;

/// Number of bins on each side used to estimate the plateau.
pub fn plateau_bins(len: usize) -> usize {
    (len / 10).max(1)
}

/// Mean of the outer 10% of bins on each side.
pub fn plateau(trace: &CorrelationTrace) -> Result<f64> {
    let n = trace.len();
    let k = plateau_bins(n);
    if 2 * k > n {
        return Err(Error::domain("trace too short to hold a plateau region"));
    }
    let counts = trace.counts();
    let sum: f64 = counts[..k].iter().chain(&counts[n - k..]).sum();
    if !(sum > 0.0) {
        return Err(Error::domain("plateau region of the trace is empty"));
    }
    Ok(sum / (2 * k) as f64)
}

/// Divide values and standard errors by the plateau estimate.
///
/// Normalizing an already normalized trace divides by its new plateau
/// estimate, which is one up to rounding.
pub fn normalize(trace: &CorrelationTrace) -> Result<CorrelationTrace> {
    if trace.len() < MIN_NORMALIZE_BINS {
        return Err(Error::domain(format!(
            "normalization needs at least {MIN_NORMALIZE_BINS} bins, got {}",
            trace.len()
        )));
    }
    let p = plateau(trace)?;
    let counts = trace.counts().iter().map(|c| c / p).collect();
    let sigma = trace.sigma().iter().map(|s| s / p).collect();
    Ok(trace.with_values(counts, sigma, Normalization::PlateauNormalized))
}

/// A model parameter. Frequencies are in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    Eta,
    /// `|ω₁ - ω₂|`; its sign does not enter the model.
    Detuning,
    Linewidth1,
    Linewidth2,
    SignalFraction1,
    SignalFraction2,
    /// Intensity weight `c₁`; `c₂ = 1 - c₁`.
    Weight1,
    /// Standard deviation of the quasi-static detuning distribution.
    RmsDetuning,
    /// Overall scale; one for a perfectly normalized trace.
    Plateau,
}

impl Param {
    pub const ALL: [Param; 9] = [
        Param::Eta,
        Param::Detuning,
        Param::Linewidth1,
        Param::Linewidth2,
        Param::SignalFraction1,
        Param::SignalFraction2,
        Param::Weight1,
        Param::RmsDetuning,
        Param::Plateau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Eta => "eta",
            Param::Detuning => "detuning",
            Param::Linewidth1 => "linewidth_1",
            Param::Linewidth2 => "linewidth_2",
            Param::SignalFraction1 => "signal_fraction_1",
            Param::SignalFraction2 => "signal_fraction_2",
            Param::Weight1 => "weight_1",
            Param::RmsDetuning => "rms_detuning",
            Param::Plateau => "plateau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// True for parameters stored as angular frequencies.
    pub fn is_frequency(self) -> bool {
        matches!(
            self,
            Param::Detuning | Param::Linewidth1 | Param::Linewidth2 | Param::RmsDetuning
        )
    }

    /// The admissible range; user bounds must lie inside it.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Param::Eta => (0.0, 1.0),
            Param::Detuning | Param::RmsDetuning => (0.0, f64::INFINITY),
            Param::Linewidth1 | Param::Linewidth2 => (f64::MIN_POSITIVE, f64::INFINITY),
            Param::SignalFraction1 | Param::SignalFraction2 => (f64::MIN_POSITIVE, 1.0),
            Param::Weight1 => (f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
            Param::Plateau => (f64::MIN_POSITIVE, f64::INFINITY),
        }
    }

    fn typical_scale(self) -> f64 {
        match self {
            Param::Detuning | Param::RmsDetuning => std::f64::consts::TAU * 1e8,
            Param::Linewidth1 | Param::Linewidth2 => std::f64::consts::TAU * 1e7,
            _ => 1.0,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which analytic curve is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// `P (1 - ρ₁² e^{-γ₁|τ|})`
    Autocorrelation,
    /// `P 𝒢₃₄(τ)`
    CrossCorrelation,
    /// `P 𝒢₃₄(τ)` averaged over a Gaussian detuning distribution of
    /// emitter 1.
    CrossCorrelationAveraged,
}

impl ModelKind {
    pub fn params(self) -> &'static [Param] {
        use Param::*;
        match self {
            ModelKind::Autocorrelation => &[Linewidth1, SignalFraction1, Plateau],
            ModelKind::CrossCorrelation => &[
                Eta,
                Detuning,
                Linewidth1,
                Linewidth2,
                SignalFraction1,
                SignalFraction2,
                Weight1,
                Plateau,
            ],
            ModelKind::CrossCorrelationAveraged => &[
                Eta,
                Detuning,
                Linewidth1,
                Linewidth2,
                SignalFraction1,
                SignalFraction2,
                Weight1,
                RmsDetuning,
                Plateau,
            ],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Autocorrelation => "autocorrelation",
            ModelKind::CrossCorrelation => "cross_correlation",
            ModelKind::CrossCorrelationAveraged => "cross_correlation_averaged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ModelKind::Autocorrelation,
            ModelKind::CrossCorrelation,
            ModelKind::CrossCorrelationAveraged,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// Parameter values of the scenario, with the plateau set to one and the
/// detuning reported as a magnitude.
pub fn scenario_values(
    scenario: &InterferenceScenario<f64>,
    diffusion: &DiffusionSpec<f64>,
) -> BTreeMap<Param, f64> {
    let m = CrossCorrelationModel::with_diffusion(scenario, diffusion);
    BTreeMap::from([
        (Param::Eta, m.eta),
        (Param::Detuning, m.detuning.abs()),
        (Param::Linewidth1, m.linewidth_1),
        (Param::Linewidth2, m.linewidth_2),
        (Param::SignalFraction1, m.signal_fraction_1),
        (Param::SignalFraction2, m.signal_fraction_2),
        (Param::Weight1, m.weight_1),
        (Param::RmsDetuning, m.rms_detuning),
        (Param::Plateau, 1.0),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Values([f64; 9]);

impl Values {
    fn get(&self, p: Param) -> f64 {
        self.0[p.index()]
    }

    fn set(&mut self, p: Param, v: f64) {
        self.0[p.index()] = v;
    }

    fn from_map(kind: ModelKind, map: &BTreeMap<Param, f64>) -> Result<Self> {
        let mut v = Values([0.0; 9]);
        for &p in kind.params() {
            let value = *map
                .get(&p)
                .ok_or_else(|| Error::domain(format!("model {} needs a value for {p}", kind.as_str())))?;
            check_in_domain(p, value)?;
            v.set(p, value);
        }
        Ok(v)
    }
}

fn check_in_domain(p: Param, value: f64) -> Result<()> {
    let (lo, hi) = p.domain();
    if !(value >= lo && value <= hi) || value.is_nan() {
        return Err(Error::domain(format!("{p} = {value} lies outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn model_value(kind: ModelKind, v: &Values, tau: f64) -> f64 {
    let plateau = v.get(Param::Plateau);
    match kind {
        ModelKind::Autocorrelation => {
            let rho = v.get(Param::SignalFraction1);
            plateau * (1.0 - rho * rho * (-v.get(Param::Linewidth1) * tau.abs()).exp())
        }
        ModelKind::CrossCorrelation | ModelKind::CrossCorrelationAveraged => {
            let w1 = v.get(Param::Weight1);
            let model = CrossCorrelationModel {
                weight_1: w1,
                weight_2: 1.0 - w1,
                signal_fraction_1: v.get(Param::SignalFraction1),
                signal_fraction_2: v.get(Param::SignalFraction2),
                linewidth_1: v.get(Param::Linewidth1),
                linewidth_2: v.get(Param::Linewidth2),
                eta: v.get(Param::Eta),
                detuning: v.get(Param::Detuning),
                rms_detuning: if kind == ModelKind::CrossCorrelationAveraged {
                    v.get(Param::RmsDetuning)
                } else {
                    0.0
                },
            };
            plateau * model.evaluate(tau)
        }
    }
}

/// Evaluates a model on fixed histogram bins: tabulate on a fine grid,
/// convolve with the detector response, average over each bin.
#[derive(Debug, Clone)]
struct BinnedModel {
    kind: ModelKind,
    edges: Vec<f64>,
    irf: IrfSpec<f64>,
    step: f64,
    half_span: f64,
    sub_intervals: usize,
}

impl BinnedModel {
    fn new(kind: ModelKind, edges: &[f64], irf: &IrfSpec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::domain("need at least one bin"));
        }
        let mut target = MODEL_STEP;
        if !irf.is_delta() {
            target = target.min(irf.fwhm() / 8.0);
        }
        let narrowest = edges
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let widest = edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let uniform = widest - narrowest <= 1e-6 * narrowest;
        // Uniform bins centered on multiples of their width get edges on
        // grid points when each bin spans an even number of grid steps.
        let (step, sub_intervals) = if uniform {
            let mut m = (narrowest / target).ceil().max(4.0) as usize;
            m += m % 2;
            (narrowest / m as f64, m)
        } else {
            (target.min(narrowest / 4.0), 8)
        };
        let reach = edges[0].abs().max(edges[edges.len() - 1].abs());
        let margin = if irf.is_delta() { 0.0 } else { 6.0 * irf.sigma() };
        let n = ((reach + margin) / step).ceil() + 2.0;
        if n > 5e6 {
            return Err(Error::precision(format!(
                "model grid of {n} points is too large; coarsen the bins or narrow the range"
            )));
        }
        Ok(Self {
            kind,
            edges: edges.to_vec(),
            irf: *irf,
            step,
            half_span: n * step,
            sub_intervals,
        })
    }

    fn evaluate(&self, v: &Values) -> Result<Vec<f64>> {
        let curve = SampledCurve::tabulate(self.half_span, self.step, |t| model_value(self.kind, v, t))?;
        let curve = convolve_irf(&curve, &self.irf)?;
        let m = self.sub_intervals;
        Ok(self
            .edges
            .windows(2)
            .map(|e| {
                let h = (e[1] - e[0]) / m as f64;
                let inner: f64 = (1..m).map(|j| curve.value_at(e[0] + j as f64 * h)).sum();
                (inner + 0.5 * (curve.value_at(e[0]) + curve.value_at(e[1]))) / m as f64
            })
            .collect())
    }
}

/// Bin-averaged model values on `edges` after convolution with `irf`.
pub fn binned_model(
    edges: &[f64],
    kind: ModelKind,
    params: &BTreeMap<Param, f64>,
    irf: &IrfSpec<f64>,
) -> Result<Vec<f64>> {
    let values = Values::from_map(kind, params)?;
    BinnedModel::new(kind, edges, irf)?.evaluate(&values)
}

/// A free parameter: bounds and an optional starting value. Without one
/// the fitter derives a starting value from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParam {
    pub param: Param,
    pub initial: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// A trace, a model and the split of the model's parameters into free and
/// fixed ones.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub trace: CorrelationTrace,
    pub model: ModelKind,
    pub free: Vec<FreeParam>,
    pub fixed: BTreeMap<Param, f64>,
    pub irf: IrfSpec<f64>,
}

impl FitProblem {
    /// A problem with no parameters assigned yet.
    pub fn new(trace: CorrelationTrace, model: ModelKind, irf: IrfSpec<f64>) -> Self {
        Self {
            trace,
            model,
            free: Vec::new(),
            fixed: BTreeMap::new(),
            irf,
        }
    }

    /// Every model parameter fixed at the scenario's value (plateau one),
    /// with the scenario's detector response.
    pub fn from_scenario(
        trace: CorrelationTrace,
        model: ModelKind,
        scenario: &InterferenceScenario<f64>,
        diffusion: &DiffusionSpec<f64>,
    ) -> Self {
        let values = scenario_values(scenario, diffusion);
        let fixed = model.params().iter().map(|p| (*p, values[p])).collect();
        Self {
            trace,
            model,
            free: Vec::new(),
            fixed,
            irf: *scenario.detector_irf(),
        }
    }

    pub fn fix(mut self, param: Param, value: f64) -> Self {
        self.free.retain(|f| f.param != param);
        self.fixed.insert(param, value);
        self
    }

    /// Free `param` over its whole domain. Without an explicit start the
    /// current fixed value is used if there is one.
    pub fn free(self, param: Param, initial: Option<f64>) -> Self {
        let (lower, upper) = param.domain();
        self.free_within(param, initial, lower, upper)
    }

    pub fn free_within(mut self, param: Param, initial: Option<f64>, lower: f64, upper: f64) -> Self {
        let initial = initial.or_else(|| self.fixed.get(&param).copied());
        self.fixed.remove(&param);
        self.free.retain(|f| f.param != param);
        self.free.push(FreeParam {
            param,
            initial,
            lower,
            upper,
        });
        self
    }

    /// Free `param` with a data-derived starting value.
    pub fn free_auto(mut self, param: Param) -> Self {
        self.fixed.remove(&param);
        self.free(param, None)
    }

    fn validate(&self) -> Result<()> {
        let needed = self.model.params();
        for f in &self.free {
            if !needed.contains(&f.param) {
                return Err(Error::domain(format!(
                    "{} is not a parameter of the {} model",
                    f.param,
                    self.model.as_str()
                )));
            }
            let (lo, hi) = f.param.domain();
            if !(f.lower >= lo && f.upper <= hi && f.lower < f.upper) {
                return Err(Error::domain(format!(
                    "bounds [{}, {}] of {} must be ordered and inside [{lo}, {hi}]",
                    f.lower, f.upper, f.param
                )));
            }
            if let Some(x) = f.initial {
                if !(x >= f.lower && x <= f.upper) {
                    return Err(Error::domain(format!(
                        "initial value {x} of {} lies outside its bounds [{}, {}]",
                        f.param, f.lower, f.upper
                    )));
                }
            }
        }
        for (&p, &v) in &self.fixed {
            if !needed.contains(&p) {
                return Err(Error::domain(format!(
                    "{p} is not a parameter of the {} model",
                    self.model.as_str()
                )));
            }
            check_in_domain(p, v)?;
        }
        for p in needed {
            let count = self.free.iter().filter(|f| f.param == *p).count() + usize::from(self.fixed.contains_key(p));
            if count != 1 {
                return Err(Error::domain(format!(
                    "{p} must be either free or fixed exactly once (found {count})"
                )));
            }
        }
        if self.free.is_empty() {
            return Err(Error::domain("no free parameters"));
        }
        Ok(())
    }
}

/// Minimizer stage that produced the final estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    LevenbergMarquardt,
    NelderMead,
}

/// Covariance of the identifiable free parameters, in their own units.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub params: Vec<Param>,
    pub matrix: DMatrix<f64>,
}

impl Covariance {
    pub fn get(&self, a: Param, b: Param) -> Option<f64> {
        let i = self.params.iter().position(|p| *p == a)?;
        let j = self.params.iter().position(|p| *p == b)?;
        Some(self.matrix[(i, j)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelKind,
    /// Every model parameter, fixed ones included.
    pub estimates: BTreeMap<Param, f64>,
    pub free: Vec<Param>,
    /// Identifiable free parameters only; empty unless converged.
    pub standard_errors: BTreeMap<Param, f64>,
    /// Free parameters the data do not constrain (vanishing or degenerate
    /// curvature). They keep their starting values.
    pub unidentifiable: Vec<Param>,
    pub chi2: f64,
    pub degrees_of_freedom: usize,
    pub reduced_chi2: f64,
    /// Absent unless converged.
    pub covariance: Option<Covariance>,
    pub converged: bool,
    pub iterations: usize,
    pub method: FitMethod,
    pub message: String,
}

impl FitResult {
    pub fn estimate(&self, p: Param) -> Option<f64> {
        self.estimates.get(&p).copied()
    }

    pub fn standard_error(&self, p: Param) -> Option<f64> {
        self.standard_errors.get(&p).copied()
    }

    /// `estimate ± z · standard error`.
    pub fn interval(&self, p: Param, z: f64) -> Option<(f64, f64)> {
        let x = self.estimate(p)?;
        let s = self.standard_error(p)?;
        Some((x - z * s, x + z * s))
    }

    pub fn is_unidentifiable(&self, p: Param) -> bool {
        self.unidentifiable.contains(&p)
    }
}

/// Starting value for `|Δω|`: the frequency of the strongest beat in the
/// discrete Fourier transform of `plateau - trace`, or zero when nothing
/// rises above the low-frequency lobe of the dip.
pub fn initial_detuning_guess(trace: &CorrelationTrace) -> Result<f64> {
    let p = plateau(trace)?;
    let n = trace.len();
    let width = (trace.bin_edges()[n] - trace.bin_edges()[0]) / n as f64;
    let padded = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = trace
        .counts()
        .iter()
        .map(|c| Complex::new(p - c, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mag: Vec<f64> = buf[..padded / 2].iter().map(|z| z.norm()).collect();
    let Some(lobe_end) = (1..mag.len() - 1).find(|&j| mag[j] <= mag[j - 1] && mag[j] <= mag[j + 1]) else {
        return Ok(0.0);
    };
    let lobe_peak = mag[..lobe_end].iter().copied().fold(0.0, f64::max);
    let (best, peak) = (lobe_end..mag.len() - 1)
        .filter(|&j| mag[j] > mag[j - 1] && mag[j] >= mag[j + 1])
        .map(|j| (j, mag[j]))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if best == 0 || peak < 0.05 * lobe_peak {
        return Ok(0.0);
    }
    // parabolic refinement of the peak position
    let (a, b, c) = (mag[best - 1], mag[best], mag[best + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let freq = (best as f64 + offset) / (padded as f64 * width);
    Ok(std::f64::consts::TAU * freq)
}

fn default_initial(p: Param, trace: &CorrelationTrace) -> Result<f64> {
    Ok(match p {
        Param::Eta => 0.5,
        Param::Detuning => {
            let guess = initial_detuning_guess(trace)?;
            if guess > 0.0 {
                guess
            } else {
                std::f64::consts::TAU * 10e6
            }
        }
        Param::Linewidth1 | Param::Linewidth2 => 1e8,
        Param::SignalFraction1 | Param::SignalFraction2 => 0.9,
        Param::Weight1 => 0.5,
        Param::RmsDetuning => std::f64::consts::TAU * 1e8,
        Param::Plateau => plateau(trace)?,
    })
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    param: Param,
    scale: f64,
    lower: f64,
    upper: f64,
}

/// χ² in scaled coordinates `x = θ / scale`.
struct Objective {
    model: BinnedModel,
    base: Values,
    slots: Vec<Slot>,
    data: Vec<f64>,
    weights: Vec<f64>,
    used: Vec<usize>,
}

impl Objective {
    fn clamp(&self, x: &mut [f64]) {
        for (xi, s) in x.iter_mut().zip(&self.slots) {
            *xi = xi.clamp(s.lower, s.upper);
        }
    }

    fn values(&self, x: &[f64]) -> Values {
        let mut v = self.base;
        for (xi, s) in x.iter().zip(&self.slots) {
            v.set(s.param, xi * s.scale);
        }
        v
    }

    /// Model values on the used bins divided by σ.
    fn scaled_model(&self, x: &[f64]) -> Result<Vec<f64>> {
        let all = self.model.evaluate(&self.values(x))?;
        Ok(self.used.iter().map(|&i| all[i] * self.weights[i]).collect())
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.scaled_model(x)?;
        Ok(self
            .used
            .iter()
            .zip(m)
            .map(|(&i, mi)| self.data[i] * self.weights[i] - mi)
            .collect())
    }

    fn chi2(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residuals(x)?.iter().map(|r| r * r).sum())
    }

    /// Derivative of the σ-scaled model with respect to `x`.
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.used.len(), x.len());
        for (k, s) in self.slots.iter().enumerate() {
            let up = (x[k] + DIFFERENCE_STEP).min(s.upper);
            let down = (x[k] - DIFFERENCE_STEP).max(s.lower);
            let mut xp = x.to_vec();
            xp[k] = up;
            let mut xm = x.to_vec();
            xm[k] = down;
            let fp = self.scaled_model(&xp)?;
            let fm = self.scaled_model(&xm)?;
            let h = up - down;
            if h > 0.0 {
                for (i, (a, b)) in fp.iter().zip(&fm).enumerate() {
                    jac[(i, k)] = (a - b) / h;
                }
            }
        }
        Ok(jac)
    }
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn chi2_settled(old: f64, new: f64, bins: usize) -> bool {
    (old - new).abs() <= CHI2_TOLERANCE * old.abs() + 1e-18 * bins as f64
}

/// Indices of columns carrying information.
fn active_columns(jac: &DMatrix<f64>) -> Vec<usize> {
    let norms: Vec<f64> = jac.column_iter().map(|c| c.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    (0..norms.len())
        .filter(|&k| top > 0.0 && norms[k] > FLAT_COLUMN * top)
        .collect()
}

fn submatrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

/// Eigen-decomposition of the curvature normalized to unit diagonal.
fn normalized_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let d: Vec<f64> = (0..a.nrows()).map(|i| a[(i, i)].sqrt()).collect();
    let c = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / (d[i] * d[j]));
    SymmetricEigen::new(c)
}

fn well_conditioned(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return false;
    }
    let eig = normalized_eigen(a);
    eig.eigenvalues.iter().all(|&e| e > MIN_EIGENVALUE)
}

enum Outcome {
    Converged,
    IllConditioned,
    Exhausted,
    Stalled,
}

/// Damped Gauss-Newton iterations. Uninformative parameters are held where
/// they are.
fn levenberg_marquardt(obj: &Objective, x: &mut Vec<f64>, chi2: &mut f64, iterations: &mut usize) -> Result<Outcome> {
    let mut lambda = 1e-3;
    let mut r = obj.residuals(x)?;
    while *iterations < MAX_ITERATIONS {
        *iterations += 1;
        let jac = obj.jacobian(x)?;
        let active = active_columns(&jac);
        if active.is_empty() {
            return Ok(Outcome::Converged);
        }
        let j_act = DMatrix::from_fn(jac.nrows(), active.len(), |i, k| jac[(i, active[k])]);
        let a = j_act.transpose() * &j_act;
        if !well_conditioned(&a) {
            return Ok(Outcome::IllConditioned);
        }
        let g = j_act.transpose() * DVector::from_column_slice(&r);
        loop {
            let mut damped = a.clone();
            for i in 0..active.len() {
                damped[(i, i)] += lambda * a[(i, i)];
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Ok(Outcome::Stalled);
                }
                continue;
            };
            let delta = chol.solve(&g);
            let mut trial = x.clone();
            for (k, &col) in active.iter().enumerate() {
                trial[col] += delta[k];
            }
            obj.clamp(&mut trial);
            let dx = relative_change(x, &trial);
            let trial_r = obj.residuals(&trial)?;
            let trial_chi2: f64 = trial_r.iter().map(|v| v * v).sum();
            if trial_chi2 <= *chi2 {
                let settled = chi2_settled(*chi2, trial_chi2, r.len());
                *x = trial;
                *chi2 = trial_chi2;
                r = trial_r;
                lambda = (lambda / 10.0).max(1e-12);
                if dx < PARAMETER_TOLERANCE && settled {
                    return Ok(Outcome::Converged);
                }
                break;
            }
            // No decrease from a step already below the tolerance: the
            // minimum is resolved as far as the arithmetic allows.
            if dx < PARAMETER_TOLERANCE {
                return Ok(Outcome::Converged);
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                return Ok(Outcome::Stalled);
            }
        }
    }
    Ok(Outcome::Exhausted)
}

/// Derivative-free simplex over the coordinates in `dims`.
fn nelder_mead(
    obj: &Objective,
    x: &mut Vec<f64>,
    chi2: &mut f64,
    dims: &[usize],
    iterations: &mut usize,
) -> Result<Outcome> {
    let n = dims.len();
    let eval = |v: &[f64]| -> Result<(Vec<f64>, f64)> {
        let mut p = v.to_vec();
        obj.clamp(&mut p);
        let f = obj.chi2(&p)?;
        Ok((p, f))
    };
    let mut simplex = vec![(x.clone(), *chi2)];
    for &d in dims {
        let mut p = x.clone();
        let s = &obj.slots[d];
        let step = 0.05 * p[d].abs().max(0.1);
        p[d] = if p[d] + step <= s.upper { p[d] + step } else { p[d] - step };
        simplex.push(eval(&p)?);
    }
    let mut outcome = Outcome::Exhausted;
    let budget = *iterations + MAX_ITERATIONS;
    while *iterations < budget {
        *iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let size = simplex[1..]
            .iter()
            .map(|v| relative_change(&simplex[0].0, &v.0))
            .fold(0.0, f64::max);
        if size < PARAMETER_TOLERANCE && chi2_settled(worst, best, obj.used.len()) {
            outcome = Outcome::Converged;
            break;
        }
        let mut centroid = simplex[0].0.clone();
        for &d in dims {
            centroid[d] = simplex[..n].iter().map(|v| v.0[d]).sum::<f64>() / n as f64;
        }
        let along = |t: f64| {
            let mut p = centroid.clone();
            for &d in dims {
                p[d] = centroid[d] + t * (simplex[n].0[d] - centroid[d]);
            }
            p
        };
        let reflected = eval(&along(-1.0))?;
        if reflected.1 < simplex[0].1 {
            let expanded = eval(&along(-2.0))?;
            simplex[n] = if expanded.1 < reflected.1 { expanded } else { reflected };
        } else if reflected.1 < simplex[n - 1].1 {
            simplex[n] = reflected;
        } else {
            let contracted = if reflected.1 < simplex[n].1 {
                eval(&along(-0.5))?
            } else {
                eval(&along(0.5))?
            };
            if contracted.1 < simplex[n].1.min(reflected.1) {
                simplex[n] = contracted;
            } else {
                let anchor = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let mut p = anchor.clone();
                    for &d in dims {
                        p[d] = anchor[d] + 0.5 * (v.0[d] - anchor[d]);
                    }
                    *v = eval(&p)?;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    *x = simplex[0].0.clone();
    *chi2 = simplex[0].1;
    Ok(outcome)
}

/// Weighted least-squares fit of `problem.model` to `problem.trace`.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let trace = &problem.trace;
    let model = BinnedModel::new(problem.model, trace.bin_edges(), &problem.irf)?;

    let used: Vec<usize> = (0..trace.len()).filter(|&i| trace.sigma()[i] > 0.0).collect();
    if used.len() < trace.len() {
        log::warn!("{} bins with zero standard error excluded from the fit", trace.len() - used.len());
    }
    let dof = used.len().checked_sub(problem.free.len()).filter(|d| *d > 0).ok_or_else(|| {
        Error::domain(format!(
            "{} usable bins cannot constrain {} free parameters",
            used.len(),
            problem.free.len()
        ))
    })?;
    let weights: Vec<f64> = trace.sigma().iter().map(|s| if *s > 0.0 { 1.0 / s } else { 0.0 }).collect();

    let mut base = Values([0.0; 9]);
    for (&p, &v) in &problem.fixed {
        base.set(p, v);
    }
    let mut slots = Vec::new();
    let mut x = Vec::new();
    for f in &problem.free {
        let initial = match f.initial {
            Some(v) => v,
            None => default_initial(f.param, trace)?.clamp(f.lower, f.upper),
        };
        let scale = initial.abs().max(f.param.typical_scale());
        slots.push(Slot {
            param: f.param,
            scale,
            lower: f.lower / scale,
            upper: f.upper / scale,
        });
        x.push(initial / scale);
    }
    let obj = Objective {
        model,
        base,
        slots,
        data: trace.counts().to_vec(),
        weights,
        used,
    };

    let mut chi2 = obj.chi2(&x)?;
    let mut iterations = 0;
    let mut method = FitMethod::LevenbergMarquardt;
    let mut outcome = levenberg_marquardt(&obj, &mut x, &mut chi2, &mut iterations)?;
    if matches!(outcome, Outcome::IllConditioned | Outcome::Stalled) {
        method = FitMethod::NelderMead;
        let jac = obj.jacobian(&x)?;
        let dims = active_columns(&jac);
        let dims = if dims.is_empty() { (0..x.len()).collect() } else { dims };
        outcome = nelder_mead(&obj, &mut x, &mut chi2, &dims, &mut iterations)?;
    }
    let converged = matches!(outcome, Outcome::Converged);
    let message = match outcome {
        Outcome::Converged => "converged".to_string(),
        Outcome::Exhausted => format!("no convergence within {MAX_ITERATIONS} iterations per stage"),
        Outcome::Stalled => "damping grew without reducing chi-square".to_string(),
        Outcome::IllConditioned => "normal equations ill-conditioned".to_string(),
    };

    let values = obj.values(&x);
    let estimates = problem.model.params().iter().map(|&p| (p, values.get(p))).collect();
    let free: Vec<Param> = obj.slots.iter().map(|s| s.param).collect();
    let reduced_chi2 = chi2 / dof as f64;

    // Curvature at the optimum decides identifiability.
    let jac = obj.jacobian(&x)?;
    let mut identifiable = active_columns(&jac);
    let a_full = jac.transpose() * &jac;
    loop {
        let a = submatrix(&a_full, &identifiable);
        if identifiable.is_empty() || well_conditioned(&a) {
            break;
        }
        let eig = normalized_eigen(&a);
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
        let v = eig.eigenvectors.column(k);
        let worst = (0..v.len())
            .max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()))
            .expect("nonempty");
        identifiable.remove(worst);
    }
    // A parameter whose error at the stated σ exceeds its whole admissible
    // range is not constrained by the data either.
    loop {
        let a = submatrix(&a_full, &identifiable);
        let Some(inv) = a.cholesky().map(|c| c.inverse()) else {
            break;
        };
        let loose = identifiable.iter().enumerate().find(|&(i, &k)| {
            let slot = &obj.slots[k];
            let (lo, hi) = slot.param.domain();
            (hi - lo).is_finite() && inv[(i, i)].sqrt() * slot.scale > hi - lo
        });
        match loose {
            Some((i, _)) => {
                identifiable.remove(i);
            }
            None => break,
        }
    }
    let unidentifiable: Vec<Param> = (0..free.len())
        .filter(|k| !identifiable.contains(k))
        .map(|k| free[k])
        .collect();

    let mut standard_errors = BTreeMap::new();
    let mut covariance = None;
    if converged && !identifiable.is_empty() {
        let a = submatrix(&a_full, &identifiable);
        if let Some(inv) = a.cholesky().map(|c| c.inverse()) {
            let scales: Vec<f64> = identifiable.iter().map(|&k| obj.slots[k].scale).collect();
            let cov = DMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| {
                inv[(i, j)] * reduced_chi2 * scales[i] * scales[j]
            });
            let cov = 0.5 * (&cov + cov.transpose());
            for (i, &k) in identifiable.iter().enumerate() {
                standard_errors.insert(free[k], cov[(i, i)].max(0.0).sqrt());
            }
            covariance = Some(Covariance {
                params: identifiable.iter().map(|&k| free[k]).collect(),
                matrix: cov,
            });
        }
    }

    Ok(FitResult {
        model: problem.model,
        estimates,
        free,
        standard_errors,
        unidentifiable,
        chi2,
        degrees_of_freedom: dof,
        reduced_chi2,
        covariance,
        converged,
        iterations,
        method,
        message,
    })
}

/// Agreement between a trace and a fully specified model.
#[derive(Debug, Clone, PartialEq)]
pub struct Goodness {
    pub chi2: f64,
    /// χ² divided by the number of bins used.
    pub reduced_chi2: f64,
    /// `(data - model) / σ` per bin; NaN for excluded bins.
    pub residuals: Vec<f64>,
    pub used_bins: usize,
}

/// Reduced χ² and standardized residuals of `trace` against the model with
/// parameters `params`. Bins with σ = 0 are excluded.
pub fn goodness(
    trace: &CorrelationTrace,
    kind: ModelKind,
    params: &BTreeMap<Param, f64>,
    irf: &IrfSpec<f64>,
) -> Result<Goodness> {
    let model = binned_model(trace.bin_edges(), kind, params, irf)?;
    let residuals: Vec<f64> = trace
        .counts()
        .iter()
        .zip(trace.sigma())
        .zip(&model)
        .map(|((d, s), m)| if *s > 0.0 { (d - m) / s } else { f64::NAN })
        .collect();
    let used = residuals.iter().filter(|r| !r.is_nan()).count();
    if used < trace.len() {
        log::warn!("{} bins with zero standard error excluded", trace.len() - used);
    }
    if used == 0 {
        return Err(Error::domain("no bins with a positive standard error"));
    }
    let chi2: f64 = residuals.iter().filter(|r| !r.is_nan()).map(|r| r * r).sum();
    Ok(Goodness {
        chi2,
        reduced_chi2: chi2 / used as f64,
        residuals,
        used_bins: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmitterSpec, TraceMetadata};

    fn edges(width: f64, half_bins: usize) -> Vec<f64> {
        (0..=2 * half_bins + 1)
            .map(|k| (k as f64 - half_bins as f64 - 0.5) * width)
            .collect()
    }

    fn synthetic(kind: ModelKind, params: &BTreeMap<Param, f64>, irf: &IrfSpec<f64>, sigma: f64) -> CorrelationTrace {
        let e = edges(100e-12, 600);
        let values = binned_model(&e, kind, params, irf).unwrap();
        let s = vec![sigma; values.len()];
        CorrelationTrace::new(e, values, s, Normalization::PlateauNormalized, TraceMetadata::default()).unwrap()
    }

    fn resonant_params() -> BTreeMap<Param, f64> {
        let e = EmitterSpec::fourier_limited(9.5e-9, 9e5, 1e5).unwrap();
        let e2 = e.with_center_frequency(std::f64::consts::TAU * 300e6).unwrap();
        let sc = InterferenceScenario::new(e, e2, 0.5, IrfSpec::delta()).unwrap();
        scenario_values(&sc, &DiffusionSpec::none())
    }

    #[test]
    fn flat_histogram_normalizes_to_one() {
        let e = edges(100e-12, 600);
        let t = CorrelationTrace::from_counts(e, vec![400.0; 1201], TraceMetadata::default()).unwrap();
        let n = normalize(&t).unwrap();
        assert!(n.counts().iter().all(|&c| c == 1.0));
        assert!(n.sigma().iter().all(|&s| (s - 0.05).abs() < 1e-15));
        assert_eq!(n.normalization(), Normalization::PlateauNormalized);
    }

    #[test]
    fn normalize_rejects_short_or_empty() {
        let t = CorrelationTrace::from_counts(edges(1e-9, 5), vec![1.0; 11], TraceMetadata::default()).unwrap();
        assert!(normalize(&t).is_err());
        let mut c = vec![0.0; 101];
        c[50] = 10.0;
        let t = CorrelationTrace::from_counts(edges(1e-9, 50), c, TraceMetadata::default()).unwrap();
        assert!(matches!(normalize(&t), Err(Error::Domain(_))));
    }

    #[test]
    fn problem_validation() {
        let p = resonant_params();
        let t = synthetic(ModelKind::CrossCorrelation, &p, &IrfSpec::delta(), 0.01);
        let base = FitProblem::new(t.clone(), ModelKind::CrossCorrelation, IrfSpec::delta());
        assert!(fit(&base).is_err());
        let mut full = base.clone();
        for (&k, &v) in &p {
            if k != Param::RmsDetuning {
                full = full.fix(k, v);
            }
        }
        assert!(fit(&full).is_err(), "no free parameter");
        assert!(fit(&full.clone().free(Param::Eta, Some(1.5))).is_err());
        assert!(fit(&full.clone().fix(Param::RmsDetuning, 0.0).free(Param::Eta, None)).is_err());
        assert!(fit(&full.clone().free_within(Param::Eta, None, -0.1, 1.0)).is_err());
        assert!(fit(&full.free(Param::Eta, None)).is_ok());
    }

    #[test]
    fn detuning_guess_finds_beat() {
        let p = resonant_params();
        let t = synthetic(ModelKind::CrossCorrelation, &p, &IrfSpec::default_tac(), 0.01);
        let guess = initial_detuning_guess(&t).unwrap();
        let truth = p[&Param::Detuning];
        assert!((guess - truth).abs() < 0.03 * truth, "{guess} vs {truth}");

        let mut resonant = p.clone();
        resonant.insert(Param::Detuning, 0.0);
        let t = synthetic(ModelKind::CrossCorrelation, &resonant, &IrfSpec::default_tac(), 0.01);
        assert_eq!(initial_detuning_guess(&t).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_autocorrelation_recovered() {
        let truth = BTreeMap::from([
            (Param::Linewidth1, std::f64::consts::TAU * 17e6),
            (Param::SignalFraction1, 0.9),
            (Param::Plateau, 1.0),
        ]);
        let t = synthetic(ModelKind::Autocorrelation, &truth, &IrfSpec::default_tac(), 0.01);
        let problem = FitProblem::new(t, ModelKind::Autocorrelation, IrfSpec::default_tac())
            .free(Param::Linewidth1, Some(2e8))
            .free(Param::SignalFraction1, Some(0.7))
            .free(Param::Plateau, Some(0.95));
        let r = fit(&problem).unwrap();
        assert!(r.converged, "{}", r.message);
        for (p, v) in &truth {
            let got = r.estimate(*p).unwrap();
            assert!(((got - v) / v).abs() < 5e-5, "{p}: {got} vs {v}");
        }
        assert!(r.reduced_chi2 < 1e-10);
        assert!(r.unidentifiable.is_empty());
    }

    #[test]
    fn noiseless_cross_correlation_recovered() {
        let truth = resonant_params();
        let irf = IrfSpec::default_tac();
        let t = synthetic(ModelKind::CrossCorrelation, &truth, &irf, 0.01);
        let problem = FitProblem::new(t, ModelKind::CrossCorrelation, irf);
        let mut problem = truth.iter().fold(problem, |p, (k, v)| {
            if *k == Param::RmsDetuning {
                p
            } else {
                p.fix(*k, *v)
            }
        });
        problem = problem.free(Param::Eta, Some(0.8)).free_auto(Param::Detuning).free(Param::Plateau, Some(1.02));
        let r = fit(&problem).unwrap();
        assert!(r.converged, "{}", r.message);
        for p in [Param::Eta, Param::Detuning, Param::Plateau] {
            let (got, want) = (r.estimate(p).unwrap(), truth[&p]);
            assert!(((got - want) / want).abs() < 1e-5, "{p}: {got} vs {want}");
        }
        let cov = r.covariance.as_ref().unwrap();
        assert_eq!(cov.matrix, cov.matrix.transpose());
        assert!(SymmetricEigen::new(cov.matrix.clone()).eigenvalues.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn far_detuned_eta_is_unidentifiable() {
        let mut truth = resonant_params();
        truth.insert(Param::Detuning, std::f64::consts::TAU * 5e9);
        let irf = IrfSpec::default_tac();
        let t = synthetic(ModelKind::CrossCorrelation, &truth, &irf, 0.01);
        let mut problem = FitProblem::new(t, ModelKind::CrossCorrelation, irf);
        for (k, v) in &truth {
            if *k != Param::RmsDetuning {
                problem = problem.fix(*k, *v);
            }
        }
        let r = fit(&problem.free(Param::Eta, Some(0.3)).free(Param::Plateau, Some(1.0))).unwrap();
        assert!(r.is_unidentifiable(Param::Eta));
        assert!(!r.is_unidentifiable(Param::Plateau));
        assert!(r.standard_error(Param::Eta).is_none());
        assert!(r.standard_error(Param::Plateau).is_some());
    }

    #[test]
    fn goodness_of_exact_model_is_zero() {
        let p = resonant_params();
        let irf = IrfSpec::default_tac();
        let t = synthetic(ModelKind::CrossCorrelation, &p, &irf, 0.01);
        let g = goodness(&t, ModelKind::CrossCorrelation, &p, &irf).unwrap();
        assert_eq!(g.chi2, 0.0);
        assert_eq!(g.used_bins, t.len());

        let mut wrong = p.clone();
        let gamma = p[&Param::Linewidth1];
        *wrong.get_mut(&Param::Detuning).unwrap() += 3.0 * gamma;
        let g = goodness(&t, ModelKind::CrossCorrelation, &wrong, &irf).unwrap();
        assert!(g.reduced_chi2 > 2.0);
    }

    #[test]
    fn binned_model_reaches_plateau() {
        let p = resonant_params();
        let e = edges(200e-12, 300);
        let v = binned_model(&e, ModelKind::CrossCorrelation, &p, &IrfSpec::default_tac()).unwrap();
        assert!((v[0] - 1.0).abs() < 2e-3);
        assert!((v[600] - 1.0).abs() < 2e-3);
        assert!(v[300] < 0.9);
    }
}
