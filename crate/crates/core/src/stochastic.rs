//! Seeded Monte Carlo photon streams.
//!
//! The pipeline mirrors the experiment: each emitter produces a stream of
//! detection events ([`emit_stream`]), the two streams meet on a 50-50 beam
//! splitter ([`interfere_and_route`]), each output is jittered by its
//! detector ([`apply_detector`]) and the two channels are correlated
//! ([`start_stop_histogram`]). [`simulate_cross`] and [`simulate_auto`] run
//! the whole chain from one seed.
//!
//! Timestamps are integer picoseconds. All randomness comes from ChaCha8
//! generators whose seeds are derived from one master seed with
//! [`derive_seed`], so runs are bit-reproducible.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;

use crate::analytic::resolve_diffusion;
use crate::error::{Error, Result};
use crate::model::{
    CorrelationTrace, DiffusionProcess, DiffusionSpec, EmitterSpec, InterferenceScenario, IrfSpec, TraceMetadata,
};

const PS_PER_S: f64 = 1e12;

/// Trajectory samples per correlation time of the diffusion process.
pub const SAMPLES_PER_CORRELATION_TIME: f64 = 8.0;
const MAX_TRAJECTORY_SAMPLES: usize = 1 << 28;

/// SplitMix64 finalizer over `master` and a stream label. Distinct labels
/// give statistically independent sub-seeds.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn to_ps(t: f64) -> u64 {
    (t * PS_PER_S).floor() as u64
}

fn ps_to_s(t: u64) -> f64 {
    t as f64 / PS_PER_S
}

/// Detuning of one emitter sampled on a uniform grid.
///
/// Between samples the detuning is held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrajectory {
    dt: f64,
    detuning: Vec<f64>,
    bandwidth: f64,
    rms: f64,
}

impl FrequencyTrajectory {
    pub fn zero(duration: f64) -> Self {
        Self {
            dt: duration.max(f64::MIN_POSITIVE),
            detuning: vec![0.0, 0.0],
            bandwidth: 0.0,
            rms: 0.0,
        }
    }

    /// Sample spacing in seconds.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Detuning samples in rad/s; sample `i` is taken at `i * dt`.
    pub fn detuning(&self) -> &[f64] {
        &self.detuning
    }

    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.detuning.len()).map(|i| i as f64 * self.dt)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn rms(&self) -> f64 {
        self.rms
    }

    pub fn duration(&self) -> f64 {
        (self.detuning.len() - 1) as f64 * self.dt
    }

    /// Detuning in rad/s at time `t` (seconds), clamped to the record.
    pub fn detuning_at(&self, t: f64) -> f64 {
        let i = ((t / self.dt).floor().max(0.0) as usize).min(self.detuning.len() - 1);
        self.detuning[i]
    }
}

/// Stationary Gauss-Markov detuning with standard deviation
/// `spec.rms_detuning()` and correlation time `1 / (2π · bandwidth)`,
/// sampled exactly on a grid of [`SAMPLES_PER_CORRELATION_TIME`] points per
/// correlation time.
///
/// Runs shorter than 100 correlation times are generated but logged as
/// insufficient for stationary statistics.
pub fn frequency_trajectory(spec: &DiffusionSpec<f64>, duration: f64, seed: u64) -> Result<FrequencyTrajectory> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!("trajectory duration must be positive, got {duration}")));
    }
    if spec.process() == DiffusionProcess::None {
        return Ok(FrequencyTrajectory::zero(duration));
    }
    if spec.target_fwhm().is_some() && spec.rms_detuning() == 0.0 {
        return Err(Error::domain("diffusion target width has not been resolved to an amplitude"));
    }
    let bandwidth = spec.bandwidth();
    if duration * bandwidth < 100.0 {
        log::warn!(
            "trajectory spans only {:.1} correlation bandwidth periods; stationary statistics will be poor",
            duration * bandwidth
        );
    }
    let tc = spec.correlation_time();
    let dt = tc / SAMPLES_PER_CORRELATION_TIME;
    let n = (duration / dt).ceil() as usize + 1;
    if n > MAX_TRAJECTORY_SAMPLES {
        return Err(Error::precision(format!(
            "trajectory would need {n} samples; shorten the run or raise the bandwidth"
        )));
    }
    let rms = spec.rms_detuning();
    let mut detuning = Vec::with_capacity(n);
    if rms == 0.0 {
        detuning.resize(n, 0.0);
    } else {
        let mut rng = rng(seed);
        let a = (-dt / tc).exp();
        let kick = rms * (1.0 - a * a).sqrt();
        let mut x = rms * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..n {
            detuning.push(x);
            x = a * x + kick * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(FrequencyTrajectory {
        dt,
        detuning,
        bandwidth,
        rms,
    })
}

/// One detected photon before the beam splitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonRecord {
    pub emit_time_ps: u64,
    pub emitter_id: u8,
    /// Accumulated optical phase in the rotating frame at emission, modulo 2π.
    pub phase_ref: f64,
    pub is_background: bool,
}

/// Parameters of the generative emission process beyond the emitter itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmissionModel {
    /// Photon emission rate before detection losses (1/s). Defaults to the
    /// largest rate the model accepts, one emission per ten lifetimes.
    pub emission_rate: Option<f64>,
}

/// The detection events of one emitter together with what is needed to
/// evaluate its optical phase between any two times.
#[derive(Debug, Clone)]
pub struct EmitterStream {
    pub emitter_id: u8,
    pub records: Vec<PhotonRecord>,
    pub duration: f64,
    pub seed: u64,
    center_frequency: f64,
    linewidth: f64,
    trajectory: Option<Arc<FrequencyTrajectory>>,
}

impl EmitterStream {
    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn linewidth(&self) -> f64 {
        self.linewidth
    }

    pub fn trajectory(&self) -> Option<&FrequencyTrajectory> {
        self.trajectory.as_deref()
    }

    fn detuning_at(&self, t: f64) -> f64 {
        self.trajectory.as_ref().map_or(0.0, |tr| tr.detuning_at(t))
    }

    /// Phase accumulated between `a` and `b` (seconds), with the diffusion
    /// contribution integrated by the trapezoid rule over the two end points.
    pub fn phase_between(&self, a: f64, b: f64) -> f64 {
        let span = b - a;
        self.center_frequency * span + 0.5 * (self.detuning_at(a) + self.detuning_at(b)) * span
    }

    pub fn signal_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_background).count()
    }
}

/// Rates of the two exponential stages (re-excitation, decay) whose renewal
/// process emits at `emission_rate` with `g2(τ) = 1 - exp(-γ|τ|)`.
///
/// For stage rates `r` and `Γ` the renewal density is
/// `rΓ/(r+Γ) · (1 - exp(-(r+Γ)τ))`, so `r + Γ = γ` and `rΓ = R γ`.
fn renewal_stage_rates(linewidth: f64, emission_rate: f64) -> (f64, f64) {
    let root = (linewidth * linewidth - 4.0 * emission_rate * linewidth).max(0.0).sqrt();
    let pump = 0.5 * (linewidth - root);
    let decay = 0.5 * (linewidth + root);
    (pump, decay)
}

/// Generate the detection events of one emitter over `[0, duration)`.
///
/// Signal photons come from a two-stage renewal process (exponential
/// re-excitation followed by exponential decay) with rates chosen so that the
/// background-free autocorrelation is exactly `1 - exp(-γ|τ|)`, Bernoulli
/// thinned to the detected rate `S`. Background is an independent Poisson
/// process at rate `B`. The model is only valid far from saturation, so an
/// emission rate above one photon per ten lifetimes is a configuration error.
pub fn emit_stream(
    emitter_id: u8,
    emitter: &EmitterSpec<f64>,
    trajectory: Option<Arc<FrequencyTrajectory>>,
    duration: f64,
    seed: u64,
) -> Result<EmitterStream> {
    emit_stream_with(emitter_id, emitter, trajectory, duration, seed, &EmissionModel::default())
}

pub fn emit_stream_with(
    emitter_id: u8,
    emitter: &EmitterSpec<f64>,
    trajectory: Option<Arc<FrequencyTrajectory>>,
    duration: f64,
    seed: u64,
    model: &EmissionModel,
) -> Result<EmitterStream> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!("stream duration must be positive, got {duration}")));
    }
    let max_rate = 1.0 / (10.0 * emitter.lifetime());
    let emission_rate = model.emission_rate.unwrap_or(max_rate);
    if !(emission_rate > 0.0) || emission_rate > max_rate * (1.0 + 1e-12) {
        return Err(Error::configuration(format!(
            "emission rate {emission_rate:.4e}/s implies a mean interval below ten lifetimes (limit {max_rate:.4e}/s)"
        )));
    }
    let signal_rate = emitter.signal_rate();
    if signal_rate > emission_rate {
        return Err(Error::configuration(format!(
            "detected signal rate {signal_rate:.4e}/s exceeds the emission rate {emission_rate:.4e}/s"
        )));
    }
    let duration_ps = to_ps(duration);
    let mut rng = rng(seed);
    let mut times: Vec<(f64, bool)> = Vec::new();

    if signal_rate > 0.0 {
        let (pump, decay) = renewal_stage_rates(emitter.linewidth(), emission_rate);
        let excite = Exp::new(pump).map_err(|e| Error::configuration(e.to_string()))?;
        let relax = Exp::new(decay).map_err(|e| Error::configuration(e.to_string()))?;
        let keep = signal_rate / emission_rate;
        // Start well before t = 0 so the recorded window is stationary.
        let mut t = -30.0 / pump;
        loop {
            t += excite.sample(&mut rng) + relax.sample(&mut rng);
            if t >= duration {
                break;
            }
            if rng.random::<f64>() < keep && t >= 0.0 {
                times.push((t, false));
            }
        }
    }
    let background_rate = emitter.background_rate();
    if background_rate > 0.0 {
        let gap = Exp::new(background_rate).map_err(|e| Error::configuration(e.to_string()))?;
        let mut t = gap.sample(&mut rng);
        while t < duration {
            times.push((t, true));
            t += gap.sample(&mut rng);
        }
    }
    times.sort_by(|a, b| a.0.total_cmp(&b.0));

    let omega = emitter.center_frequency();
    let mut phase_cursor = PhaseAccumulator::new(trajectory.as_deref());
    let mut records = Vec::with_capacity(times.len());
    let mut last: Option<u64> = None;
    for (t, is_background) in times {
        let mut ps = to_ps(t);
        if let Some(prev) = last {
            if ps <= prev {
                ps = prev + 1;
            }
        }
        if ps >= duration_ps {
            break;
        }
        last = Some(ps);
        let phase = if is_background {
            0.0
        } else {
            (omega * t + phase_cursor.advance_to(t)).rem_euclid(std::f64::consts::TAU)
        };
        records.push(PhotonRecord {
            emit_time_ps: ps,
            emitter_id,
            phase_ref: phase,
            is_background,
        });
    }

    Ok(EmitterStream {
        emitter_id,
        records,
        duration,
        seed,
        center_frequency: omega,
        linewidth: emitter.linewidth(),
        trajectory,
    })
}

/// Running integral of a held trajectory, advanced monotonically in time.
struct PhaseAccumulator<'a> {
    trajectory: Option<&'a FrequencyTrajectory>,
    cell: usize,
    cell_start_phase: f64,
}

impl<'a> PhaseAccumulator<'a> {
    fn new(trajectory: Option<&'a FrequencyTrajectory>) -> Self {
        Self {
            trajectory,
            cell: 0,
            cell_start_phase: 0.0,
        }
    }

    fn advance_to(&mut self, t: f64) -> f64 {
        let Some(tr) = self.trajectory else { return 0.0 };
        let last_cell = tr.detuning.len() - 1;
        let target = ((t / tr.dt).floor().max(0.0) as usize).min(last_cell);
        while self.cell < target {
            self.cell_start_phase += tr.detuning[self.cell] * tr.dt;
            self.cell += 1;
        }
        self.cell_start_phase + tr.detuning[self.cell] * (t - self.cell as f64 * tr.dt)
    }
}

/// Detection events of one detector channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampStream {
    pub channel: u8,
    /// Sorted, unique, in picoseconds.
    pub times: Vec<u64>,
    pub duration_ps: u64,
    pub seed: u64,
}

impl TimestampStream {
    pub fn new(channel: u8, mut times: Vec<u64>, duration_ps: u64, seed: u64) -> Self {
        times.sort_unstable();
        make_unique(&mut times);
        Self {
            channel,
            times,
            duration_ps,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        ps_to_s(self.duration_ps)
    }
}

// Coincident picosecond stamps on one channel are pushed apart by 1 ps.
fn make_unique(times: &mut [u64]) {
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            times[i] = times[i - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingOptions {
    /// Cross-emitter photons closer than this many coherence times
    /// `2 / (γ₁ + γ₂)` are routed as an interfering pair.
    pub window_coherence_times: f64,
}

impl Default for RoutingOptions {
    fn default() -> Self {
        Self {
            window_coherence_times: 10.0,
        }
    }
}

/// Route both streams through the beam splitter onto channels 3 and 4.
///
/// Signal photons of emitter 1 are paired greedily, nearest first, with
/// signal photons of emitter 2 inside the interference window. A pair with
/// separation `τ` leaves through different ports with probability
/// `½ (1 - η |g1₁₁(τ)||g1₂₂(τ)| cos Δφ)`, where `Δφ` is the accumulated phase
/// difference of the two emitters over `τ`. All other photons pick a port
/// with probability ½. The returned streams together hold every input photon.
pub fn interfere_and_route(
    stream_1: &EmitterStream,
    stream_2: &EmitterStream,
    scenario: &InterferenceScenario<f64>,
    seed: u64,
) -> Result<(TimestampStream, TimestampStream)> {
    interfere_and_route_with(stream_1, stream_2, scenario, seed, &RoutingOptions::default())
}

pub fn interfere_and_route_with(
    stream_1: &EmitterStream,
    stream_2: &EmitterStream,
    scenario: &InterferenceScenario<f64>,
    seed: u64,
    options: &RoutingOptions,
) -> Result<(TimestampStream, TimestampStream)> {
    if (stream_1.duration - stream_2.duration).abs() > 1e-9 * stream_1.duration.max(stream_2.duration) {
        return Err(Error::domain(format!(
            "streams cover different durations ({} s and {} s)",
            stream_1.duration, stream_2.duration
        )));
    }
    if !(options.window_coherence_times > 0.0) {
        return Err(Error::domain("interference window must be positive"));
    }
    let eta = scenario.eta();
    let decay = 0.5 * (stream_1.linewidth + stream_2.linewidth);
    let window_ps = to_ps(options.window_coherence_times / decay);

    let partner = pair_nearest(&stream_1.records, &stream_2.records, window_ps);

    let mut rng = rng(seed);
    let n1 = stream_1.records.len();
    let total = n1 + stream_2.records.len();
    let mut port: Vec<Option<bool>> = vec![None; total];
    let mut ch3 = Vec::with_capacity(total / 2 + 1);
    let mut ch4 = Vec::with_capacity(total / 2 + 1);

    // Merge walk in time order; ties put emitter 1 first.
    let (mut i, mut j) = (0, 0);
    while i < n1 || j < stream_2.records.len() {
        let take_first = j >= stream_2.records.len()
            || (i < n1 && stream_1.records[i].emit_time_ps <= stream_2.records[j].emit_time_ps);
        let (idx, time) = if take_first {
            i += 1;
            (i - 1, stream_1.records[i - 1].emit_time_ps)
        } else {
            j += 1;
            (n1 + j - 1, stream_2.records[j - 1].emit_time_ps)
        };
        let to_three = match port[idx] {
            Some(p) => p,
            None => {
                let choice = rng.random::<bool>();
                match partner[idx] {
                    Some(other) => {
                        let (a, b) = if idx < n1 { (idx, other) } else { (other, idx) };
                        let t1 = ps_to_s(stream_1.records[a].emit_time_ps);
                        let t2 = ps_to_s(stream_2.records[b - n1].emit_time_ps);
                        let tau = t2 - t1;
                        let dphi = stream_1.phase_between(t1, t2) - stream_2.phase_between(t1, t2);
                        let visibility = (-decay * tau.abs()).exp();
                        let split = 0.5 * (1.0 - eta * visibility * dphi.cos());
                        let separate = rng.random::<f64>() < split;
                        port[other] = Some(if separate { !choice } else { choice });
                        choice
                    }
                    None => choice,
                }
            }
        };
        port[idx] = Some(to_three);
        if to_three {
            ch3.push(time);
        } else {
            ch4.push(time);
        }
    }
    make_unique(&mut ch3);
    make_unique(&mut ch4);
    let duration_ps = to_ps(stream_1.duration);
    Ok((
        TimestampStream {
            channel: 3,
            times: ch3,
            duration_ps,
            seed,
        },
        TimestampStream {
            channel: 4,
            times: ch4,
            duration_ps,
            seed,
        },
    ))
}

/// Greedy nearest-first matching of signal photons across the two streams.
/// Returns, per photon (stream 1 indices first, then stream 2 offset by
/// `first.len()`), the index of its partner.
fn pair_nearest(first: &[PhotonRecord], second: &[PhotonRecord], window_ps: u64) -> Vec<Option<usize>> {
    let n1 = first.len();
    let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
    let mut lo = 0;
    for (a, ra) in first.iter().enumerate() {
        if ra.is_background {
            continue;
        }
        let start = ra.emit_time_ps.saturating_sub(window_ps);
        while lo < second.len() && second[lo].emit_time_ps < start {
            lo += 1;
        }
        for (b, rb) in second.iter().enumerate().skip(lo) {
            if rb.emit_time_ps > ra.emit_time_ps + window_ps {
                break;
            }
            if !rb.is_background {
                candidates.push((ra.emit_time_ps.abs_diff(rb.emit_time_ps), a, b));
            }
        }
    }
    candidates.sort_unstable();
    let mut partner = vec![None; n1 + second.len()];
    for (_, a, b) in candidates {
        if partner[a].is_none() && partner[n1 + b].is_none() {
            partner[a] = Some(n1 + b);
            partner[n1 + b] = Some(a);
        }
    }
    partner
}

/// Apply detector timing jitter (a draw from `irf` per event) and a
/// non-paralyzable dead time. Events jittered outside `[0, duration)` are
/// lost.
pub fn apply_detector(stream: &TimestampStream, irf: &IrfSpec<f64>, deadtime: f64, seed: u64) -> Result<TimestampStream> {
    if !(deadtime >= 0.0) || !deadtime.is_finite() {
        return Err(Error::domain(format!("dead time must be >= 0, got {deadtime}")));
    }
    let mut times: Vec<u64> = if irf.is_delta() {
        stream.times.clone()
    } else {
        let mut rng = rng(seed);
        let jitter = Normal::new(0.0, irf.sigma() * PS_PER_S).map_err(|e| Error::domain(e.to_string()))?;
        stream
            .times
            .iter()
            .filter_map(|&t| {
                let shifted = t as f64 + jitter.sample(&mut rng).round();
                (shifted >= 0.0 && shifted < stream.duration_ps as f64).then_some(shifted as u64)
            })
            .collect()
    };
    times.sort_unstable();
    make_unique(&mut times);
    let dead_ps = (deadtime * PS_PER_S).round() as u64;
    if dead_ps > 0 {
        let mut kept = Vec::with_capacity(times.len());
        for t in times {
            match kept.last() {
                Some(&prev) if t - prev < dead_ps => {}
                _ => kept.push(t),
            }
        }
        times = kept;
    }
    Ok(TimestampStream {
        channel: stream.channel,
        times,
        duration_ps: stream.duration_ps,
        seed: stream.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrelatorMode {
    /// Time-to-amplitude converter emulation: each start is paired with the
    /// next stop (positive delays) and the previous stop (negative delays).
    StartStop,
    /// Every stop within range of every start.
    MultiStop,
}

/// Binning of a delay histogram: `2K + 1` bins of width `bin_width`
/// centered on `k · bin_width`, `K = round(half_range / bin_width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBins {
    width_ps: u64,
    half_bins: u64,
}

impl HistogramBins {
    pub fn new(bin_width: f64, half_range: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::domain(format!("bin width must be positive, got {bin_width}")));
        }
        let width_ps = (bin_width * PS_PER_S).round() as u64;
        if width_ps == 0 {
            return Err(Error::domain("bin width is below the 1 ps timestamp resolution"));
        }
        if !(half_range >= 50e-9) {
            return Err(Error::domain(format!(
                "histogram range must cover at least ±50 ns, got ±{half_range} s"
            )));
        }
        let half_bins = (half_range / bin_width).round() as u64;
        Ok(Self { width_ps, half_bins })
    }

    pub fn len(&self) -> usize {
        (2 * self.half_bins + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin_width(&self) -> f64 {
        ps_to_s(self.width_ps)
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..=self.len())
            .map(|k| (k as f64 - self.half_bins as f64 - 0.5) * w)
            .collect()
    }

    fn reach_ps(&self) -> i64 {
        // delays strictly below (K + ½) w
        ((2 * self.half_bins + 1) * self.width_ps).div_ceil(2) as i64
    }

    fn index(&self, delay_ps: i64) -> Option<usize> {
        let w = self.width_ps as i64;
        let shifted = 2 * delay_ps + (2 * self.half_bins as i64 + 1) * w;
        if shifted < 0 {
            return None;
        }
        let idx = shifted.div_euclid(2 * w) as usize;
        (idx < self.len()).then_some(idx)
    }
}

/// Histogram the delays `stop - start` between two channels.
pub fn start_stop_histogram(
    start: &TimestampStream,
    stop: &TimestampStream,
    bin_width: f64,
    half_range: f64,
    mode: CorrelatorMode,
) -> Result<CorrelationTrace> {
    if start.is_empty() || stop.is_empty() {
        return Err(Error::domain("cannot correlate an empty timestamp stream"));
    }
    let bins = HistogramBins::new(bin_width, half_range)?;
    let counts = match mode {
        CorrelatorMode::MultiStop => multi_stop_counts(&start.times, &stop.times, &bins, false),
        CorrelatorMode::StartStop => start_stop_counts(&start.times, &stop.times, &bins),
    };
    let metadata = TraceMetadata {
        scenario_hash: String::new(),
        seed: start.seed,
        total_events: (start.len() + stop.len()) as u64,
    };
    CorrelationTrace::from_counts(bins.edges(), counts, metadata)
}

/// Multi-stop autocorrelation of one stream with itself, excluding each
/// event's pairing with itself.
pub fn autocorrelation_histogram(stream: &TimestampStream, bin_width: f64, half_range: f64) -> Result<CorrelationTrace> {
    if stream.is_empty() {
        return Err(Error::domain("cannot correlate an empty timestamp stream"));
    }
    let bins = HistogramBins::new(bin_width, half_range)?;
    let counts = multi_stop_counts(&stream.times, &stream.times, &bins, true);
    let metadata = TraceMetadata {
        scenario_hash: String::new(),
        seed: stream.seed,
        total_events: stream.len() as u64,
    };
    CorrelationTrace::from_counts(bins.edges(), counts, metadata)
}

fn multi_stop_counts(start: &[u64], stop: &[u64], bins: &HistogramBins, skip_self: bool) -> Vec<f64> {
    let mut counts = vec![0.0; bins.len()];
    let reach = bins.reach_ps();
    let mut lo = 0;
    for (i, &t) in start.iter().enumerate() {
        let t = t as i64;
        while lo < stop.len() && (stop[lo] as i64) <= t - reach {
            lo += 1;
        }
        for (j, &s) in stop.iter().enumerate().skip(lo) {
            let d = s as i64 - t;
            if d >= reach {
                break;
            }
            if skip_self && i == j {
                continue;
            }
            if let Some(k) = bins.index(d) {
                counts[k] += 1.0;
            }
        }
    }
    counts
}

fn start_stop_counts(start: &[u64], stop: &[u64], bins: &HistogramBins) -> Vec<f64> {
    let mut counts = vec![0.0; bins.len()];
    let mut next = 0;
    for &t in start {
        while next < stop.len() && stop[next] < t {
            next += 1;
        }
        if let Some(&s) = stop.get(next) {
            if let Some(k) = bins.index(s as i64 - t as i64) {
                counts[k] += 1.0;
            }
        }
        if next > 0 {
            if let Some(k) = bins.index(stop[next - 1] as i64 - t as i64) {
                counts[k] += 1.0;
            }
        }
    }
    counts
}

/// Settings for a full simulated measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// seconds
    pub duration: f64,
    pub seed: u64,
    /// seconds
    pub bin_width: f64,
    /// seconds
    pub half_range: f64,
    pub mode: CorrelatorMode,
    /// seconds, per channel
    pub deadtime: f64,
    /// Apply the scenario's detector response as per-channel jitter.
    pub apply_irf: bool,
    pub routing: RoutingOptions,
    pub emission: EmissionModel,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            duration: 1.0,
            seed: 0,
            bin_width: 100e-12,
            half_range: 60e-9,
            mode: CorrelatorMode::MultiStop,
            deadtime: 0.0,
            apply_irf: true,
            routing: RoutingOptions::default(),
            emission: EmissionModel::default(),
        }
    }
}

mod labels {
    pub const TRAJECTORY: u64 = 1;
    pub const EMITTER_1: u64 = 2;
    pub const EMITTER_2: u64 = 3;
    pub const ROUTING: u64 = 4;
    pub const DETECTOR_3: u64 = 5;
    pub const DETECTOR_4: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct McRun {
    pub channel_3: TimestampStream,
    pub channel_4: TimestampStream,
    pub trace: CorrelationTrace,
    /// Photons routed onto the two channels before detection.
    pub routed: usize,
}

/// Simulate the two-emitter interference measurement. `diffusion` acts on
/// emitter 1; a target width is resolved to an amplitude first.
///
/// Each channel is jittered with the per-channel share of the scenario's
/// detector response so that the coincidence histogram sees the full
/// response.
pub fn simulate_cross(
    scenario: &InterferenceScenario<f64>,
    diffusion: &DiffusionSpec<f64>,
    config: &McConfig,
) -> Result<McRun> {
    let seed = config.seed;
    let trajectory = match diffusion.process() {
        DiffusionProcess::None => None,
        DiffusionProcess::BandLimitedGaussian => {
            let resolved = resolve_diffusion(diffusion, scenario.emitter_1())?;
            Some(Arc::new(frequency_trajectory(
                &resolved,
                config.duration,
                derive_seed(seed, labels::TRAJECTORY),
            )?))
        }
    };
    let s1 = emit_stream_with(
        1,
        scenario.emitter_1(),
        trajectory,
        config.duration,
        derive_seed(seed, labels::EMITTER_1),
        &config.emission,
    )?;
    let s2 = emit_stream_with(
        2,
        scenario.emitter_2(),
        None,
        config.duration,
        derive_seed(seed, labels::EMITTER_2),
        &config.emission,
    )?;
    let (ch3, ch4) = interfere_and_route_with(&s1, &s2, scenario, derive_seed(seed, labels::ROUTING), &config.routing)?;
    let routed = ch3.len() + ch4.len();
    let irf = if config.apply_irf {
        scenario.detector_irf().per_channel()
    } else {
        IrfSpec::delta()
    };
    let ch3 = apply_detector(&ch3, &irf, config.deadtime, derive_seed(seed, labels::DETECTOR_3))?;
    let ch4 = apply_detector(&ch4, &irf, config.deadtime, derive_seed(seed, labels::DETECTOR_4))?;
    let mut trace = start_stop_histogram(&ch3, &ch4, config.bin_width, config.half_range, config.mode)?;
    trace.metadata.seed = seed;
    Ok(McRun {
        channel_3: ch3,
        channel_4: ch4,
        trace,
        routed,
    })
}

/// Simulate a single-emitter autocorrelation measurement (the other
/// beam-splitter input blocked), correlating the full detected stream with
/// itself.
pub fn simulate_auto(emitter: &EmitterSpec<f64>, irf: &IrfSpec<f64>, config: &McConfig) -> Result<CorrelationTrace> {
    let stream = emit_stream_with(
        1,
        emitter,
        None,
        config.duration,
        derive_seed(config.seed, labels::EMITTER_1),
        &config.emission,
    )?;
    let times = stream.records.iter().map(|r| r.emit_time_ps).collect();
    let raw = TimestampStream::new(1, times, to_ps(config.duration), config.seed);
    let jitter = if config.apply_irf { irf.per_channel() } else { IrfSpec::delta() };
    // Jitter each event once per "detector": correlate two independently
    // jittered copies, matching a split-beam measurement of the same photons.
    let detected = apply_detector(&raw, &jitter, config.deadtime, derive_seed(config.seed, labels::DETECTOR_3))?;
    let mut trace = if jitter.is_delta() {
        autocorrelation_histogram(&detected, config.bin_width, config.half_range)?
    } else {
        let other = apply_detector(&raw, &jitter, config.deadtime, derive_seed(config.seed, labels::DETECTOR_4))?;
        let raw_trace = start_stop_histogram(&detected, &other, config.bin_width, config.half_range, config.mode)?;
        remove_self_pairs(raw_trace, &detected, &jitter, &HistogramBins::new(config.bin_width, config.half_range)?)
    };
    trace.metadata.seed = config.seed;
    Ok(trace)
}

// Jittered copies of the same photon would otherwise form a spurious
// zero-delay peak; subtract its expectation (N photons spread over the
// two-detector kernel).
fn remove_self_pairs(trace: CorrelationTrace, stream: &TimestampStream, jitter: &IrfSpec<f64>, bins: &HistogramBins) -> CorrelationTrace {
    let n = stream.len() as f64;
    let sigma = jitter.sigma() * std::f64::consts::SQRT_2;
    let edges = bins.edges();
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf(x / (sigma * std::f64::consts::SQRT_2)));
    let counts: Vec<f64> = trace
        .counts()
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, e)| (c - n * (cdf(e[1]) - cdf(e[0]))).max(0.0))
        .collect();
    CorrelationTrace::from_counts(edges, counts, trace.metadata.clone()).expect("same bins")
}

/// Run `n` independent repetitions in parallel; repetition `i` receives the
/// seed `derive_seed(master_seed, 1000 + i)`.
pub fn repetitions<R: Send>(n: usize, master_seed: u64, run: impl Fn(u64) -> R + Sync) -> Vec<R> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| run(derive_seed(master_seed, 1000 + i)))
        .collect()
}
