//! Statistical checks of the Monte Carlo engine against the closed forms.

use std::f64::consts::TAU;

use tpqi::analytic::{cross_correlation_g34, measured_autocorrelation};
use tpqi::estimate::normalize;
use tpqi::model::{DiffusionSpec, EmitterSpec, InterferenceScenario, IrfSpec};
use tpqi::stochastic::{
    emit_stream, frequency_trajectory, simulate_auto, simulate_cross, CorrelatorMode, McConfig,
};
use tpqi::CorrelationTrace;

const LIFETIME: f64 = 9.5e-9;

fn emitter(signal: f64, background: f64, detuning_hz: f64) -> EmitterSpec<f64> {
    EmitterSpec::fourier_limited(LIFETIME, signal, background)
        .unwrap()
        .with_center_frequency(TAU * detuning_hz)
        .unwrap()
}

/// Mean of the normalized trace over the bins whose centers lie within
/// `half_width` of `tau`, with its standard error.
fn window_mean(trace: &CorrelationTrace, tau: f64, half_width: f64) -> (f64, f64) {
    let (mut sum, mut var, mut n) = (0.0, 0.0, 0.0);
    for ((c, v), s) in trace.bin_centers().iter().zip(trace.counts()).zip(trace.sigma()) {
        if (c - tau).abs() <= half_width {
            sum += v;
            var += s * s;
            n += 1.0;
        }
    }
    (sum / n, var.sqrt() / n)
}

#[test]
fn trajectory_matches_requested_statistics() {
    let rms = TAU * 300e6;
    let spec = DiffusionSpec::band_limited(1e6, rms).unwrap();
    let tr = frequency_trajectory(&spec, 2e-3, 11).unwrap();
    let x = tr.detuning();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((sd / rms - 1.0).abs() < 0.05, "rms {sd} vs {rms}");

    // autocorrelation at one correlation time is e^{-1}
    let lag = 8;
    let acf = x.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum::<f64>()
        / (x.len() - lag) as f64
        / (sd * sd);
    assert!((acf - (-1.0f64).exp()).abs() < 0.2 * (-1.0f64).exp(), "acf {acf}");
}

#[test]
fn detected_rate_matches_signal_plus_background() {
    let e = emitter(2e5, 5e4, 0.0);
    let s = emit_stream(1, &e, None, 1.0, 3).unwrap();
    let n = s.records.len() as f64;
    assert!((n / 2.5e5 - 1.0).abs() < 0.02, "{n}");
    let signal = s.signal_count() as f64;
    assert!((signal / 2e5 - 1.0).abs() < 0.02, "{signal}");
}

#[test]
fn antibunching_dip_with_background() {
    let e = emitter(9e5, 1e5, 0.0);
    let config = McConfig {
        duration: 2.0,
        seed: 5,
        ..McConfig::default()
    };
    let trace = normalize(&simulate_auto(&e, &IrfSpec::delta(), &config).unwrap()).unwrap();
    let (g0, err) = window_mean(&trace, 0.0, 0.3e-9);
    let expected = measured_autocorrelation(&e, 0.0);
    assert!((expected - 0.19).abs() < 1e-12);
    assert!((g0 - expected).abs() < 5.0 * err + 0.01, "{g0} ± {err}");
    let (plateau, _) = window_mean(&trace, 40e-9, 5e-9);
    assert!((plateau - 1.0).abs() < 0.02);
}

#[test]
fn distinguishable_photons_give_half() {
    let sc = InterferenceScenario::new(emitter(2e5, 0.0, 0.0), emitter(2e5, 0.0, 0.0), 0.0, IrfSpec::delta()).unwrap();
    let config = McConfig {
        duration: 4.0,
        seed: 8,
        ..McConfig::default()
    };
    let run = simulate_cross(&sc, &DiffusionSpec::none(), &config).unwrap();
    let trace = normalize(&run.trace).unwrap();
    let (g0, err) = window_mean(&trace, 0.0, 0.3e-9);
    assert!((g0 - 0.5).abs() < 5.0 * err, "{g0} ± {err}");
}

#[test]
fn partial_visibility_dip_matches_closed_form() {
    let sc = InterferenceScenario::new(emitter(9e5, 1e5, 0.0), emitter(9e5, 1e5, 0.0), 0.5, IrfSpec::delta()).unwrap();
    let config = McConfig {
        duration: 1.0,
        seed: 21,
        ..McConfig::default()
    };
    let trace = normalize(&simulate_cross(&sc, &DiffusionSpec::none(), &config).unwrap().trace).unwrap();
    for tau in [0.0, 3e-9, -8e-9] {
        let (g, err) = window_mean(&trace, tau, 0.3e-9);
        let want = cross_correlation_g34(&sc, tau);
        assert!((g - want).abs() < 5.0 * err + 0.005, "τ = {tau}: {g} ± {err} vs {want}");
    }
}

#[test]
fn quantum_beat_period() {
    let sc = InterferenceScenario::new(emitter(3e5, 0.0, 300e6), emitter(3e5, 0.0, 0.0), 1.0, IrfSpec::delta()).unwrap();
    let config = McConfig {
        duration: 4.0,
        seed: 4,
        ..McConfig::default()
    };
    let trace = normalize(&simulate_cross(&sc, &DiffusionSpec::none(), &config).unwrap().trace).unwrap();
    // cos(Δωτ) has a maximum of the dip (a minimum of 𝒢₃₄) at τ = 0 and a
    // maximum of 𝒢₃₄ half a period later.
    let half_period = 0.5 / 300e6;
    let (at_zero, e0) = window_mean(&trace, 0.0, 0.2e-9);
    let (at_half, e1) = window_mean(&trace, half_period, 0.2e-9);
    let (at_full, e2) = window_mean(&trace, 2.0 * half_period, 0.2e-9);
    assert!(at_zero < 5.0 * e0 + 0.02, "{at_zero}");
    assert!(at_half > at_full + 3.0 * (e1 + e2), "{at_half} vs {at_full}");
    let want_half = cross_correlation_g34(&sc, half_period);
    assert!((at_half - want_half).abs() < 5.0 * e1 + 0.01, "{at_half} vs {want_half}");
}

#[test]
fn start_stop_and_multi_stop_agree_at_low_rate() {
    let sc = InterferenceScenario::new(emitter(1e5, 0.0, 0.0), emitter(1e5, 0.0, 0.0), 0.5, IrfSpec::delta()).unwrap();
    let base = McConfig {
        duration: 4.0,
        seed: 17,
        ..McConfig::default()
    };
    let multi = simulate_cross(&sc, &DiffusionSpec::none(), &base).unwrap().trace;
    let tac = simulate_cross(
        &sc,
        &DiffusionSpec::none(),
        &McConfig {
            mode: CorrelatorMode::StartStop,
            ..base
        },
    )
    .unwrap()
    .trace;
    // The start-stop estimator loses pairs with an intervening stop, about
    // rate × range of them.
    let ratio = tac.total_counts() / multi.total_counts();
    assert!(ratio > 0.98 && ratio <= 1.0, "{ratio}");
    let (a, ea) = window_mean(&normalize(&multi).unwrap(), 0.0, 1e-9);
    let (b, eb) = window_mean(&normalize(&tac).unwrap(), 0.0, 1e-9);
    assert!((a - b).abs() < 3.0 * (ea + eb));
}

#[test]
fn runs_are_bit_reproducible_and_seed_dependent() {
    let sc = InterferenceScenario::new(emitter(2e5, 1e4, 0.0), emitter(2e5, 1e4, 200e6), 0.5, IrfSpec::default_tac()).unwrap();
    let config = McConfig {
        duration: 0.2,
        seed: 42,
        ..McConfig::default()
    };
    let a = simulate_cross(&sc, &DiffusionSpec::none(), &config).unwrap();
    let b = simulate_cross(&sc, &DiffusionSpec::none(), &config).unwrap();
    assert_eq!(a.channel_3, b.channel_3);
    assert_eq!(a.channel_4, b.channel_4);
    assert_eq!(a.trace, b.trace);
    let c = simulate_cross(&sc, &DiffusionSpec::none(), &McConfig { seed: 43, ..config }).unwrap();
    assert_ne!(a.channel_3.times, c.channel_3.times);
}

#[test]
fn spectral_diffusion_washes_out_beats_but_keeps_zero_delay_dip() {
    let sc = InterferenceScenario::new(emitter(3e5, 0.0, 0.0), emitter(3e5, 0.0, 0.0), 1.0, IrfSpec::delta()).unwrap();
    let diffusion = DiffusionSpec::gaussian_distribution_fwhm_hz(1e6, 2e9).unwrap();
    let config = McConfig {
        duration: 3.0,
        seed: 9,
        ..McConfig::default()
    };
    let trace = normalize(&simulate_cross(&sc, &diffusion, &config).unwrap().trace).unwrap();
    let (g0, e0) = window_mean(&trace, 0.0, 0.05e-9);
    let (g1, e1) = window_mean(&trace, 1e-9, 0.2e-9);
    assert!(g0 < 5.0 * e0 + 0.03, "{g0} ± {e0}");
    assert!((g1 - 0.5).abs() < 5.0 * e1 + 0.03, "{g1} ± {e1}");
}
