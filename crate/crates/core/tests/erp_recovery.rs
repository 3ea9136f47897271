use osvs_core::erp::{
    average, erp_metrics, extract_epochs, reject_artifacts, Epoch, EpochOptions, EpochSet, EpochWindow,
    SearchWindow,
};
use osvs_core::protocol::{build_session_plan, DisplayRef, PlanConfig, StimulusCondition};
use osvs_core::simulate::{simulate_participant, synthesize_eeg, BehaviorModel, ConditionBehavior, ErpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise_epochs(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> EpochSet {
    EpochSet {
        channel: "Pz".into(),
        window: EpochWindow::default(),
        rate_hz: 500,
        epochs: (0..n)
            .map(|i| Epoch {
                source: DisplayRef {
                    set: 0,
                    block: 0,
                    display: i,
                },
                condition: StimulusCondition::P3,
                is_target: true,
                onset_us: 0,
                samples: (0..601).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
            })
            .collect(),
        skipped: Vec::new(),
        rejected: 0,
    }
}

fn quiet_model() -> BehaviorModel {
    BehaviorModel::uniform(
        30.0,
        ConditionBehavior {
            hit_prob: 0.9,
            false_alarm_prob: 0.01,
            rt_median_s: 0.5,
            rt_sigma: 0.2,
            lapse_prob: 0.0,
        },
    )
}

#[test]
fn gaussian_noise_is_rarely_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let set = noise_epochs(&mut rng, 1000, 10.0);
    let kept = reject_artifacts(&set, 100.0).unwrap();
    assert!(kept.rejected < 10, "{} of 1000 rejected", kept.rejected);
}

#[test]
fn averaged_noise_shrinks_with_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [16usize, 96, 400] {
        let avg = average(&noise_epochs(&mut rng, n, 10.0)).unwrap();
        let mean = avg.iter().sum::<f64>() / avg.len() as f64;
        let sd = (avg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (avg.len() - 1) as f64).sqrt();
        let expected = 10.0 / (n as f64).sqrt();
        assert!((sd / expected - 1.0).abs() < 0.15, "n={n}: sd {sd} vs {expected}");
    }
}

#[test]
fn target_epochs_per_condition() {
    let plan = build_session_plan(&PlanConfig::default(), 21).unwrap();
    let log = simulate_participant(&plan, &quiet_model(), 4, "p").unwrap();
    let eeg = synthesize_eeg(&log, &ErpModel::single(5.0, 0.5, 1.0), 4).unwrap();
    for c in StimulusCondition::ALL {
        let opts = EpochOptions {
            condition: Some(c),
            ..EpochOptions::default()
        };
        let set = extract_epochs(&eeg, &log, "Pz", opts).unwrap();
        assert_eq!(set.len(), 96);
        assert!(set.skipped.is_empty());
        let all = extract_epochs(
            &eeg,
            &log,
            "Pz",
            EpochOptions {
                target_only: false,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(all.len(), 480);
    }
}

#[test]
fn eeg_file_round_trips_through_disk_format() {
    let plan = build_session_plan(&PlanConfig::default(), 22).unwrap();
    let log = simulate_participant(&plan, &quiet_model(), 1, "p").unwrap();
    let eeg = synthesize_eeg(&log, &ErpModel::single(5.0, 0.5, 3.0), 1).unwrap();
    assert_eq!(eeg.channels, vec!["Fpz", "Fz", "Cz", "Pz", "Oz"]);
    assert_eq!(eeg.rate_hz, 500);
    let bytes = eeg.to_bytes().unwrap();
    let back = osvs_core::erp::EegRecording::read_from(&bytes[..]).unwrap();
    assert_eq!(back, eeg);
}

/// Noise-only averages: the measured peak stays inside the envelope of
/// the max of averaged white noise.
#[test]
fn zero_amplitude_measures_noise_peak() {
    let sigma = 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let search = SearchWindow::default();
    // envelope from pure noise averages, computed without the EEG path
    let peaks: Vec<f64> = (0..200)
        .map(|_| erp_metrics(&noise_epochs(&mut rng, 96, sigma), search).unwrap().amplitude_uv)
        .collect();
    let center = peaks.iter().sum::<f64>() / peaks.len() as f64;
    let half_width = 3.0 * sigma / 96f64.sqrt();

    let plan = build_session_plan(&PlanConfig::default(), 23).unwrap();
    let log = simulate_participant(&plan, &quiet_model(), 2, "p").unwrap();
    let opts = EpochOptions {
        condition: Some(StimulusCondition::P5),
        ..EpochOptions::default()
    };
    for seed in 0..10 {
        let eeg = synthesize_eeg(&log, &ErpModel::single(0.0, 0.5, sigma), seed).unwrap();
        let set = extract_epochs(&eeg, &log, "Pz", opts).unwrap();
        let m = erp_metrics(&set, search).unwrap();
        assert!(
            (m.amplitude_uv - center).abs() <= half_width,
            "seed {seed}: {} outside {center} +/- {half_width}",
            m.amplitude_uv
        );
    }
}

#[test]
fn search_window_bounds_latency() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = noise_epochs(&mut rng, 5, 10.0);
    let w = SearchWindow {
        start_ms: 300.0,
        end_ms: 320.0,
    };
    let m = erp_metrics(&set, w).unwrap();
    assert!((0.3..=0.32).contains(&m.latency_s));
    assert_eq!(m.n_epochs_used, 5);
}
