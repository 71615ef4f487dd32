use std::collections::{BTreeMap, HashSet};

use bast_audio::{
    average_power_spectrum, build_dataset, interaural_lag, load_features, make_source, read_manifest, read_wav,
    render_binaural, source_pool, spectral_flatness, write_corpus, Azimuth, DatasetConfig, Environment,
    FrontendConfig, LocalizationTarget, SceneConfig, SourceKind, Split, StftConfig, Waveform,
};
use proptest::prelude::*;

const FS: u32 = 16_000;

fn az(d: u16) -> Azimuth {
    Azimuth::new(d).unwrap()
}

fn noise_source(seed: u64) -> Waveform {
    make_source(SourceKind::WhiteNoise, 0.5, FS, seed).unwrap()
}

fn render(src: &Waveform, deg: u16, env: Environment) -> Waveform {
    render_binaural(src, &LocalizationTarget::new(az(deg), env), &SceneConfig::for_environment(env)).unwrap()
}

#[test]
fn coordinates_lie_on_unit_circle() {
    for a in Azimuth::all() {
        let [x, y] = a.coordinate();
        assert!(((x * x + y * y).sqrt() - 1.0).abs() < 1e-6);
        let t = f64::from(a.degrees()).to_radians();
        assert!((x - t.sin()).abs() < 1e-12 && (y - t.cos()).abs() < 1e-12);
    }
    assert_eq!(Azimuth::all().len(), 36);
    let [x, y] = az(90).coordinate();
    assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15);
    assert!(Azimuth::new(45).is_err());
    assert!(Azimuth::new(360).is_err());
    assert_eq!(az(30).mirror(), az(330));
    assert_eq!(az(180).mirror(), az(180));
}

#[test]
fn sources_are_deterministic_and_normalized() {
    for kind in SourceKind::ALL {
        let a = make_source(kind, 0.5, FS, 42).unwrap();
        let b = make_source(kind, 0.5, FS, 42).unwrap();
        let c = make_source(kind, 0.5, FS, 43).unwrap();
        assert_eq!(a, b, "{kind}");
        assert_ne!(a, c, "{kind}");
        assert_eq!(a.len(), 8000);
        assert_eq!(a.num_channels(), 1);
        assert!((a.peak() - 0.9).abs() < 1e-12, "{kind}: {}", a.peak());
    }
    assert!("pink-noise".parse::<SourceKind>().is_err());
    assert_eq!("am-noise".parse::<SourceKind>().unwrap(), SourceKind::AmNoise);
}

#[test]
fn white_noise_is_spectrally_flat() {
    let cfg = StftConfig {
        min_frames: None,
        tukey_shape: 1.0,
        ..StftConfig::default()
    };
    for seed in 0..5 {
        let w = noise_source(seed);
        let flatness = spectral_flatness(&average_power_spectrum(w.channel(0), &cfg).unwrap());
        assert!(flatness > 0.8, "seed {seed}: {flatness}");
    }
    let tone = make_source(SourceKind::ToneComplex, 0.5, FS, 1).unwrap();
    let flatness = spectral_flatness(&average_power_spectrum(tone.channel(0), &cfg).unwrap());
    assert!(flatness < 0.5, "tone complex flatness {flatness}");
}

#[test]
fn midline_has_zero_lag() {
    let src = noise_source(1);
    assert_eq!(interaural_lag(&render(&src, 0, Environment::Anechoic), 20).unwrap(), 0);
}

#[test]
fn lateral_lag_follows_woodworth() {
    let (a, c) = (0.0875, 343.0);
    let expected = (f64::from(FS) * a / c * (std::f64::consts::FRAC_PI_2 + 1.0)).round() as i64;
    assert_eq!(expected, 10);
    for seed in 0..4 {
        let src = noise_source(seed);
        let right = interaural_lag(&render(&src, 90, Environment::Anechoic), 20).unwrap();
        assert!((right - expected).abs() <= 1, "seed {seed}: {right}");
        let left = interaural_lag(&render(&src, 270, Environment::Anechoic), 20).unwrap();
        assert_eq!(left, -right, "seed {seed}");
    }
}

#[test]
fn lag_is_monotone_across_the_front() {
    let src = noise_source(7);
    let sweep: Vec<u16> = (27..36).chain(0..10).map(|i| i * 10).collect();
    let lags: Vec<i64> = sweep
        .iter()
        .map(|&d| interaural_lag(&render(&src, d, Environment::Anechoic), 20).unwrap())
        .collect();
    assert!(lags.windows(2).all(|w| w[0] <= w[1]), "{sweep:?} -> {lags:?}");
    assert!(lags[0] < 0 && *lags.last().unwrap() > 0);
}

#[test]
fn level_difference_sign() {
    let src = noise_source(3);
    for env in Environment::ALL {
        for a in Azimuth::all() {
            let w = render(&src, a.degrees(), env);
            let (l, r) = (w.rms(0), w.rms(1));
            match a.degrees() {
                0 | 180 => assert!((l / r - 1.0).abs() < 0.01, "{env} {a}: {l} vs {r}"),
                1..=179 => assert!(r > l, "{env} {a}: {l} vs {r}"),
                _ => assert!(l > r, "{env} {a}: {l} vs {r}"),
            }
        }
    }
}

#[test]
fn mirrored_source_swaps_channels() {
    for kind in SourceKind::ALL {
        let src = make_source(kind, 0.5, FS, 9).unwrap();
        for a in Azimuth::all() {
            let w = render(&src, a.degrees(), Environment::Anechoic);
            let m = render(&src, a.mirror().degrees(), Environment::Anechoic);
            assert_eq!(w.swapped(), m, "{kind} {a}");
        }
    }
}

#[test]
fn reverberant_mirror_agrees_to_rounding() {
    let src = noise_source(11);
    for d in [30, 90, 140] {
        let w = render(&src, d, Environment::Reverberant).swapped();
        let m = render(&src, 360 - d, Environment::Reverberant);
        for ch in 0..2 {
            let err = w
                .channel(ch)
                .iter()
                .zip(m.channel(ch))
                .fold(0.0f64, |e, (x, y)| e.max((x - y).abs()));
            assert!(err < 1e-12, "{d}: {err}");
        }
    }
}

#[test]
fn reverberation_adds_energy() {
    for seed in 0..3 {
        let src = noise_source(seed);
        for a in Azimuth::all() {
            let ae = render(&src, a.degrees(), Environment::Anechoic).energy();
            let rv = render(&src, a.degrees(), Environment::Reverberant).energy();
            assert!(rv > ae, "{a}: {rv} <= {ae}");
        }
    }
}

#[test]
fn rendering_is_deterministic_and_length_preserving() {
    let src = make_source(SourceKind::Chirp, 0.5, FS, 5).unwrap();
    let a = render(&src, 120, Environment::Reverberant);
    let b = render(&src, 120, Environment::Reverberant);
    assert_eq!(a, b);
    assert_eq!(a.len(), src.len());
    assert_eq!(a.num_channels(), 2);
    assert!(a.peak() < 1.0, "peak {}", a.peak());
}

#[test]
fn geometry_errors() {
    let src = noise_source(0);
    let target = LocalizationTarget::new(az(90), Environment::Anechoic);
    let near_wall = SceneConfig {
        listener: [9.5, 5.0, 1.5],
        ..SceneConfig::anechoic()
    };
    assert!(render_binaural(&src, &target, &near_wall).is_err());
    let outside = SceneConfig {
        listener: [11.0, 5.0, 1.5],
        ..SceneConfig::anechoic()
    };
    assert!(render_binaural(&src, &target, &outside).is_err());
    let stereo = Waveform::stereo(vec![0.0; 10], vec![0.0; 10], FS).unwrap();
    assert!(render_binaural(&stereo, &target, &SceneConfig::anechoic()).is_err());
}

fn small_config(train: usize, test: usize) -> DatasetConfig {
    DatasetConfig {
        sample_rate: FS,
        duration_secs: 0.5,
        train_sources: source_pool("tr", train, 1),
        test_sources: source_pool("te", test, 2),
        azimuths: Azimuth::all(),
        environments: Environment::ALL.to_vec(),
        scene: SceneConfig::reverberant(),
        split_ratio: 0.75,
        seed: 17,
    }
}

#[test]
fn stratified_split_counts() {
    let data = build_dataset(&small_config(4, 0)).unwrap();
    let m = &data.manifest;
    assert_eq!(m.count(Split::Train), 216);
    assert_eq!(m.count(Split::Val), 72);
    assert_eq!(m.count(Split::Test), 0);
    assert_eq!(data.samples.len(), 288);
    let mut strata: BTreeMap<(Azimuth, Environment), (usize, usize)> = BTreeMap::new();
    for r in &m.records {
        let e = strata.entry((r.azimuth, r.environment)).or_default();
        match r.split {
            Split::Train => e.0 += 1,
            Split::Val => e.1 += 1,
            Split::Test => unreachable!(),
        }
    }
    assert_eq!(strata.len(), 72);
    assert!(strata.values().all(|&c| c == (3, 1)));
}

#[test]
fn manifest_is_deterministic() {
    let mut cfg = small_config(3, 1);
    cfg.azimuths = vec![az(0), az(90)];
    let a = build_dataset(&cfg).unwrap();
    let b = build_dataset(&cfg).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.samples, b.samples);
    cfg.seed += 1;
    assert_ne!(build_dataset(&cfg).unwrap().manifest.config_hash, a.manifest.config_hash);
}

#[test]
fn test_pool_is_disjoint() {
    let mut cfg = small_config(4, 2);
    cfg.azimuths = vec![az(10), az(200)];
    let m = build_dataset(&cfg).unwrap().manifest;
    let fit: HashSet<_> = m.records.iter().filter(|r| r.split != Split::Test).map(|r| &r.source_id).collect();
    let held: HashSet<_> = m.split(Split::Test).map(|r| &r.source_id).collect();
    assert_eq!(held.len(), 2);
    assert!(fit.is_disjoint(&held));
    assert_eq!(m.count(Split::Test), 2 * 2 * 2);

    cfg.test_sources = cfg.train_sources[..1].to_vec();
    assert!(build_dataset(&cfg).is_err());
}

#[test]
fn split_ratio_must_be_open_unit_interval() {
    for ratio in [0.0, 1.0, -0.5, 1.5] {
        let mut cfg = small_config(2, 0);
        cfg.split_ratio = ratio;
        assert!(build_dataset(&cfg).is_err(), "{ratio}");
    }
    let mut cfg = small_config(0, 2);
    cfg.train_sources.clear();
    assert!(build_dataset(&cfg).is_err());
}

#[test]
fn corpus_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(2, 1);
    cfg.azimuths = vec![az(0), az(90), az(270)];
    let data = build_dataset(&cfg).unwrap();
    write_corpus(dir.path(), &data).unwrap();
    assert!(dir.path().join("AE").is_dir() && dir.path().join("RV").is_dir());
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m, data.manifest);
    for (r, w) in m.records.iter().zip(&data.samples) {
        let back = read_wav(dir.path().join(&r.path)).unwrap();
        assert_eq!(back.len(), w.len());
        for ch in 0..2 {
            for (a, b) in back.channel(ch).iter().zip(w.channel(ch)) {
                assert!((a - b).abs() <= 1.0 / 32767.0);
            }
        }
    }
    let fe = FrontendConfig::default();
    let f1 = load_features(dir.path(), &m, &fe).unwrap();
    let f2 = load_features(dir.path(), &m, &fe).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(f1.len(), m.records.len());
    assert_eq!((f1[0].bins, f1[0].frames), (129, 61));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn split_fraction_within_one_sample(n in 2usize..9, ratio in 0.1f64..0.9, seed in any::<u64>()) {
        let cfg = DatasetConfig {
            sample_rate: FS,
            duration_secs: 0.05,
            train_sources: source_pool("s", n, seed),
            test_sources: Vec::new(),
            azimuths: vec![az(0), az(120)],
            environments: vec![Environment::Anechoic],
            scene: SceneConfig::reverberant(),
            split_ratio: ratio,
            seed,
        };
        let m = build_dataset(&cfg).unwrap().manifest;
        for a in &cfg.azimuths {
            let train = m.split(Split::Train).filter(|r| r.azimuth == *a).count() as f64;
            let val = m.split(Split::Val).filter(|r| r.azimuth == *a).count();
            prop_assert!((train - ratio * n as f64).abs() <= 1.0);
            prop_assert!(train >= 1.0 && val >= 1);
        }
    }
}
