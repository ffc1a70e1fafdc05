use super::*;
use crate::testutil::{random_signed, random_tensor};

fn dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn err_code(e: Error) -> u8 {
    match e {
        Error::Format(f) => f.code(),
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn score_map_round_trip() {
    let ramp = ScoreMap::from_fn(3, 3, 2, |y, x, c| (y * 6 + x * 2 + c) as f64 * 0.37);
    let back = decode_score_map(&encode_score_map(&ramp).unwrap()).unwrap();
    for (a, b) in ramp.data().iter().zip(back.data()) {
        assert_eq!(*b, *a as f32 as f64);
    }
    let d = dir();
    let p = d.path().join("x.scm");
    save_score_map(&p, &ramp).unwrap();
    assert_eq!(load_score_map(&p).unwrap(), back);
}

#[test]
fn score_map_layout() {
    let m = ScoreMap::from_vec(1, 2, 1, vec![1.0, -2.0]).unwrap();
    let b = encode_score_map(&m).unwrap();
    assert_eq!(&b[..4], b"SCM1");
    assert_eq!(&b[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
    assert_eq!(&b[20..], &(-2.0f32).to_le_bytes());
}

#[test]
fn score_map_errors_have_distinct_codes() {
    let good = encode_score_map(&random_signed(2, 2, 3, 1.0, 1)).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert_eq!(err_code(decode_score_map(&bad_magic).unwrap_err()), 10);
    assert_eq!(err_code(decode_score_map(&good[..good.len() - 3]).unwrap_err()), 11);
    assert_eq!(err_code(decode_score_map(&good[..10]).unwrap_err()), 11);
    let mut long = good.clone();
    long.push(0);
    assert_eq!(err_code(decode_score_map(&long).unwrap_err()), 16);
    let mut nan = good.clone();
    nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(err_code(decode_score_map(&nan).unwrap_err()), 17);
    assert_eq!(err_code(decode_score_map(b"SC").unwrap_err()), 10);
}

fn trained_model(arch: Arch) -> Model {
    let cfg = ModelConfig {
        labels: 3,
        net_channels: 2,
        k1: 3,
        k2: 5,
        ..Default::default()
    };
    let mut m = Model::new(arch, &cfg, 5).unwrap();
    m.context.net.conv2.weight.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.01);
    m.context.head.bias = vec![0.5, -0.25, 0.125];
    m.guidance.params.lambda = 0.75;
    m.guidance.params.filter = crate::guided::GuidedFilterConfig::new(7, 0.5).with_subsample(2);
    m
}

#[test]
fn bundle_round_trip() {
    for arch in Arch::ALL {
        let m = trained_model(arch);
        let b = model_to_bundle(&m).unwrap();
        let d = dir();
        let p = d.path().join("m.prb");
        b.save(&p).unwrap();
        let back = ParamBundle::load(&p).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
        let m2 = model_from_bundle(&back, 3, &ModelConfig::default()).unwrap();
        assert_eq!(m2.arch, arch);
        if arch.context() {
            assert_eq!(m2.context.net.conv2.weight, m.context.net.conv2.weight.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());
            assert_eq!(m2.context.net.conv1.kernel, 3);
            assert_eq!(m2.context.net.conv2.kernel, 5);
        }
        if arch.guidance() {
            assert_eq!(m2.guidance.params.filter.radius, 7);
            assert_eq!(m2.guidance.params.filter.subsample, 2);
            assert_eq!(m2.guidance.params.lambda, 0.75);
        }
    }
}

#[test]
fn bundle_rejects_unknown_names() {
    let mut b = ParamBundle::new();
    assert_eq!(err_code(b.insert("guidance.mood", vec![1], vec![0.0]).unwrap_err()), 13);
    // Forge one on disk.
    b.insert("guidance.lambda", vec![1], vec![1.0]).unwrap();
    let mut bytes = b.encode().unwrap();
    let at = bytes.windows(15).position(|w| w == b"guidance.lambda").unwrap();
    bytes[at + 9..at + 15].copy_from_slice(b"lambdx");
    assert_eq!(err_code(ParamBundle::decode(&bytes).unwrap_err()), 13);
}

#[test]
fn bundle_rejects_wrong_mu_shape() {
    let mut b = model_to_bundle(&trained_model(Arch::C)).unwrap();
    b.insert("guidance.mu", vec![2, 2], vec![0.0; 4]).unwrap();
    let e = model_from_bundle(&b, 3, &ModelConfig::default()).unwrap_err();
    assert_eq!(err_code(e), 12);
    assert!(err_code_message(&b).contains("shape mismatch"));
}

fn err_code_message(b: &ParamBundle) -> String {
    model_from_bundle(b, 3, &ModelConfig::default()).unwrap_err().to_string()
}

#[test]
fn bundle_version_and_truncation() {
    let b = model_to_bundle(&trained_model(Arch::C)).unwrap().encode().unwrap();
    let mut v2 = b.clone();
    v2[4] = 2;
    assert_eq!(err_code(ParamBundle::decode(&v2).unwrap_err()), 14);
    assert_eq!(err_code(ParamBundle::decode(&b[..b.len() - 1]).unwrap_err()), 11);
    assert_eq!(err_code(ParamBundle::decode(b"PRBX").unwrap_err()), 10);
}

#[test]
fn empty_bundle_is_unary() {
    let b = ParamBundle::decode(&ParamBundle::new().encode().unwrap()).unwrap();
    assert!(b.is_empty());
    assert_eq!(model_from_bundle(&b, 4, &ModelConfig::default()).unwrap().arch, Arch::Unary);
}

#[test]
fn white_ppm_and_black_png() {
    let img = decode_image(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
    assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    let png = encode_png(&GuideImage::zeros(1, 1, 3)).unwrap();
    assert_eq!(decode_image(&png).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn gray_is_replicated() {
    let img = decode_image(b"P5 2 1 255\n\x00\x80").unwrap();
    assert_eq!(img.shape(), (1, 2, 3));
    assert_eq!(img.pixel(1), &[128.0 / 255.0; 3]);
}

#[test]
fn header_comments_are_skipped() {
    let img = decode_image(b"P6\n# made by hand\n1 1 # size\n255\n\x00\x00\xff").unwrap();
    assert_eq!(img.data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn image_round_trip_is_bitwise() {
    let d = dir();
    let img = random_tensor(7, 5, 3, 3).map(|v| (v * 255.0).floor() as u8 as f64 / 255.0);
    for name in ["a.ppm", "a.png"] {
        let p = d.path().join(name);
        save_image(&p, &img).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let loaded = load_image(&p).unwrap();
        assert_eq!(loaded, img);
        let p2 = d.path().join(format!("b_{name}"));
        save_image(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p2).unwrap(), bytes);
    }
}

#[test]
fn image_errors_report_offsets() {
    match decode_image(b"GIF89a").unwrap_err() {
        Error::Format(FormatError::Unsupported { offset, .. }) => assert_eq!(offset, 0),
        e => panic!("{e}"),
    }
    match decode_image(b"P6\n2 x\n255\n").unwrap_err() {
        Error::Format(FormatError::CorruptHeader { offset, .. }) => assert_eq!(offset, 5),
        e => panic!("{e}"),
    }
    match decode_image(b"P6\n2 2\n255\n\x00\x00").unwrap_err() {
        Error::Format(FormatError::Truncated { offset, needed, .. }) => {
            assert_eq!((offset, needed), (11, 12));
        }
        e => panic!("{e}"),
    }
    assert_eq!(err_code(decode_image(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap_err()), 15);
}

#[test]
fn label_map_round_trip() {
    let labels = LabelMap::new(2, 3, vec![0, 1, 2, 255, 3, 0]).unwrap();
    let d = dir();
    let p = d.path().join("l.pgm");
    save_label_map(&p, &labels).unwrap();
    assert_eq!(load_label_map(&p).unwrap(), labels);
    assert!(decode_label_map(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
}

#[test]
fn manifest_parsing() {
    let base = Path::new("/data/set");
    assert!(parse_manifest("", base).unwrap().is_empty());
    let m = parse_manifest("# comment\na.ppm\tl/a.pgm\t/abs/a.scm\n\n", base).unwrap();
    assert_eq!(
        m,
        vec![ManifestEntry {
            image: PathBuf::from("/data/set/a.ppm"),
            labels: PathBuf::from("/data/set/l/a.pgm"),
            unary: PathBuf::from("/abs/a.scm"),
        }]
    );
    match parse_manifest("ok\tok\tok\nonly two\tfields\n", base).unwrap_err() {
        Error::Format(FormatError::Manifest { line, .. }) => assert_eq!(line, 2),
        e => panic!("{e}"),
    }
}

#[test]
fn empty_manifest_file() {
    let d = dir();
    let p = d.path().join("m.tsv");
    std::fs::write(&p, "").unwrap();
    assert!(load_dataset(&p).unwrap().is_empty());
}

#[test]
fn dataset_round_trip() {
    let cfg = crate::training::SyntheticConfig {
        height: 32,
        width: 32,
        ..Default::default()
    };
    let samples: Vec<Sample> = crate::training::make_synthetic_dataset(2, &cfg)
        .unwrap()
        .into_iter()
        .map(Sample::from)
        .collect();
    let d = dir();
    let manifest = write_dataset(d.path().join("set"), &samples).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.labels, b.labels);
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
        assert!(a.unary.max_abs_diff(&b.unary) < 1e-6);
    }
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_score_map("/nonexistent/x.scm"), Err(Error::Io { .. })));
}
