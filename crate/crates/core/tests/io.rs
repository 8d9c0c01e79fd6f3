use std::fs;

use esdnet::io::*;
use esdnet::model::{ModelConfig, ModelParams};
use esdnet::synth::gen_dataset;
use esdnet::{Error, Tensor};

fn raw_png(w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.write_header().unwrap().write_image_data(data).unwrap();
    }
    out
}

#[test]
fn weights_roundtrip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.esdw");
    let model = ModelParams::build(ModelConfig::standard().reduced(8), 4).unwrap();
    save_model(&path, &model).unwrap();
    let back = load_model(&path, ModelConfig::standard().reduced(8)).unwrap();
    let names: Vec<&str> = model.names().collect();
    assert_eq!(names, back.names().collect::<Vec<_>>());
    for ((_, a), (_, b)) in model.iter().zip(back.iter()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    save_model(&dir.path().join("again.esdw"), &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("again.esdw")).unwrap());
    assert_eq!(&fs::read(&path).unwrap()[..4], WEIGHTS_MAGIC);
}

#[test]
fn truncated_weights_fail_the_checksum() {
    let model = ModelParams::build(ModelConfig::standard().reduced(16), 0).unwrap();
    let bytes = encode_weights(model.iter()).unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 13] {
        let err = decode_weights(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. } | Error::Format(_)), "{err}");
    }
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(decode_weights(&flipped).unwrap_err(), Error::Checksum { .. }));
    assert!(matches!(decode_weights(&bytes[..bytes.len() - 1]).unwrap_err(), Error::Checksum { .. }));
}

#[test]
fn mismatched_architectures_name_the_offending_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.esdw");
    save_model(&path, &ModelParams::build(ModelConfig::standard().reduced(8), 0).unwrap()).unwrap();
    let err = load_model(&path, ModelConfig::standard().reduced(4)).unwrap_err().to_string();
    assert!(err.contains("head.conv.weight") && err.contains("shape"), "{err}");
    let err = load_model(&path, ModelConfig::weight_shared().reduced(8)).unwrap_err().to_string();
    assert!(err.contains("missing parameter enc1.sam1.branch."), "{err}");
    save_model(&path, &ModelParams::build(ModelConfig::weight_shared().reduced(8), 0).unwrap()).unwrap();
    let err = load_model(&path, ModelConfig::standard().reduced(8)).unwrap_err().to_string();
    assert!(err.contains("missing parameter enc1.sam1.branch0."), "{err}");
}

#[test]
fn png_roundtrip_is_idempotent_after_quantization() {
    let img = Tensor::from_fn(&[1, 3, 5, 7], |i| ((i * 37) % 101) as f32 / 100.0);
    let once = decode_png(&encode_png(&img).unwrap()).unwrap();
    let twice = decode_png(&encode_png(&once).unwrap()).unwrap();
    assert_eq!(once.data(), twice.data());
    assert!(once.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);
    let black = decode_png(&encode_png(&Tensor::zeros(&[1, 3, 2, 2])).unwrap()).unwrap();
    assert!(black.data().iter().all(|&v| v == 0.0));
    let mid = decode_png(&raw_png(1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[128, 0, 255])).unwrap();
    assert_eq!(mid.data(), &[128.0 / 255.0, 0.0, 1.0]);
    assert!(encode_png(&Tensor::full(&[1, 3, 1, 1], f32::NAN)).is_err());
    let clamped = decode_png(&encode_png(&Tensor::new(&[3, 1, 1], vec![-0.5, 1.5, 0.5]).unwrap()).unwrap()).unwrap();
    assert_eq!(clamped.data(), &[0.0, 1.0, 128.0 / 255.0]);
}

#[test]
fn png_layouts_accepted_and_rejected() {
    let rgba = raw_png(2, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[255, 0, 0, 7, 0, 255, 0, 9]);
    let t = decode_png(&rgba).unwrap();
    assert_eq!(t.shape(), &[1, 3, 1, 2]);
    assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let deep = raw_png(1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0; 6]);
    let err = decode_png(&deep).unwrap_err();
    assert!(matches!(err, Error::Format(_)) && err.to_string().contains("8-bit"), "{err}");
    let gray = raw_png(1, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[3]);
    assert!(matches!(decode_png(&gray).unwrap_err(), Error::Format(_)));
    assert!(matches!(decode_png(b"not a png").unwrap_err(), Error::Format(_)));
}

#[test]
fn atomic_write_replaces_whole_files_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.bin");
    atomic_write(&path, b"first").unwrap();
    atomic_write(&path, b"second").unwrap();
    assert_eq!(fs::read(&path).unwrap(), b"second");
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.len(), 1);
    let missing = dir.path().join("no/such/dir/x.bin");
    assert!(atomic_write(&missing, b"x").is_err());
    assert!(!missing.exists());
}

#[test]
fn run_config_parses_overrides_and_round_trips() {
    let text = "# desk\nmodel.variant = weight_shared\nmodel.width_divisor = 4\ntrain.lr_max = 0.002\nloss.lambda = 0.5\n";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.model_config(), ModelConfig::weight_shared().reduced(4));
    assert_eq!(cfg.train.lr_max, 2e-3);
    assert_eq!(cfg.loss.lambda, 0.5);
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let err = RunConfig::parse("train.speed = 3\n").unwrap_err();
    assert!(matches!(err, Error::Config(_)) && err.to_string().contains("train.speed"), "{err}");
    assert!(RunConfig::parse("a = 1\na = 2\n").is_err());
    assert!(RunConfig::parse("no equals sign\n").is_err());
    let mut cfg = RunConfig::default();
    cfg.set("moire.amplitude", "0.2,0.3,0.4").unwrap();
    assert_eq!(cfg.moire.as_ref().unwrap().amplitude, [0.2, 0.3, 0.4]);
    assert!(cfg.set("moire.amplitude", "0.2,0.3").is_err());
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn datasets_survive_a_disk_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = gen_dataset(3, 16, 16, 9).unwrap();
    write_dataset(dir.path(), &pairs).unwrap();
    assert!(dir.path().join(MANIFEST).exists());
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (p, q) in pairs.iter().zip(&back) {
        assert!(p.clean.max_abs_diff(&q.clean) <= 0.5 / 255.0 + 1e-6);
        assert!(p.moire.max_abs_diff(&q.moire) <= 0.5 / 255.0 + 1e-6);
    }
    let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert!(manifest.contains("pairs = 3"));
    assert!(manifest.contains("0000.gamma"));
}
