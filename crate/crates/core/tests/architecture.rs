use std::collections::HashMap;

use esdnet::model::*;
use esdnet::{Tape, Tensor};

/// Output channel widths from the encoder/decoder tables, in evaluation order.
const TABLE_WIDTHS: &[(&str, usize)] = &[
    ("head.shuffle", 12),
    ("head.conv", 48),
    ("enc1.drdb", 48),
    ("enc1.sam1", 48),
    ("enc2.down", 96),
    ("enc2.drdb", 96),
    ("enc2.sam1", 96),
    ("enc3.down", 192),
    ("enc3.drdb", 192),
    ("enc3.sam1", 192),
    ("dec3.conv", 64),
    ("dec3.drdb", 64),
    ("dec3.sam1", 64),
    ("dec3.out", 12),
    ("dec3.pred", 3),
    ("dec3.up", 64),
    ("dec2.cat", 160),
    ("dec2.conv", 64),
    ("dec2.drdb", 64),
    ("dec2.sam1", 64),
    ("dec2.out", 12),
    ("dec2.pred", 3),
    ("dec2.up", 64),
    ("dec1.cat", 112),
    ("dec1.conv", 64),
    ("dec1.drdb", 64),
    ("dec1.sam1", 64),
    ("dec1.out", 12),
    ("dec1.pred", 3),
];

fn trace(config: ModelConfig, h: usize, w: usize) -> (Vec<TraceEntry>, [Vec<usize>; 3]) {
    let model = ModelParams::build(config, 0).unwrap();
    let tape = Tape::inference();
    let bound = model.bind(&tape);
    let x = tape.constant(Tensor::full(&[1, 3, h, w], 0.5));
    let (p, t) = forward_traced(&tape, &bound, model.config(), &x).unwrap();
    (t, [p.full.shape().to_vec(), p.half.shape().to_vec(), p.quarter.shape().to_vec()])
}

#[test]
fn parameter_counts_match_published_totals() {
    for (config, expected) in
        [(ModelConfig::standard(), 5_934_156), (ModelConfig::large(), 10_623_444), (ModelConfig::weight_shared(), 3_014_316)]
    {
        let name = config.variant.as_str();
        let count = ModelParams::build(config, 0).unwrap().param_count();
        assert_eq!(count, expected, "{name}");
    }
    let published = [(ModelConfig::standard(), 5.934e6), (ModelConfig::large(), 10.623e6)];
    for (config, millions) in published {
        let count = ModelParams::build(config, 0).unwrap().param_count() as f64;
        assert!((count - millions).abs() / millions <= 0.03);
    }
}

#[test]
fn shape_trace_matches_tables() {
    let (t, preds) = trace(ModelConfig::standard(), 256, 256);
    let widths: HashMap<&str, usize> = t.iter().map(|(l, s)| (l.as_str(), s[1])).collect();
    for &(label, c) in TABLE_WIDTHS {
        assert_eq!(widths.get(label), Some(&c), "{label}");
    }
    let spatial: HashMap<&str, (usize, usize)> =
        t.iter().filter(|(_, s)| s.len() == 4).map(|(l, s)| (l.as_str(), (s[2], s[3]))).collect();
    assert_eq!(spatial["enc1.sam1"], (128, 128));
    assert_eq!(spatial["enc2.sam1"], (64, 64));
    assert_eq!(spatial["enc3.sam1"], (32, 32));
    assert_eq!(preds, [vec![1, 3, 256, 256], vec![1, 3, 128, 128], vec![1, 3, 64, 64]]);
    // Pyramid branches and fusion weights.
    assert_eq!(widths["enc3.sam1.pooled"], 3 * 192);
    assert_eq!(widths["enc3.sam1.mlp.fc1"], 3 * 192 / 4);
    assert_eq!(widths["enc3.sam1.mlp.fc3"], 3 * 192);
}

#[test]
fn large_variant_stacks_a_second_sam_per_level() {
    let (t, _) = trace(ModelConfig::large(), 32, 32);
    for level in ["enc1", "enc2", "enc3", "dec3", "dec2", "dec1"] {
        assert!(t.iter().any(|(l, _)| *l == format!("{level}.sam2")), "{level}");
    }
    let standard = ModelParams::build(ModelConfig::standard(), 0).unwrap();
    let large = ModelParams::build(ModelConfig::large(), 0).unwrap();
    let sam_params: usize = standard.iter().filter(|(n, _)| n.contains(".sam1.")).map(|(_, t)| t.numel()).sum();
    assert_eq!(large.param_count(), standard.param_count() + sam_params);
}

#[test]
fn fully_convolutional_across_sizes() {
    for (h, w) in [(16, 16), (32, 48), (64, 16)] {
        let (_, preds) = trace(ModelConfig::standard().reduced(8), h, w);
        assert_eq!(preds, [vec![1, 3, h, w], vec![1, 3, h / 2, w / 2], vec![1, 3, h / 4, w / 4]]);
    }
}

#[test]
fn indivisible_input_names_the_padding() {
    let model = ModelParams::build(ModelConfig::standard().reduced(8), 0).unwrap();
    let err = model.predict(&Tensor::zeros(&[1, 3, 30, 32])).unwrap_err().to_string();
    assert!(err.contains("pad 2 rows and 0 columns"), "{err}");
}

#[test]
fn weight_shared_equals_standard_with_identical_branches() {
    let ws = ModelParams::build(ModelConfig::weight_shared().reduced(4), 3).unwrap();
    let mut std = ModelParams::build(ModelConfig::standard().reduced(4), 9).unwrap();
    let names: Vec<String> = std.names().map(str::to_string).collect();
    for name in names {
        let source = if let Some(pos) = name.find(".branch") {
            // `<sam>.branchK.<rest>` -> `<sam>.branch.<rest>`
            let rest = &name[pos + ".branch".len() + 1..];
            format!("{}.branch{rest}", &name[..pos])
        } else {
            name.clone()
        };
        std.set(&name, ws.get(&source).unwrap().clone()).unwrap();
    }
    let x = Tensor::from_fn(&[1, 3, 32, 32], |i| ((i * 37) % 101) as f32 / 100.0);
    let a = std.predict(&x).unwrap();
    let b = ws.predict(&x).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.data(), q.data());
    }
}

#[test]
fn saturated_fusion_bias_makes_sam_an_identity() {
    let config = ModelConfig::standard().reduced(4);
    let c = config.encoder_channels[0];
    let mut model = ModelParams::build(config.clone(), 1).unwrap();
    let name = format!("{}.mlp.fc3.bias", sam_prefix("enc1", 0));
    let len = model.get(&name).unwrap().numel();
    model.set(&name, Tensor::full(&[len], -20.0)).unwrap();
    let tape = Tape::inference();
    let bound = model.bind(&tape);
    let x = Tensor::from_fn(&[1, c, 8, 8], |i| ((i * 13) % 17) as f32 / 17.0 - 0.5);
    let xv = tape.constant(x.clone());
    let y = sam_forward(&tape, &bound, &config, &sam_prefix("enc1", 0), &xv).unwrap();
    assert!(y.value().max_abs_diff(&x) < 1e-6);
}

#[test]
fn drdb_preserves_shape() {
    let config = ModelConfig::standard().reduced(4);
    let c = config.encoder_channels[1];
    let model = ModelParams::build(config.clone(), 1).unwrap();
    let tape = Tape::inference();
    let bound = model.bind(&tape);
    for (h, w) in [(5, 7), (1, 1), (12, 8)] {
        let x = tape.constant(Tensor::full(&[2, c, h, w], 0.1));
        let y = drdb_forward(&tape, &bound, &config, "enc2.drdb", &x).unwrap();
        assert_eq!(y.shape(), &[2, c, h, w]);
    }
}

#[test]
fn seeded_builds_are_reproducible() {
    let a = ModelParams::build(ModelConfig::standard().reduced(4), 5).unwrap();
    let b = ModelParams::build(ModelConfig::standard().reduced(4), 5).unwrap();
    let c = ModelParams::build(ModelConfig::standard().reduced(4), 6).unwrap();
    assert!(a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.data() == y.data()));
    assert!(a.iter().zip(c.iter()).any(|((_, x), (_, y))| x.data() != y.data()));
}
