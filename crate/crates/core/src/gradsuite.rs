//! Finite-difference checks of every differentiable op and of the composed
//! blocks, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, grad_check_floored, Tape, Var};
use crate::error::Result;
use crate::kernels::{ConvGeom, ShuffleDirection};
use crate::loss::{total_loss, FeatureExtractor, LossConfig};
use crate::model::{
    drdb_forward, forward, init_tensors, layout, sam_forward, sam_prefix, Bound, Layout, ModelConfig, Predictions,
};
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-6;
/// Gradient magnitude below which composite checks compare absolutely;
/// central differences at `EPS` carry roughly 1e-9 of roundoff.
const COMPOSITE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform in `±[margin, 1]`, keeping kinks at zero out of reach of the probe step.
fn signed_away_from_zero(shape: &[usize], seed: u64, margin: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Scalar `Σ y ⊙ R` for a fixed random `R`, so every output element gets a
/// distinct weight.
fn probe_loss(tape: &Tape<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    match *y.shape() {
        [_, c, h, w] => {
            let r = tape.constant(uniform(&[1, c, h, w], seed, -1.0, 1.0));
            let s = tape.conv2d(y, &r, None, ConvGeom::UNIT)?;
            tape.sum(&s)
        }
        [_, c] => {
            let r = tape.constant(uniform(&[1, c], seed, -1.0, 1.0));
            let b = tape.constant(Tensor::zeros(&[1]));
            let s = tape.affine(y, &r, &b)?;
            tape.sum(&s)
        }
        _ => tape.sum(y),
    }
}

fn case(name: impl Into<String>, tolerance: f64, err: Result<f64>) -> Result<CaseResult> {
    Ok(CaseResult { name: name.into(), max_rel_err: err?, tolerance })
}

fn primitive<F>(name: impl Into<String>, inputs: &[Tensor<f64>], op: F) -> Result<CaseResult>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let err = grad_check(|t, v| probe_loss(t, &op(t, v)?, 99), inputs, EPS);
    case(name, PRIMITIVE_TOLERANCE, err)
}

pub fn primitive_cases() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let geoms = [
        ("conv2d s1 d1 p1", ConvGeom::new(1, 1, 1)),
        ("conv2d s2 d1 p1", ConvGeom::new(2, 1, 1)),
        ("conv2d s1 d2 p2", ConvGeom::new(1, 2, 2)),
        ("conv2d s2 d2 p0", ConvGeom::new(2, 2, 0)),
    ];
    for (i, (name, geom)) in geoms.into_iter().enumerate() {
        let seed = 10 + i as u64;
        let inputs =
            [uniform(&[2, 3, 7, 6], seed, -1.0, 1.0), uniform(&[4, 3, 3, 3], seed + 100, -0.5, 0.5), uniform(&[4], seed + 200, -0.5, 0.5)];
        out.push(primitive(name, &inputs, move |t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), geom))?);
    }
    let inputs = [uniform(&[2, 5, 4, 3], 20, -1.0, 1.0), uniform(&[3, 5, 1, 1], 21, -1.0, 1.0)];
    out.push(primitive("conv2d 1x1", &inputs, |t, v| t.conv2d(&v[0], &v[1], None, ConvGeom::UNIT))?);

    out.push(primitive("pixel_shuffle down", &[uniform(&[1, 3, 4, 6], 30, -1.0, 1.0)], |t, v| {
        t.pixel_shuffle(&v[0], 2, ShuffleDirection::Down)
    })?);
    out.push(primitive("pixel_shuffle up", &[uniform(&[2, 8, 3, 2], 31, -1.0, 1.0)], |t, v| {
        t.pixel_shuffle(&v[0], 2, ShuffleDirection::Up)
    })?);
    for (name, (ih, iw), (oh, ow)) in
        [("resize_bilinear up", (3, 5), (6, 10)), ("resize_bilinear down", (8, 8), (4, 4)), ("resize_bilinear odd", (5, 7), (3, 4))]
    {
        out.push(primitive(name, &[uniform(&[1, 2, ih, iw], 40, -1.0, 1.0)], move |t, v| t.resize_bilinear(&v[0], oh, ow))?);
    }
    out.push(primitive("global_avg_pool", &[uniform(&[2, 3, 4, 5], 50, -1.0, 1.0)], |t, v| t.global_avg_pool(&v[0]))?);
    let inputs = [uniform(&[2, 5], 60, -1.0, 1.0), uniform(&[3, 5], 61, -1.0, 1.0), uniform(&[3], 62, -1.0, 1.0)];
    out.push(primitive("affine", &inputs, |t, v| t.affine(&v[0], &v[1], &v[2]))?);
    out.push(primitive("relu", &[signed_away_from_zero(&[2, 3, 4, 4], 70, 0.05)], |t, v| t.relu(&v[0]))?);
    out.push(primitive("sigmoid", &[uniform(&[2, 3, 4, 4], 71, -4.0, 4.0)], |t, v| t.sigmoid(&v[0]))?);
    let pair = [uniform(&[2, 3, 4, 4], 80, -1.0, 1.0), uniform(&[2, 3, 4, 4], 81, -1.0, 1.0)];
    out.push(primitive("add", &pair, |t, v| t.add(&v[0], &v[1]))?);
    let inputs = [uniform(&[2, 3, 4, 4], 90, -1.0, 1.0), uniform(&[3], 91, -1.0, 1.0)];
    out.push(primitive("mul_channel shared", &inputs, |t, v| t.mul_channel(&v[0], &v[1]))?);
    let inputs = [uniform(&[2, 3, 4, 4], 92, -1.0, 1.0), uniform(&[2, 3], 93, -1.0, 1.0)];
    out.push(primitive("mul_channel per-image", &inputs, |t, v| t.mul_channel(&v[0], &v[1]))?);
    let a = uniform(&[2, 3, 4, 4], 100, -1.0, 1.0);
    let offset = signed_away_from_zero(&[2, 3, 4, 4], 101, 0.05);
    let b = Tensor::new(a.shape(), a.data().iter().zip(offset.data()).map(|(x, d)| x + d).collect())?;
    out.push(primitive("l1_diff", &[a, b], |t, v| t.l1_diff(&v[0], &v[1]))?);
    let inputs = [uniform(&[2, 2, 3, 3], 110, -1.0, 1.0), uniform(&[2, 3, 3, 3], 111, -1.0, 1.0)];
    out.push(primitive("concat", &inputs, |t, v| t.concat(&[&v[0], &v[1]]))?);
    out.push(primitive("narrow", &[uniform(&[2, 5, 3, 3], 120, -1.0, 1.0)], |t, v| t.narrow(&v[0], 1, 3))?);
    // Distinct, well separated values so the window maxima are unambiguous.
    let mut rng = ChaCha8Rng::seed_from_u64(130);
    let mut vals: Vec<f64> = (0..2 * 3 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    out.push(primitive("max_pool2", &[Tensor::new(&[2, 3, 6, 6], vals)?], |t, v| t.max_pool2(&v[0]))?);
    out.push(primitive("sum", &[uniform(&[3, 4], 140, -1.0, 1.0)], |t, v| t.sum(&v[0]))?);
    out.push(primitive("scale", &[uniform(&[2, 3, 2, 2], 150, -1.0, 1.0)], |t, v| t.scale(&v[0], -2.5))?);
    Ok(out)
}

/// Random non-zero weights and biases for a parameter layout.
fn random_params(specs: &[crate::model::ParamSpec], seed: u64) -> Vec<(String, Tensor<f64>)> {
    let init = init_tensors(specs, seed);
    init.into_iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let t = if name.ends_with(".bias") { uniform(t.shape(), seed + i as u64, -0.1, 0.1) } else { t.cast() };
            (name, t)
        })
        .collect()
}

/// Checks a block whose parameters follow the image in the input list.
fn block_case<F>(name: &str, specs: Vec<crate::model::ParamSpec>, image: Tensor<f64>, per_input: usize, f: F) -> Result<CaseResult>
where
    F: Fn(&Tape<f64>, &Bound<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let params = random_params(&specs, 7);
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![image];
    inputs.extend(params.into_iter().map(|(_, t)| t));
    let builder = |t: &Tape<f64>, v: &[Var<f64>]| {
        let bound = Bound::from_vars(names.iter().cloned().zip(v[1..].iter().cloned()));
        probe_loss(t, &f(t, &bound, &v[0])?, 5)
    };
    case(name, COMPOSITE_TOLERANCE, grad_check_floored(builder, &inputs, EPS, per_input, 3, COMPOSITE_FLOOR))
}

pub fn composite_cases() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let cfg = ModelConfig::standard().reduced(8);
    let c = cfg.encoder_channels[0];

    let mut l = Layout::default();
    l.dense("enc1.drdb", &cfg.drdb(c));
    out.push(block_case("DRDB", l.into_specs(), uniform(&[1, c, 8, 8], 200, -1.0, 1.0), 24, |t, b, x| {
        drdb_forward(t, b, &cfg, "enc1.drdb", x)
    })?);

    for (name, cfg) in [("SAM", cfg.clone()), ("SAM weight-shared", ModelConfig::weight_shared().reduced(8))] {
        let prefix = sam_prefix("enc1", 0);
        let mut l = Layout::default();
        l.sam(&prefix, c, &cfg);
        out.push(block_case(name, l.into_specs(), uniform(&[1, c, 8, 8], 210, -1.0, 1.0), 24, |t, b, x| {
            sam_forward(t, b, &cfg, &prefix, x)
        })?);
    }

    out.push(block_case("network (widths / 8)", layout(&cfg), uniform(&[1, 3, 16, 16], 220, 0.0, 1.0), 3, |t, b, x| {
        let p = forward(t, b, &cfg, x)?;
        let terms = [probe_loss(t, &p.full, 1)?, probe_loss(t, &p.half, 2)?, probe_loss(t, &p.quarter, 3)?];
        t.add(&t.add(&terms[0], &terms[1])?, &terms[2])
    })?);

    let extractor = FeatureExtractor::seeded(2, 17)?.cast::<f64>();
    let loss_cfg = LossConfig { perceptual_block: 2, ..LossConfig::default() };
    let shapes = [[1, 3, 16, 16], [1, 3, 8, 8], [1, 3, 4, 4]];
    let preds: Vec<Tensor<f64>> = shapes.iter().enumerate().map(|(i, s)| uniform(s, 230 + i as u64, 0.0, 1.0)).collect();
    let targets: [Tensor<f64>; 3] = std::array::from_fn(|i| {
        let off = signed_away_from_zero(&shapes[i], 240 + i as u64, 0.05);
        Tensor::new(&shapes[i], preds[i].data().iter().zip(off.data()).map(|(p, d)| p + 0.3 * d).collect())
            .expect("same shape")
    });
    let builder = |t: &Tape<f64>, v: &[Var<f64>]| {
        let preds = Predictions { full: v[0].clone(), half: v[1].clone(), quarter: v[2].clone() };
        Ok(total_loss(t, &preds, &targets, &loss_cfg, &extractor)?.total)
    };
    out.push(case("total_loss", COMPOSITE_TOLERANCE, grad_check_floored(builder, &preds, EPS, 40, 4, COMPOSITE_FLOOR))?);
    Ok(out)
}

/// Every case, primitives first.
pub fn run_all() -> Result<Vec<CaseResult>> {
    let mut out = primitive_cases()?;
    out.extend(composite_cases()?);
    Ok(out)
}
