//! Finite-difference checks in f64. Each returns the relative error between
//! the autograd gradient and central differences.

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use rand::Rng;

use replaykd::data::{ImageShape, LabeledBatch, Normalization};
use replaykd::distill::{covariance_penalty, embedding_distance, feature_attention_loss, EmbeddingPair};
use replaykd::generator::{generator_loss, sample_latent, GeneratorArch, ReplayGenerator};
use replaykd::metric::{mine_triplets, triplet_loss, BackboneArch, EmbeddingBackbone};
use replaykd::nn::ParamSet;
use replaykd::trainer::{student_objective, RunConfig};

use super::{grad_rel_err, numeric_grad, rand_matrix, rng, scalar, sq_dist, tensor_nd};

const H: f64 = 1e-6;

/// Autograd gradient of `f` at `x` (shape `shape`) against central
/// differences.
pub fn check_input_grad(f: &dyn Fn(&Tensor) -> Tensor, x: &[f64], shape: &[usize]) -> f64 {
    let var = Var::from_tensor(&tensor_nd(x, shape)).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
        None => vec![0.0; x.len()],
    };
    let numeric = numeric_grad(&|p: &[f64]| scalar(&f(&tensor_nd(p, shape))), x, H);
    grad_rel_err(&analytic, &numeric)
}

/// Same check over the trainable parameters of `params`.
pub fn check_param_grad(params: &ParamSet, loss: &dyn Fn() -> Tensor) -> f64 {
    let l = loss();
    let grads = l.backward().unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for var in params.vars() {
        let shape = var.as_tensor().dims().to_vec();
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        match grads.get(var.as_tensor()) {
            Some(g) => analytic.extend(g.flatten_all().unwrap().to_vec1::<f64>().unwrap()),
            None => analytic.extend(vec![0.0; base.len()]),
        }
        let mut probe = base.clone();
        for i in 0..base.len() {
            let mut eval = |v: f64| {
                probe[i] = v;
                var.set(&tensor_nd(&probe, &shape)).unwrap();
                scalar(&loss())
            };
            let up = eval(base[i] + H);
            let down = eval(base[i] - H);
            probe[i] = base[i];
            numeric.push((up - down) / (2.0 * H));
        }
        var.set(&tensor_nd(&base, &shape)).unwrap();
    }
    grad_rel_err(&analytic, &numeric)
}

/// Triplet loss on an 8×8 embedding, at a point where every hinge is at
/// least `0.05` away from its kink.
pub fn triplet(seed: u64) -> f64 {
    let mut r = rng(seed);
    let labels: Vec<u32> = (0..8).map(|i| (i / 2) as u32).collect();
    loop {
        let z = rand_matrix(&mut r, 8, 8, 0.3);
        let arr = Array2::from_shape_fn((8, 8), |(i, j)| z[i][j] as f32);
        let mined = mine_triplets(arr.view(), &labels).unwrap();
        let margins: Vec<f64> = mined
            .iter()
            .map(|t| sq_dist(&z[t.anchor], &z[t.positive]) - sq_dist(&z[t.anchor], &z[t.negative]) + 0.2)
            .collect();
        if margins.iter().any(|m| m.abs() < 0.05) || margins.iter().all(|m| *m < 0.0) {
            continue;
        }
        let flat: Vec<f64> = z.concat();
        return check_input_grad(
            &|x| triplet_loss(x, &mined, 0.2).unwrap().value,
            &flat,
            &[8, 8],
        );
    }
}

/// Feature attention loss with respect to the student maps; batch 4, two
/// layers of 2×3×3.
pub fn fam(seed: u64) -> f64 {
    let mut r = rng(seed);
    let t: Vec<Tensor> = (0..2).map(|_| tensor_nd(&rand_matrix(&mut r, 4, 18, 1.0).concat(), &[4, 2, 3, 3])).collect();
    let s = rand_matrix(&mut r, 2, 4 * 18, 1.0).concat();
    check_input_grad(
        &|x| {
            let s0 = x.narrow(0, 0, 4).unwrap();
            let s1 = x.narrow(0, 4, 4).unwrap();
            feature_attention_loss(&t, &[s0, s1]).unwrap()
        },
        &s,
        &[8, 2, 3, 3],
    )
}

/// Covariance penalty of a 4×8 embedding.
pub fn penalty(seed: u64) -> f64 {
    let mut r = rng(seed);
    let z = rand_matrix(&mut r, 4, 8, 1.0).concat();
    check_input_grad(&|x| covariance_penalty(x).unwrap(), &z, &[4, 8])
}

/// `D_E` with respect to the student embedding, 4×8.
pub fn distance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let teacher = tensor_nd(&rand_matrix(&mut r, 4, 8, 1.0).concat(), &[4, 8]);
    let z = rand_matrix(&mut r, 4, 8, 1.0).concat();
    check_input_grad(
        &|x| embedding_distance(&EmbeddingPair::new(x.clone(), teacher.clone()).unwrap()).unwrap(),
        &z,
        &[4, 8],
    )
}

pub fn toy_arch() -> BackboneArch {
    BackboneArch {
        input: ImageShape::new(1, 4, 4),
        stage_widths: vec![2],
        blocks_per_stage: 1,
        embedding_dim: 3,
    }
}

/// Toy backbone in f64. Biases start at zero, which puts dead pixels exactly
/// on a ReLU kink, so every parameter gets a small random offset.
pub fn toy_backbone(seed: u64) -> EmbeddingBackbone {
    let model = EmbeddingBackbone::new(toy_arch(), seed).unwrap().to_dtype(DType::F64).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for var in model.params().vars() {
        let shape = var.as_tensor().dims().to_vec();
        let v: Vec<f64> = var
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()
            .into_iter()
            .map(|x| x + r.random_range(-0.1..0.1))
            .collect();
        var.set(&tensor_nd(&v, &shape)).unwrap();
    }
    model
}

/// `L_G` with respect to the generator parameters, toy models.
pub fn generator(seed: u64) -> f64 {
    let arch = GeneratorArch { latent_dim: 100, hidden: [3, 2], output: ImageShape::new(1, 4, 4) };
    let norm = Normalization { mean: vec![0.4], std: vec![0.3] };
    let g = ReplayGenerator::new(arch, &norm, seed).unwrap().to_dtype(DType::F64).unwrap();
    let student = toy_backbone(seed + 1);
    let teacher = toy_backbone(seed + 2).freeze().unwrap();
    let z = sample_latent(4, 100, &mut rng(seed)).unwrap();
    let z = replaykd::generator::LatentBatch { z: z.z.to_dtype(DType::F64).unwrap() };
    check_param_grad(g.params(), &|| generator_loss(&g, &student, &teacher, &z).unwrap())
}

/// Full student objective with respect to the student parameters on the
/// toy backbone.
pub fn student_total(seed: u64) -> f64 {
    let mut r = rng(seed);
    let student = toy_backbone(seed + 1);
    let teacher = toy_backbone(seed + 2).freeze().unwrap();
    let images: Vec<f64> = (0..8 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
    let real = LabeledBatch::new(tensor_nd(&images, &[8, 1, 4, 4]), vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    let synth: Vec<f64> = (0..4 * 16).map(|_| r.random_range(-1.0..1.0)).collect();
    let synth = Tensor::from_vec(synth, (4, 1, 4, 4), &Device::Cpu).unwrap();
    // a margin large enough that every hinge stays active under probing
    let config = RunConfig { margin: 5.0, ..RunConfig::default() };
    check_param_grad(student.params(), &|| {
        student_objective(&student, Some(&teacher), &real, Some(&synth), None, &config)
            .unwrap()
            .total
    })
}
