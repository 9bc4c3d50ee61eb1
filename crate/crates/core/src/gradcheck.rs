//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Each check draws random configurations, evaluates a scalar function and
//! its analytic gradient, and compares against central differences. The
//! error of one configuration is `|g_a - g_n| / max(|g_a|, |g_n|)` over the
//! whole gradient vector (0 when both vanish); a check passes when its worst
//! configuration stays below the tolerance.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, norm};
use crate::losses::{self, LossConfig, Objective};
use crate::nn::{Activation, EncoderStack, Mlp, ModelConfig, Modality, TriEmbeddings};
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Below this gradient norm, central-difference round-off (about
/// `1e-16 * |L| / h` per coordinate) swamps a relative comparison, so the
/// configuration is skipped (a saturated softmax produces these).
pub const MIN_GRAD_NORM: f64 = 1e-3;

pub const ALL_CHECKS: &[&str] = &[
    "triangle_area",
    "cosine",
    "gram_volume",
    "symile_mip",
    "dense_layer",
    "tanh_layer",
    "unit_norm",
    "encoder_stack",
    "loss_triangle",
    "loss_cosine_anchor",
    "loss_gram_volume",
    "loss_symile_mip",
    "loss_dtm",
    "loss_total",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Names from [`ALL_CHECKS`]; `None` runs all of them.
    pub checks: Option<Vec<String>>,
    pub configurations: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negates the analytic gradient of the named check (negative control).
    pub inject_sign_flip: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            checks: None,
            configurations: 100,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            inject_sign_flip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub configurations: usize,
    /// Configurations skipped as degenerate or with a vanishing gradient.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn worst(&self) -> Option<&CheckResult> {
        self.results
            .iter()
            .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)))
    }
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x` along every coordinate.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn unit_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = gaussian_vec(r, n);
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

fn split3(x: &[f64]) -> (&[f64], &[f64], &[f64]) {
    let n = x.len() / 3;
    (&x[..n], &x[n..2 * n], &x[2 * n..])
}

fn pack(emb: &TriEmbeddings) -> Vec<f64> {
    Modality::ALL
        .iter()
        .flat_map(|&m| emb.modality(m).iter().flatten().copied())
        .collect()
}

fn unpack(x: &[f64], b: usize, n: usize) -> TriEmbeddings {
    let rows = |k: usize| (0..b).map(|i| x[(k * b + i) * n..(k * b + i + 1) * n].to_vec()).collect();
    TriEmbeddings {
        text: rows(0),
        video: rows(1),
        audio: rows(2),
    }
}

fn random_batch(r: &mut ChaCha8Rng, b: usize, n: usize) -> TriEmbeddings {
    // raw (non-normalized) embeddings: the losses must hold for any input
    let mut rows = || (0..b).map(|_| unit_vec(r, n).into_iter().map(|x| x * 1.3).collect()).collect();
    TriEmbeddings {
        text: rows(),
        video: rows(),
        audio: rows(),
    }
}

/// One configuration: `(analytic, numeric)`, or `None` if degenerate.
type Sample = Option<(Vec<f64>, Vec<f64>)>;

fn sample(name: &str, r: &mut ChaCha8Rng, h: f64) -> Sample {
    match name {
        "triangle_area" => {
            let n = r.random_range(2..=16);
            let x = gaussian_vec(r, 3 * n);
            let (a, b, c) = split3(&x);
            if geometry::side_gram(a, b, c).g <= 1e-8 {
                return None;
            }
            let g = geometry::triangle_area_grad(a, b, c, 0.0);
            let analytic = [g.d_x, g.d_y, g.d_z].concat();
            let numeric = numeric_grad(&x, h, |p| {
                let (a, b, c) = split3(p);
                geometry::triangle_area(a, b, c, 0.0)
            });
            Some((analytic, numeric))
        }
        "cosine" => {
            let n = r.random_range(2..=16);
            let x = gaussian_vec(r, 2 * n);
            let (a, b) = x.split_at(n);
            let (ga, gb) = geometry::cosine_grad(a, b).ok()?;
            let numeric = numeric_grad(&x, h, |p| {
                let (a, b) = p.split_at(n);
                geometry::cosine(a, b).unwrap()
            });
            Some(([ga, gb].concat(), numeric))
        }
        "gram_volume" => {
            let n = r.random_range(3..=10);
            let x = gaussian_vec(r, 3 * n);
            let (a, b, c) = split3(&x);
            let (g, degenerate) = geometry::gram_volume_grad(&[a, b, c]).ok()?;
            if degenerate || geometry::gram_volume(&[a, b, c]).ok()? < 1e-4 {
                return None;
            }
            let numeric = numeric_grad(&x, h, |p| {
                let (a, b, c) = split3(p);
                geometry::gram_volume(&[a, b, c]).unwrap()
            });
            Some((g.concat(), numeric))
        }
        "symile_mip" => {
            let n = r.random_range(2..=16);
            let x = gaussian_vec(r, 3 * n);
            let (a, b, c) = split3(&x);
            let analytic = geometry::symile_mip_grad(a, b, c).concat();
            let numeric = numeric_grad(&x, h, |p| {
                let (a, b, c) = split3(p);
                geometry::symile_mip(a, b, c)
            });
            Some((analytic, numeric))
        }
        "dense_layer" | "tanh_layer" | "unit_norm" | "encoder_stack" => layer_sample(name, r, h),
        "loss_dtm" => {
            let (b, n) = (r.random_range(2..=5), r.random_range(2..=4));
            let batch = random_batch(r, b, n);
            let hidden = r.random_range(2..=6);
            let head = Mlp::new(&[3 * n, hidden, 1], Activation::Tanh, false, r).ok()?;
            let ids: Vec<u64> = (0..b as u64).collect();
            let negs = losses::sample_negatives(&ids, r);
            let mut m = head.clone();
            let out = losses::dtm_loss(&batch, &mut m, &negs).ok()?;
            let analytic = [pack(&out.grads), m.grads().to_vec()].concat();
            let x = [pack(&batch), head.params().to_vec()].concat();
            let split = 3 * b * n;
            let numeric = numeric_grad(&x, h, |p| {
                let mut m = head.clone();
                m.set_params(&p[split..]).unwrap();
                losses::dtm_loss(&unpack(&p[..split], b, n), &mut m, &negs).unwrap().value
            });
            Some((analytic, numeric))
        }
        _ => loss_sample(name, r, h),
    }
}

fn loss_sample(name: &str, r: &mut ChaCha8Rng, h: f64) -> Sample {
    let objective = match name {
        "loss_triangle" | "loss_total" => Objective::Triangle,
        "loss_cosine_anchor" => Objective::CosineAnchor,
        "loss_gram_volume" => Objective::GramVolume,
        "loss_symile_mip" => Objective::SymileMip,
        other => panic!("unknown gradient check {other}"),
    };
    let b = r.random_range(2..=6);
    let n = if objective == Objective::GramVolume {
        r.random_range(3..=5)
    } else {
        r.random_range(2..=5)
    };
    let tau = r.random_range(0.05..1.0);
    let anchor = Modality::ALL[r.random_range(0..3)];
    let batch = random_batch(r, b, n);
    if objective == Objective::Triangle {
        // skip batches containing a flagged degenerate triangle
        for c in 0..b {
            for d in 0..b {
                if geometry::side_gram(&batch.text[c], &batch.video[d], &batch.audio[d]).g <= 1e-8 {
                    return None;
                }
            }
        }
    }
    if objective == Objective::GramVolume {
        for c in 0..b {
            for d in 0..b {
                if geometry::gram_volume(&[&batch.text[c], &batch.video[d], &batch.audio[d]]).ok()? < 1e-4 {
                    return None;
                }
            }
        }
    }
    let cfg = LossConfig {
        objective,
        tau,
        anchor,
        lambda: if name == "loss_total" { r.random_range(0.05..1.0) } else { 0.0 },
        area_eps: 0.0,
        alpha_t2d: 0.0,
        alpha_d2t: 0.0,
        ..LossConfig::default()
    };
    if name == "loss_total" {
        let head = Mlp::new(&[3 * n, 4, 1], Activation::Tanh, false, r).ok()?;
        let negs = losses::sample_negatives(&(0..b as u64).collect::<Vec<_>>(), r);
        let mut m = head.clone();
        let out = losses::total_loss(&batch, &cfg, Some((&mut m, &negs))).ok()?;
        let numeric = numeric_grad(&pack(&batch), h, |p| {
            let mut m = head.clone();
            losses::total_loss(&unpack(p, b, n), &cfg, Some((&mut m, &negs))).unwrap().value
        });
        return Some((pack(&out.grads), numeric));
    }
    let out = losses::contrastive(&batch, &cfg).ok()?;
    let numeric = numeric_grad(&pack(&batch), h, |p| {
        losses::contrastive(&unpack(p, b, n), &cfg).unwrap().value
    });
    Some((pack(&out.grads), numeric))
}

/// Layer checks differentiate `L = <w, f(x)>` for a random direction `w`,
/// with respect to parameters and input together.
fn layer_sample(name: &str, r: &mut ChaCha8Rng, h: f64) -> Sample {
    if name == "encoder_stack" {
        return stack_sample(r, h);
    }
    let d_in = r.random_range(2..=6);
    let d_out = r.random_range(2..=6);
    let mlp = match name {
        "dense_layer" => Mlp::new(&[d_in, d_out], Activation::Tanh, false, r).ok()?,
        "tanh_layer" => Mlp::new(&[d_in, d_out, d_out], Activation::Tanh, false, r).ok()?,
        _ => Mlp::identity_normalizer(d_in),
    };
    let input = gaussian_vec(r, d_in);
    let w = gaussian_vec(r, mlp.output_dim());
    let mut m = mlp.clone();
    let (out, tape) = m.forward(&input).ok()?;
    let _ = out;
    let dx = m.backward(&tape, &w).ok()?;
    let analytic = [m.grads().to_vec(), dx].concat();
    let split = mlp.num_params();
    let x = [mlp.params().to_vec(), input].concat();
    let numeric = numeric_grad(&x, h, |p| {
        let mut m = mlp.clone();
        m.set_params(&p[..split]).unwrap();
        geometry::dot(&m.embed(&p[split..]).unwrap(), &w)
    });
    Some((analytic, numeric))
}

/// Full encoder stack under the triangle loss, on up to 100 random
/// parameter coordinates.
fn stack_sample(r: &mut ChaCha8Rng, h: f64) -> Sample {
    let dims = (r.random_range(2..=5), r.random_range(2..=6), r.random_range(2..=6));
    let config = ModelConfig {
        latent_dim: 3,
        hidden: vec![r.random_range(2..=5), r.random_range(2..=5)],
        ..ModelConfig::default()
    };
    let stack = EncoderStack::new(dims, &config, r.random())
        .ok()?;
    let b = 3;
    let t: Vec<Vec<f64>> = (0..b).map(|_| gaussian_vec(r, dims.0)).collect();
    let v: Vec<Vec<f64>> = (0..b).map(|_| gaussian_vec(r, dims.1)).collect();
    let a: Vec<Vec<f64>> = (0..b).map(|_| gaussian_vec(r, dims.2)).collect();
    let tau = 0.5;
    let loss_of = |s: &EncoderStack| -> Option<f64> {
        let (emb, _) = s.embed_batch(&t, &v, &a).ok()?;
        Some(losses::triangle_contrastive(&emb, tau, 0.0).ok()?.value)
    };
    let mut s = stack.clone();
    let (emb, tapes) = s.embed_batch(&t, &v, &a).ok()?;
    for c in 0..b {
        for d in 0..b {
            if geometry::side_gram(&emb.text[c], &emb.video[d], &emb.audio[d]).g <= 1e-8 {
                return None;
            }
        }
    }
    let out = losses::triangle_contrastive(&emb, tau, 0.0).ok()?;
    s.backward_batch(&tapes, &out.grads).ok()?;
    let grads = s.flat_grads();
    let params = stack.flat_params();
    let coords: Vec<usize> = if params.len() <= 100 {
        (0..params.len()).collect()
    } else {
        rand::seq::index::sample(r, params.len(), 100).into_vec()
    };
    let analytic = coords.iter().map(|&i| grads[i]).collect();
    let counts: Vec<usize> = Modality::ALL.iter().map(|&m| stack.encoder(m).num_params()).collect();
    let numeric = coords
        .iter()
        .map(|&i| {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p[i] += delta;
                let mut s = stack.clone();
                let mut at = 0;
                for (m, &c) in Modality::ALL.iter().zip(&counts) {
                    s.encoder_mut(*m).set_params(&p[at..at + c]).unwrap();
                    at += c;
                }
                loss_of(&s).unwrap()
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect();
    Some((analytic, numeric))
}

pub fn run_check(name: &str, config: &GradcheckConfig) -> CheckResult {
    let mut r = rng::stream(config.seed, 0x6772_6164 ^ fxhash(name));
    let flip = config.inject_sign_flip.as_deref() == Some(name);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut skipped = 0;
    // cap attempts so a pathological generator cannot spin forever
    let mut attempts = 0;
    while done < config.configurations && attempts < 20 * config.configurations.max(1) {
        attempts += 1;
        match sample(name, &mut r, config.step) {
            Some((_, numeric)) if norm(&numeric) < MIN_GRAD_NORM => skipped += 1,
            Some((mut analytic, numeric)) => {
                if flip {
                    analytic.iter_mut().for_each(|g| *g = -*g);
                }
                let e = rel_error(&analytic, &numeric);
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
                done += 1;
            }
            None => skipped += 1,
        }
    }
    CheckResult {
        name: name.to_string(),
        configurations: done,
        skipped,
        max_rel_error: worst,
        tolerance: config.tolerance,
        passed: done == config.configurations && worst < config.tolerance,
    }
}

fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

pub fn run_suite(config: &GradcheckConfig) -> Result<GradcheckReport, String> {
    let names: Vec<String> = match &config.checks {
        Some(list) => list.clone(),
        None => ALL_CHECKS.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(bad) = names.iter().find(|n| !ALL_CHECKS.contains(&n.as_str())) {
        return Err(format!("unknown gradient check {bad:?}"));
    }
    Ok(GradcheckReport {
        results: names.iter().map(|n| run_check(n, config)).collect(),
    })
}
