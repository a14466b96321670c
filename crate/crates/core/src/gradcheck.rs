//! Central finite-difference checks of every differentiable primitive and
//! of the composed backbone.
//!
//! Each check contracts the operation's output with a random adjoint `g`,
//! giving a scalar `f(x) = ⟨g, op(x)⟩` whose gradient is the operation's
//! vector-Jacobian product with `g`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{BackboneModel, MicroCnnConfig};
use crate::error::Result;
use crate::ops::{self, Location};
use crate::readout::objective_gradient;
use crate::record::vjp;
use crate::tensor::Tensor;

/// Gradients at or below this magnitude are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub name: &'static str,
    pub seeds: usize,
    /// Elements compared over all seeds.
    pub checked: usize,
    pub max_rel_err: f64,
}

impl GradcheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

/// `(compared elements, max |a − n| / max(|a|, |n|))` over `|a| > floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (usize, f64) {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, _)| a.abs() > floor)
        .fold((0, 0.0f64), |(n, m), (a, b)| {
            (n + 1, m.max((a - b).abs() / a.abs().max(b.abs())))
        })
}

/// Central differences of `f` at the listed elements of `x`.
pub fn finite_diff_at(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64, indices: &[usize]) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let hi = f(&probe);
            probe.data_mut()[i] = orig - step;
            let lo = f(&probe);
            probe.data_mut()[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

type Check = fn(&mut ChaCha8Rng, f64) -> Result<(usize, f64)>;

fn compare(f: impl Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, step: f64, indices: Option<&[usize]>) -> (usize, f64) {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let numeric = finite_diff_at(f, x, step, idx);
    let picked: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
    max_relative_error(&picked, &numeric, GRAD_FLOOR)
}

fn check_conv(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let (stride, padding) = if rng.random::<bool>() { (2, 1) } else { (1, 0) };
    let x = normal(&[3, 9, 9], rng);
    let k = normal(&[4, 3, 3, 3], rng);
    let b: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
    let out = ops::conv2d(&x, &k, &b, stride, padding)?;
    let g = normal(out.shape(), rng);
    let analytic = ops::conv2d_backward(&g, &k, x.shape(), stride, padding)?;
    let f = |t: &Tensor| dot(&g, &ops::conv2d(t, &k, &b, stride, padding).expect("shape fixed"));
    Ok(compare(f, &x, &analytic, step, None))
}

fn check_relu(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let x = normal(&[2, 5, 5], rng);
    let g = normal(x.shape(), rng);
    let analytic = ops::relu_backward(&g, &x)?;
    let f = |t: &Tensor| dot(&g, &ops::relu(t));
    Ok(compare(f, &x, &analytic, step, None))
}

fn check_maxpool(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let (window, stride) = if rng.random::<bool>() { (2, 2) } else { (3, 2) };
    let x = normal(&[2, 7, 7], rng);
    let (out, argmax) = ops::maxpool2d_with_indices(&x, window, stride)?;
    let g = normal(out.shape(), rng);
    let analytic = ops::maxpool2d_backward(&g, &argmax, x.shape())?;
    let f = |t: &Tensor| dot(&g, &ops::maxpool2d(t, window, stride).expect("shape fixed"));
    Ok(compare(f, &x, &analytic, step, None))
}

fn random_location(rng: &mut ChaCha8Rng) -> Location {
    Location {
        u: rng.random_range(0.05..0.95),
        v: rng.random_range(0.05..0.95),
    }
}

fn check_bilinear_map(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let m = normal(&[3, 5, 6], rng);
    let loc = random_location(rng);
    let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(rng)).collect();
    let analytic = ops::bilinear_sample_backward(&g, m.shape(), loc)?;
    let f = |t: &Tensor| {
        let a = ops::bilinear_sample(t, loc).expect("shape fixed");
        a.iter().zip(&g).map(|(x, y)| x * y).sum()
    };
    Ok(compare(f, &m, &analytic, step, None))
}

fn check_bilinear_location(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let m = normal(&[3, 5, 6], rng);
    let loc = random_location(rng);
    let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(rng)).collect();
    let (du, dv) = ops::bilinear_location_jacobian(&m, loc)?;
    let proj = |v: &[f64]| v.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>();
    let analytic = Tensor::new(vec![2], vec![proj(&du), proj(&dv)])?;
    let x = Tensor::new(vec![2], vec![loc.u, loc.v])?;
    let f = |t: &Tensor| {
        let l = Location {
            u: t.data()[0],
            v: t.data()[1],
        };
        proj(&ops::bilinear_sample(&m, l).expect("location in range"))
    };
    Ok(compare(f, &x, &analytic, step, None))
}

fn backbone_check(
    backbone: &BackboneModel,
    rng: &mut ChaCha8Rng,
    step: f64,
    sample: Option<usize>,
) -> Result<(usize, f64)> {
    let backbone = backbone.with_readout_location(random_location(rng))?;
    let n = backbone.input_size();
    let x = uniform(&[3, n, n], rng);
    let (a, record) = backbone.extract_features(&x)?;
    let g = normal(&[a.len()], rng);
    let analytic = vjp(&record, &g)?;
    let f = |t: &Tensor| {
        let (a, _) = backbone.extract_features(t).expect("shape fixed");
        a.iter().zip(g.data()).map(|(x, y)| x * y).sum()
    };
    let idx: Option<Vec<usize>> = sample.map(|k| (0..k).map(|_| rng.random_range(0..x.len())).collect());
    Ok(compare(f, &x, &analytic, step, idx.as_deref()))
}

fn check_small_backbone(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let cfg = MicroCnnConfig {
        input_size: 16,
        widths: [4, 6],
        feature_dim: 8,
    };
    let backbone = BackboneModel::micro_cnn(cfg, rng.random())?;
    backbone_check(&backbone, rng, step, None)
}

fn check_fixture_backbone(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    backbone_check(&crate::fixtures::fixture_backbone(), rng, step, Some(64))
}

fn check_readout_objective(rng: &mut ChaCha8Rng, step: f64) -> Result<(usize, f64)> {
    let c = 8;
    let maps: Vec<Tensor> = (0..6).map(|_| uniform(&[c, 4, 4], rng)).collect();
    let refs: Vec<&Tensor> = maps.iter().collect();
    let y: Vec<f64> = (0..6).map(|_| StandardNormal.sample(rng)).collect();
    let mut params = normal(&[c + 2], rng);
    params.data_mut()[c] = rng.random_range(-1.5..1.5);
    params.data_mut()[c + 1] = rng.random_range(-1.5..1.5);
    let eval = |p: &Tensor| {
        let d = p.data();
        objective_gradient(&d[..c], (d[c], d[c + 1]), &refs, &y, 0.1, 1e-8).expect("shapes fixed")
    };
    let (_, gw, (gu, gv)) = eval(&params);
    let mut analytic = gw;
    analytic.extend([gu, gv]);
    let analytic = Tensor::new(vec![c + 2], analytic)?;
    Ok(compare(|p| eval(p).0, &params, &analytic, step, None))
}

const CHECKS: [(&str, Check); 8] = [
    ("conv2d", check_conv),
    ("relu", check_relu),
    ("maxpool2d", check_maxpool),
    ("bilinear_sample.featmap", check_bilinear_map),
    ("bilinear_sample.location", check_bilinear_location),
    ("backbone.small", check_small_backbone),
    ("backbone.fixture", check_fixture_backbone),
    ("readout.objective", check_readout_objective),
];

/// Run every check for seeds `0..seeds`.
pub fn run_suite(seeds: usize, step: f64) -> Result<Vec<GradcheckResult>> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(k, (name, check))| {
            let mut checked = 0;
            let mut max_rel_err = 0.0f64;
            for seed in 0..seeds as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003) + k as u64);
                let (n, e) = check(&mut rng, step)?;
                checked += n;
                max_rel_err = max_rel_err.max(e);
            }
            Ok(GradcheckResult {
                name,
                seeds,
                checked,
                max_rel_err,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_skips_small_gradients() {
        let (checked, err) = max_relative_error(&[1.0, 1e-9], &[1.1, 5.0], 1e-8);
        assert_eq!(checked, 1);
        assert!((err - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn quadratic_difference_is_exact() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let d = finite_diff_at(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-3, &[0, 2]);
        assert!((d[0] - 2.0).abs() < 1e-10 && (d[1] - 1.0).abs() < 1e-10);
    }
}
