//! Fast analytic oracle suite run by `crafted selfcheck`.
//!
//! Setting `CRAFTED_SELFCHECK_MUTATION=project_gradient_sign` flips the sign
//! of the removed component inside gradient projection for the duration of
//! the check; the suite must then fail. This guards the suite against
//! silently passing.

use crafted_core::attack::{
    attack_gradient, detached_loss, l2_norm, project_gradient, project_parameters, two_phase_rollout,
    AdversarialObjective, DeltaTracker,
};
use crafted_core::diffusion::{ddim_step, forward_diffuse, predict_x0, Conditioning, InferencePlan, NoiseSchedule};
use crafted_core::eval::frechet_distance;
use crafted_core::model::{Classifier, ClassifierArch, NoisePredictor, PredictorArch};
use crafted_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MUTATION_ENV: &str = "CRAFTED_SELFCHECK_MUTATION";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    ProjectGradientSign,
}

impl Mutation {
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(MUTATION_ENV).as_deref() {
            Err(_) | Ok("") => Ok(Self::None),
            Ok("project_gradient_sign") => Ok(Self::ProjectGradientSign),
            Ok(other) => Err(format!("unknown {MUTATION_ENV} value {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn projected(g: &[f64], d: &[f64], eta: f64, mutation: Mutation) -> (Vec<f64>, bool) {
    let (out, fired) = project_gradient(g, d, eta, 0.98).expect("equal lengths");
    if mutation == Mutation::ProjectGradientSign && fired {
        // g + c d instead of g - c d
        return (out.iter().zip(g).map(|(o, gi)| 2.0 * gi - o).collect(), fired);
    }
    (out, fired)
}

fn check_ddim(rng: &mut ChaCha8Rng) -> CheckResult {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).expect("valid schedule");
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.random_range(2..=1000usize);
        let tp = rng.random_range(0..t);
        let x0 = Tensor::<f64>::new(&[4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let eps = Tensor::<f64>::new(&[4], (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let (a, ap) = (s.alphas_cumprod()[t], s.alphas_cumprod()[tp]);
        let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
        let x0p = predict_x0(&xt, &eps, t, &s).unwrap();
        let step = ddim_step(&xt, &eps, t, tp, &s).unwrap();
        for i in 0..4 {
            let (x, e) = (x0.data()[i], eps.data()[i]);
            let want_xt = a.sqrt() * x + (1.0 - a).sqrt() * e;
            let want_x0 = (want_xt - (1.0 - a).sqrt() * e) / a.sqrt();
            let want_step = ap.sqrt() * want_x0 + (1.0 - ap).sqrt() * e;
            for (got, want) in [(xt.data()[i], want_xt), (x0p.data()[i], want_x0), (step.data()[i], want_step)] {
                worst = worst.max((got - want).abs() / want.abs().max(1e-3));
            }
        }
    }
    result("ddim formulas", worst <= 1e-6, format!("max relative error {worst:.2e}"))
}

fn check_projection(rng: &mut ChaCha8Rng, mutation: Mutation) -> CheckResult {
    let mut failures = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..16);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eta = rng.random_range(0.05..2.0);
        let (out, fired) = projected(&g, &d, eta, mutation);
        let dot: f64 = out.iter().zip(&d).map(|(a, b)| a * b).sum();
        if fired && dot.abs() > 1e-6 * l2_norm(&g) * l2_norm(&d) {
            failures += 1;
        }
        let mut p = g.clone();
        let mut tracker = DeltaTracker::new(&vec![0.0; n]);
        project_parameters(&mut p, &mut tracker, eta).unwrap();
        if l2_norm(&p) > eta + 1e-6 {
            failures += 1;
        }
    }
    result("projection geometry", failures == 0, format!("{failures} violations in 1000 cases"))
}

/// Independent Gaussian draws whose empirical mean is pinned to `mean`, so the
/// shift under test is exact while the covariances still differ by sampling noise.
pub fn centered_gaussian(n: usize, dim: usize, seed: u64, mean: &[f64]) -> Tensor<f64> {
    let mut t = Tensor::<f64>::standard_normal(&[n, dim], seed);
    for c in 0..dim {
        let m = (0..n).map(|r| t[r * dim + c]).sum::<f64>() / n as f64;
        for r in 0..n {
            t[r * dim + c] += mean[c] - m;
        }
    }
    t
}

fn check_frechet() -> CheckResult {
    let delta = 1.5;
    let mut shift = [0.0; 8];
    shift[0] = delta;
    let a = centered_gaussian(2048, 8, 1, &[0.0; 8]);
    let b = centered_gaussian(2048, 8, 2, &shift);
    let shifted = frechet_distance(&a, &b, 1e-6).unwrap_or(f64::NAN);
    let same = frechet_distance(&a, &a, 1e-6).unwrap_or(f64::NAN);
    let ok = (shifted - delta * delta).abs() <= 0.05 * delta * delta && same <= 1e-6;
    result("frechet identity", ok, format!("shift {delta}: {shifted:.4} (want {:.4}); self {same:.1e}", delta * delta))
}

fn check_gradient(mutation: Mutation) -> CheckResult {
    let arch = PredictorArch {
        image_channels: 1,
        image_size: 4,
        base_channels: 2,
        hidden_dim: 8,
        time_embed_dim: 4,
        num_classes: 2,
    };
    let carch =
        ClassifierArch { image_channels: 1, image_size: 4, conv1_channels: 2, conv2_channels: 3, feature_dim: 4, num_classes: 2 };
    let model = NoisePredictor::<f64>::init(arch, 21).unwrap();
    let clf = Classifier::<f64>::init(carch, 22).unwrap();
    let schedule = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
    let plan = InferencePlan::uniform(&schedule, 5, 2).unwrap();
    let cond = Conditioning::class(0, 3.0);
    let obj = AdversarialObjective::Untargeted;
    let seeds = [7, 8];
    let g = attack_gradient(&model, &clf, &schedule, &plan, &cond, &obj, &seeds).unwrap();
    let rollouts: Vec<_> = seeds.iter().map(|&s| two_phase_rollout(&model, &schedule, &plan, &cond, s).unwrap()).collect();
    let h = 1e-6;
    let mut fd = vec![0.0; model.num_params()];
    for (i, f) in fd.iter_mut().enumerate() {
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        let lp = detached_loss(&plus, &clf, &schedule, &cond, &obj, &rollouts).unwrap();
        let lm = detached_loss(&minus, &clf, &schedule, &cond, &obj, &rollouts).unwrap();
        *f = (lp - lm) / (2.0 * h);
    }
    // the attack applies gradient projection to the summed gradient; run it
    // here too so a broken projection surfaces in this check as well
    let d = Tensor::<f64>::standard_normal(&[fd.len()], 23).into_data();
    let eta = l2_norm(&d);
    let (pa, _) = projected(&g.grad, &d, eta, mutation);
    let (pf, _) = project_gradient(&fd, &d, eta, 0.98).unwrap();
    let diff: Vec<f64> = pa.iter().zip(&pf).map(|(a, b)| a - b).collect();
    let raw: Vec<f64> = g.grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let rel = (l2_norm(&raw) / l2_norm(&fd)).max(l2_norm(&diff) / l2_norm(&pf).max(1e-300));
    result("finite-difference gradient", rel <= 1e-3, format!("relative error {rel:.2e} over {} params", fd.len()))
}

/// Runs every check; the suite passes when all entries pass.
pub fn run(mutation: Mutation) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![check_ddim(&mut rng), check_projection(&mut rng, mutation), check_frechet(), check_gradient(mutation)]
}
