use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::params::{seeded_rng, ParamId, ParamStore};
use crate::tensor::{NormMode, Tensor};

use super::session::Session;
use super::tape::{KinkLog, Var};

type Forward = Box<dyn Fn(&Session<'_, f64>, &[Var<f64>]) -> Result<Var<f64>>>;

/// A tensor's gradient scale is floored at this fraction of the largest
/// gradient in the case, so gradients that are zero up to roundoff are not
/// divided by their own noise.
const SCALE_FLOOR: f64 = 1e-3;

/// A function of some input tensors and the learnable entries of a store,
/// checked against central differences.
pub struct CheckCase {
    pub name: String,
    pub inputs: Vec<(String, Tensor<f64>)>,
    pub store: ParamStore<f64>,
    pub mode: NormMode,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub sample: Option<usize>,
    forward: Forward,
}

impl CheckCase {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(&Session<'_, f64>, &[Var<f64>]) -> Result<Var<f64>> + 'static,
    ) -> Self {
        CheckCase {
            name: name.into(),
            inputs: Vec::new(),
            store: ParamStore::new(),
            mode: NormMode::Train,
            sample: None,
            forward: Box::new(forward),
        }
    }

    pub fn input(mut self, name: impl Into<String>, value: Tensor<f64>) -> Self {
        self.inputs.push((name.into(), value));
        self
    }

    pub fn with_store(mut self, store: ParamStore<f64>) -> Self {
        self.store = store;
        self
    }

    pub fn with_mode(mut self, mode: NormMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_sample(mut self, per_tensor: usize) -> Self {
        self.sample = Some(per_tensor);
        self
    }

    /// Same forward value, but the gradient flowing back through the output
    /// is doubled. A negative control: the check must fail on it.
    pub fn with_broken_backward(mut self) -> Self {
        let inner = std::mem::replace(&mut self.forward, Box::new(|_, _| unreachable!()));
        self.forward = Box::new(move |s, v| {
            let y = inner(s, v)?;
            let value = y.value().clone();
            Ok(s.custom(&[&y], value, Box::new(|g| Ok(vec![Some(g.scale(2.0))]))))
        });
        self
    }

    /// Runs the case, reducing a non-scalar output with the fixed weights `proj`.
    /// Returns the loss and the activation kink regions visited.
    fn eval<'s>(
        &self,
        store: &'s ParamStore<f64>,
        inputs: &[Tensor<f64>],
        proj: &mut Option<Tensor<f64>>,
        seed: u64,
        tracked: bool,
    ) -> Result<(Session<'s, f64>, Vec<Var<f64>>, Var<f64>)> {
        let s = Session::with_tracking(store, self.mode, tracked);
        s.start_kink_log();
        let vars: Vec<Var<f64>> =
            inputs.iter().map(|t| if tracked { s.tracked_input(t.clone()) } else { s.input(t.clone()) }).collect();
        let out = (self.forward)(&s, &vars)?;
        let loss = if out.value().numel() == 1 {
            out
        } else {
            let w = proj.get_or_insert_with(|| {
                let mut rng = seeded_rng(seed ^ 0x5eed);
                let data: Vec<f64> = (0..out.value().numel()).map(|_| StandardNormal.sample(&mut rng)).collect();
                Tensor::from_vec(out.dims().to_vec(), data).expect("output shape")
            });
            let w = s.constant(w.clone());
            let prod = s.mul(&out, &w)?;
            s.sum(&prod)
        };
        Ok((s, vars, loss))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed an activation kink.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub tol: f64,
    /// Closest distance of any activation input to a kink in the base run.
    pub kink_margin: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.checked > 0 && r.max_rel_error < self.tol)
    }
}

enum Target {
    Input(usize),
    Param(ParamId),
}

/// Compares analytic gradients with central differences `(f(x+eps) - f(x-eps)) / 2eps`.
///
/// Every input tensor and learnable parameter gets one report. Its relative
/// error is `max|a - n| / max(max|a|, max|n|)` over the checked coordinates,
/// with the denominator floored at a thousandth of the largest analytic
/// gradient of the case. A coordinate is rejected when either
/// perturbed run lands in a different activation piece than the base run.
pub fn grad_check(case: &CheckCase, seed: u64, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let base_inputs: Vec<Tensor<f64>> = case.inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut proj = None;

    let (analytic, base_log) = {
        let (s, vars, loss) = case.eval(&case.store, &base_inputs, &mut proj, seed, true)?;
        let log: KinkLog = s.take_kink_log();
        let grads = s.backward(&loss)?;
        let mut out: Vec<(String, Target, Tensor<f64>)> = Vec::new();
        for (i, v) in vars.iter().enumerate() {
            out.push((case.inputs[i].0.clone(), Target::Input(i), grads.get_or_zeros(v)));
        }
        for (id, g) in s.param_grads(&grads) {
            out.push((case.store.name(id).to_string(), Target::Param(id), g));
        }
        (out, log)
    };

    let case_scale = analytic.iter().map(|(_, _, g)| g.max_abs()).fold(0.0, f64::max);
    let floor = (SCALE_FLOOR * case_scale).max(f64::MIN_POSITIVE);
    let mut rng = seeded_rng(seed);
    let mut reports = Vec::with_capacity(analytic.len());
    for (name, target, grad) in analytic {
        let numel = grad.numel();
        // Sampled coordinates come in random order; rejected ones are replaced
        // by later candidates, up to four times the requested count.
        let (coords, wanted): (Vec<usize>, usize) = match case.sample {
            Some(k) if k < numel => (sample(&mut rng, numel, (4 * k).min(numel)).into_vec(), k),
            _ => ((0..numel).collect(), numel),
        };
        let (mut diff, mut amax, mut nmax) = (0.0f64, 0.0f64, 0.0f64);
        let (mut checked, mut rejected) = (0, 0);
        for &j in &coords {
            if checked == wanted {
                break;
            }
            let mut side = |delta: f64| -> Result<(f64, KinkLog)> {
                let mut inputs = base_inputs.clone();
                let mut store_copy;
                let store = match target {
                    Target::Input(i) => {
                        inputs[i] = nudge(&inputs[i], j, delta)?;
                        &case.store
                    }
                    Target::Param(id) => {
                        store_copy = case.store.clone();
                        store_copy.set(id, nudge(case.store.get(id), j, delta)?)?;
                        &store_copy
                    }
                };
                let (s, _, loss) = case.eval(store, &inputs, &mut proj, seed, false)?;
                Ok((loss.value().item(), s.take_kink_log()))
            };
            let (plus, log_plus) = side(eps)?;
            let (minus, log_minus) = side(-eps)?;
            if log_plus.regions != base_log.regions || log_minus.regions != base_log.regions {
                rejected += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            diff = diff.max((a - numeric).abs());
            amax = amax.max(a.abs());
            nmax = nmax.max(numeric.abs());
            checked += 1;
        }
        let max_rel_error = diff / amax.max(nmax).max(floor);
        reports.push(InputReport { name, max_rel_error, max_abs_error: diff, checked, rejected });
    }
    Ok(GradCheckReport { name: case.name.clone(), tol, kink_margin: base_log.min_distance, inputs: reports })
}

fn nudge(t: &Tensor<f64>, index: usize, delta: f64) -> Result<Tensor<f64>> {
    let mut data = t.data().to_vec();
    data[index] += delta;
    Tensor::from_vec(t.dims().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let good = CheckCase::new("square", |s, v| Ok(s.mul(&v[0], &v[0])?)).input("x", x.clone());
        let r = grad_check(&good, 1, 1e-4, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");

        // Backward returns twice the true gradient.
        let bad = CheckCase::new("square-broken", |s, v| {
            let value = v[0].value().map(|a| a * a);
            let x = v[0].value().clone();
            Ok(s.custom(&[&v[0]], value, Box::new(move |g| Ok(vec![Some(g.mul(&x)?.scale(4.0))]))))
        })
        .input("x", x);
        let r = grad_check(&bad, 1, 1e-4, 1e-6).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error() > 0.4);
    }

    #[test]
    fn rejects_coordinates_straddling_a_kink() {
        let x = Tensor::from_vec(vec![2], vec![3.0 + 1e-5, 1.0]).unwrap();
        let case = CheckCase::new("hswish", |s, v| Ok(s.activation(&v[0], Activation::HSwish))).input("x", x);
        let r = grad_check(&case, 0, 1e-4, 1e-6).unwrap();
        assert_eq!((r.inputs[0].checked, r.inputs[0].rejected), (1, 1));
        assert!(r.passed());
    }
}
