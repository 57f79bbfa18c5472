use super::{norm_of, AdversarialExample, AttackError, AttackTarget, BoxBounds, Norm};
use crate::models::{argmax, Differentiable};
use crate::tensor::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::{Frame, FRAME_SIZE, NUM_CLASSES};

/// Carlini–Wagner L2 attack settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    pub initial_c: f64,
    pub binary_search_steps: usize,
    /// Adam iterations per value of `c`; zero returns the clean frame.
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Required logit margin κ.
    pub confidence: f64,
    pub bounds: BoxBounds,
}

impl CwConfig {
    pub fn new(bounds: BoxBounds) -> Self {
        Self {
            initial_c: 1e-2,
            binary_search_steps: 9,
            max_iterations: 1000,
            learning_rate: 1e-2,
            confidence: 0.0,
            bounds,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.initial_c.is_finite() && self.initial_c > 0.0) {
            return bad(format!("initial_c must be positive, got {}", self.initial_c));
        }
        if self.binary_search_steps == 0 {
            return bad("binary_search_steps must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.confidence.is_finite() && self.confidence >= 0.0) {
            return bad(format!("confidence must be non-negative, got {}", self.confidence));
        }
        self.bounds.validate()
    }
}

/// Logit-margin objective `g` and its gradient with respect to the logits.
struct Margin {
    target: AttackTarget,
    /// Model label on the clean frame (the class to leave when untargeted).
    source: usize,
    kappa: f64,
}

impl Margin {
    /// Raw margin: ≤ 0 exactly when the goal is met (ignoring ties).
    fn raw(&self, z: &[f32]) -> (f64, usize, usize) {
        let other = best_other(z, self.pivot());
        match self.target {
            AttackTarget::Targeted(t) => (z[other] as f64 - z[t] as f64, other, t),
            AttackTarget::Untargeted => (z[self.source] as f64 - z[other] as f64, self.source, other),
        }
    }

    /// Class excluded from the "best other" search.
    fn pivot(&self) -> usize {
        match self.target {
            AttackTarget::Targeted(t) => t,
            AttackTarget::Untargeted => self.source,
        }
    }

    /// `g(z) = max(raw, -κ)` and `∂g/∂z`.
    fn value_and_grad(&self, z: &[f32]) -> (f64, Vec<f32>) {
        let (raw, plus, minus) = self.raw(z);
        let mut d = vec![0.0f32; z.len()];
        if raw > -self.kappa {
            d[plus] += 1.0;
            d[minus] -= 1.0;
            (raw, d)
        } else {
            (-self.kappa, d)
        }
    }

    fn met(&self, z: &[f32]) -> bool {
        let label = argmax(z);
        let label_ok = self.target.is_met(self.source, label);
        label_ok && self.raw(z).0 <= -self.kappa
    }
}

fn best_other(z: &[f32], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in z.iter().enumerate() {
        if i != skip && (best == usize::MAX || v > z[best]) {
            best = i;
        }
    }
    best
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for j in 0..w.len() {
            self.m[j] = ADAM_BETA1 * self.m[j] + (1.0 - ADAM_BETA1) * g[j];
            self.v[j] = ADAM_BETA2 * self.v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            w[j] -= lr * (self.m[j] / bc1) / ((self.v[j] / bc2).sqrt() + ADAM_EPS);
        }
    }
}

/// Maps `w` through `lo + (hi - lo)(tanh w + 1)/2`, clamped to the box in `f32`.
fn to_frame(w: &[f64], b: BoxBounds) -> Vec<f32> {
    let (lo, span) = (b.lo as f64, b.hi as f64 - b.lo as f64);
    w.iter()
        .map(|&wi| ((lo + span * (wi.tanh() + 1.0) / 2.0) as f32).clamp(b.lo, b.hi))
        .collect()
}

struct Best {
    l2: f64,
    frame: Vec<f32>,
}

enum Branch {
    Done { succeeded: bool, last: Vec<f32> },
    NonFinite { what: &'static str, iteration: usize },
}

/// Carlini–Wagner L2 attack.
///
/// Works in the unit cube obtained by mapping the box affinely onto `[0, 1]`,
/// with `u* = (tanh w + 1)/2`, and minimizes `‖u* − u‖² + c·g(x*)` by Adam for
/// each `c` of a binary search. The successful iterate with the smallest L2
/// perturbation is returned; if none succeeds the final iterate of the last
/// branch is returned (its `success` flag then comes from its labels alone).
pub fn cw_attack<M: Differentiable + ?Sized>(
    model: &M,
    x: &Frame,
    target: AttackTarget,
    config: &CwConfig,
) -> Result<AdversarialExample, AttackError> {
    config.validate()?;
    target.validate()?;
    let b = config.bounds;
    if !b.contains(x) {
        return Err(AttackError::OutsideBox { lo: b.lo, hi: b.hi });
    }
    let clean_logits = model.logits(x)?;
    let source = argmax(&clean_logits);
    let margin = Margin {
        target,
        source,
        kappa: config.confidence,
    };
    if matches!(target, AttackTarget::Targeted(_)) && margin.met(&clean_logits) {
        return AdversarialExample::assemble(model, x, x, b, target, Some(source));
    }
    if config.max_iterations == 0 {
        return AdversarialExample::assemble(model, x, x, b, target, Some(source));
    }

    let span = b.hi as f64 - b.lo as f64;
    let u: Vec<f64> = x
        .as_slice()
        .iter()
        .map(|&v| (v as f64 - b.lo as f64) / span)
        .collect();
    let w0: Vec<f64> = u.iter().map(|&ui| ((2.0 * ui - 1.0) * (1.0 - 1e-6)).atanh()).collect();

    let mut best: Option<Best> = None;
    let mut last_frame = x.as_slice().to_vec();
    let (mut c, mut c_fail, mut c_ok) = (config.initial_c, 0.0f64, None::<f64>);

    for _ in 0..config.binary_search_steps {
        let mut restarted = false;
        let outcome = loop {
            match run_branch(model, x, &u, &w0, &margin, c, config, &mut best) {
                Branch::NonFinite { what, iteration } if !restarted => {
                    log::warn!("non-finite {what} at c = {c}, iteration {iteration}; restarting branch");
                    restarted = true;
                }
                Branch::NonFinite { what, iteration } => {
                    return Err(AttackError::NonFinite { what, c, iteration });
                }
                done => break done,
            }
        };
        let Branch::Done { succeeded, last } = outcome else {
            unreachable!("non-finite outcomes return above")
        };
        last_frame = last;
        if succeeded {
            c_ok = Some(c_ok.map_or(c, |o: f64| o.min(c)));
        } else {
            c_fail = c_fail.max(c);
        }
        c = match c_ok {
            Some(hi) => (c_fail + hi) / 2.0,
            None => c * 10.0,
        };
    }

    let chosen = match best {
        Some(bst) => bst.frame,
        None => last_frame,
    };
    let candidate = Frame::new(chosen).map_err(|e| AttackError::Config(e.to_string()))?;
    AdversarialExample::assemble(model, x, &candidate, b, target, Some(source))
}

#[allow(clippy::too_many_arguments)]
fn run_branch<M: Differentiable + ?Sized>(
    model: &M,
    x: &Frame,
    u: &[f64],
    w0: &[f64],
    margin: &Margin,
    c: f64,
    config: &CwConfig,
    best: &mut Option<Best>,
) -> Branch {
    let b = config.bounds;
    let span = b.hi as f64 - b.lo as f64;
    let mut w = w0.to_vec();
    let mut adam = Adam::new(FRAME_SIZE);
    let mut grad = vec![0.0f64; FRAME_SIZE];
    let mut succeeded = false;
    let mut current = to_frame(&w, b);
    for it in 0..config.max_iterations {
        current = to_frame(&w, b);
        let frame = Frame::new(current.clone());
        let Ok(frame) = frame else {
            return Branch::NonFinite { what: "iterate", iteration: it };
        };
        let mut g_val = 0.0;
        let mut logits = Vec::new();
        let res = model.logits_and_input_grad(&frame, &mut |z| {
            logits = z.to_vec();
            let (g, dz) = margin.value_and_grad(z);
            g_val = g;
            dz.into_iter().map(|d| d * c as f32).collect()
        });
        let Ok((_, gx)) = res else {
            return Branch::NonFinite { what: "model evaluation", iteration: it };
        };
        let mut dist = 0.0f64;
        for j in 0..FRAME_SIZE {
            let t = w[j].tanh();
            let us = (t + 1.0) / 2.0;
            let diff = us - u[j];
            dist += diff * diff;
            let dt = 1.0 - t * t;
            grad[j] = diff * dt + gx[j] as f64 * span * dt / 2.0;
        }
        let loss = dist + c * g_val;
        if !loss.is_finite() || logits.len() != NUM_CLASSES || grad.iter().any(|g| !g.is_finite()) {
            return Branch::NonFinite { what: "loss", iteration: it };
        }
        if margin.met(&logits) {
            succeeded = true;
            let eta: Vec<f32> = current.iter().zip(x.as_slice()).map(|(a, o)| a - o).collect();
            let l2 = norm_of(&eta, Norm::L2);
            if best.as_ref().is_none_or(|bst| l2 < bst.l2) {
                *best = Some(Best {
                    l2,
                    frame: current.clone(),
                });
            }
        }
        adam.step(&mut w, &grad, config.learning_rate);
    }
    Branch::Done {
        succeeded,
        last: current,
    }
}
