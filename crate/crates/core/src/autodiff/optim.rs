use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One momentum-SGD update of a single tensor:
/// `v <- mu v + g + wd theta; theta <- theta - lr v`.
pub fn sgd_momentum_step<T: Real>(theta: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *t;
        *t -= lr * *v;
    }
}

/// Adam moment estimates for one tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u32,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

/// One Adam update with decoupled weight decay applied before the adaptive
/// step.
pub fn adam_step<T: Real>(theta: &mut [T], grad: &[T], state: &mut AdamState<T>, h: AdamHyper<T>) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - h.beta1.powi(t);
    let c2 = T::one() - h.beta2.powi(t);
    for (i, (th, &g)) in theta.iter_mut().zip(grad).enumerate() {
        *th -= h.lr * h.weight_decay * *th;
        let m = h.beta1 * state.m[i] + (T::one() - h.beta1) * g;
        let v = h.beta2 * state.v[i] + (T::one() - h.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        *th -= h.lr * (m / c1) / ((v / c2).sqrt() + h.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" | "adamw" => Ok(OptimizerKind::Adam),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Optimizer over every parameter of a [`ParamStore`]. Parameters flagged as
/// weight-decay exempt are updated with zero decay.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    momentum: T,
    beta2: T,
    eps: T,
    weight_decay: T,
    velocity: Vec<Vec<T>>,
    adam: Vec<AdamState<T>>,
}

impl<T: Real> Optimizer<T> {
    /// Momentum SGD.
    pub fn sgd(lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, momentum, weight_decay)
    }

    /// Adam with `beta1 = 0.9, beta2 = 0.999, eps = 1e-8`.
    pub fn adam(lr: T, weight_decay: T) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, T::of(0.9), weight_decay)
    }

    /// `momentum` doubles as Adam's `beta1`.
    pub fn new(kind: OptimizerKind, lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            momentum,
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            weight_decay,
            velocity: Vec::new(),
            adam: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: T) {
        self.lr = lr;
    }

    /// Applies stored gradients; parameters without a gradient are left
    /// untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let n = store.params().len();
        if self.velocity.len() != n {
            self.velocity = store.params().iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
            self.adam = store.params().iter().map(|p| AdamState::new(p.tensor.numel())).collect();
        }
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(grad) = p.grad.as_ref() else { continue };
            let wd = if p.weight_decay_exempt { T::zero() } else { self.weight_decay };
            match self.kind {
                OptimizerKind::Sgd => {
                    sgd_momentum_step(p.tensor.data_mut(), grad, &mut self.velocity[i], self.lr, self.momentum, wd)
                }
                OptimizerKind::Adam => {
                    let h = AdamHyper { lr: self.lr, beta1: self.momentum, beta2: self.beta2, eps: self.eps, weight_decay: wd };
                    adam_step(p.tensor.data_mut(), grad, &mut self.adam[i], h)
                }
            }
        }
    }
}
