//! Masked Adam and the sparse moving average (SEMA) with activation-age tracking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::topology::Mask;
use serde::{Deserialize, Serialize};

/// One weight tensor plus its support, optimizer moments, and averaging state.
///
/// Invariants held outside a backward pass:
///   values, moments, avg, and age are all 0 at mask-0 positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseParam {
    pub values: Tensor,
    pub mask: Mask,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub avg: Tensor,
    /// Steps since most recent activation; 0 means inactive or just activated.
    pub age: Vec<u64>,
}

impl SparseParam {
    pub fn new(mut values: Tensor, mask: Mask) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "values {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        mask.apply(&mut values);
        let shape = values.shape().to_vec();
        let n = values.len();
        Ok(SparseParam {
            values,
            mask,
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            avg: Tensor::zeros(&shape),
            age: vec![0; n],
        })
    }

    pub fn dense(values: Tensor) -> Self {
        let mask = Mask::ones(values.shape());
        SparseParam::new(values, mask).expect("congruent by construction")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.mask.nonzero_count()
    }

    /// Removes position i from the support: value, moments, avg, and age all 0.
    pub fn deactivate(&mut self, i: usize) {
        self.mask.set(i, false);
        self.values.data_mut()[i] = 0.0;
        self.adam_m.data_mut()[i] = 0.0;
        self.adam_v.data_mut()[i] = 0.0;
        self.avg.data_mut()[i] = 0.0;
        self.age[i] = 0;
    }

    /// Adds position i to the support at value exactly 0 with fresh moments.
    pub fn activate(&mut self, i: usize) {
        self.mask.set(i, true);
        self.values.data_mut()[i] = 0.0;
        self.adam_m.data_mut()[i] = 0.0;
        self.adam_v.data_mut()[i] = 0.0;
        self.avg.data_mut()[i] = 0.0;
        self.age[i] = 0;
    }

    /// Zeroes values wherever the mask is off. Idempotent.
    pub fn enforce_mask(&mut self) {
        self.mask.apply(&mut self.values);
    }

    /// masked_grad = dense_grad with mask-0 positions zeroed.
    pub fn masked_grad(&self, dense_grad: &Tensor) -> Tensor {
        let mut g = dense_grad.clone();
        self.mask.apply(&mut g);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam on the active positions only; inactive positions keep
/// zero moments and zero values. `t` is the 1-based step count for bias
/// correction.
pub fn adam_step(
    param: &mut SparseParam,
    masked_grad: &Tensor,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if masked_grad.shape() != param.values.shape() {
        return Err(Error::Dimension(format!(
            "grad {:?} vs param {:?}",
            masked_grad.shape(),
            param.values.shape()
        )));
    }
    masked_grad.check_finite("adam gradient")?;
    if t == 0 {
        return Err(Error::Contract("adam step count is 1-based".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        if !param.mask.get(i) {
            continue;
        }
        let g = masked_grad.data()[i];
        let m = &mut param.adam_m.data_mut()[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        let v = &mut param.adam_v.data_mut()[i];
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = param.adam_m.data()[i] / bc1;
        let v_hat = param.adam_v.data()[i] / bc2;
        param.values.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    param.enforce_mask();
    Ok(())
}

/// Sparse moving average. Ages active positions by one step first, then:
///   T=0 -> 0, T=1 -> current value, T>1 -> beta*sema + (1-beta)*value.
/// The T=1 branch seeds a freshly activated weight's average at its own value
/// instead of (1-beta)*value.
pub fn sema_update(param: &mut SparseParam, beta: f64) {
    for i in 0..param.len() {
        if param.mask.get(i) {
            param.age[i] += 1;
        } else {
            param.age[i] = 0;
        }
        let s = &mut param.avg.data_mut()[i];
        match param.age[i] {
            0 => *s = 0.0,
            1 => *s = param.values.data()[i],
            _ => *s = beta * *s + (1.0 - beta) * param.values.data()[i],
        }
    }
}

/// Plain EMA, no sparsity awareness: shadow = beta*shadow + (1-beta)*values.
pub fn ema_update(shadow: &mut Tensor, values: &Tensor, beta: f64) {
    for (s, &v) in shadow.data_mut().iter_mut().zip(values.data().iter()) {
        *s = beta * *s + (1.0 - beta) * v;
    }
}
