//! Leaky integrate-and-fire dynamics and the piecewise-linear surrogate.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// How the membrane carries over between steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MembraneForm {
    /// `U_t = tau * U_{t-1} * (1 - O_{t-1}) + I_t` (decay with hard reset).
    #[default]
    Reset,
    /// `U_t = tau * (1 - U_{t-1}) + I_t`: no reset, decays toward `tau` without input.
    PaperLiteral,
}

/// Where the surrogate hat is centred.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateCenter {
    /// At the firing threshold, `d = U - v_th`.
    #[default]
    Threshold,
    /// At zero membrane potential, `d = U`.
    PaperLiteral,
}

/// The spike nonlinearity used in the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeFn {
    /// Binary spikes, `O = [U >= v_th]`.
    #[default]
    Heaviside,
    /// The clamped piecewise-quadratic primitive of the surrogate. Used for
    /// gradient checking: with it the backward pass is the exact derivative.
    Smoothed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub tau: f32,
    pub v_th: f32,
    pub t_steps: usize,
    pub lambda: f32,
    pub membrane_form: MembraneForm,
    pub surrogate_center: SurrogateCenter,
    pub spike_fn: SpikeFn,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau: 0.5,
            v_th: 0.5,
            t_steps: 8,
            lambda: 2.0,
            membrane_form: MembraneForm::Reset,
            surrogate_center: SurrogateCenter::Threshold,
            spike_fn: SpikeFn::Heaviside,
        }
    }
}

impl LifParams {
    /// Returns one message per violated range.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau > 0.0 && self.tau < 1.0) {
            out.push(format!("lif.tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.v_th > 0.0) {
            out.push(format!("lif.v_th must be > 0, got {}", self.v_th));
        }
        if self.t_steps < 1 {
            out.push("lif.t_steps must be >= 1".to_string());
        }
        if !(self.lambda > 0.0) {
            out.push(format!("lif.lambda must be > 0, got {}", self.lambda));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    #[inline(always)]
    pub(crate) fn integrate(&self, u_prev: f32, o_prev: f32, current: f32) -> f32 {
        match self.membrane_form {
            MembraneForm::Reset => self.tau * u_prev * (1.0 - o_prev) + current,
            MembraneForm::PaperLiteral => self.tau * (1.0 - u_prev) + current,
        }
    }

    /// Partial derivatives of the membrane update w.r.t. `(u_prev, o_prev)`.
    #[inline(always)]
    pub(crate) fn integrate_partials(&self, u_prev: f32, o_prev: f32) -> (f32, f32) {
        match self.membrane_form {
            MembraneForm::Reset => (self.tau * (1.0 - o_prev), -self.tau * u_prev),
            MembraneForm::PaperLiteral => (-self.tau, 0.0),
        }
    }

    #[inline(always)]
    fn centered(&self, u: f32) -> f32 {
        match self.surrogate_center {
            SurrogateCenter::Threshold => u - self.v_th,
            SurrogateCenter::PaperLiteral => u,
        }
    }

    #[inline(always)]
    pub(crate) fn fire(&self, u: f32) -> f32 {
        match self.spike_fn {
            SpikeFn::Heaviside => {
                if u >= self.v_th {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Smoothed => smooth_step(self.centered(u), self.lambda),
        }
    }

    /// dO/dU as used by the backward pass.
    #[inline(always)]
    pub(crate) fn surrogate(&self, u: f32) -> f32 {
        hat(self.centered(u), self.lambda)
    }
}

#[inline(always)]
fn hat(d: f32, lambda: f32) -> f32 {
    let a = d.abs();
    if a > 1.0 / lambda {
        0.0
    } else {
        -lambda * lambda * a + lambda
    }
}

/// Primitive of [`hat`], clamped to `[0, 1]`.
#[inline(always)]
fn smooth_step(d: f32, lambda: f32) -> f32 {
    let w = 1.0 / lambda;
    if d <= -w {
        0.0
    } else if d >= w {
        1.0
    } else if d < 0.0 {
        let s = lambda * d + 1.0;
        0.5 * s * s
    } else {
        let s = 1.0 - lambda * d;
        1.0 - 0.5 * s * s
    }
}

/// Membrane potential and spike output of a population at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub membrane: Tensor,
    pub spikes: Tensor,
}

/// One step of LIF dynamics for a population.
pub fn lif_step(
    u_prev: &Tensor,
    o_prev: &Tensor,
    input_current: &Tensor,
    params: &LifParams,
) -> Result<NeuronState> {
    u_prev.same_shape(o_prev)?;
    u_prev.same_shape(input_current)?;
    if input_current.has_nan() || u_prev.has_nan() {
        return Err(Error::Numeric("NaN in LIF input".into()));
    }
    let shape = u_prev.shape().to_vec();
    let membrane: Vec<f32> = u_prev
        .data()
        .iter()
        .zip(o_prev.data())
        .zip(input_current.data())
        .map(|((&u, &o), &i)| params.integrate(u, o, i))
        .collect();
    let spikes: Vec<f32> = membrane.iter().map(|&u| params.fire(u)).collect();
    Ok(NeuronState {
        membrane: Tensor::new(shape.clone(), membrane)?,
        spikes: Tensor::new(shape, spikes)?,
    })
}

/// Elementwise surrogate derivative of the spike function.
pub fn surrogate_grad(u: &Tensor, params: &LifParams) -> Tensor {
    let data = u.data().iter().map(|&v| params.surrogate(v)).collect();
    Tensor::new(u.shape().to_vec(), data).expect("shape preserved")
}
