//! Spiking network engine: LIF dynamics, surrogate-gradient BPTT and masked
//! convolutional / dense layers.

pub mod gemm;
pub mod layer;
pub mod lif;
pub mod loss;
pub mod network;
pub mod tensor;

pub use layer::{ArchitectureSpec, HiddenSpec, LayerKind, LayerSpec};
pub use lif::{lif_step, surrogate_grad, LifParams, MembraneForm, NeuronState, SpikeFn, SurrogateCenter};
pub use loss::{argmax, cross_entropy_on_rates};
pub use network::{
    sgd_update, ConnectivityMask, ForwardPass, Gradients, HiddenLayer, LayerGrad, LayerMask, OutputHead,
    SpikingNetwork,
};
pub use tensor::Tensor;
