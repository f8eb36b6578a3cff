//! Dense reverse-mode automatic differentiation, layers and the optimizer.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_check, relative_error, REL_ERROR_FLOOR};
pub use graph::{Graph, Var};
pub use layers::{Activation, GruCell, GruState, Linear, Mlp, Params};
pub use optim::RmsProp;
pub use params::{Parameter, ParameterStore};
pub use tensor::{broadcast_shape, Tensor};
