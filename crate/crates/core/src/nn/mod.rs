//! Neural-network layers, their crossbar mapping and inference.

pub mod im2col;
pub mod layer;
pub mod mapped;
pub mod mapping;
pub mod tensor;
pub mod train;

pub use layer::{LayerSpec, ModelGraph};
pub use mapped::{
    CodeHistogram, ColumnId, ForwardOptions, ForwardOutput, InferenceMode, MappedModel,
    ModelGuardReport, TileId,
};
pub use mapping::{map_layer, MappedLayer, MappingConfig, Tile};
pub use tensor::Tensor;
pub use train::{exact_accuracy, random_mlp, train_reference_mlp, TrainOptions};
