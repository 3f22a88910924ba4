//! Metric-learning side of the model: encoder, triplet mining and loss,
//! class centroids, nearest-class-mean inference and a separability
//! diagnostic.

mod backbone;
mod centroids;
mod ncm;
mod separability;
mod triplet;

pub use backbone::{to_array, BackboneArch, BackboneOutput, EmbeddingBackbone};
pub use centroids::{class_means, compute_centroids, Centroid, CentroidStore};
pub use ncm::{accuracy, ncm_classify};
pub use separability::{separability_report, SeparabilityReport};
pub use triplet::{
    centroid_pull_loss, mine_triplets, pairwise_sq_dists, scalar, triplet_loss, Triplet,
    TripletLoss,
};
