//! k-means clustering and the indices used to choose k.

mod kmeans;
mod quality;
mod select;

pub use kmeans::{kmeans, unit_normalize, ClusterModel, KMeansConfig};
pub use quality::{
    adjusted_rand_index, calinski_harabasz, davies_bouldin, silhouette, ClusterQuality,
};
pub use select::{select_k, KChoice, KSelection};
