//! Shared fixtures for the latency benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcn_core::{Frame, PointCloud, Vec3};

/// Uniform points inside a car-sized box a street-distance from the
/// sensor. The values are arbitrary; only shapes and counts matter to
/// the timings.
pub fn car_like_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Vec3::new(
                8.0 + rng.random_range(-2.3..2.3),
                12.0 + rng.random_range(-0.9..0.9),
                0.75 + rng.random_range(-0.7..0.7),
            )
        })
        .collect();
    PointCloud::new(points, Frame::ViewerCentred)
}
