//! Reference and randomized recording scenes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    enumerate_images, ArrayPose, RoomSpec, SceneLayout, SourcePose, Vec3, DEFAULT_DIMS,
};
use crate::scalar::Real;

/// Six five-microphone arrays and four sources in the default room.
pub fn reference_layout<T: Real>() -> SceneLayout<T> {
    let arrays = [
        ((1.5, 3.0, 1.05), 90.0),
        ((3.0, 1.6, 1.25), 0.0),
        ((4.5, 3.0, 1.45), 90.0),
        ((3.0, 4.4, 0.95), 0.0),
        ((2.2, 2.2, 1.35), 45.0),
        ((3.8, 3.8, 1.15), 45.0),
    ];
    let sources = [(0.8, 1.2, 1.4), (5.2, 1.0, 1.6), (5.0, 5.1, 1.3), (1.1, 4.9, 1.5)];
    SceneLayout {
        arrays: arrays
            .iter()
            .map(|&((x, y, z), tilt)| ArrayPose::nula(Vec3::new(T::lit(x), T::lit(y), T::lit(z)), T::lit(f64::to_radians(tilt))))
            .collect(),
        sources: sources
            .iter()
            .enumerate()
            .map(|(j, &(x, y, z))| SourcePose { position: Vec3::new(T::lit(x), T::lit(y), T::lit(z)), label: format!("S{}", j + 1) })
            .collect(),
    }
}

fn random_point<T: Real, R: Rng + ?Sized>(rng: &mut R, room: &RoomSpec<T>, margin: T) -> Vec3<T> {
    let mut c = |d: T| {
        let lo = margin.as_f64();
        let hi = (d - margin).as_f64();
        T::lit(rng.random_range(lo..hi))
    };
    Vec3::new(c(room.dims[0]), c(room.dims[1]), c(room.dims[2]))
}

/// Random layout: arrays with uniform tilt and sources, every element at
/// least `margin` metres from the walls.
pub fn random_layout<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    room: &RoomSpec<T>,
    n_arrays: usize,
    n_sources: usize,
    margin: T,
) -> Result<SceneLayout<T>> {
    if room.dims.iter().any(|&d| d <= margin * T::lit(2.0) + T::lit(0.3)) {
        return Err(Error::InvalidGeometry("margin leaves no room for arrays".into()));
    }
    let arrays = (0..n_arrays)
        .map(|_| {
            let bary = random_point(rng, room, margin + T::lit(0.15));
            ArrayPose::nula(bary, T::lit(rng.random_range(0.0..std::f64::consts::PI)))
        })
        .collect();
    let sources = (0..n_sources)
        .map(|j| SourcePose { position: random_point(rng, room, margin), label: format!("S{}", j + 1) })
        .collect();
    let layout = SceneLayout { arrays, sources };
    layout.validate(room)?;
    Ok(layout)
}

/// Smallest gap between the direct path and first-order arrival times.
pub fn min_first_order_gap<T: Real>(room: &RoomSpec<T>, src: &Vec3<T>, mic: &Vec3<T>) -> Result<T> {
    let mut toas: Vec<T> = enumerate_images(room, src, 1)?
        .iter()
        .map(|im| (im.position - mic).norm() / room.speed_of_sound)
        .collect();
    toas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(toas.windows(2).fold(T::infinity(), |m, w| m.min(w[1] - w[0])))
}

/// Draws a source and microphone whose direct and first-order arrivals are
/// pairwise at least `min_gap` seconds apart.
pub fn random_separated_pair<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    room: &RoomSpec<T>,
    margin: T,
    min_gap: T,
    max_tries: usize,
) -> Result<(Vec3<T>, Vec3<T>)> {
    for _ in 0..max_tries {
        let src = random_point(rng, room, margin);
        let mic = random_point(rng, room, margin);
        if min_first_order_gap(room, &src, &mic)? >= min_gap {
            return Ok((src, mic));
        }
    }
    Err(Error::InvalidGeometry(format!("no pair with {:.2} ms separation in {max_tries} draws", min_gap.as_f64() * 1e3)))
}

/// Default room dimensions as a vector.
pub fn default_dims<T: Real>() -> [T; 3] {
    DEFAULT_DIMS.map(T::lit)
}
