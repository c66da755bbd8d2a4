//! Room geometry estimation from first-order echoes: image sources are
//! multilaterated from anchor microphones and every wall is recovered as the
//! plane bisecting a source and its image.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EchoAnnotation, Facet, RoomSpec, SceneLayout, Vec3};
use crate::scalar::Real;

const RANK_TOL: f64 = 1e-9;
const GN_MAX_ITER: usize = 50;
const GN_STEP_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Multilateration<T = f64> {
    pub point: Vec3<T>,
    /// Root-mean-square range residual, metres.
    pub rms_residual: T,
}

fn to_f64<T: Real>(p: &Vec3<T>) -> Vec3<f64> {
    p.map(|v| v.as_f64())
}

fn rms_range(anchors: &[Vec3<f64>], distances: &[f64], x: &Vec3<f64>) -> f64 {
    let ss: f64 = anchors.iter().zip(distances).map(|(a, d)| ((x - a).norm() - d).powi(2)).sum();
    (ss / anchors.len() as f64).sqrt()
}

/// Locates the point whose distances to `anchors` best match `distances`.
///
/// A closed-form squared-range solution seeds Gauss-Newton iterations on the
/// range residuals. Nearly coplanar anchors admit a second basin mirrored
/// across their plane; both are refined and the lower residual wins.
pub fn multilaterate<T: Real>(anchors: &[Vec3<T>], distances: &[T]) -> Result<Multilateration<T>> {
    if anchors.len() != distances.len() {
        return Err(Error::ShapeMismatch(format!("{} anchors, {} distances", anchors.len(), distances.len())));
    }
    if anchors.len() < 4 {
        return Err(Error::InvalidInput(format!("multilateration needs at least 4 anchors, got {}", anchors.len())));
    }
    if let Some((i, d)) = distances.iter().enumerate().find(|(_, d)| !(d.as_f64() >= 0.0)) {
        return Err(Error::InvalidInput(format!("distance {i} is {}", d.as_f64())));
    }
    let a: Vec<Vec3<f64>> = anchors.iter().map(to_f64).collect();
    let d: Vec<f64> = distances.iter().map(|v| v.as_f64()).collect();
    let n = a.len();
    let centroid = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n as f64;
    let mean_sq_d = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mean_sq_a = a.iter().map(|p| p.norm_squared()).sum::<f64>() / n as f64;

    let design = DMatrix::from_fn(n, 3, |i, k| 2.0 * (a[i][k] - centroid[k]));
    let rhs = DVector::from_fn(n, |i, _| (a[i].norm_squared() - mean_sq_a) - (d[i] * d[i] - mean_sq_d));
    let svd = SVD::new(design, true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smax == 0.0 || smin / smax < RANK_TOL {
        return Err(Error::RankDeficient { ratio: if smax == 0.0 { 0.0 } else { smin / smax } });
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let seed = Vec3::new(sol[0], sol[1], sol[2]);

    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD without right singular vectors".into()))?;
    let k = svd.singular_values.imin();
    let thin = Vec3::new(v_t[(k, 0)], v_t[(k, 1)], v_t[(k, 2)]);
    let first = refine(&a, &d, seed);
    let mirrored = first - thin * (2.0 * (first - centroid).dot(&thin));
    let second = refine(&a, &d, mirrored);
    let x = if rms_range(&a, &d, &second) < rms_range(&a, &d, &first) { second } else { first };
    Ok(Multilateration { point: x.map(T::lit), rms_residual: T::lit(rms_range(&a, &d, &x)) })
}

fn refine(a: &[Vec3<f64>], d: &[f64], mut x: Vec3<f64>) -> Vec3<f64> {
    let mut cost = rms_range(a, d, &x);
    for _ in 0..GN_MAX_ITER {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vec3::zeros();
        for (ai, di) in a.iter().zip(d) {
            let diff = x - ai;
            let r = diff.norm();
            if r == 0.0 {
                continue;
            }
            let g = diff / r;
            jtj += g * g.transpose();
            jtr += g * (r - di);
        }
        let Some(mut step) = jtj.lu().solve(&jtr) else { break };
        let mut accepted = false;
        for _ in 0..30 {
            let cand = x - step;
            let c = rms_range(a, d, &cand);
            if c <= cost {
                x = cand;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.norm() < GN_STEP_TOL * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

/// Plane `normal . x = offset` estimated for one facet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EstimatedPlane<T = f64> {
    /// Unit normal pointing toward the room interior.
    pub normal: Vec3<T>,
    pub offset: T,
    pub facet: Option<Facet>,
    /// Source indices whose images produced the plane.
    pub support: Vec<usize>,
    /// Largest multilateration residual among the supporting images, metres.
    pub residual: T,
}

impl<T: Real> EstimatedPlane<T> {
    pub fn signed_distance(&self, p: &Vec3<T>) -> T {
        self.normal.dot(p) - self.offset
    }
}

/// Perpendicular bisector of `source` and `image`, with the normal pointing
/// from the image toward the source.
pub fn plane_from_image<T: Real>(source: &Vec3<T>, image: &Vec3<T>) -> Result<EstimatedPlane<T>> {
    let dir = source - image;
    let len = dir.norm();
    if !(len > T::zero()) {
        return Err(Error::InvalidGeometry("source and image coincide".into()));
    }
    let normal = dir / len;
    let mid = (source + image) * T::lit(0.5);
    Ok(EstimatedPlane { normal, offset: normal.dot(&mid), facet: None, support: Vec::new(), residual: T::zero() })
}

/// Weighted mean of planes sharing an orientation: the normal is the
/// normalized weighted mean of normals and the offset is the weighted mean of
/// each plane's midpoint projected on it.
pub fn average_planes<T: Real>(planes: &[EstimatedPlane<T>], weights: &[T]) -> Result<EstimatedPlane<T>> {
    if planes.is_empty() || planes.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!("{} planes, {} weights", planes.len(), weights.len())));
    }
    let total = weights.iter().fold(T::zero(), |s, &w| s + w);
    if !(total > T::zero()) {
        return Err(Error::InvalidInput("plane weights sum to zero".into()));
    }
    let sum = planes.iter().zip(weights).fold(Vec3::zeros(), |s, (p, &w)| s + p.normal * w);
    let len = sum.norm();
    if !(len > T::zero()) {
        return Err(Error::Numerical("plane normals cancel".into()));
    }
    let normal = sum / len;
    let offset = planes
        .iter()
        .zip(weights)
        .fold(T::zero(), |s, (p, &w)| s + w * normal.dot(&(p.normal * p.offset)))
        / total;
    let mut support: Vec<usize> = planes.iter().flat_map(|p| p.support.iter().copied()).collect();
    support.sort_unstable();
    support.dedup();
    Ok(EstimatedPlane {
        normal,
        offset,
        facet: planes[0].facet,
        support,
        residual: planes.iter().fold(T::zero(), |m, p| m.max(p.residual)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacetScore {
    pub de_cm: f64,
    pub ae_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryScore {
    pub per_facet: BTreeMap<Facet, FacetScore>,
    pub mean_de_cm: f64,
    pub mean_ae_deg: f64,
    pub missing: Vec<Facet>,
}

/// Distance from each true facet centroid to its estimated plane and angle
/// between normals. Planes without a facet label are ignored.
pub fn score_geometry<T: Real>(estimated: &[EstimatedPlane<T>], truth: &RoomSpec<T>) -> GeometryScore {
    let mut score = GeometryScore::default();
    for plane in estimated {
        let Some(facet) = plane.facet else { continue };
        let centroid = truth.facet_centroid(facet);
        let (n_true, _) = truth.facet_plane(facet);
        let de = plane.signed_distance(&centroid).abs().as_f64() * 100.0;
        let cos = plane.normal.dot(&n_true).abs().as_f64().min(1.0);
        score.per_facet.insert(facet, FacetScore { de_cm: de, ae_deg: cos.acos().to_degrees() });
    }
    score.missing = Facet::ALL.iter().copied().filter(|f| !score.per_facet.contains_key(f)).collect();
    let n = score.per_facet.len();
    if n > 0 {
        score.mean_de_cm = score.per_facet.values().map(|s| s.de_cm).sum::<f64>() / n as f64;
        score.mean_ae_deg = score.per_facet.values().map(|s| s.ae_deg).sum::<f64>() / n as f64;
    }
    score
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RoomEstimate<T = f64> {
    pub planes: Vec<EstimatedPlane<T>>,
    pub score: GeometryScore,
}

/// Per-source, per-facet plane: the image is multilaterated from the first
/// microphone of every array that carries a label for that facet.
pub fn source_planes<T: Real>(
    annotation: &EchoAnnotation<T>,
    layout: &SceneLayout<T>,
    source: usize,
    speed_of_sound: T,
) -> Result<BTreeMap<Facet, EstimatedPlane<T>>> {
    let src = layout
        .sources
        .get(source)
        .ok_or_else(|| Error::InvalidInput(format!("source {source} of {}", layout.n_sources())))?
        .position;
    let anchors = layout.first_mic_indices();
    let mics = layout.mic_positions();
    let found: Vec<Result<Option<(Facet, EstimatedPlane<T>)>>> = Facet::ALL
        .par_iter()
        .map(|&facet| {
            let (pts, dists): (Vec<Vec3<T>>, Vec<T>) = anchors
                .iter()
                .filter_map(|&m| annotation.first_order(m, source, facet).map(|e| (mics[m], e.toa * speed_of_sound)))
                .unzip();
            if pts.len() < 4 {
                return Ok(None);
            }
            let image = multilaterate(&pts, &dists)?;
            let mut plane = plane_from_image(&src, &image.point)?;
            plane.facet = Some(facet);
            plane.support = vec![source];
            plane.residual = image.rms_residual;
            Ok(Some((facet, plane)))
        })
        .collect();
    let mut out = BTreeMap::new();
    for r in found {
        if let Some((f, p)) = r? {
            out.insert(f, p);
        }
    }
    Ok(out)
}

/// Estimates every facet reachable from the labeled first-order echoes of
/// `sources`, averaging planes across sources with unit weights, and scores the
/// result against `truth`. Facets without labels are listed as missing.
pub fn estimate_room<T: Real>(
    annotation: &EchoAnnotation<T>,
    layout: &SceneLayout<T>,
    sources: &[usize],
    truth: &RoomSpec<T>,
) -> Result<RoomEstimate<T>> {
    estimate_room_weighted(annotation, layout, sources, truth, |_| T::one())
}

/// Same as [`estimate_room`] with a caller-supplied weight per source plane.
pub fn estimate_room_weighted<T: Real>(
    annotation: &EchoAnnotation<T>,
    layout: &SceneLayout<T>,
    sources: &[usize],
    truth: &RoomSpec<T>,
    weight: impl Fn(&EstimatedPlane<T>) -> T,
) -> Result<RoomEstimate<T>> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("no sources selected".into()));
    }
    let mut by_facet: BTreeMap<Facet, Vec<EstimatedPlane<T>>> = BTreeMap::new();
    for &s in sources {
        for (f, p) in source_planes(annotation, layout, s, truth.speed_of_sound)? {
            by_facet.entry(f).or_default().push(p);
        }
    }
    let planes = by_facet
        .values()
        .map(|ps| {
            let w: Vec<T> = ps.iter().map(&weight).collect();
            average_planes(ps, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    let score = score_geometry(&planes, truth);
    Ok(RoomEstimate { planes, score })
}
