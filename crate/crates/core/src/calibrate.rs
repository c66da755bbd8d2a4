//! Joint refinement of array poses and source positions from direct-path
//! (and optionally ceiling-echo) arrival times, plus mismatch reporting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::annotate::goodness_of_match;
use crate::error::{Error, Result};
use crate::geometry::{predict_echo_annotation, EchoAnnotation, EchoLabel, Facet, RoomSpec, SceneLayout, Vec3};
use crate::scalar::Real;

pub const LM_INITIAL_DAMPING: f64 = 1e-3;
pub const LM_MAX_ITERATIONS: usize = 200;
pub const LM_STEP_TOLERANCE: f64 = 1e-10;
/// GoM thresholds reported by [`mismatch_report`], seconds.
pub const GOM_THRESHOLDS: [f64; 3] = [0.5e-3, 0.1e-3, 0.05e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdsMode {
    /// Direct paths only.
    Dmds,
    /// Direct paths and ceiling images.
    Dcmds,
}

impl std::str::FromStr for MdsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmds" => Ok(MdsMode::Dmds),
            "dcmds" => Ok(MdsMode::Dcmds),
            other => Err(Error::InvalidInput(format!("unknown MDS mode '{other}'"))),
        }
    }
}

/// Arrival-time data of a calibration. Missing entries are `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationProblem<T = f64> {
    /// `mics x sources`, seconds.
    pub toa_direct: DMatrix<T>,
    pub toa_ceiling: Option<DMatrix<T>>,
    pub ceiling_height: T,
    pub speed_of_sound: T,
    pub ceiling_weight: T,
}

impl<T: Real> CalibrationProblem<T> {
    /// Collects direct and ceiling TOAs from an annotation.
    pub fn from_annotation(annotation: &EchoAnnotation<T>, n_mics: usize, n_sources: usize, room: &RoomSpec<T>) -> Self {
        let nan = T::nan();
        let mut direct = DMatrix::from_element(n_mics, n_sources, nan);
        let mut ceiling = DMatrix::from_element(n_mics, n_sources, nan);
        let ceil = EchoLabel::first_order(Facet::Ceil);
        for i in 0..n_mics {
            for j in 0..n_sources {
                if let Some(e) = annotation.direct(i, j) {
                    direct[(i, j)] = e.toa;
                }
                if let Some(e) = annotation.find(i, j, &ceil) {
                    ceiling[(i, j)] = e.toa;
                }
            }
        }
        CalibrationProblem {
            toa_direct: direct,
            toa_ceiling: Some(ceiling),
            ceiling_height: room.dims[2],
            speed_of_sound: room.speed_of_sound,
            ceiling_weight: T::one(),
        }
    }

    pub fn validate(&self, layout: &SceneLayout<T>, mode: MdsMode) -> Result<()> {
        let shape = (layout.n_mics(), layout.n_sources());
        if self.toa_direct.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "direct TOAs are {:?}, layout has {shape:?} mics x sources",
                self.toa_direct.shape()
            )));
        }
        let positive = |m: &DMatrix<T>| m.iter().all(|v| v.is_nan_value() || *v > T::zero());
        if !positive(&self.toa_direct) {
            return Err(Error::InvalidInput("TOAs must be positive".into()));
        }
        if mode == MdsMode::Dcmds {
            let c = self
                .toa_ceiling
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("dcMDS needs ceiling TOAs".into()))?;
            if c.shape() != shape || !positive(c) {
                return Err(Error::ShapeMismatch("ceiling TOAs do not match the layout".into()));
            }
            if !(self.ceiling_height > T::zero()) || !(self.ceiling_weight >= T::zero()) {
                return Err(Error::InvalidInput("need a positive ceiling height and non-negative weight".into()));
            }
        }
        if layout.arrays.is_empty() {
            return Err(Error::InvalidInput("layout has no arrays".into()));
        }
        Ok(())
    }
}

/// Unknowns: array 0 height, then `(x, y, z, tilt)` for every other array,
/// then `(x, y, z)` per source. Array 0's horizontal position and tilt stay
/// at their initial values and fix the global frame.
fn pack<T: Real>(layout: &SceneLayout<T>) -> DVector<T> {
    let mut p = vec![layout.arrays[0].barycenter.z];
    for a in &layout.arrays[1..] {
        p.extend([a.barycenter.x, a.barycenter.y, a.barycenter.z, a.azimuth_tilt]);
    }
    for s in &layout.sources {
        p.extend([s.position.x, s.position.y, s.position.z]);
    }
    DVector::from_vec(p)
}

fn unpack<T: Real>(p: &DVector<T>, template: &SceneLayout<T>) -> SceneLayout<T> {
    let mut out = template.clone();
    out.arrays[0].barycenter.z = p[0];
    for (a, arr) in out.arrays.iter_mut().enumerate().skip(1) {
        let b = 1 + 4 * (a - 1);
        arr.barycenter = Vec3::new(p[b], p[b + 1], p[b + 2]);
        arr.azimuth_tilt = p[b + 3];
    }
    let base = 1 + 4 * (template.arrays.len() - 1);
    for (j, s) in out.sources.iter_mut().enumerate() {
        let b = base + 3 * j;
        s.position = Vec3::new(p[b], p[b + 1], p[b + 2]);
    }
    out
}

struct Term {
    mic: usize,
    src: usize,
    ceiling: bool,
    range: f64,
}

fn terms<T: Real>(problem: &CalibrationProblem<T>, mode: MdsMode) -> Vec<Term> {
    let c = problem.speed_of_sound.as_f64();
    let mut out = Vec::new();
    let (ni, nj) = problem.toa_direct.shape();
    for i in 0..ni {
        for j in 0..nj {
            let t = problem.toa_direct[(i, j)].as_f64();
            if !t.is_nan() {
                out.push(Term { mic: i, src: j, ceiling: false, range: c * t });
            }
            if mode == MdsMode::Dcmds {
                if let Some(tc) = &problem.toa_ceiling {
                    let t = tc[(i, j)].as_f64();
                    if !t.is_nan() {
                        out.push(Term { mic: i, src: j, ceiling: true, range: c * t });
                    }
                }
            }
        }
    }
    out
}

/// Residuals `c toa - distance` (scaled by the root of the ceiling weight
/// for ceiling terms) and their Jacobian, in `f64`.
fn residuals_and_jacobian<T: Real>(
    p: &DVector<f64>,
    template: &SceneLayout<T>,
    problem: &CalibrationProblem<T>,
    terms: &[Term],
    with_jacobian: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let n_arrays = template.arrays.len();
    let src_base = 1 + 4 * (n_arrays - 1);
    let h2 = 2.0 * problem.ceiling_height.as_f64();
    let sw = problem.ceiling_weight.as_f64().sqrt();

    let mut mic_info = Vec::new();
    for (a, arr) in template.arrays.iter().enumerate() {
        let (bary, tilt) = if a == 0 {
            ([arr.barycenter.x.as_f64(), arr.barycenter.y.as_f64(), p[0]], arr.azimuth_tilt.as_f64())
        } else {
            let b = 1 + 4 * (a - 1);
            ([p[b], p[b + 1], p[b + 2]], p[b + 3])
        };
        for &o in &arr.local_offsets {
            let o = o.as_f64();
            let pos = [bary[0] + tilt.cos() * o, bary[1] + tilt.sin() * o, bary[2]];
            let dpos_dtilt = [-tilt.sin() * o, tilt.cos() * o, 0.0];
            mic_info.push((a, pos, dpos_dtilt));
        }
    }

    let mut r = DVector::zeros(terms.len());
    let mut jac = if with_jacobian { DMatrix::zeros(terms.len(), p.len()) } else { DMatrix::zeros(0, 0) };
    for (k, t) in terms.iter().enumerate() {
        let (a, m, dm) = mic_info[t.mic];
        let b = src_base + 3 * t.src;
        let s = if t.ceiling { [p[b], p[b + 1], h2 - p[b + 2]] } else { [p[b], p[b + 1], p[b + 2]] };
        let diff = [m[0] - s[0], m[1] - s[1], m[2] - s[2]];
        let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
        let w = if t.ceiling { sw } else { 1.0 };
        r[k] = w * (t.range - d);
        if !with_jacobian || d == 0.0 {
            continue;
        }
        let g = [diff[0] / d, diff[1] / d, diff[2] / d];
        // d(residual)/d(mic) = -g, d(residual)/d(source image) = +g.
        if a == 0 {
            jac[(k, 0)] = -w * g[2];
        } else {
            let c0 = 1 + 4 * (a - 1);
            for q in 0..3 {
                jac[(k, c0 + q)] = -w * g[q];
            }
            jac[(k, c0 + 3)] = -w * (g[0] * dm[0] + g[1] * dm[1] + g[2] * dm[2]);
        }
        let zsign = if t.ceiling { -1.0 } else { 1.0 };
        jac[(k, b)] = w * g[0];
        jac[(k, b + 1)] = w * g[1];
        jac[(k, b + 2)] = w * g[2] * zsign;
    }
    (r, jac)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult<T = f64> {
    pub layout: SceneLayout<T>,
    /// `c toa - distance` per (mic, source), metres; `NaN` where no TOA was given.
    pub residual_direct: DMatrix<T>,
    pub residual_ceiling: Option<DMatrix<T>>,
    /// Half the weighted sum of squared residuals, m^2.
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted least-squares cost of `layout` under `mode`.
pub fn calibration_cost<T: Real>(problem: &CalibrationProblem<T>, layout: &SceneLayout<T>, mode: MdsMode) -> Result<T> {
    problem.validate(layout, mode)?;
    let terms = terms(problem, mode);
    let p = pack(layout).map(|v| v.as_f64());
    let (r, _) = residuals_and_jacobian(&p, layout, problem, &terms, false);
    Ok(T::lit(0.5 * r.norm_squared()))
}

/// Levenberg-Marquardt refinement starting from `init`.
pub fn solve_mds<T: Real>(problem: &CalibrationProblem<T>, init: &SceneLayout<T>, mode: MdsMode) -> Result<CalibrationResult<T>> {
    problem.validate(init, mode)?;
    let terms = terms(problem, mode);
    if terms.is_empty() {
        return Err(Error::InvalidInput("no arrival times to fit".into()));
    }
    let mut p = pack(init).map(|v| v.as_f64());
    let (mut r, mut jac) = residuals_and_jacobian(&p, init, problem, &terms, true);
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = LM_INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let mut accepted = false;
        let mut step_norm = f64::INFINITY;
        while lambda < 1e16 {
            let mut m = a.clone();
            for d in 0..m.nrows() {
                m[(d, d)] += lambda * a[(d, d)].max(1e-12);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&g);
            step_norm = delta.norm();
            let trial = &p + &delta;
            let (rt, _) = residuals_and_jacobian(&trial, init, problem, &terms, false);
            let trial_cost = 0.5 * rt.norm_squared();
            if trial_cost < cost {
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if step_norm < LM_STEP_TOLERANCE {
                break;
            }
        }
        if step_norm < LM_STEP_TOLERANCE {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
        (r, jac) = residuals_and_jacobian(&p, init, problem, &terms, true);
    }

    let layout = unpack(&p.map(T::lit), init);
    let c = problem.speed_of_sound;
    let mics = layout.mic_positions();
    let srcs = layout.source_positions();
    let h2 = T::lit(2.0) * problem.ceiling_height;
    let residual = |toa: &DMatrix<T>, ceiling: bool| {
        DMatrix::from_fn(toa.nrows(), toa.ncols(), |i, j| {
            let mut s = srcs[j];
            if ceiling {
                s.z = h2 - s.z;
            }
            c * toa[(i, j)] - (mics[i] - s).norm()
        })
    };
    Ok(CalibrationResult {
        residual_direct: residual(&problem.toa_direct, false),
        residual_ceiling: match (mode, &problem.toa_ceiling) {
            (MdsMode::Dcmds, Some(tc)) => Some(residual(tc, true)),
            _ => None,
        },
        layout,
        cost: T::lit(cost),
        iterations,
        converged,
    })
}

/// Rotates `layout` about the vertical axis and shifts it horizontally so its
/// microphones and sources best match `reference` in least squares. Both MDS
/// costs are invariant under this motion.
pub fn reanchor_horizontal<T: Real>(layout: &SceneLayout<T>, reference: &SceneLayout<T>) -> SceneLayout<T> {
    let points = |l: &SceneLayout<T>| {
        let mut v: Vec<Vec3<f64>> = l.mic_positions().iter().map(|p| p.map(|x| x.as_f64())).collect();
        v.extend(l.source_positions().iter().map(|p| p.map(|x| x.as_f64())));
        v
    };
    let (a, b) = (points(layout), points(reference));
    if a.len() != b.len() || a.is_empty() {
        return layout.clone();
    }
    let n = a.len() as f64;
    let ca = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let cb = b.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, q) in a.iter().zip(&b) {
        let (p, q) = (p - ca, q - cb);
        sxx += p.x * q.x + p.y * q.y;
        sxy += p.x * q.y - p.y * q.x;
    }
    let theta = sxy.atan2(sxx);
    let (sin, cos) = theta.sin_cos();
    let move_point = |p: &Vec3<T>| {
        let d = p.map(|x| x.as_f64()) - ca;
        Vec3::new(cos * d.x - sin * d.y + cb.x, sin * d.x + cos * d.y + cb.y, p.z.as_f64()).map(T::lit)
    };
    let mut out = layout.clone();
    for arr in out.arrays.iter_mut() {
        arr.barycenter = move_point(&arr.barycenter);
        arr.azimuth_tilt += T::lit(theta);
    }
    for s in out.sources.iter_mut() {
        s.position = move_point(&s.position);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Summary<T = f64> {
    pub max: T,
    pub mean: T,
    pub std: T,
}

impl<T: Real> Summary<T> {
    pub fn of(values: &[T]) -> Self {
        if values.is_empty() {
            return Summary { max: T::zero(), mean: T::zero(), std: T::zero() };
        }
        let n = T::from_usize_lossy(values.len());
        let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        Summary { max: values.iter().fold(T::zero(), |m, &v| m.max(v)), mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MismatchReport<T = f64> {
    /// Distance between refined and reference positions, cm (mics, then sources).
    pub geometric_cm: Vec<T>,
    /// `|c toa_obs - predicted path length|` per direct and first-order echo, cm.
    pub signal_cm: Vec<T>,
    pub geometric: Summary<T>,
    pub signal: Summary<T>,
    /// `(threshold seconds, GoM)`.
    pub gom: Vec<(T, T)>,
    /// Predicted direct or first-order echoes absent from the observation.
    pub skipped: usize,
}

/// Compares observed echo timings to the geometry implied by `layout`, and
/// optionally the layout itself to a reference layout.
pub fn mismatch_report<T: Real>(
    layout: &SceneLayout<T>,
    room: &RoomSpec<T>,
    observed: &EchoAnnotation<T>,
    reference: Option<&SceneLayout<T>>,
) -> Result<MismatchReport<T>> {
    let predicted = predict_echo_annotation(room, layout, 1)?;
    let cm = T::lit(100.0);
    let mut signal_cm = Vec::new();
    let mut skipped = 0;
    for (key, echoes) in &predicted.entries {
        for e in echoes {
            match observed.find(key.mic, key.src, &e.label) {
                Some(o) => signal_cm.push(((o.toa - e.toa) * room.speed_of_sound).abs() * cm),
                None => skipped += 1,
            }
        }
    }
    let mut geometric_cm = Vec::new();
    if let Some(reference) = reference {
        if reference.n_mics() != layout.n_mics() || reference.n_sources() != layout.n_sources() {
            return Err(Error::ShapeMismatch("reference layout differs in size".into()));
        }
        for (a, b) in layout.mic_positions().iter().zip(reference.mic_positions()) {
            geometric_cm.push((a - b).norm() * cm);
        }
        for (a, b) in layout.source_positions().iter().zip(reference.source_positions()) {
            geometric_cm.push((a - b).norm() * cm);
        }
    }
    // GoM compares the pairs both annotations cover.
    let mut restricted = EchoAnnotation::new();
    let mut geo = EchoAnnotation::new();
    for (key, echoes) in &predicted.entries {
        if let Some(obs) = observed.get(key.mic, key.src) {
            restricted.insert(key.mic, key.src, obs.to_vec());
            geo.insert(key.mic, key.src, echoes.clone());
        }
    }
    let gom = GOM_THRESHOLDS
        .iter()
        .map(|&t| Ok((T::lit(t), goodness_of_match(&restricted, &geo, T::lit(t))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MismatchReport {
        geometric: Summary::of(&geometric_cm),
        signal: Summary::of(&signal_cm),
        geometric_cm,
        signal_cm,
        gom,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::reference_layout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn room() -> RoomSpec<f64> {
        RoomSpec::panels("011111").unwrap()
    }

    fn problem_for(layout: &SceneLayout<f64>) -> CalibrationProblem<f64> {
        let room = room();
        let ann = predict_echo_annotation(&room, layout, 1).unwrap();
        CalibrationProblem::from_annotation(&ann, layout.n_mics(), layout.n_sources(), &room)
    }

    fn perturbed(layout: &SceneLayout<f64>, rng: &mut ChaCha8Rng, dist: f64, angle_deg: f64) -> SceneLayout<f64> {
        let mut unit = || {
            let v: Vec3<f64> = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            v / v.norm()
        };
        let mut out = layout.clone();
        for (a, arr) in out.arrays.iter_mut().enumerate() {
            let d = unit() * dist;
            if a == 0 {
                arr.barycenter.z += d.z;
            } else {
                arr.barycenter += d;
                arr.azimuth_tilt += angle_deg.to_radians() * if d.x > 0.0 { 1.0 } else { -1.0 };
            }
        }
        for s in out.sources.iter_mut() {
            s.position += unit() * dist;
        }
        out
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let layout = reference_layout::<f64>();
        let problem = problem_for(&layout);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for mode in [MdsMode::Dmds, MdsMode::Dcmds] {
            let terms = terms(&problem, mode);
            for _ in 0..3 {
                let at = perturbed(&layout, &mut rng, 0.2, 10.0);
                let p = pack(&at);
                let (_, jac) = residuals_and_jacobian(&p, &at, &problem, &terms, true);
                let h = 1e-6;
                for q in 0..p.len() {
                    let mut hi = p.clone();
                    let mut lo = p.clone();
                    hi[q] += h;
                    lo[q] -= h;
                    let (rh, _) = residuals_and_jacobian(&hi, &at, &problem, &terms, false);
                    let (rl, _) = residuals_and_jacobian(&lo, &at, &problem, &terms, false);
                    let fd = (rh - rl) / (2.0 * h);
                    let col = jac.column(q);
                    let err = (&fd - col).norm();
                    assert!(err <= 1e-5 * col.norm().max(1e-3), "param {q}: {err}");
                }
            }
        }
    }

    #[test]
    fn cost_vanishes_at_truth() {
        let layout = reference_layout::<f64>();
        let problem = problem_for(&layout);
        for mode in [MdsMode::Dmds, MdsMode::Dcmds] {
            assert!(calibration_cost(&problem, &layout, mode).unwrap() < 1e-24);
        }
    }

    #[test]
    fn noiseless_recovery_from_perturbed_init() {
        let truth = reference_layout::<f64>();
        let problem = problem_for(&truth);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let init = perturbed(&truth, &mut rng, 0.05, 5.0);
        let res = solve_mds(&problem, &init, MdsMode::Dcmds).unwrap();
        assert!(res.converged);
        let report = mismatch_report(&res.layout, &room(), &predict_echo_annotation(&room(), &truth, 1).unwrap(), Some(&truth)).unwrap();
        let rms = (report.geometric_cm.iter().map(|v| v * v).sum::<f64>() / report.geometric_cm.len() as f64).sqrt();
        assert!(rms < 0.1, "rms {rms} cm");
    }

    #[test]
    fn reanchoring_undoes_a_horizontal_motion() {
        let truth = reference_layout::<f64>();
        let mut moved = truth.clone();
        let (s, c) = 0.07f64.sin_cos();
        let turn = |p: &mut Vec3<f64>| {
            let (x, y) = (p.x - 3.0, p.y - 3.0);
            p.x = 3.0 + c * x - s * y + 0.2;
            p.y = 3.0 + s * x + c * y - 0.1;
        };
        moved.arrays.iter_mut().for_each(|a| {
            turn(&mut a.barycenter);
            a.azimuth_tilt += 0.07;
        });
        moved.sources.iter_mut().for_each(|src| turn(&mut src.position));
        let back = reanchor_horizontal(&moved, &truth);
        for (g, w) in back.mic_positions().iter().zip(truth.mic_positions()) {
            assert!((g - w).norm() < 1e-9);
        }
        for (g, w) in back.source_positions().iter().zip(truth.source_positions()) {
            assert!((g - w).norm() < 1e-9);
        }
    }

    fn mirrored(layout: &SceneLayout<f64>, height: f64) -> SceneLayout<f64> {
        let mut out = layout.clone();
        for a in out.arrays.iter_mut() {
            a.barycenter.z = height - a.barycenter.z;
        }
        for s in out.sources.iter_mut() {
            s.position.z = height - s.position.z;
        }
        out
    }

    #[test]
    fn vertical_flip_fools_dmds_but_not_dcmds() {
        let truth = reference_layout::<f64>();
        let problem = problem_for(&truth);
        let flipped = mirrored(&truth, 2.4);
        let d_true = calibration_cost(&problem, &truth, MdsMode::Dmds).unwrap();
        let d_flip = calibration_cost(&problem, &flipped, MdsMode::Dmds).unwrap();
        assert!((d_true - d_flip).abs() < 1e-20);
        let c_flip = calibration_cost(&problem, &flipped, MdsMode::Dcmds).unwrap();
        assert!(c_flip > 1e-3, "{c_flip}");
        // Starting dMDS at the flip stays there with zero residual.
        let res = solve_mds(&problem, &flipped, MdsMode::Dmds).unwrap();
        assert!(res.cost < 1e-20);
    }

    #[test]
    fn mismatch_of_self_generated_annotation_is_zero() {
        let layout = reference_layout::<f64>();
        let ann = predict_echo_annotation(&room(), &layout, 1).unwrap();
        let r = mismatch_report(&layout, &room(), &ann, Some(&layout)).unwrap();
        assert!(r.signal.max < 1e-9 && r.geometric.max == 0.0);
        assert!(r.gom.iter().all(|&(_, g)| g == 1.0));
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn translation_bounds_direct_mismatch() {
        let layout = reference_layout::<f64>();
        let room = room();
        let observed = predict_echo_annotation(&room, &layout, 1).unwrap();
        let mut shifted = layout.clone();
        for a in shifted.arrays.iter_mut() {
            a.barycenter.x += 0.01;
        }
        let pred = predict_echo_annotation(&room, &shifted, 1).unwrap();
        let mics = layout.mic_positions();
        for (key, obs) in &observed.entries {
            let d_obs = obs[0].toa * room.speed_of_sound;
            let d_new = pred.direct(key.mic, key.src).unwrap().toa * room.speed_of_sound;
            assert!((d_new - d_obs).abs() <= 0.01 + 1e-12);
            // Moving mics along +x lengthens the path exactly when the source lies behind them.
            let dx = mics[key.mic].x - layout.sources[key.src].position.x;
            assert_eq!(d_new > d_obs, dx > 0.0);
        }
    }

    #[test]
    fn gom_thresholds_are_ordered() {
        let layout = reference_layout::<f64>();
        let room = room();
        let mut ann = predict_echo_annotation(&room, &layout, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in ann.entries.values_mut() {
            for e in v.iter_mut() {
                e.toa += rng.random_range(-0.3e-3..0.3e-3);
            }
        }
        let r = mismatch_report(&layout, &room, &ann, None).unwrap();
        assert!(r.gom[2].1 <= r.gom[1].1 && r.gom[1].1 <= r.gom[0].1);
        assert!(r.geometric_cm.is_empty());
    }

    #[test]
    fn dcmds_requires_ceiling_data() {
        let layout = reference_layout::<f64>();
        let mut problem = problem_for(&layout);
        problem.toa_ceiling = None;
        assert!(solve_mds(&problem, &layout, MdsMode::Dcmds).is_err());
        assert!(solve_mds(&problem, &layout, MdsMode::Dmds).is_ok());
    }
}
