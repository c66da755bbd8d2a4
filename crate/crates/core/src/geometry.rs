//! Cuboid rooms, scene layouts, image sources and echo timing prediction.
//!
//! The room occupies `[0, Lx] x [0, Ly] x [0, Lz]`. Facet naming follows the
//! compass convention used by the surface codes: west is `x = 0`, east is
//! `x = Lx`, south is `y = 0`, north is `y = Ly`, floor is `z = 0` and ceiling
//! is `z = Lz`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = Vector3<T>;

/// Speed of sound in air at 24 C and 80% relative humidity, m/s.
pub const SPEED_OF_SOUND: f64 = 346.98;

/// Default shoebox dimensions, metres.
pub const DEFAULT_DIMS: [f64; 3] = [6.0, 6.0, 2.4];
/// Pressure reflection coefficients of reflective and absorbent panels.
pub const DEFAULT_REFLECTIVE: f64 = 0.925;
pub const DEFAULT_ABSORBENT: f64 = 0.66;

/// Microphone offsets of a nULA along its axis, relative to the barycenter (m).
pub const NULA_OFFSETS: [f64; 5] = [-0.1225, -0.0825, -0.0325, 0.0325, 0.1325];

/// One of the six planar boundaries of a cuboid room.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Floor,
    Ceil,
    West,
    South,
    East,
    North,
}

impl Facet {
    /// Facets in surface-code digit order.
    pub const ALL: [Facet; 6] = [
        Facet::Floor,
        Facet::Ceil,
        Facet::West,
        Facet::South,
        Facet::East,
        Facet::North,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Coordinate axis orthogonal to the facet.
    pub fn axis(self) -> usize {
        match self {
            Facet::West | Facet::East => 0,
            Facet::South | Facet::North => 1,
            Facet::Floor | Facet::Ceil => 2,
        }
    }

    /// True when the facet sits at the upper end of its axis.
    pub fn is_upper(self) -> bool {
        matches!(self, Facet::East | Facet::North | Facet::Ceil)
    }

    pub fn on_axis(axis: usize, upper: bool) -> Facet {
        match (axis, upper) {
            (0, false) => Facet::West,
            (0, true) => Facet::East,
            (1, false) => Facet::South,
            (1, true) => Facet::North,
            (_, false) => Facet::Floor,
            (_, true) => Facet::Ceil,
        }
    }

    pub fn code(self) -> char {
        match self {
            Facet::Floor => 'f',
            Facet::Ceil => 'c',
            Facet::West => 'w',
            Facet::South => 's',
            Facet::East => 'e',
            Facet::North => 'n',
        }
    }

    pub fn from_code(c: char) -> Option<Facet> {
        Facet::ALL.into_iter().find(|f| f.code() == c)
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Facet::Floor => "floor",
            Facet::Ceil => "ceil",
            Facet::West => "west",
            Facet::South => "south",
            Facet::East => "east",
            Facet::North => "north",
        };
        f.write_str(name)
    }
}

/// Sequence of facets hit along a propagation path. The empty label is the
/// direct path and prints as `d`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EchoLabel(pub Vec<Facet>);

impl EchoLabel {
    pub fn direct() -> Self {
        EchoLabel(Vec::new())
    }

    pub fn first_order(facet: Facet) -> Self {
        EchoLabel(vec![facet])
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn is_direct(&self) -> bool {
        self.0.is_empty()
    }

    /// The facet of a first-order label.
    pub fn single_facet(&self) -> Option<Facet> {
        match self.0.as_slice() {
            [f] => Some(*f),
            _ => None,
        }
    }
}

impl fmt::Display for EchoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("d");
        }
        for facet in &self.0 {
            write!(f, "{}", facet.code())?;
        }
        Ok(())
    }
}

impl FromStr for EchoLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "d" {
            return Ok(EchoLabel::direct());
        }
        s.chars()
            .map(|c| {
                Facet::from_code(c)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown facet code '{c}' in label '{s}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(EchoLabel)
    }
}

impl Serialize for EchoLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EchoLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cuboid room with per-facet amplitude reflection coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RoomSpec<T = f64> {
    pub dims: [T; 3],
    /// Indexed by [`Facet::index`].
    pub reflectivity: [T; 6],
    pub speed_of_sound: T,
}

impl<T: Real> RoomSpec<T> {
    pub fn new(dims: [T; 3], reflectivity: [T; 6], speed_of_sound: T) -> Result<Self> {
        let room = RoomSpec { dims, reflectivity, speed_of_sound };
        room.validate()?;
        Ok(room)
    }

    /// Room with every facet set to the same reflection coefficient.
    pub fn uniform(dims: [T; 3], reflectivity: T) -> Result<Self> {
        Self::new(dims, [reflectivity; 6], T::lit(SPEED_OF_SOUND))
    }

    /// Builds a room from a six-digit surface code (`floor ceil west south east north`),
    /// mapping `1` to `reflective` and `0` to `absorbent`.
    pub fn from_surface_code(dims: [T; 3], code: &str, reflective: T, absorbent: T) -> Result<Self> {
        let digits = parse_surface_code(code)?;
        let mut reflectivity = [absorbent; 6];
        for (r, on) in reflectivity.iter_mut().zip(digits) {
            if on {
                *r = reflective;
            }
        }
        Self::new(dims, reflectivity, T::lit(SPEED_OF_SOUND))
    }

    /// Default-sized room with the default panel coefficients.
    pub fn panels(code: &str) -> Result<Self> {
        Self::from_surface_code(
            DEFAULT_DIMS.map(T::lit),
            code,
            T::lit(DEFAULT_REFLECTIVE),
            T::lit(DEFAULT_ABSORBENT),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > T::zero()) || !d.is_finite_value()) {
            return Err(Error::InvalidGeometry("room dimensions must be positive".into()));
        }
        if self.reflectivity.iter().any(|&r| !(r >= T::zero() && r <= T::one())) {
            return Err(Error::InvalidGeometry("reflectivity must lie in [0, 1]".into()));
        }
        if !(self.speed_of_sound > T::zero()) || !self.speed_of_sound.is_finite_value() {
            return Err(Error::InvalidGeometry("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn reflectivity_of(&self, facet: Facet) -> T {
        self.reflectivity[facet.index()]
    }

    /// Surface code with `1` for every facet whose reflectivity reaches `threshold`.
    pub fn surface_code(&self, threshold: T) -> String {
        self.reflectivity.iter().map(|&r| if r >= threshold { '1' } else { '0' }).collect()
    }

    pub fn contains_strictly(&self, p: &Vec3<T>) -> bool {
        (0..3).all(|a| p[a] > T::zero() && p[a] < self.dims[a])
    }

    pub fn volume(&self) -> T {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface_area(&self) -> T {
        let [x, y, z] = self.dims;
        T::lit(2.0) * (x * y + x * z + y * z)
    }

    /// Coordinate of the facet plane along its axis.
    pub fn facet_coordinate(&self, facet: Facet) -> T {
        if facet.is_upper() {
            self.dims[facet.axis()]
        } else {
            T::zero()
        }
    }

    /// Inward unit normal `n` and offset `o` with the facet plane `n . x = o`.
    pub fn facet_plane(&self, facet: Facet) -> (Vec3<T>, T) {
        let mut n = Vec3::zeros();
        let a = facet.axis();
        if facet.is_upper() {
            n[a] = -T::one();
            (n, -self.dims[a])
        } else {
            n[a] = T::one();
            (n, T::zero())
        }
    }

    /// Center point of the facet rectangle.
    pub fn facet_centroid(&self, facet: Facet) -> Vec3<T> {
        let half = T::lit(0.5);
        let mut c = Vec3::new(self.dims[0] * half, self.dims[1] * half, self.dims[2] * half);
        c[facet.axis()] = self.facet_coordinate(facet);
        c
    }

    /// Mirror image of `p` across the plane of `facet`.
    pub fn mirror(&self, p: &Vec3<T>, facet: Facet) -> Vec3<T> {
        let mut q = *p;
        let a = facet.axis();
        q[a] = T::lit(2.0) * self.facet_coordinate(facet) - p[a];
        q
    }
}

/// Parses a six-character `[01]{6}` surface code.
pub fn parse_surface_code(code: &str) -> Result<[bool; 6]> {
    let chars: Vec<char> = code.chars().collect();
    if chars.len() != 6 || chars.iter().any(|c| *c != '0' && *c != '1') {
        return Err(Error::InvalidInput(format!("surface code '{code}' must match [01]{{6}}")));
    }
    let mut out = [false; 6];
    for (o, c) in out.iter_mut().zip(chars) {
        *o = c == '1';
    }
    Ok(out)
}

/// Pose of one linear microphone array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ArrayPose<T = f64> {
    pub barycenter: Vec3<T>,
    /// Rotation of the array axis in the horizontal plane, radians from +x.
    pub azimuth_tilt: T,
    pub local_offsets: Vec<T>,
}

impl<T: Real> ArrayPose<T> {
    pub fn nula(barycenter: Vec3<T>, azimuth_tilt: T) -> Self {
        ArrayPose {
            barycenter,
            azimuth_tilt,
            local_offsets: NULA_OFFSETS.iter().map(|&o| T::lit(o)).collect(),
        }
    }

    pub fn axis(&self) -> Vec3<T> {
        Vec3::new(self.azimuth_tilt.cos(), self.azimuth_tilt.sin(), T::zero())
    }

    pub fn mic_position(&self, k: usize) -> Vec3<T> {
        self.barycenter + self.axis() * self.local_offsets[k]
    }

    pub fn mic_positions(&self) -> Vec<Vec3<T>> {
        (0..self.local_offsets.len()).map(|k| self.mic_position(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SourcePose<T = f64> {
    pub position: Vec3<T>,
    #[serde(default)]
    pub label: String,
}

/// Microphone arrays and sources of one recording scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SceneLayout<T = f64> {
    pub arrays: Vec<ArrayPose<T>>,
    pub sources: Vec<SourcePose<T>>,
}

impl<T: Real> SceneLayout<T> {
    pub fn n_mics(&self) -> usize {
        self.arrays.iter().map(|a| a.local_offsets.len()).sum()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// All microphone positions, array-major.
    pub fn mic_positions(&self) -> Vec<Vec3<T>> {
        self.arrays.iter().flat_map(|a| a.mic_positions()).collect()
    }

    pub fn source_positions(&self) -> Vec<Vec3<T>> {
        self.sources.iter().map(|s| s.position).collect()
    }

    /// `(array, mic within array)` for every flat microphone index.
    pub fn mic_index_map(&self) -> Vec<(usize, usize)> {
        self.arrays
            .iter()
            .enumerate()
            .flat_map(|(a, arr)| (0..arr.local_offsets.len()).map(move |k| (a, k)))
            .collect()
    }

    /// Flat index of the first microphone of every array.
    pub fn first_mic_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.arrays.len());
        let mut base = 0;
        for arr in &self.arrays {
            out.push(base);
            base += arr.local_offsets.len();
        }
        out
    }

    pub fn validate(&self, room: &RoomSpec<T>) -> Result<()> {
        for (i, m) in self.mic_positions().iter().enumerate() {
            if !room.contains_strictly(m) {
                return Err(Error::InvalidGeometry(format!("microphone {i} lies outside the room")));
            }
        }
        for (j, s) in self.sources.iter().enumerate() {
            if !room.contains_strictly(&s.position) {
                return Err(Error::InvalidGeometry(format!("source {j} lies outside the room")));
            }
        }
        Ok(())
    }
}

/// A virtual source produced by mirroring the real source across room facets.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource<T = f64> {
    pub position: Vec3<T>,
    pub order: usize,
    /// Facets in path order along each axis; axes are concatenated x, y, z.
    pub label: EchoLabel,
    pub attenuation: T,
}

/// Position of an image in lattice cell `cell` along one axis, and the
/// facets crossed (image side first) on the way back into the room.
fn axis_image<T: Real>(coord: T, len: T, cell: i64, axis: usize) -> (T, Vec<Facet>) {
    let pos = if cell.rem_euclid(2) == 0 {
        coord + T::lit(cell as f64) * len
    } else {
        T::lit((cell + 1) as f64) * len - coord
    };
    let planes: Vec<i64> = if cell > 0 { (1..=cell).rev().collect() } else { (cell + 1..=0).collect() };
    let facets = planes
        .into_iter()
        .map(|m| Facet::on_axis(axis, m.rem_euclid(2) == 1))
        .collect();
    (pos, facets)
}

fn image_for_cell<T: Real>(room: &RoomSpec<T>, source: &Vec3<T>, cell: [i64; 3]) -> ImageSource<T> {
    let mut position = Vec3::zeros();
    let mut label = Vec::new();
    for axis in 0..3 {
        let (p, facets) = axis_image(source[axis], room.dims[axis], cell[axis], axis);
        position[axis] = p;
        label.extend(facets);
    }
    let attenuation = label.iter().fold(T::one(), |acc, f| acc * room.reflectivity_of(*f));
    ImageSource { position, order: label.len(), label: EchoLabel(label), attenuation }
}

fn check_source<T: Real>(room: &RoomSpec<T>, source: &Vec3<T>) -> Result<()> {
    room.validate()?;
    if !room.contains_strictly(source) {
        return Err(Error::InvalidGeometry("source must lie strictly inside the room".into()));
    }
    Ok(())
}

/// Every image source of reflection order at most `max_order`, sorted by
/// order. The count is the octahedral lattice number
/// `(2N + 1)(2N^2 + 2N + 3) / 3`.
pub fn enumerate_images<T: Real>(room: &RoomSpec<T>, source: &Vec3<T>, max_order: usize) -> Result<Vec<ImageSource<T>>> {
    check_source(room, source)?;
    let n = max_order as i64;
    let mut out = Vec::new();
    for cx in -n..=n {
        let ry = n - cx.abs();
        for cy in -ry..=ry {
            let rz = ry - cy.abs();
            for cz in -rz..=rz {
                out.push(image_for_cell(room, source, [cx, cy, cz]));
            }
        }
    }
    out.sort_by_key(|im| im.order);
    Ok(out)
}

/// Image sources (any order) lying within `max_distance` of `listener`.
/// Used for long reverberant tails where an order bound is impractical.
pub fn enumerate_images_within<T: Real>(
    room: &RoomSpec<T>,
    source: &Vec3<T>,
    listener: &Vec3<T>,
    max_distance: T,
) -> Result<Vec<ImageSource<T>>> {
    check_source(room, source)?;
    let bound = |a: usize| (max_distance / room.dims[a]).as_f64().ceil() as i64 + 1;
    let (bx, by, bz) = (bound(0), bound(1), bound(2));
    let mut out = Vec::new();
    for cx in -bx..=bx {
        for cy in -by..=by {
            for cz in -bz..=bz {
                let im = image_for_cell(room, source, [cx, cy, cz]);
                if (im.position - listener).norm() <= max_distance {
                    out.push(im);
                }
            }
        }
    }
    out.sort_by_key(|im| im.order);
    Ok(out)
}

/// Distance to `listener` and wall attenuation of every image within
/// `max_distance`, without building reflection labels.
pub fn image_arrivals_within<T: Real>(
    room: &RoomSpec<T>,
    source: &Vec3<T>,
    listener: &Vec3<T>,
    max_distance: T,
) -> Result<Vec<(T, T)>> {
    check_source(room, source)?;
    let axis_terms = |a: usize| -> Vec<(T, T)> {
        let b = (max_distance / room.dims[a]).as_f64().ceil() as i64 + 1;
        let lo = room.reflectivity_of(Facet::on_axis(a, false));
        let hi = room.reflectivity_of(Facet::on_axis(a, true));
        (-b..=b)
            .map(|c| {
                let pos = if c.rem_euclid(2) == 0 {
                    source[a] + T::lit(c as f64) * room.dims[a]
                } else {
                    T::lit((c + 1) as f64) * room.dims[a] - source[a]
                };
                let n = c.unsigned_abs() as i32;
                let (n_hi, n_lo) = if c > 0 { ((n + 1) / 2, n / 2) } else { (n / 2, (n + 1) / 2) };
                let d = pos - listener[a];
                (d * d, hi.powi(n_hi) * lo.powi(n_lo))
            })
            .collect()
    };
    let (xs, ys, zs) = (axis_terms(0), axis_terms(1), axis_terms(2));
    let r2 = max_distance * max_distance;
    let mut out = Vec::new();
    for &(dx, ax) in &xs {
        if dx > r2 {
            continue;
        }
        for &(dy, ay) in &ys {
            let dxy = dx + dy;
            if dxy > r2 {
                continue;
            }
            for &(dz, az) in &zs {
                let d2 = dxy + dz;
                if d2 <= r2 {
                    out.push((d2.sqrt(), ax * ay * az));
                }
            }
        }
    }
    Ok(out)
}

/// Number of images `enumerate_images` returns for a given order bound.
pub fn image_count(max_order: usize) -> usize {
    let n = max_order;
    (2 * n + 1) * (2 * n * n + 2 * n + 3) / 3
}

/// Key of one (microphone, source) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub mic: usize,
    pub src: usize,
}

impl PairKey {
    pub fn new(mic: usize, src: usize) -> Self {
        PairKey { mic, src }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mic_{}/src_{}", self.mic, self.src)
    }
}

impl FromStr for PairKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("pair key '{s}' is not of the form mic_i/src_j"));
        let (m, j) = s.split_once('/').ok_or_else(bad)?;
        let mic = m.strip_prefix("mic_").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let src = j.strip_prefix("src_").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        Ok(PairKey { mic, src })
    }
}

/// One labeled arrival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Echo<T = f64> {
    pub label: EchoLabel,
    /// Time of arrival, seconds.
    pub toa: T,
    /// Linear amplitude.
    pub amplitude: T,
}

/// Labeled echoes for every (microphone, source) pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EchoAnnotation<T = f64> {
    pub entries: BTreeMap<PairKey, Vec<Echo<T>>>,
}

impl<T: Real> EchoAnnotation<T> {
    pub fn new() -> Self {
        EchoAnnotation { entries: BTreeMap::new() }
    }

    pub fn get(&self, mic: usize, src: usize) -> Option<&[Echo<T>]> {
        self.entries.get(&PairKey::new(mic, src)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, mic: usize, src: usize, mut echoes: Vec<Echo<T>>) {
        echoes.sort_by(|a, b| a.toa.partial_cmp(&b.toa).unwrap_or(std::cmp::Ordering::Equal));
        self.entries.insert(PairKey::new(mic, src), echoes);
    }

    pub fn find(&self, mic: usize, src: usize, label: &EchoLabel) -> Option<&Echo<T>> {
        self.get(mic, src)?.iter().find(|e| &e.label == label)
    }

    pub fn direct(&self, mic: usize, src: usize) -> Option<&Echo<T>> {
        self.find(mic, src, &EchoLabel::direct())
    }

    pub fn first_order(&self, mic: usize, src: usize, facet: Facet) -> Option<&Echo<T>> {
        self.find(mic, src, &EchoLabel::first_order(facet))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(Vec::is_empty)
    }

    /// Keeps only entries up to the given reflection order.
    pub fn truncated_to_order(&self, max_order: usize) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (*k, v.iter().filter(|e| e.label.order() <= max_order).cloned().collect()))
            .collect();
        EchoAnnotation { entries }
    }

    /// Checks the structural invariants: positive ascending TOAs, direct path
    /// earliest when present, at most one first-order echo per facet.
    pub fn validate(&self) -> Result<()> {
        for (key, echoes) in &self.entries {
            let mut seen = [false; 6];
            for (n, e) in echoes.iter().enumerate() {
                if !(e.toa > T::zero()) {
                    return Err(Error::InvalidInput(format!("{key}: non-positive TOA")));
                }
                if n > 0 && e.toa < echoes[n - 1].toa {
                    return Err(Error::InvalidInput(format!("{key}: TOAs not sorted")));
                }
                if e.label.is_direct() && n > 0 && e.toa > echoes[0].toa {
                    return Err(Error::InvalidInput(format!("{key}: direct path is not the earliest arrival")));
                }
                if let Some(f) = e.label.single_facet() {
                    if std::mem::replace(&mut seen[f.index()], true) {
                        return Err(Error::InvalidInput(format!("{key}: duplicate first-order {f} echo")));
                    }
                }
            }
        }
        Ok(())
    }
}

impl<T: Real> Serialize for EchoAnnotation<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Real> Deserialize<'de> for EchoAnnotation<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, Vec<Echo<T>>> = BTreeMap::deserialize(d)?;
        let mut ann = EchoAnnotation::new();
        for (k, v) in raw {
            let key: PairKey = k.parse().map_err(serde::de::Error::custom)?;
            ann.insert(key.mic, key.src, v);
        }
        Ok(ann)
    }
}

/// Predicts every arrival up to `max_order` for all (mic, source) pairs:
/// `toa = |mic - image| / c`, `amplitude = attenuation / (4 pi |mic - image|)`.
pub fn predict_echo_annotation<T: Real>(
    room: &RoomSpec<T>,
    layout: &SceneLayout<T>,
    max_order: usize,
) -> Result<EchoAnnotation<T>> {
    layout.validate(room)?;
    let mics = layout.mic_positions();
    let four_pi = T::lit(4.0) * T::PI();
    let tiny = T::eps() * T::lit(16.0) * room.dims[0].max(room.dims[1]).max(room.dims[2]);
    let mut ann = EchoAnnotation::new();
    for (j, src) in layout.sources.iter().enumerate() {
        let images = enumerate_images(room, &src.position, max_order)?;
        for (i, mic) in mics.iter().enumerate() {
            let mut echoes = Vec::with_capacity(images.len());
            for im in &images {
                let d = (im.position - mic).norm();
                if d <= tiny {
                    return Err(Error::DegenerateDistance { mic: i, src: j });
                }
                echoes.push(Echo {
                    label: im.label.clone(),
                    toa: d / room.speed_of_sound,
                    amplitude: im.attenuation / (four_pi * d),
                });
            }
            ann.insert(i, j, echoes);
        }
    }
    Ok(ann)
}
