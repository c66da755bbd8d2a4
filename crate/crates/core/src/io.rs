//! Files on disk: JSON metadata, float WAV audio, the binary RIR tensor,
//! session bundles, CSV tables and skyline images.
//!
//! Tensor layout (`.rirt`, little-endian):
//!
//! | offset | bytes | field                         |
//! |--------|-------|-------------------------------|
//! | 0      | 4     | magic `RIRT`                  |
//! | 4      | 2     | format version (1)            |
//! | 6      | 2     | sample type (1 = f32)         |
//! | 8      | 16    | `L`, `I`, `J`, `D` as u32     |
//! | 24     | 4     | sample rate, f32              |
//! | 28     | 4     | reserved, zero                |
//! | 32     | 4·LIJD| samples, `l` fastest then `i`, `j`, `d` |

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotate::Skyline;
use crate::error::{Error, Result};
use crate::geometry::{parse_surface_code, EchoAnnotation, RoomSpec, SceneLayout};
use crate::scalar::Real;
use crate::synth::{Provenance, Rir};

pub const TENSOR_MAGIC: &[u8; 4] = b"RIRT";
pub const TENSOR_VERSION: u16 = 1;
pub const TENSOR_HEADER_BYTES: usize = 32;
const SAMPLE_F32: u16 = 1;

/// Room and recording layout of one session. On disk the layout's `arrays`
/// and `sources` sit next to `room` and `surface_code`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Scene<T = f64> {
    pub surface_code: String,
    pub room: RoomSpec<T>,
    #[serde(flatten)]
    pub layout: SceneLayout<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(surface_code: &str, room: RoomSpec<T>, layout: SceneLayout<T>) -> Result<Self> {
        let scene = Scene { surface_code: surface_code.to_string(), room, layout };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        parse_surface_code(&self.surface_code)?;
        self.room.validate()?;
        self.layout.validate(&self.room)
    }
}

pub fn read_json<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json { path: path.display().to_string(), source })
}

pub fn write_json<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn wav_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Wav { path: path.display().to_string(), message: e.to_string() }
}

/// Writes equal-length channels as interleaved 32-bit float WAV.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, channels: &[Vec<T>], sample_rate: T) -> Result<()> {
    let path = path.as_ref();
    let n = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || channels.len() > u16::MAX as usize {
        return Err(Error::InvalidInput(format!("cannot write {} channels", channels.len())));
    }
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("WAV channels differ in length".into()));
    }
    let fs = sample_rate.round_index();
    if fs <= 0 || fs > u32::MAX as i64 {
        return Err(Error::InvalidInput(format!("sample rate {} Hz", sample_rate.as_f64())));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: fs as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for t in 0..n {
        for c in channels {
            w.write_sample(c[t].as_f64() as f32).map_err(|e| wav_error(path, e))?;
        }
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Reads a WAV file into per-channel sample vectors. Integer formats are
/// scaled to [-1, 1).
pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<(Vec<Vec<T>>, T)> {
    let path = path.as_ref();
    let mut r = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = r.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()
        }
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(i32::from(spec.bits_per_sample) - 1);
            r.samples::<i32>().map(|s| s.map(|v| f64::from(v) / scale)).collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| wav_error(path, e))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch.max(1)); nch];
    for (k, v) in interleaved.into_iter().enumerate() {
        channels[k % nch].push(T::lit(v));
    }
    Ok((channels, T::lit(f64::from(spec.sample_rate))))
}

/// Dense RIR tensor indexed `(l, i, j, d)`: sample, microphone, source and
/// room configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RirTensor<T = f64> {
    pub shape: [usize; 4],
    pub sample_rate: T,
    pub data: Vec<T>,
}

impl<T: Real> RirTensor<T> {
    pub fn zeros(shape: [usize; 4], sample_rate: T) -> Self {
        RirTensor { shape, sample_rate, data: vec![T::zero(); shape.iter().product()] }
    }

    fn offset(&self, i: usize, j: usize, d: usize) -> usize {
        let [l, ni, nj, _] = self.shape;
        ((d * nj + j) * ni + i) * l
    }

    pub fn rir_samples(&self, i: usize, j: usize, d: usize) -> &[T] {
        let o = self.offset(i, j, d);
        &self.data[o..o + self.shape[0]]
    }

    pub fn set_rir(&mut self, i: usize, j: usize, d: usize, samples: &[T]) -> Result<()> {
        let [l, ni, nj, nd] = self.shape;
        if i >= ni || j >= nj || d >= nd {
            return Err(Error::ShapeMismatch(format!("index ({i}, {j}, {d}) outside {ni}x{nj}x{nd}")));
        }
        if samples.len() > l {
            return Err(Error::ShapeMismatch(format!("RIR of {} samples in a tensor of length {l}", samples.len())));
        }
        let o = self.offset(i, j, d);
        self.data[o..o + l].fill(T::zero());
        self.data[o..o + samples.len()].copy_from_slice(samples);
        Ok(())
    }

    pub fn rir(&self, i: usize, j: usize, d: usize) -> Result<Rir<T>> {
        let [_, ni, nj, nd] = self.shape;
        if i >= ni || j >= nj || d >= nd {
            return Err(Error::ShapeMismatch(format!("index ({i}, {j}, {d}) outside {ni}x{nj}x{nd}")));
        }
        Rir::new(self.rir_samples(i, j, d).to_vec(), self.sample_rate, Provenance::Loaded)
    }

    /// Values rounded through `f32`, as they are after a save and load.
    pub fn stored_precision(&self) -> Self {
        RirTensor {
            shape: self.shape,
            sample_rate: T::lit(self.sample_rate.as_f64() as f32 as f64),
            data: self.data.iter().map(|v| T::lit(v.as_f64() as f32 as f64)).collect(),
        }
    }
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, tensor: &RirTensor<T>) -> Result<()> {
    let path = path.as_ref();
    if tensor.data.len() != tensor.shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch("tensor data does not match its shape".into()));
    }
    let dims: Vec<u32> = tensor
        .shape
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::InvalidInput(format!("dimension {d} exceeds u32"))))
        .collect::<Result<_>>()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(TENSOR_HEADER_BYTES);
    header.extend_from_slice(TENSOR_MAGIC);
    header.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    header.extend_from_slice(&SAMPLE_F32.to_le_bytes());
    for d in dims {
        header.extend_from_slice(&d.to_le_bytes());
    }
    header.extend_from_slice(&(tensor.sample_rate.as_f64() as f32).to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    for v in &tensor.data {
        w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<RirTensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display();
    if bytes.len() < TENSOR_HEADER_BYTES {
        return Err(Error::ShapeMismatch(format!(
            "{name}: expected a {TENSOR_HEADER_BYTES}-byte header, found {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::InvalidInput(format!("{name}: not an RIR tensor (bad magic)")));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    if u16_at(4) != TENSOR_VERSION || u16_at(6) != SAMPLE_F32 {
        return Err(Error::InvalidInput(format!("{name}: unsupported version {} / sample type {}", u16_at(4), u16_at(6))));
    }
    let shape = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
    let sample_rate = f32::from_le_bytes([bytes[24], bytes[25], bytes[26], bytes[27]]);
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(TENSOR_HEADER_BYTES));
    match expected {
        Some(e) if e == bytes.len() => {}
        Some(e) => {
            return Err(Error::ShapeMismatch(format!(
                "{name}: header shape {}x{}x{}x{} needs {e} bytes, found {}",
                shape[0],
                shape[1],
                shape[2],
                shape[3],
                bytes.len()
            )))
        }
        None => return Err(Error::ShapeMismatch(format!("{name}: header shape overflows"))),
    }
    let data = bytes[TENSOR_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Ok(RirTensor { shape, sample_rate: T::lit(f64::from(sample_rate)), data })
}

/// Points at the files of one recording session. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    /// One six-digit surface code per room configuration `d`.
    pub surface_codes: Vec<String>,
    pub scene: PathBuf,
    /// An `.rirt` tensor file or a directory of per-source WAV files.
    pub rirs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<PathBuf>,
    pub sample_rate: f64,
}

impl SessionManifest {
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.surface_codes.is_empty() {
            return Err(Error::InvalidInput("manifest lists no room configuration".into()));
        }
        for code in &self.surface_codes {
            parse_surface_code(code)?;
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {}", self.sample_rate)));
        }
        for p in [Some(&self.scene), Some(&self.rirs), self.annotation.as_ref()].into_iter().flatten() {
            let full = base.join(p);
            if !full.exists() {
                return Err(Error::InvalidInput(format!("manifest references missing file {}", full.display())));
            }
        }
        Ok(())
    }
}

/// A loaded session: scene, RIRs and optional annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Session<T = f64> {
    pub surface_codes: Vec<String>,
    pub scene: Scene<T>,
    pub rirs: RirTensor<T>,
    pub annotation: Option<EchoAnnotation<T>>,
}

impl<T: Real> Session<T> {
    pub fn validate(&self) -> Result<()> {
        let [_, i, j, d] = self.rirs.shape;
        let (mi, mj) = (self.scene.layout.n_mics(), self.scene.layout.n_sources());
        if i != mi || j != mj || d != self.surface_codes.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor holds {i} mics x {j} sources x {d} rooms, scene has {mi} x {mj} and the manifest {} rooms",
                self.surface_codes.len()
            )));
        }
        if let Some(a) = &self.annotation {
            a.validate()?;
        }
        Ok(())
    }

    /// Index of a room configuration by surface code.
    pub fn config_index(&self, code: &str) -> Option<usize> {
        self.surface_codes.iter().position(|c| c == code)
    }

    pub fn rir(&self, mic: usize, src: usize, config: usize) -> Result<Rir<T>> {
        self.rirs.rir(mic, src, config)
    }
}

/// How RIRs are laid out in a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RirStorage {
    Tensor,
    /// `rirs/<surface code>/mic_<i>_src_<j>.wav`, one mono file per RIR.
    WavDirectory,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn wav_path(dir: &Path, code: &str, i: usize, j: usize) -> PathBuf {
    dir.join(code).join(format!("mic_{i:02}_src_{j:02}.wav"))
}

/// Writes the session under `dir` and returns the manifest path.
pub fn write_bundle<T: Real>(dir: impl AsRef<Path>, session: &Session<T>, storage: RirStorage) -> Result<PathBuf> {
    session.validate()?;
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_json(dir.join("scene.json"), &session.scene)?;
    let rirs = match storage {
        RirStorage::Tensor => {
            write_tensor(dir.join("rirs.rirt"), &session.rirs)?;
            PathBuf::from("rirs.rirt")
        }
        RirStorage::WavDirectory => {
            let root = dir.join("rirs");
            let [_, ni, nj, _] = session.rirs.shape;
            for (d, code) in session.surface_codes.iter().enumerate() {
                create_dir(&root.join(code))?;
                for j in 0..nj {
                    for i in 0..ni {
                        let samples = session.rirs.rir_samples(i, j, d).to_vec();
                        write_wav(wav_path(&root, code, i, j), &[samples], session.rirs.sample_rate)?;
                    }
                }
            }
            PathBuf::from("rirs")
        }
    };
    let annotation = match &session.annotation {
        Some(a) => {
            write_json(dir.join("annotation.json"), a)?;
            Some(PathBuf::from("annotation.json"))
        }
        None => None,
    };
    let manifest = SessionManifest {
        surface_codes: session.surface_codes.clone(),
        scene: PathBuf::from("scene.json"),
        rirs,
        annotation,
        sample_rate: session.rirs.sample_rate.as_f64(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a bundle from its manifest, accepting either RIR storage.
pub fn load_bundle<T: Real>(manifest_path: impl AsRef<Path>) -> Result<Session<T>> {
    let manifest_path = manifest_path.as_ref();
    let manifest: SessionManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest.validate(base)?;
    let scene: Scene<T> = read_json(base.join(&manifest.scene))?;
    let rir_path = base.join(&manifest.rirs);
    let rirs: RirTensor<T> = if rir_path.is_dir() {
        load_wav_directory(&rir_path, &manifest, scene.layout.n_mics(), scene.layout.n_sources())?
    } else {
        read_tensor(&rir_path)?
    };
    if (rirs.sample_rate.as_f64() - manifest.sample_rate).abs() > 0.5 {
        return Err(Error::ShapeMismatch(format!(
            "manifest sample rate {} Hz, RIR files {} Hz",
            manifest.sample_rate,
            rirs.sample_rate.as_f64()
        )));
    }
    let annotation = manifest.annotation.as_ref().map(|p| read_json(base.join(p))).transpose()?;
    let session = Session { surface_codes: manifest.surface_codes, scene, rirs, annotation };
    session.validate()?;
    Ok(session)
}

fn load_wav_directory<T: Real>(root: &Path, manifest: &SessionManifest, ni: usize, nj: usize) -> Result<RirTensor<T>> {
    let mut files = Vec::new();
    for (d, code) in manifest.surface_codes.iter().enumerate() {
        for j in 0..nj {
            for i in 0..ni {
                let path = wav_path(root, code, i, j);
                let (mut channels, fs) = read_wav::<T>(&path)?;
                if channels.len() != 1 {
                    return Err(Error::ShapeMismatch(format!("{}: {} channels, expected one", path.display(), channels.len())));
                }
                files.push(((i, j, d), channels.remove(0), fs));
            }
        }
    }
    let len = files.iter().map(|(_, c, _)| c.len()).max().unwrap_or(0);
    let fs = files.first().map_or(T::lit(manifest.sample_rate), |(_, _, f)| *f);
    let mut t = RirTensor::zeros([len, ni, nj, manifest.surface_codes.len()], fs);
    for ((i, j, d), samples, rate) in &files {
        if *rate != fs {
            return Err(Error::ShapeMismatch(format!("RIR files mix {} Hz and {} Hz", fs.as_f64(), rate.as_f64())));
        }
        t.set_rir(*i, *j, *d, samples)?;
    }
    Ok(t)
}

/// A table whose header names carry their units, e.g. `isnrr_db`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        CsvTable { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(Error::ShapeMismatch(format!("row of {} fields for {} columns", row.len(), self.headers.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.headers).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        Ok(CsvTable { headers, rows })
    }
}

/// Fixed-precision float formatting used in every CSV so that outputs are
/// byte-stable.
pub fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.6}")
}

/// Skyline matrix as CSV: one row per sample, one column per microphone
/// column, values normalized to [0, 1].
pub fn export_skyline_csv<T: Real>(path: impl AsRef<Path>, skyline: &Skyline<T>) -> Result<()> {
    let (rows, cols) = skyline.matrix.shape();
    let mut headers = vec!["sample".to_string()];
    headers.extend(skyline.mic_order.iter().map(|c| format!("src{}_arr{}_mic{}", c.src, c.array, c.mic)));
    let mut t = CsvTable::new(headers);
    for r in 0..rows {
        let mut row = vec![r.to_string()];
        row.extend((0..cols).map(|c| fmt_float(skyline.matrix[(r, c)].as_f64())));
        t.push(row)?;
    }
    t.write(path)
}

/// Grayscale PNG of the skyline: rows are samples, columns microphones,
/// brighter means larger normalized magnitude.
pub fn export_skyline_png<T: Real>(path: impl AsRef<Path>, skyline: &Skyline<T>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = skyline.matrix.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty skyline".into()));
    }
    let (w, h) = (u32::try_from(cols), u32::try_from(rows));
    let (Ok(w), Ok(h)) = (w, h) else {
        return Err(Error::InvalidInput("skyline too large for an image".into()));
    };
    let img = image::GrayImage::from_fn(w, h, |x, y| {
        let v = skyline.matrix[(y as usize, x as usize)].as_f64().clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_thirty_two_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.rirt");
        let t = RirTensor::<f64>::zeros([3, 2, 1, 1], 48_000.0);
        write_tensor(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), TENSOR_HEADER_BYTES + 4 * 6);
        assert_eq!(&bytes[..4], b"RIRT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn column_major_indexing() {
        let mut t = RirTensor::<f64>::zeros([2, 3, 2, 2], 1.0);
        t.set_rir(2, 1, 1, &[5.0, 6.0]).unwrap();
        let o = 2 * (2 + 3 * (1 + 2));
        assert_eq!(&t.data[o..o + 2], &[5.0, 6.0]);
        assert!(t.set_rir(3, 0, 0, &[1.0]).is_err());
    }

    #[test]
    fn float_formatting_is_fixed() {
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
    }
}
