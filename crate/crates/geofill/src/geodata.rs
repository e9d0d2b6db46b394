//! Reservoir-data plumbing: ASCII grid I/O with a JSON manifest,
//! SPE10 model-2 porosity ingestion, random vertical-well sampling,
//! z-score normalization over observed cells, and PGM slice export.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims3, Field3, Mask3};

/// SPE10 model-2 grid shape: 60 x 220 x 85 cells.
pub fn spe10_dims() -> Dims3 {
    Dims3::new(60, 220, 85).expect("static dims are valid")
}

/// Physical size of one SPE10 cell in feet.
pub const SPE10_CELL_FT: [f64; 3] = [20.0, 20.0, 2.0];

/// The SPE10 model-2 porosity volume (60x220x85 cells of 20x20x2 ft,
/// model extent 1200x2200x170 ft).
#[derive(Debug, Clone, PartialEq)]
pub struct Spe10Grid {
    pub porosity: Field3,
}

impl Spe10Grid {
    pub fn dims(&self) -> Dims3 {
        self.porosity.dims()
    }

    pub fn cell_ft(&self) -> [f64; 3] {
        SPE10_CELL_FT
    }
}

fn data_error(path: &Path, reason: String) -> Error {
    Error::Data {
        path: path.display().to_string(),
        reason,
    }
}

/// Parses whitespace-separated ASCII floats into a field of the given
/// shape, filling cells with i fastest, then j, then k.
pub fn load_field_ascii(path: &Path, dims: Dims3) -> Result<Field3> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(dims.len());
    for (idx, token) in text.split_whitespace().enumerate() {
        let v: f64 = token.parse().map_err(|_| {
            data_error(path, format!("token {idx} is not a number: {token:?}"))
        })?;
        if !v.is_finite() {
            return Err(data_error(path, format!("token {idx} is not finite: {token:?}")));
        }
        values.push(v);
    }
    if values.len() != dims.len() {
        return Err(data_error(
            path,
            format!("expected {} values for {dims}, found {}", dims.len(), values.len()),
        ));
    }
    Field3::new(dims, values)
}

/// Sidecar metadata written next to every ASCII grid so a file is
/// self-describing: shape, cell size, and the `i-fastest` value order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub dims: [usize; 3],
    pub cell_ft: [f64; 3],
    pub order: String,
}

fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    data_path.with_file_name(name)
}

/// Writes a field as ASCII floats (one per line, shortest exact
/// decimal form, so a reload is bit-exact) plus a
/// `<name>.manifest.json` sidecar.
pub fn save_field_ascii(field: &Field3, cell_ft: [f64; 3], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(field.as_slice().len() * 12);
    for v in field.as_slice() {
        // `{}` on f64 prints the shortest representation that parses
        // back to the same bits
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out)?;
    let dims = field.dims();
    let manifest = GridManifest {
        dims: [dims.i, dims.j, dims.k],
        cell_ft,
        order: "i-fastest".to_string(),
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a field whose shape comes from its manifest sidecar.
pub fn load_field_with_manifest(path: &Path) -> Result<(Field3, GridManifest)> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| data_error(&mpath, format!("missing manifest sidecar: {e}")))?;
    let manifest: GridManifest = serde_json::from_str(&text)?;
    if manifest.order != "i-fastest" {
        return Err(data_error(
            &mpath,
            format!("unsupported value order {:?}", manifest.order),
        ));
    }
    let dims = Dims3::new(manifest.dims[0], manifest.dims[1], manifest.dims[2])?;
    Ok((load_field_ascii(path, dims)?, manifest))
}

/// Loads the SPE10 model-2 porosity file: 1,122,000 whitespace-
/// separated non-negative values in i-fastest order.
pub fn load_spe10_porosity(path: &Path) -> Result<Spe10Grid> {
    let porosity = load_field_ascii(path, spe10_dims())?;
    if let Some(idx) = porosity.as_slice().iter().position(|&v| v < 0.0) {
        return Err(data_error(
            path,
            format!("porosity value {idx} is negative: {}", porosity.as_slice()[idx]),
        ));
    }
    Ok(Spe10Grid { porosity })
}

/// Lateral positions of vertical wells; each well observes its full
/// column of cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellPlan {
    pub wells: Vec<(usize, usize)>,
}

impl WellPlan {
    /// Mask that is true exactly on the wells' full vertical columns.
    pub fn mask(&self, dims: Dims3) -> Result<Mask3> {
        let mut mask = Mask3::none_observed(dims);
        for &(i, j) in &self.wells {
            if i >= dims.i || j >= dims.j {
                return Err(Error::InvalidParameter(format!(
                    "well ({i}, {j}) lies outside the {dims} lateral extent"
                )));
            }
            for k in 0..dims.k {
                mask.set_observed(i, j, k, true);
            }
        }
        Ok(mask)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("well_id,i,j\n");
        for (id, &(i, j)) in self.wells.iter().enumerate() {
            out.push_str(&format!("{id},{i},{j}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("well_id,i,j") => {}
            other => {
                return Err(Error::Config(format!(
                    "well plan must start with header 'well_id,i,j', found {other:?}"
                )))
            }
        }
        let mut wells = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "well plan line {} has {} fields, expected 3",
                    n + 2,
                    fields.len()
                )));
            }
            let i = fields[1].trim().parse().map_err(|_| {
                Error::Config(format!("well plan line {}: bad i {:?}", n + 2, fields[1]))
            })?;
            let j = fields[2].trim().parse().map_err(|_| {
                Error::Config(format!("well plan line {}: bad j {:?}", n + 2, fields[2]))
            })?;
            wells.push((i, j));
        }
        Ok(Self { wells })
    }
}

/// Draws `n_wells` distinct lateral positions uniformly without
/// replacement from a seeded generator and builds the column mask.
/// The same (dims, n_wells, seed) always yields the same plan.
pub fn sample_wells(dims: Dims3, n_wells: usize, seed: u64) -> Result<(WellPlan, Mask3)> {
    let lateral = dims.i * dims.j;
    if n_wells == 0 {
        return Err(Error::InvalidParameter(
            "at least one well is required".to_string(),
        ));
    }
    if n_wells > lateral {
        return Err(Error::InvalidParameter(format!(
            "{n_wells} wells exceed the {lateral} lateral cells of {dims}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, lateral, n_wells);
    let wells: Vec<(usize, usize)> = picks.iter().map(|p| (p % dims.i, p / dims.i)).collect();
    let plan = WellPlan { wells };
    let mask = plan.mask(dims)?;
    Ok((plan, mask))
}

/// Percentage of grid cells observed by the mask.
pub fn active_cell_fraction(mask: &Mask3) -> f64 {
    100.0 * mask.observed_count() as f64 / mask.dims().len() as f64
}

/// Z-score statistics of the observed cells (population convention:
/// the standard deviation divides by the observed count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Shifts and scales every entry so observed cells have mean 0 and
/// standard deviation 1. Statistics come from observed cells only, so
/// placeholder values in unobserved cells cannot leak in.
pub fn normalize(field: &Field3, mask: &Mask3) -> Result<(Field3, Normalization)> {
    if field.dims() != mask.dims() {
        return Err(Error::DimsMismatch {
            context: "normalize",
            expected: field.dims().to_string(),
            found: mask.dims().to_string(),
        });
    }
    let values = field.as_slice();
    let observed: Vec<f64> = mask
        .as_slice()
        .iter()
        .zip(values)
        .filter_map(|(&o, &v)| o.then_some(v))
        .collect();
    if observed.len() < 2 {
        return Err(Error::MaskUnusable(
            "normalization needs at least two observed cells".to_string(),
        ));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let std = (observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std <= 0.0 {
        return Err(Error::InvalidParameter(
            "observed values have zero spread; cannot normalize".to_string(),
        ));
    }
    let norm = Normalization { mean, std };
    let out = Field3::new(
        field.dims(),
        values.iter().map(|&v| (v - mean) / std).collect(),
    )?;
    Ok((out, norm))
}

/// Inverse of [`normalize`]: `x * std + mean` on every entry.
pub fn denormalize(field: &Field3, norm: &Normalization) -> Result<Field3> {
    if !(norm.std.is_finite() && norm.std > 0.0 && norm.mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "normalization statistics must be finite with std > 0, got {norm:?}"
        )));
    }
    Field3::new(
        field.dims(),
        field
            .as_slice()
            .iter()
            .map(|&v| v * norm.std + norm.mean)
            .collect(),
    )
}

/// Mask rendered as a 0/1-valued field, for export alongside value
/// slices.
pub fn mask_as_field(mask: &Mask3) -> Field3 {
    Field3::new(
        mask.dims(),
        mask.as_slice()
            .iter()
            .map(|&o| if o { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("0/1 values are finite")
}

/// Grid axis a slice image is taken across.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

/// Writes one slice of a field as a binary 8-bit PGM, mapping values
/// linearly from `[vmin, vmax]` to intensities 0..=255 (clamped).
///
/// Orientation: a z-slice has j horizontal and i vertical (so SPE10
/// z-slices are 220 wide by 60 tall); x- and y-slices have k
/// horizontal and the remaining lateral axis vertical.
pub fn export_slice_image(
    field: &Field3,
    axis: SliceAxis,
    index: usize,
    path: &Path,
    vmin: f64,
    vmax: f64,
) -> Result<()> {
    let dims = field.dims();
    let limit = match axis {
        SliceAxis::X => dims.i,
        SliceAxis::Y => dims.j,
        SliceAxis::Z => dims.k,
    };
    if index >= limit {
        return Err(Error::InvalidParameter(format!(
            "slice index {index} out of range for axis {axis:?} of {dims}"
        )));
    }
    if !(vmin.is_finite() && vmax.is_finite() && vmax > vmin) {
        return Err(Error::InvalidParameter(format!(
            "need a finite value range with vmax > vmin, got [{vmin}, {vmax}]"
        )));
    }
    let (width, height) = match axis {
        SliceAxis::X => (dims.k, dims.j),
        SliceAxis::Y => (dims.k, dims.i),
        SliceAxis::Z => (dims.j, dims.i),
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let v = match axis {
                SliceAxis::X => field.get(index, row, col),
                SliceAxis::Y => field.get(row, index, col),
                SliceAxis::Z => field.get(row, col, index),
            };
            let t = ((v - vmin) / (vmax - vmin)).clamp(0.0, 1.0);
            pixels.push((t * 255.0).round() as u8);
        }
    }
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

/// Reads back a binary PGM written by [`export_slice_image`]:
/// (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let raw = fs::read(path)?;
    let header_end = raw
        .windows(1)
        .enumerate()
        .filter(|(_, b)| b[0] == b'\n')
        .map(|(idx, _)| idx)
        .nth(2)
        .ok_or_else(|| data_error(path, "truncated PGM header".to_string()))?;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|_| data_error(path, "PGM header is not UTF-8".to_string()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("P5") {
        return Err(data_error(path, "not a binary PGM (missing P5 magic)".to_string()));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| data_error(path, "bad PGM header fields".to_string()))?;
    }
    let [width, height, maxval] = dims;
    if maxval != 255 {
        return Err(data_error(path, format!("unsupported PGM maxval {maxval}")));
    }
    let pixels = raw[header_end + 1..].to_vec();
    if pixels.len() != width * height {
        return Err(data_error(
            path,
            format!("expected {} pixels, found {}", width * height, pixels.len()),
        ));
    }
    Ok((width, height, pixels))
}
