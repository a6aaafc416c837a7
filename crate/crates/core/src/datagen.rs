//! Synthetic identity datasets.
//!
//! Each identity owns an anchor direction drawn uniformly on the unit sphere.
//! A sample is `normalize(anchor + camera_offset + noise)`, where the noise
//! scale is `noise_sigma` for regular samples and `boundary_sigma` for a
//! random `boundary_fraction` of all samples. Every sigma is a per-coordinate
//! standard deviation.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{normalize_in_place, Matrix};
use crate::types::GroundTruth;

pub const HEADER_FILE: &str = "dataset.json";
pub const BODY_FILE: &str = "dataset.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    #[serde(default)]
    pub boundary_fraction: f64,
    #[serde(default)]
    pub boundary_sigma: f64,
    #[serde(default = "one")]
    pub num_cameras: usize,
    #[serde(default)]
    pub camera_bias_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl DatasetSpec {
    /// The 20-identity desk-scale configuration used by the ablation experiments.
    pub fn standard(seed: u64) -> Self {
        Self {
            num_identities: 20,
            samples_per_identity: 30,
            dim: 32,
            noise_sigma: 0.25,
            boundary_fraction: 0.15,
            boundary_sigma: 0.5,
            num_cameras: 4,
            camera_bias_sigma: 0.1,
            seed,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.num_identities * self.samples_per_identity
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.num_identities < 2 {
            return fail("num_identities must be at least 2");
        }
        if self.samples_per_identity == 0 {
            return fail("samples_per_identity must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) {
            return fail("boundary_fraction must lie in [0, 1]");
        }
        if !(self.boundary_sigma.is_finite() && self.boundary_sigma >= self.noise_sigma)
            && self.boundary_fraction > 0.0
        {
            return fail("boundary_sigma must be finite and >= noise_sigma");
        }
        if self.num_cameras == 0 {
            return fail("num_cameras must be at least 1");
        }
        if !(self.camera_bias_sigma >= 0.0 && self.camera_bias_sigma.is_finite()) {
            return fail("camera_bias_sigma must be a finite value >= 0");
        }
        Ok(())
    }
}

/// Raw observations plus the labels only evaluation may look at.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Matrix,
    pub truth: GroundTruth,
    /// Which samples were drawn with the wider boundary noise. Unknown for
    /// imported files.
    pub boundary: Option<Vec<bool>>,
    pub spec: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub n: usize,
    pub d: usize,
    pub num_identities: usize,
    pub seed: Option<u64>,
    pub spec: Option<DatasetSpec>,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim;
    let n = spec.num_samples();

    let mut anchor_rng = rng::stream(spec.seed, "datagen/anchors");
    let anchors: Vec<Vec<f64>> = (0..spec.num_identities)
        .map(|k| loop {
            let mut a = gaussian_vec(&mut anchor_rng, d, 1.0);
            if normalize_in_place(&mut a, k).is_ok() {
                break a;
            }
        })
        .collect();

    let mut camera_rng = rng::stream(spec.seed, "datagen/cameras");
    let offsets: Vec<Vec<Vec<f64>>> = (0..spec.num_identities)
        .map(|_| {
            (0..spec.num_cameras)
                .map(|_| gaussian_vec(&mut camera_rng, d, spec.camera_bias_sigma))
                .collect()
        })
        .collect();

    let mut boundary = vec![false; n];
    let num_boundary = (spec.boundary_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, "datagen/boundary"));
    for &i in &order[..num_boundary.min(n)] {
        boundary[i] = true;
    }

    let mut sample_rng = rng::stream(spec.seed, "datagen/samples");
    let mut identities = Vec::with_capacity(n);
    let mut camera_ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for k in 0..spec.num_identities {
        for s in 0..spec.samples_per_identity {
            let i = k * spec.samples_per_identity + s;
            let cam = sample_rng.random_range(0..spec.num_cameras);
            let sigma = if boundary[i] {
                spec.boundary_sigma
            } else {
                spec.noise_sigma
            };
            let noise = gaussian_vec(&mut sample_rng, d, sigma);
            let mut x: Vec<f64> = anchors[k]
                .iter()
                .zip(&offsets[k][cam])
                .zip(&noise)
                .map(|((a, o), e)| a + o + e)
                .collect();
            normalize_in_place(&mut x, i)?;
            data.extend_from_slice(&x);
            identities.push(k);
            camera_ids.push(cam);
        }
    }

    Ok(Dataset {
        observations: Matrix::from_vec(n, d, data)?,
        truth: GroundTruth {
            identities,
            camera_ids,
        },
        boundary: Some(boundary),
        spec: Some(spec.clone()),
    })
}

/// Splits samples into disjoint query and gallery sets. Each identity sends
/// `round(query_fraction * n_k)` samples to the query side, clamped so that
/// it keeps at least one query and one gallery sample.
pub fn split_query_gallery(
    truth: &GroundTruth,
    query_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::Split(format!(
            "query_fraction {query_fraction} must lie in (0, 1)"
        )));
    }
    let mut by_identity: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &g) in truth.identities.iter().enumerate() {
        by_identity.entry(g).or_default().push(i);
    }
    let mut rng = rng::stream(seed, "split");
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for (identity, mut members) in by_identity {
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "identity {identity} has a single sample"
            )));
        }
        members.shuffle(&mut rng);
        let q =
            ((query_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        query.extend_from_slice(&members[..q]);
        gallery.extend_from_slice(&members[q..]);
    }
    query.sort_unstable();
    gallery.sort_unstable();
    Ok((query, gallery))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.cols()
    }

    pub fn header(&self) -> DatasetHeader {
        let num_identities = self
            .truth
            .identities
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        DatasetHeader {
            n: self.len(),
            d: self.dim(),
            num_identities,
            seed: self.spec.as_ref().map(|s| s.seed),
            spec: self.spec.clone(),
        }
    }

    /// CSV body: `sample_id,identity,camera,f_0..f_{d-1}`, floats at 17 significant digits.
    pub fn body_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut head = String::from("sample_id,identity,camera");
        for j in 0..self.dim() {
            head.push_str(&format!(",f_{j}"));
        }
        writeln!(out, "{head}").unwrap();
        for i in 0..self.len() {
            write!(
                out,
                "{},{},{}",
                i, self.truth.identities[i], self.truth.camera_ids[i]
            )
            .unwrap();
            for x in self.observations.row(i) {
                write!(out, ",{x:.16e}").unwrap();
            }
            out.push(b'\n');
        }
        out
    }

    /// SHA-256 of the canonical CSV body, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.body_csv()))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(HEADER_FILE),
            serde_json::to_string_pretty(&self.header())?,
        )?;
        fs::write(dir.join(BODY_FILE), self.body_csv())?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let header_path = dir.join(HEADER_FILE);
        let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(&header_path)?)?;
        let body_path = dir.join(BODY_FILE);
        let bad = |reason: String| Error::Format {
            path: body_path.clone(),
            reason,
        };

        let mut reader = csv::Reader::from_path(&body_path)?;
        let expected_cols = 3 + header.d;
        if reader.headers()?.len() != expected_cols {
            return Err(bad(format!("expected {expected_cols} columns")));
        }
        let mut identities = Vec::with_capacity(header.n);
        let mut camera_ids = Vec::with_capacity(header.n);
        let mut data = Vec::with_capacity(header.n * header.d);
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let sample_id: usize = parse_field(&record, 0, &body_path)?;
            if sample_id != row {
                return Err(bad(format!("sample_id {sample_id} at row {row}")));
            }
            identities.push(parse_field(&record, 1, &body_path)?);
            camera_ids.push(parse_field(&record, 2, &body_path)?);
            for j in 0..header.d {
                data.push(parse_field::<f64>(&record, 3 + j, &body_path)?);
            }
        }
        if identities.len() != header.n {
            return Err(bad(format!(
                "header declares {} samples, body has {}",
                header.n,
                identities.len()
            )));
        }
        Ok(Self {
            observations: Matrix::from_vec(header.n, header.d, data)?,
            truth: GroundTruth {
                identities,
                camera_ids,
            },
            boundary: None,
            spec: header.spec,
        })
    }
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    col: usize,
    path: &Path,
) -> Result<T> {
    record
        .get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad value in column {col}"),
        })
}
