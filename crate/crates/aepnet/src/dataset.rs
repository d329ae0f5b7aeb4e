//! Synthetic datasets on disk: generation, the manifest, splits and loading.
//!
//! Layout under the dataset directory:
//!
//! ```text
//! manifest.toml
//! case000/image.rvol   case000/gt.rvol
//! case000/mask0.rvol   case000/error0.rvol   case000/boundary0.rvol
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aepnet_core::boundary::boundary_target;
use aepnet_core::data::{
    degrade_mask, gen_phantom, make_error_map, preprocess, LabelVolume, PhantomParams, Sample, Volume,
    DEFAULT_SEVERITIES,
};
use aepnet_core::metrics::{bin_index, seg_quality, DEFAULT_BIN_EDGES};
use aepnet_core::rng::{self, Purpose};
use serde::{Deserialize, Serialize};

use crate::error::{read_toml, write_toml, Error, Result};
use crate::rvol;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_FORMAT: &str = "aepnet-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub index: usize,
    pub severity: f64,
    pub seed: u64,
    pub mask: String,
    pub error_map: String,
    pub boundary: String,
    pub seg_dsc: f64,
    pub seg_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    pub seed: u64,
    pub image: String,
    pub gt: String,
    pub masks: Vec<MaskEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub phantom: PhantomParams,
    pub cases: Vec<CaseEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(Error::Invalid(format!("unknown split {other:?} (expected train, test or all)"))),
        }
    }
}

impl Manifest {
    pub fn num_classes(&self) -> usize {
        self.phantom.num_classes
    }

    pub fn dims(&self) -> [usize; 3] {
        self.phantom.dims
    }

    /// Case indices of `split`: the last third of the cases is the test set.
    pub fn split(&self, split: Split) -> std::ops::Range<usize> {
        let n = self.cases.len();
        let test = n / 3;
        match split {
            Split::Train => 0..n - test,
            Split::Test => n - test..n,
            Split::All => 0..n,
        }
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.id == id)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let m: Manifest = read_toml(&path)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        m.phantom.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_toml(&dir.join(MANIFEST_FILE), self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    pub count: usize,
    pub masks_per_case: usize,
    pub seed: u64,
    pub phantom: PhantomParams,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            count: 60,
            masks_per_case: DEFAULT_SEVERITIES.len(),
            seed: 0,
            phantom: PhantomParams::default(),
        }
    }
}

/// Severity of each of `m` masks, spread piecewise-linearly over the
/// default severity levels.
pub fn severities(m: usize) -> Vec<f64> {
    let last = DEFAULT_SEVERITIES.len() - 1;
    if m == 1 {
        return vec![DEFAULT_SEVERITIES[last / 2]];
    }
    (0..m)
        .map(|k| {
            let t = k as f64 * last as f64 / (m - 1) as f64;
            let i = (t.floor() as usize).min(last - 1);
            let f = t - i as f64;
            DEFAULT_SEVERITIES[i] * (1.0 - f) + DEFAULT_SEVERITIES[i + 1] * f
        })
        .collect()
}

fn case_seed(master: u64, case: usize) -> u64 {
    rng::derive_seed(master, Purpose::Phantom, case as u64)
}

fn mask_seed(master: u64, case: usize, mask: usize) -> u64 {
    rng::derive_seed(master, Purpose::Degrade, ((case as u64) << 16) | mask as u64)
}

fn rel(case: &str, file: &str) -> String {
    format!("{case}/{file}")
}

/// Generates `opts.count` cases under `out` and writes the manifest.
pub fn generate(out: &Path, opts: &GenOptions) -> Result<Manifest> {
    if opts.count == 0 || opts.masks_per_case == 0 {
        return Err(Error::Invalid("count and masks per case must be positive".into()));
    }
    opts.phantom.validate()?;
    let c = opts.phantom.num_classes;
    let sev = severities(opts.masks_per_case);
    let mut cases = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let id = format!("case{i:03}");
        let dir = out.join(&id);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let seed = case_seed(opts.seed, i);
        let phantom = gen_phantom(seed, &opts.phantom)?;
        rvol::write_f32(&dir.join("image.rvol"), &phantom.image)?;
        rvol::write_u8(&dir.join("gt.rvol"), &phantom.labels)?;
        let mut masks = Vec::with_capacity(sev.len());
        for (k, &severity) in sev.iter().enumerate() {
            let mseed = mask_seed(opts.seed, i, k);
            let mask = degrade_mask(&phantom.labels, c, severity, mseed)?;
            let quality = seg_quality(&mask, &phantom.labels, c)?;
            let entry = MaskEntry {
                index: k,
                severity,
                seed: mseed,
                mask: rel(&id, &format!("mask{k}.rvol")),
                error_map: rel(&id, &format!("error{k}.rvol")),
                boundary: rel(&id, &format!("boundary{k}.rvol")),
                seg_dsc: quality.dsc,
                seg_acc: quality.acc,
            };
            rvol::write_u8(&out.join(&entry.mask), &mask)?;
            rvol::write_u8(&out.join(&entry.error_map), &make_error_map(&mask, &phantom.labels)?)?;
            rvol::write_f32(&out.join(&entry.boundary), &boundary_target(&mask, c)?)?;
            masks.push(entry);
        }
        cases.push(CaseEntry {
            id: id.clone(),
            seed,
            image: rel(&id, "image.rvol"),
            gt: rel(&id, "gt.rvol"),
            masks,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        seed: opts.seed,
        phantom: opts.phantom.clone(),
        cases,
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// One case read back from disk, image unprocessed.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseData {
    pub image: Volume<f64>,
    pub gt: LabelVolume,
    pub masks: Vec<MaskData>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskData {
    pub mask: LabelVolume,
    pub error_map: LabelVolume,
    pub boundary: Volume<f64>,
}

fn check_dims(path: &Path, expected: [usize; 3], got: [usize; 3]) -> Result<()> {
    if expected != got {
        return Err(Error::format(path, format!("extents {got:?} differ from dataset extents {expected:?}")));
    }
    Ok(())
}

pub fn load_case(dir: &Path, manifest: &Manifest, case: usize) -> Result<CaseData> {
    let entry = manifest
        .cases
        .get(case)
        .ok_or_else(|| Error::Invalid(format!("case index {case} out of range")))?;
    let dims = manifest.dims();
    let read_f32 = |p: &str| -> Result<Volume<f64>> {
        let path = dir.join(p);
        let v = rvol::read_f32(&path)?;
        check_dims(&path, dims, v.dims())?;
        Ok(v)
    };
    let read_u8 = |p: &str| -> Result<LabelVolume> {
        let path = dir.join(p);
        let v = rvol::read_u8(&path)?;
        check_dims(&path, dims, v.dims())?;
        Ok(v)
    };
    let masks = entry
        .masks
        .iter()
        .map(|m| {
            Ok(MaskData {
                mask: read_u8(&m.mask)?,
                error_map: read_u8(&m.error_map)?,
                boundary: read_f32(&m.boundary)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseData {
        image: read_f32(&entry.image)?,
        gt: read_u8(&entry.gt)?,
        masks,
    })
}

/// Training/evaluation samples of one case with the image preprocessed.
pub fn case_samples(case: &CaseData) -> Vec<Sample> {
    let image = preprocess(&case.image);
    case.masks
        .iter()
        .map(|m| Sample {
            image: image.clone(),
            mask: m.mask.clone(),
            gt: case.gt.clone(),
            error_map: m.error_map.clone(),
            boundary: m.boundary.clone(),
        })
        .collect()
}

/// Recomputes every error map and boundary target from the stored masks
/// and checks that they match the stored files bit for bit.
pub fn verify(dir: &Path, manifest: &Manifest) -> Result<()> {
    for (i, entry) in manifest.cases.iter().enumerate() {
        let case = load_case(dir, manifest, i)?;
        for (m, data) in entry.masks.iter().zip(&case.masks) {
            if make_error_map(&data.mask, &case.gt)? != data.error_map {
                return Err(Error::format(&dir.join(&m.error_map), "error map differs from recomputation"));
            }
            let b = rvol::f32_rounded(&boundary_target(&data.mask, manifest.num_classes())?);
            if b.data().iter().zip(data.boundary.data()).any(|(a, c)| a.to_bits() != c.to_bits()) {
                return Err(Error::format(&dir.join(&m.boundary), "boundary target differs from recomputation"));
            }
        }
    }
    Ok(())
}

/// Text histogram of per-mask Seg.DSC over the report bins.
pub fn dsc_histogram(manifest: &Manifest) -> String {
    let edges = DEFAULT_BIN_EDGES;
    let mut counts = vec![0usize; edges.len() + 1];
    for m in manifest.cases.iter().flat_map(|c| &c.masks) {
        let slot = bin_index(&edges, m.seg_dsc).map_or(0, |i| i + 1);
        counts[slot] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut out = String::new();
    let labels = std::iter::once(format!("<= {}", edges[0]))
        .chain(edges.windows(2).map(|w| format!("({}, {}]", w[0], w[1])))
        .chain(std::iter::once(format!("> {}", edges[edges.len() - 1])));
    for (label, n) in labels.zip(&counts) {
        let _ = writeln!(out, "{label:>12}  {n:5}  {}", "#".repeat((n * 50).div_ceil(total.max(1))));
    }
    out
}

pub fn case_dir(dir: &Path, id: &str) -> PathBuf {
    dir.join(id)
}
