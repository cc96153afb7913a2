//! Model persistence: a JSON manifest listing every array's name, shape and
//! byte offset, next to one raw file of little-endian f64 values stored in
//! manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::flow::FlowModel;
use crate::nn::Mlp;
use crate::nqs::NqsModel;
use crate::{Error, Result};

pub const FORMAT: &str = "nfqs-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Data file name, relative to the manifest's directory.
    pub data_file: String,
    pub arrays: Vec<ArrayEntry>,
}

/// Data file that sits next to `manifest`: same stem, `.bin` extension.
pub fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `arrays` in the given order.
pub fn write_arrays(manifest_path: &Path, arrays: &[(String, &Tensor)]) -> Result<Manifest> {
    let bin_path = data_path(manifest_path);
    let data_file = bin_path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", manifest_path.display())))?
        .to_string();
    let mut bytes = Vec::with_capacity(arrays.iter().map(|(_, t)| t.len() * 8).sum());
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, t) in arrays {
        entries.push(ArrayEntry { name: name.clone(), shape: t.shape().to_vec(), offset: bytes.len() as u64 });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, data_file, arrays: entries };
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin_path, bytes)?;
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads every array named in the manifest.
pub fn read_arrays(manifest_path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            manifest_path.display(),
            manifest.format,
            manifest.version
        )));
    }
    let bin_path = manifest_path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&bin_path)?;
    let mut out = BTreeMap::new();
    for e in &manifest.arrays {
        let len: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * len;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("array {} runs past the end of {}", e.name, bin_path.display())));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if out.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate array {}", e.name)));
        }
    }
    Ok(out)
}

fn mlp_arrays<'a>(prefix: &str, net: &'a Mlp, out: &mut Vec<(String, &'a Tensor)>) {
    for (i, pair) in net.params().chunks(2).enumerate() {
        out.push((format!("{prefix}.w{i}"), &pair[0]));
        out.push((format!("{prefix}.b{i}"), &pair[1]));
    }
}

fn take_mlp(prefix: &str, arrays: &mut BTreeMap<String, Tensor>) -> Result<Option<Mlp>> {
    let mut params = Vec::new();
    let mut sizes = Vec::new();
    for i in 0.. {
        let (Some(w), Some(b)) = (arrays.remove(&format!("{prefix}.w{i}")), arrays.remove(&format!("{prefix}.b{i}"))) else {
            break;
        };
        let [fan_in, fan_out] = w.shape() else {
            return Err(Error::Checkpoint(format!("{prefix}.w{i} is not a matrix")));
        };
        if sizes.is_empty() {
            sizes.push(*fan_in);
        } else if sizes.last() != Some(fan_in) {
            return Err(Error::Checkpoint(format!("{prefix}.w{i} does not chain with the previous layer")));
        }
        sizes.push(*fan_out);
        params.push(w);
        params.push(b);
    }
    if params.is_empty() {
        return Ok(None);
    }
    Mlp::from_params(&sizes, params).map(Some)
}

/// Trained artefacts of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub flow: FlowModel,
    pub nqs: Option<NqsModel>,
}

pub fn save(manifest_path: &Path, flow: &FlowModel, nqs: Option<&NqsModel>) -> Result<Manifest> {
    let mut arrays = Vec::new();
    for (i, layer) in flow.layers().iter().enumerate() {
        mlp_arrays(&format!("flow.{i}"), &layer.net, &mut arrays);
    }
    if let Some(m) = nqs {
        mlp_arrays("nqs", &m.net, &mut arrays);
    }
    write_arrays(manifest_path, &arrays)
}

pub fn load(manifest_path: &Path) -> Result<Checkpoint> {
    let mut arrays = read_arrays(manifest_path)?;
    let mut nets = Vec::new();
    while let Some(net) = take_mlp(&format!("flow.{}", nets.len()), &mut arrays)? {
        nets.push(net);
    }
    let first = nets.first().ok_or_else(|| Error::Checkpoint(format!("{} holds no flow layers", manifest_path.display())))?;
    let d = first.sizes()[0];
    let k = first.sizes().last().copied().unwrap_or(0) / 2;
    let flow = FlowModel::from_layers(d + k, nets)?;
    let nqs = take_mlp("nqs", &mut arrays)?.map(|net| NqsModel { net });
    if let Some(m) = &nqs {
        if m.dim() != flow.dim() {
            return Err(Error::Checkpoint(format!("flow has {} spins but the amplitude net takes {}", flow.dim(), m.dim())));
        }
    }
    if let Some(name) = arrays.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected array {name}")));
    }
    Ok(Checkpoint { flow, nqs })
}
