//! Line-delimited JSON dataset files, one instance per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GeneratedInstance;
use crate::error::{Error, Result};
use crate::geometry::{BoxDims, Dims, Placement, ProblemInstance};

/// On-disk form of an instance. The bin length is derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub dims: Dims,
    #[serde(rename = "W")]
    pub width: u32,
    #[serde(rename = "H")]
    pub height: u32,
    pub boxes: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Vec<Placement>>,
}

impl InstanceRecord {
    pub fn from_generated(g: &GeneratedInstance) -> Self {
        Self {
            certificate: g.certificate.clone(),
            ..Self::from_instance(&g.instance)
        }
    }

    pub fn from_instance(inst: &ProblemInstance) -> Self {
        Self {
            instance_id: inst.id.clone(),
            dims: inst.dims(),
            width: inst.bin.width,
            height: inst.bin.height,
            boxes: inst.boxes.iter().map(|b| [b.l, b.w, b.h]).collect(),
            certificate: None,
        }
    }

    pub fn into_generated(self) -> Result<GeneratedInstance> {
        let boxes = self
            .boxes
            .iter()
            .map(|&[l, w, h]| BoxDims::new(l, w, h))
            .collect::<Result<Vec<_>>>()?;
        let instance = ProblemInstance::new(self.instance_id, self.dims, self.width, self.height, boxes)?;
        Ok(GeneratedInstance {
            instance,
            certificate: self.certificate,
        })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, items: &[GeneratedInstance]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for g in items {
        serde_json::to_writer(&mut out, &InstanceRecord::from_generated(g))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<GeneratedInstance>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(rec.into_generated()?);
    }
    Ok(items)
}

/// SHA-256 of a file, hex encoded.
pub fn dataset_checksum(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
