use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegionGridConfig, RegionIndex, Snapshot};
use crate::models::{read_model_blob, write_model_blob};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEntry {
    pub region: RegionIndex,
    pub trained_iters: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub grid: RegionGridConfig,
    pub agents: Vec<AgentEntry>,
}

fn blob_name(r: RegionIndex) -> String {
    format!("agent_{r}.nslf")
}

/// Writes `manifest.json` plus one model blob per agent into `dir`.
pub fn write_checkpoint(snapshot: &Snapshot, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut agents = Vec::new();
    for (region, model) in &snapshot.models {
        let file = blob_name(*region);
        let path = dir.join(&file);
        let out = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_model_blob(model, BufWriter::new(out)).map_err(|e| Error::io(&path, e))?;
        agents.push(AgentEntry {
            region: *region,
            trained_iters: snapshot.trained_iters.get(region).copied().unwrap_or(0),
            file,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        grid: snapshot.grid,
        agents,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            manifest.format_version
        )));
    }
    manifest.grid.validate()?;
    Ok(manifest)
}

pub fn read_checkpoint(dir: &Path) -> Result<Snapshot> {
    let manifest = read_manifest(dir)?;
    let mut models = BTreeMap::new();
    let mut trained_iters = BTreeMap::new();
    for entry in &manifest.agents {
        let path = dir.join(&entry.file);
        let data = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let model = read_model_blob(data.as_slice())
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        models.insert(entry.region, model);
        trained_iters.insert(entry.region, entry.trained_iters);
    }
    Ok(Snapshot {
        grid: manifest.grid,
        models,
        trained_iters,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{ModelConfig, ModelKind};
    use crate::numerics::Parameters;

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut snap = Snapshot {
            grid: RegionGridConfig::default(),
            models: BTreeMap::new(),
            trained_iters: BTreeMap::new(),
        };
        for (i, kind) in [ModelKind::NslfSh, ModelKind::Hg].into_iter().enumerate() {
            let r = RegionIndex::new(i as u32, 2, 3);
            snap.models
                .insert(r, ModelConfig::default_for(kind).build(&mut rng).unwrap());
            snap.trained_iters.insert(r, 10 * i as u64);
        }
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(&snap, dir.path()).unwrap();
        assert!(dir.path().join("agent_0_2_3.nslf").exists());
        let back = read_checkpoint(dir.path()).unwrap();
        assert_eq!(back.trained_iters, snap.trained_iters);
        for (r, m) in &snap.models {
            assert_eq!(back.models[r].params(), m.params());
        }
    }

    #[test]
    fn empty_snapshot_has_empty_manifest() {
        let snap = Snapshot {
            grid: RegionGridConfig::default(),
            models: BTreeMap::new(),
            trained_iters: BTreeMap::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(&snap, dir.path()).unwrap();
        assert!(read_manifest(dir.path()).unwrap().agents.is_empty());
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            format_version: 99,
            grid: RegionGridConfig::default(),
            agents: vec![],
        };
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&m).unwrap(),
        )
        .unwrap();
        assert!(matches!(read_checkpoint(dir.path()), Err(Error::Format(_))));
    }
}
