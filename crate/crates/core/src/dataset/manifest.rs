//! On-disk dataset layout: a JSON manifest referencing per-trajectory tensor
//! files (images `[steps,c,h,w]`, states `[steps,3J+1]`, actions `[steps,A]`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ActionVector, ImageFrame, RobotState, Step, Trajectory};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFiles {
    pub images: String,
    pub states: String,
    pub actions: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub id: String,
    pub environment_id: String,
    pub steps: usize,
    pub files: TrajectoryFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub joint_count: usize,
    pub action_dim: usize,
    pub image: ImageGeometry,
    pub trajectories: Vec<TrajectoryEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
        if manifest.format_version != 1 {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported manifest version {}", manifest.format_version),
            ));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Resolve the manifest path: a directory means `<dir>/manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.join(MANIFEST_NAME)
    } else {
        dataset.to_path_buf()
    }
}

/// Write trajectories under `dir` and return the manifest.
///
/// Metadata (joint count, action dimension, image geometry) is derived from
/// the first step; every trajectory must agree with it.
pub fn save_dataset(dir: &Path, trajs: &[Trajectory]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let meta = trajs
        .iter()
        .find(|t| !t.is_empty())
        .map(|t| {
            let s = &t.steps[0];
            (
                s.state.joint_count(),
                s.action.dim(),
                ImageGeometry {
                    h: s.image.height,
                    w: s.image.width,
                    c: s.image.channels,
                },
            )
        })
        .unwrap_or((0, 0, ImageGeometry { h: 0, w: 0, c: 0 }));

    let mut entries = Vec::with_capacity(trajs.len());
    for traj in trajs {
        traj.validate()?;
        let sub = dir.join(&traj.id);
        let n = traj.len();
        let (c, h, w) = traj
            .steps
            .first()
            .map(|s| s.image.geometry())
            .unwrap_or((meta.2.c, meta.2.h, meta.2.w));
        let f = RobotState::feature_len(meta.0);

        let mut pixels = Vec::with_capacity(n * c * h * w);
        let mut states = Vec::with_capacity(n * f);
        let mut actions = Vec::with_capacity(n * meta.1);
        for step in &traj.steps {
            pixels.extend_from_slice(&step.image.pixels);
            states.extend_from_slice(&step.state.to_features());
            actions.extend_from_slice(&step.action.values);
        }
        io::save_tensor(
            &sub.join("images.dmlt"),
            &Tensor::new(vec![n, c, h, w], pixels)?,
        )?;
        io::save_tensor(&sub.join("states.dmlt"), &Tensor::new(vec![n, f], states)?)?;
        io::save_tensor(
            &sub.join("actions.dmlt"),
            &Tensor::new(vec![n, meta.1], actions)?,
        )?;
        entries.push(TrajectoryEntry {
            id: traj.id.clone(),
            environment_id: traj.environment_id.clone(),
            steps: n,
            files: TrajectoryFiles {
                images: format!("{}/images.dmlt", traj.id),
                states: format!("{}/states.dmlt", traj.id),
                actions: format!("{}/actions.dmlt", traj.id),
            },
        });
    }
    let manifest = DatasetManifest {
        format_version: 1,
        joint_count: meta.0,
        action_dim: meta.1,
        image: meta.2,
        trajectories: entries,
    };
    manifest.save(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Load every trajectory named by a manifest, preserving manifest order and
/// enforcing all trajectory invariants.
pub fn load_dataset(dataset: &Path) -> Result<Vec<Trajectory>> {
    let mpath = manifest_path(dataset);
    let manifest = DatasetManifest::load(&mpath)?;
    let base = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut out = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        out.push(load_trajectory(&base, &manifest, entry)?);
    }
    Ok(out)
}

fn load_trajectory(
    base: &Path,
    manifest: &DatasetManifest,
    entry: &TrajectoryEntry,
) -> Result<Trajectory> {
    let ctx = |what: &str, reason: String| {
        Error::Dataset(format!("trajectory {:?} {}: {}", entry.id, what, reason))
    };
    let images = io::load_tensor(&base.join(&entry.files.images))
        .map_err(|e| ctx("images", e.to_string()))?;
    let states = io::load_tensor(&base.join(&entry.files.states))
        .map_err(|e| ctx("states", e.to_string()))?;
    let actions = io::load_tensor(&base.join(&entry.files.actions))
        .map_err(|e| ctx("actions", e.to_string()))?;

    let n = entry.steps;
    let (c, h, w) = (manifest.image.c, manifest.image.h, manifest.image.w);
    let f = RobotState::feature_len(manifest.joint_count);
    let a = manifest.action_dim;
    if images.shape() != [n, c, h, w] {
        return Err(ctx(
            "images",
            format!("tensor shape {:?}, manifest expects {:?}", images.shape(), [n, c, h, w]),
        ));
    }
    if states.shape() != [n, f] {
        return Err(ctx(
            "states",
            format!(
                "tensor shape {:?}, manifest expects {:?} (joint_count {})",
                states.shape(),
                [n, f],
                manifest.joint_count
            ),
        ));
    }
    if actions.shape() != [n, a] {
        return Err(ctx(
            "actions",
            format!("tensor shape {:?}, manifest expects {:?}", actions.shape(), [n, a]),
        ));
    }

    let frame_len = c * h * w;
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let state = RobotState::from_features(&states.data()[i * f..(i + 1) * f])
            .map_err(|e| ctx(&format!("step {i}"), e.to_string()))?;
        steps.push(Step {
            image: ImageFrame {
                channels: c,
                height: h,
                width: w,
                pixels: images.data()[i * frame_len..(i + 1) * frame_len].to_vec(),
            },
            state,
            action: ActionVector::new(actions.data()[i * a..(i + 1) * a].to_vec()),
        });
    }
    let traj = Trajectory {
        id: entry.id.clone(),
        environment_id: entry.environment_id.clone(),
        steps,
    };
    traj.validate()?;
    Ok(traj)
}

/// Content hash of a dataset: sha-256 over the manifest bytes followed by
/// every referenced tensor file, in manifest order.
pub fn dataset_fingerprint(dataset: &Path) -> Result<String> {
    let mpath = manifest_path(dataset);
    let bytes = fs::read(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    let base = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    for entry in &manifest.trajectories {
        for file in [&entry.files.images, &entry.files.states, &entry.files.actions] {
            let p = base.join(file);
            let content = fs::read(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
            hasher.update(&content);
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}
