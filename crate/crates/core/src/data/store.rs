//! On-disk clip and dataset layout: a JSON manifest next to tensor files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clip::{Clip, DimMode, JointSet, PointCloud};
use super::geometry::{flatten3, flatten4, unflatten3, unflatten4};
use crate::error::{Error, Result};
use crate::numerics::{io as tio, Tensor};

pub const CLIP_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const INDEX: &str = "index.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipFiles {
    pub waypoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homographies: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vl: Option<String>,
    /// All frames' points stacked as `x, y, z, arm` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_clouds: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_counts: Option<Vec<usize>>,
}

/// `manifest.json` of a clip directory. Unknown keys are ignored on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub format_version: u32,
    pub id: String,
    pub frames: usize,
    pub mode: DimMode,
    pub image_size: (usize, usize),
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub task: Option<String>,
    pub joint_set: JointSet,
    #[serde(default)]
    pub annotations: BTreeMap<String, Vec<f64>>,
    pub files: ClipFiles,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn load_field(dir: &Path, field: &str, file: &str) -> Result<Tensor> {
    let path = dir.join(file);
    match fs::read(&path) {
        Ok(bytes) => Ok(tio::decode(&bytes, &path)?.0),
        Err(e) => Err(Error::io(
            &path,
            io::Error::new(e.kind(), format!("field '{field}': {e}")),
        )),
    }
}

fn matrices_tensor(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    Tensor::from_rows(&rows)
}

pub fn save_clip(clip: &Clip, dir: &Path) -> Result<()> {
    clip.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = ClipFiles::default();
    for (k, w) in clip.waypoints.iter().enumerate() {
        let name = format!("waypoints_{}.uhnd", clip.joint_set.ids[k]);
        tio::save_f64(&dir.join(&name), w)?;
        files.waypoints.push(name);
    }
    if let Some(hs) = &clip.homographies {
        let t = matrices_tensor(hs.iter().map(|h| flatten3(h).to_vec()).collect())?;
        tio::save_f64(&dir.join("homographies.uhnd"), &t)?;
        files.homographies = Some("homographies.uhnd".into());
    }
    if let Some(ps) = &clip.poses {
        let t = matrices_tensor(ps.iter().map(|p| flatten4(p).to_vec()).collect())?;
        tio::save_f64(&dir.join("poses.uhnd"), &t)?;
        files.poses = Some("poses.uhnd".into());
    }
    if let Some(s) = &clip.states {
        let t = Tensor::new(vec![s.len()], s.iter().map(|v| *v as f64).collect())?;
        tio::save_f64(&dir.join("states.uhnd"), &t)?;
        files.states = Some("states.uhnd".into());
    }
    if let Some(vl) = &clip.vl {
        tio::save_f64(&dir.join("vl.uhnd"), vl)?;
        files.vl = Some("vl.uhnd".into());
    }
    if let Some(pcs) = &clip.point_clouds {
        let mut data = Vec::new();
        let mut counts = Vec::with_capacity(pcs.len());
        for pc in pcs {
            counts.push(pc.arm_mask.len());
            for (r, a) in pc.arm_mask.iter().enumerate() {
                data.extend_from_slice(pc.points.row(r));
                data.push(if *a { 1.0 } else { 0.0 });
            }
        }
        let total = counts.iter().sum();
        tio::save_f64(&dir.join("points.uhnd"), &Tensor::matrix(total, 4, data)?)?;
        files.point_clouds = Some("points.uhnd".into());
        files.point_counts = Some(counts);
    }
    let manifest = ClipManifest {
        format_version: CLIP_FORMAT_VERSION,
        id: clip.id.clone(),
        frames: clip.frames(),
        mode: clip.mode,
        image_size: clip.image_size,
        scenario: clip.scenario.clone(),
        task: clip.task.clone(),
        joint_set: clip.joint_set.clone(),
        annotations: clip.annotations.clone(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn rows_as<T>(
    t: &Tensor,
    width: usize,
    field: &str,
    path: &Path,
    f: impl Fn(&[f64]) -> T,
) -> Result<Vec<T>> {
    if t.ndim() != 2 || t.cols() != width {
        return Err(Error::format(
            path,
            format!(
                "field '{field}' must have {width} columns, got shape {:?}",
                t.shape()
            ),
        ));
    }
    Ok((0..t.rows()).map(|r| f(t.row(r))).collect())
}

pub fn load_clip(dir: &Path) -> Result<Clip> {
    let mpath = dir.join(MANIFEST);
    let m: ClipManifest = read_json(&mpath)?;
    if m.format_version != CLIP_FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!(
                "clip format version {} is not supported (expected {CLIP_FORMAT_VERSION})",
                m.format_version
            ),
        ));
    }
    let waypoints = m
        .files
        .waypoints
        .iter()
        .map(|f| load_field(dir, "waypoints", f))
        .collect::<Result<Vec<_>>>()?;
    let homographies = match &m.files.homographies {
        Some(f) => Some(rows_as(
            &load_field(dir, "homographies", f)?,
            9,
            "homographies",
            &dir.join(f),
            unflatten3,
        )?),
        None => None,
    };
    let poses = match &m.files.poses {
        Some(f) => Some(rows_as(
            &load_field(dir, "poses", f)?,
            16,
            "poses",
            &dir.join(f),
            unflatten4,
        )?),
        None => None,
    };
    let states = match &m.files.states {
        Some(f) => Some(
            load_field(dir, "states", f)?
                .data()
                .iter()
                .map(|v| *v as u8)
                .collect(),
        ),
        None => None,
    };
    let vl = match &m.files.vl {
        Some(f) => Some(load_field(dir, "vl", f)?),
        None => None,
    };
    let point_clouds = match (&m.files.point_clouds, &m.files.point_counts) {
        (Some(f), Some(counts)) => {
            let path = dir.join(f);
            let t = load_field(dir, "point_clouds", f)?;
            if t.ndim() != 2 || t.cols() != 4 || t.rows() != counts.iter().sum::<usize>() {
                return Err(Error::format(
                    &path,
                    "point cloud rows disagree with point_counts",
                ));
            }
            let mut start = 0;
            let mut out = Vec::with_capacity(counts.len());
            for &n in counts {
                let block = t.slice_rows(start, start + n)?;
                let mut pts = Vec::with_capacity(n * 3);
                let mut mask = Vec::with_capacity(n);
                for r in 0..n {
                    pts.extend_from_slice(&block.row(r)[..3]);
                    mask.push(block.row(r)[3] != 0.0);
                }
                out.push(PointCloud {
                    points: Tensor::matrix(n, 3, pts)?,
                    arm_mask: mask,
                });
                start += n;
            }
            Some(out)
        }
        (None, None) => None,
        _ => {
            return Err(Error::format(
                &mpath,
                "point_clouds and point_counts must be given together",
            ))
        }
    };
    let clip = Clip {
        id: m.id,
        mode: m.mode,
        image_size: m.image_size,
        scenario: m.scenario,
        homographies,
        poses,
        point_clouds,
        joint_set: m.joint_set,
        waypoints,
        states,
        task: m.task,
        vl,
        annotations: m.annotations,
    };
    if clip.frames() != m.frames {
        return Err(Error::format(
            &mpath,
            format!(
                "manifest says {} frames, tensors hold {}",
                m.frames,
                clip.frames()
            ),
        ));
    }
    clip.validate()
        .map_err(|e| Error::format(&mpath, e.to_string()))?;
    Ok(clip)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub dir: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub clips: Vec<IndexEntry>,
}

/// Writes each clip to `root/<id>/` and lists it in `root/index.json`.
pub fn save_dataset(root: &Path, clips: &[(Clip, Split)]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(clips.len());
    for (clip, split) in clips {
        save_clip(clip, &root.join(&clip.id))?;
        entries.push(IndexEntry {
            dir: clip.id.clone(),
            split: *split,
        });
    }
    write_json(
        &root.join(INDEX),
        &DatasetIndex {
            format_version: DATASET_FORMAT_VERSION,
            clips: entries,
        },
    )
}

pub fn load_index(root: &Path) -> Result<DatasetIndex> {
    let path = root.join(INDEX);
    let index: DatasetIndex = read_json(&path)?;
    if index.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "dataset format version {} is not supported",
                index.format_version
            ),
        ));
    }
    Ok(index)
}

/// Loads every clip tagged with `split`, in index order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<Clip>> {
    load_index(root)?
        .clips
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_clip(&root.join(&e.dir)))
        .collect()
}

pub fn clip_dir(root: &Path, entry: &IndexEntry) -> PathBuf {
    root.join(&entry.dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_clip, SynthConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["reach", "pick-place", "language-pick-place"] {
            let c = SynthConfig {
                scenario: s.into(),
                ..Default::default()
            };
            let clip = synth_clip(&c, 4, 2).unwrap();
            let d = dir.path().join(s);
            save_clip(&clip, &d).unwrap();
            assert_eq!(load_clip(&d).unwrap(), clip);
        }
    }

    #[test]
    fn missing_homography_file_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_clip(&SynthConfig::default(), 1, 0).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        fs::remove_file(dir.path().join("homographies.uhnd")).unwrap();
        let err = load_clip(dir.path()).unwrap_err();
        assert!(err.is_io());
        assert!(err.to_string().contains("homographies"), "{err}");
    }

    #[test]
    fn unknown_manifest_keys_are_ignored_and_versions_checked() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_clip(&SynthConfig::default(), 1, 0).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["future_field"] = serde_json::json!({"anything": [1, 2]});
        fs::write(&path, v.to_string()).unwrap();
        assert_eq!(load_clip(dir.path()).unwrap(), clip);
        v["format_version"] = serde_json::json!(99);
        fs::write(&path, v.to_string()).unwrap();
        let err = load_clip(dir.path()).unwrap_err();
        assert!(err.is_io() && err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn dataset_index_filters_by_split() {
        let dir = tempfile::tempdir().unwrap();
        let c = SynthConfig::default();
        let clips: Vec<_> = (0..3)
            .map(|i| {
                (
                    synth_clip(&c, 9, i).unwrap(),
                    if i == 2 { Split::Test } else { Split::Train },
                )
            })
            .collect();
        save_dataset(dir.path(), &clips).unwrap();
        assert_eq!(load_split(dir.path(), Split::Train).unwrap().len(), 2);
        assert_eq!(load_split(dir.path(), Split::Test).unwrap()[0], clips[2].0);
    }
}
