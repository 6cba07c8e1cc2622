//! JSON file formats for rigs, poses, meshes, grids, dataset metadata and
//! network checkpoints.
//!
//! Every `parse_*` function accepts arbitrary bytes and either returns a
//! validated value or an error; none of them panic.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::AnimationSet;
use crate::error::{Error, Result};
use crate::geometry::{Bone, HomogeneousTransform, Point2, Pose, Rig};
use crate::lbs::SkinnedMesh;
use crate::occupancy::{Aabb2, OccupancyGrid};
use crate::weightnet::{Layer, WeightNet};

pub const RIG_FILE: &str = "rig.json";
pub const MESH_FILE: &str = "mesh.json";
pub const POSES_FILE: &str = "poses.json";
pub const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneRecord {
    parent: i64,
    rest_frame: [f64; 16],
    pivot: Point2,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigRecord {
    bones: Vec<BoneRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub theta: Vec<f64>,
    pub root_translation: Point2,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshRecord {
    vertices: Vec<Point2>,
    weights: Vec<Vec<f64>>,
}

/// Dataset metadata (`meta.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub bbox_min: Point2,
    pub bbox_max: Point2,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRecord {
    bbox_min: Point2,
    bbox_max: Point2,
    resolution: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerRecord>,
    seed: u64,
}

fn from_json<'a, T: Deserialize<'a>>(what: &'static str, bytes: &'a [u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|source| Error::Parse { what, source })
}

fn to_json<T: Serialize>(value: &T, pretty: bool) -> String {
    let mut s = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("records serialize");
    s.push('\n');
    s
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite values")))
    }
}

pub fn parse_rig(bytes: &[u8]) -> Result<Rig> {
    let rec: RigRecord = from_json("rig", bytes)?;
    let bones = rec
        .bones
        .into_iter()
        .enumerate()
        .map(|(b, r)| {
            let parent = match r.parent {
                -1 => None,
                p if p >= 0 => Some(p as usize),
                p => return Err(Error::invalid(format!("bone {b} has parent {p}"))),
            };
            Ok(Bone {
                parent,
                rest_frame: HomogeneousTransform::from_row_major(&r.rest_frame),
                pivot: r.pivot,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Rig::new(bones)
}

pub fn rig_to_json(rig: &Rig) -> String {
    let rec = RigRecord {
        bones: rig
            .bones()
            .iter()
            .map(|b| BoneRecord {
                parent: b.parent.map_or(-1, |p| p as i64),
                rest_frame: b.rest_frame.to_row_major(),
                pivot: b.pivot,
            })
            .collect(),
    };
    to_json(&rec, true)
}

fn pose_from_record(r: PoseRecord) -> Result<Pose> {
    check_finite("pose", &r.theta)?;
    check_finite("pose", &r.root_translation)?;
    Ok(Pose {
        theta: r.theta,
        root_translation: r.root_translation,
    })
}

fn pose_to_record(p: &Pose) -> PoseRecord {
    PoseRecord {
        theta: p.theta.clone(),
        root_translation: p.root_translation,
    }
}

pub fn parse_pose(bytes: &[u8]) -> Result<Pose> {
    pose_from_record(from_json("pose", bytes)?)
}

pub fn pose_to_json(pose: &Pose) -> String {
    to_json(&pose_to_record(pose), true)
}

/// A JSON array of pose records.
pub fn parse_poses(bytes: &[u8]) -> Result<Vec<Pose>> {
    let recs: Vec<PoseRecord> = from_json("poses", bytes)?;
    recs.into_iter().map(pose_from_record).collect()
}

pub fn poses_to_json(poses: &[Pose]) -> String {
    to_json(&poses.iter().map(pose_to_record).collect::<Vec<_>>(), true)
}

pub fn parse_mesh(bytes: &[u8]) -> Result<SkinnedMesh> {
    let rec: MeshRecord = from_json("mesh", bytes)?;
    SkinnedMesh::new(rec.vertices, rec.weights)
}

pub fn mesh_to_json(mesh: &SkinnedMesh) -> String {
    to_json(
        &MeshRecord {
            vertices: mesh.vertices().to_vec(),
            weights: mesh.weights().to_vec(),
        },
        true,
    )
}

pub fn parse_meta(bytes: &[u8]) -> Result<Meta> {
    let meta: Meta = from_json("meta", bytes)?;
    Aabb2::new(meta.bbox_min, meta.bbox_max)?;
    Ok(meta)
}

pub fn meta_to_json(meta: &Meta) -> String {
    to_json(meta, true)
}

pub fn parse_grid(bytes: &[u8]) -> Result<OccupancyGrid> {
    let rec: GridRecord = from_json("grid", bytes)?;
    OccupancyGrid::new(Aabb2::new(rec.bbox_min, rec.bbox_max)?, rec.resolution, rec.values)
}

pub fn grid_to_json(grid: &OccupancyGrid) -> String {
    let bbox = grid.bbox();
    to_json(
        &GridRecord {
            bbox_min: bbox.min,
            bbox_max: bbox.max,
            resolution: grid.resolution(),
            values: grid.values().to_vec(),
        },
        false,
    )
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<WeightNet> {
    let rec: CheckpointRecord = from_json("checkpoint", bytes)?;
    if rec.layer_sizes.len() != rec.layers.len() + 1 {
        return Err(Error::invalid(format!(
            "{} layer sizes for {} layers",
            rec.layer_sizes.len(),
            rec.layers.len()
        )));
    }
    let layers = rec
        .layers
        .into_iter()
        .zip(rec.layer_sizes.windows(2))
        .map(|(l, pair)| Layer {
            inputs: pair[0],
            outputs: pair[1],
            w: l.w,
            b: l.b,
        })
        .collect();
    let net = WeightNet::from_layers(layers, rec.seed)?;
    if net.input_dim() % 3 != 0 {
        return Err(Error::invalid(format!("input width {} is not 3 per bone", net.input_dim())));
    }
    if !(net.output_dim() == net.bone_count() || net.output_dim() == net.bone_count() + 1) {
        return Err(Error::invalid(format!(
            "{} outputs for {} bones",
            net.output_dim(),
            net.bone_count()
        )));
    }
    Ok(net)
}

pub fn checkpoint_to_json(net: &WeightNet) -> String {
    to_json(
        &CheckpointRecord {
            layer_sizes: net.layer_sizes(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    w: l.w.clone(),
                    b: l.b.clone(),
                })
                .collect(),
            seed: net.seed(),
        },
        false,
    )
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read and parse a file, attaching the path to any parse error.
pub fn load<T>(path: &Path, parse: impl FnOnce(&[u8]) -> Result<T>) -> Result<T> {
    let bytes = read_file(path)?;
    parse(&bytes).map_err(|e| Error::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

/// Write `rig.json`, `mesh.json`, `poses.json` and `meta.json` into `dir`.
pub fn write_dataset(dir: &Path, set: &AnimationSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join(RIG_FILE), &rig_to_json(&set.rig))?;
    write_file(&dir.join(MESH_FILE), &mesh_to_json(&set.mesh))?;
    write_file(&dir.join(POSES_FILE), &poses_to_json(&set.poses))?;
    let meta = Meta {
        bbox_min: set.bbox.min,
        bbox_max: set.bbox.max,
        seed: set.seed,
        frames: set.poses.len(),
    };
    write_file(&dir.join(META_FILE), &meta_to_json(&meta))
}

pub fn read_dataset(dir: &Path) -> Result<AnimationSet> {
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let rig = load(&path(RIG_FILE), parse_rig)?;
    let mesh = load(&path(MESH_FILE), parse_mesh)?;
    let poses = load(&path(POSES_FILE), parse_poses)?;
    let meta = load(&path(META_FILE), parse_meta)?;
    if meta.frames != poses.len() {
        return Err(Error::invalid(format!(
            "meta.json lists {} frames but poses.json has {}",
            meta.frames,
            poses.len()
        )));
    }
    for (t, p) in poses.iter().enumerate() {
        if p.theta.len() != rig.bone_count() {
            return Err(Error::invalid(format!(
                "pose {t} has {} angles, rig has {} bones",
                p.theta.len(),
                rig.bone_count()
            )));
        }
    }
    AnimationSet::from_parts(rig, mesh, poses, Aabb2::new(meta.bbox_min, meta.bbox_max)?, meta.seed)
}
