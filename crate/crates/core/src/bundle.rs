//! Scene bundles: the directory of files a session starts from.
//!
//! | file                | content                                     |
//! |---------------------|---------------------------------------------|
//! | `lane_map.json`     | lane node records                           |
//! | `assets.json`       | asset catalog                               |
//! | `field.vxg`         | radiance field checkpoint                   |
//! | `rig.json`          | ego pose, cameras and exposure statistics   |
//! | `background.json`   | optional reconstructed vehicles             |

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{ExposureStats, VoxelGrid};
use crate::scene::{load_asset_catalog, AssetRecord, BackgroundVehicle, CameraModel, LaneMap, Pose, SceneGraph};

pub const LANE_MAP_FILE: &str = "lane_map.json";
pub const ASSETS_FILE: &str = "assets.json";
pub const FIELD_FILE: &str = "field.vxg";
pub const RIG_FILE: &str = "rig.json";
pub const BACKGROUND_FILE: &str = "background.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing bundle file {0}")]
    Missing(String),
    #[error("invalid {file}: {reason}")]
    Invalid { file: String, reason: String },
    #[error("writing {file}: {source}")]
    Write { file: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub ego: Pose,
    pub cameras: Vec<CameraModel>,
    pub exposure: ExposureStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub lane_map: LaneMap,
    pub assets: Vec<AssetRecord>,
    pub grid: VoxelGrid,
    pub rig: RigFile,
    pub background: Vec<BackgroundVehicle>,
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, BundleError> {
    std::fs::read(dir.join(name)).map_err(|_| BundleError::Missing(name.to_string()))
}

fn invalid(file: &str, reason: impl ToString) -> BundleError {
    BundleError::Invalid { file: file.into(), reason: reason.to_string() }
}

fn text(dir: &Path, name: &str) -> Result<String, BundleError> {
    String::from_utf8(read(dir, name)?).map_err(|e| invalid(name, e))
}

impl Bundle {
    /// The synthetic demo content.
    pub fn demo() -> Self {
        Bundle {
            lane_map: crate::maps::crossroad(),
            assets: crate::demo::asset_bank(),
            grid: crate::demo::street_grid(),
            rig: RigFile { ego: Pose::identity(), cameras: crate::demo::rig(), exposure: crate::demo::demo_stats() },
            background: crate::demo::background_vehicles(),
        }
    }

    /// Loads every file, failing on the first one that is missing.
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let lane_map = LaneMap::from_json(&text(dir, LANE_MAP_FILE)?).map_err(|e| invalid(LANE_MAP_FILE, e))?;
        let assets = load_asset_catalog(&text(dir, ASSETS_FILE)?).map_err(|e| invalid(ASSETS_FILE, e))?;
        let grid = VoxelGrid::from_bytes(&read(dir, FIELD_FILE)?).map_err(|e| invalid(FIELD_FILE, e))?;
        let rig: RigFile = serde_json::from_str(&text(dir, RIG_FILE)?).map_err(|e| invalid(RIG_FILE, e))?;
        for c in &rig.cameras {
            c.validate().map_err(|e| invalid(RIG_FILE, e))?;
        }
        let background = match std::fs::read_to_string(dir.join(BACKGROUND_FILE)) {
            Ok(t) => serde_json::from_str(&t).map_err(|e| invalid(BACKGROUND_FILE, e))?,
            Err(_) => Vec::new(),
        };
        Ok(Bundle { lane_map, assets, grid, rig, background })
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        let put = |name: &str, bytes: Vec<u8>| {
            std::fs::write(dir.join(name), bytes).map_err(|source| BundleError::Write { file: name.into(), source })
        };
        std::fs::create_dir_all(dir).map_err(|source| BundleError::Write { file: dir.display().to_string(), source })?;
        put(LANE_MAP_FILE, self.lane_map.to_json().into_bytes())?;
        put(ASSETS_FILE, serde_json::to_vec_pretty(&self.assets).expect("assets serialize"))?;
        put(FIELD_FILE, self.grid.to_bytes())?;
        put(RIG_FILE, serde_json::to_vec_pretty(&self.rig).expect("rig serializes"))?;
        put(BACKGROUND_FILE, serde_json::to_vec_pretty(&self.background).expect("background serializes"))
    }

    pub fn scene(&self, seed: u64) -> SceneGraph {
        let mut s = SceneGraph::new(FIELD_FILE, self.lane_map.clone(), self.rig.ego.clone(), self.rig.cameras.clone(), self.assets.clone());
        s.background_vehicles = self.background.clone();
        s.seed = seed;
        s
    }
}
