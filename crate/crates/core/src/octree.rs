//! Semantic octree: occupancy log-odds updated along sensor rays and
//! per-voxel class beliefs kept as averaged label observations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::ClassSet;
use crate::error::{GpsmError, Result};
use crate::pointcloud::LabeledPointCloud;
use crate::semantic_map::argmax;

const MAGIC: &[u8; 4] = b"SOMT";
const FORMAT_VERSION: u8 = 1;
const NONE: u32 = u32::MAX;
/// Soft label vectors must sum to one within this tolerance.
const PROB_SUM_TOL: f64 = 1e-6;

/// Inverse sensor model in probability form plus log-odds clamping bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub p_hit: f64,
    pub p_miss: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            p_hit: 0.7,
            p_miss: 0.4,
            l_min: -2.0,
            l_max: 3.5,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_hit > 0.5
            && self.p_hit < 1.0
            && self.p_miss > 0.0
            && self.p_miss < 0.5
            && self.l_min < 0.0
            && self.l_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GpsmError::input(format!(
                "sensor model needs 0.5 < p_hit < 1, 0 < p_miss < 0.5, l_min < 0 < l_max: {self:?}"
            )))
        }
    }

    pub fn log_hit(&self) -> f64 {
        logit(self.p_hit)
    }

    pub fn log_miss(&self) -> f64 {
        logit(self.p_miss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OctreeConfig {
    /// Leaf edge length in meters.
    pub resolution: f64,
    pub max_depth: u8,
    /// Center of the cubic map volume.
    pub center: [f64; 3],
    pub sensor: SensorModel,
}

impl Default for OctreeConfig {
    fn default() -> Self {
        OctreeConfig {
            resolution: 0.02,
            max_depth: 16,
            center: [0.0; 3],
            sensor: SensorModel::default(),
        }
    }
}

/// Voxel address: integer coordinates at `depth` (leaves live at
/// `max_depth`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub depth: u8,
    pub x: u16,
    pub y: u16,
    pub z: u16,
}

impl VoxelKey {
    fn coord(&self, axis: usize) -> u32 {
        [self.x, self.y, self.z][axis] as u32
    }
}

/// Occupancy log-odds and accumulated label mass of one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVoxel {
    pub log_odds_occ: f64,
    pub class_counts: Vec<f64>,
    pub total_count: u64,
}

/// One semantic observation of a voxel.
#[derive(Debug, Clone, Copy)]
pub enum LabelObservation<'a> {
    /// Class index into the class set (one-hot observation).
    Hard(usize),
    /// Probability vector over the class set.
    Soft(&'a [f64]),
}

impl SemanticVoxel {
    fn new(n_c: usize) -> Self {
        SemanticVoxel {
            log_odds_occ: 0.0,
            class_counts: vec![0.0; n_c],
            total_count: 0,
        }
    }

    pub fn occupancy(&self) -> f64 {
        logistic(self.log_odds_occ)
    }

    /// Add one observation to the label average.
    pub fn update_semantics(&mut self, obs: LabelObservation<'_>) -> Result<()> {
        let n_c = self.class_counts.len();
        match obs {
            LabelObservation::Hard(j) => {
                if j >= n_c {
                    return Err(GpsmError::input(format!(
                        "class index {j} out of range for {n_c} classes"
                    )));
                }
                self.class_counts[j] += 1.0;
            }
            LabelObservation::Soft(p) => {
                check_distribution(p, n_c)?;
                self.class_counts
                    .iter_mut()
                    .zip(p)
                    .for_each(|(c, v)| *c += v);
            }
        }
        self.total_count += 1;
        Ok(())
    }

    /// Average of the observed label distributions, `None` before any
    /// observation.
    pub fn belief(&self) -> Option<Vec<f64>> {
        if self.total_count == 0 {
            return None;
        }
        let n = self.total_count as f64;
        Some(self.class_counts.iter().map(|c| c / n).collect())
    }
}

fn check_distribution(p: &[f64], n_c: usize) -> Result<()> {
    if p.len() != n_c {
        return Err(GpsmError::input(format!(
            "label vector has {} entries, expected {n_c}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        || (p.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL
    {
        return Err(GpsmError::input(
            "label vector is not a probability distribution",
        ));
    }
    Ok(())
}

/// Result of a point lookup.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelQuery {
    Unknown,
    Known {
        key: VoxelKey,
        occupancy: f64,
        /// `None` when the voxel has never received a label.
        belief: Option<Vec<f64>>,
        hard_label: Option<u16>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertSummary {
    pub points: usize,
    pub hit_updates: usize,
    pub miss_updates: usize,
    pub labeled_updates: usize,
    pub skipped_at_origin: usize,
    pub skipped_out_of_bounds: usize,
}

#[derive(Debug, Clone)]
pub struct SemanticOctree {
    config: OctreeConfig,
    class_set: ClassSet,
    /// Child slots of inner nodes; index 0 is the root. At the last inner
    /// level the slots index `leaves`.
    inner: Vec<[u32; 8]>,
    leaves: Vec<(VoxelKey, SemanticVoxel)>,
}

impl SemanticOctree {
    pub fn new(config: OctreeConfig, class_set: ClassSet) -> Result<Self> {
        if !(config.resolution > 0.0 && config.resolution.is_finite()) {
            return Err(GpsmError::input("octree resolution must be positive"));
        }
        if config.max_depth == 0 || config.max_depth > 16 {
            return Err(GpsmError::input("octree max_depth must be in 1..=16"));
        }
        if config.center.iter().any(|v| !v.is_finite()) {
            return Err(GpsmError::input("octree center must be finite"));
        }
        config.sensor.validate()?;
        Ok(SemanticOctree {
            config,
            class_set,
            inner: vec![[NONE; 8]],
            leaves: Vec::new(),
        })
    }

    pub fn config(&self) -> &OctreeConfig {
        &self.config
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    /// Number of leaves ever touched.
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    fn half(&self) -> i64 {
        1i64 << (self.config.max_depth - 1)
    }

    fn cells(&self) -> i64 {
        1i64 << self.config.max_depth
    }

    /// Continuous voxel coordinates of a point (leaf `k` spans `[k, k+1)`).
    fn grid_coords(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.config.center;
        let h = self.half() as f64;
        std::array::from_fn(|a| (p[a] - c[a]) / self.config.resolution + h)
    }

    fn key_from_grid(&self, g: [i64; 3]) -> Option<VoxelKey> {
        if g.iter().any(|&v| v < 0 || v >= self.cells()) {
            return None;
        }
        Some(VoxelKey {
            depth: self.config.max_depth,
            x: g[0] as u16,
            y: g[1] as u16,
            z: g[2] as u16,
        })
    }

    /// Leaf key containing `p`, or `None` outside the map volume.
    pub fn key_of(&self, p: [f64; 3]) -> Option<VoxelKey> {
        if p.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let g = self.grid_coords(p);
        self.key_from_grid(g.map(|v| v.floor() as i64))
    }

    /// Center of a leaf in meters.
    pub fn key_center(&self, key: VoxelKey) -> [f64; 3] {
        let h = self.half() as f64;
        std::array::from_fn(|a| {
            (key.coord(a) as f64 - h + 0.5) * self.config.resolution + self.config.center[a]
        })
    }

    fn child_slot(&self, key: VoxelKey, level: u8) -> usize {
        let bit = self.config.max_depth - 1 - level;
        (0..3)
            .map(|a| (((key.coord(a) >> bit) & 1) as usize) << a)
            .sum()
    }

    fn find_leaf(&self, key: VoxelKey) -> Option<usize> {
        let mut node = 0usize;
        for level in 0..self.config.max_depth {
            let next = self.inner[node][self.child_slot(key, level)];
            if next == NONE {
                return None;
            }
            if level + 1 == self.config.max_depth {
                return Some(next as usize);
            }
            node = next as usize;
        }
        unreachable!()
    }

    fn leaf_mut(&mut self, key: VoxelKey) -> &mut SemanticVoxel {
        let mut node = 0usize;
        let depth = self.config.max_depth;
        for level in 0..depth {
            let slot = self.child_slot(key, level);
            let last = level + 1 == depth;
            let next = self.inner[node][slot];
            if next == NONE {
                let idx = if last {
                    self.leaves
                        .push((key, SemanticVoxel::new(self.class_set.len())));
                    self.leaves.len() - 1
                } else {
                    self.inner.push([NONE; 8]);
                    self.inner.len() - 1
                };
                self.inner[node][slot] = idx as u32;
                if last {
                    return &mut self.leaves[idx].1;
                }
                node = idx;
            } else if last {
                return &mut self.leaves[next as usize].1;
            } else {
                node = next as usize;
            }
        }
        unreachable!()
    }

    pub fn voxel(&self, key: VoxelKey) -> Option<&SemanticVoxel> {
        self.find_leaf(key).map(|i| &self.leaves[i].1)
    }

    fn add_log_odds(&mut self, key: VoxelKey, delta: f64) {
        let (lo, hi) = (self.config.sensor.l_min, self.config.sensor.l_max);
        let v = self.leaf_mut(key);
        v.log_odds_occ = (v.log_odds_occ + delta).clamp(lo, hi);
    }

    /// Leaves strictly between the origin voxel (inclusive) and the
    /// endpoint voxel (exclusive), in traversal order.
    pub fn ray_keys(&self, origin: [f64; 3], end: [f64; 3]) -> Option<Vec<VoxelKey>> {
        let o = self.grid_coords(origin);
        let e = self.grid_coords(end);
        let mut cur = o.map(|v| v.floor() as i64);
        let last = e.map(|v| v.floor() as i64);
        self.key_from_grid(cur)?;
        self.key_from_grid(last)?;
        let dir: [f64; 3] = std::array::from_fn(|a| e[a] - o[a]);
        let step: [i64; 3] = std::array::from_fn(|a| (last[a] - cur[a]).signum());
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if step[a] != 0 && dir[a] != 0.0 {
                let boundary = if step[a] > 0 {
                    cur[a] as f64 + 1.0
                } else {
                    cur[a] as f64
                };
                t_max[a] = (boundary - o[a]) / dir[a];
                t_delta[a] = 1.0 / dir[a].abs();
            }
        }
        let mut keys = Vec::new();
        while cur != last {
            keys.push(self.key_from_grid(cur)?);
            // Only axes that still need to move may step; this bounds the
            // walk by the L1 distance even with rounding at cell corners.
            let axis = (0..3)
                .filter(|&a| cur[a] != last[a])
                .min_by(|&a, &b| t_max[a].total_cmp(&t_max[b]))
                .unwrap();
            cur[axis] += step[axis];
            t_max[axis] += t_delta[axis];
        }
        Some(keys)
    }

    /// Integrate one scan taken from `origin`. Labels come from the cloud's
    /// soft label vectors when present, otherwise from its hard labels.
    pub fn insert_scan(
        &mut self,
        origin: [f64; 3],
        cloud: &LabeledPointCloud,
    ) -> Result<InsertSummary> {
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GpsmError::input("sensor origin must be finite"));
        }
        if self.key_of(origin).is_none() {
            return Err(GpsmError::input(
                "sensor origin lies outside the map volume",
            ));
        }
        let n_c = self.class_set.len();
        // Validate every label before touching the tree.
        let hard: Vec<Option<usize>> = cloud
            .labels()
            .iter()
            .map(|l| l.map(|id| self.class_set.require_index(id)).transpose())
            .collect::<Result<_>>()?;
        if let Some(probs) = cloud.label_probs() {
            for p in probs {
                check_distribution(p, n_c)?;
            }
        }
        let (log_hit, log_miss) = (self.config.sensor.log_hit(), self.config.sensor.log_miss());
        let mut summary = InsertSummary {
            points: cloud.len(),
            ..InsertSummary::default()
        };
        for i in 0..cloud.len() {
            let p = cloud.point(i);
            if p == origin {
                summary.skipped_at_origin += 1;
                continue;
            }
            let (Some(end), Some(ray)) = (self.key_of(p), self.ray_keys(origin, p)) else {
                summary.skipped_out_of_bounds += 1;
                continue;
            };
            for k in &ray {
                self.add_log_odds(*k, log_miss);
            }
            summary.miss_updates += ray.len();
            self.add_log_odds(end, log_hit);
            summary.hit_updates += 1;
            let obs = match (cloud.label_probs(), hard[i]) {
                (Some(probs), _) => Some(LabelObservation::Soft(&probs[i])),
                (None, Some(j)) => Some(LabelObservation::Hard(j)),
                (None, None) => None,
            };
            if let Some(obs) = obs {
                self.leaf_mut(end).update_semantics(obs)?;
                summary.labeled_updates += 1;
            }
        }
        Ok(summary)
    }

    pub fn query_voxel(&self, p: [f64; 3]) -> VoxelQuery {
        let Some(key) = self.key_of(p) else {
            return VoxelQuery::Unknown;
        };
        match self.voxel(key) {
            None => VoxelQuery::Unknown,
            Some(v) => {
                let belief = v.belief();
                let hard_label = belief
                    .as_ref()
                    .map(|b| self.class_set.get(argmax(b)).unwrap().id);
                VoxelQuery::Known {
                    key,
                    occupancy: v.occupancy(),
                    belief,
                    hard_label,
                }
            }
        }
    }

    /// Leaves with occupancy probability above `threshold`, depth-first in
    /// child order, which is Morton order of the keys.
    pub fn occupied_leaves(&self, threshold: f64) -> Vec<(VoxelKey, &SemanticVoxel)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0u8)];
        while let Some((node, level)) = stack.pop() {
            let children = self.inner[node];
            if level + 1 == self.config.max_depth {
                for &child in children.iter().filter(|&&c| c != NONE) {
                    let (k, v) = &self.leaves[child as usize];
                    if v.occupancy() > threshold {
                        out.push((*k, v));
                    }
                }
            } else {
                for &child in children.iter().rev().filter(|&&c| c != NONE) {
                    stack.push((child as usize, level + 1));
                }
            }
        }
        out
    }

    /// Per-class scores at `p` for evaluation: the voxel's belief when it is
    /// occupied above `threshold` and labeled, otherwise uniform.
    pub fn class_scores(&self, p: [f64; 3], threshold: f64) -> Vec<f64> {
        let n_c = self.class_set.len();
        match self.query_voxel(p) {
            VoxelQuery::Known {
                occupancy,
                belief: Some(b),
                ..
            } if occupancy > threshold => b,
            _ => vec![1.0 / n_c as f64; n_c],
        }
    }

    /// Binary dump of the occupied leaves.
    pub fn to_dump(&self, threshold: f64) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.push(FORMAT_VERSION);
        w.extend_from_slice(&self.config.resolution.to_le_bytes());
        w.push(self.config.max_depth);
        for v in self.config.center {
            w.extend_from_slice(&v.to_le_bytes());
        }
        let s = self.config.sensor;
        for v in [s.p_hit, s.p_miss, s.l_min, s.l_max] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.extend_from_slice(&(self.class_set.len() as u32).to_le_bytes());
        for id in self.class_set.ids() {
            w.extend_from_slice(&id.to_le_bytes());
        }
        let leaves = self.occupied_leaves(threshold);
        w.extend_from_slice(&(leaves.len() as u64).to_le_bytes());
        for (k, v) in leaves {
            w.push(k.depth);
            for c in [k.x, k.y, k.z] {
                w.extend_from_slice(&c.to_le_bytes());
            }
            w.extend_from_slice(&(v.log_odds_occ as f32).to_le_bytes());
            w.extend_from_slice(&v.total_count.to_le_bytes());
            for c in &v.class_counts {
                w.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        w
    }

    /// Rebuild a tree holding the dumped leaves. Class names and colors are
    /// not stored in the dump, so the caller supplies the class set; its ids
    /// must match.
    pub fn from_dump(bytes: &[u8], class_set: ClassSet) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(GpsmError::parse(0, "not a semantic octree dump"));
        }
        let version = r.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(GpsmError::parse(
                4,
                format!("unsupported dump version {version}"),
            ));
        }
        let resolution = r.f64()?;
        let max_depth = r.take(1)?[0];
        let center = [r.f64()?, r.f64()?, r.f64()?];
        let sensor = SensorModel {
            p_hit: r.f64()?,
            p_miss: r.f64()?,
            l_min: r.f64()?,
            l_max: r.f64()?,
        };
        let n_c = r.u32()? as usize;
        let ids_at = r.pos;
        let ids = (0..n_c).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        if ids != class_set.ids() {
            return Err(GpsmError::parse(
                ids_at as u64,
                "class ids in the dump differ from the class set",
            ));
        }
        let config = OctreeConfig {
            resolution,
            max_depth,
            center,
            sensor,
        };
        let mut tree = SemanticOctree::new(config, class_set)?;
        let count = r.u64()?;
        for _ in 0..count {
            let at = r.pos;
            let depth = r.take(1)?[0];
            let key = VoxelKey {
                depth,
                x: r.u16()?,
                y: r.u16()?,
                z: r.u16()?,
            };
            if depth != max_depth {
                return Err(GpsmError::parse(at as u64, "leaf record not at max depth"));
            }
            let log_odds = r.f32()? as f64;
            let total = r.u64()?;
            let counts = (0..n_c)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let v = tree.leaf_mut(key);
            v.log_odds_occ = log_odds;
            v.total_count = total;
            v.class_counts = counts;
        }
        if r.pos != bytes.len() {
            return Err(GpsmError::parse(r.pos as u64, "trailing bytes after dump"));
        }
        Ok(tree)
    }

    pub fn save_dump(&self, path: impl AsRef<Path>, threshold: f64) -> Result<()> {
        fs::write(path, self.to_dump(threshold))?;
        Ok(())
    }

    pub fn load_dump(path: impl AsRef<Path>, class_set: ClassSet) -> Result<Self> {
        Self::from_dump(&fs::read(path)?, class_set)
    }

    /// Occupied leaf centers colored by hard label (gray when unlabeled).
    pub fn occupied_cloud(&self, threshold: f64) -> Result<LabeledPointCloud> {
        let leaves = self.occupied_leaves(threshold);
        let mut points = Vec::with_capacity(leaves.len());
        let mut labels = Vec::with_capacity(leaves.len());
        let mut colors = Vec::with_capacity(leaves.len());
        for (k, v) in leaves {
            let c = self.key_center(k);
            points.push([c[0] as f32, c[1] as f32, c[2] as f32]);
            match v.belief() {
                Some(b) => {
                    let info = self.class_set.get(argmax(&b)).unwrap();
                    labels.push(Some(info.id));
                    colors.push(info.color);
                }
                None => {
                    labels.push(None);
                    colors.push([128, 128, 128]);
                }
            }
        }
        LabeledPointCloud::with_labels(points, labels)?.with_colors(colors)
    }

    /// All touched leaves in arena order, with no tree traversal.
    pub fn leaves_unordered(&self) -> impl Iterator<Item = &(VoxelKey, SemanticVoxel)> {
        self.leaves.iter()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(GpsmError::parse(
                self.pos as u64,
                "octree dump is truncated",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn morton(k: VoxelKey) -> u64 {
        let mut m = 0u64;
        for bit in (0..16).rev() {
            for (a, c) in [k.x, k.y, k.z].iter().enumerate() {
                m |= (((*c as u64) >> bit) & 1) << (3 * bit + a);
            }
        }
        m
    }

    fn tree() -> SemanticOctree {
        SemanticOctree::new(OctreeConfig::default(), ClassSet::numbered(2).unwrap()).unwrap()
    }

    fn single(p: [f32; 3], label: Option<u16>) -> LabeledPointCloud {
        LabeledPointCloud::with_labels(vec![p], vec![label]).unwrap()
    }

    #[test]
    fn one_meter_ray() {
        let mut t = tree();
        let s = t
            .insert_scan([0.0; 3], &single([1.0, 0.0, 0.0], Some(1)))
            .unwrap();
        assert_eq!(s.hit_updates, 1);
        let VoxelQuery::Known { occupancy, key, .. } = t.query_voxel([1.0, 0.0, 0.0]) else {
            panic!()
        };
        assert!((t.voxel(key).unwrap().log_odds_occ - 0.8472978603872037).abs() < 1e-12);
        assert!((occupancy - 0.7).abs() < 1e-12);
        assert_eq!(s.miss_updates, 50);
        for k in t.ray_keys([0.0; 3], [1.0, 0.0, 0.0]).unwrap() {
            assert!((t.voxel(k).unwrap().log_odds_occ - (0.4f64 / 0.6).ln()).abs() < 1e-12);
        }
        assert_eq!(t.occupied_leaves(0.5).len(), 1);
        assert_eq!(t.query_voxel([0.0, 1.0, 0.0]), VoxelQuery::Unknown);
    }

    #[test]
    fn label_average_and_hard_label() {
        let mut t = tree();
        for l in [1, 1, 2] {
            t.insert_scan([0.0; 3], &single([0.5, 0.5, 0.0], Some(l)))
                .unwrap();
        }
        let VoxelQuery::Known {
            belief, hard_label, ..
        } = t.query_voxel([0.5, 0.5, 0.0])
        else {
            panic!()
        };
        let b = belief.unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-15 && (b[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(hard_label, Some(1));
    }

    #[test]
    fn repeated_scan_doubles_increments() {
        let cloud = LabeledPointCloud::with_labels(
            vec![[0.3, 0.1, 0.2], [0.3, 0.1, 0.2], [-0.2, 0.05, 0.4]],
            vec![Some(1), Some(2), None],
        )
        .unwrap();
        let mut once = tree();
        once.insert_scan([0.0; 3], &cloud).unwrap();
        let mut twice = tree();
        twice.insert_scan([0.0; 3], &cloud).unwrap();
        twice.insert_scan([0.0; 3], &cloud).unwrap();
        for (k, v) in once.leaves_unordered() {
            let w = twice.voxel(*k).unwrap();
            let expect = (2.0 * v.log_odds_occ).clamp(-2.0, 3.5);
            assert!((w.log_odds_occ - expect).abs() < 1e-12);
            assert_eq!(w.total_count, 2 * v.total_count);
        }
    }

    #[test]
    fn origin_points_and_bad_labels() {
        let mut t = tree();
        let s = t.insert_scan([0.0; 3], &single([0.0; 3], None)).unwrap();
        assert_eq!(s.skipped_at_origin, 1);
        assert!(t
            .insert_scan([0.0; 3], &single([1.0, 0.0, 0.0], Some(9)))
            .is_err());
        assert_eq!(t.num_leaves(), 0);
        let far = single([1000.0, 0.0, 0.0], None);
        assert_eq!(
            t.insert_scan([0.0; 3], &far).unwrap().skipped_out_of_bounds,
            1
        );
    }

    #[test]
    fn soft_labels_average() {
        let mut v = SemanticVoxel::new(2);
        v.update_semantics(LabelObservation::Soft(&[0.25, 0.75]))
            .unwrap();
        v.update_semantics(LabelObservation::Hard(0)).unwrap();
        assert_eq!(v.belief().unwrap(), vec![0.625, 0.375]);
        assert!(v
            .update_semantics(LabelObservation::Soft(&[0.5, 0.6]))
            .is_err());
        assert!(v.update_semantics(LabelObservation::Hard(2)).is_err());
    }

    #[test]
    fn ray_is_face_connected_and_ends_next_to_endpoint() {
        let t = tree();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let o: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() - 0.5);
            let e: [f64; 3] = std::array::from_fn(|_| 4.0 * (rng.random::<f64>() - 0.5));
            let keys = t.ray_keys(o, e).unwrap();
            let end = t.key_of(e).unwrap();
            let mut chain = keys.clone();
            chain.push(end);
            assert_eq!(chain[0], t.key_of(o).unwrap());
            for w in chain.windows(2) {
                let d: u32 = (0..3).map(|a| w[0].coord(a).abs_diff(w[1].coord(a))).sum();
                assert_eq!(d, 1);
            }
        }
    }

    #[test]
    fn occupied_iteration_matches_full_scan_and_dump_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 500;
        let pts: Vec<[f32; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random::<f32>() * 2.0 - 1.0))
            .collect();
        let labels = (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    None
                } else {
                    Some(1 + (i % 2) as u16)
                }
            })
            .collect();
        let cloud = LabeledPointCloud::with_labels(pts, labels).unwrap();
        let mut t = tree();
        t.insert_scan([0.0; 3], &cloud).unwrap();
        for th in [0.3, 0.5, 0.7] {
            let brute = t
                .leaves_unordered()
                .filter(|(_, v)| v.occupancy() > th)
                .count();
            let occ = t.occupied_leaves(th);
            assert_eq!(occ.len(), brute);
            let codes: Vec<u64> = occ.iter().map(|(k, _)| morton(*k)).collect();
            assert!(codes.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(t
            .leaves_unordered()
            .all(|(_, v)| (-2.0..=3.5).contains(&v.log_odds_occ)));

        let dump = t.to_dump(0.5);
        let back = SemanticOctree::from_dump(&dump, t.class_set().clone()).unwrap();
        assert_eq!(back.to_dump(0.5), dump);
        assert_eq!(
            back.occupied_leaves(0.5).len(),
            t.occupied_leaves(0.5).len()
        );
        assert!(SemanticOctree::from_dump(&dump[..dump.len() - 1], t.class_set().clone()).is_err());
        assert!(!t.occupied_cloud(0.5).unwrap().is_empty());
        assert!(tree().occupied_leaves(0.5).is_empty());
    }
}
