//! View-hierarchy ingestion and the Android Screen Hierarchical Layout
//! labeling pipeline: prune non-visible branches, merge near-identical
//! parent/child chains, then label merged multi-leaf nodes as global
//! regions and their leaves as local regions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geometry::Rect;
use crate::hierarchy::{best_parent, RegionKind, ScoredRegion};

#[derive(Debug, thiserror::Error)]
pub enum AshlError {
    #[error("malformed view hierarchy at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("root node is not visible; nothing left after pruning")]
    EmptyTree,
    #[error("invalid dataset record {image_ref}: {message}")]
    InvalidRecord { image_ref: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Raw node bounds. Unlike [`Rect`], zero sizes are allowed: dumps contain them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Bounds {
    pub fn to_rect(self) -> Option<Rect> {
        Rect::new(self.x, self.y, self.w, self.h).ok()
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }
}

impl From<Rect> for Bounds {
    fn from(r: Rect) -> Self {
        Self {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewNode {
    pub id: i64,
    pub bounds: Bounds,
    pub visible: bool,
    pub children: Vec<ViewNode>,
    pub attrs: BTreeMap<String, String>,
    /// Set on any node produced by at least one merge.
    #[serde(default)]
    pub merged: bool,
    /// Ids of the nodes folded into this one.
    #[serde(default)]
    pub merged_ids: Vec<i64>,
}

impl ViewNode {
    pub fn leaf(id: i64, bounds: Bounds) -> Self {
        Self {
            id,
            bounds,
            visible: true,
            children: Vec::new(),
            attrs: BTreeMap::new(),
            merged: false,
            merged_ids: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<ViewNode>) -> Self {
        self.children = children;
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(ViewNode::node_count)
            .sum::<usize>()
    }

    /// Leaves in document order.
    pub fn leaves(&self) -> Vec<&ViewNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a ViewNode>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    /// Pre-order traversal.
    pub fn walk(&self, f: &mut impl FnMut(&ViewNode, usize)) {
        fn go(n: &ViewNode, depth: usize, f: &mut impl FnMut(&ViewNode, usize)) {
            f(n, depth);
            for c in &n.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }
}

/// A parsed dump: screen size plus the node tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewHierarchy {
    pub screen: Rect,
    pub image: Option<String>,
    pub root: ViewNode,
}

fn perr(path: &str, message: impl Into<String>) -> AshlError {
    AshlError::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parses `{"screen":[W,H], "image":?, "root":{id, bounds, visible?, attrs?, children?}}`.
pub fn parse_view_hierarchy(document: &[u8]) -> Result<ViewHierarchy, AshlError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| perr("$", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| perr("$", "expected an object"))?;

    let screen = match obj.get("screen").and_then(Value::as_array) {
        Some(a) if a.len() == 2 => {
            let dim = |i: usize| {
                a[i].as_u64()
                    .filter(|&v| v > 0 && v <= u64::from(u32::MAX))
                    .ok_or_else(|| perr(&format!("$.screen[{i}]"), "expected a positive integer"))
            };
            Rect::screen(dim(0)? as u32, dim(1)? as u32)
                .map_err(|e| perr("$.screen", e.to_string()))?
        }
        _ => return Err(perr("$.screen", "expected [width, height]")),
    };
    let image = match obj.get("image") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(perr("$.image", "expected a string")),
    };
    let root = obj.get("root").ok_or_else(|| perr("$.root", "missing"))?;
    let root = parse_node(root, "$.root")?;
    Ok(ViewHierarchy {
        screen,
        image,
        root,
    })
}

fn parse_node(value: &Value, path: &str) -> Result<ViewNode, AshlError> {
    let obj = value
        .as_object()
        .ok_or_else(|| perr(path, "expected an object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_i64)
        .ok_or_else(|| perr(&format!("{path}.id"), "missing or non-integer id"))?;
    let bounds = parse_bounds(obj, &format!("{path}.bounds"))?;
    let visible = match obj.get("visible") {
        None | Some(Value::Null) => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(perr(&format!("{path}.visible"), "expected a boolean")),
    };
    let attrs = match obj.get("attrs") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), v)
            })
            .collect(),
        Some(_) => return Err(perr(&format!("{path}.attrs"), "expected an object")),
    };
    let children = match obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, c)| parse_node(c, &format!("{path}.children[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(perr(&format!("{path}.children"), "expected an array")),
    };
    Ok(ViewNode {
        id,
        bounds,
        visible,
        children,
        attrs,
        merged: false,
        merged_ids: Vec::new(),
    })
}

fn parse_bounds(obj: &Map<String, Value>, path: &str) -> Result<Bounds, AshlError> {
    let arr = obj
        .get("bounds")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 4)
        .ok_or_else(|| perr(path, "expected [x, y, w, h]"))?;
    let mut v = [0i64; 4];
    for (i, item) in arr.iter().enumerate() {
        v[i] = item
            .as_i64()
            .ok_or_else(|| perr(&format!("{path}[{i}]"), "expected an integer"))?;
    }
    if v[2] < 0 || v[3] < 0 {
        return Err(perr(path, "negative size"));
    }
    Ok(Bounds {
        x: v[0],
        y: v[1],
        w: v[2],
        h: v[3],
    })
}

/// A node survives pruning when its flag is set, it has area, and it
/// intersects the screen.
pub fn effectively_visible(node: &ViewNode, screen: &Rect) -> bool {
    node.visible
        && node
            .bounds
            .to_rect()
            .is_some_and(|r| r.intersection(screen).is_some())
}

/// Removes every subtree rooted at a non-visible, zero-area or off-screen node.
pub fn prune_invisible(mut root: ViewNode, screen: &Rect) -> Result<ViewNode, AshlError> {
    if !effectively_visible(&root, screen) {
        return Err(AshlError::EmptyTree);
    }
    fn prune(node: &mut ViewNode, screen: &Rect) {
        node.children.retain(|c| effectively_visible(c, screen));
        for c in &mut node.children {
            prune(c, screen);
        }
    }
    prune(&mut root, screen);
    Ok(root)
}

fn bounds_iou(a: &Bounds, b: &Bounds) -> f64 {
    match (a.to_rect(), b.to_rect()) {
        (Some(a), Some(b)) => a.iou(&b),
        _ => 0.0,
    }
}

/// Collapses parent/child pairs whose IoU exceeds `iou_threshold` until no
/// such pair remains. Each pass is a post-order sweep; the merged node takes
/// the bounding union of both rects and adopts the child's children in place.
pub fn merge_chains(mut root: ViewNode, iou_threshold: f64) -> ViewNode {
    while merge_pass(&mut root, iou_threshold) {}
    root
}

fn merge_pass(node: &mut ViewNode, threshold: f64) -> bool {
    let mut changed = false;
    for c in &mut node.children {
        changed |= merge_pass(c, threshold);
    }
    let mut i = 0;
    while i < node.children.len() {
        if bounds_iou(&node.bounds, &node.children[i].bounds) > threshold {
            let child = node.children.remove(i);
            if let (Some(a), Some(b)) = (node.bounds.to_rect(), child.bounds.to_rect()) {
                node.bounds = a.bounding_union(&b).into();
            }
            node.merged = true;
            node.merged_ids.push(child.id);
            node.merged_ids.extend(child.merged_ids);
            let adopted = child.children.len();
            node.children.splice(i..i, child.children);
            // adopted grandchildren are compared against the grown node next pass
            i += adopted;
            changed = true;
        } else {
            i += 1;
        }
    }
    changed
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Also label multi-leaf nodes that never took part in a merge.
    pub include_unmerged_multileaf: bool,
}

/// Output of [`label_regions`]. `owners[i]` indexes the global that
/// structurally contains `locals[i]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels {
    pub globals: Vec<Rect>,
    pub locals: Vec<Rect>,
    pub owners: Vec<usize>,
}

/// Globals are merged nodes with more than one leaf; locals are their
/// leaves. A qualifying node claims its whole subtree, so nested
/// candidates below it are not labeled again.
pub fn label_regions(root: &ViewNode, cfg: &LabelConfig) -> Labels {
    let mut labels = Labels::default();
    fn visit(n: &ViewNode, cfg: &LabelConfig, out: &mut Labels) {
        let qualifies = (n.merged || cfg.include_unmerged_multileaf) && !n.is_leaf();
        if qualifies {
            let leaves = n.leaves();
            if leaves.len() > 1 {
                if let Some(rect) = n.bounds.to_rect() {
                    let owner = out.globals.len();
                    out.globals.push(rect);
                    for leaf in leaves.into_iter().filter_map(|l| l.bounds.to_rect()) {
                        out.locals.push(leaf);
                        out.owners.push(owner);
                    }
                    return;
                }
            }
        }
        for c in &n.children {
            visit(c, cfg, out);
        }
    }
    visit(root, cfg, &mut labels);
    labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub rect: Rect,
    pub label: RegionKind,
    /// For locals, index into the record's boxes of the max-IoU global.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_ref: String,
    pub screen: Rect,
    pub boxes: Vec<LabeledBox>,
}

impl DatasetRecord {
    /// Clips labels to the screen and records each local's max-IoU owner.
    pub fn from_labels(image_ref: impl Into<String>, screen: Rect, labels: &Labels) -> Self {
        let globals: Vec<Rect> = labels
            .globals
            .iter()
            .filter_map(|g| g.clip_to(&screen))
            .collect();
        let mut boxes: Vec<LabeledBox> = globals
            .iter()
            .map(|&rect| LabeledBox {
                rect,
                label: RegionKind::Global,
                owner: None,
            })
            .collect();
        for local in labels.locals.iter().filter_map(|l| l.clip_to(&screen)) {
            boxes.push(LabeledBox {
                rect: local,
                label: RegionKind::Local,
                owner: best_parent(&local, &globals),
            });
        }
        Self {
            image_ref: image_ref.into(),
            screen,
            boxes,
        }
    }

    pub fn count(&self, kind: RegionKind) -> usize {
        self.boxes.iter().filter(|b| b.label == kind).count()
    }

    pub fn validate(&self) -> Result<(), AshlError> {
        let bad = |message: String| AshlError::InvalidRecord {
            image_ref: self.image_ref.clone(),
            message,
        };
        for (i, b) in self.boxes.iter().enumerate() {
            if !self.screen.contains_rect(&b.rect) {
                return Err(bad(format!("box {i} {} lies outside the screen", b.rect)));
            }
            match (b.label, b.owner) {
                (RegionKind::Global, Some(_)) => {
                    return Err(bad(format!("global box {i} has an owner")));
                }
                (RegionKind::Local, Some(o))
                    if self.boxes.get(o).map(|g| g.label) != Some(RegionKind::Global) =>
                {
                    return Err(bad(format!("local box {i} owner {o} is not a global box")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AshlConfig {
    pub merge_iou: f64,
    pub labels: LabelConfig,
}

impl Default for AshlConfig {
    fn default() -> Self {
        Self {
            merge_iou: 0.9,
            labels: LabelConfig::default(),
        }
    }
}

/// Prune, merge and label one dump.
pub fn extract_record(
    hierarchy: &ViewHierarchy,
    image_ref: &str,
    cfg: &AshlConfig,
) -> Result<DatasetRecord, AshlError> {
    let pruned = prune_invisible(hierarchy.root.clone(), &hierarchy.screen)?;
    let merged = merge_chains(pruned, cfg.merge_iou);
    let labels = label_regions(&merged, &cfg.labels);
    Ok(DatasetRecord::from_labels(
        image_ref,
        hierarchy.screen,
        &labels,
    ))
}

/// Every labeled box as a full-confidence detection.
pub fn oracle_detections(record: &DatasetRecord) -> Vec<ScoredRegion> {
    record
        .boxes
        .iter()
        .map(|b| ScoredRegion::new(b.rect, b.label, 1.0))
        .collect()
}

pub const GLOBAL_CATEGORY: u32 = 1;
pub const LOCAL_CATEGORY: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: i64,
    pub height: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [i64; 4],
    pub area: u64,
    pub iscrowd: u8,
    /// Annotation id of the owning global, for locals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub global: usize,
    pub local: usize,
    pub total: usize,
}

pub fn to_coco(records: &[DatasetRecord]) -> CocoFile {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    for (i, rec) in records.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: rec.image_ref.clone(),
            width: rec.screen.w,
            height: rec.screen.h,
        });
        let first = next_ann;
        for b in &rec.boxes {
            annotations.push(CocoAnnotation {
                id: next_ann,
                image_id,
                category_id: match b.label {
                    RegionKind::Global => GLOBAL_CATEGORY,
                    RegionKind::Local => LOCAL_CATEGORY,
                },
                bbox: b.rect.into(),
                area: b.rect.area(),
                iscrowd: 0,
                parent_id: b.owner.map(|o| first + o as u64),
            });
            next_ann += 1;
        }
    }
    CocoFile {
        images,
        annotations,
        categories: vec![
            CocoCategory {
                id: GLOBAL_CATEGORY,
                name: "global".into(),
            },
            CocoCategory {
                id: LOCAL_CATEGORY,
                name: "local".into(),
            },
        ],
    }
}

pub fn from_coco(coco: &CocoFile) -> Result<Vec<DatasetRecord>, AshlError> {
    let mut records = Vec::new();
    for img in &coco.images {
        let bad = |message: String| AshlError::InvalidRecord {
            image_ref: img.file_name.clone(),
            message,
        };
        let screen = Rect::new(0, 0, img.width, img.height).map_err(|e| bad(e.to_string()))?;
        let anns: Vec<&CocoAnnotation> = coco
            .annotations
            .iter()
            .filter(|a| a.image_id == img.id)
            .collect();
        let mut boxes = Vec::with_capacity(anns.len());
        for a in &anns {
            let [x, y, w, h] = a.bbox;
            let label = match a.category_id {
                GLOBAL_CATEGORY => RegionKind::Global,
                LOCAL_CATEGORY => RegionKind::Local,
                other => return Err(bad(format!("unknown category {other}"))),
            };
            let owner =
                match a.parent_id {
                    None => None,
                    Some(pid) => Some(anns.iter().position(|b| b.id == pid).ok_or_else(|| {
                        bad(format!("annotation {} has unknown parent {pid}", a.id))
                    })?),
                };
            boxes.push(LabeledBox {
                rect: Rect::new(x, y, w, h).map_err(|e| bad(e.to_string()))?,
                label,
                owner,
            });
        }
        let rec = DatasetRecord {
            image_ref: img.file_name.clone(),
            screen,
            boxes,
        };
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

pub fn dataset_stats(records: &[DatasetRecord]) -> DatasetStats {
    let global = records.iter().map(|r| r.count(RegionKind::Global)).sum();
    let local = records.iter().map(|r| r.count(RegionKind::Local)).sum();
    DatasetStats {
        images: records.len(),
        global,
        local,
        total: global + local,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedDataset {
    pub annotations: PathBuf,
    pub stats: PathBuf,
}

/// Writes `annotations.json` (COCO style, global=1/local=2) and `stats.json`.
pub fn emit_dataset(
    records: &[DatasetRecord],
    out_dir: &Path,
) -> Result<EmittedDataset, AshlError> {
    for r in records {
        r.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|source| AshlError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let annotations = out_dir.join("annotations.json");
    let stats = out_dir.join("stats.json");
    write_json(&annotations, &to_coco(records))?;
    write_json(&stats, &dataset_stats(records))?;
    Ok(EmittedDataset { annotations, stats })
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, AshlError> {
    let bytes = fs::read(path).map_err(|source| AshlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let coco: CocoFile = serde_json::from_slice(&bytes).map_err(|source| AshlError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    from_coco(&coco)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AshlError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| AshlError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|source| AshlError::Io {
        path: path.to_path_buf(),
        source,
    })
}
