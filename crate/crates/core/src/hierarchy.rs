//! The fixed three-layer Hierarchical Layout Tree.
//!
//! Layer 1 is the whole screenshot, layer 2 the detected global regions
//! (panels, groups of controls) and layer 3 the local regions (individual
//! elements). Each local hangs off the global it overlaps most.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::geometry::Rect;

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("detection {index} {rect} overshoots the {screen} screen by {overshoot}px (slack {slack}px)")]
    OutOfScreen {
        index: usize,
        rect: Rect,
        screen: Rect,
        overshoot: i64,
        slack: i64,
    },
    #[error("invalid detection file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("detection file has no screen size and none was supplied")]
    MissingScreen,
    #[error("screen size must be positive")]
    EmptyScreen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Global,
    Local,
}

/// One detector proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoredRegion")]
pub struct ScoredRegion {
    pub rect: Rect,
    pub kind: RegionKind,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawScoredRegion {
    rect: Rect,
    kind: RegionKind,
    #[serde(default = "full_confidence")]
    confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl TryFrom<RawScoredRegion> for ScoredRegion {
    type Error = String;
    fn try_from(raw: RawScoredRegion) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&raw.confidence) {
            return Err(format!("confidence {} outside [0, 1]", raw.confidence));
        }
        Ok(Self {
            rect: raw.rect,
            kind: raw.kind,
            confidence: raw.confidence,
        })
    }
}

impl ScoredRegion {
    pub fn new(rect: Rect, kind: RegionKind, confidence: f64) -> Self {
        Self {
            rect,
            kind,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Detection ingestion file.
///
/// Either `{"screen":[W,H],"detections":[...]}` or a bare array of
/// detections, in which case the screen size must come from elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<[u32; 2]>,
    pub detections: Vec<ScoredRegion>,
}

impl DetectionFile {
    pub fn from_json(bytes: &[u8]) -> Result<Self, TreeError> {
        let is_array = bytes
            .iter()
            .find(|b| !b.is_ascii_whitespace())
            .is_some_and(|&b| b == b'[');
        if is_array {
            Ok(DetectionFile {
                screen: None,
                detections: serde_json::from_slice(bytes)?,
            })
        } else {
            Ok(serde_json::from_slice(bytes)?)
        }
    }

    /// Resolves the screen rect, preferring `override_size` when given.
    pub fn screen_rect(&self, override_size: Option<(u32, u32)>) -> Result<Rect, TreeError> {
        let (w, h) = override_size
            .or(self.screen.map(|[w, h]| (w, h)))
            .ok_or(TreeError::MissingScreen)?;
        Rect::screen(w, h).map_err(|_| TreeError::EmptyScreen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Globals are kept only when their confidence is strictly above this.
    pub global_conf_min: f64,
    /// Locals are kept only when their confidence is strictly above this.
    pub local_conf_min: f64,
    /// `None` clips every detection to the screen. `Some(s)` rejects
    /// detections overshooting the screen by more than `s` pixels.
    pub clip_slack: Option<i64>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            global_conf_min: 0.15,
            local_conf_min: 0.05,
            clip_slack: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Root,
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionNode {
    pub id: usize,
    pub rect: Rect,
    pub layer: Layer,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub parent_id: Option<usize>,
    pub children: Vec<usize>,
    /// Position of the originating detection in the input list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BelowThreshold,
    OffScreen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedDetection {
    pub index: usize,
    pub reason: DropReason,
}

/// Node 0 is always the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalLayoutTree {
    pub screen: Rect,
    pub nodes: Vec<RegionNode>,
    #[serde(default)]
    pub dropped: Vec<DroppedDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub globals: usize,
    pub locals: usize,
    pub locals_under_root: usize,
    pub dropped: usize,
}

impl HierarchicalLayoutTree {
    pub fn root_only(screen: Rect) -> Self {
        Self {
            screen,
            nodes: vec![RegionNode {
                id: 0,
                rect: screen,
                layer: Layer::Root,
                confidence: None,
                parent_id: None,
                children: Vec::new(),
                source_index: None,
            }],
            dropped: Vec::new(),
        }
    }

    pub fn node(&self, id: usize) -> Option<&RegionNode> {
        self.nodes.get(id)
    }

    pub fn root(&self) -> &RegionNode {
        &self.nodes[0]
    }

    pub fn globals(&self) -> impl Iterator<Item = &RegionNode> {
        self.nodes.iter().filter(|n| n.layer == Layer::Global)
    }

    pub fn locals(&self) -> impl Iterator<Item = &RegionNode> {
        self.nodes.iter().filter(|n| n.layer == Layer::Local)
    }

    /// Parent of a node, `None` for the root.
    pub fn parent(&self, node: &RegionNode) -> Option<&RegionNode> {
        node.parent_id.and_then(|id| self.node(id))
    }

    /// Rect of the node's parent; the screen for the root and for orphans.
    pub fn parent_rect(&self, node: &RegionNode) -> Rect {
        self.parent(node).map_or(self.screen, |p| p.rect)
    }

    pub fn summary(&self) -> TreeSummary {
        TreeSummary {
            globals: self.globals().count(),
            locals: self.locals().count(),
            locals_under_root: self.locals().filter(|n| n.parent_id == Some(0)).count(),
            dropped: self.dropped.len(),
        }
    }

    /// Maps `source_index` of each surviving local to the `source_index`
    /// of its parent global, `None` when it hangs off the root.
    pub fn local_parents_by_source(&self) -> Vec<(usize, Option<usize>)> {
        self.locals()
            .filter_map(|n| {
                let parent = self.parent(n)?;
                Some((n.source_index?, parent.source_index))
            })
            .collect()
    }
}

/// Overlap ranking key for a candidate parent: higher IoU first, then
/// smaller area, then earlier input.
pub(crate) fn better_parent(a: (Ratio<i64>, u64, usize), b: (Ratio<i64>, u64, usize)) -> Ordering {
    a.0.cmp(&b.0)
        .then_with(|| b.1.cmp(&a.1))
        .then_with(|| b.2.cmp(&a.2))
}

/// Index into `globals` of the best parent for `local`, or `None` when no
/// global overlaps it. Ties go to the smaller global, then the lower index.
pub fn best_parent(local: &Rect, globals: &[Rect]) -> Option<usize> {
    globals
        .iter()
        .enumerate()
        .map(|(i, g)| (local.iou::<Ratio<i64>>(g), g.area(), i))
        .filter(|(v, _, _)| *v > Ratio::from_integer(0))
        .max_by(|a, b| better_parent(*a, *b))
        .map(|(_, _, i)| i)
}

pub fn build_tree(
    screen: Rect,
    detections: &[ScoredRegion],
    cfg: &TreeConfig,
) -> Result<HierarchicalLayoutTree, TreeError> {
    let mut tree = HierarchicalLayoutTree::root_only(screen);
    let mut survivors = Vec::new();

    for (index, det) in detections.iter().enumerate() {
        let min = match det.kind {
            RegionKind::Global => cfg.global_conf_min,
            RegionKind::Local => cfg.local_conf_min,
        };
        if det.confidence <= min {
            tree.dropped.push(DroppedDetection {
                index,
                reason: DropReason::BelowThreshold,
            });
            continue;
        }
        if let Some(slack) = cfg.clip_slack {
            let overshoot = overshoot(&det.rect, &screen);
            if overshoot > slack {
                return Err(TreeError::OutOfScreen {
                    index,
                    rect: det.rect,
                    screen,
                    overshoot,
                    slack,
                });
            }
        }
        match det.rect.clip_to(&screen) {
            Some(rect) => survivors.push((index, rect, det)),
            None => tree.dropped.push(DroppedDetection {
                index,
                reason: DropReason::OffScreen,
            }),
        }
    }

    let global_ids: Vec<usize> = survivors
        .iter()
        .filter(|(_, _, d)| d.kind == RegionKind::Global)
        .map(|(index, rect, d)| {
            let id = tree.nodes.len();
            tree.nodes.push(RegionNode {
                id,
                rect: *rect,
                layer: Layer::Global,
                confidence: Some(d.confidence),
                parent_id: Some(0),
                children: Vec::new(),
                source_index: Some(*index),
            });
            tree.nodes[0].children.push(id);
            id
        })
        .collect();
    let global_rects: Vec<Rect> = global_ids.iter().map(|&id| tree.nodes[id].rect).collect();

    for (index, rect, d) in survivors
        .iter()
        .filter(|(_, _, d)| d.kind == RegionKind::Local)
    {
        let parent = best_parent(rect, &global_rects).map_or(0, |g| global_ids[g]);
        let id = tree.nodes.len();
        tree.nodes.push(RegionNode {
            id,
            rect: *rect,
            layer: Layer::Local,
            confidence: Some(d.confidence),
            parent_id: Some(parent),
            children: Vec::new(),
            source_index: Some(*index),
        });
        tree.nodes[parent].children.push(id);
    }

    Ok(tree)
}

fn overshoot(rect: &Rect, screen: &Rect) -> i64 {
    [
        screen.x - rect.x,
        screen.y - rect.y,
        rect.right() - screen.right(),
        rect.bottom() - screen.bottom(),
    ]
    .into_iter()
    .max()
    .unwrap_or(0)
    .max(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NodeIdMismatch,
    RootMissing,
    ExtraRoot,
    RootHasParent,
    RootRectMismatch,
    MissingParent,
    UnknownParent,
    GlobalParentNotRoot,
    LocalParentInvalid,
    ChildListMismatch,
    Cycle,
    Depth,
    OffScreen,
    ConfidenceRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node_id: usize,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: {:?}", self.node_id, self.rule)
    }
}

/// Checks every structural invariant; an empty list means the tree is well formed.
pub fn validate(tree: &HierarchicalLayoutTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |node_id, rule| out.push(Violation { node_id, rule });
    let n = tree.nodes.len();

    match tree.nodes.first() {
        Some(root) if root.layer == Layer::Root => {
            if root.parent_id.is_some() {
                flag(0, Rule::RootHasParent);
            }
            if root.rect != tree.screen {
                flag(0, Rule::RootRectMismatch);
            }
        }
        _ => flag(0, Rule::RootMissing),
    }

    for (i, node) in tree.nodes.iter().enumerate() {
        if node.id != i {
            flag(i, Rule::NodeIdMismatch);
        }
        if node.layer == Layer::Root && i != 0 {
            flag(i, Rule::ExtraRoot);
        }
        if node.rect.intersection(&tree.screen).is_none() {
            flag(i, Rule::OffScreen);
        }
        if let Some(c) = node.confidence {
            if !(0.0..=1.0).contains(&c) {
                flag(i, Rule::ConfidenceRange);
            }
        }

        if node.layer != Layer::Root {
            match node.parent_id {
                None => flag(i, Rule::MissingParent),
                Some(p) if p >= n => flag(i, Rule::UnknownParent),
                Some(p) => {
                    let parent_layer = tree.nodes[p].layer;
                    let ok = match node.layer {
                        Layer::Global => parent_layer == Layer::Root,
                        Layer::Local => matches!(parent_layer, Layer::Root | Layer::Global),
                        Layer::Root => true,
                    };
                    if !ok {
                        flag(
                            i,
                            if node.layer == Layer::Global {
                                Rule::GlobalParentNotRoot
                            } else {
                                Rule::LocalParentInvalid
                            },
                        );
                    }
                    if !tree.nodes[p].children.contains(&i) {
                        flag(i, Rule::ChildListMismatch);
                    }
                }
            }
        }
        for &c in &node.children {
            if c >= n || tree.nodes[c].parent_id != Some(i) {
                flag(i, Rule::ChildListMismatch);
            }
        }

        // depth counts the root as layer 1
        let mut depth = 1;
        let mut cursor = node.parent_id;
        let mut cyclic = false;
        while let Some(p) = cursor {
            if p >= n {
                break;
            }
            depth += 1;
            if depth > n + 1 {
                cyclic = true;
                break;
            }
            cursor = tree.nodes[p].parent_id;
        }
        if cyclic {
            flag(i, Rule::Cycle);
        } else if depth > 3 {
            // report only the node where the chain first exceeds three layers
            let parent_depth_ok = node
                .parent_id
                .filter(|&p| p < n)
                .is_none_or(|p| chain_depth(tree, p) <= 3);
            if parent_depth_ok {
                flag(i, Rule::Depth);
            }
        }
    }
    out
}

fn chain_depth(tree: &HierarchicalLayoutTree, id: usize) -> usize {
    let mut depth = 1;
    let mut cursor = tree.nodes[id].parent_id;
    while let Some(p) = cursor {
        if p >= tree.nodes.len() || depth > tree.nodes.len() {
            break;
        }
        depth += 1;
        cursor = tree.nodes[p].parent_id;
    }
    depth
}
