//! Target path selection and two-lens visual prompts.
//!
//! A target path is the (local, global) pair that frames a pointed
//! coordinate. Lens 1 crops the global region and marks the local box and
//! the point; lens 2 shows the whole screen with the global box marked.

mod font;
mod render;

use serde::{Deserialize, Serialize};

use crate::geometry::{contains, PointPx, Rect};
use crate::hierarchy::{HierarchicalLayoutTree, RegionNode};

pub use render::{
    crop, decode_png, encode_png, render_lenses, LensLayout, LensSet, LensStyle, RenderError, Rgb,
    StyleOverrides,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("point {point} lies outside the {screen} screen")]
    OutsideScreen { point: PointPx, screen: Rect },
    #[error("action region {region} does not intersect the {screen} screen")]
    RegionOffScreen { region: Rect, screen: Rect },
}

/// Which rule produced a [`TargetPath`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Smallest local containing the point, framed by its parent.
    Normal,
    /// No local contains the point; the smallest containing global acts as
    /// the local and the screen as the global.
    GlobalAsLocal,
    /// Nothing contains the point; a window around it acts as the local.
    Synthesized,
    /// Click matched a local only after growing every local on all sides.
    ClickExpanded,
    /// Click matched a local only after stretching locals to full screen width.
    ClickRowExtended,
    /// Input action matched a local by overlap with the action region.
    InputOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPath {
    pub point: PointPx,
    pub local: Rect,
    pub global: Rect,
    pub provenance: Provenance,
    /// Tree node backing `local`, if any.
    pub local_node: Option<usize>,
    /// Tree node backing `global`; `None` means the screen.
    pub global_node: Option<usize>,
    /// Set when the requested rule matched nothing and point-based
    /// selection was used instead.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub click_expand_px: i64,
    /// Locals must overlap the input region strictly more than this.
    pub input_iou_local: f64,
    /// Globals must overlap the input region strictly more than this.
    pub input_iou_global: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            click_expand_px: 50,
            input_iou_local: 0.4,
            input_iou_global: 0.1,
        }
    }
}

fn smallest<'a>(nodes: impl Iterator<Item = &'a RegionNode>) -> Option<&'a RegionNode> {
    nodes.min_by_key(|n| (n.rect.area(), n.id))
}

fn check_point(tree: &HierarchicalLayoutTree, p: PointPx) -> Result<(), PathError> {
    if contains(&tree.screen, p) {
        Ok(())
    } else {
        Err(PathError::OutsideScreen {
            point: p,
            screen: tree.screen,
        })
    }
}

/// Global side of a path whose local is a tree node: its parent, or the
/// screen when it hangs off the root.
fn framed_by_parent(
    tree: &HierarchicalLayoutTree,
    local: &RegionNode,
    point: PointPx,
    provenance: Provenance,
) -> TargetPath {
    let global_node = local.parent_id.filter(|&p| p != 0);
    TargetPath {
        point,
        local: local.rect,
        global: tree.parent_rect(local),
        provenance,
        local_node: Some(local.id),
        global_node,
        fallback: false,
    }
}

/// Window of one eighth of the screen in each dimension, centered on `p`
/// and shifted to stay on screen.
pub fn synthesized_window(screen: &Rect, p: PointPx) -> Rect {
    let w = (screen.w / 8).max(1);
    let h = (screen.h / 8).max(1);
    let x = (p.x - w / 2).clamp(screen.x, screen.right() - w);
    let y = (p.y - h / 2).clamp(screen.y, screen.bottom() - h);
    Rect { x, y, w, h }
}

pub fn select_target_path(
    tree: &HierarchicalLayoutTree,
    p: PointPx,
) -> Result<TargetPath, PathError> {
    check_point(tree, p)?;
    if let Some(local) = smallest(tree.locals().filter(|n| contains(&n.rect, p))) {
        return Ok(framed_by_parent(tree, local, p, Provenance::Normal));
    }
    if let Some(global) = smallest(tree.globals().filter(|n| contains(&n.rect, p))) {
        return Ok(TargetPath {
            point: p,
            local: global.rect,
            global: tree.screen,
            provenance: Provenance::GlobalAsLocal,
            local_node: Some(global.id),
            global_node: None,
            fallback: false,
        });
    }
    Ok(TargetPath {
        point: p,
        local: synthesized_window(&tree.screen, p),
        global: tree.screen,
        provenance: Provenance::Synthesized,
        local_node: None,
        global_node: None,
        fallback: false,
    })
}

/// Click targets: exact containment first, then locals grown by
/// `expand_px` on every side, then locals stretched to the full screen
/// width. Each stage picks the smallest original area.
pub fn select_path_for_click(
    tree: &HierarchicalLayoutTree,
    p: PointPx,
    expand_px: i64,
) -> Result<TargetPath, PathError> {
    check_point(tree, p)?;
    if tree.locals().any(|n| contains(&n.rect, p)) {
        return select_target_path(tree, p);
    }
    let screen = tree.screen;
    let grown = |n: &&RegionNode| {
        n.rect
            .expand(expand_px)
            .clip_to(&screen)
            .is_some_and(|r| contains(&r, p))
    };
    if let Some(local) = smallest(tree.locals().filter(grown)) {
        return Ok(framed_by_parent(tree, local, p, Provenance::ClickExpanded));
    }
    let row = |n: &&RegionNode| {
        let band = Rect {
            x: screen.x,
            w: screen.w,
            ..n.rect
        };
        contains(&band, p)
    };
    if let Some(local) = smallest(tree.locals().filter(row)) {
        return Ok(framed_by_parent(
            tree,
            local,
            p,
            Provenance::ClickRowExtended,
        ));
    }
    select_target_path(tree, p)
}

/// Input targets: smallest local overlapping the region by more than
/// `input_iou_local`; the global is the local's parent when it overlaps the
/// region by more than `input_iou_global`, else the smallest such global,
/// else the local's parent regardless.
pub fn select_path_for_input_action(
    tree: &HierarchicalLayoutTree,
    action_region: &Rect,
    cfg: &PathConfig,
) -> Result<TargetPath, PathError> {
    let Some(on_screen) = action_region.clip_to(&tree.screen) else {
        return Err(PathError::RegionOffScreen {
            region: *action_region,
            screen: tree.screen,
        });
    };
    let point = on_screen.center();
    let overlap = |n: &RegionNode| action_region.iou::<f64>(&n.rect);

    let Some(local) = smallest(tree.locals().filter(|n| overlap(n) > cfg.input_iou_local)) else {
        let mut path = select_target_path(tree, point)?;
        path.fallback = true;
        return Ok(path);
    };

    let qualifies = |n: &RegionNode| overlap(n) > cfg.input_iou_global;
    let parent = tree.parent(local).filter(|p| p.id != 0);
    let global = match parent {
        Some(p) if qualifies(p) => Some(p),
        _ => smallest(tree.globals().filter(|n| qualifies(n))).or(parent),
    };
    Ok(TargetPath {
        point,
        local: local.rect,
        global: global.map_or(tree.screen, |g| g.rect),
        provenance: Provenance::InputOverlap,
        local_node: Some(local.id),
        global_node: global.map(|g| g.id),
        fallback: false,
    })
}
