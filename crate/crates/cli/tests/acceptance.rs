//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tol_core::ashl::{
    extract_record, label_regions, merge_chains, oracle_detections, parse_view_hierarchy,
    AshlConfig, Bounds, LabelConfig, ViewNode,
};
use tol_core::eval::{
    aggregate, ground_truth_relation, map_human_rating, oracle_predictions, rouge_l,
    run_content_eval, run_layout_eval, synthetic::synthetic_benchmark, EvalOptions, HumanRating,
    MetricSummary, OracleContentJudge, OracleLayoutJudge, Prediction, RandomChoiceJudge, Relation9,
};
use tol_core::hierarchy::{build_tree, DetectionFile, RegionKind, ScoredRegion, TreeConfig};
use tol_core::lens::{
    encode_png, render_lenses, select_path_for_click, select_path_for_input_action,
    select_target_path, LensStyle, PathConfig, Provenance, TargetPath,
};
use tol_core::verify::{
    baseline_confidence_filter, score, ActionKind, ActionStep, StepLabel, Trajectory,
};
use tol_core::{Exact, HierarchicalLayoutTree, PointPx, Rect};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:.1?}, budget {budget:?}"))
}

fn rect(x: i64, y: i64, w: i64, h: i64) -> Rect {
    Rect::new(x, y, w, h).expect("valid rect")
}

/// Cell sets of a rect on a 64x64 raster, one bit mask per row.
fn raster(r: &Rect) -> [u64; 64] {
    let mut rows = [0u64; 64];
    for row in rows.iter_mut().skip(r.y as usize).take(r.h as usize) {
        for x in r.x..r.right() {
            *row |= 1 << x;
        }
    }
    rows
}

fn cell_iou(a: &[u64; 64], b: &[u64; 64]) -> Exact {
    let inter: u32 = a.iter().zip(b).map(|(p, q)| (p & q).count_ones()).sum();
    let union: u32 = a.iter().zip(b).map(|(p, q)| (p | q).count_ones()).sum();
    Ratio::new(i64::from(inter), i64::from(union))
}

fn iou_oracle_parity() -> Check {
    let start = Instant::now();
    let steps = [0, 5, 11, 16, 23, 32];
    let sizes = [1, 2, 7, 15, 24, 32];
    let mut grid = Vec::new();
    for &x in &steps {
        for &y in &steps {
            for &w in &sizes {
                for &h in &sizes {
                    grid.push(rect(x, y, w, h));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random: Vec<(Rect, Rect)> = (0..20_000)
        .map(|_| {
            let mut r = || {
                rect(
                    rng.random_range(0..=32),
                    rng.random_range(0..=32),
                    rng.random_range(1..=32),
                    rng.random_range(1..=32),
                )
            };
            (r(), r())
        })
        .collect();
    let rasters: Vec<[u64; 64]> = grid.iter().map(raster).collect();
    let mut pairs = 0usize;
    for (a, ra) in grid.iter().zip(&rasters) {
        for (b, rb) in grid.iter().zip(&rasters) {
            let got = a.iou::<Exact>(b);
            let want = cell_iou(ra, rb);
            ensure(got == want, || {
                format!("iou({a}, {b}) = {got}, cells give {want}")
            })?;
            pairs += 1;
        }
    }
    for (a, b) in &random {
        let (got, want) = (a.iou::<Exact>(b), cell_iou(&raster(a), &raster(b)));
        ensure(got == want, || {
            format!("iou({a}, {b}) = {got}, cells give {want}")
        })?;
        let approx = a.iou::<f64>(b);
        let exact = *want.numer() as f64 / *want.denom() as f64;
        ensure((approx - exact).abs() < 1e-12, || {
            format!("f64 iou({a}, {b}) = {approx}, exact {exact}")
        })?;
        pairs += 1;
    }
    ensure(pairs >= 100_000, || format!("only {pairs} pairs"))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("{pairs} pairs"))
}

/// Independent intersection-over-union from edge arithmetic.
fn edge_iou(a: &Rect, b: &Rect) -> Exact {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0);
    let inter = iw * ih;
    Ratio::new(inter, a.w * a.h + b.w * b.h - inter)
}

fn random_scene(rng: &mut ChaCha8Rng) -> Vec<ScoredRegion> {
    let screen = 200;
    let snap = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| rng.random_range(lo..=hi) * 10;
    let r = |rng: &mut ChaCha8Rng, max_side: i64| {
        let w = snap(rng, 1, max_side);
        let h = snap(rng, 1, max_side);
        rect(
            snap(rng, 0, (screen - w) / 10),
            snap(rng, 0, (screen - h) / 10),
            w,
            h,
        )
    };
    let mut dets = Vec::new();
    let globals = rng.random_range(0..=10);
    for _ in 0..globals {
        // repeat an earlier global now and then to force exact ties
        let rect = match dets.last() {
            Some(ScoredRegion { rect, .. }) if rng.random_bool(0.2) => *rect,
            _ => r(rng, 20),
        };
        let conf = f64::from(rng.random_range(0..=20u8)) / 20.0;
        dets.push(ScoredRegion::new(rect, RegionKind::Global, conf));
    }
    for _ in 0..rng.random_range(0..=30) {
        let conf = f64::from(rng.random_range(0..=20u8)) / 20.0;
        dets.push(ScoredRegion::new(r(rng, 8), RegionKind::Local, conf));
    }
    let mut order: Vec<ScoredRegion> = dets;
    // interleave kinds so input order is not grouped
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Brute-force parent map: local input index to global input index.
fn argmax_parents(dets: &[ScoredRegion], cfg: &TreeConfig) -> BTreeMap<usize, Option<usize>> {
    let globals: Vec<(usize, &ScoredRegion)> = dets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.kind == RegionKind::Global && d.confidence > cfg.global_conf_min)
        .collect();
    let mut out = BTreeMap::new();
    for (li, l) in dets.iter().enumerate() {
        if l.kind != RegionKind::Local || l.confidence <= cfg.local_conf_min {
            continue;
        }
        let mut best: Option<(Exact, u64, usize)> = None;
        for &(gi, g) in &globals {
            let v = edge_iou(&l.rect, &g.rect);
            if v == Ratio::from_integer(0) {
                continue;
            }
            let cand = (v, g.rect.area(), gi);
            best = match best {
                None => Some(cand),
                Some(b)
                    if cand.0 > b.0
                        || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2))) =>
                {
                    Some(cand)
                }
                keep => keep,
            };
        }
        out.insert(li, best.map(|b| b.2));
    }
    out
}

fn tree_parent_oracle() -> Check {
    let start = Instant::now();
    let cfg = TreeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut locals = 0;
    let mut ties = 0;
    for scene in 0..1000 {
        let dets = random_scene(&mut rng);
        let tree = build_tree(rect(0, 0, 200, 200), &dets, &cfg)
            .map_err(|e| format!("scene {scene}: {e}"))?;
        let got: BTreeMap<usize, Option<usize>> =
            tree.local_parents_by_source().into_iter().collect();
        let want = argmax_parents(&dets, &cfg);
        ensure(got == want, || {
            format!("scene {scene}: tree {got:?}, oracle {want:?}")
        })?;
        locals += want.len();
        ties += want
            .iter()
            .filter(|(&l, p)| {
                p.is_some()
                    && dets
                        .iter()
                        .enumerate()
                        .filter(|(i, g)| {
                            g.kind == RegionKind::Global
                                && g.confidence > cfg.global_conf_min
                                && Some(*i) != **p
                                && edge_iou(&dets[l].rect, &g.rect)
                                    == edge_iou(&dets[l].rect, &dets[p.unwrap()].rect)
                        })
                        .count()
                        > 0
            })
            .count();
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("1000 scenes, {locals} locals, {ties} tied"))
}

fn random_view(rng: &mut ChaCha8Rng, id: &mut i64, b: Bounds, depth: u32) -> ViewNode {
    *id += 1;
    let mut node = ViewNode::leaf(*id, b);
    if depth == 0 || b.w < 8 || b.h < 8 {
        return node;
    }
    let kids = rng.random_range(0..=3);
    for _ in 0..kids {
        let child = if rng.random_bool(0.4) {
            // near-copy of the parent: a chain link
            let d = rng.random_range(0..=b.h / 30);
            Bounds {
                x: b.x,
                y: b.y + d,
                w: b.w,
                h: b.h - d,
            }
        } else {
            let w = rng.random_range(1..=b.w / 2);
            let h = rng.random_range(1..=b.h / 2);
            Bounds {
                x: b.x + rng.random_range(0..=b.w - w),
                y: b.y + rng.random_range(0..=b.h - h),
                w,
                h,
            }
        };
        node.children.push(random_view(rng, id, child, depth - 1));
    }
    node
}

fn bounds(x: i64, y: i64, w: i64, h: i64) -> Bounds {
    Bounds { x, y, w, h }
}

fn no_mergeable_pair(n: &ViewNode, threshold: Exact) -> bool {
    n.children.iter().all(|c| match (n.bounds.to_rect(), c.bounds.to_rect()) {
        (Some(a), Some(b)) => edge_iou(&a, &b) <= threshold,
        _ => true,
    } && no_mergeable_pair(c, threshold))
}

fn ashl_fixtures() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut merges = 0;
    for t in 0..50 {
        let mut id = 0;
        let tree = random_view(&mut rng, &mut id, bounds(0, 0, 1080, 1920), 5);
        let once = merge_chains(tree.clone(), 0.9);
        let twice = merge_chains(once.clone(), 0.9);
        ensure(once == twice, || {
            format!("tree {t}: merge is not idempotent")
        })?;
        ensure(no_mergeable_pair(&once, Ratio::new(9, 10)), || {
            format!("tree {t}: a pair above 0.9 survived")
        })?;
        merges += tree.node_count() - once.node_count();
    }

    // A ⊃ B ⊃ C at IoU 0.95 per link holding 2 leaves; D ⊃ E holding 4 leaves;
    // F unmerged with 3 leaves; G ⊃ H merged around a single leaf.
    let leaf = |id, x, y, w, h| ViewNode::leaf(id, bounds(x, y, w, h));
    let c = leaf(3, 0, 0, 400, 361)
        .with_children(vec![leaf(4, 10, 10, 100, 50), leaf(5, 10, 100, 100, 50)]);
    let a =
        leaf(1, 0, 0, 400, 400).with_children(vec![leaf(2, 0, 0, 400, 380).with_children(vec![c])]);
    let e = leaf(7, 500, 0, 400, 390).with_children(vec![
        leaf(8, 510, 10, 50, 50),
        leaf(9, 600, 10, 50, 50),
        leaf(10, 510, 100, 50, 50),
        leaf(11, 600, 100, 50, 50),
    ]);
    let d = leaf(6, 500, 0, 400, 400).with_children(vec![e]);
    let f = leaf(12, 0, 500, 400, 400).with_children(vec![
        leaf(13, 10, 510, 50, 50),
        leaf(14, 100, 510, 50, 50),
        leaf(15, 200, 510, 50, 50),
    ]);
    let g = leaf(16, 500, 500, 300, 300).with_children(vec![
        leaf(17, 500, 500, 300, 295).with_children(vec![leaf(18, 510, 510, 50, 50)])
    ]);
    let root = leaf(0, 0, 0, 1000, 1000).with_children(vec![a, d, f, g]);
    let merged = merge_chains(root, 0.9);
    let chain = &merged.children[0];
    ensure(
        chain.merged && chain.merged_ids == [2, 3] && chain.children.len() == 2,
        || {
            format!(
                "chain A-B-C collapsed to {:?} with {} children",
                chain.merged_ids,
                chain.children.len()
            )
        },
    )?;
    let labels = label_regions(&merged, &LabelConfig::default());
    let want_globals = vec![rect(0, 0, 400, 400), rect(500, 0, 400, 400)];
    let want_locals = vec![
        rect(10, 10, 100, 50),
        rect(10, 100, 100, 50),
        rect(510, 10, 50, 50),
        rect(600, 10, 50, 50),
        rect(510, 100, 50, 50),
        rect(600, 100, 50, 50),
    ];
    ensure(labels.globals == want_globals, || {
        format!("globals {:?}", labels.globals)
    })?;
    ensure(labels.locals == want_locals, || {
        format!("locals {:?}", labels.locals)
    })?;
    ensure(labels.owners == [0, 0, 1, 1, 1, 1], || {
        format!("owners {:?}", labels.owners)
    })?;

    // the screenshot fixture: app bar, list and bottom bar; the invisible overlay is pruned
    let doc =
        std::fs::read(common::fixtures().join("hierarchy.json")).map_err(|e| e.to_string())?;
    let h = parse_view_hierarchy(&doc).map_err(|e| e.to_string())?;
    let record =
        extract_record(&h, "screenshot.png", &AshlConfig::default()).map_err(|e| e.to_string())?;
    let globals: Vec<Rect> = record
        .boxes
        .iter()
        .filter(|b| b.label == RegionKind::Global)
        .map(|b| b.rect)
        .collect();
    ensure(
        globals
            == [
                rect(0, 24, 360, 56),
                rect(0, 88, 360, 480),
                rect(0, 576, 360, 64),
            ],
        || format!("fixture globals {globals:?}"),
    )?;
    let mut want = vec![
        rect(8, 34, 36, 36),
        rect(52, 32, 240, 40),
        rect(308, 34, 36, 36),
    ];
    for i in 0..5 {
        let y = 90 + i * 95;
        want.extend([
            rect(16, y + 23, 48, 48),
            rect(80, y + 24, 240, 20),
            rect(80, y + 52, 200, 16),
        ]);
    }
    want.extend((0..4).map(|i| rect(i * 90 + 21, 585, 48, 48)));
    let locals: Vec<Rect> = record
        .boxes
        .iter()
        .filter(|b| b.label == RegionKind::Local)
        .map(|b| b.rect)
        .collect();
    ensure(locals == want, || format!("fixture locals {locals:?}"))?;
    Ok(format!(
        "50 random trees ({merges} merges), chain and screen fixtures"
    ))
}

fn path_is_valid(
    tree: &HierarchicalLayoutTree,
    path: &TargetPath,
    p: PointPx,
    expand: i64,
) -> Result<(), String> {
    let screen = tree.screen;
    let bad = |why: &str| Err(format!("point {p}: {why} in {path:?}"));
    if path.point != p {
        return bad("point moved");
    }
    if !screen.contains_rect(&path.local) || !screen.contains_rect(&path.global) {
        return bad("path leaves the screen");
    }
    match path.global_node {
        None if path.global != screen => return bad("unbacked global is not the screen"),
        Some(id) if tree.node(id).map(|n| n.rect) != Some(path.global) => {
            return bad("global node mismatch")
        }
        _ => {}
    }
    if let Some(id) = path.local_node {
        if tree.node(id).map(|n| n.rect) != Some(path.local) {
            return bad("local node mismatch");
        }
    }
    let reach = match path.provenance {
        Provenance::Normal | Provenance::GlobalAsLocal | Provenance::Synthesized => path.local,
        Provenance::ClickExpanded => path.local.expand(expand),
        Provenance::ClickRowExtended => Rect {
            x: screen.x,
            w: screen.w,
            ..path.local
        },
        Provenance::InputOverlap => screen,
    };
    if !reach.contains(p) {
        return bad("local does not reach the point");
    }
    Ok(())
}

fn fixture_trees() -> Result<Vec<(String, HierarchicalLayoutTree)>, String> {
    let fx = common::fixtures();
    let cfg = TreeConfig::default();
    let det = DetectionFile::from_json(
        &std::fs::read(fx.join("detections.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let screen = det.screen_rect(None).map_err(|e| e.to_string())?;
    let mut trees = vec![(
        "detections".to_string(),
        build_tree(screen, &det.detections, &cfg).map_err(|e| e.to_string())?,
    )];
    let h =
        parse_view_hierarchy(&std::fs::read(fx.join("hierarchy.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let record =
        extract_record(&h, "screenshot.png", &AshlConfig::default()).map_err(|e| e.to_string())?;
    trees.push((
        "hierarchy".into(),
        build_tree(h.screen, &oracle_detections(&record), &cfg).map_err(|e| e.to_string())?,
    ));
    trees.push((
        "empty".into(),
        HierarchicalLayoutTree::root_only(rect(0, 0, 800, 600)),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..3 {
        trees.push((
            format!("random-{i}"),
            build_tree(rect(0, 0, 200, 200), &random_scene(&mut rng), &cfg)
                .map_err(|e| e.to_string())?,
        ));
    }
    Ok(trees)
}

fn expect_provenance(
    name: &str,
    path: &TargetPath,
    want: Provenance,
    local: Rect,
    global: Rect,
) -> Result<(), String> {
    ensure(
        path.provenance == want && path.local == local && path.global == global,
        || {
            format!(
                "{name}: got {:?} local {} global {}, want {want:?} local {local} global {global}",
                path.provenance, path.local, path.global
            )
        },
    )
}

fn path_rules() -> Check {
    let cfg = PathConfig::default();
    let mut checked = 0;
    for (name, tree) in fixture_trees()? {
        let s = tree.screen;
        for i in 0..64 {
            for j in 0..64 {
                let p = PointPx {
                    x: s.x + (2 * i + 1) * s.w / 128,
                    y: s.y + (2 * j + 1) * s.h / 128,
                };
                let plain = select_target_path(&tree, p).map_err(|e| format!("{name}: {e}"))?;
                path_is_valid(&tree, &plain, p, 0).map_err(|e| format!("{name}: {e}"))?;
                let click = select_path_for_click(&tree, p, cfg.click_expand_px)
                    .map_err(|e| format!("{name}: {e}"))?;
                path_is_valid(&tree, &click, p, cfg.click_expand_px)
                    .map_err(|e| format!("{name}: {e}"))?;
                let region = Rect {
                    x: p.x,
                    y: p.y,
                    w: 1,
                    h: 1,
                }
                .expand(6)
                .clip_to(&s)
                .expect("on screen");
                let input = select_path_for_input_action(&tree, &region, &cfg)
                    .map_err(|e| format!("{name}: {e}"))?;
                path_is_valid(&tree, &input, region.center(), 0)
                    .map_err(|e| format!("{name}: {e}"))?;
                checked += 3;
            }
        }
    }

    let screen = rect(0, 0, 800, 600);
    let det = |r: Rect, kind| ScoredRegion::new(r, kind, 1.0);
    let tree_of = |dets: &[ScoredRegion]| {
        build_tree(screen, dets, &TreeConfig::default()).map_err(|e| e.to_string())
    };
    let (g, l) = (RegionKind::Global, RegionKind::Local);

    let t = tree_of(&[
        det(rect(400, 300, 300, 200), g),
        det(rect(420, 320, 50, 50), l),
    ])?;
    let path = select_target_path(&t, PointPx { x: 600, y: 450 }).map_err(|e| e.to_string())?;
    expect_provenance(
        "global-only point",
        &path,
        Provenance::GlobalAsLocal,
        rect(400, 300, 300, 200),
        screen,
    )?;
    let synth = select_target_path(&t, PointPx { x: 100, y: 100 }).map_err(|e| e.to_string())?;
    expect_provenance(
        "empty point",
        &synth,
        Provenance::Synthesized,
        rect(50, 63, 100, 75),
        screen,
    )?;

    let t = tree_of(&[
        det(rect(0, 0, 400, 600), g),
        det(rect(100, 100, 50, 50), l),
        det(rect(10, 300, 50, 40), l),
    ])?;
    let near =
        select_path_for_click(&t, PointPx { x: 180, y: 125 }, 50).map_err(|e| e.to_string())?;
    expect_provenance(
        "50 px expansion",
        &near,
        Provenance::ClickExpanded,
        rect(100, 100, 50, 50),
        rect(0, 0, 400, 600),
    )?;
    let far =
        select_path_for_click(&t, PointPx { x: 700, y: 320 }, 50).map_err(|e| e.to_string())?;
    expect_provenance(
        "row extension",
        &far,
        Provenance::ClickRowExtended,
        rect(10, 300, 50, 40),
        rect(0, 0, 400, 600),
    )?;
    let inside =
        select_path_for_click(&t, PointPx { x: 120, y: 120 }, 50).map_err(|e| e.to_string())?;
    ensure(
        inside == select_target_path(&t, PointPx { x: 120, y: 120 }).map_err(|e| e.to_string())?,
        || "click inside a local differs from plain selection".into(),
    )?;

    // input rules: local IoU > 0.4, global IoU > 0.1
    let l0 = rect(100, 100, 40, 40);
    let region = rect(100, 100, 40, 24);
    let g1 = rect(100, 125, 40, 15);
    let g2 = rect(70, 70, 100, 70);
    let t = tree_of(&[det(g1, g), det(g2, g), det(l0, l)])?;
    ensure(
        t.parent(t.locals().next().unwrap()).map(|n| n.rect) == Some(g1),
        || "fixture parent is not g1".into(),
    )?;
    let p = select_path_for_input_action(&t, &region, &cfg).map_err(|e| e.to_string())?;
    expect_provenance(
        "input, parent below 0.1",
        &p,
        Provenance::InputOverlap,
        l0,
        g2,
    )?;
    let t = tree_of(&[det(g1, g), det(l0, l)])?;
    let p = select_path_for_input_action(&t, &region, &cfg).map_err(|e| e.to_string())?;
    expect_provenance(
        "input, no global above 0.1",
        &p,
        Provenance::InputOverlap,
        l0,
        g1,
    )?;
    let t = tree_of(&[
        det(rect(0, 0, 400, 400), g),
        det(rect(100, 100, 100, 100), l),
    ])?;
    let p = select_path_for_input_action(&t, &rect(100, 100, 100, 100), &cfg)
        .map_err(|e| e.to_string())?;
    expect_provenance(
        "input, local identical",
        &p,
        Provenance::InputOverlap,
        rect(100, 100, 100, 100),
        rect(0, 0, 400, 400),
    )?;
    // 52x100 overlap: IoU 5200/14800, about 0.35
    let p = select_path_for_input_action(&t, &rect(148, 100, 100, 100), &cfg)
        .map_err(|e| e.to_string())?;
    ensure(p.fallback && p.point == PointPx { x: 198, y: 150 }, || {
        format!("IoU 0.35 input did not fall back: {p:?}")
    })?;
    ensure(
        rect(148, 100, 100, 100).iou::<Exact>(&rect(100, 100, 100, 100)) == Ratio::new(13, 37),
        || "fallback fixture IoU is not 13/37".into(),
    )?;
    Ok(format!("{checked} grid paths, 9 rule fixtures"))
}

fn blend_oracle(fg: u8, bg: u8) -> f64 {
    0.5 * f64::from(fg) + 0.5 * f64::from(bg)
}

fn lens_determinism() -> Check {
    let fx = common::fixtures();
    let shot = image::open(fx.join("screenshot.png"))
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let tree = &fixture_trees()?[1].1;
    let path = select_target_path(tree, PointPx { x: 150, y: 215 }).map_err(|e| e.to_string())?;
    let style = LensStyle::for_screen(shot.width(), shot.height());
    let a = render_lenses(&shot, &path, &style)
        .map_err(|e| e.to_string())?
        .to_png()
        .map_err(|e| e.to_string())?;
    let b = render_lenses(&shot, &path, &style)
        .map_err(|e| e.to_string())?
        .to_png()
        .map_err(|e| e.to_string())?;
    ensure(a == b, || "lens bytes differ between renders".into())?;

    let mut dots = 0;
    for bg in [[255, 255, 255], [0, 0, 0], [10, 200, 60], [33, 150, 243]] {
        let img = image::RgbImage::from_pixel(300, 200, image::Rgb(bg));
        for (global, point) in [
            (rect(0, 0, 300, 200), PointPx { x: 150, y: 100 }),
            (rect(40, 20, 200, 150), PointPx { x: 97, y: 121 }),
        ] {
            let path = TargetPath {
                point,
                local: rect(point.x - 30, point.y - 30, 60, 60),
                global,
                provenance: Provenance::Normal,
                local_node: None,
                global_node: None,
                fallback: false,
            };
            let lenses = render_lenses(&img, &path, &style).map_err(|e| e.to_string())?;
            let c = lenses
                .lens1
                .get_pixel((point.x - global.x) as u32, (point.y - global.y) as u32)
                .0;
            for ch in 0..3 {
                let want = blend_oracle(style.dot_color[ch], bg[ch]);
                ensure((f64::from(c[ch]) - want).abs() <= 1.0, || {
                    format!("dot channel {ch} = {} on {bg:?}, composite {want}", c[ch])
                })?;
            }
            ensure(
                encode_png(&lenses.lens1).ok()
                    == render_lenses(&img, &path, &style)
                        .ok()
                        .and_then(|l| encode_png(&l.lens1).ok()),
                || "solid fixture lens bytes differ".into(),
            )?;
            dots += 1;
        }
    }
    Ok(format!(
        "fixture lenses byte-identical, {dots} dot composites within 1/255"
    ))
}

fn by_id(preds: Vec<Prediction>) -> HashMap<String, Prediction> {
    preds.into_iter().map(|p| (p.id.clone(), p)).collect()
}

fn attempted(summary: &Option<MetricSummary>) -> u64 {
    summary.as_ref().map_or(0, |m| m.counts.attempted as u64)
}

fn harness_calibration() -> Check {
    let start = Instant::now();
    let opts = EvalOptions {
        seed: 7,
        jobs: 4,
        ..EvalOptions::default()
    };
    let (samples, source) = synthetic_benchmark(40, 7);
    let preds = by_id(oracle_predictions(&samples, &source).map_err(|e| e.to_string())?);
    let content = run_content_eval(&samples, &preds, &source, &OracleContentJudge, &opts)
        .map_err(|e| e.to_string())?;
    let layout = run_layout_eval(
        &samples,
        &preds,
        &OracleLayoutJudge {
            tau: opts.relation_deadband,
        },
        &opts,
    );
    let oracle =
        aggregate(content.into_iter().chain(layout).collect()).map_err(|e| e.to_string())?;
    ensure(
        oracle.content_acc == Some(1.0) && oracle.layout_acc == Some(1.0),
        || {
            format!(
                "oracle content {:?}, layout {:?}",
                oracle.content_acc, oracle.layout_acc
            )
        },
    )?;
    ensure(
        attempted(&oracle.content) == 40 && attempted(&oracle.layout) == 40,
        || "oracle attempted counts".into(),
    )?;

    let (samples, source) = synthetic_benchmark(1000, 11);
    let preds = by_id(oracle_predictions(&samples, &source).map_err(|e| e.to_string())?);
    let content = run_content_eval(
        &samples,
        &preds,
        &source,
        &RandomChoiceJudge::content(13),
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let layout = run_layout_eval(&samples, &preds, &RandomChoiceJudge::layout(13), &opts);
    let random =
        aggregate(content.into_iter().chain(layout).collect()).map_err(|e| e.to_string())?;
    let (c, l) = (
        random.content_acc.unwrap_or(-1.0),
        random.layout_acc.unwrap_or(-1.0),
    );
    ensure(
        attempted(&random.content) == 1000 && attempted(&random.layout) == 1000,
        || "random attempted counts".into(),
    )?;
    ensure((0.20..=0.30).contains(&c), || {
        format!("random content accuracy {c}")
    })?;
    ensure((0.07..=0.15).contains(&l), || {
        format!("random layout accuracy {l}")
    })?;
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "oracle 100%/100%, random content {:.1}% layout {:.1}% over 1000",
        c * 100.0,
        l * 100.0
    ))
}

fn relation_enumeration() -> Check {
    let tau = 0.02;
    let reference = rect(400, 400, 100, 100);
    let expected = [
        ((-1, -1), "upper-left"),
        ((0, -1), "upper"),
        ((1, -1), "upper-right"),
        ((-1, 0), "left"),
        ((0, 0), "same"),
        ((1, 0), "right"),
        ((-1, 1), "lower-left"),
        ((0, 1), "lower"),
        ((1, 1), "lower-right"),
    ];
    for ((dx, dy), name) in expected {
        let target = rect(400 + 300 * dx, 400 + 300 * dy, 100, 100);
        let got = ground_truth_relation(&target, &reference, 900, 900, tau);
        ensure(got.name() == name, || {
            format!("offset ({dx}, {dy}) classified {} not {name}", got.name())
        })?;
    }
    ensure(Relation9::ALL.len() == 9, || "relation count".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10_000 {
        let (w, h) = (
            rng.random_range(100..=2000u32),
            rng.random_range(100..=2000u32),
        );
        let mut r = || {
            let rw = rng.random_range(1..=i64::from(w));
            let rh = rng.random_range(1..=i64::from(h));
            rect(
                rng.random_range(0..=i64::from(w) - rw),
                rng.random_range(0..=i64::from(h) - rh),
                rw,
                rh,
            )
        };
        let (a, b) = (r(), r());
        let (ab, ba) = (
            ground_truth_relation(&a, &b, w, h, tau),
            ground_truth_relation(&b, &a, w, h, tau),
        );
        ensure(ab == ba.opposite(), || {
            format!("pair {i}: {a} vs {b} gives {ab} and {ba}")
        })?;
    }
    Ok("9 placements, 10000 swapped pairs".into())
}

fn percent(x: Exact) -> i64 {
    (x * Ratio::from_integer(100)).round().to_integer()
}

fn metrics_arithmetic() -> Check {
    let mut proceed = Vec::new();
    let mut labels = Vec::new();
    for (n, p, l) in [
        (36, false, StepLabel::Incorrect),
        (62, true, StepLabel::Incorrect),
        (9, false, StepLabel::Correct),
        (100, true, StepLabel::Correct),
    ] {
        proceed.extend(std::iter::repeat_n(Some(p), n));
        labels.extend(std::iter::repeat_n(l, n));
    }
    let m = score::<Exact>(&proceed, &labels, None).map_err(|e| e.to_string())?;
    let c = m.confusion;
    ensure((c.tp, c.fn_, c.fp, c.tn) == (36, 62, 9, 100), || {
        format!("confusion {c:?}")
    })?;
    ensure(
        m.correct_recognized == Ratio::new(100, 109) && m.incorrect_detected == Ratio::new(36, 98),
        || {
            format!(
                "rates {} and {}",
                m.correct_recognized, m.incorrect_detected
            )
        },
    )?;
    ensure(
        percent(m.correct_recognized) == 92 && percent(m.incorrect_detected) == 37,
        || "rates do not round to 92/37".into(),
    )?;
    ensure(m.f1 == Ratio::new(72, 143), || format!("f1 {}", m.f1))?;
    let f = score::<f64>(&proceed, &labels, None).map_err(|e| e.to_string())?;
    ensure((f.correct_recognized - 100.0 / 109.0).abs() < 1e-12, || {
        "f64 rate drift".into()
    })?;

    let r = rouge_l::<f64>("the cat sat", "the cat ran fast");
    ensure((r.f - 0.571).abs() <= 0.001, || format!("rouge f {}", r.f))?;
    let exact = rouge_l::<Exact>("the cat sat", "the cat ran fast");
    ensure(exact.f == Ratio::new(4, 7), || {
        format!("exact rouge f {}", exact.f)
    })?;

    let ratings = [
        HumanRating::VeryWell,
        HumanRating::Fair,
        HumanRating::NotWell,
        HumanRating::Awful,
    ]
    .map(map_human_rating);
    ensure(ratings == [100, 66, 33, 0], || {
        format!("ratings {ratings:?}")
    })?;
    Ok(format!(
        "{}%/{}%, rouge F {:.3}, ratings {ratings:?}",
        percent(m.correct_recognized),
        percent(m.incorrect_detected),
        r.f
    ))
}

fn synthetic_trajectories(seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..25)
        .map(|t| {
            let n = rng.random_range(3..=15);
            let steps: Vec<ActionStep> = (0..n)
                .map(|i| ActionStep {
                    index: Some(i),
                    kind: ActionKind::Click,
                    point: Some(PointPx {
                        x: rng.random_range(0..100),
                        y: rng.random_range(0..100),
                    }),
                    region: None,
                    screenshot: format!("t{t}_{i}.png"),
                    detections: None,
                    instruction: String::new(),
                    action_name: format!("step {i}"),
                    // twentieths hit 0.7 itself; roughly one in twelve has no score
                    confidence: (!rng.random_ratio(1, 12))
                        .then(|| f64::from(rng.random_range(0..=20u8)) / 20.0),
                })
                .collect();
            let labels = (0..n)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        StepLabel::Correct
                    } else {
                        StepLabel::Incorrect
                    }
                })
                .collect();
            Trajectory {
                id: format!("t{t}"),
                goal: "synthetic".into(),
                steps,
                labels: Some(labels),
                loop_labels: None,
            }
        })
        .collect()
}

fn confidence_baseline() -> Check {
    let trajs = synthetic_trajectories(6);
    let (mut steps, mut kept, mut skipped) = (0, 0, 0);
    let mut tally = [0u64; 4];
    for t in &trajs {
        let verdicts = baseline_confidence_filter(t, 0.7);
        for ((v, s), l) in verdicts
            .iter()
            .zip(&t.steps)
            .zip(t.labels.as_ref().unwrap())
        {
            let want = s.confidence.map(|c| c > 0.7);
            ensure(v.proceed() == want, || {
                format!(
                    "{} step {}: {:?} for confidence {:?}",
                    t.id,
                    v.index,
                    v.proceed(),
                    s.confidence
                )
            })?;
            steps += 1;
            match want {
                None => skipped += 1,
                Some(p) => {
                    kept += usize::from(p);
                    tally[match (p, l) {
                        (false, StepLabel::Incorrect) => 0,
                        (true, StepLabel::Incorrect) => 1,
                        (false, StepLabel::Correct) => 2,
                        (true, StepLabel::Correct) => 3,
                    }] += 1;
                }
            }
        }
        let proceed: Vec<Option<bool>> = verdicts.iter().map(|v| v.proceed()).collect();
        let m = score::<Exact>(&proceed, t.labels.as_ref().unwrap(), None)
            .map_err(|e| e.to_string())?;
        ensure(m.scored + m.skipped == t.steps.len(), || {
            format!("{}: scored/skipped counts", t.id)
        })?;
    }
    let all_proceed: Vec<Option<bool>> = trajs
        .iter()
        .flat_map(|t| baseline_confidence_filter(t, 0.7))
        .map(|v| v.proceed())
        .collect();
    let all_labels: Vec<StepLabel> = trajs
        .iter()
        .flat_map(|t| t.labels.clone().unwrap())
        .collect();
    let m = score::<Exact>(&all_proceed, &all_labels, None).map_err(|e| e.to_string())?;
    let c = m.confusion;
    ensure([c.tp, c.fn_, c.fp, c.tn] == tally, || {
        format!("pooled confusion {c:?}, hand {tally:?}")
    })?;

    let mut thresholds: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
    thresholds.extend([0.699, 0.7001, 0.3333]);
    thresholds.sort_by(f64::total_cmp);
    for t in &trajs {
        for pair in thresholds.windows(2) {
            let lo = baseline_confidence_filter(t, pair[0]);
            let hi = baseline_confidence_filter(t, pair[1]);
            for (a, b) in lo.iter().zip(&hi) {
                ensure(
                    !(b.proceed() == Some(true) && a.proceed() != Some(true)),
                    || {
                        format!(
                            "{} step {}: proceeds at {} but not at {}",
                            t.id, a.index, pair[1], pair[0]
                        )
                    },
                )?;
            }
        }
    }
    Ok(format!(
        "{steps} steps: {kept} kept, {skipped} unscored; {} thresholds monotone",
        thresholds.len()
    ))
}

fn golden_read() -> Check {
    let mut cases = 0;
    for (flag, file) in common::GOLDEN_SOURCES {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        common::read_golden_case(flag, file, a.path())?;
        common::read_golden_case(flag, file, b.path())?;
        for out in [a.path(), b.path()] {
            if let Some(name) = common::golden_mismatch(file, out) {
                return Err(format!("{name} differs from golden"));
            }
        }
        cases += 1;
    }
    Ok(format!("{cases} sources x 2 runs byte-identical to golden"))
}

fn main() -> ExitCode {
    let criteria: &[Criterion] = &[
        ("iou-oracle-parity", iou_oracle_parity),
        ("tree-parent-oracle", tree_parent_oracle),
        ("ashl-fixtures", ashl_fixtures),
        ("path-totality-and-rules", path_rules),
        ("lens-determinism", lens_determinism),
        ("harness-calibration", harness_calibration),
        ("relation9-enumeration", relation_enumeration),
        ("metrics-arithmetic", metrics_arithmetic),
        ("confidence-baseline", confidence_baseline),
        ("golden-read", golden_read),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {name}: {detail} ({:.2?})", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({:.2?})", start.elapsed());
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
