use std::fs;
use std::path::Path;

use ctpack_core::layout::parse_layout;
use ctpack_core::segmentation::{find_peaks, histogram, PeakParams};
use ctpack_core::synth::{
    generate, load_truth, score_boxes, GroundTruth, Renderer, SceneSpec, SynthError, LAYOUT_FILE, SLICE_DIR,
};
use ctpack_core::volume_io::{Box3, SliceStack};
use ctpack_core::ObjectBox;

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec::stacked([200, 180, 120], 1, (2, 3), seed)
}

#[test]
fn generation_is_deterministic_and_readable() {
    let spec = small_spec(5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = generate(&spec, a.path()).unwrap();
    let tb = generate(&spec, b.path()).unwrap();
    assert_eq!(ta, tb);
    let sa = SliceStack::open(a.path().join(SLICE_DIR)).unwrap();
    let sb = SliceStack::open(b.path().join(SLICE_DIR)).unwrap();
    assert_eq!(sa.depth(), 120);
    assert_eq!((sa.width, sa.height), (200, 180));
    assert_eq!(sa.voxel_pitch_um, Some(spec.voxel_pitch_um));
    let renderer = Renderer::new(&spec).unwrap();
    assert_eq!(sa.read_slice(1).unwrap().image(), &renderer.slice(0));
    for k in [1, 37, 120] {
        assert_eq!(sa.read_slice(k).unwrap().image(), sb.read_slice(k).unwrap().image());
    }
    assert_eq!(load_truth(&a.path().join(GroundTruth::FILE_NAME)).unwrap(), ta);

    let mut other = spec.clone();
    other.seed = 6;
    assert_ne!(Renderer::new(&other).unwrap().slice(60), renderer.slice(60));
}

#[test]
fn layout_and_truth_list_every_object() {
    let spec = SceneSpec::stacked([220, 220, 150], 3, (3, 4), 2);
    assert_eq!(spec.object_count(), 30);
    let dir = tempfile::tempdir().unwrap();
    let truth = generate(&spec, dir.path()).unwrap();
    let layout = parse_layout(&fs::read_to_string(dir.path().join(LAYOUT_FILE)).unwrap()).unwrap();
    let ids = layout.identifiers();
    assert_eq!(ids.len(), 30);
    assert_eq!(truth.objects.len(), 30);
    for (o, id) in truth.objects.iter().zip(&ids) {
        assert_eq!(o.id, *id);
        assert!(o.voxels > 0);
        assert!(o.cell_contains(o.centroid), "{} centroid outside its cell", o.id);
        assert!(o.extent.z.0 >= o.z_range.0 && o.extent.z.1 <= o.z_range.1);
    }
    assert!(layout.warnings().is_empty(), "{:?}", layout.warnings());
    assert_eq!(truth.gap_centers.len(), 2);
}

#[test]
fn zero_noise_dividers_sit_exactly_at_their_mean() {
    let mut spec = small_spec(9);
    spec.global_rotation_deg = 0.0;
    spec.tiers[0].twist_deg = 0.0;
    spec.air.sigma = 0.0;
    spec.divider.sigma = 0.0;
    spec.object.sigma = 0.0;
    spec.intensity_offset = 777;
    let r = Renderer::new(&spec).unwrap();
    let t = &spec.tiers[0];
    let slice = r.slice((t.z_range.0 + t.z_range.1) / 2);
    let (cx, cy) = spec.package_center;
    let (pw, ph) = spec.package_size;
    let want = (spec.divider.mean + 777.0) as u16;
    let y0 = (cy - ph / 2.0) as usize;
    let y1 = (cy + ph / 2.0) as usize;
    let mut checked = 0;
    for k in 0..=t.n_cols {
        let x = (cx - pw / 2.0 + k as f64 * pw / t.n_cols as f64).floor() as usize;
        for y in y0..y1 {
            assert_eq!(slice.get(x, y), want, "line {k} at ({x},{y})");
            checked += 1;
        }
    }
    assert!(checked > 300);
    assert_eq!(slice.get(1, 1), (spec.air.mean + 777.0) as u16);
}

#[test]
fn histogram_shows_three_ordered_modes() {
    let mut spec = SceneSpec::stacked([200, 200, 160], 1, (2, 2), 4);
    spec.divider_thickness = 10.0;
    let dir = tempfile::tempdir().unwrap();
    generate(&spec, dir.path()).unwrap();
    let stack = SliceStack::open(dir.path().join(SLICE_DIR)).unwrap();
    let mut values = Vec::new();
    for k in 1..=stack.depth() {
        values.extend(stack.read_slice(k).unwrap().data.iter().map(|&v| v as f64));
    }
    let h = histogram(&values, 500);
    let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let peaks = find_peaks(&counts, PeakParams { min_width: 0.0, rel_prominence: 0.01 });
    let mut top: Vec<_> = peaks.clone();
    top.sort_by(|a, b| b.height.total_cmp(&a.height));
    top.truncate(3);
    assert_eq!(top.len(), 3, "{peaks:?}");
    let centers = h.bin_centers();
    let classes = [spec.air, spec.divider, spec.object];
    // descending height is air, divider, object
    for (p, c) in top.iter().zip(classes) {
        let at = centers[p.index];
        assert!((at - c.mean).abs() <= c.sigma, "mode at {at}, class mean {}", c.mean);
    }
}

fn padded(e: &Box3, pad: usize) -> Box3 {
    Box3::new(
        (e.x.0.saturating_sub(pad), e.x.1 + pad),
        (e.y.0.saturating_sub(pad), e.y.1 + pad),
        (e.z.0.saturating_sub(pad), e.z.1 + pad),
    )
}

fn boxes_from_truth(truth: &GroundTruth, ids: &[String]) -> Vec<ObjectBox> {
    let proto = ctpack_core::segmentation::BoxProvenance {
        alignment: truth.alignment,
        tier_rotation_deg: 0.0,
        xy_scale: (1.0, 1.0),
        z_factor: 1,
        pad: 3,
        cell: ((0.0, 0.0), (0.0, 0.0)),
        slab: ctpack_core::TierSlab { z_start: 0, z_stop: 1 },
    };
    truth
        .objects
        .iter()
        .zip(ids)
        .map(|(o, id)| ObjectBox {
            id: id.clone(),
            tier: o.tier,
            row: o.row,
            col: o.col,
            bounds: padded(&o.extent, 3),
            unpadded: o.extent,
            provenance: proto.clone(),
        })
        .collect()
}

fn small_truth(dir: &Path) -> GroundTruth {
    generate(&small_spec(3), dir).unwrap()
}

#[test]
fn padded_truth_extents_score_full_recall() {
    let dir = tempfile::tempdir().unwrap();
    let truth = small_truth(dir.path());
    let ids: Vec<String> = truth.objects.iter().map(|o| o.id.clone()).collect();
    let report = score_boxes(&truth, &boxes_from_truth(&truth, &ids)).unwrap();
    assert_eq!(report.recall, 1.0);
    assert!(report.failures().is_empty());
    assert!(report.missing.is_empty());
    assert!(report.boxes.iter().all(|b| b.volume_ratio > 1.0));

    // rotate identifiers by one: every box now belongs to someone else
    let mut shuffled = ids.clone();
    shuffled.rotate_left(1);
    let report = score_boxes(&truth, &boxes_from_truth(&truth, &shuffled)).unwrap();
    assert_eq!(report.recall, 0.0);
    assert_eq!(report.failures().len(), ids.len());

    let mut unknown = ids.clone();
    unknown[0] = "NOPE".into();
    assert!(matches!(
        score_boxes(&truth, &boxes_from_truth(&truth, &unknown)),
        Err(SynthError::UnknownIdentifier(id)) if id == "NOPE"
    ));

    let report = score_boxes(&truth, &boxes_from_truth(&truth, &ids)[1..]).unwrap();
    assert_eq!(report.missing, vec![ids[0].clone()]);
    assert!(report.recall < 1.0);
}

#[test]
fn invalid_spec_writes_nothing() {
    let mut spec = small_spec(1);
    spec.object.mean = spec.divider.mean;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    assert!(matches!(generate(&spec, &out), Err(SynthError::SpecInvalid(_))));
    assert!(!out.exists());
}
