use ltprune::pipeline::{project_and_concat, prune_visual};
use ltprune::segmentation::{segment, stage1_mask};
use ltprune::similarity::{cls_similarity, sort_descending};
use ltprune::{
    run_pipeline, run_stream, EmbeddingMatrix, EvictionBudget, EvictionConfig, PipelineConfig,
    RoleTag, SmoothingMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CURVE: [f64; 6] = [1.0, 0.9, 0.5, 0.2, 0.1, 0.05];

/// One-dimensional visual tokens whose CLS softmax is CURVE / sum(CURVE),
/// shuffled so that original order differs from rank order.
fn curve_fixture() -> (EmbeddingMatrix, EmbeddingMatrix, Vec<usize>) {
    let order = vec![3, 0, 5, 1, 4, 2];
    let rows: Vec<[f32; 1]> = order.iter().map(|&r| [CURVE[r].ln() as f32]).collect();
    let cls = EmbeddingMatrix::new(1, 1, vec![1.0], RoleTag::Cls).unwrap();
    (
        cls,
        EmbeddingMatrix::from_rows(&rows, RoleTag::Visual).unwrap(),
        order,
    )
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, role: RoleTag) -> EmbeddingMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.5f32..1.5))
        .collect();
    EmbeddingMatrix::new(rows, cols, data, role).unwrap()
}

fn no_drop() -> EvictionBudget {
    EvictionBudget::Fixed(EvictionConfig::new(10_000, 0).unwrap())
}

#[test]
fn curve_fixture_identity_mode_keeps_four() {
    let (cls, visual, order) = curve_fixture();
    let text = EmbeddingMatrix::new(2, 1, vec![0.5, -0.5], RoleTag::Text).unwrap();
    let config = PipelineConfig {
        smoothing_mode: SmoothingMode::Identity,
        eviction: no_drop(),
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&cls, &visual, Some(&text), &config).unwrap();
    assert_eq!(report.split.i_star, Some(4));
    assert_eq!(report.counts.visual_after_stage1, 4);
    // ranks 0..4 of CURVE live at these original positions
    let mut expected: Vec<usize> = (0..6).filter(|&p| order[p] < 4).collect();
    expected.sort_unstable();
    assert_eq!(report.stage1_mask.kept(), expected.as_slice());
    assert_eq!(report.counts.total_after_concat(), 6);
    assert_eq!(report.counts.total_after_stage2(), 6);
}

#[test]
fn default_multiply_mode_on_fixture() {
    let (cls, visual, _) = curve_fixture();
    let report = run_pipeline(&cls, &visual, None, &PipelineConfig::default()).unwrap();
    // round(0.24 * 4) = 1
    assert_eq!(report.counts.visual_after_stage1, 1);
    assert_eq!(report.stage1_mask.kept(), &[1]);
}

#[test]
fn matches_module_by_module_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..20 {
        let d_vis = rng.gen_range(2..12);
        let d_txt = rng.gen_range(2..12);
        let n_vis = rng.gen_range(1..80);
        let n_txt = rng.gen_range(1..30);
        let cls = random(&mut rng, 1, d_vis, RoleTag::Cls);
        let visual = random(&mut rng, n_vis, d_vis, RoleTag::Visual);
        let text = random(&mut rng, n_txt, d_txt, RoleTag::Text);
        let projection = random(&mut rng, d_vis, d_txt, RoleTag::Projection);
        let mode = [
            SmoothingMode::Multiply,
            SmoothingMode::Identity,
            SmoothingMode::Expand,
        ][trial % 3];
        let config = PipelineConfig {
            alpha: 0.24,
            smoothing_mode: mode,
            eviction: EvictionBudget::default(),
            projection: Some(projection.clone()),
        };
        let report = run_pipeline(&cls, &visual, Some(&text), &config).unwrap();

        let curve = sort_descending(&cls_similarity(&cls, &visual).unwrap()).unwrap();
        let split = segment(&curve, 0.24, mode).unwrap();
        let mask1 = stage1_mask(&curve, split.kept_count).unwrap();
        let kept = visual.select_rows(mask1.kept()).unwrap();
        let seq = project_and_concat(&kept, Some(&text), Some(&projection)).unwrap();
        let eviction = EvictionBudget::default().resolve(seq.rows()).unwrap();
        let stream = run_stream(&seq, mask1.len(), eviction).unwrap();

        assert_eq!(report.split, split);
        assert_eq!(report.stage1_mask, mask1);
        assert_eq!(report.stage2_mask, stream.mask);
        assert_eq!(report.eviction, stream.state);
        assert_eq!(report.counts.visual_after_stage2, stream.kept_visual());
        assert_eq!(report.counts.text_after_stage2, stream.kept_text());

        let c = report.counts;
        assert!(c.visual_after_stage1 <= c.visual_in);
        assert!(c.total_after_stage2() <= c.total_after_concat());
        assert_eq!(report.stage1_mask.total(), n_vis);
        assert_eq!(report.stage2_mask.total(), c.visual_after_stage1 + n_txt);
        let ratio = c.compression_ratio();
        assert!(ratio > 0.0 && ratio <= 1.0);
        // surviving tokens stay in original relative order
        let vis = report.surviving_visual();
        assert!(vis.windows(2).all(|w| w[0] < w[1]));
        assert!(vis.iter().all(|i| report.stage1_mask.contains(*i)));
        let txt = report.surviving_text();
        assert!(txt.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(txt.len(), c.text_after_stage2);
    }
}

#[test]
fn identity_projection_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cls = random(&mut rng, 1, 6, RoleTag::Cls);
    let visual = random(&mut rng, 30, 6, RoleTag::Visual);
    let text = random(&mut rng, 5, 6, RoleTag::Text);
    let (_, mask) = prune_visual(&cls, &visual, 1.0, SmoothingMode::Identity).unwrap();
    let kept = visual.select_rows(mask.kept()).unwrap();
    let id = EmbeddingMatrix::identity(6, RoleTag::Projection).unwrap();
    let seq = project_and_concat(&kept, Some(&text), Some(&id)).unwrap();
    for r in 0..kept.rows() {
        let a: Vec<u32> = seq.row(r).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = kept.row(r).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    let base = PipelineConfig::default();
    let with_id = PipelineConfig {
        projection: Some(id),
        ..PipelineConfig::default()
    };
    let a = run_pipeline(&cls, &visual, Some(&text), &base).unwrap();
    let b = run_pipeline(&cls, &visual, Some(&text), &with_id).unwrap();
    assert_eq!(a.stage2_mask, b.stage2_mask);
    assert_eq!(a.eviction, b.eviction);
}

#[test]
fn large_budget_isolates_stage_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cls = random(&mut rng, 1, 8, RoleTag::Cls);
    let visual = random(&mut rng, 576, 8, RoleTag::Visual);
    let text = random(&mut rng, 60, 8, RoleTag::Text);
    let config = PipelineConfig {
        smoothing_mode: SmoothingMode::Identity,
        eviction: no_drop(),
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&cls, &visual, Some(&text), &config).unwrap();
    let c = report.counts;
    assert_eq!(c.total_after_stage2(), c.total_after_concat());
    assert_eq!(c.text_after_stage2, 60);
    let (split, mask) = prune_visual(&cls, &visual, 0.24, SmoothingMode::Identity).unwrap();
    assert_eq!(report.stage1_mask, mask);
    assert_eq!(c.visual_after_stage1, split.i_star.unwrap());
}

#[test]
fn empty_text_and_single_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cls = random(&mut rng, 1, 4, RoleTag::Cls);
    let visual = random(&mut rng, 20, 4, RoleTag::Visual);
    let report = run_pipeline(&cls, &visual, None, &PipelineConfig::default()).unwrap();
    assert_eq!(report.counts.text_in, 0);
    assert_eq!(report.counts.text_after_stage2, 0);

    let one = random(&mut rng, 1, 4, RoleTag::Visual);
    let report = run_pipeline(&cls, &one, None, &PipelineConfig::default()).unwrap();
    assert_eq!(report.counts.total_after_stage2(), 1);
    assert_eq!(report.counts.compression_ratio(), 1.0);
}

#[test]
fn dimension_errors_propagate() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cls = random(&mut rng, 1, 4, RoleTag::Cls);
    let visual = random(&mut rng, 10, 4, RoleTag::Visual);
    let text = random(&mut rng, 3, 5, RoleTag::Text);
    let bad_cls = random(&mut rng, 1, 3, RoleTag::Cls);
    assert!(run_pipeline(&bad_cls, &visual, None, &PipelineConfig::default()).is_err());
    assert!(run_pipeline(&cls, &visual, Some(&text), &PipelineConfig::default()).is_err());
    let bad_alpha = PipelineConfig {
        alpha: 0.0,
        ..PipelineConfig::default()
    };
    assert!(run_pipeline(&cls, &visual, None, &bad_alpha).is_err());
}
