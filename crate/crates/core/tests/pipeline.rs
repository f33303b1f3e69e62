use lifp_core::dit::{denoise_chunked, DitModel, ModelConfig, NoiseSchedule};
use lifp_core::latent_io::{
    generate_synthetic, read_latent, read_prune_map, write_latent, write_prune_map, LatentVideo, MotionKind,
};
use lifp_core::pruning::{compute_prune_map, prune_stats, prune_tokens, restore_tokens, PruneConfig};
use lifp_core::SynthConfig;

fn video(rho: f64, seed: u64) -> LatentVideo {
    generate_synthetic(&SynthConfig { redundancy: rho, motion: MotionKind::ExactDuplicates, seed, ..SynthConfig::default() })
        .unwrap()
}

#[test]
fn files_survive_the_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(0.31, 4);
    let map = compute_prune_map(&v, &PruneConfig::default()).unwrap();
    write_latent(&v, dir.path().join("v.lifp")).unwrap();
    write_prune_map(&map, dir.path().join("v.lifm")).unwrap();
    assert_eq!(read_latent(dir.path().join("v.lifp")).unwrap(), v);
    assert_eq!(read_prune_map(dir.path().join("v.lifm")).unwrap(), map);
}

#[test]
fn full_duplication_prunes_every_later_frame() {
    let v = video(1.0, 9);
    let map = compute_prune_map(&v, &PruneConfig::default()).unwrap();
    let stats = prune_stats(&map);
    assert_eq!(stats.kept_tokens, v.grid().sites());
    assert_eq!(stats.per_frame_kept[1..].iter().sum::<usize>(), 0);
}

#[test]
fn restore_of_prune_is_identity_on_duplicates() {
    for seed in 0..5 {
        let v = video(0.5, seed);
        let map = compute_prune_map(&v, &PruneConfig::default()).unwrap();
        let tokens = v.to_tokens::<f64>();
        assert_eq!(restore_tokens(&prune_tokens(&tokens, &map).unwrap(), &map).unwrap(), tokens);
    }
}

#[test]
fn denoise_output_is_full_size_in_both_precisions() {
    let v = video(0.31, 2);
    let map = compute_prune_map(&v, &PruneConfig::default()).unwrap();
    let cfg = ModelConfig::default();
    let sched = NoiseSchedule::for_config(&cfg).unwrap();
    let m64: DitModel<f64> = DitModel::new(&cfg, v.token_dim()).unwrap();
    let m32: DitModel<f32> = DitModel::new(&cfg, v.token_dim()).unwrap();
    let a = denoise_chunked(&m64, &v, &sched, Some(&map)).unwrap();
    let b = denoise_chunked(&m32, &v, &sched, Some(&map)).unwrap();
    assert_eq!(a.grid.values.rows(), v.grid().total());
    assert_eq!(b.grid.values.rows(), v.grid().total());
    assert!(a.grid.values.all_finite() && b.grid.values.all_finite());
    let back = LatentVideo::from_tokens(&a.grid, v.channels(), v.patch_size()).unwrap();
    assert_eq!(back.grid(), v.grid());
}
