use fswap_core::{
    read_tensor, swap_video, synth_video, window_plan, write_tensor, DenoiserSpec, PipelineConfig, Shape, SplitMix64,
    SweepGrid, SweepTable, SyntheticSpec, Tensor4,
};
use proptest::prelude::*;

fn tiny_config(window: usize) -> PipelineConfig {
    PipelineConfig {
        steps: 4,
        t1: 2,
        window,
        denoiser: DenoiserSpec {
            dim: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn tiny_spec(frames: usize) -> SyntheticSpec {
    SyntheticSpec {
        frames,
        channels: 1,
        height: 6,
        width: 6,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_frames_follow_the_plan(n in 1usize..=14, window in 2usize..=6) {
        let data = synth_video(&tiny_spec(n)).unwrap();
        let res = swap_video(&data.video, &data.src, &data.tar, &tiny_config(window)).unwrap();
        prop_assert_eq!(res.output.shape().frames, n);
        let plan = window_plan(n, window).unwrap();
        prop_assert_eq!(res.windows.len(), plan.len());
        for (w, r) in res.windows.iter().zip(&plan) {
            prop_assert_eq!((w.start, w.end), (r.start, r.end));
        }
        prop_assert_eq!(res.flow.pairs() + 1, n);
    }

    #[test]
    fn tensor_files_round_trip(b in 1usize..4, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let t = Tensor4::from_fn(Shape::new(b, c, h, w).unwrap(), |_, _, _, _| rng.normal() as f32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        write_tensor(&path, &t).unwrap();
        prop_assert!(read_tensor(&path).unwrap().bit_eq(&t));
    }
}

#[test]
fn sweep_file_round_trip() {
    let grid = SweepGrid {
        rho: vec![0.0, 0.8, 1.0],
        alpha: vec![0.8],
        t1: vec![1, 2],
    };
    let table = fswap_core::sweep(&grid, &tiny_config(3), &tiny_spec(3)).unwrap();
    assert_eq!(table.rows.len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    table.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = SweepTable::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, table.rounded());
}
