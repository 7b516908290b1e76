//! Sequential versus rayon-parallel timings of the data-parallel sections.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pvsnet::embedder::{build_fe, Embedding, FeConfig};
use pvsnet::eval::{evaluate, Labeled};
use pvsnet::par;
use pvsnet::synth::{build_dataset, DatasetSpec, Distribution};
use pvsnet::transforms::{irt, stack_channels, tcm, IrtParams, MultiChannelImage};
use pvsnet::triplet::{build_batch, BatchConfig, MiningConfig, TripletData};
use pvsnet::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn in_mode<R>(parallel: bool, f: impl FnOnce() -> R) -> R {
    let prev = par::set_parallel(parallel);
    let r = f();
    par::set_parallel(prev);
    r
}

fn bench_dataset(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_dataset_20x4_64");
    let spec = DatasetSpec::new(20, 4, 64, 0, Distribution::A);
    for (name, on) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| in_mode(on, || build_dataset(&spec).unwrap())));
    }
    g.finish();
}

fn bench_irt(c: &mut Criterion) {
    let mut g = c.benchmark_group("irt_64_20000_rays");
    let d = build_dataset(&DatasetSpec::new(1, 2, 64, 0, Distribution::A)).unwrap();
    let t = tcm(&d.images[0]).unwrap();
    let p = IrtParams::default();
    for (name, on) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| in_mode(on, || irt(&t, &p).unwrap())));
    }
    g.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate_200x3x3_128d");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut set = || -> Vec<Labeled> {
        (0..200u32)
            .flat_map(|s| [s; 3])
            .map(|s| {
                let v: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
                Labeled { subject: s, embedding: Embedding::normalized(&v).unwrap() }
            })
            .collect()
    };
    let (gal, probe) = (set(), set());
    for (name, on) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| in_mode(on, || evaluate(&gal, &probe).unwrap())));
    }
    g.finish();
}

fn bench_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("triplet_batch_desk_fe");
    g.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut plane = || Image::new(64, 64, (0..64 * 64).map(|_| rng.random::<f32>()).collect()).unwrap();
    let subjects: Vec<u32> = (0..8).flat_map(|s| [s; 4]).collect();
    let inputs: Vec<MultiChannelImage> = subjects.iter().map(|_| stack_channels(plane(), plane(), plane()).unwrap()).collect();
    let data = TripletData::without_augmentation(inputs, subjects).unwrap();
    let fe = build_fe(FeConfig::desk(), 0).unwrap();
    let cfg = BatchConfig { batch_size: 16, mining: MiningConfig { subset_size: 8, k: 1 } };
    for (name, on) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| in_mode(on, || build_batch(&data, &fe, 0.3, &cfg, 5).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, bench_dataset, bench_irt, bench_scoring, bench_batch);
criterion_main!(benches);
