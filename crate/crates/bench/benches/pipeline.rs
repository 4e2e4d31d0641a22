use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use signalmine::counting::count_all;
use signalmine::ensemble::BagPlan;
use signalmine::rating::rate_all;
use signalmine::{
    average_precision, bag, generate, CountParams, ExposureModel, GenConfig, RankedList,
    RatingConfig, Scope, BagConfig,
};

fn cohort(n_patients: u64) -> signalmine::synth::Synthetic {
    generate(&GenConfig {
        n_patients,
        seed: 7,
        ..GenConfig::default()
    })
    .expect("generator config is valid")
}

fn bench_count(c: &mut Criterion) {
    let data = cohort(20_000);
    let params = CountParams::uniform(50, 10);
    c.bench_function("count/20k_patients", |b| {
        b.iter(|| count_all(black_box(&data.cohort), &params).unwrap())
    });
}

fn bench_rate(c: &mut Criterion) {
    let data = cohort(20_000);
    let tables = count_all(&data.cohort, &CountParams::uniform(50, 10)).unwrap();
    let scope = Scope::from_cohort(&data.cohort, None);
    for model in [ExposureModel::Occurrence, ExposureModel::Duration] {
        let config = RatingConfig::new(model);
        c.bench_function(&format!("rate_all/{}", model.name()), |b| {
            b.iter(|| rate_all(black_box(&tables), &config, &scope).unwrap())
        });
    }
}

fn bench_bag(c: &mut Criterion) {
    let data = cohort(5_000);
    let scope = Scope::from_cohort(&data.cohort, None);
    let plan = BagPlan {
        m: 10,
        kernel: None,
        first_era_only: false,
        scope: &scope,
    };
    let config = BagConfig {
        k: 8,
        ..BagConfig::default()
    };
    let rating = RatingConfig::new(ExposureModel::Occurrence);
    let mut group = c.benchmark_group("bag");
    group.sample_size(10);
    group.bench_function("5k_patients_k8", |b| {
        b.iter(|| bag(black_box(&data.cohort), &rating, &config, &plan).unwrap())
    });
    group.finish();
}

fn bench_average_precision(c: &mut Criterion) {
    let data = cohort(5_000);
    let entries: Vec<_> = (1..=500u32)
        .flat_map(|d| (1..=40u32).map(move |c| (d, c)))
        .map(|(d, c)| {
            let key = (signalmine::DrugId(d), signalmine::ConditionId(c));
            (key, ((d * 7919 + c * 104_729) % 10_007) as f64)
        })
        .collect();
    c.bench_function("average_precision/20k_pairs", |b| {
        b.iter_batched(
            || entries.clone(),
            |e| average_precision(&RankedList::from_entries(e), &data.truth).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_count, bench_rate, bench_bag, bench_average_precision);
criterion_main!(benches);
