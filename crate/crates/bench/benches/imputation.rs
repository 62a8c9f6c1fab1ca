use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use longimpute::impute::{
    fcs_impute, impute_series_dataset, jm_impute, EwmaWeighting, FcsConfig, FcsKernel, JmConfig, JmLevel, SeriesMethod,
};
use longimpute::predict::forest::RfParams;
use longimpute::predict::gbt::GbtParams;
use longimpute::predict::svr::SvrParams;
use longimpute::predict::{fit_gbt, fit_knn, fit_rf, fit_svr, Model};
use longimpute_bench::{design, incomplete_cohort};

fn series(c: &mut Criterion) {
    let d = incomplete_cohort(300, 1);
    let mut g = c.benchmark_group("series");
    for (name, method) in [
        ("linear", SeriesMethod::Linear),
        ("spline", SeriesMethod::Spline),
        ("locf", SeriesMethod::Locf),
        ("ewma", SeriesMethod::Ewma),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| impute_series_dataset(&d, method, 4, EwmaWeighting::Index, 0).unwrap())
        });
    }
    g.finish();
}

fn chained(c: &mut Criterion) {
    let d = incomplete_cohort(100, 2);
    let mut g = c.benchmark_group("chained");
    g.sample_size(10);
    for kernel in [FcsKernel::Pmm, FcsKernel::Cart, FcsKernel::Lg] {
        let cfg = FcsConfig {
            m: 1,
            n_cycles: 3,
            ..FcsConfig::new(kernel)
        };
        g.bench_with_input(BenchmarkId::from_parameter(kernel.id()), &cfg, |b, cfg| {
            b.iter(|| fcs_impute(&d, cfg).unwrap())
        });
    }
    g.finish();
}

fn joint(c: &mut Criterion) {
    let d = incomplete_cohort(100, 3);
    let mut g = c.benchmark_group("joint");
    g.sample_size(10);
    for level in [JmLevel::Single, JmLevel::Clustered] {
        let cfg = JmConfig {
            n_burn: 50,
            n_between: 10,
            m: 2,
            ..JmConfig::new(level)
        };
        g.bench_with_input(BenchmarkId::from_parameter(level.id()), &cfg, |b, cfg| {
            b.iter(|| jm_impute(&d, cfg).unwrap())
        });
    }
    g.finish();
}

fn predictors(c: &mut Criterion) {
    let m = design(150, 4);
    let mut g = c.benchmark_group("predictors");
    g.sample_size(10);
    g.bench_function("knn_predict", |b| {
        let knn = fit_knn(&m, 5).unwrap();
        b.iter(|| knn.predict(&m.x))
    });
    let gbt = GbtParams {
        n_rounds: 50,
        learning_rate: 0.1,
        max_leaves: 31,
        n_bins: 255,
        min_leaf: 20,
    };
    g.bench_function("gbt_fit", |b| b.iter(|| fit_gbt(&m, &gbt, 0).unwrap()));
    let rf = RfParams {
        n_trees: 20,
        min_leaf: 5,
        max_features: 4,
        n_bins: 255,
        bootstrap: true,
    };
    g.bench_function("rf_fit", |b| b.iter(|| fit_rf(&m, &rf, 0).unwrap()));
    let svr = SvrParams {
        c: 1.0,
        epsilon: 0.1,
        gamma: 0.1,
        tol: 1e-3,
        max_passes: 50,
        max_train_rows: 1000,
    };
    g.bench_function("svr_fit", |b| b.iter(|| fit_svr(&m, &svr, 0).unwrap()));
    g.finish();
}

criterion_group!(benches, series, chained, joint, predictors);
criterion_main!(benches);
