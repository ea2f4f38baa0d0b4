use steinkit::empirical::SampleBatch;
use steinkit::harness::{
    emit_report, rate_report, read_report, render_report, run_experiment, run_experiment_detailed, sort_rows,
    BoundKind, ExperimentSpec, Format, Model, ReportRow, CSV_HEADER,
};
use steinkit::Error;

fn fbm(h: f64, n: usize, samples: usize, seed: u64) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(Model::Fbm)
        .with("hurst", h)
        .unwrap()
        .with("n", n)
        .unwrap();
    s.n_samples = samples;
    s.seed = seed;
    s
}

fn small_rows() -> Vec<ReportRow> {
    let mut runs = ExperimentSpec::parse("model = runs2\nm = 6\nmode = enumerate\nseed = 4\n").unwrap();
    runs.n_samples = 1;
    let mut er = ExperimentSpec::parse("model = er\nn = 12\np = 0.4\nn_samples = 20000\nseed = 5\n").unwrap();
    er.replicas = 8;
    let mut rgg = ExperimentSpec::parse(
        "model = rgg\nt = 30\nr = 0.15\nouter = 30\ninner = 10\npilot = 3000\nn_samples = 3000\nseed = 6\n",
    )
    .unwrap();
    rgg.replicas = 8;
    [fbm(0.4, 32, 20_000, 3), runs, er, rgg]
        .iter()
        .map(|s| run_experiment(s).unwrap())
        .collect()
}

#[test]
fn ratio_column_is_distance_over_bound() {
    for row in small_rows() {
        assert!(row.ratio >= 0.0 && row.bound_value >= 0.0);
        assert_eq!(row.ratio, row.ks_uniform / row.bound_value, "{}", row.experiment_id);
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let render = || {
        let rows = small_rows();
        render_report(&rows, Format::Csv).unwrap() + &render_report(&rows, Format::Json).unwrap()
    };
    let texts: Vec<String> = [1, 3]
        .iter()
        .map(|&t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(render)
        })
        .collect();
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn enumerated_rows_have_exact_tails() {
    let spec = ExperimentSpec::parse("model = two_runs\nm = 4\nmode = enumerate\n").unwrap();
    let out = run_experiment_detailed(&spec).unwrap();
    assert_eq!(out.row.n_samples, 32);
    assert_eq!(out.row.bound_kind, BoundKind::PoincareRademacher);
    assert!(out.row.tails().iter().all(|t| t.2.is_none()));
    assert_eq!(out.details["terms"]["exact"], true);
}

#[test]
fn config_file_to_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "# fbm run\nmodel = fbm\nhurst = 0.6\nn = 24\nn_samples = 5000\nseed = 9\nweights_k = 1,3\n",
    )
    .unwrap();
    let spec = ExperimentSpec::from_file(&cfg).unwrap();
    let row = run_experiment(&spec).unwrap();
    assert!(row.ks_w1.is_some() && row.ks_w2.is_none() && row.ks_w3.is_some());
    for (name, fmt) in [("r.csv", Format::Csv), ("r.json", Format::Json)] {
        let path = dir.path().join(name);
        emit_report(std::slice::from_ref(&row), fmt, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), vec![row.clone()]);
    }
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
}

#[test]
fn custom_model_reads_a_sample_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.txt");
    let values: Vec<f64> = (0..999)
        .map(|i| steinkit::stein::phi((i as f64 - 499.0) / 150.0) * 2.0 - 1.0)
        .collect();
    SampleBatch::new(values, 1, "custom").unwrap().write(&path).unwrap();
    let spec = ExperimentSpec::new(Model::Custom)
        .with("samples_path", path.display())
        .unwrap()
        .with("bound_kind", "norm_ratio")
        .unwrap()
        .with("bound_value", 0.5)
        .unwrap();
    let row = run_experiment(&spec).unwrap();
    assert_eq!(row.n_samples, 999);
    assert_eq!(row.bound_kind, BoundKind::NormRatio);
    assert_eq!(row.ratio, row.ks_uniform / 0.5);
}

#[test]
fn rate_report_needs_three_sizes() {
    let rows: Vec<ReportRow> = [16, 32]
        .iter()
        .map(|&n| run_experiment(&fbm(0.5, n, 2000, 1)).unwrap())
        .collect();
    assert!(matches!(rate_report(&rows, -0.5), Err(Error::Domain(_))));
}

#[test]
fn rows_sort_by_model_then_size() {
    let mut rows: Vec<ReportRow> = [64, 8, 16]
        .iter()
        .map(|&n| run_experiment(&fbm(0.5, n, 500, 2)).unwrap())
        .collect();
    rows.insert(1, small_rows().remove(1));
    sort_rows(&mut rows);
    let sizes: Vec<_> = rows.iter().map(|r| (r.model, r.size())).collect();
    assert_eq!(
        sizes,
        vec![
            (Model::Fbm, Some(8.0)),
            (Model::Fbm, Some(16.0)),
            (Model::Fbm, Some(64.0)),
            (Model::TwoRuns, Some(6.0))
        ]
    );
}

#[test]
fn bad_configs_are_rejected() {
    assert!(matches!(ExperimentSpec::parse("n = 3\n"), Err(Error::Config { .. })));
    assert!(matches!(
        ExperimentSpec::parse("model = nope\n"),
        Err(Error::Config { .. })
    ));
    let spec = ExperimentSpec::parse("model = fbm\nhurst = 0.9\nn = 8\nn_samples = 100\n").unwrap();
    assert!(run_experiment(&spec).is_ok());
    let spec = ExperimentSpec::parse("model = two_runs\nm = 4\nmode = sometimes\n").unwrap();
    match run_experiment(&spec) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "mode"),
        other => panic!("unexpected {other:?}"),
    }
}
