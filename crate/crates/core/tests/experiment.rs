use holotrain::experiment::*;
use holotrain::model::*;
use holotrain::training::Scheme;

fn small(n: usize, n_psi: usize, n_mu: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::profile(Profile::Desk);
    c.system = SystemConfig::with_elements(n);
    c.n_psi = n_psi;
    c.n_mu = n_mu;
    c.layers = n_psi.ilog2() as usize;
    c
}

fn collect(config: &ExperimentConfig, books: &CodebookSet, workers: usize) -> Vec<ExperimentRecord> {
    let mut out = Vec::new();
    run_experiment(config, books, Some(workers), |r| {
        out.push(r);
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn grid_users_get_the_same_cells_from_proposed_and_exhaustive() {
    let mut c = ExperimentConfig::profile(Profile::Desk);
    c.trials = 1;
    c.users = vec![3];
    c.scenario = Scenario::GridCenters;
    c.snr_db = vec![f64::INFINITY];
    c.schemes = vec![Scheme::Proposed, Scheme::Exhaustive];
    let array = ArrayModel::new(c.system.clone()).unwrap();
    let books = CodebookSet::generate(&c, &array).unwrap();
    let records = collect(&c, &books, 1);
    assert_eq!(records.len(), 1);
    let [p, e] = [&records[0].outcomes[0], &records[0].outcomes[1]];
    assert_eq!((p.scheme, e.scheme), (Scheme::Proposed, Scheme::Exhaustive));
    let cells = |o: &SchemeOutcome| -> Vec<_> { o.transcript.users.iter().map(|u| (u.angle_index, u.distance_index)).collect() };
    assert_eq!(cells(p), cells(e));
    assert!(p.errors.iter().all(|&x| x < 1e-20));
}

#[test]
fn full_grid_reproduces_the_overhead_table() {
    // A small array keeps synthesis cheap; slot counts depend only on the grid.
    let mut c = small(16, 64, 10);
    c.trials = 1;
    c.users = vec![10];
    c.snr_db = vec![20.0];
    c.sweeps.max_sweeps = 1;
    let array = ArrayModel::new(c.system.clone()).unwrap();
    let books = CodebookSet::generate(&c, &array).unwrap();
    let records = collect(&c, &books, 1);
    let slots: Vec<(Scheme, usize)> = records[0].outcomes.iter().map(|o| (o.scheme, o.slots)).collect();
    assert_eq!(
        slots,
        vec![
            (Scheme::TwoStage, 106),
            (Scheme::DftDistance, 364),
            (Scheme::Exhaustive, 640),
            (Scheme::FarField, 6),
            (Scheme::Proposed, 16),
        ]
    );
}

#[test]
fn schemes_share_placements_and_records_are_reproducible() {
    let mut c = small(32, 8, 2);
    c.trials = 4;
    c.users = vec![1, 3];
    c.snr_db = vec![0.0, 20.0];
    let array = ArrayModel::new(c.system.clone()).unwrap();
    let books = CodebookSet::generate(&c, &array).unwrap();
    let first = collect(&c, &books, 1);
    assert_eq!(first, collect(&c, &books, 2));
    assert_eq!(first.len(), 8);
    for r in &first {
        assert_eq!(r.outcomes.len(), 2 * Scheme::ALL.len());
        assert_eq!(r.placements.len(), r.users);
        for o in &r.outcomes {
            assert_eq!(o.transcript.users.len(), r.users);
            assert!(o.throughput <= o.sum_rate);
            assert!(o.errors.iter().all(|e| *e >= 0.0));
        }
    }
}

#[test]
fn aggregation_examples() {
    let mut c = small(32, 8, 2);
    c.trials = 1;
    c.users = vec![2];
    c.snr_db = vec![10.0];
    c.schemes = vec![Scheme::Proposed];
    let array = ArrayModel::new(c.system.clone()).unwrap();
    let books = CodebookSet::generate(&c, &array).unwrap();
    let records = collect(&c, &books, 1);

    let one = aggregate(&records).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].error_mean, records[0].outcomes[0].mean_error);
    assert_eq!(one[0].rate_mean, records[0].outcomes[0].sum_rate);
    assert_eq!(one[0].trials, 1);

    let twice = [records[0].clone(), records[0].clone()];
    let rows = aggregate(&twice).unwrap();
    assert_eq!((rows[0].error_std, rows[0].rate_std, rows[0].throughput_std), (0.0, 0.0, 0.0));
    assert!(aggregate(&[]).is_err());
}

#[test]
fn codebooks_round_trip_through_a_directory() {
    let c = small(16, 8, 2);
    let array = ArrayModel::new(c.system.clone()).unwrap();
    let books = CodebookSet::generate(&c, &array).unwrap();
    let dir = std::env::temp_dir().join(format!("holotrain-books-{}", std::process::id()));
    let paths = books.save(&dir).unwrap();
    assert_eq!(paths.len(), 4);
    assert_eq!(CodebookSet::load(&dir, &c).unwrap(), books);

    let mut other = c.clone();
    other.system.loss_per_m = 3.0;
    assert!(matches!(CodebookSet::load(&dir, &other), Err(holotrain::Error::ConfigMismatch { .. })));
    std::fs::remove_file(&paths[1]).unwrap();
    assert!(matches!(CodebookSet::load(&dir, &c), Err(holotrain::Error::MissingCodebook(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn scenario_distances_stay_in_range() {
    let grid = ExperimentConfig::profile(Profile::Desk).grid().unwrap();
    let mut rng = holotrain::training::substream("ranges", &[0]);
    for (scenario, lo, hi) in [(Scenario::Near, 3.0, 20.0), (Scenario::Far, 80.0, 150.0), (Scenario::Hybrid, 3.0, 150.0)] {
        for u in sample_users(scenario, 200, &grid, &mut rng).unwrap() {
            let r = (1.0 - u.position.psi.powi(2)) / u.position.mu;
            assert!(r >= lo - 1e-9 && r <= hi + 1e-9, "{scenario:?}: r = {r}");
        }
    }
    assert!(sample_users(Scenario::GridCenters, 161, &grid, &mut rng).is_err());
}
