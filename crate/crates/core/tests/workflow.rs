//! End-to-end use of the public API across modules.

use edgescale::device_world::{generate_fleet, Fleet, FleetConfig};
use edgescale::harness::{load_report, run_and_export, Approach, Scenario, StageOneSource, DEVICES_CSV_HEADER};
use edgescale::learn_to_optimize::{
    build_lambda_grid, infer_design, train_method2, OptimizerHyper, OptimizerNetwork, OptimizerTrainingSet,
};
use edgescale::proxy_reuse::{match_proxy, MatchSettings, ProxyEntry, ProxyPool};
use edgescale::surrogate::{train_proxy_predictors, PredictorHyper, TrainingSettings};
use edgescale::{DesignSpace, MeasurementLedger, Oracle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_hyper() -> PredictorHyper {
    PredictorHyper {
        hidden: vec![16],
        training: TrainingSettings {
            epochs: 60,
            ..TrainingSettings::default()
        },
    }
}

fn small_fleet() -> Fleet {
    let cfg = FleetConfig {
        training_real: 3,
        synthetic: 2,
        holdout_monotone: 3,
        holdout_adversarial: 1,
        holdout_synthetic: 3,
        ..FleetConfig::default()
    };
    generate_fleet(&cfg, &mut ChaCha8Rng::seed_from_u64(11))
}

#[test]
fn pool_round_trip_keeps_match_decisions() {
    let space = DesignSpace::reduced();
    let fleet = small_fleet();
    let ledger = MeasurementLedger::new();
    let oracle = Oracle::new(&space, &ledger);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (set, _) = train_proxy_predictors(&space, &fleet.proxy, 80, &oracle, &quick_hyper(), &mut rng).unwrap();
    let pool = ProxyPool::new(vec![ProxyEntry::new(fleet.proxy.clone(), set, 0.001)]);

    let dir = tempfile::tempdir().unwrap();
    pool.save_dir(dir.path()).unwrap();
    let loaded = ProxyPool::load_dir(dir.path(), 0.001).unwrap();
    assert_eq!(loaded, pool);

    let settings = MatchSettings::default();
    for d in fleet.holdout_monotone.iter().chain(&fleet.holdout_adversarial) {
        let a = match_proxy(&pool, &space, d, &settings, &oracle, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = match_proxy(
            &loaded,
            &space,
            d,
            &settings,
            &oracle,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn fleet_json_round_trip() {
    let fleet = small_fleet();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fleet.json");
    fleet.save_json(&path).unwrap();
    assert_eq!(Fleet::load_json(&path).unwrap(), fleet);
}

#[test]
fn saved_optimizer_gives_same_designs() {
    let space = DesignSpace::reduced();
    let fleet = small_fleet();
    let ledger = MeasurementLedger::new();
    let oracle = Oracle::new(&space, &ledger);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (set, _) = train_proxy_predictors(&space, &fleet.proxy, 60, &oracle, &quick_hyper(), &mut rng).unwrap();
    let lambdas = build_lambda_grid(3, 1.0).unwrap();
    let pairs = OptimizerTrainingSet::product(std::slice::from_ref(&fleet.proxy), &lambdas).inputs;
    let hyper = OptimizerHyper {
        hidden: vec![8],
        training: TrainingSettings {
            epochs: 20,
            ..TrainingSettings::default()
        },
        ..OptimizerHyper::default()
    };
    let (net, _) = train_method2(&pairs, &set, &hyper, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("optimizer.json");
    net.save_json(&path).unwrap();
    let loaded = OptimizerNetwork::load_json(&path).unwrap();
    for (d, l) in &pairs {
        assert_eq!(
            infer_design(&net, d, *l).unwrap(),
            infer_design(&loaded, d, *l).unwrap()
        );
    }
}

#[test]
fn exported_files_agree_with_report() {
    let mut s = Scenario::new(9, DesignSpace::reduced(), Approach::ProxyReuse);
    s.fleet = FleetConfig {
        training_real: 2,
        synthetic: 1,
        holdout_monotone: 3,
        holdout_adversarial: 1,
        holdout_synthetic: 1,
        ..FleetConfig::default()
    };
    s.stage_one.samples_per_device = 60;
    s.predictor = quick_hyper();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run_and_export(&s, &StageOneSource::Train, &out).unwrap();
    assert!(!dir.path().join("run.partial").exists());

    let report = load_report(&out).unwrap();
    assert_eq!(report, output.report);

    let devices = std::fs::read_to_string(out.join("devices.csv")).unwrap();
    let mut lines = devices.lines();
    assert_eq!(lines.next().unwrap(), DEVICES_CSV_HEADER.join(","));
    assert_eq!(lines.count(), report.devices.len());

    let mut ledger = csv::Reader::from_path(out.join("ledger.csv")).unwrap();
    let sum: u64 = ledger.records().map(|r| r.unwrap()[2].parse::<u64>().unwrap()).sum();
    assert_eq!(sum, report.ledger.total());
    assert_eq!(report.stages.iter().map(|s| s.measurements).sum::<u64>(), sum);
    for d in &report.devices {
        assert!(out.join("traces").join(format!("{}.csv", d.device_id)).exists());
    }
}
