use std::collections::BTreeMap;

use whatif_core::models::{ExogPaths, Hyperparams, LstmConfig};
use whatif_core::scenario::{run_whatif, HistoryStore, Scenario};
use whatif_core::spatial::{aggregate_supply, load_vessels, write_vessels, GeoPoint, PortRegion};
use whatif_core::synth::{gen_linear_market, gen_vessels, LinearMarketConfig, VesselConfig, TARGET};
use whatif_core::timeseries::{load_frame, write_frame};
use whatif_core::{fit, FittedModel, ModelKind, ModelSpec};

fn specs() -> Vec<ModelSpec> {
    let exog = ["brazil_loadings", "iron_ore_price"];
    ModelKind::ALL
        .iter()
        .map(|k| {
            let hp = match k {
                ModelKind::Lstm => Hyperparams::Lstm(LstmConfig {
                    epochs: 30,
                    hidden_size: 4,
                    window: 3,
                    ..Default::default()
                }),
                other => Hyperparams::default_for(*other),
            };
            ModelSpec::new(TARGET, &exog, hp)
        })
        .collect()
}

#[test]
fn csv_and_model_json_round_trips_preserve_forecasts() {
    let frame = gen_linear_market(&LinearMarketConfig {
        n_weeks: 100,
        ..Default::default()
    })
    .unwrap();
    let mut csv = Vec::new();
    write_frame(&frame, &mut csv).unwrap();
    let reloaded = load_frame(csv.as_slice()).unwrap();
    assert_eq!(reloaded.rows(), frame.rows());
    assert_eq!(reloaded.index(), frame.index());

    let paths: ExogPaths = [("brazil_loadings", 5200.0), ("iron_ore_price", 95.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), vec![v; 6]))
        .collect();
    for spec in specs() {
        let model = fit(&reloaded, &spec).unwrap();
        let restored = FittedModel::from_json(&model.to_json()).unwrap();
        let a = model.forecast(&paths, 6).unwrap();
        let b = restored.forecast(&paths, 6).unwrap();
        assert_eq!(a, b, "{}", spec.kind());
    }
}

#[test]
fn history_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.ndjson");
    let frame = gen_linear_market(&LinearMarketConfig {
        n_weeks: 80,
        ..Default::default()
    })
    .unwrap();
    let models: BTreeMap<_, _> = specs()
        .into_iter()
        .take(2)
        .map(|s| (s.kind(), fit(&frame, &s).unwrap()))
        .collect();
    let scenario = Scenario::new("C3", 4)
        .with_models(&[ModelKind::Mlr, ModelKind::Arimax])
        .perturb("iron_ore_price", 0, 120.0);

    let first = {
        let store = HistoryStore::open(&path).unwrap();
        run_whatif(&store, &models, &frame, &scenario).unwrap();
        run_whatif(&store, &models, &frame, &scenario).unwrap();
        store.runs(None)
    };
    let store = HistoryStore::open(&path).unwrap();
    assert_eq!(store.runs(None), first);
    let third = run_whatif(&store, &models, &frame, &scenario).unwrap();
    assert_eq!(third.run_id, 3);
    assert_eq!(third.diff, first[0].diff);
}

#[test]
fn vessel_supply_joins_a_weekly_frame() {
    let port = PortRegion::new("Ponta da Madeira", GeoPoint::new(-2.57, -44.37), 30.0).unwrap();
    let cfg = VesselConfig::default();
    let records = gen_vessels(&cfg, &port).unwrap();
    let mut csv = Vec::new();
    write_vessels(&records, &mut csv).unwrap();
    let reloaded = load_vessels(csv.as_slice()).unwrap();
    assert_eq!(reloaded, records);

    let supply = aggregate_supply(&reloaded, &port, 45.0).unwrap();
    assert_eq!(supply.variables(), ["ballast_approaching_ponta_da_madeira"]);
    let counts: Vec<f64> = supply.rows().iter().map(|r| r[0].unwrap()).collect();
    assert!(counts.iter().all(|c| *c <= cfg.approaching_ballast as f64));
    assert!(counts.iter().any(|c| *c > 0.0));
}
