use std::sync::Arc;

use tokio::net::TcpListener;
use whatif_client::{Client, ClientError, VesselQuery};
use whatif_core::eval::Metric;
use whatif_core::scenario::Scenario;
use whatif_core::spatial::{write_vessels, BBox, GeoPoint, PortRegion, StatusFilter};
use whatif_core::synth::{gen_linear_market, gen_vessels, LinearMarketConfig, VesselConfig};
use whatif_core::timeseries::write_frame;
use whatif_core::wire::SeriesWindow;
use whatif_core::ModelKind;
use whatif_service::{AppState, ServiceConfig};

const CONFIG: &str = r#"
data_dir = "state"

[[routes]]
route_id = "C3"
target = "freight_index"
exogenous = ["brazil_loadings", "iron_ore_price"]
data_file = "c3.csv"
vessel_file = "vessels.csv"
port = { name = "Tubarao", lat = -20.29, lon = -40.24, radius_km = 40.0 }
backtest_folds = 3
models = [{ kind = "MLR" }, { kind = "ARIMAX", hyperparams = { p = 1, d = 0, q = 0 } }]
"#;

async fn service(dir: &std::path::Path) -> Client {
    let frame = gen_linear_market(&LinearMarketConfig {
        n_weeks: 60,
        ..Default::default()
    })
    .unwrap();
    write_frame(&frame, std::fs::File::create(dir.join("c3.csv")).unwrap()).unwrap();
    let port = PortRegion::new("Tubarao", GeoPoint::new(-20.29, -40.24), 40.0).unwrap();
    let vessels = gen_vessels(&VesselConfig::default(), &port).unwrap();
    write_vessels(&vessels, std::fs::File::create(dir.join("vessels.csv")).unwrap()).unwrap();
    std::fs::write(dir.join("routes.toml"), CONFIG).unwrap();
    let config = ServiceConfig::load(dir.join("routes.toml")).unwrap();
    let state = AppState::from_config(&config).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/", listener.local_addr().unwrap());
    tokio::spawn(whatif_service::serve(listener, Arc::new(state), std::future::pending()));
    Client::new(&base).unwrap()
}

#[tokio::test]
async fn typed_reads() {
    let dir = tempfile::tempdir().unwrap();
    let client = service(dir.path()).await;

    assert_eq!(client.health().await.unwrap().routes, 1);
    let routes = client.routes().await.unwrap();
    assert_eq!(routes[0].route_id, "C3");

    let frame = client.series("C3", SeriesWindow::All).await.unwrap();
    assert_eq!(frame.len(), 60);
    assert_eq!(client.series("C3", SeriesWindow::Near).await.unwrap().len(), 4);

    let bands = client.bands("C3", "brazil_loadings").await.unwrap();
    assert_eq!(bands.band.window, 20);

    let models = client.models("C3", Metric::Rmse).await.unwrap();
    assert_eq!(models.ranking.len(), 2);
    assert!(client.coefficients("C3").await.unwrap().iter().any(|c| c.model == ModelKind::Mlr));
}

#[tokio::test]
async fn whatif_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let client = service(dir.path()).await;
    let scenario = Scenario::new("C3", 5)
        .with_models(&[ModelKind::Mlr, ModelKind::Arimax])
        .perturb("iron_ore_price", 0, 150.0);
    let run = client.whatif("C3", &scenario).await.unwrap();
    assert_eq!(run.run_id, 1);
    assert_eq!(run.diff.len(), 2);
    assert_eq!(client.history("C3").await.unwrap(), vec![run]);
}

#[tokio::test]
async fn vessel_queries() {
    let dir = tempfile::tempdir().unwrap();
    let client = service(dir.path()).await;
    let all = client.vessels(&VesselQuery::default()).await.unwrap();
    assert!(all.supply.is_none());
    assert!(!all.vessels.is_empty());

    let query = VesselQuery {
        route: Some("C3".into()),
        status: StatusFilter::Ballast,
        bbox: Some(BBox {
            lat_min: -40.0,
            lon_min: -60.0,
            lat_max: 0.0,
            lon_max: -20.0,
        }),
        at: None,
    };
    let ballast = client.vessels(&query).await.unwrap();
    assert!(ballast.vessels.iter().all(|v| v.cargo_status == whatif_core::spatial::CargoStatus::Ballast));
    let supply = ballast.supply.unwrap();
    assert_eq!(supply.variable, "ballast_approaching_tubarao");
    assert!(supply.frame.len() >= 12);
}

#[tokio::test]
async fn server_errors_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let client = service(dir.path()).await;
    let err = client.models("nope", Metric::Rmse).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));

    let bad = Scenario::new("C3", 3).with_models(&[ModelKind::Lstm]);
    match client.whatif("C3", &bad).await.unwrap_err() {
        ClientError::Api { status, body } => {
            assert_eq!(status.as_u16(), 409);
            assert_eq!(body.error, "model_not_fitted");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(matches!(Client::new("not a url"), Err(ClientError::BaseUrl { .. })));
}

#[tokio::test]
async fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = Client::new(&format!("http://{addr}")).unwrap();
    assert!(matches!(client.health().await, Err(ClientError::Transport(_))));
}
