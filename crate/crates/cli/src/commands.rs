use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use whatif_client::{Client, VesselQuery};
use whatif_core::eval::{rank_models, walk_forward_backtest, Metric, ModelScorecard};
use whatif_core::models::Hyperparams;
use whatif_core::scenario::{run_whatif, HistoryStore, Scenario, ScenarioRun};
use whatif_core::spatial::{
    aggregate_supply, load_vessels, parse_timestamp, supply_variable_name, vessels_in_view, write_vessels, BBox,
    GeoPoint, PortRegion, VesselRecord,
};
use whatif_core::synth::{
    gen_ar1, gen_cointegrated, gen_linear_market, gen_vessels, Ar1Config, CointegratedConfig, LinearMarketConfig,
    VesselConfig,
};
use whatif_core::timeseries::{load_frame, write_frame};
use whatif_core::wire::{SupplyAggregate, VesselsResponse};
use whatif_core::{fit, FittedModel, ModelKind, ModelSpec, TimeSeriesFrame};
use whatif_service::{AppState, ServiceConfig};

use crate::{
    BacktestArgs, Cli, CliError, Command, FileKind, FitArgs, GenKind, PortArgs, ServeArgs, SpecArgs, ValidateArgs,
    VesselArgs, WhatifArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::GenData(g) => gen_data(g.kind),
        Command::Fit(args) => fit_cmd(args),
        Command::Backtest(args) => backtest(args, json),
        Command::Whatif(args) => whatif(args, json),
        Command::Vessels(args) => vessels(args, json),
        Command::Serve(args) => serve(args),
        Command::Validate(args) => validate(args),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_frame(path: &Path) -> Result<TimeSeriesFrame> {
    load_frame(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::data)?;
    println!("{text}");
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new().map_err(CliError::data)
}

fn port_region(p: &PortArgs) -> Result<PortRegion> {
    PortRegion::new(&p.port_name, GeoPoint::new(p.port_lat, p.port_lon), p.port_radius_km)
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn gen_data(kind: GenKind) -> Result<()> {
    match kind {
        GenKind::Market { out, seed, weeks, noise } => {
            let cfg = LinearMarketConfig {
                seed,
                n_weeks: weeks,
                noise_sigma: noise,
                ..Default::default()
            };
            let frame = gen_linear_market(&cfg).map_err(CliError::data)?;
            write_frame(&frame, create(&out)?).map_err(CliError::data)
        }
        GenKind::Cointegrated {
            out,
            seed,
            weeks,
            alpha,
            beta,
            sigma,
        } => {
            let cfg = CointegratedConfig {
                seed,
                n_weeks: weeks,
                alpha,
                beta,
                sigma,
                ..Default::default()
            };
            let frame = gen_cointegrated(&cfg).map_err(CliError::data)?;
            write_frame(&frame, create(&out)?).map_err(CliError::data)
        }
        GenKind::Ar1 { out, seed, weeks, phi } => {
            let cfg = Ar1Config {
                seed,
                n_weeks: weeks,
                phi,
                ..Default::default()
            };
            let frame = gen_ar1(&cfg).map_err(CliError::data)?;
            write_frame(&frame, create(&out)?).map_err(CliError::data)
        }
        GenKind::Vessels {
            out,
            seed,
            weeks,
            port,
            approaching_ballast,
            approaching_laden,
            departing_ballast,
        } => {
            let cfg = VesselConfig {
                seed,
                n_weeks: weeks,
                approaching_ballast,
                approaching_laden,
                departing_ballast,
                ..Default::default()
            };
            let records = gen_vessels(&cfg, &port_region(&port)?).map_err(CliError::data)?;
            write_vessels(&records, create(&out)?).map_err(CliError::data)
        }
    }
}

fn model_spec(kind: ModelKind, args: &SpecArgs, frame: &TimeSeriesFrame) -> Result<ModelSpec> {
    let mut hyperparams = match &args.hyperparams {
        None => Hyperparams::default_for(kind),
        Some(text) => {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| CliError::Usage(format!("--hyperparams: {e}")))?;
            serde_json::from_value(serde_json::json!({ "kind": kind, "hyperparams": value }))
                .map_err(|e| CliError::Usage(format!("--hyperparams for {kind}: {e}")))?
        }
    };
    if let (Some(seed), Hyperparams::Lstm(cfg)) = (args.seed, &mut hyperparams) {
        cfg.seed = seed;
    }
    let exogenous = match &args.exog {
        Some(list) => list.clone(),
        None => frame.variables().iter().filter(|v| **v != args.target).cloned().collect(),
    };
    let spec = ModelSpec {
        target: args.target.clone(),
        exogenous,
        hyperparams,
    };
    spec.validate(frame).map_err(CliError::data)?;
    Ok(spec)
}

fn fit_cmd(args: FitArgs) -> Result<()> {
    let frame = read_frame(&args.spec.data)?;
    let spec = model_spec(args.model.into(), &args.spec, &frame)?;
    let model = fit(&frame, &spec).map_err(CliError::data)?;
    let text = model.to_json();
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            writeln!(out, "{text}").and_then(|_| out.flush()).map_err(CliError::data)
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn backtest(args: BacktestArgs, json: bool) -> Result<()> {
    let frame = read_frame(&args.spec.data)?;
    let mut cards: Vec<ModelScorecard> = Vec::new();
    for kind in &args.model {
        let spec = model_spec((*kind).into(), &args.spec, &frame)?;
        cards.push(walk_forward_backtest(&spec, &frame, args.folds, args.horizon).map_err(CliError::data)?);
    }
    let metric: Metric = args.metric.into();
    let ranked = rank_models(&cards, metric).map_err(CliError::data)?;
    if json {
        return print_json(&ranked);
    }
    println!("{:<4} {:<8} {:>12} {:>12} {:>10} {:>6}", "rank", "model", "rmse", "mae", "mape%", "folds");
    for (i, c) in ranked.iter().enumerate() {
        println!(
            "{:<4} {:<8} {:>12.3} {:>12.3} {:>10} {:>6}",
            i + 1,
            c.model_kind.as_str(),
            c.rmse,
            c.mae,
            fmt_opt(c.mape),
            c.n_folds
        );
    }
    Ok(())
}

fn print_run(run: &ScenarioRun, json: bool) -> Result<()> {
    if json {
        return print_json(run);
    }
    println!("run {}  route {:?}  horizon {}", run.run_id, run.scenario.route_id, run.scenario.horizon);
    println!("{:<8} {:>14}  diff per step", "model", "mean_diff");
    for (kind, mean) in &run.mean_diff_per_model {
        let steps: Vec<String> = run.diff[kind].iter().map(|d| format!("{d:.4}")).collect();
        println!("{:<8} {:>14.6}  [{}]", kind.as_str(), mean, steps.join(", "));
    }
    println!("overall_mean_diff {}", run.overall_mean_diff);
    Ok(())
}

fn whatif(args: WhatifArgs, json: bool) -> Result<()> {
    let text = read_to_string(&args.scenario)?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.scenario.display())))?;

    if let Some(server) = &args.server {
        let route = args.route.clone().expect("clap enforces --route");
        let client = Client::new(server).map_err(|e| CliError::Usage(e.to_string()))?;
        let run = runtime()?
            .block_on(client.whatif(&route, &scenario))
            .map_err(CliError::data)?;
        return print_run(&run, json);
    }

    if args.model_files.is_empty() {
        return Err(CliError::Usage("give --model-file (with --data) or --server".into()));
    }
    let data = args.data.as_ref().expect("clap enforces --data");
    let frame = read_frame(data)?;
    let mut models = BTreeMap::new();
    for path in &args.model_files {
        let model = FittedModel::from_json(&read_to_string(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if models.insert(model.kind(), model).is_some() {
            return Err(CliError::Usage(format!("two model files for the same family ({})", path.display())));
        }
    }
    // Without an explicit selection, run every family that was loaded.
    if !text.contains("\"model_selection\"") {
        scenario.model_selection = models.keys().copied().collect();
    }
    if let Some(route) = &args.route {
        if scenario.route_id.is_empty() {
            scenario.route_id = route.clone();
        }
    }
    let store = match &args.history {
        Some(path) => HistoryStore::open(path).map_err(CliError::data)?,
        None => HistoryStore::in_memory(),
    };
    let run = run_whatif(&store, &models, &frame, &scenario).map_err(CliError::data)?;
    print_run(&run, json)
}

fn print_vessels(records: &[VesselRecord]) {
    println!(
        "{:<8} {:<25} {:>9} {:>10} {:>7} {:>6} {:<7}",
        "imo", "timestamp", "lat", "lon", "heading", "knots", "status"
    );
    for r in records {
        println!(
            "{:<8} {:<25} {:>9.4} {:>10.4} {:>7.1} {:>6.1} {:<7}",
            r.imo,
            r.timestamp.to_rfc3339(),
            r.lat,
            r.lon,
            r.heading,
            r.speed_knots,
            r.cargo_status.as_str()
        );
    }
}

fn print_supply(frame: &TimeSeriesFrame) {
    let name = &frame.variables()[0];
    println!("{:<10} {}", "week", name);
    for (date, row) in frame.index().iter().zip(frame.rows()) {
        println!("{:<10} {}", date, row[0].map_or(0.0, |v| v));
    }
}

fn vessels(args: VesselArgs, json: bool) -> Result<()> {
    let bbox = match &args.bbox {
        Some(text) => text.parse::<BBox>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => BBox::WORLD,
    };
    if let Some(server) = &args.server {
        let client = Client::new(server).map_err(|e| CliError::Usage(e.to_string()))?;
        let query = VesselQuery {
            route: args.route.clone(),
            bbox: Some(bbox),
            status: args.status.into(),
            at: args.at.clone(),
        };
        let response = runtime()?.block_on(client.vessels(&query)).map_err(CliError::data)?;
        if json {
            return print_json(&response);
        }
        print_vessels(&response.vessels);
        if let Some(supply) = &response.supply {
            println!();
            print_supply(&supply.frame);
        }
        return Ok(());
    }

    let Some(path) = &args.file else {
        return Err(CliError::Usage("give --file or --server".into()));
    };
    let records = load_vessels(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let at = args
        .at
        .as_deref()
        .map(parse_timestamp)
        .transpose()
        .map_err(CliError::Usage)?;
    let status: whatif_core::spatial::StatusFilter = args.status.into();
    let in_view: Vec<VesselRecord> = vessels_in_view(&records, &bbox, at)
        .map_err(CliError::data)?
        .into_iter()
        .filter(|r| status.admits(r.cargo_status))
        .collect();
    let supply = if args.supply {
        let upto: Vec<VesselRecord> = records
            .into_iter()
            .filter(|r| at.is_none_or(|t| r.timestamp <= t))
            .collect();
        let port = port_region(&args.port)?;
        let frame = aggregate_supply(&upto, &port, args.tolerance_deg).map_err(CliError::data)?;
        Some(SupplyAggregate {
            variable: supply_variable_name(&port.name),
            port,
            tolerance_deg: args.tolerance_deg,
            frame,
        })
    } else {
        None
    };
    let response = VesselsResponse {
        status,
        bbox,
        at,
        vessels: in_view,
        supply,
    };
    if json {
        return print_json(&response);
    }
    print_vessels(&response.vessels);
    if let Some(supply) = &response.supply {
        println!();
        print_supply(&supply.frame);
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig::load(&args.config).map_err(CliError::data)?;
    let state = AppState::from_config(&config).map_err(CliError::data)?;
    let addr = format!("{}:{}", args.host, args.port);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Data(format!("bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(CliError::data)?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        whatif_service::serve(listener, Arc::new(state), shutdown)
            .await
            .map_err(CliError::data)
    })
}

fn guess_kind(path: &Path) -> Result<FileKind> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    Ok(match ext {
        "toml" => FileKind::Config,
        "json" => {
            if read_to_string(path)?.contains("\"parameters\"") {
                FileKind::Model
            } else {
                FileKind::Scenario
            }
        }
        _ => {
            let text = read_to_string(path)?;
            if text.trim_start().starts_with("imo") {
                FileKind::Vessels
            } else {
                FileKind::Frame
            }
        }
    })
}

fn validate(args: ValidateArgs) -> Result<()> {
    let path = &args.file;
    let kind = match args.kind {
        Some(k) => k,
        None => guess_kind(path)?,
    };
    let bad = |e: &dyn std::fmt::Display| CliError::Data(format!("{}: {e}", path.display()));
    let summary = match kind {
        FileKind::Frame => {
            let f = load_frame(open(path)?).map_err(|e| bad(&e))?;
            format!("frame with {} rows and {} variables", f.len(), f.variables().len())
        }
        FileKind::Vessels => {
            let v = load_vessels(open(path)?).map_err(|e| bad(&e))?;
            format!("{} vessel records", v.len())
        }
        FileKind::Scenario => {
            let s: Scenario = serde_json::from_str(&read_to_string(path)?).map_err(|e| bad(&e))?;
            format!("scenario with horizon {}", s.horizon)
        }
        FileKind::Model => {
            let m = FittedModel::from_json(&read_to_string(path)?).map_err(|e| bad(&e))?;
            format!("{} model for `{}`", m.kind(), m.spec.target)
        }
        FileKind::Config => {
            let c = ServiceConfig::load(path).map_err(|e| bad(&e))?;
            format!("config with {} routes", c.routes.len())
        }
    };
    println!("ok: {summary}");
    Ok(())
}
