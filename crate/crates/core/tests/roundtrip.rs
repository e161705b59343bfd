use pfsa_core::dataset::{
    read_timeseries_csv, split_by_time, write_timeseries_csv, CsvSchema, ParkMeta, SplitSpec,
    Terrain,
};
use pfsa_core::features::build_feature_matrix;
use pfsa_core::models::{
    predict_ecdf, train_model, ModelParams, QuantileForecaster, QuantileLevels,
};
use pfsa_core::synth::{gen_wind_park, SyntheticParkSpec, GENERATED_COLUMNS, RUN_COLUMN};

#[test]
fn synthetic_csv_round_trips_through_ingestion() {
    let spec = SyntheticParkSpec::preset(Terrain::Ct, "ct-9", 1200, 3);
    let park = gen_wind_park(&spec).unwrap();
    let mut buf = Vec::new();
    write_timeseries_csv(&mut buf, &park.dataset, Some((RUN_COLUMN, &park.row_runs))).unwrap();

    let schema = CsvSchema::new(GENERATED_COLUMNS).with_model_run(RUN_COLUMN);
    let meta = ParkMeta {
        park_id: spec.park_id.clone(),
        terrain: spec.terrain,
        meta: park.dataset.meta.clone(),
    };
    let back = read_timeseries_csv(buf.as_slice(), &schema, &meta).unwrap();
    assert_eq!(back.timestamps, park.dataset.timestamps);
    assert_eq!(back.power, park.dataset.power);
    assert_eq!(back.columns, park.dataset.columns);
    assert!(back.dropped_rows.is_empty());
    let runs = back.model_runs.as_ref().unwrap();
    assert_eq!(runs.len(), 1200 / 6);
}

#[test]
fn trained_model_survives_json_and_predicts_identically() {
    let park = gen_wind_park(&SyntheticParkSpec::preset(Terrain::Os, "os-9", 1000, 8)).unwrap();
    let (train, test) = split_by_time(&park.dataset, &SplitSpec::default()).unwrap();
    let names: Vec<String> = ["WS100m", "HSMR", "VWS100mPHR"].map(String::from).to_vec();
    let tr = build_feature_matrix(&train, &names).unwrap();
    let te = build_feature_matrix(&test, &names).unwrap();
    let levels = QuantileLevels::default();
    for kind in pfsa_core::models::ModelKind::ALL {
        let mut params = ModelParams::default_for(kind);
        if let ModelParams::Svr(p) = &mut params {
            p.max_rows = 200;
            p.epochs = 100;
        }
        if let ModelParams::Mqnn(p) = &mut params {
            p.epochs = 100;
        }
        let model = train_model(&tr, &levels, &params).unwrap();
        let again = QuantileForecaster::from_json(&model.to_json().unwrap()).unwrap();
        for i in (0..te.n_rows()).step_by(17) {
            let a = predict_ecdf(&model, te.row(i)).unwrap();
            let b = predict_ecdf(&again, te.row(i)).unwrap();
            assert_eq!(a, b, "{kind} row {i}");
            assert!(a.is_non_decreasing());
        }
    }
}
