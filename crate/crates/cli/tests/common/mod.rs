#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use sellkit::app::Resources;
use sellkit_core::config::AppConfig;
use sellkit_core::jsonl;
use sellkit_core::llm::{cassette_key, CassetteEntry};
use sellkit_core::prompt::build_predict_prompt;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}

pub fn mock_config() -> AppConfig {
    AppConfig::load(&fixture("sellkit.toml")).expect("mock config")
}

pub fn replay_config() -> AppConfig {
    AppConfig::load(&fixture("replay.toml")).expect("replay config")
}

pub fn resources(config: AppConfig) -> Arc<Resources> {
    Arc::new(Resources::load(config, true, None).expect("resources"))
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

/// Compares `actual` with `fixtures/golden/<name>`; with `UPDATE_GOLDEN`
/// set the file is rewritten instead.
pub fn golden(name: &str, actual: &str) -> Result<(), String> {
    let path = fixture("golden").join(name);
    if updating() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| {
        format!(
            "{}: {e} (run with UPDATE_GOLDEN=1 to create)",
            path.display()
        )
    })?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .map(|i| i + 1)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()) + 1);
    Err(format!("{name} differs from the snapshot at line {line}"))
}

#[derive(Debug, Clone, Deserialize)]
pub struct DemandRow {
    pub id: String,
    pub demand: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompletionRow {
    pub id: String,
    pub completion: String,
}

pub fn translate_demands() -> Vec<DemandRow> {
    jsonl::read(&fixture("translate/demands.jsonl")).unwrap()
}

/// A demand whose recorded completion is not SELL.
pub const OFF_TOPIC_DEMAND: &str = "Write a slogan for our autumn sale";
pub const OFF_TOPIC_COMPLETION: &str = "Sorry, I can only help with user targeting.";

/// Cassette for the translate fixture: each recorded completion keyed by
/// the prediction prompt the fixture config builds for its demand.
pub fn build_cassette() -> Vec<CassetteEntry> {
    let res = Resources::load(mock_config(), false, None).unwrap();
    let completions: Vec<CompletionRow> =
        jsonl::read(&fixture("translate/completions.jsonl")).unwrap();
    let mut demands: Vec<(String, String)> = translate_demands()
        .into_iter()
        .map(|d| {
            let c = completions
                .iter()
                .find(|c| c.id == d.id)
                .expect("completion for every demand");
            (d.demand, c.completion.clone())
        })
        .collect();
    demands.push((OFF_TOPIC_DEMAND.into(), OFF_TOPIC_COMPLETION.into()));
    demands
        .into_iter()
        .map(|(demand, response)| {
            let prompt = build_predict_prompt(&demand, &res.prompt_context(), &res.options)
                .unwrap()
                .rendered;
            CassetteEntry {
                key: cassette_key(&res.gateway.model, &prompt, res.gateway.max_tokens),
                prompt,
                response,
                model: res.gateway.model.clone(),
                timestamp: 1_700_000_000,
            }
        })
        .collect()
}

/// Checks the committed cassette against a fresh build; rewrites it under
/// `UPDATE_GOLDEN`.
pub fn check_cassette() -> Result<(), String> {
    let text = jsonl::to_string(&build_cassette());
    let path = fixture("cassette.jsonl");
    if updating() {
        std::fs::write(&path, &text).unwrap();
        return Ok(());
    }
    match std::fs::read_to_string(&path) {
        Ok(existing) if existing == text => Ok(()),
        Ok(_) => Err("cassette.jsonl is stale".into()),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

pub fn samples() -> Vec<sellkit_core::synth::TrainSample> {
    jsonl::read(&fixture("samples.jsonl")).unwrap()
}

/// Every prompt kind rendered from the fixtures, as (snapshot name,
/// content) pairs.
pub fn prompt_snapshots(res: &Resources) -> Vec<(String, String)> {
    use sellkit_core::prompt::{
        build_demand_generation_prompt, build_judge_prompt, build_multitask_inputs,
        build_reasoning_completion_prompt, default_rubric,
    };
    use sellkit_core::sell;
    use sellkit_core::synth::{demand_examples, emit_corpus, reasoning_seeds, CorpusMode};

    let ctx = res.prompt_context();
    let demands = translate_demands();
    let starbucks = &demands[0].demand;
    let mut out = Vec::new();

    let predict = build_predict_prompt(starbucks, &ctx, &res.options).unwrap();
    out.push(("predict.txt".to_string(), predict.rendered));

    let (x_s, x_r) = build_multitask_inputs(&demands[1].demand, &ctx, &res.options).unwrap();
    out.push(("multitask_answer.txt".into(), x_s.rendered));
    out.push(("multitask_reasoning.txt".into(), x_r.rendered));

    let samples = samples();
    for mode in [
        CorpusMode::MultiTask,
        CorpusMode::NoMt,
        CorpusMode::NoRs,
        CorpusMode::Normal,
    ] {
        let records = emit_corpus(&samples, &ctx, &res.options, mode).unwrap();
        out.push((format!("corpus_{mode}.jsonl"), jsonl::to_string(&records)));
    }

    let answer =
        sell::parse("(Preference#Belongs To#Starbucks) AND (Career#Belongs To#White-collar)")
            .unwrap();
    let seeds = reasoning_seeds(&res.library, &answer, 3);
    let rc = build_reasoning_completion_prompt(&seeds, starbucks, &answer, &res.instructions);
    out.push(("reasoning_completion.txt".into(), rc.rendered));

    let synthesized = sell::parse(
        "(Gender#Belongs To#Female) AND (((Preference#Belongs To#Reading) AND (User Age Group#Between#20,30)) OR (Career#Belongs To#Teacher))",
    )
    .unwrap();
    let examples = demand_examples(&res.library, &synthesized, 3);
    let dg = build_demand_generation_prompt(&examples, &synthesized, &res.instructions);
    out.push(("demand_generation.txt".into(), dg.rendered));

    let judge = build_judge_prompt(
        &demands[6].demand,
        "(Preference#Belongs To#Insurance)",
        "(Preference#Belongs To#Insurance) AND (Has actively invested in major financial products#Belongs To#False)",
        &default_rubric(),
        &res.instructions,
    );
    out.push(("judge.txt".into(), judge.rendered));
    out
}

pub fn sellkit(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_sellkit"))
        .args(args)
        .output()
        .expect("run sellkit")
}

/// `sellkit translate` over the 10-demand fixture with the replay config.
pub fn replay_translate(out: &Path) -> std::process::Output {
    sellkit(&[
        "--config",
        fixture("replay.toml").to_str().unwrap(),
        "translate",
        "--input",
        fixture("translate/demands.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

pub struct Case {
    pub name: &'static str,
    pub method: &'static str,
    pub uri: String,
    pub body: Option<String>,
    pub status: u16,
}

fn case(
    name: &'static str,
    method: &'static str,
    uri: &str,
    body: Option<serde_json::Value>,
    status: u16,
) -> Case {
    Case {
        name,
        method,
        uri: uri.to_string(),
        body: body.map(|b| b.to_string()),
        status,
    }
}

pub const FIRST_EXAMPLE: &str = "((Resident City#Belongs To# City A) AND (User Age Group#Between#18,35) AND (Preference#Belongs To#Milk Tea)) OR ((City Level#Belongs To#First-tier) AND (Days of listening to audiobooks#Greater Than#3) AND (Career#Belongs To#White-collar))";
pub const LOCATION_EXAMPLE: &str = "((Location#Belongs To#Hangzhou) OR (Location#Belongs To#Shanghai)) AND (Pet Owning#Belongs To#True)";

/// One golden request per endpoint plus one per error class.
pub fn service_cases() -> Vec<Case> {
    use serde_json::json;
    let demands = translate_demands();
    let card = json!({
        "op": "AND",
        "children": [
            {"key": "Preference", "operator": "Belongs To", "value": "Starbucks"},
            {"op": "OR", "children": [
                {"key": "Career", "operator": "Belongs To", "value": "White-collar"}
            ]}
        ]
    });
    vec![
        case(
            "translate",
            "POST",
            "/v1/translate",
            Some(json!({"demand": demands[0].demand})),
            200,
        ),
        case(
            "translate_invalid_answer",
            "POST",
            "/v1/translate",
            Some(json!({"demand": demands[9].demand})),
            200,
        ),
        case(
            "translate_unparseable",
            "POST",
            "/v1/translate",
            Some(json!({"demand": OFF_TOPIC_DEMAND})),
            422,
        ),
        case(
            "translate_cassette_miss",
            "POST",
            "/v1/translate",
            Some(json!({"demand": "Night owls who shop after midnight"})),
            502,
        ),
        case(
            "translate_empty",
            "POST",
            "/v1/translate",
            Some(json!({"demand": "  "})),
            400,
        ),
        case(
            "parse",
            "POST",
            "/v1/parse",
            Some(json!({"sell": FIRST_EXAMPLE})),
            200,
        ),
        case(
            "parse_error",
            "POST",
            "/v1/parse",
            Some(json!({"sell": "(Gender#Is#Female)"})),
            422,
        ),
        case(
            "print",
            "POST",
            "/v1/print",
            Some(json!({"card": card})),
            200,
        ),
        case(
            "print_empty_group",
            "POST",
            "/v1/print",
            Some(json!({"card": {"node_id": "g1", "op": "AND", "children": []}})),
            400,
        ),
        case(
            "validate",
            "POST",
            "/v1/validate",
            Some(
                json!({"sell": "(Preference#Belongs To#Starbucks) AND (Resident City#Belongs To#Company white-collar)"}),
            ),
            200,
        ),
        case(
            "structure",
            "POST",
            "/v1/structure",
            Some(json!({"sell": LOCATION_EXAMPLE})),
            200,
        ),
        case(
            "tags_search",
            "GET",
            "/v1/tags/search?q=white-collar%20workers%20who%20drink%20coffee&n=5",
            None,
            200,
        ),
        case(
            "tags_search_zero",
            "GET",
            "/v1/tags/search?q=coffee&n=0",
            None,
            400,
        ),
        case(
            "tags_search_missing_query",
            "GET",
            "/v1/tags/search",
            None,
            400,
        ),
        case(
            "select_users",
            "POST",
            "/v1/select-users",
            Some(json!({"sell": "(Gender#Belongs To#Female) AND (User Age Group#Between#18,35)"})),
            200,
        ),
        case(
            "select_users_invalid",
            "POST",
            "/v1/select-users",
            Some(json!({"sell": "(Gender#Greater Than#3)"})),
            400,
        ),
        case(
            "export_csv",
            "POST",
            "/v1/export",
            Some(
                json!({"sell": "(Pet Owning#Belongs To#True) AND (Has Car#Belongs To#True)", "format": "csv"}),
            ),
            200,
        ),
        case(
            "export_json",
            "POST",
            "/v1/export",
            Some(
                json!({"sell": "(Pet Owning#Belongs To#True) AND (Has Car#Belongs To#True)", "format": "json"}),
            ),
            200,
        ),
        case(
            "export_empty",
            "POST",
            "/v1/export",
            Some(json!({"sell": "(User Age Group#Greater Than#70)"})),
            200,
        ),
        case(
            "export_bad_format",
            "POST",
            "/v1/export",
            Some(json!({"sell": "(Has Car#Belongs To#True)", "format": "xlsx"})),
            400,
        ),
        case(
            "evaluate",
            "POST",
            "/v1/evaluate",
            Some(json!({
                "predictions": ["(Preference#Belongs To#Starbucks)", "(Gender#Belongs To#Female) AND (User Age Group#Between#35,55)"],
                "references": ["(Preference#Belongs To#Starbucks) AND (Career#Belongs To#White-collar)", "(User Age Group#Between#35,55) AND (Gender#Belongs To#Female)"],
            })),
            200,
        ),
        case(
            "evaluate_missing_prediction",
            "POST",
            "/v1/evaluate",
            Some(json!({
                "predictions": [{"id": "a", "sell": "(Has Car#Belongs To#True)"}],
                "references": [{"id": "b", "sell": "(Has Car#Belongs To#True)"}],
            })),
            400,
        ),
        case("health", "GET", "/v1/health", None, 200),
        case("catalog", "GET", "/v1/catalog", None, 200),
        case("malformed_json", "POST", "/v1/parse", None, 400),
        case("unknown_route", "GET", "/v1/nope", None, 404),
    ]
}

/// Sends one case to the router; returns status and a snapshot of the
/// response (JSON bodies pretty-printed, others verbatim).
pub async fn run_case(app: axum::Router, case: &Case) -> (u16, String) {
    use axum::body::Body;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let mut req = axum::http::Request::builder()
        .method(case.method)
        .uri(&case.uri);
    let body = match &case.body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(b.clone())
        }
        None if case.method == "POST" => {
            req = req.header("content-type", "application/json");
            Body::from("{not json")
        }
        None => Body::empty(),
    };
    let resp = app.oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let count = resp
        .headers()
        .get("x-user-count")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if content_type.starts_with("application/json") {
        match serde_json::from_slice::<serde_json::Value>(&bytes) {
            Ok(v) => serde_json::to_string_pretty(&v).unwrap(),
            Err(_) => String::from_utf8_lossy(&bytes).into_owned(),
        }
    } else {
        String::from_utf8_lossy(&bytes).into_owned()
    };
    let mut snapshot = format!("status: {status}\ncontent-type: {content_type}\n");
    if let Some(c) = count {
        snapshot.push_str(&format!("x-user-count: {c}\n"));
    }
    snapshot.push('\n');
    snapshot.push_str(&body);
    if !snapshot.ends_with('\n') {
        snapshot.push('\n');
    }
    (status, snapshot)
}

/// Runs every case; returns the failures.
pub async fn check_service() -> Vec<String> {
    let app = sellkit::service::router(resources(replay_config()));
    let mut failures = Vec::new();
    for c in service_cases() {
        let (status, snapshot) = run_case(app.clone(), &c).await;
        if status != c.status {
            failures.push(format!(
                "{}: status {status}, want {}\n{snapshot}",
                c.name, c.status
            ));
            continue;
        }
        if let Err(e) = golden(&format!("service/{}.txt", c.name), &snapshot) {
            failures.push(e);
        }
    }
    failures
}
