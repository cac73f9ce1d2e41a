use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use playtree::ingest::{generate_synthetic, near_duplicates, read_plays, write_plays, DuplicateSpec, SyntheticSpec};
use playtree::model::{AgentSelection, Play};
use playtree::retrieval::{build_index, IndexConfig, IndexStats, PlayIndex};
use playtree::Method;
use playtree_service::{router, AppState, LoadResponse, QueryRequest, QueryResponse, ServiceConfig, WirePlay};
use tower::ServiceExt;

fn corpus(g: usize, n: usize, seed: u64) -> Vec<Play<f32>> {
    generate_synthetic::<f32>(&SyntheticSpec::new(g, n, 1.0, seed)).unwrap().plays
}

fn index(plays: Vec<Play<f32>>, leaf: usize) -> PlayIndex<f32> {
    let mut cfg = IndexConfig::with_seed(3);
    cfg.tree.max_leaf_size = leaf;
    cfg.tree.k_range.max = 5;
    build_index(plays, &cfg).unwrap()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn query_body(play: &Play<f32>, selected: AgentSelection, k: usize, method: Method) -> String {
    serde_json::to_string(&QueryRequest {
        play: WirePlay::from(play),
        selected,
        k: Some(k),
        method: Some(method),
        boosts: Default::default(),
        present: None,
    })
    .unwrap()
}

#[tokio::test]
async fn not_loaded_is_503() {
    let state = AppState::new(ServiceConfig::default());
    let play = &corpus(1, 1, 1)[0];
    for (m, uri, body) in [
        ("GET", "/index/stats", None),
        ("GET", "/plays/x", None),
        ("POST", "/query", Some(query_body(play, AgentSelection::all(5), 3, Method::Tree))),
    ] {
        assert_eq!(call(&state, m, uri, body).await.0, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
}

#[tokio::test]
async fn self_query_and_aligned_trajectories() {
    let plays = corpus(3, 30, 4);
    let state = AppState::with_index(ServiceConfig::default(), index(plays.clone(), 20));
    for play in plays.iter().step_by(11) {
        // scrambled copy of an indexed play
        let perms = playtree::TeamPerms {
            offense: playtree::PermutationMap::new(vec![3, 0, 4, 1, 2]).unwrap(),
            defense: playtree::PermutationMap::new(vec![1, 2, 0, 4, 3]).unwrap(),
        };
        let scrambled = play.permuted_both(&perms).unwrap();
        let body = query_body(&scrambled, AgentSelection::new([0, 6], true), 5, Method::Tree);
        let (status, bytes) = call(&state, "POST", "/query", Some(body.clone())).await;
        assert_eq!(status, StatusCode::OK);
        let resp: QueryResponse = serde_json::from_slice(&bytes).unwrap();
        let top = &resp.results[0];
        assert_eq!(top.rank, 1);
        assert_eq!(top.play_id, play.play_id.0);
        assert_eq!(top.distance, 0.0);
        // the self match comes back in the query's own agent order
        assert_eq!(top.trajectory.frames, WirePlay::from(&scrambled).frames);

        let again = call(&state, "POST", "/query", Some(body)).await.1;
        assert_eq!(again, bytes);
    }
}

#[tokio::test]
async fn small_leaf_is_not_padded() {
    let plays = corpus(1, 3, 9);
    let state = AppState::with_index(ServiceConfig::default(), index(plays.clone(), 2000));
    let body = query_body(&plays[0], AgentSelection::all(5), 10, Method::Tree);
    let (status, bytes) = call(&state, "POST", "/query", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let resp: QueryResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(resp.results.len(), 3);
    assert_eq!(resp.candidates, 3);
}

#[tokio::test]
async fn bad_queries_are_400() {
    let plays = corpus(1, 5, 2);
    let state = AppState::with_index(ServiceConfig::default(), index(plays.clone(), 2000));
    let mut two_second = plays[0].clone();
    two_second.window_seconds = 2;
    let mut short = WirePlay::from(&plays[0]);
    short.frames[3].truncate(10);
    let bodies = [
        "{not json".to_string(),
        r#"{"selected": {"agents": [], "ball": true}}"#.to_string(),
        query_body(&plays[0], AgentSelection::default(), 5, Method::Tree),
        query_body(&plays[0], AgentSelection::all(5), 0, Method::Tree),
        serde_json::to_string(&QueryRequest {
            play: short,
            selected: AgentSelection::all(5),
            k: None,
            method: None,
            boosts: Default::default(),
            present: None,
        })
        .unwrap(),
    ];
    for body in bodies {
        let (status, bytes) = call(&state, "POST", "/query", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        let err: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert!(err["error"].is_string());
    }
    // unknown window length: the 25-frame payload claims 2 s
    let wire = serde_json::to_string(&QueryRequest {
        play: WirePlay {
            window_seconds: 2,
            ..WirePlay::from(&plays[0])
        },
        selected: AgentSelection::all(5),
        k: None,
        method: None,
        boosts: Default::default(),
        present: None,
    })
    .unwrap();
    assert_eq!(call(&state, "POST", "/query", Some(wire)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn plays_endpoint() {
    let plays = corpus(1, 4, 5);
    let state = AppState::with_index(ServiceConfig::default(), index(plays.clone(), 2000));
    let (status, bytes) = call(&state, "GET", &format!("/plays/{}", plays[2].play_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let wire: WirePlay = serde_json::from_slice(&bytes).unwrap();
    let play = Play::<f32>::try_from(wire).unwrap();
    assert_eq!(play, plays[2]);

    // payload survives the tracking text format
    let mut text = Vec::new();
    write_plays(&mut text, std::slice::from_ref(&play)).unwrap();
    assert_eq!(read_plays::<f32, _>(text.as_slice()).unwrap(), vec![play]);

    assert_eq!(call(&state, "GET", "/plays/nope", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stats_for_single_leaf_and_split_index() {
    let state = AppState::with_index(ServiceConfig::default(), index(corpus(2, 50, 8), 2000));
    let (status, bytes) = call(&state, "GET", "/index/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    let stats: IndexStats = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(stats.window_lengths, vec![1]);
    assert_eq!(stats.windows[0].plays, 100);
    assert_eq!(stats.windows[0].depth, 1);
    assert_eq!(stats.windows[0].leaf_count, 1);

    let state = AppState::with_index(ServiceConfig::default(), index(corpus(4, 40, 8), 25));
    let stats: IndexStats = serde_json::from_slice(&call(&state, "GET", "/index/stats", None).await.1).unwrap();
    let w = &stats.windows[0];
    assert!(w.max_leaf_size <= 25);
    assert!(w.depth > 1);
    assert_eq!(w.leaf_size_histogram.iter().map(|b| b.count).sum::<usize>(), w.leaf_count);
    for pair in w.layer_costs.windows(2) {
        assert!(pair[1] <= pair[0]);
    }
}

#[tokio::test]
async fn load_swaps_index() {
    let dir = tempfile::tempdir().unwrap();
    let first = corpus(1, 4, 1);
    let second = corpus(2, 6, 2);
    index(second.clone(), 2000).save_dir(dir.path()).unwrap();

    let state = AppState::with_index(ServiceConfig::default(), index(first.clone(), 2000));
    let held = state.current().unwrap();

    let missing = serde_json::json!({ "path": dir.path().join("nothing") }).to_string();
    assert_eq!(call(&state, "POST", "/index/load", Some(missing)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(state.current().unwrap().store().len(), 4);

    let body = serde_json::json!({ "path": dir.path() }).to_string();
    let (status, bytes) = call(&state, "POST", "/index/load", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let loaded: LoadResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(loaded.plays, 12);
    assert_eq!(call(&state, "GET", &format!("/plays/{}", second[0].play_id), None).await.0, StatusCode::OK);
    // a handle taken before the swap still sees the old index
    assert_eq!(held.store().len(), 4);
}

#[tokio::test]
async fn baseline_differs_on_permuted_duplicates() {
    let base = corpus(3, 30, 12);
    let mut plays = base.clone();
    let spec = DuplicateSpec {
        count: 4,
        jitter_ft: 2.0,
        noise_ft: 0.5,
        seed: 1,
    };
    for p in base.iter().step_by(5) {
        plays.extend(near_duplicates(p, &spec).unwrap().into_iter().map(|(d, _)| d));
    }
    let state = AppState::with_index(ServiceConfig::default(), index(plays, 30));
    let mut differ = 0;
    for q in base.iter().step_by(5) {
        let selected = AgentSelection::new([0, 1], true);
        let tree: QueryResponse =
            serde_json::from_slice(&call(&state, "POST", "/query", Some(query_body(q, selected.clone(), 5, Method::Tree))).await.1).unwrap();
        let baseline: QueryResponse =
            serde_json::from_slice(&call(&state, "POST", "/query", Some(query_body(q, selected, 5, Method::Baseline))).await.1).unwrap();
        assert_eq!(baseline.method, Method::Baseline);
        let ids = |r: &QueryResponse| r.results.iter().map(|x| x.play_id.clone()).collect::<Vec<_>>();
        if ids(&tree) != ids(&baseline) {
            differ += 1;
        }
    }
    assert!(differ > 0);
}
