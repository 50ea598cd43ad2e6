// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use reprosvc_core::gateway::{http, Service, ServiceConfig};
use reprosvc_core::testkit::toy::{self, ToyRepo};
use serde_json::{json, Value};

struct Api {
    server: http::Server,
    base: String,
    client: reqwest::Client,
}

impl Api {
    async fn start(config: ServiceConfig) -> Self {
        let service = Service::open(config, BTreeMap::new()).unwrap();
        let server = http::start(service, false).await.unwrap();
        let base = server.url();
        Self { server, base, client: reqwest::Client::new() }
    }

    async fn read(resp: reqwest::Response) -> (u16, Value) {
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        Self::read(self.client.get(format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        Self::read(self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap()).await
    }

    async fn post_raw(&self, path: &str, body: &'static str) -> (u16, Value) {
        let req = self.client.post(format!("{}{path}", self.base)).header("content-type", "application/json");
        Self::read(req.body(body).send().await.unwrap()).await
    }

    async fn put(&self, path: &str, body: Value) -> (u16, Value) {
        Self::read(self.client.put(format!("{}{path}", self.base)).json(&body).send().await.unwrap()).await
    }

    async fn delete(&self, path: &str) -> (u16, Value) {
        Self::read(self.client.delete(format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    async fn submit(&self, project: &str, name: &str) -> (u16, Value) {
        let (meta, model) = toy::submission(name);
        self.submit_bytes(project, &serde_json::to_vec(&meta).unwrap(), model).await
    }

    async fn submit_bytes(&self, project: &str, meta: &[u8], model: Vec<u8>) -> (u16, Value) {
        let form = reqwest::multipart::Form::new()
            .part("metadata", reqwest::multipart::Part::bytes(meta.to_vec()))
            .part("model", reqwest::multipart::Part::bytes(model));
        let url = format!("{}/projects/{project}/benchmarks", self.base);
        Self::read(self.client.post(url).multipart(form).send().await.unwrap()).await
    }

    async fn register(&self, name: &str, source: &Path) -> Value {
        let (status, body) = self.post("/projects", json!({"name": name, "source": source})).await;
        assert_eq!(status, 201, "{body}");
        body
    }

    async fn push(&self, project: &str, commit: &str) -> Value {
        let (status, job) = self
            .post("/hooks/push", json!({"project_id": project, "commit_id": commit, "event_id": format!("e-{commit}")}))
            .await;
        assert_eq!(status, 202, "{job}");
        self.wait(job["job_id"].as_str().unwrap()).await
    }

    async fn wait(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let (_, job) = self.get(&format!("/jobs/{job_id}")).await;
            if job["state"] == "DONE" {
                return job;
            }
            assert!(job["state"] != "FAILED_INTERNAL" && Instant::now() < deadline, "{job}");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    async fn stop(self) {
        self.server.shutdown().await;
    }
}

fn config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(dir.join("data"));
    c.listen_address = "127.0.0.1:0".into();
    c.ingest.poll_seconds = 3600;
    c.worker_limit = 2;
    c
}

fn error_code(body: &Value) -> &str {
    body["error"].as_str().unwrap_or("")
}

#[tokio::test(flavor = "multi_thread")]
async fn a_push_runs_the_full_pipeline_and_exposes_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let api = Api::start(config(dir.path())).await;
    let project = api.register("Toy Solver", &repo.path).await;
    assert_eq!(project["project_id"], "toy-solver");

    let job = api.push("toy-solver", repo.c1.as_str()).await;
    let (status, view) = api.get(&format!("/projects/toy-solver/commits/{}/run", repo.c1)).await;
    assert_eq!(status, 200);
    assert_eq!(view["run"]["run_id"], job["run_id"]);
    assert_eq!(view["grade"]["color"], "GREEN");
    assert_eq!(view["run"]["stages"].as_array().unwrap().len(), 3);

    let build_log = view["run"]["stages"][2]["log_path"].as_str().unwrap();
    let resp = api.client.get(format!("{}/{build_log}", api.base)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let text = resp.text().await.unwrap();
    assert!(text.contains("build: bin/toy-solver ready"), "{text}");
    let (status, body) = api.get("/transcripts/..%2F..%2Fcatalog.jsonl").await;
    assert!(status == 400 || status == 404, "{status} {body}");

    let (_, runs) = api.get("/projects/toy-solver/runs").await;
    assert_eq!(runs.as_array().unwrap().len(), 1);
    let (_, projects) = api.get("/projects").await;
    assert_eq!(projects.as_array().unwrap().len(), 1);
    api.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_their_codes() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let mut cfg = config(dir.path());
    cfg.max_model_bytes = 64;
    let api = Api::start(cfg).await;
    api.register("toy-solver", &repo.path).await;

    let (s, b) = api.post("/projects", json!({"name": "toy-solver", "source": repo.path})).await;
    assert_eq!((s, error_code(&b)), (409, "DUPLICATE_NAME"));
    let (s, b) = api.post("/projects", json!({"name": "other", "source": dir.path().join("nowhere")})).await;
    assert_eq!((s, error_code(&b)), (422, "SOURCE_UNAVAILABLE"));
    let (s, b) = api.post("/hooks/push", json!({"project_id": "ghost", "commit_id": "abc", "event_id": "x"})).await;
    assert_eq!((s, error_code(&b)), (404, "NOT_REGISTERED"));
    let (s, b) = api.post_raw("/hooks/push", "{not json").await;
    assert_eq!((s, error_code(&b)), (400, "BAD_EVENT"));
    let (s, b) = api.post("/hooks/push", json!({"project_id": "toy-solver", "commit_id": "zz", "event_id": "y"})).await;
    assert_eq!((s, error_code(&b)), (400, "BAD_EVENT"));
    let (s, b) = api.post("/hooks/dependency", json!({"name": "", "version": "1"})).await;
    assert_eq!((s, error_code(&b)), (400, "BAD_EVENT"));

    let (s, b) = api.submit("toy-solver", "b1").await;
    assert_eq!((s, error_code(&b)), (422, "NO_BASELINE"));
    let (s, b) = api.get(&format!("/projects/toy-solver/badge?commit={}", repo.c1)).await;
    assert_eq!((s, error_code(&b)), (404, "NO_RUN"));
    let (s, b) = api.get("/projects/toy-solver/hard-models").await;
    assert_eq!((s, error_code(&b)), (404, "NO_DATA"));
    let (s, b) = api.get("/projects/ghost/runs").await;
    assert_eq!((s, error_code(&b)), (404, "NOT_REGISTERED"));
    let (s, b) = api.get("/projects/toy-solver/diff?from=abc").await;
    assert_eq!((s, error_code(&b)), (400, "BAD_REQUEST"));

    api.push("toy-solver", repo.c1.as_str()).await;
    let (meta, _) = toy::submission("b1");
    let (s, b) = api.submit_bytes("toy-solver", &serde_json::to_vec(&meta).unwrap(), vec![b'x'; 65]).await;
    assert_eq!((s, error_code(&b)), (413, "TOO_LARGE"));
    let (s, b) = api.submit_bytes("toy-solver", b"{\"submitter\": 1}", b"x".to_vec()).await;
    assert_eq!((s, error_code(&b)), (400, "BAD_REQUEST"), "{b}");
    api.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn duplicate_push_events_map_to_one_job() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let api = Api::start(config(dir.path())).await;
    api.register("toy-solver", &repo.path).await;
    let event = json!({"project_id": "toy-solver", "commit_id": repo.c1.as_str(), "event_id": "gh-1"});
    let (_, a) = api.post("/hooks/push", event.clone()).await;
    let (_, b) = api.post("/hooks/push", event).await;
    assert_eq!(a["job_id"], b["job_id"]);
    api.wait(a["job_id"].as_str().unwrap()).await;
    let (_, runs) = api.get("/projects/toy-solver/runs").await;
    assert_eq!(runs.as_array().unwrap().len(), 1);
    api.stop().await;
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walk(root)
        .into_iter()
        .filter(|p| !p.starts_with(root.join("workspaces")) && !p.starts_with(root.join("mirrors")))
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn get_endpoints_leave_every_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let api = Api::start(config(dir.path())).await;
    api.register("toy-solver", &repo.path).await;
    api.push("toy-solver", repo.c1.as_str()).await;
    assert_eq!(api.submit("toy-solver", "b1").await.0, 201);
    api.push("toy-solver", repo.c2.as_str()).await;

    let data = api.server.service().data_dir().to_path_buf();
    let before = snapshot(&data);
    let (c1, c2) = (repo.c1.as_str(), repo.c2.as_str());
    for path in [
        "/health".to_string(),
        "/projects".into(),
        "/projects/toy-solver".into(),
        "/projects/toy-solver/runs".into(),
        format!("/projects/toy-solver/commits/{c2}/run"),
        format!("/projects/toy-solver/diff?from={c1}&to={c2}"),
        format!("/projects/toy-solver/badge?commit={c2}"),
        "/projects/toy-solver/hard-models".into(),
        "/projects/toy-solver/benchmarks".into(),
        "/projects/toy-solver/benchmarks/b1".into(),
        "/projects/toy-solver/benchmarks/b1/history?alg=direct".into(),
        "/projects/toy-solver/benchmarks/b1/first-regression?alg=direct".into(),
        "/projects/toy-solver/tombstones".into(),
        "/jobs".into(),
        "/venues/default".into(),
        "/venues/default/ranking".into(),
    ] {
        let (status, body) = api.get(&path).await;
        assert_eq!(status, 200, "{path}: {body}");
    }
    assert_eq!(snapshot(&data), before);
    api.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn retired_benchmarks_leave_tombstones_and_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let api = Api::start(config(dir.path())).await;
    api.register("toy-solver", &repo.path).await;
    api.push("toy-solver", repo.c1.as_str()).await;
    for b in ["b1", "b3"] {
        let (s, report) = api.submit("toy-solver", b).await;
        assert_eq!(s, 201, "{report}");
        assert_eq!(report["accepted"], true);
    }
    let (s, b) = api.submit("toy-solver", "b1").await;
    assert_eq!((s, error_code(&b)), (409, "DUPLICATE"));

    let (s, b) = api.delete("/projects/toy-solver/benchmarks/b1").await;
    assert_eq!((s, error_code(&b)), (400, "BAD_REQUEST"));
    let (s, tomb) = api.delete("/projects/toy-solver/benchmarks/b1?reason=wrong%20fixpoint&actor=curator").await;
    assert_eq!(s, 200, "{tomb}");
    assert_eq!(tomb["actor"], "curator");
    let (_, tombs) = api.get("/projects/toy-solver/tombstones").await;
    assert_eq!(tombs.as_array().unwrap().len(), 1);
    let (_, bench) = api.get("/projects/toy-solver/benchmarks/b1").await;
    assert_eq!(bench["state"], "RETIRED");

    api.push("toy-solver", repo.c3.as_str()).await;
    let (_, view) = api.get(&format!("/projects/toy-solver/commits/{}/run", repo.c3)).await;
    let ids: Vec<&str> = view["run"]["cells"].as_array().unwrap().iter().map(|c| c["benchmark_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["b3", "b3"]);

    let (s, linked) = api
        .post("/projects/toy-solver/benchmarks/b3/publications", json!({"doi": "10.1000/xyz123", "citation_text": "A."}))
        .await;
    assert_eq!(s, 200, "{linked}");
    let (s, b) = api.post("/projects/toy-solver/benchmarks/b3/publications", json!({"doi": "nope"})).await;
    assert_eq!((s, error_code(&b)), (422, "BAD_DOI"));
    api.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn venue_policies_annotate_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let repo = ToyRepo::create(&dir.path().join("repo")).unwrap();
    let api = Api::start(config(dir.path())).await;
    let (s, venue) = api.put("/venues/conf", json!({"mode": "MANDATORY_UNSCORED", "label": "Conf 2025"})).await;
    assert_eq!(s, 200, "{venue}");
    let (s, _) = api
        .post("/projects", json!({"name": "toy-solver", "source": repo.path, "policy": "conf"}))
        .await;
    assert_eq!(s, 201);

    let (_, ranking) = api.get("/venues/conf/ranking").await;
    assert_eq!(ranking["entries"].as_array().unwrap().len(), 0);
    assert_eq!(ranking["annotations"][0]["error"], "MISSING_ARTIFACT");

    api.push("toy-solver", repo.c2.as_str()).await;
    let (_, ranking) = api.get("/venues/conf/ranking").await;
    assert_eq!(ranking["entries"][0]["color"], "GREEN");
    let annotation = &ranking["annotations"][0]["annotation"];
    assert_eq!(annotation["grade"], "GREEN");
    assert_eq!(annotation["scored"], false);

    let (s, _) = api.put("/venues/conf", json!({"mode": "MANDATORY_SCORED"})).await;
    assert_eq!(s, 200);
    let (_, ranking) = api.get("/venues/conf/ranking").await;
    assert_eq!(ranking["annotations"][0]["annotation"]["scored"], true);
    let (s, b) = api.put("/venues/conf", json!({"mode": "OPTIONAL"})).await;
    assert_eq!((s, error_code(&b)), (409, "POLICY_REGRESSION"));
    let (s, b) = api.get("/venues/elsewhere/ranking").await;
    assert_eq!((s, error_code(&b)), (404, "NOT_FOUND"));
    api.stop().await;
}
