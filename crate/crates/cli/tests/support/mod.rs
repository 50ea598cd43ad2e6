// SPDX-License-Identifier: Apache-2.0

//! An in-process server on an ephemeral port plus a small blocking client.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use reprosvc_core::gateway::{http, Service, ServiceConfig};
use reprosvc_core::registry::SubmissionMeta;
use reprosvc_core::testkit::toy;
use serde_json::{json, Value};

pub const JOB_TIMEOUT: Duration = Duration::from_secs(120);

pub struct Served {
    runtime: tokio::runtime::Runtime,
    server: Option<http::Server>,
    pub base: String,
    client: reqwest::blocking::Client,
}

/// A config for tests: ephemeral port, no periodic polling.
pub fn test_config(data_dir: &Path) -> ServiceConfig {
    let mut config = ServiceConfig::new(data_dir);
    config.listen_address = "127.0.0.1:0".into();
    config.ingest.poll_seconds = 3600;
    config.worker_limit = 2;
    config
}

impl Served {
    pub fn start(config: ServiceConfig, service_env: BTreeMap<String, String>) -> Self {
        let runtime = tokio::runtime::Runtime::new().expect("runtime");
        let service = Service::open(config, service_env).expect("service opens");
        let server = runtime.block_on(http::start(service, false)).expect("server starts");
        let base = server.url();
        let client = reqwest::blocking::Client::builder().timeout(None).build().expect("client");
        Self { runtime, server: Some(server), base, client }
    }

    pub fn service(&self) -> &Service {
        self.server.as_ref().expect("running").service()
    }

    pub fn stop(mut self) {
        if let Some(server) = self.server.take() {
            self.runtime.block_on(server.shutdown());
        }
    }

    fn read(resp: reqwest::blocking::Response) -> (u16, Value) {
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        Self::read(self.client.get(format!("{}{path}", self.base)).send().expect("GET"))
    }

    pub fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().expect("GET");
        (resp.status().as_u16(), resp.bytes().expect("body").to_vec())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        Self::read(self.client.post(format!("{}{path}", self.base)).json(body).send().expect("POST"))
    }

    pub fn put(&self, path: &str, body: &Value) -> (u16, Value) {
        Self::read(self.client.put(format!("{}{path}", self.base)).json(body).send().expect("PUT"))
    }

    pub fn delete(&self, path: &str) -> (u16, Value) {
        Self::read(self.client.delete(format!("{}{path}", self.base)).send().expect("DELETE"))
    }

    pub fn register(&self, name: &str, source: &Path) -> Value {
        let (status, body) = self.post("/projects", &json!({"name": name, "source": source.display().to_string()}));
        assert_eq!(status, 201, "register {name}: {body}");
        body
    }

    /// Pushes `commit` and waits for the job to finish.
    pub fn push(&self, project: &str, commit: &str) -> Value {
        let (status, job) = self.post(
            "/hooks/push",
            &json!({"project_id": project, "commit_id": commit, "event_id": format!("push-{commit}")}),
        );
        assert_eq!(status, 202, "push: {job}");
        self.wait_job(job["job_id"].as_str().expect("job id"))
    }

    pub fn manual(&self, project: &str, commit: &str) -> Value {
        let (status, job) = self.post(&format!("/projects/{project}/runs"), &json!({"commit_id": commit}));
        assert_eq!(status, 202, "manual run: {job}");
        self.wait_job(job["job_id"].as_str().expect("job id"))
    }

    pub fn wait_job(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + JOB_TIMEOUT;
        loop {
            let (status, job) = self.get(&format!("/jobs/{job_id}"));
            assert_eq!(status, 200, "job {job_id}: {job}");
            match job["state"].as_str() {
                Some("DONE") => return job,
                Some("FAILED_INTERNAL") => panic!("job {job_id} failed: {job}"),
                _ if Instant::now() > deadline => panic!("job {job_id} did not finish: {job}"),
                _ => std::thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    /// The `{run, grade}` view of the latest run at `commit`.
    pub fn run_at(&self, project: &str, commit: &str) -> Value {
        let (status, view) = self.get(&format!("/projects/{project}/commits/{commit}/run"));
        assert_eq!(status, 200, "run at {commit}: {view}");
        view
    }

    pub fn submit_meta(&self, project: &str, meta: &SubmissionMeta, model: Vec<u8>) -> (u16, Value) {
        let form = reqwest::blocking::multipart::Form::new()
            .part("metadata", reqwest::blocking::multipart::Part::bytes(serde_json::to_vec(meta).expect("meta")))
            .part("model", reqwest::blocking::multipart::Part::bytes(model));
        Self::read(
            self.client
                .post(format!("{}/projects/{project}/benchmarks", self.base))
                .multipart(form)
                .send()
                .expect("POST benchmark"),
        )
    }

    /// Submits a bundled benchmark.
    pub fn submit(&self, project: &str, name: &str) -> (u16, Value) {
        let (meta, model) = toy::submission(name);
        self.submit_meta(project, &meta, model)
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        if let Some(server) = self.server.take() {
            self.runtime.block_on(server.shutdown());
        }
    }
}

/// `(benchmark, algorithm, status)` of a run's cells, sorted.
pub fn cell_statuses(run: &Value) -> Vec<(String, String, String)> {
    let mut cells: Vec<_> = run["cells"]
        .as_array()
        .expect("cells")
        .iter()
        .map(|c| {
            (
                c["benchmark_id"].as_str().unwrap().to_string(),
                c["algorithm"].as_str().unwrap().to_string(),
                c["status"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    cells.sort();
    cells
}
