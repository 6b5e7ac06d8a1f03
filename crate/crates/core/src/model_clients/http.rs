//! OpenAI-compatible HTTP backend.
//!
//! Wire format:
//! * chat: `POST {base_url}/chat/completions` with
//!   `{"model", "messages": [{"role": "user", "content": [...]}], "temperature": 0}`;
//!   the reply text is `choices[0].message.content`.
//! * embeddings: `POST {base_url}/embeddings` with `{"model", "input"}`; the
//!   vector is `data[0].embedding`. Image embeddings send the crop as a
//!   `data:image/png;base64,...` URL in `input`.
//!
//! Images are attached to chat messages as `image_url` parts holding a PNG
//! data URL of the crop.
//!
//! The labeler expects `{"label": ..., "description": ...}` and the relation
//! ranker expects either a JSON array of predicates or
//! `{"predicates": [...], "reversed": bool}`; both may be wrapped in prose or
//! a code fence.

use std::io::Cursor;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{
    split_crop_ref, ClientConfig, ClientError, Completer, EmbeddingVector, Encoder, LabelReply, LabelRequest, Labeler,
    PairContext, PairObject, RelationRanker, RelationReply, Semaphore,
};
use crate::rag_tasks::prompt::GroundedPrompt;
use crate::relations::MAX_PREDICATES;

pub struct HttpModels {
    cfg: ClientConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    gate: Semaphore,
    image_root: Option<PathBuf>,
}

impl std::fmt::Debug for HttpModels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpModels").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl HttpModels {
    pub fn new(cfg: ClientConfig) -> Result<Self, ClientError> {
        cfg.validate().map_err(ClientError::Unavailable)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            gate: Semaphore::new(cfg.max_parallel),
            cfg,
            client,
            api_key,
            image_root: None,
        })
    }

    /// Directory against which relative crop image paths resolve.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    fn post(&self, endpoint: &str, body: &Value) -> Result<Value, ClientError> {
        let url = format!("{}/{endpoint}", self.cfg.base_url.trim_end_matches('/'));
        let mut last = String::new();
        for attempt in 0..=self.cfg.retry_count {
            if attempt > 0 {
                let backoff = 100u64.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let outcome = {
                let _permit = self.gate.acquire();
                let mut req = self.client.post(&url).json(body);
                if let Some(k) = &self.api_key {
                    req = req.bearer_auth(k);
                }
                req.send()
                    .and_then(|r| {
                        let status = r.status();
                        r.text().map(|t| (status, t))
                    })
            };
            match outcome {
                Ok((status, text)) if status.is_success() => {
                    return serde_json::from_str(&text).map_err(|e| ClientError::MalformedReply(e.to_string()));
                }
                Ok((status, text)) => {
                    last = format!("{url}: HTTP {status}: {}", text.chars().take(200).collect::<String>());
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        break;
                    }
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            log::debug!("request attempt {} failed: {last}", attempt + 1);
        }
        Err(ClientError::Unavailable(last))
    }

    fn chat(&self, model: &str, content: Vec<Value>) -> Result<String, ClientError> {
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        });
        let reply = self.post("chat/completions", &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::MalformedReply("missing choices[0].message.content".into()))
    }

    fn embed(&self, input: Value) -> Result<EmbeddingVector, ClientError> {
        let body = json!({"model": self.cfg.embedding_model, "input": input});
        let reply = self.post("embeddings", &body)?;
        let values: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::MalformedReply("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ClientError::MalformedReply("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(ClientError::MalformedReply("empty embedding".into()));
        }
        Ok(EmbeddingVector::normalize_from(&values))
    }

    /// PNG data URL of the referenced crop.
    fn crop_data_url(&self, crop: &str) -> Result<String, ClientError> {
        let (path, bbox) = split_crop_ref(crop);
        let mut p = PathBuf::from(path);
        if let (Some(root), true) = (&self.image_root, p.is_relative()) {
            p = root.join(p);
        }
        let unresolvable = |_| ClientError::UnresolvableReference(crop.to_string());
        let bytes = std::fs::read(&p).map_err(unresolvable)?;
        let png = match bbox {
            None => bytes,
            Some([x0, y0, x1, y1]) => {
                let img = image::load_from_memory(&bytes).map_err(|_| ClientError::UnresolvableReference(crop.into()))?;
                let w = x1.saturating_sub(x0).max(1);
                let h = y1.saturating_sub(y0).max(1);
                let sub = img.crop_imm(x0, y0, w, h);
                let mut out = Cursor::new(Vec::new());
                sub.write_to(&mut out, image::ImageFormat::Png)
                    .map_err(|_| ClientError::UnresolvableReference(crop.into()))?;
                out.into_inner()
            }
        };
        Ok(format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        ))
    }

    fn image_part(&self, crop: &str) -> Result<Value, ClientError> {
        Ok(json!({"type": "image_url", "image_url": {"url": self.crop_data_url(crop)?}}))
    }
}

fn text_part(text: impl Into<String>) -> Value {
    json!({"type": "text", "text": text.into()})
}

/// The outermost JSON value embedded in a reply (code fences and prose
/// around it are ignored).
fn embedded_json(text: &str, open: char, close: char) -> Option<Value> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| serde_json::from_str(&text[start..=end]).ok()).flatten()
}

pub fn parse_label_reply(text: &str) -> Result<LabelReply, ClientError> {
    let v = embedded_json(text, '{', '}').ok_or_else(|| ClientError::MalformedReply("no JSON object".into()))?;
    let field = |k: &str| v.get(k).and_then(Value::as_str).map(str::trim).unwrap_or("");
    let label = field("label").to_lowercase();
    if label.is_empty() {
        return Err(ClientError::MalformedReply("empty label".into()));
    }
    Ok(LabelReply {
        label,
        description: field("description").to_string(),
    })
}

pub fn parse_predicate_reply(text: &str) -> Result<RelationReply, ClientError> {
    let obj = embedded_json(text, '{', '}');
    let (list, reversed) = match obj {
        Some(v) if v.get("predicates").is_some() => (
            v.get("predicates").cloned().unwrap_or(Value::Null),
            v.get("reversed").and_then(Value::as_bool).unwrap_or(false),
        ),
        _ => (
            embedded_json(text, '[', ']').ok_or_else(|| ClientError::MalformedReply("no predicate list".into()))?,
            false,
        ),
    };
    let items = list
        .as_array()
        .ok_or_else(|| ClientError::MalformedReply("predicates is not a list".into()))?;
    if items.is_empty() || items.len() > MAX_PREDICATES {
        return Err(ClientError::MalformedReply(format!(
            "expected 1..={MAX_PREDICATES} predicates, got {}",
            items.len()
        )));
    }
    let predicates = items
        .iter()
        .map(|p| p.as_str().map(str::to_string).ok_or_else(|| ClientError::MalformedReply("non-string predicate".into())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RelationReply { predicates, reversed })
}

fn describe(o: &PairObject) -> String {
    let c = o.obb.center;
    let e = o.obb.extents;
    format!(
        "{} (id {}): {}; center ({:.2}, {:.2}, {:.2}) m; size ({:.2}, {:.2}, {:.2}) m",
        o.label, o.id, o.description, c.x, c.y, c.z, e.x, e.y, e.z
    )
}

impl Labeler for HttpModels {
    fn label(&self, request: &LabelRequest) -> Result<LabelReply, ClientError> {
        let mut text = String::from(
            "Name the main object in this image region with a short lowercase noun phrase and describe it in one \
             sentence. Reply with JSON only: {\"label\": \"...\", \"description\": \"...\"}.",
        );
        if let Some(hint) = &request.proposed_label {
            text.push_str(&format!(" A detector suggested \"{hint}\"."));
        }
        let content = vec![text_part(text), self.image_part(&request.crop)?];
        let model = self.cfg.labeler_model.as_deref().unwrap_or(&self.cfg.model_name);
        parse_label_reply(&self.chat(model, content)?)
    }
}

impl RelationRanker for HttpModels {
    fn rank_predicates(&self, pair: &PairContext) -> Result<RelationReply, ClientError> {
        let text = format!(
            "Object A: {}\nObject B: {}\nCentroid distance: {:.2} m\n\
             List up to {MAX_PREDICATES} short spatial or semantic predicates relating A to B, most likely first \
             (for example \"on\", \"near\", \"left of\"). If the relation reads more naturally from B to A, \
             phrase the predicates that way and set reversed to true. Reply with JSON only: \
             {{\"predicates\": [\"...\"], \"reversed\": false}}.",
            describe(&pair.subject),
            describe(&pair.object),
            pair.distance
        );
        let mut content = vec![text_part(text)];
        for crop in [&pair.subject.crop, &pair.object.crop].into_iter().flatten() {
            match self.image_part(crop) {
                Ok(part) => content.push(part),
                Err(e) => log::debug!("relation prompt sent without image: {e}"),
            }
        }
        let model = self.cfg.relation_model.as_deref().unwrap_or(&self.cfg.model_name);
        parse_predicate_reply(&self.chat(model, content)?)
    }
}

impl Completer for HttpModels {
    fn complete(&self, prompt: &GroundedPrompt) -> Result<String, ClientError> {
        let reply = self.chat(&self.cfg.model_name, vec![text_part(prompt.rendered.clone())])?;
        let reply = reply.trim().to_string();
        if reply.is_empty() {
            return Err(ClientError::MalformedReply("empty completion".into()));
        }
        Ok(reply)
    }
}

impl Encoder for HttpModels {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        self.embed(Value::String(text.to_string()))
    }

    fn embed_image(&self, crop: &str) -> Result<EmbeddingVector, ClientError> {
        if crop.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        self.embed(Value::String(self.crop_data_url(crop)?))
    }

    fn model_name(&self) -> String {
        self.cfg.embedding_model.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 server answering every request with `body` after a
    /// short delay, counting concurrent requests.
    fn fake_server(body: &'static str, delay_ms: u64) -> (String, Arc<AtomicUsize>, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let inflight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (inf, pk) = (inflight.clone(), peak.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (inf, pk) = (inf.clone(), pk.clone());
                std::thread::spawn(move || {
                    let now = inf.fetch_add(1, Ordering::SeqCst) + 1;
                    pk.fetch_max(now, Ordering::SeqCst);
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                            break;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                    let mut buf = vec![0; len];
                    let _ = reader.read_exact(&mut buf);
                    std::thread::sleep(Duration::from_millis(delay_ms));
                    inf.fetch_sub(1, Ordering::SeqCst);
                    let resp = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        (format!("http://{addr}/v1"), inflight, peak)
    }

    fn cfg(base_url: String, max_parallel: usize) -> ClientConfig {
        ClientConfig {
            base_url,
            max_parallel,
            timeout_secs: 10.0,
            retry_count: 0,
            api_key_env: "OSGRAG_TEST_UNSET_KEY".into(),
            ..ClientConfig::default()
        }
    }

    #[test]
    fn embeddings_respect_parallel_cap() {
        let (url, _, peak) = fake_server(r#"{"data":[{"embedding":[3.0,4.0]}]}"#, 40);
        let client = HttpModels::new(cfg(url, 2)).unwrap();
        std::thread::scope(|s| {
            for i in 0..8 {
                let c = &client;
                s.spawn(move || {
                    let v = c.embed_text(&format!("query {i}")).unwrap();
                    assert!(v.normalized);
                    assert!((v.values[0] - 0.6).abs() < 1e-6);
                });
            }
        });
        let p = peak.load(Ordering::SeqCst);
        assert!((1..=2).contains(&p), "peak in-flight {p}");
    }

    #[test]
    fn chat_reply_is_extracted() {
        let (url, _, _) = fake_server(r#"{"choices":[{"message":{"content":" 2 "}}]}"#, 0);
        let client = HttpModels::new(cfg(url, 1)).unwrap();
        let p = GroundedPrompt::render("qa/v1", vec!["chair #1: a chair".into()], "How many chairs?").unwrap();
        assert_eq!(client.complete(&p).unwrap(), "2");
    }

    #[test]
    fn refused_connection_is_unavailable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut c = cfg(format!("http://127.0.0.1:{port}/v1"), 1);
        c.retry_count = 1;
        let client = HttpModels::new(c).unwrap();
        assert!(matches!(client.embed_text("chair"), Err(ClientError::Unavailable(_))));
    }

    #[test]
    fn predicate_replies_are_validated() {
        let r = parse_predicate_reply("```json\n[\"on\", \"near\"]\n```").unwrap();
        assert_eq!(r.predicates, vec!["on", "near"]);
        assert!(!r.reversed);
        let r = parse_predicate_reply(r#"{"predicates": ["left of"], "reversed": true}"#).unwrap();
        assert!(r.reversed);
        let seven = r#"["a","b","c","d","e","f","g"]"#;
        assert!(matches!(parse_predicate_reply(seven), Err(ClientError::MalformedReply(_))));
        assert!(parse_predicate_reply("[]").is_err());
        assert!(parse_predicate_reply("no idea").is_err());
    }

    #[test]
    fn label_replies_are_validated() {
        let r = parse_label_reply("Sure: {\"label\": \"Office Chair\", \"description\": \"a black chair\"}").unwrap();
        assert_eq!(r.label, "office chair");
        assert!(parse_label_reply("{\"label\": \"\"}").is_err());
    }
}
