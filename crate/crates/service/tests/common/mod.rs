#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use scribblematte::image::encode_rgb_png;
use scribblematte::infoselect::Rect;
use scribblematte::labelstate::{LabelClass, Trimap};
use scribblematte::synthetic::{generate_case, Case};

pub const BOUNDARY: &str = "scribblematte-test-boundary";

pub fn case(size: usize) -> Case {
    generate_case(0, 3, size, size).unwrap()
}

pub fn png_of(case: &Case) -> Vec<u8> {
    encode_rgb_png(&case.image.to_rgb8()).unwrap()
}

pub fn multipart(image: &[u8], config: Option<&str>) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"in.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    if let Some(c) = config {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"config\"\r\n\r\n{c}\r\n").as_bytes(),
        );
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("{e}: {}", String::from_utf8_lossy(&self.body))
        })
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, body }
}

pub fn create_req(image: &[u8], config: Option<&str>, key: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/sessions").header(
        "content-type",
        format!("multipart/form-data; boundary={BOUNDARY}"),
    );
    if let Some(k) = key {
        b = b.header("idempotency-key", k);
    }
    b.body(Body::from(multipart(image, config))).unwrap()
}

pub fn post_json(uri: &str, json: &str, key: Option<&str>) -> Request<Body> {
    let mut b = Request::post(uri).header("content-type", "application/json");
    if let Some(k) = key {
        b = b.header("idempotency-key", k);
    }
    b.body(Body::from(json.to_string())).unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub fn delete(uri: &str) -> Request<Body> {
    Request::delete(uri).body(Body::empty()).unwrap()
}

/// A one-point stroke at the known ground-truth pixel nearest the centre of
/// `rect`, or none when the rectangle is all unknown.
pub fn oracle_stroke(gt: &Trimap, rect: &Rect) -> Option<String> {
    let (cx, cy) = (rect.x + rect.width / 2, rect.y + rect.height / 2);
    let mut best: Option<(usize, usize, usize, LabelClass)> = None;
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let class = gt.class_at(y * gt.width() + x);
            if class == LabelClass::Unknown {
                continue;
            }
            let d = x.abs_diff(cx) + y.abs_diff(cy);
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, x, y, class));
            }
        }
    }
    best.map(|(_, x, y, class)| {
        format!(r#"{{"strokes":[{{"class":"{}","radius":1,"points":[[{x},{y}]]}}]}}"#, class.code())
    })
}

pub fn rect_of(v: &Value) -> Rect {
    serde_json::from_value(v.clone()).unwrap()
}

pub fn decode_gray(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    scribblematte::image::decode_gray(bytes).unwrap()
}

/// What a full create, six submits and finalize walk observed.
pub struct Walk {
    pub id: String,
    pub statuses: Vec<StatusCode>,
    pub final_status: String,
    pub trimap: (usize, usize, Vec<u8>),
    pub alpha: (usize, usize, Vec<u8>),
    pub overlay_is_png: bool,
}

pub async fn protocol_walk(app: &Router, case: &Case) -> Walk {
    let mut statuses = Vec::new();
    let created = send(app, create_req(&png_of(case), None, None)).await;
    statuses.push(created.status);
    let mut state = created.json();
    let id = state["id"].as_str().unwrap().to_string();
    for _ in 0..6 {
        let rect = rect_of(&state["suggested_region"]);
        let body = oracle_stroke(&case.trimap, &rect).unwrap_or_else(|| r#"{"strokes":[]}"#.into());
        let r = send(app, post_json(&format!("/sessions/{id}/scribbles"), &body, None)).await;
        statuses.push(r.status);
        state = r.json();
    }
    let fin = send(app, post_json(&format!("/sessions/{id}/finalize"), "", None)).await;
    statuses.push(fin.status);
    let final_status = fin.json()["status"].as_str().unwrap_or_default().to_string();
    let trimap = send(app, get(&format!("/sessions/{id}/trimap.png"))).await;
    let alpha = send(app, get(&format!("/sessions/{id}/alpha.png"))).await;
    let overlay = send(app, get(&format!("/sessions/{id}/overlay.png"))).await;
    statuses.extend([trimap.status, alpha.status, overlay.status]);
    Walk {
        id,
        statuses,
        final_status,
        trimap: decode_gray(&trimap.body),
        alpha: decode_gray(&alpha.body),
        overlay_is_png: overlay.content_type == "image/png" && overlay.body.starts_with(b"\x89PNG"),
    }
}
