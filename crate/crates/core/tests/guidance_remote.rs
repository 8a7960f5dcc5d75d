//! Wire protocol golden fixtures and the HTTP client against an in-process server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use skelfield_core::guidance::protocol::{from_planar, SdsRequest, SdsResponse, PREDICT_PATH};
use skelfield_core::guidance::{fake_prediction, GuidanceError, NoisePredictor, NoiseRequest, RemotePredictor};
use skelfield_core::image::RgbImage;

const REQUEST: &[u8] = include_bytes!("fixtures/sds_fake_request.bin");
const RESPONSE: &[u8] = include_bytes!("fixtures/sds_fake_response.bin");

#[test]
fn golden_request_round_trips() {
    let req = SdsRequest::decode(REQUEST).unwrap();
    assert_eq!((req.timestep, req.channels, req.height, req.width), (417, 4, 3, 5));
    assert_eq!(req.guidance_scale, 7.5);
    assert_eq!(req.prompt, "a dancing figure");
    assert_eq!(req.encode().unwrap(), REQUEST);
}

#[test]
fn golden_response_matches_fake_mode() {
    let n = 4 * 3 * 5;
    let eps = fake_prediction(REQUEST, n);
    let resp = SdsResponse { status: 0, eps_hat: eps };
    assert_eq!(resp.encode(), RESPONSE);
    assert_eq!(SdsResponse::decode(RESPONSE, n).unwrap(), resp);
}

/// Reads one HTTP request and returns its path and body.
fn read_request(stream: &mut TcpStream) -> (String, Vec<u8>) {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (path, body)
}

fn respond(stream: &mut TcpStream, status: &str, body: &[u8]) {
    write!(stream, "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len()).unwrap();
    stream.write_all(body).unwrap();
}

/// Serves one request with `reply(path, body) -> (status line, body)`.
fn serve_once(reply: impl FnOnce(&str, &[u8]) -> Option<(String, Vec<u8>)> + Send + 'static) -> (String, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let (path, body) = read_request(&mut stream);
        match reply(&path, &body) {
            Some((status, out)) => respond(&mut stream, &status, &out),
            None => std::thread::sleep(Duration::from_millis(1500)),
        }
    });
    (addr, handle)
}

struct Inputs {
    z_t: Vec<f64>,
    cond: RgbImage,
    zeros: Vec<f64>,
}

fn inputs() -> Inputs {
    let (w, h, c) = (3u32, 2u32, 4usize);
    let z_t = (0..(w * h) as usize * c).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut cond = RgbImage::black(w, h);
    cond.put(1, 1, [255, 0, 85]);
    Inputs { z_t, cond, zeros: vec![0.0; (w * h) as usize * c] }
}

fn request(i: &Inputs) -> NoiseRequest<'_> {
    NoiseRequest {
        z_t: &i.z_t,
        timestep: 250,
        channels: 4,
        width: 3,
        height: 2,
        conditioning: &i.cond,
        render: &i.zeros,
        noise: &i.zeros,
        pose_index: None,
    }
}

fn client(endpoint: String) -> RemotePredictor {
    RemotePredictor { endpoint, prompt: "figure".into(), guidance_scale: 5.0, timeout: Duration::from_millis(500) }
}

#[test]
fn client_against_fake_server() {
    let (addr, server) = serve_once(|path, body| {
        assert_eq!(path, PREDICT_PATH);
        let req = SdsRequest::decode(body).unwrap();
        let n = req.z_t.len();
        Some(("200 OK".into(), SdsResponse { status: 0, eps_hat: fake_prediction(body, n) }.encode()))
    });
    let i = inputs();
    let mut c = client(addr);
    let sent = c.build_request(&request(&i)).unwrap().encode().unwrap();
    let got = c.predict(&request(&i)).unwrap();
    server.join().unwrap();
    let expected = from_planar(&fake_prediction(&sent, 24), 4);
    assert_eq!(got, expected);
}

fn error_for(reply: impl FnOnce(&str, &[u8]) -> Option<(String, Vec<u8>)> + Send + 'static) -> GuidanceError {
    let (addr, server) = serve_once(reply);
    let i = inputs();
    let err = client(addr).predict(&request(&i)).unwrap_err();
    server.join().unwrap();
    err
}

#[test]
fn status_codes_map_to_errors() {
    let with_status = |s: u16| move |_: &str, _: &[u8]| Some(("200 OK".to_string(), SdsResponse { status: s, eps_hat: vec![] }.encode()));
    assert!(matches!(error_for(with_status(1)), GuidanceError::BadRequest));
    assert!(matches!(error_for(with_status(2)), GuidanceError::ModelError));
    assert!(matches!(error_for(with_status(9)), GuidanceError::Malformed(_)));
}

#[test]
fn malformed_and_mismatched_responses() {
    assert!(matches!(error_for(|_, _| Some(("200 OK".into(), b"garbage".to_vec()))), GuidanceError::Malformed(_)));
    let short = |_: &str, _: &[u8]| Some(("200 OK".into(), SdsResponse { status: 0, eps_hat: vec![0.5; 3] }.encode()));
    assert!(matches!(error_for(short), GuidanceError::Malformed(_)));
    let v2 = |_: &str, _: &[u8]| Some(("200 OK".into(), b"SKLF-SDS2\0\0".to_vec()));
    assert!(matches!(error_for(v2), GuidanceError::ProtocolMismatch(_)));
    assert!(matches!(error_for(|_, _| Some(("500 Internal Server Error".into(), vec![]))), GuidanceError::Http(500)));
}

#[test]
fn silent_server_times_out() {
    assert!(matches!(error_for(|_, _| None), GuidanceError::Timeout));
}

#[test]
fn refused_connection() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let i = inputs();
    let err = client(format!("http://127.0.0.1:{port}")).predict(&request(&i)).unwrap_err();
    assert!(matches!(err, GuidanceError::Connection(_)), "{err:?}");
}
