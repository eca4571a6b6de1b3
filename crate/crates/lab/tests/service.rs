use std::time::Duration;

use futures::{SinkExt, StreamExt};
use navlab::config::ServeConfig;
use navlab::protocol::{
    apply_patch, ClientCommand, ClientMessage, Hello, Mode, ServerMessage, ServerState, PROTOCOL_VERSION,
};
use navlab::service::{serve, AssistWorld, Service};
use navlab::LabError;
use navlab_core::assist::AssistParams;
use navlab_core::conformal::DiscrepancySample;
use navlab_core::gridmap::{GridGeometry, Obstacle};
use navlab_core::sim::DisturbanceModel;
use navlab_core::Pose;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Wall face at x = 1.5.
const WALL: f64 = 1.5;

fn samples() -> Vec<DiscrepancySample> {
    (0..2000)
        .map(|i| {
            let u = i as f64 / 2000.0;
            DiscrepancySample { matched_norm: 0.002 / (1.001 - u), unmatched_mag: 0.01 * u, matched: [0.0, 0.0] }
        })
        .collect()
}

fn config(start: Pose) -> ServeConfig {
    ServeConfig {
        tick_hz: 100.0,
        start,
        obstacles: vec![Obstacle::Box { min: [WALL, -2.0], max: [WALL + 0.2, 2.0] }],
        disturbance: DisturbanceModel::identity(),
        geometry: GridGeometry { width: 120, height: 120, resolution: 0.05, origin: [0.0, 0.0] },
        assist: AssistParams { sample_count: 400, ..AssistParams::default() },
        ..ServeConfig::default()
    }
}

async fn start(start: Pose) -> Service {
    let world = AssistWorld::new(config(start), samples()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    Service::start(world, listener).unwrap()
}

async fn connect(service: &Service) -> (Ws, Hello) {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/ws", service.addr)).await.unwrap();
    match next(&mut ws).await {
        ServerMessage::Hello(h) => (ws, h),
        other => panic!("expected hello, got {other:?}"),
    }
}

async fn next(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .expect("server keeps talking")
            .expect("stream open")
            .expect("frame");
        if let Message::Text(text) = msg {
            return serde_json::from_str(text.as_str()).expect("valid server message");
        }
    }
}

async fn next_state(ws: &mut Ws) -> ServerState {
    loop {
        if let ServerMessage::State(s) = next(ws).await {
            return s;
        }
    }
}

async fn send(ws: &mut Ws, seq: u64, command: ClientCommand) {
    let text = serde_json::to_string(&ClientMessage { version: PROTOCOL_VERSION, seq, command }).unwrap();
    ws.send(Message::Text(text.into())).await.unwrap();
}

fn acked(state: &ServerState, client_id: u64, seq: u64) -> bool {
    state.acks.iter().any(|a| a.client_id == client_id && a.seq >= seq)
}

async fn until_acked(ws: &mut Ws, client_id: u64, seq: u64) -> ServerState {
    for _ in 0..500 {
        let s = next_state(ws).await;
        if acked(&s, client_id, seq) {
            return s;
        }
    }
    panic!("command {seq} never acknowledged");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn zero_joystick_keeps_vehicle_still() {
    let service = start(Pose::new(0.0, 0.0, 0.0)).await;
    let (mut ws, hello) = connect(&service).await;
    assert_eq!(hello.version, PROTOCOL_VERSION);
    assert!(hello.costmap.full);
    send(&mut ws, 1, ClientCommand::Joystick { v: 0.0, omega: 0.0 }).await;
    let mut last = until_acked(&mut ws, hello.client_id, 1).await;
    for _ in 0..20 {
        let s = next_state(&mut ws).await;
        assert!(s.seq > last.seq);
        assert_eq!(s.pose, Pose::new(0.0, 0.0, 0.0));
        assert_eq!(s.mode, Mode::PassThrough);
        last = s;
    }
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn set_epsilon_reinflates_and_patches_track_full_map() {
    let service = start(Pose::new(0.0, 0.0, 0.0)).await;
    let (mut a, hello_a) = connect(&service).await;
    let mut levels = vec![0u8; hello_a.costmap.width * hello_a.costmap.height];
    apply_patch(&mut levels, &hello_a.costmap).unwrap();
    let mut seen = hello_a.seq;
    let mut patched = |s: &ServerState, levels: &mut Vec<u8>| {
        assert!(s.seq > seen);
        seen = s.seq;
        if let Some(p) = &s.costmap_patch {
            apply_patch(levels, p).unwrap();
        }
        s.costmap_patch.is_some()
    };

    let mut before = next_state(&mut a).await;
    patched(&before, &mut levels);
    for _ in 0..10 {
        before = next_state(&mut a).await;
        patched(&before, &mut levels);
    }
    send(&mut a, 7, ClientCommand::SetEpsilon { epsilon: 0.001 }).await;
    let after = loop {
        let s = next_state(&mut a).await;
        let changed = patched(&s, &mut levels);
        if acked(&s, hello_a.client_id, 7) {
            assert!(changed);
            break s;
        }
    };
    assert_eq!(after.epsilon, 0.001);
    assert!(after.buffer_cells > before.buffer_cells, "{} vs {}", after.buffer_cells, before.buffer_cells);
    assert!(after.radii.r_dt > before.radii.r_dt);

    // A late client's full map equals the patched one at the same sequence number.
    let (_b, hello_b) = connect(&service).await;
    let mut last = after.seq;
    while last < hello_b.seq {
        let s = next_state(&mut a).await;
        patched(&s, &mut levels);
        last = s.seq;
    }
    let mut full = vec![0u8; levels.len()];
    apply_patch(&mut full, &hello_b.costmap).unwrap();
    assert_eq!(last, hello_b.seq);
    assert!(full == levels, "late full map differs from accumulated patches");
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clients_receive_identical_streams() {
    let service = start(Pose::new(0.0, 0.0, 0.0)).await;
    let (mut a, _) = connect(&service).await;
    let (mut b, _) = connect(&service).await;
    send(&mut a, 1, ClientCommand::Joystick { v: 0.5, omega: 0.3 }).await;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..30 {
        xs.push(next_state(&mut a).await);
        ys.push(next_state(&mut b).await);
    }
    let common: Vec<_> = xs.iter().filter(|x| ys.iter().any(|y| y.seq == x.seq)).collect();
    assert!(common.len() >= 20, "{}", common.len());
    for x in common {
        let y = ys.iter().find(|y| y.seq == x.seq).unwrap();
        assert_eq!(x, y);
    }
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_frames_get_error_and_session_continues() {
    let service = start(Pose::new(0.0, 0.0, 0.0)).await;
    let (mut ws, hello) = connect(&service).await;
    ws.send(Message::Text("not json".into())).await.unwrap();
    ws.send(Message::Text(r#"{"version":1,"seq":5,"command":{"type":"fly"}}"#.into())).await.unwrap();
    ws.send(Message::Text(r#"{"version":9,"seq":6,"command":{"type":"reset"}}"#.into())).await.unwrap();
    send(&mut ws, 8, ClientCommand::SetEpsilon { epsilon: 2.0 }).await;
    let mut rejected = Vec::new();
    while rejected.len() < 4 {
        if let ServerMessage::Error(e) = next(&mut ws).await {
            assert!(!e.message.is_empty());
            rejected.push(e.rejected);
        }
    }
    assert_eq!(rejected, vec![None, Some(5), Some(6), Some(8)]);
    send(&mut ws, 9, ClientCommand::Pause { paused: true }).await;
    let s = until_acked(&mut ws, hello.client_id, 9).await;
    assert!(s.paused);
    assert!(s.acks.iter().all(|a| a.seq == 9));
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_speed_at_wall_is_overridden_without_contact() {
    let service = start(Pose::new(-2.5, 0.0, 0.0)).await;
    let (mut ws, hello) = connect(&service).await;
    send(&mut ws, 1, ClientCommand::Joystick { v: 2.0, omega: 0.0 }).await;
    let mut modes = Vec::new();
    let mut s = until_acked(&mut ws, hello.client_id, 1).await;
    for _ in 0..150 {
        // The decision in each state belongs to the same tick as its costs.
        assert_eq!(s.costs.joystick >= s.costs.lethal, s.mode != Mode::PassThrough, "tick {}: {:?}", s.seq, s.costs);
        assert_eq!(s.contacts, 0, "contact at tick {}", s.seq);
        assert!(s.pose.x < WALL - 0.39, "{:?}", s.pose);
        modes.push(s.mode);
        s = next_state(&mut ws).await;
    }
    assert_eq!(modes[0], Mode::PassThrough);
    let first = modes.iter().position(|&m| m != Mode::PassThrough).expect("override engaged");
    assert!(modes[first..].iter().all(|&m| m != Mode::PassThrough));
    assert!(s.pose.x > -2.0, "{:?}", s.pose);
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rotation_near_wall_passes_through() {
    let service = start(Pose::new(0.85, 0.0, 0.0)).await;
    let (mut ws, hello) = connect(&service).await;
    send(&mut ws, 1, ClientCommand::Joystick { v: 0.0, omega: 1.5 }).await;
    until_acked(&mut ws, hello.client_id, 1).await;
    for _ in 0..40 {
        let s = next_state(&mut ws).await;
        assert_eq!(s.mode, Mode::PassThrough, "{:?}", s.costs);
        assert_eq!(s.command.omega, 1.5);
        assert_eq!(s.command.v, 0.0);
    }
    service.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn busy_port_is_reported() {
    let taken = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let world = AssistWorld::new(config(Pose::new(0.0, 0.0, 0.0)), samples()).unwrap();
    let err = serve(world, &addr, async {}).await.unwrap_err();
    assert!(matches!(err, LabError::Service(ref m) if m.contains("already in use")), "{err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_stops_on_shutdown_signal() {
    let world = AssistWorld::new(config(Pose::new(0.0, 0.0, 0.0)), samples()).unwrap();
    let done = tokio::time::timeout(
        Duration::from_secs(20),
        serve(world, "127.0.0.1:0", tokio::time::sleep(Duration::from_millis(200))),
    )
    .await;
    assert!(matches!(done, Ok(Ok(()))));
}

