//! Console bridge: a WebSocket endpoint that takes leader input from a
//! browser console and streams session state back, plus a small static file
//! server for the console assets.
//!
//! Every message is a JSON text frame tagged by `type`. The server sends one
//! `hello` on connect and then `state` at about 30 Hz whenever the control
//! loop has published something new. Clients send `leader_input`. Rejected
//! input is answered with an `error` message and does not change the pose.
//! See `docs/console-protocol.md` for the full schema.

use std::collections::VecDeque;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use arc_swap::ArcSwapOption;
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::config::{schema_fingerprint, DeviceConfig, Side};
use crate::follower_sim::{BasePose, FollowerState};
use crate::leader_source::LeaderSource;
use crate::locomotion::VelocityCommand;
use crate::retarget::{Quat, IDENTITY};
use crate::session::{GestureEvent, Phase, SessionState};
use crate::transport::{resolve_endpoint, StateFrame};

pub const DEFAULT_CONSOLE_PORT: u16 = 47557;
pub const DEFAULT_ASSETS_PORT: u16 = 47558;
pub const PROTOCOL_VERSION: u32 = 1;
pub const STATE_RATE_HZ: f64 = 30.0;

/// Events kept in the rolling feed of every state message.
const EVENT_FEED_LEN: usize = 32;
const POLL: Duration = Duration::from_millis(10);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);
const ORIENTATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSchema {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub home: f64,
}

/// What a console needs to build its controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSchema {
    pub fingerprint: String,
    pub joints: Vec<JointSchema>,
    /// Limb names that carry a gripper trigger, in frame order.
    pub grippers: Vec<String>,
}

impl LeaderSchema {
    pub fn for_config(leader: &DeviceConfig) -> Self {
        LeaderSchema {
            fingerprint: schema_fingerprint(leader),
            joints: leader
                .joints()
                .map(|j| JointSchema {
                    name: j.name.clone(),
                    min: j.position_min,
                    max: j.position_max,
                    home: j.home_position,
                })
                .collect(),
            grippers: leader
                .gripper_limbs()
                .into_iter()
                .map(|i| leader.limbs[i].name.clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventView {
    pub stamp_ns: u64,
    pub kind: String,
    pub side: Option<Side>,
}

impl From<&GestureEvent> for EventView {
    fn from(e: &GestureEvent) -> Self {
        EventView {
            stamp_ns: e.stamp_ns,
            kind: e.kind.name().to_string(),
            side: e.kind.side(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerView {
    pub joints: Vec<f64>,
    pub grippers: Vec<f64>,
    pub base_pose: BasePoseView,
    pub base_orientation: Quat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePoseView {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl From<BasePose> for BasePoseView {
    fn from(p: BasePose) -> Self {
        BasePoseView { x: p.x, y: p.y, heading: p.heading }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub stale: bool,
    /// Time since the newest frame arrived.
    pub age_ms: Option<f64>,
    /// Receive time minus sender stamp of the newest frame.
    pub latency_ms: Option<f64>,
    pub malformed: u64,
    pub gaps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseView {
    pub name: String,
    /// Arming: seconds held so far. Synchronizing: fraction done.
    pub progress: Option<f64>,
}

impl From<&Phase> for PhaseView {
    fn from(p: &Phase) -> Self {
        let progress = match *p {
            Phase::Arming { held_ns } => Some(held_ns as f64 * 1e-9),
            Phase::Synchronizing { progress } => Some(progress),
            _ => None,
        };
        PhaseView { name: p.name().to_string(), progress }
    }
}

/// One snapshot of the follower side for the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleState {
    pub stamp_ns: u64,
    pub phase: PhaseView,
    pub arm_active: [bool; 2],
    pub leg_joystick: [bool; 2],
    /// Seconds each leader gripper has been held closed.
    pub hold_timers: Vec<f64>,
    pub follower: FollowerView,
    pub velocity: VelocityCommand,
    pub feedback_torques: Vec<f64>,
    pub torque_limit: f64,
    pub link: LinkView,
    /// Newest events last; clients dedupe by stamp and kind.
    pub events: Vec<EventView>,
}

impl ConsoleState {
    pub fn capture(
        session: &SessionState,
        follower: &FollowerState,
        velocity: VelocityCommand,
        feedback_torques: &[f64],
        torque_limit: f64,
        link: LinkView,
        events: Vec<EventView>,
    ) -> Self {
        ConsoleState {
            stamp_ns: session.time_ns,
            phase: PhaseView::from(&session.phase),
            arm_active: session.arm_active,
            leg_joystick: session.leg_joystick,
            hold_timers: session.hold_timers(),
            follower: FollowerView {
                joints: follower.joints.clone(),
                grippers: follower.grippers.clone(),
                base_pose: follower.base_pose.into(),
                base_orientation: follower.base_orientation,
            },
            velocity,
            feedback_torques: feedback_torques.to_vec(),
            torque_limit,
            link,
            events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        state_rate_hz: f64,
        leader: LeaderSchema,
        follower_joints: Vec<String>,
    },
    State(ConsoleState),
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    LeaderInput(LeaderInput),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderInput {
    pub joint_positions: Vec<f64>,
    pub gripper_triggers: Vec<f64>,
    /// Leader IMU quaternion (w, x, y, z); identity when omitted.
    #[serde(default)]
    pub orientation: Option<Quat>,
}

/// Shared between the control loop, the console source and the connections.
pub struct ConsoleHub {
    schema: LeaderSchema,
    hello: String,
    input: Mutex<Option<LeaderInput>>,
    state: ArcSwapOption<(u64, String)>,
    feed: Mutex<VecDeque<EventView>>,
    published: AtomicU64,
    clients: AtomicUsize,
    accepted: AtomicU64,
    rejected: AtomicU64,
}

impl ConsoleHub {
    pub fn new(leader: &DeviceConfig, follower: &DeviceConfig) -> Arc<Self> {
        let schema = LeaderSchema::for_config(leader);
        let hello = serde_json::to_string(&ServerMessage::Hello {
            version: PROTOCOL_VERSION,
            state_rate_hz: STATE_RATE_HZ,
            leader: schema.clone(),
            follower_joints: follower.joint_names(),
        })
        .expect("hello serializes");
        Arc::new(ConsoleHub {
            schema,
            hello,
            input: Mutex::new(None),
            state: ArcSwapOption::empty(),
            feed: Mutex::new(VecDeque::with_capacity(EVENT_FEED_LEN)),
            published: AtomicU64::new(0),
            clients: AtomicUsize::new(0),
            accepted: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        })
    }

    pub fn schema(&self) -> &LeaderSchema {
        &self.schema
    }

    pub fn hello_json(&self) -> &str {
        &self.hello
    }

    /// Append session events to the rolling feed.
    pub fn record_events(&self, events: &[GestureEvent]) {
        if events.is_empty() {
            return;
        }
        let mut feed = self.feed.lock().unwrap();
        for e in events {
            if feed.len() == EVENT_FEED_LEN {
                feed.pop_front();
            }
            feed.push_back(e.into());
        }
    }

    pub fn event_feed(&self) -> Vec<EventView> {
        self.feed.lock().unwrap().iter().cloned().collect()
    }

    pub fn publish(&self, state: &ConsoleState) {
        let json = serde_json::to_string(&ServerMessage::State(state.clone())).expect("state serializes");
        let seq = self.published.fetch_add(1, Ordering::Relaxed) + 1;
        self.state.store(Some(Arc::new((seq, json))));
    }

    /// Latest published state as `(seq, json)`.
    pub fn latest_state(&self) -> Option<Arc<(u64, String)>> {
        self.state.load_full()
    }

    pub fn clients(&self) -> usize {
        self.clients.load(Ordering::Relaxed)
    }

    /// `(accepted, rejected)` input messages so far.
    pub fn input_counts(&self) -> (u64, u64) {
        (self.accepted.load(Ordering::Relaxed), self.rejected.load(Ordering::Relaxed))
    }

    pub fn latest_input(&self) -> Option<LeaderInput> {
        self.input.lock().unwrap().clone()
    }

    /// Validate and store a leader pose. Out-of-limit joints are rejected,
    /// not clamped, so a misbehaving console is visible.
    pub fn submit(&self, mut input: LeaderInput) -> Result<(), String> {
        let result = self.validate(&mut input);
        match &result {
            Ok(()) => {
                self.accepted.fetch_add(1, Ordering::Relaxed);
                *self.input.lock().unwrap() = Some(input);
            }
            Err(_) => {
                self.rejected.fetch_add(1, Ordering::Relaxed);
            }
        }
        result
    }

    fn validate(&self, input: &mut LeaderInput) -> Result<(), String> {
        let joints = &self.schema.joints;
        if input.joint_positions.len() != joints.len() {
            return Err(format!(
                "expected {} joint positions, got {}",
                joints.len(),
                input.joint_positions.len()
            ));
        }
        if input.gripper_triggers.len() != self.schema.grippers.len() {
            return Err(format!(
                "expected {} gripper triggers, got {}",
                self.schema.grippers.len(),
                input.gripper_triggers.len()
            ));
        }
        for (q, j) in input.joint_positions.iter().zip(joints) {
            if !(q.is_finite() && *q >= j.min && *q <= j.max) {
                return Err(format!("{} = {q} outside [{}, {}]", j.name, j.min, j.max));
            }
        }
        if let Some(g) = input.gripper_triggers.iter().find(|g| !(g.is_finite() && (0.0..=1.0).contains(*g))) {
            return Err(format!("gripper trigger {g} outside [0, 1]"));
        }
        if let Some(q) = &mut input.orientation {
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= ORIENTATION_TOLERANCE) {
                return Err(format!("orientation is not a unit quaternion (norm {norm})"));
            }
            q.iter_mut().for_each(|c| *c /= norm);
        }
        Ok(())
    }

    pub fn source(self: &Arc<Self>) -> ConsoleSource {
        ConsoleSource {
            hub: self.clone(),
            home: self.schema.joints.iter().map(|j| j.home).collect(),
            previous: None,
        }
    }
}

/// Leader frames from whatever the console last sent; the home pose with
/// open grippers until the first input arrives.
pub struct ConsoleSource {
    hub: Arc<ConsoleHub>,
    home: Vec<f64>,
    previous: Option<(u64, Vec<f64>)>,
}

impl LeaderSource for ConsoleSource {
    fn joint_count(&self) -> usize {
        self.home.len()
    }

    fn gripper_count(&self) -> usize {
        self.hub.schema.grippers.len()
    }

    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
        let (q, g, orientation) = match self.hub.latest_input() {
            Some(input) => (input.joint_positions, input.gripper_triggers, input.orientation.unwrap_or(IDENTITY)),
            None => (self.home.clone(), vec![0.0; self.gripper_count()], IDENTITY),
        };
        let v: Vec<f32> = match &self.previous {
            Some((t, prev)) if elapsed_ns > *t => {
                let h = (elapsed_ns - t) as f64 * 1e-9;
                q.iter().zip(prev).map(|(a, b)| ((a - b) / h) as f32).collect()
            }
            _ => vec![0.0; q.len()],
        };
        let frame = StateFrame::new(
            q.iter().map(|&x| x as f32).collect(),
            v,
            g.iter().map(|&x| x as f32).collect(),
            orientation.map(|c| c as f32),
        );
        self.previous = Some((elapsed_ns, q));
        frame
    }
}

#[derive(Debug, Clone)]
pub struct BridgeOptions {
    /// WebSocket listen address.
    pub endpoint: String,
    /// Static file server listen address; none disables it.
    pub assets_endpoint: Option<String>,
    /// Directory with the built console. A placeholder page is served when
    /// it is missing.
    pub assets_dir: Option<PathBuf>,
    pub state_rate_hz: f64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        BridgeOptions {
            endpoint: format!("127.0.0.1:{DEFAULT_CONSOLE_PORT}"),
            assets_endpoint: None,
            assets_dir: None,
            state_rate_hz: STATE_RATE_HZ,
        }
    }
}

/// Running bridge threads; stops and joins everything on drop.
pub struct Bridge {
    local_addr: SocketAddr,
    assets_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Bridge {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn assets_addr(&self) -> Option<SocketAddr> {
        self.assets_addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            if t.join().is_err() {
                warn!("bridge thread panicked");
            }
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn start_bridge(hub: Arc<ConsoleHub>, options: &BridgeOptions) -> io::Result<Bridge> {
    if !(options.state_rate_hz > 0.0 && options.state_rate_hz.is_finite()) {
        return Err(io::Error::new(ErrorKind::InvalidInput, "state rate must be positive"));
    }
    let listener = TcpListener::bind(resolve_endpoint(&options.endpoint)?)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let period = Duration::from_secs_f64(1.0 / options.state_rate_hz);
    let mut threads = Vec::new();

    let mut assets_addr = None;
    if let Some(endpoint) = &options.assets_endpoint {
        let server = tiny_http::Server::http(resolve_endpoint(endpoint)?)
            .map_err(|e| io::Error::new(ErrorKind::AddrInUse, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::new(ErrorKind::InvalidInput, "assets server needs an IP address"))?;
        assets_addr = Some(addr);
        let stop = stop.clone();
        let dir = options.assets_dir.clone();
        let hello = hub.hello_json().to_string();
        threads.push(
            thread::Builder::new()
                .name("console-assets".into())
                .spawn(move || serve_assets(server, dir, local_addr, hello, &stop))?,
        );
        info!("console assets on http://{addr}/");
    }

    {
        let stop = stop.clone();
        threads.push(
            thread::Builder::new()
                .name("console-accept".into())
                .spawn(move || accept_loop(listener, hub, period, &stop))?,
        );
    }
    info!("console bridge on ws://{local_addr}/");
    Ok(Bridge { local_addr, assets_addr, stop, threads })
}

fn accept_loop(listener: TcpListener, hub: Arc<ConsoleHub>, period: Duration, stop: &Arc<AtomicBool>) {
    let mut connections: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let hub = hub.clone();
                let stop = stop.clone();
                let spawned = thread::Builder::new()
                    .name(format!("console-{peer}"))
                    .spawn(move || {
                        hub.clients.fetch_add(1, Ordering::Relaxed);
                        if let Err(e) = serve_connection(stream, &hub, period, &stop) {
                            debug!("console {peer} closed: {e}");
                        }
                        hub.clients.fetch_sub(1, Ordering::Relaxed);
                    });
                match spawned {
                    Ok(handle) => connections.push(handle),
                    Err(e) => warn!("cannot serve console {peer}: {e}"),
                }
                connections.retain(|c| !c.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("console accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for c in connections {
        let _ = c.join();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

/// One thread per connection, alternating a short blocking read with the
/// state sends so a single socket never has two writers.
fn serve_connection(
    stream: TcpStream,
    hub: &ConsoleHub,
    period: Duration,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => {
            tungstenite::Error::Io(io::Error::new(ErrorKind::TimedOut, "handshake timed out"))
        }
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    ws.send(Message::text(hub.hello_json()))?;

    let mut sent_seq = 0;
    let mut next_send = std::time::Instant::now();
    loop {
        if stop.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => handle_text(&mut ws, hub, &text)?,
            Ok(Message::Binary(_)) => send_error(&mut ws, "binary messages are not supported")?,
            Ok(Message::Close(_)) => {
                // tungstenite queues the close reply; drain it.
                while ws.read().is_ok() {}
                return Ok(());
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        let now = std::time::Instant::now();
        if now >= next_send {
            next_send = now + period;
            if let Some(state) = hub.latest_state() {
                if state.0 != sent_seq {
                    sent_seq = state.0;
                    ws.send(Message::text(state.1.as_str()))?;
                }
            }
        }
    }
}

fn handle_text(ws: &mut WebSocket<TcpStream>, hub: &ConsoleHub, text: &str) -> Result<(), tungstenite::Error> {
    match serde_json::from_str::<ClientMessage>(text) {
        Ok(ClientMessage::LeaderInput(input)) => match hub.submit(input) {
            Ok(()) => Ok(()),
            Err(message) => send_error(ws, &message),
        },
        Err(e) => {
            hub.rejected.fetch_add(1, Ordering::Relaxed);
            send_error(ws, &format!("bad message: {e}"))
        }
    }
}

fn send_error(ws: &mut WebSocket<TcpStream>, message: &str) -> Result<(), tungstenite::Error> {
    let json = serde_json::to_string(&ServerMessage::Error { message: message.to_string() }).expect("error serializes");
    ws.send(Message::text(json))
}

fn serve_assets(server: tiny_http::Server, dir: Option<PathBuf>, ws_addr: SocketAddr, hello: String, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        let request = match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                warn!("assets server: {e}");
                continue;
            }
        };
        let path = request.url().split(['?', '#']).next().unwrap_or("/").to_string();
        let response = asset_response(&path, dir.as_deref(), ws_addr, &hello);
        if let Err(e) = request.respond(response) {
            debug!("assets response failed: {e}");
        }
    }
}

type AssetResponse = tiny_http::Response<io::Cursor<Vec<u8>>>;

fn asset_response(path: &str, dir: Option<&Path>, ws_addr: SocketAddr, hello: &str) -> AssetResponse {
    let respond = |status: u16, mime: &str, body: Vec<u8>| {
        let header = tiny_http::Header::from_bytes("Content-Type", mime).expect("static header");
        tiny_http::Response::from_data(body).with_status_code(status).with_header(header)
    };
    if path == "/hello.json" {
        return respond(200, "application/json", hello.as_bytes().to_vec());
    }
    let relative = path.trim_start_matches('/');
    let relative = if relative.is_empty() { "index.html" } else { relative };
    let rel_path = Path::new(relative);
    if !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
        return respond(400, "text/plain", b"bad path".to_vec());
    }
    if let Some(dir) = dir {
        if let Ok(body) = std::fs::read(dir.join(rel_path)) {
            return respond(200, content_type(rel_path), body);
        }
    }
    if relative == "index.html" {
        return respond(200, "text/html; charset=utf-8", placeholder_page(ws_addr).into_bytes());
    }
    respond(404, "text/plain", b"not found".to_vec())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Shown when no console build is present: a raw view of the state stream.
fn placeholder_page(ws_addr: SocketAddr) -> String {
    format!(
        r#"<!doctype html>
<meta charset="utf-8">
<title>child console</title>
<p>No console build found. Bridge: <code>ws://{ws_addr}/</code></p>
<pre id="out">connecting...</pre>
<script>
const ws = new WebSocket(`ws://${{location.hostname}}:{port}/`);
ws.onmessage = (m) => {{ document.getElementById("out").textContent = JSON.stringify(JSON.parse(m.data), null, 1); }};
ws.onclose = () => {{ document.getElementById("out").textContent = "disconnected"; }};
</script>
"#,
        port = ws_addr.port()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Rig;
    use std::path::Path;

    fn configs() -> (DeviceConfig, DeviceConfig) {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        (
            DeviceConfig::load(root.join("g1_leader.toml")).unwrap(),
            DeviceConfig::load(root.join("g1_follower.toml")).unwrap(),
        )
    }

    fn home_input(hub: &ConsoleHub) -> LeaderInput {
        LeaderInput {
            joint_positions: hub.schema().joints.iter().map(|j| j.home).collect(),
            gripper_triggers: vec![0.0; hub.schema().grippers.len()],
            orientation: None,
        }
    }

    #[test]
    fn schema_mirrors_config() {
        let (leader, follower) = configs();
        let hub = ConsoleHub::new(&leader, &follower);
        assert_eq!(hub.schema().joints.len(), leader.joint_count());
        assert_eq!(hub.schema().grippers.len(), leader.gripper_count());
        assert_eq!(hub.schema().fingerprint, schema_fingerprint(&leader));
        let hello: ServerMessage = serde_json::from_str(hub.hello_json()).unwrap();
        assert!(matches!(hello, ServerMessage::Hello { version: PROTOCOL_VERSION, .. }));
    }

    #[test]
    fn input_validation() {
        let (leader, follower) = configs();
        let hub = ConsoleHub::new(&leader, &follower);
        let good = home_input(&hub);
        hub.submit(good.clone()).unwrap();

        let mut short = good.clone();
        short.joint_positions.pop();
        assert!(hub.submit(short).unwrap_err().contains("joint positions"));

        let mut outside = good.clone();
        outside.joint_positions[0] = hub.schema().joints[0].max + 0.1;
        assert!(hub.submit(outside).unwrap_err().contains(&hub.schema().joints[0].name));

        let mut trigger = good.clone();
        trigger.gripper_triggers[0] = 1.5;
        assert!(hub.submit(trigger).is_err());

        let mut nan = good.clone();
        nan.joint_positions[1] = f64::NAN;
        assert!(hub.submit(nan).is_err());

        let mut quat = good.clone();
        quat.orientation = Some([2.0, 0.0, 0.0, 0.0]);
        assert!(hub.submit(quat).is_err());

        assert_eq!(hub.input_counts(), (1, 5));
        assert_eq!(hub.latest_input(), Some(good));
    }

    #[test]
    fn source_follows_input() {
        let (leader, follower) = configs();
        let hub = ConsoleHub::new(&leader, &follower);
        let mut source = hub.source();
        let f = source.frame_at(0);
        assert_eq!(f.joint_positions.len(), leader.joint_count());
        assert!(f.gripper_triggers.iter().all(|&g| g == 0.0));

        let mut input = home_input(&hub);
        input.joint_positions[0] += 0.1;
        input.gripper_triggers = vec![1.0; input.gripper_triggers.len()];
        hub.submit(input).unwrap();
        let f = source.frame_at(100_000_000);
        assert!((f.joint_velocities[0] - 1.0).abs() < 1e-5);
        assert!(f.gripper_triggers.iter().all(|&g| g == 1.0));
        let f = source.frame_at(200_000_000);
        assert_eq!(f.joint_velocities[0], 0.0);
    }

    #[test]
    fn state_message_round_trips() {
        let (leader, follower) = configs();
        let rig = Rig::new(leader, follower).unwrap();
        let session = SessionState::new(&rig);
        let state = ConsoleState::capture(
            &session,
            &FollowerState::at_home(&rig.follower),
            VelocityCommand::zero(0),
            &vec![0.0; rig.leader_joint_count()],
            1.5,
            LinkView { stale: true, age_ms: None, latency_ms: None, malformed: 0, gaps: 0 },
            Vec::new(),
        );
        let json = serde_json::to_string(&ServerMessage::State(state.clone())).unwrap();
        assert!(json.starts_with(r#"{"type":"state""#));
        assert_eq!(serde_json::from_str::<ServerMessage>(&json).unwrap(), ServerMessage::State(state));
    }

    #[test]
    fn event_feed_is_bounded() {
        let (leader, follower) = configs();
        let hub = ConsoleHub::new(&leader, &follower);
        let events: Vec<_> = (0..40)
            .map(|i| GestureEvent { kind: crate::session::GestureKind::SyncComplete, stamp_ns: i })
            .collect();
        hub.record_events(&events);
        let feed = hub.event_feed();
        assert_eq!(feed.len(), EVENT_FEED_LEN);
        assert_eq!(feed.last().unwrap().stamp_ns, 39);
    }

    #[test]
    fn asset_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("app.js"), "x").unwrap();
        let addr: SocketAddr = "127.0.0.1:47557".parse().unwrap();
        assert_eq!(asset_response("/app.js", Some(dir.path()), addr, "{}").status_code().0, 200);
        assert_eq!(asset_response("/../secret", Some(dir.path()), addr, "{}").status_code().0, 400);
        assert_eq!(asset_response("/missing.js", Some(dir.path()), addr, "{}").status_code().0, 404);
        assert_eq!(asset_response("/", None, addr, "{}").status_code().0, 200);
        assert_eq!(asset_response("/hello.json", None, addr, "{}").status_code().0, 200);
    }
}
